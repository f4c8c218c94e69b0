//! Training objectives, all expressed as losses to minimise.
//!
//! Every objective is evaluated for one [`Phase`] of the alternating update.
//! In the encoder phase the decoder parameters are tape constants and the
//! synthesised batches `x_r` (reconstructions) and `x_g` (decoded prior
//! samples) are detached copies. In the decoder phase the encoder
//! parameters are constants, while `x_r`/`x_g` stay live so the decoder is
//! trained through the encoder's view of its own samples.
//!
//! Noise is drawn from the supplied rng in a fixed order: `eps` for the real
//! batch, prior samples for `x_g`, then `eps` for `x_r` and for `x_g`. Each
//! block is `B x n`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::{DiffError, Matrix, Tape, Value};
use crate::gaussian::{self, GaussianError, PosteriorBatch};
use crate::nets::{self, BoundNet, NetError, NetParams};
use crate::rng::standard_normal;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("invalid objective config: {0}")]
    InvalidConfig(String),
    #[error("annealing iteration {iter} outside 0..={total}")]
    Anneal { iter: u64, total: u64 },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Net(#[from] NetError),
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Vae,
    Introvae,
    SIntrovae,
    AsIntrovae,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Vae, Method::Introvae, Method::SIntrovae, Method::AsIntrovae];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Vae => "vae",
            Method::Introvae => "introvae",
            Method::SIntrovae => "s-introvae",
            Method::AsIntrovae => "as-introvae",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method '{s}' (expected vae, introvae, s-introvae or as-introvae)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub method: Method,
    /// Sharpness of the soft exponential in the encoder loss.
    pub alpha: f64,
    /// Weight of the adversarial terms in the decoder loss.
    pub gamma: f64,
    /// Extra factor on the fake-sample reconstruction inside the decoder's
    /// adversarial terms. A decoder that outputs a constant reconstructs its
    /// own samples perfectly, so at full weight this term rewards collapse.
    pub gamma_r: f64,
    /// IntroVAE hinge margin on the fake-sample KL.
    pub margin: f64,
    pub w_elbo_real: f64,
    pub w_kl_real: f64,
    pub w_rec_real: f64,
    pub w_kl_fake: f64,
    pub w_rec_fake: f64,
    /// Horizon of the KL/AS annealing schedule.
    pub total_iters: u64,
    /// Upper clamp on the argument of every `exp(alpha * .)`.
    pub exp_clamp: f64,
}

impl ObjectiveConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            alpha: 2.0,
            gamma: 1.0,
            gamma_r: 1e-8,
            margin: 2.0,
            w_elbo_real: 1.0,
            w_kl_real: 0.5,
            w_rec_real: 1.0,
            w_kl_fake: 0.5,
            w_rec_fake: 0.5,
            total_iters: 30_000,
            exp_clamp: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ObjectiveError::InvalidConfig(msg));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if self.total_iters < 1 {
            return bad("total_iters must be >= 1".into());
        }
        for (name, w) in [
            ("gamma_r", self.gamma_r),
            ("margin", self.margin),
            ("w_elbo_real", self.w_elbo_real),
            ("w_kl_real", self.w_kl_real),
            ("w_rec_real", self.w_rec_real),
            ("w_kl_fake", self.w_kl_fake),
            ("w_rec_fake", self.w_rec_fake),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{name} must be >= 0, got {w}"));
            }
        }
        if !self.exp_clamp.is_finite() {
            return bad("exp_clamp must be finite".into());
        }
        Ok(())
    }
}

/// Which network the current pass updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Encoder,
    Decoder,
}

/// Batch means of the loss components, for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub recon_real: f64,
    pub kl_real: f64,
    pub kl_rec: f64,
    pub kl_gen: f64,
    pub as_rec: f64,
    pub as_gen: f64,
    pub c: f64,
}

impl Diagnostics {
    pub fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("recon_real", self.recon_real),
            ("kl_real", self.kl_real),
            ("kl_rec", self.kl_rec),
            ("kl_gen", self.kl_gen),
            ("as_rec", self.as_rec),
            ("as_gen", self.as_gen),
            ("c", self.c),
        ]
    }
}

/// Encoder and decoder losses (`1x1` tape values) plus diagnostics.
#[derive(Debug, Clone)]
pub struct LossPair {
    pub encoder: Value,
    pub decoder: Value,
    pub diagnostics: Diagnostics,
    /// Parameter handles the losses were built from; only the phase's own
    /// network is made of leaves.
    pub encoder_net: BoundNet,
    pub decoder_net: BoundNet,
}

impl LossPair {
    /// The loss the given phase minimises.
    pub fn for_phase(&self, phase: Phase) -> Value {
        match phase {
            Phase::Encoder => self.encoder,
            Phase::Decoder => self.decoder,
        }
    }

    /// The network the given phase updates.
    pub fn net_for_phase(&self, phase: Phase) -> &BoundNet {
        match phase {
            Phase::Encoder => &self.encoder_net,
            Phase::Decoder => &self.decoder_net,
        }
    }
}

/// The two networks of one model.
#[derive(Debug, Clone, Copy)]
pub struct Nets<'a> {
    pub encoder: &'a NetParams,
    pub decoder: &'a NetParams,
    pub latent_dim: usize,
}

struct Bound {
    encoder: BoundNet,
    decoder: BoundNet,
    latent_dim: usize,
    phase: Phase,
}

impl Bound {
    fn new(tape: &mut Tape, nets: Nets<'_>, phase: Phase) -> Self {
        Self {
            encoder: nets.encoder.bind(tape, phase == Phase::Encoder),
            decoder: nets.decoder.bind(tape, phase == Phase::Decoder),
            latent_dim: nets.latent_dim,
            phase,
        }
    }
}

/// Pieces of the real-data ELBO.
#[derive(Debug, Clone, Copy)]
pub struct ElboTerms {
    /// Batch mean of `w_rec_real * log p(x|z) - w_kl_real * KL`, `1x1`.
    pub value: Value,
    /// Per-row `0.5 * |x - x_hat|^2`, `B x 1`.
    pub recon: Value,
    /// Per-row `KL(q(z|x) || p(z))`, `B x 1`.
    pub kl: Value,
    pub posterior: PosteriorBatch,
    /// Reparameterised reconstruction `x_hat`.
    pub reconstruction: Value,
}

/// Real-data ELBO for the given phase.
pub fn elbo<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: &Matrix,
    nets: Nets<'_>,
    cfg: &ObjectiveConfig,
    rng: &mut R,
    phase: Phase,
) -> Result<ElboTerms> {
    let bound = Bound::new(tape, nets, phase);
    real_elbo(tape, &bound, x, cfg, rng)
}

fn real_elbo<R: Rng + ?Sized>(
    tape: &mut Tape,
    bound: &Bound,
    x: &Matrix,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<ElboTerms> {
    let eps = standard_normal(rng, x.nrows(), bound.latent_dim);
    let x = tape.constant(x.clone());
    let posterior = nets::encode(tape, &bound.encoder, x, bound.latent_dim)?;
    let z = posterior.reparameterize(tape, &eps)?;
    let reconstruction = nets::decode(tape, &bound.decoder, z)?;
    let recon = half_squared_error(tape, x, reconstruction)?;
    let kl = posterior.kl_to_prior(tape)?;
    let rec_part = tape.scale(recon, -cfg.w_rec_real)?;
    let kl_part = tape.scale(kl, cfg.w_kl_real)?;
    let per_row = tape.sub(rec_part, kl_part)?;
    let value = tape.mean(per_row)?;
    Ok(ElboTerms {
        value,
        recon,
        kl,
        posterior,
        reconstruction,
    })
}

fn half_squared_error(tape: &mut Tape, target: Value, estimate: Value) -> Result<Value> {
    let diff = tape.sub(target, estimate)?;
    let sq = tape.square(diff)?;
    let rows = tape.row_sum(sq)?;
    Ok(tape.scale(rows, 0.5)?)
}

/// Synthesised batches `x_r` and `x_g` with the phase's gradient boundary.
fn synthesize<R: Rng + ?Sized>(
    tape: &mut Tape,
    bound: &Bound,
    real: &ElboTerms,
    rows: usize,
    rng: &mut R,
) -> Result<(Value, Value)> {
    let z_prior = standard_normal(rng, rows, bound.latent_dim);
    let z_prior = tape.constant(z_prior);
    let x_g = nets::decode(tape, &bound.decoder, z_prior)?;
    match bound.phase {
        Phase::Encoder => Ok((tape.detach(real.reconstruction)?, tape.detach(x_g)?)),
        Phase::Decoder => Ok((real.reconstruction, x_g)),
    }
}

struct FakeTerms {
    posterior: PosteriorBatch,
    kl: Value,
    recon: Option<Value>,
}

/// Encodes a synthesised batch; optionally also reconstructs it.
///
/// In the decoder phase the reconstruction target and latent code are
/// detached, so only the KL (and distance) path carries gradient back
/// through the encoder into the samples.
fn fake_terms(
    tape: &mut Tape,
    bound: &Bound,
    x_s: Value,
    eps: &Matrix,
    with_recon: bool,
) -> Result<FakeTerms> {
    let posterior = nets::encode(tape, &bound.encoder, x_s, bound.latent_dim)?;
    let kl = posterior.kl_to_prior(tape)?;
    let recon = if with_recon {
        let z = posterior.reparameterize(tape, eps)?;
        let (target, z) = match bound.phase {
            Phase::Encoder => (x_s, z),
            Phase::Decoder => (tape.detach(x_s)?, tape.detach(z)?),
        };
        let x_hat = nets::decode(tape, &bound.decoder, z)?;
        Some(half_squared_error(tape, target, x_hat)?)
    } else {
        None
    };
    Ok(FakeTerms { posterior, kl, recon })
}

fn batch_mean(tape: &Tape, v: Value) -> f64 {
    let m = tape.value(v);
    m.sum() / m.len() as f64
}

/// Vanilla VAE: both phases minimise `-ELBO(x)`.
pub fn vae_losses<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: &Matrix,
    nets: Nets<'_>,
    cfg: &ObjectiveConfig,
    rng: &mut R,
    phase: Phase,
) -> Result<LossPair> {
    let bound = Bound::new(tape, nets, phase);
    let real = real_elbo(tape, &bound, x, cfg, rng)?;
    let loss = tape.neg(real.value)?;
    Ok(LossPair {
        encoder: loss,
        decoder: loss,
        diagnostics: Diagnostics {
            recon_real: batch_mean(tape, real.recon),
            kl_real: batch_mean(tape, real.kl),
            c: 1.0,
            ..Diagnostics::default()
        },
        encoder_net: bound.encoder,
        decoder_net: bound.decoder,
    })
}

/// IntroVAE with a hard margin:
/// `L_E = -w_elbo ELBO(x) + sum_s mean max(0, m - KL_s)` and
/// `L_D = -w_elbo ELBO(x) + sum_s mean KL_s`.
pub fn introvae_losses<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: &Matrix,
    nets: Nets<'_>,
    cfg: &ObjectiveConfig,
    rng: &mut R,
    phase: Phase,
) -> Result<LossPair> {
    let bound = Bound::new(tape, nets, phase);
    let rows = x.nrows();
    let real = real_elbo(tape, &bound, x, cfg, rng)?;
    let (x_r, x_g) = synthesize(tape, &bound, &real, rows, rng)?;
    let eps_r = standard_normal(rng, rows, bound.latent_dim);
    let eps_g = standard_normal(rng, rows, bound.latent_dim);
    let rec = fake_terms(tape, &bound, x_r, &eps_r, false)?;
    let gen = fake_terms(tape, &bound, x_g, &eps_g, false)?;

    let real_loss = tape.scale(real.value, -cfg.w_elbo_real)?;
    let mut encoder = real_loss;
    let mut decoder = real_loss;
    for kl in [rec.kl, gen.kl] {
        let neg = tape.neg(kl)?;
        let gap = tape.shift(neg, cfg.margin)?;
        let hinge = tape.relu(gap)?;
        let hinge = tape.mean(hinge)?;
        encoder = tape.add(encoder, hinge)?;
        let kl_mean = tape.mean(kl)?;
        decoder = tape.add(decoder, kl_mean)?;
    }
    Ok(LossPair {
        encoder,
        decoder,
        diagnostics: Diagnostics {
            recon_real: batch_mean(tape, real.recon),
            kl_real: batch_mean(tape, real.kl),
            kl_rec: batch_mean(tape, rec.kl),
            kl_gen: batch_mean(tape, gen.kl),
            c: 1.0,
            ..Diagnostics::default()
        },
        encoder_net: bound.encoder,
        decoder_net: bound.decoder,
    })
}

/// Per-row fake-sample objective
/// `A = -k * w_rec_fake * recon - c * w_kl_fake * KL [- (1 - c) * w_kl_fake * D]`
/// with `k = 1` for the encoder and `k = gamma_r` for the decoder.
fn fake_objective(
    tape: &mut Tape,
    terms: &FakeTerms,
    cfg: &ObjectiveConfig,
    rec_scale: f64,
    blend: Option<(f64, Value)>,
) -> Result<Value> {
    let recon = terms.recon.expect("soft objectives reconstruct fakes");
    let rec_part = tape.scale(recon, -rec_scale * cfg.w_rec_fake)?;
    let kl_weight = match blend {
        Some((c, _)) => c * cfg.w_kl_fake,
        None => cfg.w_kl_fake,
    };
    let kl_part = tape.scale(terms.kl, kl_weight)?;
    let a = tape.sub(rec_part, kl_part)?;
    match blend {
        Some((c, distance)) => {
            let d_part = tape.scale(distance, (1.0 - c) * cfg.w_kl_fake)?;
            Ok(tape.sub(a, d_part)?)
        }
        None => Ok(a),
    }
}

/// `L_E = -(w_elbo ELBO(x) - 1/alpha sum_s mean exp(alpha A_s))`,
/// `L_D = -(w_elbo ELBO(x) + gamma sum_s mean A'_s)` where `A'_s` is the
/// decoder's variant of `A_s`.
fn soft_losses(
    tape: &mut Tape,
    real: &ElboTerms,
    fakes: [(Value, Value); 2],
    cfg: &ObjectiveConfig,
) -> Result<(Value, Value)> {
    let real_obj = tape.scale(real.value, cfg.w_elbo_real)?;
    let mut exp_sum: Option<Value> = None;
    let mut a_sum: Option<Value> = None;
    for (a_enc, a_dec) in fakes {
        let scaled = tape.scale(a_enc, cfg.alpha)?;
        let clamped = tape.clamp(scaled, f64::NEG_INFINITY, cfg.exp_clamp)?;
        let e = tape.exp(clamped)?;
        let e = tape.mean(e)?;
        let a_mean = tape.mean(a_dec)?;
        exp_sum = Some(match exp_sum {
            None => e,
            Some(acc) => tape.add(acc, e)?,
        });
        a_sum = Some(match a_sum {
            None => a_mean,
            Some(acc) => tape.add(acc, a_mean)?,
        });
    }
    let (exp_sum, a_sum) = (exp_sum.expect("two fakes"), a_sum.expect("two fakes"));

    let penalty = tape.scale(exp_sum, 1.0 / cfg.alpha)?;
    let enc_obj = tape.sub(real_obj, penalty)?;
    let encoder = tape.neg(enc_obj)?;

    let adv = tape.scale(a_sum, cfg.gamma)?;
    let dec_obj = tape.add(real_obj, adv)?;
    let decoder = tape.neg(dec_obj)?;
    Ok((encoder, decoder))
}

/// S-IntroVAE: soft exponential on the fake-sample ELBOs.
pub fn sintrovae_losses<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: &Matrix,
    nets: Nets<'_>,
    cfg: &ObjectiveConfig,
    rng: &mut R,
    phase: Phase,
) -> Result<LossPair> {
    soft_introspective(tape, x, nets, cfg, rng, phase, None)
}

/// AS-IntroVAE at loop iteration `iter`, with `c = anneal_c(iter, total_iters)`.
pub fn asintrovae_losses<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: &Matrix,
    nets: Nets<'_>,
    cfg: &ObjectiveConfig,
    rng: &mut R,
    iter: u64,
    phase: Phase,
) -> Result<LossPair> {
    let c = anneal_c(iter, cfg.total_iters)?;
    asintrovae_losses_at(tape, x, nets, cfg, rng, c, phase)
}

/// AS-IntroVAE with an explicit annealing rate `c` in `[0, 1]`: KL carries
/// weight `c` and the adversarial similarity distance between the real
/// batch's posteriors and each synthesised batch's posteriors carries `1 - c`.
pub fn asintrovae_losses_at<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: &Matrix,
    nets: Nets<'_>,
    cfg: &ObjectiveConfig,
    rng: &mut R,
    c: f64,
    phase: Phase,
) -> Result<LossPair> {
    if !(0.0..=1.0).contains(&c) {
        return Err(ObjectiveError::InvalidConfig(format!("annealing rate {c} outside [0, 1]")));
    }
    soft_introspective(tape, x, nets, cfg, rng, phase, Some(c))
}

fn soft_introspective<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: &Matrix,
    nets: Nets<'_>,
    cfg: &ObjectiveConfig,
    rng: &mut R,
    phase: Phase,
    anneal: Option<f64>,
) -> Result<LossPair> {
    let bound = Bound::new(tape, nets, phase);
    let rows = x.nrows();
    let real = real_elbo(tape, &bound, x, cfg, rng)?;
    let (x_r, x_g) = synthesize(tape, &bound, &real, rows, rng)?;
    let eps_r = standard_normal(rng, rows, bound.latent_dim);
    let eps_g = standard_normal(rng, rows, bound.latent_dim);
    let rec = fake_terms(tape, &bound, x_r, &eps_r, true)?;
    let gen = fake_terms(tape, &bound, x_g, &eps_g, true)?;

    let mut diagnostics = Diagnostics {
        recon_real: batch_mean(tape, real.recon),
        kl_real: batch_mean(tape, real.kl),
        kl_rec: batch_mean(tape, rec.kl),
        kl_gen: batch_mean(tape, gen.kl),
        c: 1.0,
        ..Diagnostics::default()
    };
    let blends = match anneal {
        None => [None, None],
        Some(c) => {
            let d = gaussian::as_distances(tape, &real.posterior, &[&rec.posterior, &gen.posterior])?;
            let (d_r, d_g) = (d[0], d[1]);
            diagnostics.as_rec = tape.scalar(d_r);
            diagnostics.as_gen = tape.scalar(d_g);
            diagnostics.c = c;
            [Some((c, d_r)), Some((c, d_g))]
        }
    };
    let mut fakes = Vec::with_capacity(2);
    for (terms, blend) in [&rec, &gen].into_iter().zip(blends) {
        fakes.push((
            fake_objective(tape, terms, cfg, 1.0, blend)?,
            fake_objective(tape, terms, cfg, cfg.gamma_r, blend)?,
        ));
    }
    let (encoder, decoder) = soft_losses(tape, &real, [fakes[0], fakes[1]], cfg)?;
    Ok(LossPair {
        encoder,
        decoder,
        diagnostics,
        encoder_net: bound.encoder,
        decoder_net: bound.decoder,
    })
}

/// Dispatches on `cfg.method`.
pub fn losses<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: &Matrix,
    nets: Nets<'_>,
    cfg: &ObjectiveConfig,
    rng: &mut R,
    iter: u64,
    phase: Phase,
) -> Result<LossPair> {
    match cfg.method {
        Method::Vae => vae_losses(tape, x, nets, cfg, rng, phase),
        Method::Introvae => introvae_losses(tape, x, nets, cfg, rng, phase),
        Method::SIntrovae => sintrovae_losses(tape, x, nets, cfg, rng, phase),
        Method::AsIntrovae => asintrovae_losses(tape, x, nets, cfg, rng, iter, phase),
    }
}

/// KL/AS annealing rate `min(5 i / T, 1)`.
pub fn anneal_c(iter: u64, total: u64) -> Result<f64> {
    if total < 1 || iter > total {
        return Err(ObjectiveError::Anneal { iter, total });
    }
    Ok((iter as f64 * 5.0 / total as f64).min(1.0))
}
