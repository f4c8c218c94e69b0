//! Alternating two-phase training with Adam, weight EMA, periodic
//! evaluation and on-disk run artifacts.
//!
//! Each iteration draws one data batch, steps the encoder on its loss, then
//! recomputes the losses on the same batch with fresh noise and steps the
//! decoder. Both networks are then folded into their EMA copies; evaluation
//! always decodes from the EMA decoder.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::{Matrix, Tape};
use crate::eval::{self, EvalError, EvalMetrics};
use crate::nets::{Checkpoint, NetError, NetParams, NetSpec};
use crate::objectives::{self, Diagnostics, Method, Nets, ObjectiveConfig, ObjectiveError, Phase};
use crate::rng::{self, Rng64};
use crate::toydata::{self, ModeSet, ToyError, ToyKind, ToySampler, ToySpec};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {term} at iteration {iter}")]
    NonFinite { iter: u64, term: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Toy(#[from] ToyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Named presets for `(w_elbo_real, w_kl_fake, w_rec_fake)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combo {
    C1,
    C2,
    C3,
    None,
}

impl Combo {
    pub const PRESETS: [Combo; 3] = [Combo::C1, Combo::C2, Combo::C3];

    pub fn as_str(&self) -> &'static str {
        match self {
            Combo::C1 => "c1",
            Combo::C2 => "c2",
            Combo::C3 => "c3",
            Combo::None => "none",
        }
    }

    /// `(w_elbo_real, w_kl_fake, w_rec_fake)`, or `None` for the defaults.
    pub fn weights(&self) -> Option<(f64, f64, f64)> {
        match self {
            Combo::C1 => Some((0.3, 0.1, 0.9)),
            Combo::C2 => Some((0.5, 0.1, 0.9)),
            Combo::C3 => Some((0.7, 0.2, 0.9)),
            Combo::None => None,
        }
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Combo {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "c1" => Ok(Combo::C1),
            "c2" => Ok(Combo::C2),
            "c3" => Ok(Combo::C3),
            "none" => Ok(Combo::None),
            _ => Err(format!("unknown combo '{s}' (expected c1, c2, c3 or none)")),
        }
    }
}

/// Which generated-sample batches are written to disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleDumps {
    /// Every evaluation point.
    All,
    /// Only the last evaluation.
    Final,
}

impl FromStr for SampleDumps {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "all" => Ok(SampleDumps::All),
            "final" => Ok(SampleDumps::Final),
            _ => Err(format!("unknown sample dump policy '{s}' (expected all or final)")),
        }
    }
}

/// One configuration source and the raw values it supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigLayer {
    pub source: String,
    pub values: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub dataset: ToyKind,
    pub combo: Combo,
    pub seed: u64,
    pub iters: u64,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub ema_decay: f64,
    pub eval_every: u64,
    pub eval_samples: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub gamma_r: f64,
    pub margin: f64,
    pub w_elbo_real: f64,
    pub w_kl_real: f64,
    pub w_rec_real: f64,
    pub w_kl_fake: f64,
    pub w_rec_fake: f64,
    pub exp_clamp: f64,
    pub dump_samples: SampleDumps,
    pub out: PathBuf,
    /// Non-default layers applied on top of the defaults, in order.
    #[serde(default)]
    pub layers: Vec<ConfigLayer>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let obj = ObjectiveConfig::new(Method::AsIntrovae);
        Self {
            method: Method::AsIntrovae,
            dataset: ToyKind::Gaussians8,
            combo: Combo::None,
            seed: 0,
            iters: 30_000,
            batch: 512,
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            ema_decay: 0.9995,
            eval_every: 1000,
            eval_samples: 10_000,
            hidden: vec![256, 256],
            latent_dim: 2,
            alpha: obj.alpha,
            gamma: obj.gamma,
            gamma_r: obj.gamma_r,
            margin: obj.margin,
            w_elbo_real: obj.w_elbo_real,
            w_kl_real: obj.w_kl_real,
            w_rec_real: obj.w_rec_real,
            w_kl_fake: obj.w_kl_fake,
            w_rec_fake: obj.w_rec_fake,
            exp_clamp: obj.exp_clamp,
            dump_samples: SampleDumps::All,
            out: PathBuf::from("run"),
            layers: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| format!("{key}: cannot parse '{value}': {e}"))
}

impl TrainConfig {
    /// Keys accepted by [`TrainConfig::set`].
    pub const KEYS: [&'static str; 27] = [
        "method",
        "dataset",
        "combo",
        "seed",
        "iters",
        "batch",
        "lr",
        "beta1",
        "beta2",
        "adam_eps",
        "ema_decay",
        "eval_every",
        "eval_samples",
        "hidden",
        "latent_dim",
        "alpha",
        "gamma",
        "gamma_r",
        "margin",
        "w_elbo_real",
        "w_kl_real",
        "w_rec_real",
        "w_kl_fake",
        "w_rec_fake",
        "exp_clamp",
        "dump_samples",
        "out",
    ];

    /// Assigns one field from its textual form. Setting `combo` also
    /// rewrites the three weights it binds (`none` restores their defaults),
    /// so later assignments win.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let value = value.trim();
        match key {
            "method" => self.method = parse(key, value)?,
            "dataset" => self.dataset = parse(key, value)?,
            "combo" => self.apply_combo(parse(key, value)?),
            "seed" => self.seed = parse(key, value)?,
            "iters" => self.iters = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "ema_decay" => self.ema_decay = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "eval_samples" => self.eval_samples = parse(key, value)?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "gamma_r" => self.gamma_r = parse(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "w_elbo_real" => self.w_elbo_real = parse(key, value)?,
            "w_kl_real" => self.w_kl_real = parse(key, value)?,
            "w_rec_real" => self.w_rec_real = parse(key, value)?,
            "w_kl_fake" => self.w_kl_fake = parse(key, value)?,
            "w_rec_fake" => self.w_rec_fake = parse(key, value)?,
            "exp_clamp" => self.exp_clamp = parse(key, value)?,
            "dump_samples" => self.dump_samples = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    pub fn apply_combo(&mut self, combo: Combo) {
        let defaults = ObjectiveConfig::new(self.method);
        let (e, k, r) = combo
            .weights()
            .unwrap_or((defaults.w_elbo_real, defaults.w_kl_fake, defaults.w_rec_fake));
        self.combo = combo;
        self.w_elbo_real = e;
        self.w_kl_fake = k;
        self.w_rec_fake = r;
    }

    /// Objective settings; the annealing horizon is the run length.
    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            method: self.method,
            alpha: self.alpha,
            gamma: self.gamma,
            gamma_r: self.gamma_r,
            margin: self.margin,
            w_elbo_real: self.w_elbo_real,
            w_kl_real: self.w_kl_real,
            w_rec_real: self.w_rec_real,
            w_kl_fake: self.w_kl_fake,
            w_rec_fake: self.w_rec_fake,
            total_iters: self.iters.max(1),
            exp_clamp: self.exp_clamp,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn encoder_spec(&self) -> NetSpec {
        NetSpec::new(2, self.hidden.clone(), 2 * self.latent_dim, self.seed ^ ENCODER_SEED_SALT)
    }

    pub fn decoder_spec(&self) -> NetSpec {
        NetSpec::new(self.latent_dim, self.hidden.clone(), 2, self.seed ^ DECODER_SEED_SALT)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.batch < 2 {
            return bad(format!("batch must be >= 2, got {}", self.batch));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2), ("ema_decay", self.ema_decay)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be > 0, got {}", self.adam_eps));
        }
        if self.eval_every < 1 || self.eval_samples < 1 {
            return bad("eval_every and eval_samples must be >= 1".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.latent_dim < 1 {
            return bad(format!(
                "hidden widths and latent_dim must be >= 1, got {:?} and {}",
                self.hidden, self.latent_dim
            ));
        }
        self.objective().validate()?;
        Ok(())
    }

    /// The config with provenance and output location stripped; two runs
    /// with equal identities produce identical results.
    pub fn identity(&self) -> TrainConfig {
        TrainConfig {
            layers: Vec::new(),
            out: PathBuf::new(),
            ..self.clone()
        }
    }
}

const ENCODER_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const DECODER_SEED_SALT: u64 = 0xd1b5_4a32_d192_ed03;
/// Seed of the fixed real reference batch every evaluation compares against.
pub const REFERENCE_SEED: u64 = 0x5e_ed0f_7e57;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let m: Vec<Matrix> = params.into_iter().map(|p| Matrix::zeros(p.raw_dim())).collect();
        Self { v: m.clone(), m, t: 0 }
    }
}

/// One bias-corrected Adam update. All shapes are checked before anything is
/// modified.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Matrix>,
    grads: &[Matrix],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let mut params: Vec<&mut Matrix> = params.into_iter().collect();
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(TrainError::Shape(format!(
            "{} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.dim() != g.dim() || p.dim() != state.m[k].dim() || p.dim() != state.v[k].dim() {
            return Err(TrainError::Shape(format!(
                "tensor {k}: param {:?}, grad {:?}, moment {:?}",
                p.dim(),
                g.dim(),
                state.m[k].dim()
            )));
        }
    }
    state.t += 1;
    let t = state.t as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    for (k, p) in params.iter_mut().enumerate() {
        ndarray::Zip::from(&mut **p)
            .and(&grads[k])
            .and(&mut state.m[k])
            .and(&mut state.v[k])
            .for_each(|p, &g, m, v| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            });
    }
    Ok(())
}

/// `ema <- decay * ema + (1 - decay) * current`, elementwise. The result is
/// kept inside the interval spanned by the two operands.
pub fn ema_update(ema: &mut NetParams, current: &NetParams, decay: f64) -> Result<()> {
    if !(0.0..1.0).contains(&decay) {
        return Err(TrainError::Config(format!("EMA decay must lie in [0, 1), got {decay}")));
    }
    if ema.spec().layer_shapes() != current.spec().layer_shapes() {
        return Err(TrainError::Shape(format!(
            "EMA {:?} vs current {:?}",
            ema.spec().layer_shapes(),
            current.spec().layer_shapes()
        )));
    }
    let w = 1.0 - decay;
    for (e, c) in ema.tensors_mut().zip(current.tensors()) {
        ndarray::Zip::from(e).and(c).for_each(|e, &c| {
            let next = if decay == 0.0 { c } else { *e + w * (c - *e) };
            *e = next.clamp(e.min(c), e.max(c));
        });
    }
    Ok(())
}

/// Loss values and diagnostics of one training iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Annealing input passed to the objectives.
    pub iter: u64,
    pub loss_e: f64,
    pub loss_d: f64,
    /// From the encoder phase.
    pub diagnostics: Diagnostics,
}

/// Training state for one run.
#[derive(Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    objective: ObjectiveConfig,
    adam: AdamConfig,
    encoder: NetParams,
    decoder: NetParams,
    encoder_ema: NetParams,
    decoder_ema: NetParams,
    adam_encoder: AdamState,
    adam_decoder: AdamState,
    data: ToySampler,
    noise: Rng64,
    eval_noise: Rng64,
    iter: u64,
    tape: Tape,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let encoder = NetParams::init(cfg.encoder_spec())?;
        let decoder = NetParams::init(cfg.decoder_spec())?;
        Ok(Self {
            objective: cfg.objective(),
            adam: cfg.adam(),
            adam_encoder: AdamState::new(encoder.tensors()),
            adam_decoder: AdamState::new(decoder.tensors()),
            encoder_ema: encoder.clone(),
            decoder_ema: decoder.clone(),
            encoder,
            decoder,
            data: ToySampler::new(ToySpec::new(cfg.dataset, cfg.seed)),
            noise: rng::stream(cfg.seed, 1),
            eval_noise: rng::stream(cfg.seed, 2),
            iter: 0,
            tape: Tape::new(),
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Completed iterations.
    pub fn iter(&self) -> u64 {
        self.iter
    }

    pub fn encoder(&self) -> &NetParams {
        &self.encoder
    }

    pub fn decoder(&self) -> &NetParams {
        &self.decoder
    }

    pub fn encoder_ema(&self) -> &NetParams {
        &self.encoder_ema
    }

    pub fn decoder_ema(&self) -> &NetParams {
        &self.decoder_ema
    }

    /// Draws the next training batch.
    pub fn next_batch(&mut self) -> Matrix {
        self.data.sample(self.cfg.batch)
    }

    /// Computes the losses on `x` and Adam-steps only the network `phase`
    /// owns. Returns the phase's loss and the diagnostics.
    pub fn phase_step(&mut self, x: &Matrix, phase: Phase) -> Result<(f64, Diagnostics)> {
        self.tape.clear();
        let nets = Nets {
            encoder: &self.encoder,
            decoder: &self.decoder,
            latent_dim: self.cfg.latent_dim,
        };
        let pair = objectives::losses(&mut self.tape, x, nets, &self.objective, &mut self.noise, self.iter, phase)?;
        let loss_value = pair.for_phase(phase);
        let loss = self.tape.scalar(loss_value);
        let term = match phase {
            Phase::Encoder => "loss_E",
            Phase::Decoder => "loss_D",
        };
        if !loss.is_finite() {
            return Err(self.non_finite(term, &pair.diagnostics));
        }
        let grads = self.tape.backward(loss_value).map_err(ObjectiveError::from)?;
        let grads = pair.net_for_phase(phase).grads(&grads);
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(TrainError::NonFinite {
                iter: self.iter,
                term: format!("gradient of {term}"),
            });
        }
        let (params, state) = match phase {
            Phase::Encoder => (&mut self.encoder, &mut self.adam_encoder),
            Phase::Decoder => (&mut self.decoder, &mut self.adam_decoder),
        };
        adam_step(params.tensors_mut(), &grads, state, &self.adam)?;
        Ok((loss, pair.diagnostics))
    }

    fn non_finite(&self, loss_term: &str, diag: &Diagnostics) -> TrainError {
        let term = diag
            .named()
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(name, _)| format!("{loss_term} (component {name})"))
            .unwrap_or_else(|| loss_term.to_string());
        TrainError::NonFinite { iter: self.iter, term }
    }

    /// One full iteration: encoder phase, decoder phase on the same batch,
    /// then the EMA update of both networks.
    pub fn step(&mut self) -> Result<StepRecord> {
        let x = self.next_batch();
        let (loss_e, diagnostics) = self.phase_step(&x, Phase::Encoder)?;
        let (loss_d, _) = self.phase_step(&x, Phase::Decoder)?;
        ema_update(&mut self.encoder_ema, &self.encoder, self.cfg.ema_decay)?;
        ema_update(&mut self.decoder_ema, &self.decoder, self.cfg.ema_decay)?;
        let record = StepRecord {
            iter: self.iter,
            loss_e,
            loss_d,
            diagnostics,
        };
        self.iter += 1;
        Ok(record)
    }

    /// Decodes `count` prior draws with the EMA decoder.
    pub fn generate(&mut self, count: usize) -> Result<Matrix> {
        let z = rng::standard_normal(&mut self.eval_noise, count, self.cfg.latent_dim);
        Ok(self.decoder_ema.apply(&z)?)
    }

    pub fn checkpoint_current(&self) -> Checkpoint {
        Checkpoint::new().with("encoder", &self.encoder).with("decoder", &self.decoder)
    }

    pub fn checkpoint_ema(&self) -> Checkpoint {
        Checkpoint::new()
            .with("encoder", &self.encoder_ema)
            .with("decoder", &self.decoder_ema)
    }
}

/// Metrics at one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iter: u64,
    pub c: f64,
    pub kl: f64,
    pub jsd: f64,
    pub modes: Option<usize>,
    pub per_mode_fracs: Vec<f64>,
}

pub const MANIFEST_FORMAT: &str = "introlab-run";
pub const MANIFEST: &str = "manifest.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const REAL_CSV: &str = "real.csv";
pub const CHECKPOINT_INITIAL: &str = "checkpoint_initial.bin";
pub const CHECKPOINT_FINAL: &str = "checkpoint_final.bin";
pub const CHECKPOINT_EMA: &str = "checkpoint_ema.bin";
pub const SAMPLES_FINAL: &str = "samples_final.csv";
pub const METRICS_HEADER: &str =
    "iter,c,loss_E,loss_D,recon_real,kl_real,kl_rec,kl_gen,as_rec,as_gen,eval_kl,eval_jsd,modes";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: String,
    pub config: TrainConfig,
    pub encoder: NetSpec,
    pub decoder: NetSpec,
    pub wall_time_secs: f64,
    pub completed: bool,
    pub evals: Vec<EvalRecord>,
    pub final_metrics: Option<EvalMetrics>,
    /// Role to file name, relative to the run directory.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|source| TrainError::Json { path, source })
    }

    pub fn file(&self, dir: &Path, role: &str) -> Option<PathBuf> {
        self.files.get(role).map(|f| dir.join(f))
    }

    /// Short human-readable description of the run.
    pub fn title(&self) -> String {
        let c = &self.config;
        format!(
            "{} on {} (combo {}, seed {}, {} iterations)",
            c.method, c.dataset, c.combo, c.seed, c.iters
        )
    }
}

/// Paths and results of a finished run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub metrics_csv: PathBuf,
    pub real_samples: PathBuf,
    pub checkpoint_initial: PathBuf,
    pub checkpoint_final: PathBuf,
    pub checkpoint_ema: PathBuf,
    pub sample_dumps: Vec<PathBuf>,
    pub evals: Vec<EvalRecord>,
    pub final_metrics: Option<EvalMetrics>,
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map(|m| m.to_string()).unwrap_or_default()
}

/// The fixed real batch evaluations compare against.
pub fn reference_batch(kind: ToyKind, count: usize) -> Matrix {
    ToySampler::new(ToySpec::new(kind, REFERENCE_SEED)).sample(count)
}

/// Mixture modes of the dataset, if it has discrete ones.
pub fn dataset_modes(kind: ToyKind) -> Option<ModeSet> {
    toydata::mode_set(&ToySpec::new(kind, 0)).ok()
}

/// Runs the full training loop and writes every artifact into `cfg.out`.
pub fn train(cfg: &TrainConfig) -> Result<RunArtifacts> {
    let started = Instant::now();
    let mut trainer = Trainer::new(cfg)?;
    let dir = cfg.out.clone();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut files = BTreeMap::new();
    let mut record_file = |role: &str, name: String| -> PathBuf {
        let path = dir.join(&name);
        files.insert(role.to_string(), name);
        path
    };

    let checkpoint_initial = record_file("checkpoint_initial", CHECKPOINT_INITIAL.into());
    trainer.checkpoint_current().save(&checkpoint_initial)?;

    let real = reference_batch(cfg.dataset, cfg.eval_samples);
    let real_samples = record_file("real_samples", REAL_CSV.into());
    toydata::write_points_csv(&real_samples, &real)?;
    let modes = dataset_modes(cfg.dataset);

    let metrics_csv = record_file("metrics", METRICS_CSV.into());
    let mut metrics = BufWriter::new(fs::File::create(&metrics_csv).map_err(io_err(&metrics_csv))?);
    writeln!(metrics, "{METRICS_HEADER}").map_err(io_err(&metrics_csv))?;

    let samples_dir = dir.join("samples");
    let mut sample_dumps = Vec::new();
    let mut evals = Vec::new();
    let mut final_metrics = None;
    for i in 0..cfg.iters {
        let step = trainer.step()?;
        let done = i + 1;
        if done % cfg.eval_every != 0 && done != cfg.iters {
            continue;
        }
        let generated = trainer.generate(cfg.eval_samples)?;
        let m = eval::evaluate(&real, &generated, modes.as_ref())?;
        let d = &step.diagnostics;
        writeln!(
            metrics,
            "{done},{},{},{},{},{},{},{},{},{},{},{},{}",
            d.c,
            step.loss_e,
            step.loss_d,
            d.recon_real,
            d.kl_real,
            d.kl_rec,
            d.kl_gen,
            d.as_rec,
            d.as_gen,
            m.kl,
            m.jsd,
            fmt_opt(m.modes)
        )
        .map_err(io_err(&metrics_csv))?;

        let last = done == cfg.iters;
        if cfg.dump_samples == SampleDumps::All {
            fs::create_dir_all(&samples_dir).map_err(io_err(&samples_dir))?;
            let name = format!("samples/iter_{done:06}.csv");
            let path = record_file(&format!("samples_iter_{done:06}"), name);
            toydata::write_points_csv(&path, &generated)?;
            sample_dumps.push(path);
        }
        if last {
            let path = record_file("samples_final", SAMPLES_FINAL.into());
            toydata::write_points_csv(&path, &generated)?;
            sample_dumps.push(path);
            final_metrics = Some(m.clone());
        }
        evals.push(EvalRecord {
            iter: done,
            c: d.c,
            kl: m.kl,
            jsd: m.jsd,
            modes: m.modes,
            per_mode_fracs: m.per_mode_fracs,
        });
    }
    metrics.flush().map_err(io_err(&metrics_csv))?;
    drop(metrics);

    let checkpoint_final = record_file("checkpoint_final", CHECKPOINT_FINAL.into());
    trainer.checkpoint_current().save(&checkpoint_final)?;
    let checkpoint_ema = record_file("checkpoint_ema", CHECKPOINT_EMA.into());
    trainer.checkpoint_ema().save(&checkpoint_ema)?;

    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: crate::VERSION.into(),
        config: cfg.clone(),
        encoder: cfg.encoder_spec(),
        decoder: cfg.decoder_spec(),
        wall_time_secs: started.elapsed().as_secs_f64(),
        completed: true,
        evals: evals.clone(),
        final_metrics: final_metrics.clone(),
        files,
    };
    let manifest_path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).map_err(|source| TrainError::Json {
        path: manifest_path.clone(),
        source,
    })?;
    fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))?;

    Ok(RunArtifacts {
        dir,
        manifest: manifest_path,
        metrics_csv,
        real_samples,
        checkpoint_initial,
        checkpoint_final,
        checkpoint_ema,
        sample_dumps,
        evals,
        final_metrics,
    })
}

/// One point of a method x combo x seed grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridCell {
    pub method: Method,
    pub combo: Combo,
    pub seed: u64,
}

impl GridCell {
    pub fn dir_name(&self) -> String {
        format!("{}_{}_s{}", self.method, self.combo, self.seed)
    }

    /// `base` specialised to this cell, writing under `root`.
    pub fn config(&self, base: &TrainConfig, root: &Path) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.method = self.method;
        cfg.apply_combo(self.combo);
        cfg.seed = self.seed;
        cfg.out = root.join(self.dir_name());
        cfg
    }
}

/// Cartesian product in method, combo, seed order.
pub fn grid(methods: &[Method], combos: &[Combo], seeds: &[u64]) -> Vec<GridCell> {
    let mut cells = Vec::new();
    for &method in methods {
        for &combo in combos {
            for &seed in seeds {
                cells.push(GridCell { method, combo, seed });
            }
        }
    }
    cells
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub cell: GridCell,
    pub dir: PathBuf,
    /// Final metrics, or the error that stopped the run.
    pub result: std::result::Result<EvalMetrics, String>,
    /// Whether a finished run with an identical config was reused.
    pub reused: bool,
}

/// A finished run in `cfg.out` whose recorded config matches `cfg`.
pub fn completed_run(cfg: &TrainConfig) -> Option<Manifest> {
    let manifest = Manifest::load(&cfg.out).ok()?;
    let files_exist = manifest.files.values().all(|f| cfg.out.join(f).is_file());
    (manifest.completed && files_exist && manifest.config.identity() == cfg.identity()).then_some(manifest)
}

/// Trains every cell, reusing finished runs, on up to `jobs` threads. Each
/// cell writes only to its own directory. `on_done` is called as cells finish.
pub fn run_grid<F>(base: &TrainConfig, cells: &[GridCell], root: &Path, jobs: usize, on_done: F) -> Vec<GridOutcome>
where
    F: Fn(&GridOutcome) + Sync,
{
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<GridOutcome>>> = Mutex::new(vec![None; cells.len()]);
    let worker = || loop {
        let k = next.fetch_add(1, Ordering::Relaxed);
        let Some(&cell) = cells.get(k) else { break };
        let cfg = cell.config(base, root);
        let outcome = match completed_run(&cfg) {
            Some(m) => GridOutcome {
                cell,
                dir: cfg.out.clone(),
                result: m.final_metrics.ok_or_else(|| "run has no evaluation".to_string()),
                reused: true,
            },
            None => GridOutcome {
                cell,
                dir: cfg.out.clone(),
                result: train(&cfg)
                    .map_err(|e| e.to_string())
                    .and_then(|a| a.final_metrics.ok_or_else(|| "run has no evaluation".to_string())),
                reused: false,
            },
        };
        on_done(&outcome);
        results.lock().expect("grid results lock")[k] = Some(outcome);
    };
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, cells.len().max(1)) {
            s.spawn(worker);
        }
    });
    results
        .into_inner()
        .expect("grid results lock")
        .into_iter()
        .map(|o| o.expect("every cell ran"))
        .collect()
}

pub const SUMMARY_HEADER: &str = "method,combo,seed,kl,jsd,modes";

/// One row per cell; failed cells have empty metric columns.
pub fn write_grid_summary(path: &Path, outcomes: &[GridOutcome]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    let mut body = || -> io::Result<()> {
        writeln!(w, "{SUMMARY_HEADER}")?;
        for o in outcomes {
            let c = &o.cell;
            match &o.result {
                Ok(m) => writeln!(w, "{},{},{},{},{},{}", c.method, c.combo, c.seed, m.kl, m.jsd, fmt_opt(m.modes))?,
                Err(_) => writeln!(w, "{},{},{},,,", c.method, c.combo, c.seed)?,
            }
        }
        w.flush()
    };
    body().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> TrainConfig {
        TrainConfig {
            iters: 6,
            batch: 16,
            eval_every: 3,
            eval_samples: 200,
            hidden: vec![8],
            out: dir.to_path_buf(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn combo_presets() {
        let mut cfg = TrainConfig::default();
        cfg.set("combo", "c3").unwrap();
        assert_eq!((cfg.w_elbo_real, cfg.w_kl_fake, cfg.w_rec_fake), (0.7, 0.2, 0.9));
        cfg.set("combo", "none").unwrap();
        assert_eq!((cfg.w_elbo_real, cfg.w_kl_fake, cfg.w_rec_fake), (1.0, 0.5, 0.5));
        assert!(cfg.set("combo", "c4").is_err());
    }

    #[test]
    fn set_covers_every_key() {
        let mut cfg = TrainConfig::default();
        for key in TrainConfig::KEYS {
            let value = match key {
                "method" => "vae",
                "dataset" => "checkerboard",
                "combo" => "c1",
                "hidden" => "4, 5",
                "dump_samples" => "final",
                "out" => "x",
                "beta1" | "beta2" | "ema_decay" => "0.5",
                _ => "3",
            };
            cfg.set(key, value).unwrap();
        }
        assert_eq!(cfg.hidden, vec![4, 5]);
        assert!(cfg.set("learning_rate", "1").is_err());
        assert!(cfg.set("iters", "ten").unwrap_err().contains("iters"));
    }

    #[test]
    fn validation() {
        TrainConfig::default().validate().unwrap();
        let bad = [
            TrainConfig { batch: 1, ..Default::default() },
            TrainConfig { ema_decay: 1.0, ..Default::default() },
            TrainConfig { hidden: vec![], ..Default::default() },
            TrainConfig { alpha: -1.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Matrix::from_elem((2, 2), 1.0);
        let g = ndarray::arr2(&[[3.0, -0.5], [1e-3, 0.0]]);
        let mut state = AdamState::new([&p]);
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        adam_step([&mut p], &[g], &mut state, &cfg).unwrap();
        assert!((p[[0, 0]] - 0.9).abs() < 1e-8);
        assert!((p[[0, 1]] - 1.1).abs() < 1e-8);
        assert!((p[[1, 0]] - 0.9).abs() < 1e-5);
        assert_eq!(p[[1, 1]], 1.0);
        assert_eq!(state.t, 1);
        let wrong = Matrix::zeros((1, 2));
        assert!(adam_step([&mut p], &[wrong], &mut state, &cfg).is_err());
        assert_eq!(state.t, 1);
    }

    #[test]
    fn ema_edge_cases() {
        let spec = NetSpec::new(2, vec![3], 2, 1);
        let a = NetParams::init(spec.clone()).unwrap();
        let b = NetParams::init(NetSpec { seed: 2, ..spec.clone() }).unwrap();
        let mut e = a.clone();
        ema_update(&mut e, &b, 0.0).unwrap();
        assert!(e.tensors().eq(b.tensors()));
        let mut e = a.clone();
        ema_update(&mut e, &a, 0.9).unwrap();
        assert_eq!(e, a);
        assert!(ema_update(&mut e, &b, 1.0).is_err());
        let other = NetParams::init(NetSpec::new(2, vec![4], 2, 1)).unwrap();
        assert!(ema_update(&mut e, &other, 0.5).is_err());
    }

    #[test]
    fn artifacts_exist_and_manifest_is_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let art = train(&cfg).unwrap();
        let manifest = Manifest::load(dir.path()).unwrap();
        for f in manifest.files.values() {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        assert_eq!(art.evals.len(), 2);
        assert_eq!(art.sample_dumps.len(), 3);
        let csv = fs::read_to_string(&art.metrics_csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("3,"));
        assert!(completed_run(&cfg).is_some());
        let changed = TrainConfig { seed: 9, ..cfg };
        assert!(completed_run(&changed).is_none());
    }

    #[test]
    fn zero_iterations_write_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let art = train(&TrainConfig { iters: 0, ..tiny(dir.path()) }).unwrap();
        assert!(art.checkpoint_initial.is_file());
        assert_eq!(fs::read_to_string(&art.metrics_csv).unwrap(), format!("{METRICS_HEADER}\n"));
        assert!(art.final_metrics.is_none());
    }

    #[test]
    fn grid_names_and_order() {
        let cells = grid(&[Method::Vae, Method::AsIntrovae], &[Combo::C1], &[1, 2]);
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[1].dir_name(), "vae_c1_s2");
        assert_eq!(cells[2].method, Method::AsIntrovae);
    }
}
