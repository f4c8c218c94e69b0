//! Oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::f64::consts::PI;

use introlab::eval::integrate;
use introlab::gaussian::{self, DiagonalGaussian, PosteriorBatch};
use introlab::rng::{self, Rng64};
use introlab::nets::{NetParams, NetSpec};
use introlab::objectives::{self, Nets};
use introlab::{LossPair, Matrix, Method, ObjectiveConfig, Op, Phase, Tape, Value};
use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SEEDS: u64 = 100;

pub type Build = dyn Fn(&mut Tape, &[Value]) -> Value;
pub type Inputs = dyn Fn(&mut Rng64) -> Vec<Matrix>;

pub struct Case {
    pub name: String,
    pub inputs: Box<Inputs>,
    pub build: Box<Build>,
}

impl Case {
    fn new(name: impl Into<String>, inputs: impl Fn(&mut Rng64) -> Vec<Matrix> + 'static, build: impl Fn(&mut Tape, &[Value]) -> Value + 'static) -> Self {
        Self {
            name: name.into(),
            inputs: Box::new(inputs),
            build: Box::new(build),
        }
    }

    /// Worst relative error over `SEEDS` random input draws.
    pub fn worst_error(&self) -> f64 {
        (0..SEEDS)
            .map(|seed| {
                let mut r = rng::seeded(seed);
                let inputs = (self.inputs)(&mut r);
                max_rel_error(&*self.build, &inputs, seed + 10_000)
            })
            .fold(0.0, f64::max)
    }
}

pub fn uniform(rng: &mut impl Rng, shape: (usize, usize), lo: f64, hi: f64) -> Matrix {
    Array2::from_shape_fn(shape, |_| rng.random_range(lo..hi))
}

/// `sum(f(inputs) * w)` for a fixed random weight `w` of the output's shape.
fn weighted_loss(tape: &mut Tape, out: Value, weight_seed: u64) -> Value {
    let shape = tape.shape(out);
    let mut r = rng::seeded(weight_seed);
    let w = tape.constant(uniform(&mut r, shape, -1.0, 1.0));
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod).unwrap()
}

fn eval_loss(build: &Build, inputs: &[Matrix], weight_seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vals: Vec<Value> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
    let out = build(&mut tape, &vals);
    let loss = weighted_loss(&mut tape, out, weight_seed);
    tape.scalar(loss)
}

/// Norm-relative error between the analytic and central-difference gradients
/// of every input, worst over the inputs.
pub fn max_rel_error(build: &Build, inputs: &[Matrix], weight_seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vals: Vec<Value> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = build(&mut tape, &vals);
    let loss = weighted_loss(&mut tape, out, weight_seed);
    let grads = tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (k, v) in vals.iter().enumerate() {
        let analytic = grads.wrt(*v);
        let cols = inputs[k].ncols();
        let mut numeric = Array2::zeros(inputs[k].dim());
        for idx in 0..inputs[k].len() {
            let (r, c) = (idx / cols, idx % cols);
            let mut plus = inputs.to_vec();
            plus[k][[r, c]] += H;
            let mut minus = inputs.to_vec();
            minus[k][[r, c]] -= H;
            numeric[[r, c]] = (eval_loss(build, &plus, weight_seed) - eval_loss(build, &minus, weight_seed)) / (2.0 * H);
        }
        let diff = (&analytic - &numeric).mapv(|x| x * x).sum().sqrt();
        let scale = analytic.mapv(|x| x * x).sum().sqrt() + numeric.mapv(|x| x * x).sum().sqrt();
        if scale > 1e-12 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

/// Values kept at least `gap` away from every point in `kinks`.
fn avoiding(r: &mut Rng64, shape: (usize, usize), kinks: &[f64], gap: f64) -> Matrix {
    Array2::from_shape_fn(shape, |_| loop {
        let x: f64 = r.random_range(-2.0..2.0);
        if kinks.iter().all(|k| (x - k).abs() > gap) {
            break x;
        }
    })
}

fn unary(op: Op, lo: f64, hi: f64) -> Case {
    Case::new(
        format!("{op:?}"),
        move |r| vec![uniform(r, (3, 4), lo, hi)],
        move |t, v| t.apply(op, &[v[0]]).unwrap(),
    )
}

fn binary(op: Op, a: (usize, usize), b: (usize, usize), b_range: (f64, f64)) -> Case {
    Case::new(
        format!("{op:?} {a:?} with {b:?}"),
        move |r| vec![uniform(r, a, -2.0, 2.0), uniform(r, b, b_range.0, b_range.1)],
        move |t, v| t.apply(op, &[v[0], v[1]]).unwrap(),
    )
}

/// Rows `[mean | var]` of `rows` random `n`-dimensional Gaussians.
fn packed(r: &mut Rng64, rows: usize, n: usize) -> Matrix {
    concatenate![Axis(1), uniform(r, (rows, n), -1.5, 1.5), uniform(r, (rows, n), 0.3, 2.0)]
}

/// One or more cases for every op kind of the tape.
pub fn op_cases() -> Vec<Case> {
    let mut cases = Vec::new();
    for op in [Op::Add, Op::Sub, Op::Mul] {
        cases.push(binary(op, (3, 4), (3, 4), (-2.0, 2.0)));
        cases.push(binary(op, (3, 4), (1, 4), (-2.0, 2.0)));
    }
    cases.push(binary(Op::Div, (3, 4), (3, 4), (0.5, 2.0)));
    cases.push(binary(Op::Div, (3, 4), (1, 4), (0.5, 2.0)));
    cases.push(Case::new(
        "row broadcast on the left",
        |r| vec![uniform(r, (1, 4), -2.0, 2.0), uniform(r, (3, 4), 0.5, 2.0)],
        |t, v| {
            let s = t.sub(v[0], v[1]).unwrap();
            t.div(s, v[1]).unwrap()
        },
    ));
    cases.push(binary(Op::MatMul, (3, 4), (4, 2), (-2.0, 2.0)));
    cases.push(binary(Op::MatMul, (1, 5), (5, 1), (-2.0, 2.0)));
    cases.push(unary(Op::Exp, -2.0, 2.0));
    cases.push(unary(Op::Log, 0.3, 3.0));
    cases.push(unary(Op::Tanh, -2.0, 2.0));
    cases.push(unary(Op::Square, -2.0, 2.0));
    cases.push(unary(Op::Sqrt, 0.3, 3.0));
    cases.push(unary(Op::Scale(-1.7), -2.0, 2.0));
    cases.push(unary(Op::Shift(0.3), -2.0, 2.0));
    cases.push(Case::new(
        "Relu",
        |r| vec![avoiding(r, (3, 4), &[0.0], 1e-3)],
        |t, v| t.relu(v[0]).unwrap(),
    ));
    cases.push(Case::new(
        "Clamp",
        |r| vec![avoiding(r, (3, 4), &[-0.5, 0.5], 1e-3)],
        |t, v| t.clamp(v[0], -0.5, 0.5).unwrap(),
    ));
    cases.push(unary(Op::Sum, -2.0, 2.0));
    cases.push(unary(Op::Mean, -2.0, 2.0));
    cases.push(unary(Op::RowSum, -2.0, 2.0));
    cases.push(unary(Op::Transpose, -2.0, 2.0));
    cases.push(unary(Op::SliceCols { start: 1, end: 3 }, -2.0, 2.0));
    cases.push(Case::new(
        "Broadcast",
        |r| vec![uniform(r, (1, 4), -2.0, 2.0)],
        |t, v| t.broadcast(v[0], 5).unwrap(),
    ));
    cases.push(binary(Op::ConcatCols, (3, 2), (3, 3), (-2.0, 2.0)));
    for sub in [false, true] {
        cases.push(Case::new(
            if sub { "outer_sub" } else { "outer_add" },
            |r| vec![uniform(r, (3, 1), -2.0, 2.0), uniform(r, (4, 1), -2.0, 2.0)],
            move |t, v| {
                if sub {
                    t.outer_sub(v[0], v[1]).unwrap()
                } else {
                    t.outer_add(v[0], v[1]).unwrap()
                }
            },
        ));
    }
    for n in [1, 3] {
        cases.push(Case::new(
            format!("GaussKernel n={n}"),
            move |r| vec![packed(r, 3, n), packed(r, 4, n)],
            |t, v| t.gauss_kernel(v[0], v[1]).unwrap(),
        ));
    }
    cases.push(Case::new(
        "GaussKernel shared operand",
        |r| vec![packed(r, 4, 2)],
        |t, v| t.gauss_kernel(v[0], v[0]).unwrap(),
    ));
    cases
}

fn batch(r: &mut Rng64, rows: usize, n: usize) -> Vec<Matrix> {
    vec![uniform(r, (rows, n), -1.5, 1.5), uniform(r, (rows, n), 0.3, 2.0)]
}

fn posterior(t: &mut Tape, mean: Value, var: Value) -> PosteriorBatch {
    PosteriorBatch::new(t, mean, var).unwrap()
}

/// One case per differentiable operation of the Gaussian module.
pub fn gaussian_cases() -> Vec<Case> {
    vec![
        Case::new(
            "kl_to_prior",
            |r| batch(r, 4, 3),
            |t, v| posterior(t, v[0], v[1]).kl_to_prior(t).unwrap(),
        ),
        Case::new(
            "kl_between",
            |r| [batch(r, 4, 3), batch(r, 4, 3)].concat(),
            |t, v| {
                let a = posterior(t, v[0], v[1]);
                let b = posterior(t, v[2], v[3]);
                a.kl_between(t, &b).unwrap()
            },
        ),
        Case::new(
            "reparameterize",
            |r| batch(r, 4, 2),
            |t, v| {
                let eps = Array2::from_shape_fn((4, 2), |(i, j)| (i as f64 - 1.5) * 0.7 + j as f64 * 0.3);
                posterior(t, v[0], v[1]).reparameterize(t, &eps).unwrap()
            },
        ),
        Case::new(
            "kernel_matrix",
            |r| [batch(r, 3, 2), batch(r, 5, 2)].concat(),
            |t, v| {
                let a = posterior(t, v[0], v[1]);
                let b = posterior(t, v[2], v[3]);
                gaussian::kernel_matrix(t, &a, &b).unwrap()
            },
        ),
        Case::new(
            "as_distance",
            |r| [batch(r, 4, 2), batch(r, 3, 2)].concat(),
            |t, v| {
                let a = posterior(t, v[0], v[1]);
                let b = posterior(t, v[2], v[3]);
                gaussian::as_distance(t, &a, &b).unwrap()
            },
        ),
        Case::new(
            "as_distances",
            |r| [batch(r, 4, 2), batch(r, 3, 2), batch(r, 4, 2)].concat(),
            |t, v| {
                let r = posterior(t, v[0], v[1]);
                let g1 = posterior(t, v[2], v[3]);
                let g2 = posterior(t, v[4], v[5]);
                let d = gaussian::as_distances(t, &r, &[&g1, &g2]).unwrap();
                let d2 = t.scale(d[1], 0.37).unwrap();
                t.add(d[0], d2).unwrap()
            },
        ),
    ]
}

// ---- closed-form oracles ----------------------------------------------------

fn log_density(g: &DiagonalGaussian, z: &[f64]) -> f64 {
    g.mean()
        .iter()
        .zip(g.var())
        .zip(z)
        .map(|((m, v), z)| -0.5 * (2.0 * PI * v).ln() - 0.5 * (z - m) * (z - m) / v)
        .sum()
}

/// `E_q[ln q(z) - ln p(z)]` over `samples` draws from `q`.
pub fn monte_carlo_kl(q: &DiagonalGaussian, p: &DiagonalGaussian, samples: usize, seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let mut eps = vec![0.0; q.dim()];
    let mut acc = 0.0;
    for _ in 0..samples {
        for e in eps.iter_mut() {
            *e = r.sample(StandardNormal);
        }
        let z = q.reparameterize(&eps).unwrap();
        acc += log_density(q, &z) - log_density(p, &z);
    }
    acc / samples as f64
}

pub fn normal_pdf(z: f64, mean: f64, var: f64) -> f64 {
    (-0.5 * (z - mean) * (z - mean) / var).exp() / (2.0 * PI * var).sqrt()
}

/// `∫ N(z; a) N(z; b) dz` as a product of per-coordinate adaptive quadratures.
pub fn quadrature_kernel(a: &DiagonalGaussian, b: &DiagonalGaussian) -> f64 {
    (0..a.dim())
        .map(|d| {
            let (ma, va, mb, vb) = (a.mean()[d], a.var()[d], b.mean()[d], b.var()[d]);
            let reach = 15.0 * va.max(vb).sqrt();
            let q = integrate(
                |z| normal_pdf(z, ma, va) * normal_pdf(z, mb, vb),
                ma.min(mb) - reach,
                ma.max(mb) + reach,
                1e-14,
                40,
            );
            assert!(q.converged);
            q.value
        })
        .product()
}

pub fn random_gaussian(r: &mut impl Rng, n: usize, var_range: (f64, f64)) -> DiagonalGaussian {
    DiagonalGaussian::new(
        (0..n).map(|_| r.random_range(-1.5..1.5)).collect(),
        (0..n).map(|_| r.random_range(var_range.0..var_range.1)).collect(),
    )
    .unwrap()
}

pub fn g1(mean: f64, var: f64) -> DiagonalGaussian {
    DiagonalGaussian::new(vec![mean], vec![var]).unwrap()
}

pub fn tape_distance(r: &[DiagonalGaussian], g: &[DiagonalGaussian]) -> f64 {
    let mut tape = Tape::new();
    let rb = PosteriorBatch::from_gaussians(&mut tape, r, false).unwrap();
    let gb = PosteriorBatch::from_gaussians(&mut tape, g, false).unwrap();
    let d = gaussian::as_distance(&mut tape, &rb, &gb).unwrap();
    tape.scalar(d)
}

/// JSD between `N(0, s^2)` and `N(delta, s^2)` and its derivative in
/// `delta`, by a dense midpoint sum in log space.
pub fn dense_grid_jsd(delta: f64, sigma: f64) -> (f64, f64) {
    let h = 1e-4 * sigma;
    let (lo, hi) = (-14.0 * sigma, delta + 14.0 * sigma);
    let steps = ((hi - lo) / h).ceil() as usize;
    let h = (hi - lo) / steps as f64;
    let (mut jsd, mut grad) = (0.0, 0.0);
    let log_norm = -(sigma * (2.0 * PI).sqrt()).ln();
    for k in 0..steps {
        let z = lo + (k as f64 + 0.5) * h;
        let la = log_norm - 0.5 * (z / sigma).powi(2);
        let lb = log_norm - 0.5 * ((z - delta) / sigma).powi(2);
        let top = la.max(lb);
        let lm = top + (0.5 * ((la - top).exp() + (lb - top).exp())).ln();
        jsd += 0.5 * la.exp() * (la - lm) + 0.5 * lb.exp() * (lb - lm);
        // d/d delta of the second density is q (z - delta) / sigma^2; the
        // terms differentiating the logarithms integrate to zero.
        grad += 0.5 * lb.exp() * (z - delta) / (sigma * sigma) * (lb - lm);
    }
    (jsd * h, grad * h)
}

// ---- objective fixtures ----------------------------------------------------

pub const LATENT: usize = 2;
pub const ROWS: usize = 6;

pub fn random_nets(seed: u64) -> (NetParams, NetParams) {
    let mut r = rng::seeded(seed ^ 0xabc);
    let mut enc = NetParams::init(NetSpec::new(2, vec![5, 4], 2 * LATENT, seed)).unwrap();
    let mut dec = NetParams::init(NetSpec::new(LATENT, vec![4, 5], 2, seed + 7)).unwrap();
    for net in [&mut enc, &mut dec] {
        for layer in net.layers_mut() {
            layer.bias.mapv_inplace(|_| r.random_range(-0.3..0.3));
        }
    }
    (enc, dec)
}

pub fn random_batch(seed: u64) -> Matrix {
    let mut r = rng::seeded(seed ^ 0x5a5a);
    Array2::from_shape_fn((ROWS, 2), |_| r.random_range(-2.5..2.5))
}

pub struct Run {
    pub tape: Tape,
    pub pair: LossPair,
}

impl Run {
    pub fn loss(&self, phase: Phase) -> f64 {
        self.tape.scalar(self.pair.for_phase(phase))
    }

    pub fn grads(&self, phase: Phase) -> Vec<Matrix> {
        let g = self.tape.backward(self.pair.for_phase(phase)).unwrap();
        self.pair.net_for_phase(phase).grads(&g)
    }
}

pub fn library(
    cfg: &ObjectiveConfig,
    enc: &NetParams,
    dec: &NetParams,
    x: &Matrix,
    seed: u64,
    c: Option<f64>,
    phase: Phase,
) -> Run {
    let mut tape = Tape::new();
    let nets = Nets {
        encoder: enc,
        decoder: dec,
        latent_dim: LATENT,
    };
    let mut r = rng::seeded(seed);
    let pair = match (cfg.method, c) {
        (Method::AsIntrovae, Some(c)) => objectives::asintrovae_losses_at(&mut tape, x, nets, cfg, &mut r, c, phase),
        _ => objectives::losses(&mut tape, x, nets, cfg, &mut r, 0, phase),
    }
    .unwrap();
    Run { tape, pair }
}

pub fn config(method: Method) -> ObjectiveConfig {
    ObjectiveConfig {
        w_elbo_real: 0.7,
        w_kl_real: 0.4,
        w_rec_real: 1.3,
        w_kl_fake: 0.6,
        w_rec_fake: 0.9,
        gamma: 1.5,
        gamma_r: 0.25,
        margin: 3.0,
        ..ObjectiveConfig::new(method)
    }
}

/// Soft-introspection losses and gradients from the annealed objective at
/// `c = 1` equal those of the plain objective, bit for bit.
pub fn annealing_reduces_bitwise(draw: u64) -> bool {
    let (enc, dec) = random_nets(100 + draw);
    let x = random_batch(100 + draw);
    let as_cfg = config(Method::AsIntrovae);
    let s_cfg = ObjectiveConfig {
        method: Method::SIntrovae,
        ..as_cfg.clone()
    };
    let bits = |m: &Matrix| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    [Phase::Encoder, Phase::Decoder].into_iter().all(|phase| {
        let a = library(&as_cfg, &enc, &dec, &x, draw, Some(1.0), phase);
        let s = library(&s_cfg, &enc, &dec, &x, draw, None, phase);
        let losses = [Phase::Encoder, Phase::Decoder]
            .into_iter()
            .all(|p| a.loss(p).to_bits() == s.loss(p).to_bits());
        let grads = a.grads(phase).iter().zip(s.grads(phase)).all(|(ga, gs)| bits(ga) == bits(&gs));
        losses && grads
    })
}
