//! Sample-quality metrics and the JSD-saturation gradient sweep.

use std::f64::consts::{LN_2, PI};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::{Matrix, Tape};
use crate::gaussian::{self, DiagonalGaussian, GaussianError, PosteriorBatch};
use crate::toydata::ModeSet;

/// Histogram domain is `[-DOMAIN, DOMAIN]^2`.
pub const DOMAIN: f64 = 4.0;
pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_SMOOTHING: f64 = 1e-10;
/// Capture radius in units of the mode standard deviation.
pub const CAPTURE_SIGMAS: f64 = 3.0;
pub const MIN_MODE_FRACTION: f64 = 0.02;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("histogram needs at least 2 bins per axis, got {0}")]
    TooFewBins(usize),
    #[error("empty sample batch")]
    EmptyBatch,
    #[error("points must have 2 columns, got {0}")]
    NotPlanar(usize),
    #[error("invalid sweep parameter: {0}")]
    InvalidSweep(String),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// `B x B` counts over `[-4, 4]^2`. Points outside the domain land in the
/// nearest boundary bin.
#[derive(Debug, Clone, PartialEq)]
pub struct GridHistogram {
    bins: usize,
    counts: Vec<u64>,
    total: u64,
}

impl GridHistogram {
    pub fn new(bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(EvalError::TooFewBins(bins));
        }
        Ok(Self {
            bins,
            counts: vec![0; bins * bins],
            total: 0,
        })
    }

    pub fn from_points(points: &Matrix, bins: usize) -> Result<Self> {
        if points.ncols() != 2 {
            return Err(EvalError::NotPlanar(points.ncols()));
        }
        if points.nrows() == 0 {
            return Err(EvalError::EmptyBatch);
        }
        let mut h = Self::new(bins)?;
        for row in points.outer_iter() {
            h.add([row[0], row[1]]);
        }
        Ok(h)
    }

    fn axis_index(&self, v: f64) -> usize {
        let t = (v + DOMAIN) / (2.0 * DOMAIN) * self.bins as f64;
        // NaN saturates to 0.
        (t.floor().max(0.0) as usize).min(self.bins - 1)
    }

    pub fn add(&mut self, p: [f64; 2]) {
        let (i, j) = (self.axis_index(p[0]), self.axis_index(p[1]));
        self.counts[j * self.bins + i] += 1;
        self.total += 1;
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Smoothed cell probabilities `(count / N + eps) / (1 + eps B^2)`.
    pub fn probabilities(&self, eps: f64) -> Vec<f64> {
        let norm = 1.0 + eps * self.counts.len() as f64;
        let n = self.total.max(1) as f64;
        self.counts.iter().map(|&c| (c as f64 / n + eps) / norm).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergences {
    /// `KL(real || generated)` in nats.
    pub kl: f64,
    pub jsd: f64,
}

fn kl_discrete(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| if a > 0.0 { a * (a / b).ln() } else { 0.0 }).sum()
}

/// KL and JSD between the smoothed grid histograms of two point clouds.
pub fn histogram_divergences(real: &Matrix, generated: &Matrix, bins: usize, eps: f64) -> Result<Divergences> {
    if bins < 2 {
        return Err(EvalError::TooFewBins(bins));
    }
    let p = GridHistogram::from_points(real, bins)?.probabilities(eps);
    let q = GridHistogram::from_points(generated, bins)?.probabilities(eps);
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(Divergences {
        kl: kl_discrete(&p, &q),
        jsd: 0.5 * kl_discrete(&p, &m) + 0.5 * kl_discrete(&q, &m),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCoverage {
    pub count: usize,
    /// Fraction of all samples captured by each mode.
    pub fractions: Vec<f64>,
}

/// Each sample is assigned to its nearest centre and counts for it when
/// within `capture_sigmas * sigma`; a mode is covered when it holds at least
/// `min_fraction` of the samples.
pub fn mode_coverage(generated: &Matrix, modes: &ModeSet, capture_sigmas: f64, min_fraction: f64) -> Result<ModeCoverage> {
    if generated.nrows() == 0 {
        return Err(EvalError::EmptyBatch);
    }
    if generated.ncols() != 2 {
        return Err(EvalError::NotPlanar(generated.ncols()));
    }
    let radius = capture_sigmas * modes.sigma;
    let mut hits = vec![0usize; modes.centers.len()];
    for row in generated.outer_iter() {
        let nearest = modes
            .centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, (row[0] - c[0]).hypot(row[1] - c[1])))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((k, d)) = nearest {
            if d <= radius {
                hits[k] += 1;
            }
        }
    }
    let n = generated.nrows() as f64;
    let fractions: Vec<f64> = hits.iter().map(|&h| h as f64 / n).collect();
    Ok(ModeCoverage {
        count: fractions.iter().filter(|&&f| f >= min_fraction).count(),
        fractions,
    })
}

/// Metrics written for a set of generated samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub kl: f64,
    pub jsd: f64,
    pub modes: Option<usize>,
    pub per_mode_fracs: Vec<f64>,
}

/// Default-parameter histogram divergences plus mode coverage when the
/// dataset has discrete modes.
pub fn evaluate(real: &Matrix, generated: &Matrix, modes: Option<&ModeSet>) -> Result<EvalMetrics> {
    let div = histogram_divergences(real, generated, DEFAULT_BINS, DEFAULT_SMOOTHING)?;
    let coverage = modes
        .map(|m| mode_coverage(generated, m, CAPTURE_SIGMAS, MIN_MODE_FRACTION))
        .transpose()?;
    Ok(EvalMetrics {
        kl: div.kl,
        jsd: div.jsd,
        modes: coverage.as_ref().map(|c| c.count),
        per_mode_fracs: coverage.map(|c| c.fractions).unwrap_or_default(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

#[allow(clippy::excessive_precision)]
const KRONROD_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
// 7-point Gauss weights for the odd-indexed Kronrod nodes.
#[allow(clippy::excessive_precision)]
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = KRONROD_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    for k in 0..7 {
        let dx = half * KRONROD_NODES[k];
        let pair = f(center - dx) + f(center + dx);
        kronrod += KRONROD_WEIGHTS[k] * pair;
        if k % 2 == 1 {
            gauss += GAUSS_WEIGHTS[k / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss-Kronrod (7/15) quadrature with recursive bisection. Each
/// subinterval must meet its width-proportional share of `tol`; intervals
/// still failing at `max_depth` are accepted and flag non-convergence.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64, max_depth: u32) -> Quadrature {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32, out: &mut Quadrature) {
        let (value, error) = gauss_kronrod(f, a, b);
        if error <= tol || depth == 0 {
            if error > tol {
                out.converged = false;
            }
            out.value += value;
            out.error += error;
            return;
        }
        let mid = 0.5 * (a + b);
        recurse(f, a, mid, 0.5 * tol, depth - 1, out);
        recurse(f, mid, b, 0.5 * tol, depth - 1, out);
    }
    let mut out = Quadrature {
        value: 0.0,
        error: 0.0,
        converged: true,
    };
    recurse(&f, a, b, tol, max_depth, &mut out);
    out
}

fn log_normal_pdf(z: f64, mean: f64, sigma: f64) -> f64 {
    let t = (z - mean) / sigma;
    -0.5 * t * t - sigma.ln() - 0.5 * (2.0 * PI).ln()
}

/// JSD integrand for `N(0, s^2)` against `N(delta, s^2)`, in log space so
/// far tails neither underflow nor divide by zero.
fn jsd_density(z: f64, delta: f64, sigma: f64) -> f64 {
    let la = log_normal_pdf(z, 0.0, sigma);
    let lb = log_normal_pdf(z, delta, sigma);
    let hi = la.max(lb);
    let lm = hi + ((la - hi).exp() + (lb - hi).exp()).ln() - LN_2;
    0.5 * la.exp() * (la - lm) + 0.5 * lb.exp() * (lb - lm)
}

const SWEEP_TOL: f64 = 1e-14;
const SWEEP_DEPTH: u32 = 30;

/// `JSD(N(0, s^2) || N(delta, s^2))` by adaptive quadrature over
/// `[-10 s, delta + 10 s]`.
pub fn gaussian_jsd(delta: f64, sigma: f64) -> Quadrature {
    let lo = -10.0 * sigma + delta.min(0.0);
    let hi = delta.max(0.0) + 10.0 * sigma;
    integrate(|z| jsd_density(z, delta, sigma), lo, hi, SWEEP_TOL, SWEEP_DEPTH)
}

/// One point of the gradient sweep. `jsd_grad` and `as_grad` are derivatives
/// with respect to the separation `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientSweepRecord {
    pub delta: f64,
    pub jsd: f64,
    pub jsd_grad: f64,
    pub as_dist: f64,
    pub as_grad: f64,
    /// False when any quadrature behind this record missed its tolerance.
    pub converged: bool,
}

/// For each separation, compares the JSD between `N(0, s^2)` and
/// `N(delta, s^2)` with the adversarial similarity distance between the same
/// two posteriors taken as singleton batches. The JSD derivative is a central
/// difference of the quadrature; the distance derivative comes from the tape.
pub fn gradient_sweep(sigma: f64, separations: &[f64]) -> Result<Vec<GradientSweepRecord>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(EvalError::InvalidSweep(format!("sigma must be > 0, got {sigma}")));
    }
    if let Some(d) = separations.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
        return Err(EvalError::InvalidSweep(format!("separation must be >= 0, got {d}")));
    }
    let h = 1e-4 * sigma;
    let var = sigma * sigma;
    separations
        .iter()
        .map(|&delta| {
            let centre = gaussian_jsd(delta, sigma);
            let plus = gaussian_jsd(delta + h, sigma);
            let minus = gaussian_jsd(delta - h, sigma);

            let mut tape = Tape::new();
            let r = PosteriorBatch::from_gaussians(&mut tape, &[DiagonalGaussian::new(vec![0.0], vec![var])?], false)?;
            let g = PosteriorBatch::from_gaussians(&mut tape, &[DiagonalGaussian::new(vec![delta], vec![var])?], true)?;
            let d = gaussian::as_distance(&mut tape, &r, &g)?;
            let grads = tape.backward(d).map_err(GaussianError::from)?;

            Ok(GradientSweepRecord {
                delta,
                jsd: centre.value,
                jsd_grad: (plus.value - minus.value) / (2.0 * h),
                as_dist: tape.scalar(d),
                as_grad: grads.wrt(g.mean)[[0, 0]],
                converged: centre.converged && plus.converged && minus.converged,
            })
        })
        .collect()
}

/// `steps` evenly spaced separations from 0 to `max_sep` inclusive.
pub fn sweep_grid(max_sep: f64, steps: usize) -> Result<Vec<f64>> {
    if steps < 2 || !(max_sep > 0.0 && max_sep.is_finite()) {
        return Err(EvalError::InvalidSweep(format!(
            "need steps >= 2 and max separation > 0, got {steps} and {max_sep}"
        )));
    }
    Ok((0..steps).map(|k| max_sep * k as f64 / (steps - 1) as f64).collect())
}

pub fn write_sweep_csv<W: Write>(w: &mut W, records: &[GradientSweepRecord]) -> io::Result<()> {
    writeln!(w, "delta,jsd,jsd_grad,as_dist,as_grad")?;
    for r in records {
        writeln!(w, "{},{},{},{},{}", r.delta, r.jsd, r.jsd_grad, r.as_dist, r.as_grad)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};

    #[test]
    fn identical_batches_have_zero_divergence() {
        let pts = arr2(&[[0.1, 0.2], [1.5, -2.0], [3.9, 3.9], [-10.0, 0.0]]);
        let d = histogram_divergences(&pts, &pts, 64, 1e-10).unwrap();
        assert_eq!(d.kl, 0.0);
        assert_eq!(d.jsd, 0.0);
    }

    #[test]
    fn disjoint_support_saturates_jsd() {
        let a = Array2::from_elem((100, 2), -3.0);
        let b = Array2::from_elem((100, 2), 3.0);
        let d = histogram_divergences(&a, &b, 64, 1e-10).unwrap();
        assert!((d.jsd - LN_2).abs() < 1e-6, "{}", d.jsd);
        assert!(d.jsd <= LN_2 + 1e-12);
        assert!(d.kl > 20.0);
    }

    #[test]
    fn too_few_bins_and_empty_batches() {
        let pts = arr2(&[[0.0, 0.0]]);
        assert!(matches!(histogram_divergences(&pts, &pts, 1, 1e-10), Err(EvalError::TooFewBins(1))));
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(matches!(histogram_divergences(&empty, &pts, 8, 1e-10), Err(EvalError::EmptyBatch)));
    }

    #[test]
    fn outside_points_clamp_to_boundary_bins() {
        let mut h = GridHistogram::new(4).unwrap();
        h.add([-100.0, 100.0]);
        h.add([f64::NAN, 0.1]);
        h.add([4.0, -4.0]);
        assert_eq!(h.total(), 3);
        let p = h.probabilities(0.0);
        assert_eq!(p[3 * 4], 1.0 / 3.0);
        assert_eq!(p[2 * 4], 1.0 / 3.0);
        assert_eq!(p[3], 1.0 / 3.0);
        let s: f64 = h.probabilities(1e-3).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    fn ring() -> ModeSet {
        crate::toydata::mode_set(&crate::toydata::ToySpec::new(crate::toydata::ToyKind::Gaussians8, 0)).unwrap()
    }

    #[test]
    fn coverage_examples() {
        let modes = ring();
        let mut all = Array2::zeros((80, 2));
        for (i, mut row) in all.outer_iter_mut().enumerate() {
            let c = modes.centers[i % 8];
            row[0] = c[0];
            row[1] = c[1];
        }
        let cov = mode_coverage(&all, &modes, 3.0, 0.02).unwrap();
        assert_eq!(cov.count, 8);
        assert!(cov.fractions.iter().all(|&f| f == 0.125));

        let c = modes.centers[3];
        let one = Array2::from_shape_fn((50, 2), |(_, j)| c[j]);
        assert_eq!(mode_coverage(&one, &modes, 3.0, 0.02).unwrap().count, 1);

        let far = Array2::from_elem((10, 2), 0.0);
        assert_eq!(mode_coverage(&far, &modes, 3.0, 0.02).unwrap().count, 0);
    }

    #[test]
    fn quadrature_of_known_integrals() {
        let q = integrate(|x| x.exp(), 0.0, 1.0, 1e-14, 20);
        assert!(q.converged);
        assert!((q.value - (1f64.exp() - 1.0)).abs() < 1e-14);
        let q = integrate(|x| (-x * x).exp(), -10.0, 10.0, 1e-14, 30);
        assert!((q.value - PI.sqrt()).abs() < 1e-13);
        let q = integrate(|x| 1.0 / x.sqrt(), 1e-300, 1.0, 1e-30, 3);
        assert!(!q.converged);
    }

    #[test]
    fn sweep_endpoints() {
        let recs = gradient_sweep(1.0, &[0.0, 10.0, 12.0]).unwrap();
        assert!(recs[0].jsd.abs() < 1e-15, "{}", recs[0].jsd);
        assert!(recs[0].jsd_grad.abs() < 1e-9);
        assert!(recs[0].as_dist.abs() < 1e-15);
        assert_eq!(recs[0].as_grad, 0.0);
        assert!((recs[1].jsd - LN_2).abs() < 1e-6);
        // The JSD derivative at 10 sigma is still ~2.2e-6; it only drops
        // below 1e-8 around 12 sigma.
        assert!((recs[1].jsd_grad - 2.232e-6).abs() < 1e-9, "{}", recs[1].jsd_grad);
        assert!(recs[2].jsd_grad.abs() < 1e-8, "{}", recs[2].jsd_grad);
        assert!(recs.iter().all(|r| r.converged));
    }

    #[test]
    fn sweep_as_distance_matches_closed_form() {
        // D(delta) = 2 (4 pi s^2)^(-1/2) (1 - exp(-delta^2 / (4 s^2))).
        let s = 0.7f64;
        let recs = gradient_sweep(s, &[0.3, 1.0, 2.5, 6.0]).unwrap();
        let norm = 2.0 / (4.0 * PI * s * s).sqrt();
        for r in recs {
            let e = (-r.delta * r.delta / (4.0 * s * s)).exp();
            assert!((r.as_dist - norm * (1.0 - e)).abs() < 1e-14);
            let grad = norm * e * r.delta / (2.0 * s * s);
            assert!((r.as_grad - grad).abs() < 1e-14);
        }
    }

    #[test]
    fn sweep_rejects_bad_input() {
        assert!(gradient_sweep(0.0, &[1.0]).is_err());
        assert!(gradient_sweep(1.0, &[-1.0]).is_err());
        assert!(sweep_grid(10.0, 1).is_err());
        let g = sweep_grid(10.0, 51).unwrap();
        assert_eq!(g.len(), 51);
        assert_eq!(g[10], 2.0);
        assert_eq!(g[50], 10.0);
    }
}
