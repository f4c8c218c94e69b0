//! Seeded 2D toy distributions.
//!
//! - `gaussians8`: eight isotropic Gaussians (sd 0.2) centred on the circle of
//!   radius 2 at angles `2 pi k / 8`, chosen uniformly.
//! - `checkerboard`: uniform over the "black" cells of a side-2 checkerboard
//!   tiling of `[-4, 4]^2`, i.e. cells whose integer indices
//!   `floor((x + 4) / 2) + floor((y + 4) / 2)` are even.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::Matrix;
use crate::rng::{self, Rng64};

pub const GAUSSIANS8_RADIUS: f64 = 2.0;
pub const GAUSSIANS8_SIGMA: f64 = 0.2;
pub const CHECKER_HALF_WIDTH: f64 = 4.0;
pub const CHECKER_CELL: f64 = 2.0;

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("{0} has no discrete modes")]
    NoModes(ToyKind),
    #[error("sample count must be >= 1")]
    EmptySample,
    #[error("{path}:{line}: {msg}")]
    Csv { path: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, ToyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyKind {
    Gaussians8,
    Checkerboard,
}

impl ToyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ToyKind::Gaussians8 => "gaussians8",
            ToyKind::Checkerboard => "checkerboard",
        }
    }
}

impl fmt::Display for ToyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "gaussians8" => Ok(ToyKind::Gaussians8),
            "checkerboard" => Ok(ToyKind::Checkerboard),
            _ => Err(format!("unknown dataset '{s}' (expected gaussians8 or checkerboard)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToySpec {
    pub kind: ToyKind,
    pub seed: u64,
}

impl ToySpec {
    pub fn new(kind: ToyKind, seed: u64) -> Self {
        Self { kind, seed }
    }
}

/// Mixture centres and component standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    pub centers: Vec<[f64; 2]>,
    pub sigma: f64,
}

pub fn mode_set(spec: &ToySpec) -> Result<ModeSet> {
    match spec.kind {
        ToyKind::Gaussians8 => Ok(ModeSet {
            centers: (0..8)
                .map(|k| {
                    let angle = 2.0 * PI * k as f64 / 8.0;
                    [GAUSSIANS8_RADIUS * angle.cos(), GAUSSIANS8_RADIUS * angle.sin()]
                })
                .collect(),
            sigma: GAUSSIANS8_SIGMA,
        }),
        ToyKind::Checkerboard => Err(ToyError::NoModes(spec.kind)),
    }
}

/// Stateful sampler: successive calls continue one seeded stream.
#[derive(Debug, Clone)]
pub struct ToySampler {
    kind: ToyKind,
    centers: Vec<[f64; 2]>,
    rng: Rng64,
}

impl ToySampler {
    pub fn new(spec: ToySpec) -> Self {
        let centers = mode_set(&spec).map(|m| m.centers).unwrap_or_default();
        Self {
            kind: spec.kind,
            centers,
            rng: rng::seeded(spec.seed),
        }
    }

    pub fn sample(&mut self, count: usize) -> Matrix {
        let mut out = Array2::zeros((count, 2));
        for mut row in out.outer_iter_mut() {
            let p = match self.kind {
                ToyKind::Gaussians8 => self.gaussian_point(),
                ToyKind::Checkerboard => self.checker_point(),
            };
            row[0] = p[0];
            row[1] = p[1];
        }
        out
    }

    fn gaussian_point(&mut self) -> [f64; 2] {
        let k = self.rng.random_range(0..self.centers.len());
        let c = self.centers[k];
        let nx: f64 = self.rng.sample(StandardNormal);
        let ny: f64 = self.rng.sample(StandardNormal);
        [c[0] + GAUSSIANS8_SIGMA * nx, c[1] + GAUSSIANS8_SIGMA * ny]
    }

    fn checker_point(&mut self) -> [f64; 2] {
        let cells = (2.0 * CHECKER_HALF_WIDTH / CHECKER_CELL) as usize;
        let black = cells * cells / 2;
        let pick = self.rng.random_range(0..black);
        // Black cells row by row: row i holds columns j with (i + j) even.
        let per_row = cells / 2;
        let i = pick / per_row;
        let j = 2 * (pick % per_row) + (i % 2);
        let u: f64 = self.rng.random();
        let v: f64 = self.rng.random();
        [
            -CHECKER_HALF_WIDTH + CHECKER_CELL * (j as f64 + u),
            -CHECKER_HALF_WIDTH + CHECKER_CELL * (i as f64 + v),
        ]
    }
}

/// `count` points from a fresh stream of `spec`.
pub fn sample(spec: &ToySpec, count: usize) -> Result<Matrix> {
    if count == 0 {
        return Err(ToyError::EmptySample);
    }
    Ok(ToySampler::new(*spec).sample(count))
}

/// Checkerboard cell indices of a point (column, row).
pub fn checker_cell(p: [f64; 2]) -> (i64, i64) {
    (
        ((p[0] + CHECKER_HALF_WIDTH) / CHECKER_CELL).floor() as i64,
        ((p[1] + CHECKER_HALF_WIDTH) / CHECKER_CELL).floor() as i64,
    )
}

/// Whether `p` lies on a black square inside `[-4, 4]^2`.
pub fn on_checkerboard(p: [f64; 2]) -> bool {
    let inside = p.iter().all(|v| (-CHECKER_HALF_WIDTH..=CHECKER_HALF_WIDTH).contains(v));
    let (i, j) = checker_cell(p);
    inside && (i + j).rem_euclid(2) == 0
}

/// Writes points as CSV with header `x,y` and 17 significant digits.
pub fn write_points_csv(path: &Path, points: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_points(&mut w, points)?;
    w.flush()?;
    Ok(())
}

pub fn write_points<W: Write>(w: &mut W, points: &Matrix) -> io::Result<()> {
    writeln!(w, "x,y")?;
    for row in points.outer_iter() {
        writeln!(w, "{:.16e},{:.16e}", row[0], row[1])?;
    }
    Ok(())
}

pub fn read_points_csv(path: &Path) -> Result<Matrix> {
    let file = fs::File::open(path)?;
    let name = path.display().to_string();
    let err = |line: usize, msg: String| ToyError::Csv {
        path: name.clone(),
        line,
        msg,
    };
    let mut data = Vec::new();
    for (idx, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if idx == 0 {
            if line.trim() != "x,y" {
                return Err(err(1, format!("expected header 'x,y', got '{line}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        for _ in 0..2 {
            let field = parts.next().ok_or_else(|| err(idx + 1, "missing column".into()))?;
            let v: f64 = field.trim().parse().map_err(|e| err(idx + 1, format!("{e}")))?;
            data.push(v);
        }
        if parts.next().is_some() {
            return Err(err(idx + 1, "too many columns".into()));
        }
    }
    let rows = data.len() / 2;
    Ok(Array2::from_shape_vec((rows, 2), data).expect("two columns per row"))
}
