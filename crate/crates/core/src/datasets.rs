//! Seeded synthetic 2-D targets: the Swiss roll and grids of Gaussians.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Isotropic Gaussian mixture with uniform weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub centers: Vec<[f64; 2]>,
    pub std: f64,
    pub weights: Vec<f64>,
}

impl MixtureSpec {
    pub fn uniform(centers: Vec<[f64; 2]>, std: f64) -> Result<Self> {
        let k = centers.len();
        let spec = Self {
            weights: vec![1.0 / k as f64; k],
            centers,
            std,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `n_side x n_side` centers with the given spacing, centered at the origin.
    pub fn grid(n_side: usize, spacing: f64, std: f64) -> Result<Self> {
        if n_side == 0 {
            return Err(Error::InvalidArgument("n_side must be ≥ 1".into()));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidArgument(format!("spacing must be positive, got {spacing}")));
        }
        let off = (n_side as f64 - 1.0) / 2.0;
        let mut centers = Vec::with_capacity(n_side * n_side);
        for i in 0..n_side {
            for j in 0..n_side {
                centers.push([(i as f64 - off) * spacing, (j as f64 - off) * spacing]);
            }
        }
        Self::uniform(centers, std)
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() {
            return Err(Error::InvalidArgument("mixture needs at least one center".into()));
        }
        if !(self.std > 0.0) || !self.std.is_finite() {
            return Err(Error::InvalidArgument(format!("std must be positive, got {}", self.std)));
        }
        if self.weights.len() != self.centers.len() {
            return Err(Error::InvalidArgument("one weight per center required".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("weights must sum to 1, got {total}")));
        }
        if self.centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mixture centers".into()));
        }
        for (i, a) in self.centers.iter().enumerate() {
            if self.centers[..i].contains(a) {
                return Err(Error::InvalidArgument(format!("duplicate center {a:?}")));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounding box of the centers: `(min, max)`.
    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for c in &self.centers {
            for d in 0..2 {
                lo[d] = lo[d].min(c[d]);
                hi[d] = hi[d].max(c[d]);
            }
        }
        (lo, hi)
    }

    /// Index of and distance to the nearest center.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        self.centers
            .iter()
            .enumerate()
            .map(|(i, c)| (i, (x[0] - c[0]).hypot(x[1] - c[1])))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    SwissRoll {
        n: usize,
        #[serde(default = "default_noise")]
        noise_std: f64,
    },
    Grid {
        n_side: usize,
        #[serde(default = "default_spacing")]
        spacing: f64,
        #[serde(default = "default_grid_std")]
        std: f64,
        n: usize,
    },
}

pub const DEFAULT_SWISS_ROLL_NOISE: f64 = 0.05;

fn default_noise() -> f64 {
    DEFAULT_SWISS_ROLL_NOISE
}

fn default_spacing() -> f64 {
    1.0
}

fn default_grid_std() -> f64 {
    0.1
}

impl DatasetSpec {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        match *self {
            DatasetSpec::SwissRoll { n, noise_std } => sample_swiss_roll(n, noise_std, seed),
            DatasetSpec::Grid {
                n_side,
                spacing,
                std,
                n,
            } => sample_grid_mixture(n_side, spacing, std, n, seed),
        }
    }

    pub fn mixture(&self) -> Option<MixtureSpec> {
        match *self {
            DatasetSpec::Grid {
                n_side,
                spacing,
                std,
                ..
            } => MixtureSpec::grid(n_side, spacing, std).ok(),
            DatasetSpec::SwissRoll { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Vec<[f64; 2]>,
    pub spec: DatasetSpec,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows: Vec<Vec<f64>> = self.points.iter().map(|p| p.to_vec()).collect();
        write_points_csv(w, &rows)
    }
}

/// Swiss-roll point for a given uniform draw and noise vector, before any
/// randomness: `t = 1.5 pi (1 + 2u)`, `(t cos t, t sin t) / 7.5 + noise`.
pub fn swiss_roll_point(u: f64, noise: [f64; 2]) -> [f64; 2] {
    let t = swiss_roll_t(u);
    [t * t.cos() / SWISS_ROLL_SCALE + noise[0], t * t.sin() / SWISS_ROLL_SCALE + noise[1]]
}

pub const SWISS_ROLL_SCALE: f64 = 7.5;

pub fn swiss_roll_t(u: f64) -> f64 {
    1.5 * PI * (1.0 + 2.0 * u)
}

pub fn sample_swiss_roll(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::InvalidArgument(format!("noise_std must be ≥ 0, got {noise_std}")));
    }
    let mut rng = seeded(seed);
    let points = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let e0: f64 = rng.sample(StandardNormal);
            let e1: f64 = rng.sample(StandardNormal);
            swiss_roll_point(u, [noise_std * e0, noise_std * e1])
        })
        .collect();
    Ok(Dataset {
        points,
        spec: DatasetSpec::SwissRoll { n, noise_std },
        seed,
    })
}

pub fn sample_grid_mixture(
    n_side: usize,
    spacing: f64,
    std: f64,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let spec = MixtureSpec::grid(n_side, spacing, std)?;
    let mut rng = seeded(seed);
    let k = spec.centers.len();
    let points = (0..n)
        .map(|_| {
            let c = spec.centers[rng.random_range(0..k)];
            let e0: f64 = rng.sample(StandardNormal);
            let e1: f64 = rng.sample(StandardNormal);
            [c[0] + std * e0, c[1] + std * e1]
        })
        .collect();
    Ok(Dataset {
        points,
        spec: DatasetSpec::Grid {
            n_side,
            spacing,
            std,
            n,
        },
        seed,
    })
}

/// `log sum_k w_k N(x; c_k, std^2 I)` with log-sum-exp.
pub fn mixture_log_density(spec: &MixtureSpec, x: &[f64]) -> f64 {
    let var = spec.std * spec.std;
    let norm = -(2.0 * PI * var).ln();
    let terms: Vec<f64> = spec
        .centers
        .iter()
        .zip(&spec.weights)
        .map(|(c, w)| {
            let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
            w.ln() + norm - 0.5 * d2 / var
        })
        .collect();
    log_sum_exp(&terms)
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn write_points_csv<W: Write>(w: W, points: &[Vec<f64>]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let dim = points.first().map_or(2, Vec::len);
    if dim == 2 {
        wr.write_record(["x", "y"])?;
    } else {
        wr.write_record((0..dim).map(|i| format!("x{i}")))?;
    }
    for p in points {
        wr.write_record(p.iter().map(|v| format_f64(*v)))?;
    }
    wr.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the same bits.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Reads a headered CSV of numeric columns. Every row must have the same
/// width and only finite values.
pub fn parse_points_csv<R: Read>(r: R) -> Result<Vec<Vec<f64>>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let width = rd.headers()?.len();
    if width == 0 {
        return Err(Error::InvalidArgument("CSV has no columns".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::InvalidArgument(format!(
                "row {} has {} fields, header has {width}",
                i + 1,
                rec.len()
            )));
        }
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::InvalidArgument(format!("row {}: bad value `{f}`", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(row);
    }
    Ok(out)
}
