//! Sample-quality and chain-efficiency metrics for the synthetic targets.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::datasets::{swiss_roll_t, MixtureSpec, SWISS_ROLL_SCALE};
use crate::error::{Error, Result};
use crate::samplers::ChainRecord;

/// Accepted / proposed over one chain; `None` when the chain made no proposals.
pub fn acceptance_ratio(record: &ChainRecord) -> Option<f64> {
    let n = record.transitions.len();
    (n > 0).then(|| record.transitions.iter().filter(|t| t.accepted).count() as f64 / n as f64)
}

/// Acceptance ratio pooled over all transitions of all chains.
pub fn pooled_acceptance_ratio(records: &[ChainRecord]) -> Option<f64> {
    let (acc, tot) = records.iter().fold((0usize, 0usize), |(a, t), r| {
        (a + r.transitions.iter().filter(|t| t.accepted).count(), t + r.transitions.len())
    });
    (tot > 0).then(|| acc as f64 / tot as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCoverage {
    pub covered: usize,
    pub total: usize,
    /// Per mode: samples assigned to it (nearest center) that lie within the radius.
    pub hits: Vec<usize>,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")))
    }
}

/// A mode counts as covered when at least one sample whose nearest center
/// it is lies within `radius_in_sigmas * std` of it.
pub fn mode_coverage<S: AsRef<[f64]>>(
    samples: &[S],
    spec: &MixtureSpec,
    radius_in_sigmas: f64,
) -> Result<ModeCoverage> {
    check_positive("radius_in_sigmas", radius_in_sigmas)?;
    let radius = radius_in_sigmas * spec.std;
    let mut hits = vec![0; spec.centers.len()];
    for s in samples {
        let (k, dist) = spec.nearest(s.as_ref());
        if dist <= radius {
            hits[k] += 1;
        }
    }
    Ok(ModeCoverage {
        covered: hits.iter().filter(|&&h| h > 0).count(),
        total: hits.len(),
        hits,
    })
}

/// Fraction of samples within `k_sigmas * std` of their nearest center
/// (0 for an empty sample set).
pub fn high_quality_rate<S: AsRef<[f64]>>(samples: &[S], spec: &MixtureSpec, k_sigmas: f64) -> Result<f64> {
    check_positive("k_sigmas", k_sigmas)?;
    if samples.is_empty() {
        return Ok(0.0);
    }
    let r = k_sigmas * spec.std;
    let good = samples.iter().filter(|s| spec.nearest(s.as_ref()).1 <= r).count();
    Ok(good as f64 / samples.len() as f64)
}

/// Fraction of samples outside the axis-aligned box spanned by the mixture
/// centers, widened by `margin` on every side.
pub fn outside_box_fraction<S: AsRef<[f64]>>(samples: &[S], spec: &MixtureSpec, margin: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let (lo, hi) = spec.bounding_box();
    let out = samples
        .iter()
        .filter(|s| {
            let s = s.as_ref();
            !s.iter().all(|v| v.is_finite())
                || (0..2).any(|i| s[i] < lo[i] - margin || s[i] > hi[i] + margin)
        })
        .count();
    out as f64 / samples.len() as f64
}

/// Two-sided Kolmogorov-Smirnov statistic of `values` against `cdf`.
pub fn ks_statistic(values: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument("KS needs at least two samples".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("KS sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// KS statistic of coordinate `axis` of the samples.
pub fn ks_projection<S: AsRef<[f64]>>(samples: &[S], cdf: impl Fn(f64) -> f64, axis: usize) -> Result<f64> {
    let vals = samples
        .iter()
        .map(|s| {
            s.as_ref().get(axis).copied().ok_or(Error::Dimension {
                expected: axis + 1,
                got: s.as_ref().len(),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    ks_statistic(&vals, cdf)
}

pub fn normal_cdf(x: f64, mean: f64, std: f64) -> f64 {
    0.5 * (1.0 + erf((x - mean) / (std * SQRT_2)))
}

/// CDF of one coordinate of a mixture (a 1-D Gaussian mixture).
pub fn mixture_marginal_cdf(spec: &MixtureSpec, axis: usize, x: f64) -> f64 {
    spec.centers
        .iter()
        .zip(&spec.weights)
        .map(|(c, w)| w * normal_cdf(x, c[axis], spec.std))
        .sum()
}

/// Distance from `x` to the noiseless Swiss-roll curve, minimized over the
/// curve parameter by a grid scan followed by golden-section refinement.
pub fn swiss_roll_distance(x: &[f64]) -> f64 {
    let curve = |t: f64| [t * t.cos() / SWISS_ROLL_SCALE, t * t.sin() / SWISS_ROLL_SCALE];
    let d2 = |t: f64| {
        let p = curve(t);
        (x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2)
    };
    let (t0, t1) = (swiss_roll_t(0.0), swiss_roll_t(1.0));
    const GRID: usize = 2000;
    let h = (t1 - t0) / GRID as f64;
    let best = (0..=GRID)
        .map(|i| t0 + i as f64 * h)
        .min_by(|a, b| d2(*a).total_cmp(&d2(*b)))
        .expect("nonempty grid");
    let (mut a, mut b) = ((best - h).max(t0), (best + h).min(t1));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if d2(c) < d2(d) {
            b = d;
        } else {
            a = c;
        }
    }
    d2(0.5 * (a + b)).sqrt()
}

/// Evaluation target for sample sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    Grid(MixtureSpec),
    SwissRoll { noise_std: f64 },
}

/// Parses `grid:N_SIDE:SPACING:STD` or `swiss-roll:NOISE`.
pub fn parse_target(s: &str) -> Result<Target> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    let num = |p: &str, what: &str| -> Result<f64> {
        p.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::InvalidArgument(format!("bad {what} `{p}` in target `{s}`")))
    };
    match parts.as_slice() {
        ["grid", n, spacing, std] => {
            let n: usize = n
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad grid size `{n}` in target `{s}`")))?;
            if n == 0 || n > 1000 {
                return Err(Error::InvalidArgument(format!("grid size must be in 1..=1000, got {n}")));
            }
            Ok(Target::Grid(MixtureSpec::grid(n, num(spacing, "spacing")?, num(std, "std")?)?))
        }
        ["swiss-roll", noise] => {
            let noise_std = num(noise, "noise")?;
            if noise_std < 0.0 {
                return Err(Error::InvalidArgument("swiss-roll noise must be ≥ 0".into()));
            }
            Ok(Target::SwissRoll { noise_std })
        }
        _ => Err(Error::InvalidArgument(format!(
            "unknown target `{s}`; expected grid:N:SPACING:STD or swiss-roll:NOISE"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSettings {
    #[serde(default = "three")]
    pub coverage_radius_sigmas: f64,
    #[serde(default = "three")]
    pub quality_k_sigmas: f64,
    /// Margin around the grid centers' box for the "outside" fraction.
    #[serde(default = "one")]
    pub box_margin: f64,
}

fn three() -> f64 {
    3.0
}
fn one() -> f64 {
    1.0
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            coverage_radius_sigmas: 3.0,
            quality_k_sigmas: 3.0,
            box_margin: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsStat {
    pub projection: String,
    pub statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sample_count: usize,
    pub acceptance_ratio: Option<f64>,
    pub modes_covered: Option<ModeCoverage>,
    pub high_quality_rate: Option<f64>,
    pub outside_box_fraction: Option<f64>,
    pub swiss_roll_mean_distance: Option<f64>,
    pub ks_stats: Vec<KsStat>,
}

/// Computes every metric that applies to `target`. The acceptance ratio is
/// filled in only when chain records are supplied.
pub fn evaluate<S: AsRef<[f64]>>(
    samples: &[S],
    target: &Target,
    settings: &MetricSettings,
    chains: Option<&[ChainRecord]>,
) -> Result<EvalReport> {
    let finite: Vec<&[f64]> = samples
        .iter()
        .map(|s| s.as_ref())
        .filter(|s| s.len() >= 2 && s.iter().all(|v| v.is_finite()))
        .collect();
    let mut report = EvalReport {
        sample_count: samples.len(),
        acceptance_ratio: chains.and_then(pooled_acceptance_ratio),
        modes_covered: None,
        high_quality_rate: None,
        outside_box_fraction: None,
        swiss_roll_mean_distance: None,
        ks_stats: Vec::new(),
    };
    match target {
        Target::Grid(spec) => {
            report.modes_covered = Some(mode_coverage(&finite, spec, settings.coverage_radius_sigmas)?);
            // Non-finite samples count as low quality.
            let hq = high_quality_rate(&finite, spec, settings.quality_k_sigmas)?;
            report.high_quality_rate = Some(if samples.is_empty() {
                0.0
            } else {
                hq * finite.len() as f64 / samples.len() as f64
            });
            report.outside_box_fraction = Some(outside_box_fraction(samples, spec, settings.box_margin));
            if finite.len() >= 2 {
                for (axis, name) in [(0, "x"), (1, "y")] {
                    report.ks_stats.push(KsStat {
                        projection: name.into(),
                        statistic: ks_projection(&finite, |v| mixture_marginal_cdf(spec, axis, v), axis)?,
                    });
                }
            }
        }
        Target::SwissRoll { .. } => {
            if !finite.is_empty() {
                let total: f64 = finite.iter().map(|s| swiss_roll_distance(s)).sum();
                report.swiss_roll_mean_distance = Some(total / finite.len() as f64);
            }
        }
    }
    Ok(report)
}

/// Mass of a standard 2-D Gaussian within radius `k`: `1 - exp(-k^2 / 2)`.
pub fn gaussian_2d_mass_within(k: f64) -> f64 {
    1.0 - (-0.5 * k * k).exp()
}

/// Kolmogorov distribution tail bound `sqrt(-ln(a / 2) / 2) / sqrt(n)`: the
/// statistic exceeds this with probability at most `a` under the null.
pub fn ks_critical_value(n: usize, a: f64) -> f64 {
    (-(a / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}
