//! Two-parameter logistic (Platt) recalibration of discriminator logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, softplus};

/// Calibrated logit `a * raw + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub a: f64,
    pub b: f64,
}

impl Calibration {
    pub const IDENTITY: Calibration = Calibration { a: 1.0, b: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if self.a.is_finite() && self.b.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite("calibration".into()))
        }
    }

    pub fn logit(&self, raw: f64) -> f64 {
        self.a * raw + self.b
    }
}

pub const DEFAULT_L2: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-8;
const MAX_NEWTON_STEPS: usize = 200;

/// Fits `(a, b)` by damped Newton on the mean Bernoulli negative
/// log-likelihood (real = 1, fake = 0) plus `l2 / 2 * a^2`. The intercept
/// is not penalized.
pub fn fit_platt(real_logits: &[f64], fake_logits: &[f64], l2: f64) -> Result<Calibration> {
    if real_logits.is_empty() || fake_logits.is_empty() {
        return Err(Error::Calibration("both logit lists must be nonempty".into()));
    }
    if !(l2 >= 0.0) || !l2.is_finite() {
        return Err(Error::Calibration(format!("l2 must be ≥ 0, got {l2}")));
    }
    if real_logits.iter().chain(fake_logits).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("calibration logits".into()));
    }
    if l2 == 0.0 && separable(real_logits, fake_logits) {
        return Err(Error::Separable);
    }

    let n = (real_logits.len() + fake_logits.len()) as f64;
    let data = || {
        real_logits
            .iter()
            .map(|&l| (l, 1.0))
            .chain(fake_logits.iter().map(|&l| (l, 0.0)))
    };
    let objective = |a: f64, b: f64| -> f64 {
        data().map(|(l, y)| softplus(a * l + b) - y * (a * l + b)).sum::<f64>() / n
            + 0.5 * l2 * a * a
    };

    let mut a = 0.0;
    let mut b = (real_logits.len() as f64 / fake_logits.len() as f64).ln();
    let mut f = objective(a, b);
    for _ in 0..MAX_NEWTON_STEPS {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (l, y) in data() {
            let p = sigmoid(a * l + b);
            let r = p - y;
            let w = p * (1.0 - p);
            ga += r * l;
            gb += r;
            haa += w * l * l;
            hab += w * l;
            hbb += w;
        }
        ga = ga / n + l2 * a;
        gb /= n;
        haa = haa / n + l2;
        hab /= n;
        hbb /= n;
        if ga.hypot(gb) < GRAD_TOL {
            return Ok(Calibration { a, b });
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 1e-300 {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };
        let mut step = 1.0;
        loop {
            let (na, nb) = (a - step * da, b - step * db);
            let nf = objective(na, nb);
            if nf <= f || step < 1e-12 {
                a = na;
                b = nb;
                f = nf;
                break;
            }
            step *= 0.5;
        }
    }
    Err(Error::Calibration(format!(
        "Newton did not converge after {MAX_NEWTON_STEPS} steps (a = {a}, b = {b})"
    )))
}

fn separable(real: &[f64], fake: &[f64]) -> bool {
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    max(fake) < min(real) || max(real) < min(fake)
}

/// Calibrated probability `sigmoid(a * raw + b)`.
pub fn apply_calibration(cal: &Calibration, raw_logit: f64) -> f64 {
    sigmoid(cal.logit(raw_logit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn apply_examples() {
        assert_eq!(apply_calibration(&Calibration::IDENTITY, 0.0), 0.5);
        assert_eq!(apply_calibration(&Calibration { a: 2.0, b: -1.0 }, 0.5), 0.5);
        let flat = Calibration { a: 0.0, b: 0.7 };
        assert_eq!(apply_calibration(&flat, -30.0), apply_calibration(&flat, 12.0));
    }

    #[test]
    fn mirrored_logits_give_zero_intercept() {
        let real: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin() + 0.5).collect();
        let fake: Vec<f64> = real.iter().map(|v| -v).collect();
        let c = fit_platt(&real, &fake, DEFAULT_L2).unwrap();
        assert!(c.b.abs() < 1e-10, "{c:?}");
        assert!(c.a > 0.0);
    }

    #[test]
    fn uninformative_scores_give_zero_slope() {
        let real: Vec<f64> = (0..300).map(|i| (i as f64 * 0.61).cos()).collect();
        let fake = real.clone();
        let c = fit_platt(&real, &fake, DEFAULT_L2).unwrap();
        assert!(c.a.abs() < 1e-10, "{c:?}");
        assert!((sigmoid(c.b) - 0.5).abs() < 1e-10);

        // unbalanced: sigmoid(b) = fraction of real labels
        let fake3: Vec<f64> = fake.iter().chain(&fake).chain(&fake).copied().collect();
        let c = fit_platt(&real, &fake3, DEFAULT_L2).unwrap();
        assert!(c.a.abs() < 1e-10);
        assert!((sigmoid(c.b) - 0.25).abs() < 1e-10);
    }

    #[test]
    fn recovers_a_known_logistic_model() {
        let (a_true, b_true) = (1.5, 1.0);
        let mut rng = crate::rng::seeded(2024);
        let (mut real, mut fake) = (Vec::new(), Vec::new());
        for _ in 0..100_000 {
            let l: f64 = 2.0 * rng.sample::<f64, _>(StandardNormal);
            let p = sigmoid(a_true * l + b_true);
            if rng.random::<f64>() < p {
                real.push(l)
            } else {
                fake.push(l)
            }
        }
        let c = fit_platt(&real, &fake, 0.0).unwrap();
        assert!((c.a - a_true).abs() < 0.02 * a_true, "{c:?}");
        assert!((c.b - b_true).abs() < 0.02 * b_true, "{c:?}");
    }

    #[test]
    fn separable_data_needs_regularization() {
        let real = [1.0, 2.0, 3.0];
        let fake = [-1.0, -2.0];
        assert!(matches!(fit_platt(&real, &fake, 0.0), Err(Error::Separable)));
        let c = fit_platt(&real, &fake, 0.1).unwrap();
        assert!(c.a > 0.0);
        assert!(fit_platt(&[], &fake, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn calibrated_probability_is_monotone_and_open(
            a in 0.01f64..5.0, b in -3.0f64..3.0, x in -5.0f64..5.0, dx in 0.01f64..1.0
        ) {
            let c = Calibration { a, b };
            let p = apply_calibration(&c, x);
            prop_assert!(p > 0.0 && p < 1.0);
            prop_assert!(apply_calibration(&c, x + dx) > p);
        }

        #[test]
        fn fit_is_invariant_to_shuffling(seed in 0u64..1000) {
            let mut rng = crate::rng::seeded(seed);
            let real: Vec<f64> = (0..60).map(|_| rng.sample::<f64, _>(StandardNormal) + 0.8).collect();
            let fake: Vec<f64> = (0..60).map(|_| rng.sample::<f64, _>(StandardNormal) - 0.8).collect();
            let c1 = fit_platt(&real, &fake, DEFAULT_L2).unwrap();
            let mut r2 = real.clone();
            let mut f2 = fake.clone();
            r2.reverse();
            f2.rotate_left(17);
            let c2 = fit_platt(&r2, &f2, DEFAULT_L2).unwrap();
            prop_assert!((c1.a - c2.a).abs() < 1e-8 && (c1.b - c2.b).abs() < 1e-8);
        }
    }
}
