use serde::Serialize;

use super::tape::{Inputs, Tape};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a leaky-ReLU input changes sign inside
    /// the `[x - h, x + h]` stencil.
    pub excluded: Vec<usize>,
    pub pass: bool,
}

/// Relative errors are measured against `max(|analytic|, |numeric|, FD_SCALE_FLOOR)`
/// so coordinates with vanishing gradients are judged on absolute error.
pub const FD_SCALE_FLOOR: f64 = 1e-3;

pub fn finite_difference_check(
    tape: &Tape,
    inputs: &Inputs<'_>,
    wrt: &str,
    h: f64,
    rtol: f64,
) -> Result<FdReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let analytic = tape.gradient(inputs, wrt)?;
    let out = tape.output_id()?;
    let base = inputs
        .lookup(wrt)
        .cloned()
        .ok_or_else(|| Error::UnboundLeaf(wrt.to_string()))?;
    let base_kinks = signs(&tape.kink_inputs(&tape.forward(inputs)?));

    let mut max_rel: f64 = 0.0;
    let mut excluded = Vec::new();
    let mut checked = 0;
    for i in 0..base.len() {
        let eval_at = |delta: f64| -> Result<(f64, Vec<bool>)> {
            let mut shifted = base.clone();
            shifted.data_mut()[i] += delta;
            let mut local = inputs.clone();
            local.insert(wrt, &shifted);
            let vals = tape.forward(&local)?;
            let y = vals.get(out).data()[0];
            Ok((y, signs(&tape.kink_inputs(&vals))))
        };
        let (fp, kp) = eval_at(h)?;
        let (fm, km) = eval_at(-h)?;
        if kp != base_kinks || km != base_kinks {
            excluded.push(i);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[i];
        let scale = a.abs().max(numeric.abs()).max(FD_SCALE_FLOOR);
        max_rel = max_rel.max((a - numeric).abs() / scale);
        checked += 1;
    }
    Ok(FdReport {
        max_rel_error: max_rel,
        checked,
        excluded,
        pass: max_rel < rtol,
    })
}

fn signs(v: &[f64]) -> Vec<bool> {
    v.iter().map(|&x| x >= 0.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Array;

    #[test]
    fn cubic_at_two() {
        let mut t = Tape::new();
        let x = t.input("x", &[1]).unwrap();
        let x2 = t.mul(x, x).unwrap();
        let x3 = t.mul(x2, x).unwrap();
        t.sum(x3);
        let xa = Array::vector(vec![2.0]);
        let inputs = Inputs::new().with("x", &xa);
        assert_eq!(t.gradient(&inputs, "x").unwrap().data(), &[12.0]);
        let r = finite_difference_check(&t, &inputs, "x", 1e-4, 1e-4).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn kink_coordinate_is_excluded() {
        let mut t = Tape::new();
        let x = t.input("x", &[2]).unwrap();
        let y = t.leaky_relu(x, 0.2);
        t.sum(y);
        let xa = Array::vector(vec![0.0, 1.0]);
        let inputs = Inputs::new().with("x", &xa);
        let r = finite_difference_check(&t, &inputs, "x", 1e-5, 1e-4).unwrap();
        assert_eq!(r.excluded, vec![0]);
        assert_eq!(r.checked, 1);
        assert!(r.pass);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let mut t = Tape::new();
        let x = t.input("x", &[1]).unwrap();
        t.sum(x);
        let xa = Array::vector(vec![1.0]);
        let inputs = Inputs::new().with("x", &xa);
        assert!(finite_difference_check(&t, &inputs, "x", 0.0, 1e-4).is_err());
    }
}
