//! Central-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Lower bound on the relative-error denominator, so entries where both
    /// gradients are ~0 are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Compares the reverse-mode gradient of a scalar function against
/// `(f(x+h) − f(x−h)) / 2h`, element by element.
///
/// `f` records its computation on the supplied tape, starting from the leaf
/// it is handed, and returns the scalar output node.
pub fn grad_check<F>(f: F, x: &Tensor, options: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.param(x.clone());
    let out = f(&mut tape, leaf)?;
    let analytic = tape.backward(out)?.get_or_zeros(leaf, x.shape()).into_data();

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.constant(probe.clone());
        let out = f(&mut tape, leaf)?;
        Ok(tape.value(out).item())
    };
    let numeric = central_differences(eval, x, options.step)?;
    Ok(summarize(analytic, numeric, options.floor))
}

/// Central differences of an arbitrary scalar function.
pub fn central_differences<F>(f: F, x: &Tensor, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

pub fn summarize(analytic: Vec<f64>, numeric: Vec<f64>, floor: f64) -> GradCheckReport {
    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    GradCheckReport {
        analytic,
        numeric,
        max_rel_error,
        worst_index,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_matches_closed_form() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let report = grad_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                Ok(t.sum(sq))
            },
            &x,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.analytic, vec![2.0, 4.0, 6.0]);
        assert!(report.max_rel_error < 1e-7, "{}", report.max_rel_error);
    }

    #[test]
    fn constant_function_has_exactly_zero_gradient() {
        let x = Tensor::from_rows(&[vec![0.3, -0.7]]).unwrap();
        let report = grad_check(
            |t, _x| Ok(t.constant(Tensor::scalar(4.2))),
            &x,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.analytic.iter().all(|&g| g == 0.0));
        assert!(report.numeric.iter().all(|&g| g == 0.0));
        assert_eq!(report.max_rel_error, 0.0);
    }
}
