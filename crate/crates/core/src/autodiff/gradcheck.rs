//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::tape::{Tape, Var};

/// Denominator floor for relative error, so gradients that are exactly zero
/// compare on absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error per input tensor.
    pub max_rel_err: Vec<f64>,
    pub max_abs_err: Vec<f64>,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_err.iter().copied().fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`; NaN on either side yields infinity.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if !analytic.is_finite() || !numeric.is_finite() {
        return f64::INFINITY;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Checks the gradient of the scalar built by `f` with respect to each of
/// `inputs` against central differences with the given `step`.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], step: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item()?.as_f64())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;

    let mut work = inputs.to_vec();
    let mut max_rel_err = Vec::with_capacity(inputs.len());
    let mut max_abs_err = Vec::with_capacity(inputs.len());
    for (i, &v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match tape.grad(v) {
            Some(g) => g.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; inputs[i].numel()],
        };
        let mut worst_rel: f64 = 0.0;
        let mut worst_abs: f64 = 0.0;
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = T::lit(orig.as_f64() + step);
            let plus = eval(&work)?;
            work[i].data_mut()[j] = T::lit(orig.as_f64() - step);
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let rel = relative_error(analytic[j], numeric);
            worst_rel = worst_rel.max(rel);
            worst_abs = worst_abs.max(if rel.is_finite() { (analytic[j] - numeric).abs() } else { f64::INFINITY });
        }
        max_rel_err.push(worst_rel);
        max_abs_err.push(worst_abs);
    }
    let passed = max_rel_err.iter().all(|&e| e < tol);
    Ok(GradCheckReport {
        max_rel_err,
        max_abs_err,
        tol,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_counts_as_failure() {
        assert!(relative_error(f64::NAN, 1.0).is_infinite());
        assert!(relative_error(1.0, f64::NAN).is_infinite());
    }

    #[test]
    fn detects_wrong_gradient() {
        // d/dx relu(x) at x = 0 is defined as 0, but a central difference
        // straddling the kink sees 0.5.
        let x = Tensor::<f64>::from_f64(&[1], &[0.0]).unwrap();
        let report = grad_check(
            |t, v| {
                let r = t.relu(v[0]);
                Ok(t.sum(r))
            },
            &[x],
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(!report.passed);
    }
}
