use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-coordinate comparison of tape gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)`; zero when both
    /// are exactly zero.
    pub rel_err: Vec<f64>,
    pub max_rel_err: f64,
    pub rtol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.rtol
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Evaluates `f` once on a fresh tape and returns `(value, gradient)`.
pub fn value_and_grad<F>(f: &F, params: &Tensor) -> Result<(f64, Tensor)>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let p = tape.leaf(params.clone());
    let out = f(&mut tape, p)?;
    let value = tape.value(out).item()?;
    let grads = tape.backward(out)?;
    Ok((value, grads.wrt(&tape, p)))
}

fn eval<F>(f: &F, params: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let p = tape.leaf(params.clone());
    let out = f(&mut tape, p)?;
    tape.value(out).item()
}

/// Compares the reverse-mode gradient of the scalar function `f` at
/// `params` against central finite differences with the given step.
pub fn grad_check<F>(f: F, params: &Tensor, step: f64, rtol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {step}")));
    }
    let (_, grad) = value_and_grad(&f, params)?;
    let mut numeric = Vec::with_capacity(params.len());
    let mut probe = params.clone();
    for i in 0..params.len() {
        let x = params.data()[i];
        probe.data_mut()[i] = x + step;
        let plus = eval(&f, &probe)?;
        probe.data_mut()[i] = x - step;
        let minus = eval(&f, &probe)?;
        probe.data_mut()[i] = x;
        numeric.push((plus - minus) / (2.0 * step));
    }
    let analytic = grad.into_data();
    let rel_err: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .collect();
    let max_rel_err = rel_err.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        analytic,
        numeric,
        rel_err,
        max_rel_err,
        rtol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let report = grad_check(
            |tape, p| {
                let sq = tape.square(p)?;
                Ok(tape.sum(sq))
            },
            &Tensor::row(vec![3.0]),
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert!((report.analytic[0] - 6.0).abs() < 1e-15);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let report = grad_check(
            |tape, _p| Ok(tape.leaf(Tensor::scalar(4.2))),
            &Tensor::row(vec![1.0, -2.0]),
            1e-5,
            1e-6,
        )
        .unwrap();
        assert_eq!(report.analytic, vec![0.0, 0.0]);
        assert_eq!(report.numeric, vec![0.0, 0.0]);
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let r = grad_check(|tape, p| Ok(tape.sum(p)), &Tensor::row(vec![1.0]), 0.0, 1e-6);
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
