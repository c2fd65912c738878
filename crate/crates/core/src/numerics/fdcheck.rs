use super::Tensor;
use crate::error::{Error, Result};

/// Disagreement between an analytic gradient and central differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdErrors {
    /// Largest `|a − fd| / max(|a|, |fd|, 1e-12)` over components.
    pub componentwise: f64,
    /// `max |a − fd|` over `max(|a|, |fd|)`, both taken over the whole tensor.
    /// Components near the roundoff floor of the differences cannot inflate it.
    pub normwise: f64,
}

/// Compares `analytic` against central differences of `f` at `theta`.
pub fn finite_diff_errors<F>(mut f: F, theta: &Tensor<f64>, analytic: &Tensor<f64>, h: f64) -> Result<FdErrors>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("finite difference step must be positive"));
    }
    if theta.shape() != analytic.shape() {
        return Err(Error::ShapeMismatch {
            op: "finite_diff_check",
            left: theta.shape().to_vec(),
            right: analytic.shape().to_vec(),
        });
    }
    if !f(theta)?.is_finite() {
        return Err(Error::NonFinite { op: "finite_diff_check" });
    }
    let mut probe = theta.clone();
    let (mut worst, mut max_diff, mut scale) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..theta.len() {
        let orig = theta.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite { op: "finite_diff_check" });
        }
        let fd = (up - down) / (2.0 * h);
        let a = analytic.data()[i];
        let diff = (a - fd).abs();
        worst = worst.max(diff / a.abs().max(fd.abs()).max(1e-12));
        max_diff = max_diff.max(diff);
        scale = scale.max(a.abs()).max(fd.abs());
    }
    Ok(FdErrors {
        componentwise: worst,
        normwise: max_diff / scale.max(1e-12),
    })
}

/// Componentwise relative error of [`finite_diff_errors`].
pub fn finite_diff_check<F>(f: F, theta: &Tensor<f64>, analytic: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    Ok(finite_diff_errors(f, theta, analytic, h)?.componentwise)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let theta = Tensor::vector(vec![1.0, 2.0]);
        let grad = Tensor::vector(vec![2.0, 4.0]);
        let f = |t: &Tensor<f64>| Ok(t.data().iter().map(|v| v * v).sum());
        let err = finite_diff_check(f, &theta, &grad, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let theta = Tensor::vector(vec![1.0, 2.0]);
        let grad = Tensor::vector(vec![2.0, 5.0]);
        let f = |t: &Tensor<f64>| Ok(t.data().iter().map(|v| v * v).sum());
        assert!(finite_diff_check(f, &theta, &grad, 1e-5).unwrap() > 0.1);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let theta = Tensor::vector(vec![0.0]);
        let grad = Tensor::vector(vec![0.0]);
        let f = |_: &Tensor<f64>| Ok(f64::NAN);
        assert!(matches!(
            finite_diff_check(f, &theta, &grad, 1e-5),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn normwise_ignores_tiny_components() {
        // second component is off by 1e-12 on a gradient of 1e-11
        let theta = Tensor::vector(vec![1.0, 0.0]);
        let grad = Tensor::vector(vec![2.0, 1.1e-11]);
        let f = |t: &Tensor<f64>| Ok(t.data()[0] * t.data()[0] + 1e-11 * t.data()[1]);
        let e = finite_diff_errors(f, &theta, &grad, 1e-5).unwrap();
        assert!(e.componentwise > 0.05);
        assert!(e.normwise < 1e-9);
    }

    #[test]
    fn rejects_non_positive_step() {
        let t = Tensor::vector(vec![0.0]);
        assert!(finite_diff_check(|_| Ok(0.0), &t, &t, 0.0).is_err());
    }
}
