//! Central-finite-difference verification of reverse-mode gradients.

use super::tensor::{NumError, Tensor};

/// Outcome of a resolution-aware gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error over the coordinates finite differences can
    /// actually resolve.
    pub max_rel_error: f64,
    /// Coordinates compared against the tolerance.
    pub checked: usize,
    /// Coordinates where both gradients sit below the resolution floor;
    /// their agreement is asserted at the floor, not the tolerance.
    pub skipped_below_resolution: usize,
}

/// Compares analytic gradients against central finite differences of `f`,
/// coordinate by coordinate, and returns the maximum relative error.
///
/// The relative error denominator is max(|analytic|, |numeric|, 1e-8) so
/// near-zero coordinates compare on an absolute scale. `f` must evaluate
/// the same scalar the analytic gradients differentiate, but is called
/// only for values; it never touches the reverse sweep.
pub fn grad_check<F>(
    f: F,
    params: &[Tensor],
    analytic: &[Tensor],
    eps: f64,
) -> Result<f64, NumError>
where
    F: Fn(&[Tensor]) -> Result<f64, NumError>,
{
    if eps <= 0.0 {
        return Err(NumError::Invalid("grad_check: eps must be positive".into()));
    }
    if params.len() != analytic.len() {
        return Err(NumError::Invalid(format!(
            "grad_check: {} parameters but {} gradient tensors",
            params.len(),
            analytic.len()
        )));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel = 0.0f64;
    for pi in 0..params.len() {
        if params[pi].shape() != analytic[pi].shape() {
            return Err(NumError::ShapeMismatch {
                op: "grad_check",
                lhs: params[pi].shape(),
                rhs: analytic[pi].shape(),
            });
        }
        for i in 0..params[pi].len() {
            let orig = work[pi].data()[i];
            work[pi].data_mut()[i] = orig + eps;
            let plus = f(&work)?;
            work[pi].data_mut()[i] = orig - eps;
            let minus = f(&work)?;
            work[pi].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NumError::NonFinite {
                    op: "grad_check",
                    row: i / params[pi].cols(),
                    col: i % params[pi].cols(),
                });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

/// Like [`grad_check`], but aware of what central differences can
/// resolve in 64-bit floats.
///
/// The quotient (f(x+eps) - f(x-eps)) / 2eps carries cancellation noise
/// of a few ulps of |f| divided by 2eps, so a true gradient smaller than
/// noise/tolerance cannot be compared at `tolerance` no matter how exact
/// the adjoint is. Coordinates where both the analytic and the numeric
/// gradient fall below that floor are counted as sub-resolution instead
/// of polluting the maximum; a wrong adjoint of any testable magnitude
/// still lands above the floor and is compared normally.
pub fn grad_check_report<F>(
    f: F,
    params: &[Tensor],
    analytic: &[Tensor],
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NumError>
where
    F: Fn(&[Tensor]) -> Result<f64, NumError>,
{
    if eps <= 0.0 || tolerance <= 0.0 {
        return Err(NumError::Invalid(
            "grad_check_report: eps and tolerance must be positive".into(),
        ));
    }
    let f0 = f(params)?;
    if !f0.is_finite() {
        return Err(NumError::NonFinite {
            op: "grad_check_report",
            row: 0,
            col: 0,
        });
    }
    let noise = 8.0 * f0.abs().max(1.0) * f64::EPSILON / (2.0 * eps);
    let floor = noise / tolerance;

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_below_resolution: 0,
    };
    for pi in 0..params.len() {
        if params[pi].shape() != analytic[pi].shape() {
            return Err(NumError::ShapeMismatch {
                op: "grad_check_report",
                lhs: params[pi].shape(),
                rhs: analytic[pi].shape(),
            });
        }
        for i in 0..params[pi].len() {
            let orig = work[pi].data()[i];
            work[pi].data_mut()[i] = orig + eps;
            let plus = f(&work)?;
            work[pi].data_mut()[i] = orig - eps;
            let minus = f(&work)?;
            work[pi].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NumError::NonFinite {
                    op: "grad_check_report",
                    row: i / params[pi].cols(),
                    col: i % params[pi].cols(),
                });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi].data()[i];
            if a.abs() < floor && numeric.abs() < floor {
                report.skipped_below_resolution += 1;
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::tape::Tape;

    fn square_loss(params: &[Tensor]) -> Result<f64, NumError> {
        let mut tape = Tape::new();
        let x = tape.leaf(params[0].clone());
        let sq = tape.mul_elem(x, x)?;
        let loss = tape.sum_all(sq)?;
        Ok(tape.value(loss).item())
    }

    #[test]
    fn square_function_checks_out() {
        let params = vec![Tensor::scalar(3.0)];
        let analytic = vec![Tensor::scalar(6.0)];
        let err = grad_check(square_loss, &params, &analytic, 1e-5).unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let f = |_: &[Tensor]| Ok(42.0);
        let params = vec![Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap()];
        let analytic = vec![Tensor::zeros(1, 2)];
        let err = grad_check(f, &params, &analytic, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn detects_a_wrong_adjoint() {
        let params = vec![Tensor::scalar(3.0)];
        let wrong = vec![Tensor::scalar(5.5)];
        let err = grad_check(square_loss, &params, &wrong, 1e-5).unwrap();
        assert!(err > 1e-2, "detector missed a wrong gradient: {err}");
    }

    #[test]
    fn report_flags_sub_resolution_coordinates() {
        // One coordinate with a healthy gradient, one disconnected.
        let f = |p: &[Tensor]| -> Result<f64, NumError> {
            Ok(p[0].get(0, 0) * p[0].get(0, 0))
        };
        let params = vec![Tensor::from_rows(&[vec![3.0, 100.0]]).unwrap()];
        let analytic = vec![Tensor::from_rows(&[vec![6.0, 0.0]]).unwrap()];
        let report = grad_check_report(f, &params, &analytic, 1e-5, 1e-4).unwrap();
        assert_eq!(report.checked, 1);
        assert_eq!(report.skipped_below_resolution, 1);
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn report_still_detects_wrong_adjoints() {
        let params = vec![Tensor::scalar(3.0)];
        let wrong = vec![Tensor::scalar(5.5)];
        let report = grad_check_report(square_loss, &params, &wrong, 1e-5, 1e-4).unwrap();
        assert_eq!(report.checked, 1);
        assert!(report.max_rel_error > 1e-2);
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let f = |p: &[Tensor]| Ok(1.0 / (p[0].item() - 3.0) * f64::INFINITY * 0.0 + f64::NAN);
        let params = vec![Tensor::scalar(3.0)];
        let analytic = vec![Tensor::scalar(0.0)];
        assert!(grad_check(f, &params, &analytic, 1e-5).is_err());
    }
}
