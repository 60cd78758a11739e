//! Central-difference verification of analytic gradients.

use super::LossError;

/// Compare an analytic gradient against central differences with step
/// `step` on each coordinate, returning the maximum over coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`.
///
/// `f` returns `None` outside its valid domain; any probe landing there
/// (the point is within `step` of a guard floor or domain edge) is an
/// error rather than a silently wrong comparison.
pub fn grad_check<F>(f: F, analytic: &[f64], point: &[f64], step: f64) -> Result<f64, LossError>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    if analytic.len() != point.len() {
        return Err(LossError::InvalidGradCheck(format!(
            "{} analytic components for {} coordinates",
            analytic.len(),
            point.len()
        )));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(LossError::InvalidGradCheck(format!(
            "step {step} must be positive"
        )));
    }
    if point.is_empty() {
        return Err(LossError::InvalidGradCheck("empty point".into()));
    }

    let mut max_rel = 0.0f64;
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let hi = f(&probe).ok_or(LossError::DomainEdge { coord: i, step })?;
        probe[i] = point[i] - step;
        let lo = f(&probe).ok_or(LossError::DomainEdge { coord: i, step })?;
        probe[i] = point[i];
        let numeric = (hi - lo) / (2.0 * step);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_verifies() {
        let f = |x: &[f64]| Some(x[0] * x[0] + 3.0 * x[1]);
        let point = [2.0, 5.0];
        let analytic = [4.0, 3.0];
        let err = grad_check(f, &analytic, &point, 1e-6).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn wrong_gradient_detected() {
        let f = |x: &[f64]| Some(x[0] * x[0]);
        let err = grad_check(f, &[5.0], &[2.0], 1e-6).unwrap();
        assert!(err > 1e-2);
    }

    #[test]
    fn domain_edge_rejected() {
        let f = |x: &[f64]| if x[0] > 0.0 { Some(x[0].ln()) } else { None };
        let result = grad_check(f, &[2.0e6], &[5e-7], 1e-6);
        assert!(matches!(
            result,
            Err(LossError::DomainEdge { coord: 0, .. })
        ));
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let f = |x: &[f64]| Some(x[0]);
        assert!(matches!(
            grad_check(f, &[1.0, 2.0], &[0.5], 1e-6),
            Err(LossError::InvalidGradCheck(_))
        ));
    }
}
