//! Central-difference verification of analytic gradients.

use std::collections::BTreeMap;

use super::Matrix2;
use crate::error::AscError;
use crate::Result;

/// Named parameter collection used across the crate. `BTreeMap` keeps
/// iteration order deterministic.
pub type ParamMap = BTreeMap<String, Matrix2>;

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error seen over every parameter entry.
    pub max_rel_err: f64,
    /// Parameter name, flat index, analytic and numeric values at the
    /// worst entry; `None` when there were no entries.
    pub worst: Option<(String, usize, f64, f64)>,
    /// Total number of entries compared.
    pub checked: usize,
}

/// Compares analytic gradients against central finite differences.
///
/// `loss_fn` maps parameters to the loss value and its analytic gradients;
/// it must be deterministic, which is verified by evaluating twice and
/// requiring bitwise-equal losses. Each parameter entry is then perturbed
/// by `+/-eps` and the relative error computed as
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(mut loss_fn: F, params: &ParamMap, eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamMap) -> Result<(f64, ParamMap)>,
{
    if eps <= 0.0 {
        return Err(AscError::Param(format!("grad_check eps {eps} must be > 0")));
    }
    let (loss_a, grads) = loss_fn(params)?;
    let (loss_b, _) = loss_fn(params)?;
    if loss_a.to_bits() != loss_b.to_bits() {
        return Err(AscError::Determinism(loss_a, loss_b));
    }

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let mut work = params.clone();
    for (name, base) in params {
        let grad = grads.get(name).ok_or_else(|| {
            AscError::Param(format!("loss_fn returned no gradient for {name}"))
        })?;
        if grad.shape() != base.shape() {
            return Err(AscError::Shape {
                op: "grad_check",
                lhs: base.shape(),
                rhs: grad.shape(),
            });
        }
        for idx in 0..base.len() {
            let original = base.data()[idx];
            let probe = |value: f64, work: &mut ParamMap, loss_fn: &mut F| -> Result<f64> {
                work.get_mut(name).unwrap().data_mut()[idx] = value;
                let (loss, _) = loss_fn(work)?;
                Ok(loss)
            };
            let plus = probe(original + eps, &mut work, &mut loss_fn)?;
            let minus = probe(original - eps, &mut work, &mut loss_fn)?;
            work.get_mut(name).unwrap().data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grad.data()[idx];
            let rel = relative_error(analytic, numeric);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), idx, analytic, numeric));
            }
        }
    }
    Ok(report)
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_params() -> ParamMap {
        let mut p = ParamMap::new();
        p.insert(
            "w".into(),
            Matrix2::from_vec(1, 3, vec![0.5, -1.25, 2.0]).unwrap(),
        );
        p
    }

    // loss = sum(w_i^2), gradient 2 w_i.
    fn quadratic(params: &ParamMap) -> crate::Result<(f64, ParamMap)> {
        let w = &params["w"];
        let loss: f64 = w.data().iter().map(|v| v * v).sum();
        let mut grads = ParamMap::new();
        grads.insert("w".into(), w.scale(2.0));
        Ok((loss, grads))
    }

    #[test]
    fn correct_gradient_passes() {
        let params = quadratic_params();
        let report = grad_check(quadratic, &params, 1e-5).unwrap();
        assert_eq!(report.checked, 3);
        assert!(
            report.max_rel_err < 1e-6,
            "max_rel_err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let params = quadratic_params();
        let report = grad_check(
            |p| {
                let (loss, mut grads) = quadratic(p)?;
                let g = grads.get_mut("w").unwrap();
                let v = g.get(0, 1) + 0.5;
                g.set(0, 1, v);
                Ok((loss, grads))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err > 1e-2);
        let (name, idx, _, _) = report.worst.unwrap();
        assert_eq!(name, "w");
        assert_eq!(idx, 1);
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        let params = quadratic_params();
        let mut calls = 0u64;
        let err = grad_check(
            |p| {
                calls += 1;
                let (loss, grads) = quadratic(p)?;
                Ok((loss + calls as f64 * 1e-3, grads))
            },
            &params,
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, AscError::Determinism(_, _)));
    }

    #[test]
    fn rejects_bad_eps() {
        let params = quadratic_params();
        assert!(grad_check(quadratic, &params, 0.0).is_err());
    }
}
