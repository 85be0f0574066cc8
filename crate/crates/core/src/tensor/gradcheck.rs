use super::{Tape, Tensor};
use crate::params::Params;
use crate::{Error, Result};

/// Denominator floor for the relative error, so that gradients that are
/// zero up to roundoff are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_path: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Number of scalars compared.
    pub checked: usize,
}

/// Compares tape gradients of `f` with central differences
/// `(f(θ+eps) − f(θ−eps)) / 2eps` for every scalar in `params`.
///
/// The relative error of one scalar is `|a − n| / max(|a|, |n|, 1e-6)`.
/// `f` must be deterministic (dropout off).
pub fn finite_diff_check<F>(f: F, params: &Params<f64>, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &Params<f64>) -> Result<Tensor<f64>>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("finite-difference eps must be positive"));
    }
    let tape = Tape::new();
    let tracked = params.track(&tape);
    let loss = f(&tape, &tracked)?;
    check_finite(loss.item(), "loss at the base point")?;
    let grads = tape.backward(&loss)?;

    let eval = |path: &str, index: usize, delta: f64| -> Result<f64> {
        let base = params.require(path)?;
        let mut data = base.to_vec();
        data[index] += delta;
        let mut probe = params.clone();
        probe.insert(path, Tensor::from_vec(base.shape().to_vec(), data)?);
        let v = f(&Tape::new(), &probe)?.item();
        check_finite(v, &format!("{path}[{index}]"))?;
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_path: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (path, t) in tracked.iter() {
        let g = grads
            .wrt(t)
            .ok_or_else(|| Error::Tape(format!("no gradient for {path}")))?;
        for (i, &analytic) in g.data().iter().enumerate() {
            let numeric = (eval(path, i, eps)? - eval(path, i, -eps)?) / (2.0 * eps);
            let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            let rel = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst_path.is_empty() {
                report.max_rel_error = rel;
                report.worst_path = path.to_owned();
                report.worst_index = i;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("f evaluated to {v} at {what}")))
    }
}
