//! Central-difference verification of reverse-mode gradients.

use super::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter, element)` where the maximum occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = params
        .iter()
        .map(|p| g.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::shape(
            "finite_diff_check",
            format!("objective has shape {:?}", v.shape()),
        ));
    }
    Ok(v.data()[0])
}

/// Compares reverse-mode gradients of the scalar objective `f` against
/// central differences `(f(θ+h) - f(θ-h)) / 2h` for every element of every
/// parameter. `f` builds its computation on the given graph from the
/// supplied parameter leaves and must be deterministic.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step {h} must be positive")));
    }
    let mut g = Graph::new();
    let vars = params
        .iter()
        .map(|p| g.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let f0 = g.value(out).data()[0];
    let again = evaluate(&f, params)?;
    if f0.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministic(f0, again));
    }
    let grads = g.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work = params.to_vec();
    for (pi, v) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(params[pi].shape());
        let analytic = grads.wrt(*v).unwrap_or(&zeros).data().to_vec();
        for (ei, &a) in analytic.iter().enumerate() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let fp = evaluate(&f, &work)?;
            work[pi].data_mut()[ei] = orig - h;
            let fm = evaluate(&f, &work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = err;
                report.worst = (pi, ei);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
