//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::tensor::Tensor;

/// Denominator floor for the relative error, so that coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateCheck {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub coordinates: Vec<CoordinateCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Checks `f` at `point`, where `f` builds a scalar from its input leaf.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(point), step, tol, None)
}

/// Checks `f` against several input tensors at once. With `max_per_tensor`
/// set, only that many evenly strided coordinates of each tensor are probed.
pub fn grad_check_many<F>(
    f: F,
    points: &[Tensor],
    step: f64,
    tol: f64,
    max_per_tensor: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0 && step <= 1e-3) {
        return Err(Error::config(format!(
            "finite-difference step must be in (0, 1e-3], got {step}"
        )));
    }
    let eval = |pts: &[Tensor], want_grad: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = pts
            .iter()
            .map(|t| g.leaf(t.shape().to_vec(), t.data().to_vec(), want_grad))
            .collect::<Result<_>>()?;
        let out = f(&mut g, &vars)?;
        let value = g.scalar(out);
        if !want_grad {
            return Ok((value, Vec::new()));
        }
        let grads = g.backward(out)?;
        let gs = vars
            .iter()
            .zip(pts)
            .map(|(&v, t)| grads.get_or_zeros(v, t.numel()))
            .collect();
        Ok((value, gs))
    };

    let (base, analytic) = eval(points, true)?;
    if !base.is_finite() {
        return Err(Error::Numeric {
            coordinate: 0,
            detail: format!("function value {base} at the base point"),
        });
    }

    let mut work: Vec<Tensor> = points.to_vec();
    let mut coordinates = Vec::new();
    let mut flat = 0;
    for (ti, t) in points.iter().enumerate() {
        let n = t.numel();
        let stride = max_per_tensor.map_or(1, |m| n.div_ceil(m.max(1)).max(1));
        for idx in (0..n).step_by(stride) {
            let orig = t.data()[idx];
            work[ti].data_mut()[idx] = orig + step;
            let (plus, _) = eval(&work, false)?;
            work[ti].data_mut()[idx] = orig - step;
            let (minus, _) = eval(&work, false)?;
            work[ti].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[ti][idx];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::Numeric {
                    coordinate: flat + idx,
                    detail: format!("analytic {a}, finite difference {numeric}"),
                });
            }
            coordinates.push(CoordinateCheck {
                tensor: ti,
                index: idx,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            });
        }
        flat += n;
    }
    let max_rel_error = coordinates.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        coordinates,
        max_rel_error,
        tol,
        passed: max_rel_error < tol,
    })
}
