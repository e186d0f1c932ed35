use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat coordinate (across all checked tensors) of the worst error.
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Checks the gradient of a scalar function of one tensor.
pub fn grad_check<T, F>(f: F, point: &Tensor<T>, step: T) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(point), step)
}

/// Checks the gradient of a scalar function of several tensors.
///
/// The error at each coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`, with the
/// numeric derivative from a central difference of width `2 * step`.
pub fn grad_check_many<T, F>(f: F, points: &[Tensor<T>], step: T) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    if !(step > T::zero()) {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    let mut graph = Graph::new();
    let vars: Vec<Var> = points.iter().map(|p| graph.param(p.clone())).collect();
    let out = f(&mut graph, &vars)?;
    graph.backward(out)?;
    let analytic: Vec<T> = vars
        .iter()
        .flat_map(|&v| graph.grad(v).expect("populated by backward").to_vec())
        .collect();

    let eval = |pts: &[Tensor<T>]| -> Result<T> {
        let mut g = Graph::new();
        let vs: Vec<Var> = pts.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &vs)?;
        Ok(g.value(out).item())
    };

    let mut work = points.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        coordinates: analytic.len(),
    };
    let mut flat = 0;
    for t in 0..work.len() {
        for i in 0..work[t].numel() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + step;
            let plus = eval(&work).map_err(|_| Error::NonFiniteCoordinate { index: flat })?;
            work[t].data_mut()[i] = orig - step;
            let minus = eval(&work).map_err(|_| Error::NonFiniteCoordinate { index: flat })?;
            work[t].data_mut()[i] = orig;
            let numeric = (plus - minus) / (step + step);
            if !numeric.is_finite() {
                return Err(Error::NonFiniteCoordinate { index: flat });
            }
            let a = analytic[flat].f64();
            let n = numeric.f64();
            let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_index = flat;
            }
            flat += 1;
        }
    }
    Ok(report)
}
