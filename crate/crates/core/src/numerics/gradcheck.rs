use alloc::vec::Vec;

use super::{Graph, Tensor, Var};

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

fn evaluate<F, E>(f: &F, point: &[Tensor<f64>]) -> Result<f64, E>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, E>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.scalar(out))
}

/// Central-difference estimate of the gradient of `f` at `point`.
pub fn central_difference<F, E>(f: &F, point: &[Tensor<f64>], step: f64) -> Result<Vec<Vec<f64>>, E>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, E>,
{
    let mut probe: Vec<Tensor<f64>> = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for t in 0..point.len() {
        let mut grad = Vec::with_capacity(point[t].len());
        for i in 0..point[t].len() {
            let x0 = point[t].data()[i];
            probe[t].data_mut()[i] = x0 + step;
            let plus = evaluate(f, &probe)?;
            probe[t].data_mut()[i] = x0 - step;
            let minus = evaluate(f, &probe)?;
            probe[t].data_mut()[i] = x0;
            grad.push((plus - minus) / (2.0 * step));
        }
        out.push(grad);
    }
    Ok(out)
}

/// Largest relative error between the reverse-mode gradient of the scalar
/// function `f` and its central-difference estimate, over every entry of
/// every input tensor.
pub fn grad_check<F, E>(f: F, point: &[Tensor<f64>], step: f64) -> Result<f64, E>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, E>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out);
    let numeric = central_difference(&f, point, step)?;
    let mut worst = 0.0f64;
    for (v, num) in vars.iter().zip(&numeric) {
        let zeros = alloc::vec![0.0; num.len()];
        let analytic = grads.get(*v).unwrap_or(&zeros);
        for (&a, &n) in analytic.iter().zip(num) {
            worst = worst.max(relative_error(a, n));
        }
    }
    Ok(worst)
}
