use super::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// `|a - b| / max(1e-12, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1e-12f64.max(a.abs()).max(b.abs())
}

/// Largest per-coordinate relative error between the autodiff gradient of `f`
/// at `x` and the central finite difference with step `eps`.
///
/// `f` receives a fresh graph and the leaf holding `x`, and must return a
/// scalar node. A root that does not depend on `x` has gradient zero.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    assert!(eps > 0.0, "eps must be positive");
    let analytic = {
        let mut g = Graph::new();
        let leaf = g.variable(x.detached());
        let root = f(&mut g, leaf)?;
        if g.value(root).requires_grad() {
            g.backward(root)?;
        }
        g.grad(leaf).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()])
    };

    let eval = |data: Vec<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let leaf = g.constant(Tensor::new(x.shape().to_vec(), data)?);
        let root = f(&mut g, leaf)?;
        Ok(g.value(root).item())
    };

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.data().to_vec();
        let mut minus = x.data().to_vec();
        plus[i] += eps;
        minus[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}
