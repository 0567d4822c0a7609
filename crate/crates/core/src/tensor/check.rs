use crate::error::{Error, Result};

use super::{Graph, ParamStore, Tensor, Var};

/// Compares reverse-mode gradients with central differences over every
/// non-frozen scalar and returns the worst relative error
/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor sits above the round-off of a
/// central difference on O(1) losses. Returns 0 when nothing is trainable.
pub fn grad_check<F>(loss_fn: F, params: &ParamStore, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidArgument(format!("grad_check eps {eps} outside (0, 1e-2]")));
    }
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let root = loss_fn(&mut g, p)?;
        Ok(g.item(root))
    };

    let first = eval(params)?;
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut g = Graph::new();
    let root = loss_fn(&mut g, params)?;
    let grads = g.backward(root)?;

    let mut worst = 0.0f64;
    let mut probe = params.clone();
    let names: Vec<String> = params
        .names()
        .filter(|n| !params.is_frozen(n))
        .map(str::to_string)
        .collect();
    for name in names {
        let n = params.get(&name)?.numel();
        let analytic = grads.param(&name);
        for i in 0..n {
            let orig = params.get(&name)?.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.map_or(0.0, |g| g[i]);
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

/// Cosine of the angle between two tensors viewed as flat vectors.
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    cosine(a.data(), b.data())
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "cosine_similarity",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("cosine_similarity: zero-norm input".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
