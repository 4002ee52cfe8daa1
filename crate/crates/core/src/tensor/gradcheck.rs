use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, NodeId, Tensor, TensorError};

const STEP: f64 = 1e-5;
const FULL_CHECK_LIMIT: usize = 128;
const SUBSET: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

/// Compares the reverse-mode gradient of `f` at `x` with central differences.
///
/// `f` receives a fresh graph and the leaf holding `x` and must return a
/// scalar node. Tensors larger than 128 elements are checked on 64 random
/// coordinates (seeded by `seed`). Relative error is
/// `|a - n| / max(1, |a|, |n|)`.
pub fn grad_check<F>(f: F, x: &Tensor, tol: f64, seed: u64) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId, TensorError>,
{
    let eval = |t: Tensor| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let leaf = g.leaf(t)?;
        let out = f(&mut g, leaf)?;
        let v = g.value(out)?;
        if v.len() != 1 {
            return Err(TensorError::NotScalar(v.shape().to_vec()));
        }
        Ok(v.data()[0])
    };

    let mut g = Graph::new();
    let leaf = g.leaf(x.clone())?;
    let out = f(&mut g, leaf)?;
    let grads = g.backward(out)?;
    let analytic = grads.get(leaf).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let coords: Vec<usize> = if x.len() <= FULL_CHECK_LIMIT {
        (0..x.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, x.len(), SUBSET).into_vec()
    };

    let mut worst: f64 = 0.0;
    for &i in &coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= STEP;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * STEP);
        let a = analytic.data()[i];
        if !numeric.is_finite() || !a.is_finite() {
            return Err(TensorError::NonFinite { op: "grad_check" });
        }
        let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(rel);
    }
    Ok(GradCheck { max_rel_error: worst, checked: coords.len(), passed: worst < tol })
}
