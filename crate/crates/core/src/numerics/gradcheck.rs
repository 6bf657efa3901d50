//! Central finite-difference gradient checks.

use super::params::{GradBuffer, ParamId, ParamStore};
use super::rng::SplitRng;
use crate::error::TensorError;

/// Denominator floor for relative errors, so that two gradients that are
/// both essentially zero do not register as a large relative error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients with central differences at `per_param`
/// random coordinates of every parameter. `loss` must be a deterministic
/// function of the parameters.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    per_param: usize,
    h: f64,
    seed: u64,
    mut loss: F,
) -> Result<Vec<CoordCheck>, TensorError>
where
    F: FnMut(&ParamStore) -> Result<(f64, Option<GradBuffer>), TensorError>,
{
    let (_, grads) = loss(store)?;
    let grads = grads.expect("first evaluation must return gradients");
    let mut rng = SplitRng::new(seed);
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    let mut out = Vec::new();
    for id in ids {
        let n = store.tensor(id).len();
        let picks: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            (0..per_param).map(|_| rng.below(n)).collect()
        };
        for idx in picks {
            let orig = store.tensor(id).data()[idx];
            store.tensor_mut(id).data_mut()[idx] = orig + h;
            let (plus, _) = loss(store)?;
            store.tensor_mut(id).data_mut()[idx] = orig - h;
            let (minus, _) = loss(store)?;
            store.tensor_mut(id).data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.get(id).data()[idx];
            out.push(CoordCheck {
                param: store.name(id).to_string(),
                index: idx,
                analytic,
                numeric,
                rel_error: rel_error(analytic, numeric),
            });
        }
    }
    Ok(out)
}
