use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::Result;

/// Compare analytic gradients against central finite differences.
///
/// `build` must deterministically record a scalar loss for the current store
/// contents (dropout disabled, any rng fixed by the caller). Every parameter
/// coordinate is checked, or a seeded random subsample of `max_coords` per
/// parameter when that is smaller. Returns the maximum relative error
/// `|a - n| / max(|a| + |n|, 1e-8)` over all checked coordinates.
pub fn grad_check<F>(
    store: &mut ParamStore,
    build: F,
    eps: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = store
        .ids()
        .map(|id| {
            tape.param_grad(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()))
        })
        .collect();
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.value(id).numel();
        let coords: Vec<usize> = match max_coords {
            Some(cap) if n > cap => (0..cap).map(|_| rng.random_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = store.value(id).data()[c];
            store.value_mut(id).data_mut()[c] = orig + eps;
            let plus = eval_scalar(&build, store)?;
            store.value_mut(id).data_mut()[c] = orig - eps;
            let minus = eval_scalar(&build, store)?;
            store.value_mut(id).data_mut()[c] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[id.index()].data()[c];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

fn eval_scalar<F>(build: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = build(&mut tape, store)?;
    Ok(tape.value(out).item())
}
