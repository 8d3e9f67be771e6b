//! Central finite-difference verification of tape gradients.

use crate::error::{Result, TdnError};
use crate::tape::{ParamId, ParamStore, Tape, Var};

/// Compare analytic gradients against central finite differences.
///
/// `build` must reconstruct the same scalar loss from the store's current
/// parameter values each time it is called. Every scalar in `ids` is
/// perturbed by `±step` in turn; the return value is the maximum over all
/// entries of `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
///
/// Results are only meaningful away from ReLU kinks (no pre-activation
/// exactly at 0) and for losses whose discrete structure (masks, segment
/// boundaries) does not change within `±step`; callers arrange both.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    step: f64,
    mut build: F,
) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(TdnError::Contract(format!("finite_diff_check step must be > 0, got {step}")));
    }

    store.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<_> = ids.iter().map(|&id| store.grad(id).clone()).collect();
    store.zero_grads();

    let eval = |store: &mut ParamStore, build: &mut F| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store)?;
        let v = tape.value(loss);
        if v.shape() != (1, 1) {
            return Err(TdnError::Contract("finite_diff_check loss must be 1x1".into()));
        }
        Ok(v.get(0, 0))
    };

    let mut max_rel: f64 = 0.0;
    for (k, &id) in ids.iter().enumerate() {
        let len = store.value(id).data().len();
        for i in 0..len {
            let original = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = original + step;
            let plus = eval(store, &mut build)?;
            store.value_mut(id).data_mut()[i] = original - step;
            let minus = eval(store, &mut build)?;
            store.value_mut(id).data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[k].data()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
