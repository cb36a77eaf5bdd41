use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` over all
    /// checked entries.
    pub rel_error: f64,
    pub entries: usize,
}

/// Compares tape gradients with central differences of `loss` at step `h`.
/// `loss` builds the scalar on a fresh tape from the given store. Every
/// `stride`-th entry of the listed parameters is checked.
pub fn check_gradients(
    store: &ParamStore,
    ids: &[ParamId],
    h: f64,
    stride: usize,
    loss: impl Fn(&ParamStore) -> (Tape, Var),
) -> GradCheck {
    let (tape, l) = loss(store);
    let grads = tape.backward(l);
    let mut work = store.clone();
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    let mut entries = 0;
    let eval = |s: &ParamStore| {
        let (t, v) = loss(s);
        t.scalar(v)
    };
    let mut k = 0usize;
    for &id in ids {
        for i in 0..store.value(id).len() {
            k += 1;
            if (k - 1) % stride.max(1) != 0 {
                continue;
            }
            let analytic = grads.get(id).map_or(0.0, |g| g.as_slice().expect("contiguous")[i]);
            let orig = store.value(id).as_slice().expect("contiguous")[i];
            work.value_mut(id).as_slice_mut().expect("contiguous")[i] = orig + h;
            let up = eval(&work);
            work.value_mut(id).as_slice_mut().expect("contiguous")[i] = orig - h;
            let down = eval(&work);
            work.value_mut(id).as_slice_mut().expect("contiguous")[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            diff += (analytic - numeric).powi(2);
            na += analytic * analytic;
            nn += numeric * numeric;
            entries += 1;
        }
    }
    let scale = na.sqrt().max(nn.sqrt());
    GradCheck { rel_error: if scale > 0.0 { diff.sqrt() / scale } else { 0.0 }, entries }
}
