//! Central finite-difference gradient checking.

use super::params::{Grads, ParamStore};

/// Gradients smaller than this in magnitude are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` with `(f(p + h) - f(p - h)) / 2h` for every scalar of
/// every trainable parameter. `f` evaluates the loss with the store as given.
pub fn check_gradients(
    store: &mut ParamStore,
    analytic: &Grads,
    step: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> GradCheck {
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for pi in 0..store.len() {
        if !store.params()[pi].trainable {
            continue;
        }
        for j in 0..store.params()[pi].value.len() {
            let orig = store.params()[pi].value[j];
            store.params_mut()[pi].value[j] = orig + step;
            let plus = f(store);
            store.params_mut()[pi].value[j] = orig - step;
            let minus = f(store);
            store.params_mut()[pi].value[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic.g[pi][j], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = err;
                report.worst = format!(
                    "{}[{j}] analytic {:e} numeric {:e}",
                    store.params()[pi].name,
                    analytic.g[pi][j],
                    numeric
                );
            }
        }
    }
    report
}
