//! Central-difference verification of analytic gradients.

use crate::numeric::params::{ParamId, ParamStore};
use crate::numeric::rng::Rng;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const GRADIENT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub group: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: Vec<ProbeResult>,
    /// Probes discarded because the loss is not smooth at the step scale.
    pub kinks_skipped: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ProbeResult> {
        self.probes.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares the analytic gradient of `loss_fn` against central differences on
/// `sample_count` randomly chosen scalars.
///
/// `loss_fn(store, with_grad)` must be deterministic in the store's values and,
/// when `with_grad` is set, accumulate its gradient into the store's buffers.
/// Probes pick a group uniformly and then an entry within it, so small groups
/// (biases, temperatures) are covered alongside large tables.
///
/// A probe whose step straddles a ReLU kink has no meaningful central
/// difference. Each probe therefore also takes a difference at `eps / 10`; when
/// the two disagree by more than `KINK_TOLERANCE` the probe is discarded and
/// another drawn. Screening uses only loss values, never the analytic gradient.
pub fn finite_diff_check(
    store: &mut ParamStore,
    mut loss_fn: impl FnMut(&mut ParamStore, bool) -> f64,
    eps: f64,
    sample_count: usize,
    rng: &mut Rng,
) -> GradCheckReport {
    store.zero_grads();
    loss_fn(store, true);
    let analytic = store.grads().clone();
    store.zero_grads();

    let ids: Vec<ParamId> = store
        .values()
        .ids()
        .filter(|id| !store.values().get(*id).is_empty())
        .collect();
    let mut probes = Vec::with_capacity(sample_count);
    let mut kinks_skipped = 0;
    if ids.is_empty() {
        return GradCheckReport {
            max_rel_error: 0.0,
            probes,
            kinks_skipped,
        };
    }
    let max_attempts = 20 * sample_count.max(1);
    let mut attempts = 0;
    while probes.len() < sample_count && attempts < max_attempts {
        attempts += 1;
        let id = ids[rng.below(ids.len())];
        let index = rng.below(store.values().get(id).len());
        let numeric = central_difference(store, &mut loss_fn, id, index, eps);
        let fine = central_difference(store, &mut loss_fn, id, index, eps / 10.0);
        if relative_error(numeric, fine) > KINK_TOLERANCE {
            kinks_skipped += 1;
            continue;
        }
        let a = analytic.get(id)[index];
        probes.push(ProbeResult {
            group: store.values().name(id).to_string(),
            index,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
    }
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    GradCheckReport {
        max_rel_error,
        probes,
        kinks_skipped,
    }
}

/// Disagreement between step sizes above which a probe counts as a kink.
pub const KINK_TOLERANCE: f64 = 1e-4;

fn central_difference(
    store: &mut ParamStore,
    loss_fn: &mut impl FnMut(&mut ParamStore, bool) -> f64,
    id: ParamId,
    index: usize,
    eps: f64,
) -> f64 {
    let original = store.values().get(id)[index];
    let plus = (original as f64 + eps) as f32;
    let minus = (original as f64 - eps) as f32;
    store.values_mut().get_mut(id)[index] = plus;
    let f_plus = loss_fn(store, false);
    store.values_mut().get_mut(id)[index] = minus;
    let f_minus = loss_fn(store, false);
    store.values_mut().get_mut(id)[index] = original;
    // Divide by the step actually taken after rounding to f32.
    (f_plus - f_minus) / (plus as f64 - minus as f64)
}
