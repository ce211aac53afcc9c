//! Relation-guided modality knowledge experts.
//!
//! Each modality owns `K` expert networks producing `K` views of an entity. A
//! gate head scores every view; in training a learned-scale Gaussian perturbs
//! the scores; a relation-specific temperature `sigmoid(eps_r)` sharpens or
//! flattens the softmax over experts; the entity embedding under relation `r`
//! is the gate-weighted sum of its views.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::numeric::mlp::{Mlp, MlpCache, ScalarHead};
use crate::numeric::ops::{sigmoid, softmax_in_place, softplus};
use crate::numeric::params::{Grads, Init, ParamId, ParamStore, Values};
use crate::numeric::rng::Rng;

/// Noise scales at or below this value switch the perturbation off.
pub const NOISE_STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ModalityExperts {
    pub modality: Modality,
    pub experts: Vec<Mlp>,
    pub gate: ScalarHead,
    pub noise: ScalarHead,
    pub input_dim: usize,
    pub dim: usize,
}

/// The `K` views of one entity in one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub entity: usize,
    pub modality: Modality,
    pub views: Vec<Vec<f64>>,
}

/// Standard-normal draws, one per (entity row, expert).
pub type NoiseDraws = Array2<f64>;

/// Expert outputs and gate logits for a batch of entity rows.
#[derive(Debug, Clone)]
pub struct ExpertForward {
    pub experts: Vec<MlpCache>,
    /// `U_m(V_i)` per row and expert.
    pub clean_logits: Array2<f64>,
    /// `U'_m(V_i)`, the pre-softplus noise scale, when noise is on.
    pub noise_pre: Option<Array2<f64>>,
    pub noise_z: Option<Array2<f64>>,
    /// Logits after noise.
    pub logits: Array2<f64>,
}

impl ExpertForward {
    pub fn view(&self, expert: usize) -> &Array2<f64> {
        &self.experts[expert].output
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn rows(&self) -> usize {
        self.logits.nrows()
    }
}

/// Effective noise scale: `softplus(s)` above the floor, otherwise zero.
pub fn noise_std(pre: f64) -> f64 {
    let s = softplus(pre);
    if s > NOISE_STD_FLOOR {
        s
    } else {
        0.0
    }
}

impl ModalityExperts {
    pub fn new(
        store: &mut ParamStore,
        modality: Modality,
        input_dim: usize,
        hidden: usize,
        dim: usize,
        num_experts: usize,
        rng: &mut Rng,
    ) -> Self {
        assert!(num_experts >= 1, "at least one expert per modality");
        let prefix = format!("remoke.{}", modality.name());
        let experts = (0..num_experts)
            .map(|i| Mlp::new(store, &format!("{prefix}.expert{i}"), input_dim, hidden, dim, rng))
            .collect();
        let gate = ScalarHead::new(store, &format!("{prefix}.gate"), dim, rng);
        let noise = ScalarHead::new(store, &format!("{prefix}.noise"), dim, rng);
        Self {
            modality,
            experts,
            gate,
            noise,
            input_dim,
            dim,
        }
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    /// Runs every expert over the rows of `input` and scores the views.
    pub fn forward(&self, params: &Values, input: &Array2<f64>, noise: Option<&NoiseDraws>) -> ExpertForward {
        let n = input.nrows();
        let k = self.num_experts();
        let experts: Vec<MlpCache> = self.experts.iter().map(|e| e.forward(params, input.clone())).collect();
        let mut clean_logits = Array2::zeros((n, k));
        for (i, cache) in experts.iter().enumerate() {
            clean_logits
                .column_mut(i)
                .assign(&self.gate.forward(params, &cache.output));
        }
        let mut logits = clean_logits.clone();
        let (noise_pre, noise_z) = match noise {
            Some(z) => {
                assert_eq!(z.dim(), (n, k), "noise draws must cover every row and expert");
                let mut pre = Array2::zeros((n, k));
                for (i, cache) in experts.iter().enumerate() {
                    pre.column_mut(i).assign(&self.noise.forward(params, &cache.output));
                }
                ndarray::Zip::from(&mut logits)
                    .and(&pre)
                    .and(z)
                    .for_each(|l, &s, &z| *l += noise_std(s) * z);
                (Some(pre), Some(z.clone()))
            }
            None => (None, None),
        };
        ExpertForward {
            experts,
            clean_logits,
            noise_pre,
            noise_z,
            logits,
        }
    }

    /// Backpropagates view and logit gradients into expert and gate parameters;
    /// returns the gradient with respect to the raw input rows.
    pub fn backward(
        &self,
        params: &Values,
        fwd: &ExpertForward,
        mut d_views: Vec<Array2<f64>>,
        d_logits: &Array2<f64>,
        grads: &mut Grads,
    ) -> Array2<f64> {
        let n = fwd.rows();
        let mut d_input = Array2::zeros((n, self.input_dim));
        for (i, expert) in self.experts.iter().enumerate() {
            let view = fwd.view(i);
            let d_clean: Array1<f64> = d_logits.column(i).to_owned();
            self.gate.backward(params, view, &d_clean, grads, &mut d_views[i]);
            if let (Some(pre), Some(z)) = (&fwd.noise_pre, &fwd.noise_z) {
                let d_pre: Array1<f64> = (0..n)
                    .map(|row| {
                        let s = pre[[row, i]];
                        if noise_std(s) > 0.0 {
                            d_logits[[row, i]] * z[[row, i]] * sigmoid(s)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.noise.backward(params, view, &d_pre, grads, &mut d_views[i]);
            }
            d_input += &expert.backward(params, &fwd.experts[i], &d_views[i], Some(grads));
        }
        d_input
    }
}

/// Learnable gate temperatures `sigmoid(eps)`, one row per relation (or a single
/// shared row) and one column per modality (or a single shared column).
#[derive(Debug, Clone)]
pub struct RelationTemps {
    pub eps: ParamId,
    pub rows: usize,
    pub cols: usize,
}

impl RelationTemps {
    pub fn new(store: &mut ParamStore, rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let eps = store.add("remoke.temperature", &[rows, cols], Init::Zeros, rng);
        Self { eps, rows, cols }
    }

    /// Parameter index used for `relation` and modality slot `slot`.
    pub fn index(&self, relation: usize, slot: usize) -> usize {
        let row = if self.rows == 1 { 0 } else { relation };
        let col = if self.cols == 1 { 0 } else { slot };
        row * self.cols + col
    }

    pub fn temperature(&self, params: &Values, relation: usize, slot: usize) -> f64 {
        sigmoid(params.get(self.eps)[self.index(relation, slot)] as f64)
    }
}

/// Row-wise tempered softmax of gate logits.
pub fn gate_distribution(logits: &Array2<f64>, temperature: f64) -> Array2<f64> {
    let mut w = logits.clone();
    for mut row in w.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("standard layout"), temperature);
    }
    w
}

/// `sum_i w_i V_i` per row.
pub fn fuse_views(views: &[&Array2<f64>], weights: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(views[0].raw_dim());
    for (i, v) in views.iter().enumerate() {
        let w = weights.column(i).insert_axis(Axis(1));
        out += &(&w * *v);
    }
    out
}

/// Gradients of the gated fusion.
pub struct GateFuseGrads {
    pub d_views: Vec<Array2<f64>>,
    pub d_logits: Array2<f64>,
    pub d_temperature: f64,
}

/// Backward of `fuse_views(views, gate_distribution(logits, tau))`.
pub fn gate_fuse_backward(
    views: &[&Array2<f64>],
    logits: &Array2<f64>,
    weights: &Array2<f64>,
    temperature: f64,
    d_fused: &Array2<f64>,
) -> GateFuseGrads {
    let k = views.len();
    let n = d_fused.nrows();
    let d_views = (0..k)
        .map(|i| &weights.column(i).insert_axis(Axis(1)) * d_fused)
        .collect();
    let mut d_w = Array2::zeros((n, k));
    for (i, v) in views.iter().enumerate() {
        d_w.column_mut(i).assign(&(d_fused * *v).sum_axis(Axis(1)));
    }
    let mut d_logits = Array2::zeros((n, k));
    let mut d_temperature = 0.0;
    for row in 0..n {
        let dot: f64 = (0..k).map(|i| weights[[row, i]] * d_w[[row, i]]).sum();
        for i in 0..k {
            let dz = weights[[row, i]] * (d_w[[row, i]] - dot);
            d_logits[[row, i]] = dz / temperature;
            d_temperature -= dz * logits[[row, i]] / (temperature * temperature);
        }
    }
    GateFuseGrads {
        d_views,
        d_logits,
        d_temperature,
    }
}

fn row_matrix(x: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row")
}

/// The `K` expert views of one raw feature vector.
pub fn expert_views(experts: &ModalityExperts, params: &Values, entity: usize, raw: &[f64]) -> Result<ViewSet> {
    if raw.len() != experts.input_dim {
        return Err(Error::Shape(format!(
            "{} experts expect {} inputs, got {}",
            experts.modality,
            experts.input_dim,
            raw.len()
        )));
    }
    let fwd = experts.forward(params, &row_matrix(raw), None);
    Ok(ViewSet {
        entity,
        modality: experts.modality,
        views: (0..experts.num_experts())
            .map(|i| fwd.view(i).row(0).to_vec())
            .collect(),
    })
}

/// Expert weights of one entity under `relation`. Train mode draws one Gaussian
/// perturbation per expert from `rng`; eval mode never touches `rng`.
#[allow(clippy::too_many_arguments)]
pub fn gate_weights(
    experts: &ModalityExperts,
    params: &Values,
    views: &ViewSet,
    temps: &RelationTemps,
    relation: usize,
    slot: usize,
    train_mode: bool,
    rng: &mut Rng,
) -> Vec<f64> {
    let k = views.views.len();
    let mut logits: Vec<f64> = views
        .views
        .iter()
        .map(|v| experts.gate.forward(params, &row_matrix(v))[0])
        .collect();
    if train_mode {
        for (l, v) in logits.iter_mut().zip(&views.views) {
            let s = experts.noise.forward(params, &row_matrix(v))[0];
            *l += noise_std(s) * rng.normal();
        }
    }
    debug_assert_eq!(logits.len(), k);
    softmax_in_place(&mut logits, temps.temperature(params, relation, slot));
    logits
}

/// `sum_i weights_i * views_i`.
pub fn fuse_intra_modality(views: &ViewSet, weights: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != views.views.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} views",
            weights.len(),
            views.views.len()
        )));
    }
    let dim = views.views.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for (w, v) in weights.iter().zip(&views.views) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(input: usize, dim: usize, k: usize, seed: u64) -> (ParamStore, ModalityExperts, RelationTemps) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let experts = ModalityExperts::new(&mut store, Modality::Image, input, dim, dim, k, &mut rng);
        let temps = RelationTemps::new(&mut store, 3, 1, &mut rng);
        (store, experts, temps)
    }

    #[test]
    fn zero_experts_give_zero_views() {
        let (mut store, experts, _) = setup(3, 4, 3, 1);
        let ids: Vec<_> = store.values().ids().collect();
        for id in ids {
            store.values_mut().get_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        let vs = expert_views(&experts, store.values(), 0, &[1.0, 2.0, 3.0]).unwrap();
        assert!(vs.views.iter().all(|v| v.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn identity_expert_passes_input_through() {
        let (mut store, experts, _) = setup(2, 2, 1, 1);
        let e = &experts.experts[0];
        store.values_mut().get_mut(e.w1).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        store.values_mut().get_mut(e.w2).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let vs = expert_views(&experts, store.values(), 0, &[0.3, 1.7]).unwrap();
        assert_eq!(vs.views[0], vec![0.3, 1.7]);
    }

    #[test]
    fn random_experts_give_distinct_views() {
        let (store, experts, _) = setup(5, 6, 3, 42);
        let mut rng = Rng::new(7);
        let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let vs = expert_views(&experts, store.values(), 0, &x).unwrap();
        // Direct forward-pass oracle for each expert.
        for (i, e) in experts.experts.iter().enumerate() {
            assert_eq!(vs.views[i], e.apply(store.values(), &x).unwrap());
        }
        assert_ne!(vs.views[0], vs.views[1]);
        assert_ne!(vs.views[1], vs.views[2]);
        assert_ne!(vs.views[0], vs.views[2]);
        assert!(matches!(
            expert_views(&experts, store.values(), 0, &x[..3]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn gate_examples() {
        let (mut store, experts, temps) = setup(2, 2, 2, 3);
        store.values_mut().get_mut(experts.gate.w).copy_from_slice(&[1.0, 0.0]);
        let mut rng = Rng::new(0);
        let equal = ViewSet {
            entity: 0,
            modality: Modality::Image,
            views: vec![vec![0.4, 1.0], vec![0.4, -3.0]],
        };
        let w = gate_weights(&experts, store.values(), &equal, &temps, 0, 0, false, &mut rng);
        assert!(w.iter().all(|x| (x - 0.5).abs() < 1e-12));

        let ln2 = 2f64.ln();
        let skewed = ViewSet {
            entity: 0,
            modality: Modality::Image,
            views: vec![vec![ln2, 0.0], vec![0.0, 0.0]],
        };
        let w = gate_weights(&experts, store.values(), &skewed, &temps, 1, 0, false, &mut rng);
        assert!((w[0] - 0.8).abs() < 1e-7 && (w[1] - 0.2).abs() < 1e-7, "{w:?}");

        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let w = gate_weights(&experts, store.values(), &skewed, &temps, 2, 0, true, &mut rng);
            assert!(w.iter().all(|x| *x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fusion_examples() {
        let vs = ViewSet {
            entity: 0,
            modality: Modality::Text,
            views: vec![vec![1.0, -2.0], vec![3.0, 4.0]],
        };
        assert_eq!(fuse_intra_modality(&vs, &[0.0, 1.0]).unwrap(), vec![3.0, 4.0]);
        let out = fuse_intra_modality(&vs, &[0.8, 0.2]).unwrap();
        assert!((out[0] - 1.4).abs() < 1e-12 && (out[1] - -0.8).abs() < 1e-12);
        assert!(fuse_intra_modality(&vs, &[1.0]).is_err());
    }

    #[test]
    fn fused_rows_stay_in_coordinate_hull() {
        let mut rng = Rng::new(77);
        for _ in 0..200 {
            let k = 1 + rng.below(4);
            let views: Vec<Vec<f64>> = (0..k).map(|_| (0..5).map(|_| rng.normal()).collect()).collect();
            let raw: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let vs = ViewSet {
                entity: 0,
                modality: Modality::Image,
                views: views.clone(),
            };
            let out = fuse_intra_modality(&vs, &w).unwrap();
            for (c, o) in out.iter().enumerate() {
                let lo = views.iter().map(|v| v[c]).fold(f64::INFINITY, f64::min);
                let hi = views.iter().map(|v| v[c]).fold(f64::NEG_INFINITY, f64::max);
                assert!(*o >= lo - 1e-12 && *o <= hi + 1e-12);
            }
        }
    }
}
