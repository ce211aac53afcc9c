//! Expert information disentanglement: Gaussian variational approximators of
//! one expert view given another, the CLUB upper bound on their mutual
//! information, and the approximators' likelihood objective.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::numeric::mlp::{Mlp, MlpCache};
use crate::numeric::ops::LN_2PI;
use crate::numeric::params::{AdamConfig, Grads, ParamStore, Values};
use crate::numeric::rng::Rng;

pub const VARIANCE_FLOOR: f64 = 1e-4;
const VARIANCE_CEIL: f64 = 1e4;

/// Diagonal Gaussian `q(y | x) = N(mu(x), var(x))`.
#[derive(Debug, Clone)]
pub struct QNet {
    pub modality: Modality,
    pub mean: Mlp,
    pub log_var: Mlp,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct QForward {
    mean_cache: MlpCache,
    log_var_cache: MlpCache,
    pub mean: Array2<f64>,
    pub var: Array2<f64>,
}

impl QNet {
    pub fn new(store: &mut ParamStore, modality: Modality, dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let prefix = format!("exid.{}", modality.name());
        Self {
            modality,
            mean: Mlp::new(store, &format!("{prefix}.mean"), dim, hidden, dim, rng),
            log_var: Mlp::new(store, &format!("{prefix}.logvar"), dim, hidden, dim, rng),
            dim,
        }
    }

    pub fn forward(&self, params: &Values, x: &Array2<f64>) -> QForward {
        let mean_cache = self.mean.forward(params, x.clone());
        let log_var_cache = self.log_var.forward(params, x.clone());
        let (lo, hi) = (VARIANCE_FLOOR.ln(), VARIANCE_CEIL.ln());
        let var = log_var_cache.output.mapv(|lv| lv.clamp(lo, hi).exp());
        QForward {
            mean: mean_cache.output.clone(),
            mean_cache,
            log_var_cache,
            var,
        }
    }

    /// Backward from mean/variance gradients. Parameter gradients go to `grads`
    /// when given; the input gradient is returned.
    pub fn backward(
        &self,
        params: &Values,
        fwd: &QForward,
        d_mean: &Array2<f64>,
        d_var: &Array2<f64>,
        mut grads: Option<&mut Grads>,
    ) -> Array2<f64> {
        let (lo, hi) = (VARIANCE_FLOOR.ln(), VARIANCE_CEIL.ln());
        let mut d_log_var = d_var * &fwd.var;
        ndarray::Zip::from(&mut d_log_var)
            .and(&fwd.log_var_cache.output)
            .for_each(|d, &lv| {
                if lv < lo || lv > hi {
                    *d = 0.0;
                }
            });
        let dx = self
            .mean
            .backward(params, &fwd.mean_cache, d_mean, grads.as_deref_mut());
        dx + self.log_var.backward(params, &fwd.log_var_cache, &d_log_var, grads)
    }
}

/// `log q(y | x)` for single vectors.
pub fn q_log_prob(q: &QNet, params: &Values, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != q.dim || y.len() != q.dim {
        return Err(Error::Shape(format!(
            "approximator expects {}-dim vectors, got x[{}], y[{}]",
            q.dim,
            x.len(),
            y.len()
        )));
    }
    let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
    let fwd = q.forward(params, &row);
    Ok(gaussian_log_density(
        fwd.mean.row(0).iter(),
        fwd.var.row(0).iter(),
        y.iter(),
    ))
}

fn gaussian_log_density<'a>(
    mean: impl Iterator<Item = &'a f64>,
    var: impl Iterator<Item = &'a f64>,
    y: impl Iterator<Item = &'a f64>,
) -> f64 {
    -0.5 * mean
        .zip(var)
        .zip(y)
        .map(|((m, v), y)| (y - m) * (y - m) / v + v.ln() + LN_2PI)
        .sum::<f64>()
}

/// Value and gradients of a pair objective.
#[derive(Debug, Clone)]
pub struct PairGrad {
    pub value: f64,
    pub d_x: Array2<f64>,
    pub d_y: Array2<f64>,
}

/// `sum_e [log q(y_e|x_e) - c * sum_{e' != e} log q(y_e'|x_e)]` over the rows,
/// with `c = 1/(n-1)` when `normalized`, else `c = 1`. Gradients are taken with
/// respect to `x` and `y`; the approximator is held fixed.
pub fn club_pair(q: &QNet, params: &Values, x: &Array2<f64>, y: &Array2<f64>, normalized: bool) -> Result<PairGrad> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Contract(format!(
            "CLUB needs at least 2 batch entities, got {n}"
        )));
    }
    let fwd = q.forward(params, x);
    let c = if normalized { 1.0 / (n - 1) as f64 } else { 1.0 };
    let others = (n - 1) as f64;
    let s1 = y.sum_axis(Axis(0));
    let s2 = y.mapv(|v| v * v).sum_axis(Axis(0));
    let inv_var = fwd.var.mapv(|v| 1.0 / v);
    let p = inv_var.sum_axis(Axis(0));
    let r = (&fwd.mean * &inv_var).sum_axis(Axis(0));
    let mut value = 0.0;
    let mut d_mean = Array2::zeros(x.raw_dim());
    let mut d_var = Array2::zeros(x.raw_dim());
    let mut d_y = Array2::zeros(y.raw_dim());
    for e in 0..n {
        for k in 0..q.dim {
            let (m, v, yk) = (fwd.mean[[e, k]], fwd.var[[e, k]], y[[e, k]]);
            let diff = yk - m;
            let rest_s1 = s1[k] - yk;
            let rest_sq = (s2[k] - yk * yk) - 2.0 * m * rest_s1 + others * m * m;
            let pos = -0.5 * (diff * diff / v + v.ln() + LN_2PI);
            let neg = -0.5 * (rest_sq / v + others * (v.ln() + LN_2PI));
            value += pos - c * neg;
            d_mean[[e, k]] = diff / v - c * (rest_s1 - others * m) / v;
            d_var[[e, k]] = 0.5 * diff * diff / (v * v) - 0.5 / v - c * (0.5 * rest_sq / (v * v) - 0.5 * others / v);
            // Positive pair, then y_e as a negative for every other row.
            let negatives = yk * (p[k] - inv_var[[e, k]]) - (r[k] - m * inv_var[[e, k]]);
            d_y[[e, k]] = -diff / v + c * negatives;
        }
    }
    let d_x = q.backward(params, &fwd, &d_mean, &d_var, None);
    Ok(PairGrad { value, d_x, d_y })
}

/// `sum_e log q(y_e | x_e)` with gradients accumulated into `grads` (scaled by
/// `scale`) for the approximator parameters only.
pub fn positive_log_likelihood(
    q: &QNet,
    params: &Values,
    x: &Array2<f64>,
    y: &Array2<f64>,
    scale: f64,
    grads: Option<&mut Grads>,
) -> f64 {
    let fwd = q.forward(params, x);
    let diff = y - &fwd.mean;
    let value: f64 = -0.5
        * ndarray::Zip::from(&diff)
            .and(&fwd.var)
            .fold(0.0, |acc, &d, &v| acc + d * d / v + v.ln() + LN_2PI);
    if let Some(g) = grads {
        let d_mean = (&diff / &fwd.var) * scale;
        let d_var = ndarray::Zip::from(&diff)
            .and(&fwd.var)
            .map_collect(|&d, &v| scale * (0.5 * d * d / (v * v) - 0.5 / v));
        q.backward(params, &fwd, &d_mean, &d_var, Some(g));
    }
    value
}

/// The per-modality approximators with their own parameter store.
#[derive(Debug, Clone)]
pub struct Disentangler {
    pub store: ParamStore,
    pub nets: Vec<QNet>,
    pub normalized: bool,
}

/// Expert views of the batch entities: for each modality, `K` matrices with one
/// row per batch entity.
pub type BatchViews = Vec<(Modality, Vec<Array2<f64>>)>;

impl Disentangler {
    pub fn new(modalities: &[Modality], dim: usize, hidden: usize, normalized: bool, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let nets = modalities
            .iter()
            .map(|&m| QNet::new(&mut store, m, dim, hidden, rng))
            .collect();
        Self {
            store,
            nets,
            normalized,
        }
    }

    pub fn net(&self, modality: Modality) -> Option<&QNet> {
        self.nets.iter().find(|q| q.modality == modality)
    }

    /// CLUB penalty over the batch; returns the value and the gradient for
    /// every view matrix. The approximators' gradient buffers are not touched.
    pub fn club_loss(&self, views: &BatchViews) -> Result<(f64, Vec<Vec<Array2<f64>>>)> {
        let params = self.store.values();
        let mut total = 0.0;
        let mut d_views = Vec::with_capacity(views.len());
        for (m, vs) in views {
            let q = self
                .net(*m)
                .ok_or_else(|| Error::Contract(format!("no approximator for {m}")))?;
            let k = vs.len();
            let mut d: Vec<Array2<f64>> = vs.iter().map(|v| Array2::zeros(v.raw_dim())).collect();
            if k > 1 {
                let scale = 1.0 / (k * k) as f64;
                for i in 0..k {
                    for j in 0..k {
                        if i == j {
                            continue;
                        }
                        let pair = club_pair(q, params, &vs[i], &vs[j], self.normalized)?;
                        total += scale * pair.value;
                        d[i].scaled_add(scale, &pair.d_x);
                        d[j].scaled_add(scale, &pair.d_y);
                    }
                }
            }
            d_views.push(d);
        }
        Ok((total, d_views))
    }

    /// Negative mean log-likelihood of positive view pairs. Gradients, when
    /// requested, go into the approximators' own buffers only.
    pub fn exid_loss(&mut self, views: &BatchViews, want_grad: bool) -> Result<f64> {
        let (values, grads) = self.store.parts_mut();
        exid_objective(&self.nets, values, want_grad.then_some(grads), views)
    }

    /// One optimizer step on the approximators.
    pub fn step(&mut self, views: &BatchViews, adam: &AdamConfig, step: u64) -> Result<f64> {
        self.store.zero_grads();
        let loss = self.exid_loss(views, true)?;
        self.store.adam_step(adam, step)?;
        Ok(loss)
    }
}

/// `-(1/(K(K-1)|B|)) sum_m sum_e sum_{i!=j} log q(V_j|V_i)`, with gradients for
/// the approximator parameters in `values`.
pub fn exid_objective(
    nets: &[QNet],
    values: &Values,
    mut grads: Option<&mut Grads>,
    views: &BatchViews,
) -> Result<f64> {
    let mut total = 0.0;
    for (m, vs) in views {
        let q = nets
            .iter()
            .find(|q| q.modality == *m)
            .ok_or_else(|| Error::Contract(format!("no approximator for {m}")))?;
        let k = vs.len();
        if k < 2 {
            continue;
        }
        let rows = vs[0].nrows();
        if rows == 0 {
            return Err(Error::Contract("ExID loss needs at least one batch entity".into()));
        }
        let scale = -1.0 / (k * (k - 1) * rows) as f64;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    total += scale * positive_log_likelihood(q, values, &vs[i], &vs[j], scale, grads.as_deref_mut());
                }
            }
        }
    }
    Ok(total)
}

/// Sampled CLUB estimate `mean_e [log q(y_e|x_e) - mean_{e'!=e} log q(y_e'|x_e)]`.
pub fn club_estimate(q: &QNet, params: &Values, x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    Ok(club_pair(q, params, x, y, true)?.value / x.nrows() as f64)
}

/// Fits `q(y | x)` by maximum likelihood with minibatch Adam.
#[allow(clippy::too_many_arguments)]
pub fn fit_conditional(
    q: &QNet,
    store: &mut ParamStore,
    x: &Array2<f64>,
    y: &Array2<f64>,
    epochs: usize,
    batch_size: usize,
    adam: &AdamConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let n = x.nrows();
    let mut step = 0;
    let mut last = f64::NAN;
    for _ in 0..epochs {
        let order = rng.permutation(n);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch_size.max(1)) {
            let bx = x.select(Axis(0), chunk);
            let by = y.select(Axis(0), chunk);
            let scale = -1.0 / chunk.len() as f64;
            store.zero_grads();
            let (values, grads) = store.parts_mut();
            epoch_loss += -positive_log_likelihood(q, values, &bx, &by, scale, Some(grads));
            step += 1;
            store.adam_step(adam, step)?;
        }
        last = epoch_loss / n as f64;
    }
    Ok(last)
}

/// Mutual information of a bivariate unit Gaussian with correlation `rho`.
pub fn gaussian_mi_oracle(rho: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Contract(format!("correlation must lie in (-1, 1), got {rho}")));
    }
    Ok(-0.5 * (1.0 - rho * rho).ln())
}

/// Samples `n` pairs of a bivariate unit Gaussian with correlation `rho`.
pub fn bivariate_gaussian(n: usize, rho: f64, rng: &mut Rng) -> (Array2<f64>, Array2<f64>) {
    let scale = (1.0 - rho * rho).sqrt();
    let mut x = Array2::zeros((n, 1));
    let mut y = Array2::zeros((n, 1));
    for i in 0..n {
        let a = rng.normal();
        let b = rng.normal();
        x[[i, 0]] = a;
        y[[i, 0]] = rho * a + scale * b;
    }
    (x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_q(dim: usize, mean: f32, log_var: f32) -> (ParamStore, QNet) {
        let mut store = ParamStore::new();
        let q = QNet::new(&mut store, Modality::Image, dim, dim, &mut Rng::new(0));
        let v = store.values_mut();
        for mlp in [&q.mean, &q.log_var] {
            v.get_mut(mlp.w1).iter_mut().for_each(|x| *x = 0.0);
            v.get_mut(mlp.w2).iter_mut().for_each(|x| *x = 0.0);
        }
        v.get_mut(q.mean.b2).iter_mut().for_each(|x| *x = mean);
        v.get_mut(q.log_var.b2).iter_mut().for_each(|x| *x = log_var);
        (store, q)
    }

    #[test]
    fn log_prob_examples() {
        let (store, q) = constant_q(1, 0.0, 0.0);
        let p = q_log_prob(&q, store.values(), &[0.3], &[0.0]).unwrap();
        assert!((p - -0.918_938_533).abs() < 1e-6);
        let p = q_log_prob(&q, store.values(), &[0.3], &[1.0]).unwrap();
        assert!((p - -1.418_938_533).abs() < 1e-6);
        let (store, q) = constant_q(4, 2.0, 0.0);
        let p = q_log_prob(&q, store.values(), &[0.0; 4], &[2.0; 4]).unwrap();
        assert!((p - -2.0 * LN_2PI).abs() < 1e-9);
    }

    #[test]
    fn variance_is_floored() {
        let (store, q) = constant_q(2, 0.0, -50.0);
        let fwd = q.forward(store.values(), &Array2::zeros((3, 2)));
        assert!(fwd.var.iter().all(|v| (*v - VARIANCE_FLOOR).abs() < 1e-12));
    }

    #[test]
    fn identical_views_cancel() {
        let mut rng = Rng::new(4);
        let mut store = ParamStore::new();
        let q = QNet::new(&mut store, Modality::Text, 3, 3, &mut rng);
        let row: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let x = Array2::from_shape_fn((5, 3), |(_, c)| row[c]);
        let y = Array2::from_shape_fn((5, 3), |(_, c)| -row[c]);
        let v = club_pair(&q, store.values(), &x, &y, true).unwrap().value;
        assert!(v.abs() < 1e-9);
    }

    #[test]
    fn input_independent_q_gives_zero() {
        let (store, q) = constant_q(3, 0.4, 0.2);
        let mut rng = Rng::new(12);
        let mut total = 0.0;
        for _ in 0..100 {
            let x = Array2::from_shape_fn((8, 3), |_| rng.normal());
            let y = Array2::from_shape_fn((8, 3), |_| rng.normal());
            total += club_pair(&q, store.values(), &x, &y, true).unwrap().value;
        }
        assert!((total / 100.0).abs() < 0.05);
    }

    #[test]
    fn club_needs_two_rows() {
        let (store, q) = constant_q(2, 0.0, 0.0);
        let one = Array2::zeros((1, 2));
        assert!(matches!(
            club_pair(&q, store.values(), &one, &one, true),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn club_pair_matches_direct_sum() {
        let mut rng = Rng::new(21);
        let mut store = ParamStore::new();
        let q = QNet::new(&mut store, Modality::Image, 3, 4, &mut rng);
        let x = Array2::from_shape_fn((6, 3), |_| rng.normal());
        let y = Array2::from_shape_fn((6, 3), |_| rng.normal());
        for normalized in [true, false] {
            let c = if normalized { 1.0 / 5.0 } else { 1.0 };
            let mut direct = 0.0;
            for e in 0..6 {
                let xe = x.row(e).to_vec();
                direct += q_log_prob(&q, store.values(), &xe, &y.row(e).to_vec()).unwrap();
                for e2 in (0..6).filter(|&e2| e2 != e) {
                    direct -= c * q_log_prob(&q, store.values(), &xe, &y.row(e2).to_vec()).unwrap();
                }
            }
            let fast = club_pair(&q, store.values(), &x, &y, normalized).unwrap().value;
            assert!(
                (fast - direct).abs() < 1e-9 * direct.abs().max(1.0),
                "{fast} vs {direct}"
            );
        }
    }

    #[test]
    fn club_pair_gradients_match_finite_differences() {
        let mut rng = Rng::new(8);
        let mut store = ParamStore::new();
        let q = QNet::new(&mut store, Modality::Image, 2, 3, &mut rng);
        let x = Array2::from_shape_fn((4, 2), |_| rng.normal());
        let y = Array2::from_shape_fn((4, 2), |_| rng.normal());
        let g = club_pair(&q, store.values(), &x, &y, true).unwrap();
        let f = |x: &Array2<f64>, y: &Array2<f64>| club_pair(&q, store.values(), x, y, true).unwrap().value;
        let h = 1e-6;
        for idx in [(0, 0), (1, 1), (3, 0)] {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[idx] += h;
            xm[idx] -= h;
            let num = (f(&xp, &y) - f(&xm, &y)) / (2.0 * h);
            assert!(
                (num - g.d_x[idx]).abs() < 1e-5 * num.abs().max(1.0),
                "dx {num} vs {}",
                g.d_x[idx]
            );
            let (mut yp, mut ym) = (y.clone(), y.clone());
            yp[idx] += h;
            ym[idx] -= h;
            let num = (f(&x, &yp) - f(&x, &ym)) / (2.0 * h);
            assert!(
                (num - g.d_y[idx]).abs() < 1e-5 * num.abs().max(1.0),
                "dy {num} vs {}",
                g.d_y[idx]
            );
        }
    }

    #[test]
    fn exid_loss_examples() {
        let d = 250;
        let mut dis = Disentangler::new(&[Modality::Image], d, 4, true, &mut Rng::new(1));
        {
            let q = dis.nets[0].clone();
            let v = dis.store.values_mut();
            for mlp in [&q.mean, &q.log_var] {
                v.get_mut(mlp.w1).iter_mut().for_each(|x| *x = 0.0);
                v.get_mut(mlp.w2).iter_mut().for_each(|x| *x = 0.0);
                v.get_mut(mlp.b2).iter_mut().for_each(|x| *x = 0.0);
            }
        }
        // Every view equals the (zero) predicted mean.
        let views: BatchViews = vec![(Modality::Image, vec![Array2::zeros((3, d)); 3])];
        let l = dis.exid_loss(&views, false).unwrap();
        assert!((l - 125.0 * LN_2PI).abs() < 1e-9, "{l}");
        assert!((l - 229.73).abs() < 0.01);

        let single: BatchViews = vec![(Modality::Image, vec![Array2::zeros((3, d))])];
        assert_eq!(dis.exid_loss(&single, false).unwrap(), 0.0);
        assert_eq!(dis.club_loss(&single).unwrap().0, 0.0);
    }

    #[test]
    fn mean_closer_to_target_lowers_loss() {
        let (mut store, q) = constant_q(1, 0.0, 0.0);
        let x = Array2::zeros((4, 1));
        let y = Array2::from_elem((4, 1), 2.0);
        let mut prev = f64::INFINITY;
        for mean in [0.0f32, 0.5, 1.0, 1.5, 2.0] {
            store.values_mut().get_mut(q.mean.b2)[0] = mean;
            let nll = -positive_log_likelihood(&q, store.values(), &x, &y, 1.0, None);
            assert!(nll < prev);
            prev = nll;
        }
    }

    #[test]
    fn mi_oracle() {
        assert_eq!(gaussian_mi_oracle(0.0).unwrap(), 0.0);
        assert!((gaussian_mi_oracle(0.9).unwrap() - 0.8304).abs() < 1e-4);
        assert_eq!(gaussian_mi_oracle(-0.9).unwrap(), gaussian_mi_oracle(0.9).unwrap());
        assert!((gaussian_mi_oracle(0.5).unwrap() - 0.1438).abs() < 1e-4);
        assert!(gaussian_mi_oracle(1.0).is_err());
        assert!(gaussian_mi_oracle(-1.5).is_err());
    }
}
