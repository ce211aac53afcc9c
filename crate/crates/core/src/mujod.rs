//! Multi-modal joint decision: attention fusion of modality embeddings into a
//! joint embedding, per-channel Tucker scorers and their 1-vs-all losses.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::numeric::mlp::{Mlp, MlpCache};
use crate::numeric::ops::{log_sum_exp, softmax_in_place};
use crate::numeric::params::{Grads, Init, ParamId, ParamStore, Values};
use crate::numeric::rng::Rng;

/// Tucker scorer of one channel (a base modality or the joint channel).
#[derive(Debug, Clone)]
pub struct ModalityScorer {
    pub channel: Modality,
    pub relations: ParamId,
    pub core: ParamId,
    pub dim: usize,
    pub rel_dim: usize,
}

impl ModalityScorer {
    pub fn new(
        store: &mut ParamStore,
        channel: Modality,
        num_relations: usize,
        dim: usize,
        rel_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let prefix = format!("mujod.{}", channel.name());
        let relations = store.add(
            &format!("{prefix}.relations"),
            &[num_relations, rel_dim],
            Init::Normal(0.02),
            rng,
        );
        let core = store.add(
            &format!("{prefix}.core"),
            &[dim, rel_dim, dim],
            Init::Uniform(1.0 / (dim as f64).sqrt()),
            rng,
        );
        Self {
            channel,
            relations,
            core,
            dim,
            rel_dim,
        }
    }

    /// `M_r = W x_2 r`, so that `score(h, r, t) = h^T M_r t`.
    pub fn relation_matrix(&self, params: &Values, relation: usize) -> Array2<f64> {
        let (d, dr) = (self.dim, self.rel_dim);
        let r = &params.get(self.relations)[relation * dr..(relation + 1) * dr];
        let core = params.get(self.core);
        let mut m = Array2::zeros((d, d));
        for i in 0..d {
            let mut row = m.row_mut(i);
            let row = row.as_slice_mut().expect("standard layout");
            for (k, &rk) in r.iter().enumerate() {
                let rk = rk as f64;
                let slice = &core[(i * dr + k) * d..(i * dr + k + 1) * d];
                for (o, &w) in row.iter_mut().zip(slice) {
                    *o += rk * w as f64;
                }
            }
        }
        m
    }

    /// Pushes `dL/dM_r` back into the core tensor and the relation row.
    pub fn relation_matrix_backward(&self, params: &Values, relation: usize, d_m: &Array2<f64>, grads: &mut Grads) {
        let (d, dr) = (self.dim, self.rel_dim);
        let r = &params.get(self.relations)[relation * dr..(relation + 1) * dr];
        let core = params.get(self.core);
        let mut d_r = vec![0.0; dr];
        {
            let d_core = grads.get_mut(self.core);
            for i in 0..d {
                let dm_row = d_m.row(i);
                for (k, &rk) in r.iter().enumerate() {
                    let base = (i * dr + k) * d;
                    let mut acc = 0.0;
                    for j in 0..d {
                        d_core[base + j] += rk as f64 * dm_row[j];
                        acc += core[base + j] as f64 * dm_row[j];
                    }
                    d_r[k] += acc;
                }
            }
        }
        let g = grads.get_mut(self.relations);
        for (k, v) in d_r.into_iter().enumerate() {
            g[relation * dr + k] += v;
        }
    }
}

/// Trilinear contraction `sum_{i,k,j} W[i][k][j] h_i r_k t_j` of a core laid out
/// as `[d][d_r][d]`.
pub fn tucker_score(h: &[f64], r: &[f64], t: &[f64], core: &[f64]) -> Result<f64> {
    let (d, dr) = (h.len(), r.len());
    if t.len() != d || core.len() != d * dr * d {
        return Err(Error::Shape(format!(
            "core of {} entries does not fit h[{}], r[{}], t[{}]",
            core.len(),
            d,
            dr,
            t.len()
        )));
    }
    let mut total = 0.0;
    for (i, hi) in h.iter().enumerate() {
        for (k, rk) in r.iter().enumerate() {
            let base = (i * dr + k) * d;
            let inner: f64 = t.iter().zip(&core[base..base + d]).map(|(a, b)| a * b).sum();
            total += hi * rk * inner;
        }
    }
    Ok(total)
}

/// Scores `(h, r, e)` for every row `e` of `table`.
pub fn score_all_tails(h: &[f64], m: &Array2<f64>, table: &Array2<f64>) -> Array1<f64> {
    let q = Array1::from(h.to_vec()).dot(m);
    table.dot(&q)
}

/// Scores `(e, r, t)` for every row `e` of `table`.
pub fn score_all_heads(t: &[f64], m: &Array2<f64>, table: &Array2<f64>) -> Array1<f64> {
    let q = m.dot(&Array1::from(t.to_vec()));
    table.dot(&q)
}

/// Which end of the triple is predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Tail,
    Head,
}

/// Loss and gradients of one channel for one relation.
#[derive(Debug, Clone)]
pub struct ChannelLoss {
    pub loss: f64,
    pub d_table: Option<Array2<f64>>,
    pub d_matrix: Option<Array2<f64>>,
}

/// Summed 1-vs-all cross-entropy of `(head, tail)` pairs sharing one relation
/// matrix, over both prediction directions. Candidates are all rows of `table`.
pub fn pair_cross_entropy(
    table: &Array2<f64>,
    m: &Array2<f64>,
    pairs: &[(usize, usize)],
    want_grad: bool,
) -> ChannelLoss {
    let n = table.nrows();
    let d = table.ncols();
    let mut loss = 0.0;
    let mut d_table = want_grad.then(|| Array2::zeros((n, d)));
    let mut d_matrix = want_grad.then(|| Array2::zeros((d, d)));
    if pairs.is_empty() {
        return ChannelLoss {
            loss,
            d_table,
            d_matrix,
        };
    }
    for dir in [Direction::Tail, Direction::Head] {
        let (query_rows, gold): (Vec<usize>, Vec<usize>) = match dir {
            Direction::Tail => pairs.iter().copied().unzip(),
            Direction::Head => pairs.iter().map(|&(h, t)| (t, h)).unzip(),
        };
        let x = table.select(Axis(0), &query_rows);
        let q = match dir {
            Direction::Tail => x.dot(m),
            Direction::Head => x.dot(&m.t()),
        };
        let mut s = q.dot(&table.t());
        for (mut row, &g) in s.rows_mut().into_iter().zip(&gold) {
            let slice = row.as_slice_mut().expect("standard layout");
            loss += log_sum_exp(slice) - slice[g];
            if want_grad {
                softmax_in_place(slice, 1.0);
                slice[g] -= 1.0;
            }
        }
        if let (Some(dt), Some(dm)) = (d_table.as_mut(), d_matrix.as_mut()) {
            // s now holds dL/ds.
            *dt += &s.t().dot(&q);
            let d_q = s.dot(table);
            let d_x = match dir {
                Direction::Tail => {
                    *dm += &x.t().dot(&d_q);
                    d_q.dot(&m.t())
                }
                Direction::Head => {
                    *dm += &d_q.t().dot(&x);
                    d_q.dot(m)
                }
            };
            for (row, &e) in d_x.rows().into_iter().zip(&query_rows) {
                let mut target = dt.row_mut(e);
                target += &row;
            }
        }
    }
    ChannelLoss {
        loss,
        d_table,
        d_matrix,
    }
}

/// Attention fusion of base-modality embeddings into the joint embedding.
#[derive(Debug, Clone)]
pub struct JointFusion {
    pub modalities: Vec<Modality>,
    /// `None` when fusion weights are fixed to uniform.
    pub attn: Option<ParamId>,
    /// `None` entries bypass the projection.
    pub projections: Vec<Option<Mlp>>,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct JointForward {
    pub caches: Vec<Option<MlpCache>>,
    pub projected: Vec<Array2<f64>>,
    /// Fusion weights, one row per entity and one column per modality.
    pub alpha: Array2<f64>,
    pub output: Array2<f64>,
}

impl JointFusion {
    pub fn new(
        store: &mut ParamStore,
        modalities: &[Modality],
        dim: usize,
        hidden: usize,
        adaptive: bool,
        project_structure: bool,
        rng: &mut Rng,
    ) -> Self {
        let projections = modalities
            .iter()
            .map(|&m| {
                if m == Modality::Structure && !project_structure {
                    None
                } else {
                    Some(Mlp::new(
                        store,
                        &format!("mujod.project.{}", m.name()),
                        dim,
                        hidden,
                        dim,
                        rng,
                    ))
                }
            })
            .collect();
        let attn = adaptive.then(|| {
            store.add(
                "mujod.attention",
                &[dim],
                Init::Xavier {
                    fan_in: dim,
                    fan_out: 1,
                },
                rng,
            )
        });
        Self {
            modalities: modalities.to_vec(),
            attn,
            projections,
            dim,
        }
    }

    pub fn forward(&self, params: &Values, inputs: &[&Array2<f64>]) -> Result<JointForward> {
        if inputs.len() < 2 || inputs.len() != self.projections.len() {
            return Err(Error::Contract(format!(
                "joint fusion needs one input per fused modality (at least 2), got {}",
                inputs.len()
            )));
        }
        let mut caches = Vec::with_capacity(inputs.len());
        let mut projected = Vec::with_capacity(inputs.len());
        for (proj, x) in self.projections.iter().zip(inputs) {
            match proj {
                Some(mlp) => {
                    let cache = mlp.forward(params, (*x).clone());
                    projected.push(cache.output.clone());
                    caches.push(Some(cache));
                }
                None => {
                    projected.push((*x).clone());
                    caches.push(None);
                }
            }
        }
        let n = inputs[0].nrows();
        let count = inputs.len();
        let alpha = match self.attn {
            Some(attn) => {
                let w = params.vec64(attn);
                let mut scores = Array2::zeros((n, count));
                for (m, p) in projected.iter().enumerate() {
                    scores.column_mut(m).assign(&p.dot(&w));
                }
                for mut row in scores.rows_mut() {
                    softmax_in_place(row.as_slice_mut().expect("standard layout"), 1.0);
                }
                scores
            }
            None => Array2::from_elem((n, count), 1.0 / count as f64),
        };
        let mut output = Array2::zeros((n, self.dim));
        for (m, p) in projected.iter().enumerate() {
            output += &(&alpha.column(m).insert_axis(Axis(1)) * p);
        }
        Ok(JointForward {
            caches,
            projected,
            alpha,
            output,
        })
    }

    /// Returns the gradient for each fused input.
    pub fn backward(
        &self,
        params: &Values,
        fwd: &JointForward,
        d_out: &Array2<f64>,
        grads: &mut Grads,
    ) -> Vec<Array2<f64>> {
        let count = fwd.projected.len();
        let n = d_out.nrows();
        let mut d_proj: Vec<Array2<f64>> = (0..count)
            .map(|m| &fwd.alpha.column(m).insert_axis(Axis(1)) * d_out)
            .collect();
        if let Some(attn) = self.attn {
            let w = params.vec64(attn);
            let mut d_alpha = Array2::zeros((n, count));
            for (m, p) in fwd.projected.iter().enumerate() {
                d_alpha.column_mut(m).assign(&(d_out * p).sum_axis(Axis(1)));
            }
            let mut d_scores = Array2::zeros((n, count));
            for row in 0..n {
                let dot: f64 = (0..count).map(|m| fwd.alpha[[row, m]] * d_alpha[[row, m]]).sum();
                for m in 0..count {
                    d_scores[[row, m]] = fwd.alpha[[row, m]] * (d_alpha[[row, m]] - dot);
                }
            }
            let mut d_w = Array1::zeros(self.dim);
            for (m, p) in fwd.projected.iter().enumerate() {
                let ds = d_scores.column(m);
                d_w += &p.t().dot(&ds);
                for (mut row, &s) in d_proj[m].rows_mut().into_iter().zip(ds.iter()) {
                    row.scaled_add(s, &w);
                }
            }
            grads.add_vec(attn, &d_w);
        }
        d_proj
            .into_iter()
            .zip(&self.projections)
            .zip(&fwd.caches)
            .map(|((d, proj), cache)| match (proj, cache) {
                (Some(mlp), Some(cache)) => mlp.backward(params, cache, &d, Some(grads)),
                _ => d,
            })
            .collect()
    }
}

/// Joint embedding of a single entity from its per-modality embeddings.
pub fn fuse_joint(fusion: &JointFusion, params: &Values, embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
    let rows: Vec<Array2<f64>> = embeddings
        .iter()
        .map(|e| Array2::from_shape_vec((1, e.len()), e.clone()).expect("row"))
        .collect();
    if rows.iter().any(|r| r.ncols() != fusion.dim) {
        return Err(Error::Shape(format!(
            "joint fusion expects {}-dim embeddings",
            fusion.dim
        )));
    }
    let refs: Vec<&Array2<f64>> = rows.iter().collect();
    Ok(fusion.forward(params, &refs)?.output.row(0).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_tucker(h: &[f64], r: &[f64], t: &[f64], core: &[f64]) -> f64 {
        let (d, dr) = (h.len(), r.len());
        let mut s = 0.0;
        for i in 0..d {
            for k in 0..dr {
                for j in 0..d {
                    s += core[(i * dr + k) * d + j] * h[i] * r[k] * t[j];
                }
            }
        }
        s
    }

    #[test]
    fn tucker_examples() {
        assert_eq!(tucker_score(&[3.0], &[5.0], &[7.0], &[2.0]).unwrap(), 210.0);
        assert_eq!(tucker_score(&[1.0, -2.0], &[3.0], &[4.0, 9.0], &[0.0; 4]).unwrap(), 0.0);
        // Slices W[:,0,:] = I.
        let core = [1.0, 0.0, 0.0, 1.0];
        let s = tucker_score(&[1.0, 2.0], &[3.0], &[4.0, 5.0], &core).unwrap();
        assert_eq!(s, 42.0);
        assert_eq!(s, brute_tucker(&[1.0, 2.0], &[3.0], &[4.0, 5.0], &core));
        assert!(matches!(
            tucker_score(&[1.0, 2.0], &[3.0], &[4.0], &core),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn tucker_is_trilinear() {
        let mut rng = Rng::new(5);
        let v = |rng: &mut Rng, n: usize| -> Vec<f64> { (0..n).map(|_| rng.normal()).collect() };
        for _ in 0..50 {
            let (h, h2, r, t, core) = (
                v(&mut rng, 4),
                v(&mut rng, 4),
                v(&mut rng, 3),
                v(&mut rng, 4),
                v(&mut rng, 48),
            );
            let s = tucker_score(&h, &r, &t, &core).unwrap();
            let doubled: Vec<f64> = h.iter().map(|x| 2.0 * x).collect();
            assert!((tucker_score(&doubled, &r, &t, &core).unwrap() - 2.0 * s).abs() < 1e-6);
            let sum: Vec<f64> = h.iter().zip(&h2).map(|(a, b)| a + b).collect();
            let additive = tucker_score(&h2, &r, &t, &core).unwrap() + s;
            assert!((tucker_score(&sum, &r, &t, &core).unwrap() - additive).abs() < 1e-9);
        }
    }

    fn scorer(d: usize, dr: usize, seed: u64) -> (ParamStore, ModalityScorer) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let s = ModalityScorer::new(&mut store, Modality::Structure, 3, d, dr, &mut rng);
        (store, s)
    }

    #[test]
    fn candidate_scores_match_per_candidate_loop() {
        let (store, sc) = scorer(5, 3, 9);
        let params = store.values();
        let mut rng = Rng::new(1);
        let n = 50;
        let table = Array2::from_shape_fn((n, 5), |_| rng.normal());
        let core = params.vec64(sc.core).to_vec();
        let r: Vec<f64> = params.get(sc.relations)[3..6].iter().map(|&x| x as f64).collect();
        let m = sc.relation_matrix(params, 1);
        let h = table.row(7).to_vec();
        let tails = score_all_tails(&h, &m, &table);
        let heads = score_all_heads(&h, &m, &table);
        for e in 0..n {
            let cand = table.row(e).to_vec();
            assert!((tails[e] - brute_tucker(&h, &r, &cand, &core)).abs() < 1e-6);
            assert!((heads[e] - brute_tucker(&cand, &r, &h, &core)).abs() < 1e-6);
        }
        let zero = Array2::zeros((5, 5));
        assert!(score_all_tails(&h, &zero, &table).iter().all(|s| *s == 0.0));
    }

    #[test]
    fn loss_examples() {
        let single = Array2::from_elem((1, 2), 0.3);
        let m = Array2::from_elem((2, 2), 0.7);
        assert!(pair_cross_entropy(&single, &m, &[(0, 0)], false).loss.abs() < 1e-12);

        let table = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let zero = Array2::zeros((2, 2));
        let l = pair_cross_entropy(&table, &zero, &[(0, 1)], false).loss;
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);

        // Gold tail/head dominates by a wide margin.
        let table = Array2::from_shape_vec((2, 1), vec![1.0, -1.0]).unwrap();
        let big = Array2::from_elem((1, 1), 15.0);
        assert!(pair_cross_entropy(&table, &big, &[(0, 0)], false).loss < 1e-9);
    }

    #[test]
    fn loss_bounds_hold() {
        let mut rng = Rng::new(3);
        for _ in 0..50 {
            let n = 2 + rng.below(10);
            let table = Array2::from_shape_fn((n, 3), |_| rng.normal());
            let m = Array2::from_shape_fn((3, 3), |_| rng.normal());
            let pairs: Vec<(usize, usize)> = (0..4).map(|_| (rng.below(n), rng.below(n))).collect();
            let l = pair_cross_entropy(&table, &m, &pairs, false).loss;
            assert!(l >= 0.0);
            let zero = Array2::zeros((3, 3));
            let uniform = pair_cross_entropy(&table, &zero, &pairs, false).loss;
            assert!((uniform - 2.0 * pairs.len() as f64 * (n as f64).ln()).abs() < 1e-9);
        }
    }

    fn fusion(adaptive: bool, count: usize, seed: u64) -> (ParamStore, JointFusion) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let mods = &Modality::BASE[..count];
        let f = JointFusion::new(&mut store, mods, 3, 3, adaptive, true, &mut rng);
        (store, f)
    }

    #[test]
    fn equal_scores_average_projections() {
        let (mut store, f) = fusion(true, 2, 2);
        let attn = f.attn.unwrap();
        store.values_mut().get_mut(attn).iter_mut().for_each(|v| *v = 0.0);
        let a = vec![0.5, -1.0, 2.0];
        let b = vec![1.5, 0.3, -0.2];
        let out = fuse_joint(&f, store.values(), &[a.clone(), b.clone()]).unwrap();
        let pa = f.projections[0].as_ref().unwrap().apply(store.values(), &a).unwrap();
        let pb = f.projections[1].as_ref().unwrap().apply(store.values(), &b).unwrap();
        for c in 0..3 {
            assert!((out[c] - 0.5 * (pa[c] + pb[c])).abs() < 1e-12);
        }
        assert!(matches!(fuse_joint(&f, store.values(), &[a]), Err(Error::Contract(_))));
    }

    #[test]
    fn saturated_attention_selects_one_projection() {
        let (mut store, f) = fusion(true, 2, 4);
        let p0 = f.projections[0].clone().unwrap();
        let p1 = f.projections[1].clone().unwrap();
        let v = store.values_mut();
        // Projections become constants c0, c1 with <w, c0> - <w, c1> = 30.
        for p in [&p0, &p1] {
            v.get_mut(p.w2).iter_mut().for_each(|x| *x = 0.0);
        }
        v.get_mut(p0.b2).copy_from_slice(&[15.0, 1.0, 2.0]);
        v.get_mut(p1.b2).copy_from_slice(&[-15.0, 4.0, 5.0]);
        v.get_mut(f.attn.unwrap()).copy_from_slice(&[1.0, 0.0, 0.0]);
        let out = fuse_joint(&f, store.values(), &[vec![0.1, 0.2, 0.3], vec![0.3, 0.2, 0.1]]).unwrap();
        for (o, c) in out.iter().zip([15.0, 1.0, 2.0]) {
            assert!((o - c).abs() < 1e-6, "{out:?}");
        }
    }

    #[test]
    fn three_way_alpha_is_a_distribution() {
        let (store, f) = fusion(true, 3, 8);
        let mut rng = Rng::new(11);
        let inputs: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_fn((20, 3), |_| 3.0 * rng.normal()))
            .collect();
        let refs: Vec<&Array2<f64>> = inputs.iter().collect();
        let fwd = f.forward(store.values(), &refs).unwrap();
        for row in fwd.alpha.rows() {
            assert!(row.iter().all(|a| *a >= 0.0));
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        let (store, f) = fusion(false, 3, 8);
        let fwd = f.forward(store.values(), &refs).unwrap();
        assert!(fwd.alpha.iter().all(|a| (a - 1.0 / 3.0).abs() < 1e-15));
    }
}
