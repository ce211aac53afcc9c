//! Two-layer ReLU networks `y = W2 relu(W1 x + b1) + b2` and scalar linear heads,
//! evaluated row-wise over a batch matrix.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::numeric::params::{Grads, Init, ParamId, ParamStore, Values};
use crate::numeric::rng::Rng;

#[derive(Debug, Clone)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub input: Array2<f64>,
    pub hidden: Array2<f64>,
    pub output: Array2<f64>,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut Rng,
    ) -> Self {
        let w1 = store.add(
            &format!("{prefix}.w1"),
            &[hidden, input],
            Init::Xavier {
                fan_in: input,
                fan_out: hidden,
            },
            rng,
        );
        let b1 = store.add(&format!("{prefix}.b1"), &[hidden], Init::Zeros, rng);
        let w2 = store.add(
            &format!("{prefix}.w2"),
            &[output, hidden],
            Init::Xavier {
                fan_in: hidden,
                fan_out: output,
            },
            rng,
        );
        let b2 = store.add(&format!("{prefix}.b2"), &[output], Init::Zeros, rng);
        Self {
            w1,
            b1,
            w2,
            b2,
            input,
            hidden,
            output,
        }
    }

    /// Single-vector forward pass with a shape check.
    pub fn apply(&self, params: &Values, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input,
                x.len()
            )));
        }
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
        Ok(self.forward(params, row).output.row(0).to_vec())
    }

    pub fn forward(&self, params: &Values, input: Array2<f64>) -> MlpCache {
        debug_assert_eq!(input.ncols(), self.input);
        let w1 = params.mat64(self.w1);
        let b1 = params.vec64(self.b1);
        let w2 = params.mat64(self.w2);
        let b2 = params.vec64(self.b2);
        let mut hidden = input.dot(&w1.t()) + &b1;
        hidden.mapv_inplace(|v| v.max(0.0));
        let output = hidden.dot(&w2.t()) + &b2;
        MlpCache { input, hidden, output }
    }

    /// Backpropagates `d_out` (rows aligned with the cached batch). Parameter
    /// gradients are accumulated only when `grads` is given; the input gradient
    /// is always returned.
    pub fn backward(
        &self,
        params: &Values,
        cache: &MlpCache,
        d_out: &Array2<f64>,
        grads: Option<&mut Grads>,
    ) -> Array2<f64> {
        let w1 = params.mat64(self.w1);
        let w2 = params.mat64(self.w2);
        let mut d_hidden = d_out.dot(&w2);
        ndarray::Zip::from(&mut d_hidden).and(&cache.hidden).for_each(|d, &h| {
            if h <= 0.0 {
                *d = 0.0;
            }
        });
        if let Some(g) = grads {
            g.add_mat(self.w2, &d_out.t().dot(&cache.hidden));
            g.add_vec(self.b2, &d_out.sum_axis(Axis(0)));
            g.add_mat(self.w1, &d_hidden.t().dot(&cache.input));
            g.add_vec(self.b1, &d_hidden.sum_axis(Axis(0)));
        }
        d_hidden.dot(&w1)
    }
}

/// Affine map to a scalar, `y = <w, x> + b`.
#[derive(Debug, Clone)]
pub struct ScalarHead {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
}

impl ScalarHead {
    pub fn new(store: &mut ParamStore, prefix: &str, input: usize, rng: &mut Rng) -> Self {
        let w = store.add(
            &format!("{prefix}.w"),
            &[input],
            Init::Xavier {
                fan_in: input,
                fan_out: 1,
            },
            rng,
        );
        let b = store.add(&format!("{prefix}.b"), &[1], Init::Zeros, rng);
        Self { w, b, input }
    }

    pub fn forward(&self, params: &Values, x: &Array2<f64>) -> Array1<f64> {
        let w = params.vec64(self.w);
        let b = params.get(self.b)[0] as f64;
        x.dot(&w) + b
    }

    /// Accumulates parameter gradients for `d_out` and adds the input gradient
    /// into `d_input`.
    pub fn backward(
        &self,
        params: &Values,
        x: &Array2<f64>,
        d_out: &Array1<f64>,
        grads: &mut Grads,
        d_input: &mut Array2<f64>,
    ) {
        let w = params.vec64(self.w);
        grads.add_vec(self.w, &x.t().dot(d_out));
        grads.get_mut(self.b)[0] += d_out.sum();
        for (mut row, d) in d_input.rows_mut().into_iter().zip(d_out.iter()) {
            row.scaled_add(*d, &w);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_mlp(dim: usize) -> (ParamStore, Mlp) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(0);
        let mlp = Mlp::new(&mut store, "m", dim, dim, dim, &mut rng);
        let eye: Vec<f32> = (0..dim * dim)
            .map(|k| if k / dim == k % dim { 1.0 } else { 0.0 })
            .collect();
        store.values_mut().get_mut(mlp.w1).copy_from_slice(&eye);
        store.values_mut().get_mut(mlp.w2).copy_from_slice(&eye);
        (store, mlp)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(0);
        let mlp = Mlp::new(&mut store, "m", 3, 5, 2, &mut rng);
        for id in [mlp.w1, mlp.w2] {
            store.values_mut().get_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(mlp.apply(store.values(), &[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_and_relu_clamp() {
        let (mut store, mlp) = identity_mlp(3);
        let x = [0.5, 1.0, 2.0];
        assert_eq!(mlp.apply(store.values(), &x).unwrap(), x.to_vec());
        store.values_mut().get_mut(mlp.b2).copy_from_slice(&[0.25, -1.0, 4.0]);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(mlp.apply(store.values(), &neg).unwrap(), vec![0.25, -1.0, 4.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let (store, mlp) = identity_mlp(3);
        assert!(matches!(mlp.apply(store.values(), &[1.0]), Err(Error::Shape(_))));
    }
}
