//! Named parameter groups with gradient and Adam moment buffers.
//!
//! Values are stored in `f32`; gradients and optimizer moments accumulate in `f64`.
//! Backward passes borrow `Values` immutably and `Grads` mutably via [`ParamStore::parts_mut`].

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::numeric::rng::Rng;

/// Handle to a parameter group inside one [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
struct GroupMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Values {
    meta: Vec<GroupMeta>,
    data: Vec<Vec<f32>>,
    by_name: HashMap<String, ParamId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    data: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    values: Values,
    grads: Grads,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier {
        fan_in: usize,
        fan_out: usize,
    },
    Uniform(f64),
    Normal(f64),
    Constant(f32),
}

impl Init {
    fn draw(self, len: usize, rng: &mut Rng) -> Vec<f32> {
        match self {
            Init::Zeros => vec![0.0; len],
            Init::Constant(c) => vec![c; len],
            Init::Xavier { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..len).map(|_| rng.uniform_range(-bound, bound) as f32).collect()
            }
            Init::Uniform(bound) => (0..len).map(|_| rng.uniform_range(-bound, bound) as f32).collect(),
            Init::Normal(std) => (0..len).map(|_| (std * rng.normal()) as f32).collect(),
        }
    }
}

impl Values {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.data.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.meta[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.meta[id.0].shape
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.data[id.0]
    }

    pub fn view(&self, id: ParamId) -> ArrayView1<'_, f32> {
        ArrayView1::from(&self.data[id.0][..])
    }

    /// Group as an `f64` vector.
    pub fn vec64(&self, id: ParamId) -> Array1<f64> {
        self.data[id.0].iter().map(|&v| v as f64).collect()
    }

    /// Rank-2 group (or rank-3 with trailing dims flattened) as an `f64` matrix.
    pub fn mat64(&self, id: ParamId) -> Array2<f64> {
        let shape = &self.meta[id.0].shape;
        let rows = shape[0];
        let cols: usize = shape[1..].iter().product();
        Array2::from_shape_vec((rows, cols), self.vec64(id).to_vec()).expect("group length matches its shape")
    }

    pub fn mat32(&self, id: ParamId) -> ArrayView2<'_, f32> {
        let shape = &self.meta[id.0].shape;
        let cols: usize = shape[1..].iter().product();
        ArrayView2::from_shape((shape[0], cols), &self.data[id.0][..]).expect("group shape")
    }
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn add_slice(&mut self, id: ParamId, delta: &[f64]) {
        let buf = &mut self.data[id.0];
        assert_eq!(buf.len(), delta.len(), "gradient shape mismatch");
        for (g, d) in buf.iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub fn add_mat(&mut self, id: ParamId, delta: &Array2<f64>) {
        let buf = &mut self.data[id.0];
        assert_eq!(buf.len(), delta.len(), "gradient shape mismatch");
        for (g, d) in buf.iter_mut().zip(delta.iter()) {
            *g += d;
        }
    }

    pub fn add_vec(&mut self, id: ParamId, delta: &Array1<f64>) {
        let buf = &mut self.data[id.0];
        assert_eq!(buf.len(), delta.len(), "gradient shape mismatch");
        for (g, d) in buf.iter_mut().zip(delta.iter()) {
            *g += d;
        }
    }

    pub fn zero(&mut self) {
        for buf in &mut self.data {
            buf.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn all_zero(&self) -> bool {
        self.data.iter().all(|b| b.iter().all(|g| *g == 0.0))
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            values: Values {
                meta: Vec::new(),
                data: Vec::new(),
                by_name: HashMap::new(),
            },
            grads: Grads { data: Vec::new() },
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Registers a group. Panics on duplicate names; layouts are built by code, not data.
    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut Rng) -> ParamId {
        let len = shape.iter().product();
        self.add_with_values(name, shape, init.draw(len, rng))
    }

    pub fn add_with_values(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> ParamId {
        assert!(
            !self.values.by_name.contains_key(name),
            "duplicate parameter group {name}"
        );
        assert_eq!(shape.iter().product::<usize>(), data.len());
        let id = ParamId(self.values.data.len());
        let len = data.len();
        self.values.meta.push(GroupMeta {
            name: name.to_string(),
            shape: shape.to_vec(),
        });
        self.values.data.push(data);
        self.values.by_name.insert(name.to_string(), id);
        self.grads.data.push(vec![0.0; len]);
        self.first_moment.push(vec![0.0; len]);
        self.second_moment.push(vec![0.0; len]);
        id
    }

    pub fn values(&self) -> &Values {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Values {
        &mut self.values
    }

    pub fn grads(&self) -> &Grads {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut Grads {
        &mut self.grads
    }

    pub fn parts_mut(&mut self) -> (&Values, &mut Grads) {
        (&self.values, &mut self.grads)
    }

    pub fn zero_grads(&mut self) {
        self.grads.zero();
    }

    pub fn num_scalars(&self) -> usize {
        self.values.data.iter().map(Vec::len).sum()
    }

    /// One Adam update with bias correction on every group; `step` counts from 1.
    /// Gradient buffers are zeroed afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig, step: u64) -> Result<()> {
        if step == 0 {
            return Err(Error::Contract("adam step index counts from 1".into()));
        }
        for (i, g) in self.grads.data.iter().enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in group {}",
                    self.values.meta[i].name
                )));
            }
        }
        let bc1 = 1.0 - cfg.beta1.powi(step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(step as i32);
        for i in 0..self.values.data.len() {
            let values = &mut self.values.data[i];
            let grads = &mut self.grads.data[i];
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for k in 0..values.len() {
                let g = grads[k];
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                let updated = values[k] as f64 - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                values[k] = updated as f32;
                grads[k] = 0.0;
            }
            debug_assert!(
                values.iter().all(|x| x.is_finite()),
                "non-finite value in {}",
                self.values.meta[i].name
            );
        }
        Ok(())
    }

    /// `(name, shape, values)` for every group, in registration order.
    pub fn groups(&self) -> impl Iterator<Item = (&str, &[usize], &[f32])> {
        self.values
            .meta
            .iter()
            .zip(&self.values.data)
            .map(|(m, d)| (m.name.as_str(), m.shape.as_slice(), d.as_slice()))
    }

    /// Overwrites values group by group from `(name, shape, data)` triples.
    /// Every group of `self` must be supplied with a matching shape.
    pub fn load_groups<'a>(
        &mut self,
        groups: impl IntoIterator<Item = (&'a str, &'a [usize], &'a [f32])>,
    ) -> Result<()> {
        let mut seen = vec![false; self.values.len()];
        for (name, shape, data) in groups {
            let id = self
                .values
                .id(name)
                .ok_or_else(|| Error::Compat(format!("unexpected parameter group {name}")))?;
            if self.values.shape(id) != shape {
                return Err(Error::Compat(format!(
                    "group {name} has shape {:?}, expected {:?}",
                    shape,
                    self.values.shape(id)
                )));
            }
            self.values.data[id.0].copy_from_slice(data);
            seen[id.0] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Compat(format!(
                "checkpoint lacks parameter group {}",
                self.values.meta[missing].name
            )));
        }
        Ok(())
    }
}
