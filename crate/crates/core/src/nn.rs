//! Named parameter store, seeded initialization, and the Adam optimizer.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// All trainable parameters of a model, addressed by name. Names are kept in
/// insertion order so checkpoints and updates are deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter {name}"
        );
        self.index.insert(name.to_string(), self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[self.index[name]]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.tensors[self.index[name]]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Merge every parameter of `other`, prefixing nothing; names must not clash.
    pub fn absorb(&mut self, other: &ParamStore) {
        for (name, t) in other.iter() {
            self.insert(name, t.clone());
        }
    }

    /// Put every parameter on the tape as a differentiable leaf.
    pub fn bind<'a>(&'a self, tape: &mut Tape) -> BoundParams<'a> {
        let vars = self.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        BoundParams { store: self, vars }
    }

    /// Put every parameter on the tape as a constant (frozen).
    pub fn bind_frozen<'a>(&'a self, tape: &mut Tape) -> BoundParams<'a> {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        BoundParams { store: self, vars }
    }
}

/// Parameters materialized on a tape for one forward/backward pass.
pub struct BoundParams<'a> {
    store: &'a ParamStore,
    vars: Vec<Var>,
}

impl<'a> BoundParams<'a> {
    pub fn var(&self, name: &str) -> Var {
        self.vars[self.store.index[name]]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }
}

/// Seeded uniform He-style fan-in initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Weight matrix [fan_in x fan_out], U(-b, b) with b = sqrt(6 / fan_in).
    pub fn linear(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| self.rng.gen_range(-bound..bound))
            .collect();
        Tensor::from_vec(fan_in, fan_out, data)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Tensor {
        Tensor::zeros(rows, cols)
    }

    /// Small uniform entries, used for positional embeddings and probes.
    pub fn small(&mut self, rows: usize, cols: usize, bound: f64) -> Tensor {
        let data = (0..rows * cols)
            .map(|_| self.rng.gen_range(-bound..bound))
            .collect();
        Tensor::from_vec(rows, cols, data)
    }
}

/// Adam with optional global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, clip_norm: Option<f64>) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update. `grads` is parallel to `store` iteration order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        assert_eq!(grads.len(), store.len(), "grad count mismatch");
        if self.m.is_empty() {
            self.m = grads
                .iter()
                .map(|g| Tensor::zeros(g.rows, g.cols))
                .collect();
            self.v = self.m.clone();
        }
        let mut scale = 1.0;
        if let Some(max_norm) = self.clip_norm {
            let total: f64 = grads
                .iter()
                .map(|g| g.data.iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if total > max_norm {
                scale = max_norm / total;
            }
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (k, g) in grads.iter().enumerate() {
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            let p = &mut store.tensors[k];
            for j in 0..g.data.len() {
                let gj = g.data[j] * scale;
                m.data[j] = self.beta1 * m.data[j] + (1.0 - self.beta1) * gj;
                v.data[j] = self.beta2 * v.data[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m.data[j] / b1t;
                let vhat = v.data[j] / b2t;
                p.data[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
