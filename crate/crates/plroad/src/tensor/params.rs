//! Named parameter set with momentum-SGD updates. Parameters live outside any
//! graph; each training step binds them as fresh leaves.

use super::graph::{Graph, TensorId, TensorError};
use super::real::Real;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { learning_rate: 1e-2, momentum: 0.9, batch_size: 4, seed: 0 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), String> {
        // zero is allowed: it freezes the targeted parameter group
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(format!("momentum must be in [0,1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Param<T: Real> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    velocity: Vec<T>,
    /// Parameters can be grouped so the IPPS alternation can update a subset.
    pub group: ParamGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Weights,
    PathWeights,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Real> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<T>, group: ParamGroup) -> usize {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "param {name}: shape/data mismatch");
        assert!(self.index_of(name).is_none(), "duplicate param name {name}");
        let velocity = vec![T::zero(); data.len()];
        self.params.push(Param { name: name.to_string(), shape: shape.to_vec(), data, velocity, group });
        self.params.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, idx: usize) -> &Param<T> {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param<T> {
        &mut self.params[idx]
    }

    /// Insert every parameter into `g` as a differentiable leaf, in store order.
    pub fn bind(&self, g: &mut Graph<T>) -> Result<Vec<TensorId>, TensorError> {
        self.params
            .iter()
            .map(|p| g.leaf(&p.shape, p.data.clone(), true))
            .collect()
    }

    /// One momentum-SGD step over the selected group (or all when `group` is None).
    ///
    /// v <- momentum * v + grad; p <- p - lr * v
    pub fn sgd_step(&mut self, grads: &[Vec<T>], cfg: &SgdConfig, group: Option<ParamGroup>) -> Result<(), TensorError> {
        assert_eq!(grads.len(), self.params.len());
        let lr = T::from_f64(cfg.learning_rate);
        let mu = T::from_f64(cfg.momentum);
        for (p, g) in self.params.iter_mut().zip(grads) {
            if let Some(sel) = group {
                if p.group != sel {
                    continue;
                }
            }
            assert_eq!(g.len(), p.data.len());
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite { op: "sgd_step" });
            }
            for i in 0..p.data.len() {
                p.velocity[i] = mu * p.velocity[i] + g[i];
                p.data[i] = p.data[i] - lr * p.velocity[i];
            }
        }
        Ok(())
    }

    pub fn reset_momentum(&mut self) {
        for p in &mut self.params {
            p.velocity.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// He fan-in normal initialization for a conv kernel of shape (O,I,kh,kw).
pub fn he_init<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<T> {
    let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
    let std = (2.0 / fan_in as f64).sqrt();
    (0..shape.iter().product())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64(z * std)
        })
        .collect()
}

pub fn uniform_init<T: Real>(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<T> {
    (0..n).map(|_| T::from_f64(rng.gen_range(lo..hi))).collect()
}
