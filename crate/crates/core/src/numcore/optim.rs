use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Matrix;

/// A named learnable tensor with its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

/// Ordered collection of parameters; ids are insertion positions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Matrix) -> usize {
        let (r, c) = value.shape();
        let id = self.tensors.len();
        self.tensors.push(ParamTensor {
            name: name.to_string(),
            value,
            grad: Matrix::zeros(r, c),
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, id: usize) -> &ParamTensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut ParamTensor {
        &mut self.tensors[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.tensors.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.fill(0.0);
        }
    }

    /// Grows a parameter's row count, keeping the gradient buffer in step.
    pub fn grow_rows(&mut self, id: usize, extra: &Matrix) {
        let t = &mut self.tensors[id];
        t.value.push_rows(extra);
        let rows = t.value.rows();
        t.grad.resize_rows(rows);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 5e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    step: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &ParamStore) -> Self {
        let first: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
        let second = first.clone();
        OptimizerState {
            config,
            first,
            second,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Gradients are left untouched; the caller zeroes them.
    pub fn step(&mut self, params: &mut ParamStore) {
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            // tables can grow between steps; moments follow
            if self.first[i].shape() != p.value.shape() {
                self.first[i].resize_rows(p.value.rows());
                self.second[i].resize_rows(p.value.rows());
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let w = p.value.data_mut();
            let g = p.grad.data();
            for j in 0..w.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let mhat = m[j] / bias1;
                let vhat = v[j] / bias2;
                w[j] -= c.learning_rate * (mhat / (vhat.sqrt() + c.epsilon) + c.weight_decay * w[j]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Matrix::scalar(w));
        s
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let mut params = scalar_store(0.7);
        let config = OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = OptimizerState::new(config, &params);
        opt.step(&mut params);
        assert_eq!(params.get(0).value.item(), 0.7);
    }

    #[test]
    fn positive_grad_descends() {
        let mut params = scalar_store(1.0);
        params.get_mut(0).grad = Matrix::scalar(1.0);
        let config = OptimizerConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = OptimizerState::new(config, &params);
        opt.step(&mut params);
        assert!(params.get(0).value.item() < 1.0);
        // grads untouched
        assert_eq!(params.get(0).grad.item(), 1.0);
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut params = scalar_store(1.0);
            let mut opt = OptimizerState::new(OptimizerConfig::default(), &params);
            for i in 0..5 {
                params.get_mut(0).grad = Matrix::scalar(0.3 * i as f64 - 0.5);
                opt.step(&mut params);
            }
            params.get(0).value.item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
