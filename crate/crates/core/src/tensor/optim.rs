use std::collections::HashMap;

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// A named learnable tensor assigned to an optimizer group.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub group: usize,
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

/// Tape handles for every parameter of a set, produced by [`ParamSet::bind`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor, group: usize) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        let id = self.params.len();
        self.by_name.insert(name.to_string(), id);
        self.params.push(Param {
            name: name.to_string(),
            tensor: tensor.with_requires_grad(true),
            group,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Records every parameter as a tracked leaf on `tape`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.leaf(&p.tensor)).collect(),
        }
    }

    /// Adds the gradients of a backward pass into each parameter's slot.
    pub fn accumulate(&mut self, grads: &Gradients, bound: &Bound) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            grads.accumulate_into(v, &mut p.tensor)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Multiplies every gradient slot by `factor`.
    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            if let Some(g) = p.tensor.grad.as_mut() {
                g.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    /// Overwrites values from `(name, tensor)` pairs; every parameter must be
    /// present with a matching shape.
    pub fn load_values(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        let mut seen = vec![false; self.params.len()];
        for (name, t) in entries {
            let id = *self
                .by_name
                .get(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint has unknown parameter {name}")))?;
            let p = &mut self.params[id];
            if p.tensor.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    p.tensor.shape()
                )));
            }
            p.tensor.data_mut().copy_from_slice(t.data());
            seen[id] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!(
                "checkpoint lacks parameter {}",
                self.params[missing].name
            )));
        }
        Ok(())
    }
}

/// Hyper-parameters shared by all groups.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Adam with decoupled weight decay. Each parameter group has its own
/// learning rate.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    lrs: Vec<f64>,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, lrs: Vec<f64>, params: &ParamSet) -> Result<Self> {
        let c = &config;
        if !(c.beta1 > 0.0 && c.beta1 < 1.0 && c.beta2 > 0.0 && c.beta2 < 1.0) {
            return Err(Error::Config(format!(
                "AdamW betas must lie in (0, 1), got {} and {}",
                c.beta1, c.beta2
            )));
        }
        if c.eps <= 0.0 || c.weight_decay < 0.0 {
            return Err(Error::Config("AdamW needs eps > 0 and weight_decay >= 0".into()));
        }
        if lrs.iter().any(|&lr| lr <= 0.0) {
            return Err(Error::Config(format!("learning rates must be positive: {lrs:?}")));
        }
        if let Some(p) = params.iter().find(|p| p.group >= lrs.len()) {
            return Err(Error::Config(format!(
                "parameter {} is in group {} but only {} learning rates given",
                p.name,
                p.group,
                lrs.len()
            )));
        }
        Ok(AdamW {
            config,
            lrs,
            step_count: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn lr(&self, group: usize) -> f64 {
        self.lrs[group]
    }

    /// One update of every parameter from its gradient slot.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::contract("parameter set changed since optimizer creation"));
        }
        if let Some(p) = params.iter().find(|p| p.tensor.grad().is_none()) {
            return Err(Error::contract(format!("parameter {} has no gradient", p.name)));
        }
        self.step_count += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, p) in params.params.iter_mut().enumerate() {
            let lr = self.lrs[p.group];
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let grad = p.tensor.grad.as_ref().expect("checked above");
            let data = &mut p.tensor.data;
            for j in 0..data.len() {
                let g = grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] *= 1.0 - lr * weight_decay;
                data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        let id = ps.add("p", Tensor::scalar(value), 0).unwrap();
        ps.get_mut(id).accumulate_grad(&[grad]).unwrap();
        ps
    }

    fn cfg(weight_decay: f64) -> AdamWConfig {
        AdamWConfig {
            weight_decay,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut ps = single(0.7, 0.0);
        let mut opt = AdamW::new(cfg(0.0), vec![0.1], &ps).unwrap();
        opt.step(&mut ps).unwrap();
        assert_eq!(ps.iter().next().unwrap().tensor.data(), &[0.7]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = single(1.0, 1.0);
        let mut opt = AdamW::new(cfg(0.0), vec![0.1], &ps).unwrap();
        opt.step(&mut ps).unwrap();
        // m̂ = v̂ = 1 after bias correction
        let expect = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((ps.iter().next().unwrap().tensor.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut ps = single(1.0, 0.0);
        let mut opt = AdamW::new(cfg(0.1), vec![0.1], &ps).unwrap();
        opt.step(&mut ps).unwrap();
        assert!((ps.iter().next().unwrap().tensor.data()[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut ps = ParamSet::new();
        ps.add("encoder.w", Tensor::scalar(1.0), 0).unwrap();
        let mut opt = AdamW::new(cfg(0.0), vec![0.1], &ps).unwrap();
        let err = opt.step(&mut ps).unwrap_err().to_string();
        assert!(err.contains("encoder.w"), "{err}");
    }

    #[test]
    fn invalid_hyper_parameters_rejected() {
        let ps = single(1.0, 0.0);
        let bad = AdamWConfig {
            beta1: 1.0,
            ..AdamWConfig::default()
        };
        assert!(AdamW::new(bad, vec![0.1], &ps).is_err());
        assert!(AdamW::new(cfg(0.0), vec![0.0], &ps).is_err());
        assert!(AdamW::new(cfg(-1.0), vec![0.1], &ps).is_err());
        assert!(AdamW::new(cfg(0.0), vec![], &ps).is_err());
    }

    #[test]
    fn groups_use_their_own_rate() {
        let mut ps = ParamSet::new();
        let a = ps.add("a", Tensor::scalar(1.0), 0).unwrap();
        let b = ps.add("b", Tensor::scalar(1.0), 1).unwrap();
        ps.get_mut(a).accumulate_grad(&[1.0]).unwrap();
        ps.get_mut(b).accumulate_grad(&[1.0]).unwrap();
        let mut opt = AdamW::new(cfg(0.0), vec![1e-4, 1e-5], &ps).unwrap();
        opt.step(&mut ps).unwrap();
        assert!((1.0 - ps.get(a).data()[0] - 1e-4).abs() < 1e-12);
        assert!((1.0 - ps.get(b).data()[0] - 1e-5).abs() < 1e-12);
    }
}
