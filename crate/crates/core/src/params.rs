use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

/// Shared handle to a trainable tensor. The optimizer swaps the tensor for
/// an updated leaf after each step; forward passes clone the handle cheaply.
pub type Param<S> = Rc<RefCell<Tensor<S>>>;

/// Initialization scheme for a registered parameter.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Zero-mean normal with variance 2/fan_in.
    HeNormal { fan_in: usize },
    /// He normal additionally scaled by 0.1, for convolutions whose output
    /// feeds a residual sum; keeps the residual branches small at start.
    HeNormalResidual { fan_in: usize },
    Zeros,
    Ones,
}

/// Named, ordered collection of trainable tensors with deterministic
/// initialization: a fixed seed and registration order fully determine
/// every initial value.
pub struct ParamStore<S: Scalar> {
    entries: Vec<(String, Param<S>)>,
    index: HashMap<String, usize>,
    rng: Rng,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new(seed: u64) -> ParamStore<S> {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
            rng: Rng::seed_from(seed).derive(0x70617261_6d73),
        }
    }

    pub fn register(&mut self, name: &str, shape: Shape, init: Init) -> Result<Param<S>> {
        if self.index.get(name).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name '{name}'"
            )));
        }
        let numel = shape.numel();
        let data: Vec<S> = match init {
            Init::Zeros => vec![S::ZERO; numel],
            Init::Ones => vec![S::ONE; numel],
            Init::HeNormal { fan_in } | Init::HeNormalResidual { fan_in } => {
                let mut std = (2.0 / fan_in as f64).sqrt();
                if matches!(init, Init::HeNormalResidual { .. }) {
                    std *= 0.1;
                }
                (0..numel)
                    .map(|_| S::from_f64(self.rng.normal() * std))
                    .collect()
            }
        };
        let tensor = Tensor::from_vec(shape, data)?.requires_grad();
        let param = Rc::new(RefCell::new(tensor));
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), Rc::clone(&param)));
        Ok(param)
    }

    pub fn get(&self, name: &str) -> Option<&Param<S>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<S>)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), p))
    }

    /// Total number of trainable scalars.
    pub fn count_scalars(&self) -> u64 {
        self.entries
            .iter()
            .map(|(_, p)| p.borrow().shape().numel() as u64)
            .sum()
    }

    /// Replace every tensor with a fresh gradient leaf holding the same
    /// data. Clears any accumulated gradients.
    pub fn rearm(&self) {
        for (_, p) in &self.entries {
            let fresh = p.borrow().detach().requires_grad();
            *p.borrow_mut() = fresh;
        }
    }

    /// Drop autograd participation entirely (inference mode).
    pub fn detach_all(&self) {
        for (_, p) in &self.entries {
            let detached = p.borrow().detach();
            *p.borrow_mut() = detached;
        }
    }

    /// Overwrite one parameter's data, keeping its shape contract.
    pub fn set_data(&self, name: &str, data: Vec<S>) -> Result<()> {
        let param = self.get(name).ok_or_else(|| {
            Error::Format(format!("unknown parameter '{name}' in checkpoint"))
        })?;
        let shape = param.borrow().shape();
        if data.len() != shape.numel() {
            return Err(Error::ShapeMismatch {
                context: "parameter load",
                expected: format!("{} values for {name} ({shape})", shape.numel()),
                got: format!("{} values", data.len()),
            });
        }
        *param.borrow_mut() = Tensor::from_vec(shape, data)?.requires_grad();
        Ok(())
    }
}
