//! L1-objective training with bias-corrected Adam.

use crate::data::{augment, sample_patch, PairedSample};
use crate::error::{Error, Result};
use crate::model::DinModel;
use crate::ops;
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::{backward, Tensor};

/// Mean absolute difference over all elements. The subgradient at exact
/// ties is 0; elsewhere it is sign(pred - target)/numel.
pub fn l1_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<Tensor<S>> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            context: "l1_loss",
            expected: pred.shape().to_string(),
            got: target.shape().to_string(),
        });
    }
    Ok(ops::mean_all(&ops::abs(&ops::sub(pred, target)?)))
}

/// Adam optimizer state: first/second moments per parameter plus the step
/// counter, with the restoration-training defaults beta1 = 0.9,
/// beta2 = 0.99, eps = 1e-8.
pub struct OptimState<S: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    pub step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> OptimState<S> {
    pub fn new(store: &ParamStore<S>, lr: f64) -> OptimState<S> {
        let m = store
            .iter()
            .map(|(_, p)| vec![S::ZERO; p.borrow().shape().numel()])
            .collect();
        let v = store
            .iter()
            .map(|(_, p)| vec![S::ZERO; p.borrow().shape().numel()])
            .collect();
        OptimState {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            lr,
            step: 0,
            m,
            v,
        }
    }

    /// One bias-corrected Adam update over every parameter in the store.
    /// Parameters without an accumulated gradient are treated as zero-grad
    /// (moments decay only). NaN/Inf gradients abort the step.
    pub fn adam_step(&mut self, store: &ParamStore<S>) -> Result<()> {
        self.step += 1;
        let b1 = S::from_f64(self.beta1);
        let b2 = S::from_f64(self.beta2);
        let one_m_b1 = S::from_f64(1.0 - self.beta1);
        let one_m_b2 = S::from_f64(1.0 - self.beta2);
        let bc1 = S::from_f64(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = S::from_f64(1.0 - self.beta2.powi(self.step as i32));
        let lr = S::from_f64(self.lr);
        let eps = S::from_f64(self.eps);

        for (slot, (name, param)) in store.iter().enumerate() {
            let tensor = param.borrow().clone();
            let grad = tensor
                .grad()
                .unwrap_or_else(|| vec![S::ZERO; tensor.shape().numel()]);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for parameter '{name}' at step {}",
                    self.step
                )));
            }
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            let mut data = tensor.data().to_vec();
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + one_m_b1 * g;
                v[i] = b2 * v[i] + one_m_b2 * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            *param.borrow_mut() = Tensor::from_vec(tensor.shape(), data)?.requires_grad();
        }
        Ok(())
    }
}

/// Training hyperparameters for the loop below.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    /// LQ-side patch size. Clamped to each image if larger.
    pub patch_size: usize,
    pub lr: f64,
    pub lr_decay_steps: u64,
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub augment: bool,
}

impl Default for TrainOptions {
    fn default() -> TrainOptions {
        TrainOptions {
            steps: 5000,
            batch_size: 8,
            patch_size: 48,
            lr: 1e-4,
            lr_decay_steps: 2000,
            lr_decay_factor: 0.5,
            seed: 0,
            augment: true,
        }
    }
}

/// Step-level training driver; callers own the loop, logging, checkpoints
/// and stop conditions.
pub struct Trainer<'a, S: Scalar> {
    pub model: &'a DinModel<S>,
    pub store: &'a ParamStore<S>,
    pub optim: OptimState<S>,
    data: &'a [PairedSample<S>],
    opts: TrainOptions,
    rng: Rng,
    step: u64,
}

impl<'a, S: Scalar> Trainer<'a, S> {
    pub fn new(
        model: &'a DinModel<S>,
        store: &'a ParamStore<S>,
        data: &'a [PairedSample<S>],
        opts: TrainOptions,
    ) -> Result<Trainer<'a, S>> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("training dataset is empty".into()));
        }
        let optim = OptimState::new(store, opts.lr);
        let rng = Rng::seed_from(opts.seed).derive(0x747261_696e);
        Ok(Trainer {
            model,
            store,
            optim,
            data,
            opts,
            rng,
            step: 0,
        })
    }

    pub fn current_step(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.optim.lr
    }

    fn assemble_batch(&mut self) -> Result<(Tensor<S>, Tensor<S>)> {
        let mut lqs = Vec::with_capacity(self.opts.batch_size);
        let mut hqs = Vec::with_capacity(self.opts.batch_size);
        for _ in 0..self.opts.batch_size {
            let pair = &self.data[self.rng.below(self.data.len())];
            let size = self
                .opts
                .patch_size
                .min(pair.lq.shape().h)
                .min(pair.lq.shape().w);
            let mut patch = sample_patch(pair, size, &mut self.rng)?;
            if self.opts.augment {
                patch = augment(&patch, &mut self.rng);
            }
            lqs.push(patch.lq);
            hqs.push(patch.hq);
        }
        Ok((stack_batch(&lqs)?, stack_batch(&hqs)?))
    }

    /// Run one optimization step and return the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        // Learning-rate step decay.
        if self.opts.lr_decay_steps > 0
            && self.step > 0
            && self.step % self.opts.lr_decay_steps == 0
        {
            self.optim.lr *= self.opts.lr_decay_factor;
        }
        let (lq, hq) = self.assemble_batch()?;
        self.store.rearm();
        let pred = self.model.forward(&lq)?;
        let loss = l1_loss(&pred, &hq)?;
        let loss_value = loss.item()?.to_f64();
        if !loss_value.is_finite() {
            return Err(Error::Numerical(format!(
                "training diverged: loss {loss_value} at step {}",
                self.step + 1
            )));
        }
        backward(&loss)?;
        self.optim.adam_step(self.store)?;
        self.step += 1;
        Ok(loss_value)
    }
}

/// Stack same-shaped 1 x C x H x W samples along the batch axis.
pub fn stack_batch<S: Scalar>(items: &[Tensor<S>]) -> Result<Tensor<S>> {
    let first = items
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?
        .shape();
    let mut data = Vec::with_capacity(items.len() * first.numel());
    for item in items {
        if item.shape() != first {
            return Err(Error::ShapeMismatch {
                context: "stack_batch",
                expected: first.to_string(),
                got: item.shape().to_string(),
            });
        }
        data.extend_from_slice(item.data());
    }
    Tensor::from_vec(
        Shape::new(items.len() * first.n, first.c, first.h, first.w),
        data,
    )
}
