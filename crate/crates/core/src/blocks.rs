//! Network building blocks: residual dense blocks, their densely weighted
//! cascade, and the attention unit that fuses two feature streams.

use crate::error::{Error, Result};
use crate::ops;
use crate::params::{Init, Param, ParamStore};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

/// A convolution layer backed by named parameters in a `ParamStore`.
pub struct ConvLayer<S: Scalar> {
    pub weight: Param<S>,
    pub bias: Option<Param<S>>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<S: Scalar> ConvLayer<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore<S>,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        residual_scaled: bool,
    ) -> Result<ConvLayer<S>> {
        let fan_in = cin * k * k;
        let init = if residual_scaled {
            Init::HeNormalResidual { fan_in }
        } else {
            Init::HeNormal { fan_in }
        };
        let weight = store.register(&format!("{prefix}.weight"), Shape::new(cout, cin, k, k), init)?;
        let bias = store.register(&format!("{prefix}.bias"), Shape::new(1, cout, 1, 1), Init::Zeros)?;
        Ok(ConvLayer {
            weight,
            bias: Some(bias),
            cin,
            cout,
            k,
            stride,
            pad,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let w = self.weight.borrow().clone();
        let b = self.bias.as_ref().map(|b| b.borrow().clone());
        ops::conv2d(x, &w, b.as_ref(), self.stride, self.pad)
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// Multiply-accumulate count on an input of the given spatial size.
    pub fn mult_adds(&self, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.out_dims(h, w);
        (self.cout * self.cin * self.k * self.k) as u64 * (oh * ow) as u64
    }
}

/// Residual dense block: K densely connected 3x3 conv + LeakyReLU layers,
/// a 1x1 local fusion back to C channels, a 3x3 conv, and a gamma-scaled
/// residual shortcut from the block input.
pub struct Rdb<S: Scalar> {
    pub layers: Vec<ConvLayer<S>>,
    pub fusion: ConvLayer<S>,
    pub tail: ConvLayer<S>,
    pub gamma: f64,
    pub channels: usize,
    pub growth: usize,
}

pub const LEAKY_SLOPE: f64 = 0.2;

impl<S: Scalar> Rdb<S> {
    pub fn new(
        store: &mut ParamStore<S>,
        prefix: &str,
        channels: usize,
        growth: usize,
        num_layers: usize,
        gamma: f64,
    ) -> Result<Rdb<S>> {
        let mut layers = Vec::with_capacity(num_layers);
        for k in 1..=num_layers {
            let cin = channels + (k - 1) * growth;
            layers.push(ConvLayer::new(
                store,
                &format!("{prefix}.layer{k}"),
                cin,
                growth,
                3,
                1,
                1,
                false,
            )?);
        }
        let fusion = ConvLayer::new(
            store,
            &format!("{prefix}.fusion"),
            channels + num_layers * growth,
            channels,
            1,
            1,
            0,
            false,
        )?;
        let tail = ConvLayer::new(
            store,
            &format!("{prefix}.tail"),
            channels,
            channels,
            3,
            1,
            1,
            true,
        )?;
        Ok(Rdb {
            layers,
            fusion,
            tail,
            gamma,
            channels,
            growth,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.shape().c != self.channels {
            return Err(Error::ShapeMismatch {
                context: "rdb_forward",
                expected: format!("{} channels", self.channels),
                got: x.shape().to_string(),
            });
        }
        let mut states: Vec<Tensor<S>> = vec![x.clone()];
        for layer in &self.layers {
            let refs: Vec<&Tensor<S>> = states.iter().collect();
            let stacked = ops::concat_channels_n(&refs)?;
            let out = ops::leaky_relu(&layer.forward(&stacked)?, LEAKY_SLOPE);
            states.push(out);
        }
        let refs: Vec<&Tensor<S>> = states.iter().collect();
        let fused = self.fusion.forward(&ops::concat_channels_n(&refs)?)?;
        let local = self.tail.forward(&fused)?;
        ops::add(&local, &ops::scale(x, self.gamma))
    }

    pub fn mult_adds(&self, h: usize, w: usize) -> u64 {
        self.layers
            .iter()
            .map(|l| l.mult_adds(h, w))
            .sum::<u64>()
            + self.fusion.mult_adds(h, w)
            + self.tail.mult_adds(h, w)
    }

    /// Closed-form parameter count for this block's configuration.
    pub fn expected_param_count(channels: usize, growth: usize, num_layers: usize) -> u64 {
        let dense: u64 = (1..=num_layers)
            .map(|k| ((channels + (k - 1) * growth) * growth * 9 + growth) as u64)
            .sum();
        let fusion = ((channels + num_layers * growth) * channels + channels) as u64;
        let tail = (channels * channels * 9 + channels) as u64;
        dense + fusion + tail
    }
}

/// Weighted residual dense block: an entry conv, a cascade of RDBs where
/// every earlier state feeds every later RDB through a learned per-channel
/// scaling (summed element-wise), and a local residual from the input.
pub struct Wrdb<S: Scalar> {
    pub entry: ConvLayer<S>,
    pub rdbs: Vec<Rdb<S>>,
    /// dwc[i] holds i+1 scaling vectors: sources X_0..X_i feeding RDB i+1.
    pub dwc: Vec<Vec<Param<S>>>,
    pub channels: usize,
}

impl<S: Scalar> Wrdb<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore<S>,
        prefix: &str,
        channels: usize,
        growth: usize,
        num_rdbs: usize,
        layers_per_rdb: usize,
        gamma: f64,
    ) -> Result<Wrdb<S>> {
        if num_rdbs == 0 {
            return Err(Error::InvalidArgument(
                "a weighted block needs at least one RDB".into(),
            ));
        }
        let entry = ConvLayer::new(store, &format!("{prefix}.entry"), channels, channels, 3, 1, 1, false)?;
        let mut rdbs = Vec::with_capacity(num_rdbs);
        let mut dwc = Vec::with_capacity(num_rdbs);
        for b in 1..=num_rdbs {
            rdbs.push(Rdb::new(
                store,
                &format!("{prefix}.rdb{b}"),
                channels,
                growth,
                layers_per_rdb,
                gamma,
            )?);
            // All-ones start: the weighted connections are initially neutral.
            let mut sources = Vec::with_capacity(b);
            for j in 0..b {
                sources.push(store.register(
                    &format!("{prefix}.dwc{b}.{j}"),
                    Shape::new(1, channels, 1, 1),
                    Init::Ones,
                )?);
            }
            dwc.push(sources);
        }
        Ok(Wrdb {
            entry,
            rdbs,
            dwc,
            channels,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.shape().c != self.channels {
            return Err(Error::ShapeMismatch {
                context: "wrdb_forward",
                expected: format!("{} channels", self.channels),
                got: x.shape().to_string(),
            });
        }
        let mut states: Vec<Tensor<S>> = vec![self.entry.forward(x)?];
        for (rdb, sources) in self.rdbs.iter().zip(&self.dwc) {
            let mut acc: Option<Tensor<S>> = None;
            for (state, weight) in states.iter().zip(sources) {
                let scaled = ops::depthwise_conv1x1(state, &weight.borrow().clone())?;
                acc = Some(match acc {
                    Some(a) => ops::add(&a, &scaled)?,
                    None => scaled,
                });
            }
            let block_in = acc.expect("at least one source per RDB");
            states.push(rdb.forward(&block_in)?);
        }
        ops::add(x, states.last().expect("nonempty"))
    }

    pub fn mult_adds(&self, h: usize, w: usize) -> u64 {
        let rdbs: u64 = self.rdbs.iter().map(|r| r.mult_adds(h, w)).sum();
        let dwc_terms: u64 = self
            .dwc
            .iter()
            .map(|sources| (sources.len() * self.channels * h * w) as u64)
            .sum();
        self.entry.mult_adds(h, w) + rdbs + dwc_terms
    }
}

/// Attention fusion of two equally shaped feature streams. The streams are
/// concatenated and squeezed to per-channel statistics; a bottleneck
/// produces two logit banks whose pairwise softmax yields per-channel
/// convex combination weights, independently per batch sample.
pub struct AsyCa<S: Scalar> {
    pub integrate: ConvLayer<S>,
    pub reduce: ConvLayer<S>,
    pub expand: ConvLayer<S>,
    pub channels: usize,
}

impl<S: Scalar> AsyCa<S> {
    pub fn new(
        store: &mut ParamStore<S>,
        prefix: &str,
        channels: usize,
        reduction: usize,
    ) -> Result<AsyCa<S>> {
        if channels % reduction != 0 {
            return Err(Error::InvalidArgument(format!(
                "channels {channels} must be divisible by reduction {reduction}"
            )));
        }
        let mid = channels / reduction;
        let integrate =
            ConvLayer::new(store, &format!("{prefix}.integrate"), 2 * channels, channels, 1, 1, 0, false)?;
        let reduce = ConvLayer::new(store, &format!("{prefix}.reduce"), channels, mid, 1, 1, 0, false)?;
        let expand = ConvLayer::new(store, &format!("{prefix}.expand"), mid, 2 * channels, 1, 1, 0, false)?;
        Ok(AsyCa {
            integrate,
            reduce,
            expand,
            channels,
        })
    }

    pub fn forward(&self, x1: &Tensor<S>, x2: &Tensor<S>) -> Result<Tensor<S>> {
        if x1.shape() != x2.shape() {
            return Err(Error::ShapeMismatch {
                context: "asyca_forward",
                expected: x1.shape().to_string(),
                got: x2.shape().to_string(),
            });
        }
        let (a1, a2) = self.attention(x1, x2)?;
        let lhs = ops::mul_channelwise(x1, &a1)?;
        let rhs = ops::mul_channelwise(x2, &a2)?;
        ops::add(&lhs, &rhs)
    }

    /// The two per-channel attention banks (each N x C x 1 x 1); they sum
    /// to one per channel by construction.
    pub fn attention(&self, x1: &Tensor<S>, x2: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let c = self.channels;
        let u = self.integrate.forward(&ops::concat_channels(x1, x2)?)?;
        let z = ops::global_avg_pool(&u)?;
        let mid = ops::relu(&self.reduce.forward(&z)?);
        let logits = self.expand.forward(&mid)?;
        let s1 = ops::slice_channels(&logits, 0, c)?;
        let s2 = ops::slice_channels(&logits, c, 2 * c)?;
        // Pairwise softmax: exp(s1)/(exp(s1)+exp(s2)) = sigmoid(s1 - s2).
        let a1 = ops::sigmoid(&ops::sub(&s1, &s2)?);
        let a2 = ops::sigmoid(&ops::sub(&s2, &s1)?);
        Ok((a1, a2))
    }

    pub fn mult_adds(&self, h: usize, w: usize) -> u64 {
        self.integrate.mult_adds(h, w) + self.reduce.mult_adds(1, 1) + self.expand.mult_adds(1, 1)
    }
}

/// Interleaved-node fusion strategies. The attention unit is the default;
/// the others exist as switchable baselines.
pub enum FusionNode<S: Scalar> {
    AsyCa(AsyCa<S>),
    Sum,
    Concat {
        project: ConvLayer<S>,
    },
    Se {
        reduce: ConvLayer<S>,
        expand: ConvLayer<S>,
        project: ConvLayer<S>,
    },
}

impl<S: Scalar> FusionNode<S> {
    pub fn new(
        store: &mut ParamStore<S>,
        prefix: &str,
        mode: crate::model::FusionMode,
        channels: usize,
        reduction: usize,
    ) -> Result<FusionNode<S>> {
        use crate::model::FusionMode;
        Ok(match mode {
            FusionMode::AsyCa => FusionNode::AsyCa(AsyCa::new(store, prefix, channels, reduction)?),
            FusionMode::Sum => FusionNode::Sum,
            FusionMode::Concat => FusionNode::Concat {
                project: ConvLayer::new(store, &format!("{prefix}.project"), 2 * channels, channels, 1, 1, 0, false)?,
            },
            FusionMode::Se => {
                let mid = (2 * channels / reduction).max(1);
                FusionNode::Se {
                    reduce: ConvLayer::new(store, &format!("{prefix}.reduce"), 2 * channels, mid, 1, 1, 0, false)?,
                    expand: ConvLayer::new(store, &format!("{prefix}.expand"), mid, 2 * channels, 1, 1, 0, false)?,
                    project: ConvLayer::new(store, &format!("{prefix}.project"), 2 * channels, channels, 1, 1, 0, false)?,
                }
            }
        })
    }

    pub fn forward(&self, x1: &Tensor<S>, x2: &Tensor<S>) -> Result<Tensor<S>> {
        match self {
            FusionNode::AsyCa(a) => a.forward(x1, x2),
            FusionNode::Sum => ops::add(x1, x2),
            FusionNode::Concat { project } => project.forward(&ops::concat_channels(x1, x2)?),
            FusionNode::Se {
                reduce,
                expand,
                project,
            } => {
                let t = ops::concat_channels(x1, x2)?;
                let z = ops::global_avg_pool(&t)?;
                let gate = ops::sigmoid(&expand.forward(&ops::relu(&reduce.forward(&z)?))?);
                project.forward(&ops::mul_channelwise(&t, &gate)?)
            }
        }
    }

    pub fn mult_adds(&self, h: usize, w: usize) -> u64 {
        match self {
            FusionNode::AsyCa(a) => a.mult_adds(h, w),
            FusionNode::Sum => 0,
            FusionNode::Concat { project } => project.mult_adds(h, w),
            FusionNode::Se {
                reduce,
                expand,
                project,
            } => reduce.mult_adds(1, 1) + expand.mult_adds(1, 1) + project.mult_adds(h, w),
        }
    }
}
