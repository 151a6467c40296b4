//! The full restoration network: interleaved branches of weighted residual
//! dense blocks, fusion at each interleaved node, global feature fusion,
//! task heads/tails, and global residual learning.

use std::cell::Cell;

use crate::blocks::{ConvLayer, FusionNode, Wrdb};
use crate::error::{Error, Result};
use crate::ops;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Sr,
    Derain,
    Deblur,
    Dehaze,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Sr => "sr",
            Task::Derain => "derain",
            Task::Deblur => "deblur",
            Task::Dehaze => "dehaze",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "sr" => Some(Task::Sr),
            "derain" => Some(Task::Derain),
            "deblur" => Some(Task::Deblur),
            "dehaze" => Some(Task::Dehaze),
            _ => None,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Task::Sr => 0,
            Task::Derain => 1,
            Task::Deblur => 2,
            Task::Dehaze => 3,
        }
    }

    pub fn from_tag(t: u8) -> Option<Task> {
        match t {
            0 => Some(Task::Sr),
            1 => Some(Task::Derain),
            2 => Some(Task::Deblur),
            3 => Some(Task::Dehaze),
            _ => None,
        }
    }
}

/// Fusion strategy at the interleaved nodes. The attention unit is the
/// default; the rest are switchable baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    AsyCa,
    Sum,
    Concat,
    Se,
}

impl FusionMode {
    pub fn name(self) -> &'static str {
        match self {
            FusionMode::AsyCa => "asyca",
            FusionMode::Sum => "sum",
            FusionMode::Concat => "concat",
            FusionMode::Se => "se",
        }
    }

    pub fn parse(s: &str) -> Option<FusionMode> {
        match s {
            "asyca" => Some(FusionMode::AsyCa),
            "sum" => Some(FusionMode::Sum),
            "concat" => Some(FusionMode::Concat),
            "se" => Some(FusionMode::Se),
            _ => None,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            FusionMode::AsyCa => 0,
            FusionMode::Sum => 1,
            FusionMode::Concat => 2,
            FusionMode::Se => 3,
        }
    }

    pub fn from_tag(t: u8) -> Option<FusionMode> {
        match t {
            0 => Some(FusionMode::AsyCa),
            1 => Some(FusionMode::Sum),
            2 => Some(FusionMode::Concat),
            3 => Some(FusionMode::Se),
            _ => None,
        }
    }
}

/// All architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    /// Upscaling factor: 2/3/4/8 for sr, 1 for derain, 4 (internal
    /// downsample then upsample) for deblur and dehaze.
    pub scale: usize,
    /// Branch count M.
    pub branches: usize,
    /// Weighted blocks per branch, D.
    pub blocks_per_branch: usize,
    /// RDBs per weighted block, B.
    pub rdbs_per_block: usize,
    /// Conv layers per RDB, K.
    pub layers_per_rdb: usize,
    /// Growth rate G.
    pub growth: usize,
    /// Feature width C.
    pub channels: usize,
    /// Bottleneck reduction ratio r.
    pub reduction: usize,
    /// Residual scaling inside each RDB; a fixed constant, never trained.
    pub gamma: f64,
    pub fusion: FusionMode,
}

impl ModelConfig {
    /// Full-size super-resolution configuration (M=4, D=5, B=3, K=6, G=32, C=64).
    pub fn sr(scale: usize) -> ModelConfig {
        ModelConfig {
            task: Task::Sr,
            scale,
            branches: 4,
            blocks_per_branch: 5,
            rdbs_per_block: 3,
            layers_per_rdb: 6,
            growth: 32,
            channels: 64,
            reduction: 4,
            gamma: 0.1,
            fusion: FusionMode::AsyCa,
        }
    }

    pub fn for_task(task: Task) -> ModelConfig {
        let mut cfg = ModelConfig::sr(2);
        cfg.task = task;
        cfg.scale = match task {
            Task::Sr => 2,
            Task::Derain => 1,
            Task::Deblur | Task::Dehaze => 4,
        };
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::InvalidArgument(msg));
        if self.branches < 1
            || self.blocks_per_branch < 1
            || self.rdbs_per_block < 1
            || self.layers_per_rdb < 1
        {
            return err("branch/block/rdb/layer counts must all be >= 1".into());
        }
        if self.channels == 0 || self.growth == 0 {
            return err("channels and growth must be positive".into());
        }
        if self.reduction == 0 || self.channels % self.reduction != 0 {
            return err(format!(
                "channels ({}) must be divisible by the reduction ratio ({})",
                self.channels, self.reduction
            ));
        }
        match self.task {
            Task::Sr => {
                if ![2, 3, 4, 8].contains(&self.scale) {
                    return err(format!("sr scale must be one of 2/3/4/8, got {}", self.scale));
                }
            }
            Task::Derain => {
                if self.scale != 1 {
                    return err(format!("derain uses scale 1, got {}", self.scale));
                }
            }
            Task::Deblur | Task::Dehaze => {
                if self.scale != 4 {
                    return err(format!(
                        "{} uses the fixed internal scale 4, got {}",
                        self.task.name(),
                        self.scale
                    ));
                }
            }
        }
        Ok(())
    }

    /// Expected hq/lq dimension ratio of dataset pairs: the upscaling
    /// factor for sr, 1 for the equal-size tasks (deblur/dehaze resample
    /// internally only).
    pub fn pair_scale(&self) -> usize {
        match self.task {
            Task::Sr => self.scale,
            _ => 1,
        }
    }

    /// Shuffle factors of the sub-pixel reconstruction stages.
    pub fn tail_stages(&self) -> Vec<usize> {
        match self.task {
            Task::Derain => vec![],
            Task::Deblur | Task::Dehaze => vec![4],
            Task::Sr => match self.scale {
                2 => vec![2],
                3 => vec![3],
                4 => vec![4],
                8 => vec![2, 2, 2],
                _ => unreachable!("validated"),
            },
        }
    }

    fn uses_downsampling_head(&self) -> bool {
        matches!(self.task, Task::Deblur | Task::Dehaze)
    }
}

struct Head<S: Scalar> {
    extract: ConvLayer<S>,
    /// 8x8 stride-4 pad-2 conv for the tasks that run the trunk at quarter
    /// resolution.
    downsample: Option<ConvLayer<S>>,
}

struct TailStage<S: Scalar> {
    conv: ConvLayer<S>,
    shuffle: usize,
}

struct Tail<S: Scalar> {
    stages: Vec<TailStage<S>>,
    reconstruct: ConvLayer<S>,
}

pub const IMAGE_CHANNELS: usize = 3;

/// The assembled network. Parameters live in the associated `ParamStore`;
/// the model holds shared handles to them.
pub struct DinModel<S: Scalar> {
    pub cfg: ModelConfig,
    head: Head<S>,
    branches: Vec<Vec<Wrdb<S>>>,
    /// fusions[m-2][d-1] is the interleaved node feeding branch m, depth d.
    fusions: Vec<Vec<FusionNode<S>>>,
    gff1: ConvLayer<S>,
    gff2: ConvLayer<S>,
    tail: Tail<S>,
    fusion_calls: Cell<u64>,
}

impl<S: Scalar> DinModel<S> {
    pub fn new(cfg: ModelConfig, store: &mut ParamStore<S>) -> Result<DinModel<S>> {
        cfg.validate()?;
        let c = cfg.channels;
        let extract = ConvLayer::new(store, "head.extract", IMAGE_CHANNELS, c, 3, 1, 1, false)?;
        let downsample = cfg
            .uses_downsampling_head()
            .then(|| ConvLayer::new(store, "head.downsample", c, c, 8, 4, 2, false))
            .transpose()?;

        let mut branches = Vec::with_capacity(cfg.branches);
        for m in 1..=cfg.branches {
            let mut blocks = Vec::with_capacity(cfg.blocks_per_branch);
            for d in 1..=cfg.blocks_per_branch {
                blocks.push(Wrdb::new(
                    store,
                    &format!("branch{m}.block{d}"),
                    c,
                    cfg.growth,
                    cfg.rdbs_per_block,
                    cfg.layers_per_rdb,
                    cfg.gamma,
                )?);
            }
            branches.push(blocks);
        }

        let mut fusions = Vec::new();
        for m in 2..=cfg.branches {
            let mut level = Vec::with_capacity(cfg.blocks_per_branch);
            for d in 1..=cfg.blocks_per_branch {
                level.push(FusionNode::new(
                    store,
                    &format!("fuse{m}.{d}"),
                    cfg.fusion,
                    c,
                    cfg.reduction,
                )?);
            }
            fusions.push(level);
        }

        let gff1 = ConvLayer::new(store, "gff1", cfg.branches * c, c, 1, 1, 0, true)?;
        let gff2 = ConvLayer::new(store, "gff2", cfg.blocks_per_branch * c, c, 1, 1, 0, true)?;

        let mut stages = Vec::new();
        for (i, r) in cfg.tail_stages().into_iter().enumerate() {
            stages.push(TailStage {
                conv: ConvLayer::new(
                    store,
                    &format!("tail.up{}", i + 1),
                    c,
                    c * r * r,
                    3,
                    1,
                    1,
                    false,
                )?,
                shuffle: r,
            });
        }
        let reconstruct =
            ConvLayer::new(store, "tail.reconstruct", c, IMAGE_CHANNELS, 3, 1, 1, true)?;

        Ok(DinModel {
            cfg,
            head: Head {
                extract,
                downsample,
            },
            branches,
            fusions,
            gff1,
            gff2,
            tail: Tail {
                stages,
                reconstruct,
            },
            fusion_calls: Cell::new(0),
        })
    }

    /// Build a model together with a freshly seeded parameter store.
    pub fn build(cfg: ModelConfig, seed: u64) -> Result<(DinModel<S>, ParamStore<S>)> {
        let mut store = ParamStore::new(seed);
        let model = DinModel::new(cfg, &mut store)?;
        Ok((model, store))
    }

    /// Branch blocks, indexed [branch][depth].
    pub fn branch_blocks(&self) -> &[Vec<Wrdb<S>>] {
        &self.branches
    }

    /// Interleaved fusion nodes, indexed [branch-2][depth].
    pub fn fusion_nodes(&self) -> &[Vec<FusionNode<S>>] {
        &self.fusions
    }

    /// The two global feature fusion convolutions.
    pub fn gff_layers(&self) -> (&ConvLayer<S>, &ConvLayer<S>) {
        (&self.gff1, &self.gff2)
    }

    /// Number of interleaved-node fusion invocations since the last reset.
    pub fn fusion_invocations(&self) -> u64 {
        self.fusion_calls.get()
    }

    pub fn reset_fusion_count(&self) {
        self.fusion_calls.set(0);
    }

    fn fuse(&self, node: &FusionNode<S>, x1: &Tensor<S>, x2: &Tensor<S>) -> Result<Tensor<S>> {
        self.fusion_calls.set(self.fusion_calls.get() + 1);
        node.forward(x1, x2)
    }

    /// The interleaved multi-branch trunk with global feature fusion.
    ///
    /// Branch 1 is a plain cascade from `f0`. Every later branch m fuses,
    /// at depth 1, the previous branch's final and first states, and at
    /// depth d >= 2 the previous branch's same-depth state with its own
    /// previous output. Two 1x1 convolutions aggregate the branch-final
    /// states and the last branch's intermediate states (plus f0), and
    /// their sum is returned.
    pub fn imbf_forward(&self, f0: &Tensor<S>) -> Result<Tensor<S>> {
        if f0.shape().c != self.cfg.channels {
            return Err(Error::ShapeMismatch {
                context: "imbf_forward",
                expected: format!("{} channels", self.cfg.channels),
                got: f0.shape().to_string(),
            });
        }
        let m_total = self.cfg.branches;
        let d_total = self.cfg.blocks_per_branch;
        if m_total == 1 && !self.fusions.is_empty() {
            return Err(Error::InvalidArgument(
                "single-branch model must not carry fusion nodes".into(),
            ));
        }

        let mut branch_finals: Vec<Tensor<S>> = Vec::with_capacity(m_total);
        let mut prev: Vec<Tensor<S>> = Vec::with_capacity(d_total);
        let mut x = f0.clone();
        for block in &self.branches[0] {
            x = block.forward(&x)?;
            prev.push(x.clone());
        }
        branch_finals.push(prev[d_total - 1].clone());

        for m in 2..=m_total {
            let blocks = &self.branches[m - 1];
            let level = &self.fusions[m - 2];
            let mut current: Vec<Tensor<S>> = Vec::with_capacity(d_total);
            for d in 1..=d_total {
                let fused = if d == 1 {
                    self.fuse(&level[0], &prev[d_total - 1], &prev[0])?
                } else {
                    self.fuse(&level[d - 1], &prev[d - 1], &current[d - 2])?
                };
                current.push(blocks[d - 1].forward(&fused)?);
            }
            branch_finals.push(current[d_total - 1].clone());
            prev = current;
        }

        let final_refs: Vec<&Tensor<S>> = branch_finals.iter().collect();
        let gf1 = self.gff1.forward(&ops::concat_channels_n(&final_refs)?)?;
        let mut shallow_refs: Vec<&Tensor<S>> = prev[..d_total - 1].iter().collect();
        shallow_refs.push(f0);
        let gf2 = self.gff2.forward(&ops::concat_channels_n(&shallow_refs)?)?;
        ops::add(&gf1, &gf2)
    }

    /// Full restoration forward pass: head, trunk, reconstruction tail and
    /// the global residual (the bicubic-upscaled input for sr, the input
    /// itself otherwise).
    pub fn forward(&self, lq: &Tensor<S>) -> Result<Tensor<S>> {
        let s = lq.shape();
        if s.c != IMAGE_CHANNELS {
            return Err(Error::ShapeMismatch {
                context: "din_forward",
                expected: format!("{IMAGE_CHANNELS}-channel image"),
                got: s.to_string(),
            });
        }
        if self.cfg.uses_downsampling_head() && (s.h % 4 != 0 || s.w % 4 != 0) {
            return Err(Error::InvalidArgument(format!(
                "{} input must have H and W divisible by 4 (got {}x{}); \
                 apply reflect_pad_to_multiple(img, 4) and crop the output",
                self.cfg.task.name(),
                s.h,
                s.w
            )));
        }

        let mut f = self.head.extract.forward(lq)?;
        if let Some(down) = &self.head.downsample {
            f = down.forward(&f)?;
        }
        let deep = self.imbf_forward(&f)?;

        let mut y = deep;
        for stage in &self.tail.stages {
            y = ops::pixel_shuffle(&stage.conv.forward(&y)?, stage.shuffle)?;
        }
        let restored = self.tail.reconstruct.forward(&y)?;

        let base = match self.cfg.task {
            Task::Sr => ops::bicubic_resize(lq, self.cfg.scale as f64)?,
            _ => lq.clone(),
        };
        let out = ops::add(&restored, &base)?;

        let expect = match self.cfg.task {
            Task::Sr => (s.h * self.cfg.scale, s.w * self.cfg.scale),
            _ => (s.h, s.w),
        };
        if out.shape().spatial() != expect {
            return Err(Error::Numerical(format!(
                "internal shape contract violated: produced {}, expected {}x{} output",
                out.shape(),
                expect.0,
                expect.1
            )));
        }
        Ok(out)
    }

    /// Exact count of trainable scalars reachable from `store`.
    pub fn count_params(store: &ParamStore<S>) -> u64 {
        store.count_scalars()
    }

    /// Total conv multiply-accumulates (plus the depth-wise C*H*W terms) of
    /// one forward pass on an H x W input, following the internal
    /// resolution changes of the task head and tail.
    pub fn count_mult_adds(&self, input_h: usize, input_w: usize) -> u64 {
        let mut total = self.head.extract.mult_adds(input_h, input_w);
        let (mut h, mut w) = (input_h, input_w);
        if let Some(down) = &self.head.downsample {
            total += down.mult_adds(h, w);
            let d = down.out_dims(h, w);
            h = d.0;
            w = d.1;
        }
        for branch in &self.branches {
            for block in branch {
                total += block.mult_adds(h, w);
            }
        }
        for level in &self.fusions {
            for node in level {
                total += node.mult_adds(h, w);
            }
        }
        total += self.gff1.mult_adds(h, w) + self.gff2.mult_adds(h, w);
        let (mut th, mut tw) = (h, w);
        for stage in &self.tail.stages {
            total += stage.conv.mult_adds(th, tw);
            th *= stage.shuffle;
            tw *= stage.shuffle;
        }
        total + self.tail.reconstruct.mult_adds(th, tw)
    }
}

/// Average the model over the 8 dihedral transforms of the input: each
/// variant is pushed through `forward`, inverse-transformed, and the results
/// are combined by a pairwise tree so that identical outputs average back
/// bit-exactly.
pub fn self_ensemble<S: Scalar>(
    forward: impl Fn(&Tensor<S>) -> Result<Tensor<S>>,
    lq: &Tensor<S>,
) -> Result<Tensor<S>> {
    let mut outputs: Vec<Tensor<S>> = Vec::with_capacity(8);
    for idx in 0..8 {
        let transformed = ops::dihedral(lq, idx);
        let restored = forward(&transformed)?;
        outputs.push(ops::dihedral_inverse(&restored, idx));
    }
    let shape = outputs[0].shape();
    for o in &outputs[1..] {
        if o.shape() != shape {
            return Err(Error::ShapeMismatch {
                context: "self_ensemble outputs",
                expected: shape.to_string(),
                got: o.shape().to_string(),
            });
        }
    }
    let p01 = ops::add(&outputs[0], &outputs[1])?;
    let p23 = ops::add(&outputs[2], &outputs[3])?;
    let p45 = ops::add(&outputs[4], &outputs[5])?;
    let p67 = ops::add(&outputs[6], &outputs[7])?;
    let q0 = ops::add(&p01, &p23)?;
    let q1 = ops::add(&p45, &p67)?;
    Ok(ops::scale(&ops::add(&q0, &q1)?, 0.125))
}

/// Pad the spatial dims up to the next multiple of `m` by mirroring
/// interior rows/columns (reflect without repeating the edge). Returns the
/// padded tensor and the original dims for cropping the output back.
pub fn reflect_pad_to_multiple<S: Scalar>(
    t: &Tensor<S>,
    m: usize,
) -> Result<(Tensor<S>, (usize, usize))> {
    let s = t.shape();
    let target_h = s.h.div_ceil(m) * m;
    let target_w = s.w.div_ceil(m) * m;
    if target_h == s.h && target_w == s.w {
        return Ok((t.detach(), (s.h, s.w)));
    }
    if s.h < 2 && target_h != s.h || s.w < 2 && target_w != s.w {
        return Err(Error::InvalidArgument(
            "image too small for reflect padding".into(),
        ));
    }
    let out_shape = crate::shape::Shape::new(s.n, s.c, target_h, target_w);
    let mut data = vec![S::ZERO; out_shape.numel()];
    let x = t.data();
    let reflect = |i: usize, len: usize| -> usize {
        if i < len {
            i
        } else {
            // Mirror across the last valid index.
            let over = i - (len - 1);
            len - 1 - over
        }
    };
    for n in 0..s.n {
        for c in 0..s.c {
            for h in 0..target_h {
                let sh = reflect(h, s.h);
                for w in 0..target_w {
                    let sw = reflect(w, s.w);
                    data[out_shape.index(n, c, h, w)] = x[s.index(n, c, sh, sw)];
                }
            }
        }
    }
    Ok((Tensor::from_vec(out_shape, data)?, (s.h, s.w)))
}

/// Crop the top-left h x w window (used after `reflect_pad_to_multiple`).
pub fn crop<S: Scalar>(t: &Tensor<S>, h: usize, w: usize) -> Result<Tensor<S>> {
    let s = t.shape();
    if h > s.h || w > s.w {
        return Err(Error::InvalidArgument(format!(
            "crop {h}x{w} exceeds {}, cannot crop",
            s
        )));
    }
    let out_shape = crate::shape::Shape::new(s.n, s.c, h, w);
    let mut data = vec![S::ZERO; out_shape.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for hh in 0..h {
                let src = s.index(n, c, hh, 0);
                let dst = out_shape.index(n, c, hh, 0);
                data[dst..dst + w].copy_from_slice(&t.data()[src..src + w]);
            }
        }
    }
    Tensor::from_vec(out_shape, data)
}
