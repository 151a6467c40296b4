//! Degradation synthesis, color conversion, and training-sample
//! preparation (aligned patch extraction and dihedral augmentation).

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image_io;
use crate::ops;
use crate::rng::{fnv1a, Rng};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegradationKind {
    /// Bicubic downsampling.
    Bi,
    /// Gaussian blur followed by bicubic downsampling.
    Bd,
    /// Bicubic downsampling followed by additive Gaussian noise.
    Dn,
}

impl DegradationKind {
    pub fn name(self) -> &'static str {
        match self {
            DegradationKind::Bi => "BI",
            DegradationKind::Bd => "BD",
            DegradationKind::Dn => "DN",
        }
    }

    pub fn parse(s: &str) -> Option<DegradationKind> {
        match s.to_ascii_uppercase().as_str() {
            "BI" => Some(DegradationKind::Bi),
            "BD" => Some(DegradationKind::Bd),
            "DN" => Some(DegradationKind::Dn),
            _ => None,
        }
    }
}

/// Which degradation to apply, with its parameters and RNG seed.
#[derive(Debug, Clone, Copy)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub scale: usize,
    pub blur_kernel_size: usize,
    /// Gaussian standard deviation for BD.
    pub blur_sigma: f64,
    /// Noise sigma for DN on the 0-255 range.
    pub noise_level: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn bi(scale: usize, seed: u64) -> DegradationSpec {
        DegradationSpec {
            kind: DegradationKind::Bi,
            scale,
            blur_kernel_size: 7,
            blur_sigma: 1.6,
            noise_level: 0.0,
            seed,
        }
    }

    pub fn bd(seed: u64) -> DegradationSpec {
        DegradationSpec {
            kind: DegradationKind::Bd,
            scale: 3,
            blur_kernel_size: 7,
            blur_sigma: 1.6,
            noise_level: 0.0,
            seed,
        }
    }

    pub fn dn(seed: u64) -> DegradationSpec {
        DegradationSpec {
            kind: DegradationKind::Dn,
            scale: 3,
            blur_kernel_size: 7,
            blur_sigma: 1.6,
            noise_level: 30.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![1, 2, 3, 4, 8].contains(&self.scale) {
            return Err(Error::InvalidArgument(format!(
                "degradation scale must be one of 1/2/3/4/8, got {}",
                self.scale
            )));
        }
        if self.blur_kernel_size == 0 || self.blur_kernel_size % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "blur kernel size must be odd and positive, got {}",
                self.blur_kernel_size
            )));
        }
        if self.blur_sigma <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "blur sigma must be positive, got {}",
                self.blur_sigma
            )));
        }
        if self.noise_level < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise level must be non-negative, got {}",
                self.noise_level
            )));
        }
        Ok(())
    }

    /// Same spec with a per-sample stream seed derived from the sample id.
    pub fn for_sample(&self, id: &str) -> DegradationSpec {
        let mut spec = *self;
        spec.seed = Rng::seed_from(self.seed).derive(fnv1a(id.as_bytes())).next_u64();
        spec
    }
}

/// Normalized 2-D Gaussian kernel (sums to 1).
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as isize;
    let mut k = Vec::with_capacity(size * size);
    let denom = 2.0 * sigma * sigma;
    for dy in -half..=half {
        for dx in -half..=half {
            k.push((-((dy * dy + dx * dx) as f64) / denom).exp());
        }
    }
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// 2-D convolution with mirror (reflect-without-edge) padding, per channel.
pub fn gaussian_blur<S: Scalar>(img: &Tensor<S>, size: usize, sigma: f64) -> Tensor<S> {
    let kernel = gaussian_kernel(size, sigma);
    let s = img.shape();
    let half = (size / 2) as isize;
    let x = img.data();
    let mut out = vec![S::ZERO; s.numel()];
    let reflect = |i: isize, len: usize| -> usize {
        let len = len as isize;
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= len {
            i = 2 * (len - 1) - i;
        }
        i as usize
    };
    for n in 0..s.n {
        for c in 0..s.c {
            for h in 0..s.h {
                for w in 0..s.w {
                    let mut acc = 0.0;
                    for dy in -half..=half {
                        let ih = reflect(h as isize + dy, s.h);
                        for dx in -half..=half {
                            let iw = reflect(w as isize + dx, s.w);
                            let kv = kernel[((dy + half) * (size as isize) + dx + half) as usize];
                            acc += kv * x[s.index(n, c, ih, iw)].to_f64();
                        }
                    }
                    out[s.index(n, c, h, w)] = S::from_f64(acc);
                }
            }
        }
    }
    Tensor::from_vec(s, out).expect("same numel")
}

fn clamp01<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    let data: Vec<S> = t
        .data()
        .iter()
        .map(|&v| v.maxs(S::ZERO).mins(S::ONE))
        .collect();
    Tensor::from_vec(t.shape(), data).expect("same numel")
}

/// Synthesize the low-quality counterpart of `hq` under `spec`.
/// Deterministic: identical (hq, spec) always give identical bytes.
pub fn degrade<S: Scalar>(hq: &Tensor<S>, spec: &DegradationSpec) -> Result<Tensor<S>> {
    spec.validate()?;
    let s = hq.shape();
    if s.h % spec.scale != 0 || s.w % spec.scale != 0 {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} not divisible by degradation scale {}",
            s.h, s.w, spec.scale
        )));
    }
    let inv = 1.0 / spec.scale as f64;
    let lq = match spec.kind {
        DegradationKind::Bi => ops::bicubic_resize(hq, inv)?,
        DegradationKind::Bd => {
            let blurred = gaussian_blur(hq, spec.blur_kernel_size, spec.blur_sigma);
            ops::bicubic_resize(&blurred, inv)?
        }
        DegradationKind::Dn => {
            let down = ops::bicubic_resize(hq, inv)?;
            let sigma = spec.noise_level / 255.0;
            let mut rng = Rng::seed_from(spec.seed);
            let noisy: Vec<S> = down
                .data()
                .iter()
                .map(|&v| v + S::from_f64(sigma * rng.normal()))
                .collect();
            Tensor::from_vec(down.shape(), noisy)?
        }
    };
    Ok(clamp01(&lq.detach()))
}

/// ITU-R BT.601 studio-swing luma: (65.481 R + 128.553 G + 24.966 B + 16)/255
/// on [0, 1] inputs. Output range is [16/255, 235/255].
pub fn rgb_to_y<S: Scalar>(img: &Tensor<S>) -> Result<Tensor<S>> {
    let s = img.shape();
    if s.c != 3 {
        return Err(Error::ShapeMismatch {
            context: "rgb_to_y",
            expected: "3-channel image".into(),
            got: s.to_string(),
        });
    }
    let hw = s.h * s.w;
    let x = img.data();
    let mut out = vec![S::ZERO; s.n * hw];
    for n in 0..s.n {
        let base = n * 3 * hw;
        for p in 0..hw {
            let r = x[base + p].to_f64();
            let g = x[base + hw + p].to_f64();
            let b = x[base + 2 * hw + p].to_f64();
            out[n * hw + p] = S::from_f64((65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0);
        }
    }
    Tensor::from_vec(Shape::new(s.n, 1, s.h, s.w), out)
}

/// A training pair. For super-resolution the hq dims are scale times the lq
/// dims; for the other tasks they are equal.
#[derive(Clone)]
pub struct PairedSample<S: Scalar> {
    pub lq: Tensor<S>,
    pub hq: Tensor<S>,
    pub id: String,
}

impl<S: Scalar> PairedSample<S> {
    pub fn scale(&self) -> usize {
        self.hq.shape().h / self.lq.shape().h.max(1)
    }
}

/// Aligned random crop: an lq_size window from the LQ image and the
/// corresponding scale-multiplied window from the HQ image.
pub fn sample_patch<S: Scalar>(
    pair: &PairedSample<S>,
    lq_size: usize,
    rng: &mut Rng,
) -> Result<PairedSample<S>> {
    let ls = pair.lq.shape();
    let hs = pair.hq.shape();
    if ls.h < lq_size || ls.w < lq_size {
        return Err(Error::InvalidArgument(format!(
            "image {} ({}x{}) smaller than patch size {lq_size}",
            pair.id, ls.h, ls.w
        )));
    }
    let scale = hs.h / ls.h;
    if scale == 0 || hs.h != ls.h * scale || hs.w != ls.w * scale {
        return Err(Error::ShapeMismatch {
            context: "sample_patch pair alignment",
            expected: format!("hq dims an integer multiple of lq {}x{}", ls.h, ls.w),
            got: format!("{}x{}", hs.h, hs.w),
        });
    }
    let oy = rng.below(ls.h - lq_size + 1);
    let ox = rng.below(ls.w - lq_size + 1);
    let lq = crop_window(&pair.lq, oy, ox, lq_size, lq_size);
    let hq = crop_window(
        &pair.hq,
        oy * scale,
        ox * scale,
        lq_size * scale,
        lq_size * scale,
    );
    Ok(PairedSample {
        lq,
        hq,
        id: pair.id.clone(),
    })
}

fn crop_window<S: Scalar>(t: &Tensor<S>, oy: usize, ox: usize, h: usize, w: usize) -> Tensor<S> {
    let s = t.shape();
    let out = Shape::new(s.n, s.c, h, w);
    let mut data = vec![S::ZERO; out.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for row in 0..h {
                let src = s.index(n, c, oy + row, ox);
                let dst = out.index(n, c, row, 0);
                data[dst..dst + w].copy_from_slice(&t.data()[src..src + w]);
            }
        }
    }
    Tensor::from_vec(out, data).expect("same numel")
}

/// One of the 8 dihedral variants, applied identically to both images.
pub fn augment<S: Scalar>(pair: &PairedSample<S>, rng: &mut Rng) -> PairedSample<S> {
    let idx = rng.below(8);
    PairedSample {
        lq: ops::dihedral(&pair.lq, idx),
        hq: ops::dihedral(&pair.hq, idx),
        id: pair.id.clone(),
    }
}

/// Paired dataset on disk: `root/hq/*.png` plus either `root/lq/*.png`
/// (matched by filename) or a degradation spec to synthesize lq images.
pub struct Dataset<S: Scalar> {
    pub pairs: Vec<PairedSample<S>>,
}

impl<S: Scalar> Dataset<S> {
    pub fn load(
        root: &Path,
        degradation: Option<&DegradationSpec>,
        expect_scale: usize,
    ) -> Result<Dataset<S>> {
        let hq_dir = root.join("hq");
        if !hq_dir.is_dir() {
            return Err(Error::Format(format!(
                "dataset root {} has no hq/ directory",
                root.display()
            )));
        }
        let lq_dir = root.join("lq");
        let mut files: Vec<PathBuf> = std::fs::read_dir(&hq_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm" | "pgm"))
                    .unwrap_or(false)
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Format(format!(
                "no images found under {}",
                hq_dir.display()
            )));
        }
        let mut pairs = Vec::with_capacity(files.len());
        for hq_path in files {
            let id = hq_path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("sample")
                .to_string();
            let hq: Tensor<S> = image_io::read_image(&hq_path)?;
            let lq = if lq_dir.is_dir() {
                let name = hq_path.file_name().expect("file");
                let lq_path = lq_dir.join(name);
                if !lq_path.is_file() {
                    return Err(Error::Format(format!(
                        "missing paired low-quality image {}",
                        lq_path.display()
                    )));
                }
                image_io::read_image(&lq_path)?
            } else if let Some(spec) = degradation {
                degrade(&hq, &spec.for_sample(&id))?
            } else {
                return Err(Error::Format(
                    "dataset has no lq/ directory and no degradation spec given".into(),
                ));
            };
            let pair = PairedSample { lq, hq, id };
            if pair.scale() != expect_scale
                || pair.hq.shape().h != pair.lq.shape().h * expect_scale
                || pair.hq.shape().w != pair.lq.shape().w * expect_scale
            {
                return Err(Error::ShapeMismatch {
                    context: "dataset pair scale",
                    expected: format!("hq = {expect_scale}x lq dims"),
                    got: format!(
                        "{} lq {} vs hq {}",
                        pair.id,
                        pair.lq.shape(),
                        pair.hq.shape()
                    ),
                });
            }
            pairs.push(pair);
        }
        Ok(Dataset { pairs })
    }
}
