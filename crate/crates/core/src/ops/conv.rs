use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

/// 2-D cross-correlation (no kernel flip) with square kernels.
///
/// `weight` is Cout x Cin x k x k; `bias`, when present, holds Cout values.
/// Output spatial dims are floor((H + 2*pad - k)/stride) + 1 per axis.
/// Differentiable with respect to input, weight and bias.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    let in_shape = input.shape();
    let w_shape = weight.shape();
    if w_shape.h != w_shape.w {
        return Err(Error::InvalidArgument(format!(
            "conv2d kernels must be square, got {}x{}",
            w_shape.h, w_shape.w
        )));
    }
    if in_shape.c != w_shape.c {
        return Err(Error::ShapeMismatch {
            context: "conv2d input/weight channels",
            expected: format!("input with {} channels for weight {}", w_shape.c, w_shape),
            got: in_shape.to_string(),
        });
    }
    if stride < 1 {
        return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
    }
    let k = w_shape.h;
    if in_shape.h + 2 * pad < k || in_shape.w + 2 * pad < k {
        return Err(Error::ShapeMismatch {
            context: "conv2d spatial extent",
            expected: format!("padded input at least {k}x{k}"),
            got: format!("{}x{} with pad {pad}", in_shape.h, in_shape.w),
        });
    }
    let cout = w_shape.n;
    if let Some(b) = bias {
        if b.shape().numel() != cout {
            return Err(Error::ShapeMismatch {
                context: "conv2d bias",
                expected: format!("{cout} values"),
                got: b.shape().to_string(),
            });
        }
    }
    let out_h = (in_shape.h + 2 * pad - k) / stride + 1;
    let out_w = (in_shape.w + 2 * pad - k) / stride + 1;
    let out_shape = Shape::new(in_shape.n, cout, out_h, out_w);

    let geom = Geom {
        in_shape,
        out_shape,
        k,
        stride,
        pad,
    };
    let data = forward(input.data(), weight.data(), bias.map(|b| b.data()), &geom);

    let x_arc = input.data_arc();
    let w_arc = weight.data_arc();
    let has_bias = bias.is_some();
    let parents: Vec<&Tensor<S>> = match bias {
        Some(b) => vec![input, weight, b],
        None => vec![input, weight],
    };
    Ok(Tensor::from_op(
        out_shape,
        data,
        &parents,
        Box::new(move |g, mask| {
            let want_input = mask[0];
            let want_weight = mask[1];
            let (d_input, d_weight) = backward(g, &x_arc, &w_arc, &geom, want_input, want_weight);
            let mut grads = vec![d_input, d_weight];
            if has_bias {
                grads.push(mask[2].then(|| backward_bias(g, &geom)));
            }
            grads
        }),
    ))
}

#[derive(Clone, Copy)]
struct Geom {
    in_shape: Shape,
    out_shape: Shape,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn patch_len(&self) -> usize {
        self.in_shape.c * self.k * self.k
    }

    /// Output rows per im2col block, bounded so the scratch buffer stays
    /// cache-resident (about 256K scalars).
    fn rows_per_block(&self) -> usize {
        let per_row = self.patch_len() * self.out_shape.w;
        (256_000 / per_row.max(1)).clamp(1, self.out_shape.h)
    }
}

/// Fill `cols` (patch_len x rows*out_w) with input patches for output rows
/// [row0, row0+rows), zero-padding out-of-bounds taps.
fn im2col<S: Scalar>(x: &[S], geom: &Geom, n: usize, row0: usize, rows: usize, cols: &mut [S]) {
    let is = geom.in_shape;
    let ow = geom.out_shape.w;
    let block = rows * ow;
    let (k, stride, pad) = (geom.k, geom.stride, geom.pad);
    for ci in 0..is.c {
        let plane = &x[(n * is.c + ci) * is.h * is.w..(n * is.c + ci + 1) * is.h * is.w];
        for kh in 0..k {
            for kw in 0..k {
                let q = (ci * k + kh) * k + kw;
                let dst_base = q * block;
                for r in 0..rows {
                    let oh = row0 + r;
                    let dst = &mut cols[dst_base + r * ow..dst_base + (r + 1) * ow];
                    let ih = oh * stride + kh;
                    if ih < pad || ih - pad >= is.h {
                        dst.fill(S::ZERO);
                        continue;
                    }
                    let src_row = &plane[(ih - pad) * is.w..(ih - pad + 1) * is.w];
                    if stride == 1 {
                        // iw = ow' + kw - pad for ow' in [0, ow)
                        let lo = pad.saturating_sub(kw); // first valid ow'
                        let hi_excl = (is.w + pad).saturating_sub(kw).min(ow); // one past last valid
                        dst[..lo.min(ow)].fill(S::ZERO);
                        if lo < hi_excl {
                            let src_lo = lo + kw - pad;
                            dst[lo..hi_excl]
                                .copy_from_slice(&src_row[src_lo..src_lo + (hi_excl - lo)]);
                        }
                        if hi_excl < ow {
                            dst[hi_excl.max(lo)..].fill(S::ZERO);
                        }
                    } else {
                        for (o, slot) in dst.iter_mut().enumerate() {
                            let iw = o * stride + kw;
                            *slot = if iw < pad || iw - pad >= is.w {
                                S::ZERO
                            } else {
                                src_row[iw - pad]
                            };
                        }
                    }
                }
            }
        }
    }
}

fn forward<S: Scalar>(x: &[S], w: &[S], bias: Option<&[S]>, geom: &Geom) -> Vec<S> {
    let os = geom.out_shape;
    let mut out = vec![S::ZERO; os.numel()];
    let hw = os.h * os.w;
    if let Some(b) = bias {
        for n in 0..os.n {
            for co in 0..os.c {
                out[(n * os.c + co) * hw..(n * os.c + co + 1) * hw].fill(b[co]);
            }
        }
    }
    if geom.k == 1 && geom.stride == 1 && geom.pad == 0 {
        // 1x1 convolution: a plain channel-mixing matmul over H*W.
        let cin = geom.in_shape.c;
        for n in 0..os.n {
            for ci in 0..cin {
                let src = &x[(n * cin + ci) * hw..(n * cin + ci + 1) * hw];
                for co in 0..os.c {
                    let wv = w[co * cin + ci];
                    if wv == S::ZERO {
                        continue;
                    }
                    let dst = &mut out[(n * os.c + co) * hw..(n * os.c + co + 1) * hw];
                    super::kernels::axpy(dst, wv, src);
                }
            }
        }
        return out;
    }

    let patch = geom.patch_len();
    let rows_per_block = geom.rows_per_block();
    let mut cols = vec![S::ZERO; patch * rows_per_block * os.w];
    for n in 0..os.n {
        let mut row0 = 0;
        while row0 < os.h {
            let rows = rows_per_block.min(os.h - row0);
            let block = rows * os.w;
            im2col(x, geom, n, row0, rows, &mut cols[..patch * block]);
            for q in 0..patch {
                let src = &cols[q * block..(q + 1) * block];
                for co in 0..os.c {
                    let wv = w[co * patch + q];
                    if wv == S::ZERO {
                        continue;
                    }
                    let dst = &mut out[(n * os.c + co) * hw + row0 * os.w..][..block];
                    super::kernels::axpy(dst, wv, src);
                }
            }
            row0 += rows;
        }
    }
    out
}

fn backward<S: Scalar>(
    g: &[S],
    x: &Arc<Vec<S>>,
    w: &Arc<Vec<S>>,
    geom: &Geom,
    want_input: bool,
    want_weight: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>) {
    if !want_input && !want_weight {
        return (None, None);
    }
    let is = geom.in_shape;
    let os = geom.out_shape;
    let hw = os.h * os.w;
    let cin = is.c;

    if geom.k == 1 && geom.stride == 1 && geom.pad == 0 {
        let mut d_input = want_input.then(|| vec![S::ZERO; is.numel()]);
        let mut d_weight = want_weight.then(|| vec![S::ZERO; os.c * cin]);
        for n in 0..os.n {
            for co in 0..os.c {
                let g_row = &g[(n * os.c + co) * hw..(n * os.c + co + 1) * hw];
                for ci in 0..cin {
                    if let Some(d) = d_input.as_mut() {
                        let wv = w[co * cin + ci];
                        if wv != S::ZERO {
                            let dst = &mut d[(n * cin + ci) * hw..(n * cin + ci + 1) * hw];
                            for (dd, &gv) in dst.iter_mut().zip(g_row) {
                                *dd += wv * gv;
                            }
                        }
                    }
                    if let Some(dw) = d_weight.as_mut() {
                        let src = &x[(n * cin + ci) * hw..(n * cin + ci + 1) * hw];
                        dw[co * cin + ci] += super::kernels::dot(g_row, src);
                    }
                }
            }
        }
        return (d_input, d_weight);
    }

    let patch = geom.patch_len();
    let rows_per_block = geom.rows_per_block();
    let mut cols = vec![S::ZERO; patch * rows_per_block * os.w];
    let mut d_cols = vec![S::ZERO; patch * rows_per_block * os.w];
    let mut d_input = want_input.then(|| vec![S::ZERO; is.numel()]);
    let mut d_weight = want_weight.then(|| vec![S::ZERO; os.c * patch]);

    for n in 0..os.n {
        let mut row0 = 0;
        while row0 < os.h {
            let rows = rows_per_block.min(os.h - row0);
            let block = rows * os.w;
            if want_weight {
                im2col(x, geom, n, row0, rows, &mut cols[..patch * block]);
            }
            if want_input {
                d_cols[..patch * block].fill(S::ZERO);
            }
            for q in 0..patch {
                if let Some(dw) = d_weight.as_mut() {
                    let col = &cols[q * block..(q + 1) * block];
                    for co in 0..os.c {
                        let g_row = &g[(n * os.c + co) * hw + row0 * os.w..][..block];
                        dw[co * patch + q] += super::kernels::dot(g_row, col);
                    }
                }
                if want_input {
                    let dst = &mut d_cols[q * block..(q + 1) * block];
                    for co in 0..os.c {
                        let wv = w[co * patch + q];
                        if wv == S::ZERO {
                            continue;
                        }
                        let g_row = &g[(n * os.c + co) * hw + row0 * os.w..][..block];
                        super::kernels::axpy(dst, wv, g_row);
                    }
                }
            }
            if let Some(di) = d_input.as_mut() {
                col2im_add(&d_cols[..patch * block], geom, n, row0, rows, di);
            }
            row0 += rows;
        }
    }
    (d_input, d_weight)
}

/// Scatter-add the column gradients back onto the input layout.
fn col2im_add<S: Scalar>(
    d_cols: &[S],
    geom: &Geom,
    n: usize,
    row0: usize,
    rows: usize,
    d_input: &mut [S],
) {
    let is = geom.in_shape;
    let ow = geom.out_shape.w;
    let block = rows * ow;
    let (k, stride, pad) = (geom.k, geom.stride, geom.pad);
    for ci in 0..is.c {
        let plane = &mut d_input[(n * is.c + ci) * is.h * is.w..(n * is.c + ci + 1) * is.h * is.w];
        for kh in 0..k {
            for kw in 0..k {
                let q = (ci * k + kh) * k + kw;
                let src_base = q * block;
                for r in 0..rows {
                    let oh = row0 + r;
                    let ih = oh * stride + kh;
                    if ih < pad || ih - pad >= is.h {
                        continue;
                    }
                    let src = &d_cols[src_base + r * ow..src_base + (r + 1) * ow];
                    let dst_row = &mut plane[(ih - pad) * is.w..(ih - pad + 1) * is.w];
                    if stride == 1 {
                        let lo = pad.saturating_sub(kw);
                        let hi_excl = (is.w + pad).saturating_sub(kw).min(ow);
                        if lo < hi_excl {
                            let dst_lo = lo + kw - pad;
                            for (d, &s) in dst_row[dst_lo..dst_lo + (hi_excl - lo)]
                                .iter_mut()
                                .zip(&src[lo..hi_excl])
                            {
                                *d += s;
                            }
                        }
                    } else {
                        for (o, &s) in src.iter().enumerate() {
                            let iw = o * stride + kw;
                            if iw >= pad && iw - pad < is.w {
                                dst_row[iw - pad] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn backward_bias<S: Scalar>(g: &[S], geom: &Geom) -> Vec<S> {
    let os = geom.out_shape;
    let mut d = vec![S::ZERO; os.c];
    let hw = os.h * os.w;
    for n in 0..os.n {
        for co in 0..os.c {
            let base = (n * os.c + co) * hw;
            d[co] += super::kernels::sum(&g[base..base + hw]);
        }
    }
    d
}
