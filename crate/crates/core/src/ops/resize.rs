use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

/// Keys cubic kernel with a = -0.5.
pub fn cubic_kernel(d: f64) -> f64 {
    let d = d.abs();
    const A: f64 = -0.5;
    if d <= 1.0 {
        (A + 2.0) * d * d * d - (A + 3.0) * d * d + 1.0
    } else if d < 2.0 {
        A * d * d * d - 5.0 * A * d * d + 8.0 * A * d - 4.0 * A
    } else {
        0.0
    }
}

/// Four source taps and their cubic weights for output position `o` on an
/// axis resized from `in_len` to `out_len`, center-aligned sampling with
/// clamp-to-edge boundaries.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let frac = src - base;
            let base = base as isize;
            let mut idx = [0usize; 4];
            let mut w = [0f64; 4];
            for t in 0..4 {
                let pos = base - 1 + t as isize;
                idx[t] = pos.clamp(0, in_len as isize - 1) as usize;
                w[t] = cubic_kernel(frac + 1.0 - t as f64);
            }
            (idx, w)
        })
        .collect()
}

/// Bicubic resampling by a positive scale factor. Output spatial dimensions
/// are round(H*scale) x round(W*scale). Linear in the input, hence
/// differentiable; the backward pass is the transposed scatter.
pub fn bicubic_resize<S: Scalar>(input: &Tensor<S>, scale: f64) -> Result<Tensor<S>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bicubic_resize scale must be positive and finite, got {scale}"
        )));
    }
    let s = input.shape();
    let out_h = (s.h as f64 * scale).round() as usize;
    let out_w = (s.w as f64 * scale).round() as usize;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "bicubic_resize to empty output {out_h}x{out_w}"
        )));
    }
    let out_shape = Shape::new(s.n, s.c, out_h, out_w);
    let taps_h = axis_taps(s.h, out_h);
    let taps_w = axis_taps(s.w, out_w);

    let data = resize_planes(input.data(), s, out_shape, &taps_h, &taps_w);
    Ok(Tensor::from_op(
        out_shape,
        data,
        &[input],
        Box::new(move |g, mask| {
            vec![mask[0].then(|| {
                // Transpose of (rows pass then columns pass).
                let mid_shape = Shape::new(s.n, s.c, out_h, s.w);
                let mut mid = vec![S::ZERO; mid_shape.numel()];
                for plane in 0..s.n * s.c {
                    let g_plane = &g[plane * out_h * out_w..(plane + 1) * out_h * out_w];
                    let m_plane = &mut mid[plane * out_h * s.w..(plane + 1) * out_h * s.w];
                    for oh in 0..out_h {
                        for (ow, (idx, w)) in taps_w.iter().enumerate() {
                            let gv = g_plane[oh * out_w + ow];
                            for t in 0..4 {
                                m_plane[oh * s.w + idx[t]] += S::from_f64(w[t]) * gv;
                            }
                        }
                    }
                }
                let mut d = vec![S::ZERO; s.numel()];
                for plane in 0..s.n * s.c {
                    let m_plane = &mid[plane * out_h * s.w..(plane + 1) * out_h * s.w];
                    let d_plane = &mut d[plane * s.h * s.w..(plane + 1) * s.h * s.w];
                    for (oh, (idx, w)) in taps_h.iter().enumerate() {
                        for iw in 0..s.w {
                            let gv = m_plane[oh * s.w + iw];
                            for t in 0..4 {
                                d_plane[idx[t] * s.w + iw] += S::from_f64(w[t]) * gv;
                            }
                        }
                    }
                }
                d
            })]
        }),
    ))
}

/// Separable two-pass resize: height first, then width.
fn resize_planes<S: Scalar>(
    x: &[S],
    in_shape: Shape,
    out_shape: Shape,
    taps_h: &[([usize; 4], [f64; 4])],
    taps_w: &[([usize; 4], [f64; 4])],
) -> Vec<S> {
    let (h, w) = (in_shape.h, in_shape.w);
    let (oh_len, ow_len) = (out_shape.h, out_shape.w);
    let planes = in_shape.n * in_shape.c;
    let mut mid = vec![S::ZERO; planes * oh_len * w];
    for plane in 0..planes {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut mid[plane * oh_len * w..(plane + 1) * oh_len * w];
        for (oh, (idx, wt)) in taps_h.iter().enumerate() {
            let row = &mut dst[oh * w..(oh + 1) * w];
            for iw in 0..w {
                let mut acc = S::ZERO;
                for t in 0..4 {
                    acc += S::from_f64(wt[t]) * src[idx[t] * w + iw];
                }
                row[iw] = acc;
            }
        }
    }
    let mut out = vec![S::ZERO; out_shape.numel()];
    for plane in 0..planes {
        let src = &mid[plane * oh_len * w..(plane + 1) * oh_len * w];
        let dst = &mut out[plane * oh_len * ow_len..(plane + 1) * oh_len * ow_len];
        for oh in 0..oh_len {
            let src_row = &src[oh * w..(oh + 1) * w];
            let dst_row = &mut dst[oh * ow_len..(oh + 1) * ow_len];
            for (ow, (idx, wt)) in taps_w.iter().enumerate() {
                let mut acc = S::ZERO;
                for t in 0..4 {
                    acc += S::from_f64(wt[t]) * src_row[idx[t]];
                }
                dst_row[ow] = acc;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_one_is_identity() {
        let mut rng = crate::rng::Rng::seed_from(4);
        let data: Vec<f64> = (0..2 * 3 * 5 * 4).map(|_| rng.uniform(0.0, 1.0)).collect();
        let x = Tensor::from_vec((2, 3, 5, 4), data.clone()).unwrap();
        let y = bicubic_resize(&x, 1.0).unwrap();
        assert_eq!(y.shape(), x.shape());
        for (a, b) in y.data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let x = Tensor::<f64>::full((1, 3, 8, 8), 0.42);
        for &scale in &[2.0, 0.5, 3.0, 1.0 / 3.0, 1.5] {
            let y = bicubic_resize(&x, scale).unwrap();
            for &v in y.data() {
                assert!((v - 0.42).abs() < 1e-9, "scale {scale}: {v}");
            }
        }
    }

    #[test]
    fn output_dims_round() {
        let x = Tensor::<f64>::zeros((1, 1, 5, 7));
        let y = bicubic_resize(&x, 0.5).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 4));
    }

    #[test]
    fn rejects_non_positive_scale() {
        let x = Tensor::<f64>::zeros((1, 1, 4, 4));
        assert!(bicubic_resize(&x, 0.0).is_err());
        assert!(bicubic_resize(&x, -2.0).is_err());
    }

    #[test]
    fn kernel_partition_of_unity() {
        for i in 0..100 {
            let frac = i as f64 / 100.0;
            let sum: f64 = (0..4).map(|t| cubic_kernel(frac + 1.0 - t as f64)).sum();
            assert!((sum - 1.0).abs() < 1e-12, "frac {frac}: {sum}");
        }
    }
}
