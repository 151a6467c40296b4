use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

/// Concatenate along the channel axis, first argument's channels first.
pub fn concat_channels<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    concat_channels_n(&[a, b])
}

/// N-ary channel concatenation.
pub fn concat_channels_n<S: Scalar>(inputs: &[&Tensor<S>]) -> Result<Tensor<S>> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("concat of zero tensors".into()));
    }
    let first = inputs[0].shape();
    let mut c_total = 0;
    for t in inputs {
        let s = t.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(Error::ShapeMismatch {
                context: "concat_channels",
                expected: format!("{}x_x{}x{}", first.n, first.h, first.w),
                got: s.to_string(),
            });
        }
        c_total += s.c;
    }
    let out_shape = Shape::new(first.n, c_total, first.h, first.w);
    let hw = first.h * first.w;
    let mut data = vec![S::ZERO; out_shape.numel()];
    for n in 0..first.n {
        let mut c_off = 0;
        for t in inputs {
            let s = t.shape();
            let chunk = s.c * hw;
            let src = &t.data()[n * chunk..(n + 1) * chunk];
            let dst_base = (n * c_total + c_off) * hw;
            data[dst_base..dst_base + chunk].copy_from_slice(src);
            c_off += s.c;
        }
    }
    let channel_counts: Vec<usize> = inputs.iter().map(|t| t.shape().c).collect();
    let n_batch = first.n;
    Ok(Tensor::from_op(
        out_shape,
        data,
        inputs,
        Box::new(move |g, mask| {
            let mut out: Vec<Option<Vec<S>>> = Vec::with_capacity(channel_counts.len());
            let mut c_off = 0;
            for (&ci, &needed) in channel_counts.iter().zip(mask) {
                if needed {
                    let mut d = vec![S::ZERO; n_batch * ci * hw];
                    for n in 0..n_batch {
                        let src_base = (n * c_total + c_off) * hw;
                        let dst_base = n * ci * hw;
                        d[dst_base..dst_base + ci * hw]
                            .copy_from_slice(&g[src_base..src_base + ci * hw]);
                    }
                    out.push(Some(d));
                } else {
                    out.push(None);
                }
                c_off += ci;
            }
            out
        }),
    ))
}

/// Channels [c0, c1) of the input, as a new tensor.
pub fn slice_channels<S: Scalar>(a: &Tensor<S>, c0: usize, c1: usize) -> Result<Tensor<S>> {
    let shape = a.shape();
    if c0 > c1 || c1 > shape.c {
        return Err(Error::InvalidArgument(format!(
            "channel slice [{c0}, {c1}) out of range for {} channels",
            shape.c
        )));
    }
    let cs = c1 - c0;
    let hw = shape.h * shape.w;
    let out_shape = Shape::new(shape.n, cs, shape.h, shape.w);
    let mut data = vec![S::ZERO; out_shape.numel()];
    for n in 0..shape.n {
        let src_base = (n * shape.c + c0) * hw;
        let dst_base = n * cs * hw;
        data[dst_base..dst_base + cs * hw].copy_from_slice(&a.data()[src_base..src_base + cs * hw]);
    }
    Ok(Tensor::from_op(
        out_shape,
        data,
        &[a],
        Box::new(move |g, mask| {
            vec![mask[0].then(|| {
                let mut d = vec![S::ZERO; shape.numel()];
                for n in 0..shape.n {
                    let dst_base = (n * shape.c + c0) * hw;
                    let src_base = n * cs * hw;
                    d[dst_base..dst_base + cs * hw]
                        .copy_from_slice(&g[src_base..src_base + cs * hw]);
                }
                d
            })]
        }),
    ))
}

/// Sub-pixel rearrangement: (N, C, H, W) -> (N, C/r^2, rH, rW) with
/// out[n, c, r*h+dy, r*w+dx] = in[n, c*r^2 + dy*r + dx, h, w].
pub fn pixel_shuffle<S: Scalar>(a: &Tensor<S>, r: usize) -> Result<Tensor<S>> {
    if r == 0 {
        return Err(Error::InvalidArgument("pixel_shuffle factor must be >= 1".into()));
    }
    let shape = a.shape();
    let r2 = r * r;
    if shape.c % r2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "pixel_shuffle: {} channels not divisible by r^2 = {}",
            shape.c, r2
        )));
    }
    let out_shape = Shape::new(shape.n, shape.c / r2, shape.h * r, shape.w * r);
    let data = shuffle_data(a.data(), shape, r);
    Ok(Tensor::from_op(
        out_shape,
        data,
        &[a],
        Box::new(move |g, mask| vec![mask[0].then(|| unshuffle_data(g, out_shape, r))]),
    ))
}

/// Exact inverse of `pixel_shuffle`.
pub fn pixel_unshuffle<S: Scalar>(a: &Tensor<S>, r: usize) -> Result<Tensor<S>> {
    if r == 0 {
        return Err(Error::InvalidArgument("pixel_unshuffle factor must be >= 1".into()));
    }
    let shape = a.shape();
    if shape.h % r != 0 || shape.w % r != 0 {
        return Err(Error::InvalidArgument(format!(
            "pixel_unshuffle: spatial dims {}x{} not divisible by {}",
            shape.h, shape.w, r
        )));
    }
    let out_shape = Shape::new(shape.n, shape.c * r * r, shape.h / r, shape.w / r);
    let data = unshuffle_data(a.data(), shape, r);
    Ok(Tensor::from_op(
        out_shape,
        data,
        &[a],
        Box::new(move |g, mask| vec![mask[0].then(|| shuffle_data(g, out_shape, r))]),
    ))
}

fn shuffle_data<S: Scalar>(x: &[S], in_shape: Shape, r: usize) -> Vec<S> {
    let r2 = r * r;
    let co = in_shape.c / r2;
    let (h, w) = (in_shape.h, in_shape.w);
    let out = Shape::new(in_shape.n, co, h * r, w * r);
    let mut data = vec![S::ZERO; out.numel()];
    for n in 0..in_shape.n {
        for c in 0..co {
            for dy in 0..r {
                for dx in 0..r {
                    let cin = c * r2 + dy * r + dx;
                    for ih in 0..h {
                        let src = in_shape.index(n, cin, ih, 0);
                        let oh = ih * r + dy;
                        for iw in 0..w {
                            data[out.index(n, c, oh, iw * r + dx)] = x[src + iw];
                        }
                    }
                }
            }
        }
    }
    data
}

fn unshuffle_data<S: Scalar>(x: &[S], in_shape: Shape, r: usize) -> Vec<S> {
    let r2 = r * r;
    let (h, w) = (in_shape.h / r, in_shape.w / r);
    let out = Shape::new(in_shape.n, in_shape.c * r2, h, w);
    let mut data = vec![S::ZERO; out.numel()];
    for n in 0..in_shape.n {
        for c in 0..in_shape.c {
            for dy in 0..r {
                for dx in 0..r {
                    let cout = c * r2 + dy * r + dx;
                    for oh in 0..h {
                        let dst = out.index(n, cout, oh, 0);
                        let ih = oh * r + dy;
                        for ow in 0..w {
                            data[dst + ow] = x[in_shape.index(n, c, ih, ow * r + dx)];
                        }
                    }
                }
            }
        }
    }
    data
}

// ---- Dihedral data transforms (no autograd participation) ----

/// Horizontal flip (mirror along the width axis). Pure data transform.
pub fn flip_w<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let s = a.shape();
    let x = a.data();
    let mut data = vec![S::ZERO; s.numel()];
    for nc in 0..s.n * s.c {
        for h in 0..s.h {
            let base = (nc * s.h + h) * s.w;
            for w in 0..s.w {
                data[base + w] = x[base + s.w - 1 - w];
            }
        }
    }
    Tensor::from_vec(s, data).expect("same numel")
}

/// Vertical flip (mirror along the height axis). Pure data transform.
pub fn flip_h<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let s = a.shape();
    let x = a.data();
    let mut data = vec![S::ZERO; s.numel()];
    for nc in 0..s.n * s.c {
        for h in 0..s.h {
            let src = (nc * s.h + (s.h - 1 - h)) * s.w;
            let dst = (nc * s.h + h) * s.w;
            data[dst..dst + s.w].copy_from_slice(&x[src..src + s.w]);
        }
    }
    Tensor::from_vec(s, data).expect("same numel")
}

/// Quarter-turn counter-clockwise, `k` times. Pure data transform.
pub fn rot90<S: Scalar>(a: &Tensor<S>, k: usize) -> Tensor<S> {
    let mut t = a.detach();
    for _ in 0..k % 4 {
        t = rot90_once(&t);
    }
    t
}

fn rot90_once<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let s = a.shape();
    let out = Shape::new(s.n, s.c, s.w, s.h);
    let x = a.data();
    let mut data = vec![S::ZERO; out.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..out.h {
                for j in 0..out.w {
                    // CCW: output row i comes from input column (W-1-i).
                    data[out.index(n, c, i, j)] = x[s.index(n, c, j, s.w - 1 - i)];
                }
            }
        }
    }
    Tensor::from_vec(out, data).expect("same numel")
}

/// Apply the `idx`-th element (0..8) of the dihedral group: a horizontal
/// flip when idx >= 4, then idx % 4 quarter turns.
pub fn dihedral<S: Scalar>(a: &Tensor<S>, idx: usize) -> Tensor<S> {
    let flipped = if idx >= 4 { flip_w(a) } else { a.detach() };
    rot90(&flipped, idx % 4)
}

/// Inverse of `dihedral(_, idx)`.
pub fn dihedral_inverse<S: Scalar>(a: &Tensor<S>, idx: usize) -> Tensor<S> {
    let unrotated = rot90(a, (4 - idx % 4) % 4);
    if idx >= 4 {
        flip_w(&unrotated)
    } else {
        unrotated
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_shapes_add_up() {
        let a = Tensor::<f64>::zeros((2, 3, 4, 5));
        let b = Tensor::<f64>::zeros((2, 5, 4, 5));
        let y = concat_channels(&a, &b).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 8, 4, 5));
    }

    #[test]
    fn concat_with_zero_channels_is_identity() {
        let a = Tensor::<f64>::from_vec((1, 2, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let empty = Tensor::<f64>::zeros((1, 0, 1, 2));
        let y = concat_channels(&a, &empty).unwrap();
        assert_eq!(y.shape(), a.shape());
        assert_eq!(y.data(), a.data());
    }

    #[test]
    fn concat_spatial_mismatch_errors() {
        let a = Tensor::<f64>::zeros((1, 2, 3, 3));
        let b = Tensor::<f64>::zeros((1, 2, 4, 3));
        assert!(concat_channels(&a, &b).is_err());
    }

    #[test]
    fn slicing_concat_recovers_first_input() {
        let mut rng = crate::rng::Rng::seed_from(9);
        let a_data: Vec<f64> = (0..2 * 3 * 2 * 2).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let b_data: Vec<f64> = (0..2 * 4 * 2 * 2).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let a = Tensor::from_vec((2, 3, 2, 2), a_data.clone()).unwrap();
        let b = Tensor::from_vec((2, 4, 2, 2), b_data).unwrap();
        let y = concat_channels(&a, &b).unwrap();
        let back = slice_channels(&y, 0, 3).unwrap();
        assert_eq!(back.data(), &a_data[..]);
    }

    #[test]
    fn pixel_shuffle_r1_is_identity() {
        let x = Tensor::<f64>::from_vec((1, 2, 2, 2), (0..8).map(|v| v as f64).collect()).unwrap();
        let y = pixel_shuffle(&x, 1).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn pixel_shuffle_placement_matches_index_formula() {
        // (1,4,2,2) with r=2 -> (1,1,4,4).
        let x =
            Tensor::<f64>::from_vec((1, 4, 2, 2), (0..16).map(|v| v as f64).collect()).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 4, 4));
        let in_shape = x.shape();
        for h in 0..2 {
            for w in 0..2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        let cin = dy * 2 + dx;
                        let expected = x.data()[in_shape.index(0, cin, h, w)];
                        let got = y.data()[y.shape().index(0, 0, 2 * h + dy, 2 * w + dx)];
                        assert_eq!(got, expected);
                    }
                }
            }
        }
    }

    #[test]
    fn pixel_shuffle_round_trip() {
        let mut rng = crate::rng::Rng::seed_from(2);
        let data: Vec<f64> = (0..1 * 8 * 3 * 3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x = Tensor::from_vec((1, 8, 3, 3), data.clone()).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        let z = pixel_unshuffle(&y, 2).unwrap();
        assert_eq!(z.data(), &data[..]);

        // Bijection on elements: the value multiset is preserved.
        let mut a: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn pixel_shuffle_rejects_bad_channel_count() {
        let x = Tensor::<f64>::zeros((1, 6, 2, 2));
        assert!(pixel_shuffle(&x, 2).is_err());
    }

    #[test]
    fn rot90_four_times_is_identity() {
        let x = Tensor::<f64>::from_vec((1, 1, 2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = rot90(&x, 4);
        assert_eq!(y.data(), x.data());
        let once = rot90(&x, 1);
        assert_eq!(once.shape(), Shape::new(1, 1, 3, 2));
    }

    #[test]
    fn dihedral_inverse_round_trips() {
        let mut rng = crate::rng::Rng::seed_from(17);
        let data: Vec<f64> = (0..2 * 3 * 4 * 5).map(|_| rng.uniform(0.0, 1.0)).collect();
        let x = Tensor::from_vec((2, 3, 4, 5), data.clone()).unwrap();
        for idx in 0..8 {
            let t = dihedral(&x, idx);
            let back = dihedral_inverse(&t, idx);
            assert_eq!(back.shape(), x.shape(), "idx {idx}");
            assert_eq!(back.data(), &data[..], "idx {idx}");
        }
    }

    #[test]
    fn double_flip_is_identity() {
        let x = Tensor::<f64>::from_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(flip_w(&flip_w(&x)).data(), x.data());
        assert_eq!(flip_h(&flip_h(&x)).data(), x.data());
    }
}
