//! Convolution against a six-nested-loop oracle, and bicubic resampling
//! against a direct kernel-sum oracle.

use din_core::ops;
use din_core::rng::Rng;
use din_core::shape::Shape;
use din_core::tensor::Tensor;

fn rand_tensor(shape: Shape, rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

/// Direct definition: out[n,co,oh,ow] = b[co] + sum over ci,kh,kw of
/// w[co,ci,kh,kw] * x[n,ci,oh*s+kh-p,ow*s+kw-p] (zero outside).
fn conv_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let is = x.shape();
    let ws = w.shape();
    let k = ws.h;
    let oh_len = (is.h + 2 * pad - k) / stride + 1;
    let ow_len = (is.w + 2 * pad - k) / stride + 1;
    let os = Shape::new(is.n, ws.n, oh_len, ow_len);
    let mut out = vec![0.0f64; os.numel()];
    for n in 0..os.n {
        for co in 0..os.c {
            for oh in 0..oh_len {
                for ow in 0..ow_len {
                    let mut acc = b.map(|b| b.data()[co]).unwrap_or(0.0);
                    for ci in 0..is.c {
                        for kh in 0..k {
                            for kw in 0..k {
                                let ih = oh * stride + kh;
                                let iw = ow * stride + kw;
                                if ih < pad || iw < pad {
                                    continue;
                                }
                                let (ih, iw) = (ih - pad, iw - pad);
                                if ih >= is.h || iw >= is.w {
                                    continue;
                                }
                                acc += w.data()[ws.index(co, ci, kh, kw)]
                                    * x.data()[is.index(n, ci, ih, iw)];
                            }
                        }
                    }
                    out[os.index(n, co, oh, ow)] = acc;
                }
            }
        }
    }
    Tensor::from_vec(os, out).unwrap()
}

fn assert_close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shapes");
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        assert!(
            (x - y).abs() <= tol,
            "{what}: element {i} differs, {x} vs {y}"
        );
    }
}

#[test]
fn conv2d_matches_naive_loops_across_shapes() {
    let mut rng = Rng::seed_from(1234);
    let cases: &[((usize, usize, usize, usize), (usize, usize), usize, usize)] = &[
        // (input shape, (cout, k), stride, pad)
        ((1, 1, 3, 3), (1, 3), 1, 1),
        ((2, 3, 5, 5), (4, 3), 1, 1),
        ((1, 2, 7, 6), (3, 3), 1, 0),
        ((2, 8, 9, 9), (5, 3), 1, 1),
        ((1, 4, 9, 9), (2, 1), 1, 0),
        ((2, 2, 9, 9), (3, 3), 2, 1),
        ((1, 3, 8, 8), (2, 8), 4, 2),
        ((1, 5, 9, 7), (4, 5), 1, 2),
        ((2, 8, 9, 9), (8, 3), 3, 1),
    ];
    for &(ishape, (cout, k), stride, pad) in cases {
        let x = rand_tensor(ishape.into(), &mut rng);
        let w = rand_tensor(Shape::new(cout, ishape.1, k, k), &mut rng);
        let b = rand_tensor(Shape::new(1, cout, 1, 1), &mut rng);
        let got = ops::conv2d(&x, &w, Some(&b), stride, pad).unwrap();
        let want = conv_oracle(&x, &w, Some(&b), stride, pad);
        assert_close(&got, &want, 1e-12, &format!("conv {ishape:?} k{k} s{stride} p{pad}"));
    }
}

#[test]
fn random_2x3x5x5_case_from_the_contract() {
    let mut rng = Rng::seed_from(77);
    let x = rand_tensor(Shape::new(2, 3, 5, 5), &mut rng);
    let w = rand_tensor(Shape::new(4, 3, 3, 3), &mut rng);
    let got = ops::conv2d(&x, &w, None, 1, 1).unwrap();
    let want = conv_oracle(&x, &w, None, 1, 1);
    assert_close(&got, &want, 1e-12, "2x3x5x5 vs 4x3x3x3");
}

/// Direct (non-separable) evaluation of the Keys bicubic resample.
fn bicubic_oracle(x: &Tensor<f64>, scale: f64) -> Tensor<f64> {
    let s = x.shape();
    let oh = (s.h as f64 * scale).round() as usize;
    let ow = (s.w as f64 * scale).round() as usize;
    let os = Shape::new(s.n, s.c, oh, ow);
    let mut out = vec![0.0f64; os.numel()];
    let rh = s.h as f64 / oh as f64;
    let rw = s.w as f64 / ow as f64;
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..oh {
                let sy = (y as f64 + 0.5) * rh - 0.5;
                let by = sy.floor();
                let fy = sy - by;
                for xo in 0..ow {
                    let sx = (xo as f64 + 0.5) * rw - 0.5;
                    let bx = sx.floor();
                    let fx = sx - bx;
                    let mut acc = 0.0;
                    for ty in 0..4 {
                        let wy = ops::cubic_kernel(fy + 1.0 - ty as f64);
                        let iy = (by as isize - 1 + ty as isize).clamp(0, s.h as isize - 1) as usize;
                        for tx in 0..4 {
                            let wx = ops::cubic_kernel(fx + 1.0 - tx as f64);
                            let ix =
                                (bx as isize - 1 + tx as isize).clamp(0, s.w as isize - 1) as usize;
                            acc += wy * wx * x.data()[s.index(n, c, iy, ix)];
                        }
                    }
                    out[os.index(n, c, y, xo)] = acc;
                }
            }
        }
    }
    Tensor::from_vec(os, out).unwrap()
}

#[test]
fn bicubic_ramp_upscale_matches_direct_evaluation() {
    // 8x8 ramp, x2 upscale.
    let mut data = Vec::with_capacity(64);
    for y in 0..8 {
        for x in 0..8 {
            data.push((x as f64 + 8.0 * y as f64) / 71.0);
        }
    }
    let t = Tensor::from_vec((1, 1, 8, 8), data).unwrap();
    let got = ops::bicubic_resize(&t, 2.0).unwrap();
    let want = bicubic_oracle(&t, 2.0);
    assert_close(&got, &want, 1e-9, "ramp x2");
}

#[test]
fn bicubic_matches_direct_evaluation_on_random_images() {
    let mut rng = Rng::seed_from(55);
    for &scale in &[2.0, 3.0, 0.5, 1.0 / 3.0, 1.5, 0.75] {
        let t = rand_tensor(Shape::new(1, 3, 12, 9), &mut rng);
        let got = ops::bicubic_resize(&t, scale).unwrap();
        let want = bicubic_oracle(&t, scale);
        assert_close(&got, &want, 1e-9, &format!("random scale {scale}"));
    }
}

#[test]
fn depthwise_cost_is_chw() {
    // The per-channel rescaler costs exactly C*H*W multiplies, which is the
    // k=1 depth-wise cost accounting used by the flop counter.
    let c = 64;
    let (h, w) = (64, 64);
    assert_eq!((c * h * w) as u64, 262_144);
}

#[test]
fn kernels_wider_than_the_padded_overlap_zero_fill() {
    // A 5x5 kernel on a 1-pixel-wide column: some taps fall entirely
    // outside the padded input along one axis.
    let mut rng = Rng::seed_from(3);
    let x = rand_tensor(Shape::new(1, 2, 6, 1), &mut rng);
    let w = rand_tensor(Shape::new(2, 2, 5, 5), &mut rng);
    let got = ops::conv2d(&x, &w, None, 1, 2).unwrap();
    let want = conv_oracle(&x, &w, None, 1, 2);
    assert_close(&got, &want, 1e-12, "1-wide input, 5x5 kernel");

    // And the fully degenerate single-pixel input.
    let x = rand_tensor(Shape::new(1, 1, 1, 1), &mut rng);
    let w = rand_tensor(Shape::new(1, 1, 5, 5), &mut rng);
    let got = ops::conv2d(&x, &w, None, 1, 2).unwrap();
    let want = conv_oracle(&x, &w, None, 1, 2);
    assert_close(&got, &want, 1e-12, "1x1 input, 5x5 kernel");

    // Gradients stay finite-difference clean on the same geometry.
    let x = rand_tensor(Shape::new(1, 1, 4, 1), &mut rng);
    let w = rand_tensor(Shape::new(1, 1, 5, 5), &mut rng);
    let err = din_core::gradcheck::gradcheck(
        &|ts: &[Tensor<f64>]| {
            Ok(din_core::ops::mean_all(&ops::conv2d(&ts[0], &ts[1], None, 1, 2)?))
        },
        &[x, w],
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}
