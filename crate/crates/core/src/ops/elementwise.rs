use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn require_same_shape<S: Scalar>(
    context: &'static str,
    a: &Tensor<S>,
    b: &Tensor<S>,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context,
            expected: a.shape().to_string(),
            got: b.shape().to_string(),
        });
    }
    Ok(())
}

/// Elementwise sum. Gradient passes through unchanged to both inputs.
pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    require_same_shape("add", a, b)?;
    let data: Vec<S> = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Ok(Tensor::from_op(
        a.shape(),
        data,
        &[a, b],
        Box::new(move |g, mask| {
            vec![
                mask[0].then(|| g.to_vec()),
                mask[1].then(|| g.to_vec()),
            ]
        }),
    ))
}

pub fn sub<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    require_same_shape("sub", a, b)?;
    let data: Vec<S> = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
    Ok(Tensor::from_op(
        a.shape(),
        data,
        &[a, b],
        Box::new(move |g, mask| {
            vec![
                mask[0].then(|| g.to_vec()),
                mask[1].then(|| g.iter().map(|&v| -v).collect()),
            ]
        }),
    ))
}

/// Elementwise (Hadamard) product.
pub fn mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    require_same_shape("mul", a, b)?;
    let data: Vec<S> = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    let a_data = a.data_arc();
    let b_data = b.data_arc();
    Ok(Tensor::from_op(
        a.shape(),
        data,
        &[a, b],
        Box::new(move |g, mask| {
            vec![
                mask[0].then(|| g.iter().zip(b_data.iter()).map(|(&gv, &bv)| gv * bv).collect()),
                mask[1].then(|| g.iter().zip(a_data.iter()).map(|(&gv, &av)| gv * av).collect()),
            ]
        }),
    ))
}

/// Multiply by a constant. The constant is not a differentiation target.
pub fn scale<S: Scalar>(a: &Tensor<S>, factor: f64) -> Tensor<S> {
    let f = S::from_f64(factor);
    let data: Vec<S> = a.data().iter().map(|&x| x * f).collect();
    Tensor::from_op(
        a.shape(),
        data,
        &[a],
        Box::new(move |g, mask| vec![mask[0].then(|| g.iter().map(|&v| v * f).collect())]),
    )
}

/// Elementwise absolute value; subgradient 0 at exact zeros.
pub fn abs<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let data: Vec<S> = a.data().iter().map(|&x| x.abs()).collect();
    let a_data = a.data_arc();
    Tensor::from_op(
        a.shape(),
        data,
        &[a],
        Box::new(move |g, mask| {
            vec![mask[0].then(|| {
                g.iter()
                    .zip(a_data.iter())
                    .map(|(&gv, &x)| {
                        if x > S::ZERO {
                            gv
                        } else if x < S::ZERO {
                            -gv
                        } else {
                            S::ZERO
                        }
                    })
                    .collect()
            })]
        }),
    )
}

/// x for x >= 0, slope * x otherwise.
pub fn leaky_relu<S: Scalar>(a: &Tensor<S>, slope: f64) -> Tensor<S> {
    let s = S::from_f64(slope);
    let data: Vec<S> = a
        .data()
        .iter()
        .map(|&x| if x >= S::ZERO { x } else { s * x })
        .collect();
    let a_data = a.data_arc();
    Tensor::from_op(
        a.shape(),
        data,
        &[a],
        Box::new(move |g, mask| {
            vec![mask[0].then(|| {
                g.iter()
                    .zip(a_data.iter())
                    .map(|(&gv, &x)| if x >= S::ZERO { gv } else { s * gv })
                    .collect()
            })]
        }),
    )
}

pub fn relu<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    leaky_relu(a, 0.0)
}

/// Numerically stable logistic function.
pub fn sigmoid<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let data: Vec<S> = a.data().iter().map(|&x| sigmoid_scalar(x)).collect();
    let out = data.clone();
    Tensor::from_op(
        a.shape(),
        data,
        &[a],
        Box::new(move |g, mask| {
            vec![mask[0].then(|| {
                g.iter()
                    .zip(out.iter())
                    .map(|(&gv, &y)| gv * y * (S::ONE - y))
                    .collect()
            })]
        }),
    )
}

pub(crate) fn sigmoid_scalar<S: Scalar>(x: S) -> S {
    if x >= S::ZERO {
        S::ONE / (S::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::ONE + e)
    }
}

/// Per-channel rescaling: out[n,c,h,w] = weight[c] * input[n,c,h,w].
/// `weight` must hold exactly C values. This is a 1x1 depth-wise
/// convolution, so its cost is C*H*W multiplies per sample.
pub fn depthwise_conv1x1<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>) -> Result<Tensor<S>> {
    let shape = input.shape();
    if weight.shape().numel() != shape.c {
        return Err(Error::ShapeMismatch {
            context: "depthwise_conv1x1",
            expected: format!("{} channel weights", shape.c),
            got: format!("{} ({})", weight.shape().numel(), weight.shape()),
        });
    }
    let hw = shape.h * shape.w;
    let x = input.data();
    let w = weight.data();
    let mut data = vec![S::ZERO; shape.numel()];
    for n in 0..shape.n {
        for c in 0..shape.c {
            let base = (n * shape.c + c) * hw;
            let wc = w[c];
            for (o, &v) in data[base..base + hw].iter_mut().zip(&x[base..base + hw]) {
                *o = wc * v;
            }
        }
    }
    let x_arc = input.data_arc();
    let w_arc = weight.data_arc();
    let w_shape = weight.shape();
    Ok(Tensor::from_op(
        shape,
        data,
        &[input, weight],
        Box::new(move |g, mask| {
            let d_input = mask[0].then(|| {
                let mut d = vec![S::ZERO; shape.numel()];
                for n in 0..shape.n {
                    for c in 0..shape.c {
                        let base = (n * shape.c + c) * hw;
                        let wc = w_arc[c];
                        for (o, &gv) in d[base..base + hw].iter_mut().zip(&g[base..base + hw]) {
                            *o = wc * gv;
                        }
                    }
                }
                d
            });
            let d_weight = mask[1].then(|| {
                let mut d = vec![S::ZERO; w_shape.numel()];
                for n in 0..shape.n {
                    for c in 0..shape.c {
                        let base = (n * shape.c + c) * hw;
                        d[c] += super::kernels::dot(&g[base..base + hw], &x_arc[base..base + hw]);
                    }
                }
                d
            });
            vec![d_input, d_weight]
        }),
    ))
}

/// Broadcast a per-sample, per-channel gate (N x C x 1 x 1) over the spatial
/// dimensions of `input` and multiply.
pub fn mul_channelwise<S: Scalar>(input: &Tensor<S>, gate: &Tensor<S>) -> Result<Tensor<S>> {
    let shape = input.shape();
    let gs = gate.shape();
    if gs.n != shape.n || gs.c != shape.c || gs.h != 1 || gs.w != 1 {
        return Err(Error::ShapeMismatch {
            context: "mul_channelwise",
            expected: format!("{}x{}x1x1 gate", shape.n, shape.c),
            got: gs.to_string(),
        });
    }
    let hw = shape.h * shape.w;
    let x = input.data();
    let a = gate.data();
    let mut data = vec![S::ZERO; shape.numel()];
    for nc in 0..shape.n * shape.c {
        let base = nc * hw;
        let g = a[nc];
        for (o, &v) in data[base..base + hw].iter_mut().zip(&x[base..base + hw]) {
            *o = g * v;
        }
    }
    let x_arc = input.data_arc();
    let a_arc = gate.data_arc();
    Ok(Tensor::from_op(
        shape,
        data,
        &[input, gate],
        Box::new(move |g, mask| {
            let d_input = mask[0].then(|| {
                let mut d = vec![S::ZERO; shape.numel()];
                for nc in 0..shape.n * shape.c {
                    let base = nc * hw;
                    let gv = a_arc[nc];
                    for (o, &go) in d[base..base + hw].iter_mut().zip(&g[base..base + hw]) {
                        *o = gv * go;
                    }
                }
                d
            });
            let d_gate = mask[1].then(|| {
                let mut d = vec![S::ZERO; gs.numel()];
                for nc in 0..shape.n * shape.c {
                    let base = nc * hw;
                    d[nc] = super::kernels::dot(&g[base..base + hw], &x_arc[base..base + hw]);
                }
                d
            });
            vec![d_input, d_gate]
        }),
    ))
}
