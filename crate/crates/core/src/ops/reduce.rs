use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

/// Sum of all elements, as a 1x1x1x1 tensor.
pub fn sum_all<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let acc = super::kernels::sum(a.data());
    let shape = a.shape();
    Tensor::from_op(
        Shape::new(1, 1, 1, 1),
        vec![acc],
        &[a],
        Box::new(move |g, mask| vec![mask[0].then(|| vec![g[0]; shape.numel()])]),
    )
}

/// Mean of all elements, as a 1x1x1x1 tensor.
pub fn mean_all<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let n = a.shape().numel();
    let inv = S::from_f64(1.0 / n as f64);
    let acc = super::kernels::sum(a.data());
    Tensor::from_op(
        Shape::new(1, 1, 1, 1),
        vec![acc * inv],
        &[a],
        Box::new(move |g, mask| vec![mask[0].then(|| vec![g[0] * inv; n])]),
    )
}

/// Spatial mean per sample and channel: N x C x H x W -> N x C x 1 x 1.
/// The backward pass distributes the incoming gradient as g/(H*W).
pub fn global_avg_pool<S: Scalar>(a: &Tensor<S>) -> Result<Tensor<S>> {
    let shape = a.shape();
    let hw = shape.h * shape.w;
    if hw == 0 {
        return Err(Error::InvalidArgument(
            "global_avg_pool requires H*W >= 1".into(),
        ));
    }
    let inv = S::from_f64(1.0 / hw as f64);
    let x = a.data();
    let mut data = vec![S::ZERO; shape.n * shape.c];
    for (nc, slot) in data.iter_mut().enumerate() {
        let base = nc * hw;
        *slot = super::kernels::sum(&x[base..base + hw]) * inv;
    }
    Ok(Tensor::from_op(
        Shape::new(shape.n, shape.c, 1, 1),
        data,
        &[a],
        Box::new(move |g, mask| {
            vec![mask[0].then(|| {
                let mut d = vec![S::ZERO; shape.numel()];
                for (nc, &gv) in g.iter().enumerate() {
                    let spread = gv * inv;
                    for slot in &mut d[nc * hw..(nc + 1) * hw] {
                        *slot = spread;
                    }
                }
                d
            })]
        }),
    ))
}
