//! Reduction kernels with fixed 8-lane accumulation. Plain `acc += a*b`
//! loops cannot vectorize (float reassociation), so reductions here split
//! into eight independent lanes combined pairwise at the end. The lane
//! assignment is positional, making results identical run to run.

use crate::scalar::Scalar;

const LANES: usize = 8;

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::ZERO; LANES];
    let a_chunks = a.chunks_exact(LANES);
    let b_chunks = b.chunks_exact(LANES);
    let a_rem = a_chunks.remainder();
    let b_rem = b_chunks.remainder();
    for (ca, cb) in a_chunks.zip(b_chunks) {
        for l in 0..LANES {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = S::ZERO;
    for (&x, &y) in a_rem.iter().zip(b_rem) {
        tail += x * y;
    }
    let p0 = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    let p1 = (acc[4] + acc[5]) + (acc[6] + acc[7]);
    (p0 + p1) + tail
}

#[inline]
pub fn sum<S: Scalar>(a: &[S]) -> S {
    let mut acc = [S::ZERO; LANES];
    let chunks = a.chunks_exact(LANES);
    let rem = chunks.remainder();
    for c in chunks {
        for l in 0..LANES {
            acc[l] += c[l];
        }
    }
    let mut tail = S::ZERO;
    for &x in rem {
        tail += x;
    }
    let p0 = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    let p1 = (acc[4] + acc[5]) + (acc[6] + acc[7]);
    (p0 + p1) + tail
}

/// dst += coeff * src, elementwise.
#[inline]
pub fn axpy<S: Scalar>(dst: &mut [S], coeff: S, src: &[S]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += coeff * s;
    }
}
