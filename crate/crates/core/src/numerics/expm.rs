//! Matrix exponential by scaling and squaring.
//!
//! The argument is scaled by `2^-s` until its 1-norm is at most 1/2, the
//! exponential of the scaled matrix is taken from an order-18 Taylor
//! polynomial (truncation error below `0.5^19 / 19!`, far under double
//! precision), and the result is squared `s` times.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

const TAYLOR_ORDER: usize = 18;
const SCALED_NORM: f64 = 0.5;

pub fn expm(a: &Tensor) -> Result<Tensor> {
    if !a.is_square() {
        return Err(Error::shape(format!(
            "expm needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    if !a.all_finite() {
        return Err(Error::Numerical("expm of non-finite matrix".into()));
    }
    let n = a.rows();
    let norm = a.norm1();
    let squarings = if norm > SCALED_NORM {
        (norm / SCALED_NORM).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a.scale(0.5f64.powi(squarings));

    // Horner form: I + A(I + A/2(I + A/3(...)))
    let mut acc = Tensor::eye(n);
    let mut tmp = Tensor::zeros(&[n, n]);
    for k in (1..=TAYLOR_ORDER).rev() {
        gemm(&scaled, false, &acc, false, &mut tmp, 0.0);
        let inv_k = 1.0 / k as f64;
        for (i, (dst, &src)) in acc.data_mut().iter_mut().zip(tmp.data()).enumerate() {
            *dst = src * inv_k + if i % (n + 1) == 0 { 1.0 } else { 0.0 };
        }
    }

    for _ in 0..squarings {
        gemm(&acc, false, &acc, false, &mut tmp, 0.0);
        std::mem::swap(&mut acc, &mut tmp);
    }
    Ok(acc)
}
