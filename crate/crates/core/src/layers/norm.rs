//! Gated nonlinearity and normalization layers, multivector and scalar.

use alloc::vec;
use alloc::vec::Vec;

use crate::batch::{MvArray, ScalarArray};
use crate::pga::tables::INVARIANT_MASK;
use crate::real::Real;
#[allow(unused_imports)]
use num_traits::Float;

pub const DEFAULT_EPS: f64 = 1e-6;

pub fn gated_relu_kernel<T: Real>(x: &[T]) -> Vec<T> {
    let mut out = x.to_vec();
    for mv in out.chunks_exact_mut(8) {
        let gate = mv[0].max(T::zero());
        for v in mv.iter_mut() {
            *v *= gate;
        }
    }
    out
}

pub fn gated_relu_backward<T: Real>(x: &[T], g: &[T], gx: &mut [T]) {
    for ((xm, gm), dm) in x.chunks_exact(8).zip(g.chunks_exact(8)).zip(gx.chunks_exact_mut(8)) {
        let s = xm[0];
        if s > T::zero() {
            let mut dot = T::zero();
            for k in 0..8 {
                dm[k] += s * gm[k];
                dot += gm[k] * xm[k];
            }
            dm[0] += dot;
        }
    }
}

/// `RELU(<x>_0) x`, channel-wise.
pub fn gated_relu<T: Real>(x: &MvArray<T>) -> MvArray<T> {
    MvArray::from_vec(x.lead(), x.channels(), gated_relu_kernel(x.data())).expect("same shape")
}

/// Per-token divisor `1/sqrt(mean_c <x_c, x_c> + eps)`; accumulated in f64.
pub fn eq_norm_factors<T: Real>(x: &[T], n: usize, c: usize, eps: f64) -> Vec<f64> {
    let mut r = Vec::with_capacity(n);
    for t in 0..n {
        let mut acc = 0.0f64;
        for mv in x[t * c * 8..(t + 1) * c * 8].chunks_exact(8) {
            for k in 0..8 {
                if INVARIANT_MASK[k] {
                    let v = mv[k].as_f64();
                    acc += v * v;
                }
            }
        }
        let mean = if c == 0 { 0.0 } else { acc / c as f64 };
        r.push(1.0 / (mean + eps).sqrt());
    }
    r
}

pub fn eq_layer_norm_kernel<T: Real>(x: &[T], n: usize, c: usize, eps: f64) -> (Vec<T>, Vec<f64>) {
    let r = eq_norm_factors(x, n, c, eps);
    let mut out = x.to_vec();
    for t in 0..n {
        let f = T::cast(r[t]);
        for v in out[t * c * 8..(t + 1) * c * 8].iter_mut() {
            *v *= f;
        }
    }
    (out, r)
}

pub fn eq_layer_norm_backward<T: Real>(x: &[T], g: &[T], r: &[f64], n: usize, c: usize, gx: &mut [T]) {
    for t in 0..n {
        let span = t * c * 8..(t + 1) * c * 8;
        let mut dot = 0.0f64;
        for (xv, gv) in x[span.clone()].iter().zip(&g[span.clone()]) {
            dot += xv.as_f64() * gv.as_f64();
        }
        let rt = r[t];
        let coef = rt * rt * rt * dot / c as f64;
        for (i, ((xv, gv), dv)) in x[span.clone()].iter().zip(&g[span.clone()]).zip(&mut gx[span]).enumerate() {
            let mut d = rt * gv.as_f64();
            if INVARIANT_MASK[i % 8] {
                d -= coef * xv.as_f64();
            }
            *dv += T::cast(d);
        }
    }
}

/// `x / sqrt(E<x, x> + eps)` with the mean taken over channels of each token.
pub fn eq_layer_norm<T: Real>(x: &MvArray<T>, eps: f64) -> MvArray<T> {
    let (out, _) = eq_layer_norm_kernel(x.data(), x.tokens(), x.channels(), eps);
    MvArray::from_vec(x.lead(), x.channels(), out).expect("same shape")
}

/// Standard layer norm without affine parameters; returns outputs and `1/σ`.
pub fn layer_norm_kernel<T: Real>(x: &[T], n: usize, c: usize, eps: f64) -> (Vec<T>, Vec<f64>) {
    let mut out = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(n);
    for t in 0..n {
        let row = &x[t * c..(t + 1) * c];
        let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / c as f64;
        let is = 1.0 / (var + eps).sqrt();
        for (o, v) in out[t * c..(t + 1) * c].iter_mut().zip(row) {
            *o = T::cast((v.as_f64() - mean) * is);
        }
        inv.push(is);
    }
    (out, inv)
}

pub fn layer_norm_backward<T: Real>(y: &[T], g: &[T], inv: &[f64], n: usize, c: usize, gx: &mut [T]) {
    for t in 0..n {
        let (yr, gr) = (&y[t * c..(t + 1) * c], &g[t * c..(t + 1) * c]);
        let mg = gr.iter().map(|v| v.as_f64()).sum::<f64>() / c as f64;
        let mgy = gr.iter().zip(yr).map(|(a, b)| a.as_f64() * b.as_f64()).sum::<f64>() / c as f64;
        for i in 0..c {
            let d = inv[t] * (gr[i].as_f64() - mg - yr[i].as_f64() * mgy);
            gx[t * c + i] += T::cast(d);
        }
    }
}

pub fn layer_norm<T: Real>(x: &ScalarArray<T>, eps: f64) -> ScalarArray<T> {
    let (out, _) = layer_norm_kernel(x.data(), x.tokens(), x.channels(), eps);
    ScalarArray::from_vec(x.lead(), x.channels(), out).expect("same shape")
}
