//! Ordinary dense layers for the auxiliary scalar path.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::real::Real;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T = f64> {
    pub d_in: usize,
    pub d_out: usize,
    /// `[d_in, d_out]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> DenseParams<T> {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        DenseParams { d_in, d_out, weight: vec![T::zero(); d_in * d_out], bias: vec![T::zero(); d_out] }
    }

    /// Fan-in scaled normal init: `N(0, gain^2 / d_in)`.
    pub fn random<R: Rng + ?Sized>(d_in: usize, d_out: usize, gain: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(d_in, d_out);
        let n = Normal::new(0.0, gain / (d_in.max(1) as f64).sqrt()).unwrap();
        for w in p.weight.iter_mut() {
            *w = T::cast(n.sample(rng));
        }
        p
    }
}

pub fn dense_forward<T: Real>(x: &[T], n: usize, d_in: usize, d_out: usize, w: &[T], b: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); n * d_out];
    let mut acc = vec![0.0f64; d_out];
    for t in 0..n {
        match b {
            Some(b) => acc.iter_mut().zip(b).for_each(|(a, v)| *a = v.as_f64()),
            None => acc.iter_mut().for_each(|a| *a = 0.0),
        }
        for i in 0..d_in {
            let xi = x[t * d_in + i].as_f64();
            if xi == 0.0 {
                continue;
            }
            for (a, wv) in acc.iter_mut().zip(&w[i * d_out..(i + 1) * d_out]) {
                *a += xi * wv.as_f64();
            }
        }
        for (o, a) in out[t * d_out..(t + 1) * d_out].iter_mut().zip(&acc) {
            *o = T::cast(*a);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Real>(
    x: &[T],
    g: &[T],
    n: usize,
    d_in: usize,
    d_out: usize,
    w: &[T],
    gx: Option<&mut [T]>,
    gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    if let Some(gx) = gx {
        for t in 0..n {
            let gr = &g[t * d_out..(t + 1) * d_out];
            for i in 0..d_in {
                let mut acc = 0.0f64;
                for (gv, wv) in gr.iter().zip(&w[i * d_out..(i + 1) * d_out]) {
                    acc += gv.as_f64() * wv.as_f64();
                }
                gx[t * d_in + i] += T::cast(acc);
            }
        }
    }
    if let Some(gw) = gw {
        let mut acc = vec![0.0f64; d_in * d_out];
        for t in 0..n {
            let gr = &g[t * d_out..(t + 1) * d_out];
            for i in 0..d_in {
                let xi = x[t * d_in + i].as_f64();
                if xi == 0.0 {
                    continue;
                }
                for (a, gv) in acc[i * d_out..(i + 1) * d_out].iter_mut().zip(gr) {
                    *a += xi * gv.as_f64();
                }
            }
        }
        for (o, a) in gw.iter_mut().zip(acc) {
            *o += T::cast(a);
        }
    }
    if let Some(gb) = gb {
        for t in 0..n {
            for (o, gv) in gb.iter_mut().zip(&g[t * d_out..(t + 1) * d_out]) {
                *o += *gv;
            }
        }
    }
}

pub fn relu_kernel<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|v| v.max(T::zero())).collect()
}

pub fn relu_backward<T: Real>(x: &[T], g: &[T], gx: &mut [T]) {
    for ((xv, gv), d) in x.iter().zip(g).zip(gx.iter_mut()) {
        if *xv > T::zero() {
            *d += *gv;
        }
    }
}
