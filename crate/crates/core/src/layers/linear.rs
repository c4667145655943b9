//! Equivariant linear maps on multivector channels.
//!
//! Each `(out, in)` channel pair carries ten parameters, stored in the order
//! `[w0, w1, w2, w3, v0, v1, v2, u0, u1, u2]`, and acts as
//! `Σ_k w_k <x>_k + Σ_k v_k e0 <x>_k + Σ_k u_k e012 <x>_k`.
//! Each output channel adds a bias to its scalar component.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::LayerError;
use crate::batch::MvArray;
use crate::real::Real;
#[allow(unused_imports)]
use num_traits::Float;

pub const PARAMS_PER_PAIR: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct EqLinearParams<T = f64> {
    pub c_in: usize,
    pub c_out: usize,
    /// `[c_out, c_in, 10]`
    pub weights: Vec<T>,
    /// `[c_out]`
    pub bias: Vec<T>,
}

impl<T: Real> EqLinearParams<T> {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        EqLinearParams { c_in, c_out, weights: vec![T::zero(); c_out * c_in * PARAMS_PER_PAIR], bias: vec![T::zero(); c_out] }
    }

    /// Channel-wise identity (requires `c_in == c_out`).
    pub fn identity(c: usize) -> Self {
        let mut p = Self::zeros(c, c);
        for i in 0..c {
            let o = (i * c + i) * PARAMS_PER_PAIR;
            for k in 0..4 {
                p.weights[o + k] = T::one();
            }
        }
        p
    }

    /// `w ~ N(0, 1/c_in)`, `v, u ~ N(0, 0.1/c_in)`, zero bias.
    pub fn random<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(c_in, c_out);
        let sw = (1.0 / c_in.max(1) as f64).sqrt();
        let svu = (0.1 / c_in.max(1) as f64).sqrt();
        let nw = Normal::new(0.0, sw).unwrap();
        let nvu = Normal::new(0.0, svu).unwrap();
        for pair in p.weights.chunks_exact_mut(PARAMS_PER_PAIR) {
            for (k, w) in pair.iter_mut().enumerate() {
                let v = if k < 4 { nw.sample(rng) } else { nvu.sample(rng) };
                *w = T::cast(v);
            }
        }
        p
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Applies one channel-pair map `φ` with parameters `p`.
#[inline]
pub fn phi<T: Real>(p: &[T], x: &[T; 8]) -> [T; 8] {
    let (w0, w1, w2, w3) = (p[0], p[1], p[2], p[3]);
    let (v0, v1, v2) = (p[4], p[5], p[6]);
    let (u0, u1, u2) = (p[7], p[8], p[9]);
    [
        w0 * x[0],
        v0 * x[0] + w1 * x[1] - u2 * x[6],
        w1 * x[2],
        w1 * x[3],
        v1 * x[2] + u1 * x[3] + w2 * x[4],
        u1 * x[2] - v1 * x[3] + w2 * x[5],
        w2 * x[6],
        u0 * x[0] + v2 * x[6] + w3 * x[7],
    ]
}

/// Transpose of `φ` applied to an output cotangent.
#[inline]
pub fn phi_transpose<T: Real>(p: &[T], g: &[T; 8]) -> [T; 8] {
    let (w0, w1, w2, w3) = (p[0], p[1], p[2], p[3]);
    let (v0, v1, v2) = (p[4], p[5], p[6]);
    let (u0, u1, u2) = (p[7], p[8], p[9]);
    [
        w0 * g[0] + v0 * g[1] + u0 * g[7],
        w1 * g[1],
        w1 * g[2] + v1 * g[4] + u1 * g[5],
        w1 * g[3] + u1 * g[4] - v1 * g[5],
        w2 * g[4],
        w2 * g[5],
        -u2 * g[1] + w2 * g[6] + v2 * g[7],
        w3 * g[7],
    ]
}

/// Accumulates `∂<g, φ(x)>/∂p` into `gp`.
#[inline]
pub fn phi_param_grad<T: Real>(x: &[T; 8], g: &[T; 8], gp: &mut [T]) {
    gp[0] += g[0] * x[0];
    gp[1] += g[1] * x[1] + g[2] * x[2] + g[3] * x[3];
    gp[2] += g[4] * x[4] + g[5] * x[5] + g[6] * x[6];
    gp[3] += g[7] * x[7];
    gp[4] += g[1] * x[0];
    gp[5] += g[4] * x[2] - g[5] * x[3];
    gp[6] += g[7] * x[6];
    gp[7] += g[7] * x[0];
    gp[8] += g[4] * x[3] + g[5] * x[2];
    gp[9] -= g[1] * x[6];
}

#[inline]
pub(crate) fn load8<T: Copy>(s: &[T]) -> [T; 8] {
    [s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7]]
}

/// Forward over `n` tokens: `x: [n, c_in, 8] -> [n, c_out, 8]`.
pub fn forward_kernel<T: Real>(x: &[T], n: usize, c_in: usize, c_out: usize, weights: &[T], bias: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); n * c_out * 8];
    for t in 0..n {
        for i in 0..c_out {
            let mut acc = [T::zero(); 8];
            for j in 0..c_in {
                let xo = (t * c_in + j) * 8;
                let y = phi(&weights[(i * c_in + j) * PARAMS_PER_PAIR..], &load8(&x[xo..]));
                for k in 0..8 {
                    acc[k] += y[k];
                }
            }
            acc[0] += bias[i];
            let o = (t * c_out + i) * 8;
            out[o..o + 8].copy_from_slice(&acc);
        }
    }
    out
}

/// Backward over `n` tokens, accumulating into `gx`, `gw`, `gb`.
#[allow(clippy::too_many_arguments)]
pub fn backward_kernel<T: Real>(
    x: &[T],
    g: &[T],
    n: usize,
    c_in: usize,
    c_out: usize,
    weights: &[T],
    gx: Option<&mut [T]>,
    gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    if let Some(gx) = gx {
        for t in 0..n {
            for i in 0..c_out {
                let gi = load8(&g[(t * c_out + i) * 8..]);
                for j in 0..c_in {
                    let d = phi_transpose(&weights[(i * c_in + j) * PARAMS_PER_PAIR..], &gi);
                    let xo = (t * c_in + j) * 8;
                    for k in 0..8 {
                        gx[xo + k] += d[k];
                    }
                }
            }
        }
    }
    if let Some(gw) = gw {
        for t in 0..n {
            for i in 0..c_out {
                let gi = load8(&g[(t * c_out + i) * 8..]);
                for j in 0..c_in {
                    let xj = load8(&x[(t * c_in + j) * 8..]);
                    let o = (i * c_in + j) * PARAMS_PER_PAIR;
                    phi_param_grad(&xj, &gi, &mut gw[o..o + PARAMS_PER_PAIR]);
                }
            }
        }
    }
    if let Some(gb) = gb {
        for t in 0..n {
            for i in 0..c_out {
                gb[i] += g[(t * c_out + i) * 8];
            }
        }
    }
}

pub fn eq_linear<T: Real>(x: &MvArray<T>, p: &EqLinearParams<T>) -> Result<MvArray<T>, LayerError> {
    if x.channels() != p.c_in {
        return Err(LayerError::Channels { what: "eq_linear input", expected: p.c_in, got: x.channels() });
    }
    let data = forward_kernel(x.data(), x.tokens(), p.c_in, p.c_out, &p.weights, &p.bias);
    Ok(MvArray::from_vec(x.lead(), p.c_out, data)?)
}
