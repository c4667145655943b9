//! Multivector dot-product attention with distance-aware features.
//!
//! Queries and keys are flattened into one vector per head: the four
//! invariant components `[1, e1, e2, e12]` of every channel, then the
//! distance feature maps of every channel (when enabled), then the scalar
//! channels. A single dot product of these vectors reproduces the sum of the
//! invariant inner products, the distance terms and the scalar products.

use alloc::vec;
use alloc::vec::Vec;

use super::LayerError;
use crate::batch::{MvArray, ScalarArray};
use crate::pga::tables::{idx, INVARIANT_COMPONENTS};
use crate::real::Real;
#[allow(unused_imports)]
use num_traits::Float;

pub const DEFAULT_DISTANCE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    pub heads: usize,
    /// Total multivector channels, split contiguously across heads.
    pub mv_channels: usize,
    /// Total scalar channels, split contiguously across heads.
    pub scalar_channels: usize,
    pub distance_awareness: bool,
    pub eps: f64,
    /// Within each group, key `j` is visible to query `i` only if `j <= i`.
    pub causal: bool,
}

impl AttentionConfig {
    pub fn new(heads: usize, mv_channels: usize, scalar_channels: usize) -> Self {
        AttentionConfig { heads, mv_channels, scalar_channels, distance_awareness: true, eps: DEFAULT_DISTANCE_EPS, causal: false }
    }

    pub fn validate(&self) -> Result<(), LayerError> {
        if self.heads == 0 || self.mv_channels % self.heads != 0 || self.scalar_channels % self.heads != 0 {
            return Err(LayerError::Heads { heads: self.heads, mv: self.mv_channels, scalars: self.scalar_channels });
        }
        Ok(())
    }

    pub fn head_mv(&self) -> usize {
        self.mv_channels / self.heads
    }

    pub fn head_scalars(&self) -> usize {
        self.scalar_channels / self.heads
    }

    /// Per-head query/key width: `4C + 4C + C'` with distance awareness, else `4C + C'`.
    pub fn qk_dim(&self) -> usize {
        let c = self.head_mv();
        4 * c + if self.distance_awareness { 4 * c } else { 0 } + self.head_scalars()
    }
}

/// One attention problem: a set of query tokens against a set of key tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnGroup {
    pub queries: Vec<usize>,
    pub keys: Vec<usize>,
    /// Query-major visibility mask of shape `[queries, keys]`.
    pub mask: Option<Vec<bool>>,
}

impl AttnGroup {
    pub fn dense(queries: Vec<usize>, keys: Vec<usize>) -> Self {
        AttnGroup { queries, keys, mask: None }
    }

    /// Every query token `0..nq` against every key `0..nk`.
    pub fn full(nq: usize, nk: usize, mask: Option<Vec<bool>>) -> Self {
        AttnGroup { queries: (0..nq).collect(), keys: (0..nk).collect(), mask }
    }

    #[inline]
    pub fn visible(&self, qi: usize, kj: usize, causal: bool) -> bool {
        if causal && kj > qi {
            return false;
        }
        match &self.mask {
            Some(m) => m[qi * self.keys.len() + kj],
            None => true,
        }
    }
}

/// Query-side distance feature map.
pub fn distance_query(q12: f64, q01: f64, q20: f64, eps: f64) -> [f64; 4] {
    let d = q12 * q12 + eps;
    if d == 0.0 {
        return [0.0; 4];
    }
    let f = q12 / d;
    [f * q12 * q12, f * (q01 * q01 + q20 * q20), f * q01 * q12, f * q20 * q12]
}

/// Key-side distance feature map.
pub fn distance_key(k12: f64, k01: f64, k20: f64, eps: f64) -> [f64; 4] {
    let d = k12 * k12 + eps;
    if d == 0.0 {
        return [0.0; 4];
    }
    let f = k12 / d;
    [-f * (k01 * k01 + k20 * k20), -f * k12 * k12, 2.0 * f * k01 * k12, 2.0 * f * k20 * k12]
}

/// Transposed Jacobian of [`distance_query`]: returns `(d12, d01, d20)`.
fn distance_query_vjp(a: f64, b1: f64, b2: f64, eps: f64, g: &[f64]) -> (f64, f64, f64) {
    let d = a * a + eps;
    if d == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let f = a / d;
    let df = (eps - a * a) / (d * d);
    let h = a * a / d;
    let dh = 2.0 * a * eps / (d * d);
    let s = b1 * b1 + b2 * b2;
    let d_cube = h + a * dh;
    let da = g[0] * d_cube + g[1] * s * df + g[2] * b1 * dh + g[3] * b2 * dh;
    let db1 = g[1] * 2.0 * b1 * f + g[2] * h;
    let db2 = g[1] * 2.0 * b2 * f + g[3] * h;
    (da, db1, db2)
}

fn distance_key_vjp(a: f64, b1: f64, b2: f64, eps: f64, g: &[f64]) -> (f64, f64, f64) {
    let d = a * a + eps;
    if d == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let f = a / d;
    let df = (eps - a * a) / (d * d);
    let h = a * a / d;
    let dh = 2.0 * a * eps / (d * d);
    let s = b1 * b1 + b2 * b2;
    let d_cube = h + a * dh;
    let da = -g[0] * s * df - g[1] * d_cube + 2.0 * g[2] * b1 * dh + 2.0 * g[3] * b2 * dh;
    let db1 = -g[0] * 2.0 * b1 * f + 2.0 * g[2] * h;
    let db2 = -g[0] * 2.0 * b2 * f + 2.0 * g[3] * h;
    (da, db1, db2)
}

/// Borrowed inputs of one attention call.
#[derive(Clone, Copy)]
pub struct AttnInputs<'a, T> {
    /// `[nq, C, 8]`
    pub mv_q: &'a [T],
    /// `[nk, C, 8]`
    pub mv_k: &'a [T],
    /// `[nk, C, 8]`
    pub mv_v: &'a [T],
    /// `[nq, C']`
    pub s_q: &'a [T],
    /// `[nk, C']`
    pub s_k: &'a [T],
    /// `[nk, C']`
    pub s_v: &'a [T],
    pub nq: usize,
    pub nk: usize,
}

impl<'a, T: Real> AttnInputs<'a, T> {
    fn check(&self, cfg: &AttentionConfig, groups: &[AttnGroup]) -> Result<(), LayerError> {
        cfg.validate()?;
        let (c, s) = (cfg.mv_channels, cfg.scalar_channels);
        let checks = [
            ("mv_q", self.mv_q.len(), self.nq * c * 8),
            ("mv_k", self.mv_k.len(), self.nk * c * 8),
            ("mv_v", self.mv_v.len(), self.nk * c * 8),
            ("q", self.s_q.len(), self.nq * s),
            ("k", self.s_k.len(), self.nk * s),
            ("v", self.s_v.len(), self.nk * s),
        ];
        for (what, got, expected) in checks {
            if got != expected {
                return Err(LayerError::Length { what, expected, got });
            }
        }
        let mut seen = vec![false; self.nq];
        for g in groups {
            if let Some(m) = &g.mask {
                if m.len() != g.queries.len() * g.keys.len() {
                    return Err(LayerError::Length { what: "mask", expected: g.queries.len() * g.keys.len(), got: m.len() });
                }
            }
            if g.queries.iter().any(|&q| q >= self.nq) || g.keys.iter().any(|&k| k >= self.nk) {
                return Err(LayerError::TokenIndex);
            }
            // Each query owns one output row.
            for &q in &g.queries {
                if core::mem::replace(&mut seen[q], true) {
                    return Err(LayerError::QueryOverlap(q));
                }
            }
            if cfg.causal && g.queries.len() != g.keys.len() {
                return Err(LayerError::CausalShape);
            }
        }
        Ok(())
    }
}

fn query_vector<T: Real>(cfg: &AttentionConfig, mv: &[T], s: &[T], token: usize, head: usize, out: &mut Vec<f64>) {
    out.clear();
    let (hc, hs) = (cfg.head_mv(), cfg.head_scalars());
    let base = token * cfg.mv_channels * 8;
    for c in head * hc..(head + 1) * hc {
        let m = &mv[base + c * 8..base + c * 8 + 8];
        for &k in INVARIANT_COMPONENTS.iter() {
            out.push(m[k].as_f64());
        }
    }
    if cfg.distance_awareness {
        for c in head * hc..(head + 1) * hc {
            let m = &mv[base + c * 8..base + c * 8 + 8];
            out.extend_from_slice(&distance_query(m[idx::E12].as_f64(), m[idx::E01].as_f64(), m[idx::E20].as_f64(), cfg.eps));
        }
    }
    let sb = token * cfg.scalar_channels + head * hs;
    out.extend(s[sb..sb + hs].iter().map(|v| v.as_f64()));
}

fn key_vector<T: Real>(cfg: &AttentionConfig, mv: &[T], s: &[T], token: usize, head: usize, out: &mut Vec<f64>) {
    out.clear();
    let (hc, hs) = (cfg.head_mv(), cfg.head_scalars());
    let base = token * cfg.mv_channels * 8;
    for c in head * hc..(head + 1) * hc {
        let m = &mv[base + c * 8..base + c * 8 + 8];
        for &k in INVARIANT_COMPONENTS.iter() {
            out.push(m[k].as_f64());
        }
    }
    if cfg.distance_awareness {
        for c in head * hc..(head + 1) * hc {
            let m = &mv[base + c * 8..base + c * 8 + 8];
            out.extend_from_slice(&distance_key(m[idx::E12].as_f64(), m[idx::E01].as_f64(), m[idx::E20].as_f64(), cfg.eps));
        }
    }
    let sb = token * cfg.scalar_channels + head * hs;
    out.extend(s[sb..sb + hs].iter().map(|v| v.as_f64()));
}

/// Scatters a query-vector cotangent back onto the multivector and scalar inputs.
fn query_vector_vjp<T: Real>(
    cfg: &AttentionConfig,
    mv: &[T],
    token: usize,
    head: usize,
    g: &[f64],
    gmv: &mut [T],
    gs: &mut [T],
    key_side: bool,
) {
    let (hc, hs) = (cfg.head_mv(), cfg.head_scalars());
    let base = token * cfg.mv_channels * 8;
    let mut p = 0;
    for c in head * hc..(head + 1) * hc {
        for &k in INVARIANT_COMPONENTS.iter() {
            gmv[base + c * 8 + k] += T::cast(g[p]);
            p += 1;
        }
    }
    if cfg.distance_awareness {
        for c in head * hc..(head + 1) * hc {
            let m = &mv[base + c * 8..base + c * 8 + 8];
            let (a, b1, b2) = (m[idx::E12].as_f64(), m[idx::E01].as_f64(), m[idx::E20].as_f64());
            let gd = &g[p..p + 4];
            let (da, db1, db2) =
                if key_side { distance_key_vjp(a, b1, b2, cfg.eps, gd) } else { distance_query_vjp(a, b1, b2, cfg.eps, gd) };
            gmv[base + c * 8 + idx::E12] += T::cast(da);
            gmv[base + c * 8 + idx::E01] += T::cast(db1);
            gmv[base + c * 8 + idx::E20] += T::cast(db2);
            p += 4;
        }
    }
    let sb = token * cfg.scalar_channels + head * hs;
    for i in 0..hs {
        gs[sb + i] += T::cast(g[p + i]);
    }
}

/// Attention probabilities kept for the backward pass, one `[nq, nk]` block per
/// `(group, head)`, group-major.
#[derive(Debug, Clone, Default)]
pub struct AttnCache {
    pub probs: Vec<Vec<f64>>,
}

/// Raw (pre-softmax) logits for one group and head, `[queries, keys]`,
/// via the concatenated dot product.
pub fn group_logits<T: Real>(cfg: &AttentionConfig, inp: &AttnInputs<'_, T>, group: &AttnGroup, head: usize) -> Vec<f64> {
    let scale = 1.0 / (cfg.qk_dim() as f64).sqrt();
    let keys: Vec<Vec<f64>> = group
        .keys
        .iter()
        .map(|&kt| {
            let mut v = Vec::new();
            key_vector(cfg, inp.mv_k, inp.s_k, kt, head, &mut v);
            v
        })
        .collect();
    let mut qv = Vec::new();
    let mut out = Vec::with_capacity(group.queries.len() * keys.len());
    for &qt in &group.queries {
        query_vector(cfg, inp.mv_q, inp.s_q, qt, head, &mut qv);
        for kv in &keys {
            out.push(dot(&qv, kv) * scale);
        }
    }
    out
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Forward pass. Returns `([nq, C, 8], [nq, C'], cache)`. Queries that appear in
/// no group, or whose keys are all masked, get zero output.
pub fn attention_forward<T: Real>(
    cfg: &AttentionConfig,
    inp: &AttnInputs<'_, T>,
    groups: &[AttnGroup],
) -> Result<(Vec<T>, Vec<T>, AttnCache), LayerError> {
    inp.check(cfg, groups)?;
    let (c, s) = (cfg.mv_channels, cfg.scalar_channels);
    let (hc, hs) = (cfg.head_mv(), cfg.head_scalars());
    let d = cfg.qk_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let mut out_mv = vec![T::zero(); inp.nq * c * 8];
    let mut out_s = vec![T::zero(); inp.nq * s];
    let mut cache = AttnCache { probs: Vec::with_capacity(groups.len() * cfg.heads) };
    let mut kmat: Vec<f64> = Vec::new();
    let mut qv = Vec::with_capacity(d);
    let mut tmp = Vec::with_capacity(d);
    let mut acc_mv = vec![0.0f64; hc * 8];
    let mut acc_s = vec![0.0f64; hs];

    for g in groups {
        let (nq, nk) = (g.queries.len(), g.keys.len());
        for h in 0..cfg.heads {
            kmat.clear();
            for &kt in &g.keys {
                key_vector(cfg, inp.mv_k, inp.s_k, kt, h, &mut tmp);
                kmat.extend_from_slice(&tmp);
            }
            let mut probs = vec![0.0f64; nq * nk];
            for (qi, &qt) in g.queries.iter().enumerate() {
                query_vector(cfg, inp.mv_q, inp.s_q, qt, h, &mut qv);
                let row = &mut probs[qi * nk..(qi + 1) * nk];
                let mut max = f64::NEG_INFINITY;
                for kj in 0..nk {
                    if g.visible(qi, kj, cfg.causal) {
                        let l = dot(&qv, &kmat[kj * d..(kj + 1) * d]) * scale;
                        row[kj] = l;
                        max = max.max(l);
                    }
                }
                if max == f64::NEG_INFINITY {
                    row.iter_mut().for_each(|p| *p = 0.0);
                    continue;
                }
                let mut z = 0.0;
                for kj in 0..nk {
                    if g.visible(qi, kj, cfg.causal) {
                        let e = (row[kj] - max).exp();
                        row[kj] = e;
                        z += e;
                    } else {
                        row[kj] = 0.0;
                    }
                }
                row.iter_mut().for_each(|p| *p /= z);

                acc_mv.iter_mut().for_each(|a| *a = 0.0);
                acc_s.iter_mut().for_each(|a| *a = 0.0);
                for (kj, &kt) in g.keys.iter().enumerate() {
                    let p = row[kj];
                    if p == 0.0 {
                        continue;
                    }
                    let vb = (kt * c + h * hc) * 8;
                    for (a, v) in acc_mv.iter_mut().zip(&inp.mv_v[vb..vb + hc * 8]) {
                        *a += p * v.as_f64();
                    }
                    let sb = kt * s + h * hs;
                    for (a, v) in acc_s.iter_mut().zip(&inp.s_v[sb..sb + hs]) {
                        *a += p * v.as_f64();
                    }
                }
                let ob = (qt * c + h * hc) * 8;
                for (o, a) in out_mv[ob..ob + hc * 8].iter_mut().zip(&acc_mv) {
                    *o = T::cast(*a);
                }
                let sb = qt * s + h * hs;
                for (o, a) in out_s[sb..sb + hs].iter_mut().zip(&acc_s) {
                    *o = T::cast(*a);
                }
            }
            cache.probs.push(probs);
        }
    }
    Ok((out_mv, out_s, cache))
}

/// Cotangent buffers for the six attention inputs.
pub struct AttnGrads<'a, T> {
    pub mv_q: &'a mut [T],
    pub mv_k: &'a mut [T],
    pub mv_v: &'a mut [T],
    pub s_q: &'a mut [T],
    pub s_k: &'a mut [T],
    pub s_v: &'a mut [T],
}

pub fn attention_backward<T: Real>(
    cfg: &AttentionConfig,
    inp: &AttnInputs<'_, T>,
    groups: &[AttnGroup],
    cache: &AttnCache,
    g_mv: &[T],
    g_s: &[T],
    grads: &mut AttnGrads<'_, T>,
) {
    let (c, s) = (cfg.mv_channels, cfg.scalar_channels);
    let (hc, hs) = (cfg.head_mv(), cfg.head_scalars());
    let d = cfg.qk_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let mut kmat: Vec<f64> = Vec::new();
    let mut qmat: Vec<f64> = Vec::new();
    let mut tmp = Vec::with_capacity(d);
    let mut dp = Vec::new();

    for (gi, g) in groups.iter().enumerate() {
        let (nq, nk) = (g.queries.len(), g.keys.len());
        for h in 0..cfg.heads {
            let probs = &cache.probs[gi * cfg.heads + h];
            kmat.clear();
            for &kt in &g.keys {
                key_vector(cfg, inp.mv_k, inp.s_k, kt, h, &mut tmp);
                kmat.extend_from_slice(&tmp);
            }
            qmat.clear();
            for &qt in &g.queries {
                query_vector(cfg, inp.mv_q, inp.s_q, qt, h, &mut tmp);
                qmat.extend_from_slice(&tmp);
            }
            let mut dq = vec![0.0f64; nq * d];
            let mut dk = vec![0.0f64; nk * d];
            for (qi, &qt) in g.queries.iter().enumerate() {
                let row = &probs[qi * nk..(qi + 1) * nk];
                if row.iter().all(|p| *p == 0.0) {
                    continue;
                }
                let gb = (qt * c + h * hc) * 8;
                let gmv = &g_mv[gb..gb + hc * 8];
                let gsb = qt * s + h * hs;
                let gsv = &g_s[gsb..gsb + hs];
                dp.clear();
                let mut rowdot = 0.0;
                for (kj, &kt) in g.keys.iter().enumerate() {
                    let p = row[kj];
                    if p == 0.0 {
                        dp.push(0.0);
                        continue;
                    }
                    let vb = (kt * c + h * hc) * 8;
                    let sb = kt * s + h * hs;
                    let mut acc = 0.0;
                    for i in 0..hc * 8 {
                        let gv = gmv[i].as_f64();
                        acc += gv * inp.mv_v[vb + i].as_f64();
                        grads.mv_v[vb + i] += T::cast(p * gv);
                    }
                    for i in 0..hs {
                        let gv = gsv[i].as_f64();
                        acc += gv * inp.s_v[sb + i].as_f64();
                        grads.s_v[sb + i] += T::cast(p * gv);
                    }
                    dp.push(acc);
                    rowdot += p * acc;
                }
                for kj in 0..nk {
                    let p = row[kj];
                    if p == 0.0 {
                        continue;
                    }
                    let dl = p * (dp[kj] - rowdot) * scale;
                    let (qrow, krow) = (qi * d..(qi + 1) * d, kj * d..(kj + 1) * d);
                    for (o, kv) in dq[qrow.clone()].iter_mut().zip(&kmat[krow.clone()]) {
                        *o += dl * kv;
                    }
                    for (o, qv) in dk[krow].iter_mut().zip(&qmat[qrow.clone()]) {
                        *o += dl * qv;
                    }
                }
            }
            for (qi, &qt) in g.queries.iter().enumerate() {
                let gq = &dq[qi * d..(qi + 1) * d];
                if gq.iter().any(|v| *v != 0.0) {
                    query_vector_vjp(cfg, inp.mv_q, qt, h, gq, grads.mv_q, grads.s_q, false);
                }
            }
            for (kj, &kt) in g.keys.iter().enumerate() {
                let gk = &dk[kj * d..(kj + 1) * d];
                if gk.iter().any(|v| *v != 0.0) {
                    query_vector_vjp(cfg, inp.mv_k, kt, h, gk, grads.mv_k, grads.s_k, true);
                }
            }
        }
    }
}

/// Multivector attention over explicit query/key groups.
#[allow(clippy::too_many_arguments)]
pub fn eq_attention<T: Real>(
    mv_q: &MvArray<T>,
    mv_k: &MvArray<T>,
    mv_v: &MvArray<T>,
    q: &ScalarArray<T>,
    k: &ScalarArray<T>,
    v: &ScalarArray<T>,
    cfg: &AttentionConfig,
    groups: &[AttnGroup],
) -> Result<(MvArray<T>, ScalarArray<T>), LayerError> {
    if mv_q.channels() != cfg.mv_channels || mv_k.channels() != cfg.mv_channels || mv_v.channels() != cfg.mv_channels {
        return Err(LayerError::Channels { what: "attention multivectors", expected: cfg.mv_channels, got: mv_q.channels() });
    }
    let inp = AttnInputs {
        mv_q: mv_q.data(),
        mv_k: mv_k.data(),
        mv_v: mv_v.data(),
        s_q: q.data(),
        s_k: k.data(),
        s_v: v.data(),
        nq: mv_q.tokens(),
        nk: mv_k.tokens(),
    };
    if q.tokens() != inp.nq || k.tokens() != inp.nk || v.tokens() != inp.nk || mv_v.tokens() != inp.nk {
        return Err(LayerError::TokenIndex);
    }
    let (om, os, _) = attention_forward(cfg, &inp, groups)?;
    Ok((MvArray::from_vec(mv_q.lead(), cfg.mv_channels, om)?, ScalarArray::from_vec(q.lead(), cfg.scalar_channels, os)?))
}

/// Lower-triangular mask for `n` ordered tokens.
pub fn causal_mask(n: usize) -> Vec<bool> {
    let mut m = vec![false; n * n];
    for i in 0..n {
        for j in 0..=i {
            m[i * n + j] = true;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pga::{encode_point, Multivector};

    fn mv1(m: Multivector) -> MvArray<f64> {
        MvArray::from_vec(&[1], 1, m.0.to_vec()).unwrap()
    }

    #[test]
    fn distance_identity_example() {
        let q = encode_point(0.0, 0.0);
        let k = encode_point(3.0, 4.0);
        let fq = distance_query(q[idx::E12], q[idx::E01], q[idx::E20], 0.0);
        let fk = distance_key(k[idx::E12], k[idx::E01], k[idx::E20], 0.0);
        let d: f64 = fq.iter().zip(&fk).map(|(a, b)| a * b).sum();
        assert_eq!(d, -25.0);
        let fk0 = distance_key(q[idx::E12], q[idx::E01], q[idx::E20], 0.0);
        assert_eq!(fq.iter().zip(&fk0).map(|(a, b)| a * b).sum::<f64>(), 0.0);
        assert_eq!(distance_query(0.0, 2.0, 3.0, 1e-6), [0.0; 4]);
        assert_eq!(distance_query(0.0, 2.0, 3.0, 0.0), [0.0; 4]);
    }

    #[test]
    fn single_key_returns_value() {
        let mut cfg = AttentionConfig::new(1, 1, 0);
        cfg.distance_awareness = false;
        let e1 = mv1(Multivector::E1);
        let val = mv1(Multivector([0.5, -1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]));
        let s = ScalarArray::<f64>::zeros(&[1], 0);
        let groups = [AttnGroup::full(1, 1, None)];
        let inp = AttnInputs { mv_q: e1.data(), mv_k: e1.data(), mv_v: val.data(), s_q: &[], s_k: &[], s_v: &[], nq: 1, nk: 1 };
        assert_eq!(group_logits(&cfg, &inp, &groups[0], 0), vec![0.5]);
        let (out, _) = eq_attention(&e1, &e1, &val, &s, &s, &s, &cfg, &groups).unwrap();
        assert_eq!(out, val);
    }

    #[test]
    fn identical_keys_average_values() {
        let cfg = AttentionConfig::new(1, 1, 2);
        let q = mv1(Multivector::E2);
        let k = MvArray::from_fn(2, 1, |_, _| (Multivector::E1 + Multivector::E12).0);
        let v = MvArray::from_fn(2, 1, |n, _| Multivector::scalar(n as f64 * 2.0).0);
        let sq = ScalarArray::from_vec(&[1], 2, vec![1.0, -1.0]).unwrap();
        let sk = ScalarArray::from_vec(&[2], 2, vec![0.3, 0.1, 0.3, 0.1]).unwrap();
        let sv = ScalarArray::from_vec(&[2], 2, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let (om, os) = eq_attention(&q, &k, &v, &sq, &sk, &sv, &cfg, &[AttnGroup::full(1, 2, None)]).unwrap();
        assert!((om.get(0, 0)[0] - 1.0).abs() < 1e-15);
        assert_eq!(os.data(), &[3.0, 5.0]);
    }

    #[test]
    fn fully_masked_row_is_zero() {
        let cfg = AttentionConfig::new(1, 1, 1);
        let x = MvArray::from_fn(2, 1, |n, _| [1.0 + n as f64; 8]);
        let s = ScalarArray::from_vec(&[2], 1, vec![1.0, 2.0]).unwrap();
        let mask = vec![false, false, true, false];
        let (om, os) = eq_attention(&x, &x, &x, &s, &s, &s, &cfg, &[AttnGroup::full(2, 2, Some(mask))]).unwrap();
        assert_eq!(om.get(0, 0), [0.0; 8]);
        assert_eq!(os.data()[0], 0.0);
        assert!(om.data().iter().all(|v| v.is_finite()));
        assert_eq!(om.get(1, 0), x.get(0, 0));
    }

    #[test]
    fn causal_mask_shape() {
        assert_eq!(causal_mask(3), vec![true, false, false, true, true, false, true, true, true]);
    }

    #[test]
    fn config_validation() {
        assert!(AttentionConfig::new(2, 3, 4).validate().is_err());
        assert!(AttentionConfig::new(2, 4, 4).validate().is_ok());
        let mut c = AttentionConfig::new(2, 4, 8);
        assert_eq!(c.qk_dim(), 4 * 2 + 4 * 2 + 4);
        c.distance_awareness = false;
        assert_eq!(c.qk_dim(), 4 * 2 + 4);
    }
}
