//! Scalar-only transformer baselines for cost comparisons: plain attention,
//! and attention with explicit relative-pose encodings per token pair.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{layout, ModelConfig, ModelError, TokenBatch, Variant};
use crate::batch::ScalarArray;
use crate::layers::attention::AttnGroup;
use crate::layers::dense::{dense_forward, relu_kernel, DenseParams};
use crate::layers::norm::{layer_norm_kernel, DEFAULT_EPS};
use crate::layers::LayerError;
use crate::pga::Pose2;
#[allow(unused_imports)]
use num_traits::Float;

/// `(Δx, Δy, cos Δθ, sin Δθ)` of pose `j` seen from the frame of pose `i`.
pub fn rpe_features(i: &Pose2, j: &Pose2) -> [f64; 4] {
    let rel = i.inverse().compose(j);
    [rel.x, rel.y, rel.theta.cos(), rel.theta.sin()]
}

/// Two-layer MLP from relative-pose features to concatenated key and value offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct RpeMlp {
    pub hidden: DenseParams,
    /// Output width is twice the scalar width: key offset, then value offset.
    pub out: DenseParams,
}

impl RpeMlp {
    pub fn zeros(width: usize) -> Self {
        RpeMlp { hidden: DenseParams::zeros(4, width), out: DenseParams::zeros(width, 2 * width) }
    }

    pub fn random<R: rand::Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        RpeMlp { hidden: DenseParams::random(4, width, 2f64.sqrt(), rng), out: DenseParams::random(width, 2 * width, 1.0, rng) }
    }

    pub fn width(&self) -> usize {
        self.hidden.d_out
    }

    fn eval(&self, f: &[f64; 4]) -> Vec<f64> {
        let h = &self.hidden;
        let x = relu_kernel(&dense_forward(f, 1, 4, h.d_out, &h.weight, Some(&h.bias)));
        dense_forward(&x, 1, h.d_out, self.out.d_out, &self.out.weight, Some(&self.out.bias))
    }
}

/// Multi-head scalar attention whose keys and values receive a per-pair
/// offset from `rpe` applied to the relative pose of key to query.
///
/// Without `rpe` this is plain attention. `pair_evals` is incremented once
/// per query-key pair of every group, which is once per MLP evaluation.
#[allow(clippy::too_many_arguments)]
pub fn rpe_attention(
    q: &ScalarArray<f64>,
    k: &ScalarArray<f64>,
    v: &ScalarArray<f64>,
    heads: usize,
    poses_q: &[Pose2],
    poses_k: &[Pose2],
    rpe: Option<&RpeMlp>,
    groups: &[AttnGroup],
    causal: bool,
    pair_evals: &mut u64,
) -> Result<ScalarArray<f64>, LayerError> {
    let d = q.channels();
    if heads == 0 || d % heads != 0 {
        return Err(LayerError::Heads { heads, mv: 0, scalars: d });
    }
    for (what, got) in [("keys", k.channels()), ("values", v.channels())] {
        if got != d {
            return Err(LayerError::Channels { what, expected: d, got });
        }
    }
    if k.tokens() != v.tokens() {
        return Err(LayerError::Length { what: "values", expected: k.tokens(), got: v.tokens() });
    }
    if let Some(m) = rpe {
        if m.width() != d {
            return Err(LayerError::Channels { what: "rpe width", expected: d, got: m.width() });
        }
        if poses_q.len() != q.tokens() || poses_k.len() != k.tokens() {
            return Err(LayerError::Length { what: "poses", expected: q.tokens(), got: poses_q.len() });
        }
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = ScalarArray::zeros(&[q.tokens()], d);
    for g in groups {
        if g.queries.iter().any(|&i| i >= q.tokens()) || g.keys.iter().any(|&j| j >= k.tokens()) {
            return Err(LayerError::TokenIndex);
        }
        for (qi, &i) in g.queries.iter().enumerate() {
            let offsets: Vec<Vec<f64>> = g
                .keys
                .iter()
                .map(|&j| {
                    *pair_evals += 1;
                    match rpe {
                        Some(m) => m.eval(&rpe_features(&poses_q[i], &poses_k[j])),
                        None => vec![0.0; 2 * d],
                    }
                })
                .collect();
            let row = q.row(i);
            let mut acc = vec![0.0; d];
            for h in 0..heads {
                let r = h * dh..(h + 1) * dh;
                let logits: Vec<Option<f64>> = g
                    .keys
                    .iter()
                    .enumerate()
                    .map(|(kj, &j)| {
                        g.visible(qi, kj, causal).then(|| {
                            let kr = k.row(j);
                            r.clone().map(|c| row[c] * (kr[c] + offsets[kj][c])).sum::<f64>() * scale
                        })
                    })
                    .collect();
                let mx = logits.iter().flatten().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                if mx == f64::NEG_INFINITY {
                    continue;
                }
                let w: Vec<f64> = logits.iter().map(|l| l.map_or(0.0, |l| (l - mx).exp())).collect();
                let z: f64 = w.iter().sum();
                for (kj, &j) in g.keys.iter().enumerate() {
                    if w[kj] == 0.0 {
                        continue;
                    }
                    let p = w[kj] / z;
                    let vr = v.row(j);
                    for c in r.clone() {
                        acc[c] += p * (vr[c] + offsets[kj][d + c]);
                    }
                }
            }
            out.data_mut()[i * d..(i + 1) * d].copy_from_slice(&acc);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
struct ScalarAttn {
    q: DenseParams,
    k: DenseParams,
    v: DenseParams,
    rpe: Option<RpeMlp>,
}

#[derive(Debug, Clone, PartialEq)]
struct ScalarBlock {
    cross: ScalarAttn,
    agents: ScalarAttn,
    time: ScalarAttn,
    up: DenseParams,
    down: DenseParams,
}

/// Scalar-only counterpart of the model with the same token layout and
/// block structure, used for timing comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    pub cfg: ModelConfig,
    pub variant: Variant,
    agent: [DenseParams; 2],
    map: [DenseParams; 2],
    blocks: Vec<ScalarBlock>,
    decoder: [DenseParams; 2],
}

fn apply(p: &DenseParams, x: &[f64], n: usize) -> Vec<f64> {
    dense_forward(x, n, p.d_in, p.d_out, &p.weight, Some(&p.bias))
}

fn norm(x: &[f64], n: usize, c: usize) -> Vec<f64> {
    layer_norm_kernel(x, n, c, DEFAULT_EPS).0
}

impl BaselineModel {
    /// `variant` must be [`Variant::Vanilla`] or [`Variant::Rpe`].
    pub fn new(cfg: ModelConfig, variant: Variant) -> Result<Self, ModelError> {
        cfg.validate()?;
        if variant == Variant::DriveGatr {
            return Err(ModelError::Config("baseline variant must be vanilla or rpe".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let s = cfg.scalar_channels;
        let r2 = 2f64.sqrt();
        let attn = |rng: &mut ChaCha8Rng| ScalarAttn {
            q: DenseParams::random(s, s, 1.0, rng),
            k: DenseParams::random(s, s, 1.0, rng),
            v: DenseParams::random(s, s, 1.0, rng),
            rpe: (variant == Variant::Rpe).then(|| RpeMlp::random(s, rng)),
        };
        let blocks = (0..cfg.blocks)
            .map(|_| ScalarBlock {
                cross: attn(&mut rng),
                agents: attn(&mut rng),
                time: attn(&mut rng),
                up: DenseParams::random(s, 2 * s, r2, &mut rng),
                down: DenseParams::random(2 * s, s, 1.0, &mut rng),
            })
            .collect();
        Ok(BaselineModel {
            cfg,
            variant,
            agent: [DenseParams::random(cfg.agent_feature_width(), s, r2, &mut rng), DenseParams::random(s, s, 1.0, &mut rng)],
            map: [DenseParams::random(crate::scene::MAP_FEATURES, s, r2, &mut rng), DenseParams::random(s, s, 1.0, &mut rng)],
            blocks,
            decoder: [DenseParams::random(s, s, r2, &mut rng), DenseParams::random(s, cfg.vocab_sizes[0], 0.01, &mut rng)],
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn attend(
        &self,
        a: &ScalarAttn,
        xq: &[f64],
        nq: usize,
        xkv: &[f64],
        nk: usize,
        pq: &[Pose2],
        pk: &[Pose2],
        groups: &[AttnGroup],
        causal: bool,
        pairs: &mut u64,
    ) -> Result<Vec<f64>, ModelError> {
        let s = self.cfg.scalar_channels;
        let sh = |v: Vec<f64>, n: usize| ScalarArray::from_vec(&[n], s, v).map_err(|e| ModelError::Shape(alloc::format!("{e}")));
        let q = sh(apply(&a.q, xq, nq), nq)?;
        let k = sh(apply(&a.k, xkv, nk), nk)?;
        let v = sh(apply(&a.v, xkv, nk), nk)?;
        let o = rpe_attention(&q, &k, &v, self.cfg.heads, pq, pk, a.rpe.as_ref(), groups, causal, pairs)
            .map_err(|e| ModelError::Shape(alloc::format!("{e}")))?;
        Ok(o.into_data())
    }

    /// Vehicle-head logits for every agent token, plus the number of
    /// query-key pairs that went through the relative-pose MLP.
    pub fn forward(&self, batch: &TokenBatch) -> Result<(Vec<f64>, u64), ModelError> {
        let l = layout(&self.cfg, &[batch])?;
        let s = self.cfg.scalar_channels;
        let (n, m) = (l.n_agent, l.n_map);
        let fw = self.cfg.agent_feature_width();
        let mut x = apply(&self.agent[1], &relu_kernel(&apply(&self.agent[0], &l.agent_feats, n)), n);
        let map = apply(&self.map[1], &relu_kernel(&apply(&self.map[0], &l.map_feats, m)), m);
        debug_assert_eq!(l.agent_feats.len(), n * fw);
        let map_n = norm(&map, m, s);
        let mut pairs = 0;
        let residual = |x: &mut Vec<f64>, d: Vec<f64>| x.iter_mut().zip(d).for_each(|(a, b)| *a += b);
        for b in &self.blocks {
            let h = norm(&x, n, s);
            let d = self.attend(&b.cross, &h, n, &map_n, m, &batch.poses, &batch.map_poses, &l.cross, false, &mut pairs)?;
            residual(&mut x, d);
            let h = norm(&x, n, s);
            let d = self.attend(&b.agents, &h, n, &h, n, &batch.poses, &batch.poses, &l.agents, false, &mut pairs)?;
            residual(&mut x, d);
            let h = norm(&x, n, s);
            let d = self.attend(&b.time, &h, n, &h, n, &batch.poses, &batch.poses, &l.time, true, &mut pairs)?;
            residual(&mut x, d);
            let h = norm(&x, n, s);
            let d = apply(&b.down, &relu_kernel(&apply(&b.up, &h, n)), n);
            residual(&mut x, d);
        }
        let h = relu_kernel(&apply(&self.decoder[0], &norm(&x, n, s), n));
        Ok((apply(&self.decoder[1], &h, n), pairs))
    }
}
