//! Closed-form forward-pass FLOP counts.
//!
//! A multiply-add counts as two flops. Softmax, norms and activations are
//! charged a few flops per element so that every term stays exact integer
//! arithmetic and ratios between token counts come out exact.

use super::{MapAttention, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    DriveGatr,
    Rpe,
    Vanilla,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::DriveGatr, Variant::Rpe, Variant::Vanilla];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::DriveGatr => "drivegatr",
            Variant::Rpe => "rpe",
            Variant::Vanilla => "vanilla",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

/// Per-term counts for one forward pass over `A` agents, `T` steps, `M` map nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlopBreakdown {
    /// Scalar input encoders of agent and map tokens.
    pub encoders: u64,
    /// Scalar q/k/v projections and norms in the attention blocks.
    pub projections: u64,
    /// Logits, softmax and value mixing over all attended pairs.
    pub attention: u64,
    /// Scalar MLP path.
    pub mlp: u64,
    pub decoder: u64,
    /// Multivector work attached to agent tokens: encodings, equivariant
    /// linears and norms, algebra products, distance features, adapters.
    pub geometric_features: u64,
    /// Multivector work on map tokens (encoding plus cross-attention keys and values).
    pub map_geometric: u64,
    /// Pairwise relative-pose MLP over agent-agent pairs.
    pub rpe_agent_pairs: u64,
    /// Pairwise relative-pose MLP over same-agent pairs across time.
    pub rpe_temporal_pairs: u64,
    /// Pairwise relative-pose MLP over agent-map pairs.
    pub rpe_map_pairs: u64,
}

impl FlopBreakdown {
    /// Every term involving explicit relative positions.
    pub fn positional(&self) -> u64 {
        self.rpe_agent_pairs + self.rpe_temporal_pairs + self.rpe_map_pairs
    }

    pub fn total(&self) -> u64 {
        self.encoders
            + self.projections
            + self.attention
            + self.mlp
            + self.decoder
            + self.geometric_features
            + self.map_geometric
            + self.positional()
    }

    /// `(name, value)` pairs in a fixed order, for tables.
    pub fn terms(&self) -> [(&'static str, u64); 10] {
        [
            ("encoders", self.encoders),
            ("projections", self.projections),
            ("attention", self.attention),
            ("mlp", self.mlp),
            ("decoder", self.decoder),
            ("geometric_features", self.geometric_features),
            ("map_geometric", self.map_geometric),
            ("rpe_agent_pairs", self.rpe_agent_pairs),
            ("rpe_temporal_pairs", self.rpe_temporal_pairs),
            ("rpe_map_pairs", self.rpe_map_pairs),
        ]
    }
}

/// Flops of one geometric product or join of two multivectors:
/// 128 multiplications and 120 additions.
pub const PRODUCT_FLOPS: u64 = 248;
/// Features of one relative pose: `(Δx, Δy, cos Δθ, sin Δθ)`.
pub const RPE_FEATURES: u64 = 4;
/// Flops to compute one relative pose's features.
const RPE_FEATURIZE: u64 = 16;

fn dense(din: u64, dout: u64) -> u64 {
    2 * din * dout + dout
}

fn eq_linear(cin: u64, cout: u64) -> u64 {
    // Grade-projected weights touch all 8 components and the e0 terms add 8 more.
    2 * cin * cout * 16 + 8 * cout
}

fn layer_norm(c: u64) -> u64 {
    5 * c
}

fn eq_layer_norm(c: u64) -> u64 {
    // Invariant norm over 4 non-degenerate components plus scaling of all 8.
    8 * c + 8 * c
}

/// Analytic cost of one forward pass.
pub fn flop_count(cfg: &ModelConfig, a: usize, m: usize, t: usize, variant: Variant) -> FlopBreakdown {
    let (a, m, t) = (a as u64, m as u64, t as u64);
    let c = cfg.mv_channels as u64;
    let s = cfg.scalar_channels as u64;
    let heads = cfg.heads as u64;
    let n_blocks = cfg.blocks as u64;
    let l = a * t;
    let agent_in = cfg.agent_feature_width() as u64;
    let map_in = crate::scene::MAP_FEATURES as u64;
    let vocab_mean: u64 = cfg.vocab_sizes.iter().map(|&v| v as u64).sum::<u64>() / 3;
    let geo = variant == Variant::DriveGatr;

    let mut f = FlopBreakdown {
        encoders: l * (dense(agent_in, s) + s + dense(s, s) + s) + m * (dense(map_in, s) + s + dense(s, s)),
        ..Default::default()
    };

    let map_keys = match cfg.map_attention {
        MapAttention::All => m,
        MapAttention::Knn(k) => (k as u64).min(m),
    };
    let pairs_cross = l * map_keys;
    let pairs_self = t * a * a;
    let pairs_time = a * t * (t + 1) / 2;
    let pairs = pairs_cross + pairs_self + pairs_time;

    // Query-key width and value width summed over heads.
    let (qk, vw) = if geo {
        let dist = if cfg.distance_awareness { 4 * c } else { 0 };
        (4 * c + dist + s, 8 * c + s)
    } else {
        (s, s)
    };
    let per_pair = 2 * qk + 2 * vw + 3 * heads;

    for _ in 0..n_blocks {
        // Cross attention normalizes and projects queries on agents, keys and values on the map.
        f.projections += l * (layer_norm(s) + dense(s, s)) + m * (layer_norm(s) + 2 * dense(s, s));
        // Self and temporal attention project q, k, v on agent tokens.
        f.projections += 2 * l * (layer_norm(s) + 3 * dense(s, s));
        f.attention += pairs * per_pair;
        f.mlp += l * (layer_norm(s) + dense(s, 2 * s) + 2 * s + dense(2 * s, s) + s);

        if geo {
            let attn_tok = eq_layer_norm(c) + 3 * eq_linear(c, c) + s; // + residual
            let dist = if cfg.distance_awareness { 2 * 12 * c } else { 0 };
            let mlp_tok = eq_layer_norm(c)
                + eq_linear(c, 4 * c)
                + 2 * c * PRODUCT_FLOPS
                + eq_linear(2 * c, 2 * c)
                + 8 * 2 * c
                + eq_linear(2 * c, c)
                + 8 * c;
            let adapter_tok = 128 * c + dense(8 * c, s) + s + dense(s, s) + s;
            // Query side of cross attention plus the full self and temporal blocks.
            let cross_q = eq_layer_norm(c) + eq_linear(c, c) + 8 * c;
            f.geometric_features += l * (cross_q + 2 * attn_tok + 3 * dist + mlp_tok + adapter_tok);
            f.map_geometric += m * (eq_layer_norm(c) + 2 * eq_linear(c, c) + dist / 2);
        }

        if variant == Variant::Rpe {
            let pair_mlp = RPE_FEATURIZE + dense(RPE_FEATURES, s) + s + dense(s, 2 * s) + 2 * s;
            f.rpe_agent_pairs += pairs_self * pair_mlp;
            f.rpe_temporal_pairs += pairs_time * pair_mlp;
            f.rpe_map_pairs += pairs_cross * pair_mlp;
        }
    }
    if geo {
        f.geometric_features += l * (10 + eq_linear(1, c));
        f.map_geometric += m * (10 + eq_linear(1, c));
    }
    f.decoder = l * (layer_norm(s) + dense(s, s) + s + dense(s, vocab_mean));
    f
}
