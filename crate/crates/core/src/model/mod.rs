//! The equivariant traffic model: input encoders, factorized attention
//! blocks, the invariant decoder, training and sampling.

mod baseline;
mod batch;
mod flops;
mod sample;
mod train;

pub use baseline::{rpe_attention, rpe_features, BaselineModel, RpeMlp};
pub use batch::{TokenBatch, RAW_POSE_FEATURES};
pub use flops::{flop_count, FlopBreakdown, Variant};
pub use sample::{sample_action, SampleMode};
pub use train::{train, LossRecord, TrainConfig, Trainer};

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Var};
use crate::blocks::{frame_matrix, AttentionBlock, InvariantAdapter, LinearIds, MlpBlock};
use crate::layers::attention::{AttentionConfig, AttnGroup};
use crate::layers::norm::DEFAULT_EPS;
use crate::real::{DType, Real};
use crate::scene::{encode_token_pose, AgentClass, SceneError, AGENT_FEATURES, MAP_FEATURES};
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{0}")]
    Shape(String),
    #[error("non-finite loss {loss} at step {step}; largest parameter norms: {norms}")]
    NonFinite { step: usize, loss: f64, norms: String },
}

/// Which map nodes each agent token attends to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapAttention {
    All,
    /// The `k` nodes closest to the token's position.
    Knn(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub mv_channels: usize,
    pub scalar_channels: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Per [`AgentClass::index`].
    pub vocab_sizes: [usize; 3],
    pub map_attention: MapAttention,
    pub distance_awareness: bool,
    pub dtype: DType,
    pub seed: u64,
    /// Feeds global poses into the scalar inputs. Breaks invariance on
    /// purpose; only used as a negative control.
    pub raw_pose_scalars: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mv_channels: 4,
            scalar_channels: 32,
            heads: 2,
            blocks: 2,
            vocab_sizes: [64; 3],
            map_attention: MapAttention::All,
            distance_awareness: true,
            dtype: DType::F64,
            seed: 0,
            raw_pose_scalars: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.heads == 0 || self.mv_channels % self.heads != 0 || self.scalar_channels % self.heads != 0 {
            return bad(format!("heads {} must divide {} and {}", self.heads, self.mv_channels, self.scalar_channels));
        }
        if self.mv_channels == 0 || self.scalar_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.vocab_sizes.iter().any(|&v| v == 0) {
            return bad("vocabulary sizes must be positive".into());
        }
        if let MapAttention::Knn(0) = self.map_attention {
            return bad("knn map attention needs k >= 1".into());
        }
        Ok(())
    }

    pub fn agent_feature_width(&self) -> usize {
        AGENT_FEATURES + if self.raw_pose_scalars { RAW_POSE_FEATURES } else { 0 }
    }

    fn attention(&self, causal: bool) -> AttentionConfig {
        AttentionConfig {
            heads: self.heads,
            mv_channels: self.mv_channels,
            scalar_channels: self.scalar_channels,
            distance_awareness: self.distance_awareness,
            eps: crate::layers::attention::DEFAULT_DISTANCE_EPS,
            causal,
        }
    }

    /// Row offset of each class in the previous-action table (one start row per class).
    fn action_offsets(&self) -> [usize; 3] {
        let v = self.vocab_sizes;
        [0, v[0] + 1, v[0] + v[1] + 2]
    }

    fn action_rows(&self) -> usize {
        self.vocab_sizes.iter().sum::<usize>() + 3
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    cross: AttentionBlock,
    agents: AttentionBlock,
    time: AttentionBlock,
    mlp: MlpBlock,
    adapter: InvariantAdapter,
}

#[derive(Debug, Clone, PartialEq)]
struct Ids {
    agent_mv: LinearIds,
    agent_s1: LinearIds,
    agent_s2: LinearIds,
    map_mv: LinearIds,
    map_s1: LinearIds,
    map_s2: LinearIds,
    prev_action: ParamId,
    blocks: Vec<Block>,
    heads: [(LinearIds, LinearIds); 3],
}

fn build_ids<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>) -> Result<Ids, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (c, s) = (cfg.mv_channels, cfg.scalar_channels);
    let r2 = 2f64.sqrt();
    let agent_mv = LinearIds::new_eq(store, "enc.agent_mv", 1, c, 1.0, &mut rng)?;
    let agent_s1 = LinearIds::new_dense(store, "enc.agent_s1", cfg.agent_feature_width(), s, r2, &mut rng)?;
    let agent_s2 = LinearIds::new_dense(store, "enc.agent_s2", s, s, 1.0, &mut rng)?;
    let map_mv = LinearIds::new_eq(store, "enc.map_mv", 1, c, 1.0, &mut rng)?;
    let map_s1 = LinearIds::new_dense(store, "enc.map_s1", MAP_FEATURES, s, r2, &mut rng)?;
    let map_s2 = LinearIds::new_dense(store, "enc.map_s2", s, s, 1.0, &mut rng)?;
    let normal = Normal::new(0.0, 0.1).unwrap();
    let table = (0..cfg.action_rows() * s).map(|_| T::cast(normal.sample(&mut rng))).collect();
    let prev_action = store.insert("enc.prev_action", &[cfg.action_rows(), s], table)?;
    let mut blocks = Vec::with_capacity(cfg.blocks);
    for i in 0..cfg.blocks {
        let p = format!("block{i}");
        blocks.push(Block {
            cross: AttentionBlock::new(store, &format!("{p}.cross"), cfg.attention(false), &mut rng)?,
            agents: AttentionBlock::new(store, &format!("{p}.agents"), cfg.attention(false), &mut rng)?,
            time: AttentionBlock::new(store, &format!("{p}.time"), cfg.attention(true), &mut rng)?,
            mlp: MlpBlock::new(store, &format!("{p}.mlp"), c, s, &mut rng)?,
            adapter: InvariantAdapter::new(store, &format!("{p}.adapter"), c, s, &mut rng)?,
        });
    }
    let mut head = |class: AgentClass| -> Result<(LinearIds, LinearIds), ModelError> {
        let name = class.as_str();
        Ok((
            LinearIds::new_dense(store, &format!("dec.{name}.hidden"), s, s, r2, &mut rng)?,
            LinearIds::new_dense(store, &format!("dec.{name}.out"), s, cfg.vocab_sizes[class.index()], 0.01, &mut rng)?,
        ))
    };
    let heads = [head(AgentClass::Vehicle)?, head(AgentClass::Pedestrian)?, head(AgentClass::Cyclist)?];
    Ok(Ids { agent_mv, agent_s1, agent_s2, map_mv, map_s1, map_s2, prev_action, blocks, heads })
}

fn cast_vec<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|x| T::cast(*x)).collect()
}

/// Several scenes laid out as one token set, with the attention groups that
/// keep scenes independent.
struct Layout {
    n_agent: usize,
    n_map: usize,
    agent_mv: Vec<f64>,
    agent_feats: Vec<f64>,
    map_mv: Vec<f64>,
    map_feats: Vec<f64>,
    prev_rows: Vec<usize>,
    classes: Vec<AgentClass>,
    targets: Vec<Option<usize>>,
    frames: Arc<Vec<[[f64; 8]; 8]>>,
    cross: Arc<Vec<AttnGroup>>,
    agents: Arc<Vec<AttnGroup>>,
    time: Arc<Vec<AttnGroup>>,
}

fn layout(cfg: &ModelConfig, batches: &[&TokenBatch]) -> Result<Layout, ModelError> {
    let fw = cfg.agent_feature_width();
    let offsets = cfg.action_offsets();
    let mut l = Layout {
        n_agent: 0,
        n_map: 0,
        agent_mv: Vec::new(),
        agent_feats: Vec::new(),
        map_mv: Vec::new(),
        map_feats: Vec::new(),
        prev_rows: Vec::new(),
        classes: Vec::new(),
        targets: Vec::new(),
        frames: Arc::new(Vec::new()),
        cross: Arc::new(Vec::new()),
        agents: Arc::new(Vec::new()),
        time: Arc::new(Vec::new()),
    };
    let mut frames = Vec::new();
    let (mut cross, mut agents, mut time) = (Vec::new(), Vec::new(), Vec::new());
    for b in batches {
        if b.feature_width != fw {
            return Err(ModelError::Shape(format!("batch feature width {} but model expects {}", b.feature_width, fw)));
        }
        if b.map_len() == 0 {
            return Err(ModelError::Shape("scene has no map nodes".into()));
        }
        let (a0, m0) = (l.n_agent, l.n_map);
        let (na, nt, nm) = (b.agents, b.steps, b.map_len());
        for i in 0..na * nt {
            let class = b.classes[i / nt];
            l.agent_mv.extend_from_slice(&encode_token_pose(&b.poses[i]).0);
            frames.push(frame_matrix(&b.poses[i]));
            l.classes.push(class);
            let v = cfg.vocab_sizes[class.index()];
            let row = match b.prev_tokens[i] {
                Some(t) if t < v => t,
                Some(t) => return Err(ModelError::Shape(format!("previous token {t} outside vocabulary of {v}"))),
                None => v,
            };
            l.prev_rows.push(offsets[class.index()] + row);
            l.targets.push(b.targets[i].filter(|_| b.valid[i]));
        }
        l.agent_feats.extend_from_slice(&b.agent_features);
        for p in &b.map_poses {
            l.map_mv.extend_from_slice(&encode_token_pose(p).0);
        }
        l.map_feats.extend_from_slice(&b.map_features);

        match cfg.map_attention {
            MapAttention::All => {
                cross.push(AttnGroup::dense((a0..a0 + na * nt).collect(), (m0..m0 + nm).collect()));
            }
            MapAttention::Knn(k) => {
                for i in 0..na * nt {
                    let p = b.poses[i];
                    let mut order: Vec<(f64, usize)> =
                        b.map_poses.iter().enumerate().map(|(j, m)| ((m.x - p.x).hypot(m.y - p.y), j)).collect();
                    order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                    let keys = order.iter().take(k).map(|&(_, j)| m0 + j).collect();
                    cross.push(AttnGroup::dense(vec![a0 + i], keys));
                }
            }
        }
        for t in 0..nt {
            let toks: Vec<usize> = (0..na).map(|a| a0 + a * nt + t).collect();
            let vis: Vec<bool> = (0..na).map(|a| b.valid[a * nt + t]).collect();
            let mask = (0..na).flat_map(|_| vis.iter().copied()).collect();
            agents.push(AttnGroup { queries: toks.clone(), keys: toks, mask: Some(mask) });
        }
        for a in 0..na {
            let toks: Vec<usize> = (0..nt).map(|t| a0 + a * nt + t).collect();
            let vis: Vec<bool> = (0..nt).map(|t| b.valid[a * nt + t]).collect();
            let mask = (0..nt).flat_map(|_| vis.iter().copied()).collect();
            time.push(AttnGroup { queries: toks.clone(), keys: toks, mask: Some(mask) });
        }
        l.n_agent += na * nt;
        l.n_map += nm;
    }
    l.frames = Arc::new(frames);
    l.cross = Arc::new(cross);
    l.agents = Arc::new(agents);
    l.time = Arc::new(time);
    Ok(l)
}

/// Model parameters plus the id map that wires them into the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real = f64> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    ids: Ids,
}

impl<T: Real> Model<T> {
    /// Fresh parameters, seeded by `cfg.seed`.
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        let mut store = ParamStore::new();
        let ids = build_ids(&cfg, &mut store)?;
        Ok(Model { cfg, store, ids })
    }

    /// Wraps existing parameters; names and shapes must match the config.
    pub fn from_store(cfg: ModelConfig, store: ParamStore<T>) -> Result<Self, ModelError> {
        let fresh = Self::new(cfg)?;
        if fresh.store.len() != store.len() {
            return Err(ModelError::Shape(format!("expected {} parameters, got {}", fresh.store.len(), store.len())));
        }
        for ((_, a), (_, b)) in fresh.store.iter().zip(store.iter()) {
            if a.name != b.name || a.shape != b.shape {
                return Err(ModelError::Shape(format!("parameter `{}` {:?} does not match `{}` {:?}", b.name, b.shape, a.name, a.shape)));
            }
        }
        Ok(Model { cfg, store, ids: fresh.ids })
    }

    /// Same parameters in another element type.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { cfg: self.cfg, store: self.store.cast(), ids: self.ids.clone() }
    }

    fn input_leaves(&self, tape: &mut Tape<T>, l: &Layout) -> Result<(Var, Var), ModelError> {
        let amv = tape.constant(&[l.n_agent, 1, 8], cast_vec(&l.agent_mv))?;
        let af = tape.constant(&[l.n_agent, self.cfg.agent_feature_width()], cast_vec(&l.agent_feats))?;
        Ok((amv, af))
    }

    /// Records the network from encoded agent inputs up to the final
    /// scalar features `[n_agent, C']`.
    fn record_features(&self, tape: &mut Tape<T>, l: &Layout, agent_mv: Var, agent_feats: Var) -> Result<Var, ModelError> {
        let st = &self.store;
        let ids = &self.ids;
        let mut mv = ids.agent_mv.eq(tape, st, agent_mv)?;
        let h = ids.agent_s1.dense(tape, st, agent_feats)?;
        let h = tape.relu(h);
        let h = ids.agent_s2.dense(tape, st, h)?;
        let table = tape.param(st, ids.prev_action);
        let emb = tape.gather_rows(table, &l.prev_rows)?;
        let mut sc = tape.add(h, emb)?;

        let mmv = tape.constant(&[l.n_map, 1, 8], cast_vec(&l.map_mv))?;
        let map_mv = ids.map_mv.eq(tape, st, mmv)?;
        let mf = tape.constant(&[l.n_map, MAP_FEATURES], cast_vec(&l.map_feats))?;
        let h = ids.map_s1.dense(tape, st, mf)?;
        let h = tape.relu(h);
        let map_s = ids.map_s2.dense(tape, st, h)?;

        for b in &ids.blocks {
            (mv, sc) = b.cross.apply(tape, st, mv, sc, map_mv, map_s, l.cross.clone())?;
            (mv, sc) = b.agents.apply(tape, st, mv, sc, mv, sc, l.agents.clone())?;
            (mv, sc) = b.time.apply(tape, st, mv, sc, mv, sc, l.time.clone())?;
            (mv, sc) = b.mlp.apply(tape, st, mv, sc)?;
            sc = b.adapter.apply(tape, st, mv, sc, l.frames.clone())?;
        }
        Ok(sc)
    }

    fn head(&self, tape: &mut Tape<T>, class: AgentClass, x: Var) -> Result<Var, ModelError> {
        let (hidden, out) = &self.ids.heads[class.index()];
        let x = tape.layer_norm(x, DEFAULT_EPS)?;
        let x = hidden.dense(tape, &self.store, x)?;
        let x = tape.relu(x);
        Ok(out.dense(tape, &self.store, x)?)
    }

    /// Logits for every agent token of one batch, token-major
    /// (`a * steps + t`), each row sized by that agent's vocabulary.
    pub fn logits(&self, batch: &TokenBatch) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(self.logits_many(&[batch])?.pop().unwrap())
    }

    pub fn logits_many(&self, batches: &[&TokenBatch]) -> Result<Vec<Vec<Vec<f64>>>, ModelError> {
        let l = layout(&self.cfg, batches)?;
        let mut tape = Tape::inference();
        let (amv, af) = self.input_leaves(&mut tape, &l)?;
        let feats = self.record_features(&mut tape, &l, amv, af)?;
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); l.n_agent];
        for class in AgentClass::ALL {
            let idx: Vec<usize> = (0..l.n_agent).filter(|&i| l.classes[i] == class).collect();
            if idx.is_empty() {
                continue;
            }
            let x = tape.gather_rows(feats, &idx)?;
            let lg = self.head(&mut tape, class, x)?;
            let v = self.cfg.vocab_sizes[class.index()];
            for (r, &i) in idx.iter().enumerate() {
                rows[i] = tape.value(lg)[r * v..(r + 1) * v].iter().map(|x| x.as_f64()).collect();
            }
        }
        let mut out = Vec::with_capacity(batches.len());
        let mut it = rows.into_iter();
        for b in batches {
            out.push(it.by_ref().take(b.tokens()).collect());
        }
        Ok(out)
    }

    /// Mean cross entropy over all target positions; records on `tape`.
    fn record_loss(&self, tape: &mut Tape<T>, l: &Layout, agent_mv: Var, agent_feats: Var) -> Result<(Var, usize), ModelError> {
        let feats = self.record_features(tape, l, agent_mv, agent_feats)?;
        let total = l.targets.iter().flatten().count();
        if total == 0 {
            return Err(AutodiffError::EmptyTargets.into());
        }
        let mut loss: Option<Var> = None;
        for class in AgentClass::ALL {
            let idx: Vec<usize> = (0..l.n_agent).filter(|&i| l.classes[i] == class && l.targets[i].is_some()).collect();
            if idx.is_empty() {
                continue;
            }
            let x = tape.gather_rows(feats, &idx)?;
            let lg = self.head(tape, class, x)?;
            let tg: Vec<Option<usize>> = idx.iter().map(|&i| l.targets[i]).collect();
            let ce = tape.cross_entropy(lg, &tg)?;
            let part = tape.scale(ce, idx.len() as f64 / total as f64);
            loss = Some(match loss {
                Some(acc) => tape.add(acc, part)?,
                None => part,
            });
        }
        Ok((loss.expect("at least one class has targets"), total))
    }

    /// Mean loss without gradients.
    pub fn loss(&self, batches: &[&TokenBatch]) -> Result<f64, ModelError> {
        let l = layout(&self.cfg, batches)?;
        let mut tape = Tape::inference();
        let (amv, af) = self.input_leaves(&mut tape, &l)?;
        let (loss, _) = self.record_loss(&mut tape, &l, amv, af)?;
        Ok(tape.value(loss)[0].as_f64())
    }

    /// Mean loss, number of target positions and one gradient per parameter.
    pub fn loss_and_grads(&self, batches: &[&TokenBatch]) -> Result<(f64, usize, Vec<Vec<T>>), ModelError> {
        let l = layout(&self.cfg, batches)?;
        let mut tape = Tape::new();
        let (amv, af) = self.input_leaves(&mut tape, &l)?;
        let (loss, count) = self.record_loss(&mut tape, &l, amv, af)?;
        let grads = tape.backward(loss, T::one())?;
        Ok((tape.value(loss)[0].as_f64(), count, grads.dense_params(&self.store)))
    }

    /// Loss as a function of differentiable agent-token inputs, for gradient checks:
    /// `(agent multivectors [N, 1, 8], agent features [N, D])`.
    pub fn loss_wrt_inputs(&self, tape: &mut Tape<T>, batches: &[&TokenBatch], agent_mv: Var, agent_feats: Var) -> Result<Var, ModelError> {
        let l = layout(&self.cfg, batches)?;
        let fw = self.cfg.agent_feature_width();
        if tape.shape(agent_mv) != [l.n_agent, 1, 8] || tape.shape(agent_feats) != [l.n_agent, fw] {
            return Err(ModelError::Shape("input vars do not match the batch layout".into()));
        }
        Ok(self.record_loss(tape, &l, agent_mv, agent_feats)?.0)
    }

    /// Encoded agent inputs of a batch layout, matching [`Model::loss_wrt_inputs`].
    pub fn agent_inputs(&self, batches: &[&TokenBatch]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let l = layout(&self.cfg, batches)?;
        Ok((l.agent_mv, l.agent_feats))
    }

    /// `(name, L2 norm)` of every parameter, largest first.
    pub fn param_norms(&self) -> Vec<(String, f64)> {
        let mut v: Vec<(String, f64)> =
            self.store.iter().map(|(_, p)| (p.name.clone(), p.data.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt())).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1));
        v
    }
}
