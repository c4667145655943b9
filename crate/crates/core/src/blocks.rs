//! Composite layers recorded on the autodiff tape: the pre-norm attention
//! block, the equivariant MLP block and the invariant adapter.
//!
//! Parameters live in a [`ParamStore`]; the structs here only hold ids.
//! Each block also has a pure wrapper that evaluates it on arrays.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Var};
use crate::batch::{MvArray, ScalarArray};
use crate::layers::attention::{AttentionConfig, AttnGroup};
use crate::layers::linear::PARAMS_PER_PAIR;
use crate::layers::norm::DEFAULT_EPS;
use crate::pga::tables::sandwich_matrix;
use crate::pga::{Motor, Pose2};
use crate::real::Real;
#[allow(unused_imports)]
use num_traits::Float;

/// Weight and bias ids of one linear map (equivariant or dense).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

impl LinearIds {
    /// Equivariant linear `c_in -> c_out`; `w ~ N(0, gain²/c_in)`, `v, u ~ N(0, 0.1 gain²/c_in)`.
    pub fn new_eq<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let sw = gain / (c_in.max(1) as f64).sqrt();
        let nw = Normal::new(0.0, sw).unwrap();
        let nvu = Normal::new(0.0, sw * 0.1f64.sqrt()).unwrap();
        let data = (0..c_out * c_in * PARAMS_PER_PAIR)
            .map(|i| T::cast(if i % PARAMS_PER_PAIR < 4 { nw.sample(rng) } else { nvu.sample(rng) }))
            .collect();
        let w = store.insert(&format!("{name}.w"), &[c_out, c_in, PARAMS_PER_PAIR], data)?;
        let b = store.insert(&format!("{name}.b"), &[c_out], vec![T::zero(); c_out])?;
        Ok(LinearIds { w, b })
    }

    /// Dense `d_in -> d_out` with `W ~ N(0, gain²/d_in)` and zero bias.
    pub fn new_dense<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let n = Normal::new(0.0, gain / (d_in.max(1) as f64).sqrt()).unwrap();
        let data = (0..d_in * d_out).map(|_| T::cast(n.sample(rng))).collect();
        let w = store.insert(&format!("{name}.w"), &[d_in, d_out], data)?;
        let b = store.insert(&format!("{name}.b"), &[d_out], vec![T::zero(); d_out])?;
        Ok(LinearIds { w, b })
    }

    pub fn eq<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, AutodiffError> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.eq_linear(x, w, Some(b))
    }

    pub fn dense<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, AutodiffError> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.dense(x, w, Some(b))
    }
}

/// Zeroes every parameter whose name starts with `prefix`.
pub fn zero_params<T: Real>(store: &mut ParamStore<T>, prefix: &str) {
    for (_, p) in store.iter_mut() {
        if p.name.starts_with(prefix) {
            p.data.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionBlock {
    pub cfg: AttentionConfig,
    pub mv_q: LinearIds,
    pub mv_k: LinearIds,
    pub mv_v: LinearIds,
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
}

impl AttentionBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: AttentionConfig,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        cfg.validate()?;
        let (c, s) = (cfg.mv_channels, cfg.scalar_channels);
        Ok(AttentionBlock {
            cfg,
            mv_q: LinearIds::new_eq(store, &format!("{name}.mv_q"), c, c, 1.0, rng)?,
            mv_k: LinearIds::new_eq(store, &format!("{name}.mv_k"), c, c, 1.0, rng)?,
            mv_v: LinearIds::new_eq(store, &format!("{name}.mv_v"), c, c, 1.0, rng)?,
            q: LinearIds::new_dense(store, &format!("{name}.q"), s, s, 1.0, rng)?,
            k: LinearIds::new_dense(store, &format!("{name}.k"), s, s, 1.0, rng)?,
            v: LinearIds::new_dense(store, &format!("{name}.v"), s, s, 1.0, rng)?,
        })
    }

    /// Pre-norm attention of query tokens over key/value tokens. Pass the
    /// same vars twice for self-attention. The residual adds the normalized
    /// query features back onto the attention output.
    #[allow(clippy::too_many_arguments)]
    pub fn apply<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        mv_q: Var,
        s_q: Var,
        mv_kv: Var,
        s_kv: Var,
        groups: Arc<Vec<AttnGroup>>,
    ) -> Result<(Var, Var), AutodiffError> {
        let mq = tape.eq_layer_norm(mv_q, DEFAULT_EPS)?;
        let sq = tape.layer_norm(s_q, DEFAULT_EPS)?;
        let (mkv, skv) = if mv_kv == mv_q && s_kv == s_q {
            (mq, sq)
        } else {
            (tape.eq_layer_norm(mv_kv, DEFAULT_EPS)?, tape.layer_norm(s_kv, DEFAULT_EPS)?)
        };
        let query_mv = self.mv_q.eq(tape, store, mq)?;
        let key_mv = self.mv_k.eq(tape, store, mkv)?;
        let value_mv = self.mv_v.eq(tape, store, mkv)?;
        let query = self.q.dense(tape, store, sq)?;
        let key = self.k.dense(tape, store, skv)?;
        let value = self.v.dense(tape, store, skv)?;
        let (om, os) = tape.attention(query_mv, key_mv, value_mv, query, key, value, &self.cfg, groups)?;
        Ok((tape.add(om, mq)?, tape.add(os, sq)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpBlock {
    pub mv_channels: usize,
    pub scalar_channels: usize,
    /// `C -> 4C`, feeding the four bilinear operands.
    pub expand: LinearIds,
    /// `2C -> 2C` after the bilinear.
    pub hidden: LinearIds,
    /// `2C -> C`
    pub out: LinearIds,
    /// `C' -> 2C'`
    pub s_hidden: LinearIds,
    /// `2C' -> C'`
    pub s_out: LinearIds,
}

impl MlpBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        mv_channels: usize,
        scalar_channels: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let (c, s) = (mv_channels, scalar_channels);
        Ok(MlpBlock {
            mv_channels,
            scalar_channels,
            expand: LinearIds::new_eq(store, &format!("{name}.expand"), c, 4 * c, 1.0, rng)?,
            hidden: LinearIds::new_eq(store, &format!("{name}.hidden"), 2 * c, 2 * c, 1.0, rng)?,
            out: LinearIds::new_eq(store, &format!("{name}.out"), 2 * c, c, 1.0, rng)?,
            s_hidden: LinearIds::new_dense(store, &format!("{name}.s_hidden"), s, 2 * s, 2f64.sqrt(), rng)?,
            s_out: LinearIds::new_dense(store, &format!("{name}.s_out"), 2 * s, s, 1.0, rng)?,
        })
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, mv: Var, s: Var) -> Result<(Var, Var), AutodiffError> {
        let c = self.mv_channels;
        let m = tape.eq_layer_norm(mv, DEFAULT_EPS)?;
        let f = tape.layer_norm(s, DEFAULT_EPS)?;
        let m = self.expand.eq(tape, store, m)?;
        let w = tape.slice_mv(m, 0, c)?;
        let x = tape.slice_mv(m, c, c)?;
        let y = tape.slice_mv(m, 2 * c, c)?;
        let z = tape.slice_mv(m, 3 * c, c)?;
        let gp = tape.geometric_product(w, x)?;
        let jn = tape.join(y, z)?;
        let m = tape.concat_mv(&[gp, jn])?;
        let m = self.hidden.eq(tape, store, m)?;
        let f = self.s_hidden.dense(tape, store, f)?;
        let m = tape.gated_relu(m)?;
        let f = tape.relu(f);
        let m = self.out.eq(tape, store, m)?;
        let f = self.s_out.dense(tape, store, f)?;
        Ok((tape.add(m, mv)?, tape.add(f, s)?))
    }
}

/// Sandwich matrix of the motor taking global coordinates into the frame of `pose`.
pub fn frame_matrix(pose: &Pose2) -> [[f64; 8]; 8] {
    let u = Motor::from_pose(pose).reverse();
    sandwich_matrix(&u.to_multivector().0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantAdapter {
    pub mv_channels: usize,
    pub scalar_channels: usize,
    pub hidden: LinearIds,
    pub out: LinearIds,
}

impl InvariantAdapter {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        mv_channels: usize,
        scalar_channels: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let (c, s) = (mv_channels, scalar_channels);
        Ok(InvariantAdapter {
            mv_channels,
            scalar_channels,
            hidden: LinearIds::new_dense(store, &format!("{name}.hidden"), 8 * c, s, 2f64.sqrt(), rng)?,
            out: LinearIds::new_dense(store, &format!("{name}.out"), s, s, 1.0, rng)?,
        })
    }

    /// `s + MLP(flatten(u v u⁻¹))` with one frame matrix per token.
    pub fn apply<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        mv: Var,
        s: Var,
        frames: Arc<Vec<[[f64; 8]; 8]>>,
    ) -> Result<Var, AutodiffError> {
        let local = tape.sandwich(mv, frames)?;
        let n = tape.value(local).len() / (8 * self.mv_channels.max(1));
        let flat = tape.reshape(local, &[n, 8 * self.mv_channels])?;
        let h = self.hidden.dense(tape, store, flat)?;
        let h = tape.relu(h);
        let h = self.out.dense(tape, store, h)?;
        let s_flat = tape.reshape(s, &[n, self.scalar_channels])?;
        let out = tape.add(h, s_flat)?;
        let shape = tape.shape(s).to_vec();
        tape.reshape(out, &shape)
    }
}

fn mv_leaf<T: Real>(tape: &mut Tape<T>, x: &MvArray<T>) -> Var {
    tape.constant(&x.shape(), x.data().to_vec()).expect("array shapes are consistent")
}

fn s_leaf<T: Real>(tape: &mut Tape<T>, x: &ScalarArray<T>) -> Var {
    let mut shape = x.lead().to_vec();
    shape.push(x.channels());
    tape.constant(&shape, x.data().to_vec()).expect("array shapes are consistent")
}

fn to_mv<T: Real>(tape: &Tape<T>, v: Var, like: &MvArray<T>) -> MvArray<T> {
    let c = tape.shape(v)[tape.shape(v).len() - 2];
    MvArray::from_vec(like.lead(), c, tape.value(v).to_vec()).expect("same token layout")
}

fn to_s<T: Real>(tape: &Tape<T>, v: Var, like: &ScalarArray<T>) -> ScalarArray<T> {
    let c = *tape.shape(v).last().unwrap();
    ScalarArray::from_vec(like.lead(), c, tape.value(v).to_vec()).expect("same token layout")
}

/// Pure evaluation of an [`AttentionBlock`].
#[allow(clippy::too_many_arguments)]
pub fn attention_block<T: Real>(
    block: &AttentionBlock,
    store: &ParamStore<T>,
    mv_q: &MvArray<T>,
    s_q: &ScalarArray<T>,
    mv_kv: &MvArray<T>,
    s_kv: &ScalarArray<T>,
    groups: &[AttnGroup],
) -> Result<(MvArray<T>, ScalarArray<T>), AutodiffError> {
    let mut tape = Tape::inference();
    let (a, b) = (mv_leaf(&mut tape, mv_q), s_leaf(&mut tape, s_q));
    let (c, d) = (mv_leaf(&mut tape, mv_kv), s_leaf(&mut tape, s_kv));
    let (m, s) = block.apply(&mut tape, store, a, b, c, d, Arc::new(groups.to_vec()))?;
    Ok((to_mv(&tape, m, mv_q), to_s(&tape, s, s_q)))
}

/// Pure evaluation of an [`MlpBlock`].
pub fn eq_mlp_block<T: Real>(
    block: &MlpBlock,
    store: &ParamStore<T>,
    mv: &MvArray<T>,
    s: &ScalarArray<T>,
) -> Result<(MvArray<T>, ScalarArray<T>), AutodiffError> {
    let mut tape = Tape::inference();
    let (a, b) = (mv_leaf(&mut tape, mv), s_leaf(&mut tape, s));
    let (m, o) = block.apply(&mut tape, store, a, b)?;
    Ok((to_mv(&tape, m, mv), to_s(&tape, o, s)))
}

/// Pure evaluation of an [`InvariantAdapter`] with one frame pose per token.
pub fn invariant_adapter<T: Real>(
    adapter: &InvariantAdapter,
    store: &ParamStore<T>,
    mv: &MvArray<T>,
    s: &ScalarArray<T>,
    frames: &[Pose2],
) -> Result<ScalarArray<T>, AutodiffError> {
    let mut tape = Tape::inference();
    let (a, b) = (mv_leaf(&mut tape, mv), s_leaf(&mut tape, s));
    let mats = Arc::new(frames.iter().map(frame_matrix).collect());
    let o = adapter.apply(&mut tape, store, a, b, mats)?;
    Ok(to_s(&tape, o, s))
}
