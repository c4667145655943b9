use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use planar_gatr_core::autodiff::ParamStore;
use planar_gatr_core::batch::{batched_sandwich, MvArray, ScalarArray};
use planar_gatr_core::blocks::{attention_block, eq_mlp_block, invariant_adapter, AttentionBlock, InvariantAdapter, MlpBlock};
use planar_gatr_core::layers::{
    causal_mask, eq_attention, eq_layer_norm, eq_linear, gated_relu, geometric_bilinear, AttentionConfig, AttnGroup, EqLinearParams,
};
use planar_gatr_core::model::{Model, SampleMode, TokenBatch};
use planar_gatr_core::scene::{transform_scene, ActionVocab, Scene};
use planar_gatr_core::{DType, Motor, Pose2, Real};

use super::{par_map, rollout, HarnessError, RolloutConfig};
use crate::io::Provenance;

/// Rotation by 90° followed by a 100 m translation along x.
pub fn fixed_transform() -> Pose2 {
    Pose2::new(100.0, 0.0, FRAC_PI_2)
}

/// Heading uniform in (−π, π], translation uniform in [−200, 200]² m.
pub fn random_transform(rng: &mut impl Rng) -> Pose2 {
    let theta = PI - rng.random::<f64>() * 2.0 * PI;
    Pose2::new(rng.random_range(-200.0..=200.0), rng.random_range(-200.0..=200.0), theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub name: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub trials: usize,
    pub passed: bool,
}

impl AuditEntry {
    fn new(name: &str, max_deviation: f64, tolerance: f64, trials: usize) -> Self {
        // NaN deviations fail.
        let passed = max_deviation <= tolerance;
        AuditEntry { name: name.into(), max_deviation, tolerance, trials, passed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub provenance: Option<Provenance>,
    pub dtype: String,
    pub entries: Vec<AuditEntry>,
    pub rollout_scenes: usize,
    /// Scenes whose greedy token sequences were identical with and without the transform.
    pub rollout_agreements: usize,
    pub passed: bool,
}

impl AuditReport {
    pub fn to_csv(&self) -> Vec<u8> {
        let head = self.provenance.as_ref().map(Provenance::csv_comment).unwrap_or_default();
        let mut w = csv::Writer::from_writer(head.into_bytes());
        w.write_record(["check", "max_deviation", "tolerance", "trials", "passed"]).expect("in-memory write");
        for e in &self.entries {
            w.write_record([
                e.name.clone(),
                format!("{:e}", e.max_deviation),
                format!("{:e}", e.tolerance),
                e.trials.to_string(),
                e.passed.to_string(),
            ])
            .expect("in-memory write");
        }
        w.write_record([
            "rollout_token_agreement".to_string(),
            format!("{}/{}", self.rollout_agreements, self.rollout_scenes),
            "99%".into(),
            self.rollout_scenes.to_string(),
            agreement_ok(self.rollout_agreements, self.rollout_scenes).to_string(),
        ])
        .expect("in-memory write");
        w.into_inner().expect("in-memory write")
    }
}

fn agreement_ok(agree: usize, total: usize) -> bool {
    agree * 100 >= total * 99
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    /// Random motors per check, on top of the fixed 90° + 100 m transform.
    pub trials: usize,
    pub seed: u64,
    pub dtype: DType,
    /// Observed steps before the greedy rollouts start.
    pub history: usize,
    /// Greedy rollout length; 0 skips the rollout check.
    pub rollout_horizon: usize,
    pub context: usize,
    pub threads: usize,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions { trials: 20, seed: 0, dtype: DType::F64, history: 8, rollout_horizon: 10, context: 16, threads: 1 }
    }
}

pub const LAYER_TOLERANCE: f64 = 1e-10;

pub fn logit_tolerance(dtype: DType) -> f64 {
    match dtype {
        DType::F64 => 1e-8,
        DType::F32 => 1e-3,
    }
}

fn normal_vec(n: usize, sd: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let nd = Normal::new(0.0, sd).expect("valid sd");
    (0..n).map(|_| nd.sample(rng)).collect()
}

fn act(g: &Motor, x: &MvArray<f64>) -> MvArray<f64> {
    batched_sandwich(&vec![*g; x.tokens()], x).expect("matching token count")
}

/// `|a - b|∞ / max(1, |a|∞)`: exact equivariance leaves only rounding, which
/// grows with the magnitudes a translation introduces.
fn rel_dev(a: &MvArray<f64>, b: &MvArray<f64>) -> f64 {
    let scale = a.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.max_abs_diff(b) / scale
}

fn randomize_biases(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for (_, p) in store.iter_mut() {
        if p.name.ends_with(".b") {
            let n = p.data.len();
            p.data = normal_vec(n, 0.3, rng);
        }
    }
}

/// Equivariance of every layer primitive and block on random inputs and
/// random parameters, under the fixed transform plus `trials` random motors.
pub fn layer_audits(trials: usize, seed: u64) -> Result<Vec<AuditEntry>, HarnessError> {
    let err = |e: &dyn std::fmt::Display| HarnessError::Invalid(e.to_string());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, s) = (6, 4, 6);
    let mv = |rng: &mut ChaCha8Rng| MvArray::from_vec(&[n], c, normal_vec(n * c * 8, 1.0, rng)).expect("shape");
    let x = mv(&mut rng);
    let k = mv(&mut rng);
    let v = mv(&mut rng);
    let sc = ScalarArray::from_vec(&[n], s, normal_vec(n * s, 1.0, &mut rng)).expect("shape");
    let mut motors = vec![Motor::from_pose(&fixed_transform())];
    let mut poses = vec![fixed_transform()];
    for _ in 0..trials {
        let p = random_transform(&mut rng);
        poses.push(p);
        motors.push(Motor::from_pose(&p));
    }

    let lin = EqLinearParams::random(c, 3, &mut rng);
    let cfg = AttentionConfig::new(2, c, s);
    let groups = [AttnGroup::full(n, n, Some(causal_mask(n)))];
    let mut store = ParamStore::new();
    let mlp = MlpBlock::new(&mut store, "mlp", c, s, &mut rng).map_err(|e| err(&e))?;
    let attn = AttentionBlock::new(&mut store, "attn", cfg, &mut rng).map_err(|e| err(&e))?;
    let adapter = InvariantAdapter::new(&mut store, "adapter", c, s, &mut rng).map_err(|e| err(&e))?;
    randomize_biases(&mut store, &mut rng);
    let frames: Vec<Pose2> = (0..n).map(|_| random_transform(&mut rng)).collect();

    let fx = [eq_linear(&x, &lin).map_err(|e| err(&e))?, bilinear(&x).map_err(|e| err(&e))?, gated_relu(&x), eq_layer_norm(&x, 1e-6)];
    let (am0, as0) = eq_attention(&x, &k, &v, &sc, &sc, &sc, &cfg, &groups).map_err(|e| err(&e))?;
    let (mm0, ms0) = eq_mlp_block(&mlp, &store, &x, &sc).map_err(|e| err(&e))?;
    let (bm0, bs0) = attention_block(&attn, &store, &x, &sc, &x, &sc, &groups).map_err(|e| err(&e))?;
    let ad0 = invariant_adapter(&adapter, &store, &x, &sc, &frames).map_err(|e| err(&e))?;

    let names = [
        "eq_linear",
        "geometric_bilinear",
        "gated_relu",
        "eq_layer_norm",
        "eq_attention",
        "eq_mlp_block",
        "attention_block",
        "invariant_adapter",
    ];
    let mut worst = [0.0f64; 8];
    for (g, p) in motors.iter().zip(&poses) {
        let gx = act(g, &x);
        let fgx =
            [eq_linear(&gx, &lin).map_err(|e| err(&e))?, bilinear(&gx).map_err(|e| err(&e))?, gated_relu(&gx), eq_layer_norm(&gx, 1e-6)];
        let mut dev = [0.0f64; 8];
        for i in 0..4 {
            dev[i] = rel_dev(&act(g, &fx[i]), &fgx[i]);
        }
        let (m1, s1) = eq_attention(&gx, &act(g, &k), &act(g, &v), &sc, &sc, &sc, &cfg, &groups).map_err(|e| err(&e))?;
        dev[4] = rel_dev(&act(g, &am0), &m1).max(as0.max_abs_diff(&s1));
        let (m1, s1) = eq_mlp_block(&mlp, &store, &gx, &sc).map_err(|e| err(&e))?;
        dev[5] = rel_dev(&act(g, &mm0), &m1).max(ms0.max_abs_diff(&s1));
        let (m1, s1) = attention_block(&attn, &store, &gx, &sc, &gx, &sc, &groups).map_err(|e| err(&e))?;
        dev[6] = rel_dev(&act(g, &bm0), &m1).max(bs0.max_abs_diff(&s1));
        let moved: Vec<Pose2> = frames.iter().map(|f| p.compose(f)).collect();
        dev[7] = ad0.max_abs_diff(&invariant_adapter(&adapter, &store, &gx, &sc, &moved).map_err(|e| err(&e))?);
        for (w, d) in worst.iter_mut().zip(dev) {
            // NaN must survive the max.
            *w = if d.is_nan() || w.is_nan() { f64::NAN } else { w.max(d) };
        }
    }
    Ok(names.iter().zip(worst).map(|(n, w)| AuditEntry::new(n, w, LAYER_TOLERANCE, motors.len())).collect())
}

fn bilinear(x: &MvArray<f64>) -> Result<MvArray<f64>, planar_gatr_core::layers::LayerError> {
    let p = x.split_channels(&[1, 1, 1, 1])?;
    geometric_bilinear(&p[0], &p[1], &p[2], &p[3])
}

fn max_logit_dev<T: Real>(model: &Model<T>, scene: &Scene, vocab: &ActionVocab, g: &Pose2, steps: usize) -> Result<f64, HarnessError> {
    let raw = model.cfg.raw_pose_scalars;
    let a = model.logits(&TokenBatch::from_scene(scene, vocab, 0, steps, raw)?)?;
    let b = model.logits(&TokenBatch::from_scene(&transform_scene(scene, g), vocab, 0, steps, raw)?)?;
    Ok(a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Greedy rollouts of `scene` and of `g · scene`. Returns whether the token
/// sequences match and, if so, the largest pose deviation from the
/// transformed original rollout.
fn rollout_pair<T: Real>(
    model: &Model<T>,
    scene: &Scene,
    vocab: &ActionVocab,
    g: &Pose2,
    opts: &AuditOptions,
) -> Result<(bool, f64), HarnessError> {
    let cfg = RolloutConfig { history: opts.history, horizon: opts.rollout_horizon, context: opts.context, mode: SampleMode::Greedy };
    let a = rollout(model, scene, vocab, &cfg, 1, 0)?.remove(0);
    let b = rollout(model, &transform_scene(scene, g), vocab, &cfg, 1, 0)?.remove(0);
    if a.tokens != b.tokens {
        return Ok((false, f64::NAN));
    }
    let dev = a
        .future_poses()
        .iter()
        .flatten()
        .zip(b.future_poses().iter().flatten())
        .map(|(p, q)| {
            let moved = g.compose(p);
            (moved.x - q.x).abs().max((moved.y - q.y).abs())
        })
        .fold(0.0, f64::max);
    Ok((true, dev))
}

fn model_checks<T: Real>(
    model: &Model<T>,
    scenes: &[Scene],
    vocab: &ActionVocab,
    opts: &AuditOptions,
) -> Result<AuditReport, HarnessError> {
    let tol = logit_tolerance(opts.dtype);
    let fixed = fixed_transform();
    let per_scene = par_map(scenes, opts.threads, |i, s| -> Result<_, HarnessError> {
        let steps = s.horizon.min(opts.context);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)));
        let quarter = max_logit_dev(model, s, vocab, &fixed, steps)?;
        let mut random = 0.0f64;
        for _ in 0..opts.trials {
            random = random.max(max_logit_dev(model, s, vocab, &random_transform(&mut rng), steps)?);
        }
        let roll = if opts.rollout_horizon > 0 {
            let g = if i == 0 { fixed } else { random_transform(&mut rng) };
            Some(rollout_pair(model, s, vocab, &g, opts)?)
        } else {
            None
        };
        Ok((quarter, random, roll))
    });
    let per_scene: Vec<_> = per_scene.into_iter().collect::<Result<_, _>>()?;
    let quarter = per_scene.iter().map(|r| r.0).fold(0.0, f64::max);
    let random = per_scene.iter().map(|r| r.1).fold(0.0, f64::max);
    let rolls: Vec<(bool, f64)> = per_scene.iter().filter_map(|r| r.2).collect();
    let agree = rolls.iter().filter(|r| r.0).count();
    let pose_dev = rolls.iter().filter(|r| r.0).map(|r| r.1).fold(0.0, f64::max);

    let mut entries = vec![
        AuditEntry::new("model_logits_rot90_shift100", quarter, tol, scenes.len()),
        AuditEntry::new("model_logits_random", random, tol, scenes.len() * opts.trials),
    ];
    if !rolls.is_empty() {
        entries.push(AuditEntry::new("rollout_pose", pose_dev, 1e-6, agree));
    }
    Ok(AuditReport {
        provenance: None,
        dtype: opts.dtype.as_str().into(),
        entries,
        rollout_scenes: rolls.len(),
        rollout_agreements: agree,
        passed: false,
    })
}

/// Runs every layer audit and the end-to-end checks of `model` on `scenes`.
/// The report passes when every entry is within tolerance and greedy
/// rollouts agree on at least 99% of scenes.
pub fn equivariance_audit(
    model: &Model<f64>,
    scenes: &[Scene],
    vocab: &ActionVocab,
    opts: &AuditOptions,
) -> Result<AuditReport, HarnessError> {
    if scenes.is_empty() {
        return Err(HarnessError::Invalid("the audit needs at least one scene".into()));
    }
    let mut report = match opts.dtype {
        DType::F64 => model_checks(model, scenes, vocab, opts)?,
        DType::F32 => model_checks(&model.cast::<f32>(), scenes, vocab, opts)?,
    };
    let mut entries = layer_audits(opts.trials, opts.seed)?;
    entries.append(&mut report.entries);
    report.entries = entries;
    report.passed = report.entries.iter().all(|e| e.passed) && agreement_ok(report.rollout_agreements, report.rollout_scenes);
    Ok(report)
}
