use std::f64::consts::PI;
use std::sync::Arc;

use planar_gatr_core::autodiff::{grad_check, AutodiffError, ParamStore, Tape, Var};
use planar_gatr_core::batch::{batched_sandwich, MvArray, ScalarArray};
use planar_gatr_core::blocks::{
    attention_block, eq_mlp_block, frame_matrix, invariant_adapter, AttentionBlock, InvariantAdapter, MlpBlock,
};
use planar_gatr_core::layers::attention::{distance_key, distance_query, group_logits, AttnInputs};
use planar_gatr_core::layers::{
    causal_mask, eq_attention, eq_layer_norm, eq_linear, gated_relu, geometric_bilinear, AttentionConfig, AttnGroup, EqLinearParams,
};
use planar_gatr_core::pga::tables::invariant_inner;
use planar_gatr_core::{Motor, Pose2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const AUDITS: usize = 200;
const TOL: f64 = 1e-10;
const GRAD_STEP: f64 = 1e-6;
/// Gradient magnitude below which finite-difference rounding is judged on absolute error.
const GRAD_SCALE: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_mv(n: usize, c: usize, r: &mut ChaCha8Rng) -> MvArray<f64> {
    let nd = Normal::new(0.0, 1.0).unwrap();
    MvArray::from_vec(&[n], c, (0..n * c * 8).map(|_| nd.sample(r)).collect()).unwrap()
}

fn random_s(n: usize, c: usize, r: &mut ChaCha8Rng) -> ScalarArray<f64> {
    let nd = Normal::new(0.0, 1.0).unwrap();
    ScalarArray::from_vec(&[n], c, (0..n * c).map(|_| nd.sample(r)).collect()).unwrap()
}

fn random_pose(r: &mut ChaCha8Rng, reach: f64) -> Pose2 {
    Pose2::new(r.random_range(-reach..reach), r.random_range(-reach..reach), r.random_range(-PI..PI))
}

fn act(m: &Motor, x: &MvArray<f64>) -> MvArray<f64> {
    batched_sandwich(&vec![*m; x.tokens()], x).unwrap()
}

/// Largest deviation of `f(g x)` from `g f(x)` over `AUDITS` random motors.
/// Inputs are unit scale and motors move them by up to 10 units.
fn audit(seed: u64, x: &MvArray<f64>, f: impl Fn(&MvArray<f64>) -> MvArray<f64>) -> f64 {
    let mut r = rng(seed);
    let fx = f(x);
    (0..AUDITS)
        .map(|_| {
            let g = Motor::from_pose(&random_pose(&mut r, 10.0));
            act(&g, &fx).max_abs_diff(&f(&act(&g, x)))
        })
        .fold(0.0, f64::max)
}

fn store_with<F: FnOnce(&mut ParamStore<f64>, &mut ChaCha8Rng) -> T, T>(seed: u64, f: F) -> (ParamStore<f64>, T) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let ids = f(&mut store, &mut r);
    // Biases start at zero; give them values so they are exercised too.
    let nd = Normal::new(0.0, 0.3).unwrap();
    for (_, p) in store.iter_mut() {
        if p.name.ends_with(".b") {
            p.data.iter_mut().for_each(|v| *v = nd.sample(&mut r));
        }
    }
    (store, ids)
}

#[test]
fn primitives_are_equivariant_and_control_is_not() {
    let mut r = rng(1);
    let x = random_mv(6, 4, &mut r);
    let lin = EqLinearParams::random(4, 3, &mut r);
    let mut results = vec![
        ("eq_linear", audit(10, &x, |x| eq_linear(x, &lin).unwrap())),
        (
            "geometric_bilinear",
            audit(11, &x, |x| {
                let p = x.split_channels(&[1, 1, 1, 1]).unwrap();
                geometric_bilinear(&p[0], &p[1], &p[2], &p[3]).unwrap()
            }),
        ),
        ("gated_relu", audit(12, &x, gated_relu)),
        ("eq_layer_norm", audit(13, &x, |x| eq_layer_norm(x, 1e-6))),
    ];

    let cfg = AttentionConfig::new(2, 4, 6);
    let s = random_s(6, 6, &mut r);
    let k = random_mv(6, 4, &mut r);
    let v = random_mv(6, 4, &mut r);
    let groups = [AttnGroup::full(6, 6, Some(causal_mask(6)))];
    let mut r2 = rng(14);
    let base = eq_attention(&x, &k, &v, &s, &s, &s, &cfg, &groups).unwrap();
    let mut attn_dev = 0.0f64;
    let mut attn_s_dev = 0.0f64;
    for _ in 0..AUDITS {
        let g = Motor::from_pose(&random_pose(&mut r2, 10.0));
        let (m, o) = eq_attention(&act(&g, &x), &act(&g, &k), &act(&g, &v), &s, &s, &s, &cfg, &groups).unwrap();
        attn_dev = attn_dev.max(act(&g, &base.0).max_abs_diff(&m));
        attn_s_dev = attn_s_dev.max(base.1.max_abs_diff(&o));
    }
    results.push(("eq_attention", attn_dev));
    results.push(("eq_attention scalars", attn_s_dev));

    let (store, block) = store_with(15, |st, r| MlpBlock::new(st, "mlp", 4, 6, r).unwrap());
    let (m0, s0) = eq_mlp_block(&block, &store, &x, &s).unwrap();
    let mut r3 = rng(16);
    let mut mlp_dev = 0.0f64;
    for _ in 0..AUDITS {
        let g = Motor::from_pose(&random_pose(&mut r3, 10.0));
        let (m1, s1) = eq_mlp_block(&block, &store, &act(&g, &x), &s).unwrap();
        mlp_dev = mlp_dev.max(act(&g, &m0).max_abs_diff(&m1)).max(s0.max_abs_diff(&s1));
    }
    results.push(("eq_mlp_block", mlp_dev));

    let (store, block) = store_with(17, |st, r| AttentionBlock::new(st, "attn", cfg, r).unwrap());
    let (m0, s0) = attention_block(&block, &store, &x, &s, &x, &s, &groups).unwrap();
    let mut r4 = rng(18);
    let mut blk_dev = 0.0f64;
    for _ in 0..AUDITS {
        let g = Motor::from_pose(&random_pose(&mut r4, 10.0));
        let gx = act(&g, &x);
        let (m1, s1) = attention_block(&block, &store, &gx, &s, &gx, &s, &groups).unwrap();
        blk_dev = blk_dev.max(act(&g, &m0).max_abs_diff(&m1)).max(s0.max_abs_diff(&s1));
    }
    results.push(("attention_block", blk_dev));

    let (store, adapter) = store_with(19, |st, r| InvariantAdapter::new(st, "ad", 4, 6, r).unwrap());
    let frames: Vec<Pose2> = (0..6).map(|_| random_pose(&mut r, 10.0)).collect();
    let a0 = invariant_adapter(&adapter, &store, &x, &s, &frames).unwrap();
    let mut r5 = rng(20);
    let mut ad_dev = 0.0f64;
    for _ in 0..AUDITS {
        let gp = random_pose(&mut r5, 10.0);
        let g = Motor::from_pose(&gp);
        let moved: Vec<Pose2> = frames.iter().map(|f| gp.compose(f)).collect();
        let a1 = invariant_adapter(&adapter, &store, &act(&g, &x), &s, &moved).unwrap();
        ad_dev = ad_dev.max(a0.max_abs_diff(&a1));
    }
    results.push(("invariant_adapter", ad_dev));

    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    for (name, dev) in &results {
        assert!(*dev <= TOL, "{name}: {dev}");
    }

    // Adding e1 times the scalar part is not equivariant: e1 rotates, the scalar does not.
    let control = audit(21, &x, |x| {
        let mut y = eq_linear(x, &lin).unwrap();
        for n in 0..y.tokens() {
            for c in 0..y.channels() {
                let mut m = y.get(n, c);
                m[2] += x.get(n, c)[0];
                y.set(n, c, m);
            }
        }
        y
    });
    assert!(control >= 1e3 * TOL.max(worst), "control {control} vs worst {worst}");
}

#[test]
fn sandwich_of_frame_matches_inverse_pose() {
    let mut r = rng(2);
    for _ in 0..50 {
        let p = random_pose(&mut r, 200.0);
        let direct = frame_matrix(&p);
        let via = Motor::from_pose(&p.inverse()).matrix();
        for i in 0..8 {
            for j in 0..8 {
                assert!((direct[i][j] - via[i][j]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn distance_identity() {
    let mut r = rng(3);
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (q01, q20, k01, k20) =
            (r.random_range(-50.0..50.0), r.random_range(-50.0..50.0), r.random_range(-50.0..50.0), r.random_range(-50.0..50.0));
        let phi = distance_query(1.0, q01, q20, eps);
        let psi = distance_key(1.0, k01, k20, eps);
        let lhs: f64 = phi.iter().zip(&psi).map(|(a, b)| a * b).sum();
        let rhs = -((k01 - q01).powi(2) + (k20 - q20).powi(2)) / (1.0 + eps).powi(2);
        worst = worst.max((lhs - rhs).abs() / rhs.abs().max(1e-12));
    }
    assert!(worst <= 1e-9, "{worst}");
}

#[test]
fn concatenated_logits_match_three_terms() {
    let mut r = rng(4);
    let cfg = AttentionConfig::new(2, 4, 6);
    let (nq, nk) = (5, 7);
    let (mq, mk) = (random_mv(nq, 4, &mut r), random_mv(nk, 4, &mut r));
    let (sq, sk) = (random_s(nq, 6, &mut r), random_s(nk, 6, &mut r));
    let inp = AttnInputs { mv_q: mq.data(), mv_k: mk.data(), mv_v: mk.data(), s_q: sq.data(), s_k: sk.data(), s_v: sk.data(), nq, nk };
    let group = AttnGroup::full(nq, nk, None);
    let (hc, hs) = (2, 3);
    let scale = 1.0 / ((4 * hc + 4 * hc + hs) as f64).sqrt();
    let mut worst = 0.0f64;
    for h in 0..2 {
        let got = group_logits(&cfg, &inp, &group, h);
        for i in 0..nq {
            for j in 0..nk {
                let scalar: f64 = (h * hs..(h + 1) * hs).map(|c| sq.row(i)[c] * sk.row(j)[c]).sum();
                let mut inner = 0.0;
                let mut dist = 0.0;
                for c in h * hc..(h + 1) * hc {
                    let (a, b) = (mq.get(i, c), mk.get(j, c));
                    inner += invariant_inner(&a, &b);
                    // Closed form of the distance term: -(a_q a_k / (D_q D_k)) |a_q b_k - a_k b_q|².
                    let (aq, ak) = (a[6], b[6]);
                    let (dq, dk) = (aq * aq + cfg.eps, ak * ak + cfg.eps);
                    let (u, w) = (aq * b[4] - ak * a[4], aq * b[5] - ak * a[5]);
                    dist += -(aq * ak / (dq * dk)) * (u * u + w * w);
                }
                let want = (scalar + inner + dist) * scale;
                worst = worst.max((got[i * nk + j] - want).abs());
            }
        }
    }
    assert!(worst <= 1e-12, "{worst}");
}

fn check(name: &str, inputs: &[(Vec<usize>, Vec<f64>)], f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>) {
    let report = grad_check(f, inputs, GRAD_STEP, 400, 5).unwrap();
    let err = report.max_error_at_scale(GRAD_SCALE);
    assert!(err <= 1e-5, "{name}: {err} ({report:?})");
}

fn randv(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    let nd = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| nd.sample(r)).collect()
}

/// Reduces any output to a scalar with fixed random weights.
fn project(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, AutodiffError> {
    let n = t.value(y).len();
    let w = randv(n, &mut rng(seed));
    t.dot_const(y, w)
}

#[test]
fn primitive_gradients() {
    let mut r = rng(6);
    let mv = |n: usize, c: usize, r: &mut ChaCha8Rng| (vec![n, c, 8], randv(n * c * 8, r));
    let sc = |n: usize, c: usize, r: &mut ChaCha8Rng| (vec![n, c], randv(n * c, r));

    check("eq_linear", &[mv(3, 2, &mut r), (vec![3, 2, 10], randv(60, &mut r)), (vec![3], randv(3, &mut r))], |t, v| {
        let y = t.eq_linear(v[0], v[1], Some(v[2]))?;
        project(t, y, 1)
    });
    check("geometric_product", &[mv(3, 2, &mut r), mv(3, 2, &mut r)], |t, v| {
        let y = t.geometric_product(v[0], v[1])?;
        project(t, y, 2)
    });
    check("join", &[mv(3, 2, &mut r), mv(3, 2, &mut r)], |t, v| {
        let y = t.join(v[0], v[1])?;
        project(t, y, 3)
    });
    check("gated_relu", &[mv(4, 3, &mut r)], |t, v| {
        let y = t.gated_relu(v[0])?;
        project(t, y, 4)
    });
    check("eq_layer_norm", &[mv(3, 3, &mut r)], |t, v| {
        let y = t.eq_layer_norm(v[0], 1e-6)?;
        project(t, y, 5)
    });
    check("layer_norm", &[sc(3, 5, &mut r)], |t, v| {
        let y = t.layer_norm(v[0], 1e-6)?;
        project(t, y, 6)
    });
    check("dense+relu", &[sc(4, 3, &mut r), (vec![3, 5], randv(15, &mut r)), (vec![5], randv(5, &mut r))], |t, v| {
        let y = t.dense(v[0], v[1], Some(v[2]))?;
        let y = t.relu(y);
        project(t, y, 7)
    });
    check("inner", &[mv(3, 2, &mut r), mv(3, 2, &mut r)], |t, v| {
        let y = t.inner(v[0], v[1])?;
        project(t, y, 8)
    });
    let mats: Arc<Vec<[[f64; 8]; 8]>> = Arc::new((0..3).map(|_| frame_matrix(&random_pose(&mut r, 5.0))).collect());
    check("sandwich", &[mv(3, 2, &mut r)], |t, v| {
        let y = t.sandwich(v[0], mats.clone())?;
        project(t, y, 9)
    });
    check("slices+concat+gather", &[mv(3, 4, &mut r), sc(3, 4, &mut r)], |t, v| {
        let a = t.slice_mv(v[0], 1, 2)?;
        let b = t.slice_mv(v[0], 0, 1)?;
        let m = t.concat_mv(&[a, b])?;
        let s = t.slice_scalar(v[1], 1, 3)?;
        let s = t.concat_scalar(&[s, s])?;
        let g = t.gather_rows(s, &[2, 0, 2])?;
        let pm = project(t, m, 10)?;
        let pg = project(t, g, 11)?;
        t.add(pm, pg)
    });
    check("cross_entropy", &[sc(4, 6, &mut r)], |t, v| t.cross_entropy(v[0], &[Some(1), None, Some(5), Some(0)]));

    for distance_awareness in [false, true] {
        let mut cfg = AttentionConfig::new(2, 2, 4);
        cfg.distance_awareness = distance_awareness;
        let groups = Arc::new(vec![
            AttnGroup::dense(vec![1], vec![0, 1, 2]),
            AttnGroup { queries: vec![0, 2], keys: vec![1, 3], mask: Some(vec![true, false, true, true]) },
        ]);
        let inputs = [mv(3, 2, &mut r), mv(4, 2, &mut r), mv(4, 2, &mut r), sc(3, 4, &mut r), sc(4, 4, &mut r), sc(4, 4, &mut r)];
        check("attention", &inputs, |t, v| {
            let (m, s) = t.attention(v[0], v[1], v[2], v[3], v[4], v[5], &cfg, groups.clone())?;
            let pm = project(t, m, 12)?;
            let ps = project(t, s, 13)?;
            t.add(pm, ps)
        });
    }
    let mut cfg = AttentionConfig::new(1, 2, 2);
    cfg.causal = true;
    let groups = Arc::new(vec![AttnGroup::full(3, 3, None)]);
    check("causal attention", &[mv(3, 2, &mut r), sc(3, 2, &mut r)], |t, v| {
        let (m, s) = t.attention(v[0], v[0], v[0], v[1], v[1], v[1], &cfg, groups.clone())?;
        let pm = project(t, m, 14)?;
        let ps = project(t, s, 15)?;
        t.add(pm, ps)
    });
}

#[test]
fn block_parameter_gradients() {
    // Whole blocks with parameters as tape inputs, through a custom closure that
    // swaps the checked values into a store.
    let cfg = AttentionConfig::new(2, 2, 4);
    let (store, (attn, mlp, ad)) = store_with(30, |st, r| {
        (
            AttentionBlock::new(st, "a", cfg, r).unwrap(),
            MlpBlock::new(st, "m", 2, 4, r).unwrap(),
            InvariantAdapter::new(st, "d", 2, 4, r).unwrap(),
        )
    });
    let mut r = rng(31);
    let x = (vec![3, 2, 8], randv(48, &mut r));
    let s = (vec![3, 4], randv(12, &mut r));
    let mats: Arc<Vec<[[f64; 8]; 8]>> = Arc::new((0..3).map(|_| frame_matrix(&random_pose(&mut r, 5.0))).collect());
    let groups = Arc::new(vec![AttnGroup::full(3, 3, None)]);
    check("blocks", &[x, s], |t, v| {
        let (m, sc) = attn.apply(t, &store, v[0], v[1], v[0], v[1], groups.clone())?;
        let (m, sc) = mlp.apply(t, &store, m, sc)?;
        let out = ad.apply(t, &store, m, sc, mats.clone())?;
        let pm = project(t, m, 40)?;
        let ps = project(t, out, 41)?;
        t.add(pm, ps)
    });
}
