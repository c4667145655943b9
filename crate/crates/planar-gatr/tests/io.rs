use planar_gatr::config::RunConfig;
use planar_gatr::io::{
    atomic_write, checkpoint_from_bytes, checkpoint_to_bytes, loss_csv, parse_loss_csv, scene_from_json, scene_to_json, vocab_from_json,
    vocab_hash, vocab_to_json, IoError, Provenance,
};
use planar_gatr_core::model::{LossRecord, Model, ModelConfig};
use planar_gatr_core::scene::{build_kdisk_vocab, generate_synthetic_scene, transitions_by_class, SceneGenConfig};
use planar_gatr_core::DType;

fn prov() -> Provenance {
    Provenance::new("abc".into(), 7)
}

#[test]
fn scene_round_trip_is_exact() {
    for seed in 0..20 {
        let s = generate_synthetic_scene(&SceneGenConfig::default(), seed).unwrap();
        let back = scene_from_json(&scene_to_json(&s)).unwrap();
        assert_eq!(s, back);
    }
}

#[test]
fn unknown_scene_field_is_named() {
    let s = generate_synthetic_scene(&SceneGenConfig::default(), 1).unwrap();
    let mut v: serde_json::Value = serde_json::from_slice(&scene_to_json(&s)).unwrap();
    v["agents"][0]["states"][0]["accel"] = 1.0.into();
    let err = scene_from_json(&serde_json::to_vec(&v).unwrap()).unwrap_err();
    assert!(err.to_string().contains("accel"), "{err}");
}

#[test]
fn missing_map_is_a_parse_error() {
    let s = generate_synthetic_scene(&SceneGenConfig::default(), 1).unwrap();
    let mut v: serde_json::Value = serde_json::from_slice(&scene_to_json(&s)).unwrap();
    v.as_object_mut().unwrap().remove("map");
    let err = scene_from_json(&serde_json::to_vec(&v).unwrap()).unwrap_err();
    assert!(matches!(err, IoError::Parse { .. }) && err.to_string().contains("map"), "{err}");
}

#[test]
fn invalid_scene_is_rejected_after_parsing() {
    let s = generate_synthetic_scene(&SceneGenConfig::default(), 1).unwrap();
    let mut v: serde_json::Value = serde_json::from_slice(&scene_to_json(&s)).unwrap();
    v["dt"] = (-1.0).into();
    assert!(matches!(scene_from_json(&serde_json::to_vec(&v).unwrap()), Err(IoError::Scene(_))));
}

fn vocab() -> planar_gatr_core::scene::ActionVocab {
    let scenes: Vec<_> = (0..8).map(|i| generate_synthetic_scene(&SceneGenConfig::default(), i).unwrap()).collect();
    build_kdisk_vocab(&transitions_by_class(&scenes), [0.2, 0.05, 0.1], 16, 1.0, 3).unwrap()
}

#[test]
fn vocab_round_trip_and_hash() {
    let v = vocab();
    let back = vocab_from_json(&vocab_to_json(&v, prov())).unwrap();
    assert_eq!(v, back);
    assert_eq!(vocab_hash(&v), vocab_hash(&back));
    // Provenance does not enter the hash; content does.
    assert_eq!(vocab_hash(&vocab_from_json(&vocab_to_json(&v, Provenance::new("other".into(), 1))).unwrap()), vocab_hash(&v));
    let mut w = v.clone();
    w.deltas[0][0].dx += 1e-9;
    assert_ne!(vocab_hash(&v), vocab_hash(&w));
}

fn tiny_cfg() -> ModelConfig {
    ModelConfig { mv_channels: 2, scalar_channels: 4, heads: 1, blocks: 1, vocab_sizes: [5, 6, 7], seed: 9, ..ModelConfig::default() }
}

#[test]
fn checkpoint_round_trip_f64_and_f32() {
    let m = Model::<f64>::new(tiny_cfg()).unwrap();
    let bytes = checkpoint_to_bytes(&m, "h", prov());
    let ck = checkpoint_from_bytes(&bytes).unwrap();
    assert_eq!(ck.model.store, m.store);
    assert_eq!(ck.manifest.vocab_hash, "h");
    assert_eq!(ck.manifest.provenance, prov());
    assert_eq!(ck.model.cfg, m.cfg);

    let m32 = m.cast::<f32>();
    let ck32 = checkpoint_from_bytes(&checkpoint_to_bytes(&m32, "h", prov())).unwrap();
    assert_eq!(ck32.model.cfg.dtype, DType::F32);
    assert_eq!(ck32.model.cast::<f32>().store, m32.store);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let m = Model::<f64>::new(tiny_cfg()).unwrap();
    let bytes = checkpoint_to_bytes(&m, "h", prov());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint_from_bytes(&bad).is_err());
    assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(checkpoint_from_bytes(&extra).is_err());
    assert!(checkpoint_from_bytes(&bytes[..10]).is_err());
}

#[test]
fn loss_csv_round_trip() {
    let recs = vec![LossRecord { step: 0, lr: 1e-3, loss: 4.1 }, LossRecord { step: 1, lr: 9.9e-4, loss: 3.95 }];
    let bytes = loss_csv(&recs, &prov());
    let text = String::from_utf8(bytes.clone()).unwrap();
    assert!(text.starts_with("# tool=planar-gatr"));
    assert!(text.contains("step,lr,loss"));
    assert_eq!(parse_loss_csv(&bytes).unwrap(), recs);
}

#[test]
fn atomic_write_replaces_whole_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("nested/out.bin");
    atomic_write(&p, b"first").unwrap();
    atomic_write(&p, b"second").unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), b"second");
    let entries: Vec<_> = std::fs::read_dir(p.parent().unwrap()).unwrap().collect();
    assert_eq!(entries.len(), 1, "temporary files left behind");
}

#[test]
fn config_is_strict_and_partial() {
    let cfg = RunConfig::from_json(br#"{ "seed": 5, "train": { "steps": 10 } }"#).unwrap();
    assert_eq!(cfg.seed, 5);
    assert_eq!(cfg.train.steps, 10);
    assert_eq!(cfg.train.batch_size, RunConfig::default().train.batch_size);
    let err = RunConfig::from_json(br#"{ "train": { "stpes": 10 } }"#).unwrap_err();
    assert!(err.to_string().contains("stpes"));
    assert_ne!(cfg.hash(), RunConfig::default().hash());
    assert_eq!(RunConfig::from_json(cfg.to_json().as_bytes()).unwrap(), cfg);
}
