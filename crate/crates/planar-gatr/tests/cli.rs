use std::path::Path;
use std::process::Command;

use planar_gatr::cli::{main_with_args, EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION};
use planar_gatr::io::{parse_loss_csv, read_scene_dir};

const TINY: &str = r#"{
  "model": { "mv_channels": 2, "scalar_channels": 8, "heads": 1, "blocks": 1 },
  "gen": { "agents": 3, "horizon": 12 },
  "vocab": { "cap": 8 },
  "train": { "steps": 6, "batch_size": 2 },
  "rollout": { "history": 4, "horizon": 4, "n": 3 },
  "check": { "trials": 2, "scenes": 2, "rollout_horizon": 3 },
  "bench": { "agents": [2, 4], "map_nodes": 4, "steps": 3, "reps": 0 }
}"#;

fn run(dir: &Path, args: &[&str]) -> i32 {
    let cfg = dir.join("tiny.json");
    if !cfg.exists() {
        std::fs::write(&cfg, TINY).unwrap();
    }
    let mut all = vec!["pgatr".to_string(), "--config".into(), cfg.display().to_string(), "--threads".into(), "1".into()];
    all.extend(args.iter().map(|s| s.to_string()));
    main_with_args(all)
}

fn p(dir: &Path, rel: &str) -> String {
    dir.join(rel).display().to_string()
}

#[test]
fn gen_is_reproducible_and_count_zero_writes_only_a_manifest() {
    let d = tempfile::tempdir().unwrap();
    let d = d.path();
    assert_eq!(run(d, &["--out", &p(d, "a"), "gen", "--count", "3"]), EXIT_OK);
    assert_eq!(run(d, &["--out", &p(d, "b"), "gen", "--count", "3"]), EXIT_OK);
    for i in 0..3 {
        let f = format!("scene_{i:05}.json");
        assert_eq!(std::fs::read(d.join("a").join(&f)).unwrap(), std::fs::read(d.join("b").join(&f)).unwrap());
    }
    assert_eq!(read_scene_dir(&d.join("a")).unwrap().len(), 3);
    assert_eq!(run(d, &["--out", &p(d, "c"), "--seed", "1", "gen", "--count", "3"]), EXIT_OK);
    assert_ne!(std::fs::read(d.join("a/scene_00000.json")).unwrap(), std::fs::read(d.join("c/scene_00000.json")).unwrap());

    assert_eq!(run(d, &["--out", &p(d, "z"), "gen", "--count", "0"]), EXIT_OK);
    let names: Vec<_> = std::fs::read_dir(d.join("z")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("manifest.json")]);
}

#[test]
fn full_pipeline() {
    let d = tempfile::tempdir().unwrap();
    let d = d.path();
    assert_eq!(run(d, &["--out", &p(d, "scenes"), "gen", "--count", "4"]), EXIT_OK);
    assert_eq!(run(d, &["--out", &p(d, "v"), "vocab", "--scenes", &p(d, "scenes")]), EXIT_OK);
    let train = ["train", "--scenes", &p(d, "scenes"), "--vocab", &p(d, "v/vocab.json")];
    assert_eq!(run(d, &[&["--out", &p(d, "t")][..], &train].concat()), EXIT_OK);
    assert_eq!(run(d, &[&["--out", &p(d, "t2")][..], &train].concat()), EXIT_OK);
    assert_eq!(std::fs::read(d.join("t/checkpoint.pgatr")).unwrap(), std::fs::read(d.join("t2/checkpoint.pgatr")).unwrap());
    let curve = parse_loss_csv(&std::fs::read(d.join("t/loss.csv")).unwrap()).unwrap();
    assert_eq!(curve.len(), 6);

    let ck = p(d, "t/checkpoint.pgatr");
    let vocab = p(d, "v/vocab.json");
    let check = ["check", "--checkpoint", &ck, "--scenes", &p(d, "scenes"), "--vocab", &vocab];
    assert_eq!(run(d, &[&["--out", &p(d, "c")][..], &check].concat()), EXIT_OK);
    let audit: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("c/audit.json")).unwrap()).unwrap();
    assert_eq!(audit["passed"], true);
    assert!(std::fs::read_to_string(d.join("c/audit.csv")).unwrap().starts_with("# tool="));

    let roll = |out: &str, mode: &str| {
        run(
            d,
            &[
                "--out",
                &p(d, out),
                "rollout",
                "--checkpoint",
                &ck,
                "--vocab",
                &vocab,
                "--scene",
                &p(d, "scenes/scene_00002.json"),
                "--mode",
                mode,
            ],
        )
    };
    assert_eq!(roll("g1", "greedy"), EXIT_OK);
    assert_eq!(roll("g2", "greedy"), EXIT_OK);
    assert_eq!(std::fs::read(d.join("g1/rollouts.json")).unwrap(), std::fs::read(d.join("g2/rollouts.json")).unwrap());
    assert_eq!(roll("s", "sample"), EXIT_OK);
    let rolls: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("s/rollouts.json")).unwrap()).unwrap();
    assert_eq!(rolls["rollouts"].as_array().unwrap().len(), 3);
    let ade = std::fs::read_to_string(d.join("s/min_ade.csv")).unwrap();
    assert!(ade.contains("model,3,") && ade.contains("constant_velocity,1,"));

    // A vocabulary other than the one trained with is refused.
    assert_eq!(run(d, &["--out", &p(d, "v2"), "--seed", "5", "vocab", "--scenes", &p(d, "scenes"), "--k-r", "0.5"]), EXIT_OK);
    let other = p(d, "v2/vocab.json");
    assert_eq!(
        run(d, &["--out", &p(d, "x"), "rollout", "--checkpoint", &ck, "--vocab", &other, "--scene", &p(d, "scenes/scene_00000.json")]),
        EXIT_VALIDATION
    );
}

#[test]
fn random_audit_passes_and_negative_control_fails() {
    let d = tempfile::tempdir().unwrap();
    let d = d.path();
    assert_eq!(run(d, &["--out", &p(d, "scenes"), "gen", "--count", "4"]), EXIT_OK);
    assert_eq!(run(d, &["--out", &p(d, "v"), "vocab", "--scenes", &p(d, "scenes")]), EXIT_OK);
    let base = ["check", "--random", "--scenes", &p(d, "scenes"), "--vocab", &p(d, "v/vocab.json")];
    assert_eq!(run(d, &[&["--out", &p(d, "ok")][..], &base].concat()), EXIT_OK);
    assert_eq!(run(d, &[&["--out", &p(d, "neg")][..], &base, &["--negative-control"]].concat()), EXIT_VALIDATION);
    let audit: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("neg/audit.json")).unwrap()).unwrap();
    assert_eq!(audit["passed"], false);
}

#[test]
fn bench_writes_a_table() {
    let d = tempfile::tempdir().unwrap();
    let d = d.path();
    assert_eq!(run(d, &["--out", &p(d, "b"), "bench"]), EXIT_OK);
    let csv = std::fs::read_to_string(d.join("b/bench.csv")).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("# tool="));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2 * 3);
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let d = d.path();
    assert_eq!(run(d, &["frobnicate"]), EXIT_USAGE);
    assert_eq!(run(d, &["gen"]), EXIT_USAGE);
    assert_eq!(run(d, &["--out", &p(d, "o"), "vocab", "--scenes", &p(d, "missing")]), EXIT_IO);
    std::fs::create_dir(d.join("empty")).unwrap();
    assert_eq!(run(d, &["--out", &p(d, "o"), "vocab", "--scenes", &p(d, "empty")]), EXIT_VALIDATION);
    std::fs::create_dir(d.join("bad")).unwrap();
    std::fs::write(d.join("bad/scene_00000.json"), "{ \"dt\": 0.1 }").unwrap();
    assert_eq!(run(d, &["--out", &p(d, "o"), "vocab", "--scenes", &p(d, "bad")]), EXIT_VALIDATION);
    std::fs::write(d.join("bad.json"), "{ \"sed\": 1 }").unwrap();
    assert_eq!(main_with_args(["pgatr", "--config", &p(d, "bad.json"), "--out", &p(d, "o"), "bench"]), EXIT_VALIDATION);
}

#[test]
fn binary_reports_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_pgatr");
    let st = |args: &[&str]| Command::new(bin).args(args).current_dir(d.path()).output().unwrap().status.code();
    assert_eq!(st(&["--help"]), Some(EXIT_OK));
    assert_eq!(st(&["nope"]), Some(EXIT_USAGE));
    assert_eq!(st(&["--out", "g", "gen", "--count", "1"]), Some(EXIT_OK));
    assert!(d.path().join("g/scene_00000.json").exists());
}
