use std::time::Instant;

use planar_gatr_core::model::{flop_count, BaselineModel, FlopBreakdown, Model, ModelConfig, TokenBatch, Variant};
use planar_gatr_core::scene::{build_kdisk_vocab, generate_synthetic_scene, select_radius, transitions_by_class, SceneGenConfig};

use super::HarnessError;
use crate::io::Provenance;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub map_nodes: usize,
    pub steps: usize,
    /// Timed forward passes per row; 0 skips timing.
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub agents: usize,
    pub map_nodes: usize,
    pub steps: usize,
    pub variant: Variant,
    pub flops: FlopBreakdown,
    /// Total FLOPs divided by the vanilla total at the same size.
    pub ratio_to_vanilla: f64,
    /// Mean forward wall time; `None` when timing was skipped.
    pub wall_ms: Option<f64>,
}

/// FLOP counts and timed forward passes for every variant at every agent count.
pub fn bench_scaling(cfg: &ModelConfig, agent_counts: &[usize], opts: &BenchOptions) -> Result<Vec<BenchRow>, HarnessError> {
    if agent_counts.contains(&0) || opts.steps < 2 || opts.map_nodes == 0 {
        return Err(HarnessError::Invalid("agent counts and map size must be positive and steps at least 2".into()));
    }
    let mut rows = Vec::new();
    for &a in agent_counts {
        let gen = SceneGenConfig { agents: a, lanes: 1, nodes_per_lane: opts.map_nodes, horizon: opts.steps, ..SceneGenConfig::default() };
        let scene = generate_synthetic_scene(&gen, opts.seed)?;
        let m = scene.map.len();
        let vanilla = flop_count(cfg, a, m, opts.steps, Variant::Vanilla).total() as f64;

        let mut timed = None;
        if opts.reps > 0 {
            let tr = transitions_by_class([&scene]);
            // Classes absent from this scene still need one entry.
            let tr = tr.map(|t| if t.is_empty() { vec![Default::default()] } else { t });
            let r = select_radius(&tr, 64, 1.0, opts.seed)?;
            let vocab = build_kdisk_vocab(&tr, r, 64, 1.0, opts.seed)?;
            let mc = ModelConfig { vocab_sizes: vocab.sizes(), raw_pose_scalars: false, ..*cfg };
            let batch = TokenBatch::from_scene(&scene, &vocab, 0, opts.steps, false)?;
            timed = Some((mc, batch));
        }

        for variant in Variant::ALL {
            let flops = flop_count(cfg, a, m, opts.steps, variant);
            let wall_ms = match &timed {
                None => None,
                Some((mc, batch)) => {
                    let run: Box<dyn Fn() -> Result<(), HarnessError>> = match variant {
                        Variant::DriveGatr => {
                            let model = Model::<f64>::new(*mc)?;
                            Box::new(move || model.logits(batch).map(|_| ()).map_err(Into::into))
                        }
                        _ => {
                            let model = BaselineModel::new(*mc, variant)?;
                            Box::new(move || model.forward(batch).map(|_| ()).map_err(Into::into))
                        }
                    };
                    let t0 = Instant::now();
                    for _ in 0..opts.reps {
                        run()?;
                    }
                    Some(t0.elapsed().as_secs_f64() * 1e3 / opts.reps as f64)
                }
            };
            rows.push(BenchRow {
                agents: a,
                map_nodes: m,
                steps: opts.steps,
                variant,
                ratio_to_vanilla: flops.total() as f64 / vanilla,
                flops,
                wall_ms,
            });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow], provenance: &Provenance) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(provenance.csv_comment().into_bytes());
    let mut header: Vec<String> =
        ["agents", "map_nodes", "steps", "variant", "total_flops", "positional_flops", "ratio_to_vanilla", "wall_ms"]
            .map(String::from)
            .to_vec();
    if let Some(r) = rows.first() {
        header.extend(r.flops.terms().iter().map(|(n, _)| n.to_string()));
    }
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        let mut rec = vec![
            r.agents.to_string(),
            r.map_nodes.to_string(),
            r.steps.to_string(),
            r.variant.as_str().to_string(),
            r.flops.total().to_string(),
            r.flops.positional().to_string(),
            format!("{:.6}", r.ratio_to_vanilla),
            r.wall_ms.map(|t| format!("{t:.3}")).unwrap_or_default(),
        ];
        rec.extend(r.flops.terms().iter().map(|(_, v)| v.to_string()));
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}
