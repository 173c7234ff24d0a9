//! Evaluation drivers shared by the CLI and the acceptance tests.

use rayon::prelude::*;

use int_core::detection::Detection;
use int_core::engine::{Engine, EngineConfig, FusionConfig};
use int_core::eval::{self, EvalResult, DEFAULT_THRESHOLDS};
use int_core::frame::Frame;
use int_core::geometry::GridSpec;
use int_core::seq_aug::{self, AugRanges};
use int_core::sim::{self, EgoTrajectory, WorldConfig};
use int_core::ToyModel;

use crate::trainer::{self, TrainConfig};

/// Ground truth of a frame restricted to the grid.
pub fn frame_gts(spec: &GridSpec, f: &Frame) -> Vec<Detection> {
    eval::in_grid(spec, &f.gt_detections())
}

/// Runs each sequence through one engine from a cold bank and scores the
/// labeled frames with index `>= skip`.
pub fn eval_streaming(model: &ToyModel, cfg: &EngineConfig, data: &[Vec<Frame>], skip: usize) -> anyhow::Result<EvalResult> {
    eval_streaming_at(model, cfg, data, skip, &DEFAULT_THRESHOLDS)
}

/// [`eval_streaming`] at the given distance thresholds.
pub fn eval_streaming_at(
    model: &ToyModel,
    cfg: &EngineConfig,
    data: &[Vec<Frame>],
    skip: usize,
    thresholds: &[f64],
) -> anyhow::Result<EvalResult> {
    let per_seq: Vec<anyhow::Result<(Vec<Vec<Detection>>, Vec<Vec<Detection>>)>> = data
        .par_iter()
        .map(|frames| {
            let mut engine = Engine::new(model.clone(), *cfg)?;
            let (mut preds, mut gts) = (Vec::new(), Vec::new());
            for (i, f) in frames.iter().enumerate() {
                let dets = engine.step(f, i == 0)?;
                if i >= skip && f.labeled {
                    preds.push(dets);
                    gts.push(frame_gts(&cfg.spec, f));
                }
            }
            Ok((preds, gts))
        })
        .collect();
    collect_eval(per_seq, thresholds)
}

/// Detections at frame `t` from a bank that saw at most the `k` frames
/// ending at `t` (reset at `t - k + 1`). Frames with index `< skip` or not
/// a multiple of `stride` are not scored.
pub fn eval_history_cap(
    model: &ToyModel,
    cfg: &EngineConfig,
    data: &[Vec<Frame>],
    k: usize,
    skip: usize,
    stride: usize,
) -> anyhow::Result<EvalResult> {
    let k = k.max(1);
    let jobs: Vec<(usize, usize)> = data
        .iter()
        .enumerate()
        .flat_map(|(s, frames)| {
            (skip..frames.len()).filter(move |t| t % stride.max(1) == 0 && frames[*t].labeled).map(move |t| (s, t))
        })
        .collect();
    let results: Vec<anyhow::Result<(Vec<Detection>, Vec<Detection>)>> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let mut engine = Engine::new(model.clone(), *cfg)?;
            let start = (t + 1).saturating_sub(k);
            let mut dets = Vec::new();
            for i in start..=t {
                dets = engine.step(&data[s][i], i == start)?;
            }
            Ok((dets, frame_gts(&cfg.spec, &data[s][t])))
        })
        .collect();
    let mut preds = Vec::with_capacity(results.len());
    let mut gts = Vec::with_capacity(results.len());
    for r in results {
        let (p, g) = r?;
        preds.push(p);
        gts.push(g);
    }
    Ok(eval::evaluate(&preds, &gts, &DEFAULT_THRESHOLDS))
}

fn collect_eval(
    per_seq: Vec<anyhow::Result<(Vec<Vec<Detection>>, Vec<Vec<Detection>>)>>,
    thresholds: &[f64],
) -> anyhow::Result<EvalResult> {
    let (mut preds, mut gts) = (Vec::new(), Vec::new());
    for r in per_seq {
        let (p, g) = r?;
        preds.extend(p);
        gts.extend(g);
    }
    Ok(eval::evaluate(&preds, &gts, thresholds))
}

/// Sparse long-range world used by the accuracy experiments.
pub fn sparse_world(duration: usize) -> WorldConfig {
    let mut w = WorldConfig { duration, ..WorldConfig::default() };
    w.lidar.range = 40.0;
    w.lidar.object_points = 40;
    w.lidar.clutter_points = 300;
    w.lidar.dropout_near = 0.3;
    w.lidar.dropout_far = 0.97;
    w.lidar.points_per_frame = 3000;
    w.n_static = 14;
    w.n_moving = 3;
    w.ego_speed = 4.0;
    w.ego = EgoTrajectory::Straight;
    w
}

/// Grid used by the accuracy experiments.
pub fn experiment_spec() -> GridSpec {
    GridSpec::centered(24.0, 1.0, 1).expect("valid grid")
}

/// Engine used by the accuracy experiments: bank points expire after a
/// quarter second so the point history stays inside the trained range.
pub fn experiment_engine(fusion: FusionConfig) -> EngineConfig {
    let mut cfg = EngineConfig::new(experiment_spec(), fusion);
    cfg.point_max_age = Some(0.25);
    cfg
}

/// Training schedule of the accuracy experiments.
pub fn experiment_training(engine: EngineConfig, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(engine);
    cfg.seed = seed;
    cfg.l_max = 20;
    cfg.epochs = 20;
    cfg.decay_every = 6;
    cfg
}

/// `count` sequences of `world`, seeded `first_seed, first_seed + 1, ...`.
pub fn dataset(world: &WorldConfig, first_seed: u64, count: usize) -> Vec<Vec<Frame>> {
    (0..count as u64).map(|i| sim::generate_sequence(world, first_seed + i)).collect()
}

/// Frames at the start of each test sequence that are run but not scored.
pub const EVAL_SKIP: usize = 20;
/// Scored-frame stride of the history-cap evaluation.
pub const EVAL_STRIDE: usize = 4;

/// mAP under a history cap of `k` frames, for each `k`.
pub fn history_curve(
    model: &ToyModel,
    cfg: &EngineConfig,
    test: &[Vec<Frame>],
    ks: &[usize],
) -> anyhow::Result<Vec<(usize, f64)>> {
    ks.iter().map(|&k| Ok((k, eval_history_cap(model, cfg, test, k, EVAL_SKIP, EVAL_STRIDE)?.map))).collect()
}

/// Trains `cfg` on `train` and returns the model with its streaming mAP on `test`.
pub fn train_and_score(
    train: &[Vec<Frame>],
    test: &[Vec<Frame>],
    cfg: &TrainConfig,
) -> anyhow::Result<(ToyModel, f64)> {
    let db = match cfg.aug {
        Some(a) if a.paste_count > 0 => Some(seq_aug::build_gt_database(train)?),
        _ => None,
    };
    let (model, _) = trainer::train(train, db.as_ref(), cfg, None)?;
    let map = eval_streaming(&model, &cfg.engine, test, EVAL_SKIP)?.map;
    Ok((model, map))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AblationRow {
    pub setting: String,
    pub pc: bool,
    pub fm: bool,
    pub pm: bool,
    pub map: f64,
    pub delta_vs_none: f64,
}

/// The on/off sweep over [`ablation_settings`]: one model per setting,
/// each trained with `base` apart from the fusion switches.
pub fn ablate(
    train: &[Vec<Frame>],
    test: &[Vec<Frame>],
    base: &TrainConfig,
) -> anyhow::Result<Vec<(AblationRow, ToyModel)>> {
    let mut out: Vec<(AblationRow, ToyModel)> = Vec::new();
    for (name, fusion) in ablation_settings() {
        let mut cfg = base.clone();
        cfg.engine.fusion = fusion;
        let (model, map) = train_and_score(train, test, &cfg)?;
        log::info!("ablate {name}: mAP {map:.4}");
        let row = AblationRow {
            setting: name.to_string(),
            pc: fusion.pc,
            fm: fusion.fm.is_some(),
            pm: fusion.pm.is_some(),
            map,
            delta_vs_none: 0.0,
        };
        out.push((row, model));
    }
    let none = out.iter().find(|(r, _)| r.setting == "none").map_or(0.0, |(r, _)| r.map);
    for (r, _) in &mut out {
        r.delta_vs_none = r.map - none;
    }
    Ok(out)
}

pub fn write_ablation_csv<W: std::io::Write>(rows: &[AblationRow], out: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Stream augmentation used by the augmentation comparison.
pub fn experiment_aug() -> AugRanges {
    AugRanges { paste_count: 3, ..AugRanges::default() }
}

/// Fusion settings of the on/off sweep, labelled `pc/fm/pm`.
pub fn ablation_settings() -> Vec<(&'static str, FusionConfig)> {
    use int_core::image_fusion::FusionMode::Concat;
    vec![
        ("none", FusionConfig::NONE),
        ("pc", FusionConfig { pc: true, fm: None, pm: None }),
        ("fm", FusionConfig { pc: false, fm: Some(Concat), pm: None }),
        ("pm", FusionConfig { pc: false, fm: None, pm: Some(Concat) }),
        ("pc+fm+pm", FusionConfig::ALL_CONCAT),
    ]
}
