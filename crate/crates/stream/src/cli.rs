//! The `int` command line. Every subcommand resolves a [`RunConfig`]
//! (defaults, then `--config`, then `--set`, then its own flags), validates
//! it, creates a run directory and writes its outputs plus `header.json`
//! and `config.txt` there. The run directory is printed on stdout.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use int_core::engine::Engine;
use int_core::frame::Frame;
use int_core::seq_aug;
use int_core::seq_sampler::SampleIndex;
use int_core::sim;
use int_core::ToyModel;

use crate::bench::{self, LatencyReport, SimStream};
use crate::checkpoint::{self, Checkpoint};
use crate::config::{self, BenchMode, ConfigError, RunConfig};
use crate::experiment;
use crate::format::{self, Dataset};
use crate::gtdb;
use crate::trainer;

#[derive(Debug, Parser)]
#[command(name = "int", version, about = "Streaming LiDAR detection with a recurrent memory bank")]
pub struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Cap on worker threads (benchmarks always use one).
    #[arg(long, global = true)]
    pub threads: Option<String>,
    /// Root for run directories; defaults to $INT_OUT_DIR, then ./runs.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Build the ground-truth object database of a dataset.
    Gtdb(DataArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Stream a dataset through a model; detections as JSON lines.
    Infer(ModelArgs),
    /// Score a model on a dataset (`class,threshold,ap`).
    Eval(ModelArgs),
    /// Per-frame latency of the streaming engine or the concat-k baseline.
    Bench(BenchArgs),
    /// Dump the training schedule as JSON lines.
    SamplerDump(SamplerArgs),
    /// Fusion on/off sweep and history-length sweep.
    Ablate(AblateArgs),
    /// Per-sequence point and box counts.
    Stats(DataArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub frames: Option<String>,
    #[arg(long)]
    pub sequences: Option<String>,
    /// `default` or `sparse`.
    #[arg(long)]
    pub world: Option<String>,
    #[arg(long)]
    pub label_interval: Option<String>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub gtdb: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    /// Longest training segment.
    #[arg(long)]
    pub seq_len: Option<String>,
    /// `on` grows the segment length with the epoch, `off` trains at `--seq-len` throughout.
    #[arg(long)]
    pub dtsl: Option<String>,
    #[arg(long)]
    pub aug: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub pc: Option<String>,
    #[arg(long)]
    pub fm: Option<String>,
    #[arg(long)]
    pub pm: Option<String>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// `int` or `concat`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub frames: Option<String>,
    /// Comma-separated window sizes of the concat baseline.
    #[arg(long)]
    pub ks: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub repeats: Option<String>,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    #[arg(long)]
    pub data: Option<String>,
    /// Comma-separated sequence lengths, used instead of a dataset.
    #[arg(long)]
    pub lengths: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub seq_len: Option<String>,
    #[arg(long)]
    pub epoch: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub dtsl: Option<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub test_data: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
}

/// Failure of a run, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0:#}")]
    Run(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

fn run_err<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Run(e.into())
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Gtdb(_) => "gtdb",
            Command::Train(_) => "train",
            Command::Infer(_) => "infer",
            Command::Eval(_) => "eval",
            Command::Bench(_) => "bench",
            Command::SamplerDump(_) => "sampler-dump",
            Command::Ablate(_) => "ablate",
            Command::Stats(_) => "stats",
        }
    }

    /// The subcommand's own flags as config overrides.
    fn overrides(&self) -> Vec<(&'static str, &Option<String>)> {
        match self {
            Command::Gen(a) => vec![
                ("frames", &a.frames),
                ("sequences", &a.sequences),
                ("world", &a.world),
                ("label_interval", &a.label_interval),
            ],
            Command::Gtdb(a) | Command::Stats(a) => vec![("data", &a.data)],
            Command::Train(a) => vec![
                ("data", &a.data),
                ("gtdb", &a.gtdb),
                ("epochs", &a.epochs),
                ("seq_len", &a.seq_len),
                ("dtsl", &a.dtsl),
                ("aug", &a.aug),
                ("batch_size", &a.batch_size),
                ("pc", &a.pc),
                ("fm", &a.fm),
                ("pm", &a.pm),
            ],
            Command::Infer(a) | Command::Eval(a) => vec![("data", &a.data), ("model", &a.model)],
            Command::Bench(a) => vec![
                ("mode", &a.mode),
                ("bench_frames", &a.frames),
                ("ks", &a.ks),
                ("model", &a.model),
                ("repeats", &a.repeats),
            ],
            Command::SamplerDump(a) => vec![
                ("data", &a.data),
                ("lengths", &a.lengths),
                ("batch_size", &a.batch_size),
                ("seq_len", &a.seq_len),
                ("epoch", &a.epoch),
                ("epochs", &a.epochs),
                ("dtsl", &a.dtsl),
            ],
            Command::Ablate(a) => vec![("data", &a.data), ("test_data", &a.test_data), ("epochs", &a.epochs)],
        }
    }
}

impl Cli {
    /// Resolves and validates the run configuration.
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for kv in &self.sets {
            cfg.apply_override(kv)?;
        }
        for (key, value) in [("seed", &self.seed), ("threads", &self.threads)].into_iter().chain(self.command.overrides()) {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `argv`, runs, and returns the exit code; diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            if code == 0 {
                let _ = e.print();
            } else {
                eprintln!("error: {}", e.kind_message());
            }
            return code;
        }
    };
    match execute(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            e.exit_code()
        }
    }
}

trait KindMessage {
    fn kind_message(&self) -> String;
}

impl KindMessage for clap::Error {
    /// First line of clap's rendering, without the `error: ` prefix.
    fn kind_message(&self) -> String {
        let text = self.render().to_string();
        one_line(text.trim_start_matches("error: "))
    }
}

fn one_line(s: &str) -> String {
    s.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("").to_string()
}

/// Runs the parsed command and returns its run directory.
pub fn execute(cli: &Cli) -> Result<PathBuf, CliError> {
    let cfg = cli.resolve()?;
    let name = cli.command.name();
    let threads = if matches!(cli.command, Command::Bench(_)) { Some(1) } else { cfg.threads };
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            b = b.num_threads(n);
        }
        b.build().map_err(run_err)?
    };
    let dir = config::create_run_dir(&config::out_root(cli.out_dir.as_deref()), name, &cfg.hash()).map_err(run_err)?;
    write_header(&dir, &cfg, name)?;
    pool.install(|| match &cli.command {
        Command::Gen(_) => gen(&cfg, &dir),
        Command::Gtdb(_) => build_gtdb(&cfg, &dir),
        Command::Train(_) => train(&cfg, &dir),
        Command::Infer(_) => infer(&cfg, &dir),
        Command::Eval(_) => eval(&cfg, &dir),
        Command::Bench(_) => run_bench(&cfg, &dir),
        Command::SamplerDump(_) => sampler_dump(&cfg, &dir),
        Command::Ablate(_) => ablate(&cfg, &dir),
        Command::Stats(_) => stats(&cfg, &dir),
    })?;
    Ok(dir)
}

fn write_header(dir: &Path, cfg: &RunConfig, name: &str) -> Result<(), CliError> {
    let header = serde_json::to_string_pretty(&cfg.header(name)).map_err(run_err)?;
    std::fs::write(dir.join("header.json"), header + "\n").map_err(run_err)?;
    std::fs::write(dir.join("config.txt"), cfg.to_text()).map_err(run_err)?;
    Ok(())
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| ConfigError::Invalid(format!("missing required `{key}`")).into())
}

fn open_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let dir = required(&cfg.data, "data")?;
    Dataset::open(dir).map_err(|e| run_err(anyhow::anyhow!("{}: {e}", dir.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| run_err(anyhow::anyhow!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(run_err)?;
    std::fs::write(path, text + "\n").map_err(run_err)
}

fn gen(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let world = cfg.world_config();
    let seqs: Vec<(Option<u64>, Vec<Frame>)> = (0..cfg.sequences as u64)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed + i;
            (Some(seed), sim::generate_sequence(&world, seed))
        })
        .collect();
    let manifest = format::write_dataset(&dir.join("dataset"), &seqs, cfg.label_interval).map_err(run_err)?;
    log::info!("wrote {} sequences, {} frames", manifest.sequences.len(), manifest.total_frames());
    Ok(())
}

fn build_gtdb(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let data = open_dataset(cfg)?.load_all().map_err(run_err)?;
    let db = seq_aug::build_gt_database(&data).map_err(run_err)?;
    let index = gtdb::save(&db, &dir.join("gtdb")).map_err(run_err)?;
    log::info!("{} objects", index.objects.len());
    Ok(())
}

fn train(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let data = open_dataset(cfg)?.load_all().map_err(run_err)?;
    let tc = cfg.training()?;
    let db = match (&tc.aug, &cfg.gtdb) {
        (Some(a), Some(path)) if a.paste_count > 0 => Some(gtdb::load(path).map_err(run_err)?),
        (Some(a), None) if a.paste_count > 0 => Some(seq_aug::build_gt_database(&data).map_err(run_err)?),
        _ => None,
    };
    let (model, log) = trainer::train(&data, db.as_ref(), &tc, None)?;
    checkpoint::save_checkpoint(&dir.join("model.intm"), &Checkpoint { engine: tc.engine, model }).map_err(run_err)?;
    let mut w = csv::Writer::from_writer(create(&dir.join("train_log.csv"))?);
    w.write_record(["epoch", "target_len", "steps", "labeled_frames", "mean_loss"]).map_err(run_err)?;
    for e in &log {
        w.write_record([
            e.epoch.to_string(),
            e.target_len.to_string(),
            e.steps.to_string(),
            e.labeled_frames.to_string(),
            format!("{:.6}", e.mean_loss),
        ])
        .map_err(run_err)?;
    }
    w.flush().map_err(run_err)?;
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<Checkpoint, CliError> {
    let path = required(&cfg.model, "model")?;
    checkpoint::load_checkpoint(path).map_err(|e| run_err(anyhow::anyhow!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct DetectionLine {
    class: u32,
    score: f64,
    x: f64,
    y: f64,
    w: f64,
    l: f64,
    yaw: f64,
}

#[derive(Serialize)]
struct FrameLine {
    sequence: u32,
    frame: usize,
    timestamp: f64,
    detections: Vec<DetectionLine>,
}

fn infer(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let ds = open_dataset(cfg)?;
    let ck = load_model(cfg)?;
    let mut engine = Engine::new(ck.model, ck.engine).map_err(run_err)?;
    let mut out = create(&dir.join("detections.jsonl"))?;
    let mut frame = Frame::new(0.0, int_core::geometry::Pose::IDENTITY);
    for (s, entry) in ds.manifest.sequences.iter().enumerate() {
        let mut reader = ds.reader(s).map_err(run_err)?;
        let mut i = 0;
        while reader.read_into(&mut frame).map_err(run_err)? {
            let dets = engine.step(&frame, i == 0).map_err(run_err)?;
            let line = FrameLine {
                sequence: entry.id,
                frame: i,
                timestamp: frame.timestamp,
                detections: dets
                    .iter()
                    .map(|d| DetectionLine {
                        class: d.class,
                        score: d.score,
                        x: d.bbox.x,
                        y: d.bbox.y,
                        w: d.bbox.w,
                        l: d.bbox.l,
                        yaw: d.bbox.yaw,
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut out, &line).map_err(run_err)?;
            out.write_all(b"\n").map_err(run_err)?;
            i += 1;
        }
    }
    out.flush().map_err(run_err)
}

#[derive(Serialize)]
struct EvalSummary {
    map: f64,
    frames_skipped_per_sequence: usize,
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn eval(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let data = open_dataset(cfg)?.load_all().map_err(run_err)?;
    let ck = load_model(cfg)?;
    let res = experiment::eval_streaming_at(&ck.model, &ck.engine, &data, cfg.eval_skip, &cfg.thresholds)?;
    let mut w = csv::Writer::from_writer(create(&dir.join("eval.csv"))?);
    w.write_record(["class", "threshold", "ap"]).map_err(run_err)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for c in &res.classes {
        for (t, ap, counts) in &c.per_threshold {
            w.write_record([c.class.to_string(), t.to_string(), format!("{ap:.6}")]).map_err(run_err)?;
            tp += counts.tp;
            fp += counts.fp;
            fn_ += counts.fn_;
        }
    }
    w.flush().map_err(run_err)?;
    write_json(&dir.join("summary.json"), &EvalSummary { map: res.map, frames_skipped_per_sequence: cfg.eval_skip, tp, fp, fn_ })?;
    log::info!("mAP {:.4}", res.map);
    Ok(())
}

#[derive(Serialize)]
struct BenchSummary {
    label: String,
    frames: usize,
    warmup: usize,
    repeats: usize,
    mean_us: f64,
    p50_us: f64,
    p99_us: f64,
    slope_us_per_frame: f64,
    drift_per_100: f64,
    points_voxelized_last: usize,
    peak_bank_points: usize,
    peak_resident_bytes: usize,
}

impl BenchSummary {
    fn new(r: &LatencyReport, cfg: &RunConfig) -> BenchSummary {
        BenchSummary {
            label: r.label.clone(),
            frames: cfg.bench_frames,
            warmup: r.warmup,
            repeats: cfg.repeats,
            mean_us: r.mean_us,
            p50_us: r.p50_us,
            p99_us: r.p99_us,
            slope_us_per_frame: r.slope_us_per_frame,
            drift_per_100: r.relative_drift_per_100(),
            points_voxelized_last: r.frames.last().map_or(0, |f| f.counters.points_voxelized),
            peak_bank_points: r.peak_bank_points,
            peak_resident_bytes: r.peak_resident_bytes,
        }
    }
}

fn run_bench(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let (model, engine_cfg) = match &cfg.model {
        Some(_) => {
            let ck = load_model(cfg)?;
            (ck.model, ck.engine)
        }
        None => (ToyModel::init(cfg.c_mid, cfg.fm, cfg.pm, cfg.seed), cfg.engine()?),
    };
    let mut world = cfg.world_config();
    world.duration = cfg.bench_frames;
    let stream = || SimStream::new(world, cfg.seed);
    let mut summaries = Vec::new();
    match cfg.mode {
        BenchMode::Int => {
            let mut engine = Engine::new(model, engine_cfg).map_err(run_err)?;
            let r = bench::bench_engine(&mut engine, stream, cfg.warmup, cfg.repeats).map_err(run_err)?;
            r.write_csv(create(&dir.join("latency.csv"))?).map_err(run_err)?;
            r.write_stages_csv(create(&dir.join("stages.csv"))?).map_err(run_err)?;
            summaries.push(BenchSummary::new(&r, cfg));
        }
        BenchMode::Concat => {
            let reports = bench::bench_concat(&model, &engine_cfg, &cfg.ks, stream, cfg.warmup, cfg.repeats).map_err(run_err)?;
            for (k, r) in cfg.ks.iter().zip(&reports) {
                r.write_csv(create(&dir.join(format!("latency_k{k}.csv")))?).map_err(run_err)?;
                summaries.push(BenchSummary::new(r, cfg));
            }
        }
    }
    write_json(&dir.join("summary.json"), &summaries)
}

#[derive(Serialize)]
struct ScheduleLine {
    epoch: usize,
    target_len: usize,
    lane: usize,
    segment: usize,
    replica: bool,
    sequence: u32,
    frame: u32,
    reset: bool,
}

fn sampler_dump(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let samples: Vec<SampleIndex> = match (&cfg.data, cfg.lengths.is_empty()) {
        (Some(_), _) => {
            let ds = open_dataset(cfg)?;
            let every = ds.manifest.label_interval;
            ds.manifest
                .sequences
                .iter()
                .flat_map(|e| {
                    (0..e.frames as u32).map(move |i| SampleIndex {
                        sequence_id: e.id,
                        frame_index: i,
                        labeled: i as usize % every == 0,
                    })
                })
                .collect()
        }
        (None, false) => cfg
            .lengths
            .iter()
            .enumerate()
            .flat_map(|(s, &n)| (0..n as u32).map(move |i| SampleIndex::new(s as u32, i)))
            .collect(),
        (None, true) => return Err(ConfigError::Invalid("sampler-dump needs `data` or `lengths`".into()).into()),
    };
    let tc = cfg.training()?;
    let epochs: Vec<usize> = match cfg.epoch {
        Some(e) if e > cfg.epochs => return Err(ConfigError::Invalid("epoch exceeds epochs".into()).into()),
        Some(e) => vec![e],
        None => (0..cfg.epochs).collect(),
    };
    let mut out = create(&dir.join("schedule.jsonl"))?;
    for epoch in epochs {
        let sched = trainer::schedule_for(&samples, &tc, epoch)?;
        for (lane, segs) in sched.lanes.iter().enumerate() {
            for (segment, seg) in segs.iter().enumerate() {
                for f in &seg.frames {
                    let line = ScheduleLine {
                        epoch,
                        target_len: sched.target_len,
                        lane,
                        segment,
                        replica: seg.replica,
                        sequence: f.sample.sequence_id,
                        frame: f.sample.frame_index,
                        reset: f.reset,
                    };
                    serde_json::to_writer(&mut out, &line).map_err(run_err)?;
                    out.write_all(b"\n").map_err(run_err)?;
                }
            }
        }
    }
    out.flush().map_err(run_err)
}

fn ablate(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let train = open_dataset(cfg)?.load_all().map_err(run_err)?;
    let test_dir = required(&cfg.test_data, "test_data")?;
    let test = Dataset::open(test_dir).and_then(|d| d.load_all()).map_err(run_err)?;
    let results = experiment::ablate(&train, &test, &cfg.training()?)?;
    let rows: Vec<_> = results.iter().map(|(r, _)| r.clone()).collect();
    experiment::write_ablation_csv(&rows, create(&dir.join("ablation.csv"))?)?;
    if let Some((_, model)) = results.iter().find(|(r, _)| r.pc && r.fm && r.pm) {
        let mut engine = cfg.engine()?;
        engine.fusion = int_core::engine::FusionConfig::ALL_CONCAT;
        let curve = experiment::history_curve(model, &engine, &test, &cfg.history)?;
        let mut w = csv::Writer::from_writer(create(&dir.join("history.csv"))?);
        w.write_record(["frames", "map"]).map_err(run_err)?;
        for (k, map) in curve {
            w.write_record([k.to_string(), format!("{map:.6}")]).map_err(run_err)?;
        }
        w.flush().map_err(run_err)?;
    }
    Ok(())
}

fn stats(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let ds = open_dataset(cfg)?;
    let mut w = csv::Writer::from_writer(create(&dir.join("stats.csv"))?);
    w.write_record(["sequence", "frames", "labeled_frames", "points", "boxes", "mean_points"]).map_err(run_err)?;
    let mut frame = Frame::new(0.0, int_core::geometry::Pose::IDENTITY);
    for (s, entry) in ds.manifest.sequences.iter().enumerate() {
        let mut reader = ds.reader(s).map_err(run_err)?;
        let (mut n, mut labeled, mut points, mut boxes) = (0usize, 0usize, 0usize, 0usize);
        while reader.read_into(&mut frame).map_err(run_err)? {
            n += 1;
            labeled += frame.labeled as usize;
            points += frame.points.len();
            boxes += frame.boxes.len();
        }
        let mean = if n == 0 { 0.0 } else { points as f64 / n as f64 };
        w.write_record([
            entry.id.to_string(),
            n.to_string(),
            labeled.to_string(),
            points.to_string(),
            boxes.to_string(),
            format!("{mean:.1}"),
        ])
        .map_err(run_err)?;
    }
    w.flush().map_err(run_err)
}
