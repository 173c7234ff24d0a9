//! Run configuration: flat `key = value` text, overridable from the command
//! line, validated before any work starts. The canonical rendering is
//! hashed into the reproducibility header of every run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use int_core::engine::{EngineConfig, FusionConfig};
use int_core::eval::DEFAULT_THRESHOLDS;
use int_core::geometry::GridSpec;
use int_core::image_fusion::FusionMode;
use int_core::seq_aug::AugRanges;
use int_core::sim::WorldConfig;

use crate::experiment;
use crate::trainer::TrainConfig;

/// Environment variable naming the root directory for run outputs.
pub const OUT_DIR_ENV: &str = "INT_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "runs";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorldPreset {
    Default,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    Int,
    Concat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker-thread cap; not part of the hash since results do not depend on it.
    pub threads: Option<usize>,
    pub data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub gtdb: Option<PathBuf>,

    pub world: WorldPreset,
    pub frames: usize,
    pub sequences: usize,
    pub label_interval: usize,

    /// Half the side of the square BEV grid, meters.
    pub grid_extent: f64,
    pub cell_size: f64,
    pub pc: bool,
    pub fm: Option<FusionMode>,
    pub pm: Option<FusionMode>,
    pub point_capacity: usize,
    pub point_max_age: Option<f64>,

    pub c_mid: usize,
    pub epochs: usize,
    pub seq_len: usize,
    pub dtsl: bool,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub aug: bool,
    pub paste_count: usize,
    pub epoch: Option<usize>,
    pub lengths: Vec<usize>,

    pub thresholds: Vec<f64>,
    pub eval_skip: usize,
    pub history: Vec<usize>,

    pub mode: BenchMode,
    pub bench_frames: usize,
    pub warmup: usize,
    pub repeats: usize,
    pub ks: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: None,
            data: None,
            test_data: None,
            model: None,
            gtdb: None,
            world: WorldPreset::Sparse,
            frames: 60,
            sequences: 4,
            label_interval: 1,
            grid_extent: 24.0,
            cell_size: 1.0,
            pc: true,
            fm: Some(FusionMode::Concat),
            pm: Some(FusionMode::Concat),
            point_capacity: 50_000,
            point_max_age: Some(0.25),
            c_mid: 8,
            epochs: 20,
            seq_len: 20,
            dtsl: true,
            batch_size: 4,
            lr: 0.05,
            momentum: 0.9,
            lr_decay: 0.3,
            decay_every: 6,
            aug: false,
            paste_count: 3,
            epoch: None,
            lengths: Vec::new(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            eval_skip: experiment::EVAL_SKIP,
            history: vec![1, 2, 5, 10, 20],
            mode: BenchMode::Int,
            bench_frames: 1000,
            warmup: crate::bench::DEFAULT_WARMUP,
            repeats: 3,
            ks: vec![1, 2, 4, 8],
        }
    }
}

fn bad(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::BadValue { key: key.to_string(), value: value.to_string(), reason: reason.to_string() }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: ToString,
{
    value.parse().map_err(|e: T::Err| bad(key, value, e))
}

fn boolean(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "expected on or off")),
    }
}

fn mode(key: &str, value: &str) -> Result<Option<FusionMode>, ConfigError> {
    match value {
        "none" | "off" => Ok(None),
        _ => FusionMode::parse(value).map(Some).ok_or_else(|| bad(key, value, "expected none, add, max, concat or gru")),
    }
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: ToString,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn opt_path(v: &Option<PathBuf>) -> String {
    v.as_ref().map_or(String::new(), |p| p.display().to_string())
}

fn mode_name(m: Option<FusionMode>) -> String {
    m.map_or("none", |m| m.name()).to_string()
}

fn on_off(b: bool) -> String {
    if b { "on" } else { "off" }.to_string()
}

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let path = || (!value.is_empty()).then(|| PathBuf::from(value));
        match key {
            "seed" => self.seed = num(key, value)?,
            "threads" => self.threads = Some(num(key, value)?),
            "data" => self.data = path(),
            "test_data" => self.test_data = path(),
            "model" => self.model = path(),
            "gtdb" => self.gtdb = path(),
            "world" => {
                self.world = match value {
                    "default" => WorldPreset::Default,
                    "sparse" => WorldPreset::Sparse,
                    _ => return Err(bad(key, value, "expected default or sparse")),
                }
            }
            "frames" => self.frames = num(key, value)?,
            "sequences" => self.sequences = num(key, value)?,
            "label_interval" => self.label_interval = num(key, value)?,
            "grid_extent" => self.grid_extent = num(key, value)?,
            "cell_size" => self.cell_size = num(key, value)?,
            "pc" => self.pc = boolean(key, value)?,
            "fm" => self.fm = mode(key, value)?,
            "pm" => self.pm = mode(key, value)?,
            "point_capacity" => self.point_capacity = num(key, value)?,
            "point_max_age" => {
                self.point_max_age = match value {
                    "none" | "off" => None,
                    _ => Some(num(key, value)?),
                }
            }
            "c_mid" => self.c_mid = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seq_len" => self.seq_len = num(key, value)?,
            "dtsl" => self.dtsl = boolean(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "lr_decay" => self.lr_decay = num(key, value)?,
            "decay_every" => self.decay_every = num(key, value)?,
            "aug" => self.aug = boolean(key, value)?,
            "paste_count" => self.paste_count = num(key, value)?,
            "epoch" => {
                self.epoch = match value {
                    "all" => None,
                    _ => Some(num(key, value)?),
                }
            }
            "lengths" => self.lengths = list(key, value)?,
            "thresholds" => self.thresholds = list(key, value)?,
            "eval_skip" => self.eval_skip = num(key, value)?,
            "history" => self.history = list(key, value)?,
            "mode" => {
                self.mode = match value {
                    "int" => BenchMode::Int,
                    "concat" => BenchMode::Concat,
                    _ => return Err(bad(key, value, "expected int or concat")),
                }
            }
            "bench_frames" => self.bench_frames = num(key, value)?,
            "warmup" => self.warmup = num(key, value)?,
            "repeats" => self.repeats = num(key, value)?,
            "ks" => self.ks = list(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), reason: e.to_string() })?;
        self.apply_text(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad("--set", kv, "expected key=value"))?;
        self.set(k.trim(), v)
    }

    /// Every key with its canonical value, in a fixed order. Reading this
    /// back through [`RunConfig::apply_text`] reproduces the config.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("data", opt_path(&self.data)),
            ("test_data", opt_path(&self.test_data)),
            ("model", opt_path(&self.model)),
            ("gtdb", opt_path(&self.gtdb)),
            ("world", match self.world { WorldPreset::Default => "default", WorldPreset::Sparse => "sparse" }.into()),
            ("frames", self.frames.to_string()),
            ("sequences", self.sequences.to_string()),
            ("label_interval", self.label_interval.to_string()),
            ("grid_extent", self.grid_extent.to_string()),
            ("cell_size", self.cell_size.to_string()),
            ("pc", on_off(self.pc)),
            ("fm", mode_name(self.fm)),
            ("pm", mode_name(self.pm)),
            ("point_capacity", self.point_capacity.to_string()),
            ("point_max_age", self.point_max_age.map_or("none".into(), |a| a.to_string())),
            ("c_mid", self.c_mid.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("dtsl", on_off(self.dtsl)),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("lr_decay", self.lr_decay.to_string()),
            ("decay_every", self.decay_every.to_string()),
            ("aug", on_off(self.aug)),
            ("paste_count", self.paste_count.to_string()),
            ("epoch", self.epoch.map_or("all".into(), |e| e.to_string())),
            ("lengths", join(&self.lengths)),
            ("thresholds", join(&self.thresholds)),
            ("eval_skip", self.eval_skip.to_string()),
            ("history", join(&self.history)),
            ("mode", match self.mode { BenchMode::Int => "int", BenchMode::Concat => "concat" }.into()),
            ("bench_frames", self.bench_frames.to_string()),
            ("warmup", self.warmup.to_string()),
            ("repeats", self.repeats.to_string()),
            ("ks", join(&self.ks)),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 of the canonical text, hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.frames == 0 {
            return fail("duration must be positive");
        }
        if self.sequences == 0 {
            return fail("sequence count must be positive");
        }
        if self.seq_len == 0 || self.batch_size == 0 || self.epochs == 0 {
            return fail("seq_len, batch_size and epochs must be positive");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return fail("lr must be positive and momentum in [0, 1)");
        }
        if self.c_mid == 0 {
            return fail("c_mid must be positive");
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !(*t > 0.0)) {
            return fail("thresholds must be positive");
        }
        if self.ks.is_empty() || self.ks.contains(&0) || self.history.contains(&0) {
            return fail("frame counts must be positive");
        }
        if self.bench_frames <= self.warmup {
            return fail("bench_frames must exceed warmup");
        }
        if self.threads == Some(0) {
            return fail("threads must be positive");
        }
        if self.point_max_age.is_some_and(|a| !(a > 0.0)) {
            return fail("point_max_age must be positive");
        }
        self.world_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.grid_spec()?;
        Ok(())
    }

    pub fn world_config(&self) -> WorldConfig {
        let mut w = match self.world {
            WorldPreset::Default => WorldConfig { duration: self.frames, ..WorldConfig::default() },
            WorldPreset::Sparse => experiment::sparse_world(self.frames),
        };
        w.label_interval = self.label_interval;
        w
    }

    pub fn grid_spec(&self) -> Result<GridSpec, ConfigError> {
        GridSpec::centered(self.grid_extent, self.cell_size, 1).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig { pc: self.pc, fm: self.fm, pm: self.pm }
    }

    pub fn engine(&self) -> Result<EngineConfig, ConfigError> {
        let mut e = EngineConfig::new(self.grid_spec()?, self.fusion());
        e.point_capacity = self.point_capacity;
        e.point_max_age = self.point_max_age;
        Ok(e)
    }

    pub fn training(&self) -> Result<TrainConfig, ConfigError> {
        let mut t = TrainConfig::new(self.engine()?);
        t.seed = self.seed;
        t.c_mid = self.c_mid;
        t.epochs = self.epochs;
        t.l_max = self.seq_len;
        t.dtsl = self.dtsl;
        t.batch_size = self.batch_size;
        t.lr = self.lr;
        t.momentum = self.momentum;
        t.lr_decay = self.lr_decay;
        t.decay_every = self.decay_every;
        t.aug = self.aug.then(|| AugRanges { paste_count: self.paste_count, ..AugRanges::default() });
        Ok(t)
    }

    pub fn header(&self, subcommand: &str) -> RunHeader {
        RunHeader {
            tool: "int".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            config_hash: self.hash(),
            seed: self.seed,
        }
    }
}

/// Written as `header.json` next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunHeader {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
}

/// Root for run directories: the explicit choice, else the environment,
/// else `runs`.
pub fn out_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Creates `root/<subcommand>-<unix seconds>-<hash prefix>`, adding a
/// suffix if that name is taken.
pub fn create_run_dir(root: &Path, subcommand: &str, hash: &str) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(root)?;
    let secs = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let base = format!("{subcommand}-{secs}-{}", &hash[..8.min(hash.len())]);
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!("unbounded search")
}
