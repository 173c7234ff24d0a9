//! Per-frame latency of the streaming engine and the concat-k baseline,
//! with a per-stage breakdown and a least-squares drift estimate.

use std::io::Write;
use std::time::Instant;

use int_core::engine::{Engine, EngineConfig, Stage, StageHook, StepCounters};
use int_core::eval::ConcatBaseline;
use int_core::frame::Frame;
use int_core::sim::{self, SimObject, WorldConfig};
use int_core::ToyModel;

/// Frames excluded from the statistics while caches and the bank settle.
pub const DEFAULT_WARMUP: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("empty stream")]
    Empty,
    #[error("stream of {frames} frames leaves nothing after {warmup} warm-up frames")]
    TooShort { frames: usize, warmup: usize },
    #[error(transparent)]
    Engine(#[from] int_core::engine::EngineError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTiming {
    pub frame: usize,
    pub total_us: f64,
    /// Indexed like [`Stage::ALL`]; zero for stages the runner lacks.
    pub stage_us: [f64; Stage::ALL.len()],
    pub counters: StepCounters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub label: String,
    pub warmup: usize,
    /// Post-warm-up frames only.
    pub frames: Vec<FrameTiming>,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    /// Least-squares slope of frame time against frame index.
    pub slope_us_per_frame: f64,
    pub peak_bank_points: usize,
    pub peak_resident_bytes: usize,
}

impl LatencyReport {
    /// Drift over 100 frames as a fraction of the mean time.
    pub fn relative_drift_per_100(&self) -> f64 {
        (self.slope_us_per_frame * 100.0).abs() / self.mean_us
    }

    pub fn mean_stage_us(&self, stage: Stage) -> f64 {
        let i = Stage::ALL.iter().position(|s| *s == stage).expect("listed stage");
        self.frames.iter().map(|f| f.stage_us[i]).sum::<f64>() / self.frames.len() as f64
    }

    /// `frame,stage,micros` rows: one per stage plus a `total` row per frame.
    pub fn write_stages_csv<W: Write>(&self, out: W) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame", "stage", "micros"])?;
        for f in &self.frames {
            for (s, us) in Stage::ALL.iter().zip(f.stage_us) {
                w.write_record([f.frame.to_string(), s.name().to_string(), format!("{us:.3}")])?;
            }
            w.write_record([f.frame.to_string(), "total".to_string(), format!("{:.3}", f.total_us)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `frame,stage,micros` with one `total` row per post-warm-up frame.
    pub fn write_csv<W: Write>(&self, out: W) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame", "stage", "micros"])?;
        for f in &self.frames {
            w.write_record([f.frame.to_string(), "total".to_string(), format!("{:.3}", f.total_us)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Least-squares slope of `ys` against `0, 1, 2, ...`.
pub fn ols_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Nearest-rank percentile of a non-empty sample.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

struct StageClock {
    last: Instant,
    us: [f64; Stage::ALL.len()],
}

impl StageClock {
    fn start() -> StageClock {
        StageClock { last: Instant::now(), us: [0.0; Stage::ALL.len()] }
    }
}

impl StageHook for StageClock {
    fn done(&mut self, stage: Stage) {
        let now = Instant::now();
        let i = Stage::ALL.iter().position(|s| *s == stage).expect("listed stage");
        self.us[i] += (now - self.last).as_secs_f64() * 1e6;
        self.last = now;
    }
}

fn summarize(label: &str, warmup: usize, frames: Vec<FrameTiming>, peak_points: usize, peak_bytes: usize) -> LatencyReport {
    let totals: Vec<f64> = frames.iter().map(|f| f.total_us).collect();
    let mut sorted = totals.clone();
    sorted.sort_by(f64::total_cmp);
    LatencyReport {
        label: label.to_string(),
        warmup,
        mean_us: totals.iter().sum::<f64>() / totals.len() as f64,
        p50_us: percentile(&sorted, 50.0),
        p99_us: percentile(&sorted, 99.0),
        slope_us_per_frame: ols_slope(&totals),
        frames,
        peak_bank_points: peak_points,
        peak_resident_bytes: peak_bytes,
    }
}

/// Keeps, per frame index, the fastest of several runs.
fn merge_fastest(best: &mut Vec<FrameTiming>, run: Vec<FrameTiming>) {
    if best.is_empty() {
        *best = run;
        return;
    }
    for (b, r) in best.iter_mut().zip(run) {
        if r.total_us < b.total_us {
            *b = r;
        }
    }
}

/// Times the engine over the stream produced by `frames`, `repeats` times
/// (each run starts with a reset), keeping the fastest time per frame so
/// scheduler noise does not masquerade as drift. Runs on the calling thread.
pub fn bench_engine<I, F>(engine: &mut Engine, frames: F, warmup: usize, repeats: usize) -> Result<LatencyReport, BenchError>
where
    F: Fn() -> I,
    I: IntoIterator<Item = Frame>,
{
    let mut best = Vec::new();
    let (mut peak_points, mut peak_bytes) = (0, 0);
    for _ in 0..repeats.max(1) {
        let (mut out, mut seen) = (Vec::new(), 0);
        for (i, frame) in frames().into_iter().enumerate() {
            let mut clock = StageClock::start();
            let t0 = clock.last;
            engine.step_hooked(&frame, i == 0, &mut clock)?;
            let total_us = t0.elapsed().as_secs_f64() * 1e6;
            seen += 1;
            peak_points = peak_points.max(engine.bank.point.len());
            peak_bytes = peak_bytes.max(engine.resident_bytes());
            if i >= warmup {
                out.push(FrameTiming { frame: i, total_us, stage_us: clock.us, counters: engine.counters() });
            }
        }
        check_len(seen, warmup)?;
        merge_fastest(&mut best, out);
    }
    Ok(summarize("int", warmup, best, peak_points, peak_bytes))
}

fn concat_once<I>(model: &ToyModel, cfg: &EngineConfig, k: usize, frames: I, warmup: usize) -> Result<(Vec<FrameTiming>, usize), BenchError>
where
    I: IntoIterator<Item = Frame>,
{
    let mut base = ConcatBaseline::new(k, cfg, model.c_mid);
    let (mut out, mut seen, mut peak_bytes) = (Vec::new(), 0, 0);
    for (i, frame) in frames.into_iter().enumerate() {
        let t0 = Instant::now();
        base.step(model, cfg, &frame)?;
        let total_us = t0.elapsed().as_secs_f64() * 1e6;
        seen += 1;
        peak_bytes = peak_bytes.max(base.window_bytes());
        if i >= warmup {
            out.push(FrameTiming { frame: i, total_us, stage_us: [0.0; Stage::ALL.len()], counters: base.counters });
        }
    }
    check_len(seen, warmup)?;
    Ok((out, peak_bytes))
}

/// Times the concat-k baseline for every `k` in `ks`. Repeats are
/// interleaved across `k` (round-robin) so slow phases of the machine hit
/// every window size alike; the fastest time per frame is kept.
pub fn bench_concat<I, F>(
    model: &ToyModel,
    cfg: &EngineConfig,
    ks: &[usize],
    frames: F,
    warmup: usize,
    repeats: usize,
) -> Result<Vec<LatencyReport>, BenchError>
where
    F: Fn() -> I,
    I: IntoIterator<Item = Frame>,
{
    let mut best: Vec<(Vec<FrameTiming>, usize)> = ks.iter().map(|_| (Vec::new(), 0)).collect();
    for _ in 0..repeats.max(1) {
        for (slot, &k) in best.iter_mut().zip(ks) {
            let (run, bytes) = concat_once(model, cfg, k, frames(), warmup)?;
            merge_fastest(&mut slot.0, run);
            slot.1 = slot.1.max(bytes);
        }
    }
    Ok(ks.iter().zip(best).map(|(k, (t, bytes))| summarize(&format!("concat-{k}"), warmup, t, 0, bytes)).collect())
}

fn check_len(frames: usize, warmup: usize) -> Result<(), BenchError> {
    match frames {
        0 => Err(BenchError::Empty),
        n if n <= warmup => Err(BenchError::TooShort { frames: n, warmup }),
        _ => Ok(()),
    }
}

/// Lazily rendered synthetic stream, so long benchmarks never hold more
/// than one sweep.
pub struct SimStream {
    cfg: WorldConfig,
    objects: Vec<SimObject>,
    seed: u64,
    next: usize,
}

impl SimStream {
    pub fn new(cfg: WorldConfig, seed: u64) -> SimStream {
        let objects = sim::spawn_objects(&cfg, seed);
        SimStream { cfg, objects, seed, next: 0 }
    }
}

impl Iterator for SimStream {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        if self.next >= self.cfg.duration {
            return None;
        }
        let f = sim::render_frame(&self.cfg, &self.objects, self.seed, self.next);
        self.next += 1;
        Some(f)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.cfg.duration - self.next;
        (left, Some(left))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_line() {
        let ys: Vec<f64> = (0..50).map(|i| 3.0 + 0.5 * i as f64).collect();
        assert!((ols_slope(&ys) - 0.5).abs() < 1e-12);
        assert_eq!(ols_slope(&[4.0; 10]), 0.0);
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&[7.0], 99.0), 7.0);
    }

    #[test]
    fn empty_and_short_streams_are_errors() {
        let spec = int_core::GridSpec::centered(8.0, 1.0, 1).unwrap();
        let cfg = EngineConfig::new(spec, int_core::FusionConfig::NONE);
        let mut e = Engine::new(ToyModel::init(4, None, None, 0), cfg).unwrap();
        assert!(matches!(bench_engine(&mut e, Vec::new, 0, 1), Err(BenchError::Empty)));
        let w = WorldConfig { duration: 3, ..WorldConfig::default() };
        assert!(matches!(bench_engine(&mut e, || SimStream::new(w.clone(), 1), 3, 1), Err(BenchError::TooShort { .. })));
    }
}
