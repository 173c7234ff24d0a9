//! Schedule-driven training: every epoch builds a SeqSampler schedule at
//! the DTSL length, lanes run their segments in lockstep one frame per
//! optimizer step, and per-lane gradients are summed in lane order.

use rayon::prelude::*;

use int_core::engine::{EngineConfig, FusionConfig};
use int_core::frame::Frame;
use int_core::geometry::Pose;
use int_core::seq_aug::{self, AugRanges, GtDatabase, StreamAugState};
use int_core::seq_sampler::{self, DtslConfig, SampleIndex, Schedule, Segment};
use int_core::train::{self, LaneState, LossConfig, Sgd};
use int_core::ToyModel;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub engine: EngineConfig,
    pub c_mid: usize,
    pub epochs: usize,
    /// Longest training segment.
    pub l_max: usize,
    /// Grow the segment length with the epoch; off means `l_max` throughout.
    pub dtsl: bool,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Stream augmentation; `None` trains on raw frames.
    pub aug: Option<AugRanges>,
    /// Feed the point bank from ground truth instead of detections.
    pub teacher_forcing: bool,
    pub loss: LossConfig,
    /// Projection bound on the recurrent gain of Concat fusion after every
    /// step; `None` leaves the weights free.
    pub recurrent_gain_max: Option<f64>,
}

impl TrainConfig {
    pub fn new(engine: EngineConfig) -> TrainConfig {
        TrainConfig {
            engine,
            c_mid: 8,
            epochs: 12,
            l_max: 10,
            dtsl: true,
            batch_size: 4,
            lr: 0.05,
            momentum: 0.9,
            lr_decay: 0.3,
            decay_every: 8,
            clip_norm: Some(5.0),
            seed: 0,
            aug: None,
            teacher_forcing: false,
            loss: LossConfig::default(),
            recurrent_gain_max: Some(0.5),
        }
    }

    pub fn fusion(&self) -> FusionConfig {
        self.engine.fusion
    }

    /// Segment length used in `epoch`.
    pub fn target_len(&self, epoch: usize) -> usize {
        if self.dtsl {
            seq_sampler::dtsl_length(&self.dtsl_config(epoch))
        } else {
            self.l_max
        }
    }

    pub fn dtsl_config(&self, epoch: usize) -> DtslConfig {
        DtslConfig { l_max: self.l_max, ep_all: self.epochs.max(1), ep_cur: epoch.min(self.epochs) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub target_len: usize,
    pub steps: usize,
    pub labeled_frames: usize,
    pub mean_loss: f64,
}

/// Every frame of every sequence, sequence id = position.
pub fn manifest(data: &[Vec<Frame>]) -> Vec<SampleIndex> {
    data.iter()
        .enumerate()
        .flat_map(|(s, frames)| {
            frames.iter().enumerate().map(move |(i, f)| SampleIndex {
                sequence_id: s as u32,
                frame_index: i as u32,
                labeled: f.labeled,
            })
        })
        .collect()
}

/// The schedule trained in `epoch`.
pub fn epoch_schedule(data: &[Vec<Frame>], cfg: &TrainConfig, epoch: usize) -> anyhow::Result<Schedule> {
    schedule_for(&manifest(data), cfg, epoch)
}

/// The schedule of `epoch` over an explicit sample manifest.
pub fn schedule_for(samples: &[SampleIndex], cfg: &TrainConfig, epoch: usize) -> anyhow::Result<Schedule> {
    let target = cfg.target_len(epoch);
    let streams = seq_sampler::sort_sequences(samples)?;
    let seed = int_core::rng::hash_key(&[cfg.seed, epoch as u64]);
    Ok(seq_sampler::split_and_pad(&streams, target, cfg.batch_size, seed)?)
}

/// Frame `i` of `seg`, pasted and augmented with the stream's state.
pub fn prepare_frame(
    data: &[Vec<Frame>],
    seg: &Segment,
    i: usize,
    state: Option<&StreamAugState>,
    db: Option<&GtDatabase>,
) -> Frame {
    let s = seg.frames[i].sample;
    let raw = &data[s.sequence_id as usize][s.frame_index as usize];
    let Some(state) = state else {
        return raw.clone();
    };
    let first = seg.frames[0].sample;
    let anchor: Pose = data[first.sequence_id as usize][first.frame_index as usize].pose;
    let mut f = match db {
        Some(db) if !state.gt_picks.is_empty() => seq_aug::gt_paste(raw, db, state, i, &anchor),
        _ => raw.clone(),
    };
    seq_aug::augment_in_place(&mut f, &state.aug);
    f.labeled = s.labeled;
    f
}

/// Trains from `init` (or a fresh model) and returns the model with the
/// per-epoch log. Deterministic for a fixed config regardless of thread count.
pub fn train(
    data: &[Vec<Frame>],
    db: Option<&GtDatabase>,
    cfg: &TrainConfig,
    init: Option<ToyModel>,
) -> anyhow::Result<(ToyModel, Vec<EpochLog>)> {
    let fusion = cfg.fusion();
    let mut model = init.unwrap_or_else(|| ToyModel::init(cfg.c_mid, fusion.fm, fusion.pm, cfg.seed));
    cfg.engine.check_model(&model)?;
    if let Some(max) = cfg.recurrent_gain_max {
        model.bound_recurrence(max);
    }
    let mut opt = Sgd::new(&model, cfg.lr, cfg.momentum);
    opt.decay = cfg.lr_decay;
    opt.decay_every = cfg.decay_every;
    opt.clip_norm = cfg.clip_norm;
    let mut lanes: Vec<LaneState> = (0..cfg.batch_size).map(|_| LaneState::new(&cfg.engine, model.c_mid)).collect();
    let mut lane_grads: Vec<ToyModel> = (0..cfg.batch_size).map(|_| model.zeros_like()).collect();
    let db_len = db.map_or(0, GtDatabase::len);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let schedule = epoch_schedule(data, cfg, epoch)?;
        let (mut loss_sum, mut labeled, mut steps) = (0.0, 0usize, 0usize);
        for row in 0..schedule.rows() {
            let segs: Vec<&Segment> = schedule.lanes.iter().map(|l| &l[row]).collect();
            let states: Vec<Option<StreamAugState>> = segs
                .iter()
                .map(|seg| {
                    cfg.aug.as_ref().map(|r| {
                        seq_aug::derive_state(cfg.seed, seg.sequence_id() as u64, epoch as u64, r, db_len)
                    })
                })
                .collect();
            let len = segs.iter().map(|s| s.len()).max().unwrap_or(0);
            for i in 0..len {
                let results: Vec<anyhow::Result<train::FrameStats>> = lanes
                    .par_iter_mut()
                    .zip(lane_grads.par_iter_mut())
                    .enumerate()
                    .map(|(l, (lane, grads))| {
                        grads.scale(0.0);
                        let seg = segs[l];
                        if i >= seg.len() {
                            return Ok(train::FrameStats::default());
                        }
                        let frame = prepare_frame(data, seg, i, states[l].as_ref(), db);
                        let reset = seg.frames[i].reset;
                        Ok(train::train_frame(
                            &model,
                            &cfg.engine,
                            &cfg.loss,
                            lane,
                            &frame,
                            reset,
                            cfg.teacher_forcing,
                            grads,
                        )?)
                    })
                    .collect();
                let mut any = false;
                for r in results {
                    let st = r?;
                    if st.labeled {
                        any = true;
                        labeled += 1;
                        loss_sum += st.loss;
                    }
                }
                if any {
                    let (first, rest) = lane_grads.split_first_mut().expect("batch_size >= 1");
                    for g in rest.iter() {
                        first.axpy(1.0, g);
                    }
                    opt.step(&mut model, first, epoch);
                    if let Some(max) = cfg.recurrent_gain_max {
                        model.bound_recurrence(max);
                    }
                    steps += 1;
                }
            }
        }
        if !model.is_finite() {
            anyhow::bail!("training diverged in epoch {epoch}");
        }
        let entry = EpochLog {
            epoch,
            target_len: schedule.target_len,
            steps,
            labeled_frames: labeled,
            mean_loss: if labeled == 0 { 0.0 } else { loss_sum / labeled as f64 },
        };
        log::info!(
            "epoch {} len {} steps {} loss {:.5}",
            entry.epoch,
            entry.target_len,
            entry.steps,
            entry.mean_loss
        );
        log.push(entry);
    }
    Ok((model, log))
}
