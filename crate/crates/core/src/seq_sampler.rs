//! On-stream training schedule: sequence sort, split into fixed-length
//! segments, seeded padding to a whole number of batch rows and the
//! epoch-indexed training sequence length.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::rng::{hash_key, keyed_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleIndex {
    pub sequence_id: u32,
    pub frame_index: u32,
    pub labeled: bool,
}

impl SampleIndex {
    pub fn new(sequence_id: u32, frame_index: u32) -> SampleIndex {
        SampleIndex { sequence_id, frame_index, labeled: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DtslConfig {
    pub l_max: usize,
    pub ep_all: usize,
    pub ep_cur: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SamplerError {
    #[error("invalid DTSL configuration: {0}")]
    BadDtsl(&'static str),
    #[error("duplicate sample: sequence {sequence_id}, frame {frame_index}")]
    Duplicate { sequence_id: u32, frame_index: u32 },
    #[error("target length and batch size must be at least 1")]
    BadShape,
    #[error("no streams to schedule")]
    NoStreams,
}

impl DtslConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.l_max < 1 {
            return Err(SamplerError::BadDtsl("l_max must be at least 1"));
        }
        if self.ep_all < 1 {
            return Err(SamplerError::BadDtsl("ep_all must be at least 1"));
        }
        if self.ep_cur > self.ep_all {
            return Err(SamplerError::BadDtsl("ep_cur exceeds ep_all"));
        }
        Ok(())
    }
}

/// `max(1, floor(l_max * min(1, max(0, 2 ep_cur / ep_all - 0.5))))`,
/// evaluated in integers: the inner term is `(4 ep_cur - ep_all) / (2 ep_all)`.
pub fn dtsl_length(cfg: &DtslConfig) -> usize {
    let (l, e, c) = (cfg.l_max as u128, cfg.ep_all as u128, cfg.ep_cur as u128);
    let num = 4 * c;
    if num <= e {
        return 1;
    }
    let num = num - e;
    let den = 2 * e;
    if num >= den {
        return cfg.l_max.max(1);
    }
    ((l * num / den) as usize).max(1)
}

/// Groups samples by sequence, ascending frame index. Labeled flags are
/// preserved; unlabeled frames stay in the stream as input.
pub fn sort_sequences(samples: &[SampleIndex]) -> Result<BTreeMap<u32, Vec<SampleIndex>>, SamplerError> {
    let mut map: BTreeMap<u32, Vec<SampleIndex>> = BTreeMap::new();
    for s in samples {
        map.entry(s.sequence_id).or_default().push(*s);
    }
    for frames in map.values_mut() {
        frames.sort_by_key(|s| s.frame_index);
        if let Some(w) = frames.windows(2).find(|w| w[0].frame_index == w[1].frame_index) {
            return Err(SamplerError::Duplicate { sequence_id: w[0].sequence_id, frame_index: w[0].frame_index });
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledFrame {
    pub sample: SampleIndex,
    /// Clears the memory bank before this frame.
    pub reset: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub frames: Vec<ScheduledFrame>,
    /// Padding copy of another segment.
    pub replica: bool,
}

impl Segment {
    fn from_samples(samples: &[SampleIndex], replica: bool) -> Segment {
        let frames =
            samples.iter().enumerate().map(|(i, s)| ScheduledFrame { sample: *s, reset: i == 0 }).collect();
        Segment { frames, replica }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn sequence_id(&self) -> u32 {
        self.frames[0].sample.sequence_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub batch_size: usize,
    pub target_len: usize,
    /// `lanes[l][k]` is the k-th segment of lane `l`.
    pub lanes: Vec<Vec<Segment>>,
}

impl Schedule {
    /// Segments per lane.
    pub fn rows(&self) -> usize {
        self.lanes.first().map_or(0, Vec::len)
    }

    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.lanes.iter().flatten()
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.lanes.len() != self.batch_size {
            return Err("lane count differs from batch size");
        }
        let rows = self.rows();
        if self.lanes.iter().any(|l| l.len() != rows) {
            return Err("lanes have different segment counts");
        }
        for seg in self.segments() {
            if seg.is_empty() || seg.len() > self.target_len {
                return Err("segment length out of range");
            }
            let seq = seg.sequence_id();
            for (i, f) in seg.frames.iter().enumerate() {
                if f.sample.sequence_id != seq {
                    return Err("segment spans sequences");
                }
                if f.reset != (i == 0) {
                    return Err("reset flag not exactly on the first frame");
                }
                if i > 0 && f.sample.frame_index <= seg.frames[i - 1].sample.frame_index {
                    return Err("frame index not strictly increasing");
                }
            }
        }
        Ok(())
    }

    /// One `(lane, segment, seq, frame, reset)` row per scheduled frame,
    /// lane-major.
    pub fn rows_flat(&self) -> Vec<(usize, usize, u32, u32, bool)> {
        let mut out = Vec::new();
        for (l, lane) in self.lanes.iter().enumerate() {
            for (k, seg) in lane.iter().enumerate() {
                for f in &seg.frames {
                    out.push((l, k, f.sample.sequence_id, f.sample.frame_index, f.reset));
                }
            }
        }
        out
    }
}

const TAG_SPLIT: u64 = 0x7370_6c69_74;

/// Cuts every stream into consecutive segments of at most `target_len`
/// frames, shuffles them (seeded), replicates randomly chosen segments
/// until the count is a multiple of `batch_size`, then deals them to lanes
/// round-robin.
pub fn split_and_pad(
    streams: &BTreeMap<u32, Vec<SampleIndex>>,
    target_len: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Schedule, SamplerError> {
    if target_len == 0 || batch_size == 0 {
        return Err(SamplerError::BadShape);
    }
    let mut segments: Vec<Segment> = streams
        .values()
        .flat_map(|frames| frames.chunks(target_len))
        .map(|chunk| Segment::from_samples(chunk, false))
        .collect();
    if segments.is_empty() {
        return Err(SamplerError::NoStreams);
    }
    let mut rng = keyed_rng(&[seed, TAG_SPLIT]);
    segments.shuffle(&mut rng);

    let unique = segments.len();
    let missing = (batch_size - unique % batch_size) % batch_size;
    // Draw without replacement while possible so each replica appears twice.
    let mut pool: Vec<usize> = (0..unique).collect();
    for k in 0..missing {
        if k % unique == 0 {
            pool = (0..unique).collect();
        }
        let pick = pool.swap_remove(rng.random_range(0..pool.len()));
        let mut copy = segments[pick].clone();
        copy.replica = true;
        segments.push(copy);
    }

    let mut lanes: Vec<Vec<Segment>> = (0..batch_size).map(|_| Vec::new()).collect();
    for (i, seg) in segments.into_iter().enumerate() {
        lanes[i % batch_size].push(seg);
    }
    Ok(Schedule { batch_size, target_len, lanes })
}

/// The schedule of one epoch: DTSL length, sort, split. The shuffle seed
/// is derived from `(base_seed, ep_cur)`.
pub fn epoch_schedule(
    manifest: &[SampleIndex],
    cfg: &DtslConfig,
    batch_size: usize,
    base_seed: u64,
) -> Result<Schedule, SamplerError> {
    cfg.validate()?;
    let target = dtsl_length(cfg);
    let streams = sort_sequences(manifest)?;
    split_and_pad(&streams, target, batch_size, hash_key(&[base_seed, cfg.ep_cur as u64]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(id: u32, n: u32) -> Vec<SampleIndex> {
        (0..n).map(|i| SampleIndex::new(id, i)).collect()
    }

    #[test]
    fn dtsl_anchor_points() {
        let at = |c| dtsl_length(&DtslConfig { l_max: 10, ep_all: 20, ep_cur: c });
        assert_eq!([at(0), at(10), at(15), at(20)], [1, 5, 10, 10]);
    }

    #[test]
    fn dtsl_validation() {
        assert!(DtslConfig { l_max: 0, ep_all: 1, ep_cur: 0 }.validate().is_err());
        assert!(DtslConfig { l_max: 1, ep_all: 0, ep_cur: 0 }.validate().is_err());
        assert!(DtslConfig { l_max: 1, ep_all: 2, ep_cur: 3 }.validate().is_err());
    }

    #[test]
    fn sort_groups_and_orders() {
        let s = [SampleIndex::new(1, 3), SampleIndex::new(1, 1), SampleIndex::new(2, 0), SampleIndex::new(1, 2)];
        let m = sort_sequences(&s).unwrap();
        let a: Vec<u32> = m[&1].iter().map(|s| s.frame_index).collect();
        assert_eq!(a, [1, 2, 3]);
        assert_eq!(m[&2].len(), 1);
        assert!(sort_sequences(&[]).unwrap().is_empty());
        let dup = [SampleIndex::new(1, 3), SampleIndex::new(1, 3)];
        assert_eq!(sort_sequences(&dup), Err(SamplerError::Duplicate { sequence_id: 1, frame_index: 3 }));
    }

    #[test]
    fn sort_keeps_label_flags() {
        let s: Vec<SampleIndex> =
            (0..25).rev().map(|i| SampleIndex { sequence_id: 0, frame_index: i, labeled: i % 10 == 0 }).collect();
        let m = sort_sequences(&s).unwrap();
        let labeled: Vec<u32> = m[&0].iter().filter(|s| s.labeled).map(|s| s.frame_index).collect();
        assert_eq!(labeled, [0, 10, 20]);
        assert_eq!(m[&0].len(), 25);
    }

    #[test]
    fn five_and_three_into_two_lanes() {
        let mut streams = BTreeMap::new();
        streams.insert(1, seq(1, 5));
        streams.insert(2, seq(2, 3));
        for seed in 0..20 {
            let s = split_and_pad(&streams, 4, 2, seed).unwrap();
            s.validate().unwrap();
            assert_eq!(s.rows(), 2);
            let unique = s.segments().filter(|g| !g.replica).count();
            let replicas: Vec<&Segment> = s.segments().filter(|g| g.replica).collect();
            assert_eq!((unique, replicas.len()), (3, 1));
            let mut lens: Vec<usize> = s.segments().filter(|g| !g.replica).map(Segment::len).collect();
            lens.sort();
            assert_eq!(lens, [1, 3, 4]);
            let twin = s.segments().filter(|g| !g.replica && g.frames == replicas[0].frames).count();
            assert_eq!(twin, 1);
            assert_eq!(s, split_and_pad(&streams, 4, 2, seed).unwrap());
        }
    }

    #[test]
    fn no_padding_when_divisible() {
        let mut streams = BTreeMap::new();
        streams.insert(0, seq(0, 8));
        let s = split_and_pad(&streams, 4, 1, 3).unwrap();
        assert_eq!(s.rows(), 2);
        assert!(s.segments().all(|g| !g.replica && g.len() == 4));

        let mut streams = BTreeMap::new();
        streams.insert(0, seq(0, 7));
        let s = split_and_pad(&streams, 3, 3, 3).unwrap();
        assert_eq!(s.rows(), 1);
        let mut lens: Vec<usize> = s.segments().map(Segment::len).collect();
        lens.sort();
        assert_eq!(lens, [1, 3, 3]);
    }

    #[test]
    fn errors() {
        let empty = BTreeMap::new();
        assert_eq!(split_and_pad(&empty, 4, 2, 0), Err(SamplerError::NoStreams));
        let mut streams = BTreeMap::new();
        streams.insert(0, seq(0, 3));
        assert_eq!(split_and_pad(&streams, 0, 2, 0), Err(SamplerError::BadShape));
        assert_eq!(split_and_pad(&streams, 2, 0, 0), Err(SamplerError::BadShape));
    }

    #[test]
    fn more_padding_than_segments() {
        let mut streams = BTreeMap::new();
        streams.insert(0, seq(0, 2));
        let s = split_and_pad(&streams, 4, 4, 1).unwrap();
        s.validate().unwrap();
        assert_eq!(s.segments().filter(|g| g.replica).count(), 3);
    }

    #[test]
    fn epoch_schedule_lengths() {
        let manifest: Vec<SampleIndex> = [seq(0, 23), seq(1, 17)].concat();
        let cfg = DtslConfig { l_max: 10, ep_all: 8, ep_cur: 0 };
        let s0 = epoch_schedule(&manifest, &cfg, 4, 9).unwrap();
        assert!(s0.segments().all(|g| g.len() == 1));
        let last = DtslConfig { ep_cur: 8, ..cfg };
        let s1 = epoch_schedule(&manifest, &last, 4, 9).unwrap();
        assert!(s1.segments().all(|g| g.len() <= 10));
        assert_eq!(s1.segments().filter(|g| !g.replica && g.len() == 10).count(), 3);
        assert_eq!(s1, epoch_schedule(&manifest, &last, 4, 9).unwrap());
        assert_ne!(
            epoch_schedule(&manifest, &DtslConfig { ep_cur: 1, ..cfg }, 4, 9).unwrap().rows_flat(),
            s0.rows_flat()
        );
    }
}
