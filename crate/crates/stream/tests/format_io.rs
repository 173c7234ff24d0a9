//! Dataset file round trips and the failure modes of the reader.

use proptest::prelude::*;

use int_core::detection::BevBox;
use int_core::frame::{Frame, GtBox};
use int_core::geometry::Pose;
use int_core::point_fusion::LidarPoint;
use int_core::sim::{self, WorldConfig};
use int_stream::format::{self, Dataset, FormatError, SequenceReader, SequenceWriter};

fn encode(frames: &[Frame]) -> (Vec<u8>, Vec<usize>) {
    let mut w = SequenceWriter::new(Vec::new());
    let mut ends = Vec::new();
    let mut buf = Vec::new();
    for f in frames {
        w.write(f).unwrap();
        format::encode_frame(f, &mut buf);
        ends.push(buf.len());
    }
    let bytes = w.finish().unwrap();
    assert_eq!(bytes, buf);
    (bytes, ends)
}

fn read_all(bytes: &[u8]) -> (Vec<Frame>, Option<FormatError>) {
    let mut ok = Vec::new();
    for r in SequenceReader::new(bytes, 1) {
        match r {
            Ok(f) => ok.push(f),
            Err(e) => return (ok, Some(e)),
        }
    }
    (ok, None)
}

fn small_sequence() -> Vec<Frame> {
    let mut cfg = WorldConfig { duration: 4, ..WorldConfig::default() };
    cfg.lidar.points_per_frame = 50;
    sim::generate_sequence(&cfg, 3)
}

#[test]
fn generated_sequence_round_trips() {
    let frames = small_sequence();
    let (bytes, _) = encode(&frames);
    let (back, err) = read_all(&bytes);
    assert!(err.is_none());
    assert_eq!(back, frames.iter().map(format::quantize).collect::<Vec<_>>());
    assert_eq!(encode(&back).0, bytes);
}

/// Cutting the file anywhere inside record k yields k good frames and a
/// truncation error naming record k.
#[test]
fn truncation_names_the_failing_record() {
    let (bytes, ends) = encode(&small_sequence());
    let mut start = 0;
    for (k, &end) in ends.iter().enumerate() {
        for cut in [start + 1, start + 7, (start + end) / 2, end - 1] {
            let (ok, err) = read_all(&bytes[..cut]);
            assert_eq!(ok.len(), k);
            match err {
                Some(FormatError::Truncated { index }) => assert_eq!(index, k),
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
        let (ok, err) = read_all(&bytes[..end]);
        assert_eq!((ok.len(), err.is_none()), (k + 1, true));
        start = end;
    }
}

#[test]
fn corrupted_payload_fails_the_crc() {
    let (mut bytes, ends) = encode(&small_sequence());
    bytes[ends[1] + 300] ^= 0x40;
    let (ok, err) = read_all(&bytes);
    assert_eq!(ok.len(), 2);
    assert!(matches!(err, Some(FormatError::Crc { index: 2 })));
}

#[test]
fn version_and_magic_are_checked() {
    let (mut bytes, ends) = encode(&small_sequence());
    bytes[ends[0] + 4..ends[0] + 8].copy_from_slice(&2u32.to_le_bytes());
    let (ok, err) = read_all(&bytes);
    assert_eq!(ok.len(), 1);
    assert!(matches!(err, Some(FormatError::Version { index: 1, found: 2 })));
    bytes[..4].copy_from_slice(b"NOPE");
    assert!(matches!(read_all(&bytes).1, Some(FormatError::BadMagic { index: 0, .. })));
}

#[test]
fn dataset_directory_round_trip_and_manifest_checks() {
    let dir = tempfile::tempdir().unwrap();
    let seqs = vec![(Some(3), small_sequence()), (None, small_sequence()[..2].to_vec())];
    let m = format::write_dataset(dir.path(), &seqs, 2).unwrap();
    assert_eq!(m.total_frames(), 6);
    let ds = Dataset::open(dir.path()).unwrap();
    let all = ds.load_all().unwrap();
    assert_eq!(all[1].len(), 2);
    assert_eq!(all[0].iter().map(|f| f.labeled).collect::<Vec<_>>(), [true, false, true, false]);

    let mut manifest = ds.manifest.clone();
    manifest.sequences[1].frames = 3;
    manifest.save(dir.path()).unwrap();
    assert!(matches!(Dataset::open(dir.path()).unwrap().load_sequence(1), Err(FormatError::Manifest(_))));

    std::fs::write(dir.path().join(format::MANIFEST_FILE), "{\"format\":\"intf\",\"bogus\":1}").unwrap();
    assert!(Dataset::open(dir.path()).is_err());
}

fn frame_strategy() -> impl Strategy<Value = Frame> {
    let point = (prop::array::uniform4(-100.0..100.0f64)).prop_map(|v| LidarPoint::new(v[0], v[1], v[2], v[3]));
    let gt = (prop::array::uniform4(-50.0..50.0f64), 0u32..3, any::<u32>()).prop_map(|(v, class, track_id)| GtBox {
        bbox: BevBox::new(v[0], v[1], v[2].abs() + 0.1, v[3].abs() + 0.1, 0.3),
        z: 0.7,
        h: 1.5,
        class,
        track_id,
    });
    (0.0..1e6f64, -3.1..3.1f64, prop::collection::vec(point, 0..40), prop::collection::vec(gt, 0..6)).prop_map(
        |(t, yaw, points, boxes)| {
            let mut f = Frame::new(t, Pose::planar(t.sin() * 10.0, 2.0, 0.1, yaw));
            f.points = points;
            f.boxes = boxes;
            f
        },
    )
}

proptest! {
    #[test]
    fn any_frame_round_trips_as_its_quantization(f in frame_strategy()) {
        let (bytes, _) = encode(std::slice::from_ref(&f));
        let (back, err) = read_all(&bytes);
        prop_assert!(err.is_none());
        prop_assert_eq!(&back[0], &format::quantize(&f));
    }
}
