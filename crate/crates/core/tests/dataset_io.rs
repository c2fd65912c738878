use std::fs;

use hebbset::dataset::{self, PointFrame, SynthConfig};
use hebbset::Error;
use proptest::prelude::*;

#[test]
fn eleven_thousand_frames_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("frames.jsonl");
    let cfg = SynthConfig {
        initial_units: 10,
        min_units: 5,
        max_units: 40,
        ..Default::default()
    };
    let frames = dataset::synth_generate(&cfg, 11).unwrap();
    dataset::save_frames(&path, &frames).unwrap();
    let back = dataset::load_frames(&path).unwrap();
    assert_eq!(back.len(), 11_000);
    assert_eq!(back, frames);
    let chunks = dataset::make_chunks(&back, dataset::CHUNK_LEN).unwrap();
    assert_eq!(chunks.len(), 220);
    let s = dataset::split(chunks, 3);
    assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (176, 22, 22));
}

#[test]
fn empty_file_is_an_empty_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    fs::write(&path, "").unwrap();
    assert!(dataset::load_frames(&path).unwrap().is_empty());
}

#[test]
fn out_of_range_coordinate_names_the_frame() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    fs::write(
        &path,
        "{\"t\":0.0,\"points\":[[0.5,0.5]]}\n{\"t\":0.2,\"points\":[[1.2,0.5]]}\n",
    )
    .unwrap();
    match dataset::load_frames(&path) {
        Err(Error::OutOfRange { frame, message }) => {
            assert_eq!(frame, 1);
            assert!(message.contains("1.2"), "{message}");
        }
        other => panic!("expected a range error, got {other:?}"),
    }
}

#[test]
fn malformed_line_reports_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    fs::write(&path, "{\"t\":0.0,\"points\":[[0.5,0.5]]}\n\n{\"t\":0.2,\"points\":[[0.1\n").unwrap();
    assert!(matches!(dataset::load_frames(&path), Err(Error::Parse { line: 3, .. })));
}

#[test]
fn empty_frame_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    fs::write(&path, "{\"t\":0.0,\"points\":[]}\n").unwrap();
    assert!(matches!(dataset::load_frames(&path), Err(Error::OutOfRange { frame: 0, .. })));
}

#[test]
fn owner_labels_survive_and_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("owners.jsonl");
    fs::write(&path, "{\"t\":0.0,\"points\":[[0.1,0.2],[0.3,0.4]],\"owner\":[1,2]}\n").unwrap();
    let f = dataset::load_frames(&path).unwrap();
    assert_eq!(f[0].owner.as_deref(), Some(&[1, 2][..]));
    fs::write(&path, "{\"t\":0.0,\"points\":[[0.1,0.2]],\"owner\":[1,2]}\n").unwrap();
    assert!(dataset::load_frames(&path).is_err());
}

fn frame_strategy() -> impl Strategy<Value = PointFrame> {
    (
        0.0f64..1e4,
        prop::collection::vec((0.0f32..=1.0, 0.0f32..=1.0), 1..30),
    )
        .prop_map(|(t, pts)| PointFrame::new(t, pts.into_iter().map(|(x, y)| [x, y]).collect()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn save_load_round_trip(frames in prop::collection::vec(frame_strategy(), 0..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        dataset::save_frames(&path, &frames).unwrap();
        prop_assert_eq!(dataset::load_frames(&path).unwrap(), frames);
    }

    #[test]
    fn raster_never_exceeds_point_count(frame in frame_strategy()) {
        let b = dataset::rasterize(&frame, 256).unwrap();
        prop_assert!(b.occupancy() >= 1);
        prop_assert!(b.occupancy() <= frame.len());
    }
}
