use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use speech_portrait::audio::write_wav;
use speech_portrait::config::PipelineConfig;
use speech_portrait::manifold::ReprDatabase;
use speech_portrait::pipeline::{
    random_weights, run_offline, run_stream, synthetic_database, FrameRecord, TimingReport,
};
use speech_portrait::weights::save_weights;
use speech_portrait::Error;

fn voice(seconds: f64, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * 16_000.0) as usize;
    (0..n)
        .map(|i| {
            let t = i as f32 / 16_000.0;
            let env = 0.5 + 0.5 * (2.0 * std::f32::consts::PI * 3.0 * t).sin();
            let tone =
                (2.0 * std::f32::consts::PI * 180.0 * t).sin() + 0.4 * (2.0 * std::f32::consts::PI * 720.0 * t).sin();
            0.3 * env * tone + rng.gen_range(-0.02..0.02)
        })
        .collect()
}

fn config() -> PipelineConfig {
    PipelineConfig {
        synthetic_db_rows: 800,
        ..PipelineConfig::default()
    }
}

/// Every output file except the wall-clock report.
fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timings.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn wav(dir: &Path, seconds: f64) -> PathBuf {
    let path = dir.join("in.wav");
    write_wav(&path, &voice(seconds, 4)).unwrap();
    path
}

fn pcm_bytes(path: &Path) -> Vec<u8> {
    speech_portrait::audio::read_wav(path)
        .unwrap()
        .iter()
        .flat_map(|&s| ((s * 32768.0) as i16).to_le_bytes())
        .collect()
}

#[test]
fn offline_run_writes_frames_records_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let input = wav(tmp.path(), 2.0);
    let out = tmp.path().join("out");
    let report = run_offline(&input, config(), &out).unwrap();
    assert_eq!(report.frames, 102);
    assert_eq!(report.first_frame_at_samples, Some(5067));
    assert_eq!(report.algorithmic_latency_ms, 300.0);

    let files = artifacts(&out);
    assert_eq!(files.len(), 103);
    for t in 0..102 {
        let pgm = &files[&format!("frame_{t:06}.pgm")];
        assert!(pgm.starts_with(b"P5\n512 512\n255\n"));
        assert_eq!(pgm.len(), 15 + 512 * 512);
    }
    let text = String::from_utf8(files["frames.jsonl"].clone()).unwrap();
    let records: Vec<FrameRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 102);
    for (t, r) in records.iter().enumerate() {
        assert_eq!(r.frame_index, t as u64);
        assert_eq!(r.mouth.len(), 75);
        assert!(r.pose.is_finite());
    }
    let saved: TimingReport =
        serde_json::from_str(&std::fs::read_to_string(out.join("timings.json")).unwrap()).unwrap();
    assert_eq!(saved.frames, 102);
}

#[test]
fn repeated_runs_and_streaming_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let input = wav(tmp.path(), 1.5);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_offline(&input, config(), &a).unwrap();
    run_offline(&input, config(), &b).unwrap();
    let reference = artifacts(&a);
    assert_eq!(reference, artifacts(&b));

    let bytes = pcm_bytes(&input);
    for (i, read) in [2048usize, 333, 1].into_iter().enumerate() {
        let dir = tmp.path().join(format!("s{i}"));
        run_stream(bytes.as_slice(), config(), &dir, read).unwrap();
        assert!(reference == artifacts(&dir), "read size {read}");
    }
}

#[test]
fn different_seed_changes_poses_only_through_sampling() {
    let tmp = tempfile::tempdir().unwrap();
    let input = wav(tmp.path(), 1.0);
    run_offline(&input, config(), &tmp.path().join("a")).unwrap();
    run_offline(&input, PipelineConfig { seed: 9, ..config() }, &tmp.path().join("b")).unwrap();
    let read = |d: &str| -> Vec<FrameRecord> {
        std::fs::read_to_string(tmp.path().join(d).join("frames.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    };
    let (a, b) = (read("a"), read("b"));
    assert_eq!(a.len(), b.len());
    assert!(a.iter().zip(&b).all(|(x, y)| x.mouth == y.mouth));
    assert!(a.iter().zip(&b).any(|(x, y)| x.pose != y.pose));
}

#[test]
fn explicit_assets_reproduce_the_implicit_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let input = wav(tmp.path(), 1.0);
    let base = config();
    run_offline(&input, base.clone(), &tmp.path().join("implicit")).unwrap();

    let weights = tmp.path().join("w.lspw");
    save_weights(&random_weights(&base).unwrap(), &weights).unwrap();
    let db_path = tmp.path().join("db.f32");
    let db: ReprDatabase = synthetic_database(base.synthetic_db_rows, 512, base.init_seed).unwrap();
    db.save_raw(&db_path).unwrap();
    let rig = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets/default_rig.json");
    let explicit = PipelineConfig {
        weights: Some(weights),
        manifold_db: Some(db_path),
        rig: Some(rig),
        ..base
    };
    run_offline(&input, explicit, &tmp.path().join("explicit")).unwrap();
    assert!(artifacts(&tmp.path().join("implicit")) == artifacts(&tmp.path().join("explicit")));
}

#[test]
fn bad_inputs_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = run_offline(&tmp.path().join("nope.wav"), config(), &tmp.path().join("o"));
    assert!(matches!(missing, Err(Error::Io { .. })), "{missing:?}");

    let text = tmp.path().join("text.wav");
    std::fs::write(&text, "not a wav").unwrap();
    assert!(matches!(
        run_offline(&text, config(), &tmp.path().join("o")),
        Err(Error::Data(_))
    ));

    let bad_weights = PipelineConfig {
        weights: Some(text.clone()),
        ..config()
    };
    let input = wav(tmp.path(), 0.2);
    assert!(run_offline(&input, bad_weights, &tmp.path().join("o")).is_err());
}
