//! Streaming engine: audio in, 60 fps frames out.
//!
//! Clock: `frame_len − hop_len` zeros are prepended so mel frame `m` covers
//! input samples up to `hop·(m + 1)`. Video frame `t` covers input samples up
//! to `sample_rate·(t + 1)/fps` and is driven by the representation at mel
//! index `2t + 1`. It is processed as soon as its samples are in; the mouth
//! predictor then releases frame `t − d`, which is composed and queued. A
//! signal of `D` seconds therefore yields `floor(60·D) − d` frames, and the
//! first frame appears exactly `d` frames of audio after its own samples.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::apc::ApcModel;
use crate::audio::{read_wav, MelStream};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::load_pose_track;
use crate::geometry::{CameraIntrinsics, HeadPose};
use crate::manifold::{self, ReprDatabase};
use crate::mouth::{MouthDisplacement, MouthModel};
use crate::pose::{sample_pose, PoseModel};
use crate::raster::GrayImage;
use crate::scene::{compose_frame, static_components, Billboard, FaceRig};
use crate::weights::{load_weights, WeightStore};

/// Samples handed to the engine per push in offline mode.
pub const OFFLINE_CHUNK: usize = 4096;

const STREAM_APC: u64 = 1;
const STREAM_MOUTH: u64 = 2;
const STREAM_POSE: u64 = 3;
const STREAM_DB: u64 = 4;

/// Wall-clock microseconds spent per stage on the step that emitted a frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub mel_us: f64,
    pub apc_us: f64,
    pub manifold_us: f64,
    pub pose_us: f64,
    pub mouth_us: f64,
    pub compose_us: f64,
}

impl StageTimings {
    pub const NAMES: [&'static str; 6] = ["mel", "apc", "manifold", "pose", "mouth", "compose"];

    pub fn values(&self) -> [f64; 6] {
        [
            self.mel_us,
            self.apc_us,
            self.manifold_us,
            self.pose_us,
            self.mouth_us,
            self.compose_us,
        ]
    }

    pub fn total_us(&self) -> f64 {
        self.values().iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub frame_index: u64,
    pub pose: HeadPose,
    pub mouth: MouthDisplacement,
    pub points2d: Vec<[f32; 2]>,
    pub feature_map: GrayImage,
    pub timings: StageTimings,
}

/// One line of `frames.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: u64,
    pub pose: HeadPose,
    pub mouth: Vec<f32>,
    pub points2d: Vec<[f32; 2]>,
}

impl From<&FrameOutput> for FrameRecord {
    fn from(f: &FrameOutput) -> Self {
        FrameRecord {
            frame_index: f.frame_index,
            pose: f.pose,
            mouth: f.mouth.flat(),
            points2d: f.points2d.clone(),
        }
    }
}

/// Every model and asset the engine runs with.
#[derive(Debug, Clone)]
pub struct Assets {
    pub apc: ApcModel,
    pub mouth: MouthModel,
    pub pose: PoseModel,
    pub db: ReprDatabase,
    pub rig: FaceRig,
    pub pose_override: Option<Vec<HeadPose>>,
}

fn init_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeded stand-in for a target-person database: rows uniform in
/// `[−0.5, 0.5)`.
pub fn synthetic_database(rows: usize, dim: usize, seed: u64) -> Result<ReprDatabase> {
    let mut rng = init_rng(seed, STREAM_DB);
    let data = (0..rows * dim).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
    ReprDatabase::from_matrix(rows, dim, data)
}

/// Randomly initialized encoder, mouth and pose models as one store.
pub fn random_weights(config: &PipelineConfig) -> Result<WeightStore> {
    let mut store = ApcModel::random(
        config.audio.n_mels,
        crate::apc::REPR_DIM,
        crate::apc::LAYERS,
        &mut init_rng(config.init_seed, STREAM_APC),
    )
    .to_store();
    let mouth = MouthModel::random(
        crate::apc::REPR_DIM,
        config.delay_frames,
        &mut init_rng(config.init_seed, STREAM_MOUTH),
    );
    store.extend(mouth.to_store())?;
    let pose = PoseModel::random(config.pose_net.clone(), &mut init_rng(config.init_seed, STREAM_POSE))?;
    store.extend(pose.to_store())?;
    Ok(store)
}

impl Assets {
    /// Loads whatever the config names and fills the gaps with seeded
    /// random models, the built-in rig and a synthetic database.
    pub fn load(config: &PipelineConfig) -> Result<Self> {
        let store = match &config.weights {
            Some(p) => load_weights(p)?,
            None => WeightStore::new(),
        };
        let apc = if store.contains_prefix("apc.") {
            ApcModel::from_store(&store)?
        } else {
            ApcModel::random(
                config.audio.n_mels,
                crate::apc::REPR_DIM,
                crate::apc::LAYERS,
                &mut init_rng(config.init_seed, STREAM_APC),
            )
        };
        let repr_dim = apc.output_dim();
        let mouth = if store.contains_prefix("mouth.") {
            MouthModel::from_store(&store, config.delay_frames)?
        } else {
            MouthModel::random(
                repr_dim,
                config.delay_frames,
                &mut init_rng(config.init_seed, STREAM_MOUTH),
            )
        };
        let pose = if store.contains_prefix("pose.") {
            PoseModel::from_store(&store)?
        } else {
            let mut net = config.pose_net.clone();
            net.cond_dim = repr_dim;
            PoseModel::random(net, &mut init_rng(config.init_seed, STREAM_POSE))?
        };
        let db = match (&config.manifold_db, store.get(manifold::STORE_NAME)) {
            (Some(p), _) => manifold::load_database(p)?,
            (None, Some(_)) => ReprDatabase::from_store(&store)?,
            (None, None) => synthetic_database(config.synthetic_db_rows, repr_dim, config.init_seed)?,
        };
        let rig = match &config.rig {
            Some(p) => FaceRig::load(p)?,
            None => FaceRig::synthetic(),
        };
        let pose_override = config.pose_override.as_deref().map(load_pose_track).transpose()?;
        Ok(Self {
            apc,
            mouth,
            pose,
            db,
            rig,
            pose_override,
        })
    }
}

pub struct Engine {
    config: PipelineConfig,
    mel: MelStream,
    apc: ApcModel,
    db: ReprDatabase,
    mouth: MouthModel,
    pose: PoseModel,
    rig: FaceRig,
    billboard: Billboard,
    camera: CameraIntrinsics,
    pose_override: Option<Vec<HeadPose>>,
    rng: ChaCha8Rng,
    samples: u64,
    mel_seen: u64,
    reprs: VecDeque<Vec<f32>>,
    next_video: u64,
    poses: VecDeque<HeadPose>,
    ready: VecDeque<FrameOutput>,
    pending: StageTimings,
    first_output_at: Option<u64>,
}

impl Engine {
    pub fn new(config: PipelineConfig, assets: Assets) -> Result<Self> {
        let audio = &config.audio;
        if 2 * audio.hop_len as u64 * config.fps as u64 > audio.sample_rate as u64 {
            return Err(Error::config(
                "audio.hop_len",
                "mel rate must be at least twice the frame rate",
            ));
        }
        let d = assets.apc.output_dim();
        if assets.apc.input_dim() != audio.n_mels {
            return Err(Error::dim(
                "encoder input vs n_mels",
                audio.n_mels,
                assets.apc.input_dim(),
            ));
        }
        if assets.db.dim() != d {
            return Err(Error::dim("database width", d, assets.db.dim()));
        }
        if assets.mouth.input_dim() != d {
            return Err(Error::dim("mouth input width", d, assets.mouth.input_dim()));
        }
        if assets.pose.config().cond_dim != d {
            return Err(Error::dim("pose condition width", d, assets.pose.config().cond_dim));
        }
        if assets.mouth.delay() != config.delay_frames {
            return Err(Error::config("delay_frames", "does not match the mouth model"));
        }
        if config.k_neighbors > assets.db.len() {
            return Err(Error::config(
                "k_neighbors",
                format!("exceeds the database size ({})", assets.db.len()),
            ));
        }
        let mut mel = MelStream::new(audio.clone())?;
        mel.push(&vec![0.0; audio.frame_len - audio.hop_len])?;
        let mut billboard = assets.rig.billboard.clone();
        billboard.alpha = config.billboard_alpha;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            camera: config.camera,
            mel,
            apc: assets.apc,
            db: assets.db,
            mouth: assets.mouth,
            pose: assets.pose,
            rig: assets.rig,
            billboard,
            pose_override: assets.pose_override,
            samples: 0,
            mel_seen: 0,
            reprs: VecDeque::new(),
            next_video: 0,
            poses: VecDeque::new(),
            ready: VecDeque::new(),
            pending: StageTimings::default(),
            first_output_at: None,
            config,
        })
    }

    pub fn from_config(config: PipelineConfig) -> Result<Self> {
        let assets = Assets::load(&config)?;
        Self::new(config, assets)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn samples_pushed(&self) -> u64 {
        self.samples
    }

    /// Input samples that must have arrived before video frame `t` is
    /// processed: `ceil(sample_rate·(t + 1)/fps)`.
    pub fn frame_due(&self, t: u64) -> u64 {
        let (sr, fps) = (self.config.audio.sample_rate as u64, self.config.fps as u64);
        (sr * (t + 1)).div_ceil(fps)
    }

    /// Samples needed before frame `t` can be emitted (its own audio plus
    /// the lookahead).
    pub fn emission_due(&self, t: u64) -> u64 {
        self.frame_due(t + self.config.delay_frames as u64)
    }

    /// Input samples pushed when the first frame became available.
    pub fn first_output_at(&self) -> Option<u64> {
        self.first_output_at
    }

    /// Feeds samples; every frame that becomes complete is queued for
    /// [`Engine::poll_frame`]. A non-finite sample rejects the whole chunk.
    pub fn push_audio(&mut self, chunk: &[f32]) -> Result<()> {
        if let Some(i) = chunk.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input {
                offset: self.samples + i as u64,
                reason: format!("non-finite sample {}", chunk[i]),
            });
        }
        let mut rest = chunk;
        while !rest.is_empty() {
            let due = self.frame_due(self.next_video);
            let take = (due - self.samples).min(rest.len() as u64) as usize;
            let (now, later) = rest.split_at(take);
            self.feed_mel(now)?;
            rest = later;
            if self.samples == due {
                self.process_frame()?;
            }
        }
        Ok(())
    }

    pub fn poll_frame(&mut self) -> Option<FrameOutput> {
        self.ready.pop_front()
    }

    fn feed_mel(&mut self, samples: &[f32]) -> Result<()> {
        let t0 = Instant::now();
        let frames = self.mel.push(samples)?;
        self.samples += samples.len() as u64;
        let t1 = Instant::now();
        for f in frames {
            let h = self.apc.step(&f.values)?;
            if self.mel_seen % 2 == 1 {
                self.reprs.push_back(h);
            }
            self.mel_seen += 1;
        }
        self.pending.mel_us += (t1 - t0).as_secs_f64() * 1e6;
        self.pending.apc_us += t1.elapsed().as_secs_f64() * 1e6;
        Ok(())
    }

    fn process_frame(&mut self) -> Result<()> {
        let t = self.next_video;
        let repr = self
            .reprs
            .pop_front()
            .ok_or_else(|| Error::Domain(format!("representation for frame {t} is not available")))?;
        let mut timings = std::mem::take(&mut self.pending);

        let clock = Instant::now();
        let projected = self.db.lle_project(&repr, self.config.k_neighbors)?.reconstructed;
        timings.manifold_us = clock.elapsed().as_secs_f64() * 1e6;

        let clock = Instant::now();
        let dist = self.pose.step(&projected)?;
        let head = match &self.pose_override {
            Some(track) => {
                let p = track[(t as usize).min(track.len() - 1)];
                self.pose.feed_pose(p);
                p
            }
            None => {
                let s = sample_pose(&dist, &self.pose.previous_pose(), &mut self.rng);
                self.pose.feed(s.feature);
                s.pose
            }
        };
        self.poses.push_back(head);
        timings.pose_us = clock.elapsed().as_secs_f64() * 1e6;

        let clock = Instant::now();
        let mouth = self.mouth.step(&projected)?;
        timings.mouth_us = clock.elapsed().as_secs_f64() * 1e6;

        if let Some(mouth) = mouth {
            let clock = Instant::now();
            let pose = self.poses.pop_front().expect("pose queued for every processed frame");
            let statics = static_components(&self.rig, mouth.frame_index);
            let map = compose_frame(&self.rig, &mouth, &statics, &pose, &self.billboard, &self.camera)?;
            timings.compose_us = clock.elapsed().as_secs_f64() * 1e6;
            self.first_output_at.get_or_insert(self.samples);
            self.ready.push_back(FrameOutput {
                frame_index: mouth.frame_index,
                pose,
                mouth,
                points2d: map.points2d,
                feature_map: map.image,
                timings,
            });
        }
        self.next_video += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

fn summarize(mut v: Vec<f64>) -> StageSummary {
    if v.is_empty() {
        return StageSummary::default();
    }
    v.sort_by(f64::total_cmp);
    let pct = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
    StageSummary {
        mean_us: v.iter().sum::<f64>() / v.len() as f64,
        p50_us: pct(0.5),
        p99_us: pct(0.99),
        max_us: *v.last().unwrap(),
    }
}

/// Contents of `timings.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub frames: u64,
    pub audio_seconds: f64,
    pub wall_seconds: f64,
    pub frames_per_second: f64,
    pub algorithmic_latency_ms: f64,
    /// Input samples pushed when frame 0 became available.
    pub first_frame_at_samples: Option<u64>,
    pub stages: std::collections::BTreeMap<String, StageSummary>,
    pub stage_sum: StageSummary,
}

#[derive(Default)]
struct TimingLog {
    per_frame: Vec<StageTimings>,
}

impl TimingLog {
    fn report(&self, config: &PipelineConfig, samples: u64, wall: f64, first: Option<u64>) -> TimingReport {
        let mut stages = std::collections::BTreeMap::new();
        for (k, name) in StageTimings::NAMES.iter().enumerate() {
            stages.insert(
                name.to_string(),
                summarize(self.per_frame.iter().map(|t| t.values()[k]).collect()),
            );
        }
        let frames = self.per_frame.len() as u64;
        TimingReport {
            frames,
            audio_seconds: samples as f64 / config.audio.sample_rate as f64,
            wall_seconds: wall,
            frames_per_second: if wall > 0.0 { frames as f64 / wall } else { 0.0 },
            algorithmic_latency_ms: config.latency_ms(),
            first_frame_at_samples: first,
            stages,
            stage_sum: summarize(self.per_frame.iter().map(StageTimings::total_us).collect()),
        }
    }
}

/// Writes `frame_%06d.pgm` and appends to `frames.jsonl`.
pub struct FrameWriter {
    dir: PathBuf,
    jsonl: BufWriter<File>,
}

impl FrameWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("frames.jsonl");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            jsonl: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, frame: &FrameOutput) -> Result<()> {
        let pgm = self.dir.join(format!("frame_{:06}.pgm", frame.frame_index));
        frame.feature_map.write_pgm(&pgm)?;
        let line = serde_json::to_string(&FrameRecord::from(frame)).expect("record serializes");
        let path = self.dir.join("frames.jsonl");
        writeln!(self.jsonl, "{line}").map_err(|e| Error::io(&path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        let path = self.dir.join("frames.jsonl");
        self.jsonl.flush().map_err(|e| Error::io(&path, e))
    }
}

/// Drives an engine over a sample source, handing each frame to `sink`.
pub struct Runner {
    engine: Engine,
    log: TimingLog,
    started: Instant,
}

impl Runner {
    pub fn new(engine: Engine) -> Self {
        Self {
            engine,
            log: TimingLog::default(),
            started: Instant::now(),
        }
    }

    pub fn push(&mut self, samples: &[f32], sink: &mut impl FnMut(FrameOutput) -> Result<()>) -> Result<()> {
        self.engine.push_audio(samples)?;
        while let Some(f) = self.engine.poll_frame() {
            self.log.per_frame.push(f.timings);
            sink(f)?;
        }
        Ok(())
    }

    pub fn finish(self) -> TimingReport {
        let wall = self.started.elapsed().as_secs_f64();
        self.log.report(
            self.engine.config(),
            self.engine.samples_pushed(),
            wall,
            self.engine.first_output_at(),
        )
    }
}

/// Runs the engine over in-memory samples in fixed-size chunks.
pub fn run_samples(
    samples: &[f32],
    config: PipelineConfig,
    chunk: usize,
    mut sink: impl FnMut(FrameOutput) -> Result<()>,
) -> Result<TimingReport> {
    let mut runner = Runner::new(Engine::from_config(config)?);
    for c in samples.chunks(chunk.max(1)) {
        runner.push(c, &mut sink)?;
    }
    Ok(runner.finish())
}

fn write_report(dir: &Path, report: &TimingReport) -> Result<()> {
    let path = dir.join("timings.json");
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Processes a WAV file and writes frames, `frames.jsonl` and
/// `timings.json` into `out_dir`.
pub fn run_offline(wav: &Path, config: PipelineConfig, out_dir: &Path) -> Result<TimingReport> {
    let samples = read_wav(wav)?;
    let mut writer = FrameWriter::create(out_dir)?;
    let report = run_samples(&samples, config, OFFLINE_CHUNK, |f| writer.write(&f))?;
    writer.finish()?;
    write_report(out_dir, &report)?;
    Ok(report)
}

/// Reads raw 16-bit little-endian mono PCM from `reader` until EOF and writes
/// the same artifacts as [`run_offline`]. A trailing odd byte is ignored.
pub fn run_stream(
    mut reader: impl Read,
    config: PipelineConfig,
    out_dir: &Path,
    read_bytes: usize,
) -> Result<TimingReport> {
    let mut writer = FrameWriter::create(out_dir)?;
    let mut runner = Runner::new(Engine::from_config(config)?);
    let mut buf = vec![0u8; read_bytes.max(2)];
    let mut carry: Option<u8> = None;
    let mut samples = Vec::with_capacity(buf.len() / 2 + 1);
    let mut sink = |f: FrameOutput| writer.write(&f);
    loop {
        let n = match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(Error::io("<stdin>", e)),
        };
        samples.clear();
        let mut bytes = &buf[..n];
        if let Some(lo) = carry.take() {
            samples.push(i16::from_le_bytes([lo, bytes[0]]) as f32 / 32768.0);
            bytes = &bytes[1..];
        }
        let pairs = bytes.chunks_exact(2);
        carry = pairs.remainder().first().copied();
        samples.extend(pairs.map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0));
        runner.push(&samples, &mut sink)?;
    }
    let report = runner.finish();
    writer.finish()?;
    write_report(out_dir, &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::PoseNetConfig;

    /// Narrow models so the clock tests run quickly.
    fn small_engine(delay: usize) -> Engine {
        let mut config = PipelineConfig {
            delay_frames: delay,
            synthetic_db_rows: 64,
            ..PipelineConfig::default()
        };
        config.pose_net = PoseNetConfig {
            residual_channels: 4,
            skip_channels: 4,
            cond_dim: 16,
            ..PoseNetConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let assets = Assets {
            apc: ApcModel::random(80, 16, 1, &mut rng),
            mouth: MouthModel::random(16, delay, &mut rng),
            pose: PoseModel::random(config.pose_net.clone(), &mut rng).unwrap(),
            db: synthetic_database(64, 16, 0).unwrap(),
            rig: FaceRig::synthetic(),
            pose_override: None,
        };
        Engine::new(config, assets).unwrap()
    }

    fn tone(n: usize) -> Vec<f32> {
        (0..n).map(|i| 0.3 * (i as f32 * 0.05).sin()).collect()
    }

    #[test]
    fn two_seconds_of_silence_give_102_frames() {
        let mut e = small_engine(18);
        e.push_audio(&vec![0.0; 32_000]).unwrap();
        let frames: Vec<_> = std::iter::from_fn(|| e.poll_frame()).collect();
        assert_eq!(frames.len(), 102);
        assert!(frames.iter().enumerate().all(|(i, f)| f.frame_index == i as u64));
    }

    #[test]
    fn first_frame_waits_for_lookahead() {
        let mut e = small_engine(18);
        assert!(e.poll_frame().is_none());
        assert_eq!(e.frame_due(0), 267);
        assert_eq!(e.emission_due(0), 5067);
        e.push_audio(&tone(5066)).unwrap();
        assert!(e.poll_frame().is_none());
        e.push_audio(&tone(1)).unwrap();
        assert_eq!(e.poll_frame().unwrap().frame_index, 0);
        assert!(e.poll_frame().is_none());
        assert_eq!(e.first_output_at(), Some(5067));
        assert_eq!(e.emission_due(0) - e.frame_due(0), 4800);
    }

    #[test]
    fn zero_delay_emits_with_own_audio() {
        let mut e = small_engine(0);
        e.push_audio(&tone(266)).unwrap();
        assert!(e.poll_frame().is_none());
        e.push_audio(&tone(1)).unwrap();
        assert!(e.poll_frame().is_some());
    }

    #[test]
    fn chunking_does_not_change_frames() {
        let audio = tone(16_000);
        let mut whole = small_engine(3);
        whole.push_audio(&audio).unwrap();
        let a: Vec<_> = std::iter::from_fn(|| whole.poll_frame())
            .map(|f| FrameRecord::from(&f))
            .collect();

        let mut pieces = small_engine(3);
        let mut b = Vec::new();
        let mut start = 0;
        for (i, len) in [1usize, 133, 7, 1000, 266, 267, 4096].iter().cycle().enumerate() {
            if start >= audio.len() {
                break;
            }
            let end = (start + len + i % 3).min(audio.len());
            pieces.push_audio(&audio[start..end]).unwrap();
            b.extend(std::iter::from_fn(|| pieces.poll_frame()).map(|f| FrameRecord::from(&f)));
            start = end;
        }
        assert_eq!(a.len(), 60 - 3);
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_sample_reports_offset() {
        let mut e = small_engine(2);
        e.push_audio(&[0.0; 10]).unwrap();
        match e.push_audio(&[0.0, f32::INFINITY]) {
            Err(Error::Input { offset, .. }) => assert_eq!(offset, 11),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn override_track_is_followed_and_held() {
        let mut e = small_engine(0);
        let track = vec![
            HeadPose::new([0.01, 0.0, 0.0], [0.0; 3]),
            HeadPose::new([0.02, 0.0, 0.0], [0.0, 0.0, 0.01]),
        ];
        e.pose_override = Some(track.clone());
        e.push_audio(&tone(8000)).unwrap();
        let poses: Vec<_> = std::iter::from_fn(|| e.poll_frame()).map(|f| f.pose).collect();
        assert_eq!(poses.len(), 30);
        assert_eq!(poses[0], track[0]);
        assert!(poses[1..].iter().all(|p| *p == track[1]));
    }

    #[test]
    fn percentiles() {
        let s = summarize((1..=100).map(|v| v as f64).collect());
        assert_eq!((s.p50_us, s.p99_us, s.max_us), (50.0, 99.0, 100.0));
        assert_eq!(s.mean_us, 50.5);
    }
}
