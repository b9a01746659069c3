//! JSON run configuration.
//!
//! Unknown fields are rejected. Relative paths are resolved against the
//! directory holding the config file. Integer fields are read as signed so
//! that a negative value reports the offending field instead of a type error.

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::audio::AudioConfig;
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::pose::PoseNetConfig;

pub const DEFAULT_K: i64 = 10;
pub const DEFAULT_DELAY_FRAMES: i64 = 18;
pub const FPS: i64 = 60;
pub const DEFAULT_SYNTHETIC_DB_ROWS: i64 = 12_000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub focal_px: Option<f64>,
    pub cx_px: Option<f64>,
    pub cy_px: Option<f64>,
}

/// On-disk form of the run configuration. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// Log-mel front end.
    pub audio: Option<AudioConfig>,
    /// Neighbours used by the manifold projection (default 10).
    pub k_neighbors: Option<i64>,
    /// Mouth lookahead in video frames (default 18).
    pub delay_frames: Option<i64>,
    /// Output frame rate; only 60 is supported.
    pub fps: Option<i64>,
    /// Seed of the pose sampler.
    pub seed: Option<u64>,
    /// Seed for randomly initialized models when no weights are given.
    pub init_seed: Option<u64>,
    /// Weight file with `apc.*`, `mouth.*`, `pose.*` and optionally
    /// `manifold.db` tensors. Missing models are randomly initialized.
    pub weights: Option<PathBuf>,
    /// Target-person representation database (weight file or raw f32 with a
    /// JSON sidecar). Overrides `manifold.db` in `weights`.
    pub manifold_db: Option<PathBuf>,
    /// Rows of the seeded synthetic database used when no database is given.
    pub synthetic_db_rows: Option<i64>,
    /// Face rig JSON; the built-in rig when absent.
    pub rig: Option<PathBuf>,
    pub camera: Option<CameraFile>,
    /// Fraction of head translation applied to the billboard (default 0.5).
    pub billboard_alpha: Option<f64>,
    /// Pose track (JSON lines) replacing sampled poses.
    pub pose_override: Option<PathBuf>,
    /// Pose network widths for randomly initialized models.
    pub pose_net: Option<PoseNetConfig>,
}

/// Validated configuration with defaults applied and paths resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub audio: AudioConfig,
    pub k_neighbors: usize,
    pub delay_frames: usize,
    pub fps: u32,
    pub seed: u64,
    pub init_seed: u64,
    pub weights: Option<PathBuf>,
    pub manifold_db: Option<PathBuf>,
    pub synthetic_db_rows: usize,
    pub rig: Option<PathBuf>,
    pub camera: CameraIntrinsics,
    pub billboard_alpha: f32,
    pub pose_override: Option<PathBuf>,
    pub pose_net: PoseNetConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        ConfigFile::default()
            .resolve(Path::new(""))
            .expect("defaults are valid")
    }
}

fn non_negative(field: &str, v: i64) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::config(field, format!("must be ≥ 0, got {v}")))
}

impl ConfigFile {
    pub fn resolve(self, base: &Path) -> Result<PipelineConfig> {
        let audio = self.audio.unwrap_or_default();
        audio.validate()?;

        let k = self.k_neighbors.unwrap_or(DEFAULT_K);
        if k < 1 {
            return Err(Error::config("k_neighbors", format!("must be ≥ 1, got {k}")));
        }
        let delay = non_negative("delay_frames", self.delay_frames.unwrap_or(DEFAULT_DELAY_FRAMES))?;
        if delay > 6000 {
            return Err(Error::config("delay_frames", format!("must be ≤ 6000, got {delay}")));
        }
        let fps = self.fps.unwrap_or(FPS);
        if fps != FPS {
            return Err(Error::config("fps", format!("only {FPS} is supported, got {fps}")));
        }
        let rows = non_negative(
            "synthetic_db_rows",
            self.synthetic_db_rows.unwrap_or(DEFAULT_SYNTHETIC_DB_ROWS),
        )?;
        if rows < k as usize {
            return Err(Error::config(
                "synthetic_db_rows",
                format!("must be ≥ k_neighbors ({k}), got {rows}"),
            ));
        }
        let cam = self.camera.unwrap_or_default();
        let d = CameraIntrinsics::default();
        let focal = cam.focal_px.unwrap_or(d.f as f64);
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(Error::config("camera.focal_px", format!("must be > 0, got {focal}")));
        }
        let cx = cam.cx_px.unwrap_or(d.cx as f64);
        let cy = cam.cy_px.unwrap_or(d.cy as f64);
        for (name, v) in [("camera.cx_px", cx), ("camera.cy_px", cy)] {
            if !v.is_finite() {
                return Err(Error::config(name, "must be finite"));
            }
        }
        let alpha = self.billboard_alpha.unwrap_or(crate::scene::DEFAULT_ALPHA as f64);
        if !alpha.is_finite() {
            return Err(Error::config("billboard_alpha", "must be finite"));
        }
        let pose_net = self.pose_net.unwrap_or_default();
        pose_net.validate()?;

        let at = |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { base.join(p) });
        Ok(PipelineConfig {
            audio,
            k_neighbors: k as usize,
            delay_frames: delay,
            fps: fps as u32,
            seed: self.seed.unwrap_or(0),
            init_seed: self.init_seed.unwrap_or(0),
            weights: at(self.weights),
            manifold_db: at(self.manifold_db),
            synthetic_db_rows: rows,
            rig: at(self.rig),
            camera: CameraIntrinsics {
                f: focal as f32,
                cx: cx as f32,
                cy: cy as f32,
            },
            billboard_alpha: alpha as f32,
            pose_override: at(self.pose_override),
            pose_net,
        })
    }
}

impl PipelineConfig {
    /// Algorithmic latency of the mouth lookahead in milliseconds.
    pub fn latency_ms(&self) -> f64 {
        self.delay_frames as f64 * 1000.0 / self.fps as f64
    }
}

/// Parses and validates config bytes; relative paths resolve against `base`.
pub fn parse_config(bytes: &[u8], base: &Path) -> Result<PipelineConfig> {
    let file: ConfigFile = serde_json::from_slice(bytes).map_err(|e| Error::ConfigParse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    file.resolve(base)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_config(&bytes, base)
}

/// JSON schema of the config file, pretty-printed.
pub fn config_schema() -> String {
    let schema = schemars::schema_for!(ConfigFile);
    serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n"
}
