//! Pose-track and image metrics.
//!
//! Landmark metrics are normalized by the rig's bounding-box diagonal and
//! reported as percentages, so numbers are comparable between runs of this
//! tool only.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_pose, HeadPose};
use crate::scene::FaceRig;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseMetrics {
    /// Mean posed-landmark position error, % of the rig diagonal.
    pub d_l: f64,
    /// Mean landmark velocity error, % of the rig diagonal.
    pub d_v: f64,
    /// Mean absolute per-axis rotation error in degrees.
    pub d_rot_deg: f64,
    /// Mean translation error, % of the rig diagonal.
    pub d_pos: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub l1: f64,
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Wraps an angle difference into `[−π, π)`.
fn wrap_angle(d: f64) -> f64 {
    use std::f64::consts::PI;
    (d + PI).rem_euclid(2.0 * PI) - PI
}

fn dist3(a: [f32; 3], b: [f32; 3]) -> f64 {
    (0..3).map(|k| (a[k] as f64 - b[k] as f64).powi(2)).sum::<f64>().sqrt()
}

pub fn pose_metrics(pred: &[HeadPose], gt: &[HeadPose], rig: &FaceRig) -> Result<PoseMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::dim("pose track length", gt.len(), pred.len()));
    }
    if pred.len() < 2 {
        return Err(Error::Domain(format!(
            "pose tracks need at least 2 frames, got {}",
            pred.len()
        )));
    }
    if let Some(i) = pred.iter().chain(gt).position(|p| !p.is_finite()) {
        return Err(Error::Data(format!(
            "pose track entry {} is not finite",
            i % pred.len()
        )));
    }
    let diag = rig.bbox_diagonal();
    if !(diag > 0.0) {
        return Err(Error::Domain("rig bounding box is degenerate".into()));
    }
    let n = pred.len();
    let lp: Vec<Vec<[f32; 3]>> = pred.iter().map(|p| apply_pose(&rig.landmarks, p)).collect();
    let lg: Vec<Vec<[f32; 3]>> = gt.iter().map(|p| apply_pose(&rig.landmarks, p)).collect();
    let m = rig.landmarks.len() as f64;

    let mut pos = 0.0;
    for t in 0..n {
        pos += lp[t].iter().zip(&lg[t]).map(|(a, b)| dist3(*a, *b)).sum::<f64>();
    }
    let mut vel = 0.0;
    for t in 1..n {
        for i in 0..lp[t].len() {
            let mut s = 0.0;
            for k in 0..3 {
                let vp = lp[t][i][k] as f64 - lp[t - 1][i][k] as f64;
                let vg = lg[t][i][k] as f64 - lg[t - 1][i][k] as f64;
                s += (vp - vg).powi(2);
            }
            vel += s.sqrt();
        }
    }
    let mut rot = 0.0;
    let mut trans = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        rot += (0..3)
            .map(|k| wrap_angle(p.r[k] as f64 - g.r[k] as f64).abs())
            .sum::<f64>();
        trans += dist3(p.t, g.t);
    }
    Ok(PoseMetrics {
        d_l: 100.0 * pos / (n as f64 * m) / diag,
        d_v: 100.0 * vel / ((n - 1) as f64 * m) / diag,
        d_rot_deg: (rot / (3 * n) as f64).to_degrees(),
        d_pos: 100.0 * trans / n as f64 / diag,
    })
}

/// 8-bit image, interleaved channels (1 = gray, 3 = RGB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::Data(format!("images must have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::dim("image buffer", width * height * channels, data.len()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if img.color().has_color() {
            let rgb = img.to_rgb8();
            Self::new(rgb.width() as usize, rgb.height() as usize, 3, rgb.into_raw())
        } else {
            let g = img.to_luma8();
            Self::new(g.width() as usize, g.height() as usize, 1, g.into_raw())
        }
    }
}

impl From<&crate::raster::GrayImage> for Image {
    fn from(g: &crate::raster::GrayImage) -> Self {
        Image {
            width: g.width,
            height: g.height,
            channels: 1,
            data: g.pixels.clone(),
        }
    }
}

pub fn image_metrics(a: &Image, b: &Image) -> Result<ImageMetrics> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::dim(
            "image size",
            format!("{}x{}x{}", a.width, a.height, a.channels),
            format!("{}x{}x{}", b.width, b.height, b.channels),
        ));
    }
    if a.data.is_empty() {
        return Err(Error::Domain("empty image".into()));
    }
    let n = a.data.len() as f64;
    let (mut abs, mut sq) = (0u64, 0u64);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let d = (x as i64 - y as i64).unsigned_abs();
        abs += d;
        sq += d * d;
    }
    let mse = sq as f64 / n;
    let psnr = if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB)
    };
    let ssim = (0..a.channels).map(|c| ssim_channel(a, b, c)).sum::<f64>() / a.channels as f64;
    Ok(ImageMetrics {
        l1: abs as f64 / n,
        mse,
        psnr_db: psnr,
        ssim,
    })
}

/// SSIM of a window from its raw sums over `count` pixels.
pub fn ssim_from_sums(count: f64, sx: f64, sy: f64, sxx: f64, syy: f64, sxy: f64) -> f64 {
    let (mx, my) = (sx / count, sy / count);
    let vx = sxx / count - mx * mx;
    let vy = syy / count - my * my;
    let cov = sxy / count - mx * my;
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

/// Mean SSIM over all 8×8 windows at stride 1, from integer integral images.
/// Images smaller than the window use one window covering the whole image.
fn ssim_channel(a: &Image, b: &Image, c: usize) -> f64 {
    let (w, h, ch) = (a.width, a.height, a.channels);
    let (ww, wh) = (SSIM_WINDOW.min(w), SSIM_WINDOW.min(h));
    let stride = w + 1;
    let mut tables = vec![[0u64; 5]; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = [0u64; 5];
        for x in 0..w {
            let p = a.data[(y * w + x) * ch + c] as u64;
            let q = b.data[(y * w + x) * ch + c] as u64;
            for (r, v) in row.iter_mut().zip([p, q, p * p, q * q, p * q]) {
                *r += v;
            }
            let above = tables[y * stride + x + 1];
            let cell = &mut tables[(y + 1) * stride + x + 1];
            for k in 0..5 {
                cell[k] = above[k] + row[k];
            }
        }
    }
    let count = (ww * wh) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for y in 0..=h - wh {
        for x in 0..=w - ww {
            let s = |k: usize| {
                (tables[(y + wh) * stride + x + ww][k] + tables[y * stride + x][k]
                    - tables[y * stride + x + ww][k]
                    - tables[(y + wh) * stride + x][k]) as f64
            };
            total += ssim_from_sums(count, s(0), s(1), s(2), s(3), s(4));
            windows += 1;
        }
    }
    total / windows as f64
}

/// Reads a pose track from JSON lines. Each line is either a pose
/// `{"r": [..], "t": [..]}` or a frame record carrying one under `"pose"`.
pub fn load_pose_track(path: &Path) -> Result<Vec<HeadPose>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut track = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |e: String| Error::Data(format!("{}:{}: {e}", path.display(), ln + 1));
        let mut v: serde_json::Value = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if let Some(p) = v.get_mut("pose") {
            v = p.take();
        }
        let pose: HeadPose = serde_json::from_value(v).map_err(|e| bad(e.to_string()))?;
        if !pose.is_finite() {
            return Err(bad("pose is not finite".into()));
        }
        track.push(pose);
    }
    if track.is_empty() {
        return Err(Error::Data(format!("{}: pose track is empty", path.display())));
    }
    Ok(track)
}
