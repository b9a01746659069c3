//! Face rig, upper-body billboard, static facial components and frame
//! composition into the conditional feature map. Also hosts the
//! candidate-frame selection used to pick reference images.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_pose, project_into, CameraIntrinsics, HeadPose};
use crate::mouth::{MouthDisplacement, MOUTH_POINTS};
use crate::raster::{rasterize_into, FeatureMap, GrayImage, MAP_SIZE};

pub const DEFAULT_ALPHA: f32 = 0.5;
/// Frames per static-component cross-fade (4 s at 60 fps).
pub const CROSSFADE_FRAMES: u64 = 240;
pub const CANDIDATE_RANK: usize = 100;
pub const MIN_CANDIDATE_RECORDS: usize = 2 * CANDIDATE_RANK;

/// Flat upper-body proxy in camera space, translated by a fraction of the
/// head translation and never rotated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Billboard {
    pub shoulder_points: Vec<[f32; 3]>,
    #[serde(default = "default_alpha")]
    pub alpha: f32,
    pub topology: Vec<Vec<usize>>,
}

fn default_alpha() -> f32 {
    DEFAULT_ALPHA
}

impl Billboard {
    /// Mean depth of the base points.
    pub fn depth0(&self) -> f32 {
        self.shoulder_points.iter().map(|p| p[2]).sum::<f32>() / self.shoulder_points.len().max(1) as f32
    }

    pub fn validate(&self) -> Result<()> {
        if self.shoulder_points.len() < 2 {
            return Err(Error::Data(format!(
                "billboard needs at least 2 points, got {}",
                self.shoulder_points.len()
            )));
        }
        if let Some(i) = self
            .shoulder_points
            .iter()
            .position(|p| !(p[2] > 0.0) || p.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Data(format!(
                "billboard point {i} must be finite with positive depth"
            )));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Data("billboard alpha must be finite".into()));
        }
        check_topology("billboard", &self.topology, self.shoulder_points.len())
    }

    /// Each base point shifted by `alpha·t`.
    pub fn positions(&self, pose: &HeadPose) -> Vec<[f32; 3]> {
        let a = self.alpha;
        self.shoulder_points
            .iter()
            .map(|p| [p[0] + a * pose.t[0], p[1] + a * pose.t[1], p[2] + a * pose.t[2]])
            .collect()
    }
}

/// Landmark rig: object-space mean shape (head-centred, y down, face toward
/// −z), the mouth subset, polyline topology, keyframes of the non-mouth
/// components, the neutral head placement in camera space and the billboard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceRig {
    pub landmarks: Vec<[f32; 3]>,
    pub mouth_indices: Vec<usize>,
    pub topology: Vec<Vec<usize>>,
    /// Camera-space position of the object origin at rest pose.
    pub neutral_offset: [f32; 3],
    #[serde(default)]
    pub static_keyframes: Vec<Vec<[f32; 3]>>,
    pub billboard: Billboard,
}

fn check_topology(what: &str, topology: &[Vec<usize>], n: usize) -> Result<()> {
    for (li, line) in topology.iter().enumerate() {
        if line.is_empty() {
            return Err(Error::Data(format!("{what} polyline {li} is empty")));
        }
        if let Some(&bad) = line.iter().find(|&&i| i >= n) {
            return Err(Error::Data(format!(
                "{what} polyline {li} references point {bad}, only {n} exist"
            )));
        }
    }
    Ok(())
}

impl FaceRig {
    pub fn validate(&self) -> Result<()> {
        let n = self.landmarks.len();
        if n == 0 {
            return Err(Error::Data("rig has no landmarks".into()));
        }
        if self
            .landmarks
            .iter()
            .flatten()
            .chain(&self.neutral_offset)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Data("rig coordinates must be finite".into()));
        }
        if self.mouth_indices.len() != MOUTH_POINTS {
            return Err(Error::Data(format!(
                "rig needs {MOUTH_POINTS} mouth indices, got {}",
                self.mouth_indices.len()
            )));
        }
        let mut seen = vec![false; n];
        for &i in &self.mouth_indices {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Data(format!("mouth index {i} is out of range or repeated")));
            }
        }
        check_topology("rig", &self.topology, n)?;
        for (k, frame) in self.static_keyframes.iter().enumerate() {
            if frame.len() != n {
                return Err(Error::Data(format!(
                    "static keyframe {k} has {} points, rig has {n}",
                    frame.len()
                )));
            }
            if frame.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("static keyframe {k} is not finite")));
            }
        }
        self.billboard.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rig: FaceRig = serde_json::from_str(text).map_err(|e| Error::Data(format!("rig: {e}")))?;
        rig.validate()?;
        Ok(rig)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rig serializes")
    }

    /// Length of the diagonal of the mean shape's axis-aligned bounding box.
    pub fn bbox_diagonal(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.landmarks {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k] as f64);
                hi[k] = hi[k].max(p[k] as f64);
            }
        }
        (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt()
    }

    /// Synthetic 73-landmark face: jaw 15, brows 6 + 6, eyes 8 + 8, nose 5,
    /// outer lip 15, inner lip 10. Units are metres.
    pub fn synthetic() -> Self {
        use std::f32::consts::PI;
        let mut pts: Vec<[f32; 3]> = Vec::with_capacity(73);
        let mut topology = Vec::new();
        fn run(pts: &mut Vec<[f32; 3]>, topology: &mut Vec<Vec<usize>>, new: Vec<[f32; 3]>, closed: bool) {
            let start = pts.len();
            let mut line: Vec<usize> = (start..start + new.len()).collect();
            if closed {
                line.push(start);
            }
            pts.extend(new);
            topology.push(line);
        }

        let jaw = (0..15)
            .map(|i| {
                let a = PI * i as f32 / 14.0;
                [-0.07 * a.cos(), -0.01 + 0.095 * a.sin(), -0.03 - 0.05 * a.sin()]
            })
            .collect();
        run(&mut pts, &mut topology, jaw, false);
        for side in [-1.0f32, 1.0] {
            let brow = (0..6)
                .map(|k| {
                    let u = k as f32 / 5.0;
                    [side * (0.06 - 0.045 * u), -0.045 - 0.008 * (PI * u).sin(), -0.085]
                })
                .collect();
            run(&mut pts, &mut topology, brow, false);
        }
        for side in [-1.0f32, 1.0] {
            let eye = (0..8)
                .map(|k| {
                    let a = 2.0 * PI * k as f32 / 8.0;
                    [side * 0.035 + 0.015 * a.cos(), -0.025 + 0.006 * a.sin(), -0.08]
                })
                .collect();
            run(&mut pts, &mut topology, eye, true);
        }
        let nose_start = pts.len();
        pts.extend([
            [0.0, -0.03, -0.09],
            [0.0, -0.01, -0.1],
            [0.0, 0.012, -0.105],
            [-0.012, 0.018, -0.09],
            [0.012, 0.018, -0.09],
        ]);
        topology.push(vec![nose_start, nose_start + 1, nose_start + 2]);
        topology.push(vec![nose_start + 3, nose_start + 2, nose_start + 4]);
        let mouth_start = pts.len();
        let lip = |n: usize, rx: f32, ry: f32| -> Vec<[f32; 3]> {
            (0..n)
                .map(|k| {
                    let a = PI + 2.0 * PI * k as f32 / n as f32;
                    [rx * a.cos(), 0.045 + ry * a.sin(), -0.085]
                })
                .collect()
        };
        run(&mut pts, &mut topology, lip(15, 0.028, 0.014), true);
        run(&mut pts, &mut topology, lip(10, 0.02, 0.006), true);
        debug_assert_eq!(pts.len(), 73);

        // second keyframe: eyes half closed, brows slightly raised
        let mut blink = pts.clone();
        for p in &mut blink[15..27] {
            p[1] -= 0.004;
        }
        for p in &mut blink[27..43] {
            let cy = -0.025;
            p[1] = cy + 0.4 * (p[1] - cy);
        }

        let billboard = Billboard {
            shoulder_points: vec![
                [-0.32, 0.2, 0.9],
                [-0.17, 0.16, 0.9],
                [-0.07, 0.1, 0.9],
                [-0.06, 0.02, 0.9],
                [0.06, 0.02, 0.9],
                [0.07, 0.1, 0.9],
                [0.17, 0.16, 0.9],
                [0.32, 0.2, 0.9],
            ],
            alpha: DEFAULT_ALPHA,
            topology: vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]],
        };
        FaceRig {
            mouth_indices: (mouth_start..mouth_start + MOUTH_POINTS).collect(),
            static_keyframes: vec![pts.clone(), blink],
            landmarks: pts,
            topology,
            neutral_offset: [0.0, -0.03, 0.75],
            billboard,
        }
    }
}

/// Cycles the rig's static keyframes, cross-fading linearly over each
/// [`CROSSFADE_FRAMES`] interval. Without keyframes the mean shape is used.
pub fn static_components(rig: &FaceRig, frame_index: u64) -> Vec<[f32; 3]> {
    let bank = &rig.static_keyframes;
    match bank.len() {
        0 => rig.landmarks.clone(),
        1 => bank[0].clone(),
        n => {
            let k = (frame_index / CROSSFADE_FRAMES) as usize;
            let u = (frame_index % CROSSFADE_FRAMES) as f32 / CROSSFADE_FRAMES as f32;
            let (a, b) = (&bank[k % n], &bank[(k + 1) % n]);
            a.iter()
                .zip(b)
                .map(|(p, q)| {
                    [
                        p[0] + u * (q[0] - p[0]),
                        p[1] + u * (q[1] - p[1]),
                        p[2] + u * (q[2] - p[2]),
                    ]
                })
                .collect()
        }
    }
}

/// Full object-space landmark set for one frame: static components with the
/// mouth subset replaced by `mean + Δ`.
pub fn face_points(rig: &FaceRig, mouth: &MouthDisplacement, static_sample: &[[f32; 3]]) -> Result<Vec<[f32; 3]>> {
    if static_sample.len() != rig.landmarks.len() {
        return Err(Error::dim(
            "static component sample",
            rig.landmarks.len(),
            static_sample.len(),
        ));
    }
    if mouth.delta.len() != rig.mouth_indices.len() {
        return Err(Error::dim(
            "mouth displacement",
            rig.mouth_indices.len(),
            mouth.delta.len(),
        ));
    }
    let mut pts = static_sample.to_vec();
    for (&i, d) in rig.mouth_indices.iter().zip(&mouth.delta) {
        let m = rig.landmarks[i];
        pts[i] = [m[0] + d[0], m[1] + d[1], m[2] + d[2]];
    }
    Ok(pts)
}

/// Camera-space landmarks: the rigid pose applied in object space, then the
/// rig's neutral placement.
pub fn posed_landmarks(rig: &FaceRig, points: &[[f32; 3]], pose: &HeadPose) -> Vec<[f32; 3]> {
    let o = rig.neutral_offset;
    apply_pose(points, pose)
        .into_iter()
        .map(|p| [p[0] + o[0], p[1] + o[1], p[2] + o[2]])
        .collect()
}

/// Projects face and billboard and draws the rig topology followed by the
/// billboard topology. `points2d` lists face points, then billboard points.
pub fn compose_frame(
    rig: &FaceRig,
    mouth: &MouthDisplacement,
    static_sample: &[[f32; 3]],
    pose: &HeadPose,
    billboard: &Billboard,
    cam: &CameraIntrinsics,
) -> Result<FeatureMap> {
    let face = posed_landmarks(rig, &face_points(rig, mouth, static_sample)?, pose);
    let body = billboard.positions(pose);
    let mut points2d = Vec::with_capacity(face.len() + body.len());
    project_into(&face, cam, &mut points2d)?;
    project_into(&body, cam, &mut points2d).map_err(|e| match e {
        Error::Projection { index, z } => Error::Projection {
            index: index + face.len(),
            z,
        },
        other => other,
    })?;
    let mut image = GrayImage::new(MAP_SIZE, MAP_SIZE);
    rasterize_into(&mut image, &points2d[..face.len()], &rig.topology)?;
    rasterize_into(&mut image, &points2d[face.len()..], &billboard.topology)?;
    Ok(FeatureMap { image, points2d })
}

/// The rig's mean shape at rest: zero mouth displacement, zero pose.
pub fn canonical_map(rig: &FaceRig, cam: &CameraIntrinsics) -> Result<FeatureMap> {
    let mouth = MouthDisplacement {
        delta: vec![[0.0; 3]; rig.mouth_indices.len()],
        frame_index: 0,
    };
    compose_frame(rig, &mouth, &rig.landmarks, &HeadPose::default(), &rig.billboard, cam)
}

/// Per-frame metadata of the target video used to pick reference frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub mouth_area: f64,
    pub rot_x: f64,
    pub rot_y: f64,
}

/// Shoelace area of a closed 2D polygon.
pub fn polygon_area(points: &[[f32; 2]]) -> f64 {
    let n = points.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            a[0] as f64 * b[1] as f64 - b[0] as f64 * a[1] as f64
        })
        .sum();
    0.5 * twice.abs()
}

/// Four reference frames: the 100th-smallest and 100th-largest mouth area,
/// then the records nearest (in `(rot_x, rot_y)`) to the centres of the
/// lower and upper halves of the rotation ranges, skipping frames already
/// chosen. Ties go to the lower index.
pub fn select_candidates(records: &[CandidateRecord]) -> Result<[usize; 4]> {
    if records.len() < MIN_CANDIDATE_RECORDS {
        return Err(Error::Selection(format!(
            "need at least {MIN_CANDIDATE_RECORDS} records, got {}",
            records.len()
        )));
    }
    if let Some(i) = records
        .iter()
        .position(|r| !(r.mouth_area.is_finite() && r.rot_x.is_finite() && r.rot_y.is_finite()))
    {
        return Err(Error::Selection(format!("record {i} is not finite")));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].mouth_area.total_cmp(&records[b].mouth_area).then(a.cmp(&b)));
    let smallest = order[CANDIDATE_RANK - 1];
    let largest = order[records.len() - CANDIDATE_RANK];

    let range = |f: fn(&CandidateRecord) -> f64| {
        records
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (x_lo, x_hi) = range(|r| r.rot_x);
    let (y_lo, y_hi) = range(|r| r.rot_y);
    let mut chosen = vec![smallest, largest];
    for frac in [0.25, 0.75] {
        let c = (x_lo + frac * (x_hi - x_lo), y_lo + frac * (y_hi - y_lo));
        let best = records
            .iter()
            .enumerate()
            .filter(|(i, _)| !chosen.contains(i))
            .map(|(i, r)| (i, (r.rot_x - c.0).powi(2) + (r.rot_y - c.1).powi(2)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
            .expect("at least 200 records");
        chosen.push(best);
    }
    Ok([chosen[0], chosen[1], chosen[2], chosen[3]])
}
