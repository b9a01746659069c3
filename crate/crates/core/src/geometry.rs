//! Rigid transforms and the pinhole camera.
//!
//! Rotation is intrinsic X, then Y, then Z Euler angles in radians,
//! right-handed: `R = Rz(r_z)·Ry(r_y)·Rx(r_x)`. The camera looks down +z with
//! image y pointing down.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat3 = [[f32; 3]; 3];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HeadPose {
    /// Rotation in radians.
    pub r: [f32; 3],
    /// Translation in object units.
    pub t: [f32; 3],
}

impl HeadPose {
    pub fn new(r: [f32; 3], t: [f32; 3]) -> Self {
        Self { r, t }
    }

    /// `[r_x, r_y, r_z, t_x, t_y, t_z]`
    pub fn to_array(&self) -> [f32; 6] {
        [self.r[0], self.r[1], self.r[2], self.t[0], self.t[1], self.t[2]]
    }

    /// First six values as `[r; t]`. Panics on shorter slices.
    pub fn from_slice(v: &[f32]) -> Self {
        Self {
            r: [v[0], v[1], v[2]],
            t: [v[3], v[4], v[5]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(&self.t).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub f: f32,
    pub cx: f32,
    pub cy: f32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            f: 1200.0,
            cx: 256.0,
            cy: 256.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(f: f32, cx: f32, cy: f32) -> Result<Self> {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::config("focal_px", "must be a positive finite number"));
        }
        if !cx.is_finite() || !cy.is_finite() {
            return Err(Error::config("principal_point_px", "must be finite"));
        }
        Ok(Self { f, cx, cy })
    }
}

fn rx(a: f32) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn ry(a: f32) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rz(a: f32) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_vec(m: &Mat3, p: [f32; 3]) -> [f32; 3] {
    [
        m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
        m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
        m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
    ]
}

/// `Rz(r_z)·Ry(r_y)·Rx(r_x)`
pub fn rotation_matrix(r: [f32; 3]) -> Mat3 {
    mat_mul(&rz(r[2]), &mat_mul(&ry(r[1]), &rx(r[0])))
}

/// Inverse of [`rotation_matrix`], built from the negated angles composed in
/// reverse order: `Rx(−r_x)·Ry(−r_y)·Rz(−r_z)`.
pub fn inverse_rotation_matrix(r: [f32; 3]) -> Mat3 {
    mat_mul(&rx(-r[0]), &mat_mul(&ry(-r[1]), &rz(-r[2])))
}

/// `p' = R(r)·p + t` for every point.
pub fn apply_pose(points: &[[f32; 3]], pose: &HeadPose) -> Vec<[f32; 3]> {
    let m = rotation_matrix(pose.r);
    points
        .iter()
        .map(|&p| {
            let q = mat_vec(&m, p);
            [q[0] + pose.t[0], q[1] + pose.t[1], q[2] + pose.t[2]]
        })
        .collect()
}

/// `(u, v) = (f·x/z + cx, f·y/z + cy)`; any point with `z ≤ 0` is an error.
pub fn project(points: &[[f32; 3]], cam: &CameraIntrinsics) -> Result<Vec<[f32; 2]>> {
    let mut out = Vec::with_capacity(points.len());
    project_into(points, cam, &mut out)?;
    Ok(out)
}

pub fn project_into(points: &[[f32; 3]], cam: &CameraIntrinsics, out: &mut Vec<[f32; 2]>) -> Result<()> {
    for (index, p) in points.iter().enumerate() {
        let z = p[2];
        if !(z > 0.0) {
            return Err(Error::Projection { index, z });
        }
        out.push([cam.f * p[0] / z + cam.cx, cam.f * p[1] / z + cam.cy]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f32::consts::FRAC_PI_2;

    fn close(a: [f32; 3], b: [f32; 3], tol: f32) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn identity_and_translation() {
        let pts = [[1.0, -2.0, 3.0], [0.5, 0.25, 4.0]];
        assert_eq!(apply_pose(&pts, &HeadPose::default()), pts.to_vec());
        let moved = apply_pose(&pts, &HeadPose::new([0.0; 3], [1.0, 2.0, 3.0]));
        assert_eq!(moved, vec![[2.0, 0.0, 6.0], [1.5, 2.25, 7.0]]);
    }

    #[test]
    fn quarter_turn_about_y() {
        let out = apply_pose(&[[1.0, 0.0, 0.0]], &HeadPose::new([0.0, FRAC_PI_2, 0.0], [0.0; 3]));
        assert!(close(out[0], [0.0, 0.0, -1.0], 1e-6), "{:?}", out[0]);
    }

    #[test]
    fn composition_order_is_x_then_y_then_z() {
        // x-axis point: Rx leaves it, Ry(π/2) sends it to −z, Rz leaves −z alone
        let r = [FRAC_PI_2, FRAC_PI_2, FRAC_PI_2];
        let out = mat_vec(&rotation_matrix(r), [1.0, 0.0, 0.0]);
        assert!(close(out, [0.0, 0.0, -1.0], 1e-6), "{out:?}");
        // y-axis point: Rx sends it to +z, Ry to +x, Rz to +y
        let out = mat_vec(&rotation_matrix(r), [0.0, 1.0, 0.0]);
        assert!(close(out, [0.0, 1.0, 0.0], 1e-6), "{out:?}");
    }

    #[test]
    fn reversed_negated_rotation_is_inverse() {
        for r in [[0.3f32, -1.2, 2.0], [3.0, 0.1, -0.7], [0.0, 0.0, 1.0]] {
            let p = [0.4, -0.9, 1.7];
            let back = mat_vec(&inverse_rotation_matrix(r), mat_vec(&rotation_matrix(r), p));
            assert!(close(back, p, 1e-5), "{back:?}");
        }
    }

    #[test]
    fn projection_cases() {
        let cam = CameraIntrinsics::new(100.0, 256.0, 256.0).unwrap();
        assert_eq!(project(&[[1.0, 2.0, 2.0]], &cam).unwrap(), vec![[306.0, 356.0]]);
        assert_eq!(project(&[[0.0, 0.0, 7.5]], &cam).unwrap(), vec![[256.0, 256.0]]);
        let near = project(&[[0.3, -0.2, 1.0]], &cam).unwrap()[0];
        let far = project(&[[0.3, -0.2, 2.0]], &cam).unwrap()[0];
        assert!(((far[0] - 256.0) * 2.0 - (near[0] - 256.0)).abs() < 1e-4);
        assert!(((far[1] - 256.0) * 2.0 - (near[1] - 256.0)).abs() < 1e-4);
        match project(&[[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]], &cam) {
            Err(Error::Projection { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        assert!(CameraIntrinsics::new(0.0, 0.0, 0.0).is_err());
    }
}
