//! Polyline rasterization into the 512×512 single-channel feature map.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAP_SIZE: usize = 512;
const LIT: u8 = 255;
// keeps the integer line arithmetic inside i128 for absurd coordinates
const COORD_LIMIT: f64 = (1u64 << 50) as f64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn lit(&self) -> Vec<(usize, usize)> {
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }

    /// Binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

/// Rasterized conditional map plus the 2D points it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub image: GrayImage,
    pub points2d: Vec<[f32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    pub points: Vec<[f32; 2]>,
    pub topology: Vec<Vec<usize>>,
}

/// `floor(v + 0.5)`, clamped so later products cannot overflow.
fn to_pixel(v: f32) -> i128 {
    ((v as f64 + 0.5).floor().clamp(-COORD_LIMIT, COORD_LIMIT)) as i128
}

/// Plots the integer Bresenham segment `a → b`. Pixels outside the image are
/// skipped; only the part of the major axis that overlaps the image is
/// walked.
pub fn draw_segment(img: &mut GrayImage, a: (i128, i128), b: (i128, i128)) {
    let (w, h) = (img.width as i128, img.height as i128);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let x_major = dx.abs() >= dy.abs();
    let (m0, n0, dm, dn, m_lim, n_lim) = if x_major {
        (a.0, a.1, dx, dy, w, h)
    } else {
        (a.1, a.0, dy, dx, h, w)
    };
    let (am, an) = (dm.abs(), dn.abs());
    let (sm, sn) = (dm.signum(), dn.signum());
    // steps i ∈ [0, am] whose major coordinate m0 + sm·i lies in [0, m_lim)
    let (lo, hi) = if sm >= 0 {
        (-m0, m_lim - 1 - m0)
    } else {
        (m0 - (m_lim - 1), m0)
    };
    let (lo, hi) = (lo.max(0), hi.min(am));
    if am == 0 {
        if (0..m_lim).contains(&m0) && (0..n_lim).contains(&n0) {
            plot(img, x_major, m0, n0);
        }
        return;
    }
    let mut i = lo;
    while i <= hi {
        let m = m0 + sm * i;
        let n = n0 + sn * ((2 * i * an + am) / (2 * am));
        if (0..n_lim).contains(&n) {
            plot(img, x_major, m, n);
        }
        i += 1;
    }
}

fn plot(img: &mut GrayImage, x_major: bool, m: i128, n: i128) {
    let (x, y) = if x_major { (m, n) } else { (n, m) };
    let idx = y as usize * img.width + x as usize;
    img.pixels[idx] = LIT;
}

/// Draws every polyline of `topology` over `points`. A single-index polyline
/// draws one dot; segments touching a non-finite point are skipped.
pub fn rasterize_into(img: &mut GrayImage, points: &[[f32; 2]], topology: &[Vec<usize>]) -> Result<()> {
    for (li, line) in topology.iter().enumerate() {
        if let Some(&bad) = line.iter().find(|&&i| i >= points.len()) {
            return Err(Error::dim(
                format!("polyline {li} index"),
                format!("< {}", points.len()),
                bad,
            ));
        }
        let px = |i: usize| {
            let p = points[i];
            (p[0].is_finite() && p[1].is_finite()).then(|| (to_pixel(p[0]), to_pixel(p[1])))
        };
        if line.len() == 1 {
            if let Some(a) = px(line[0]) {
                draw_segment(img, a, a);
            }
        }
        for pair in line.windows(2) {
            if let (Some(a), Some(b)) = (px(pair[0]), px(pair[1])) {
                draw_segment(img, a, b);
            }
        }
    }
    Ok(())
}

pub fn rasterize(points: &[[f32; 2]], topology: &[Vec<usize>]) -> Result<FeatureMap> {
    let mut image = GrayImage::new(MAP_SIZE, MAP_SIZE);
    rasterize_into(&mut image, points, topology)?;
    Ok(FeatureMap {
        image,
        points2d: points.to_vec(),
    })
}
