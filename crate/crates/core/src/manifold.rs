//! Projection of a speech representation onto a target speaker's feature
//! bank by locally linear reconstruction from its nearest neighbours.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{lane_sum, Tensor};
use crate::weights::{self, WeightStore};

pub const DEFAULT_K: usize = 10;
/// Ridge added to the normalized local Gram matrix when the constrained
/// system is singular.
pub const GRAM_REGULARIZATION: f64 = 1e-3;
/// Neighbour distance below which the query is treated as a database member.
pub const EXACT_MATCH_DISTANCE: f64 = 1e-12;
pub const STORE_NAME: &str = "manifold.db";

/// Banks smaller than this are searched by a plain linear scan.
pub const FILTER_MIN_ROWS: usize = 512;
/// Relative slack on the quantized distance bounds. Orders of magnitude
/// above the f32 rounding error of either distance kernel.
const BOUND_SLACK: f64 = 1e-4;

/// Immutable `N_s × dim` bank of target-speaker representations.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprDatabase {
    dim: usize,
    rows: usize,
    data: Vec<f32>,
    coarse: Coarse,
}

/// Per-row int8 copy of the bank. Each row keeps its scale, its squared
/// quantized norm and the exact norm of its quantization error, which turns
/// a coarse distance into a guaranteed interval around the true one.
#[derive(Debug, Clone, PartialEq)]
struct Coarse {
    codes: Vec<i8>,
    scale: Vec<f32>,
    norm2: Vec<f64>,
    err: Vec<f64>,
    max_norm2: f64,
}

impl Coarse {
    fn new(dim: usize, data: &[f32]) -> Self {
        let rows = data.len() / dim;
        let mut c = Coarse {
            codes: Vec::with_capacity(data.len()),
            scale: Vec::with_capacity(rows),
            norm2: Vec::with_capacity(rows),
            err: Vec::with_capacity(rows),
            max_norm2: 0.0,
        };
        for row in data.chunks_exact(dim) {
            let peak = row.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            let scale = if peak > 0.0 { peak / 127.0 } else { 1.0 };
            let (mut q2, mut e2) = (0i64, 0.0f64);
            for &v in row {
                let q = (v / scale).round().clamp(-127.0, 127.0) as i8;
                c.codes.push(q);
                q2 += q as i64 * q as i64;
                let d = v as f64 - scale as f64 * q as f64;
                e2 += d * d;
            }
            let n2 = scale as f64 * scale as f64 * q2 as f64;
            c.max_norm2 = c.max_norm2.max(n2);
            c.scale.push(scale);
            c.norm2.push(n2);
            c.err.push(e2.sqrt());
        }
        c
    }
}

#[inline(always)]
fn code_dot_generic(h: &[f32], q: &[i8]) -> f32 {
    const W: usize = 16;
    let mut acc = [0.0f32; W];
    let ch = h.chunks_exact(W);
    let cq = q.chunks_exact(W);
    let (rh, rq) = (ch.remainder(), cq.remainder());
    for (x, c) in ch.zip(cq) {
        for k in 0..W {
            acc[k] += x[k] * c[k] as f32;
        }
    }
    let mut sum = 0.0;
    for (&x, &c) in rh.iter().zip(rq) {
        sum += x * c as f32;
    }
    sum + acc.iter().sum::<f32>()
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn code_dots_avx2(h: &[f32], codes: &[i8], out: &mut [f32]) {
    for (o, q) in out.iter_mut().zip(codes.chunks_exact(h.len())) {
        *o = code_dot_generic(h, q);
    }
}

/// `h · q_r` for every code row.
fn code_dots(h: &[f32], codes: &[i8], out: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { code_dots_avx2(h, codes, out) };
    }
    for (o, q) in out.iter_mut().zip(codes.chunks_exact(h.len())) {
        *o = code_dot_generic(h, q);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors {
    pub indices: Vec<usize>,
    /// Euclidean distances, ascending.
    pub distances: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub neighbor_indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub reconstructed: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSidecar {
    rows: usize,
    #[serde(default = "default_dim")]
    dim: usize,
}

fn default_dim() -> usize {
    crate::apc::REPR_DIM
}

#[inline]
fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    lane_sum(a, b, |x, y| (x - y) * (x - y))
}

/// Builds a database from feature rows, preserving order and duplicates.
pub fn build_database<S: AsRef<[f32]>>(features: &[S]) -> Result<ReprDatabase> {
    let first = features
        .first()
        .ok_or_else(|| Error::Data("feature database is empty".into()))?;
    let dim = first.as_ref().len();
    let mut data = Vec::with_capacity(dim * features.len());
    for (i, row) in features.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != dim {
            return Err(Error::dim(format!("database row {i}"), dim, row.len()));
        }
        data.extend_from_slice(row);
    }
    ReprDatabase::from_matrix(features.len(), dim, data)
}

impl ReprDatabase {
    pub fn from_matrix(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::Data("feature database is empty".into()));
        }
        if data.len() != rows * dim {
            return Err(Error::dim("database matrix", rows * dim, data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "database row {} contains a non-finite value",
                pos / dim
            )));
        }
        let coarse = Coarse::new(dim, &data);
        Ok(Self {
            dim,
            rows,
            data,
            coarse,
        })
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.dim], self.data.clone()).expect("shape")
    }

    pub fn from_store(store: &WeightStore) -> Result<Self> {
        let t = store.require(STORE_NAME)?;
        if t.rank() != 2 {
            return Err(Error::dim(STORE_NAME, "rank 2", t.rank()));
        }
        Self::from_matrix(t.shape()[0], t.shape()[1], t.data().to_vec())
    }

    /// Reads either a weight file holding `manifold.db`, or a raw
    /// little-endian f32 matrix with a `<file>.json` sidecar giving `rows`
    /// (and optionally `dim`, default 512).
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(weights::MAGIC) {
            return Self::from_store(&WeightStore::from_bytes(&bytes)?);
        }
        let mut sidecar_path = path.as_os_str().to_owned();
        sidecar_path.push(".json");
        let sidecar_path = std::path::PathBuf::from(sidecar_path);
        let text = std::fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
        let sidecar: RawSidecar =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", sidecar_path.display())))?;
        if bytes.len() != sidecar.rows * sidecar.dim * 4 {
            return Err(Error::Data(format!(
                "{}: expected {} bytes for {} × {} f32, found {}",
                path.display(),
                sidecar.rows * sidecar.dim * 4,
                sidecar.rows,
                sidecar.dim,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::from_matrix(sidecar.rows, sidecar.dim, data)
    }

    /// Writes the raw matrix and its JSON sidecar.
    pub fn save_raw(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let mut sidecar = path.as_os_str().to_owned();
        sidecar.push(".json");
        let json = serde_json::to_string(&RawSidecar {
            rows: self.rows,
            dim: self.dim,
        })
        .expect("serialize");
        std::fs::write(&sidecar, json).map_err(|e| Error::io(std::path::PathBuf::from(sidecar.clone()), e))
    }

    fn check_query(&self, h: &[f32], k: usize) -> Result<()> {
        if h.len() != self.dim {
            return Err(Error::dim("projection query", self.dim, h.len()));
        }
        if k == 0 || k > self.rows {
            return Err(Error::Domain(format!("K = {k} must be in [1, {}]", self.rows)));
        }
        Ok(())
    }

    /// The `k` nearest rows by Euclidean distance, ascending, ties broken
    /// by lower index.
    ///
    /// Large banks are first scanned in int8. Every row gets a distance
    /// interval from its quantization error; only rows whose lower bound
    /// does not exceed the `k`-th smallest upper bound are rescored in f32.
    /// The result is identical to [`ReprDatabase::knn_exhaustive`].
    pub fn knn(&self, h: &[f32], k: usize) -> Result<Neighbors> {
        self.check_query(h, k)?;
        if self.rows < FILTER_MIN_ROWS || h.iter().any(|v| !v.is_finite()) {
            return Ok(self.scan(h, k, 0..self.rows));
        }
        let c = &self.coarse;
        let mut dots = vec![0.0f32; self.rows];
        code_dots(h, &c.codes, &mut dots);
        let hh: f64 = h.iter().map(|&v| v as f64 * v as f64).sum();
        let slack2 = BOUND_SLACK * (hh + c.max_norm2);
        let mut lower = Vec::with_capacity(self.rows);
        let mut upper = Vec::with_capacity(self.rows);
        for (r, &dot) in dots.iter().enumerate() {
            let a2 = hh - 2.0 * c.scale[r] as f64 * dot as f64 + c.norm2[r];
            let lo = (a2 - slack2).max(0.0).sqrt() - c.err[r];
            let hi = (a2 + slack2).max(0.0).sqrt() + c.err[r];
            lower.push(lo.max(0.0) * (1.0 - BOUND_SLACK));
            upper.push(hi * (1.0 + BOUND_SLACK));
        }
        let tau = *upper.select_nth_unstable_by(k - 1, f64::total_cmp).1;
        Ok(self.scan(h, k, (0..self.rows).filter(|&r| lower[r] <= tau)))
    }

    /// Reference linear scan over every row.
    pub fn knn_exhaustive(&self, h: &[f32], k: usize) -> Result<Neighbors> {
        self.check_query(h, k)?;
        Ok(self.scan(h, k, 0..self.rows))
    }

    fn scan(&self, h: &[f32], k: usize, rows: impl Iterator<Item = usize>) -> Neighbors {
        // kept sorted by (distance, index)
        let mut best: Vec<(f32, usize)> = Vec::with_capacity(k + 1);
        for i in rows {
            let d = squared_distance(self.row(i), h);
            if best.len() == k && d >= best[k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, i));
            best.truncate(k);
        }
        Neighbors {
            indices: best.iter().map(|&(_, i)| i).collect(),
            distances: best.iter().map(|&(d, _)| d.sqrt()).collect(),
        }
    }

    /// Reconstructs `h` as the affine combination of its `k` nearest rows
    /// that minimizes `‖h − Σ w_k f_k‖²` subject to `Σ w_k = 1`.
    pub fn lle_project(&self, h: &[f32], k: usize) -> Result<ProjectionResult> {
        let nb = self.knn(h, k)?;
        let weights = if (nb.distances[0] as f64) < EXACT_MATCH_DISTANCE {
            let mut w = vec![0.0; k];
            w[0] = 1.0;
            w
        } else {
            self.barycentric_weights(h, &nb.indices)
        };
        let mut acc = vec![0.0f64; self.dim];
        for (&idx, &w) in nb.indices.iter().zip(&weights) {
            for (a, &f) in acc.iter_mut().zip(self.row(idx)) {
                *a += w * f as f64;
            }
        }
        Ok(ProjectionResult {
            neighbor_indices: nb.indices,
            weights,
            reconstructed: acc.into_iter().map(|v| v as f32).collect(),
        })
    }

    fn barycentric_weights(&self, h: &[f32], indices: &[usize]) -> Vec<f64> {
        let k = indices.len();
        let diffs: Vec<Vec<f64>> = indices
            .iter()
            .map(|&i| self.row(i).iter().zip(h).map(|(&f, &x)| f as f64 - x as f64).collect())
            .collect();
        let mut gram = vec![0.0f64; k * k];
        for a in 0..k {
            for b in a..k {
                let v: f64 = diffs[a].iter().zip(&diffs[b]).map(|(x, y)| x * y).sum();
                gram[a * k + b] = v;
                gram[b * k + a] = v;
            }
        }
        let scale = (0..k).map(|i| gram[i * k + i]).sum::<f64>() / k as f64;
        for g in &mut gram {
            *g /= scale;
        }

        // Constrained minimum: [C 1; 1ᵀ 0] [w; λ] = [0; 1].
        let n = k + 1;
        let mut kkt = vec![0.0f64; n * n];
        for a in 0..k {
            kkt[a * n..a * n + k].copy_from_slice(&gram[a * k..(a + 1) * k]);
            kkt[a * n + k] = 1.0;
            kkt[k * n + a] = 1.0;
        }
        let mut rhs = vec![0.0f64; n];
        rhs[k] = 1.0;
        if let Some(sol) = solve_dense(kkt, rhs, 1e-10) {
            let w = &sol[..k];
            if w.iter().all(|v| v.is_finite()) {
                return w.to_vec();
            }
        }

        // Singular local geometry: regularize C w = 1, then normalize.
        for i in 0..k {
            gram[i * k + i] += GRAM_REGULARIZATION;
        }
        let w = solve_dense(gram, vec![1.0; k], 0.0).unwrap_or_else(|| vec![1.0; k]);
        let sum: f64 = w.iter().sum();
        w.into_iter().map(|v| v / sum).collect()
    }
}

/// Gaussian elimination with partial pivoting. Returns `None` when a pivot
/// magnitude falls to `min_pivot` or below.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>, min_pivot: f64) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let (p, pv) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if !(pv > min_pivot) {
            return None;
        }
        if p != col {
            for j in 0..n {
                a.swap(col * n + j, p * n + j);
            }
            b.swap(col, p);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f != 0.0 {
                for j in col..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|j| a[r * n + j] * x[j]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    Some(x)
}

pub fn load_database(path: &Path) -> Result<ReprDatabase> {
    ReprDatabase::load(path)
}
