//! Canonical ordering of point-indexed token sets: tokens are matched to a
//! fixed 3D Sobol anchor set by exact optimal assignment and reordered so
//! that token `j` sits next to anchor `s_j`.

use nalgebra::Vector3;
use rayon::prelude::*;
use std::path::Path;
use thiserror::Error;

const BUNDLED_DIRECTIONS: &str = include_str!("../data/joe-kuo-d10.txt");
const BITS: usize = 32;

#[derive(Debug, Error)]
pub enum VecSeqError {
    #[error("direction-number file line {line}: {msg}")]
    DirectionFile { line: usize, msg: String },
    #[error("direction numbers cover {have} dimensions, need {need}")]
    TooFewDimensions { have: usize, need: usize },
    #[error("cannot select {m} points from {n}")]
    TooFewPoints { m: usize, n: usize },
    #[error("size mismatch: {0} sources vs {1} anchors")]
    SizeMismatch(usize, usize),
    #[error("token matrix has {rows} rows of width {width}, expected {expected} rows")]
    TokenShape { rows: usize, width: usize, expected: usize },
    #[error("positional embedding dimension must be a positive multiple of 6, got {0}")]
    PeDim(usize),
    #[error("assignment costs must be finite")]
    NonFiniteCost,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Primitive polynomial and initial direction integers for one dimension.
#[derive(Debug, Clone, PartialEq)]
struct Polynomial {
    s: usize,
    a: u32,
    m: Vec<u32>,
}

/// Joe–Kuo style direction numbers. Dimension 0 is implicit (van der Corput);
/// row `d` of the file gives dimension `d - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionNumbers {
    polys: Vec<Polynomial>,
}

impl DirectionNumbers {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_DIRECTIONS).expect("bundled direction numbers parse")
    }

    pub fn from_file(path: &Path) -> Result<Self, VecSeqError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses the `d s a m_i...` table format, skipping a header row.
    pub fn parse(text: &str) -> Result<Self, VecSeqError> {
        let mut polys = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let err = |msg: String| VecSeqError::DirectionFile { line: i + 1, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() || fields[0] == "d" || fields[0].starts_with('#') {
                continue;
            }
            let nums: Vec<u32> = fields
                .iter()
                .map(|f| f.parse::<u32>().map_err(|e| err(format!("{f:?}: {e}"))))
                .collect::<Result<_, _>>()?;
            if nums.len() < 3 {
                return Err(err("expected d, s, a and m values".into()));
            }
            let (d, s, a) = (nums[0] as usize, nums[1] as usize, nums[2]);
            if d != polys.len() + 2 {
                return Err(err(format!("expected dimension {}, found {d}", polys.len() + 2)));
            }
            let m = nums[3..].to_vec();
            if s == 0 || s >= BITS || m.len() != s {
                return Err(err(format!("degree {s} needs {s} initial values, found {}", m.len())));
            }
            for (k, &mk) in m.iter().enumerate() {
                if mk % 2 == 0 || mk >= 1 << (k + 1) {
                    return Err(err(format!("m_{} = {mk} must be odd and below 2^{}", k + 1, k + 1)));
                }
            }
            polys.push(Polynomial { s, a, m });
        }
        Ok(Self { polys })
    }

    pub fn dimensions(&self) -> usize {
        self.polys.len() + 1
    }

    /// Direction integers `v_1..v_32` (scaled by `2^32`) for dimension `dim`.
    fn directions(&self, dim: usize) -> [u32; BITS] {
        let mut v = [0u32; BITS];
        if dim == 0 {
            for (i, vi) in v.iter_mut().enumerate() {
                *vi = 1 << (BITS - 1 - i);
            }
            return v;
        }
        let Polynomial { s, a, m } = &self.polys[dim - 1];
        let s = *s;
        for i in 0..BITS {
            v[i] = if i < s {
                m[i] << (BITS - 1 - i)
            } else {
                let mut x = v[i - s] ^ (v[i - s] >> s);
                for k in 1..s {
                    if (a >> (s - 1 - k)) & 1 == 1 {
                        x ^= v[i - k];
                    }
                }
                x
            };
        }
        v
    }
}

/// First `M` points of the 3D Sobol sequence, index 0 (the origin) skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct SobolAnchors {
    pub points: Vec<Vector3<f64>>,
}

pub fn sobol3d(m: usize) -> SobolAnchors {
    sobol3d_with(m, &DirectionNumbers::bundled()).expect("bundled table covers 3 dimensions")
}

/// Gray-code construction: point `n` is point `n - 1` XOR the direction
/// number indexed by the trailing ones of `n - 1`.
pub fn sobol3d_with(m: usize, dirs: &DirectionNumbers) -> Result<SobolAnchors, VecSeqError> {
    if dirs.dimensions() < 3 {
        return Err(VecSeqError::TooFewDimensions { have: dirs.dimensions(), need: 3 });
    }
    let v: Vec<[u32; BITS]> = (0..3).map(|d| dirs.directions(d)).collect();
    let mut x = [0u32; 3];
    let scale = 1.0 / (1u64 << BITS) as f64;
    let points = (0..m as u64)
        .map(|n| {
            let c = n.trailing_ones() as usize;
            for d in 0..3 {
                x[d] ^= v[d][c];
            }
            Vector3::new(x[0] as f64 * scale, x[1] as f64 * scale, x[2] as f64 * scale)
        })
        .collect();
    Ok(SobolAnchors { points })
}

/// Greedy max-min subset starting from index 0; ties go to the lowest index.
pub fn fps(points: &[Vector3<f64>], m: usize) -> Result<Vec<usize>, VecSeqError> {
    let n = points.len();
    if m > n {
        return Err(VecSeqError::TooFewPoints { m, n });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut picked = vec![0usize];
    let mut dist: Vec<f64> = points.iter().map(|p| (p - points[0]).norm_squared()).collect();
    while picked.len() < m {
        let mut best = 0;
        for i in 1..n {
            if dist[i] > dist[best] {
                best = i;
            }
        }
        picked.push(best);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((p - points[best]).norm_squared());
        }
    }
    Ok(picked)
}

/// Optimal assignment: `order[j]` is the source matched to anchor `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub order: Vec<usize>,
    pub cost: f64,
}

/// Minimizes `Σ_j |src[order[j]] - anchors[j]|²` exactly (Hungarian method
/// with row potentials, `O(M³)`).
pub fn ot_assign(src: &[Vector3<f64>], anchors: &[Vector3<f64>]) -> Result<Assignment, VecSeqError> {
    if src.len() != anchors.len() {
        return Err(VecSeqError::SizeMismatch(src.len(), anchors.len()));
    }
    let m = src.len();
    let cost: Vec<Vec<f64>> =
        anchors.par_iter().map(|a| src.iter().map(|s| (s - a).norm_squared()).collect()).collect();
    let cols = hungarian(&cost)?;
    let total = (0..m).map(|j| cost[j][cols[j]]).sum();
    Ok(Assignment { order: cols, cost: total })
}

/// Square min-cost assignment; returns the column chosen for each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<usize>, VecSeqError> {
    let n = cost.len();
    if cost.iter().any(|r| r.len() != n) {
        return Err(VecSeqError::SizeMismatch(n, cost.iter().map(Vec::len).max().unwrap_or(0)));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(VecSeqError::NonFiniteCost);
    }
    // 1-based, column 0 is the virtual source of each augmenting path.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=n {
        col_of[row_of[j] - 1] = j - 1;
    }
    Ok(col_of)
}

/// Sinusoidal embedding settings: `dim / 6` frequencies per coordinate on a
/// geometric ladder `base^(-k / F)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeConfig {
    pub dim: usize,
    pub base: f64,
}

impl PeConfig {
    pub fn new(dim: usize) -> Result<Self, VecSeqError> {
        if dim == 0 || !dim.is_multiple_of(6) {
            return Err(VecSeqError::PeDim(dim));
        }
        Ok(Self { dim, base: 10_000.0 })
    }

    /// Layout: for each coordinate, for each frequency, `(sin, cos)`.
    pub fn embed(&self, s: &Vector3<f64>) -> Vec<f64> {
        let f = self.dim / 6;
        let mut out = Vec::with_capacity(self.dim);
        for c in 0..3 {
            for k in 0..f {
                let w = self.base.powf(-(k as f64) / f as f64);
                let (sn, cs) = (s[c] * w).sin_cos();
                out.push(sn);
                out.push(cs);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SerializedTokens {
    pub tokens: Vec<Vec<f64>>,
    pub order: Vec<usize>,
    pub anchor_pe: Vec<Vec<f64>>,
    pub cost: f64,
}

/// Reorders token rows so that row `j` is the token whose point is matched to anchor `j`.
pub fn serialize(
    tokens: &[Vec<f64>],
    src_points: &[Vector3<f64>],
    anchors: &SobolAnchors,
    pe: &PeConfig,
) -> Result<SerializedTokens, VecSeqError> {
    let width = tokens.first().map_or(0, Vec::len);
    if tokens.len() != src_points.len() || tokens.iter().any(|t| t.len() != width) {
        return Err(VecSeqError::TokenShape { rows: tokens.len(), width, expected: src_points.len() });
    }
    let a = ot_assign(src_points, &anchors.points)?;
    Ok(SerializedTokens {
        tokens: a.order.iter().map(|&i| tokens[i].clone()).collect(),
        anchor_pe: anchors.points.iter().map(|s| pe.embed(s)).collect(),
        order: a.order,
        cost: a.cost,
    })
}

/// Maps points into the unit cube by their bounding box, keeping the aspect
/// ratio and centering the short axes.
pub fn normalize_to_unit_cube(points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let ext = hi - lo;
    let side = ext.max();
    if side <= 0.0 {
        return vec![Vector3::repeat(0.5); points.len()];
    }
    let pad = (Vector3::repeat(side) - ext) * 0.5;
    points.iter().map(|p| (p - lo + pad) / side).collect()
}
