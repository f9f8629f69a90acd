//! Octree-factorized spatial density.
//!
//! A leaf at depth `L` is reached by `L` child choices from the root; every
//! internal cell carries 8 logits whose softmax is the conditional
//! distribution over its children. The log-density of a leaf is the sum of
//! the per-level log-softmax terms along its path. Cells never written to
//! have zero logits, i.e. a uniform split.

use nalgebra::Vector3;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use thiserror::Error;

/// Deepest supported octree (3 bits per level in a `u64`).
pub const MAX_LEVELS: u8 = 21;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OctreeError {
    #[error("invalid octree path: {0}")]
    InvalidPath(String),
    #[error("child probabilities must be finite and nonnegative, got {0:?}")]
    DegenerateProbs([f64; 8]),
    #[error("octree depth must be in 1..={MAX_LEVELS}, got {0}")]
    BadLevels(u8),
    #[error("point set is empty")]
    EmptyPointSet,
}

/// Axis-aligned box in world units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn cube(half: f64) -> Self {
        Self { min: [-half; 3], max: [half; 3] }
    }

    pub fn extent(&self) -> Vector3<f64> {
        Vector3::new(self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2])
    }

    pub fn min_v(&self) -> Vector3<f64> {
        Vector3::from(self.min)
    }

    pub fn center(&self) -> Vector3<f64> {
        self.min_v() + self.extent() * 0.5
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|d| p[d] >= self.min[d] && p[d] <= self.max[d])
    }

    /// Child box selected by octant digit `k` (bit 0: x, bit 1: y, bit 2: z).
    pub fn octant(&self, k: u8) -> Aabb {
        let mut out = *self;
        for d in 0..3 {
            let mid = 0.5 * (self.min[d] + self.max[d]);
            if (k >> d) & 1 == 1 {
                out.min[d] = mid;
            } else {
                out.max[d] = mid;
            }
        }
        out
    }
}

/// A cell identified by its depth and the base-8 digits of its path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellPath {
    pub level: u8,
    pub code: u64,
}

impl CellPath {
    pub const ROOT: CellPath = CellPath { level: 0, code: 0 };

    pub fn from_digits(digits: &[u8]) -> Result<Self, OctreeError> {
        if digits.len() > MAX_LEVELS as usize {
            return Err(OctreeError::InvalidPath(format!("{} digits exceed the maximum depth", digits.len())));
        }
        let mut code = 0u64;
        for &d in digits {
            if d >= 8 {
                return Err(OctreeError::InvalidPath(format!("child digit {d} not in 0..8")));
            }
            code = code * 8 + d as u64;
        }
        Ok(Self { level: digits.len() as u8, code })
    }

    pub fn child(&self, k: u8) -> CellPath {
        debug_assert!(k < 8);
        CellPath { level: self.level + 1, code: self.code * 8 + k as u64 }
    }

    pub fn parent(&self) -> Option<CellPath> {
        (self.level > 0).then(|| CellPath { level: self.level - 1, code: self.code / 8 })
    }

    /// Child digit taken at depth `l` (1-based).
    pub fn digit(&self, l: u8) -> u8 {
        ((self.code >> (3 * (self.level - l) as u64)) & 7) as u8
    }

    pub fn digits(&self) -> Vec<u8> {
        (1..=self.level).map(|l| self.digit(l)).collect()
    }

    /// Ancestor at depth `l ≤ level`.
    pub fn prefix(&self, l: u8) -> CellPath {
        CellPath { level: l, code: self.code >> (3 * (self.level - l) as u64) }
    }

    pub fn bounds(&self, domain: &Aabb) -> Aabb {
        let mut b = *domain;
        for l in 1..=self.level {
            b = b.octant(self.digit(l));
        }
        b
    }
}

/// Source of per-cell child logits. The tabular [`OctreeDensity`] is the only
/// implementation here; a conditioned predictor can implement it as well.
pub trait CellLogits: Sync {
    fn levels(&self) -> u8;
    fn domain(&self) -> Aabb;
    fn logits(&self, cell: &CellPath) -> [f64; 8];
}

pub fn softmax(logits: &[f64; 8]) -> [f64; 8] {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; 8];
    let mut z = 0.0;
    for k in 0..8 {
        out[k] = (logits[k] - m).exp();
        z += out[k];
    }
    for v in &mut out {
        *v /= z;
    }
    out
}

pub fn log_softmax(logits: &[f64; 8]) -> [f64; 8] {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let mut out = [0.0; 8];
    for k in 0..8 {
        out[k] = logits[k] - lse;
    }
    out
}

/// Sparse tabular logits over an `levels`-deep octree.
#[derive(Debug, Clone, PartialEq)]
pub struct OctreeDensity {
    levels: u8,
    domain: Aabb,
    logits: BTreeMap<CellPath, [f64; 8]>,
}

impl OctreeDensity {
    pub fn new(levels: u8, domain: Aabb) -> Result<Self, OctreeError> {
        if levels == 0 || levels > MAX_LEVELS {
            return Err(OctreeError::BadLevels(levels));
        }
        Ok(Self { levels, domain, logits: BTreeMap::new() })
    }

    pub fn levels(&self) -> u8 {
        self.levels
    }

    pub fn domain(&self) -> Aabb {
        self.domain
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellPath, &[f64; 8])> {
        self.logits.iter()
    }

    pub fn cell_count(&self) -> usize {
        self.logits.len()
    }

    pub fn set_logits(&mut self, cell: CellPath, logits: [f64; 8]) {
        assert!(cell.level < self.levels, "only internal cells carry logits");
        self.logits.insert(cell, logits);
    }

    /// Mutable logits of a cell, instantiating it at zero on first touch.
    pub fn logits_mut(&mut self, cell: CellPath) -> &mut [f64; 8] {
        assert!(cell.level < self.levels, "only internal cells carry logits");
        self.logits.entry(cell).or_insert([0.0; 8])
    }

    /// Edge lengths of a leaf cell.
    pub fn leaf_extent(&self) -> Vector3<f64> {
        self.domain.extent() / (1u64 << self.levels) as f64
    }

    /// `log q(leaf)` as the sum of per-level conditional log-probabilities.
    pub fn log_prob(&self, leaf: &CellPath) -> Result<f64, OctreeError> {
        log_prob(self, leaf)
    }

    /// Leaf containing `p`; points outside the domain are clamped onto it.
    pub fn leaf_of(&self, p: &Vector3<f64>) -> (CellPath, bool) {
        leaf_of(&self.domain, self.levels, p)
    }
}

impl CellLogits for OctreeDensity {
    fn levels(&self) -> u8 {
        self.levels
    }

    fn domain(&self) -> Aabb {
        self.domain
    }

    fn logits(&self, cell: &CellPath) -> [f64; 8] {
        self.logits.get(cell).copied().unwrap_or([0.0; 8])
    }
}

pub fn log_prob<M: CellLogits + ?Sized>(model: &M, leaf: &CellPath) -> Result<f64, OctreeError> {
    if leaf.level != model.levels() {
        return Err(OctreeError::InvalidPath(format!(
            "path has {} levels, density has {}",
            leaf.level,
            model.levels()
        )));
    }
    let mut total = 0.0;
    for l in 1..=leaf.level {
        let parent = leaf.prefix(l - 1);
        total += log_softmax(&model.logits(&parent))[leaf.digit(l) as usize];
    }
    Ok(total)
}

fn leaf_of(domain: &Aabb, levels: u8, p: &Vector3<f64>) -> (CellPath, bool) {
    let n = 1u64 << levels;
    let ext = domain.extent();
    let mut idx = [0u64; 3];
    let mut clamped = false;
    for d in 0..3 {
        let f = (p[d] - domain.min[d]) / ext[d] * n as f64;
        if !(f >= 0.0 && f < n as f64) && !(p[d] == domain.max[d]) {
            clamped = true;
        }
        idx[d] = if f.is_nan() { 0 } else { f.floor().clamp(0.0, (n - 1) as f64) as u64 };
    }
    let mut code = 0u64;
    for l in 1..=levels {
        let shift = levels - l;
        let k = ((idx[0] >> shift) & 1) | (((idx[1] >> shift) & 1) << 1) | (((idx[2] >> shift) & 1) << 2);
        code = code * 8 + k;
    }
    (CellPath { level: levels, code }, clamped)
}

/// Splits `n` samples over 8 children with a single offset `u ∈ [0, 1)`:
/// `count_k = ⌊n C_k + u⌋ − ⌊n C_{k−1} + u⌋` with `C` the cumulative probabilities.
pub fn systematic_allocate(n: usize, probs: &[f64; 8], u: f64) -> Result<[usize; 8], OctreeError> {
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(OctreeError::DegenerateProbs(*probs));
    }
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) {
        return Err(OctreeError::DegenerateProbs(*probs));
    }
    let mut counts = [0usize; 8];
    if n == 0 {
        return Ok(counts);
    }
    let nf = n as f64;
    let mut cum = 0.0;
    let mut prev = u.floor();
    for k in 0..8 {
        cum += probs[k];
        let edge = if k == 7 { nf + u } else { nf * (cum / total) + u };
        let cur = edge.floor();
        counts[k] = (cur - prev) as usize;
        prev = cur;
    }
    Ok(counts)
}

/// Sampled anchors with their leaves and leaf log-probabilities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnchorSet {
    pub positions: Vec<Vector3<f64>>,
    pub leaf_indices: Vec<CellPath>,
    pub log_prob: Vec<f64>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// How sampled leaves become continuous positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dequantize {
    /// Uniform within the leaf box.
    #[default]
    Uniform,
    /// Leaf center (deterministic; used by estimator tests).
    Center,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SamplingStats {
    /// Number of cells whose logits were evaluated.
    pub logit_evals: usize,
    /// Active cells summed over all levels (including leaves).
    pub active_cells: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SampleOptions {
    pub dequantize: Dequantize,
    pub parallel: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { dequantize: Dequantize::Uniform, parallel: true }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for one cell, keyed by path so that the stream does
/// not depend on visiting order or thread count.
fn cell_rng(base: u64, cell: &CellPath, salt: u64) -> ChaCha8Rng {
    let key = splitmix(base ^ splitmix(cell.code ^ ((cell.level as u64) << 58) ^ salt));
    ChaCha8Rng::seed_from_u64(key)
}

struct Active {
    cell: CellPath,
    count: usize,
    log_p: f64,
}

/// Batched ancestral sampling of `p` anchors, level by level over the active frontier.
pub fn sample_anchors<M: CellLogits>(model: &M, p: usize, rng: &mut impl RngCore) -> AnchorSet {
    sample_anchors_with(model, p, rng, SampleOptions::default()).0
}

pub fn sample_anchors_with<M: CellLogits>(
    model: &M,
    p: usize,
    rng: &mut impl RngCore,
    opts: SampleOptions,
) -> (AnchorSet, SamplingStats) {
    let base = rng.next_u64();
    let evals = AtomicUsize::new(0);
    let mut stats = SamplingStats::default();
    let mut frontier = vec![Active { cell: CellPath::ROOT, count: p, log_p: 0.0 }];
    if p == 0 {
        frontier.clear();
    }
    let expand = |a: &Active| -> Vec<Active> {
        evals.fetch_add(1, Ordering::Relaxed);
        let logits = model.logits(&a.cell);
        let probs = softmax(&logits);
        let logp = log_softmax(&logits);
        let u: f64 = cell_rng(base, &a.cell, 0).random();
        let counts = systematic_allocate(a.count, &probs, u).expect("softmax output is a distribution");
        (0..8u8)
            .filter(|&k| counts[k as usize] > 0)
            .map(|k| Active { cell: a.cell.child(k), count: counts[k as usize], log_p: a.log_p + logp[k as usize] })
            .collect()
    };
    for _ in 0..model.levels() {
        stats.active_cells += frontier.len();
        frontier = if opts.parallel && frontier.len() > 64 {
            frontier.par_iter().flat_map_iter(expand).collect()
        } else {
            frontier.iter().flat_map(expand).collect()
        };
    }
    stats.active_cells += frontier.len();
    stats.logit_evals = evals.into_inner();

    let domain = model.domain();
    let mut set = AnchorSet::default();
    for leaf in &frontier {
        let b = leaf.cell.bounds(&domain);
        let mut lrng = cell_rng(base, &leaf.cell, 1);
        for _ in 0..leaf.count {
            let pos = match opts.dequantize {
                Dequantize::Center => b.center(),
                Dequantize::Uniform => Vector3::new(
                    lrng.random_range(b.min[0]..b.max[0]),
                    lrng.random_range(b.min[1]..b.max[1]),
                    lrng.random_range(b.min[2]..b.max[2]),
                ),
            };
            set.positions.push(pos);
            set.leaf_indices.push(leaf.cell);
            set.log_prob.push(leaf.log_p);
        }
    }
    (set, stats)
}

/// Sparse gradient with respect to cell logits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogitGrads(pub BTreeMap<CellPath, [f64; 8]>);

impl LogitGrads {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entry(&mut self, cell: CellPath) -> &mut [f64; 8] {
        self.0.entry(cell).or_insert([0.0; 8])
    }

    pub fn get(&self, cell: &CellPath) -> [f64; 8] {
        self.0.get(cell).copied().unwrap_or([0.0; 8])
    }

    pub fn add_scaled(&mut self, other: &LogitGrads, s: f64) {
        for (cell, g) in &other.0 {
            let e = self.entry(*cell);
            for k in 0..8 {
                e[k] += s * g[k];
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.0.values_mut() {
            for v in g {
                *v *= s;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.values().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().flat_map(|g| g.iter()).all(|v| v.is_finite())
    }
}

/// Normalized histogram of points over the leaves of an octree.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetHistogram {
    pub levels: u8,
    pub weights: BTreeMap<CellPath, f64>,
    /// Points that fell outside the domain and were clamped onto it.
    pub clamped: usize,
}

impl TargetHistogram {
    /// Mass of every level-`l` cell (sum over its descendant leaves).
    pub fn marginal(&self, l: u8) -> BTreeMap<CellPath, f64> {
        let mut out = BTreeMap::new();
        for (leaf, w) in &self.weights {
            *out.entry(leaf.prefix(l)).or_insert(0.0) += w;
        }
        out
    }

    /// `-Σ p log p` over leaves.
    pub fn entropy(&self) -> f64 {
        self.weights.values().filter(|w| **w > 0.0).map(|w| -w * w.ln()).sum()
    }
}

pub fn histogram_from_points(
    points: &[Vector3<f64>],
    levels: u8,
    domain: &Aabb,
) -> Result<TargetHistogram, OctreeError> {
    if points.is_empty() {
        return Err(OctreeError::EmptyPointSet);
    }
    if levels == 0 || levels > MAX_LEVELS {
        return Err(OctreeError::BadLevels(levels));
    }
    let mut counts: BTreeMap<CellPath, usize> = BTreeMap::new();
    let mut clamped = 0;
    for p in points {
        let (leaf, c) = leaf_of(domain, levels, p);
        clamped += c as usize;
        *counts.entry(leaf).or_insert(0) += 1;
    }
    if clamped > 0 {
        log::warn!("{clamped} of {} points outside the domain were clamped", points.len());
    }
    let n = points.len() as f64;
    let weights = counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect();
    Ok(TargetHistogram { levels, weights, clamped })
}

/// Cross-entropy `−Σ_l Σ_{cells at l} p(cell) log q(cell | parent)` and its
/// gradient. Only parents with target mass receive gradient entries.
pub fn ce_loss<M: CellLogits + ?Sized>(model: &M, target: &TargetHistogram) -> (f64, LogitGrads) {
    assert_eq!(model.levels(), target.levels, "histogram depth must match the density");
    let mut loss = 0.0;
    let mut grads = LogitGrads::new();
    // child masses grouped by parent, level by level
    for l in 1..=model.levels() {
        let marg = target.marginal(l);
        let mut by_parent: BTreeMap<CellPath, [f64; 8]> = BTreeMap::new();
        for (cell, w) in marg {
            let parent = cell.parent().unwrap();
            by_parent.entry(parent).or_insert([0.0; 8])[cell.digit(l) as usize] += w;
        }
        for (parent, child_mass) in by_parent {
            let logits = model.logits(&parent);
            let logp = log_softmax(&logits);
            let q = softmax(&logits);
            let mass: f64 = child_mass.iter().sum();
            let g = grads.entry(parent);
            for k in 0..8 {
                if child_mass[k] > 0.0 {
                    loss -= child_mass[k] * logp[k];
                }
                g[k] += mass * q[k] - child_mass[k];
            }
        }
    }
    (loss, grads)
}

/// The same cross-entropy in joint form, `−Σ_leaf p(leaf) log q(leaf)`.
pub fn ce_loss_joint<M: CellLogits + ?Sized>(model: &M, target: &TargetHistogram) -> f64 {
    target
        .weights
        .iter()
        .filter(|(_, w)| **w > 0.0)
        .map(|(leaf, w)| -w * log_prob(model, leaf).expect("histogram leaves match the density depth"))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn enumerate_leaves(levels: u8) -> impl Iterator<Item = CellPath> {
        (0..8u64.pow(levels as u32)).map(move |code| CellPath { level: levels, code })
    }

    fn random_density(levels: u8, seed: u64) -> OctreeDensity {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = OctreeDensity::new(levels, Aabb::cube(1.0)).unwrap();
        for l in 0..levels {
            for code in 0..8u64.pow(l as u32) {
                if rng.random_bool(0.7) {
                    let mut lg = [0.0; 8];
                    for v in &mut lg {
                        *v = rng.random_range(-3.0..3.0);
                    }
                    d.set_logits(CellPath { level: l, code }, lg);
                }
            }
        }
        d
    }

    #[test]
    fn uniform_leaf_probability() {
        let d = OctreeDensity::new(2, Aabb::cube(1.0)).unwrap();
        for leaf in enumerate_leaves(2) {
            assert!((d.log_prob(&leaf).unwrap() - (1.0f64 / 64.0).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn single_level_softmax_value() {
        let mut d = OctreeDensity::new(1, Aabb::cube(1.0)).unwrap();
        let mut lg = [0.0; 8];
        lg[0] = 8f64.ln();
        d.set_logits(CellPath::ROOT, lg);
        let p = d.log_prob(&CellPath::from_digits(&[0]).unwrap()).unwrap().exp();
        assert!((p - 8.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn leaf_probabilities_sum_to_one() {
        for levels in 1..=4 {
            let d = random_density(levels, levels as u64);
            let total: f64 = enumerate_leaves(levels).map(|l| d.log_prob(&l).unwrap().exp()).sum();
            assert!((total - 1.0).abs() < 1e-9, "L={levels}: {total}");
        }
    }

    #[test]
    fn invalid_paths() {
        assert!(matches!(CellPath::from_digits(&[1, 9]), Err(OctreeError::InvalidPath(_))));
        let d = OctreeDensity::new(3, Aabb::cube(1.0)).unwrap();
        let short = CellPath::from_digits(&[1, 2]).unwrap();
        assert!(matches!(d.log_prob(&short), Err(OctreeError::InvalidPath(_))));
        assert!(OctreeDensity::new(0, Aabb::cube(1.0)).is_err());
    }

    #[test]
    fn path_digits_round_trip() {
        let p = CellPath::from_digits(&[3, 0, 7, 5]).unwrap();
        assert_eq!(p.digits(), vec![3, 0, 7, 5]);
        assert_eq!(p.prefix(2), CellPath::from_digits(&[3, 0]).unwrap());
        assert_eq!(p.parent().unwrap().child(5), p);
    }

    #[test]
    fn systematic_uniform_eight() {
        for i in 0..100 {
            let u = i as f64 / 100.0;
            assert_eq!(systematic_allocate(8, &[0.125; 8], u).unwrap(), [1; 8]);
        }
        assert_eq!(systematic_allocate(0, &[0.125; 8], 0.3).unwrap(), [0; 8]);
        let mut bad = [0.125; 8];
        bad[2] = -0.1;
        assert!(matches!(systematic_allocate(4, &bad, 0.5), Err(OctreeError::DegenerateProbs(_))));
    }

    proptest! {
        #[test]
        fn systematic_counts_bracket_expectation(
            raw in proptest::array::uniform8(0.0f64..1.0),
            n in 0usize..2000,
            u in 0.0f64..1.0,
        ) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let probs = raw.map(|v| v / total);
            let counts = systematic_allocate(n, &probs, u).unwrap();
            prop_assert_eq!(counts.iter().sum::<usize>(), n);
            for k in 0..8 {
                let e = n as f64 * probs[k];
                let c = counts[k] as f64;
                prop_assert!(c >= (e - 1e-9).floor() && c <= (e + 1e-9).ceil(), "k={} c={} e={}", k, c, e);
            }
        }
    }

    #[test]
    fn uniform_sampling_fills_every_leaf_once() {
        let d = OctreeDensity::new(2, Aabb::cube(1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = sample_anchors(&d, 64, &mut rng);
        let mut leaves = set.leaf_indices.clone();
        leaves.sort();
        leaves.dedup();
        assert_eq!(leaves.len(), 64);
    }

    #[test]
    fn peaked_density_puts_all_anchors_in_one_leaf() {
        let mut d = OctreeDensity::new(3, Aabb::cube(1.0)).unwrap();
        let path = [5u8, 2, 6];
        for l in 0..3 {
            let mut lg = [-20.0; 8];
            lg[path[l] as usize] = 20.0;
            d.set_logits(CellPath::from_digits(&path[..l]).unwrap(), lg);
        }
        let leaf = CellPath::from_digits(&path).unwrap();
        let b = leaf.bounds(&d.domain());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let set = sample_anchors(&d, 500, &mut rng);
        assert_eq!(set.len(), 500);
        for (p, l) in set.positions.iter().zip(&set.leaf_indices) {
            assert_eq!(*l, leaf);
            assert!(b.contains(p));
        }
    }

    #[test]
    fn anchor_log_probs_are_path_consistent() {
        let d = random_density(4, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (set, stats) = sample_anchors_with(&d, 300, &mut rng, SampleOptions::default());
        assert_eq!(set.len(), 300);
        for j in 0..set.len() {
            let lp = d.log_prob(&set.leaf_indices[j]).unwrap();
            assert!((lp - set.log_prob[j]).abs() < 1e-12);
            assert!(set.leaf_indices[j].bounds(&d.domain()).contains(&set.positions[j]));
        }
        let internal_active = stats.active_cells - {
            let mut l = set.leaf_indices.clone();
            l.dedup();
            l.len()
        };
        assert_eq!(stats.logit_evals, internal_active);
        assert!(stats.logit_evals <= 300usize.min(stats.active_cells) * 4);
    }

    #[test]
    fn sampling_is_thread_count_independent() {
        let d = random_density(4, 5);
        let serial = sample_anchors_with(
            &d,
            4000,
            &mut ChaCha8Rng::seed_from_u64(9),
            SampleOptions { parallel: false, ..Default::default() },
        );
        let parallel = sample_anchors_with(
            &d,
            4000,
            &mut ChaCha8Rng::seed_from_u64(9),
            SampleOptions { parallel: true, ..Default::default() },
        );
        assert_eq!(serial, parallel);
    }

    #[test]
    fn deterministic_dequantization_uses_centers() {
        let d = random_density(2, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (set, _) =
            sample_anchors_with(&d, 50, &mut rng, SampleOptions { dequantize: Dequantize::Center, parallel: false });
        for (p, l) in set.positions.iter().zip(&set.leaf_indices) {
            assert_eq!(*p, l.bounds(&d.domain()).center());
        }
    }

    #[test]
    fn histogram_single_leaf_and_uniform() {
        let dom = Aabb::cube(1.0);
        let pts = vec![Vector3::new(0.9, 0.9, 0.9); 10];
        let h = histogram_from_points(&pts, 2, &dom).unwrap();
        assert_eq!(h.weights.len(), 1);
        assert_eq!(*h.weights.values().next().unwrap(), 1.0);

        let mut pts = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    pts.push(Vector3::new(-0.75 + 0.5 * i as f64, -0.75 + 0.5 * j as f64, -0.75 + 0.5 * k as f64));
                }
            }
        }
        let h = histogram_from_points(&pts, 2, &dom).unwrap();
        assert_eq!(h.weights.len(), 64);
        assert!(h.weights.values().all(|w| (*w - 1.0 / 64.0).abs() < 1e-15));
        assert!(matches!(histogram_from_points(&[], 2, &dom), Err(OctreeError::EmptyPointSet)));
    }

    #[test]
    fn histogram_marginals_and_clamping() {
        let dom = Aabb::cube(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut pts: Vec<Vector3<f64>> = (0..500)
            .map(|_| {
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            })
            .collect();
        pts.push(Vector3::new(3.0, 0.0, 0.0));
        let h = histogram_from_points(&pts, 3, &dom).unwrap();
        assert_eq!(h.clamped, 1);
        assert!((h.weights.values().sum::<f64>() - 1.0).abs() < 1e-9);
        for l in 1..3 {
            let parent = h.marginal(l);
            let child = h.marginal(l + 1);
            for (cell, w) in &parent {
                let s: f64 = child.iter().filter(|(c, _)| c.prefix(l) == *cell).map(|(_, v)| v).sum();
                assert!((s - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ce_single_leaf_uniform_is_log64() {
        let d = OctreeDensity::new(2, Aabb::cube(1.0)).unwrap();
        let h = histogram_from_points(&[Vector3::new(0.1, 0.2, 0.3)], 2, &Aabb::cube(1.0)).unwrap();
        let (loss, _) = ce_loss(&d, &h);
        assert!((loss - 64f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_decomposition_matches_joint_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for levels in 1..=4u8 {
            let d = random_density(levels, 100 + levels as u64);
            let pts: Vec<Vector3<f64>> = (0..300)
                .map(|_| {
                    Vector3::new(rng.random_range(-1.0..0.2), rng.random_range(-1.0..1.0), rng.random_range(-0.5..1.0))
                })
                .collect();
            let h = histogram_from_points(&pts, levels, &d.domain()).unwrap();
            let (lvl, _) = ce_loss(&d, &h);
            let joint = ce_loss_joint(&d, &h);
            assert!((lvl - joint).abs() < 1e-10, "L={levels}: {lvl} vs {joint}");
        }
    }

    #[test]
    fn ce_at_factorized_optimum_equals_entropy() {
        // set every cell's logits to the log of its child masses
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let pts: Vec<Vector3<f64>> = (0..400)
            .map(|_| {
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..0.0), rng.random_range(-1.0..1.0))
            })
            .collect();
        let dom = Aabb::cube(1.0);
        let h = histogram_from_points(&pts, 3, &dom).unwrap();
        let mut d = OctreeDensity::new(3, dom).unwrap();
        for l in 1..=3 {
            let mut by_parent: BTreeMap<CellPath, [f64; 8]> = BTreeMap::new();
            for (cell, w) in h.marginal(l) {
                by_parent.entry(cell.parent().unwrap()).or_insert([0.0; 8])[cell.digit(l) as usize] += w;
            }
            for (parent, m) in by_parent {
                d.set_logits(parent, m.map(|v| if v > 0.0 { v.ln() } else { -60.0 }));
            }
        }
        let (loss, grads) = ce_loss(&d, &h);
        assert!((loss - h.entropy()).abs() < 1e-9);
        assert!(grads.norm() < 1e-9);
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let d = random_density(3, 15);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let pts: Vec<Vector3<f64>> = (0..200)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)))
            .collect();
        let h = histogram_from_points(&pts, 3, &d.domain()).unwrap();
        let (_, grads) = ce_loss(&d, &h);
        let eps = 1e-5;
        for (cell, g) in &grads.0 {
            for k in 0..8 {
                let mut dp = d.clone();
                dp.logits_mut(*cell)[k] += eps;
                let mut dm = d.clone();
                dm.logits_mut(*cell)[k] -= eps;
                let fd = (ce_loss_joint(&dp, &h) - ce_loss_joint(&dm, &h)) / (2.0 * eps);
                let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-2);
                assert!(rel < 1e-6, "{cell:?}[{k}]: {} vs {}", g[k], fd);
            }
        }
    }
}
