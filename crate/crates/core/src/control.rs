//! Per-anchor rewards and the score-function gradient for the density logits.

use crate::octree::{softmax, AnchorSet, CellLogits, LogitGrads};
use crate::raster::ContributionBuffer;
use std::io::{self, Write};
use thiserror::Error;

/// Fraction of the lowest rewards raised to the threshold.
pub const CLAMP_QUANTILE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("primitive {primitive} maps to anchor {anchor} but only {anchors} anchors exist")]
    UnmappedPrimitive { primitive: usize, anchor: usize, anchors: usize },
    #[error("anchor map has {map} entries for {primitives} primitives")]
    MapLength { map: usize, primitives: usize },
    #[error("anchor {anchor} has a {found}-level path but the density has {expected} levels")]
    StaleAnchors { anchor: usize, found: u8, expected: u8 },
    #[error("{rewards} rewards for {anchors} anchors")]
    RewardCount { rewards: usize, anchors: usize },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnchorRewards {
    pub raw: Vec<f64>,
    pub clamped: Vec<f64>,
}

impl AnchorRewards {
    pub fn from_raw(raw: Vec<f64>) -> Self {
        let clamped = clamp_rewards(&raw);
        Self { raw, clamped }
    }

    /// Writes `anchor,raw,clamped,log_prob` rows.
    pub fn write_csv<W: Write>(&self, anchors: &AnchorSet, mut w: W) -> io::Result<()> {
        writeln!(w, "anchor,raw,clamped,log_prob")?;
        for j in 0..self.raw.len() {
            let lp = anchors.log_prob.get(j).copied().unwrap_or(f64::NAN);
            writeln!(w, "{j},{},{},{lp}", self.raw[j], self.clamped[j])?;
        }
        Ok(())
    }
}

/// Sums per-primitive contributions into per-anchor rewards.
pub fn group_by_anchor(
    contrib: &ContributionBuffer,
    anchor_of: &[usize],
    anchors: usize,
) -> Result<Vec<f64>, ControlError> {
    if anchor_of.len() != contrib.delta_l1.len() {
        return Err(ControlError::MapLength { map: anchor_of.len(), primitives: contrib.delta_l1.len() });
    }
    let mut raw = vec![0.0; anchors];
    for (i, (&a, &d)) in anchor_of.iter().zip(&contrib.delta_l1).enumerate() {
        if a >= anchors {
            return Err(ControlError::UnmappedPrimitive { primitive: i, anchor: a, anchors });
        }
        raw[a] += d;
    }
    Ok(raw)
}

/// Quantile `q` of `values` by linear interpolation between order statistics
/// at rank `q (n - 1)`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Raises every value to at least `threshold` and sets positives to zero.
pub fn clamp_at(raw: &[f64], threshold: f64) -> Vec<f64> {
    raw.iter().map(|&r| r.max(threshold).min(0.0)).collect()
}

/// Raises the lowest tenth of rewards to the 10th percentile and zeroes
/// positive rewards.
pub fn clamp_rewards(raw: &[f64]) -> Vec<f64> {
    if raw.is_empty() {
        return Vec::new();
    }
    clamp_at(raw, quantile(raw, CLAMP_QUANTILE))
}

/// `Σ_j reward_j ∇ log q(leaf_j)` over the logits of every cell on the sampled paths.
pub fn density_gradient<M: CellLogits + ?Sized>(
    anchors: &AnchorSet,
    rewards: &[f64],
    model: &M,
) -> Result<LogitGrads, ControlError> {
    if rewards.len() != anchors.len() {
        return Err(ControlError::RewardCount { rewards: rewards.len(), anchors: anchors.len() });
    }
    let levels = model.levels();
    let mut grads = LogitGrads::new();
    for (j, (leaf, &r)) in anchors.leaf_indices.iter().zip(rewards).enumerate() {
        if leaf.level != levels {
            return Err(ControlError::StaleAnchors { anchor: j, found: leaf.level, expected: levels });
        }
        if r == 0.0 {
            continue;
        }
        for l in 1..=levels {
            let parent = leaf.prefix(l - 1);
            let q = softmax(&model.logits(&parent));
            let k = leaf.digit(l) as usize;
            let g = grads.entry(parent);
            for c in 0..8 {
                g[c] -= r * q[c];
            }
            g[k] += r;
        }
    }
    Ok(grads)
}

/// Rewards of the plain estimator: every anchor is credited with the total loss.
pub fn plain_rewards(total_loss: f64, anchors: usize) -> Vec<f64> {
    vec![total_loss; anchors]
}
