//! Toy flow-matching trainer over synthetic point-token sets. A shared
//! per-token perceptron predicts the velocity `ε − x_0`; the reordered variant
//! serializes each set against Sobol anchors and adds their embedding; the
//! unordered variant shuffles rows and gets a zero embedding. Only the pairing
//! ambiguity is modeled; there is no attention and no conditioning.

use crate::optim::{AdamConfig, DenseAdam};
use crate::vecseq::{serialize, sobol3d, PeConfig, VecSeqError};
use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use thiserror::Error;

const CLUSTER_SIGMA: f64 = 0.05;
const CLUSTER_SEPARATION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum FmError {
    #[error("shape mismatch: {0} vs {1} values")]
    ShapeMismatch(usize, usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error(transparent)]
    VecSeq(#[from] VecSeqError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Reordered,
    Unordered,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Reordered => "reordered",
            Variant::Unordered => "unordered",
        })
    }
}

impl FromStr for Variant {
    type Err = FmError;

    fn from_str(s: &str) -> Result<Self, FmError> {
        match s {
            "reordered" => Ok(Variant::Reordered),
            "unordered" => Ok(Variant::Unordered),
            other => Err(FmError::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FmConfig {
    /// Tokens per asset.
    pub tokens: usize,
    /// Token width; 3 coordinates plus cluster features. Must be a multiple of 6.
    pub dim: usize,
    pub hidden: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub train_assets: usize,
    pub val_assets: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for FmConfig {
    fn default() -> Self {
        Self {
            tokens: 32,
            dim: 6,
            hidden: 64,
            steps: 600,
            batch: 8,
            lr: 3e-3,
            train_assets: 128,
            val_assets: 32,
            eval_every: 50,
            seed: 0,
            variant: Variant::Reordered,
        }
    }
}

impl FmConfig {
    pub fn validate(&self) -> Result<(), FmError> {
        for (name, v) in [
            ("tokens", self.tokens),
            ("hidden", self.hidden),
            ("batch", self.batch),
            ("train_assets", self.train_assets),
            ("val_assets", self.val_assets),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                return Err(FmError::Config(format!("{name} must be positive")));
            }
        }
        if self.dim < 6 || !self.dim.is_multiple_of(6) {
            return Err(FmError::Config(format!("dim must be a positive multiple of 6, got {}", self.dim)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(FmError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Mean of `(v − (ε − x_0))²` over all entries.
pub fn fm_loss(v: &[f64], x0: &[f64], eps: &[f64]) -> Result<f64, FmError> {
    Ok(fm_loss_grad(v, x0, eps)?.0)
}

/// [`fm_loss`] and its gradient with respect to `v`.
pub fn fm_loss_grad(v: &[f64], x0: &[f64], eps: &[f64]) -> Result<(f64, Vec<f64>), FmError> {
    if v.len() != x0.len() {
        return Err(FmError::ShapeMismatch(v.len(), x0.len()));
    }
    if v.len() != eps.len() {
        return Err(FmError::ShapeMismatch(v.len(), eps.len()));
    }
    let n = v.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = v
        .iter()
        .zip(x0.iter().zip(eps))
        .map(|(v, (x, e))| {
            let d = v - (e - x);
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// One synthetic asset: `tokens × dim` values, row-major, plus the points.
#[derive(Debug, Clone, PartialEq)]
pub struct Asset {
    pub points: Vec<Vector3<f64>>,
    pub tokens: Vec<f64>,
}

fn cluster_centers(rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let k = rng.random_range(3..=5);
    loop {
        let centers: Vec<Vector3<f64>> = (0..k)
            .map(|_| {
                Vector3::new(rng.random_range(0.15..0.85), rng.random_range(0.15..0.85), rng.random_range(0.15..0.85))
            })
            .collect();
        let separated = (0..k).all(|a| (a + 1..k).all(|b| (centers[a] - centers[b]).norm() >= CLUSTER_SEPARATION));
        if separated {
            return centers;
        }
    }
}

/// Points from a mixture of 3–5 well-separated clusters; each token holds the
/// point and its cluster's feature vector.
pub fn make_asset(rng: &mut ChaCha8Rng, tokens: usize, dim: usize) -> Asset {
    let centers = cluster_centers(rng);
    let features: Vec<Vec<f64>> =
        centers.iter().map(|_| (0..dim - 3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut points = Vec::with_capacity(tokens);
    let mut data = Vec::with_capacity(tokens * dim);
    for _ in 0..tokens {
        let c = rng.random_range(0..centers.len());
        let jitter = Vector3::from_fn(|_, _| CLUSTER_SIGMA * normal(rng));
        let p = (centers[c] + jitter).map(|v: f64| v.clamp(0.0, 1.0));
        points.push(p);
        data.extend_from_slice(p.as_slice());
        data.extend_from_slice(&features[c]);
    }
    Asset { points, tokens: data }
}

pub fn make_dataset(seed: u64, count: usize, tokens: usize, dim: usize) -> Vec<Asset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| make_asset(&mut rng, tokens, dim)).collect()
}

/// Row order for an asset: canonical (OT to Sobol anchors) or a uniform shuffle.
/// Row `j` of the arranged set is original row `order[j]`.
pub fn arrange(asset: &Asset, dim: usize, variant: Variant, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, FmError> {
    let m = asset.points.len();
    match variant {
        Variant::Reordered => {
            let rows: Vec<Vec<f64>> = asset.tokens.chunks(dim).map(<[f64]>::to_vec).collect();
            Ok(serialize(&rows, &asset.points, &sobol3d(m), &PeConfig::new(dim)?)?.order)
        }
        Variant::Unordered => {
            let mut perm: Vec<usize> = (0..m).collect();
            perm.shuffle(rng);
            Ok(perm)
        }
    }
}

pub fn permute_rows(data: &[f64], order: &[usize], dim: usize) -> Vec<f64> {
    order.iter().flat_map(|&i| data[i * dim..(i + 1) * dim].iter().copied()).collect()
}

/// Per-token perceptron `v = W2 tanh(W1 [x_t; t] + E pe + b1) + b2`. The
/// embedding projection `E` starts at zero, so a fresh model ignores `pe`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMlp {
    pub dim: usize,
    pub hidden: usize,
    pub weights: Vec<f64>,
}

struct Views<'a> {
    w1: &'a [f64],
    e: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
}

impl TokenMlp {
    pub fn init(dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let input = dim + 1;
        let mut weights = Vec::with_capacity(Self::count(dim, hidden));
        let s1 = 1.0 / (input as f64).sqrt();
        weights.extend((0..hidden * input).map(|_| s1 * normal(rng)));
        weights.extend(std::iter::repeat_n(0.0, hidden * dim + hidden));
        let s2 = 1.0 / (hidden as f64).sqrt();
        weights.extend((0..dim * hidden).map(|_| s2 * normal(rng)));
        weights.extend(std::iter::repeat_n(0.0, dim));
        Self { dim, hidden, weights }
    }

    fn count(dim: usize, hidden: usize) -> usize {
        hidden * (dim + 1) + hidden * dim + hidden + dim * hidden + dim
    }

    fn views(&self) -> Views<'_> {
        let (h, d) = (self.hidden, self.dim);
        let (w1, rest) = self.weights.split_at(h * (d + 1));
        let (e, rest) = rest.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(d * h);
        Views { w1, e, b1, w2, b2 }
    }

    /// Velocity for one token and the hidden activations.
    fn forward_token(&self, x: &[f64], pe: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
        let v = self.views();
        let (d, i) = (self.dim, self.dim + 1);
        let h: Vec<f64> = (0..self.hidden)
            .map(|k| {
                let row = &v.w1[k * i..(k + 1) * i];
                let erow = &v.e[k * d..(k + 1) * d];
                let z = row[..d].iter().zip(x).map(|(w, a)| w * a).sum::<f64>()
                    + row[d] * t
                    + erow.iter().zip(pe).map(|(w, a)| w * a).sum::<f64>()
                    + v.b1[k];
                z.tanh()
            })
            .collect();
        let out = (0..d)
            .map(|c| {
                v.w2[c * self.hidden..(c + 1) * self.hidden].iter().zip(&h).map(|(w, a)| w * a).sum::<f64>() + v.b2[c]
            })
            .collect();
        (out, h)
    }

    /// Velocities for every token of an `m × dim` input.
    pub fn forward(&self, x_t: &[f64], pe: &[f64], t: f64) -> Vec<f64> {
        x_t.chunks(self.dim).zip(pe.chunks(self.dim)).flat_map(|(x, p)| self.forward_token(x, p, t).0).collect()
    }

    /// Flow-matching loss on one set at time `t` and the weight gradient.
    pub fn loss_grad(&self, x0: &[f64], eps: &[f64], pe: &[f64], t: f64) -> Result<(f64, Vec<f64>), FmError> {
        if x0.len() != eps.len() {
            return Err(FmError::ShapeMismatch(x0.len(), eps.len()));
        }
        if x0.len() != pe.len() {
            return Err(FmError::ShapeMismatch(x0.len(), pe.len()));
        }
        let x_t: Vec<f64> = x0.iter().zip(eps).map(|(x, e)| (1.0 - t) * x + t * e).collect();
        let (d, hd, i) = (self.dim, self.hidden, self.dim + 1);
        let mut v = Vec::with_capacity(x0.len());
        let mut hidden = Vec::with_capacity(x0.len() / d * hd);
        for (x, p) in x_t.chunks(d).zip(pe.chunks(d)) {
            let (o, h) = self.forward_token(x, p, t);
            v.extend(o);
            hidden.extend(h);
        }
        let (loss, gv) = fm_loss_grad(&v, x0, eps)?;
        let w2 = self.views().w2;
        let mut g = vec![0.0; self.weights.len()];
        let (gw1, rest) = g.split_at_mut(hd * i);
        let (ge, rest) = rest.split_at_mut(hd * d);
        let (gb1, rest) = rest.split_at_mut(hd);
        let (gw2, gb2) = rest.split_at_mut(d * hd);
        for (tok, (x, p)) in x_t.chunks(d).zip(pe.chunks(d)).enumerate() {
            let h = &hidden[tok * hd..(tok + 1) * hd];
            let go = &gv[tok * d..(tok + 1) * d];
            for c in 0..d {
                gb2[c] += go[c];
                for k in 0..hd {
                    gw2[c * hd + k] += go[c] * h[k];
                }
            }
            for k in 0..hd {
                let gh: f64 = (0..d).map(|c| go[c] * w2[c * hd + k]).sum();
                let gz = gh * (1.0 - h[k] * h[k]);
                gb1[k] += gz;
                let row = &mut gw1[k * i..(k + 1) * i];
                for (r, a) in row.iter_mut().zip(x) {
                    *r += gz * a;
                }
                row[d] += gz * t;
                for (r, a) in ge[k * d..(k + 1) * d].iter_mut().zip(p) {
                    *r += gz * a;
                }
            }
        }
        Ok((loss, g))
    }
}

/// One point of the loss curves; `train` averages the steps since the previous row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub step: usize,
    pub train: f64,
    pub val: f64,
}

pub const CURVE_HEADER: &str = "step,train_loss,val_loss";

#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    pub variant: Variant,
    pub rows: Vec<CurveRow>,
}

impl Curves {
    pub fn final_val(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.val)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CURVE_HEADER}")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.step, r.train, r.val)?;
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn draw_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// A set in its training order, with the row permutation that produced it.
struct Arranged {
    x0: Vec<f64>,
    order: Vec<usize>,
}

/// Noise is drawn per original row and permuted with the tokens, so both
/// variants see the same (token, noise) pairs.
struct Case {
    x0: Vec<f64>,
    eps: Vec<f64>,
    t: f64,
}

fn case(set: &Arranged, dim: usize, rng: &mut ChaCha8Rng) -> Case {
    let eps = permute_rows(&draw_noise(rng, set.x0.len()), &set.order, dim);
    Case { x0: set.x0.clone(), eps, t: rng.random() }
}

/// Trains the toy model. Initialization, batch indices and noise depend only
/// on the seed, so the two variants differ only in row order and `pe`.
pub fn train_toy(cfg: &FmConfig) -> Result<Curves, FmError> {
    cfg.validate()?;
    let (m, d) = (cfg.tokens, cfg.dim);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa11a);
    let mut prepare = |assets: Vec<Asset>| -> Result<Vec<Arranged>, FmError> {
        assets
            .iter()
            .map(|a| {
                let order = arrange(a, d, cfg.variant, &mut shuffle_rng)?;
                Ok(Arranged { x0: permute_rows(&a.tokens, &order, d), order })
            })
            .collect()
    };
    let train = prepare(make_dataset(cfg.seed, cfg.train_assets, m, d))?;
    let val = prepare(make_dataset(cfg.seed ^ 0x7a1, cfg.val_assets, m, d))?;

    let pe: Vec<f64> = match cfg.variant {
        Variant::Reordered => {
            let pc = PeConfig::new(d)?;
            sobol3d(m).points.iter().flat_map(|s| pc.embed(s)).collect()
        }
        Variant::Unordered => vec![0.0; m * d],
    };

    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5a1);
    let val_cases: Vec<Case> = val.iter().map(|set| case(set, d, &mut val_rng)).collect();
    let validate = |model: &TokenMlp| -> Result<f64, FmError> {
        let mut total = 0.0;
        for c in &val_cases {
            total += model.loss_grad(&c.x0, &c.eps, &pe, c.t)?.0;
        }
        Ok(total / val_cases.len() as f64)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = TokenMlp::init(d, cfg.hidden, &mut rng);
    let mut opt = DenseAdam::new(AdamConfig::with_lr(cfg.lr), model.weights.len());
    let initial = validate(&model)?;
    let mut rows = vec![CurveRow { step: 0, train: initial, val: initial }];
    let (mut running, mut since) = (0.0, 0usize);
    for step in 1..=cfg.steps {
        let mut grad = vec![0.0; model.weights.len()];
        let mut loss = 0.0;
        for _ in 0..cfg.batch {
            let set = &train[rng.random_range(0..train.len())];
            let c = case(set, d, &mut rng);
            let (l, g) = model.loss_grad(&c.x0, &c.eps, &pe, c.t)?;
            loss += l / cfg.batch as f64;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b / cfg.batch as f64;
            }
        }
        if !loss.is_finite() {
            return Err(FmError::NonFiniteLoss { step });
        }
        opt.step(&mut model.weights, &grad);
        running += loss;
        since += 1;
        if step % cfg.eval_every == 0 || step == cfg.steps {
            rows.push(CurveRow { step, train: running / since as f64, val: validate(&model)? });
            (running, since) = (0.0, 0);
        }
    }
    Ok(Curves { variant: cfg.variant, rows })
}
