//! Three-stage fitting of an octree density and anchor decoder to a set of
//! posed target images.
//!
//! Stage 1 trains the density alone on the surface-point histogram. Stage 2
//! trains the decoder at a fixed anchor budget. Stage 3 trains both, with a
//! random budget per iteration and, unless disabled, the contribution rewards
//! feeding back into the density.

use crate::control::{clamp_rewards, density_gradient, group_by_anchor, ControlError};
use crate::decoder::{
    decode, decode_backward, offset_reg, volume_opacity_reg, DecoderConfig, DecoderError, DecoderParams,
};
use crate::metrics::{psnr, render_loss, ssim, MetricError};
use crate::octree::{
    ce_loss, histogram_from_points, log_prob, sample_anchors, sample_anchors_with, Aabb, AnchorSet, Dequantize,
    OctreeDensity, OctreeError, SampleOptions, TargetHistogram, MAX_LEVELS,
};
use crate::optim::{AdamConfig, DenseAdam, SparseAdam};
use crate::raster::{backward_with_contributions, render, ParamGrads, RasterError, RenderSettings};
use crate::splat::{Camera, Image};
use nalgebra::Vector3;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("need at least 2 target views, got {0}")]
    TooFewViews(usize),
    #[error("view {0}: image does not match its camera")]
    ViewMismatch(usize),
    #[error("non-finite loss at stage {stage} iteration {iter}: {diagnostics}")]
    NonFiniteLoss { stage: u8, iter: usize, diagnostics: String },
    #[error(transparent)]
    Octree(#[from] OctreeError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_struct: f64,
    pub lambda_render: f64,
    pub lambda_reg: f64,
    /// Must stay 0; there is no latent posterior to regularize.
    pub lambda_kl: f64,
    pub lambda_ssim: f64,
    /// Must stay 0; no perceptual network is bundled.
    pub lambda_lpips: f64,
    pub lambda_volume: f64,
    pub lambda_opacity: f64,
    pub lambda_offset: f64,
    pub gamma: f64,
    /// Feed contribution rewards back into the density during stage 3.
    pub reward_feedback: bool,
    /// Divide rewards by the anchor count before weighting.
    pub normalize_rewards: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_struct: 1.0,
            lambda_render: 1.0,
            lambda_reg: 1.0,
            lambda_kl: 0.0,
            lambda_ssim: 0.2,
            lambda_lpips: 0.0,
            lambda_volume: 1e-3,
            lambda_opacity: 1e-3,
            lambda_offset: 0.1,
            gamma: 0.5,
            reward_feedback: true,
            normalize_rewards: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetConfig {
    pub levels: u8,
    pub k: usize,
    pub p_min: usize,
    pub p_max: usize,
    pub stage2_p: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self { levels: 5, k: 4, p_min: 64, p_max: 1024, stage2_p: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub stage3_iters: usize,
    pub views_per_iter: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self { stage1_iters: 300, stage2_iters: 300, stage3_iters: 600, views_per_iter: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr_decoder: f64,
    pub lr_logits: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr_decoder: 3e-3, lr_logits: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderSection {
    pub fourier_bands: usize,
    pub hidden: [usize; 2],
    /// Defaults to twice the leaf edge.
    pub offset_scale: Option<f64>,
    /// Defaults to the log of half the leaf edge.
    pub log_scale_base: Option<f64>,
    pub opacity_bias: f64,
}

impl Default for DecoderSection {
    fn default() -> Self {
        Self { fourier_bands: 4, hidden: [64, 64], offset_scale: None, log_scale_base: None, opacity_bias: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub image_size: u32,
    pub cameras: usize,
    pub surface_points: usize,
    /// Seed of the procedural reference scene, independent of `run.seed`.
    pub seed: u64,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self { image_size: 48, cameras: 12, surface_points: 20_000, seed: 0 }
    }
}

impl SceneSection {
    pub fn synth_options(&self) -> crate::synth::SynthOptions {
        crate::synth::SynthOptions {
            image_size: self.image_size,
            cameras: self.cameras,
            surface_points: self.surface_points,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Single-threaded rendering and decoding.
    pub serial: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub loss: LossConfig,
    pub budget: BudgetConfig,
    pub stages: StageConfig,
    pub optim: OptimConfig,
    pub decoder: DecoderSection,
    pub scene: SceneSection,
    pub run: RunConfig,
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let l = &self.loss;
        if l.lambda_kl != 0.0 {
            return Err(TrainError::Config("loss.lambda_kl must be 0: the KL term is not implemented".into()));
        }
        if l.lambda_lpips != 0.0 {
            return Err(TrainError::Config("loss.lambda_lpips must be 0: LPIPS is not implemented".into()));
        }
        let weights = [
            ("lambda_struct", l.lambda_struct),
            ("lambda_render", l.lambda_render),
            ("lambda_reg", l.lambda_reg),
            ("lambda_ssim", l.lambda_ssim),
            ("lambda_volume", l.lambda_volume),
            ("lambda_opacity", l.lambda_opacity),
            ("lambda_offset", l.lambda_offset),
            ("gamma", l.gamma),
        ];
        for (name, v) in weights {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TrainError::Config(format!("loss.{name} must be finite and nonnegative, got {v}")));
            }
        }
        let b = &self.budget;
        if b.levels == 0 || b.levels > MAX_LEVELS {
            return Err(TrainError::Config(format!("budget.levels must be in 1..={MAX_LEVELS}")));
        }
        if b.k == 0 {
            return Err(TrainError::Config("budget.k must be at least 1".into()));
        }
        if b.p_min == 0 || b.p_min > b.p_max {
            return Err(TrainError::Config(format!("budget needs 1 <= p_min <= p_max, got {}..{}", b.p_min, b.p_max)));
        }
        if b.stage2_p == 0 {
            return Err(TrainError::Config("budget.stage2_p must be at least 1".into()));
        }
        if self.stages.views_per_iter == 0 {
            return Err(TrainError::Config("stages.views_per_iter must be at least 1".into()));
        }
        for (name, v) in [("lr_decoder", self.optim.lr_decoder), ("lr_logits", self.optim.lr_logits)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(TrainError::Config(format!("optim.{name} must be positive, got {v}")));
            }
        }
        self.decoder_config(&Aabb::cube(1.0)).validate()?;
        Ok(())
    }

    pub fn decoder_config(&self, domain: &Aabb) -> DecoderConfig {
        let mut c = DecoderConfig::for_octree(self.budget.levels, domain, self.budget.k);
        c.fourier_bands = self.decoder.fourier_bands;
        c.hidden = self.decoder.hidden;
        if let Some(s) = self.decoder.offset_scale {
            c.offset_scale = s;
        }
        if let Some(s) = self.decoder.log_scale_base {
            c.log_scale_base = s;
        }
        c.opacity_bias = self.decoder.opacity_bias;
        c
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings { parallel: !self.run.serial, ..RenderSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub name: String,
    pub views: Vec<View>,
    /// Surface samples supervising the density.
    pub points: Vec<Vector3<f64>>,
    pub background: Vector3<f64>,
    pub domain: Aabb,
}

impl TargetSet {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.views.len() < 2 {
            return Err(TrainError::TooFewViews(self.views.len()));
        }
        for (i, v) in self.views.iter().enumerate() {
            if !v.image.matches(&v.camera) {
                return Err(TrainError::ViewMismatch(i));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub density: OctreeDensity,
    pub decoder: DecoderParams,
    pub background: Vector3<f64>,
}

/// One row of the training log. `total` is
/// `λ_struct·ce + λ_render·(render + surrogate) + λ_reg·reg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub stage: u8,
    pub p: usize,
    pub ce: f64,
    pub render: f64,
    pub surrogate: f64,
    pub reg: f64,
    pub total: f64,
    pub psnr: f64,
}

pub const LOG_HEADER: &str = "iter,stage,p,ce,render,surrogate,reg,total,psnr";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitLog {
    pub rows: Vec<LogRow>,
    /// Iterations whose logit update included the reward term.
    pub reward_updates: usize,
    /// Iterations whose logit update included the cross-entropy term.
    pub ce_updates: usize,
    pub decoder_updates: usize,
}

impl FitLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{LOG_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.iter, r.stage, r.p, r.ce, r.render, r.surrogate, r.reg, r.total, r.psnr
            )?;
        }
        Ok(())
    }
}

/// Observer called after every iteration (progress reporting).
pub trait FitObserver {
    fn on_row(&mut self, _row: &LogRow) {}
}

impl FitObserver for () {}

struct StepTerms {
    render: f64,
    psnr: f64,
    reg: f64,
    weight_grads: Vec<f64>,
    /// Per-anchor raw rewards averaged over the rendered views.
    rewards: Vec<f64>,
}

/// Runs the curriculum and returns the fitted model and its log.
pub fn fit(cfg: &FitConfig, targets: &TargetSet) -> Result<(FittedModel, FitLog), TrainError> {
    fit_observed(cfg, targets, &mut ())
}

pub fn fit_observed(
    cfg: &FitConfig,
    targets: &TargetSet,
    observer: &mut dyn FitObserver,
) -> Result<(FittedModel, FitLog), TrainError> {
    cfg.validate()?;
    targets.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let hist = histogram_from_points(&targets.points, cfg.budget.levels, &targets.domain)?;
    let mut density = OctreeDensity::new(cfg.budget.levels, targets.domain)?;
    let mut decoder = DecoderParams::init(cfg.decoder_config(&targets.domain), targets.domain, &mut rng)?;
    let mut logit_opt = SparseAdam::new(AdamConfig::with_lr(cfg.optim.lr_logits));
    let mut dec_opt = DenseAdam::new(AdamConfig::with_lr(cfg.optim.lr_decoder), decoder.weights.len());
    let mut log = FitLog::default();
    let l = &cfg.loss;
    let settings = cfg.render_settings();

    let mut iter = 0;
    let stages = [(1u8, cfg.stages.stage1_iters), (2, cfg.stages.stage2_iters), (3, cfg.stages.stage3_iters)];
    for (stage, iters) in stages {
        for _ in 0..iters {
            let (ce, mut logit_grads) = ce_loss(&density, &hist);
            logit_grads.scale(l.lambda_struct);
            let mut row =
                LogRow { iter, stage, p: 0, ce, render: 0.0, surrogate: 0.0, reg: 0.0, total: 0.0, psnr: 0.0 };
            if stage > 1 {
                let p = if stage == 2 {
                    cfg.budget.stage2_p
                } else {
                    rng.random_range(cfg.budget.p_min..=cfg.budget.p_max)
                };
                row.p = p;
                let anchors = sample_anchors_with(
                    &density,
                    p,
                    &mut rng,
                    SampleOptions { dequantize: Dequantize::Uniform, parallel: !cfg.run.serial },
                )
                .0;
                let view_ids =
                    sample_indices(&mut rng, targets.views.len(), cfg.stages.views_per_iter.min(targets.views.len()))
                        .into_vec();
                let feedback = stage == 3 && l.reward_feedback;
                let terms = render_step(cfg, targets, &decoder, &anchors, &view_ids, &settings)?;
                row.render = terms.render;
                row.psnr = terms.psnr;
                row.reg = terms.reg;
                if feedback {
                    let mut rewards = clamp_rewards(&terms.rewards);
                    if l.normalize_rewards {
                        for r in &mut rewards {
                            *r /= p as f64;
                        }
                    }
                    let g = density_gradient(&anchors, &rewards, &density)?;
                    row.surrogate = rewards.iter().zip(&anchors.log_prob).map(|(r, lp)| r * lp).sum();
                    logit_grads.add_scaled(&g, l.lambda_render);
                    log.reward_updates += 1;
                }
                if terms.weight_grads.iter().any(|g| !g.is_finite()) {
                    return Err(non_finite(stage, iter, &row, "decoder gradient"));
                }
                dec_opt.step(&mut decoder.weights, &terms.weight_grads);
                log.decoder_updates += 1;
            }
            row.total =
                l.lambda_struct * row.ce + l.lambda_render * (row.render + row.surrogate) + l.lambda_reg * row.reg;
            if !row.total.is_finite() || !logit_grads.is_finite() {
                return Err(non_finite(stage, iter, &row, "loss or logit gradient"));
            }
            logit_opt.step(&mut density, &logit_grads);
            log.ce_updates += 1;
            observer.on_row(&row);
            log.rows.push(row);
            iter += 1;
        }
    }
    Ok((FittedModel { density, decoder, background: targets.background }, log))
}

fn non_finite(stage: u8, iter: usize, row: &LogRow, what: &str) -> TrainError {
    let mut d = String::new();
    let _ = write!(
        d,
        "{what} not finite (ce={}, render={}, surrogate={}, reg={}, total={}, p={})",
        row.ce, row.render, row.surrogate, row.reg, row.total, row.p
    );
    TrainError::NonFiniteLoss { stage, iter, diagnostics: d }
}

/// Renders the selected views, accumulates decoder gradients of
/// `λ_render·render + λ_reg·reg`, and the per-anchor raw rewards averaged over views.
fn render_step(
    cfg: &FitConfig,
    targets: &TargetSet,
    decoder: &DecoderParams,
    anchors: &AnchorSet,
    view_ids: &[usize],
    settings: &RenderSettings,
) -> Result<StepTerms, TrainError> {
    let l = &cfg.loss;
    let decoded = decode(anchors, decoder, targets.background);
    let scene = &decoded.scene;
    let anchor_of = scene.anchor_of.as_deref().expect("decode sets anchor_of");
    let nv = view_ids.len() as f64;
    let mut grads = ParamGrads::zeros(scene.len());
    let mut raw = vec![0.0; anchors.len()];
    let mut render_total = 0.0;
    let mut psnr_total = 0.0;
    for &v in view_ids {
        let view = &targets.views[v];
        let out = render(scene, &view.camera, settings);
        let (loss, mut grad_img) = render_loss(&out.image, &view.image, l.lambda_ssim)?;
        for g in &mut grad_img.data {
            *g *= l.lambda_render / nv;
        }
        let (g, contrib) = backward_with_contributions(scene, &view.camera, &out, &grad_img, &view.image)?;
        grads.add_scaled(&g, 1.0);
        let per_anchor = group_by_anchor(&contrib, anchor_of, anchors.len())?;
        for (r, d) in raw.iter_mut().zip(per_anchor) {
            *r += d / nv;
        }
        render_total += loss / nv;
        psnr_total += psnr(&out.image, &view.image)? / nv;
    }

    let (vol, vol_grads) = volume_opacity_reg(scene, l.lambda_volume, l.lambda_opacity);
    grads.add_scaled(&vol_grads, l.lambda_reg);
    let (off, off_grads) = offset_reg(anchors, &decoded.offsets, decoder.k(), l.gamma)?;
    for (c, g) in grads.center.iter_mut().zip(&off_grads) {
        *c += g * (l.lambda_reg * l.lambda_offset);
    }
    let weight_grads = decode_backward(anchors, decoder, &grads)?;
    Ok(StepTerms {
        render: render_total,
        psnr: psnr_total,
        reg: vol + l.lambda_offset * off,
        weight_grads,
        rewards: raw,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Renders `model` from every target view with `p` anchors sampled under `seed`.
pub fn evaluate(
    model: &FittedModel,
    targets: &TargetSet,
    p: usize,
    seed: u64,
    settings: &RenderSettings,
) -> Result<EvalReport, TrainError> {
    let scene = decode_model(model, p, seed).scene;
    let mut report = EvalReport { psnr: Vec::new(), ssim: Vec::new(), mean_psnr: 0.0, mean_ssim: 0.0 };
    for view in &targets.views {
        let img = render(&scene, &view.camera, settings).image;
        report.psnr.push(psnr(&img, &view.image)?);
        report.ssim.push(ssim(&img, &view.image)?.0);
    }
    let n = targets.views.len().max(1) as f64;
    report.mean_psnr = report.psnr.iter().sum::<f64>() / n;
    report.mean_ssim = report.ssim.iter().sum::<f64>() / n;
    Ok(report)
}

/// Samples `p` anchors under `seed` and decodes them into primitives.
pub fn decode_model(model: &FittedModel, p: usize, seed: u64) -> crate::decoder::Decoded {
    let anchors = sample_anchors(&model.density, p, &mut ChaCha8Rng::seed_from_u64(seed));
    decode(&anchors, &model.decoder, model.background)
}

/// `Σ |p(leaf) − q(leaf)|` over the leaves carrying target mass.
pub fn histogram_gap(model: &OctreeDensity, hist: &TargetHistogram) -> f64 {
    hist.weights.iter().map(|(leaf, w)| (w - log_prob(model, leaf).map(f64::exp).unwrap_or(0.0)).abs()).sum()
}
