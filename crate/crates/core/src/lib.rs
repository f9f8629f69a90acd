//! Gaussian splat fitting driven by a learnable octree density.
//!
//! Anchor positions are drawn from an octree-factorized categorical density,
//! expanded into Gaussian primitives by a small decoder, rendered with a CPU
//! rasterizer, and the density is trained from per-anchor L1 contributions
//! computed inside the rasterizer's backward traversal. The `vecseq` and
//! `fm_toy` modules hold the canonical token serialization and a toy
//! flow-matching harness.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod decoder;
pub mod fixtures;
pub mod fm_toy;
pub mod formats;
pub mod gradcheck;
pub mod metrics;
pub mod octree;
pub mod optim;
pub mod raster;
pub mod splat;
pub mod synth;
pub mod trainer;
pub mod vecseq;

pub use control::{clamp_rewards, density_gradient, group_by_anchor, AnchorRewards, ControlError};
pub use decoder::{
    decode, decode_backward, offset_reg, volume_opacity_reg, DecoderConfig, DecoderError, DecoderParams,
};
pub use octree::{
    ce_loss, histogram_from_points, sample_anchors, Aabb, AnchorSet, CellLogits, CellPath, OctreeDensity, OctreeError,
    TargetHistogram,
};
pub use raster::{
    backward, backward_with_contributions, contribution_pass, leave_one_out_oracle, render, ContributionBuffer,
    ParamGrads, Precision, RasterError, RenderOutput, RenderSettings,
};
pub use splat::{alpha_at, project_gaussian, Camera, GaussianPrimitive, Image, Scene, Splat2D};
pub use vecseq::{fps, ot_assign, serialize, sobol3d, SerializedTokens, SobolAnchors, VecSeqError};
