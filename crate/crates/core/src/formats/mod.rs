//! File formats: images (PNG, PFM), point clouds (ASCII PLY), model
//! checkpoints (DEGD with an embedded DEGA decoder section), camera JSON and
//! the scene directory text format.

mod checkpoint;
mod image;
mod ply;
mod scene;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use image::{read_pfm, read_png, write_pfm, write_png};
pub use ply::{read_ply, write_anchor_ply, write_points_ply, PointCloud};
pub use scene::{load_scene_dir, read_camera_json, write_camera_json, write_scene_dir, SCENE_FILE};

use crate::octree::{sample_anchors_with, AnchorSet, SampleOptions};
use crate::trainer::FittedModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
}

impl FormatError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn invalid(path: &Path, msg: impl Into<String>) -> Self {
        Self::Invalid { path: path.to_path_buf(), msg: msg.into() }
    }

    pub(crate) fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Self::Parse { path: path.to_path_buf(), line, msg: msg.into() }
    }
}

/// Samples `p` anchors from the model's density under `seed` and writes them
/// as an ASCII PLY with a `log_prob` vertex property.
pub fn export_anchors(
    model: &FittedModel,
    p: usize,
    seed: u64,
    opts: SampleOptions,
    path: &Path,
) -> Result<AnchorSet, FormatError> {
    let (anchors, _) = sample_anchors_with(&model.density, p, &mut ChaCha8Rng::seed_from_u64(seed), opts);
    write_anchor_ply(path, &anchors.positions, &anchors.log_prob)?;
    Ok(anchors)
}
