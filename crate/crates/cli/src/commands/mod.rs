mod model;
mod tools;

use crate::args::{Cli, Command, SceneArg};
use crate::error::{Classify, CliError, CliResult};
use octsplat::formats::load_scene_dir;
use octsplat::synth::{synth_scene, SCENE_NAMES};
use octsplat::trainer::{SceneSection, TargetSet};
use serde::de::DeserializeOwned;
use std::path::Path;

pub fn run(cli: Cli) -> CliResult {
    if cli.serial {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match cli.command {
        Command::Fit(a) => model::fit(a, cli.serial),
        Command::Eval(a) => model::eval(a, cli.serial),
        Command::Render(a) => model::render(a, cli.serial),
        Command::SampleAnchors(a) => model::sample_anchors(a, cli.serial),
        Command::Vecseq(a) => tools::vecseq(a, cli.serial),
        Command::FmToy(a) => tools::fm_toy(a, cli.serial),
        Command::OracleCheck(a) => tools::oracle_check(a, cli.serial),
    }
}

/// Reads a TOML config; missing files and unknown keys are validation errors.
fn read_toml<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).invalid(&format!("config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {}", path.display(), e.message())))
}

fn load_targets(scene: &SceneArg, section: &SceneSection) -> CliResult<TargetSet> {
    let path = Path::new(&scene.scene);
    if path.is_dir() {
        return load_scene_dir(path).invalid("scene");
    }
    if SCENE_NAMES.contains(&scene.scene.as_str()) {
        return synth_scene(&scene.scene, &section.synth_options()).invalid("scene");
    }
    Err(CliError::Validation(format!(
        "scene {:?} is neither a directory nor a built-in scene ({})",
        scene.scene,
        SCENE_NAMES.join(", ")
    )))
}

/// Creates the directory that will hold `out` and its sidecars.
fn prepare_out(out: &Path) -> CliResult {
    match out.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).failed(&format!("creating {}", dir.display()))
        }
        _ => Ok(()),
    }
}
