use super::{load_targets, prepare_out, read_toml};
use crate::args::{DequantizeArg, EvalArgs, FitArgs, RenderArgs, SampleArgs};
use crate::error::{Classify, CliError, CliResult};
use crate::manifest::{sidecar, RunManifest};
use octsplat::formats::{export_anchors, read_camera_json, read_checkpoint, write_checkpoint, write_pfm, write_png};
use octsplat::octree::{Dequantize, SampleOptions};
use octsplat::trainer::{decode_model, evaluate, fit as fit_model, FitConfig, SceneSection, TrainError};
use octsplat::{render as render_scene, RenderSettings};
use std::io::Write;

fn settings(serial: bool) -> RenderSettings {
    RenderSettings { parallel: !serial, ..RenderSettings::default() }
}

pub fn fit(a: FitArgs, serial: bool) -> CliResult {
    let mut cfg: FitConfig = read_toml(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.run.seed = seed;
    }
    cfg.run.serial |= serial;
    cfg.validate().invalid("config")?;
    let targets = load_targets(&a.scene, &cfg.scene)?;
    targets.validate().invalid("scene")?;
    let log_path = sidecar(&a.out, "log.csv");
    prepare_out(&a.out)?;
    let mut manifest = RunManifest::new("fit", cfg.run.seed, cfg.run.serial).config(&cfg).input(&a.config)?;
    if std::path::Path::new(&a.scene.scene).is_dir() {
        manifest = manifest.input(std::path::Path::new(&a.scene.scene))?;
    }
    manifest.output(&a.out).output(&log_path).write(&sidecar(&a.out, "manifest.json"))?;

    let (model, log) = fit_model(&cfg, &targets).map_err(|e| match e {
        TrainError::Config(_) | TrainError::TooFewViews(_) | TrainError::ViewMismatch(_) => {
            CliError::Validation(e.to_string())
        }
        other => CliError::Runtime(other.into()),
    })?;
    write_checkpoint(&model, &a.out).failed("writing checkpoint")?;
    let mut f = std::fs::File::create(&log_path).failed("creating log")?;
    log.write_csv(&mut f).failed("writing log")?;
    if let Some(last) = log.rows.last() {
        println!(
            "iterations {}  final ce {:.4}  render {:.4}  psnr {:.2}",
            log.rows.len(),
            last.ce,
            last.render,
            last.psnr
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn eval(a: EvalArgs, serial: bool) -> CliResult {
    let section = match &a.config {
        Some(p) => read_toml::<FitConfig>(p)?.scene,
        None => SceneSection::default(),
    };
    let model = read_checkpoint(&a.ckpt).invalid("checkpoint")?;
    let targets = load_targets(&a.scene, &section)?;
    if let Some(out) = &a.out {
        prepare_out(out)?;
        RunManifest::new("eval", a.seed, serial)
            .config(&section)
            .input(&a.ckpt)?
            .output(out)
            .write(&sidecar(out, "manifest.json"))?;
    }
    let report = evaluate(&model, &targets, a.budget, a.seed, &settings(serial)).failed("evaluation")?;
    let mut csv = String::from("view,psnr,ssim\n");
    for (i, (p, s)) in report.psnr.iter().zip(&report.ssim).enumerate() {
        csv.push_str(&format!("{i},{p},{s}\n"));
    }
    csv.push_str(&format!("mean,{},{}\n", report.mean_psnr, report.mean_ssim));
    match &a.out {
        Some(out) => std::fs::write(out, &csv).failed("writing report")?,
        None => std::io::stdout().write_all(csv.as_bytes()).failed("writing report")?,
    }
    eprintln!("P={} mean PSNR {:.3} dB, mean SSIM {:.4}", a.budget, report.mean_psnr, report.mean_ssim);
    Ok(())
}

pub fn render(a: RenderArgs, serial: bool) -> CliResult {
    let model = read_checkpoint(&a.ckpt).invalid("checkpoint")?;
    let camera = read_camera_json(&a.camera_json).invalid("camera")?;
    let pfm = a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm"));
    prepare_out(&a.out)?;
    RunManifest::new("render", a.seed, serial)
        .input(&a.ckpt)?
        .input(&a.camera_json)?
        .output(&a.out)
        .write(&sidecar(&a.out, "manifest.json"))?;
    let scene = decode_model(&model, a.budget, a.seed).scene;
    let image = render_scene(&scene, &camera, &settings(serial)).image;
    if pfm {
        write_pfm(&image, &a.out).failed("writing image")?;
    } else {
        write_png(&image, &a.out).failed("writing image")?;
    }
    println!("wrote {} ({} primitives)", a.out.display(), scene.len());
    Ok(())
}

pub fn sample_anchors(a: SampleArgs, serial: bool) -> CliResult {
    let model = read_checkpoint(&a.ckpt).invalid("checkpoint")?;
    prepare_out(&a.out)?;
    RunManifest::new("sample-anchors", a.seed, serial)
        .input(&a.ckpt)?
        .output(&a.out)
        .write(&sidecar(&a.out, "manifest.json"))?;
    let dequantize = match a.dequantize {
        DequantizeArg::Uniform => Dequantize::Uniform,
        DequantizeArg::Center => Dequantize::Center,
    };
    let opts = SampleOptions { dequantize, parallel: !serial };
    let anchors = export_anchors(&model, a.budget, a.seed, opts, &a.out).failed("writing anchors")?;
    println!("wrote {} anchors to {}", anchors.len(), a.out.display());
    Ok(())
}
