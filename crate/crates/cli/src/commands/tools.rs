use super::{prepare_out, read_toml};
use crate::args::{FmToyArgs, OracleArgs, VariantArg, VecSeqArgs};
use crate::error::{Classify, CliError, CliResult};
use crate::manifest::{sidecar, RunManifest};
use nalgebra::Vector3;
use octsplat::fixtures::oracle_suite;
use octsplat::fm_toy::{train_toy, FmConfig, Variant};
use octsplat::formats::read_ply;
use octsplat::vecseq::{fps, normalize_to_unit_cube, serialize, sobol3d_with, DirectionNumbers, PeConfig};
use std::fmt::Write as _;
use std::path::Path;

/// Contribution and leave-one-out values must agree to this absolute tolerance.
pub const ORACLE_TOLERANCE: f64 = 1e-6;

fn read_tokens(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::Reader::from_path(path).invalid(&format!("tokens {}", path.display()))?;
    let header: Vec<String> =
        reader.headers().invalid(&format!("tokens {}", path.display()))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.invalid(&format!("tokens {} row {}", path.display(), i + 1))?;
        let row = record.iter().map(|f| f.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>().invalid(&format!(
            "tokens {} row {}",
            path.display(),
            i + 1
        ))?;
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn vecseq(a: VecSeqArgs, serial: bool) -> CliResult {
    let cloud = read_ply(&a.points).invalid("points")?;
    let (header, tokens) = read_tokens(&a.tokens)?;
    if tokens.len() != cloud.positions.len() {
        return Err(CliError::Validation(format!("{} token rows but {} points", tokens.len(), cloud.positions.len())));
    }
    let pe = PeConfig::new(a.pe_dim).invalid("--pe-dim")?;
    let dirs = match &a.directions {
        Some(p) => DirectionNumbers::from_file(p).invalid("direction numbers")?,
        None => DirectionNumbers::bundled(),
    };
    let picked = fps(&cloud.positions, a.m).invalid("--m")?;
    let anchors = sobol3d_with(a.m, &dirs).invalid("direction numbers")?;

    let tokens_out = sidecar(&a.out, "tokens.csv");
    prepare_out(&a.out)?;
    let mut manifest = RunManifest::new("vecseq", a.seed, serial).input(&a.points)?.input(&a.tokens)?;
    if let Some(d) = &a.directions {
        manifest = manifest.input(d)?;
    }
    manifest.output(&a.out).output(&tokens_out).write(&sidecar(&a.out, "manifest.json"))?;

    let points: Vec<Vector3<f64>> =
        normalize_to_unit_cube(&picked.iter().map(|&i| cloud.positions[i]).collect::<Vec<_>>());
    let rows: Vec<Vec<f64>> = picked.iter().map(|&i| tokens[i].clone()).collect();
    let s = serialize(&rows, &points, &anchors, &pe).failed("serialization")?;

    let mut order = String::from("j,source,sx,sy,sz,cost\n");
    for (j, &k) in s.order.iter().enumerate() {
        let sj = anchors.points[j];
        let cost = (points[k] - sj).norm_squared();
        let _ = writeln!(order, "{j},{},{},{},{},{cost}", picked[k], sj.x, sj.y, sj.z);
    }
    std::fs::write(&a.out, order).failed("writing order")?;

    let mut out = header.join(",");
    for d in 0..a.pe_dim {
        let _ = write!(out, ",pe_{d}");
    }
    out.push('\n');
    for (t, p) in s.tokens.iter().zip(&s.anchor_pe) {
        let fields: Vec<String> = t.iter().chain(p).map(f64::to_string).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    std::fs::write(&tokens_out, out).failed("writing tokens")?;
    println!("M={} total cost {}", a.m, s.cost);
    Ok(())
}

pub fn fm_toy(a: FmToyArgs, serial: bool) -> CliResult {
    let mut cfg: FmConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => FmConfig::default(),
    };
    cfg.seed = a.seed;
    cfg.variant = match a.variant {
        VariantArg::Reordered => Variant::Reordered,
        VariantArg::Unordered => Variant::Unordered,
    };
    if let Some(steps) = a.steps {
        cfg.steps = steps;
    }
    cfg.validate().invalid("config")?;
    prepare_out(&a.out)?;
    let mut manifest = RunManifest::new("fm-toy", cfg.seed, serial).config(&cfg);
    if let Some(p) = &a.config {
        manifest = manifest.input(p)?;
    }
    manifest.output(&a.out).write(&sidecar(&a.out, "manifest.json"))?;
    let curves = train_toy(&cfg).failed("training")?;
    let file = std::fs::File::create(&a.out).failed("creating curves")?;
    curves.write_csv(std::io::BufWriter::new(file)).failed("writing curves")?;
    println!("{} final validation loss {:.6}", cfg.variant, curves.final_val());
    Ok(())
}

pub fn oracle_check(a: OracleArgs, serial: bool) -> CliResult {
    if a.trials == 0 || a.max_primitives == 0 || a.size == 0 {
        return Err(CliError::Validation("--trials, --max-primitives and --size must be positive".into()));
    }
    if let Some(out) = &a.out {
        prepare_out(out)?;
        RunManifest::new("oracle-check", a.seed, serial).output(out).write(&sidecar(out, "manifest.json"))?;
    }
    let trials = oracle_suite(a.seed, a.trials, a.max_primitives, a.size);
    let max_dev = trials.iter().map(|t| t.max_abs_dev).fold(0.0, f64::max);
    let prims: usize = trials.iter().map(|t| t.primitives).sum();
    if let Some(out) = &a.out {
        let mut csv = String::from("trial,primitives,max_abs_dev\n");
        for (i, t) in trials.iter().enumerate() {
            let _ = writeln!(csv, "{i},{},{:e}", t.primitives, t.max_abs_dev);
        }
        std::fs::write(out, csv).failed("writing report")?;
    }
    println!("max |contribution - leave-one-out| = {max_dev:e} over {} scenes, {prims} primitives", a.trials);
    if max_dev < ORACLE_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Runtime(anyhow::anyhow!("deviation {max_dev:e} exceeds {ORACLE_TOLERANCE:e}")))
    }
}
