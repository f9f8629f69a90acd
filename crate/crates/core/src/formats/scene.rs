//! Scene directories. `scene.txt` is line-oriented; `#` starts a comment and
//! paths are relative to the directory:
//!
//! ```text
//! name thin-board
//! background 0.08 0.08 0.1
//! domain -1 -1 -1 1 1 1
//! points points.ply
//! view views/000.png views/000.json
//! ```
//!
//! `name`, `background` and `domain` are optional (defaults: directory name,
//! black, the cube `[-1, 1]³`). At least one `view` and exactly one `points`
//! line are required.

use super::{read_ply, read_png, write_png, write_points_ply, FormatError};
use crate::octree::Aabb;
use crate::splat::{Camera, CameraSpec};
use crate::trainer::{TargetSet, View};
use nalgebra::Vector3;
use std::fmt::Write as _;
use std::path::Path;

pub const SCENE_FILE: &str = "scene.txt";

pub fn read_camera_json(path: &Path) -> Result<Camera, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let spec: CameraSpec = serde_json::from_str(&text).map_err(|e| FormatError::invalid(path, e.to_string()))?;
    Camera::try_from(spec).map_err(|e| FormatError::invalid(path, e.to_string()))
}

pub fn write_camera_json(camera: &Camera, path: &Path) -> Result<(), FormatError> {
    let text = serde_json::to_string_pretty(&CameraSpec::from(camera)).expect("camera spec serializes");
    std::fs::write(path, text + "\n").map_err(|e| FormatError::io(path, e))
}

fn numbers<const N: usize>(args: &[&str], path: &Path, line: usize) -> Result<[f64; N], FormatError> {
    if args.len() != N {
        return Err(FormatError::parse(path, line, format!("expected {N} numbers, found {}", args.len())));
    }
    let mut out = [0.0f64; N];
    for (o, a) in out.iter_mut().zip(args) {
        *o = a.parse().map_err(|_| FormatError::parse(path, line, format!("bad number {a:?}")))?;
        if !o.is_finite() {
            return Err(FormatError::parse(path, line, format!("non-finite value {a:?}")));
        }
    }
    Ok(out)
}

pub fn load_scene_dir(dir: &Path) -> Result<TargetSet, FormatError> {
    let file = dir.join(SCENE_FILE);
    let text = std::fs::read_to_string(&file).map_err(|e| FormatError::io(&file, e))?;
    let mut name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "scene".into());
    let mut background = Vector3::zeros();
    let mut domain = Aabb::cube(1.0);
    let mut points = None;
    let mut views = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let fields: Vec<&str> = line.split_whitespace().collect();
        let Some((&key, args)) = fields.split_first() else { continue };
        match key {
            "name" if args.len() == 1 => name = args[0].to_string(),
            "background" => background = Vector3::from(numbers::<3>(args, &file, n)?),
            "domain" => {
                let d = numbers::<6>(args, &file, n)?;
                if (0..3).any(|k| d[k] >= d[k + 3]) {
                    return Err(FormatError::parse(&file, n, "domain min must be below max on every axis"));
                }
                domain = Aabb::new([d[0], d[1], d[2]], [d[3], d[4], d[5]]);
            }
            "points" if args.len() == 1 => {
                if points.is_some() {
                    return Err(FormatError::parse(&file, n, "duplicate points line"));
                }
                points = Some(read_ply(&dir.join(args[0]))?.positions);
            }
            "view" if args.len() == 2 => {
                let image = read_png(&dir.join(args[0]))?;
                let camera = read_camera_json(&dir.join(args[1]))?;
                if !image.matches(&camera) {
                    return Err(FormatError::parse(
                        &file,
                        n,
                        format!(
                            "image is {}x{} but camera is {}x{}",
                            image.width, image.height, camera.width, camera.height
                        ),
                    ));
                }
                views.push(View { camera, image });
            }
            "name" | "points" | "view" => {
                return Err(FormatError::parse(&file, n, format!("wrong number of arguments for {key:?}")));
            }
            other => return Err(FormatError::parse(&file, n, format!("unknown key {other:?}"))),
        }
    }
    let points = points.ok_or_else(|| FormatError::invalid(&file, "missing points line"))?;
    if views.is_empty() {
        return Err(FormatError::invalid(&file, "no view lines"));
    }
    Ok(TargetSet { name, views, points, background, domain })
}

/// Writes views as PNG plus camera JSON, the points as PLY, and `scene.txt`.
pub fn write_scene_dir(targets: &TargetSet, dir: &Path) -> Result<(), FormatError> {
    let views_dir = dir.join("views");
    std::fs::create_dir_all(&views_dir).map_err(|e| FormatError::io(&views_dir, e))?;
    let b = targets.background;
    let d = targets.domain;
    let mut s = String::new();
    let _ = writeln!(s, "name {}", targets.name);
    let _ = writeln!(s, "background {} {} {}", b.x, b.y, b.z);
    let _ = writeln!(s, "domain {} {} {} {} {} {}", d.min[0], d.min[1], d.min[2], d.max[0], d.max[1], d.max[2]);
    s.push_str("points points.ply\n");
    write_points_ply(&dir.join("points.ply"), &targets.points)?;
    for (i, v) in targets.views.iter().enumerate() {
        let (img, cam) = (format!("views/{i:03}.png"), format!("views/{i:03}.json"));
        write_png(&v.image, &dir.join(&img))?;
        write_camera_json(&v.camera, &dir.join(&cam))?;
        let _ = writeln!(s, "view {img} {cam}");
    }
    let file = dir.join(SCENE_FILE);
    std::fs::write(&file, s).map_err(|e| FormatError::io(&file, e))
}
