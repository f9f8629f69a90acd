use super::FormatError;
use nalgebra::Vector3;
use std::fmt::Write as _;
use std::path::Path;

/// Vertices of an ASCII PLY file: positions plus any extra scalar properties.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vector3<f64>>,
    /// Names of the non-coordinate vertex properties, in file order.
    pub extra_names: Vec<String>,
    /// One row per vertex, aligned with `extra_names`.
    pub extra: Vec<Vec<f64>>,
}

impl PointCloud {
    pub fn property(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.extra_names.iter().position(|n| n == name)?;
        Some(self.extra.iter().map(|row| row[i]).collect())
    }
}

const SCALAR_TYPES: [&str; 16] = [
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double", "int8", "uint8", "int16", "uint16", "int32",
    "uint32", "float32", "float64",
];

fn write_ply(path: &Path, points: &[Vector3<f64>], extra_names: &[&str], extra: &[f64]) -> Result<(), FormatError> {
    let mut s = String::new();
    let _ = writeln!(s, "ply\nformat ascii 1.0\nelement vertex {}", points.len());
    for name in ["x", "y", "z"].iter().chain(extra_names) {
        let _ = writeln!(s, "property double {name}");
    }
    s.push_str("end_header\n");
    let k = extra_names.len();
    for (i, p) in points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
        for v in &extra[i * k..(i + 1) * k] {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| FormatError::io(path, e))
}

pub fn write_points_ply(path: &Path, points: &[Vector3<f64>]) -> Result<(), FormatError> {
    write_ply(path, points, &[], &[])
}

/// Anchor cloud with a per-vertex `log_prob` property. Values are written in
/// shortest round-trip form, so reading gives back the same doubles.
pub fn write_anchor_ply(path: &Path, positions: &[Vector3<f64>], log_prob: &[f64]) -> Result<(), FormatError> {
    if positions.len() != log_prob.len() {
        return Err(FormatError::invalid(
            path,
            format!("{} positions but {} log-probabilities", positions.len(), log_prob.len()),
        ));
    }
    write_ply(path, positions, &["log_prob"], log_prob)
}

/// Reads the vertex element of an ASCII PLY. Other elements that follow the
/// vertices are ignored; list properties on vertices are rejected.
pub fn read_ply(path: &Path) -> Result<PointCloud, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let mut next = |what: &str| {
        lines
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| FormatError::invalid(path, format!("unexpected end of file, expected {what}")))
    };
    let (n, magic) = next("magic")?;
    if magic != "ply" {
        return Err(FormatError::parse(path, n, "missing 'ply' magic"));
    }
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    let mut elements_before_vertex = false;
    loop {
        let (n, line) = next("end_header")?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", "1.0"] => {}
            ["format", other, ..] => return Err(FormatError::parse(path, n, format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    let c: usize = count
                        .parse()
                        .map_err(|_| FormatError::parse(path, n, format!("bad vertex count {count:?}")))?;
                    vertex_count = Some(c);
                } else if vertex_count.is_none() {
                    elements_before_vertex = true;
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(FormatError::parse(path, n, "list properties on vertices are not supported"));
            }
            ["property", ty, name] if in_vertex => {
                if !SCALAR_TYPES.contains(ty) {
                    return Err(FormatError::parse(path, n, format!("unknown property type {ty}")));
                }
                props.push(name.to_string());
            }
            ["property", ..] => {}
            _ => return Err(FormatError::parse(path, n, format!("unrecognized header line {line:?}"))),
        }
    }
    if elements_before_vertex {
        return Err(FormatError::invalid(path, "vertex must be the first element"));
    }
    let count = vertex_count.ok_or_else(|| FormatError::invalid(path, "no vertex element"))?;
    let axis = |a: &str| {
        props
            .iter()
            .position(|p| p == a)
            .ok_or_else(|| FormatError::invalid(path, format!("vertex has no {a} property")))
    };
    let (ix, iy, iz) = (axis("x")?, axis("y")?, axis("z")?);
    let extra_idx: Vec<usize> = (0..props.len()).filter(|i| ![ix, iy, iz].contains(i)).collect();
    let mut cloud = PointCloud {
        positions: Vec::with_capacity(count),
        extra_names: extra_idx.iter().map(|&i| props[i].clone()).collect(),
        extra: Vec::with_capacity(count),
    };
    for _ in 0..count {
        let (n, line) = next("vertex row")?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>().map_err(|_| FormatError::parse(path, n, format!("bad number {f:?}"))))
            .collect::<Result<_, _>>()?;
        if vals.len() != props.len() {
            return Err(FormatError::parse(path, n, format!("expected {} values, found {}", props.len(), vals.len())));
        }
        cloud.positions.push(Vector3::new(vals[ix], vals[iy], vals[iz]));
        cloud.extra.push(extra_idx.iter().map(|&i| vals[i]).collect());
    }
    Ok(cloud)
}
