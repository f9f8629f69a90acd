//! Binary checkpoint, little-endian throughout.
//!
//! ```text
//! "DEGD" version:u8 levels:u8 domain:[f64;6] count:u64
//!        count × (level:u8 code:u64 logits:[f64;8])
//! "DEGA" version:u8 fourier_bands:u32 hidden:[u32;2] k:u32
//!        offset_scale:f64 log_scale_base:f64 opacity_bias:f64
//!        domain:[f64;6] background:[f64;3] count:u64 weights:[f64;count]
//! ```

use super::FormatError;
use crate::decoder::{DecoderConfig, DecoderParams};
use crate::octree::{Aabb, CellPath, OctreeDensity};
use crate::trainer::FittedModel;
use nalgebra::Vector3;
use std::path::Path;

pub const CHECKPOINT_VERSION: u8 = 1;
const DENSITY_MAGIC: &[u8; 4] = b"DEGD";
const DECODER_MAGIC: &[u8; 4] = b"DEGA";

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_domain(out: &mut Vec<u8>, d: &Aabb) {
    put_f64s(out, &d.min);
    put_f64s(out, &d.max);
}

pub fn encode_checkpoint(model: &FittedModel) -> Vec<u8> {
    let mut out = Vec::new();
    let density = &model.density;
    out.extend_from_slice(DENSITY_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.push(density.levels());
    put_domain(&mut out, &density.domain());
    out.extend_from_slice(&(density.cell_count() as u64).to_le_bytes());
    for (cell, logits) in density.cells() {
        out.push(cell.level);
        out.extend_from_slice(&cell.code.to_le_bytes());
        put_f64s(&mut out, logits);
    }

    let dec = &model.decoder;
    let c = &dec.config;
    out.extend_from_slice(DECODER_MAGIC);
    out.push(CHECKPOINT_VERSION);
    for v in [c.fourier_bands, c.hidden[0], c.hidden[1], c.k] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    put_f64s(&mut out, &[c.offset_scale, c.log_scale_base, c.opacity_bias]);
    put_domain(&mut out, &dec.domain);
    put_f64s(&mut out, model.background.as_slice());
    out.extend_from_slice(&(dec.weights.len() as u64).to_le_bytes());
    put_f64s(&mut out, &dec.weights);
    out
}

pub fn write_checkpoint(model: &FittedModel, path: &Path) -> Result<(), FormatError> {
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| FormatError::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.pos < n {
            return Err(FormatError::invalid(self.path, format!("truncated at byte {} reading {what}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64s<const N: usize>(&mut self, what: &str) -> Result<[f64; N], FormatError> {
        let mut out = [0.0; N];
        for v in &mut out {
            *v = self.f64(what)?;
        }
        Ok(out)
    }

    fn magic(&mut self, expect: &[u8; 4]) -> Result<(), FormatError> {
        let got = self.take(4, "magic")?;
        if got != expect {
            return Err(FormatError::invalid(
                self.path,
                format!(
                    "expected magic {:?}, found {:?}",
                    String::from_utf8_lossy(expect),
                    String::from_utf8_lossy(got)
                ),
            ));
        }
        let version = self.u8("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::invalid(self.path, format!("unsupported checkpoint version {version}")));
        }
        Ok(())
    }

    /// A count that must fit in the remaining bytes at `unit` bytes each.
    fn count(&mut self, unit: usize, what: &str) -> Result<usize, FormatError> {
        let n = self.u64(what)?;
        let left = (self.buf.len() - self.pos) as u64;
        if n.checked_mul(unit as u64).is_none_or(|b| b > left) {
            return Err(FormatError::invalid(self.path, format!("{what} {n} exceeds the file size")));
        }
        Ok(n as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<FittedModel, FormatError> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    let bad = |msg: String| FormatError::invalid(path, msg);

    r.magic(DENSITY_MAGIC)?;
    let levels = r.u8("levels")?;
    let domain = Aabb::new(r.f64s("domain")?, r.f64s("domain")?);
    let mut density = OctreeDensity::new(levels, domain).map_err(|e| bad(e.to_string()))?;
    let cells = r.count(1 + 8 + 64, "cell count")?;
    for _ in 0..cells {
        let level = r.u8("cell level")?;
        let code = r.u64("cell code")?;
        let logits = r.f64s::<8>("logits")?;
        if level >= levels || code >> (3 * level as u32) != 0 {
            return Err(bad(format!(
                "cell (level {level}, code {code}) is not an internal cell of a depth-{levels} tree"
            )));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("non-finite logits at level {level}, code {code}")));
        }
        density.set_logits(CellPath { level, code }, logits);
    }

    r.magic(DECODER_MAGIC)?;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.u32("decoder shape")? as usize;
    }
    let [offset_scale, log_scale_base, opacity_bias] = r.f64s("decoder biases")?;
    let config = DecoderConfig {
        fourier_bands: dims[0],
        hidden: [dims[1], dims[2]],
        k: dims[3],
        offset_scale,
        log_scale_base,
        opacity_bias,
    };
    config.validate().map_err(|e| bad(e.to_string()))?;
    let dec_domain = Aabb::new(r.f64s("decoder domain")?, r.f64s("decoder domain")?);
    let background = Vector3::from(r.f64s::<3>("background")?);
    let n = r.count(8, "weight count")?;
    if n != config.weight_count() {
        return Err(bad(format!("decoder shape needs {} weights, file has {n}", config.weight_count())));
    }
    let weights = (0..n).map(|_| r.f64("weights")).collect::<Result<Vec<_>, _>>()?;
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(FittedModel { density, decoder: DecoderParams { config, domain: dec_domain, weights }, background })
}

pub fn read_checkpoint(path: &Path) -> Result<FittedModel, FormatError> {
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
