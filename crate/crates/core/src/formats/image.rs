use super::FormatError;
use crate::splat::Image;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

/// Writes an 8-bit RGB PNG; values are clamped to `[0, 1]` and scaled by 255.
pub fn write_png(img: &Image, path: &Path) -> Result<(), FormatError> {
    let bytes: Vec<u8> = img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf = image::RgbImage::from_raw(img.width, img.height, bytes).expect("buffer matches image size");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| FormatError::invalid(path, e.to_string()))
}

/// Reads a PNG as linear values `byte / 255` (alpha is dropped).
pub fn read_png(path: &Path) -> Result<Image, FormatError> {
    let dynamic = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => FormatError::io(path, io),
        other => FormatError::invalid(path, other.to_string()),
    })?;
    let rgb = dynamic.to_rgb8();
    let data = rgb.as_raw().iter().map(|b| *b as f64 / 255.0).collect();
    Ok(Image::from_data(rgb.width(), rgb.height(), data))
}

/// Writes a little-endian color PFM (`PF`, scale `-1`, rows bottom to top).
pub fn write_pfm(img: &Image, path: &Path) -> Result<(), FormatError> {
    let mut out = Vec::with_capacity(img.data.len() * 4 + 32);
    write!(out, "PF\n{} {}\n-1.0\n", img.width, img.height).expect("writing to a Vec");
    let row = img.width as usize * 3;
    for y in (0..img.height as usize).rev() {
        for v in &img.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| FormatError::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Image, FormatError> {
    let file = std::fs::File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = Vec::new();
    for _ in 0..3 {
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| FormatError::io(path, e))?;
        header.push(line.trim().to_string());
    }
    if header[0] != "PF" {
        return Err(FormatError::invalid(path, format!("expected color PFM magic PF, found {:?}", header[0])));
    }
    let dims: Vec<u32> = header[1].split_whitespace().filter_map(|s| s.parse().ok()).collect();
    let [w, h] = dims[..] else {
        return Err(FormatError::invalid(path, format!("bad PFM size line {:?}", header[1])));
    };
    let scale: f64 = header[2].parse().map_err(|_| FormatError::invalid(path, "bad PFM scale"))?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| FormatError::io(path, e))?;
    let n = w as usize * h as usize * 3;
    if raw.len() != n * 4 {
        return Err(FormatError::invalid(path, format!("expected {} bytes of samples, found {}", n * 4, raw.len())));
    }
    let sample = |c: &[u8]| {
        let b = [c[0], c[1], c[2], c[3]];
        if scale < 0.0 {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    };
    let values: Vec<f64> = raw.chunks_exact(4).map(|c| sample(c) as f64).collect();
    let row = w as usize * 3;
    let mut data = Vec::with_capacity(n);
    for y in (0..h as usize).rev() {
        data.extend_from_slice(&values[y * row..(y + 1) * row]);
    }
    Ok(Image::from_data(w, h, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::random_image;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let img = random_image(&mut ChaCha8Rng::seed_from_u64(1), 7, 5);
        let p = dir.path().join("a.png");
        write_png(&img, &p).unwrap();
        let back = read_png(&p).unwrap();
        assert_eq!((back.width, back.height), (7, 5));
        assert!(img.data.iter().zip(&back.data).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12));
        write_png(&back, &p).unwrap();
        assert_eq!(read_png(&p).unwrap(), back);
    }

    #[test]
    fn pfm_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let img = random_image(&mut ChaCha8Rng::seed_from_u64(2), 4, 3);
        let p = dir.path().join("a.pfm");
        write_pfm(&img, &p).unwrap();
        let back = read_pfm(&p).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert_eq!(*a as f32 as f64, *b);
        }
        std::fs::write(&p, b"P6\n1 1\n255\n").unwrap();
        assert!(matches!(read_pfm(&p), Err(FormatError::Invalid { .. })));
    }

    #[test]
    fn missing_png_is_io_error() {
        assert!(matches!(read_png(Path::new("/nonexistent/x.png")), Err(FormatError::Io { .. })));
    }
}
