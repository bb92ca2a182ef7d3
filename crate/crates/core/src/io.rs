//! Depth, sparse-condition, image and configuration files.
//!
//! Depth maps are read and written as 16-bit grayscale PNG holding
//! millimeters or as little-endian grayscale PFM holding meters. Zero marks
//! an invalid pixel in both.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageReader, Luma, Rgb};

use crate::depth::{DepthMap, DepthPoint, RgbImage, SparseDepth};
use crate::error::{Error, Result};
use crate::eval::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthFormat {
    /// 16-bit PNG in millimeters.
    Png16,
    /// Single-channel PFM in meters.
    Pfm,
}

impl DepthFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match extension(path).as_deref() {
            Some("png") => Ok(Self::Png16),
            Some("pfm") => Ok(Self::Pfm),
            _ => Err(Error::UnsupportedFormat(format!(
                "{}: depth files must end in .png or .pfm",
                path.display()
            ))),
        }
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
}

fn format_err(path: &Path, reason: impl ToString) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::Io(io),
        image::ImageError::Unsupported(u) => {
            Error::UnsupportedFormat(format!("{}: {u}", path.display()))
        }
        other => format_err(path, other),
    }
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    match DepthFormat::from_path(path)? {
        DepthFormat::Png16 => read_depth_png(path),
        DepthFormat::Pfm => read_pfm(path),
    }
}

pub fn write_depth(map: &DepthMap, path: &Path) -> Result<()> {
    match DepthFormat::from_path(path)? {
        DepthFormat::Png16 => write_depth_png(map, path),
        DepthFormat::Pfm => write_pfm(map, path),
    }
}

fn read_depth_png(path: &Path) -> Result<DepthMap> {
    let img = ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| image_err(path, e))?;
    let image::DynamicImage::ImageLuma16(buf) = img else {
        return Err(Error::UnsupportedFormat(format!(
            "{}: depth PNG must be 16-bit grayscale, found {:?}",
            path.display(),
            img.color()
        )));
    };
    let (w, h) = buf.dimensions();
    let values = buf
        .into_raw()
        .into_iter()
        .map(|mm| f64::from(mm) / 1000.0)
        .collect();
    DepthMap::new(h as usize, w as usize, values, true)
}

/// Largest depth a 16-bit millimeter PNG can hold.
pub const PNG16_MAX_DEPTH: f64 = 65.535;

fn write_depth_png(map: &DepthMap, path: &Path) -> Result<()> {
    let (w, h) = dims_u32(map)?;
    let mut raw = Vec::with_capacity(map.values.len());
    for (i, &v) in map.values.iter().enumerate() {
        let mm = if v > 0.0 && v.is_finite() {
            (v * 1000.0).round()
        } else {
            0.0
        };
        if mm > f64::from(u16::MAX) {
            return Err(Error::Data(format!(
                "depth {v} at ({}, {}) exceeds the {PNG16_MAX_DEPTH} m range of 16-bit PNG",
                i / map.width,
                i % map.width
            )));
        }
        raw.push(mm as u16);
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w, h, raw).expect("buffer sized from dims");
    buf.save(path).map_err(|e| image_err(path, e))
}

fn dims_u32(map: &DepthMap) -> Result<(u32, u32)> {
    match (u32::try_from(map.width), u32::try_from(map.height)) {
        (Ok(w), Ok(h)) if w > 0 && h > 0 => Ok((w, h)),
        _ => Err(Error::dims(format!(
            "cannot store a {}x{} raster",
            map.height, map.width
        ))),
    }
}

fn write_pfm(map: &DepthMap, path: &Path) -> Result<()> {
    dims_u32(map)?;
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "Pf\n{} {}\n-1.0\n", map.width, map.height)?;
    // Rows are stored bottom to top.
    for r in (0..map.height).rev() {
        for &v in &map.values[r * map.width..(r + 1) * map.width] {
            let v = if v.is_finite() && v > 0.0 {
                v as f32
            } else {
                0.0
            };
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_pfm(path: &Path) -> Result<DepthMap> {
    let bytes = fs::read(path)?;
    let mut header = Vec::with_capacity(3);
    let mut pos = 0;
    while header.len() < 3 {
        let end = bytes[pos..]
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| format_err(path, "truncated header"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| format_err(path, "header is not text"))?
            .trim()
            .to_string();
        pos += end + 1;
        if !line.is_empty() {
            header.push(line);
        }
    }
    match header[0].as_str() {
        "Pf" => {}
        "PF" => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: color PFM is not a depth map",
                path.display()
            )))
        }
        other => return Err(format_err(path, format!("bad magic {other:?}"))),
    }
    let dims: Vec<usize> = header[1]
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format_err(path, "bad dimensions"))?;
    let [w, h] = dims[..] else {
        return Err(format_err(path, "bad dimensions"));
    };
    let scale: f64 = header[2]
        .parse()
        .map_err(|_| format_err(path, "bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_err(path, "bad scale"));
    }
    let little = scale < 0.0;
    let n = w
        .checked_mul(h)
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| format_err(path, "dimension overflow"))?;
    let body = &bytes[pos..];
    if body.len() < n * 4 {
        return Err(format_err(
            path,
            format!("truncated data: need {} bytes, have {}", n * 4, body.len()),
        ));
    }
    let mut values = vec![0.0; n];
    for (i, chunk) in body[..n * 4].chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().expect("4 bytes");
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (row_from_bottom, col) = (i / w, i % w);
        values[(h - 1 - row_from_bottom) * w + col] = f64::from(v);
    }
    DepthMap::new(h, w, values, true)
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| image_err(path, e))?;
    let buf = img.to_rgb32f();
    let (w, h) = buf.dimensions();
    let data = buf
        .into_raw()
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    RgbImage::new(h as usize, w as usize, data)
}

/// Writes an 8-bit RGB PNG.
pub fn write_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    let raw = img.data.iter().map(|v| (v * 255.0).round() as u8).collect();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, raw)
            .ok_or_else(|| Error::dims("image too large"))?;
    buf.save(path).map_err(|e| image_err(path, e))
}

#[derive(serde::Serialize, serde::Deserialize)]
struct SparseRow {
    row: usize,
    col: usize,
    depth_m: f64,
}

/// Reads `row,col,depth_m` rows (with header) into a validated condition.
pub fn read_sparse(path: &Path, height: usize, width: usize) -> Result<SparseDepth> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["row", "col", "depth_m"] {
        return Err(format_err(
            path,
            format!("expected header row,col,depth_m, found {headers:?}"),
        ));
    }
    let mut points = Vec::new();
    for rec in rdr.deserialize::<SparseRow>() {
        let r = rec.map_err(|e| csv_err(path, e))?;
        points.push(DepthPoint {
            row: r.row,
            col: r.col,
            depth: r.depth_m,
        });
    }
    SparseDepth::new(height, width, points)
}

pub fn write_sparse(c: &SparseDepth, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if c.is_empty() {
        w.write_record(["row", "col", "depth_m"])
            .map_err(|e| csv_err(path, e))?;
    }
    for p in c.points() {
        w.serialize(SparseRow {
            row: p.row,
            col: p.col,
            depth_m: p.depth,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => format_err(path, format!("{other:?}")),
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are ignored;
/// a repeated key is an error.
pub fn parse_config(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Format {
                path: origin.into(),
                reason: format!("line {}: expected key = value", lineno + 1),
            });
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::Format {
                path: origin.into(),
                reason: format!("line {}: empty key", lineno + 1),
            });
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Format {
                path: origin.into(),
                reason: format!("line {}: duplicate key {key:?}", lineno + 1),
            });
        }
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let file = fs::File::open(path)?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_config(&text, &path.display().to_string())
}

pub const RGB_SUFFIX: &str = "_rgb.png";
pub const DEPTH_SUFFIXES: [&str; 2] = ["_depth.png", "_depth.pfm"];

/// Writes `<id>_rgb.png` and `<id>_depth.<ext>` into `dir`.
pub fn write_scene(
    dir: &Path,
    scene: &Scene,
    depth_format: DepthFormat,
) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let rgb = dir.join(format!("{}{RGB_SUFFIX}", scene.id));
    let depth = dir.join(format!(
        "{}{}",
        scene.id,
        match depth_format {
            DepthFormat::Png16 => DEPTH_SUFFIXES[0],
            DepthFormat::Pfm => DEPTH_SUFFIXES[1],
        }
    ));
    write_rgb(&scene.rgb, &rgb)?;
    write_depth(&scene.gt, &depth)?;
    Ok((rgb, depth))
}

/// Loads every `<id>_rgb.png` in `dir` that has a matching depth file,
/// sorted by id.
pub fn load_dataset(dir: &Path) -> Result<Vec<Scene>> {
    let mut ids: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix(RGB_SUFFIX))
                .map(str::to_string)
        })
        .collect();
    ids.sort();
    let mut scenes = Vec::new();
    for id in ids {
        let Some(depth) = DEPTH_SUFFIXES
            .iter()
            .map(|s| dir.join(format!("{id}{s}")))
            .find(|p| p.exists())
        else {
            continue;
        };
        let rgb = read_rgb(&dir.join(format!("{id}{RGB_SUFFIX}")))?;
        let gt = read_depth(&depth)?;
        if (rgb.height, rgb.width) != (gt.height, gt.width) {
            return Err(format_err(&depth, "depth and image sizes differ"));
        }
        scenes.push(Scene { id, rgb, gt });
    }
    Ok(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let m = parse_config("# c\nk = 0.3\n\nzeta=7 # trailing\n", "t").unwrap();
        assert_eq!(m["k"], "0.3");
        assert_eq!(m["zeta"], "7");
        assert!(matches!(
            parse_config("k\n", "t"),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            parse_config("k=1\nk=2\n", "t"),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn format_by_extension() {
        assert_eq!(
            DepthFormat::from_path(Path::new("a.PNG")).unwrap(),
            DepthFormat::Png16
        );
        assert!(matches!(
            DepthFormat::from_path(Path::new("a.exr")),
            Err(Error::UnsupportedFormat(_))
        ));
    }
}
