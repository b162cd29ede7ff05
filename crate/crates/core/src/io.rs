//! File formats: binary PGM/PPM, RAWF volumes, label maps, seed lists and
//! run-length encoded label maps.
//!
//! RAWF is a text header line `RAWF v1 <d> <dims...> <channels>` followed by
//! little-endian `f32` values, row-major with the channel index fastest. Dims
//! are listed slowest axis first (`h w` in 2D, `d h w` in 3D).

use std::fmt::Write as _;
use std::path::Path;

use crate::distance::SeedSet;
use crate::error::{Result, SegError};
use crate::grid::{Dims, Field, GridIndex, ImageVolume, Label, LabelMap};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Ppm,
    Rawf,
    /// Decide from the magic bytes.
    Auto,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| SegError::Unreadable {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_image<T: Real>(path: impl AsRef<Path>, format: ImageFormat) -> Result<ImageVolume<T>> {
    let bytes = read_bytes(path.as_ref())?;
    parse_image(&bytes, format)
}

pub fn parse_image<T: Real>(bytes: &[u8], format: ImageFormat) -> Result<ImageVolume<T>> {
    let format = match format {
        ImageFormat::Auto => detect(bytes)?,
        f => f,
    };
    match format {
        ImageFormat::Pgm => parse_pnm(bytes, b"P5", 1),
        ImageFormat::Ppm => parse_pnm(bytes, b"P6", 3),
        ImageFormat::Rawf => parse_rawf(bytes),
        ImageFormat::Auto => unreachable!(),
    }
}

fn detect(bytes: &[u8]) -> Result<ImageFormat> {
    if bytes.starts_with(b"P5") {
        Ok(ImageFormat::Pgm)
    } else if bytes.starts_with(b"P6") {
        Ok(ImageFormat::Ppm)
    } else if bytes.starts_with(b"RAWF") {
        Ok(ImageFormat::Rawf)
    } else {
        Err(SegError::MalformedHeader("unknown magic".into()))
    }
}

/// Header tokens of a PNM file; returns tokens and the payload offset.
fn pnm_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if i >= bytes.len() {
            return Err(SegError::MalformedHeader("header ends early".into()));
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates header and payload
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(SegError::MalformedHeader("missing separator".into()));
    }
    Ok((tokens, i + 1))
}

fn parse_pnm<T: Real>(bytes: &[u8], magic: &[u8], channels: usize) -> Result<ImageVolume<T>> {
    if !bytes.starts_with(magic) {
        return Err(SegError::MalformedHeader("bad magic".into()));
    }
    let (tok, off) = pnm_tokens(bytes, 4)?;
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| SegError::MalformedHeader(format!("bad number {s}")))
    };
    let (w, h, maxval) = (num(&tok[1])?, num(&tok[2])?, num(&tok[3])?);
    if w == 0 || h == 0 {
        return Err(SegError::MalformedHeader("zero extent".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(SegError::UnsupportedBitDepth(format!("maxval {maxval}")));
    }
    let expected = w * h * channels;
    let payload = &bytes[off..];
    if payload.len() < expected {
        return Err(SegError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let scale = 255.0 / maxval as f64;
    let values = payload[..expected]
        .iter()
        .map(|&b| T::lit(b as f64 * scale))
        .collect();
    ImageVolume::new(Dims::d2(h, w), channels, values)
}

fn parse_rawf<T: Real>(bytes: &[u8]) -> Result<ImageVolume<T>> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| SegError::MalformedHeader("no header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| SegError::MalformedHeader("header not utf-8".into()))?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() < 3 || tok[0] != "RAWF" || tok[1] != "v1" {
        return Err(SegError::MalformedHeader(header.into()));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| SegError::MalformedHeader(format!("bad number {s}")))
    };
    let d = num(tok[2])?;
    if !(1..=3).contains(&d) || tok.len() != 3 + d + 1 {
        return Err(SegError::MalformedHeader(header.into()));
    }
    let ext: Vec<usize> = tok[3..3 + d].iter().map(|s| num(s)).collect::<Result<_>>()?;
    let channels = num(tok[3 + d])?;
    if channels == 0 {
        return Err(SegError::MalformedHeader("zero channels".into()));
    }
    let dims = Dims::new(&ext).map_err(|e| SegError::MalformedHeader(e.to_string()))?;
    let expected = dims.len() * channels * 4;
    let payload = &bytes[nl + 1..];
    if payload.len() < expected {
        return Err(SegError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let values = payload[..expected]
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    ImageVolume::new(dims, channels, values)
}

fn rawf_header(dims: &Dims, channels: usize) -> String {
    let ext: Vec<String> = dims.extents().iter().map(|e| e.to_string()).collect();
    format!("RAWF v1 {} {} {}\n", dims.ndim(), ext.join(" "), channels)
}

pub fn encode_rawf<T: Real>(img: &ImageVolume<T>) -> Vec<u8> {
    let mut out = rawf_header(img.dims(), img.channels()).into_bytes();
    for v in img.values() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn save_rawf<T: Real>(path: impl AsRef<Path>, img: &ImageVolume<T>) -> Result<()> {
    write_file(path.as_ref(), &encode_rawf(img))
}

pub fn save_field_rawf<T: Real>(path: impl AsRef<Path>, field: &Field<T>) -> Result<()> {
    let img = ImageVolume::from_field(field)?;
    save_rawf(path, &img)
}

/// Label map as a single-channel RAWF volume.
pub fn encode_labels_rawf(labels: &LabelMap) -> Vec<u8> {
    let mut out = rawf_header(&labels.dims(), 1).into_bytes();
    for &l in labels.labels() {
        out.extend_from_slice(&(l as f32).to_le_bytes());
    }
    out
}

pub fn save_labels_rawf(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    write_file(path.as_ref(), &encode_labels_rawf(labels))
}

/// Reads a label map from a single-channel RAWF or PGM file holding label
/// values directly.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let bytes = read_bytes(path.as_ref())?;
    let img: ImageVolume<f64> = match detect(&bytes)? {
        ImageFormat::Pgm => {
            // label PGMs carry raw values, no rescaling
            let (tok, off) = pnm_tokens(&bytes, 4)?;
            let w: usize = tok[1].parse().map_err(|_| SegError::MalformedHeader(tok[1].clone()))?;
            let h: usize = tok[2].parse().map_err(|_| SegError::MalformedHeader(tok[2].clone()))?;
            let n = w * h;
            if bytes.len() < off + n {
                return Err(SegError::TruncatedPayload {
                    expected: n,
                    found: bytes.len() - off,
                });
            }
            ImageVolume::new(Dims::d2(h, w), 1, bytes[off..off + n].iter().map(|&b| b as f64).collect())?
        }
        _ => parse_image(&bytes, ImageFormat::Auto)?,
    };
    if img.channels() != 1 {
        return Err(SegError::InvalidInput("label map must have one channel".into()));
    }
    let labels = img
        .values()
        .iter()
        .map(|&v| {
            if v >= 1.0 && v <= Label::MAX as f64 && v.fract() == 0.0 {
                Ok(v as Label)
            } else {
                Err(SegError::InvalidInput(format!("label value {v}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    LabelMap::from_vec(*img.dims(), labels)
}

/// 8-bit binary PGM of a single-channel image, values rounded and clamped.
pub fn encode_pgm<T: Real>(img: &ImageVolume<T>) -> Result<Vec<u8>> {
    let dims = img.dims();
    if dims.ndim() != 2 || img.channels() != 1 {
        return Err(SegError::InvalidInput("PGM needs a 2D single-channel image".into()));
    }
    let [_, h, w] = dims.padded();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.values().iter().map(|v| v.as_f64().round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

/// Run-length text form `label:count,label:count,...` in linear order.
pub fn rle_encode(labels: &LabelMap) -> String {
    let mut out = String::new();
    let l = labels.labels();
    let mut i = 0;
    while i < l.len() {
        let mut j = i;
        while j < l.len() && l[j] == l[i] {
            j += 1;
        }
        if !out.is_empty() {
            out.push(',');
        }
        let _ = write!(out, "{}:{}", l[i], j - i);
        i = j;
    }
    out
}

pub fn rle_decode(dims: Dims, text: &str) -> Result<LabelMap> {
    let mut labels = Vec::with_capacity(dims.len());
    for run in text.split(',') {
        let (l, n) = run
            .split_once(':')
            .ok_or_else(|| SegError::InvalidInput(format!("bad run {run}")))?;
        let l: Label = l.parse().map_err(|_| SegError::InvalidInput(format!("bad label {l}")))?;
        let n: usize = n.parse().map_err(|_| SegError::InvalidInput(format!("bad count {n}")))?;
        if labels.len() + n > dims.len() {
            return Err(SegError::DimensionMismatch("run-length overflow".into()));
        }
        labels.extend(std::iter::repeat_n(l, n));
    }
    if labels.len() != dims.len() {
        return Err(SegError::DimensionMismatch(format!(
            "run-length covers {} of {} voxels",
            labels.len(),
            dims.len()
        )));
    }
    LabelMap::from_vec(dims, labels)
}

/// Grid index from wire coordinates `x y [z]`.
pub fn index_from_coords(dims: &Dims, c: &[usize]) -> Result<GridIndex> {
    let idx = match (dims.ndim(), c) {
        (2, [x, y]) => GridIndex::d2(*y, *x),
        (3, [x, y, z]) => GridIndex::d3(*z, *y, *x),
        _ => {
            return Err(SegError::InvalidInput(format!(
                "expected {} coordinates, got {}",
                dims.ndim(),
                c.len()
            )))
        }
    };
    if !dims.contains(idx) {
        return Err(SegError::OutOfBounds(format!("{:?}", c)));
    }
    Ok(idx)
}

/// Wire coordinates `x y [z]` of a grid index.
pub fn coords_of(dims: &Dims, idx: GridIndex) -> Vec<usize> {
    if dims.ndim() == 3 {
        vec![idx.x(), idx.y(), idx.z()]
    } else {
        vec![idx.x(), idx.y()]
    }
}

/// Seed file: one voxel per line, `<label> <x> <y> [<z>]`; `#` starts a comment.
pub fn parse_seeds(text: &str, dims: &Dims) -> Result<Vec<SeedSet>> {
    let mut sets: Vec<SeedSet> = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| SegError::InvalidInput(format!("seed line {}: {line}", no + 1)))?;
        let (&label, coords) = nums
            .split_first()
            .ok_or_else(|| SegError::InvalidInput(format!("seed line {}", no + 1)))?;
        if label == 0 || label > Label::MAX as usize {
            return Err(SegError::UnknownLabel(label.min(Label::MAX as usize) as Label));
        }
        let idx = index_from_coords(dims, coords)?;
        match sets.iter_mut().find(|s| s.label as usize == label) {
            Some(s) => s.voxels.push(idx),
            None => sets.push(SeedSet {
                label: label as Label,
                voxels: vec![idx],
            }),
        }
    }
    sets.sort_by_key(|s| s.label);
    Ok(sets)
}

pub fn load_seeds(path: impl AsRef<Path>, dims: &Dims) -> Result<Vec<SeedSet>> {
    let bytes = read_bytes(path.as_ref())?;
    let text = String::from_utf8(bytes).map_err(|_| SegError::InvalidInput("seed file not utf-8".into()))?;
    parse_seeds(&text, dims)
}
