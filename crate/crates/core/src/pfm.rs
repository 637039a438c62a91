//! Portable float map I/O.
//!
//! Files are written little-endian (negative scale) with the standard
//! bottom-to-top row order. Both byte orders are accepted on read.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::image::{Plane, RgbImage};
use crate::{Error, Result};

/// Decoded contents of a PFM file.
#[derive(Debug, Clone, PartialEq)]
pub enum PfmImage {
    Gray(Plane),
    Color(RgbImage),
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "PFM",
        detail: detail.into(),
    }
}

pub fn encode(channels: usize, width: usize, height: usize, data: &[f32]) -> Vec<u8> {
    debug_assert_eq!(data.len(), width * height * channels);
    let tag = if channels == 3 { "PF" } else { "Pf" };
    let mut out = Vec::with_capacity(32 + data.len() * 4);
    write!(out, "{tag}\n{width} {height}\n-1.0\n").unwrap();
    let row = width * channels;
    for y in (0..height).rev() {
        for v in &data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<PfmImage> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    // Header is four whitespace-separated tokens followed by one whitespace byte.
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("truncated header"));
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| format_err("non-ascii header"))?
                .to_string(),
        );
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(format_err(format!("unknown magic {other:?}"))),
    };
    let width: usize = fields[1].parse().map_err(|_| format_err("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| format_err("bad height"))?;
    let scale: f32 = fields[3].parse().map_err(|_| format_err("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_err("scale must be non-zero"));
    }
    let little = scale < 0.0;
    let count = width * height * channels;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() < count * 4 {
        return Err(format_err(format!(
            "expected {} data bytes, found {}",
            count * 4,
            body.len()
        )));
    }
    let row = width * channels;
    let mut data = vec![0.0f32; count];
    for (i, chunk) in body[..count * 4].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (file_row, col) = (i / row, i % row);
        data[(height - 1 - file_row) * row + col] = v;
    }
    Ok(if channels == 3 {
        PfmImage::Color(RgbImage::from_vec(width, height, data)?)
    } else {
        PfmImage::Gray(Plane::from_vec(width, height, data)?)
    })
}

pub fn read(path: impl AsRef<Path>) -> Result<PfmImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    match read(path.as_ref())? {
        PfmImage::Color(img) => Ok(img),
        PfmImage::Gray(_) => Err(format_err(format!(
            "{} is single-channel, expected RGB",
            path.as_ref().display()
        ))),
    }
}

pub fn read_gray(path: impl AsRef<Path>) -> Result<Plane> {
    match read(path.as_ref())? {
        PfmImage::Gray(p) => Ok(p),
        PfmImage::Color(_) => Err(format_err(format!(
            "{} is RGB, expected single-channel",
            path.as_ref().display()
        ))),
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    write_bytes(
        path.as_ref(),
        &encode(3, img.width, img.height, &img.data),
    )
}

pub fn write_gray(path: impl AsRef<Path>, plane: &Plane) -> Result<()> {
    write_bytes(
        path.as_ref(),
        &encode(1, plane.width, plane.height, &plane.data),
    )
}
