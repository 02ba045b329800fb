use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Float raster as stored in a PFM file: rows top to bottom, interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Encodes little-endian PFM (scale −1). Rows are written bottom to top.
pub fn encode_pfm(img: &PfmImage) -> Result<Vec<u8>> {
    let tag = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::Format(format!("PFM supports 1 or 3 channels, got {c}"))),
    };
    let row = img.width * img.channels;
    if img.data.len() != row * img.height {
        return Err(Error::Format("PFM buffer does not match its dimensions".into()));
    }
    let mut out = format!("{tag}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    out.reserve(img.data.len() * 4);
    for y in (0..img.height).rev() {
        for v in &img.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PFM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Format("non-ASCII PFM header".into()))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<PfmImage> {
    let mut pos = 0;
    let channels = match header_token(bytes, &mut pos)? {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(Error::Format(format!("not a PFM file (tag {t:?})"))),
    };
    let parse = |t: &str| t.parse::<usize>().map_err(|_| Error::Format(format!("bad PFM dimension {t:?}")));
    let width = parse(header_token(bytes, &mut pos)?)?;
    let height = parse(header_token(bytes, &mut pos)?)?;
    let scale_tok = header_token(bytes, &mut pos)?;
    let scale: f64 = scale_tok.parse().map_err(|_| Error::Format(format!("bad PFM scale {scale_tok:?}")))?;
    if scale == 0.0 {
        return Err(Error::Format("PFM scale must be non-zero".into()));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let row = width * channels;
    let n = row * height;
    let body = bytes.get(pos..).filter(|b| b.len() == n * 4).ok_or_else(|| {
        Error::Format(format!("PFM raster has {} bytes, expected {}", bytes.len().saturating_sub(pos), n * 4))
    })?;
    let mut data = vec![0f32; n];
    for (file_row, chunk) in body.chunks_exact(row * 4).enumerate() {
        let y = height - 1 - file_row;
        for (j, b) in chunk.chunks_exact(4).enumerate() {
            let raw = [b[0], b[1], b[2], b[3]];
            data[y * row + j] = if scale < 0.0 { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        }
    }
    Ok(PfmImage { width, height, channels, data })
}

pub fn write_pfm(path: &Path, img: &PfmImage) -> Result<()> {
    fs::write(path, encode_pfm(img)?)?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<PfmImage> {
    decode_pfm(&fs::read(path)?)
}
