//! On-disk formats for grids and images.
//!
//! Raw grids: 8-byte header (`b"PMDE"`, u16 height, u16 width, little
//! endian) followed by `height * width` little-endian `f32` values in row-major
//! order. Sparse maps store `-1.0` at unobserved pixels. RGB images are 8-bit PNG.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, RgbImage};

pub const RAW_MAGIC: &[u8; 4] = b"PMDE";
pub const RAW_HEADER_LEN: usize = 8;

pub fn encode_raw_grid(grid: &Grid<f64>) -> Result<Vec<u8>> {
    let (h, w) = grid.dims();
    let (h16, w16) = match (u16::try_from(h), u16::try_from(w)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err(Error::Format(format!("grid {h}x{w} exceeds u16 dimensions"))),
    };
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + 4 * grid.len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&h16.to_le_bytes());
    out.extend_from_slice(&w16.to_le_bytes());
    for v in grid.as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_raw_grid(bytes: &[u8]) -> Result<Grid<f64>> {
    if bytes.len() < RAW_HEADER_LEN || &bytes[..4] != RAW_MAGIC {
        return Err(Error::Format("missing PMDE header".into()));
    }
    let h = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let body = &bytes[RAW_HEADER_LEN..];
    if body.len() != h * w * 4 {
        return Err(Error::Format(format!(
            "PMDE body is {} bytes, expected {} for {h}x{w}",
            body.len(),
            h * w * 4
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Grid::from_vec(h, w, data)
}

pub fn write_raw_grid(path: &Path, grid: &Grid<f64>) -> Result<()> {
    let bytes = encode_raw_grid(grid)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn read_raw_grid(path: &Path) -> Result<Grid<f64>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_raw_grid(&bytes)
}

/// Writes interleaved 8-bit RGB (`channels = 3`) or grayscale (`channels = 1`) pixels.
pub fn write_png(path: &Path, width: usize, height: usize, channels: usize, pixels: &[u8]) -> Result<()> {
    let color = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => return Err(Error::Format(format!("unsupported channel count {channels}"))),
    };
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
    writer
        .write_image_data(pixels)
        .map_err(|e| Error::Format(e.to_string()))?;
    writer.finish().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let (h, w) = img.dims();
    write_png(path, w, h, 3, &img.to_u8())
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info().map_err(|e| Error::Format(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("png too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{} is not 8-bit RGB ({:?}, {:?})",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    RgbImage::from_u8(info.height as usize, info.width as usize, &buf[..info.buffer_size()])
}
