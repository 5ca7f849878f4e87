//! 16-bit depth PNGs (meters = raw / 256, raw 0 = no measurement) and 8-bit
//! RGB PNGs.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use super::image::{DepthImage, RgbImage};
use crate::error::{Error, Result};

/// Raw units per meter in depth PNGs.
pub const DEPTH_SCALE: f64 = 256.0;

/// Largest depth a 16-bit PNG can carry, in meters.
pub const MAX_PNG_DEPTH: f64 = u16::MAX as f64 / DEPTH_SCALE;

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    bytes: Vec<u8>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut bytes = vec![0; size];
    let info = reader.next_frame(&mut bytes).map_err(|e| Error::format(path, e.to_string()))?;
    bytes.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        bytes,
    })
}

fn encode(path: &Path, width: usize, height: usize, color: ColorType, depth: BitDepth, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let to_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    };
    let mut writer = encoder.write_header().map_err(to_err)?;
    writer.write_image_data(bytes).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

/// Reads the raw 16-bit values of a single-channel depth PNG.
pub fn load_depth_raw(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u16>)> {
    let path = path.as_ref();
    let d = decode(path)?;
    if d.color != ColorType::Grayscale {
        return Err(Error::format(
            path,
            format!("depth PNG must have 1 channel (grayscale), found color type {:?}", d.color),
        ));
    }
    if d.depth != BitDepth::Sixteen {
        return Err(Error::format(
            path,
            format!("depth PNG must have bit depth 16, found {}", d.depth as u8),
        ));
    }
    let raw = d.bytes.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect();
    Ok((d.height, d.width, raw))
}

pub fn load_depth_png(path: impl AsRef<Path>) -> Result<DepthImage> {
    let (h, w, raw) = load_depth_raw(path)?;
    DepthImage::new(h, w, raw.into_iter().map(|v| v as f64 / DEPTH_SCALE).collect())
}

/// Quantizes depth to the 1/256 m PNG grid.
pub fn depth_to_raw(depth: &DepthImage) -> Result<Vec<u16>> {
    depth
        .data()
        .iter()
        .map(|&d| {
            if d > MAX_PNG_DEPTH {
                Err(Error::Range(format!(
                    "depth {d} m exceeds the 16-bit PNG limit of {MAX_PNG_DEPTH} m"
                )))
            } else {
                Ok((d * DEPTH_SCALE).round().clamp(0.0, u16::MAX as f64) as u16)
            }
        })
        .collect()
}

/// Rounds depth onto the grid a save/load round trip would produce.
pub fn quantize_depth(depth: &DepthImage) -> Result<DepthImage> {
    let raw = depth_to_raw(depth)?;
    DepthImage::new(
        depth.height(),
        depth.width(),
        raw.into_iter().map(|v| v as f64 / DEPTH_SCALE).collect(),
    )
}

pub fn save_depth_raw(path: impl AsRef<Path>, height: usize, width: usize, raw: &[u16]) -> Result<()> {
    let bytes: Vec<u8> = raw.iter().flat_map(|v| v.to_be_bytes()).collect();
    encode(path.as_ref(), width, height, ColorType::Grayscale, BitDepth::Sixteen, &bytes)
}

pub fn save_depth_png(depth: &DepthImage, path: impl AsRef<Path>) -> Result<()> {
    let raw = depth_to_raw(depth)?;
    save_depth_raw(path, depth.height(), depth.width(), &raw)
}

/// Loads an 8-bit RGB (or RGBA, alpha dropped) PNG as `[0, 1]` values.
pub fn load_rgb_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let d = decode(path)?;
    if d.depth != BitDepth::Eight {
        return Err(Error::format(
            path,
            format!("RGB PNG must have bit depth 8, found {}", d.depth as u8),
        ));
    }
    let stride = match d.color {
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        other => {
            return Err(Error::format(
                path,
                format!("RGB PNG must have 3 or 4 channels, found color type {other:?}"),
            ))
        }
    };
    let plane = d.width * d.height;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in d.bytes.chunks_exact(stride).enumerate() {
        for ch in 0..3 {
            data[ch * plane + i] = px[ch] as f64 / 255.0;
        }
    }
    RgbImage::new(d.height, d.width, data)
}

pub fn save_rgb_png(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::with_capacity(3 * image.height() * image.width());
    for r in 0..image.height() {
        for c in 0..image.width() {
            for v in image.get(r, c) {
                bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    encode(path.as_ref(), image.width(), image.height(), ColorType::Rgb, BitDepth::Eight, &bytes)
}

/// Applies the 8-bit quantization of an RGB PNG round trip in memory.
pub fn quantize_rgb(image: &RgbImage) -> RgbImage {
    RgbImage::from_fn(image.height(), image.width(), |r, c| {
        image.get(r, c).map(|v| (v * 255.0).round().clamp(0.0, 255.0) / 255.0)
    })
}
