//! Binary PPM (P6) images, binary PGM (P5) masks and `WMAPf32` weight-map sidecars.

use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::{BinaryMask, BoundaryWeightMap};
use crate::tensor::Tensor;

/// Upper bound on pixels accepted from a header, to reject absurd allocations.
pub const MAX_PIXELS: usize = 1 << 28;
pub const WMAP_MAGIC: &[u8; 7] = b"WMAPf32";

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::format(path, "missing netpbm magic"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments before each field
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::format(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, format!("malformed header field {}", i + 1)));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(path, "header value overflows"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(path, "malformed header terminator")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::format(path, "zero image dimension"));
    }
    if width.checked_mul(height).is_none_or(|p| p > MAX_PIXELS) {
        return Err(Error::format(path, format!("dimensions {width}x{height} overflow the pixel limit")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(
            path,
            format!("unsupported maxval {maxval} (only 8-bit rasters are supported)"),
        ));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        data_start: pos,
    })
}

fn raster<'a>(bytes: &'a [u8], h: &Header, channels: usize, path: &Path) -> Result<&'a [u8]> {
    let need = h.width * h.height * channels;
    let data = &bytes[h.data_start..];
    if data.len() < need {
        return Err(Error::format(
            path,
            format!("truncated raster: {} of {need} bytes", data.len()),
        ));
    }
    Ok(&data[..need])
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `(1, 3, H, W)` image in `[0, 1]` as P6.
pub fn encode_ppm(image: &Tensor<f64>) -> Result<Vec<u8>> {
    let [n, c, h, w] = image.shape();
    if n != 1 || c != 3 {
        return Err(Error::dim("channels", format!("PPM needs a (1,3,H,W) image, got {:?}", image.shape())));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w * 3);
    for i in 0..h * w {
        for ch in 0..3 {
            out.push(quantize(image.plane(0, ch)[i]));
        }
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Tensor<f64>> {
    let h = parse_header(bytes, path)?;
    if &h.magic != b"P6" {
        return Err(Error::format(path, "expected a binary PPM (P6)"));
    }
    let data = raster(bytes, &h, 3, path)?;
    let scale = h.maxval as f64;
    let hw = h.width * h.height;
    let mut img = Tensor::zeros([1, 3, h.height, h.width]);
    let d = img.data_mut();
    for i in 0..hw {
        for ch in 0..3 {
            d[ch * hw + i] = data[i * 3 + ch] as f64 / scale;
        }
    }
    Ok(img)
}

pub fn save_image(path: &Path, image: &Tensor<f64>) -> Result<()> {
    write_file(path, &encode_ppm(image)?)
}

pub fn load_image(path: &Path) -> Result<Tensor<f64>> {
    decode_ppm(&read_file(path)?, path)
}

/// Writes a greyscale map in `[0, 1]` as P5.
pub fn encode_pgm_gray(values: &[f64], height: usize, width: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| quantize(v)));
    out
}

pub fn encode_mask(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.data().iter().map(|&v| if v == 1 { 255 } else { 0 }));
    out
}

/// Decodes a P5 mask; values above half of maxval are portrait.
pub fn decode_mask(bytes: &[u8], path: &Path) -> Result<BinaryMask> {
    let h = parse_header(bytes, path)?;
    if &h.magic != b"P5" {
        return Err(Error::format(path, "expected a binary PGM (P5)"));
    }
    let data = raster(bytes, &h, 1, path)?;
    let half = h.maxval / 2;
    BinaryMask::new(
        h.height,
        h.width,
        data.iter().map(|&v| (v as usize > half) as u8).collect(),
    )
}

pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_file(path, &encode_mask(mask))
}

pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    decode_mask(&read_file(path)?, path)
}

/// `WMAPf32` magic, u32 width, u32 height, then row-major little-endian `f32` weights.
pub fn encode_weight_map(map: &BoundaryWeightMap) -> Vec<u8> {
    let mut out = WMAP_MAGIC.to_vec();
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    for &w in map.weights() {
        out.extend_from_slice(&(w as f32).to_le_bytes());
    }
    out
}

pub fn decode_weight_map(bytes: &[u8], path: &Path) -> Result<BoundaryWeightMap> {
    if bytes.len() < 15 || &bytes[..7] != WMAP_MAGIC {
        return Err(Error::format(path, "bad weight-map magic"));
    }
    let width = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[11..15].try_into().unwrap()) as usize;
    if width == 0 || height == 0 || width.checked_mul(height).is_none_or(|p| p > MAX_PIXELS) {
        return Err(Error::format(path, format!("invalid weight-map dimensions {width}x{height}")));
    }
    let body = &bytes[15..];
    if body.len() != width * height * 4 {
        return Err(Error::format(
            path,
            format!("weight map body has {} bytes, expected {}", body.len(), width * height * 4),
        ));
    }
    let weights = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(BoundaryWeightMap::from_weights(height, width, weights))
}

pub fn save_weight_map(path: &Path, map: &BoundaryWeightMap) -> Result<()> {
    write_file(path, &encode_weight_map(map))
}

pub fn load_weight_map(path: &Path) -> Result<BoundaryWeightMap> {
    decode_weight_map(&read_file(path)?, path)
}
