//! 8-bit grayscale file I/O: PNG and binary PGM (P5) in, PNG out.
//!
//! Loading maps bytes to `[0, 1]`; RGB PNGs collapse to Rec. 601 luma.
//! Saving clamps to `[0, 1]` and rounds half away from zero, so the encoded
//! bytes never depend on platform rounding modes.

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];

/// Rec. 601 luma weights for R, G, B.
pub const LUMA_601: [f64; 3] = [0.299, 0.587, 0.114];

/// Maps an intensity to its exported byte: `round(clamp(x, 0, 1) * 255)`.
#[inline]
pub fn quantize(x: f64) -> u8 {
    // f64::round is half-away-from-zero.
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, path)
}

/// Decodes an in-memory PNG or PGM; `path` is only used in error values.
pub fn decode_image(bytes: &[u8], path: &Path) -> Result<Image> {
    if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(bytes, path)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(bytes, path)
    } else if bytes.len() >= 2 && bytes[0] == b'P' && bytes[1].is_ascii_digit() {
        Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!("netpbm variant P{} (only binary P5 is supported)", bytes[1] as char),
        })
    } else {
        Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "not a PNG or PGM file".into(),
        })
    }
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Image> {
    let corrupt = |detail: String| Error::CorruptHeader {
        path: path.to_path_buf(),
        detail,
    };
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| corrupt(e.to_string()))?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!("bit depth {depth:?} (only 8-bit is supported)"),
        });
    }
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("color type {other:?} (only grayscale and RGB are supported)"),
            })
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| corrupt("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| corrupt(e.to_string()))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let line = &buf[y * frame.line_size..y * frame.line_size + w * channels];
        if channels == 1 {
            data.extend(line.iter().map(|&b| f64::from(b) / 255.0));
        } else {
            data.extend(line.chunks_exact(3).map(|px| {
                (LUMA_601[0] * f64::from(px[0])
                    + LUMA_601[1] * f64::from(px[1])
                    + LUMA_601[2] * f64::from(px[2]))
                    / 255.0
            }));
        }
    }
    Image::new(w, h, data).map_err(|e| corrupt(e.to_string()))
}

fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Image> {
    let corrupt = |detail: &str| Error::CorruptHeader {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while !matches!(bytes.get(pos), None | Some(b'\n')) {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(corrupt("expected width, height and maxval"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt("numeric field out of range"))?;
    }
    let [w, h, maxval] = fields;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(corrupt("missing separator after maxval"));
    }
    pos += 1;
    if w == 0 || h == 0 {
        return Err(corrupt("zero dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(corrupt("maxval must be in 1..=65535"));
    }
    if maxval > 255 {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!("16-bit PGM (maxval {maxval})"),
        });
    }
    let pixels = &bytes[pos..];
    let n = w.checked_mul(h).ok_or_else(|| corrupt("dimensions overflow"))?;
    if pixels.len() < n {
        return Err(corrupt("truncated pixel data"));
    }
    let scale = maxval as f64;
    let data = pixels[..n]
        .iter()
        .map(|&b| (f64::from(b) / scale).min(1.0))
        .collect();
    Ok(Image::from_raw(w, h, data))
}

/// Encodes an image as an 8-bit grayscale PNG.
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_png(img, &mut out, Path::new("<memory>"))?;
    Ok(out)
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_png(img, &mut w, path)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_png<W: Write>(img: &Image, sink: W, path: &Path) -> Result<()> {
    let encode_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::Encode {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    };
    let mut enc = png::Encoder::new(sink, img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(encode_err)?;
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    writer.write_image_data(&bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}
