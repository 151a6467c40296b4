//! Image file I/O: 8/16-bit PNG plus binary PPM/PGM. Pixel values map to
//! [0, 1]; images load as 1 x 3 x H x W tensors (grayscale is replicated,
//! alpha dropped). Writes are 8-bit with round-half-up quantization after
//! clamping, so identical tensors always produce identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

pub fn read_image<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => read_png(path),
        "ppm" | "pgm" => read_pnm(path),
        other => Err(Error::Format(format!(
            "unsupported image extension '{other}' for {}",
            path.display()
        ))),
    }
}

pub fn write_image<S: Scalar>(path: &Path, image: &Tensor<S>) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => write_png(path, image),
        "ppm" => write_ppm(path, image),
        other => Err(Error::Format(format!(
            "unsupported output image extension '{other}'"
        ))),
    }
}

fn check_writable_shape<S: Scalar>(image: &Tensor<S>) -> Result<(usize, usize)> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::ShapeMismatch {
            context: "image write",
            expected: "1x3xHxW".into(),
            got: s.to_string(),
        });
    }
    Ok((s.h, s.w))
}

pub fn quantize_u8<S: Scalar>(v: S) -> u8 {
    let clamped = v.to_f64().clamp(0.0, 1.0);
    (clamped * 255.0).round() as u8
}

fn read_png<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let file = File::open(path)?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let sixteen_bit = info.bit_depth == png::BitDepth::Sixteen;
    if !matches!(
        info.bit_depth,
        png::BitDepth::Eight | png::BitDepth::Sixteen
    ) {
        return Err(Error::Format(format!(
            "{}: only 8- and 16-bit PNG supported",
            path.display()
        )));
    }
    let max = if sixteen_bit { 65535.0 } else { 255.0 };
    let sample = |pixel: usize, ch: usize| -> f64 {
        let idx = pixel * channels + ch;
        if sixteen_bit {
            u16::from_be_bytes([buf[idx * 2], buf[idx * 2 + 1]]) as f64 / max
        } else {
            buf[idx] as f64 / max
        }
    };
    let mut data = vec![S::ZERO; 3 * h * w];
    for p in 0..h * w {
        let (r, g, b) = match info.color_type {
            png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => {
                let v = sample(p, 0);
                (v, v, v)
            }
            png::ColorType::Rgb | png::ColorType::Rgba => {
                (sample(p, 0), sample(p, 1), sample(p, 2))
            }
            other => {
                return Err(Error::Format(format!(
                    "{}: unsupported PNG color type {other:?}",
                    path.display()
                )))
            }
        };
        data[p] = S::from_f64(r);
        data[h * w + p] = S::from_f64(g);
        data[2 * h * w + p] = S::from_f64(b);
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), data)
}

fn write_png<S: Scalar>(path: &Path, image: &Tensor<S>) -> Result<()> {
    let (h, w) = check_writable_shape(image)?;
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Format(e.to_string()))?;
    let data = image.data();
    let hw = h * w;
    let mut rgb = Vec::with_capacity(3 * hw);
    for p in 0..hw {
        rgb.push(quantize_u8(data[p]));
        rgb.push(quantize_u8(data[hw + p]));
        rgb.push(quantize_u8(data[2 * hw + p]));
    }
    writer
        .write_image_data(&rgb)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

fn read_pnm<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let magic = read_token(&bytes, &mut pos)
        .ok_or_else(|| Error::Format(format!("{}: truncated header", path.display())))?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported PNM magic '{other}' (binary P5/P6 only)",
                path.display()
            )))
        }
    };
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let tok = read_token(&bytes, &mut pos)
            .ok_or_else(|| Error::Format(format!("{}: truncated header", path.display())))?;
        *d = tok
            .parse()
            .map_err(|_| Error::Format(format!("{}: bad header field '{tok}'", path.display())))?;
    }
    let (w, h, maxval) = (dims[0], dims[1], dims[2]);
    if maxval != 255 && maxval != 65535 {
        return Err(Error::Format(format!(
            "{}: unsupported maxval {maxval}",
            path.display()
        )));
    }
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let needed = w * h * channels * bytes_per;
    let raster = &bytes[pos..];
    if raster.len() < needed {
        return Err(Error::Format(format!(
            "{}: raster truncated ({} of {needed} bytes)",
            path.display(),
            raster.len()
        )));
    }
    let max = maxval as f64;
    let hw = h * w;
    let mut data = vec![S::ZERO; 3 * hw];
    for p in 0..hw {
        for c in 0..3 {
            let src_c = if channels == 1 { 0 } else { c };
            let idx = (p * channels + src_c) * bytes_per;
            let v = if bytes_per == 2 {
                u16::from_be_bytes([raster[idx], raster[idx + 1]]) as f64 / max
            } else {
                raster[idx] as f64 / max
            };
            data[c * hw + p] = S::from_f64(v);
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), data)
}

/// Next whitespace-delimited token, skipping '#' comments.
fn read_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    while *pos < bytes.len() {
        let b = bytes[*pos];
        if b == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            *pos += 1;
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos > start {
        let tok = String::from_utf8_lossy(&bytes[start..*pos]).into_owned();
        *pos += 1; // single whitespace after the maxval precedes the raster
        Some(tok)
    } else {
        None
    }
}

fn write_ppm<S: Scalar>(path: &Path, image: &Tensor<S>) -> Result<()> {
    let (h, w) = check_writable_shape(image)?;
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    write!(out, "P6\n{w} {h}\n255\n")?;
    let data = image.data();
    let hw = h * w;
    for p in 0..hw {
        out.write_all(&[
            quantize_u8(data[p]),
            quantize_u8(data[hw + p]),
            quantize_u8(data[2 * hw + p]),
        ])?;
    }
    out.flush()?;
    Ok(())
}
