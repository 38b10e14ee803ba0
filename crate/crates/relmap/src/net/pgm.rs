//! Binary PGM (P5, maxval 255) reader and writer. Pixel (row r, col c) maps
//! to tensor `[r, c, 0]` with values 0-255 as floats.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Tensor;

fn fail<T>(offset: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Format {
        offset,
        msg: msg.into(),
    })
}

/// Reads one whitespace-delimited header token, skipping `#` comment lines.
fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return fail(*pos, "unexpected end of header");
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)?;
    if magic != "P5" {
        return fail(0, format!("bad magic '{magic}', expected P5"));
    }
    let w: usize = next_token(bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::Format { offset: pos, msg: "bad width".into() })?;
    let h: usize = next_token(bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::Format { offset: pos, msg: "bad height".into() })?;
    let maxval_pos = pos;
    let maxval: usize = next_token(bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::Format { offset: pos, msg: "bad maxval".into() })?;
    if maxval != 255 {
        return fail(maxval_pos, format!("maxval {maxval} unsupported, expected 255"));
    }
    if w == 0 || h == 0 {
        return fail(maxval_pos, "zero image dimension");
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return fail(pos, "missing whitespace before pixel payload");
    }
    pos += 1;
    if bytes.len() < pos + w * h {
        return fail(
            pos,
            format!("payload has {} bytes, needs {}", bytes.len() - pos, w * h),
        );
    }
    let data = bytes[pos..pos + w * h].iter().map(|&b| b as f32).collect();
    Tensor::new(vec![h, w, 1], data)
}

pub fn encode(t: &Tensor) -> Result<Vec<u8>> {
    if t.rank() != 3 || t.shape()[2] != 1 {
        return Err(Error::ShapeMismatch(format!(
            "PGM export expects H x W x 1, got {:?}",
            t.shape()
        )));
    }
    let (h, w) = (t.shape()[0], t.shape()[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for &x in t.data() {
        out.push(x.round().clamp(0.0, 255.0) as u8);
    }
    Ok(out)
}

pub fn load_image_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&fs::read(path)?)
}

pub fn save_image_pgm(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(t)?)?;
    Ok(())
}
