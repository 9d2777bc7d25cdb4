//! Tensor files (`NTF1`) and 8-bit PGM/PPM images.
//!
//! `NTF1` layout: the four bytes `NTF1`, a little-endian `u32` rank, one
//! little-endian `u32` per extent, then the payload as little-endian `f64`
//! in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NTF_MAGIC: &[u8; 4] = b"NTF1";

pub fn write_ntf<W: Write>(t: &Tensor, mut out: W) -> Result<()> {
    out.write_all(NTF_MAGIC)?;
    out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated NTF1 header".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_ntf<R: Read>(mut r: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("missing NTF1 magic".into()))?;
    if &magic != NTF_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let rank = read_u32(&mut r)? as usize;
    if rank == 0 || rank > 3 {
        return Err(Error::Format(format!("unsupported rank {rank}")));
    }
    let shape = (0..rank)
        .map(|_| read_u32(&mut r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated NTF1 payload".into()))?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(&shape, data)
}

pub fn save_ntf(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_ntf(t, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_ntf(path: impl AsRef<Path>) -> Result<Tensor> {
    read_ntf(fs::read(path)?.as_slice())
}

/// Writes a 1-channel image as binary PGM (P5) or a 3-channel image as
/// binary PPM (P6). Values are clamped to `[0, 1]` and rounded to 8 bits.
pub fn write_pnm<W: Write>(t: &Tensor, mut out: W) -> Result<()> {
    let (c, h, w) = t.dims3();
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::Format(format!("PNM needs 1 or 3 channels, got {c}"))),
    };
    write!(out, "{magic}\n{w} {h}\n255\n")?;
    let plane = h * w;
    let mut bytes = Vec::with_capacity(c * plane);
    for p in 0..plane {
        for ch in 0..c {
            let v = t.data()[ch * plane + p].clamp(0.0, 1.0);
            bytes.push((v * 255.0).round() as u8);
        }
    }
    out.write_all(&bytes)?;
    Ok(())
}

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
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PNM header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Reads binary PGM (P5) or PPM (P6) with maxval 255 into `[0, 1]`.
pub fn read_pnm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    let c = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::Format(format!("unsupported PNM type {m}"))),
    };
    let parse = |s: String| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PNM number {s}")))
    };
    let w = parse(next_token(bytes, &mut pos)?)?;
    let h = parse(next_token(bytes, &mut pos)?)?;
    let maxval = parse(next_token(bytes, &mut pos)?)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    pos += 1;
    let plane = w * h;
    let payload = bytes
        .get(pos..pos + c * plane)
        .ok_or_else(|| Error::Format("truncated PNM payload".into()))?;
    let mut data = vec![0.0; c * plane];
    for p in 0..plane {
        for ch in 0..c {
            data[ch * plane + p] = payload[p * c + ch] as f64 / maxval as f64;
        }
    }
    Tensor::image(c, h, w, data)
}

pub fn save_pnm(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_pnm(t, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_pnm(path: impl AsRef<Path>) -> Result<Tensor> {
    read_pnm(&fs::read(path)?)
}
