//! `NNC1` network checkpoints.
//!
//! Layout (little endian): magic `NNC1`, `u32` layer count, `u8` residual
//! flag, then per layer `u8` kind (0 dense, 1 conv), `u32` out, `u32` in,
//! `u32` kernel size (0 for dense), `u8` activation (0 identity, 1 leaky,
//! 2 sort pairs), `f64` leaky slope, `f64` averagedness. All parameters
//! follow as `f64` in [`Network::params`] order.

use std::io::{Read, Write};
use std::path::Path;

use super::{ActivationKind, ActivationSpec, Layer, LayerKind, Network};
use crate::error::{Error, Result};

pub const NNC_MAGIC: &[u8; 4] = b"NNC1";

pub fn write_network<W: Write>(net: &Network, mut out: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(NNC_MAGIC);
    buf.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    buf.push(net.residual() as u8);
    for l in net.layers() {
        let (kind, o, i, k) = match l.kind {
            LayerKind::Dense { out, inp } => (0u8, out, inp, 0),
            LayerKind::Conv { cout, cin, k } => (1u8, cout, cin, k),
        };
        buf.push(kind);
        for v in [o, i, k] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let (code, slope) = match l.activation.kind {
            ActivationKind::Identity => (0u8, 0.0),
            ActivationKind::LeakyRelu { slope } => (1u8, slope),
            ActivationKind::SortPairs => (2u8, 0.0),
        };
        buf.push(code);
        buf.extend_from_slice(&slope.to_le_bytes());
        buf.extend_from_slice(&l.activation.averagedness.to_le_bytes());
    }
    for p in net.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.0.len() < n {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let (a, b) = self.0.split_at(n);
        self.0 = b;
        Ok(a)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_network<R: Read>(mut r: R) -> Result<Network> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor(&bytes);
    if c.take(4)? != NNC_MAGIC {
        return Err(Error::Format("not an NNC1 checkpoint".into()));
    }
    let count = c.u32()?;
    if count == 0 || count > 1 << 16 {
        return Err(Error::Format(format!("implausible layer count {count}")));
    }
    let residual = match c.u8()? {
        0 => false,
        1 => true,
        b => return Err(Error::Format(format!("bad residual flag {b}"))),
    };
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let kind_code = c.u8()?;
        let (o, i, k) = (c.u32()?, c.u32()?, c.u32()?);
        let kind = match kind_code {
            0 => LayerKind::Dense { out: o, inp: i },
            1 => LayerKind::Conv { cout: o, cin: i, k },
            b => return Err(Error::Format(format!("bad layer kind {b}"))),
        };
        let code = c.u8()?;
        let slope = c.f64()?;
        let averagedness = c.f64()?;
        let kind_act = match code {
            0 => ActivationKind::Identity,
            1 => ActivationKind::LeakyRelu { slope },
            2 => ActivationKind::SortPairs,
            b => return Err(Error::Format(format!("bad activation code {b}"))),
        };
        let (nw, nb) = match kind {
            LayerKind::Dense { out, inp } => (out.saturating_mul(inp), out),
            LayerKind::Conv { cout, cin, k } => (cout.saturating_mul(cin).saturating_mul(k * k), cout),
        };
        if nw > bytes.len() {
            return Err(Error::Format("layer larger than the file".into()));
        }
        layers.push(Layer {
            kind,
            weight: vec![0.0; nw],
            bias: vec![0.0; nb],
            activation: ActivationSpec {
                kind: kind_act,
                averagedness,
            },
        });
    }
    let mut net = Network::new(layers, residual).map_err(|e| Error::Format(e.to_string()))?;
    let n = net.num_params();
    if c.0.len() != n * 8 {
        return Err(Error::Format(format!(
            "expected {} parameter bytes, found {}",
            n * 8,
            c.0.len()
        )));
    }
    let params = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("checkpoint parameters".into()));
    }
    net.set_params(&params)?;
    Ok(net)
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_network(net, std::io::BufWriter::new(f))
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    read_network(std::fs::File::open(path)?)
}
