//! Binary checkpoints for networks and compressed networks.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "COPI" | version u32 | kind u8 (0 network, 1 compressed)
//! network:    layer count u32, then per layer: in u32, out u32,
//!             activation tag u8, slope f64, W (out×in f64), R (in×in f64);
//!             feedback flag u8, then per hidden layer: rows u32, cols u32, B
//! compressed: prefix as above (count may be 0), output activation tag + slope,
//!             readout flag u8, then "RDOT", source u32, target u32,
//!             R rows u32, R, B rows u32, B cols u32, B, fit_diag (B cols f64)
//! CRC32 of every preceding byte, u32
//! ```

use std::fs;
use std::path::Path;

use crate::analysis::{CompressedNetwork, LinearReadout};
use crate::error::{CopiError, Result};
use crate::network::{Activation, Layer, Network};
use crate::tensor::Matrix;

const MAGIC: &[u8; 4] = b"COPI";
const READOUT_TAG: &[u8; 4] = b"RDOT";
pub const FORMAT_VERSION: u32 = 1;

const KIND_NETWORK: u8 = 0;
const KIND_COMPRESSED: u8 = 1;

/// Upper bound on any stored dimension, to reject absurd headers before
/// allocating.
const MAX_DIM: u32 = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Network(Network),
    Compressed(CompressedNetwork),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn activation(&mut self, a: Activation) {
        match a {
            Activation::Identity => {
                self.u8(0);
                self.f64s(&[0.0]);
            }
            Activation::LeakyRelu { slope } => {
                self.u8(1);
                self.f64s(&[slope]);
            }
        }
    }

    fn layers(&mut self, layers: &[Layer]) {
        self.u32(layers.len());
        for l in layers {
            self.u32(l.input_dim());
            self.u32(l.output_dim());
            self.activation(l.activation);
            self.f64s(l.w.data());
            self.f64s(l.r.data());
        }
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CopiError::Checkpoint(format!(
                "truncated while reading {what}"
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        let d = self.u32(what)?;
        if d == 0 || d > MAX_DIM {
            return Err(CopiError::Checkpoint(format!("{what} {d} is out of range")));
        }
        Ok(d as usize)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| CopiError::Checkpoint(format!("{what} size overflows")))?,
            what,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
        let data = self.f64s(rows * cols, what)?;
        Matrix::new(rows, cols, data)
    }

    fn activation(&mut self) -> Result<Activation> {
        let tag = self.u8("activation tag")?;
        let slope = self.f64s(1, "activation slope")?[0];
        match tag {
            0 => Ok(Activation::Identity),
            1 => Activation::leaky_relu(slope)
                .map_err(|_| CopiError::Checkpoint(format!("invalid leaky-ReLU slope {slope}"))),
            t => Err(CopiError::Checkpoint(format!("unknown activation tag {t}"))),
        }
    }

    fn layers(&mut self) -> Result<Vec<Layer>> {
        let count = self.u32("layer count")?;
        if count > 4096 {
            return Err(CopiError::Checkpoint(format!(
                "layer count {count} is out of range"
            )));
        }
        (1..=count)
            .map(|l| {
                let inp = self.dim(&format!("layer {l} input dim"))?;
                let out = self.dim(&format!("layer {l} output dim"))?;
                let act = self.activation()?;
                let w = self.matrix(out, inp, &format!("layer {l} W"))?;
                let r = self.matrix(inp, inp, &format!("layer {l} R"))?;
                Layer::new(w, r, act).map_err(|e| CopiError::Checkpoint(e.to_string()))
            })
            .collect()
    }
}

fn header(kind: u8) -> Writer {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION as usize);
    w.u8(kind);
    w
}

pub fn encode_network(network: &Network) -> Vec<u8> {
    let mut w = header(KIND_NETWORK);
    w.layers(&network.layers);
    match &network.feedback {
        Some(fb) => {
            w.u8(1);
            for b in fb {
                w.u32(b.rows());
                w.u32(b.cols());
                w.f64s(b.data());
            }
        }
        None => w.u8(0),
    }
    w.finish()
}

pub fn encode_compressed(net: &CompressedNetwork) -> Vec<u8> {
    let mut w = header(KIND_COMPRESSED);
    w.layers(&net.prefix);
    w.activation(net.output_activation);
    match (&net.lateral, &net.readout) {
        (Some(r), Some(ro)) => {
            w.u8(1);
            w.buf.extend_from_slice(READOUT_TAG);
            w.u32(ro.source_layer);
            w.u32(ro.target_layer);
            w.u32(r.rows());
            w.f64s(r.data());
            w.u32(ro.b.rows());
            w.u32(ro.b.cols());
            w.f64s(ro.b.data());
            w.f64s(&ro.fit_diag);
        }
        _ => w.u8(0),
    }
    w.finish()
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CopiError::Checkpoint(
            "bad magic bytes, not a COPI checkpoint".into(),
        ));
    }
    if bytes.len() < 13 {
        return Err(CopiError::Checkpoint("truncated header".into()));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(CopiError::Checkpoint(format!(
            "CRC mismatch (stored {stored:08x}, computed {actual:08x})"
        )));
    }
    let mut r = Reader {
        bytes: body,
        pos: 4,
    };
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CopiError::Checkpoint(format!(
            "unsupported version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let kind = r.u8("kind")?;
    let out = match kind {
        KIND_NETWORK => {
            let layers = r.layers()?;
            let feedback = match r.u8("feedback flag")? {
                0 => None,
                1 => {
                    let mut fb = Vec::new();
                    for l in 1..layers.len() {
                        let rows = r.dim(&format!("feedback {l} rows"))?;
                        let cols = r.dim(&format!("feedback {l} cols"))?;
                        fb.push(r.matrix(rows, cols, &format!("feedback {l}"))?);
                    }
                    Some(fb)
                }
                f => return Err(CopiError::Checkpoint(format!("bad feedback flag {f}"))),
            };
            if layers.is_empty() {
                return Err(CopiError::Checkpoint("network has no layers".into()));
            }
            Checkpoint::Network(
                Network::new(layers, feedback).map_err(|e| CopiError::Checkpoint(e.to_string()))?,
            )
        }
        KIND_COMPRESSED => {
            let prefix = r.layers()?;
            let output_activation = r.activation()?;
            let (lateral, readout) = match r.u8("readout flag")? {
                0 => (None, None),
                1 => {
                    if r.take(4, "readout tag")? != READOUT_TAG {
                        return Err(CopiError::Checkpoint("missing readout section tag".into()));
                    }
                    let source_layer = r.u32("readout source")? as usize;
                    let target_layer = r.u32("readout target")? as usize;
                    let k = r.dim("lateral dim")?;
                    let lat = r.matrix(k, k, "lateral R")?;
                    let rows = r.dim("readout rows")?;
                    let cols = r.dim("readout cols")?;
                    if cols != k {
                        return Err(CopiError::Checkpoint(format!(
                            "readout has {cols} inputs but lateral matrix is {k}x{k}"
                        )));
                    }
                    let b = r.matrix(rows, cols, "readout B")?;
                    let fit_diag = r.f64s(cols, "readout fit_diag")?;
                    (
                        Some(lat),
                        Some(LinearReadout {
                            b,
                            source_layer,
                            target_layer,
                            fit_diag,
                        }),
                    )
                }
                f => return Err(CopiError::Checkpoint(format!("bad readout flag {f}"))),
            };
            if let (Some(first), Some(lat)) = (prefix.last(), &lateral) {
                if first.output_dim() != lat.rows() {
                    return Err(CopiError::Checkpoint(
                        "prefix does not chain into the readout".into(),
                    ));
                }
            }
            if prefix.is_empty() && readout.is_none() {
                return Err(CopiError::Checkpoint("compressed network is empty".into()));
            }
            Checkpoint::Compressed(CompressedNetwork {
                prefix,
                lateral,
                readout,
                output_activation,
            })
        }
        k => {
            return Err(CopiError::Checkpoint(format!(
                "unknown checkpoint kind {k}"
            )))
        }
    };
    if r.pos != body.len() {
        return Err(CopiError::Checkpoint(format!(
            "{} trailing bytes after payload",
            body.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn save_network(path: impl AsRef<Path>, network: &Network) -> Result<()> {
    fs::write(path, encode_network(network))?;
    Ok(())
}

pub fn save_compressed(path: impl AsRef<Path>, net: &CompressedNetwork) -> Result<()> {
    fs::write(path, encode_compressed(net))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CopiError::Read {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes).map_err(|e| match e {
        CopiError::Checkpoint(m) => CopiError::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads a checkpoint that must hold a full network.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    match load(path)? {
        Checkpoint::Network(n) => Ok(n),
        Checkpoint::Compressed(_) => Err(CopiError::Checkpoint(format!(
            "{} holds a compressed network, expected a full one",
            path.display()
        ))),
    }
}
