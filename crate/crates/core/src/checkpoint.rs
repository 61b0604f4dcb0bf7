//! Versioned little-endian weight files for generators and critics.
//!
//! Layout: magic `ARWT`, `u32` version, `u8` kind (0 generator, 1 critic),
//! `u8` activation (0 relu, 1 elu), `u32` layer count, then per layer `u32`
//! rows, `u32` cols and row-major `f64` entries. Generators append the
//! first-layer initialization `U⁰` (same shape as layer 0); critics append
//! `λ_GP` as one `f64`.

use std::path::Path;

use crate::critic::CriticParams;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Activation, ModelParams};

const MAGIC: &[u8; 4] = b"ARWT";
const VERSION: u32 = 1;
const KIND_MODEL: u8 = 0;
const KIND_CRITIC: u8 = 1;

fn put_matrix(buf: &mut Vec<u8>, m: &Matrix) {
    buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn header(kind: u8, activation: u8, depth: usize) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(kind);
    buf.push(activation);
    buf.extend_from_slice(&(depth as u32).to_le_bytes());
    buf
}

pub fn encode_model(p: &ModelParams) -> Vec<u8> {
    let act = match p.activation {
        Activation::Relu => 0,
        Activation::Elu => 1,
    };
    let mut buf = header(KIND_MODEL, act, p.depth());
    p.layers.iter().for_each(|m| put_matrix(&mut buf, m));
    let u0 = p.u0();
    buf.extend(u0.as_slice().iter().flat_map(|v| v.to_le_bytes()));
    buf
}

pub fn encode_critic(c: &CriticParams) -> Vec<u8> {
    let mut buf = header(KIND_CRITIC, 0, c.layers.len());
    c.layers.iter().for_each(|m| put_matrix(&mut buf, m));
    buf.extend_from_slice(&c.lambda_gp.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format {
            path: self.path.to_path_buf(),
            reason: format!("truncated at byte {}", self.at),
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.err("size overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let data = self.f64s(rows * cols)?;
        Matrix::from_vec(rows, cols, data).map_err(|e| self.err(&e.to_string()))
    }

    fn err(&self, reason: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
}

fn open<'a>(bytes: &'a [u8], path: &'a Path, kind: u8) -> Result<(Reader<'a>, u8, usize)> {
    let mut r = Reader { bytes, at: 0, path };
    if r.take(4)? != MAGIC {
        return Err(r.err("bad magic, not a weight file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(&format!("unsupported version {version}")));
    }
    let found = r.u8()?;
    if found != kind {
        return Err(r.err(&format!("expected kind {kind}, found {found}")));
    }
    let act = r.u8()?;
    let depth = r.u32()? as usize;
    if depth == 0 {
        return Err(r.err("zero layers"));
    }
    Ok((r, act, depth))
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    let (mut r, act, depth) = open(bytes, path, KIND_MODEL)?;
    let activation = match act {
        0 => Activation::Relu,
        1 => Activation::Elu,
        other => return Err(r.err(&format!("unknown activation code {other}"))),
    };
    let layers = (0..depth).map(|_| r.matrix()).collect::<Result<Vec<_>>>()?;
    let (rows, cols) = layers[0].shape();
    let u0 = Matrix::from_vec(rows, cols, r.f64s(rows * cols)?).map_err(|e| r.err(&e.to_string()))?;
    if r.at != bytes.len() {
        return Err(r.err("trailing bytes"));
    }
    ModelParams::with_init(layers, u0, activation).map_err(|e| r.err(&e.to_string()))
}

pub fn decode_critic(bytes: &[u8], path: &Path) -> Result<CriticParams> {
    let (mut r, _, depth) = open(bytes, path, KIND_CRITIC)?;
    let mut layers = (0..depth).map(|_| r.matrix()).collect::<Result<Vec<_>>>()?;
    let lambda = r.f64s(1)?[0];
    if r.at != bytes.len() {
        return Err(r.err("trailing bytes"));
    }
    let c = match depth {
        1 => CriticParams::linear(layers[0].row(0), lambda),
        2 => {
            let w2 = layers.pop().expect("two layers");
            let w1 = layers.pop().expect("two layers");
            CriticParams::two_layer(w1, w2, lambda)
        }
        n => return Err(r.err(&format!("critic with {n} layers is not supported"))),
    };
    c.map_err(|e| r.err(&e.to_string()))
}

pub fn save_model(p: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(p)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

pub fn save_critic(c: &CriticParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_critic(c)).map_err(|e| Error::io(path, e))
}

pub fn load_critic(path: impl AsRef<Path>) -> Result<CriticParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_critic(&bytes, path)
}
