//! `SVM1` model files.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field            | type                          |
//! |------------------|-------------------------------|
//! | magic            | `b"SVM1"`                     |
//! | layer count `L`  | u32                           |
//! | class count `K`  | u32                           |
//! | activation       | u8 (0 = relu, 1 = identity)   |
//! | widths           | `L + 1` × u32                 |
//! | bias flags       | `L` × u8                      |
//! | parameters       | f64, see below                |
//!
//! Parameters follow layer by layer: the `out × in` weight matrix row-major,
//! then the bias if flagged, and finally the `K × embed` classifier.

use svsoftmax_core::trainer::{Activation, Dense};
use svsoftmax_core::{EmbeddingNet, Matrix, WeightMatrix};

pub const MAGIC: &[u8; 4] = b"SVM1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ModelFormatError(pub String);

pub fn encode(net: &EmbeddingNet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, net.layers.len());
    put_u32(&mut out, net.num_classes());
    out.push(match net.activation {
        Activation::Relu => 0,
        Activation::Identity => 1,
    });
    for w in net.widths() {
        put_u32(&mut out, w);
    }
    out.extend(net.layers.iter().map(|l| u8::from(l.bias.is_some())));
    for l in &net.layers {
        put_f64s(&mut out, l.weight.as_slice());
        if let Some(b) = &l.bias {
            put_f64s(&mut out, b);
        }
    }
    put_f64s(&mut out, net.classifier.data.as_slice());
    out
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingNet, ModelFormatError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ModelFormatError("bad magic, not an SVM1 model".into()));
    }
    let layers = r.u32()?;
    let classes = r.u32()?;
    let activation = match r.take(1)?[0] {
        0 => Activation::Relu,
        1 => Activation::Identity,
        other => return Err(ModelFormatError(format!("unknown activation tag {other}"))),
    };
    if layers == 0 || layers > 1024 {
        return Err(ModelFormatError(format!("implausible layer count {layers}")));
    }
    let widths = (0..=layers).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
    let flags = r.take(layers)?.to_vec();
    let mut dense = Vec::with_capacity(layers);
    for (i, &flag) in flags.iter().enumerate() {
        let (fan_in, fan_out) = (widths[i], widths[i + 1]);
        let weight = r.matrix(fan_out, fan_in)?;
        let bias = match flag {
            0 => None,
            1 => Some(r.f64s(fan_out)?),
            other => return Err(ModelFormatError(format!("bad bias flag {other}"))),
        };
        dense.push(Dense { weight, bias });
    }
    let classifier = WeightMatrix::raw(r.matrix(classes, widths[layers])?);
    if r.pos != bytes.len() {
        return Err(ModelFormatError(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(EmbeddingNet {
        layers: dense,
        activation,
        classifier,
    })
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("model dimensions fit in u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelFormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelFormatError("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, ModelFormatError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ModelFormatError> {
        let len = n.checked_mul(8).ok_or_else(|| ModelFormatError("size overflow".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix, ModelFormatError> {
        let n = rows.checked_mul(cols).ok_or_else(|| ModelFormatError("size overflow".into()))?;
        Matrix::from_vec(rows, cols, self.f64s(n)?).map_err(|e| ModelFormatError(e.to_string()))
    }
}
