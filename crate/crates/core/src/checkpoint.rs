//! Versioned binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "UNLM" | version u32 | layer_count u32 | classes u32
//! per layer: in_dim u32 | out_dim u32 | activation u8 | frozen u8
//!            weights (out*in f64) | bias (out f64)
//! ```
//!
//! Parameters are stored as `f64` bit patterns, so save/load round-trips
//! are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, Model};
use crate::scalar::Scalar;

const MAGIC: [u8; 4] = *b"UNLM";
const VERSION: u32 = 1;

pub fn save<F: Scalar>(model: &Model<F>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(model.layer_count() as u32).to_le_bytes())?;
    w.write_all(&(model.output_dim() as u32).to_le_bytes())?;
    for layer in model.layers() {
        w.write_all(&(layer.in_dim() as u32).to_le_bytes())?;
        w.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
        let act = match layer.activation() {
            Activation::Identity => 0u8,
            Activation::Relu => 1u8,
        };
        w.write_all(&[act, layer.frozen() as u8])?;
        for v in layer.weights() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
        for v in layer.bias() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load<F: Scalar>(path: &Path) -> Result<Model<F>> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
        offset: 0,
    };
    let magic = r.bytes::<4>()?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic at byte 0: {magic:02x?}"
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let layer_count = r.u32()? as usize;
    let classes = r.u32()? as usize;
    if layer_count == 0 {
        return Err(Error::Checkpoint("zero layers".into()));
    }
    let mut layers = Vec::with_capacity(layer_count);
    for i in 0..layer_count {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let [act, frozen] = r.bytes::<2>()?;
        let activation = match act {
            0 => Activation::Identity,
            1 => Activation::Relu,
            other => {
                return Err(Error::Checkpoint(format!(
                    "layer {i}: unknown activation tag {other} at byte {}",
                    r.offset - 1
                )))
            }
        };
        let mut weights = Vec::with_capacity(in_dim * out_dim);
        for _ in 0..in_dim * out_dim {
            weights.push(F::from_f64(r.f64()?));
        }
        let mut bias = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            bias.push(F::from_f64(r.f64()?));
        }
        let mut layer = Layer::new(in_dim, out_dim, activation, weights, bias)
            .map_err(|e| Error::Checkpoint(format!("layer {i}: {e}")))?;
        if frozen > 1 {
            return Err(Error::Checkpoint(format!("layer {i}: bad frozen flag")));
        }
        if frozen == 1 {
            layer = frozen_copy(layer);
        }
        layers.push(layer);
    }
    let model = Model::from_layers(layers).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if model.output_dim() != classes {
        return Err(Error::Checkpoint(format!(
            "header claims {classes} classes, layers end at {}",
            model.output_dim()
        )));
    }
    Ok(model)
}

fn frozen_copy<F: Scalar>(layer: Layer<F>) -> Layer<F> {
    let mut m = Model::from_layers(vec![layer]).unwrap();
    m.set_frozen(0, true).unwrap();
    m.layers()[0].clone()
}

struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            Error::Checkpoint(format!("truncated at byte {}: {e}", self.offset))
        })?;
        self.offset += N as u64;
        Ok(buf)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes::<8>()?))
    }
}
