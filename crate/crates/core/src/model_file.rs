//! Binary model format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic            6 bytes  "LWHAR1"
//! version          u16      1
//! hyperparameters  window_size u32, stride u32, batch_size u32, epochs u32,
//!                  learning_rate f64, l2_coeff f64, hidden u32, layers u32,
//!                  seed u64, aggregation u8 (0 = sum, 1 = last)
//! preprocessing    split_ratio f64, subject_split u8, normalized u8,
//!                  mean f64×3, std f64×3 (zeros when not normalized)
//! shape table      input u32, hidden u32, classes u32, tensor_count u32,
//!                  then rows u32, cols u32 per tensor
//! payload          every tensor as f64, row-major, in storage order:
//!                  layer1 gates i, f, c, o (w_x, w_h, b, peephole; c has no
//!                  peephole), layer2 the same, head_w, head_b
//! checksum         u64 FNV-1a over every preceding byte
//! ```

use std::path::Path;

use thiserror::Error;

use crate::dataset::{ChannelStats, Preprocessing};
use crate::recurrent::{Aggregation, NetworkParams};
use crate::training::Hyperparameters;

pub const MAGIC: &[u8; 6] = b"LWHAR1";
pub const FORMAT_VERSION: u16 = 1;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u16),
    #[error("checksum mismatch or truncated file (stored {stored:#018x}, computed {computed:#018x})")]
    Checksum { stored: u64, computed: u64 },
    #[error("malformed model file: {0}")]
    Malformed(String),
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Everything a trained model needs for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub params: NetworkParams,
    pub hyperparameters: Hyperparameters,
    pub preprocessing: Preprocessing,
}

fn u32_of(v: usize, what: &str) -> Result<u32, ModelFileError> {
    u32::try_from(v).map_err(|_| ModelFileError::Malformed(format!("{what} {v} does not fit in u32")))
}

pub fn encode(bundle: &ModelBundle) -> Result<Vec<u8>, ModelFileError> {
    let hp = &bundle.hyperparameters;
    let np = &bundle.params;
    let mut out = Vec::with_capacity(128 + 8 * 12_000);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

    for (v, what) in [
        (hp.window_size, "window_size"),
        (hp.stride, "stride"),
        (hp.batch_size, "batch_size"),
        (hp.epochs, "epochs"),
    ] {
        out.extend_from_slice(&u32_of(v, what)?.to_le_bytes());
    }
    out.extend_from_slice(&hp.learning_rate.to_le_bytes());
    out.extend_from_slice(&hp.l2_coeff.to_le_bytes());
    out.extend_from_slice(&u32_of(hp.hidden, "hidden")?.to_le_bytes());
    out.extend_from_slice(&u32_of(hp.layers, "layers")?.to_le_bytes());
    out.extend_from_slice(&hp.seed.to_le_bytes());
    out.push(match hp.aggregation {
        Aggregation::Sum => 0,
        Aggregation::Last => 1,
    });

    let pre = &bundle.preprocessing;
    out.extend_from_slice(&pre.split_ratio.to_le_bytes());
    out.push(pre.subject_split as u8);
    out.push(pre.normalization.is_some() as u8);
    let stats = pre.normalization.unwrap_or(ChannelStats {
        mean: [0.0; 3],
        std: [0.0; 3],
    });
    for v in stats.mean.iter().chain(&stats.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }

    let tensors = np.tensors();
    for (v, what) in [
        (np.input_size(), "input"),
        (np.hidden(), "hidden"),
        (np.classes(), "classes"),
        (tensors.len(), "tensor count"),
    ] {
        out.extend_from_slice(&u32_of(v, what)?.to_le_bytes());
    }
    for t in &tensors {
        out.extend_from_slice(&u32_of(t.rows, "rows")?.to_le_bytes());
        out.extend_from_slice(&u32_of(t.cols, "cols")?.to_le_bytes());
    }
    for t in &tensors {
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelFileError> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| ModelFileError::Malformed(format!("unexpected end of data at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelFileError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelFileError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, ModelFileError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize, ModelFileError> {
        Ok(self.u32()? as usize)
    }
}

/// Checks magic, version and checksum in that order, then decodes.
pub fn decode(bytes: &[u8]) -> Result<ModelBundle, ModelFileError> {
    if bytes.len() >= MAGIC.len() && &bytes[..MAGIC.len()] != MAGIC {
        return Err(ModelFileError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 2 + 8 {
        return Err(ModelFileError::Checksum { stored: 0, computed: 0 });
    }
    let version = u16::from_le_bytes([bytes[6], bytes[7]]);
    if version != FORMAT_VERSION {
        return Err(ModelFileError::UnsupportedVersion(version));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(ModelFileError::Checksum { stored, computed });
    }

    let mut cur = Cursor { bytes: body, pos: 8 };
    let window_size = cur.usize()?;
    let stride = cur.usize()?;
    let batch_size = cur.usize()?;
    let epochs = cur.usize()?;
    let learning_rate = cur.f64()?;
    let l2_coeff = cur.f64()?;
    let hidden = cur.usize()?;
    let layers = cur.usize()?;
    let seed = cur.u64()?;
    let aggregation = match cur.u8()? {
        0 => Aggregation::Sum,
        1 => Aggregation::Last,
        other => return Err(ModelFileError::Malformed(format!("aggregation code {other}"))),
    };
    let hyperparameters = Hyperparameters {
        window_size,
        stride,
        batch_size,
        epochs,
        learning_rate,
        l2_coeff,
        hidden,
        layers,
        seed,
        aggregation,
    };

    let split_ratio = cur.f64()?;
    let subject_split = cur.u8()? != 0;
    let normalized = cur.u8()? != 0;
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for v in mean.iter_mut().chain(std.iter_mut()) {
        *v = cur.f64()?;
    }
    let preprocessing = Preprocessing {
        split_ratio,
        subject_split,
        normalization: normalized.then_some(ChannelStats { mean, std }),
    };

    let input = cur.usize()?;
    let net_hidden = cur.usize()?;
    let classes = cur.usize()?;
    let count = cur.usize()?;
    if input == 0 || net_hidden == 0 || classes == 0 || input > 1 << 16 || net_hidden > 1 << 16 || classes > 1 << 16 {
        return Err(ModelFileError::Malformed(format!(
            "implausible shape {input}/{net_hidden}/{classes}"
        )));
    }
    let mut params = NetworkParams::zeros(input, net_hidden, classes);
    let mut targets = params.tensors_mut();
    if count != targets.len() {
        return Err(ModelFileError::Malformed(format!(
            "expected {} tensors, file lists {count}",
            targets.len()
        )));
    }
    for t in &targets {
        let (rows, cols) = (cur.usize()?, cur.usize()?);
        if (rows, cols) != (t.rows, t.cols) {
            return Err(ModelFileError::Malformed(format!(
                "tensor {} is {}x{}, file says {rows}x{cols}",
                t.name, t.rows, t.cols
            )));
        }
    }
    for t in targets.iter_mut() {
        for v in t.data.iter_mut() {
            *v = cur.f64()?;
        }
    }
    drop(targets);
    if cur.pos != body.len() {
        return Err(ModelFileError::Malformed(format!(
            "{} trailing bytes before checksum",
            body.len() - cur.pos
        )));
    }
    Ok(ModelBundle {
        params,
        hyperparameters,
        preprocessing,
    })
}

pub fn save_model(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<(), ModelFileError> {
    std::fs::write(path, encode(bundle)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelBundle, ModelFileError> {
    decode(&std::fs::read(path)?)
}
