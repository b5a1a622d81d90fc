//! Single-file binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "GORQATCK"
//! version      u32      currently 1
//! payload_len  u64
//! payload      payload_len bytes
//! checksum     32 bytes SHA-256 of payload
//! ```
//!
//! The payload holds the model, then an optional scalar state, then an
//! optional quantization plan; see `docs/checkpoint-format.md` for the field
//! table. Floats are stored as raw IEEE-754 bits, so a load/save round trip
//! is bit-exact. Run configuration goes to a JSON sidecar next to the file.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::{CheckpointError, Result};
use crate::model::{Activation, Layer, ModelParams, Role};
use crate::quant::{QuantPlan, QuantSpec, RangeSource};
use crate::regularizer::GorState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GORQATCK";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub gor: Option<GorState>,
    pub quant: Option<QuantPlan>,
}

type CkResult<T> = std::result::Result<T, CheckpointError>;

fn malformed(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed(msg.into())
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        write_payload(&mut payload, self).expect("writing to a Vec cannot fail");
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CHECKSUM_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&Sha256::digest(&payload));
        out
    }

    pub fn decode(bytes: &[u8]) -> CkResult<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(CheckpointError::Truncated(format!("{} byte file", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(CheckpointError::Truncated("header cut short".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let body = &bytes[HEADER_LEN..];
        let needed = usize::try_from(len)
            .ok()
            .and_then(|l| l.checked_add(CHECKSUM_LEN))
            .ok_or_else(|| malformed("payload length overflow"))?;
        if body.len() < needed {
            return Err(CheckpointError::Truncated(format!(
                "expected {needed} bytes after header, found {}",
                body.len()
            )));
        }
        if body.len() > needed {
            return Err(malformed(format!("{} trailing bytes", body.len() - needed)));
        }
        let (payload, sum) = body.split_at(needed - CHECKSUM_LEN);
        if Sha256::digest(payload).as_slice() != sum {
            return Err(CheckpointError::Checksum);
        }
        let mut cur = Cursor::new(payload);
        let ck = read_payload(&mut cur).map_err(|e| match e {
            CheckpointError::Io(io) => malformed(format!("payload ends early: {io}")),
            other => other,
        })?;
        if (cur.position() as usize) != payload.len() {
            return Err(malformed("unread bytes at end of payload"));
        }
        Ok(ck)
    }

    /// Writes the binary file and, when given, a JSON sidecar with run
    /// metadata.
    pub fn save(&self, path: &Path, metadata: Option<&serde_json::Value>) -> Result<()> {
        fs::write(path, self.encode())?;
        if let Some(meta) = metadata {
            let text = serde_json::to_string_pretty(meta)
                .map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
            fs::write(sidecar_path(path), text + "\n")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> CkResult<Self> {
        Self::decode(&fs::read(path)?)
    }
}

/// `model.ckpt` → `model.ckpt.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_payload(w: &mut impl Write, ck: &Checkpoint) -> std::io::Result<()> {
    let m = &ck.model;
    w.write_u8(match m.role {
        Role::Teacher => 0,
        Role::Student => 1,
    })?;
    w.write_u8(u8::from(m.frozen))?;
    w.write_u32::<LE>(m.layers.len() as u32)?;
    for l in &m.layers {
        w.write_u32::<LE>(l.name.len() as u32)?;
        w.write_all(l.name.as_bytes())?;
        w.write_u8(match l.activation {
            Activation::None => 0,
            Activation::Relu => 1,
        })?;
        w.write_u32::<LE>(l.in_dim() as u32)?;
        w.write_u32::<LE>(l.out_dim() as u32)?;
        for &v in l.weight.data().iter().chain(l.bias.data()) {
            w.write_f64::<LE>(v)?;
        }
    }
    match &ck.gor {
        None => w.write_u8(0)?,
        Some(g) => {
            w.write_u8(1)?;
            for v in [g.alpha_task, g.alpha_kd, g.lr, g.clip_floor] {
                w.write_f64::<LE>(v)?;
            }
            w.write_u64::<LE>(g.step_count)?;
        }
    }
    match &ck.quant {
        None => w.write_u8(0)?,
        Some(plan) => {
            w.write_u8(1)?;
            w.write_u32::<LE>(plan.layers() as u32)?;
            for spec in plan.weights.iter().chain(&plan.activations) {
                write_spec(w, spec.as_ref())?;
            }
        }
    }
    Ok(())
}

fn write_spec(w: &mut impl Write, spec: Option<&QuantSpec>) -> std::io::Result<()> {
    let Some(s) = spec else {
        return w.write_u8(0);
    };
    w.write_u8(1)?;
    w.write_u8(s.bits)?;
    let (kind, momentum) = match s.range_source {
        RangeSource::PerTensorMinMax => (0, 0.0),
        RangeSource::RunningMinMax { momentum } => (1, momentum),
    };
    w.write_u8(kind)?;
    w.write_f64::<LE>(momentum)?;
    w.write_f64::<LE>(s.x_min)?;
    w.write_f64::<LE>(s.x_max)?;
    w.write_u64::<LE>(s.observed)?;
    w.write_u8(u8::from(s.clip_gradient))
}

fn read_flag(r: &mut impl Read, what: &str) -> CkResult<bool> {
    match r.read_u8()? {
        0 => Ok(false),
        1 => Ok(true),
        b => Err(malformed(format!("bad {what} flag {b}"))),
    }
}

fn read_f64s(r: &mut impl Read, n: usize) -> CkResult<Vec<f64>> {
    // bound the allocation by what the reader can actually hold
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        out.push(r.read_f64::<LE>()?);
    }
    Ok(out)
}

fn read_payload(r: &mut Cursor<&[u8]>) -> CkResult<Checkpoint> {
    let role = match r.read_u8()? {
        0 => Role::Teacher,
        1 => Role::Student,
        b => return Err(malformed(format!("bad role {b}"))),
    };
    let frozen = read_flag(r, "frozen")?;
    let n_layers = r.read_u32::<LE>()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let name_len = r.read_u32::<LE>()? as usize;
        if name_len > r.get_ref().len() {
            return Err(malformed("layer name longer than payload"));
        }
        let mut name = vec![0; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| malformed("layer name is not UTF-8"))?;
        let activation = match r.read_u8()? {
            0 => Activation::None,
            1 => Activation::Relu,
            b => return Err(malformed(format!("bad activation {b}"))),
        };
        let din = r.read_u32::<LE>()? as usize;
        let dout = r.read_u32::<LE>()? as usize;
        let weight = Tensor::new(vec![din, dout], read_f64s(r, din * dout)?)
            .map_err(|e| malformed(e.to_string()))?;
        let bias = Tensor::vector(read_f64s(r, dout)?);
        layers.push(Layer {
            name,
            weight,
            bias,
            activation,
        });
    }
    let mut model = ModelParams::new(layers, role).map_err(|e| malformed(e.to_string()))?;
    model.frozen = frozen;

    let gor = if read_flag(r, "scalar-state")? {
        let mut v = [0.0; 4];
        for x in &mut v {
            *x = r.read_f64::<LE>()?;
        }
        Some(GorState {
            alpha_task: v[0],
            alpha_kd: v[1],
            lr: v[2],
            clip_floor: v[3],
            step_count: r.read_u64::<LE>()?,
        })
    } else {
        None
    };

    let quant = if read_flag(r, "quant")? {
        let n = r.read_u32::<LE>()? as usize;
        if n != model.layers.len() {
            return Err(malformed(format!(
                "quant plan has {n} layers, model has {}",
                model.layers.len()
            )));
        }
        let weights = (0..n).map(|_| read_spec(r)).collect::<CkResult<_>>()?;
        let activations = (0..n).map(|_| read_spec(r)).collect::<CkResult<_>>()?;
        Some(QuantPlan {
            weights,
            activations,
        })
    } else {
        None
    };
    Ok(Checkpoint { model, gor, quant })
}

fn read_spec(r: &mut impl Read) -> CkResult<Option<QuantSpec>> {
    if !read_flag(r, "spec")? {
        return Ok(None);
    }
    let bits = r.read_u8()?;
    let kind = r.read_u8()?;
    let momentum = r.read_f64::<LE>()?;
    let range_source = match kind {
        0 => RangeSource::PerTensorMinMax,
        1 => RangeSource::RunningMinMax { momentum },
        b => return Err(malformed(format!("bad range source {b}"))),
    };
    let mut spec = QuantSpec::new(bits, range_source).map_err(|e| malformed(e.to_string()))?;
    spec.x_min = r.read_f64::<LE>()?;
    spec.x_max = r.read_f64::<LE>()?;
    spec.observed = r.read_u64::<LE>()?;
    spec.clip_gradient = read_flag(r, "clip-gradient")?;
    Ok(Some(spec))
}
