//! Binary model files. Layout (all integers `u32`, all reals `f64`, both
//! little-endian):
//!
//! | field | size |
//! |---|---|
//! | magic `EQPRUNE\0` | 8 |
//! | format version (= 1) | 4 |
//! | config text length `n` | 4 |
//! | config text, UTF-8 `key = value` lines | n |
//! | inputs, hidden layer count `L`, widths x L, classes | 4 x (L + 3) |
//! | per hidden layer: weights (row-major `out x in`), biases, gates | 8 x out x (in + 2) |
//! | output weights (`classes x last`), output biases | 8 x classes x (last + 1) |
//! | end marker `EQPREND\0` | 8 |
//!
//! Values are stored bit for bit, so a save/load round trip is lossless.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::write_atomic;
use crate::net::{Architecture, DenseLayer, ParticipatingLayer, ParticipatingNet};
use crate::numkit::Matrix;

pub const MAGIC: &[u8; 8] = b"EQPRUNE\0";
pub const END_MARKER: &[u8; 8] = b"EQPREND\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Resolved experiment configuration the model was trained with.
    pub config_text: String,
    pub net: ParticipatingNet,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(net: &ParticipatingNet, config_text: &str) -> Vec<u8> {
    let arch = net.architecture();
    let mut out = Vec::with_capacity(64 + config_text.len() + 8 * arch.trainable_parameter_count());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, config_text.len());
    out.extend_from_slice(config_text.as_bytes());
    put_u32(&mut out, arch.inputs);
    put_u32(&mut out, arch.hidden.len());
    for &w in &arch.hidden {
        put_u32(&mut out, w);
    }
    put_u32(&mut out, arch.classes);
    for layer in &net.hidden {
        put_f64s(&mut out, layer.weights.data());
        put_f64s(&mut out, &layer.biases);
        put_f64s(&mut out, &layer.participation);
    }
    put_f64s(&mut out, net.output.weights.data());
    put_f64s(&mut out, &net.output.biases);
    out.extend_from_slice(END_MARKER);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            what: "checkpoint",
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(format!(
                "truncated while reading {what}: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| self.err(format!("{what}: {n} values overflow")))?;
        let b = self.take(len, what)?;
        Ok(b
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        r.pos = 0;
        return Err(r.err("not a checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        r.pos -= 4;
        return Err(r.err(format!("unsupported version {version}, expected {VERSION}")));
    }
    let n = r.u32("config length")?;
    let start = r.pos;
    let config_text = std::str::from_utf8(r.take(n, "config text")?)
        .map_err(|e| Error::Format {
            what: "checkpoint",
            offset: start + e.valid_up_to(),
            msg: "config text is not UTF-8".to_owned(),
        })?
        .to_owned();

    let inputs = r.u32("inputs")?;
    let layers = r.u32("hidden layer count")?;
    if layers == 0 || layers > 64 {
        r.pos -= 4;
        return Err(r.err(format!("implausible hidden layer count {layers}")));
    }
    let mut hidden = Vec::with_capacity(layers);
    for _ in 0..layers {
        hidden.push(r.u32("hidden width")?);
    }
    let classes = r.u32("classes")?;
    let arch = Architecture::new(inputs, hidden, classes);
    arch.validate().map_err(|e| r.err(e.to_string()))?;

    let mut fan_in = arch.inputs;
    let mut layers_out = Vec::with_capacity(layers);
    for &width in &arch.hidden {
        let w = r.f64s(width * fan_in, "hidden weights")?;
        let biases = r.f64s(width, "hidden biases")?;
        let at = r.pos;
        let participation = r.f64s(width, "participation")?;
        if let Some(k) = participation.iter().position(|v| !(0.0..=1.0).contains(v)) {
            r.pos = at + 8 * k;
            return Err(r.err(format!("gate value {} outside [0, 1]", participation[k])));
        }
        layers_out.push(ParticipatingLayer {
            weights: Matrix::from_vec(width, fan_in, w)?,
            biases,
            participation,
        });
        fan_in = width;
    }
    let w = r.f64s(classes * fan_in, "output weights")?;
    let biases = r.f64s(classes, "output biases")?;
    if r.take(8, "end marker")? != END_MARKER {
        r.pos -= 8;
        return Err(r.err("bad end marker"));
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        config_text,
        net: ParticipatingNet {
            hidden: layers_out,
            output: DenseLayer {
                weights: Matrix::from_vec(classes, fan_in, w)?,
                biases,
            },
        },
    })
}

pub fn save(path: impl AsRef<Path>, net: &ParticipatingNet, config_text: &str) -> Result<()> {
    write_atomic(path.as_ref(), &encode(net, config_text))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
