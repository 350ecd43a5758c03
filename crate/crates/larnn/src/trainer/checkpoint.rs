//! Checkpoint format: magic `LARN`, format-version u32 LE, entry count
//! u32 LE, then per named array: name-length u16 LE, UTF-8 name, rank u8,
//! dims as u32 LE, payload f64 LE. The model configuration rides along as
//! scalar `config.*` entries so a checkpoint is self-describing; batch-norm
//! running statistics and Adam moments are included. Save -> load -> save
//! is byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use crate::cell::CellMode;
use crate::error::Error;
use crate::model::{Model, ModelConfig, Stacking};
use crate::tensor::Tensor;
use crate::trainer::{atomic_write, AdamState};

pub const MAGIC: [u8; 4] = *b"LARN";
pub const FORMAT_VERSION: u32 = 1;

fn mode_code(mode: CellMode) -> f64 {
    match mode {
        CellMode::Vanilla => 0.0,
        CellMode::BnLstm => 1.0,
        CellMode::LarnnResidual => 2.0,
        CellMode::LarnnLayer => 3.0,
    }
}

fn mode_from_code(code: f64) -> crate::Result<CellMode> {
    match code as i64 {
        0 => Ok(CellMode::Vanilla),
        1 => Ok(CellMode::BnLstm),
        2 => Ok(CellMode::LarnnResidual),
        3 => Ok(CellMode::LarnnLayer),
        other => Err(Error::contract(format!("bad cell mode code {other}"))),
    }
}

fn config_entries(config: &ModelConfig) -> Vec<(String, f64)> {
    vec![
        ("config.input_dim".into(), config.input_dim as f64),
        ("config.classes".into(), config.classes as f64),
        ("config.hidden".into(), config.hidden as f64),
        ("config.layers".into(), config.layers as f64),
        ("config.window".into(), config.window as f64),
        ("config.heads".into(), config.heads as f64),
        ("config.mode".into(), mode_code(config.mode)),
        (
            "config.stacking".into(),
            match config.stacking {
                Stacking::Residual => 0.0,
                Stacking::Plain => 1.0,
            },
        ),
        ("config.use_pe".into(), f64::from(config.use_pe)),
        ("config.n_pe".into(), config.n_pe as f64),
        ("config.activate_linears".into(), f64::from(config.activate_linears)),
        ("config.activate_query".into(), f64::from(config.activate_query)),
        ("config.layer_tanh".into(), f64::from(config.layer_tanh)),
    ]
}

struct Writer {
    buf: Vec<u8>,
    count: u32,
}

impl Writer {
    fn entry(&mut self, name: &str, dims: &[usize], payload: &[f64]) {
        debug_assert_eq!(dims.iter().product::<usize>(), payload.len());
        let name = name.as_bytes();
        self.buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        self.buf.extend_from_slice(name);
        self.buf.push(dims.len() as u8);
        for &d in dims {
            self.buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in payload {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self.count += 1;
    }
}

/// Serializes model + optimizer state to checkpoint bytes.
pub fn to_bytes(model: &mut Model, adam: &AdamState) -> Vec<u8> {
    let mut w = Writer {
        buf: Vec::new(),
        count: 0,
    };
    for (name, value) in config_entries(&model.config) {
        w.entry(&name, &[1], &[value]);
    }
    model.visit_params(&mut |name, t| {
        w.entry(name, t.shape(), t.data());
    });
    model.visit_buffers(&mut |name, values| {
        w.entry(name, &[values.len()], values);
    });
    w.entry("adam.step", &[1], &[adam.step as f64]);
    model.visit_params(&mut |name, t| {
        if let Some((m, v)) = adam.moments.get(name) {
            let _ = t;
            w.entry(&format!("adam.m.{name}"), &[m.len()], m);
            w.entry(&format!("adam.v.{name}"), &[v.len()], v);
        }
    });

    let mut out = Vec::with_capacity(w.buf.len() + 12);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&w.count.to_le_bytes());
    out.extend_from_slice(&w.buf);
    out
}

/// Saves atomically (temp file + rename).
pub fn save(model: &mut Model, adam: &AdamState, path: &Path) -> crate::Result<()> {
    atomic_write(path, &to_bytes(model, adam))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> crate::Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CheckpointFormat {
                offset: self.pos as u64,
                message: format!("unexpected end of file reading {what}"),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> crate::Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> crate::Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> crate::Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

/// Parses checkpoint bytes back into a model and optimizer state.
pub fn from_bytes(bytes: &[u8]) -> crate::Result<(Model, AdamState)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::CheckpointFormat {
            offset: 0,
            message: "bad magic bytes (expected 'LARN')".into(),
        });
    }
    let version = r.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let count = r.u32("entry count")?;
    let mut entries: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name_offset = r.pos as u64;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::CheckpointFormat {
                offset: name_offset,
                message: "entry name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dimension")? as usize);
        }
        let len: usize = dims.iter().product();
        let mut payload = Vec::with_capacity(len);
        let raw = r.take(len * 8, "payload")?;
        for chunk in raw.chunks_exact(8) {
            payload.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        entries.insert(name, (dims, payload));
    }
    if r.pos != bytes.len() {
        return Err(Error::CheckpointFormat {
            offset: r.pos as u64,
            message: format!("{} trailing bytes after the last entry", bytes.len() - r.pos),
        });
    }

    let mut scalar = |name: &str| -> crate::Result<f64> {
        entries
            .remove(name)
            .map(|(_, payload)| payload[0])
            .ok_or_else(|| Error::CheckpointFormat {
                offset: bytes.len() as u64,
                message: format!("missing required entry '{name}'"),
            })
    };
    let config = ModelConfig {
        input_dim: scalar("config.input_dim")? as usize,
        classes: scalar("config.classes")? as usize,
        hidden: scalar("config.hidden")? as usize,
        layers: scalar("config.layers")? as usize,
        window: scalar("config.window")? as usize,
        heads: scalar("config.heads")? as usize,
        mode: mode_from_code(scalar("config.mode")?)?,
        stacking: if scalar("config.stacking")? == 0.0 {
            Stacking::Residual
        } else {
            Stacking::Plain
        },
        use_pe: scalar("config.use_pe")? != 0.0,
        n_pe: scalar("config.n_pe")? as usize,
        activate_linears: scalar("config.activate_linears")? != 0.0,
        activate_query: scalar("config.activate_query")? != 0.0,
        layer_tanh: scalar("config.layer_tanh")? != 0.0,
    };
    let adam_step = scalar("adam.step")? as u64;

    let mut model = Model::init(&config, 0)?;
    let mut missing: Vec<String> = Vec::new();
    model.visit_params(&mut |name, t| match entries.remove(name) {
        Some((dims, payload)) if dims == t.shape() => {
            *t = Tensor::new(&dims, payload);
        }
        Some((dims, _)) => missing.push(format!("{name} has shape {dims:?}, expected {:?}", t.shape())),
        None => missing.push(format!("missing parameter '{name}'")),
    });
    model.visit_buffers(&mut |name, values| match entries.remove(name) {
        Some((_, payload)) if payload.len() == values.len() => *values = payload,
        Some(_) => missing.push(format!("buffer '{name}' has the wrong length")),
        None => missing.push(format!("missing buffer '{name}'")),
    });
    let mut adam = AdamState::new();
    adam.step = adam_step;
    let mut moment_names: Vec<String> = Vec::new();
    model.visit_params(&mut |name, _| moment_names.push(name.to_string()));
    for name in moment_names {
        let m = entries.remove(&format!("adam.m.{name}"));
        let v = entries.remove(&format!("adam.v.{name}"));
        if let (Some((_, m)), Some((_, v))) = (m, v) {
            adam.moments.insert(name, (m, v));
        }
    }
    if let Some(first) = missing.first() {
        return Err(Error::CheckpointFormat {
            offset: bytes.len() as u64,
            message: first.clone(),
        });
    }
    if let Some((name, _)) = entries.iter().next() {
        return Err(Error::CheckpointFormat {
            offset: bytes.len() as u64,
            message: format!("unexpected entry '{name}'"),
        });
    }
    Ok((model, adam))
}

/// Loads a checkpoint file.
pub fn load(path: &Path) -> crate::Result<(Model, AdamState)> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}
