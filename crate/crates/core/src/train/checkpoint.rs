//! Named-tensor checkpoint archive.
//!
//! ```text
//! FMSRCKPT
//! version 1
//! [config]
//! key=value            (model and training configuration)
//! [tensors] <count>
//! <name> <dtype> <d0>x<d1>x… <offset>
//! [end]
//! <little-endian payloads in header order>
//! ```
//!
//! Offsets are byte positions within the payload. Optimizer moments are
//! stored as `optim/m/<param>` and `optim/v/<param>`, the step counter as
//! the one-element `u64` tensor `optim/t`.

use std::path::Path;

use crate::config::{self, KeyValue};
use crate::error::{FmsrError, Result};
use crate::model::{build_model, Model, ModelConfig};
use crate::param::Module;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{OptimState, TrainConfig};

pub const MAGIC: &str = "FMSRCKPT\n";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> FmsrError {
    FmsrError::Checkpoint(msg.into())
}

/// One header entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

fn dtype_size(dtype: &str) -> Option<usize> {
    match dtype {
        "f32" => Some(4),
        "f64" | "u64" => Some(8),
        _ => None,
    }
}

impl Entry {
    fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    fn bytes(&self) -> usize {
        self.numel() * dtype_size(&self.dtype).unwrap_or(0)
    }
}

/// Parsed archive: configuration pairs, entries and the raw payload.
#[derive(Clone, Debug)]
pub struct Archive {
    pub config: Vec<(String, String)>,
    pub entries: Vec<Entry>,
    pub payload: Vec<u8>,
}

impl Archive {
    pub fn decode(bytes: &[u8]) -> Result<Archive> {
        let rest = bytes
            .strip_prefix(MAGIC.as_bytes())
            .ok_or_else(|| bad("missing FMSRCKPT magic"))?;
        let end_marker = b"\n[end]\n";
        let header_len = rest
            .windows(end_marker.len())
            .position(|w| w == end_marker)
            .ok_or_else(|| bad("header has no [end] line"))?;
        let header = std::str::from_utf8(&rest[..header_len]).map_err(|_| bad("header is not UTF-8"))?;
        let payload = rest[header_len + end_marker.len()..].to_vec();

        let mut lines = header.lines();
        match lines.next() {
            Some(v) if v == format!("version {VERSION}") => {}
            other => return Err(bad(format!("unsupported version line {other:?}"))),
        }
        if lines.next() != Some("[config]") {
            return Err(bad("expected [config] section"));
        }
        let mut config_text = String::new();
        let count = loop {
            let line = lines.next().ok_or_else(|| bad("missing [tensors] section"))?;
            if let Some(n) = line.strip_prefix("[tensors] ") {
                break n
                    .parse::<usize>()
                    .map_err(|_| bad(format!("bad tensor count {n:?}")))?;
            }
            config_text.push_str(line);
            config_text.push('\n');
        };
        let config = config::parse(&config_text).map_err(|e| bad(e.to_string()))?;
        let mut entries = Vec::with_capacity(count);
        let mut expected_offset = 0;
        for line in lines.by_ref() {
            let fields: Vec<&str> = line.split(' ').collect();
            let [name, dtype, dims, offset] = fields[..] else {
                return Err(bad(format!("malformed entry {line:?}")));
            };
            if dtype_size(dtype).is_none() {
                return Err(bad(format!("{name}: unknown dtype {dtype:?}")));
            }
            let shape = if dims == "scalar" {
                Vec::new()
            } else {
                dims.split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad(format!("{name}: malformed shape {dims:?}")))?
            };
            let offset = offset
                .parse::<usize>()
                .map_err(|_| bad(format!("{name}: malformed offset {offset:?}")))?;
            let entry = Entry {
                name: name.to_string(),
                dtype: dtype.to_string(),
                shape,
                offset,
            };
            if offset != expected_offset {
                return Err(bad(format!("{name}: offset {offset}, expected {expected_offset}")));
            }
            expected_offset += entry.bytes();
            entries.push(entry);
        }
        if entries.len() != count {
            return Err(bad(format!("header lists {} tensors, count says {count}", entries.len())));
        }
        if expected_offset != payload.len() {
            return Err(bad(format!(
                "payload is {} bytes, header describes {expected_offset}",
                payload.len()
            )));
        }
        Ok(Archive {
            config,
            entries,
            payload,
        })
    }

    fn find(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| bad(format!("missing tensor {name}")))
    }

    /// Reads a floating-point tensor, converting its dtype to `T`.
    pub fn tensor<T: Scalar>(&self, name: &str, shape: &[usize]) -> Result<Tensor<T>> {
        let e = self.find(name)?;
        if e.shape != shape {
            return Err(bad(format!(
                "{name}: shape {:?} does not match expected {shape:?}",
                e.shape
            )));
        }
        let bytes = &self.payload[e.offset..e.offset + e.bytes()];
        let data: Vec<T> = match e.dtype.as_str() {
            "f32" => bytes
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            "f64" => bytes
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
            other => return Err(bad(format!("{name}: expected a float tensor, found {other}"))),
        };
        Tensor::from_vec(shape, data)
    }

    fn counter(&self, name: &str) -> Result<u64> {
        let e = self.find(name)?;
        if e.dtype != "u64" || e.numel() != 1 {
            return Err(bad(format!("{name}: expected one u64")));
        }
        Ok(u64::from_le_bytes(self.payload[e.offset..e.offset + 8].try_into().unwrap()))
    }

    pub fn configs(&self) -> Result<(ModelConfig, TrainConfig)> {
        let mut model = ModelConfig::default();
        let mut train = TrainConfig::default();
        config::apply(&self.config, &mut [&mut model, &mut train]).map_err(|e| bad(e.to_string()))?;
        Ok((model, train))
    }
}

/// Encodes model weights, configuration and optional optimizer state.
pub fn encode<T: Scalar>(model: &Model<T>, train: &TrainConfig, optim: Option<&OptimState<T>>) -> Vec<u8> {
    let mut named: Vec<(String, &Tensor<T>)> = model
        .params()
        .into_iter()
        .map(|p| (p.name().to_string(), p.tensor()))
        .collect();
    if let Some(st) = optim {
        let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
        for (n, m) in names.iter().zip(&st.m) {
            named.push((format!("optim/m/{n}"), m));
        }
        for (n, v) in names.iter().zip(&st.v) {
            named.push((format!("optim/v/{n}"), v));
        }
    }
    let mut header = String::from(MAGIC);
    header.push_str(&format!("version {VERSION}\n[config]\n"));
    let mut pairs = model.config.to_pairs();
    pairs.extend(train.to_pairs());
    header.push_str(&config::render(&pairs));
    let count = named.len() + usize::from(optim.is_some());
    header.push_str(&format!("[tensors] {count}\n"));
    let mut payload = Vec::new();
    for (name, t) in &named {
        let dims = if t.shape().is_empty() {
            "scalar".to_string()
        } else {
            t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
        };
        header.push_str(&format!("{name} {} {dims} {}\n", T::DTYPE, payload.len()));
        for &v in t.data() {
            v.write_le(&mut payload);
        }
    }
    if let Some(st) = optim {
        header.push_str(&format!("optim/t u64 1 {}\n", payload.len()));
        payload.extend_from_slice(&st.t.to_le_bytes());
    }
    header.push_str("[end]\n");
    let mut out = header.into_bytes();
    out.extend_from_slice(&payload);
    out
}

pub fn save<T: Scalar>(
    path: impl AsRef<Path>,
    model: &Model<T>,
    train: &TrainConfig,
    optim: Option<&OptimState<T>>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model, train, optim)).map_err(|e| FmsrError::io(path, e))
}

/// Copies archived weights (and optimizer state, if `optim` is given) into
/// an existing model. The archived model configuration must equal the
/// model's, and the archive must hold exactly the model's tensors.
pub fn restore<T: Scalar>(
    archive: &Archive,
    model: &mut Model<T>,
    optim: Option<&mut OptimState<T>>,
) -> Result<TrainConfig> {
    let (mcfg, tcfg) = archive.configs()?;
    if mcfg != model.config {
        return Err(bad(format!(
            "configuration mismatch: archive has {:?}, model has {:?}",
            mcfg, model.config
        )));
    }
    let names: Vec<String> = model.params().iter().map(|p| p.name().to_string()).collect();
    for e in &archive.entries {
        let known = names.contains(&e.name)
            || e.name == "optim/t"
            || e.name
                .strip_prefix("optim/m/")
                .or_else(|| e.name.strip_prefix("optim/v/"))
                .is_some_and(|n| names.iter().any(|x| x == n));
        if !known {
            return Err(bad(format!("unexpected tensor {}", e.name)));
        }
    }
    let mut loaded = Vec::with_capacity(names.len());
    for p in model.params() {
        loaded.push(archive.tensor::<T>(p.name(), p.shape())?);
    }
    let mut state = None;
    if let Some(st) = optim {
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for p in model.params() {
            m.push(archive.tensor::<T>(&format!("optim/m/{}", p.name()), p.shape())?);
            v.push(archive.tensor::<T>(&format!("optim/v/{}", p.name()), p.shape())?);
        }
        state = Some((st, OptimState { m, v, t: archive.counter("optim/t")? }));
    }
    let mut it = loaded.into_iter();
    model.visit_mut(&mut |p| p.set(it.next().unwrap()));
    if let Some((dst, src)) = state {
        *dst = src;
    }
    Ok(tcfg)
}

/// A model rebuilt from an archive, with its training configuration and
/// optimizer state when present.
#[derive(Debug)]
pub struct Loaded<T> {
    pub model: Model<T>,
    pub train: TrainConfig,
    pub optim: Option<OptimState<T>>,
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Loaded<T>> {
    let archive = Archive::decode(bytes)?;
    let (mcfg, _) = archive.configs()?;
    let mut model = build_model::<T>(&mcfg, 0)?;
    let has_optim = archive.entries.iter().any(|e| e.name == "optim/t");
    let mut optim = has_optim.then(|| OptimState::new(&model));
    let train = restore(&archive, &mut model, optim.as_mut())?;
    Ok(Loaded { model, train, optim })
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Loaded<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| FmsrError::io(path, e))?;
    decode(&bytes)
}
