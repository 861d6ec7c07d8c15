//! Checkpoint serialization.
//!
//! Layout, all integers little-endian:
//!   magic "MASF" | u32 version
//!   u64 config length | that many UTF-8 bytes of "key=value\n" lines
//!   repeated tensor records until EOF:
//!     u64 name length | name bytes | u64 rows | u64 cols | rows*cols f32
//! Tensors are written in the canonical parameter order, but a reader accepts
//! any order and verifies the set is exactly complete.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Parameters};
use crate::numerics::Tensor2D;
use crate::plan_spec::{format_plan, parse_plan};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MASF";

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;

    let c = &model.config;
    let config_text = format!(
        "layers={}\nd_model={}\nn_heads={}\nd_ff={}\nvocab={}\nmax_pos={}\nseed={}\nplan={}\n",
        c.layers,
        c.d_model,
        c.n_heads,
        c.d_ff,
        c.vocab,
        c.max_pos,
        c.seed,
        format_plan(&c.plan)
    );
    w.write_all(&(config_text.len() as u64).to_le_bytes())?;
    w.write_all(config_text.as_bytes())?;

    for (name, tensor) in model.params.tensors() {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.rows() as u64).to_le_bytes())?;
        w.write_all(&(tensor.cols() as u64).to_le_bytes())?;
        for &v in tensor.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::CheckpointFormat("file too short for magic".to_string()))?;
    if &magic != MAGIC {
        return Err(Error::CheckpointFormat(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointFormat(format!(
            "version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }

    let config_len = read_u64(&mut r)? as usize;
    let mut config_bytes = vec![0u8; config_len];
    r.read_exact(&mut config_bytes)
        .map_err(|_| Error::CheckpointFormat("truncated config block".to_string()))?;
    let config_text = String::from_utf8(config_bytes)
        .map_err(|_| Error::CheckpointFormat("config block is not UTF-8".to_string()))?;
    let config = parse_config(&config_text)?;

    let mut tensors: HashMap<String, Tensor2D> = HashMap::new();
    loop {
        let mut len_buf = [0u8; 8];
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u64::from_le_bytes(len_buf) as usize;
        if name_len > 4096 {
            return Err(Error::CheckpointFormat(format!(
                "implausible tensor name length {name_len}"
            )));
        }
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|_| Error::CheckpointFormat("truncated tensor name".to_string()))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::CheckpointFormat("tensor name is not UTF-8".to_string()))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let mut values = vec![0.0f32; rows * cols];
        let mut buf = [0u8; 4];
        for v in &mut values {
            r.read_exact(&mut buf).map_err(|_| {
                Error::CheckpointFormat(format!("truncated values for tensor '{name}'"))
            })?;
            *v = f32::from_le_bytes(buf);
        }
        if tensors.insert(name.clone(), Tensor2D::from_values(rows, cols, values)?).is_some() {
            return Err(Error::CheckpointFormat(format!("duplicate tensor '{name}'")));
        }
    }

    let mut params = Parameters::zeros(&config);
    for (name, dst) in params.tensors_mut() {
        let src = tensors.remove(&name).ok_or_else(|| {
            Error::CheckpointFormat(format!("missing tensor '{name}'"))
        })?;
        if src.rows() != dst.rows() || src.cols() != dst.cols() {
            return Err(Error::CheckpointFormat(format!(
                "tensor '{name}' is {}x{}, config expects {}x{}",
                src.rows(),
                src.cols(),
                dst.rows(),
                dst.cols()
            )));
        }
        *dst = src;
    }
    if let Some(extra) = tensors.into_keys().next() {
        return Err(Error::CheckpointFormat(format!("unexpected tensor '{extra}'")));
    }
    Model::from_parts(config, params)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::CheckpointFormat("truncated u32 field".to_string()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::CheckpointFormat("truncated u64 field".to_string()))?;
    Ok(u64::from_le_bytes(buf))
}

fn parse_config(text: &str) -> Result<ModelConfig> {
    let mut layers = None;
    let mut d_model = None;
    let mut n_heads = None;
    let mut d_ff = None;
    let mut vocab = None;
    let mut max_pos = None;
    let mut seed = None;
    let mut plan_text = None;
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::CheckpointFormat(format!("config line '{line}' is not key=value"))
        })?;
        let parse_usize = || -> Result<usize> {
            value.parse().map_err(|_| {
                Error::CheckpointFormat(format!("config value '{value}' for '{key}'"))
            })
        };
        match key {
            "layers" => layers = Some(parse_usize()?),
            "d_model" => d_model = Some(parse_usize()?),
            "n_heads" => n_heads = Some(parse_usize()?),
            "d_ff" => d_ff = Some(parse_usize()?),
            "vocab" => vocab = Some(parse_usize()?),
            "max_pos" => max_pos = Some(parse_usize()?),
            "seed" => {
                seed = Some(value.parse::<u64>().map_err(|_| {
                    Error::CheckpointFormat(format!("config value '{value}' for 'seed'"))
                })?)
            }
            "plan" => plan_text = Some(value.to_string()),
            other => {
                return Err(Error::CheckpointFormat(format!("unknown config key '{other}'")))
            }
        }
    }
    let missing = |k: &str| Error::CheckpointFormat(format!("config key '{k}' missing"));
    let layers = layers.ok_or_else(|| missing("layers"))?;
    let plan_text = plan_text.ok_or_else(|| missing("plan"))?;
    let config = ModelConfig {
        layers,
        d_model: d_model.ok_or_else(|| missing("d_model"))?,
        n_heads: n_heads.ok_or_else(|| missing("n_heads"))?,
        d_ff: d_ff.ok_or_else(|| missing("d_ff"))?,
        vocab: vocab.ok_or_else(|| missing("vocab"))?,
        max_pos: max_pos.ok_or_else(|| missing("max_pos"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
        plan: parse_plan(&plan_text, layers)?,
    };
    config.validate()?;
    Ok(config)
}
