//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "VINSCKPT"
//! version    u32
//! config     u32 length + UTF-8 JSON
//! step       u64
//! rng        u8 flag; if 1: 32-byte seed, u64 stream, u128 word position
//! arrays     u32 count, then per array:
//!              u16 name length + UTF-8 name
//!              u8 rank + u32 per dimension
//!              f64 values
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use autodiff::Tensor;
use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::{ModelBundle, ModelConfig, ParamSet};
use crate::error::{io_err, Error, Result};

pub const MAGIC: &[u8; 8] = b"VINSCKPT";
pub const VERSION: u32 = 1;

/// Position of a ChaCha8 stream, enough to resume it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Value,
    pub step: u64,
    pub rng: Option<RngState>,
    pub arrays: BTreeMap<String, Tensor>,
}

fn corrupt(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LE>(VERSION).unwrap();
    let cfg = serde_json::to_vec(&ckpt.config).expect("json value serializes");
    out.write_u32::<LE>(cfg.len() as u32).unwrap();
    out.extend_from_slice(&cfg);
    out.write_u64::<LE>(ckpt.step).unwrap();
    match &ckpt.rng {
        Some(r) => {
            out.push(1);
            out.extend_from_slice(&r.seed);
            out.write_u64::<LE>(r.stream).unwrap();
            out.write_u128::<LE>(r.word_pos).unwrap();
        }
        None => out.push(0),
    }
    out.write_u32::<LE>(ckpt.arrays.len() as u32).unwrap();
    for (name, t) in &ckpt.arrays {
        out.write_u16::<LE>(name.len() as u16).unwrap();
        out.extend_from_slice(name.as_bytes());
        out.push(t.ndim() as u8);
        for &d in t.shape() {
            out.write_u32::<LE>(d as u32).unwrap();
        }
        for &v in t.data() {
            out.write_f64::<LE>(v).unwrap();
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |m: &str| corrupt(path, m);
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic header)"));
    }
    let version = cur.read_u32::<LE>().map_err(|_| bad("truncated header"))?;
    if version != VERSION {
        return Err(corrupt(
            path,
            format!("unsupported checkpoint version {}", version),
        ));
    }
    let clen = cur.read_u32::<LE>().map_err(|_| bad("truncated config"))? as usize;
    let mut cfg = vec![0u8; clen];
    cur.read_exact(&mut cfg)
        .map_err(|_| bad("truncated config"))?;
    let config: Value =
        serde_json::from_slice(&cfg).map_err(|e| corrupt(path, format!("config block: {}", e)))?;
    let step = cur.read_u64::<LE>().map_err(|_| bad("truncated step"))?;
    let rng = match cur.read_u8().map_err(|_| bad("truncated rng"))? {
        0 => None,
        1 => {
            let mut seed = [0u8; 32];
            cur.read_exact(&mut seed)
                .map_err(|_| bad("truncated rng"))?;
            let stream = cur.read_u64::<LE>().map_err(|_| bad("truncated rng"))?;
            let word_pos = cur.read_u128::<LE>().map_err(|_| bad("truncated rng"))?;
            Some(RngState {
                seed,
                stream,
                word_pos,
            })
        }
        f => return Err(corrupt(path, format!("bad rng flag {}", f))),
    };
    let count = cur
        .read_u32::<LE>()
        .map_err(|_| bad("truncated array table"))?;
    let mut arrays = BTreeMap::new();
    for _ in 0..count {
        let nlen = cur
            .read_u16::<LE>()
            .map_err(|_| bad("truncated array name"))? as usize;
        let mut name = vec![0u8; nlen];
        cur.read_exact(&mut name)
            .map_err(|_| bad("truncated array name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("array name is not UTF-8"))?;
        let rank = cur.read_u8().map_err(|_| bad("truncated array shape"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(
                cur.read_u32::<LE>()
                    .map_err(|_| bad("truncated array shape"))? as usize,
            );
        }
        let n: usize = shape.iter().product();
        let remaining = bytes.len() - cur.position() as usize;
        if n.checked_mul(8).is_none_or(|b| b > remaining) {
            return Err(corrupt(path, format!("array `{}` is truncated", name)));
        }
        let mut data = vec![0.0; n];
        cur.read_f64_into::<LE>(&mut data)
            .map_err(|_| bad("truncated array data"))?;
        arrays.insert(name, Tensor::new(&shape, data));
    }
    if (cur.position() as usize) != bytes.len() {
        return Err(bad("trailing bytes after the last array"));
    }
    Ok(Checkpoint {
        config,
        step,
        rng,
        arrays,
    })
}

/// Writes via a temporary file and rename so readers never see a partial
/// checkpoint.
pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_checkpoint(ckpt)).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(&bytes, path)
}

pub const PARAM_PREFIX: &str = "param/";

/// Model config stored under the `model` key of a checkpoint config block.
pub fn model_config(ckpt: &Checkpoint, path: &Path) -> Result<ModelConfig> {
    let v = ckpt
        .config
        .get("model")
        .ok_or_else(|| corrupt(path, "config block has no `model` section"))?;
    serde_json::from_value(v.clone()).map_err(|e| corrupt(path, format!("model config: {}", e)))
}

pub fn bundle_to_checkpoint(bundle: &ModelBundle) -> Checkpoint {
    let mut arrays = BTreeMap::new();
    for (name, t) in bundle.params.iter() {
        arrays.insert(format!("{}{}", PARAM_PREFIX, name), t.clone());
    }
    Checkpoint {
        config: serde_json::json!({ "model": bundle.config }),
        step: bundle.step,
        rng: None,
        arrays,
    }
}

/// Rebuilds a bundle, checking every parameter against a fresh
/// initialization of the stored config. With `expected`, a different model
/// config is rejected.
pub fn bundle_from_checkpoint(
    ckpt: &Checkpoint,
    path: &Path,
    expected: Option<&ModelConfig>,
) -> Result<ModelBundle> {
    let config = model_config(ckpt, path)?;
    if let Some(want) = expected {
        if want != &config {
            return Err(Error::ConfigMismatch(format!(
                "{} was written for {}, expected {}",
                path.display(),
                serde_json::to_string(&config).unwrap_or_default(),
                serde_json::to_string(want).unwrap_or_default()
            )));
        }
    }
    let template = ModelBundle::new(config.clone(), 0)?;
    let mut params = ParamSet::default();
    for (name, t) in template.params.iter() {
        let stored = ckpt
            .arrays
            .get(&format!("{}{}", PARAM_PREFIX, name))
            .ok_or_else(|| corrupt(path, format!("missing parameter `{}`", name)))?;
        if stored.shape() != t.shape() {
            return Err(corrupt(
                path,
                format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    name,
                    stored.shape(),
                    t.shape()
                ),
            ));
        }
        params.insert(name.clone(), stored.clone());
    }
    Ok(ModelBundle {
        config,
        params,
        step: ckpt.step,
    })
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    write_checkpoint(&bundle_to_checkpoint(bundle), path)
}

pub fn load_bundle(path: &Path, expected: Option<&ModelConfig>) -> Result<ModelBundle> {
    let ckpt = read_checkpoint(path)?;
    bundle_from_checkpoint(&ckpt, path, expected)
}
