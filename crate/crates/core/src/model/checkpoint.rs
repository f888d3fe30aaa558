//! Model checkpoints.
//!
//! Layout (all integers little-endian `u32` unless noted):
//!
//! ```text
//! magic   4 bytes  "GWCK"
//! version u32      (currently 1)
//! cfg_len u32      followed by cfg_len bytes of key=value config text
//! n_arr   u32      number of parameter arrays
//! entry*  name_len u32, name bytes, dtype u8 (0 = f32),
//!         ndim u32, ndim × u32 dims, numel × f32 values
//! ```
//!
//! Arrays are stored in the model's canonical enumeration order and include
//! batch-norm running statistics, so a load reproduces eval-mode behaviour
//! exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Variant, N_DOWN, N_UP};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GWCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn config_to_text(config: &ModelConfig) -> String {
    let widths: Vec<String> = config.encoder_widths.iter().map(|w| w.to_string()).collect();
    let inter = match &config.attention_inter_channels {
        None => "default".to_string(),
        Some(v) => v.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
    };
    format!(
        "variant={}\nin_channels={}\nout_channels={}\nencoder_widths={}\ndropout_rate={}\nleaky_slope={}\nattention_inter_channels={}\n",
        config.variant,
        config.in_channels,
        config.out_channels,
        widths.join(","),
        config.dropout_rate,
        config.leaky_slope,
        inter,
    )
}

fn parse_fixed<const N: usize>(value: &str, key: &str) -> Result<[usize; N]> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Checkpoint(format!("bad {key} value {value:?}: {e}")))?;
    parts
        .try_into()
        .map_err(|_| Error::Checkpoint(format!("{key} must have {N} entries, got {value:?}")))
}

fn config_from_text(text: &str) -> Result<ModelConfig> {
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed config line {line:?}")))?;
        map.insert(k.to_string(), v.to_string());
    }
    let get = |key: &str| {
        map.get(key)
            .ok_or_else(|| Error::Checkpoint(format!("config missing key {key:?}")))
    };
    let parse_num = |key: &str| -> Result<f64> {
        get(key)?
            .parse::<f64>()
            .map_err(|e| Error::Checkpoint(format!("bad {key} value: {e}")))
    };
    let mut config = ModelConfig::new(Variant::parse(get("variant")?)?);
    config.in_channels = parse_num("in_channels")? as usize;
    config.out_channels = parse_num("out_channels")? as usize;
    config.encoder_widths = parse_fixed::<N_DOWN>(get("encoder_widths")?, "encoder_widths")?;
    config.dropout_rate = parse_num("dropout_rate")?;
    config.leaky_slope = parse_num("leaky_slope")?;
    let inter = get("attention_inter_channels")?;
    config.attention_inter_channels = if inter == "default" {
        None
    } else {
        Some(parse_fixed::<N_UP>(inter, "attention_inter_channels")?)
    };
    config.validate()?;
    Ok(config)
}

/// Write the model (all arrays, running statistics included) to `path`.
pub fn save_checkpoint(path: &Path, model: &Model<f32>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let cfg = config_to_text(&model.config);
    out.write_all(&(cfg.len() as u32).to_le_bytes())?;
    out.write_all(cfg.as_bytes())?;
    let infos = model.param_infos(false);
    let slices = model.param_slices(false);
    out.write_all(&(infos.len() as u32).to_le_bytes())?;
    for (info, slice) in infos.iter().zip(&slices) {
        out.write_all(&(info.name.len() as u32).to_le_bytes())?;
        out.write_all(info.name.as_bytes())?;
        out.write_all(&[0u8])?;
        out.write_all(&(info.shape.len() as u32).to_le_bytes())?;
        for &d in &info.shape {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in *slice {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated while reading {what}: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes(1, what)?[0])
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        if len > 1 << 20 {
            return Err(Error::Checkpoint(format!(
                "implausible {what} length {len}"
            )));
        }
        String::from_utf8(self.bytes(len, what)?)
            .map_err(|e| Error::Checkpoint(format!("{what} is not UTF-8: {e}")))
    }
}

/// Read a checkpoint back into a freshly scaffolded model. Every array's
/// name, order, and shape must match what the embedded config dictates;
/// mismatches report the offending array by name.
pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    let magic = r.bytes(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?} (not a checkpoint file)",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let config = config_from_text(&r.string("config text")?)?;
    let mut model: Model<f32> = Model::scaffold(config);
    let infos = model.param_infos(false);
    let n_arr = r.u32("array count")? as usize;
    if n_arr != infos.len() {
        return Err(Error::Checkpoint(format!(
            "array count mismatch: file has {n_arr}, config implies {}",
            infos.len()
        )));
    }
    let mut slices = model.param_slices_mut(false);
    for (info, slice) in infos.iter().zip(slices.iter_mut()) {
        let name = r.string("array name")?;
        if name != info.name {
            return Err(Error::Checkpoint(format!(
                "array order mismatch: expected {:?}, file has {name:?}",
                info.name
            )));
        }
        let dtype = r.u8("dtype")?;
        if dtype != 0 {
            return Err(Error::Checkpoint(format!(
                "unsupported dtype {dtype} at {name}"
            )));
        }
        let ndim = r.u32("ndim")? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32("dim")? as usize);
        }
        if dims != info.shape {
            return Err(Error::Checkpoint(format!(
                "shape mismatch at {name}: expected {:?}, file has {dims:?}",
                info.shape
            )));
        }
        let raw = r.bytes(4 * slice.len(), &format!("values of {name}"))?;
        for (dst, chunk) in slice.iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    let mut tail = [0u8; 1];
    if r.inner.read(&mut tail)? != 0 {
        return Err(Error::Checkpoint(
            "trailing bytes after final array".to_string(),
        ));
    }
    Ok(model)
}
