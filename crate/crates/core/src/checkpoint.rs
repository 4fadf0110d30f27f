//! Checkpoint file format.
//!
//! A checkpoint is a single JSON document:
//!
//! ```json
//! {"format":"EBRG","version":1,"layer_dims":[...],"time_embed_dim":n,
//!  "activation":"silu","weights":[[...]],"biases":[[...]],
//!  "ema_decay":x,"trained_steps":n,"seed":n}
//! ```
//!
//! Floats are written with 17 significant digits so parsing returns the exact
//! bit pattern; the writer emits keys in the fixed order above so identical
//! runs produce byte-identical files. Writes go through a temp file in the
//! same directory followed by a rename, so a partial checkpoint is never
//! visible at the target path.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::numcore::{Activation, Denoiser};

pub const FORMAT_TAG: &str = "EBRG";
pub const FORMAT_VERSION: u32 = 1;

/// Run metadata carried alongside the parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub ema_decay: f64,
    pub trained_steps: u64,
    pub seed: u64,
}

#[derive(Deserialize)]
struct CheckpointDoc {
    format: String,
    version: u32,
    layer_dims: Vec<usize>,
    time_embed_dim: usize,
    activation: String,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    ema_decay: f64,
    trained_steps: u64,
    seed: u64,
}

/// `f64` with 17 significant digits: enough for exact round-trips.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_float_rows(out: &mut String, rows: &[Vec<f64>]) {
    out.push('[');
    for (i, row) in rows.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('[');
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(*v));
        }
        out.push(']');
    }
    out.push(']');
}

/// Serializes the network's online parameters and metadata.
pub fn to_json(net: &Denoiser, meta: &CheckpointMeta) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{{\"format\":\"{FORMAT_TAG}\",\"version\":{FORMAT_VERSION}"
    ));
    write!(
        s,
        ",\"layer_dims\":{:?},\"time_embed_dim\":{},\"activation\":\"{}\"",
        net.layer_dims(),
        net.time_embed_dim(),
        net.activation().tag()
    )
    .unwrap();
    s.push_str(",\"weights\":");
    fmt_float_rows(&mut s, &net.params().weights);
    s.push_str(",\"biases\":");
    fmt_float_rows(&mut s, &net.params().biases);
    write!(
        s,
        ",\"ema_decay\":{},\"trained_steps\":{},\"seed\":{}}}",
        fmt_f64(meta.ema_decay),
        meta.trained_steps,
        meta.seed
    )
    .unwrap();
    s.push('\n');
    s
}

/// Parses a checkpoint document, validating the schema tag and version.
/// The target parameter set is initialized equal to the online one.
pub fn from_json(doc: &str) -> Result<(Denoiser, CheckpointMeta)> {
    let parsed: CheckpointDoc = serde_json::from_str(doc)?;
    if parsed.format != FORMAT_TAG {
        return Err(Error::Config(format!(
            "checkpoint format tag {:?} is not {FORMAT_TAG:?}",
            parsed.format
        )));
    }
    if parsed.version != FORMAT_VERSION {
        return Err(Error::Config(format!(
            "checkpoint version {} is not {FORMAT_VERSION}",
            parsed.version
        )));
    }
    let activation = Activation::from_tag(&parsed.activation)?;
    let net = Denoiser::from_params(
        &parsed.layer_dims,
        parsed.time_embed_dim,
        activation,
        parsed.weights,
        parsed.biases,
    )?;
    let meta = CheckpointMeta {
        ema_decay: parsed.ema_decay,
        trained_steps: parsed.trained_steps,
        seed: parsed.seed,
    };
    Ok((net, meta))
}

/// Atomic write: temp file in the target directory, then rename.
pub fn save_atomic(path: &Path, net: &Denoiser, meta: &CheckpointMeta) -> Result<()> {
    let doc = to_json(net, meta);
    write_atomic(path, doc.as_bytes())
}

pub fn load(path: &Path) -> Result<(Denoiser, CheckpointMeta)> {
    let doc = fs::read_to_string(path)?;
    from_json(&doc)
}

/// Shared atomic-write helper for all artifact files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp",
            path.file_name()
                .map(|n| n.to_string_lossy())
                .unwrap_or_default()
        )),
        None => Path::new(&format!(
            ".{}.tmp",
            path.file_name()
                .map(|n| n.to_string_lossy())
                .unwrap_or_default()
        ))
        .to_path_buf(),
    };
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            ema_decay: 0.0,
            trained_steps: 42,
            seed: 7,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let net = Denoiser::init(&[6, 8, 2], 2, 123).unwrap();
        let doc = to_json(&net, &meta());
        let (loaded, m) = from_json(&doc).unwrap();
        assert_eq!(loaded.params(), net.params());
        assert_eq!(loaded.layer_dims(), net.layer_dims());
        assert_eq!(m, meta());
        // Target copy equals online on load.
        assert_eq!(loaded.target_params(), loaded.params());
    }

    #[test]
    fn serialization_is_byte_stable() {
        let net = Denoiser::init(&[4, 4, 2], 0, 9).unwrap();
        assert_eq!(to_json(&net, &meta()), to_json(&net, &meta()));
    }

    #[test]
    fn rejects_wrong_format_tag() {
        let net = Denoiser::init(&[4, 4, 2], 0, 9).unwrap();
        let doc = to_json(&net, &meta()).replace("\"EBRG\"", "\"XXXX\"");
        assert!(matches!(from_json(&doc), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_wrong_version() {
        let net = Denoiser::init(&[4, 4, 2], 0, 9).unwrap();
        let doc = to_json(&net, &meta()).replace("\"version\":1", "\"version\":2");
        assert!(matches!(from_json(&doc), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let net = Denoiser::init(&[4, 4, 2], 0, 9).unwrap();
        let doc =
            to_json(&net, &meta()).replace("\"layer_dims\":[4, 4, 2]", "\"layer_dims\":[4, 3, 2]");
        assert!(from_json(&doc).is_err());
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = std::env::temp_dir().join(format!("ebrg-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.json");
        let net = Denoiser::init(&[6, 8, 2], 2, 5).unwrap();
        save_atomic(&path, &net, &meta()).unwrap();
        let (loaded, _) = load(&path).unwrap();
        assert_eq!(loaded.params(), net.params());
        std::fs::remove_dir_all(&dir).ok();
    }
}
