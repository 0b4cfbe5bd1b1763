//! Parameter files: a text manifest listing every parameter's name, shape,
//! offset and length, plus a sidecar of little-endian `f64` values.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use dtaf_tensor::Array;

use crate::config::ModelConfig;
use crate::error::{DtafError, Result};
use crate::params::DtafParams;

const MAGIC: &str = "# dtaf checkpoint v1";

/// Path of the binary sidecar belonging to `manifest`.
pub fn sidecar_path(manifest: &Path) -> PathBuf {
    let mut name = manifest.as_os_str().to_owned();
    name.push(".bin");
    PathBuf::from(name)
}

fn format_shape(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

/// Writes `params` to `path` and its sidecar.
pub fn save(params: &DtafParams, path: &Path) -> Result<()> {
    save_with_comment(params, path, "")
}

/// Like [`save`], with extra `#` comment lines after the magic line.
pub fn save_with_comment(params: &DtafParams, path: &Path, comment: &str) -> Result<()> {
    let mut manifest = format!("{MAGIC}\n");
    for line in comment.lines() {
        manifest.push_str(&format!("# {line}\n"));
    }
    manifest.push_str("# name shape offset len\n");
    let mut blob = Vec::new();
    let mut offset = 0;
    for (name, a) in params.named() {
        manifest.push_str(&format!("{name} {} {offset} {}\n", format_shape(a.shape()), a.len()));
        for v in a.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += a.len();
    }
    fs::write(path, manifest).map_err(|e| DtafError::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, blob).map_err(|e| DtafError::io(&side, e))
}

struct Entry {
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

fn parse_manifest(text: &str) -> Result<Vec<(String, Entry)>> {
    let bad = |line: usize, msg: &str| DtafError::Checkpoint(format!("manifest line {line}: {msg}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim() == MAGIC => {}
        _ => return Err(DtafError::Checkpoint("not a checkpoint manifest".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, shape, offset, len] = fields[..] else {
            return Err(bad(i + 1, "expected 4 fields"));
        };
        let shape = shape
            .split('x')
            .map(str::parse)
            .collect::<std::result::Result<Vec<usize>, _>>()
            .map_err(|_| bad(i + 1, "invalid shape"))?;
        let offset = offset.parse().map_err(|_| bad(i + 1, "invalid offset"))?;
        let len = len.parse().map_err(|_| bad(i + 1, "invalid length"))?;
        if shape.iter().product::<usize>() != len {
            return Err(bad(i + 1, "length does not match shape"));
        }
        out.push((name.to_string(), Entry { shape, offset, len }));
    }
    Ok(out)
}

/// Reads parameters saved by [`save`], checking every shape against `cfg`.
pub fn load(path: &Path, cfg: &ModelConfig) -> Result<DtafParams> {
    let text = fs::read_to_string(path).map_err(|e| DtafError::io(path, e))?;
    let entries = parse_manifest(&text)?;
    let side = sidecar_path(path);
    let bytes = fs::read(&side).map_err(|e| DtafError::io(&side, e))?;
    if bytes.len() % 8 != 0 {
        return Err(DtafError::Checkpoint(format!(
            "{} has {} bytes, not a whole number of values",
            side.display(),
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let expected = DtafParams::shapes(cfg);
    let mut by_name: HashMap<&str, &Entry> = HashMap::new();
    for (name, e) in &entries {
        if by_name.insert(name, e).is_some() {
            return Err(DtafError::Checkpoint(format!("parameter {name} listed twice")));
        }
    }
    let params = expected.try_map(|name, want| -> Result<Array> {
        let e = by_name
            .get(name)
            .ok_or_else(|| DtafError::Checkpoint(format!("parameter {name} is missing")))?;
        if &e.shape != want {
            return Err(DtafError::Checkpoint(format!(
                "parameter {name} has shape {:?}, expected {want:?}",
                e.shape
            )));
        }
        let data = values
            .get(e.offset..e.offset + e.len)
            .ok_or_else(|| DtafError::Checkpoint(format!("parameter {name} lies outside the value file")))?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(DtafError::Checkpoint(format!("parameter {name} has non-finite values")));
        }
        Ok(Array::new(want.clone(), data.to_vec())?)
    })?;
    let known = expected.named().len();
    if entries.len() != known {
        let names: Vec<String> = expected.named().into_iter().map(|(n, _)| n).collect();
        let extra = entries
            .iter()
            .find(|(n, _)| !names.contains(n))
            .map_or("?".to_string(), |(n, _)| n.clone());
        return Err(DtafError::Checkpoint(format!("unexpected parameter {extra}")));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = ModelConfig::default();
        let p = crate::verify::random_params(&cfg, 3);
        save(&p, &path).unwrap();
        assert_eq!(load(&path, &cfg).unwrap(), p);
        save_with_comment(&p, &path, "config_hash=abc\nsecond").unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1) == Some("# config_hash=abc"));
        assert_eq!(load(&path, &cfg).unwrap(), p);
    }

    #[test]
    fn width_mismatch_names_the_embedding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let small = ModelConfig {
            d_model: 32,
            ..Default::default()
        };
        save(&DtafParams::init(&small, 0), &path).unwrap();
        let err = load(&path, &ModelConfig::default()).unwrap_err().to_string();
        assert!(err.contains("embed.weight"), "{err}");
    }

    #[test]
    fn extra_experts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = ModelConfig::default();
        let more = ModelConfig {
            experts: 5,
            ..Default::default()
        };
        save(&DtafParams::init(&more, 0), &path).unwrap();
        assert!(matches!(load(&path, &cfg), Err(DtafError::Checkpoint(_))));
    }

    #[test]
    fn truncated_sidecar_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = ModelConfig::default();
        save(&DtafParams::init(&cfg, 0), &path).unwrap();
        let side = sidecar_path(&path);
        let bytes = fs::read(&side).unwrap();
        fs::write(&side, &bytes[..bytes.len() - 8]).unwrap();
        let err = load(&path, &cfg).unwrap_err().to_string();
        assert!(err.contains("outside"), "{err}");
    }
}
