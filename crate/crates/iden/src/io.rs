//! JSON artifacts, checkpoints and run directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use iden_core::checkpoint::{check_version, Checkpoint};
use serde::Serialize;

use crate::config::OUT_DIR_ENV;

/// Creation time in seconds: `SOURCE_DATE_EPOCH` when set, else the clock.
pub fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.trim().parse().ok()) {
        return t;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Pretty JSON with a trailing newline. Floats are written in their
/// shortest round-tripping form, so reading back is bit-exact.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_json(path, ck)
}

/// Reads a checkpoint, checking the format version before the schema so an
/// old or future file gets a version error rather than a field error.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| anyhow!("{} has no integer format_version field", path.display()))?;
    let version = u32::try_from(version).map_err(|_| anyhow!("format_version {version} out of range"))?;
    check_version(version).with_context(|| format!("loading {}", path.display()))?;
    serde_json::from_value(value).with_context(|| format!("{} does not match the checkpoint schema", path.display()))
}

/// Output directory of one run. An explicit `out` is used as given (and
/// must not already hold a run); otherwise a fresh `<name>`, `<name>-2`, …
/// is picked under the root from the environment, defaulting to `runs`.
pub fn run_dir(out: Option<&Path>, name: &str) -> Result<PathBuf> {
    if let Some(dir) = out {
        if dir.join(crate::manifest::MANIFEST_FILE).exists() {
            bail!("{} already holds a run; choose another --out", dir.display());
        }
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        return Ok(dir.to_path_buf());
    }
    let root = std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
    for k in 1u32.. {
        let dir = if k == 1 { root.join(name) } else { root.join(format!("{name}-{k}")) };
        // create_dir fails on an existing path, which makes the pick atomic
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;
    use iden_core::checkpoint::FORMAT_VERSION;

    #[test]
    fn version_is_checked_first() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        fs::write(&p, r#"{"format_version": 99, "something": "else"}"#).unwrap();
        let msg = format!("{:#}", read_checkpoint(&p).unwrap_err());
        assert!(msg.contains("99") && msg.contains(&FORMAT_VERSION.to_string()), "{msg}");

        fs::write(&p, r#"{"tensors": []}"#).unwrap();
        assert!(format!("{:#}", read_checkpoint(&p).unwrap_err()).contains("format_version"));
    }

    #[test]
    fn floats_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        let mut ck = Checkpoint::empty(1, 2);
        let values = vec![0.1, 1.0 / 3.0, f64::MIN_POSITIVE, 1e300, -2.5e-17, 0.0];
        ck.tensors.push(iden_core::checkpoint::NamedTensor {
            name: "x".into(),
            shape: vec![values.len()],
            values: values.clone(),
        });
        write_checkpoint(&p, &ck).unwrap();
        let back = read_checkpoint(&p).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.tensors[0].values), bits(&values));
    }

    #[test]
    fn run_dirs_are_unique() {
        let dir = tempfile::tempdir().unwrap();
        let explicit = dir.path().join("a/b");
        assert_eq!(run_dir(Some(&explicit), "x").unwrap(), explicit);
        fs::write(explicit.join(crate::manifest::MANIFEST_FILE), "{}").unwrap();
        assert!(run_dir(Some(&explicit), "x").is_err());
    }
}
