//! Output directories, run manifests and layered config resolution.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Written next to every run's outputs. Holds no timestamps, so two runs
/// of the same config over the same inputs produce identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Value,
    pub inputs: Vec<FileHash>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileHash>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| CliError::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            walk(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// Content hash of a file, or of a directory tree as the hash over its
/// sorted `relative path, file hash` lines.
pub fn sha256_path(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return sha256_file(path);
    }
    let mut files = Vec::new();
    walk(path, path, &mut files)?;
    let mut h = Sha256::new();
    for rel in files {
        let digest = sha256_file(&path.join(&rel))?;
        h.update(format!("{} {digest}\n", rel.to_string_lossy()).as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

/// An output directory that remembers what was written into it.
#[derive(Debug)]
pub struct OutDir {
    root: PathBuf,
    written: Mutex<Vec<PathBuf>>,
}

impl OutDir {
    /// Refuses a non-empty directory unless `force` is set.
    pub fn prepare(root: &Path, force: bool) -> Result<Self> {
        if root.exists() {
            let mut entries = fs::read_dir(root).map_err(|e| CliError::io(root, e))?;
            if entries.next().is_some() && !force {
                return Err(CliError::OutputExists(root.to_path_buf()));
            }
        }
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Mutex::new(Vec::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path for `rel`, creating parent directories.
    pub fn path(&self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        Ok(p)
    }

    /// Note a file written by other code.
    pub fn record(&self, rel: impl AsRef<Path>) {
        self.written.lock().expect("out lock").push(rel.as_ref().to_path_buf());
    }

    /// Note every file under `rel`.
    pub fn record_dir(&self, rel: impl AsRef<Path>) -> Result<()> {
        let dir = self.root.join(rel.as_ref());
        let mut files = Vec::new();
        if dir.is_dir() {
            walk(&self.root, &dir, &mut files)?;
        }
        self.written.lock().expect("out lock").extend(files);
        Ok(())
    }

    pub fn write_bytes(&self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
        let p = self.path(rel.as_ref())?;
        fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
        self.record(rel);
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, rel: impl AsRef<Path>, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn written(&self) -> Vec<PathBuf> {
        let mut v = self.written.lock().expect("out lock").clone();
        v.sort();
        v.dedup();
        v
    }

    pub fn write_manifest(&self, command: &str, config: &Value, inputs: &[PathBuf]) -> Result<Manifest> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(FileHash {
                    path: p.clone(),
                    sha256: sha256_path(p)?,
                })
            })
            .collect::<Result<_>>()?;
        let outputs = self
            .written()
            .into_iter()
            .map(|rel| {
                Ok(FileHash {
                    sha256: sha256_file(&self.root.join(&rel))?,
                    path: rel,
                })
            })
            .collect::<Result<_>>()?;
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.clone(),
            inputs,
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let p = self.root.join(MANIFEST_FILE);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        Ok(manifest)
    }
}

/// Recursive merge: objects merge key by key, anything else replaces.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Drop null members, so unset flags leave lower layers alone.
pub fn strip_nulls(v: Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.into_iter()
                .filter(|(_, v)| !v.is_null())
                .map(|(k, v)| (k, strip_nulls(v)))
                .filter(|(_, v)| !matches!(v, Value::Object(m) if m.is_empty()))
                .collect::<Map<_, _>>(),
        ),
        other => other,
    }
}

pub fn read_config_file(path: &Path) -> Result<Value> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let v: Value = serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(CliError::Config(format!("{}: expected a JSON object", path.display())));
    }
    Ok(v)
}

/// Defaults, then the config file, then flags.
pub fn resolve<C: DeserializeOwned + Serialize>(
    defaults: impl FnOnce(&Value) -> Result<Value>,
    file: Option<&Path>,
    flags: Value,
) -> Result<(C, Value)> {
    let mut user = match file {
        Some(p) => read_config_file(p)?,
        None => Value::Object(Map::new()),
    };
    merge(&mut user, strip_nulls(flags));
    let mut full = defaults(&user)?;
    merge(&mut full, user);
    let cfg: C = serde_json::from_value(full).map_err(|e| CliError::Config(e.to_string()))?;
    let echoed = serde_json::to_value(&cfg)?;
    Ok((cfg, echoed))
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let mut v = json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge(&mut v, json!({"b": {"c": 5}}));
        merge(&mut v, strip_nulls(json!({"a": null, "b": {"d": 7, "e": null}})));
        assert_eq!(v, json!({"a": 1, "b": {"c": 5, "d": 7}}));
    }

    #[test]
    fn directory_hash_depends_on_names_and_content() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join("a"), b"x").unwrap();
        let h1 = sha256_path(d.path()).unwrap();
        fs::write(d.path().join("a"), b"y").unwrap();
        let h2 = sha256_path(d.path()).unwrap();
        fs::rename(d.path().join("a"), d.path().join("b")).unwrap();
        let h3 = sha256_path(d.path()).unwrap();
        assert!(h1 != h2 && h2 != h3);
    }
}
