use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use tempfile::NamedTempFile;

use crate::config::EngineConfig;
use crate::error::{CliError, CliResult};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes through a temporary file in the destination directory, then
/// renames it into place.
pub fn write_atomic<F>(path: &Path, fill: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<&mut NamedTempFile>) -> Result<(), mixsched::Error>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    ensure_dir(&dir)?;
    let mut tmp = NamedTempFile::new_in(&dir).map_err(|e| CliError::io(&dir, e))?;
    {
        let mut w = BufWriter::new(&mut tmp);
        fill(&mut w).map_err(|e| match e {
            mixsched::Error::Io(io) => CliError::io(path, io),
            other => CliError::Engine(other),
        })?;
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// Companion `<file>.meta.json` recording the resolved configuration for a
/// CSV artifact.
pub fn write_meta(artifact: &Path, command: &str, cfg: &EngineConfig, extra: Value) -> CliResult<()> {
    let mut meta = serde_json::json!({
        "command": command,
        "artifact": artifact.file_name().map(|n| n.to_string_lossy().into_owned()),
        "config": cfg.to_value(),
    });
    if let (Value::Object(m), Value::Object(x)) = (&mut meta, extra) {
        m.extend(x);
    }
    write_json(&meta_path(artifact), &meta)
}

pub fn meta_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    artifact.with_file_name(name)
}

/// Opens an input file, reporting a missing file as `what not found`.
pub fn open_input(path: &Path, what: &'static str) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::NotFound {
            what,
            path: path.to_path_buf(),
        },
        _ => CliError::io(path, e),
    })
}
