use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use gccd::Error;

pub fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).map_err(|source| {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

/// File name up to its first dot: `100.segments.json` belongs to record `100`.
pub fn record_id(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default();
    name.split('.').next().unwrap_or_default().to_string()
}

/// Per-record files under `path`: the file itself, or every file in the
/// directory with the given extension.
pub fn records_in(path: &Path, extension: &str) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let meta = std::fs::metadata(path).map_err(io)?;
    let mut out = BTreeMap::new();
    if meta.is_file() {
        out.insert(record_id(path), path.to_path_buf());
        return Ok(out);
    }
    for entry in std::fs::read_dir(path).map_err(io)? {
        let p = entry.map_err(io)?.path();
        if !p.is_file() || p.extension().and_then(|e| e.to_str()) != Some(extension) {
            continue;
        }
        if let Some(prev) = out.insert(record_id(&p), p.clone()) {
            return Err(Error::InvalidArgument(format!(
                "{} and {} belong to the same record",
                prev.display(),
                p.display()
            ))
            .into());
        }
    }
    Ok(out)
}

/// Writes through a temporary file in the same directory and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}
