use crate::Failure;
use std::io::Write;
use std::path::Path;

/// Writes `text` to `path` via a temporary file in the same directory and a rename,
/// or to stdout when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    let Some(path) = path else {
        let mut out = std::io::stdout().lock();
        return out
            .write_all(text.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| Failure::io(format!("writing stdout: {e}")));
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
    tmp.write_all(text.as_bytes())
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| Failure::io(format!("writing temporary file: {e}")))?;
    tmp.persist(path)
        .map_err(|e| Failure::io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

pub fn json_text(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("output serializes");
    s.push('\n');
    s
}
