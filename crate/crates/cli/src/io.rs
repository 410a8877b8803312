use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

/// Writes `contents` to `path` through a temp file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// `header` then one row per time: `t, columns[0][k], columns[1][k], ...`.
pub fn csv(header: &[&str], times: &[f64], columns: &[&[f64]]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for (k, t) in times.iter().enumerate() {
        out.push_str(&format!("{t:.12e}"));
        for c in columns {
            out.push_str(&format!(",{:.12e}", c[k]));
        }
        out.push('\n');
    }
    out
}

pub fn trajectory_csv(times: &[f64], states: &[Vec<f64>]) -> String {
    let n = states.first().map_or(0, Vec::len);
    let mut header = vec!["time".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    let mut out = header.join(",");
    out.push('\n');
    for (t, x) in times.iter().zip(states) {
        out.push_str(&format!("{t:.12e}"));
        for v in x {
            out.push_str(&format!(",{v:.12e}"));
        }
        out.push('\n');
    }
    out
}
