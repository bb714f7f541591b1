//! Dataset files, the synthetic benchmark generator and run configuration.

pub mod config;
pub mod dataset;
pub mod synth;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use config::RunConfig;
pub use dataset::{CausalSegment, DatasetBundle};
pub use synth::{generate_synthetic, AnomalyKind, AnomalySpec, InjectedAnomaly, SynthConfig, SyntheticBundle};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
