use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fg_core::SystemParams;
use serde::Serialize;
use serde_json::{json, Value};

/// Failure with its process exit code: 1 usage or config, 2 analytic
/// non-convergence or instability, 3 I/O.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
    /// Structured diagnostics printed as JSON on stderr.
    pub detail: Option<Value>,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
            detail: None,
        }
    }

    pub fn analytic(message: impl Into<String>, detail: Value) -> Self {
        CliError {
            code: 2,
            message: message.into(),
            detail: Some(detail),
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError {
            code: 3,
            message: format!("{}: {err}", path.display()),
            detail: None,
        }
    }
}

impl From<fg_core::ParamError> for CliError {
    fn from(e: fg_core::ParamError) -> Self {
        match e {
            fg_core::ParamError::Io { .. } => CliError {
                code: 3,
                message: e.to_string(),
                detail: None,
            },
            other => CliError::usage(other.to_string()),
        }
    }
}

impl From<fg_core::MobilityError> for CliError {
    fn from(e: fg_core::MobilityError) -> Self {
        let code = if matches!(e, fg_core::MobilityError::Io(_)) {
            3
        } else {
            1
        };
        CliError {
            code,
            message: e.to_string(),
            detail: None,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Directory receiving `config.resolved.json` and `manifest.json` for an
/// output file.
pub fn sidecar_dir(out: &Path) -> PathBuf {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    write_text(path, &(text + "\n"))
}

/// Writes rows built in memory, so a failing write leaves no partial file
/// behind the header.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::io(path, e);
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(r).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(path, e))?;
    write_text(
        path,
        &String::from_utf8(bytes).expect("csv output is utf-8"),
    )
}

pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub struct Run {
    started: Instant,
    command: &'static str,
}

impl Run {
    pub fn start(command: &'static str) -> Self {
        Run {
            started: Instant::now(),
            command,
        }
    }

    /// Writes the resolved configuration and the manifest into `dir`.
    pub fn finish(
        &self,
        dir: &Path,
        params: &SystemParams,
        extra: Value,
        outputs: &[PathBuf],
    ) -> CliResult<()> {
        ensure_dir(dir)?;
        write_text(
            &dir.join("config.resolved.json"),
            &(params.to_json_pretty() + "\n"),
        )?;
        let mut manifest = json!({
            "command": self.command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "fg_version": env!("CARGO_PKG_VERSION"),
            "threads": rayon::current_num_threads(),
            "wall_time_s": self.started.elapsed().as_secs_f64(),
            "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        });
        if let (Value::Object(m), Value::Object(e)) = (&mut manifest, extra) {
            m.extend(e);
        }
        write_json(&dir.join("manifest.json"), &manifest)
    }
}
