use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use capcon::{DerivedConstants, ModelParams};
use serde::Serialize;

use crate::CliError;

/// Deterministic run description embedded in every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub options: serde_json::Value,
    pub params: ModelParams,
    pub derived: DerivedConstants,
    pub seeds: Vec<u64>,
}

impl RunManifest {
    pub fn new(
        command: &'static str,
        options: serde_json::Value,
        params: ModelParams,
        derived: DerivedConstants,
        seeds: Vec<u64>,
    ) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            options,
            params,
            derived,
            seeds,
        }
    }
}

/// Wall-clock record written next to file outputs, so the outputs
/// themselves stay byte-identical across runs.
#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    manifest: &'a RunManifest,
    started_unix: f64,
    finished_unix: f64,
    threads: usize,
    output: String,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".run.json");
    PathBuf::from(name)
}

/// Writes `body` to `out` (plus its sidecar record) or to stdout.
pub fn emit(
    out: Option<&Path>,
    body: &str,
    manifest: &RunManifest,
    started: f64,
) -> Result<(), CliError> {
    let Some(path) = out else {
        print!("{body}");
        return Ok(());
    };
    let io = |e: std::io::Error, p: &Path| CliError::io(format!("{}: {e}", p.display()));
    std::fs::write(path, body).map_err(|e| io(e, path))?;
    let record = RunRecord {
        manifest,
        started_unix: started,
        finished_unix: unix_now(),
        threads: rayon::current_num_threads(),
        output: path.display().to_string(),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&record).expect("record serializes") + "\n";
    std::fs::write(&side, text).map_err(|e| io(e, &side))
}
