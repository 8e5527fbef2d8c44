use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Record of one invocation, kept next to its outputs. All wall-clock data
/// lives here so the primary outputs stay reproducible.
#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: &'static str,
    pub seed: u64,
    pub config: C,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_secs: u64,
    pub duration_secs: f64,
}

pub struct Clock {
    wall: SystemTime,
    start: Instant,
}

impl Clock {
    pub fn start() -> Self {
        Self { wall: SystemTime::now(), start: Instant::now() }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn finish<C: Serialize>(
        &self,
        command: &str,
        argv: &[String],
        seed: u64,
        config: C,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
    ) -> RunManifest<C> {
        RunManifest {
            command: command.to_owned(),
            argv: argv.to_vec(),
            tool_version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            inputs,
            outputs,
            started_unix_secs: self.wall.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            duration_secs: self.start.elapsed().as_secs_f64(),
        }
    }
}

pub fn write<C: Serialize>(dir: &Path, manifest: &RunManifest<C>) -> cogcn::Result<()> {
    cogcn::io::write_json_atomic(&dir.join(RUN_MANIFEST_FILE), manifest)
}
