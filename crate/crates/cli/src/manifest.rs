//! Per-run manifest: the exact command, the output directory and the files
//! written. `stormloc replay <manifest>` re-executes the command.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::Command;

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub out: PathBuf,
    pub command: Command,
    pub outputs: Vec<PathBuf>,
    pub created_unix: i64,
}

pub fn write(out: &Path, name: &str, command: &Command, outputs: Vec<PathBuf>) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let out_abs = fs::canonicalize(out)?;
    let m = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        out: out_abs,
        command: command.clone(),
        outputs,
        created_unix: chrono::Utc::now().timestamp(),
    };
    let path = out.join(format!("{name}.manifest.json"));
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(path)
}

pub fn read(path: &Path) -> anyhow::Result<Manifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?)
}
