//! Output directory layout: one record, solution and optional trace per run,
//! plus an append-only `index.jsonl`.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::ResolvedConfig;
use crate::record::ResultsRecord;
use crate::run::RunOutput;

pub const INDEX: &str = "index.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub config: ResolvedConfig,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub run_id: String,
    pub record: String,
    pub config_hash: String,
    pub outcome: crate::record::Outcome,
    pub objective: Option<f64>,
    pub created_unix: u64,
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn record_path(out: &Path, run_id: &str) -> PathBuf {
    out.join(format!("{run_id}.record.json"))
}

pub fn solution_path(record: &Path) -> PathBuf {
    let s = record.to_string_lossy();
    PathBuf::from(s.strip_suffix(".record.json").unwrap_or(&s).to_string() + ".solution.json")
}

/// Persist a run; returns the record path.
pub fn persist(out: &Path, cfg: &ResolvedConfig, run: &RunOutput, with_trace: bool) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let id = &run.record.run_id;
    if let Some(x) = &run.solution {
        let sol = SolutionFile {
            config: cfg.clone(),
            x: x.clone(),
        };
        write_atomic(&out.join(format!("{id}.solution.json")), serde_json::to_string(&sol)?.as_bytes())?;
    }
    if with_trace {
        write_atomic(&out.join(format!("{id}.trace.tsv")), run.trace.as_bytes())?;
    }
    let rec = record_path(out, id);
    write_atomic(&rec, run.record.to_json().as_bytes())?;
    let entry = IndexEntry {
        run_id: id.clone(),
        record: rec.file_name().expect("record file name").to_string_lossy().into_owned(),
        config_hash: run.record.config_hash.clone(),
        outcome: run.record.outcome,
        objective: run.record.objective,
        created_unix: run.record.created_unix,
    };
    let mut f = OpenOptions::new().create(true).append(true).open(out.join(INDEX))?;
    writeln!(f, "{}", serde_json::to_string(&entry)?)?;
    Ok(rec)
}

pub fn load_record(path: &Path) -> Result<ResultsRecord> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ResultsRecord::from_json(&text).with_context(|| format!("validating {}", path.display()))
}

pub fn load_solution(record: &Path) -> Result<SolutionFile> {
    let path = solution_path(record);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Record files named on the command line, expanding directories.
pub fn collect_records(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.to_string_lossy().ends_with(".record.json"))
                .collect();
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            bail!("{} does not exist", p.display());
        }
    }
    Ok(out)
}
