//! CSV records, summary JSON and parameter checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, IterationRecord, RunResult};
use crate::error::{Error, Result};

/// CSV header, in column order.
pub const CSV_COLUMNS: [&str; 10] = [
    "run",
    "iter",
    "mean_cost",
    "std_cost",
    "alpha",
    "kl_est",
    "eta",
    "achieved_kl",
    "wall_ms",
    "seed",
];

/// Full output of `run`: config, hash and every run with its records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub runs: Vec<RunResult>,
}

impl Results {
    pub fn new(config: ExperimentConfig, runs: Vec<RunResult>) -> Self {
        Self {
            config_hash: config.content_hash(),
            config,
            runs,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &IterationRecord> {
        self.runs.iter().flat_map(|r| r.records.iter())
    }

    pub fn any_failed(&self) -> bool {
        self.runs.iter().any(RunResult::failed)
    }

    pub fn summary(&self) -> Summary {
        Summary {
            config: self.config.clone(),
            config_hash: self.config_hash.clone(),
            runs: self
                .runs
                .iter()
                .map(|r| RunSummary {
                    run: r.run,
                    seed: r.seed,
                    iterations_completed: r.records.len(),
                    final_cost: r.final_cost(),
                    iterations_to_threshold: self
                        .config
                        .cost_threshold
                        .and_then(|c| r.iterations_to_threshold(c)),
                    error: r.error.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub iterations_completed: usize,
    pub final_cost: Option<f64>,
    pub iterations_to_threshold: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub runs: Vec<RunSummary>,
}

/// Writes the header and one row per record; missing values are empty cells.
pub fn write_csv<'a, W: Write>(out: W, records: impl IntoIterator<Item = &'a IterationRecord>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<IterationRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Structural(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_csv_file<'a>(path: &Path, records: impl IntoIterator<Item = &'a IterationRecord>) -> Result<()> {
    let f = create(path)?;
    write_csv(f, records).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Files written by [`write_results`].
#[derive(Debug, Clone, PartialEq)]
pub struct Written {
    pub results: PathBuf,
    pub records: PathBuf,
    pub summary: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

/// Writes `results.json`, `records.csv`, `summary.json` and one parameter checkpoint
/// per run (`params/run-<k>.json` and `.bin`) into `dir`.
pub fn write_results(dir: &Path, results: &Results) -> Result<Written> {
    let results_path = dir.join("results.json");
    let records = dir.join("records.csv");
    let summary = dir.join("summary.json");
    write_json(&results_path, results)?;
    write_csv_file(&records, results.records())?;
    write_json(&summary, &results.summary())?;
    let mut checkpoints = Vec::new();
    for run in &results.runs {
        let json = dir.join("params").join(format!("run-{}.json", run.run));
        write_json(&json, &run.final_params)?;
        let bin = json.with_extension("bin");
        std::fs::write(&bin, run.final_params.to_bytes()).map_err(|e| Error::io(&bin, e))?;
        checkpoints.push(json);
        checkpoints.push(bin);
    }
    Ok(Written {
        results: results_path,
        records,
        summary,
        checkpoints,
    })
}
