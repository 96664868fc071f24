use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use aspic::runner::export::{read_json, write_csv, write_csv_file, write_json, write_results, Results};
use aspic::runner::sweep::{sweep, SweepAxis, SweepCell};
use aspic::runner::{run_aspic, ExperimentConfig};
use aspic::{Error, Result};

/// Output directory, overridden by `--out`.
const OUT_DIR_VAR: &str = "ASPIC_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "aspic-out";

#[derive(Parser)]
#[command(name = "aspic", version, about = "Adaptive smoothing of path integral control")]
struct Cli {
    /// Output directory [env: ASPIC_OUT_DIR, default: aspic-out]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every repeat of a config and write results, records, summary and checkpoints.
    Run { config: PathBuf },
    /// Run one config per value of a sweep axis.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        config: PathBuf,
    },
    /// Re-export `results.json` from the output directory as CSV records or summary JSON.
    Export {
        #[arg(long, value_enum)]
        format: Format,
        /// Results file to read [default: <out>/results.json]
        #[arg(long)]
        input: Option<PathBuf>,
        /// Write here instead of stdout
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Delta,
    N,
    Grid,
}

impl From<Axis> for SweepAxis {
    fn from(a: Axis) -> Self {
        match a {
            Axis::Delta => SweepAxis::Delta,
            Axis::N => SweepAxis::N,
            Axis::Grid => SweepAxis::Grid,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_VAR).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Returns whether every run succeeded.
fn run(config: &Path, out: &Path) -> Result<bool> {
    let cfg = ExperimentConfig::load(config)?;
    let runs = run_aspic(&cfg)?;
    let results = Results::new(cfg, runs);
    let written = write_results(out, &results)?;
    for s in results.summary().runs {
        match &s.error {
            None => println!(
                "run {}: {} iterations, final cost {}, iterations to threshold {}",
                s.run,
                s.iterations_completed,
                fmt_opt(s.final_cost),
                s.iterations_to_threshold.map_or("-".into(), |i| i.to_string())
            ),
            Some(e) => eprintln!("run {} failed after {} iterations: {e}", s.run, s.iterations_completed),
        }
    }
    println!("config {} -> {}", results.config_hash, written.results.parent().unwrap_or(out).display());
    Ok(!results.any_failed())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

#[derive(serde::Serialize)]
struct SweepOutput<'a> {
    axis: SweepAxis,
    template_hash: String,
    cells: &'a [SweepCell],
}

const SWEEP_COLUMNS: &str =
    "cell,delta,n_rollouts,epsilon,iterations,config_hash,runs,failed,reached,iters_mean,iters_std,final_cost_mean,final_cost_std";

fn sweep_table(cells: &[SweepCell]) -> String {
    let mut s = String::from(SWEEP_COLUMNS);
    s.push('\n');
    for c in cells {
        let failed = c.runs.iter().filter(|r| r.failed()).count() + usize::from(c.error.is_some());
        let stat = |v: Option<aspic::runner::sweep::Stat>| match v {
            Some(v) => (v.mean.to_string(), v.std.to_string()),
            None => (String::new(), String::new()),
        };
        let (im, is) = stat(c.iterations_to_threshold);
        let (fm, fs) = stat(c.final_cost);
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{im},{is},{fm},{fs}\n",
            c.index,
            c.delta.map(|d| d.label()).unwrap_or_default(),
            c.n_rollouts,
            c.epsilon,
            c.iterations,
            c.config_hash,
            c.runs.len(),
            failed,
            c.reached,
        ));
    }
    s
}

fn run_sweep(config: &Path, axis: SweepAxis, out: &Path) -> Result<bool> {
    let cfg = ExperimentConfig::load(config)?;
    let cells = sweep(&cfg, axis)?;
    let sweep_json = out.join("sweep.json");
    write_json(
        &sweep_json,
        &SweepOutput {
            axis,
            template_hash: cfg.content_hash(),
            cells: &cells,
        },
    )?;
    let table = out.join("sweep.csv");
    std::fs::write(&table, sweep_table(&cells)).map_err(|e| Error::io(&table, e))?;
    for c in &cells {
        let records = c.runs.iter().flat_map(|r| r.records.iter());
        write_csv_file(&out.join(format!("cell-{}", c.index)).join("records.csv"), records)?;
        if let Some(e) = &c.error {
            eprintln!("cell {} failed: {e}", c.index);
        }
        for r in c.runs.iter().filter(|r| r.failed()) {
            eprintln!("cell {} run {} failed: {}", c.index, r.run, r.error.as_deref().unwrap_or(""));
        }
    }
    print!("{}", sweep_table(&cells));
    println!("sweep -> {}", sweep_json.display());
    Ok(!cells.iter().any(SweepCell::any_failed))
}

fn export(format: Format, input: &Path, output: Option<&Path>) -> Result<bool> {
    let results: Results = read_json(input)?;
    let mut buf = Vec::new();
    match format {
        Format::Csv => write_csv(&mut buf, results.records())?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut buf, &results.summary())?;
            buf.push(b'\n');
        }
    }
    match output {
        Some(path) => std::fs::write(path, &buf).map_err(|e| Error::io(path, e))?,
        None => std::io::stdout().write_all(&buf).map_err(|e| Error::io("<stdout>", e))?,
    }
    Ok(!results.any_failed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = out_dir(cli.out);
    let outcome = match cli.command {
        Command::Run { config } => run(&config, &out),
        Command::Sweep { axis, config } => run_sweep(&config, axis.into(), &out),
        Command::Export { format, input, output } => {
            let input = input.unwrap_or_else(|| out.join("results.json"));
            export(format, &input, output.as_deref())
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
