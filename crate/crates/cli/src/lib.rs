//! `vitalws` command line. Every subcommand reads the same experiment config;
//! flags override it.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use vitalws::alerts::{write_windows_jsonl, AlertType};
use vitalws::config::{config_keys, ExperimentConfig};
use vitalws::data::DataError;
use vitalws::evaluation::{read_report, render_plots, REPORT_FILE};
use vitalws::pipeline::{build_tables, evaluate_to_dir, train_to_dir, PipelineError};
use vitalws::synth::{write_cohort, CohortSpec};

#[derive(Debug, Parser)]
#[command(name = "vitalws", version, about = "Weakly supervised real-vs-artifact classification of vital-sign alerts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort as a manifest tree plus labels.csv.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Patients to generate (synth.n_patients).
        #[arg(long)]
        patients: Option<usize>,
        /// Hours per patient (synth.hours_per_patient).
        #[arg(long)]
        hours: Option<f64>,
        /// Share of planted alerts that are artifacts (synth.artifact_rate).
        #[arg(long)]
        artifact_rate: Option<f64>,
    },
    /// Detect alerts and write their analysis windows as JSON lines.
    Detect {
        #[command(flatten)]
        common: Common,
    },
    /// Apply the labeling functions and write the vote matrix and features.
    Votes {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the label model and forests on all windows and save them.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run the leave-one-patient-out experiment and write the report bundle.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Redraw the plots of an existing report.
    Report {
        #[command(flatten)]
        common: Common,
        /// report.json to read; defaults to the one in the output directory.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set forest.n_trees=200. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed (seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Alert types, comma separated (tau).
    #[arg(long, value_delimiter = ',', value_parser = parse_tau)]
    tau: Vec<AlertType>,
    /// Manifest tree to read (data_dir).
    #[arg(long, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// Ground-truth CSV (labels).
    #[arg(long, value_name = "PATH")]
    labels: Option<PathBuf>,
    /// Output directory (out_dir).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (workers).
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_tau(s: &str) -> Result<AlertType, String> {
    s.parse()
}

#[derive(Debug)]
struct CliError(String);

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError(e.to_string())
    }
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError(format!("--set expects KEY=VALUE, got `{o}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if !self.tau.is_empty() {
            cfg.tau = self.tau.clone();
        }
        if let Some(d) = &self.data_dir {
            cfg.data_dir = Some(d.clone());
            cfg.synth = None;
        }
        if let Some(l) = &self.labels {
            cfg.labels = Some(l.clone());
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = Some(w);
        }
        Ok(cfg)
    }
}

fn keys_help() -> String {
    let keys = config_keys();
    let width = keys.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from("Config keys (JSON file or --set KEY=VALUE) and defaults:\n");
    for (k, v) in keys {
        s.push_str(&format!("  {k:<width$}  {v}\n"));
    }
    s
}

fn command() -> clap::Command {
    let help = keys_help();
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|c| c.get_name().to_string()).collect();
    for name in names {
        let h = help.clone();
        cmd = cmd.mut_subcommand(name, move |c| c.after_long_help(h.clone()).after_help(h));
    }
    cmd
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    Ok(b.build()?.install(f))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Data(DataError::Io { path: path.to_path_buf(), source })
}

fn detect(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let mut files = Vec::new();
    for t in build_tables(cfg, false)? {
        let path = cfg.out_dir.join(format!("{}_windows.jsonl", t.tau.slug()));
        let f = File::create(&path).map_err(io_err(&path))?;
        write_windows_jsonl(&t.windows, BufWriter::new(f))?;
        files.push(path);
    }
    Ok(files)
}

fn votes(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let mut files = Vec::new();
    for t in build_tables(cfg, false)? {
        let path = cfg.out_dir.join(format!("{}_votes.csv", t.tau.slug()));
        let f = File::create(&path).map_err(io_err(&path))?;
        t.votes.write_csv(BufWriter::new(f))?;
        files.push(path);
        let path = cfg.out_dir.join(format!("{}_features.csv", t.tau.slug()));
        let f = File::create(&path).map_err(io_err(&path))?;
        t.features.write_csv(BufWriter::new(f)).map_err(vitalws::evaluation::EvalError::from)?;
        files.push(path);
    }
    Ok(files)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    match cli.command {
        Command::Synth { common, patients, hours, artifact_rate } => {
            let cfg = common.resolve()?;
            let mut spec = cfg.synth.clone().unwrap_or_else(CohortSpec::default);
            spec.seed = cfg.resolve_seed()?;
            if let Some(n) = patients {
                spec.n_patients = n;
            }
            if let Some(h) = hours {
                spec.hours_per_patient = h;
            }
            if let Some(r) = artifact_rate {
                spec.artifact_rate = r;
            }
            let out = cfg.out_dir.clone();
            with_workers(cfg.workers, || write_cohort(&spec, &out))??;
            Ok(vec![out])
        }
        Command::Detect { common } => {
            let cfg = common.resolve()?;
            Ok(with_workers(cfg.workers, || detect(&cfg))??)
        }
        Command::Votes { common } => {
            let cfg = common.resolve()?;
            Ok(with_workers(cfg.workers, || votes(&cfg))??)
        }
        Command::Train { common } => {
            let cfg = common.resolve()?;
            Ok(with_workers(cfg.workers, || train_to_dir(&cfg))??)
        }
        Command::Evaluate { common } => {
            let cfg = common.resolve()?;
            Ok(with_workers(cfg.workers, || evaluate_to_dir(&cfg))??)
        }
        Command::Report { common, report } => {
            let cfg = common.resolve()?;
            let path = report.unwrap_or_else(|| cfg.out_dir.join(REPORT_FILE));
            let reports = read_report(&path)?;
            Ok(render_plots(&reports, &cfg.out_dir)?)
        }
    }
}

/// Runs one invocation. Written files go to stdout, one per line; a failure
/// is a single `error: ...` line on stderr. Exit codes: 0 success, 1 failed
/// run, 2 bad usage.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                let _ = e.print();
                return 2;
            }
            eprintln!("error: {}", one_line(&e.to_string()));
            return 2;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            return 2;
        }
    };
    match run(cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(CliError(msg)) => {
            eprintln!("error: {}", msg.split_whitespace().collect::<Vec<_>>().join(" "));
            1
        }
    }
}

/// Clap's multi-line usage errors folded into one line.
fn one_line(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("Usage:") && !l.starts_with("For more information"))
        .map(|l| l.trim_start_matches("error:").trim())
        .collect::<Vec<_>>()
        .join(" ")
}
