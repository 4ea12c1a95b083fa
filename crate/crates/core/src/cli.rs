//! The `confens` command-line interface.
//!
//! Stages compose through files: `simulate` → `split` → `ensemble` →
//! `calibrate` → `predict` → `evaluate`. Failures print a single line
//! `ERROR <CODE>: <detail>` to stderr and exit with the code's status.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::conformal::{self, coverage_bounds};
use crate::ensemble::{align_by_id, average_scores};
use crate::error::{Error, Result};
use crate::io::{self, Provenance};
use crate::metrics::{build_report, DEFAULT_BINS};
use crate::par::Execution;
use crate::simulator::{self, ScoreSource, SimulatorConfig};
use crate::splits::{self, SplitTag, DEFAULT_RATIOS};
use crate::types::LabeledScores;

// Like `println!`, but a closed stdout (e.g. piping into `head`) is not fatal.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

/// Exit status of `coverage-check` when the mean falls outside the bounds.
pub const EXIT_COVERAGE_OUT_OF_BOUNDS: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "confens", version, about = "Split conformal prediction over classifier score files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Partition labeled samples into train/val/calib/test
    Split {
        /// CSV whose first columns are `sample_id,true_label`
        #[arg(long)]
        labels: PathBuf,
        /// train,val,calib,test fractions
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RATIOS)]
        ratios: Vec<f64>,
        #[arg(long)]
        seed: u64,
        /// Shuffle all samples together instead of per class. Stratification
        /// is also skipped when any label is unknown.
        #[arg(long)]
        no_stratify: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the conformal threshold from a manifest's calibration rows
    Calibrate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        alpha: f64,
        /// Only calibrate on ids starting with this prefix
        #[arg(long)]
        id_prefix: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average several models' scores sample by sample
    Ensemble {
        #[arg(long, num_args = 2.., required = true)]
        scores: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build prediction sets from a calibration artifact
    Predict {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[command(flatten)]
        empty: EmptyPolicy,
        /// Restrict to one split of this manifest
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "test", requires = "manifest")]
        split: SplitTag,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score prediction sets against true labels
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        sets: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
        /// Directory for chart-ready CSV series
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Write synthetic expert score files
    Simulate {
        /// Simulator config JSON; built-in default when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Monte Carlo check of the finite-sample coverage guarantee
    CoverageCheck {
        /// Simulator config JSON; built-in default when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        n_calib: usize,
        #[arg(long)]
        n_test: usize,
        #[arg(long)]
        trials: usize,
        /// Allowed Monte Carlo slack around the theoretical interval
        #[arg(long, default_value_t = 0.01)]
        tolerance: f64,
        /// Use one expert instead of the ensemble
        #[arg(long)]
        expert: Option<usize>,
        /// Run trials on one thread
        #[arg(long)]
        sequential: bool,
    },
}

#[derive(Debug, Args)]
#[group(multiple = false)]
struct EmptyPolicy {
    /// Keep empty prediction sets (default)
    #[arg(long)]
    allow_empty: bool,
    /// Put the argmax class into otherwise empty sets
    #[arg(long)]
    force_argmax: bool,
}

fn exit_code_help() -> String {
    let mut s = String::from("Exit status:\n  0   success\n  2   usage error\n");
    let _ = writeln!(s, "  {EXIT_COVERAGE_OUT_OF_BOUNDS}   coverage-check: mean coverage outside the bounds");
    for (code, status, meaning) in Error::catalog() {
        let _ = writeln!(s, "  {status:<3} {code}: {meaning}");
    }
    s
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let matches = match Cli::command().after_help(exit_code_help()).try_get_matches_from(&args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let invocation = std::iter::once("confens".to_string())
        .chain(args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()))
        .collect::<Vec<_>>()
        .join(" ");
    let provenance = Provenance::new(invocation);
    match execute(cli.command, &provenance) {
        Ok(status) => status,
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            eprintln!("ERROR {}: {}", e.code(), detail);
            e.exit_code()
        }
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<SimulatorConfig> {
    match path {
        Some(p) => io::read_simulator_config(p),
        None => Ok(SimulatorConfig::default()),
    }
}

/// Rows of `data` whose ids appear in `ids`, in the order of `ids`.
fn rows_for(data: &LabeledScores, ids: &[String]) -> Result<LabeledScores> {
    let index: std::collections::HashMap<&str, usize> =
        data.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let rows = ids
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::IdSetMismatch { model: 0, detail: format!("id '{id}' has no score row") })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(data.select(&rows))
}

fn execute(command: Command, provenance: &Provenance) -> Result<i32> {
    match command {
        Command::Split { labels, ratios, seed, no_stratify, out } => {
            let (ids, labels) = io::read_labels_csv(&labels)?;
            let ratios: [f64; 4] = ratios.try_into().map_err(|r: Vec<f64>| {
                let mut padded = [f64::NAN; 4];
                padded.iter_mut().zip(&r).for_each(|(p, v)| *p = *v);
                Error::RatiosDoNotSumToOne(padded)
            })?;
            let stratified = !no_stratify && labels.iter().all(Option::is_some);
            let manifest = splits::make_split(&ids, &labels, ratios, seed, stratified)?;
            io::write_manifest(&manifest, &out, Some(provenance))?;
            let sizes = manifest.sizes();
            out!("train={} val={} calib={} test={}", sizes[0], sizes[1], sizes[2], sizes[3]);
        }
        Command::Calibrate { scores, manifest, alpha, id_prefix, out } => {
            let data = io::read_scores_csv(&scores)?;
            let manifest = io::read_manifest(&manifest)?;
            let mut calib = splits::apply_split(&data, &manifest, SplitTag::Calib)?;
            if let Some(prefix) = &id_prefix {
                let keep: Vec<usize> =
                    (0..calib.len()).filter(|&i| calib.ids()[i].starts_with(prefix.as_str())).collect();
                calib = calib.select(&keep);
            }
            let mut from = format!("{} [calib]", scores.display());
            if let Some(prefix) = &id_prefix {
                let _ = write!(from, " ids starting with '{prefix}'");
            }
            let artifact = conformal::calibrate_with_provenance(&calib, alpha, &from)?;
            io::write_artifact(&artifact, &out, Some(provenance))?;
            out!("n={} alpha={} q_hat={}", artifact.n_calibration(), artifact.alpha(), artifact.q_hat());
        }
        Command::Ensemble { scores, weights, out } => {
            let models = scores.iter().map(io::read_scores_csv).collect::<Result<Vec<_>>>()?;
            let aligned = align_by_id(&models)?;
            let fused = average_scores(&aligned, weights.as_deref())?;
            io::write_scores_csv(&fused, &out)?;
            out!("fused {} models over {} samples", models.len(), fused.len());
        }
        Command::Predict { scores, calibration, empty, manifest, split, out } => {
            let mut data = io::read_scores_csv(&scores)?;
            if let Some(m) = manifest {
                data = splits::apply_split(&data, &io::read_manifest(&m)?, split)?;
            }
            let artifact = io::read_artifact(&calibration)?;
            let allow_empty = !empty.force_argmax;
            let batch = conformal::predict_labeled(&data, &artifact, allow_empty)?;
            io::write_sets(&batch, &out, Some(provenance))?;
            out!("wrote {} prediction sets", batch.len());
        }
        Command::Evaluate { scores, sets, bins, out, plot_data } => {
            let data = io::read_scores_csv(&scores)?;
            let sets = io::read_sets(&sets)?;
            let test = rows_for(&data, sets.ids())?;
            let report = build_report(&test, &sets, bins)?;
            io::write_report(&report, &out, Some(provenance))?;
            if let Some(dir) = plot_data {
                io::write_plot_data(&report, dir)?;
            }
            out!("coverage={} avg_set_size={} accuracy={}", report.coverage, report.avg_set_size, report.accuracy);
        }
        Command::Simulate { config, out_dir } => {
            let config = load_config(config.as_ref())?;
            let experts = simulator::simulate(&config)?;
            std::fs::create_dir_all(&out_dir).map_err(|source| Error::Io { path: out_dir.clone(), source })?;
            for (m, e) in experts.iter().enumerate() {
                let path = out_dir.join(format!("expert_{m}.csv"));
                io::write_scores_csv(e, &path)?;
                out!("{}", path.display());
            }
        }
        Command::CoverageCheck { config, alpha, n_calib, n_test, trials, tolerance, expert, sequential } => {
            let config = load_config(config.as_ref())?;
            let source = expert.map_or(ScoreSource::Ensemble, ScoreSource::Expert);
            let exec = if sequential { Execution::Sequential } else { Execution::Parallel };
            let (lower, upper) = coverage_bounds(alpha, n_calib)?;
            let result = simulator::coverage_trial_with(&config, alpha, n_calib, n_test, trials, source, exec)?;
            for (t, c) in result.per_trial.iter().enumerate() {
                out!("trial {t} coverage {c}");
            }
            let ok = result.mean_coverage >= lower - tolerance && result.mean_coverage <= upper + tolerance;
            out!("mean_coverage {}", result.mean_coverage);
            out!("bounds {lower} {upper}");
            out!("tolerance {tolerance}");
            out!("status {}", if ok { "PASS" } else { "FAIL" });
            if !ok {
                eprintln!(
                    "ERROR COVERAGE_OUT_OF_BOUNDS: mean coverage {} outside [{}, {}] +/- {}",
                    result.mean_coverage, lower, upper, tolerance
                );
                return Ok(EXIT_COVERAGE_OUT_OF_BOUNDS);
            }
        }
    }
    Ok(0)
}
