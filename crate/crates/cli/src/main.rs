mod commands;
mod config;
mod error;
mod inputs;
mod manifest;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bddtext::corpus::{SplitSpec, SynthSpec};
use clap::{ArgAction, Args, Parser, Subcommand};

use commands::{ensure_empty, execute, manifest_path};
use config::ConfigArgs;
use error::{usage, CliResult};
use manifest::{version, DataPaths, Invocation, RunManifest};

#[derive(Parser)]
#[command(name = "bddtext", version, about = "Semi-supervised text classification with balanced label angle variances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with per-label dispersion.
    Synth(SynthArgs),
    /// Train one model and write a checkpoint with per-epoch metrics.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled JSONL file.
    Evaluate(EvaluateArgs),
    /// Run the full method and its four ablations over several seeds.
    Ablate(AblateArgs),
    /// Per-epoch angle-variance gaps and pseudo-label accuracy against hidden truth.
    Diagnose(DiagnoseArgs),
    /// Rerun a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, action = ArgAction::Set, default_value_t = false)]
    multi_label: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Comma-separated, one value per label.
    #[arg(long, value_delimiter = ',')]
    dispersion: Option<Vec<f64>>,
    #[arg(long)]
    n_labeled: Option<usize>,
    #[arg(long)]
    n_unlabeled: Option<usize>,
    #[arg(long)]
    n_dev: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    avg_labels: Option<f64>,
    #[arg(long)]
    profile_size: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

impl SynthArgs {
    fn spec(&self) -> SynthSpec {
        let mut s = SynthSpec::margin_bias_preset(self.multi_label, 2000, self.seed);
        s.n_labels = self.k;
        s.dispersion = match &self.dispersion {
            Some(d) => d.clone(),
            None if self.k == 4 => s.dispersion,
            None => (0..self.k).map(|i| 0.25 * 8f64.powf(i as f64 / (self.k.max(2) - 1) as f64)).collect(),
        };
        let or = |v: Option<usize>, d: usize| v.unwrap_or(d);
        s.vocab_size = or(self.vocab_size, s.vocab_size);
        s.split = SplitSpec {
            n_labeled: or(self.n_labeled, s.split.n_labeled),
            n_unlabeled: or(self.n_unlabeled, s.split.n_unlabeled),
            n_dev: or(self.n_dev, s.split.n_dev),
            seed: self.seed,
        };
        s.n_test = or(self.n_test, s.n_test);
        s.avg_labels = self.avg_labels.unwrap_or(s.avg_labels);
        s.profile_size = or(self.profile_size, s.profile_size);
        s.min_len = or(self.min_len, s.min_len);
        s.max_len = or(self.max_len, s.max_len);
        s
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    labeled: PathBuf,
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
}

/// Manifests record absolute paths so a replay does not depend on the working directory.
fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

impl DataArgs {
    fn paths(&self) -> DataPaths {
        DataPaths {
            labeled: absolute(&self.labeled),
            unlabeled: self.unlabeled.as_deref().map(absolute),
            dev: self.dev.as_deref().map(absolute),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write eval.json, eval.csv and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Unlabeled documents with their hidden labels, in pool order.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    /// A manifest file or the directory holding it.
    manifest: PathBuf,
    /// Write here instead of the recorded output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn manifest(invocation: Invocation, config_path: Option<PathBuf>, config: Option<bddtext::trainer::TrainConfig>, seeds: Vec<u64>, out_dir: PathBuf) -> RunManifest {
    RunManifest {
        invocation,
        config_path: config_path.as_deref().map(absolute),
        config,
        seeds,
        out_dir: absolute(&out_dir),
        version: version(),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let m = match cli.command {
        Command::Synth(a) => {
            ensure_empty(&a.out, a.force)?;
            let spec = a.spec();
            manifest(Invocation::Synth { spec }, None, None, vec![a.seed], a.out)
        }
        Command::Train(a) => {
            let mut cfg = a.config.resolve()?;
            if let Some(seed) = a.seed {
                cfg.seed = seed;
            }
            let seeds = vec![cfg.seed];
            manifest(Invocation::Train { data: a.data.paths() }, a.config.config, Some(cfg), seeds, a.out)
        }
        Command::Evaluate(a) => {
            let Some(out) = a.out else {
                let report = commands::evaluate(&a.checkpoint, &a.data, None)?;
                let _ = writeln!(std::io::stdout(), "{}", report.to_json());
                return Ok(());
            };
            let invocation = Invocation::Evaluate { checkpoint: absolute(&a.checkpoint), data: absolute(&a.data) };
            manifest(invocation, None, None, Vec::new(), out)
        }
        Command::Ablate(a) => {
            let cfg = a.config.resolve()?;
            manifest(Invocation::Ablate { data: a.data.paths() }, a.config.config, Some(cfg), a.seeds, a.out)
        }
        Command::Diagnose(a) => {
            let mut cfg = a.config.resolve()?;
            if let Some(seed) = a.seed {
                cfg.seed = seed;
            }
            let seeds = vec![cfg.seed];
            let invocation = Invocation::Diagnose { data: a.data.paths(), truth: absolute(&a.truth) };
            manifest(invocation, a.config.config, Some(cfg), seeds, a.out)
        }
        Command::Replay(a) => {
            let mut m = RunManifest::read(&manifest_path(&a.manifest))?;
            if let Some(out) = a.out {
                m.out_dir = out;
            }
            m
        }
    };
    if m.out_dir.as_os_str().is_empty() {
        return Err(usage("output directory is empty"));
    }
    m.write()?;
    execute(&m)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
