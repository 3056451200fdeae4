use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use coughscreen_cli::commands::{
    augment, ensemble_cmd, evaluate_cmd, featurize, gradcheck, train, AugmentArgs, EnsembleArgs, EvaluateArgs,
    FeaturizeArgs, TrainArgs,
};
use coughscreen_cli::synth::synthesize;
use coughscreen_cli::{CliError, Fold};
use coughscreen_core::augment::AugmentMethod;

#[derive(Parser)]
#[command(name = "coughscreen", version, about = "Acoustic cough screening pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Spectrum,
    Noise,
    Vtlp,
}

impl From<Method> for AugmentMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Spectrum => AugmentMethod::Spectrum,
            Method::Noise => AugmentMethod::Noise,
            Method::Vtlp => AugmentMethod::Vtlp,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Condition every clip and write feature caches and per-fold stats.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fail when any clip cannot be featurized.
        #[arg(long)]
        strict: bool,
    },
    /// Create augmented clips and an extended manifest.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise_dir: Option<PathBuf>,
        /// Use built-in white, pink and brown noise.
        #[arg(long)]
        synthetic_noise: bool,
    },
    /// Train every fold and select the best model.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated fold numbers.
        #[arg(long, value_delimiter = ',')]
        folds: Option<Vec<usize>>,
    },
    /// Score clips with one checkpoint or an ensemble of several.
    Evaluate {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated folds to score (numbers or `test`).
        #[arg(long, value_delimiter = ',')]
        folds: Option<Vec<Fold>>,
    },
    /// Average score files from earlier evaluations.
    Ensemble {
        #[arg(long = "scores", required = true)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic two-class corpus with a 5-fold manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 160)]
        n_neg: usize,
        #[arg(long, default_value_t = 10)]
        n_pos: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference gradient check of every model and loss.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Featurize {
            manifest,
            config,
            out,
            seed,
            strict,
        } => {
            let s = featurize(&FeaturizeArgs {
                manifest,
                config,
                out,
                seed,
                strict,
            })?;
            println!("{} written, {} skipped -> {}", s.written.len(), s.skipped.len(), s.out_dir.display());
        }
        Cmd::Augment {
            manifest,
            method,
            config,
            out,
            seed,
            noise_dir,
            synthetic_noise,
        } => {
            let s = augment(&AugmentArgs {
                manifest,
                method: method.into(),
                config,
                out,
                seed,
                noise_dir,
                synthetic_noise,
            })?;
            println!("{} new rows -> {}", s.new_rows, s.manifest.display());
        }
        Cmd::Train {
            manifest,
            features,
            config,
            out,
            seed,
            folds,
        } => {
            let s = train(&TrainArgs {
                manifest,
                features,
                config,
                out,
                seed,
                folds,
            })?;
            for f in &s.selection.folds {
                println!("fold {} best epoch {} val AUC {:.4}", f.fold, f.best_epoch, f.best_val_auc);
            }
            let v = &s.selection.validation;
            println!(
                "selected fold {}: AUC {:.4}, specificity {:.4} at sensitivity >= {}",
                s.selection.selected_fold, v.eval.auc, v.specificity_at_min_sens, v.min_sensitivity
            );
        }
        Cmd::Evaluate {
            checkpoints,
            manifest,
            features,
            config,
            out,
            folds,
        } => {
            let s = evaluate_cmd(&EvaluateArgs {
                checkpoints,
                manifest,
                features,
                config,
                out,
                folds,
            })?;
            print_report(&s.report);
        }
        Cmd::Ensemble { scores, config, out } => {
            let s = ensemble_cmd(&EnsembleArgs { scores, config, out })?;
            print_report(&s.report);
        }
        Cmd::Synth { out, n_neg, n_pos, seed } => {
            let m = synthesize(&out, n_neg, n_pos, seed)?;
            println!("{} clips -> {}", m.rows.len(), out.join("manifest.csv").display());
        }
        Cmd::Gradcheck { tol, seed, out } => {
            gradcheck(tol, seed, out.as_deref())?;
        }
    }
    Ok(())
}

fn print_report(r: &coughscreen_cli::commands::Report) {
    println!(
        "AUC {:.4}, specificity {:.4} at sensitivity >= {} ({} pos, {} neg)",
        r.eval.auc, r.specificity_at_min_sens, r.min_sensitivity, r.eval.n_pos, r.eval.n_neg
    );
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
