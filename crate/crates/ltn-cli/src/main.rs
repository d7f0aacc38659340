//! `ltn`: synthetic dataset generation, training, evaluation, and ablation
//! preset configs for the differentiable logic engine.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process;

use clap::{Parser, Subcommand};

use ltn_core::autodiff::load_params;
use ltn_core::config::{run_preset, ExperimentConfig};
use ltn_core::data::{write_classes, write_ontology, DataError, Dataset};
use ltn_core::eval::{evaluate, report_to_text};
use ltn_core::ground::PredicateSet;
use ltn_core::synth::{generate, SyntheticSpec};
use ltn_core::train::{train, TrainError};

#[derive(Parser)]
#[command(name = "ltn", version, about = "Differentiable logic detection harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic proposal dataset plus class and ontology sidecars.
    Gen {
        /// Generator spec file, `key = value` lines.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Dataset output path; sidecars get `.classes` and `.ontology` added.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model as described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a dataset with a checkpoint and report per-class AP and mAP.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Matching threshold for a detection to claim a ground truth.
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Report file; written to stdout when absent.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write one of the ablation preset configs.
    Preset {
        /// One of plain, alpha, bg, bg_alpha.
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Validation failures exit 1, runtime failures exit 2.
enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) => write!(f, "{m}"),
        }
    }
}

fn invalid(e: impl fmt::Display) -> Failure {
    Failure::Validation(e.to_string())
}

fn runtime(e: impl fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = OsString::from(out.as_os_str());
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

fn cmd_gen(spec_path: &Path, seed: u64, out: &Path) -> Result<(), Failure> {
    let spec = SyntheticSpec::parse(&read_file(spec_path)?).map_err(invalid)?;
    let data = generate(&spec, seed).map_err(invalid)?;
    data.dataset
        .save(out)
        .map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    println!(
        "wrote {} ({} images, {} proposals, dim {})",
        out.display(),
        data.dataset.images.len(),
        data.dataset.proposal_count(),
        data.dataset.embed_dim
    );
    let classes_path = sidecar(out, "classes");
    write_file(&classes_path, &write_classes(&data.classes))?;
    println!("wrote {} ({} classes)", classes_path.display(), data.classes.len());
    if !data.ontology.is_empty() {
        let ontology_path = sidecar(out, "ontology");
        write_file(&ontology_path, &write_ontology(&data.ontology))?;
        println!(
            "wrote {} ({} whole classes)",
            ontology_path.display(),
            data.ontology.wholes.len()
        );
    }
    Ok(())
}

fn data_failure(e: DataError) -> Failure {
    match e {
        DataError::Parse { .. } => invalid(e),
        DataError::Io(_) => runtime(e),
    }
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::Config(_)
        | TrainError::Detect(_)
        | TrainError::Weight(_)
        | TrainError::Axioms(_)
        | TrainError::UngroundedAxiomPredicate(_)
        | TrainError::AxiomArityMismatch { .. }
        | TrainError::DuplicateAxiom(_)
        | TrainError::InvalidTheory(_)
        | TrainError::EmptyOntology => invalid(e),
        TrainError::Data(d) => data_failure(d),
        other => runtime(other),
    }
}

fn cmd_train(config: &Path) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config).map_err(invalid)?;
    if cfg.dataset.is_empty() || cfg.classes.is_empty() {
        return Err(Failure::Validation(
            "config needs `dataset` and `classes` paths filled in".to_string(),
        ));
    }
    let outcome = train(&cfg).map_err(train_failure)?;
    match outcome.metrics.last() {
        Some(last) => println!(
            "trained {} epochs, final loss {} (expl {}, prior {}, l2 {})",
            outcome.metrics.len(),
            last.total,
            last.expl_loss,
            last.prior_loss,
            last.l2
        ),
        None => println!("0 epochs, parameters left at initialization"),
    }
    if outcome.skipped_batches > 0 {
        println!(
            "skipped {} image passes without foreground",
            outcome.skipped_batches
        );
    }
    if !cfg.checkpoint_out.is_empty() {
        println!("checkpoint: {}", cfg.checkpoint_out);
    }
    if !cfg.metrics_out.is_empty() {
        println!("metrics: {}", cfg.metrics_out);
    }
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    iou: f64,
    report: Option<&Path>,
) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&iou) {
        return Err(Failure::Validation(format!(
            "iou threshold must lie in [0, 1], got {iou}"
        )));
    }
    let params = load_params(checkpoint)
        .map_err(|e| runtime(format!("{}: {e}", checkpoint.display())))?;
    let set = PredicateSet::from_tensors(&params).map_err(invalid)?;
    let dataset = Dataset::load(data).map_err(data_failure)?;
    let rep = evaluate(&set, &dataset, iou).map_err(invalid)?;
    let text = report_to_text(&rep);
    match report {
        Some(path) => {
            write_file(path, &text)?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_preset(name: &str, out: &Path) -> Result<(), Failure> {
    let cfg = run_preset(name).map_err(invalid)?;
    write_file(out, &cfg.to_text())?;
    println!("wrote {} ({name} preset)", out.display());
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, bad usage is not.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            process::exit(code);
        }
    };
    let result = match &cli.command {
        Command::Gen { spec, seed, out } => cmd_gen(spec, *seed, out),
        Command::Train { config } => cmd_train(config),
        Command::Eval {
            checkpoint,
            data,
            iou,
            report,
        } => cmd_eval(checkpoint, data, *iou, report.as_deref()),
        Command::Preset { name, out } => cmd_preset(name, out),
    };
    if let Err(f) = result {
        eprintln!("error: {f}");
        process::exit(f.code());
    }
}
