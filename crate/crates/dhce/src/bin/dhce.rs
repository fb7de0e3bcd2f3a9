//! Command-line interface: synthetic data generation, training,
//! evaluation, prediction, gradient checking, and hypergraph
//! inspection.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/config error,
//! 3 numeric failure. Logging level comes from DHCE_LOG
//! (error | info | debug).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dhce::ehr::{generate_synthetic, load_dataset, to_jsonl, PatientRecord, SynthConfig};
use dhce::harness::{
    evaluate, load_checkpoint, parse_rules, predict_next, render_patient, run_gradcheck,
    train, HarnessError, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "dhce",
    about = "Sequential diagnosis prediction over dynamic visit hypergraphs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic JSONL dataset with planted chronic/comorbidity
    /// structure.
    Gen(GenArgs),
    /// Train a model from a config file and/or flag overrides.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset (precision@{5,10,20} + loss).
    Eval(EvalArgs),
    /// Rank next-visit diseases for one patient.
    Predict(PredictArgs),
    /// Verify full-model gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Print per-visit hypergraphs and chronic/acute partitions.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_patients: usize,
    #[arg(long, default_value_t = 50)]
    vocab_size: usize,
    #[arg(long, default_value_t = 3)]
    visits_min: usize,
    #[arg(long, default_value_t = 6)]
    visits_max: usize,
    #[arg(long, default_value_t = 2)]
    codes_min: usize,
    #[arg(long, default_value_t = 4)]
    codes_max: usize,
    #[arg(long, default_value_t = 0.5)]
    chronic_persistence: f64,
    /// Comorbidity rules, e.g. `3>17:0.9,5>8:0.8`.
    #[arg(long, default_value = "")]
    rules: String,
    #[arg(long, default_value_t = 0.0)]
    event_noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value config file; every key is also a flag here.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, repeatable: --set key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long = "data")]
    data: Option<String>,
    #[arg(long = "vocab")]
    vocab: Option<String>,
    #[arg(long = "n_patients")]
    n_patients: Option<String>,
    #[arg(long = "vocab_size")]
    vocab_size: Option<String>,
    #[arg(long = "visits_min")]
    visits_min: Option<String>,
    #[arg(long = "visits_max")]
    visits_max: Option<String>,
    #[arg(long = "codes_min")]
    codes_min: Option<String>,
    #[arg(long = "codes_max")]
    codes_max: Option<String>,
    #[arg(long = "chronic_persistence")]
    chronic_persistence: Option<String>,
    #[arg(long = "rules")]
    rules: Option<String>,
    #[arg(long = "event_noise")]
    event_noise: Option<String>,
    #[arg(long = "synth_seed")]
    synth_seed: Option<String>,
    #[arg(long = "train_ratio")]
    train_ratio: Option<String>,
    #[arg(long = "val_ratio")]
    val_ratio: Option<String>,
    #[arg(long = "test_ratio")]
    test_ratio: Option<String>,
    #[arg(long = "split_seed")]
    split_seed: Option<String>,
    #[arg(long = "d")]
    d: Option<String>,
    #[arg(long = "output_activation")]
    output_activation: Option<String>,
    #[arg(long = "eps_clip")]
    eps_clip: Option<String>,
    #[arg(long = "chronic_window")]
    chronic_window: Option<String>,
    #[arg(long = "lr")]
    lr: Option<String>,
    #[arg(long = "beta1")]
    beta1: Option<String>,
    #[arg(long = "beta2")]
    beta2: Option<String>,
    #[arg(long = "eps_adam")]
    eps_adam: Option<String>,
    #[arg(long = "epochs")]
    epochs: Option<String>,
    #[arg(long = "batch_size")]
    batch_size: Option<String>,
    #[arg(long = "seed")]
    seed: Option<String>,
    #[arg(long = "encoder")]
    encoder: Option<String>,
    #[arg(long = "hashing_dim")]
    hashing_dim: Option<String>,
    #[arg(long = "hashing_seed")]
    hashing_seed: Option<String>,
    #[arg(long = "remote_endpoint")]
    remote_endpoint: Option<String>,
    #[arg(long = "remote_timeout_ms")]
    remote_timeout_ms: Option<String>,
    #[arg(long = "remote_retries")]
    remote_retries: Option<String>,
    #[arg(long = "checkpoint")]
    checkpoint: Option<String>,
    #[arg(long = "patience")]
    patience: Option<String>,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(&'static str, &String)> {
        let mut kv: Vec<(&'static str, &String)> = Vec::new();
        macro_rules! push {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    kv.push((stringify!($field), v));
                })*
            };
        }
        push!(
            data, vocab, n_patients, vocab_size, visits_min, visits_max, codes_min, codes_max,
            chronic_persistence, rules, event_noise, synth_seed, train_ratio, val_ratio,
            test_ratio, split_seed, d, output_activation, eps_clip, chronic_window, lr, beta1,
            beta2, eps_adam, epochs, batch_size, seed, encoder, hashing_dim, hashing_seed,
            remote_endpoint, remote_timeout_ms, remote_retries, checkpoint, patience
        );
        kv
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Optional sidecar vocabulary for the dataset file.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// File holding one patient as a single JSON line.
    #[arg(long)]
    patient_file: PathBuf,
    /// Print only the top K codes (default: all).
    #[arg(long)]
    top: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    patient_id: String,
    #[arg(long, default_value_t = 1)]
    chronic_window: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DHCE_LOG", "error")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Inspect(args) => cmd_inspect(args),
    }
}

fn cmd_gen(args: GenArgs) -> Result<(), HarnessError> {
    let config = SynthConfig {
        n_patients: args.n_patients,
        vocab_size: args.vocab_size,
        visits_per_patient: (args.visits_min, args.visits_max),
        codes_per_visit: (args.codes_min, args.codes_max),
        chronic_persistence: args.chronic_persistence,
        rules: parse_rules(&args.rules)?,
        event_noise: args.event_noise,
        seed: args.seed,
    };
    let dataset = generate_synthetic(&config)?;
    let jsonl = to_jsonl(&dataset).map_err(|e| {
        dhce::ehr::DataError::InvalidConfig(format!("serialization failed: {e}"))
    })?;
    std::fs::write(&args.out, jsonl).map_err(|source| dhce::ehr::DataError::Io {
        path: args.out.display().to_string(),
        source,
    })?;
    println!(
        "wrote {} patients over {} codes to {}",
        dataset.patients.len(),
        dataset.vocabulary.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), HarnessError> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    for (key, value) in args.overrides() {
        cfg.apply_kv(key, value)?;
    }
    for set in &args.sets {
        let (key, value) = set.split_once('=').ok_or_else(|| {
            dhce::ehr::DataError::InvalidConfig(format!("--set {set:?}: expected key=value"))
        })?;
        cfg.apply_kv(key.trim(), value.trim())?;
    }
    let outcome = train(&cfg)?;
    for entry in &outcome.log {
        match entry.val_p10 {
            Some(p) => println!(
                "epoch {} train_loss={:.6} val_p10={:.4}",
                entry.epoch, entry.train_loss, p
            ),
            None => println!("epoch {} train_loss={:.6}", entry.epoch, entry.train_loss),
        }
    }
    println!("best_epoch {}", outcome.best_epoch);
    if let Some(path) = &cfg.checkpoint {
        println!("checkpoint {}", path.display());
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), HarnessError> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let (dataset, report) = load_dataset(&args.data, args.vocab.as_deref())?;
    if report.dropped_patients > 0 {
        eprintln!(
            "note: dropped {} patient(s) with fewer than 2 visits",
            report.dropped_patients
        );
    }
    let eval = evaluate(&checkpoint, &dataset)?;
    println!("patients {}", eval.n_patients);
    println!("predicted_visits {}", eval.n_predicted_visits);
    println!("precision@5 {:.6}", eval.p5);
    println!("precision@10 {:.6}", eval.p10);
    println!("precision@20 {:.6}", eval.p20);
    println!("mean_loss {:.6}", eval.mean_loss);
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), HarnessError> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let text =
        std::fs::read_to_string(&args.patient_file).map_err(|source| dhce::ehr::DataError::Io {
            path: args.patient_file.display().to_string(),
            source,
        })?;
    let line = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| dhce::ehr::DataError::InvalidConfig("patient file is empty".into()))?;
    let patient: PatientRecord = serde_json::from_str(line)
        .map_err(|source| dhce::ehr::DataError::MalformedLine { line: 1, source })?;
    let ranking = predict_next(&checkpoint, &patient)?;
    let limit = args.top.unwrap_or(ranking.len());
    for (code, score) in ranking.iter().take(limit) {
        println!("{code} {score:.9}");
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), HarnessError> {
    let summary = run_gradcheck(args.seed)?;
    for (name, report) in &summary.per_param {
        println!(
            "{name}: max_rel_error={:.3e} checked={} below_resolution={}",
            report.max_rel_error, report.checked, report.skipped_below_resolution
        );
    }
    println!(
        "overall: max_rel_error={:.3e} checked={} below_resolution={} tolerance={:.0e}",
        summary.max_rel_error,
        summary.checked,
        summary.skipped_below_resolution,
        summary.tolerance
    );
    if summary.passed() {
        println!("gradcheck PASS");
        Ok(())
    } else {
        println!("gradcheck FAIL");
        Err(HarnessError::Num(dhce::numkit::NumError::Invalid(format!(
            "gradient check failed: max relative error {} exceeds {}",
            summary.max_rel_error, summary.tolerance
        ))))
    }
}

fn cmd_inspect(args: InspectArgs) -> Result<(), HarnessError> {
    let (dataset, _) = load_dataset(&args.data, None)?;
    let patient = dataset
        .patients
        .iter()
        .find(|p| p.patient_id == args.patient_id)
        .ok_or_else(|| {
            dhce::ehr::DataError::InvalidConfig(format!(
                "patient {:?} not found in {}",
                args.patient_id,
                args.data.display()
            ))
        })?;
    print!(
        "{}",
        render_patient(patient, &dataset.vocabulary, args.chronic_window)?
    );
    Ok(())
}
