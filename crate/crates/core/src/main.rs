use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bicsan::attacks::{multiclass_attack, split_pools};
use bicsan::config::{DefenseKind, ExperimentConfig};
use bicsan::data::Dataset;
use bicsan::error::Result;
use bicsan::eval::{test_accuracy, train_linear, VictimKind};
use bicsan::io::{load_dataset, save_dataset, DataFormat};
use bicsan::mixtures::ModelSet;
use bicsan::pipeline::run_experiment;
use bicsan::sanitizer::sanitize;
use bicsan::synth::{gaussian_blobs, topic_documents};

#[derive(Parser)]
#[command(name = "bicsan", about = "BIC-based training-set sanitization toolkit")]
struct Cli {
    /// Worker threads for parallel sections (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic data.
    Synth(SynthArgs),
    /// Fit per-class mixtures and write the model as JSON.
    Fit(FitArgs),
    /// Split a dataset and inject a multiclass attack.
    Poison(PoisonArgs),
    /// Run the BIC defense on a dataset and write the sanitized set.
    Defend(DefendArgs),
    /// Train a victim on one dataset and report accuracy on another.
    Evaluate(EvaluateArgs),
    /// Full pipeline from a config file: split, attack, defend, retrain,
    /// report.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// `gaussian` or `topics`.
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    /// Feature dimension (gaussian) or vocabulary size (topics).
    #[arg(long, default_value_t = 5)]
    dim: usize,
    /// Distance between adjacent class means (gaussian only).
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    /// Tokens per document (topics only).
    #[arg(long, default_value_t = 100)]
    doc_len: usize,
    /// Probability mass a class puts on its own vocabulary block.
    #[arg(long, default_value_t = 0.7)]
    own_mass: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long, default_value_t = 25)]
    m_max: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PoisonArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long, default_value_t = 0.5)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.25)]
    test_frac: f64,
    #[arg(long)]
    attack_index: usize,
    #[arg(long)]
    budget: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DefendArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long, default_value_t = 25)]
    m_max: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long, default_value = "logistic")]
    victim: String,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides; flags win over file values.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    defense: Option<String>,
    #[arg(long)]
    attack_index: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn save_and_note(data: &Dataset, path: &PathBuf) -> Result<()> {
    save_dataset(data, path)?;
    println!("wrote {} samples to {}", data.len(), path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let data = match a.kind.as_str() {
                "gaussian" => {
                    gaussian_blobs(a.classes, a.per_class, a.dim, a.separation, a.seed)?
                }
                "topics" => topic_documents(
                    a.classes,
                    a.per_class,
                    a.dim,
                    a.doc_len,
                    a.own_mass,
                    a.seed,
                )?,
                other => {
                    return Err(bicsan::Error::Config(format!(
                        "unknown synth kind `{other}`"
                    )))
                }
            };
            save_and_note(&data, &a.out)
        }
        Command::Fit(a) => {
            let data = load_dataset(&a.data, DataFormat::parse(&a.format)?)?;
            let model = ModelSet::fit(&data, a.m_max, a.seed)?;
            std::fs::write(&a.out, serde_json::to_string_pretty(&model)?)?;
            for (c, mix) in &model.mixtures {
                println!("class {c}: {} components", mix.order());
            }
            Ok(())
        }
        Command::Poison(a) => {
            let full = load_dataset(&a.data, DataFormat::parse(&a.format)?)?;
            let (train, test, pools) = split_pools(&full, a.train_frac, a.test_frac, a.seed)?;
            let poisoned = multiclass_attack(&train, &pools, a.attack_index, a.budget, a.seed)?;
            std::fs::create_dir_all(&a.out_dir)?;
            let ext = if a.format == "csv" { "csv" } else { "txt" };
            save_and_note(&train, &a.out_dir.join(format!("train.{ext}")))?;
            save_and_note(&test, &a.out_dir.join(format!("test.{ext}")))?;
            save_and_note(
                &poisoned.dataset,
                &a.out_dir.join(format!("poisoned.{ext}")),
            )?;
            println!(
                "injected {} poisoned samples",
                poisoned
                    .dataset
                    .poison_truth
                    .as_ref()
                    .unwrap()
                    .iter()
                    .filter(|&&t| t)
                    .count()
            );
            Ok(())
        }
        Command::Defend(a) => {
            let data = load_dataset(&a.data, DataFormat::parse(&a.format)?)?;
            let model = ModelSet::fit(&data, a.m_max, a.seed)?;
            let (sanitized, outcome) = sanitize(&data, &model)?;
            std::fs::create_dir_all(&a.out_dir)?;
            let ext = if a.format == "csv" { "csv" } else { "txt" };
            save_and_note(&sanitized, &a.out_dir.join(format!("sanitized.{ext}")))?;
            println!(
                "verdict: {:?}; removed {} samples over {} steps",
                outcome.verdict,
                outcome.removed_sample_ids.len(),
                outcome.trace.len()
            );
            Ok(())
        }
        Command::Evaluate(a) => {
            let format = DataFormat::parse(&a.format)?;
            let train = load_dataset(&a.train, format)?;
            let test = load_dataset(&a.test, format)?;
            let model = train_linear(&train, VictimKind::parse(&a.victim)?, a.seed)?;
            println!("accuracy: {}", test_accuracy(&model, &test)?);
            Ok(())
        }
        Command::Run(a) => {
            let mut cfg = ExperimentConfig::from_file(&a.config)?;
            if let Some(seed) = a.seed {
                cfg.seed = seed;
            }
            if let Some(d) = &a.defense {
                cfg.defense = DefenseKind::parse(d)?;
            }
            if let Some(i) = a.attack_index {
                cfg.attack_index = i;
            }
            if let Some(dir) = a.out_dir {
                cfg.out_dir = dir;
            }
            let report = run_experiment(&cfg)?;
            println!(
                "clean {:.4} poisoned {:.4} sanitized {:.4}",
                report.accuracies.clean_baseline,
                report.accuracies.poisoned,
                report.accuracies.sanitized
            );
            if let Some(tpr) = report.tpr {
                println!("tpr {:.4} fpr {:.4}", tpr, report.fpr);
            } else {
                println!("tpr n/a fpr {:.4}", report.fpr);
            }
            println!("report: {}", cfg.out_dir.join("report.json").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Determinism does not depend on this; it only bounds parallelism.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
