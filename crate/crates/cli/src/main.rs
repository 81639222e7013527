use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use glumarker::config::{DataSource, PipelineConfig};
use glumarker::dataset::save_csv;
use glumarker::importance::{emit_importance_artifacts, PerturbationMode};
use glumarker::model::{Classifier, Model, ModelKind};
use glumarker::pipeline::{
    evaluate_models, importance_for, load_cohort, model_kinds, model_path, prepare, run_all,
    train_models, write_eval_artifacts, write_featurize_artifacts, write_models,
};
use glumarker::types::Cohort;
use glumarker::Error;

const LOG_ENV: &str = "GLUMARKER_LOG";

/// Next-day glycemic control prediction from digital biomarkers.
///
/// Every stage reads one TOML config; the flags below override its keys.
#[derive(Parser, Debug)]
#[command(name = "glumarker", version)]
struct Cli {
    /// Pipeline config file. Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort and write it as day-level CSV.
    Generate {
        /// Destination file [default: <out>/data.csv].
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Validate real data and write it in the day-level schema to <out>/data.csv.
    Ingest(IngestArgs),
    /// Build examples, split by patient and write feature tables.
    Featurize,
    /// Train GluMarker and the enabled baselines; write models and histories.
    Train,
    /// Evaluate saved models on the test split.
    Evaluate {
        /// Model files [default: every configured model under <out>/models].
        models: Vec<PathBuf>,
    },
    /// Rank digital biomarkers by perturbation importance.
    Importance(ImportanceArgs),
    /// Run every stage and write a manifest of the output directory.
    RunAll,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Day-level CSV.
    #[arg(long, conflicts_with_all = ["readings", "doses"])]
    csv: Option<PathBuf>,
    /// Raw glucose readings CSV.
    #[arg(long)]
    readings: Option<PathBuf>,
    /// Day-level doses CSV joined with the readings.
    #[arg(long, requires = "readings")]
    doses: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ImportanceArgs {
    /// Trained GluMarker model [default: <out>/models/glumarker.gmk].
    model: Option<PathBuf>,
    /// Rows per class in the top-k tables.
    #[arg(long)]
    k: Option<usize>,
    /// Zero the sibling bins of the perturbed position too.
    #[arg(long)]
    exclusive: bool,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Validation(_) => 2,
        Error::Data(_) => 3,
        Error::Training(_) => 4,
        Error::Io { .. } | Error::Format(_) => 5,
    }
}

fn load_config(cli: &Cli) -> glumarker::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    match &cli.command {
        Command::Generate { .. } => cfg.data = DataSource::Synthetic,
        Command::Ingest(args) => {
            if let Some(path) = &args.csv {
                cfg.data = DataSource::Csv { path: path.clone() };
            } else if let Some(readings) = &args.readings {
                cfg.data = DataSource::Readings {
                    readings: readings.clone(),
                    doses: args.doses.clone(),
                };
            }
        }
        Command::Importance(args) => {
            if let Some(k) = args.k {
                cfg.importance.k = k;
            }
            if args.exclusive {
                cfg.importance.mode = PerturbationMode::Exclusive;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn describe(cohort: &Cohort) -> String {
    let days: usize = cohort.patients.iter().map(|p| p.days.len()).sum();
    format!("{days} rows, {} patients", cohort.patients.len())
}

fn write_cohort(cohort: &Cohort, path: &Path) -> glumarker::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    save_csv(cohort, path)?;
    println!("wrote {} ({})", path.display(), describe(cohort));
    Ok(())
}

fn load_models(paths: &[PathBuf], dims: (usize, usize)) -> glumarker::Result<Vec<(String, Model)>> {
    paths
        .iter()
        .map(|p| {
            let model = Model::load_expecting(p, dims)?;
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| model.kind().name().to_string());
            Ok((name, model))
        })
        .collect()
}

fn run(cli: &Cli) -> glumarker::Result<()> {
    let cfg = load_config(cli)?;
    let out = cfg.out_dir.clone();
    match &cli.command {
        Command::Generate { file } => {
            let cohort = load_cohort(&cfg)?;
            write_cohort(
                &cohort,
                &file.clone().unwrap_or_else(|| out.join("data.csv")),
            )?;
        }
        Command::Ingest(_) => {
            let cohort = load_cohort(&cfg)?;
            write_cohort(&cohort, &out.join("data.csv"))?;
        }
        Command::Featurize => {
            let prepared = prepare(&cfg)?;
            let files = write_featurize_artifacts(&prepared, &out)?;
            let s = &prepared.split;
            println!(
                "examples: {} train / {} validation / {} test; wrote {} files to {}",
                s.train.len(),
                s.validation.len(),
                s.test.len(),
                files.len(),
                out.display()
            );
        }
        Command::Train => {
            let prepared = prepare(&cfg)?;
            write_featurize_artifacts(&prepared, &out)?;
            let models = train_models(&cfg, &prepared.split)?;
            for path in write_models(&models, &out)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Evaluate { models } => {
            let prepared = prepare(&cfg)?;
            let paths: Vec<PathBuf> = if models.is_empty() {
                model_kinds(&cfg)
                    .into_iter()
                    .map(|k| model_path(&out, k))
                    .collect()
            } else {
                models.clone()
            };
            let loaded = load_models(&paths, prepared.input_dims())?;
            let reports = evaluate_models(
                loaded
                    .iter()
                    .map(|(n, m)| (n.clone(), m as &dyn Classifier)),
                &prepared.split.test,
            )?;
            write_eval_artifacts(&reports, &out)?;
            for (name, r) in &reports {
                println!(
                    "{name}: macro AUC {:.4}, accuracy {:.4}",
                    r.macro_auc, r.accuracy
                );
            }
        }
        Command::Importance(args) => {
            let prepared = prepare(&cfg)?;
            let path = args
                .model
                .clone()
                .unwrap_or_else(|| model_path(&out, ModelKind::GluMarker));
            let [(name, model)]: [(String, Model); 1] =
                load_models(&[path], prepared.input_dims())?
                    .try_into()
                    .expect("one path, one model");
            let report = importance_for(&cfg, &prepared, &model, &name)?;
            let dir = out.join("importance");
            emit_importance_artifacts(&report, cfg.importance.k, &dir)?;
            println!(
                "ranked {} biomarkers on {} examples ({} mode); wrote {}",
                report.entries.len(),
                report.example_count,
                report.mode,
                dir.display()
            );
        }
        Command::RunAll => {
            let summary = run_all(&cfg)?;
            for (name, r) in &summary.reports {
                println!("{name}: macro AUC {:.4}", r.macro_auc);
            }
            println!(
                "wrote {} files to {}",
                summary.files.len(),
                summary.out_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
