//! Command-line surface: six subcommands over one JSON run configuration.
//!
//! Every command materializes the effective config next to its artifacts
//! and appends to `run.log`. Data outputs are byte-deterministic for a
//! fixed config and seed; wall-clock timestamps appear only in the log.
//!
//! Exit codes: 0 on success, 1 when the configuration or arguments are
//! rejected, 2 on runtime failure.

mod config;
mod logging;


pub use config::{DatasetConfig, PhantomConfig, RunConfig};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hsi::{generate_cohort, Label};
use crate::models::{gradcheck_variant, load_params, save_params, Variant};
use crate::preprocess::write_patches;
use crate::tensor::gradcheck::run_primitive_suite;
use crate::train_eval::{
    assemble_report, evaluate_fold, fold_data, make_folds, patients_of, prepare_cohort,
    report_csv, report_json, roc_csv, run_cv, train_fold, CvReport, FoldSplit, RegionSet,
};

#[derive(Debug, Parser)]
#[command(
    name = "hsinet",
    version,
    about = "Hyperspectral tissue classification: phantoms, MNF preprocessing, Densenet variants, cross-validated evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the config's `output`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Reseed every stage (phantom, model init, training, folds).
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured synthetic cohort to the dataset path.
    Generate,
    /// Run the preprocessing chain and cache network-ready patches.
    Preprocess,
    /// Train one cross-validation fold and save its checkpoint.
    Train {
        /// Fold index within the configured split.
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Evaluate a checkpoint on one fold's held-out test patients.
    Evaluate {
        /// Checkpoint written by `train`.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Fold whose test patients to evaluate; must match the checkpoint.
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Cross-validate the configured model over the whole cohort.
    Cv,
    /// Finite-difference checks for every primitive and model variant.
    Gradcheck,
}

/// Execute a parsed invocation and map the outcome to an exit code.
pub fn run(cli: &Cli) -> u8 {
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            logging::error(&e.to_string());
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<u8> {
    logging::detach();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // Ignore rebuild failures: the pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply(cli.out.as_deref(), cli.seed);
    cfg.validate()?;

    fs::create_dir_all(&cfg.output).map_err(|e| Error::io(cfg.output.clone(), e))?;
    logging::init(&cfg.output.join("run.log"))?;
    write_text(&cfg.output.join("effective-config.json"), &cfg.effective_json()?)?;

    match &cli.command {
        Command::Generate => cmd_generate(&cfg)?,
        Command::Preprocess => cmd_preprocess(&cfg)?,
        Command::Train { fold } => cmd_train(&cfg, *fold)?,
        Command::Evaluate { checkpoint, fold } => cmd_evaluate(&cfg, checkpoint, *fold)?,
        Command::Cv => cmd_cv(&cfg)?,
        Command::Gradcheck => return cmd_gradcheck(&cfg),
    }
    Ok(0)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::json(path.to_path_buf(), e))?;
    text.push('\n');
    write_text(path, &text)
}

/// Prepare the cohort and compute the fold split both `train` and
/// `evaluate` address folds within.
fn prepared_cohort(cfg: &RunConfig) -> Result<(Vec<RegionSet>, Vec<FoldSplit>)> {
    let sets = prepare_cohort(&cfg.manifest_path(), &cfg.preprocess, &cfg.model)?;
    let patients = patients_of(&sets);
    let splits = make_folds(&patients, cfg.cv.folds, cfg.cv.seed)?;
    Ok((sets, splits))
}

fn pick_fold(splits: &[FoldSplit], fold: usize, folds: usize) -> Result<&FoldSplit> {
    splits.get(fold).ok_or_else(|| {
        Error::Config(format!("--fold {fold} is out of range for cv.folds = {folds}"))
    })
}

fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    let Some(phantom) = &cfg.dataset.phantom else {
        return Err(Error::Config(
            "generate needs dataset.phantom, but the config sets it to null".into(),
        ));
    };
    let entries = generate_cohort(
        &cfg.dataset.path,
        phantom.patients,
        phantom.both_fraction,
        &phantom.spec,
    )?;
    log::info!(
        "generate: wrote {} patients ({} regions) to {}",
        entries.len(),
        entries.iter().map(|e| e.regions.len()).sum::<usize>(),
        cfg.dataset.path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct CacheEntry {
    patient_id: String,
    region_id: String,
    label: Label,
    eval_file: String,
    train_file: String,
    eval_crops: usize,
    train_sources: usize,
    gated_eval: usize,
    gated_train: usize,
}

fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    let sets = prepare_cohort(&cfg.manifest_path(), &cfg.preprocess, &cfg.model)?;
    let cache = cfg.output.join("cache");
    fs::create_dir_all(&cache).map_err(|e| Error::io(cache.clone(), e))?;

    let mut index = Vec::with_capacity(sets.len());
    for (i, set) in sets.iter().enumerate() {
        let eval_file = format!("eval-{i:03}.hsip");
        let train_file = format!("train-{i:03}.hsip");
        write_patches(cache.join(&eval_file), &set.eval)?;
        write_patches(cache.join(&train_file), &set.train)?;
        index.push(CacheEntry {
            patient_id: set.patient_id.clone(),
            region_id: set.region_id.clone(),
            label: set.label,
            eval_file,
            train_file,
            eval_crops: set.eval.len(),
            train_sources: set.train.len(),
            gated_eval: set.gated.0,
            gated_train: set.gated.1,
        });
    }
    write_json(&cache.join("index.json"), &index)?;
    log::info!(
        "preprocess: cached {} region sets under {}",
        index.len(),
        cache.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, fold: usize) -> Result<()> {
    let (sets, splits) = prepared_cohort(cfg)?;
    let split = pick_fold(&splits, fold, cfg.cv.folds)?;
    let data = fold_data(&sets, split);
    let trained = train_fold(fold, &cfg.model, &cfg.train, &data)?;

    let checkpoint = cfg.output.join(format!("checkpoint-fold{fold}.hsim"));
    save_params(&checkpoint, &trained.params)?;
    write_json(
        &cfg.output.join(format!("trace-fold{fold}.json")),
        &trained.trace,
    )?;
    log::info!(
        "train: fold {fold} finished at loss {:.4}; checkpoint {}",
        trained.trace.losses.last().copied().unwrap_or(f64::NAN),
        checkpoint.display()
    );
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path, fold: usize) -> Result<()> {
    let params = load_params(checkpoint)?;
    if params.spec() != &cfg.model {
        return Err(Error::Checkpoint(format!(
            "{} was trained with a different model spec than config.model ({} vs {})",
            checkpoint.display(),
            params.spec().variant,
            cfg.model.variant
        )));
    }
    let (sets, splits) = prepared_cohort(cfg)?;
    let split = pick_fold(&splits, fold, cfg.cv.folds)?;
    let fold_report = evaluate_fold(&params, &sets, split)?;
    log::info!(
        "evaluate: fold {fold}, {} regions evaluated, accuracy {:.4}",
        fold_report.evaluated_regions,
        fold_report.accuracy
    );
    let report = assemble_report(
        cfg.model.variant,
        patients_of(&sets).len(),
        cfg.cv.folds,
        vec![fold_report],
        Vec::new(),
    );
    write_report_files(&cfg.output, &report)
}

fn cmd_cv(cfg: &RunConfig) -> Result<()> {
    let report = run_cv(
        &cfg.manifest_path(),
        &cfg.preprocess,
        &cfg.model,
        &cfg.train,
        &cfg.cv,
    )?;
    write_report_files(&cfg.output, &report)?;
    let accuracy = report
        .accuracy
        .map(|m| format!("{:.4}±{:.4}", m.mean, m.std))
        .unwrap_or_else(|| "undefined".into());
    log::info!(
        "cv: {} folds evaluated, {} rejected, accuracy {accuracy}",
        report.folds.len(),
        report.rejected.len()
    );
    Ok(())
}

fn write_report_files(out: &Path, report: &CvReport) -> Result<()> {
    write_text(&out.join("report.json"), &report_json(report)?)?;
    write_text(&out.join("report.csv"), &report_csv(report))?;
    write_text(&out.join("roc.csv"), &roc_csv(report))
}

fn cmd_gradcheck(cfg: &RunConfig) -> Result<u8> {
    let seed = cfg.model.seed;
    let mut reports = run_primitive_suite(seed)?;
    for variant in [Variant::Densenet2d, Variant::Densenet2dMs, Variant::Densenet3d] {
        reports.push(gradcheck_variant(variant, seed)?);
    }

    let mut table = format!(
        "{:<34} {:>12} {:>8}  result\n",
        "check", "max rel err", "points"
    );
    for r in &reports {
        let _ = writeln!(
            table,
            "{:<34} {:>12.3e} {:>8}  {}",
            r.name,
            r.max_rel_error,
            r.points,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    print!("{table}");
    write_json(&cfg.output.join("gradcheck.json"), &reports)?;

    let failed = reports.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        log::error!("gradcheck: {failed} of {} checks failed", reports.len());
        return Ok(2);
    }
    log::info!("gradcheck: all {} checks passed", reports.len());
    Ok(0)
}
