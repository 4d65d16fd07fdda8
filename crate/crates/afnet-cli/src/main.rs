//! Command-line front end. Subcommands cover the full pipeline: `gen`
//! synthesizes the dataset, `train` runs the cross-entropy stage,
//! `weigh` scores instance confidence from a checkpoint, `train2` runs
//! both stages, `eval` writes a report from the held-out split, `report`
//! exports tables and plots, and `selftest` runs the numeric check
//! battery. Every artifact-producing run writes its resolved config next
//! to its outputs; re-running single-threaded from that snapshot
//! reproduces the artifacts byte for byte.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use afnet::diagnostics;
use afnet::eval::{evaluate, export_report, read_report_json, write_report_json, EvalReport};
use afnet::model::{load_checkpoint, save_checkpoint, ModelConfig, NetParams};
use afnet::signal::{generate_dataset, read_dataset, split_dataset, FrameRecord};
use afnet::train::{
    compute_instance_weights, train_stage, two_stage_train, write_weight_table, EpochStats,
    ProgressFn, STAGE1_CHECKPOINT, STAGE1_HISTORY, STAGE2_CHECKPOINT, WEIGHTS_FILE,
};
use afnet::{Error, Result};

use config::RunConfig;

const EXIT_HELP: &str = "\
Exit codes:
  0 success        2 usage          3 config parse
  4 file access    5 validation     6 corrupt artifact
  7 numeric failure                 1 selftest found failures

Relative paths in the config resolve against AFNET_OUT_ROOT when set,
the current directory otherwise. Flags override config-file values.";

#[derive(Parser)]
#[command(
    name = "afnet",
    version,
    about = "Radio modulation classifier: dataset synthesis, two-stage training, evaluation",
    after_help = EXIT_HELP
)]
struct Cli {
    /// JSON run configuration (every subcommand except selftest needs it)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker thread count; artifacts never depend on it
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(flatten)]
    overrides: config::Overrides,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the dataset and its manifest
    Gen,
    /// Stage-1 training (plain cross entropy)
    Train,
    /// Compute the per-instance confidence weight table from a checkpoint
    Weigh {
        /// Checkpoint to score with (default: stage-1 in train_dir)
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Full two-stage pipeline: train, weigh, retrain
    Train2,
    /// Evaluate a checkpoint on the held-out split and write the report
    Eval {
        /// Which stage's checkpoint to evaluate
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// Explicit checkpoint path (overrides --stage)
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Export tables and plots from a written report
    Report {
        /// Which stage's report to export
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
    },
    /// Run the numeric self-check battery
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // a second build_global in-process is harmless for the CLI: the
        // first wins and results do not depend on the pool size anyway
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } => 3,
        Error::Io { .. } => 4,
        Error::InvalidArgument(_) | Error::Shape(_) => 5,
        Error::BadMagic { .. } | Error::UnsupportedVersion { .. } | Error::Corrupt { .. } => 6,
        Error::NonFinite(_) => 7,
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if matches!(cli.cmd, Cmd::Selftest) {
        return selftest();
    }
    let path = cli.config.ok_or_else(|| {
        Error::parse(
            "config".to_string(),
            "this subcommand needs --config <FILE>".to_string(),
        )
    })?;
    let mut cfg = RunConfig::load(&path)?;
    cli.overrides.apply(&mut cfg);
    cfg.resolve_paths();
    cfg.validate()?;

    match cli.cmd {
        Cmd::Gen => gen(&cfg),
        Cmd::Train => train(&cfg),
        Cmd::Weigh { checkpoint } => weigh(&cfg, checkpoint),
        Cmd::Train2 => train2(&cfg),
        Cmd::Eval { stage, checkpoint } => eval(&cfg, stage, checkpoint),
        Cmd::Report { stage } => report(&cfg, stage),
        Cmd::Selftest => unreachable!("handled above"),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn print_epoch(stage: u8, e: &EpochStats) {
    eprintln!(
        "[stage {stage}] epoch {:>3}  train {:.6}  monitor {:.6}  acc {:.4}",
        e.epoch, e.train_loss, e.val_loss, e.val_acc
    );
}

fn gen(cfg: &RunConfig) -> Result<()> {
    if let Some(parent) = cfg.paths.dataset.parent() {
        create_dir(parent)?;
    }
    generate_dataset(&cfg.dataset, &cfg.paths.dataset, &cfg.paths.manifest())?;
    let snap_dir = cfg
        .paths
        .dataset
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    cfg.write_snapshot(&snap_dir, "gen_config.json")?;
    println!(
        "wrote {} frames ({} schemes x {} SNRs x {}) to {}",
        cfg.dataset.total_frames(),
        cfg.dataset.schemes.len(),
        cfg.dataset.snrs_db.len(),
        cfg.dataset.frames_per_cell,
        cfg.paths.dataset.display()
    );
    Ok(())
}

/// Training and held-out records, in that order.
fn load_split(cfg: &RunConfig) -> Result<(Vec<FrameRecord>, Vec<FrameRecord>)> {
    let records = read_dataset(&cfg.paths.dataset)?;
    split_dataset(&records, cfg.split_ratio, cfg.split_seed)
}

fn check_model_match(found: &ModelConfig, expected: &ModelConfig, ck: &Path) -> Result<()> {
    if found != expected {
        return Err(Error::invalid(format!(
            "checkpoint {} was trained with a different model config",
            ck.display()
        )));
    }
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    let (train_records, _) = load_split(cfg)?;
    let init = NetParams::<f32>::init(&cfg.model, cfg.train.init_seed)?;
    let mut obs = |e: &EpochStats| {
        print_epoch(1, e);
        true
    };
    let out = train_stage(
        &init,
        &cfg.model,
        &cfg.train,
        &train_records,
        None,
        Some(&mut obs),
    )?;
    create_dir(&cfg.paths.train_dir)?;
    save_checkpoint(
        &cfg.paths.train_dir.join(STAGE1_CHECKPOINT),
        &cfg.model,
        &out.params,
    )?;
    out.history
        .write_csv(&cfg.paths.train_dir.join(STAGE1_HISTORY))?;
    cfg.write_snapshot(&cfg.paths.train_dir, "train_config.json")?;
    println!(
        "stage 1 done: best epoch {} of {}, checkpoint {}",
        out.history.best_epoch,
        out.history.epochs.len(),
        cfg.paths.train_dir.join(STAGE1_CHECKPOINT).display()
    );
    Ok(())
}

fn weigh(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Result<()> {
    let ck = checkpoint.unwrap_or_else(|| cfg.paths.train_dir.join(STAGE1_CHECKPOINT));
    let (mcfg, params) = load_checkpoint(&ck)?;
    check_model_match(&mcfg, &cfg.model, &ck)?;
    let (train_records, _) = load_split(cfg)?;
    let table = compute_instance_weights(&params, &mcfg, &train_records, cfg.train.topk)?;
    create_dir(&cfg.paths.train_dir)?;
    write_weight_table(&cfg.paths.train_dir.join(WEIGHTS_FILE), &table)?;
    cfg.write_snapshot(&cfg.paths.train_dir, "weigh_config.json")?;
    let mean = table.weights.iter().sum::<f64>() / table.len().max(1) as f64;
    println!(
        "wrote {} weights (mean {:.4}) for checkpoint {}",
        table.len(),
        mean,
        &table.checkpoint_hash[..12]
    );
    Ok(())
}

fn train2(cfg: &RunConfig) -> Result<()> {
    let (train_records, _) = load_split(cfg)?;
    let mut progress = |stage: u8, e: &EpochStats| print_epoch(stage, e);
    let outcome = two_stage_train(
        &train_records,
        &cfg.model,
        &cfg.train,
        &cfg.paths.train_dir,
        Some(&mut progress as &mut ProgressFn),
    )?;
    cfg.write_snapshot(&cfg.paths.train_dir, "train2_config.json")?;
    println!(
        "two-stage done: stage 1 best epoch {}, stage 2 best epoch {}, artifacts in {}",
        outcome.stage1.history.best_epoch,
        outcome.stage2.history.best_epoch,
        cfg.paths.train_dir.display()
    );
    Ok(())
}

fn report_name(stage: u8) -> String {
    format!("report_stage{stage}.json")
}

fn print_report_summary(report: &EvalReport) {
    println!(
        "overall {:.4}  average {:.4}  max {:.4}",
        report.overall_accuracy, report.average_accuracy, report.max_accuracy
    );
    let lo = report.snrs.first().copied().unwrap_or(0);
    let hi = report.snrs.last().copied().unwrap_or(0);
    let conf_lo = report.mean_conf_by_snr.first().copied().unwrap_or(0.0);
    let conf_hi = report.mean_conf_by_snr.last().copied().unwrap_or(0.0);
    println!("mean confidence {conf_lo:.4} at {lo} dB, {conf_hi:.4} at {hi} dB");
}

fn eval(cfg: &RunConfig, stage: u8, checkpoint: Option<PathBuf>) -> Result<()> {
    let default_name = if stage == 1 {
        STAGE1_CHECKPOINT
    } else {
        STAGE2_CHECKPOINT
    };
    let ck = checkpoint.unwrap_or_else(|| cfg.paths.train_dir.join(default_name));
    let (mcfg, params) = load_checkpoint(&ck)?;
    check_model_match(&mcfg, &cfg.model, &ck)?;
    let (_, test_records) = load_split(cfg)?;
    let report = evaluate(
        &params,
        &cfg.model,
        &cfg.dataset.schemes,
        &test_records,
        cfg.train.topk,
    )?;
    create_dir(&cfg.paths.report_dir)?;
    let out = cfg.paths.report_dir.join(report_name(stage));
    write_report_json(&out, &report)?;
    cfg.write_snapshot(
        &cfg.paths.report_dir,
        &format!("eval_stage{stage}_config.json"),
    )?;
    println!("report written to {}", out.display());
    print_report_summary(&report);
    Ok(())
}

fn report(cfg: &RunConfig, stage: u8) -> Result<()> {
    let report = read_report_json(&cfg.paths.report_dir.join(report_name(stage)))?;
    let out_dir = cfg.paths.report_dir.join(format!("stage{stage}"));
    let files = export_report(&report, &out_dir)?;
    cfg.write_snapshot(&out_dir, &format!("report_stage{stage}_config.json"))?;
    println!("exported {} files to {}", files.len(), out_dir.display());
    print_report_summary(&report);
    Ok(())
}

fn selftest() -> Result<ExitCode> {
    let outcomes = diagnostics::run_all();
    for o in &outcomes {
        println!(
            "[{}] {}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
    }
    let ok = diagnostics::all_passed(&outcomes);
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if ok {
        println!("selftest: all {} checks passed", outcomes.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("selftest: {failed} of {} checks FAILED", outcomes.len());
        Ok(ExitCode::from(1))
    }
}
