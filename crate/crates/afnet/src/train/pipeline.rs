//! The two-stage pipeline: a plain cross-entropy stage scores every
//! training instance's confidence, then a second stage retrains against
//! the confidence-weighted loss. All artifacts (both checkpoints, the
//! weight table, both histories) are persisted; on failure the partial
//! outputs are removed.

use std::fs;
use std::path::{Path, PathBuf};

use super::stage::{train_stage, StageResult};
use super::weights::{compute_instance_weights, write_weight_table, WeightTable};
use super::{EpochStats, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, ModelConfig, NetParams};
use crate::signal::FrameRecord;

/// Decorrelates the second stage's epoch shuffles from the first's.
const STAGE2_SHUFFLE_SALT: u64 = 0x7374_6732; // "stg2"

pub const STAGE1_CHECKPOINT: &str = "stage1.afn";
pub const STAGE2_CHECKPOINT: &str = "stage2.afn";
pub const WEIGHTS_FILE: &str = "weights.txt";
pub const STAGE1_HISTORY: &str = "stage1_history.csv";
pub const STAGE2_HISTORY: &str = "stage2_history.csv";

#[derive(Clone, Debug)]
pub struct TwoStageOutcome {
    pub stage1: StageResult,
    pub table: WeightTable,
    pub stage2: StageResult,
}

/// Per-epoch progress callback; the first argument is the stage number.
pub type ProgressFn<'a> = dyn FnMut(u8, &EpochStats) + 'a;

/// Runs both stages on `records` (the training split), persisting
/// artifacts under `out_dir`:
/// `stage1.afn`, `stage1_history.csv`, `weights.txt`, `stage2.afn`,
/// `stage2_history.csv`.
///
/// Stage 1 trains from a fresh initialization with cross entropy. The
/// weight table is computed once from its best checkpoint and quantized
/// to the file precision, so the persisted table drives a bit-identical
/// second stage. Stage 2 trains from a second fresh initialization
/// (`stage2_init_seed`) unless `stage2_reinit` is false, in which case it
/// fine-tunes the stage-1 parameters. `progress`, when given, sees every
/// epoch tagged with its stage number.
pub fn two_stage_train(
    records: &[FrameRecord],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    out_dir: &Path,
    mut progress: Option<&mut ProgressFn<'_>>,
) -> Result<TwoStageOutcome> {
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating output dir {}", out_dir.display()), e))?;
    let mut created: Vec<PathBuf> = Vec::new();
    let result = run(records, mcfg, tcfg, out_dir, &mut created, &mut progress);
    if result.is_err() {
        for p in created {
            let _ = fs::remove_file(p);
        }
    }
    result
}

fn run(
    records: &[FrameRecord],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    out_dir: &Path,
    created: &mut Vec<PathBuf>,
    progress: &mut Option<&mut ProgressFn<'_>>,
) -> Result<TwoStageOutcome> {
    tcfg.validate()?;

    let init1 = NetParams::<f32>::init(mcfg, tcfg.init_seed)?;
    let stage1 = {
        let mut obs = |s: &EpochStats| {
            if let Some(p) = progress.as_mut() {
                p(1, s);
            }
            true
        };
        train_stage(&init1, mcfg, tcfg, records, None, Some(&mut obs))?
    };
    let path = out_dir.join(STAGE1_CHECKPOINT);
    save_checkpoint(&path, mcfg, &stage1.params)?;
    created.push(path);
    let path = out_dir.join(STAGE1_HISTORY);
    stage1.history.write_csv(&path)?;
    created.push(path);

    let table = compute_instance_weights(&stage1.params, mcfg, records, tcfg.topk)?;
    let path = out_dir.join(WEIGHTS_FILE);
    write_weight_table(&path, &table)?;
    created.push(path);

    let init2 = if tcfg.stage2_reinit {
        NetParams::<f32>::init(mcfg, tcfg.stage2_init_seed)?
    } else {
        stage1.params.clone()
    };
    let tcfg2 = TrainConfig {
        shuffle_seed: tcfg.shuffle_seed ^ STAGE2_SHUFFLE_SALT,
        max_epochs: tcfg.stage2_max_epochs.unwrap_or(tcfg.max_epochs),
        ..tcfg.clone()
    };
    let stage2 = {
        let mut obs = |s: &EpochStats| {
            if let Some(p) = progress.as_mut() {
                p(2, s);
            }
            true
        };
        train_stage(&init2, mcfg, &tcfg2, records, Some(&table), Some(&mut obs))?
    };
    let path = out_dir.join(STAGE2_CHECKPOINT);
    save_checkpoint(&path, mcfg, &stage2.params)?;
    created.push(path);
    let path = out_dir.join(STAGE2_HISTORY);
    stage2.history.write_csv(&path)?;
    created.push(path);

    Ok(TwoStageOutcome {
        stage1,
        table,
        stage2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_checkpoint;
    use crate::signal::{generate_records, DatasetManifest, ModulationScheme};
    use crate::train::read_weight_table;
    use tempfile::tempdir;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            channels: 8,
            compression: 4,
            units: 2,
            pool_after: vec![1, 2],
            groups: 2,
            classes: 2,
            frame_len: 16,
        }
    }

    fn tiny_records() -> Vec<FrameRecord> {
        let manifest = DatasetManifest {
            schemes: vec![ModulationScheme::Bpsk, ModulationScheme::Gfsk],
            snrs_db: vec![8],
            frames_per_cell: 8,
            frame_len: 16,
            samples_per_symbol: 8,
            master_seed: 5,
            format_version: 1,
            silent_bursts: false,
        };
        generate_records(&manifest).unwrap()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            max_epochs: 2,
            batch_size: 8,
            val_fraction: 0.0,
            topk: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn pipeline_persists_all_artifacts() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("run");
        let records = tiny_records();
        let outcome =
            two_stage_train(&records, &tiny_model(), &quick_config(), &out, None).unwrap();

        for name in [
            STAGE1_CHECKPOINT,
            STAGE1_HISTORY,
            WEIGHTS_FILE,
            STAGE2_CHECKPOINT,
            STAGE2_HISTORY,
        ] {
            assert!(out.join(name).exists(), "missing {name}");
        }
        assert_eq!(outcome.table.len(), records.len());
        assert_eq!(outcome.stage1.history.epochs.len(), 2);
        assert_eq!(outcome.stage2.history.epochs.len(), 2);

        // persisted table is the in-memory table, exactly
        let reloaded = read_weight_table(&out.join(WEIGHTS_FILE)).unwrap();
        assert_eq!(reloaded, outcome.table);
        // persisted checkpoints match the returned parameters
        let (_, p1) = load_checkpoint(&out.join(STAGE1_CHECKPOINT)).unwrap();
        assert_eq!(p1, outcome.stage1.params);
        let (_, p2) = load_checkpoint(&out.join(STAGE2_CHECKPOINT)).unwrap();
        assert_eq!(p2, outcome.stage2.params);
    }

    #[test]
    fn persisted_table_drives_identical_stage2() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("run");
        let records = tiny_records();
        let mcfg = tiny_model();
        let tcfg = quick_config();
        let outcome = two_stage_train(&records, &mcfg, &tcfg, &out, None).unwrap();

        let table = read_weight_table(&out.join(WEIGHTS_FILE)).unwrap();
        let init2 = NetParams::<f32>::init(&mcfg, tcfg.stage2_init_seed).unwrap();
        let tcfg2 = TrainConfig {
            shuffle_seed: tcfg.shuffle_seed ^ STAGE2_SHUFFLE_SALT,
            max_epochs: tcfg.stage2_max_epochs.unwrap_or(tcfg.max_epochs),
            ..tcfg
        };
        let rerun = train_stage(&init2, &mcfg, &tcfg2, &records, Some(&table), None).unwrap();
        assert_eq!(rerun.params, outcome.stage2.params);
        assert_eq!(rerun.history, outcome.stage2.history);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let dir = tempdir().unwrap();
        let records = tiny_records();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        two_stage_train(&records, &tiny_model(), &quick_config(), &a, None).unwrap();
        two_stage_train(&records, &tiny_model(), &quick_config(), &b, None).unwrap();
        for name in [
            STAGE1_CHECKPOINT,
            STAGE1_HISTORY,
            WEIGHTS_FILE,
            STAGE2_CHECKPOINT,
            STAGE2_HISTORY,
        ] {
            let fa = std::fs::read(a.join(name)).unwrap();
            let fb = std::fs::read(b.join(name)).unwrap();
            assert_eq!(fa, fb, "{name} differs between reruns");
        }
    }

    #[test]
    fn stage2_epoch_budget_is_honored() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("run");
        let records = tiny_records();
        let tcfg = TrainConfig {
            max_epochs: 1,
            stage2_max_epochs: Some(3),
            ..quick_config()
        };
        let outcome = two_stage_train(&records, &tiny_model(), &tcfg, &out, None).unwrap();
        assert_eq!(outcome.stage1.history.epochs.len(), 1);
        assert_eq!(outcome.stage2.history.epochs.len(), 3);
    }

    #[test]
    fn failure_removes_partial_artifacts() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("run");
        let records = tiny_records();
        // k larger than the class count: stage 1 trains and persists, the
        // weight computation then fails
        let tcfg = TrainConfig {
            topk: 5,
            ..quick_config()
        };
        let err = two_stage_train(&records, &tiny_model(), &tcfg, &out, None);
        assert!(err.is_err());
        assert!(!out.join(STAGE1_CHECKPOINT).exists());
        assert!(!out.join(STAGE1_HISTORY).exists());
        assert!(!out.join(WEIGHTS_FILE).exists());
    }

    #[test]
    fn fine_tune_mode_starts_from_stage1() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("run");
        let records = tiny_records();
        let mcfg = tiny_model();
        // zero-ish learning rate in a fine-tune run: stage 2 stays within
        // optimizer noise (~1e-30) of stage 1, where a fresh
        // initialization would sit O(0.1) away
        let tcfg = TrainConfig {
            stage2_reinit: false,
            learning_rate: 1e-30,
            ..quick_config()
        };
        let outcome = two_stage_train(&records, &mcfg, &tcfg, &out, None).unwrap();
        let moved = crate::numeric::params::flatten(&outcome.stage2.params)
            .iter()
            .zip(crate::numeric::params::flatten(&outcome.stage1.params))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(moved < 1e-20, "stage 2 drifted {moved} from stage 1");
    }
}
