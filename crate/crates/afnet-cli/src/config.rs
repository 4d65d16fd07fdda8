//! Run configuration: one JSON document covering the dataset recipe, the
//! model, the training schedule, and where artifacts go. Flags override
//! file values; every artifact-producing subcommand writes the fully
//! resolved result next to its outputs, and that snapshot is itself a
//! valid `--config` input that reproduces the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use afnet::model::ModelConfig;
use afnet::signal::DatasetManifest;
use afnet::train::TrainConfig;
use afnet::{Error, Result};

/// Relative paths in the config resolve against this variable when set
/// (current directory otherwise).
pub const OUT_ROOT_ENV: &str = "AFNET_OUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Dataset file; its manifest sits next to it with the extension
    /// `manifest.json`.
    pub dataset: PathBuf,
    /// Checkpoints, weight table, and training histories.
    pub train_dir: PathBuf,
    /// Evaluation reports and their exported tables/plots.
    pub report_dir: PathBuf,
}

impl Paths {
    pub fn manifest(&self) -> PathBuf {
        self.dataset.with_extension("manifest.json")
    }

    fn resolve(&mut self, root: &Path) {
        for p in [&mut self.dataset, &mut self.train_dir, &mut self.report_dir] {
            if p.is_relative() {
                *p = root.join(&p);
            }
        }
    }
}

fn default_split_ratio() -> f64 {
    0.8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetManifest,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
    /// Fraction of each (scheme, SNR) cell that goes to the training
    /// split; the rest is held out for evaluation.
    #[serde(default = "default_split_ratio")]
    pub split_ratio: f64,
    #[serde(default)]
    pub split_seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::parse(format!("config {}", path.display()), e.to_string()))
    }

    /// Component validation plus the cross-field invariants the
    /// components cannot see on their own.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.classes != self.dataset.schemes.len() {
            return Err(Error::invalid(format!(
                "model classes {} != dataset schemes {}",
                self.model.classes,
                self.dataset.schemes.len()
            )));
        }
        if self.model.frame_len != self.dataset.frame_len {
            return Err(Error::invalid(format!(
                "model frame_len {} != dataset frame_len {}",
                self.model.frame_len, self.dataset.frame_len
            )));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::invalid(format!(
                "split_ratio must be in (0, 1), got {}",
                self.split_ratio
            )));
        }
        if self.train.topk > self.model.classes {
            return Err(Error::invalid(format!(
                "top-k {} exceeds class count {}",
                self.train.topk, self.model.classes
            )));
        }
        Ok(())
    }

    /// Makes every path absolute, against `AFNET_OUT_ROOT` when set.
    pub fn resolve_paths(&mut self) {
        let root = std::env::var_os(OUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."));
        self.paths.resolve(&root);
    }

    /// Writes the resolved config as `<dir>/<name>`; the file is a valid
    /// `--config` input.
    pub fn write_snapshot(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let path = dir.join(name);
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::parse("serializing config".to_string(), e.to_string()))?;
        std::fs::write(&path, json + "\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(path)
    }
}

/// Command-line overrides of config-file values. Every field maps onto
/// one config field; absent flags leave the file value in place.
#[derive(clap::Args, Clone, Debug, Default)]
pub struct Overrides {
    /// Dataset file path
    #[arg(long, global = true, value_name = "FILE")]
    pub dataset_path: Option<PathBuf>,
    /// Directory for checkpoints, weights, histories
    #[arg(long, global = true, value_name = "DIR")]
    pub train_dir: Option<PathBuf>,
    /// Directory for reports and exports
    #[arg(long, global = true, value_name = "DIR")]
    pub report_dir: Option<PathBuf>,
    /// Dataset master seed
    #[arg(long, global = true)]
    pub master_seed: Option<u64>,
    /// Frames per (scheme, SNR) cell
    #[arg(long, global = true)]
    pub frames_per_cell: Option<usize>,
    /// Training epoch cap
    #[arg(long, global = true)]
    pub max_epochs: Option<usize>,
    /// Epoch cap for stage 2 (defaults to the stage-1 cap)
    #[arg(long, global = true)]
    pub stage2_max_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    /// Early-stop patience in epochs
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    /// Fraction of the training split held out as the early-stop monitor
    #[arg(long, global = true)]
    pub val_fraction: Option<f64>,
    /// k of the top-k confidence entropy
    #[arg(long, global = true)]
    pub topk: Option<usize>,
    #[arg(long, global = true)]
    pub init_seed: Option<u64>,
    #[arg(long, global = true)]
    pub shuffle_seed: Option<u64>,
    #[arg(long, global = true)]
    pub stage2_init_seed: Option<u64>,
    /// Stage 2 fine-tunes the stage-1 weights instead of re-initializing
    #[arg(long, global = true)]
    pub fine_tune: bool,
    /// Training-split fraction per cell
    #[arg(long, global = true)]
    pub split_ratio: Option<f64>,
    #[arg(long, global = true)]
    pub split_seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(p) = &self.dataset_path {
            cfg.paths.dataset = p.clone();
        }
        if let Some(p) = &self.train_dir {
            cfg.paths.train_dir = p.clone();
        }
        if let Some(p) = &self.report_dir {
            cfg.paths.report_dir = p.clone();
        }
        if let Some(v) = self.master_seed {
            cfg.dataset.master_seed = v;
        }
        if let Some(v) = self.frames_per_cell {
            cfg.dataset.frames_per_cell = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.train.max_epochs = v;
        }
        if let Some(v) = self.stage2_max_epochs {
            cfg.train.stage2_max_epochs = Some(v);
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.patience {
            cfg.train.patience = v;
        }
        if let Some(v) = self.val_fraction {
            cfg.train.val_fraction = v;
        }
        if let Some(v) = self.topk {
            cfg.train.topk = v;
        }
        if let Some(v) = self.init_seed {
            cfg.train.init_seed = v;
        }
        if let Some(v) = self.shuffle_seed {
            cfg.train.shuffle_seed = v;
        }
        if let Some(v) = self.stage2_init_seed {
            cfg.train.stage2_init_seed = v;
        }
        if self.fine_tune {
            cfg.train.stage2_reinit = false;
        }
        if let Some(v) = self.split_ratio {
            cfg.split_ratio = v;
        }
        if let Some(v) = self.split_seed {
            cfg.split_seed = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use afnet::signal::ModulationScheme;

    fn sample() -> RunConfig {
        RunConfig {
            dataset: DatasetManifest {
                schemes: vec![ModulationScheme::Bpsk, ModulationScheme::Gfsk],
                snrs_db: vec![0, 10],
                frames_per_cell: 4,
                frame_len: 32,
                samples_per_symbol: 8,
                master_seed: 7,
                format_version: 1,
                silent_bursts: false,
            },
            model: ModelConfig {
                channels: 8,
                compression: 4,
                units: 2,
                pool_after: vec![1, 2],
                groups: 2,
                classes: 2,
                frame_len: 32,
            },
            train: TrainConfig {
                topk: 2,
                ..TrainConfig::default()
            },
            paths: Paths {
                dataset: PathBuf::from("data/d.amc"),
                train_dir: PathBuf::from("train"),
                report_dir: PathBuf::from("report"),
            },
            split_ratio: 0.8,
            split_seed: 1,
        }
    }

    #[test]
    fn snapshot_roundtrips_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = sample();
        let path = cfg.write_snapshot(dir.path(), "resolved.json").unwrap();
        let back = RunConfig::load(&path).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validate_catches_cross_field_drift() {
        let mut cfg = sample();
        cfg.model.classes = 3;
        assert!(cfg.validate().is_err());

        let mut cfg = sample();
        cfg.model.frame_len = 64;
        assert!(cfg.validate().is_err());

        let mut cfg = sample();
        cfg.split_ratio = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = sample();
        cfg.train.topk = 5;
        assert!(cfg.validate().is_err());

        assert!(sample().validate().is_ok());
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = sample();
        let ov = Overrides {
            max_epochs: Some(9),
            master_seed: Some(99),
            fine_tune: true,
            dataset_path: Some(PathBuf::from("elsewhere.amc")),
            ..Overrides::default()
        };
        ov.apply(&mut cfg);
        assert_eq!(cfg.train.max_epochs, 9);
        assert_eq!(cfg.dataset.master_seed, 99);
        assert!(!cfg.train.stage2_reinit);
        assert_eq!(cfg.paths.dataset, PathBuf::from("elsewhere.amc"));
        assert_eq!(cfg.train.batch_size, 512);
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let mut v = serde_json::to_value(sample()).unwrap();
        v["surprise"] = serde_json::json!(1);
        std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("surprise"), "{err}");
    }

    #[test]
    fn relative_paths_resolve_against_root() {
        let mut cfg = sample();
        cfg.paths.dataset = PathBuf::from("/abs/d.amc");
        cfg.paths.resolve(Path::new("/root/out"));
        assert_eq!(cfg.paths.dataset, PathBuf::from("/abs/d.amc"));
        assert_eq!(cfg.paths.train_dir, PathBuf::from("/root/out/train"));
        assert_eq!(cfg.paths.report_dir, PathBuf::from("/root/out/report"));
        assert_eq!(cfg.paths.manifest(), PathBuf::from("/abs/d.manifest.json"));
    }
}
