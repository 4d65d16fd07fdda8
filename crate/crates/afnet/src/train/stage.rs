//! One training stage: epoch shuffling, mini-batch gradient descent with
//! Adam, early stopping on a stratified validation carve, and the batch
//! forward/backward shared by both loss modes.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::ce_loss_label;
use super::weights::WeightTable;
use super::{EpochStats, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::model::{
    backward_from_logits, forward, forward_cached, frame_to_input, ModelConfig, NetParams,
};
use crate::numeric::optim::{adam_step, AdamState};
use crate::numeric::params::accumulate;
use crate::numeric::tensor::{Scalar, Tensor};
use crate::signal::{instance_seed, FrameRecord, ModulationScheme};

/// Instances per accumulation chunk. Each chunk is summed sequentially
/// and chunks are reduced in index order, so gradients are bit-identical
/// for any thread count.
pub const GRAD_CHUNK: usize = 32;

/// Distinct schemes of a record set in label order, plus each record's
/// class index within that order.
pub fn class_labels(records: &[FrameRecord]) -> Result<(Vec<ModulationScheme>, Vec<usize>)> {
    let mut present = BTreeSet::new();
    for r in records {
        present.insert(r.label.index());
    }
    let schemes: Vec<ModulationScheme> = present
        .iter()
        .map(|&i| ModulationScheme::from_index(i))
        .collect::<Result<_>>()?;
    let pos: BTreeMap<usize, usize> = schemes
        .iter()
        .enumerate()
        .map(|(c, s)| (s.index(), c))
        .collect();
    let labels = records.iter().map(|r| pos[&r.label.index()]).collect();
    Ok((schemes, labels))
}

fn argmax<F: Scalar>(t: &Tensor<F>) -> usize {
    let mut best = 0;
    for (i, &v) in t.data().iter().enumerate() {
        if v > t.data()[best] {
            best = i;
        }
    }
    best
}

/// Mean loss, mean parameter gradients, and correct-prediction count over
/// `batch` (indices into `inputs`/`labels`). With `weights` the loss is
/// confidence-weighted cross entropy, otherwise plain cross entropy.
///
/// The logit gradient is w*(p - y) even where the probability floor
/// clamps the reported loss value; the floor only keeps the value finite.
pub fn batch_backward<F: Scalar>(
    params: &NetParams<F>,
    cfg: &ModelConfig,
    inputs: &[Tensor<F>],
    labels: &[usize],
    weights: Option<&[f64]>,
    batch: &[usize],
) -> Result<(f64, NetParams<F>, usize)> {
    if batch.is_empty() {
        return Err(Error::invalid("batch_backward: empty batch"));
    }
    let chunk_results: Vec<(f64, NetParams<F>, usize)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = params.zeros_like();
            let mut loss_sum = 0.0f64;
            let mut correct = 0usize;
            for &i in chunk {
                let (probs, cache) = forward_cached(&inputs[i], params, cfg)?;
                let label = labels[i];
                let w = weights.map_or(1.0, |ws| ws[i]);
                loss_sum += w * ce_loss_label(&probs, label)?.as_f64();
                if argmax(&probs) == label {
                    correct += 1;
                }
                let mut grad_logits = probs;
                grad_logits.data_mut()[label] = grad_logits.data_mut()[label] - F::one();
                grad_logits.scale(F::from_f64(w));
                let (g, _) = backward_from_logits(params, cfg, &cache, &grad_logits)?;
                accumulate(&mut grads, &g)?;
            }
            Ok((loss_sum, grads, correct))
        })
        .collect::<Result<_>>()?;

    let mut grads = params.zeros_like();
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for (l, g, c) in &chunk_results {
        loss_sum += l;
        accumulate(&mut grads, g)?;
        correct += c;
    }
    let inv = F::one() / F::from_usize(batch.len());
    crate::numeric::params::scale_blocks(&mut grads, inv);
    Ok((loss_sum / batch.len() as f64, grads, correct))
}

/// Forward-only pass over `idxs`: mean unweighted cross entropy and
/// accuracy. Chunked and order-reduced like [`batch_backward`].
fn monitor_pass<F: Scalar>(
    params: &NetParams<F>,
    cfg: &ModelConfig,
    inputs: &[Tensor<F>],
    labels: &[usize],
    idxs: &[usize],
) -> Result<(f64, f64)> {
    let chunk_results: Vec<(f64, usize)> = idxs
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut loss_sum = 0.0f64;
            let mut correct = 0usize;
            for &i in chunk {
                let probs = forward(&inputs[i], params, cfg)?;
                loss_sum += ce_loss_label(&probs, labels[i])?.as_f64();
                if argmax(&probs) == labels[i] {
                    correct += 1;
                }
            }
            Ok((loss_sum, correct))
        })
        .collect::<Result<_>>()?;
    let loss_sum: f64 = chunk_results.iter().map(|(l, _)| l).sum();
    let correct: usize = chunk_results.iter().map(|(_, c)| c).sum();
    Ok((
        loss_sum / idxs.len() as f64,
        correct as f64 / idxs.len() as f64,
    ))
}

/// Stratified validation carve: per (scheme, SNR) cell, a seeded shuffle
/// donates round(fraction*n) indices to the monitor set. Fraction 0 keeps
/// everything in training and monitors on the training set itself.
fn carve_val(
    records: &[FrameRecord],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if fraction == 0.0 {
        return Ok(((0..records.len()).collect(), Vec::new()));
    }
    // distinct salt keeps this shuffle uncorrelated with the train/test
    // split and the frame contents
    const VAL_SALT: u64 = 0x76616c; // "val"
    let mut cells: BTreeMap<(usize, i8), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        cells
            .entry((r.label.index(), r.snr_db))
            .or_default()
            .push(i);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for ((scheme_idx, snr), mut idxs) in cells {
        let scheme = ModulationScheme::from_index(scheme_idx)?;
        let mut rng =
            ChaCha8Rng::seed_from_u64(instance_seed(seed ^ VAL_SALT, scheme, snr, usize::MAX));
        idxs.shuffle(&mut rng);
        let n_val = (fraction * idxs.len() as f64).round() as usize;
        val.extend_from_slice(&idxs[..n_val]);
        train.extend_from_slice(&idxs[n_val..]);
    }
    if val.is_empty() {
        return Err(Error::invalid(format!(
            "validation carve at fraction {fraction} selected no instances; \
             use val_fraction 0 to monitor on the training set"
        )));
    }
    if train.is_empty() {
        return Err(Error::invalid(format!(
            "validation carve at fraction {fraction} left no training instances"
        )));
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

fn epoch_rng(shuffle_seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(shuffle_seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Best parameters (minimum validation loss) and the full epoch record.
#[derive(Clone, Debug)]
pub struct StageResult {
    pub params: NetParams<f32>,
    pub history: TrainHistory,
}

/// Trains from `init` until `max_epochs` or until the validation loss has
/// not improved for `patience` epochs; returns the best-epoch parameters.
/// With `weights` present, training minimizes confidence-weighted cross
/// entropy (the monitor metric stays unweighted cross entropy either
/// way). The observer sees each epoch's stats; returning false stops
/// training after that epoch.
pub fn train_stage(
    init: &NetParams<f32>,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    records: &[FrameRecord],
    weights: Option<&WeightTable>,
    mut observer: Option<&mut dyn FnMut(&EpochStats) -> bool>,
) -> Result<StageResult> {
    tcfg.validate()?;
    mcfg.validate()?;
    init.check_config(mcfg)?;
    if records.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some(r) = records.iter().find(|r| r.frame_len() != mcfg.frame_len) {
        return Err(Error::shape(format!(
            "record frame length {} does not match model frame length {}",
            r.frame_len(),
            mcfg.frame_len
        )));
    }
    let (schemes, labels) = class_labels(records)?;
    if schemes.len() != mcfg.classes {
        return Err(Error::invalid(format!(
            "dataset has {} schemes but the model head has {} classes",
            schemes.len(),
            mcfg.classes
        )));
    }
    let weight_slice = match weights {
        Some(t) => {
            t.validate()?;
            if t.len() != records.len() {
                return Err(Error::invalid(format!(
                    "weight table covers {} instances, training set has {}",
                    t.len(),
                    records.len()
                )));
            }
            Some(t.weights.as_slice())
        }
        None => None,
    };

    let inputs: Vec<Tensor<f32>> = records.iter().map(frame_to_input).collect();
    let (train_idx, val_idx) = carve_val(records, tcfg.val_fraction, tcfg.shuffle_seed)?;
    let monitor_idx: &[usize] = if val_idx.is_empty() {
        &train_idx
    } else {
        &val_idx
    };

    let mut params = init.clone();
    let mut adam = AdamState::new(&params);
    let lr = tcfg.learning_rate as f32;
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, NetParams<f32>, usize)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=tcfg.max_epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut epoch_rng(tcfg.shuffle_seed, epoch));

        let mut loss_sum = 0.0f64;
        for (batch_no, batch) in order.chunks(tcfg.batch_size).enumerate() {
            let (mean_loss, grads, _) =
                batch_backward(&params, mcfg, &inputs, &labels, weight_slice, batch)?;
            if !mean_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "batch loss at epoch {epoch}, batch {batch_no}"
                )));
            }
            adam_step(&mut params, &grads, &mut adam, lr)?;
            loss_sum += mean_loss * batch.len() as f64;
        }
        let train_loss = loss_sum / order.len() as f64;
        let (val_loss, val_acc) = monitor_pass(&params, mcfg, &inputs, &labels, monitor_idx)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation loss at epoch {epoch}"
            )));
        }

        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_acc,
        };
        history.epochs.push(stats);
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, params.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if let Some(obs) = observer.as_mut() {
            if !obs(&stats) {
                break;
            }
        }
        if since_best >= tcfg.patience {
            break;
        }
    }

    let (_, best_params, best_epoch) = best.expect("at least one epoch ran");
    history.best_epoch = best_epoch;
    Ok(StageResult {
        params: best_params,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::net_kink_margin;
    use crate::numeric::gradcheck::finite_diff_check;
    use crate::numeric::params::{flatten, load_flat};
    use crate::signal::{generate_records, DatasetManifest};
    use rand::Rng;

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

    fn tiny_records(frames_per_cell: usize, snrs: Vec<i8>) -> Vec<FrameRecord> {
        let manifest = DatasetManifest {
            schemes: vec![ModulationScheme::Bpsk, ModulationScheme::Qpsk],
            snrs_db: snrs,
            frames_per_cell,
            frame_len: 16,
            samples_per_symbol: 8,
            master_seed: 99,
            format_version: 1,
            silent_bursts: false,
        };
        generate_records(&manifest).unwrap()
    }

    fn quick_config(max_epochs: usize) -> TrainConfig {
        TrainConfig {
            max_epochs,
            batch_size: 8,
            val_fraction: 0.0,
            patience: 50,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn class_labels_follow_scheme_order() {
        let records = tiny_records(2, vec![0]);
        let (schemes, labels) = class_labels(&records).unwrap();
        assert_eq!(
            schemes,
            vec![ModulationScheme::Bpsk, ModulationScheme::Qpsk]
        );
        for (r, &l) in records.iter().zip(&labels) {
            assert_eq!(schemes[l], r.label);
        }
    }

    #[test]
    fn carve_is_stratified_and_deterministic() {
        let records = tiny_records(10, vec![-2, 4]);
        let (train, val) = carve_val(&records, 0.2, 7).unwrap();
        assert_eq!(val.len(), 8);
        assert_eq!(train.len() + val.len(), records.len());
        // disjoint and exhaustive
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..records.len()).collect::<Vec<_>>());
        // per-cell balance: 2 val per (scheme, snr) cell
        let mut per_cell: BTreeMap<(usize, i8), usize> = BTreeMap::new();
        for &i in &val {
            *per_cell
                .entry((records[i].label.index(), records[i].snr_db))
                .or_default() += 1;
        }
        assert!(per_cell.values().all(|&n| n == 2));
        let again = carve_val(&records, 0.2, 7).unwrap();
        assert_eq!((train, val), again);
        assert_ne!(carve_val(&records, 0.2, 8).unwrap().1, again.1);
    }

    #[test]
    fn batch_loss_gradient_matches_finite_differences() {
        let mcfg = tiny_model();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 5;
        let labels = vec![0usize, 1, 0, 1, 1];
        let weights = vec![1.0, 0.25, 0.0, 0.7, 0.33];
        let batch: Vec<usize> = (0..n).collect();
        let (params, inputs) = 'outer: loop {
            let params = NetParams::<f64>::init(&mcfg, rng.gen()).unwrap();
            let inputs: Vec<Tensor<f64>> = (0..n)
                .map(|_| Tensor::from_fn(&[2, 16, 1], |_| rng.gen_range(-1.0..1.0)))
                .collect();
            for input in &inputs {
                let (_, cache) = forward_cached(input, &params, &mcfg).unwrap();
                if net_kink_margin(&cache, &mcfg) <= 1e-3 {
                    continue 'outer;
                }
            }
            break (params, inputs);
        };

        let point = flatten(&params);
        let loss = |v: &[f64]| {
            let mut p = params.clone();
            load_flat(&mut p, v).unwrap();
            let (l, _, _) =
                batch_backward(&p, &mcfg, &inputs, &labels, Some(&weights), &batch).unwrap();
            l
        };
        let analytic = {
            let (_, grads, _) =
                batch_backward(&params, &mcfg, &inputs, &labels, Some(&weights), &batch).unwrap();
            flatten(&grads)
        };
        let err = finite_diff_check(&point, &analytic, loss);
        assert!(err < 1e-4, "batch gradient error {err}");
    }

    #[test]
    fn all_ones_weights_match_unweighted_training() {
        let mcfg = tiny_model();
        let records = tiny_records(8, vec![10]);
        let tcfg = quick_config(3);
        let init = NetParams::<f32>::init(&mcfg, tcfg.init_seed).unwrap();
        let plain = train_stage(&init, &mcfg, &tcfg, &records, None, None).unwrap();
        let table = WeightTable::new("x".into(), 3, vec![1.0; records.len()]).unwrap();
        let weighted = train_stage(&init, &mcfg, &tcfg, &records, Some(&table), None).unwrap();
        assert_eq!(plain.history, weighted.history);
        assert_eq!(plain.params, weighted.params);
    }

    #[test]
    fn training_is_deterministic() {
        let mcfg = tiny_model();
        let records = tiny_records(8, vec![6]);
        let tcfg = quick_config(3);
        let init = NetParams::<f32>::init(&mcfg, tcfg.init_seed).unwrap();
        let a = train_stage(&init, &mcfg, &tcfg, &records, None, None).unwrap();
        let b = train_stage(&init, &mcfg, &tcfg, &records, None, None).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn patience_stops_after_flat_validation() {
        let mcfg = tiny_model();
        let records = tiny_records(8, vec![10]);
        // learning rate too small to move any 32-bit weight: every epoch
        // after the first is a non-improvement
        let tcfg = TrainConfig {
            learning_rate: 1e-30,
            max_epochs: 50,
            batch_size: 8,
            val_fraction: 0.0,
            patience: 3,
            ..TrainConfig::default()
        };
        let init = NetParams::<f32>::init(&mcfg, 1).unwrap();
        let out = train_stage(&init, &mcfg, &tcfg, &records, None, None).unwrap();
        assert_eq!(out.history.epochs.len(), 1 + tcfg.patience);
        assert_eq!(out.history.best_epoch, 1);
        // the optimizer still nudges the exactly-zero biases by ~1e-30,
        // so compare against the initialization with a matching tolerance
        let moved = flatten(&out.params)
            .iter()
            .zip(flatten(&init))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(moved < 1e-20, "largest parameter movement {moved}");
    }

    #[test]
    fn observer_can_stop_training() {
        let mcfg = tiny_model();
        let records = tiny_records(8, vec![10]);
        let tcfg = quick_config(10);
        let init = NetParams::<f32>::init(&mcfg, 1).unwrap();
        let mut seen = Vec::new();
        let mut obs = |s: &EpochStats| {
            seen.push(s.epoch);
            s.epoch < 2
        };
        let out = train_stage(&init, &mcfg, &tcfg, &records, None, Some(&mut obs)).unwrap();
        assert_eq!(seen, vec![1, 2]);
        assert_eq!(out.history.epochs.len(), 2);
    }

    #[test]
    fn class_count_mismatch_rejected() {
        let mcfg = ModelConfig {
            classes: 3,
            ..tiny_model()
        };
        let records = tiny_records(4, vec![0]);
        let tcfg = quick_config(1);
        let init = NetParams::<f32>::init(&mcfg, 1).unwrap();
        assert!(train_stage(&init, &mcfg, &tcfg, &records, None, None).is_err());
    }
}
