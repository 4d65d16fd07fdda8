//! Per-instance confidence weights and their text format:
//! a header line `# checkpoint=<sha256 hex> k=<k>`, then one
//! `index,weight` line per training instance with 9 decimal digits.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::loss::confidence_weight;
use crate::error::{Error, Result};
use crate::model::{checkpoint_hash, forward, frame_to_input, ModelConfig, NetParams};
use crate::signal::FrameRecord;

/// Confidence weights for every training instance, in training-set order,
/// stamped with the checkpoint that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTable {
    pub checkpoint_hash: String,
    pub topk: usize,
    pub weights: Vec<f64>,
}

/// Rounds to the 9-decimal serialization grid, so an in-memory table and
/// its persisted copy are interchangeable bit-for-bit.
fn quantize(w: f64) -> f64 {
    format!("{w:.9}").parse().expect("formatted float reparses")
}

impl WeightTable {
    pub fn new(checkpoint_hash: String, topk: usize, weights: Vec<f64>) -> Result<Self> {
        let weights: Vec<f64> = weights.into_iter().map(quantize).collect();
        let table = WeightTable {
            checkpoint_hash,
            topk,
            weights,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.topk < 2 {
            return Err(Error::invalid(format!(
                "weight table k must be >= 2, got {}",
                self.topk
            )));
        }
        if let Some((i, &w)) = self
            .weights
            .iter()
            .enumerate()
            .find(|(_, &w)| !(0.0..=1.0).contains(&w))
        {
            return Err(Error::invalid(format!(
                "weight {w} at index {i} outside [0, 1]"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Runs the model over every instance and scores prediction confidence
/// with the top-k weight. Inference only; the table is stamped with the
/// parameter hash for provenance.
pub fn compute_instance_weights(
    params: &NetParams<f32>,
    cfg: &ModelConfig,
    records: &[FrameRecord],
    topk: usize,
) -> Result<WeightTable> {
    if topk < 2 || topk > cfg.classes {
        return Err(Error::invalid(format!(
            "top-k needs 2 <= k <= {}, got {topk}",
            cfg.classes
        )));
    }
    params.check_config(cfg)?;
    let hash = checkpoint_hash(cfg, params)?;
    let weights: Vec<f64> = records
        .par_iter()
        .map(|r| {
            let input = frame_to_input::<f32>(r);
            let probs = forward(&input, params, cfg)?;
            Ok(confidence_weight(&probs, topk)? as f64)
        })
        .collect::<Result<_>>()?;
    WeightTable::new(hash, topk, weights)
}

pub fn write_weight_table(path: &Path, table: &WeightTable) -> Result<()> {
    table.validate()?;
    let mut out = String::with_capacity(16 * table.len() + 80);
    out.push_str(&format!(
        "# checkpoint={} k={}\n",
        table.checkpoint_hash, table.topk
    ));
    for (i, w) in table.weights.iter().enumerate() {
        out.push_str(&format!("{i},{w:.9}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing weights {}", path.display()), e))
}

pub fn read_weight_table(path: &Path) -> Result<WeightTable> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading weights {}", path.display()), e))?;
    let ctx = || format!("weight table {}", path.display());
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(ctx(), "empty file"))?;
    let rest = header
        .strip_prefix("# checkpoint=")
        .ok_or_else(|| Error::parse(ctx(), format!("bad header {header:?}")))?;
    let (hash, k_part) = rest
        .split_once(" k=")
        .ok_or_else(|| Error::parse(ctx(), format!("bad header {header:?}")))?;
    let topk: usize = k_part
        .parse()
        .map_err(|_| Error::parse(ctx(), format!("bad k value {k_part:?}")))?;
    let mut weights = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let (idx, w) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(ctx(), format!("line {}: no comma", lineno + 2)))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| Error::parse(ctx(), format!("bad index {idx:?}")))?;
        if idx != weights.len() {
            return Err(Error::parse(
                ctx(),
                format!("index {idx} out of order (expected {})", weights.len()),
            ));
        }
        let w: f64 = w
            .parse()
            .map_err(|_| Error::parse(ctx(), format!("bad weight {w:?}")))?;
        weights.push(w);
    }
    let table = WeightTable {
        checkpoint_hash: hash.to_string(),
        topk,
        weights,
    };
    table.validate()?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn table_roundtrip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("weights.txt");
        let table = WeightTable::new(
            "ab".repeat(32),
            3,
            vec![0.0, 1.0, 0.5366666666123, 0.25, 1.0 / 3.0],
        )
        .unwrap();
        write_weight_table(&path, &table).unwrap();
        let back = read_weight_table(&path).unwrap();
        assert_eq!(table, back);
    }

    #[test]
    fn out_of_range_weights_rejected() {
        assert!(WeightTable::new("h".into(), 3, vec![0.5, 1.2]).is_err());
        assert!(WeightTable::new("h".into(), 3, vec![-0.1]).is_err());
        assert!(WeightTable::new("h".into(), 1, vec![0.5]).is_err());
    }

    #[test]
    fn malformed_files_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("weights.txt");
        for text in [
            "",
            "no header\n0,0.5\n",
            "# checkpoint=h k=3\n1,0.5\n",
            "# checkpoint=h k=3\n0,1.5\n",
            "# checkpoint=h k=3\n0;0.5\n",
        ] {
            std::fs::write(&path, text).unwrap();
            assert!(read_weight_table(&path).is_err(), "accepted {text:?}");
        }
    }
}
