//! Dataset generation and the on-disk format.
//!
//! Binary layout (little-endian): magic "AMC1", version u16, record count
//! u64, frame length u32; then per record: scheme index u8, snr_db i8,
//! seed u64, and 2*N f32 samples (I row, then Q row). The manifest is a
//! JSON sidecar mirroring [`DatasetManifest`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::frame::{instance_seed, modulate_frame};
use super::{DatasetManifest, FrameRecord, ModulationScheme};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"AMC1";
pub const DATASET_VERSION: u16 = 1;

/// Generates every frame of the manifest, in (scheme, snr, frame) order.
/// Frames are independent given their seeds, so generation parallelizes
/// across whatever rayon pool is installed without affecting the output.
pub fn generate_records(manifest: &DatasetManifest) -> Result<Vec<FrameRecord>> {
    manifest.validate()?;
    let cfg = manifest.gen_config();
    let mut jobs = Vec::with_capacity(manifest.total_frames());
    for &scheme in &manifest.schemes {
        for &snr in &manifest.snrs_db {
            for idx in 0..manifest.frames_per_cell {
                jobs.push((
                    scheme,
                    snr,
                    instance_seed(manifest.master_seed, scheme, snr, idx),
                ));
            }
        }
    }
    jobs.par_iter()
        .map(|&(scheme, snr, seed)| modulate_frame(scheme, snr, seed, &cfg))
        .collect()
}

/// Generates the dataset and writes the data file plus its JSON manifest.
pub fn generate_dataset(
    manifest: &DatasetManifest,
    data_path: &Path,
    manifest_path: &Path,
) -> Result<()> {
    let records = generate_records(manifest)?;
    write_dataset(data_path, &records, manifest.frame_len)?;
    write_manifest(manifest_path, manifest)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_dataset(path: &Path, records: &[FrameRecord], frame_len: usize) -> Result<()> {
    let ctx = || path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = BufWriter::new(file);
    w.write_all(DATASET_MAGIC)
        .map_err(|e| Error::io(ctx(), e))?;
    w.write_all(&DATASET_VERSION.to_le_bytes())
        .map_err(|e| Error::io(ctx(), e))?;
    w.write_all(&(records.len() as u64).to_le_bytes())
        .map_err(|e| Error::io(ctx(), e))?;
    w.write_all(&(frame_len as u32).to_le_bytes())
        .map_err(|e| Error::io(ctx(), e))?;
    for r in records {
        r.validate()?;
        if r.frame_len() != frame_len {
            return Err(Error::invalid(format!(
                "record frame length {} != dataset frame length {frame_len}",
                r.frame_len()
            )));
        }
        w.write_all(&[r.label.index() as u8])
            .map_err(|e| Error::io(ctx(), e))?;
        w.write_all(&r.snr_db.to_le_bytes())
            .map_err(|e| Error::io(ctx(), e))?;
        w.write_all(&r.seed.to_le_bytes())
            .map_err(|e| Error::io(ctx(), e))?;
        for &x in &r.iq {
            w.write_all(&x.to_le_bytes())
                .map_err(|e| Error::io(ctx(), e))?;
        }
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<FrameRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path, "magic")?;
    if &magic != DATASET_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "AMC1",
        });
    }
    let version = u16::from_le_bytes(read_array(&mut r, path, "version")?);
    if version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let count = u64::from_le_bytes(read_array(&mut r, path, "record count")?) as usize;
    let frame_len = u32::from_le_bytes(read_array(&mut r, path, "frame length")?) as usize;
    if frame_len == 0 {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            detail: "frame length 0".to_string(),
        });
    }

    let mut records = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let scheme_idx = u8::from_le_bytes(read_array(&mut r, path, "scheme index")?);
        let label =
            ModulationScheme::from_index(scheme_idx as usize).map_err(|_| Error::Corrupt {
                path: path.to_path_buf(),
                detail: format!("record {i}: scheme index {scheme_idx} out of range"),
            })?;
        let snr_db = i8::from_le_bytes(read_array(&mut r, path, "snr")?);
        let seed = u64::from_le_bytes(read_array(&mut r, path, "seed")?);
        let mut iq = vec![0f32; 2 * frame_len];
        for x in &mut iq {
            *x = f32::from_le_bytes(read_array(&mut r, path, "samples")?);
        }
        let record = FrameRecord {
            label,
            snr_db,
            seed,
            iq,
        };
        record.validate().map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            detail: format!("record {i}: {e}"),
        })?;
        records.push(record);
    }

    // trailing bytes mean the header count undersold the payload
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                detail: format!("data beyond the {count} records promised by the header"),
            })
        }
        Err(e) => return Err(Error::io(path.display().to_string(), e)),
    }
    Ok(records)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Corrupt {
                path: path.to_path_buf(),
                detail: format!("truncated while reading {what}"),
            }
        } else {
            Error::io(path.display().to_string(), e)
        }
    })
}

fn read_array<const N: usize>(r: &mut impl Read, path: &Path, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf, path, what)?;
    Ok(buf)
}

/// Stratified split: every (scheme, snr) cell is shuffled with a rng
/// derived from (seed, cell) and cut at round(ratio * cell size). Cells
/// are visited in label/SNR order, so the output ordering is stable.
pub fn split_dataset(
    records: &[FrameRecord],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<FrameRecord>, Vec<FrameRecord>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let mut cells: std::collections::BTreeMap<(usize, i8), Vec<usize>> =
        std::collections::BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        cells
            .entry((r.label.index(), r.snr_db))
            .or_default()
            .push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for ((scheme_idx, snr), mut idxs) in cells {
        let n = idxs.len();
        let n_train = (ratio * n as f64).round() as usize;
        if n_train == 0 || n_train == n {
            return Err(Error::invalid(format!(
                "cell ({}, {snr} dB) with {n} frames is too small to split at ratio {ratio}",
                ModulationScheme::from_index(scheme_idx)?.name()
            )));
        }
        let scheme = ModulationScheme::from_index(scheme_idx)?;
        // salt keeps split shuffles uncorrelated with frame-content seeds
        const SPLIT_SALT: u64 = 0x73706c6974; // "split"
        let mut rng =
            ChaCha8Rng::seed_from_u64(instance_seed(seed ^ SPLIT_SALT, scheme, snr, usize::MAX));
        idxs.shuffle(&mut rng);
        for &i in &idxs[..n_train] {
            train.push(records[i].clone());
        }
        for &i in &idxs[n_train..] {
            test.push(records[i].clone());
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_manifest() -> DatasetManifest {
        DatasetManifest {
            schemes: vec![
                ModulationScheme::Bpsk,
                ModulationScheme::Qpsk,
                ModulationScheme::Wbfm,
            ],
            snrs_db: vec![-2, 18],
            frames_per_cell: 5,
            frame_len: 64,
            samples_per_symbol: 8,
            master_seed: 99,
            format_version: DATASET_VERSION,
            silent_bursts: false,
        }
    }

    #[test]
    fn record_counting() {
        let m = small_manifest();
        let records = generate_records(&m).unwrap();
        assert_eq!(records.len(), 3 * 2 * 5);
        // cell order: scheme-major, snr, frame
        assert_eq!(records[0].label, ModulationScheme::Bpsk);
        assert_eq!(records[0].snr_db, -2);
        assert_eq!(records[10].label, ModulationScheme::Qpsk);
    }

    #[test]
    fn roundtrip_and_determinism() {
        let dir = tempdir().unwrap();
        let m = small_manifest();
        let d1 = dir.path().join("a.bin");
        let d2 = dir.path().join("b.bin");
        let mf = dir.path().join("a.json");
        generate_dataset(&m, &d1, &mf).unwrap();
        generate_dataset(&m, &d2, &dir.path().join("b.json")).unwrap();
        assert_eq!(
            std::fs::read(&d1).unwrap(),
            std::fs::read(&d2).unwrap(),
            "same manifest must produce identical bytes"
        );

        let records = read_dataset(&d1).unwrap();
        assert_eq!(records, generate_records(&m).unwrap());

        let m2 = DatasetManifest {
            master_seed: 100,
            ..m
        };
        let d3 = dir.path().join("c.bin");
        generate_dataset(&m2, &d3, &dir.path().join("c.json")).unwrap();
        assert_ne!(std::fs::read(&d1).unwrap(), std::fs::read(&d3).unwrap());
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempdir().unwrap();
        let m = small_manifest();
        let p = dir.path().join("m.json");
        write_manifest(&p, &m).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), m);
    }

    #[test]
    fn corrupted_magic_is_detected() {
        let dir = tempdir().unwrap();
        let m = small_manifest();
        let p = dir.path().join("d.bin");
        generate_dataset(&m, &p, &dir.path().join("d.json")).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            read_dataset(&p).unwrap_err(),
            Error::BadMagic { .. }
        ));
    }

    #[test]
    fn version_and_truncation_are_distinct_errors() {
        let dir = tempdir().unwrap();
        let m = small_manifest();
        let p = dir.path().join("d.bin");
        generate_dataset(&m, &p, &dir.path().join("d.json")).unwrap();
        let bytes = std::fs::read(&p).unwrap();

        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        std::fs::write(&p, &wrong_version).unwrap();
        assert!(matches!(
            read_dataset(&p).unwrap_err(),
            Error::UnsupportedVersion { found: 9, .. }
        ));

        std::fs::write(&p, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(
            read_dataset(&p).unwrap_err(),
            Error::Corrupt { .. }
        ));

        // count larger than payload
        let mut short_count = bytes.clone();
        short_count[6..14].copy_from_slice(&31u64.to_le_bytes());
        std::fs::write(&p, &short_count).unwrap();
        assert!(matches!(
            read_dataset(&p).unwrap_err(),
            Error::Corrupt { .. }
        ));
    }

    #[test]
    fn split_is_stratified_and_exhaustive() {
        let m = DatasetManifest {
            frames_per_cell: 10,
            ..small_manifest()
        };
        let records = generate_records(&m).unwrap();
        let (train, test) = split_dataset(&records, 0.8, 7).unwrap();
        assert_eq!(train.len(), 48);
        assert_eq!(test.len(), 12);

        // per-cell 8/2 exactly
        for &scheme in &m.schemes {
            for &snr in &m.snrs_db {
                let tr = train
                    .iter()
                    .filter(|r| r.label == scheme && r.snr_db == snr)
                    .count();
                let te = test
                    .iter()
                    .filter(|r| r.label == scheme && r.snr_db == snr)
                    .count();
                assert_eq!((tr, te), (8, 2));
            }
        }

        // disjoint and exhaustive by seed identity
        let mut seeds: Vec<u64> = train.iter().chain(&test).map(|r| r.seed).collect();
        seeds.sort_unstable();
        let mut expect: Vec<u64> = records.iter().map(|r| r.seed).collect();
        expect.sort_unstable();
        assert_eq!(seeds, expect);

        // same seed, same split
        let (train2, _) = split_dataset(&records, 0.8, 7).unwrap();
        assert_eq!(train, train2);
        // different seed, different assignment
        let (train3, _) = split_dataset(&records, 0.8, 8).unwrap();
        assert_ne!(train, train3);
    }

    #[test]
    fn split_rejects_tiny_cells() {
        let m = DatasetManifest {
            frames_per_cell: 1,
            ..small_manifest()
        };
        let records = generate_records(&m).unwrap();
        assert!(split_dataset(&records, 0.8, 7).is_err());
    }
}
