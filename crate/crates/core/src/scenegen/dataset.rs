//! Persisted scene datasets with train/validation/test splits.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_scene, GeneratorConfig, Scene};
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::rng::rng_from;
use crate::trajset::{corpus_digest, Trajectory};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn counts(&self, n: usize) -> Result<SplitCounts> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        let floor = |f: f64| (n as f64 * f + 1e-9).floor() as usize;
        let train = floor(self.train);
        let val = floor(self.val).min(n - train);
        let counts = SplitCounts {
            train,
            val,
            test: n - train - val,
        };
        if counts.train == 0 || counts.val == 0 || counts.test == 0 {
            return Err(Error::InvalidArgument(format!(
                "{n} scenes are too few for split {parts:?}: got {counts:?}"
            )));
        }
        Ok(counts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordFormat {
    /// Little-endian `u32` length prefix, then the bincode record.
    #[default]
    Binary,
    /// One JSON object per line.
    Jsonl,
}

impl RecordFormat {
    fn extension(self) -> &'static str {
        match self {
            RecordFormat::Binary => "bin",
            RecordFormat::Jsonl => "jsonl",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsampleInfo {
    pub fraction: f64,
    pub seed: u64,
    pub source_train: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub n_scenes: usize,
    pub seed: u64,
    pub split: SplitFractions,
    pub counts: SplitCounts,
    pub record_format: RecordFormat,
    /// Digest of the training futures, matching a trajectory set built on them.
    pub train_corpus_digest: String,
    pub generator: GeneratorConfig,
    pub subsample: Option<SubsampleInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
    pub test: Vec<Scene>,
}

impl Dataset {
    pub fn train_futures(&self) -> Vec<Trajectory> {
        self.train.iter().map(|s| s.future.clone()).collect()
    }
}

/// Generate `n_scenes` scenes in parallel; the first block forms the training
/// split, then validation, then test.
pub fn build_dataset(n_scenes: usize, seed: u64, split: SplitFractions, cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let counts = split.counts(n_scenes)?;
    let mut scenes = (0..n_scenes as u64)
        .into_par_iter()
        .map(|id| generate_scene(id, seed, cfg))
        .collect::<Result<Vec<_>>>()?;
    let test = scenes.split_off(counts.train + counts.val);
    let val = scenes.split_off(counts.train);
    let train = scenes;
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        n_scenes,
        seed,
        split,
        counts,
        record_format: RecordFormat::default(),
        train_corpus_digest: digest_of(&train),
        generator: cfg.clone(),
        subsample: None,
    };
    Ok(Dataset {
        manifest,
        train,
        val,
        test,
    })
}

fn digest_of(scenes: &[Scene]) -> String {
    corpus_digest(&scenes.iter().map(|s| s.future.clone()).collect::<Vec<_>>())
}

/// Sorted indices of `floor(fraction * pool)` items drawn uniformly without
/// replacement.
pub fn subsample_indices(pool: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let keep = (pool as f64 * fraction + 1e-9).floor() as usize;
    if keep == 0 {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} of {pool} training scenes leaves none"
        )));
    }
    if keep == pool {
        return Ok((0..pool).collect());
    }
    let mut rng = rng_from(seed, &[0x5b5a]);
    let mut idx = rand::seq::index::sample(&mut rng, pool, keep).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Keep `floor(fraction * |train|)` training scenes drawn uniformly without
/// replacement (original order kept); validation and test are untouched.
pub fn subsample(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    let pool = dataset.train.len();
    let train: Vec<Scene> = subsample_indices(pool, fraction, seed)?
        .into_iter()
        .map(|i| dataset.train[i].clone())
        .collect();
    let mut manifest = dataset.manifest.clone();
    manifest.counts.train = train.len();
    manifest.train_corpus_digest = digest_of(&train);
    manifest.subsample = Some(SubsampleInfo {
        fraction,
        seed,
        source_train: pool,
    });
    Ok(Dataset {
        manifest,
        train,
        val: dataset.val.clone(),
        test: dataset.test.clone(),
    })
}

fn split_path(dir: &Path, name: &str, format: RecordFormat) -> std::path::PathBuf {
    dir.join(format!("{name}.{}", format.extension()))
}

fn write_records(path: &Path, scenes: &[Scene], format: RecordFormat) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for scene in scenes {
        match format {
            RecordFormat::Binary => {
                let bytes = bincode::serialize(scene).map_err(|e| Error::Format(e.to_string()))?;
                let len = u32::try_from(bytes.len())
                    .map_err(|_| Error::Format(format!("scene {} exceeds the record size limit", scene.id)))?;
                w.write_all(&len.to_le_bytes()).map_err(|e| Error::io(path, e))?;
                w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
            }
            RecordFormat::Jsonl => {
                serde_json::to_writer(&mut w, scene).map_err(|e| Error::Format(e.to_string()))?;
                w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_records(path: &Path, format: RecordFormat, expected: usize) -> Result<Vec<Scene>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let mut scenes = Vec::with_capacity(expected);
    match format {
        RecordFormat::Binary => loop {
            let mut len = [0u8; 4];
            match r.read_exact(&mut len) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(Error::io(path, e)),
            }
            let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
            r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            scenes.push(bincode::deserialize(&buf).map_err(|e| bad(e.to_string()))?);
        },
        RecordFormat::Jsonl => {
            let mut text = String::new();
            r.read_to_string(&mut text).map_err(|e| Error::io(path, e))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                scenes.push(serde_json::from_str(line).map_err(|e| bad(e.to_string()))?);
            }
        }
    }
    if scenes.len() != expected {
        return Err(bad(format!("expected {expected} records, found {}", scenes.len())));
    }
    Ok(scenes)
}

pub fn write_dataset(dataset: &Dataset, dir: &Path, format: RecordFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = dataset.manifest.clone();
    manifest.record_format = format;
    for (name, scenes) in [
        ("train", &dataset.train),
        ("val", &dataset.val),
        ("test", &dataset.test),
    ] {
        write_records(&split_path(dir, name, format), scenes, format)?;
    }
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {}",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let f = manifest.record_format;
    let c = manifest.counts;
    Ok(Dataset {
        train: read_records(&split_path(dir, "train", f), f, c.train)?,
        val: read_records(&split_path(dir, "val", f), f, c.val)?,
        test: read_records(&split_path(dir, "test", f), f, c.test)?,
        manifest,
    })
}
