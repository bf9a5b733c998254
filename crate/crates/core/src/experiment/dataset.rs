//! Synthetic detection datasets: `IOIMG1` images plus a CSV manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::SignalSpec;
use crate::image::{image_read, image_write, Image};
use crate::imaging::sample_measurement;
use crate::lumpy::{measured_background, sample_lumpy};
use crate::signal::{measured_signal_ske, measured_signal_sks, sample_signal_params, SignalParams};

use super::config::{ExperimentConfig, TaskMode};
use super::{csv_err, csv_open, MANIFEST_FILE};

pub const BACKGROUND_LABEL: &str = "background";
pub const NOISE_LABEL: &str = "noise";
pub const SIGNAL_LABEL: &str = "signal";

/// One manifest row. Image `2p` is the signal-absent member of pair `p` and
/// `2p + 1` the signal-present one.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub image_id: usize,
    pub pair: usize,
    pub hypothesis: u8,
    pub file: String,
    pub background_seed: String,
    pub noise_seed: String,
    pub signal_seed: Option<String>,
    /// True SKS parameters of a signal-present image.
    pub alpha: Option<SignalParams>,
}

// Outer `None` drops the alpha columns (SKE); inner `None` leaves a cell empty.
#[derive(Serialize)]
struct ManifestOut<'a> {
    image_id: usize,
    pair: usize,
    hypothesis: u8,
    file: &'a str,
    background_seed: &'a str,
    noise_seed: &'a str,
    signal_seed: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_cx: Option<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_cy: Option<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_w1: Option<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_w2: Option<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_phi: Option<Option<f64>>,
}

#[derive(Deserialize)]
struct ManifestIn {
    image_id: usize,
    pair: usize,
    hypothesis: u8,
    file: String,
    background_seed: String,
    noise_seed: String,
    signal_seed: String,
    #[serde(default)]
    alpha_cx: Option<f64>,
    #[serde(default)]
    alpha_cy: Option<f64>,
    #[serde(default)]
    alpha_w1: Option<f64>,
    #[serde(default)]
    alpha_w2: Option<f64>,
    #[serde(default)]
    alpha_phi: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dir: PathBuf,
    pub mode: TaskMode,
    pub entries: Vec<DatasetEntry>,
}

impl Dataset {
    pub fn image(&self, entry: &DatasetEntry) -> Result<Image> {
        image_read(self.dir.join(&entry.file))
    }
}

fn seed_label(label: &str, index: usize) -> String {
    format!("{label}/{index}")
}

/// Draws image `image_id` of the dataset described by `cfg`. Each image owns
/// its noise stream; backgrounds are per image unless `paired_backgrounds`.
pub fn synthesize_image(cfg: &ExperimentConfig, image_id: usize) -> Result<(Image, DatasetEntry)> {
    let task = cfg.task()?;
    let prior = cfg.lumpy_prior()?;
    let seeds = cfg.seed_spec();
    let pair = image_id / 2;
    let hypothesis = (image_id % 2) as u8;
    let bg_index = if cfg.paired_backgrounds { pair } else { image_id };

    let theta = sample_lumpy(&prior, task.grid, &mut seeds.stream(BACKGROUND_LABEL, bg_index as u64));
    let mut mean = measured_background(&theta, &prior, &task.psf, task.grid);
    let mut alpha = None;
    let mut signal_seed = None;
    if hypothesis == 1 {
        let s = match &task.signal {
            SignalSpec::Ske(c) => measured_signal_ske(c, &task.psf, task.grid)?,
            SignalSpec::Sks(p) => {
                let a = sample_signal_params(p, &mut seeds.stream(SIGNAL_LABEL, image_id as u64));
                let s = measured_signal_sks(&a, p.amplitude, &task.psf, task.grid)?;
                alpha = Some(a);
                s
            }
        };
        signal_seed = Some(seed_label(SIGNAL_LABEL, image_id));
        mean.add_assign(&s)?;
    }
    let g = sample_measurement(&mean, &task.noise, &mut seeds.stream(NOISE_LABEL, image_id as u64));
    let entry = DatasetEntry {
        image_id,
        pair,
        hypothesis,
        file: format!("img_{image_id:05}.ioimg"),
        background_seed: seed_label(BACKGROUND_LABEL, bg_index),
        noise_seed: seed_label(NOISE_LABEL, image_id),
        signal_seed,
        alpha,
    };
    Ok((g, entry))
}

/// Writes `2 * n_pairs` images and the manifest into `dir`, which must not
/// already hold a manifest.
pub fn generate_dataset(cfg: &ExperimentConfig, dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.exists() {
        return Err(Error::OutputExists(manifest));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(2 * cfg.n_pairs);
    for id in 0..2 * cfg.n_pairs {
        let (g, entry) = synthesize_image(cfg, id)?;
        image_write(&g, dir.join(&entry.file))?;
        entries.push(entry);
    }
    let ds = Dataset {
        dir: dir.to_path_buf(),
        mode: cfg.mode,
        entries,
    };
    write_manifest(&ds, &manifest)?;
    Ok(ds)
}

fn write_manifest(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_open(path, e))?;
    for e in &ds.entries {
        let col = |f: fn(&SignalParams) -> f64| match ds.mode {
            TaskMode::Ske => None,
            TaskMode::Sks => Some(e.alpha.as_ref().map(f)),
        };
        let row = ManifestOut {
            image_id: e.image_id,
            pair: e.pair,
            hypothesis: e.hypothesis,
            file: &e.file,
            background_seed: &e.background_seed,
            noise_seed: &e.noise_seed,
            signal_seed: e.signal_seed.as_deref().unwrap_or(""),
            alpha_cx: col(|a| a.center[0]),
            alpha_cy: col(|a| a.center[1]),
            alpha_w1: col(|a| a.w1),
            alpha_w2: col(|a| a.w2),
            alpha_phi: col(|a| a.phi),
        };
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a manifest written by [`generate_dataset`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_open(&path, e))?;
    let sks = r.headers().map_err(|e| csv_err(&path, e))?.iter().any(|h| h == "alpha_cx");
    let mut entries = Vec::new();
    for row in r.deserialize::<ManifestIn>() {
        let row = row.map_err(|e| csv_err(&path, e))?;
        let alpha = match [row.alpha_cx, row.alpha_cy, row.alpha_w1, row.alpha_w2, row.alpha_phi] {
            [Some(cx), Some(cy), Some(w1), Some(w2), Some(phi)] => Some(SignalParams::from_fields(&[cx, cy, w1, w2, phi])?),
            _ => None,
        };
        if row.hypothesis > 1 {
            return Err(csv_err(&path, format!("image {}: hypothesis must be 0 or 1", row.image_id)));
        }
        entries.push(DatasetEntry {
            image_id: row.image_id,
            pair: row.pair,
            hypothesis: row.hypothesis,
            file: row.file,
            background_seed: row.background_seed,
            noise_seed: row.noise_seed,
            signal_seed: (!row.signal_seed.is_empty()).then_some(row.signal_seed),
            alpha,
        });
    }
    Ok(Dataset {
        dir: dir.to_path_buf(),
        mode: if sks { TaskMode::Sks } else { TaskMode::Ske },
        entries,
    })
}
