//! Per-image chains fanned out over a thread pool, then ROC analysis.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate_log_lr_conventional, estimate_log_lr_gan, DetectionTask};
use crate::generator::GeneratorSpec;
use crate::image::Image;
use crate::lumpy::LumpyModel;
use crate::mcmc::{ChainConfig, ChainResult};
use crate::roc::{bootstrap_auc_ci, empirical_auc, roc_points, ScoreSet};
use crate::seed::SeedSpec;

use super::config::{ExperimentConfig, SamplerKind};
use super::dataset::{generate_dataset, load_dataset, Dataset};
use super::{csv_err, csv_open, CHAINS_FILE, DATASET_SUBDIR, FAILURES_FILE, ROC_FILE, SCORES_FILE, SUMMARY_FILE};

pub const CHAIN_LABEL: &str = "chain";
pub const BOOTSTRAP_LABEL: &str = "bootstrap";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub image_id: usize,
    pub hypothesis: u8,
    pub log_lr: f64,
    pub acceptance_rate: f64,
    pub std_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub image_id: usize,
    pub n_proposed: usize,
    pub n_accepted: usize,
    pub n_kept: usize,
    pub proposal_step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    pub auc: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub ci_level: f64,
    pub n_boot: usize,
    pub n_h0: usize,
    pub n_h1: usize,
    pub mean_acceptance_rate: f64,
    pub mean_std_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(flatten)]
    pub roc: RocSummary,
    pub config: Option<ExperimentConfig>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub scores: Vec<ScoreRow>,
    pub diagnostics: Vec<ChainDiagnostics>,
    pub roc: Vec<(f64, f64)>,
    pub summary: Summary,
}

enum Estimator {
    Conventional(LumpyModel),
    Gan(GeneratorSpec),
}

impl Estimator {
    fn run(&self, g: &Image, task: &DetectionTask, cfg: &ChainConfig, seeds: &SeedSpec, image_id: usize) -> Result<ChainResult> {
        let mut rng = seeds.stream(CHAIN_LABEL, image_id as u64);
        match self {
            Estimator::Conventional(m) => estimate_log_lr_conventional(g, task, m, cfg, &mut rng),
            Estimator::Gan(gen) => estimate_log_lr_gan(g, task, gen.as_ref(), cfg, &mut rng),
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_open(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_scores(path: impl AsRef<Path>, rows: &[ScoreRow]) -> Result<()> {
    write_csv(path.as_ref(), rows)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_open(path, e))?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<ScoreRow>, _>>()
        .map_err(|e| csv_err(path, e))?;
    if let Some(bad) = rows.iter().find(|r| r.hypothesis > 1) {
        return Err(csv_err(path, format!("image {}: hypothesis must be 0 or 1", bad.image_id)));
    }
    Ok(rows)
}

pub fn score_set(rows: &[ScoreRow]) -> Result<ScoreSet> {
    let pick = |h: u8| rows.iter().filter(|r| r.hypothesis == h).map(|r| r.log_lr).collect::<Vec<_>>();
    ScoreSet::new(pick(1), pick(0))
}

/// Empirical ROC, AUC and percentile-bootstrap interval of a score table.
pub fn roc_report(rows: &[ScoreRow], n_boot: usize, ci_level: f64, seeds: &SeedSpec) -> Result<(Vec<(f64, f64)>, RocSummary)> {
    let set = score_set(rows)?;
    let points = roc_points(&set)?;
    let auc = empirical_auc(&set)?;
    let (ci_lo, ci_hi) = bootstrap_auc_ci(&set, n_boot, ci_level, &mut seeds.stream(BOOTSTRAP_LABEL, 0))?;
    let n = rows.len() as f64;
    Ok((
        points,
        RocSummary {
            auc,
            ci_lo,
            ci_hi,
            ci_level,
            n_boot,
            n_h0: set.scores_h0.len(),
            n_h1: set.scores_h1.len(),
            mean_acceptance_rate: rows.iter().map(|r| r.acceptance_rate).sum::<f64>() / n,
            mean_std_err: rows.iter().map(|r| r.std_err).sum::<f64>() / n,
        },
    ))
}

#[derive(Serialize)]
struct RocRow {
    fpr: f64,
    tpr: f64,
}

pub fn write_roc(path: impl AsRef<Path>, points: &[(f64, f64)]) -> Result<()> {
    let rows: Vec<RocRow> = points.iter().map(|&(fpr, tpr)| RocRow { fpr, tpr }).collect();
    write_csv(path.as_ref(), &rows)
}

pub fn write_summary(path: impl AsRef<Path>, summary: &Summary) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn refuse_existing(paths: &[PathBuf]) -> Result<()> {
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(Error::OutputExists(p.clone())),
        None => Ok(()),
    }
}

/// Scores every image of the dataset with the configured estimator and
/// writes scores, chain diagnostics, ROC points and the summary to `out_dir`.
///
/// Results depend only on the configuration: each image has its own chain
/// stream and rows are kept in image order whatever the thread count. If some
/// chains fail, the successful scores are still written together with a
/// failures file, and the first failure is returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    let outputs: Vec<PathBuf> = [SCORES_FILE, CHAINS_FILE, ROC_FILE, SUMMARY_FILE, FAILURES_FILE]
        .iter()
        .map(|f| out.join(f))
        .collect();
    refuse_existing(&outputs)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let dataset = match &cfg.dataset_dir {
        Some(dir) => load_dataset(dir)?,
        None => generate_dataset(cfg, out.join(DATASET_SUBDIR))?,
    };
    if dataset.mode != cfg.mode {
        return Err(Error::Config(format!(
            "dataset at {} was generated for a different task mode",
            dataset.dir.display()
        )));
    }

    let task = cfg.task()?;
    let chain = cfg.chain_config();
    let estimator = match cfg.sampler {
        SamplerKind::Conventional => Estimator::Conventional(cfg.lumpy_model()?),
        SamplerKind::Gan => Estimator::Gan(cfg.generator()?),
    };
    let seeds = cfg.seed_spec();
    let results = score_dataset(&dataset, &task, &chain, &estimator, &seeds, cfg.threads)?;

    let mut scores = Vec::new();
    let mut diagnostics = Vec::new();
    let mut failures = Vec::new();
    for (entry, res) in dataset.entries.iter().zip(results) {
        match res {
            Ok(r) => {
                scores.push(ScoreRow {
                    image_id: entry.image_id,
                    hypothesis: entry.hypothesis,
                    log_lr: r.log_lr_estimate,
                    acceptance_rate: r.acceptance_rate,
                    std_err: r.std_err,
                });
                diagnostics.push(ChainDiagnostics {
                    image_id: entry.image_id,
                    n_proposed: r.n_proposed,
                    n_accepted: r.n_accepted,
                    n_kept: r.n_kept,
                    proposal_step: r.proposal_step.unwrap_or(f64::NAN),
                });
            }
            Err(e) => failures.push((entry.image_id, e)),
        }
    }
    write_scores(out.join(SCORES_FILE), &scores)?;
    write_csv(&out.join(CHAINS_FILE), &diagnostics)?;
    if let Some((image_id, _)) = failures.first() {
        #[derive(Serialize)]
        struct Failure<'a> {
            image_id: usize,
            error: &'a str,
        }
        let text: Vec<String> = failures.iter().map(|(_, e)| e.to_string()).collect();
        let rows: Vec<Failure> = failures
            .iter()
            .zip(&text)
            .map(|((id, _), t)| Failure { image_id: *id, error: t })
            .collect();
        write_csv(&out.join(FAILURES_FILE), &rows)?;
        let image_id = *image_id;
        let (_, source) = failures.swap_remove(0);
        return Err(Error::ImageChain {
            image_id,
            source: Box::new(source),
        });
    }

    let (roc, roc_summary) = roc_report(&scores, cfg.n_boot, cfg.ci_level, &seeds)?;
    let summary = Summary {
        roc: roc_summary,
        config: Some(cfg.clone()),
    };
    write_roc(out.join(ROC_FILE), &roc)?;
    write_summary(out.join(SUMMARY_FILE), &summary)?;
    Ok(ExperimentOutput {
        scores,
        diagnostics,
        roc,
        summary,
    })
}

fn score_dataset(
    dataset: &Dataset,
    task: &DetectionTask,
    chain: &ChainConfig,
    estimator: &Estimator,
    seeds: &SeedSpec,
    threads: usize,
) -> Result<Vec<Result<ChainResult>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        dataset
            .entries
            .par_iter()
            .map(|entry| {
                let g = dataset.image(entry)?;
                estimator.run(&g, task, chain, seeds, entry.image_id)
            })
            .collect()
    }))
}
