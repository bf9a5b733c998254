//! Flat TOML experiment configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{DetectionTask, SignalSpec};
use crate::generator::{analytic_lumpy_generator, load_generator, GeneratorSpec};
use crate::image::Grid;
use crate::imaging::{GaussianNoise, PsfParams};
use crate::lumpy::{LumpCount, LumpyModel, LumpyPrior, LumpyProposalCfg};
use crate::mcmc::{ChainConfig, WarmupConfig};
use crate::seed::SeedSpec;
use crate::signal::{Range, SkeSignalCfg, SksPrior};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Ske,
    Sks,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Conventional,
    Gan,
}

/// Every key has a default, so an empty file is a valid SKE/conventional run.
/// With `lump_count_fixed` set the conventional chain uses move-only
/// proposals and `p_move`/`p_add`/`p_remove` are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: TaskMode,
    pub sampler: SamplerKind,

    pub nx: usize,
    pub ny: usize,
    pub psf_width: f64,
    pub psf_height: f64,

    pub lump_mean: f64,
    pub lump_count_fixed: Option<usize>,
    pub lump_amplitude: f64,
    pub lump_width: f64,

    /// Defaults to 20 for SKE and 10 for SKS.
    pub noise_sigma: Option<f64>,

    pub signal_amplitude: f64,
    pub signal_width: f64,
    /// SKE signal centre; the grid centre when absent.
    pub signal_center: Option<[f64; 2]>,
    pub sks_center_x: [f64; 2],
    pub sks_center_y: [f64; 2],
    pub sks_w1: [f64; 2],
    pub sks_w2: [f64; 2],

    /// `"analytic"` or a path to a network header file.
    pub generator: String,
    /// Lump count of the analytic generator; defaults to `lump_count_fixed`.
    pub generator_lumps: Option<usize>,

    pub n_iter: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub rwmh_step: f64,
    pub mala_step: Option<f64>,
    pub warmup_iterations: usize,
    pub warmup_stages: usize,
    pub warmup_initial_beta: f64,
    pub warmup_target_acceptance: f64,

    pub p_move: f64,
    pub p_add: f64,
    pub p_remove: f64,
    pub move_step: f64,

    pub n_pairs: usize,
    pub paired_backgrounds: bool,
    pub seed: u64,
    pub threads: usize,
    pub out_dir: PathBuf,
    /// Existing dataset to score; otherwise one is generated under `out_dir`.
    pub dataset_dir: Option<PathBuf>,

    pub n_boot: usize,
    pub ci_level: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let chain = ChainConfig::default();
        let warm = WarmupConfig::default();
        let prop = LumpyProposalCfg::default();
        ExperimentConfig {
            mode: TaskMode::Ske,
            sampler: SamplerKind::Conventional,
            nx: 64,
            ny: 64,
            psf_width: 0.5,
            psf_height: 40.0,
            lump_mean: 5.0,
            lump_count_fixed: None,
            lump_amplitude: 1.0,
            lump_width: 7.0,
            noise_sigma: None,
            signal_amplitude: 0.2,
            signal_width: 3.0,
            signal_center: None,
            sks_center_x: [16.0, 48.0],
            sks_center_y: [16.0, 48.0],
            sks_w1: [1.0, 5.0],
            sks_w2: [1.0, 5.0],
            generator: "analytic".into(),
            generator_lumps: None,
            n_iter: chain.n_iter,
            burn_in: chain.burn_in,
            thinning: chain.thinning,
            rwmh_step: chain.rwmh_step,
            mala_step: None,
            warmup_iterations: 50_000,
            warmup_stages: warm.stages,
            warmup_initial_beta: warm.initial_beta,
            warmup_target_acceptance: warm.target_acceptance,
            p_move: prop.p_move,
            p_add: prop.p_add,
            p_remove: prop.p_remove,
            move_step: prop.move_step,
            n_pairs: 200,
            paired_backgrounds: false,
            seed: 0,
            threads: 1,
            out_dir: PathBuf::from("out"),
            dataset_dir: None,
            n_boot: 2000,
            ci_level: 0.95,
        }
    }
}

fn range(r: [f64; 2]) -> Range {
    Range::new(r[0], r[1])
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every derived object and, in gan mode, that the generator loads.
    pub fn validate(&self) -> Result<()> {
        self.task()?;
        self.chain_config().validate()?;
        self.lumpy_model()?;
        if self.n_pairs == 0 {
            return Err(Error::Config("n_pairs must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.n_boot < 100 {
            return Err(Error::Config("n_boot must be at least 100".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Config("ci_level must lie in (0, 1)".into()));
        }
        if let Some(dir) = &self.dataset_dir {
            if !dir.join(super::MANIFEST_FILE).is_file() {
                return Err(Error::Config(format!("dataset_dir {} has no manifest", dir.display())));
            }
        }
        if self.sampler == SamplerKind::Gan {
            self.generator()?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.nx, self.ny)
    }

    pub fn psf(&self) -> Result<PsfParams> {
        let psf = PsfParams {
            width: self.psf_width,
            height: self.psf_height,
        };
        psf.validate()?;
        Ok(psf)
    }

    pub fn noise(&self) -> Result<GaussianNoise> {
        let default = match self.mode {
            TaskMode::Ske => 20.0,
            TaskMode::Sks => 10.0,
        };
        GaussianNoise::new(self.noise_sigma.unwrap_or(default))
    }

    pub fn lumpy_prior(&self) -> Result<LumpyPrior> {
        let prior = LumpyPrior {
            count: match self.lump_count_fixed {
                Some(k) => LumpCount::Fixed(k),
                None => LumpCount::Poisson { mean: self.lump_mean },
            },
            amplitude: self.lump_amplitude,
            width: self.lump_width,
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn task(&self) -> Result<DetectionTask> {
        let grid = self.grid()?;
        let signal = match self.mode {
            TaskMode::Ske => {
                let mut cfg = SkeSignalCfg::centered(grid);
                cfg.amplitude = self.signal_amplitude;
                cfg.width = self.signal_width;
                if let Some(c) = self.signal_center {
                    cfg.center = c;
                }
                SignalSpec::Ske(cfg)
            }
            TaskMode::Sks => SignalSpec::Sks(SksPrior {
                center_x: range(self.sks_center_x),
                center_y: range(self.sks_center_y),
                w1: range(self.sks_w1),
                w2: range(self.sks_w2),
                amplitude: self.signal_amplitude,
            }),
        };
        let task = DetectionTask {
            signal,
            noise: self.noise()?,
            psf: self.psf()?,
            grid,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            n_iter: self.n_iter,
            burn_in: self.burn_in,
            thinning: self.thinning,
            rwmh_step: self.rwmh_step,
            mala_step: self.mala_step,
            record_trace: false,
            warmup: WarmupConfig {
                iterations: self.warmup_iterations,
                stages: self.warmup_stages,
                initial_beta: self.warmup_initial_beta,
                target_acceptance: self.warmup_target_acceptance,
            },
        }
    }

    pub fn proposal(&self) -> LumpyProposalCfg {
        if self.lump_count_fixed.is_some() {
            LumpyProposalCfg::move_only(self.move_step)
        } else {
            LumpyProposalCfg {
                p_move: self.p_move,
                p_add: self.p_add,
                p_remove: self.p_remove,
                move_step: self.move_step,
            }
        }
    }

    pub fn lumpy_model(&self) -> Result<LumpyModel> {
        LumpyModel::new(self.lumpy_prior()?, self.proposal(), self.psf()?, self.grid()?)
    }

    pub fn generator(&self) -> Result<GeneratorSpec> {
        if self.generator == "analytic" {
            let lumps = self.generator_lumps.or(self.lump_count_fixed).ok_or_else(|| {
                Error::Config("the analytic generator needs generator_lumps or lump_count_fixed".into())
            })?;
            let gen = analytic_lumpy_generator(lumps, self.lumpy_prior()?, self.psf()?, self.grid()?)?;
            Ok(Arc::new(gen))
        } else {
            let path = Path::new(&self.generator);
            if !path.is_file() {
                return Err(Error::Config(format!("generator file {} does not exist", path.display())));
            }
            let net = load_generator(path)?;
            Ok(Arc::new(net))
        }
    }

    pub fn seed_spec(&self) -> SeedSpec {
        SeedSpec::new(self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_protocol_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.n_pairs, 200);
        assert_eq!(cfg.noise().unwrap().sigma, 20.0);
        let chain = cfg.chain_config();
        assert_eq!((chain.n_iter, chain.burn_in, chain.rwmh_step), (100_000, 1_000, 0.1));
        cfg.validate().unwrap();
    }

    #[test]
    fn sks_noise_default() {
        let cfg = ExperimentConfig::from_toml_str("mode = \"sks\"").unwrap();
        assert_eq!(cfg.noise().unwrap().sigma, 10.0);
        assert!(matches!(cfg.task().unwrap().signal, SignalSpec::Sks(_)));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_toml_str("n_pair = 3").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("n_pair")), "{err}");
        assert!(ExperimentConfig::from_toml_str("mode = \"skx\"").is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = ExperimentConfig {
            mode: TaskMode::Sks,
            sampler: SamplerKind::Gan,
            lump_count_fixed: Some(5),
            mala_step: Some(0.01),
            dataset_dir: Some("data".into()),
            ..ExperimentConfig::default()
        };
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn mode_consistency_checks() {
        let mut cfg = ExperimentConfig {
            sampler: SamplerKind::Gan,
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.lump_count_fixed = Some(5);
        cfg.validate().unwrap();
        cfg.generator = "/nonexistent/net.json".into();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let cfg = ExperimentConfig::default();
        let cfg = ExperimentConfig {
            burn_in: cfg.n_iter,
            ..cfg
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            sks_w1: [3.0, 1.0],
            mode: TaskMode::Sks,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fixed_count_forces_move_only() {
        let cfg = ExperimentConfig {
            lump_count_fixed: Some(5),
            ..ExperimentConfig::default()
        };
        let p = cfg.proposal();
        assert_eq!((p.p_move, p.p_add, p.p_remove), (1.0, 0.0, 0.0));
    }
}
