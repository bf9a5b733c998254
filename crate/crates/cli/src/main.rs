use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iomcmc_core::experiment::{
    generate_dataset, read_forward_check, read_scores, roc_report, run_experiment, validate_generator, write_forward_check,
    write_roc, write_summary, ExperimentConfig, Summary, DATASET_SUBDIR, ROC_FILE, SUMMARY_FILE,
};
use iomcmc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "iomcmc", version, about = "Ideal-observer likelihood-ratio experiments by MCMC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured worker thread count.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write signal-absent/present image pairs and a manifest to `<out>/dataset`.
    GenData(Common),
    /// Score every image with the configured sampler and write ROC outputs.
    Run(Common),
    /// ROC points, AUC and bootstrap interval from an existing scores file.
    Roc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scores: PathBuf,
    },
    /// Check a generator: vjp against finite differences, determinism and,
    /// optionally, a forward-check CSV produced by another implementation.
    ValidateGenerator {
        #[command(flatten)]
        common: Common,
        /// Network header file, or `analytic` for the configured lumpy generator.
        #[arg(long)]
        generator: Option<String>,
        #[arg(long, default_value_t = 10)]
        cases: usize,
        #[arg(long)]
        forward_check: Option<PathBuf>,
        /// Write a forward-check CSV from this generator instead of checking one.
        #[arg(long)]
        emit_forward_check: Option<PathBuf>,
    },
}

fn gen_data(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    cfg.validate()?;
    let dir = cfg.out_dir.join(DATASET_SUBDIR);
    let ds = generate_dataset(&cfg, &dir)?;
    println!("wrote {} images to {}", ds.entries.len(), dir.display());
    Ok(())
}

fn run(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let out = run_experiment(&cfg)?;
    let s = &out.summary.roc;
    println!(
        "AUC {:.4} [{:.4}, {:.4}] n = {}+{}  mean acceptance {:.3}",
        s.auc, s.ci_lo, s.ci_hi, s.n_h0, s.n_h1, s.mean_acceptance_rate
    );
    println!("outputs in {}", cfg.out_dir.display());
    Ok(())
}

fn refuse(path: &Path) -> Result<()> {
    if path.exists() {
        return Err(Error::OutputExists(path.to_path_buf()));
    }
    Ok(())
}

fn roc(common: &Common, scores: &Path) -> Result<()> {
    let cfg = common.config()?;
    let rows = read_scores(scores)?;
    let (points, roc) = roc_report(&rows, cfg.n_boot, cfg.ci_level, &cfg.seed_spec())?;
    let (roc_path, summary_path) = (cfg.out_dir.join(ROC_FILE), cfg.out_dir.join(SUMMARY_FILE));
    refuse(&roc_path)?;
    refuse(&summary_path)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write_roc(&roc_path, &points)?;
    let summary = Summary {
        roc,
        config: common.config.is_some().then_some(cfg.clone()),
    };
    write_summary(&summary_path, &summary)?;
    let s = &summary.roc;
    println!("AUC {:.4} [{:.4}, {:.4}] n = {}+{}", s.auc, s.ci_lo, s.ci_hi, s.n_h0, s.n_h1);
    Ok(())
}

fn validate(
    common: &Common,
    generator: Option<&str>,
    cases: usize,
    forward_check: Option<&Path>,
    emit: Option<&Path>,
) -> Result<bool> {
    let mut cfg = common.config()?;
    if let Some(g) = generator {
        cfg.generator = g.to_string();
    }
    let gen = cfg.generator()?;
    let mut rng = cfg.seed_spec().stream("validate", 0);
    if let Some(path) = emit {
        refuse(path)?;
        write_forward_check(gen.as_ref(), cases, &mut rng, path)?;
        println!("wrote {cases} forward-check cases to {}", path.display());
        return Ok(true);
    }
    let fwd = match forward_check {
        Some(p) => Some(read_forward_check(p, gen.latent_prior().dim, gen.grid().len())?),
        None => None,
    };
    let report = validate_generator(gen.as_ref(), cases, fwd.as_deref(), &mut rng)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::GenData(c) => gen_data(c).map(|_| true),
        Command::Run(c) => run(c).map(|_| true),
        Command::Roc { common, scores } => roc(common, scores).map(|_| true),
        Command::ValidateGenerator {
            common,
            generator,
            cases,
            forward_check,
            emit_forward_check,
        } => validate(common, generator.as_deref(), *cases, forward_check.as_deref(), emit_forward_check.as_deref()),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: generator validation failed");
            ExitCode::from(7)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
