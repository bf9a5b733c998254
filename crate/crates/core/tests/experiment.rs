use std::fs;

use iomcmc_core::experiment::{
    generate_dataset, load_dataset, read_scores, run_experiment, ExperimentConfig, SamplerKind, TaskMode, MANIFEST_FILE,
    SCORES_FILE,
};
use iomcmc_core::generator::{save_network, Activation, DenseLayer, DenseNetwork};
use iomcmc_core::signal::measured_signal_ske;
use iomcmc_core::*;

fn small(mode: TaskMode, out: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        nx: 24,
        ny: 24,
        signal_center: Some([12.0, 12.0]),
        sks_center_x: [6.0, 18.0],
        sks_center_y: [6.0, 18.0],
        lump_count_fixed: Some(2),
        n_pairs: 3,
        n_iter: 1_500,
        burn_in: 100,
        warmup_iterations: 500,
        warmup_stages: 10,
        n_boot: 200,
        seed: 17,
        out_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

#[test]
fn dataset_is_deterministic_and_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    for mode in [TaskMode::Ske, TaskMode::Sks] {
        let cfg = small(mode, dir.path());
        let a = dir.path().join(format!("{mode:?}-a"));
        let b = dir.path().join(format!("{mode:?}-b"));
        let ds = generate_dataset(&cfg, &a).unwrap();
        generate_dataset(&cfg, &b).unwrap();
        assert_eq!(ds.entries.len(), 6);
        for e in &ds.entries {
            assert_eq!(fs::read(a.join(&e.file)).unwrap(), fs::read(b.join(&e.file)).unwrap());
            assert_eq!(e.hypothesis as usize, e.image_id % 2);
            assert_eq!(e.pair, e.image_id / 2);
            assert_eq!(e.alpha.is_some(), mode == TaskMode::Sks && e.hypothesis == 1);
        }
        let manifest = fs::read_to_string(a.join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest, fs::read_to_string(b.join(MANIFEST_FILE)).unwrap());
        let header = manifest.lines().next().unwrap();
        let alpha_cols = header.split(',').filter(|c| c.starts_with("alpha_")).count();
        assert_eq!(alpha_cols, if mode == TaskMode::Sks { 5 } else { 0 });
        assert_eq!(manifest.lines().count(), 7);

        let back = load_dataset(&a).unwrap();
        assert_eq!(back.entries, ds.entries);
        assert_eq!(back.mode, mode);
        assert!(matches!(generate_dataset(&cfg, &a), Err(Error::OutputExists(_))));
    }
}

#[test]
fn backgrounds_independent_unless_paired() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(TaskMode::Ske, dir.path());
    let ds = generate_dataset(&cfg, dir.path().join("indep")).unwrap();
    assert_ne!(ds.entries[0].background_seed, ds.entries[1].background_seed);
    cfg.paired_backgrounds = true;
    let ds = generate_dataset(&cfg, dir.path().join("paired")).unwrap();
    assert_eq!(ds.entries[0].background_seed, ds.entries[1].background_seed);
    assert_ne!(ds.entries[0].noise_seed, ds.entries[1].noise_seed);
}

#[test]
fn conventional_run_writes_outputs_and_refuses_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(TaskMode::Ske, &dir.path().join("run"));
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.scores.len(), 6);
    assert!(out.scores.iter().all(|r| r.log_lr.is_finite() && r.acceptance_rate > 0.0));
    let auc = out.summary.roc.auc;
    assert!((0.0..=1.0).contains(&auc));
    assert!(out.summary.roc.ci_lo <= auc && auc <= out.summary.roc.ci_hi);
    assert_eq!(read_scores(cfg.out_dir.join(SCORES_FILE)).unwrap(), out.scores);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cfg.out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["n_pairs"], 3);
    assert!(summary["mean_acceptance_rate"].as_f64().unwrap() > 0.0);
    assert!(out.diagnostics.iter().all(|d| d.proposal_step > 0.0));
    assert!(matches!(run_experiment(&cfg), Err(Error::OutputExists(_))));
}

#[test]
fn constant_generator_scores_are_bke() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(TaskMode::Ske, &dir.path().join("run"));
    let grid = cfg.grid().unwrap();
    let b0: Vec<f64> = (0..grid.len()).map(|m| 20.0 + (m % 7) as f64).collect();
    let layer = DenseLayer {
        inputs: 2,
        outputs: grid.len(),
        activation: Activation::Identity,
        weights: vec![0.0; 2 * grid.len()],
        bias: b0.clone(),
    };
    let prior = LatentPrior::new(LatentPriorKind::StandardNormal, 2).unwrap();
    let net = DenseNetwork::new(prior, grid, vec![layer], 1.0, 0.0).unwrap();
    let header = dir.path().join("constant.json");
    save_network(&net, &header).unwrap();
    cfg.sampler = SamplerKind::Gan;
    cfg.generator = header.to_string_lossy().into_owned();
    let out = run_experiment(&cfg).unwrap();

    let task = cfg.task().unwrap();
    let SignalSpec::Ske(sig) = task.signal else { unreachable!() };
    let s = measured_signal_ske(&sig, &task.psf, grid).unwrap();
    let b0 = Image::from_pixels(grid, b0).unwrap();
    let ds = load_dataset(cfg.out_dir.join("dataset")).unwrap();
    for (row, entry) in out.scores.iter().zip(&ds.entries) {
        let g = ds.image(entry).unwrap();
        let exact = log_lambda_bke(&g, &b0, &s, &task.noise).unwrap();
        assert!((row.log_lr - exact).abs() < 1e-9 * exact.abs().max(1.0), "{} vs {exact}", row.log_lr);
        assert!(row.std_err.abs() < 1e-9);
    }
}

#[test]
fn chain_failure_reports_image_and_keeps_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(TaskMode::Ske, &dir.path().join("run"));
    let data = dir.path().join("data");
    let ds = generate_dataset(&cfg, &data).unwrap();
    let victim = data.join(&ds.entries[3].file);
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..bytes.len() / 2]).unwrap();
    cfg.dataset_dir = Some(data);
    match run_experiment(&cfg) {
        Err(Error::ImageChain { image_id, .. }) => assert_eq!(image_id, 3),
        other => panic!("expected a chain failure, got {other:?}"),
    }
    let kept = read_scores(cfg.out_dir.join(SCORES_FILE)).unwrap();
    assert_eq!(kept.iter().map(|r| r.image_id).collect::<Vec<_>>(), vec![0, 1, 2, 4, 5]);
    let failures = fs::read_to_string(cfg.out_dir.join("failures.csv")).unwrap();
    assert!(failures.lines().nth(1).unwrap().starts_with("3,"));
}

#[test]
fn dataset_mode_must_match() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(TaskMode::Ske, dir.path());
    let data = dir.path().join("data");
    generate_dataset(&cfg, &data).unwrap();
    let mut sks = small(TaskMode::Sks, &dir.path().join("run"));
    sks.dataset_dir = Some(data);
    assert!(matches!(run_experiment(&sks), Err(Error::Config(_))));
}
