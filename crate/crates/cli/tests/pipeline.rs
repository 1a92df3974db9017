use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use ggdgan::data_sim::NoiseLevel;
use ggdgan::io::read_volume;
use ggdgan::training::Task;
use ggdgan_cli::commands::{
    cmd_evaluate, cmd_infer, cmd_simulate, cmd_train, ReportRow, CHECKPOINT, REPORT_CSV,
    SUMMARY_JSON,
};
use ggdgan_cli::dataset::{Dataset, Split};
use ggdgan_cli::{run, Cli, CliError, RunConfig};

fn tiny(root: &Path, task: Task) -> RunConfig {
    let mut cfg = RunConfig::for_task(task);
    cfg.paths.dataset = root.join("dataset");
    cfg.paths.checkpoints = root.join("ckpt");
    cfg.paths.predictions = root.join("pred");
    cfg.paths.reports = root.join("reports");
    cfg.data.shape = [4, 32, 32];
    cfg.data.n_train = 2;
    cfg.data.n_val = 1;
    cfg.data.n_test = 2;
    cfg.data.lesion.radius = 2.0;
    cfg.generator.base_width = 4;
    cfg.discriminator.layer_widths = vec![4, 8, 8];
    cfg.train.batch_size = 4;
    cfg.train.epochs = 2;
    cfg.train.max_steps = Some(2);
    cfg.inference.mc_passes = 3;
    cfg
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(
                    p.strip_prefix(base).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn read_rows(path: &Path) -> Vec<ReportRow> {
    csv::Reader::from_path(path)
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn simulate_layout_and_overwrite_guard() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path(), Task::Qe);
    let m = cmd_simulate(&cfg, false).unwrap();
    assert_eq!(
        m.splits.train.len() + m.splits.val.len() + m.splits.test.len(),
        5
    );
    assert_eq!(m.noise_levels.len(), 4);
    assert!(m.noise_levels.windows(2).all(|w| w[1].sigma > w[0].sigma));
    assert!(m.mask_file.is_some() && m.lesions.is_empty());
    for level in NoiseLevel::ALL {
        for id in &m.splits.test {
            for role in ["input", "target"] {
                let (v, man) = read_volume(
                    &cfg.paths
                        .dataset
                        .join(Split::Test(level).dir())
                        .join(format!("{id}_{role}")),
                )
                .unwrap();
                assert_eq!(v.shape(), [4, 32, 32]);
                assert_eq!(man.noise_spec.unwrap().level, level);
            }
        }
    }
    assert!(cfg.paths.dataset.join("config.toml").is_file());
    assert!(matches!(
        cmd_simulate(&cfg, false),
        Err(CliError::OutputExists(_))
    ));
    cmd_simulate(&cfg, true).unwrap();
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let mut a = tiny(&tmp.path().join("a"), Task::Mp);
    let b = tiny(&tmp.path().join("b"), Task::Mp);
    cmd_simulate(&a, false).unwrap();
    cmd_simulate(&b, false).unwrap();
    let (sa, sb) = (snapshot(&a.paths.dataset), snapshot(&b.paths.dataset));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        if k != Path::new("config.toml") {
            assert!(v == &sb[k], "{} differs", k.display());
        }
    }
    a.set_seed(1);
    cmd_simulate(&a, true).unwrap();
    let sc = snapshot(&a.paths.dataset);
    let key = Path::new("train").join("vol000_input.f32");
    assert_ne!(sc[&key], sb[&key]);
}

#[test]
fn mp_lesion_subset() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path(), Task::Mp);
    let m = cmd_simulate(&cfg, false).unwrap();
    assert_eq!(m.splits.lesion, m.splits.test);
    assert!(m.mask_file.is_none());
    assert_eq!(m.noise_levels[0].sigma, 0.0);
    let ds = Dataset::open(&cfg.paths.dataset).unwrap();
    for rec in &m.lesions {
        let support = ds.read(Split::Lesion, &rec.volume_id, "lesion").unwrap();
        let n = support.data().iter().filter(|&&s| s == 1.0).count();
        assert_eq!(n, rec.support_voxels);
        assert!(n > 0);
    }
}

#[test]
fn full_coverage_zero_sigma_is_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.toml");
    let cfg = tiny(tmp.path(), Task::Qe);
    fs::write(&cfg_path, cfg.to_toml().unwrap()).unwrap();
    let out = tmp.path().join("ds");
    let args = [
        "ggdgan",
        "simulate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--coverage",
        "1.0",
        "--sigma",
        "0",
    ];
    run(Cli::try_parse_from(args).unwrap()).unwrap();
    let ds = Dataset::open(&out).unwrap();
    for split in [Split::Train, Split::Val, Split::Test(NoiseLevel::Nl0)] {
        let pairs = ds.pairs(split).unwrap();
        for (i, t) in pairs.input.iter().zip(&pairs.target) {
            for (a, b) in i.data().iter().zip(t.data()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn train_infer_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path(), Task::Qe);
    cmd_simulate(&cfg, false).unwrap();
    let log = cmd_train(&cfg, false).unwrap();
    assert_eq!(log.step_loss_u.len(), 2);
    let ckpt = cfg.paths.checkpoints.join(CHECKPOINT);
    assert!(ckpt.is_file());
    let lines = fs::read_to_string(cfg.paths.checkpoints.join("train_log.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), log.epochs.len());

    for level in NoiseLevel::ALL {
        let dirs = cmd_infer(&cfg, &ckpt, Split::Test(level), false, false).unwrap();
        assert_eq!(dirs.len(), 2);
        for d in &dirs {
            let (s, _) = read_volume(&d.join("sigma")).unwrap();
            let (sa, _) = read_volume(&d.join("sigma_aleatoric")).unwrap();
            let (se, _) = read_volume(&d.join("sigma_epistemic")).unwrap();
            let (x, _) = read_volume(&d.join("prediction")).unwrap();
            assert_eq!(x.shape(), [4, 32, 32]);
            for ((s, a), e) in s.data().iter().zip(sa.data()).zip(se.data()) {
                let (s, a, e) = (*s as f64, *a as f64, *e as f64);
                assert!((s * s - (a * a + e * e)).abs() <= 1e-6 * (1.0 + s * s));
            }
        }
    }

    let summary = cmd_evaluate(&cfg, false).unwrap();
    let rows = read_rows(&cfg.paths.reports.join(REPORT_CSV));
    assert_eq!(rows.len(), 2 * 4 * 4);
    let res: Vec<f64> = rows.iter().map(|r| r.mean_abs_residual).collect();
    let sig: Vec<f64> = rows.iter().map(|r| r.mean_sigma).collect();
    let beta: Vec<f64> = rows.iter().map(|r| r.mean_beta).collect();
    assert!((summary.r_residual_sigma.unwrap() - pearson(&res, &sig)).abs() < 1e-9);
    assert!((summary.r_residual_beta.unwrap() - pearson(&res, &beta)).abs() < 1e-9);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cfg.paths.reports.join(SUMMARY_JSON)).unwrap())
            .unwrap();
    assert_eq!(json["levels"].as_array().unwrap().len(), 4);
    assert_eq!(json["beta_trend"]["rows"].as_array().unwrap().len(), 4);

    // A checkpoint from a different slab depth is rejected.
    cfg.generator.in_channels = 5;
    cfg.discriminator.in_channels = 5;
    cfg.paths.predictions = tmp.path().join("pred5");
    assert!(cmd_infer(&cfg, &ckpt, Split::Test(NoiseLevel::Nl0), false, false).is_err());
}

#[test]
fn deterministic_inference_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path(), Task::Qe);
    cmd_simulate(&cfg, false).unwrap();
    cmd_train(&cfg, false).unwrap();
    let ckpt = cfg.paths.checkpoints.join(CHECKPOINT);
    cfg.inference.mc_passes = 1;
    cfg.inference.dropout_active = false;
    let split = Split::Test(NoiseLevel::Nl2);
    cmd_infer(&cfg, &ckpt, split, true, false).unwrap();
    let first = snapshot(&cfg.paths.predictions);
    cmd_infer(&cfg, &ckpt, split, true, true).unwrap();
    assert_eq!(first, snapshot(&cfg.paths.predictions));
    for (k, v) in &first {
        if k.ends_with("sigma_epistemic.f32") {
            assert!(v.iter().all(|&b| b == 0));
        }
    }
}

#[test]
fn evaluate_perfect_predictions_and_unmatched_ids() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path(), Task::Mp);
    let m = cmd_simulate(&cfg, false).unwrap();
    let ds = Dataset::open(&cfg.paths.dataset).unwrap();
    for level in NoiseLevel::ALL {
        for id in &m.splits.test {
            let dir = cfg
                .paths
                .predictions
                .join(Split::Test(level).dir())
                .join(id);
            let target = ds.read(Split::Test(level), id, "target").unwrap();
            let ones = ggdgan::volume::Volume::new(
                target.shape(),
                target.spacing(),
                vec![0.1; target.data().len()],
            )
            .unwrap();
            for (name, v) in [
                ("prediction", &target),
                ("sigma", &ones),
                ("alpha", &ones),
                ("beta", &ones),
            ] {
                ggdgan::io::write_volume(&dir.join(name), v, Default::default()).unwrap();
            }
        }
    }
    let summary = cmd_evaluate(&cfg, false).unwrap();
    let rows = read_rows(&cfg.paths.reports.join(REPORT_CSV));
    assert_eq!(rows.len(), 2 * 4 * 4);
    for r in &rows {
        assert!((r.ssim - 1.0).abs() < 1e-12);
        assert_eq!(r.psnr, f64::INFINITY);
        assert!(r.rrmse == 0.0 || r.rrmse.is_nan());
        assert_eq!(r.mean_abs_residual, 0.0);
    }
    assert!(summary.r_residual_sigma.is_none());
    assert!(summary.levels.iter().all(|l| l.psnr.mean.is_none()));

    fs::remove_dir_all(
        cfg.paths
            .predictions
            .join("test")
            .join("NL1")
            .join(&m.splits.test[0]),
    )
    .unwrap();
    fs::create_dir_all(
        cfg.paths
            .predictions
            .join("test")
            .join("NL1")
            .join("vol999"),
    )
    .unwrap();
    match cmd_evaluate(&cfg, true) {
        Err(CliError::Unmatched(ids)) => {
            assert_eq!(ids.len(), 2);
            assert!(ids.iter().any(|s| s.contains(&m.splits.test[0])));
            assert!(ids.iter().any(|s| s.contains("vol999")));
        }
        other => panic!("expected unmatched ids, got {other:?}"),
    }
}

#[test]
fn exit_codes() {
    let diverged = CliError::Core(ggdgan::Error::Diverged {
        epoch: 0,
        step: 3,
        detail: "{}".into(),
    });
    assert_eq!(diverged.exit_code(), 2);
    assert_eq!(CliError::Config("x".into()).exit_code(), 1);
    assert!(Cli::try_parse_from(["ggdgan", "bogus"]).is_err());
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("none.toml");
    let err = run(
        Cli::try_parse_from(["ggdgan", "train", "--config", missing.to_str().unwrap()]).unwrap(),
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn divergence_writes_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path(), Task::Qe);
    cmd_simulate(&cfg, false).unwrap();
    cfg.train.lr_init = 1e12;
    cfg.train.epochs = 20;
    cfg.train.max_steps = None;
    let err = cmd_train(&cfg, false).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    let dump: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(cfg.paths.checkpoints.join("divergence.json")).unwrap(),
    )
    .unwrap();
    assert!(dump["step"].as_u64().is_some());
    assert!(!cfg.paths.checkpoints.join(CHECKPOINT).exists());
}
