use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fkd::analysis::MismatchScenario;
use fkd::cli::{estimate_rows, EstimateArgs};
use fkd::config::{AnalysisConfig, BenchConfig, LabelsConfig, OutputConfig, RelabelConfig, RunConfig, RUN_METADATA};
use fkd::label_store::{decode, estimate_fkd_storage, StorageModel, HEADER_BYTES};
use fkd::numeric::Temperature;
use fkd::pipeline::{apply_crop, CropSamplerConfig, WorldSpec};
use fkd::quantize::QuantizationMode;
use fkd::relabel::LabelMap;
use fkd::teacher::{teacher_soft_label, Teacher, TeacherOutput, TeacherSpec};
use fkd::train::{ScheduleKind, SgdConfig, TrainConfig};
use tempfile::TempDir;

fn config(images: usize, classes: usize, mode: QuantizationMode, stored: usize, m: usize) -> RunConfig {
    RunConfig {
        world: WorldSpec::new(1, images, 16, 3, classes),
        teacher: TeacherSpec::tabular(2, classes, 8, 3),
        sampler: CropSamplerConfig {
            resolution: 8,
            ..Default::default()
        },
        labels: LabelsConfig {
            mode,
            crops_per_image: stored,
            seed: 3,
        },
        train: TrainConfig {
            batch_size: 8 * m,
            crops_per_image: m,
            passes: 3,
            base_lr: 0.1,
            schedule: ScheduleKind::SerratedCosine,
            sgd: SgdConfig::default(),
            hidden: 8,
            resolution: 8,
            init_seed: 4,
            order_seed: 5,
            tau: Temperature::ONE,
        },
        relabel: RelabelConfig::default(),
        analysis: AnalysisConfig::default(),
        bench: BenchConfig::default(),
        output: OutputConfig {
            dir: PathBuf::from("out"),
        },
    }
}

fn write_config(dir: &Path, name: &str, cfg: &RunConfig) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

fn fkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fkd"))
        .args(args)
        .env("FKD_WORKERS", "2")
        .output()
        .expect("run fkd")
}

fn ok(args: &[&str]) -> String {
    let out = fkd(args);
    assert!(
        out.status.success(),
        "fkd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(fkd(&[]).status.code(), Some(1));
    assert_eq!(fkd(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fkd(&["estimate", "--images", "lots"]).status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_fkd"))
        .args(["estimate"])
        .env("FKD_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(fkd(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.toml", &config(4, 5, QuantizationMode::Full, 2, 1));
    // no store generated yet
    let out = fkd(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert_eq!(fkd(&["inspect", s(&dir.path().join("missing.fkdl"))]).status.code(), Some(2));
    fs::write(dir.path().join("bad.toml"), "[world]\nseed = 1\n").unwrap();
    assert_eq!(fkd(&["generate", "--config", s(&dir.path().join("bad.toml"))]).status.code(), Some(2));
}

#[test]
fn estimate_prints_the_storage_table() {
    let text = ok(&["estimate"]);
    for label in ["full", "hard", "smooth", "marginal_smooth:5", "marginal_renorm:5", "marginal_smooth:10", "relabel_full", "relabel_top5"] {
        assert!(text.lines().any(|l| l.starts_with(label)), "missing {label}");
    }
    let zero = ok(&["estimate", "--images", "0"]);
    assert!(zero.lines().skip(2).all(|l| l.split_whitespace().nth(1) == Some("0")));

    let base = EstimateArgs {
        images: 1000,
        crops: 10,
        classes: 100,
        map_size: 15,
        k: vec![5, 10],
        relabel_k: 5,
    };
    let doubled = EstimateArgs { crops: 20, ..base.clone() };
    for (a, b) in estimate_rows(&base).iter().zip(estimate_rows(&doubled)) {
        if a.label.starts_with("relabel") {
            assert_eq!(a.bytes, b.bytes);
        } else {
            assert_eq!(2 * a.bytes, b.bytes);
        }
    }
}

#[test]
fn generate_is_deterministic_and_replays_exactly() {
    let dir = TempDir::new().unwrap();
    let cfg = config(6, 5, QuantizationMode::Full, 1, 1);
    let path = write_config(dir.path(), "run.toml", &cfg);
    let summary = ok(&["generate", "--config", s(&path)]);
    assert!(summary.contains("total"));
    let again = dir.path().join("again");
    ok(&["generate", "--config", s(&path), "--out", s(&again)]);
    assert_eq!(tree(&dir.path().join("out/store")), tree(&again.join("store")));

    let teacher = Teacher::from_spec(&cfg.teacher).unwrap();
    for id in 0..6 {
        let bytes = fs::read(dir.path().join(format!("out/store/labels/img_{id:06}.fkdl"))).unwrap();
        let file = decode(&bytes).unwrap();
        assert_eq!(file.crops(), 1);
        let image = cfg.world.image(id).0;
        let region = apply_crop(&image, &file.records[0].aug, 8).unwrap();
        let TeacherOutput::Probs(p) = teacher_soft_label(&teacher, &region, Temperature::ONE).unwrap() else {
            panic!("supervised teacher")
        };
        assert_eq!(file.records[0].label.recover(5).unwrap(), p);
    }
}

#[test]
fn run_metadata_reparses_to_the_effective_config() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "run.toml", &config(3, 4, QuantizationMode::Smooth, 2, 1));
    ok(&["generate", "--config", s(&path)]);
    let effective = RunConfig::load(&path).unwrap();
    let emitted = fs::read_to_string(dir.path().join("out").join(RUN_METADATA)).unwrap();
    assert_eq!(RunConfig::parse(&emitted).unwrap(), effective);
}

#[test]
fn store_size_tracks_the_estimator() {
    let dir = TempDir::new().unwrap();
    let (n, c, m) = (10, 100, 8);
    let mut cfg = config(n, c, QuantizationMode::Full, m, 1);
    cfg.teacher = TeacherSpec::mlp(2, c, 8, 3);
    let path = write_config(dir.path(), "run.toml", &cfg);
    ok(&["generate", "--config", s(&path)]);
    let on_disk: u64 = tree(&dir.path().join("out/store/labels")).iter().map(|(_, b)| b.len() as u64).sum();
    let payload = on_disk - (n * HEADER_BYTES) as u64;
    let model = StorageModel {
        images: n as u64,
        crops_per_image: m as u64,
        classes: c as u64,
        map_size: 15,
    };
    let estimate = estimate_fkd_storage(&model, QuantizationMode::Full);
    let rel = (payload as f64 - estimate as f64).abs() / estimate as f64;
    assert!(rel < 0.01, "{payload} vs {estimate}");
}

#[test]
fn oracle_and_stored_runs_agree_and_resume_is_exact() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "run.toml", &config(16, 5, QuantizationMode::Full, 8, 2));
    ok(&["generate", "--config", s(&path)]);
    ok(&["train", "--config", s(&path)]);
    ok(&["train", "--config", s(&path), "--oracle"]);
    let out = dir.path().join("out");
    let read = |p: &str| fs::read_to_string(out.join(p)).unwrap();
    assert_eq!(read("train/metrics.csv"), read("train-oracle/metrics.csv"));
    assert_eq!(read("train/steps.csv"), read("train-oracle/steps.csv"));
    assert_eq!(read("train/metrics.csv").lines().count(), 1 + 3 * 2);

    let split = dir.path().join("split");
    // both runs read the store generated above
    let resumed = dir.path().join("resumed");
    fs::create_dir_all(&resumed).unwrap();
    copy_dir(&out.join("store"), &resumed.join("store"));
    copy_dir(&out.join("store"), &split.join("store"));
    let partial = ok(&["train", "--config", s(&path), "--out", s(&split), "--stop-after", "1"]);
    assert!(partial.starts_with("1 passes of 3"), "{partial}");
    let ckpt = split.join("train/checkpoint.fkdckpt");
    ok(&["train", "--config", s(&path), "--out", s(&resumed), "--resume", s(&ckpt)]);
    assert_eq!(
        fs::read(resumed.join("train/metrics.csv")).unwrap(),
        fs::read(out.join("train/metrics.csv")).unwrap()
    );
    assert_eq!(
        fs::read(resumed.join("train/checkpoint.fkdckpt")).unwrap(),
        fs::read(out.join("train/checkpoint.fkdckpt")).unwrap()
    );
}

fn copy_dir(from: &Path, to: &Path) {
    for (rel, bytes) in tree(from) {
        let p = to.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, bytes).unwrap();
    }
}

#[test]
fn zero_learning_rate_gives_a_flat_loss_column() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config(12, 4, QuantizationMode::Full, 1, 1);
    cfg.train.base_lr = 0.0;
    let path = write_config(dir.path(), "run.toml", &cfg);
    ok(&["generate", "--config", s(&path)]);
    ok(&["train", "--config", s(&path)]);
    let metrics = fs::read_to_string(dir.path().join("out/train/metrics.csv")).unwrap();
    let losses: Vec<f64> = metrics.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 3);
    assert!(losses.iter().all(|l| (l - losses[0]).abs() < 1e-12), "{losses:?}");
}

fn scenario_config(dir: &Path) -> RunConfig {
    let sc = MismatchScenario::default();
    let mut cfg = config(sc.world.images, sc.world.classes, QuantizationMode::Full, 2, 1);
    cfg.world = sc.world;
    cfg.teacher = sc.teacher;
    cfg.sampler = sc.sampler;
    cfg.train.resolution = cfg.teacher.resolution;
    cfg.relabel.map_size = sc.map_size;
    cfg.analysis.crops_per_image = sc.crops_per_image;
    cfg.analysis.seed = sc.crop_seed;
    cfg.output.dir = dir.join("out");
    cfg
}

#[test]
fn analyze_reports_the_mismatch_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "run.toml", &scenario_config(dir.path()));
    let summary = ok(&["analyze", "--config", s(&path)]);
    assert!(summary.contains("D_RF_gt_others=true"), "{summary}");
    let csv = dir.path().join("out/analysis/distances.csv");
    let first = fs::read(&csv).unwrap();
    assert!(first.starts_with(b"pair,direction,class,mean_ce,n\n"));
    ok(&["analyze", "--config", s(&path)]);
    assert_eq!(fs::read(&csv).unwrap(), first);

    let mut single = scenario_config(dir.path());
    single.analysis.sources = vec!["fkd".into()];
    let path = write_config(dir.path(), "single.toml", &single);
    assert_eq!(fkd(&["analyze", "--config", s(&path)]).status.code(), Some(2));
}

#[test]
fn analyze_accepts_trained_students() {
    let dir = TempDir::new().unwrap();
    let mut cfg = scenario_config(dir.path());
    cfg.world.images = 16;
    cfg.train.batch_size = 16;
    let path = write_config(dir.path(), "run.toml", &cfg);
    ok(&["generate", "--config", s(&path)]);
    ok(&["train", "--config", s(&path)]);
    cfg.analysis.students = vec![fkd::config::StudentCheckpoint {
        name: "student_fkd".into(),
        path: dir.path().join("out/train/checkpoint.fkdckpt"),
    }];
    let path = write_config(dir.path(), "students.toml", &cfg);
    let summary = ok(&["analyze", "--config", s(&path)]);
    assert!(summary.contains("D(student_fkd -> fkd)"), "{summary}");
}

fn bench_counts(summary: &str) -> Vec<(usize, usize, usize)> {
    summary
        .lines()
        .skip_while(|l| !l.starts_with("m,batch,images"))
        .skip(1)
        .take_while(|l| !l.starts_with('#'))
        .map(|l| {
            let f: Vec<usize> = l.split(',').map(|v| v.parse().unwrap()).collect();
            (f[0], f[2], f[3])
        })
        .collect()
}

#[test]
fn bench_counts_follow_the_crop_count() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config(256, 4, QuantizationMode::Hard, 8, 1);
    cfg.world.size = 8;
    cfg.teacher.resolution = 4;
    cfg.teacher.cells = 2;
    cfg.sampler.resolution = 4;
    cfg.train.resolution = 4;
    cfg.bench = BenchConfig {
        batch_size: 256,
        crops: vec![1, 2, 4, 8, 256],
        batches: 1,
    };
    let path = write_config(dir.path(), "run.toml", &cfg);
    ok(&["generate", "--config", s(&path)]);
    let summary = ok(&["bench", "--config", s(&path)]);
    assert!(summary.contains("counts_match_model=true"), "{summary}");
    let counts = bench_counts(&summary);
    assert_eq!(counts, vec![(1, 256, 256), (2, 128, 128), (4, 64, 64), (8, 32, 32), (256, 1, 1)]);

    cfg.train.order_seed = 99;
    let path = write_config(dir.path(), "reseeded.toml", &cfg);
    assert_eq!(bench_counts(&ok(&["bench", "--config", s(&path)])), counts);
}

#[test]
fn inspect_dumps_label_files_and_maps() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "run.toml", &config(2, 5, QuantizationMode::MarginalRenorm { k: 2 }, 3, 1));
    ok(&["generate", "--config", s(&path)]);
    let text = ok(&["inspect", s(&dir.path().join("out/store/labels/img_000000.fkdl"))]);
    assert!(text.starts_with("version 1 mode marginal_renorm:2 classes 5 crops 3"), "{text}");
    assert_eq!(text.lines().count(), 4);

    let map = LabelMap::new(2, 3, (0..12).map(|v| v as f64).collect()).unwrap();
    let map_path = dir.path().join("map.fkdl");
    fs::write(&map_path, map.to_bytes().unwrap()).unwrap();
    let text = ok(&["inspect", s(&map_path)]);
    assert!(text.starts_with("label map 2x2 classes 3"));
}
