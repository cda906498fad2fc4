//! Command surface behind the `fkd` binary.
//!
//! Each command is a function of its config file (plus the store it reads)
//! and returns the summary it prints. The binary maps argument errors to
//! exit code 1 and every other failure to exit code 2.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::analysis::{ce_matrix, emit_report, run_mismatch_scenario, student_source, LabelSource};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::label_store::{
    decode, decode_label_map, describe, estimate_fkd_storage, estimate_relabel_storage, gib, tib, StorageModel,
    HEADER_BYTES, LABEL_MAP_CODE,
};
use crate::pipeline::{
    assemble_batch, generate_label_store, pass_plans, write_dataset, Counting, DiskDataset, ImageSource, LoadStrategy,
    LoaderCost, Supervision,
};
use crate::quantize::QuantizationMode;
use crate::teacher::Teacher;
use crate::train::{metrics_csv, train, Checkpoint, RunOptions};

/// Caps the number of worker threads.
pub const WORKERS_ENV: &str = "FKD_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "fkd", version, about = "Region-level soft-label generation, storage and replay training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the region-level label store.
    Generate(ConfigArgs),
    /// Train a student on the stored labels.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Query the teacher online instead of reading stored labels.
        #[arg(long)]
        oracle: bool,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many physical passes.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Print the storage table for a dataset shape.
    Estimate(EstimateArgs),
    /// Cross-entropy distances between label sources.
    Analyze(ConfigArgs),
    /// Loader cost per batch for several crops-per-image settings.
    Bench(ConfigArgs),
    /// Dump a label file as text.
    Inspect {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[arg(long, default_value_t = StorageModel::IMAGENET.images)]
    pub images: u64,
    /// Stored crops per image.
    #[arg(long, default_value_t = StorageModel::IMAGENET.crops_per_image)]
    pub crops: u64,
    #[arg(long, default_value_t = StorageModel::IMAGENET.classes)]
    pub classes: u64,
    /// Label-map side of the baseline.
    #[arg(long, default_value_t = StorageModel::IMAGENET.map_size)]
    pub map_size: u64,
    /// Top-K values for the marginal modes.
    #[arg(long, value_delimiter = ',', default_values_t = [5u16, 10])]
    pub k: Vec<u16>,
    /// Top-K of the compressed baseline maps.
    #[arg(long, default_value_t = 5)]
    pub relabel_k: u64,
}

/// Worker cap from the environment, bounded by the available cores.
pub fn workers_from_env() -> Result<usize> {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n.min(cores)),
            _ => Err(Error::invalid(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(cores),
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

pub fn execute(cli: Cli, workers: usize) -> Result<String> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&load_config(&a)?),
        Command::Train {
            config,
            oracle,
            resume,
            stop_after,
        } => cmd_train(
            &load_config(&config)?,
            &TrainArgs {
                oracle,
                resume,
                stop_after,
                workers,
            },
        ),
        Command::Estimate(a) => Ok(cmd_estimate(&a)),
        Command::Analyze(a) => cmd_analyze(&load_config(&a)?),
        Command::Bench(a) => cmd_bench(&load_config(&a)?, workers),
        Command::Inspect { path } => cmd_inspect(&path),
    }
}

/// Generates the store under `<output>/store` and writes the run metadata.
pub fn cmd_generate(cfg: &RunConfig) -> Result<String> {
    let teacher = Teacher::from_spec(&cfg.teacher)?;
    let images = cfg.world.generate();
    let l = &cfg.labels;
    let files = generate_label_store(&images[..], &teacher, l.crops_per_image, &cfg.sampler, l.mode, l.seed)?;
    let dir = cfg.store_dir();
    let written = write_dataset(&dir, &images[..], &files)?;
    cfg.write_metadata(&cfg.output.dir)?;
    Ok(format!(
        "generated {} label files ({} crops each, mode {}) in {}\nbytes: labels {} images {} manifest {} total {}\n",
        files.len(),
        l.crops_per_image,
        l.mode,
        dir.display(),
        written.labels,
        written.images,
        written.manifest,
        written.labels + written.images + written.manifest
    ))
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub oracle: bool,
    pub resume: Option<PathBuf>,
    pub stop_after: Option<usize>,
    pub workers: usize,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.fkdckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const STEPS_FILE: &str = "steps.csv";

/// Trains from the store (or the online teacher with `oracle`) and writes
/// the checkpoint, per-epoch metrics and per-step losses.
pub fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> Result<String> {
    let dataset = DiskDataset::open(cfg.store_dir())?;
    let teacher = Teacher::from_spec(&cfg.teacher)?;
    let resume = match &args.resume {
        Some(p) => {
            let ckpt = Checkpoint::read(p)?;
            if ckpt.config != cfg.train {
                return Err(Error::Config(format!("{} was written by a different training config", p.display())));
            }
            Some(ckpt.state)
        }
        None => None,
    };
    let supervision = if args.oracle {
        Supervision::Online {
            teacher: &teacher,
            sampler: &cfg.sampler,
            crops_per_image: cfg.labels.crops_per_image,
            seed: cfg.labels.seed,
        }
    } else {
        Supervision::Stored(&dataset)
    };
    let state = train(
        &dataset,
        supervision,
        &cfg.train,
        RunOptions {
            resume,
            stop_after: args.stop_after,
            workers: args.workers,
        },
    )?;
    let dir = cfg.train_dir(args.oracle);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    Checkpoint {
        config: cfg.train.clone(),
        state: state.clone(),
    }
    .write(&ckpt_path)?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write(METRICS_FILE, metrics_csv(&state.epochs)?)?;
    let mut steps = String::from("step,loss\n");
    for (i, l) in state.step_losses.iter().enumerate() {
        let _ = writeln!(steps, "{i},{l}");
    }
    write(STEPS_FILE, steps)?;
    cfg.write_metadata(&dir)?;
    let last = state.epochs.last();
    Ok(format!(
        "{} passes of {} done ({} steps){}\nfinal loss {} accuracy {}\ncheckpoint {}\n",
        state.next_pass,
        cfg.train.passes,
        state.step_losses.len(),
        if args.oracle { " with the online teacher" } else { "" },
        last.map_or(f64::NAN, |e| e.loss),
        last.map_or(f64::NAN, |e| e.accuracy),
        ckpt_path.display()
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub label: String,
    pub bytes: u64,
}

/// Storage of every label mode and of the baseline's label maps.
pub fn estimate_rows(a: &EstimateArgs) -> Vec<EstimateRow> {
    let model = StorageModel {
        images: a.images,
        crops_per_image: a.crops,
        classes: a.classes,
        map_size: a.map_size,
    };
    let mut modes = vec![QuantizationMode::Full, QuantizationMode::Hard, QuantizationMode::Smooth];
    for &k in &a.k {
        modes.push(QuantizationMode::MarginalSmooth { k });
        modes.push(QuantizationMode::MarginalRenorm { k });
    }
    let mut rows: Vec<EstimateRow> = modes
        .into_iter()
        .map(|m| EstimateRow {
            label: m.to_string(),
            bytes: estimate_fkd_storage(&model, m),
        })
        .collect();
    rows.push(EstimateRow {
        label: "relabel_full".into(),
        bytes: estimate_relabel_storage(&model, None),
    });
    rows.push(EstimateRow {
        label: format!("relabel_top{}", a.relabel_k),
        bytes: estimate_relabel_storage(&model, Some(a.relabel_k)),
    });
    rows
}

pub fn cmd_estimate(a: &EstimateArgs) -> String {
    let mut s = format!(
        "N={} M={} C={} S={}\n{:<20} {:>16} {:>12} {:>10}\n",
        a.images, a.crops, a.classes, a.map_size, "labels", "bytes", "GiB", "TiB"
    );
    for r in estimate_rows(a) {
        let _ = writeln!(s, "{:<20} {:>16} {:>12.3} {:>10.4}", r.label, r.bytes, gib(r.bytes), tib(r.bytes));
    }
    s
}

pub const REPORT_FILE: &str = "distances.csv";

/// Distance report over the configured sources on the synthetic world.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<String> {
    let wanted = &cfg.analysis.sources;
    if wanted.len() + cfg.analysis.students.len() < 2 {
        return Err(Error::Config("analysis needs at least two sources".into()));
    }
    let out = run_mismatch_scenario(&cfg.scenario())?;
    let mut sources: Vec<LabelSource> = Vec::new();
    for name in wanted {
        sources.push(match name.as_str() {
            "relabel" => out.relabel.clone(),
            "fkd" => out.fkd.clone(),
            "one_hot" => out.one_hot.clone(),
            other => return Err(Error::Config(format!("unknown analysis source {other:?}"))),
        });
    }
    for s in &cfg.analysis.students {
        let ckpt = Checkpoint::read(&s.path)?;
        sources.push(student_source(&s.name, &ckpt.state.student, &out.keys, &out.regions)?);
    }
    let class_source = sources.iter().position(|s| s.name == "one_hot").unwrap_or(0);
    let report = ce_matrix(&sources, &out.keys, class_source)?;
    let dir = cfg.output.dir.join("analysis");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(REPORT_FILE);
    emit_report(&report, &path)?;

    let mut s = format!(
        "{} crops, {} classes, classes from {}\n",
        out.keys.len(),
        report.classes,
        sources[class_source].name
    );
    let mut means = BTreeMap::new();
    for a in &sources {
        for b in &sources {
            if a.name != b.name {
                let d = report.mean(&a.name, &b.name).unwrap_or(f64::NAN);
                means.insert((a.name.clone(), b.name.clone()), d);
                let _ = writeln!(s, "D({} -> {}) = {d:.6}", a.name, b.name);
            }
        }
    }
    let get = |a: &str, b: &str| means.get(&(a.to_string(), b.to_string())).copied();
    if let (Some(rf), Some(ro), Some(fo)) = (get("relabel", "fkd"), get("relabel", "one_hot"), get("fkd", "one_hot")) {
        let _ = writeln!(s, "D_RF_gt_others={}", rf > ro.max(fo));
        let _ = writeln!(
            s,
            "kl_positive_off_grid={}/{}",
            out.kl_positive, out.off_grid
        );
    }
    if !cfg.analysis.students.is_empty() {
        let _ = writeln!(s, "note: model sources are students trained on this synthetic task");
    }
    let _ = writeln!(s, "report {}", path.display());
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub crops_per_image: usize,
    pub batch: usize,
    pub measured: LoaderCost,
    pub expected: LoaderCost,
    pub millis: f64,
}

/// Loader counts and timings for the first batches of pass 0, per `m`.
pub fn bench_rows(cfg: &RunConfig, workers: usize) -> Result<Vec<BenchRow>> {
    let dataset = Counting::new(DiskDataset::open(cfg.store_dir())?);
    let b = cfg.bench.batch_size;
    let mut rows = Vec::new();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    for &m in &cfg.bench.crops {
        let plans = pass_plans(dataset.len(), b, m, 0, cfg.train.order_seed)?;
        let expected = LoaderCost::model(LoadStrategy::MultiCrop { crops_per_image: m }, b)?;
        for plan in plans.iter().take(cfg.bench.batches) {
            dataset.reset();
            let start = Instant::now();
            let batch = pool.install(|| assemble_batch(&dataset, Supervision::Stored(&dataset), plan, cfg.train.resolution, 0))?;
            let millis = start.elapsed().as_secs_f64() * 1e3;
            let (images, labels) = dataset.counts();
            if batch.cost.images_loaded != images {
                return Err(Error::invalid("batch cost disagrees with the counted loads"));
            }
            rows.push(BenchRow {
                crops_per_image: m,
                batch: plan.index,
                measured: LoaderCost {
                    images_loaded: images,
                    label_files_loaded: labels,
                },
                // a short final batch loads proportionally fewer files
                expected: if plan.samples() == b {
                    expected
                } else {
                    LoaderCost {
                        images_loaded: plan.image_ids.len(),
                        label_files_loaded: plan.image_ids.len(),
                    }
                },
                millis,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_bench(cfg: &RunConfig, workers: usize) -> Result<String> {
    let rows = bench_rows(cfg, workers)?;
    let mut s = format!("batch size {}\n# counts\nm,batch,images,label_files,expected_images,expected_label_files\n", cfg.bench.batch_size);
    for r in &rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.crops_per_image,
            r.batch,
            r.measured.images_loaded,
            r.measured.label_files_loaded,
            r.expected.images_loaded,
            r.expected.label_files_loaded
        );
    }
    let _ = writeln!(s, "# timings (informational)\nm,batch,ms");
    for r in &rows {
        let _ = writeln!(s, "{},{},{:.3}", r.crops_per_image, r.batch, r.millis);
    }
    let ok = rows.iter().all(|r| r.measured == r.expected);
    let _ = writeln!(s, "counts_match_model={ok}");
    Ok(s)
}

/// Text dump of a label file or label map.
pub fn cmd_inspect(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() >= HEADER_BYTES && bytes[6] == LABEL_MAP_CODE {
        let (classes, size, logits) = decode_label_map(&bytes)?;
        let mut s = format!("label map {size}x{size} classes {classes}\n");
        for (cell, z) in logits.chunks(classes as usize).enumerate() {
            let _ = writeln!(s, "{}\t{}\t{z:?}", cell / size as usize, cell % size as usize);
        }
        return Ok(s);
    }
    Ok(describe(&decode(&bytes)?))
}
