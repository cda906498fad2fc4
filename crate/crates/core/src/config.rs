//! Declarative run configuration.
//!
//! One TOML file describes a run end to end: the synthetic world, the
//! teacher, crop sampling, label storage, training, the label-map baseline
//! and the output directory. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::MismatchScenario;
use crate::error::{Error, Result};
use crate::pipeline::{CropSamplerConfig, WorldSpec};
use crate::quantize::QuantizationMode;
use crate::teacher::{LabelMode, TeacherSpec};
use crate::train::TrainConfig;

pub const RUN_METADATA: &str = "run.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsConfig {
    pub mode: QuantizationMode,
    /// Crops stored per image (`M`).
    pub crops_per_image: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelabelConfig {
    /// Side `S` of the per-image label map.
    pub map_size: usize,
}

impl Default for RelabelConfig {
    fn default() -> Self {
        RelabelConfig { map_size: 15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentCheckpoint {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Any of `relabel`, `fkd`, `one_hot`; at least two sources overall.
    pub sources: Vec<String>,
    /// Crops sampled per image for the comparison.
    pub crops_per_image: usize,
    pub seed: u64,
    /// Trained students whose predictions join the comparison.
    pub students: Vec<StudentCheckpoint>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            sources: vec!["relabel".into(), "fkd".into(), "one_hot".into()],
            crops_per_image: 16,
            seed: 3,
            students: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub batch_size: usize,
    pub crops: Vec<usize>,
    /// Batches timed per `m`.
    pub batches: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            batch_size: 256,
            crops: vec![1, 2, 4, 8],
            batches: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Relative paths resolve against the config file's directory.
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("fkd-out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldSpec,
    pub teacher: TeacherSpec,
    #[serde(default)]
    pub sampler: CropSamplerConfig,
    pub labels: LabelsConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub relabel: RelabelConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and makes relative paths absolute against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output.dir);
        for s in &mut cfg.analysis.students {
            resolve(&mut s.path);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.world.validate()?;
        self.teacher.validate()?;
        self.sampler.validate()?;
        self.train.validate()?;
        self.labels.mode.validate(self.teacher.classes)?;
        if self.world.classes != self.teacher.classes || self.world.channels != self.teacher.channels {
            return bad("world and teacher disagree on classes or channels".into());
        }
        if self.sampler.resolution != self.teacher.resolution || self.train.resolution != self.teacher.resolution {
            return bad(format!(
                "sampler ({}) and train ({}) resolutions must equal the teacher's ({})",
                self.sampler.resolution, self.train.resolution, self.teacher.resolution
            ));
        }
        if self.labels.mode.is_ssl() != (self.teacher.mode == LabelMode::Ssl) {
            return bad("ssl_logits storage goes with an SSL teacher and only with one".into());
        }
        if self.labels.crops_per_image == 0 {
            return bad("labels.crops_per_image must be positive".into());
        }
        if self.relabel.map_size == 0 {
            return bad("relabel.map_size must be positive".into());
        }
        for s in &self.analysis.sources {
            if !["relabel", "fkd", "one_hot"].contains(&s.as_str()) {
                return bad(format!("unknown analysis source {s:?}"));
            }
        }
        if self.bench.crops.iter().any(|&m| m == 0 || self.bench.batch_size % m != 0) {
            return bad("every bench crop count must divide bench.batch_size".into());
        }
        for seed in [self.world.seed, self.teacher.seed, self.labels.seed, self.train.init_seed, self.train.order_seed] {
            if seed > i64::MAX as u64 {
                return bad(format!("seed {seed} does not fit a TOML integer"));
            }
        }
        Ok(())
    }

    pub fn store_dir(&self) -> PathBuf {
        self.output.dir.join("store")
    }

    pub fn train_dir(&self, oracle: bool) -> PathBuf {
        self.output.dir.join(if oracle { "train-oracle" } else { "train" })
    }

    pub fn scenario(&self) -> MismatchScenario {
        MismatchScenario {
            world: self.world.clone(),
            teacher: self.teacher.clone(),
            sampler: self.sampler.clone(),
            crops_per_image: self.analysis.crops_per_image,
            map_size: self.relabel.map_size,
            crop_seed: self.analysis.seed,
        }
    }

    /// Writes the effective configuration next to the run's outputs.
    pub fn write_metadata(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RUN_METADATA);
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
[world]
seed = 1
images = 8
size = 16
channels = 3
classes = 5

[teacher]
kind = "tabular"
seed = 2
classes = 5
resolution = 8
channels = 3

[sampler]
resolution = 8

[labels]
mode = "ms:2"
crops_per_image = 4
seed = 3

[train]
batch_size = 8
crops_per_image = 2
passes = 2
base_lr = 0.1
hidden = 8
resolution = 8
init_seed = 4
order_seed = 5
"#;

    #[test]
    fn parses_with_defaults_and_round_trips() {
        let cfg = RunConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.labels.mode, QuantizationMode::MarginalSmooth { k: 2 });
        assert_eq!(cfg.relabel.map_size, 15);
        assert_eq!(cfg.train.sgd.momentum, 0.9);
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = SAMPLE.replace("[labels]", "[labels]\ncolour = 3");
        assert!(matches!(RunConfig::parse(&text), Err(Error::Config(_))));
        assert!(RunConfig::parse(&format!("{SAMPLE}\n[extra]\nx = 1\n")).is_err());
    }

    #[test]
    fn inconsistent_shapes_are_rejected() {
        assert!(RunConfig::parse(&SAMPLE.replace("[sampler]\nresolution = 8", "[sampler]\nresolution = 6")).is_err());
        assert!(RunConfig::parse(&SAMPLE.replace("mode = \"ms:2\"", "mode = \"ssl\"")).is_err());
        assert!(RunConfig::parse(&SAMPLE.replace("mode = \"ms:2\"", "mode = \"ms:9\"")).is_err());
    }
}
