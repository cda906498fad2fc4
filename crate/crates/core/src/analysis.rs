//! Cross-entropy distances between label sources.
//!
//! `D(A→B)` is the mean of `−Σ_c P_B(c) log P_A(c)`: the arrow's target
//! weights the log-probabilities of its source. Keys are grouped by the
//! argmax class of a designated one-hot source, and every ordered pair of
//! sources is reported per class in both directions.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::label_store::{AugRecord, CropBox};
use crate::numeric::{cross_entropy, kl_divergence, softmax, Logits, SoftLabel, Temperature};
use crate::pipeline::{apply_crop, crops_for_image, CropKey, CropSamplerConfig, WorldSpec};
use crate::relabel::{build_label_map, relabel_soft_label};
use crate::teacher::{teacher_soft_label, Teacher, TeacherOutput, TeacherSpec};
use crate::train::Student;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSource {
    pub name: String,
    pub labels: BTreeMap<CropKey, SoftLabel>,
}

impl LabelSource {
    pub fn new(name: impl Into<String>, labels: BTreeMap<CropKey, SoftLabel>) -> Result<Self> {
        let name = name.into();
        let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !ok {
            return Err(Error::invalid(format!(
                "source name {name:?} must be non-empty ASCII letters, digits or '_'"
            )));
        }
        Ok(LabelSource { name, labels })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEntry {
    pub from: String,
    pub to: String,
    pub class: usize,
    pub mean_ce: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistanceReport {
    /// Classes with at least one key.
    pub classes: usize,
    /// Grouped by unordered pair (sources in input order), then direction,
    /// then class.
    pub entries: Vec<DistanceEntry>,
}

impl DistanceReport {
    /// Sample-weighted mean of `D(from→to)` over all classes.
    pub fn mean(&self, from: &str, to: &str) -> Option<f64> {
        let (sum, n) = self
            .entries
            .iter()
            .filter(|e| e.from == from && e.to == to)
            .fold((0.0, 0usize), |(s, n), e| (s + e.mean_ce * e.n as f64, n + e.n));
        (n > 0).then(|| sum / n as f64)
    }
}

/// Per-class mean distances for every ordered pair of `sources` over `keys`;
/// classes come from the argmax of `sources[class_source]`.
pub fn ce_matrix(sources: &[LabelSource], keys: &[CropKey], class_source: usize) -> Result<DistanceReport> {
    if sources.len() < 2 {
        return Err(Error::invalid("distance analysis needs at least two sources"));
    }
    if class_source >= sources.len() {
        return Err(Error::OutOfBounds(format!("class source {class_source} of {}", sources.len())));
    }
    let names: BTreeSet<&str> = sources.iter().map(|s| s.name.as_str()).collect();
    if names.len() != sources.len() {
        return Err(Error::invalid("source names must be distinct"));
    }
    let mut width = None;
    for s in sources {
        for k in keys {
            let p = s.labels.get(k).ok_or_else(|| {
                Error::invalid(format!("source {} has no label for image {} crop {}", s.name, k.image, k.crop))
            })?;
            if *width.get_or_insert(p.len()) != p.len() {
                return Err(Error::invalid(format!("source {} mixes class counts", s.name)));
            }
        }
    }
    let class_of: Vec<usize> = keys.iter().map(|k| sources[class_source].labels[k].argmax()).collect();
    let classes: BTreeSet<usize> = class_of.iter().copied().collect();

    let mut entries = Vec::new();
    for i in 0..sources.len() {
        for j in i + 1..sources.len() {
            for (a, b) in [(i, j), (j, i)] {
                let (src, dst) = (&sources[a], &sources[b]);
                let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
                for (k, &c) in keys.iter().zip(&class_of) {
                    let d = cross_entropy(&dst.labels[k], &src.labels[k])?;
                    let e = acc.entry(c).or_insert((0.0, 0));
                    e.0 += d;
                    e.1 += 1;
                }
                for (class, (sum, n)) in acc {
                    entries.push(DistanceEntry {
                        from: src.name.clone(),
                        to: dst.name.clone(),
                        class,
                        mean_ce: sum / n as f64,
                        n,
                    });
                }
            }
        }
    }
    if entries.iter().any(|e| !e.mean_ce.is_finite()) {
        return Err(Error::NonFinite("distance report"));
    }
    Ok(DistanceReport {
        classes: classes.len(),
        entries,
    })
}

/// Unordered pair of `e` in source order, given the first-seen order.
fn pair_name(e: &DistanceEntry, order: &[String]) -> String {
    let pos = |n: &str| order.iter().position(|o| o == n).unwrap_or(usize::MAX);
    if pos(&e.from) <= pos(&e.to) {
        format!("{}|{}", e.from, e.to)
    } else {
        format!("{}|{}", e.to, e.from)
    }
}

/// CSV with columns `pair,direction,class,mean_ce,n`.
pub fn report_csv(r: &DistanceReport) -> Result<String> {
    let mut order: Vec<String> = Vec::new();
    for e in &r.entries {
        for n in [&e.from, &e.to] {
            if !order.contains(n) {
                order.push(n.clone());
            }
        }
    }
    let fail = |e: csv::Error| Error::invalid(format!("report csv: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["pair", "direction", "class", "mean_ce", "n"]).map_err(fail)?;
    for e in &r.entries {
        w.write_record([
            pair_name(e, &order),
            format!("{}->{}", e.from, e.to),
            e.class.to_string(),
            e.mean_ce.to_string(),
            e.n.to_string(),
        ])
        .map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("report csv: {e}")))?;
    String::from_utf8(bytes).map_err(|_| Error::invalid("report csv is not UTF-8"))
}

pub fn emit_report(r: &DistanceReport, path: &Path) -> Result<()> {
    fs::write(path, report_csv(r)?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
struct Row {
    pair: String,
    direction: String,
    class: usize,
    mean_ce: f64,
    n: usize,
}

pub fn parse_report(text: &str) -> Result<DistanceReport> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| Error::invalid(format!("report csv: {e}")))?.clone();
    if header != csv::StringRecord::from(vec!["pair", "direction", "class", "mean_ce", "n"]) {
        return Err(Error::invalid(format!("unexpected report header {header:?}")));
    }
    let mut entries = Vec::new();
    let mut classes = BTreeSet::new();
    for row in rd.deserialize::<Row>() {
        let row = row.map_err(|e| Error::invalid(format!("report csv: {e}")))?;
        let (from, to) = row
            .direction
            .split_once("->")
            .ok_or_else(|| Error::invalid(format!("bad direction {:?}", row.direction)))?;
        if row.pair != format!("{from}|{to}") && row.pair != format!("{to}|{from}") {
            return Err(Error::invalid(format!("direction {} is not within pair {}", row.direction, row.pair)));
        }
        if row.n == 0 || !row.mean_ce.is_finite() {
            return Err(Error::invalid("report rows need n >= 1 and a finite mean"));
        }
        classes.insert(row.class);
        entries.push(DistanceEntry {
            from: from.to_string(),
            to: to.to_string(),
            class: row.class,
            mean_ce: row.mean_ce,
            n: row.n,
        });
    }
    Ok(DistanceReport {
        classes: classes.len(),
        entries,
    })
}

/// Softmax predictions of a trained student on the regions behind `keys`.
pub fn student_source(
    name: &str,
    student: &Student,
    keys: &[CropKey],
    regions: &BTreeMap<CropKey, Vec<f64>>,
) -> Result<LabelSource> {
    let mut labels = BTreeMap::new();
    for k in keys {
        let x = regions
            .get(k)
            .ok_or_else(|| Error::invalid(format!("no region for image {} crop {}", k.image, k.crop)))?;
        let z = Logits::new(student.forward(x)?.logits)?;
        labels.insert(*k, softmax(&z, Temperature::ONE));
    }
    LabelSource::new(name, labels)
}

/// A pinned synthetic setup contrasting exact region labels with labels
/// pooled from a coarse global map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MismatchScenario {
    pub world: WorldSpec,
    pub teacher: TeacherSpec,
    pub sampler: CropSamplerConfig,
    pub crops_per_image: usize,
    pub map_size: usize,
    pub crop_seed: u64,
}

impl Default for MismatchScenario {
    fn default() -> Self {
        let mut teacher = TeacherSpec::tabular(0x5eed_0007, 10, 16, 3);
        teacher.gain = 4.0;
        MismatchScenario {
            world: WorldSpec::new(0x5eed_0001, 64, 32, 3, 10),
            teacher,
            sampler: CropSamplerConfig {
                resolution: 16,
                ..Default::default()
            },
            crops_per_image: 16,
            map_size: 8,
            crop_seed: 0x5eed_0003,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MismatchOutcome {
    pub keys: Vec<CropKey>,
    pub augs: BTreeMap<CropKey, AugRecord>,
    /// Exact teacher labels of every crop.
    pub fkd: LabelSource,
    /// RoI-pooled labels from the per-image label map.
    pub relabel: LabelSource,
    /// Teacher argmax on the full image, repeated for its crops.
    pub one_hot: LabelSource,
    /// Student inputs of every crop at the teacher resolution.
    pub regions: BTreeMap<CropKey, Vec<f64>>,
    pub report: DistanceReport,
    /// `D(relabel→fkd)`, `D(relabel→one_hot)`, `D(fkd→one_hot)`.
    pub d_rf: f64,
    pub d_ro: f64,
    pub d_fo: f64,
    pub off_grid: usize,
    /// Off-grid crops whose `KL(fkd ‖ relabel)` is strictly positive.
    pub kl_positive: usize,
}

impl MismatchOutcome {
    pub fn kl_positive_fraction(&self) -> f64 {
        self.kl_positive as f64 / self.off_grid.max(1) as f64
    }

    /// Whether `D(relabel→fkd)` exceeds both one-hot distances by `margin`.
    pub fn inequality_holds(&self, margin: f64) -> bool {
        self.d_rf > self.d_ro.max(self.d_fo) + margin
    }
}

/// Whether every edge of `b` lies on the `size × size` grid.
pub fn on_grid(b: &CropBox, size: usize) -> bool {
    let s = size as f64;
    let snapped = |v: f32| ((v as f64 * s) - (v as f64 * s).round()).abs() < 1e-4;
    snapped(b.x) && snapped(b.y) && snapped(b.x + b.w) && snapped(b.y + b.h)
}

fn probs(out: TeacherOutput) -> Result<SoftLabel> {
    match out {
        TeacherOutput::Probs(p) => Ok(p),
        TeacherOutput::Logits(_) => Err(Error::invalid("the mismatch scenario needs a supervised teacher")),
    }
}

pub fn run_mismatch_scenario(sc: &MismatchScenario) -> Result<MismatchOutcome> {
    sc.world.validate()?;
    sc.sampler.validate()?;
    let teacher = Teacher::from_spec(&sc.teacher)?;
    if sc.sampler.resolution != sc.teacher.resolution || sc.world.channels != sc.teacher.channels {
        return Err(Error::invalid("sampler and world must match the teacher input"));
    }
    let full = AugRecord {
        crop: CropBox::FULL,
        flip: false,
    };
    let mut keys = Vec::new();
    let mut augs = BTreeMap::new();
    let mut regions = BTreeMap::new();
    let (mut fkd, mut relabel, mut one_hot) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
    let (mut off_grid, mut kl_positive) = (0, 0);
    for id in 0..sc.world.images {
        let image: Image = sc.world.image(id).0;
        let whole = probs(teacher_soft_label(&teacher, &apply_crop(&image, &full, sc.teacher.resolution)?, Temperature::ONE)?)?;
        let truth = SoftLabel::one_hot(whole.argmax(), teacher.classes())?;
        let map = build_label_map(&teacher, &image, sc.map_size)?;
        let sampled = crops_for_image(&sc.sampler, image.width(), image.height(), sc.crops_per_image, sc.crop_seed, id);
        for (crop, aug) in sampled.into_iter().enumerate() {
            let key = CropKey { image: id, crop };
            let region = apply_crop(&image, &aug, sc.teacher.resolution)?;
            let exact = probs(teacher_soft_label(&teacher, &region, Temperature::ONE)?)?;
            let pooled = relabel_soft_label(&map, &aug.crop)?;
            if !on_grid(&aug.crop, sc.map_size) {
                off_grid += 1;
                if kl_divergence(&exact, &pooled)? > 0.0 {
                    kl_positive += 1;
                }
            }
            keys.push(key);
            augs.insert(key, aug);
            regions.insert(key, region.pixels().to_vec());
            fkd.insert(key, exact);
            relabel.insert(key, pooled);
            one_hot.insert(key, truth.clone());
        }
    }
    let sources = vec![
        LabelSource::new("relabel", relabel)?,
        LabelSource::new("fkd", fkd)?,
        LabelSource::new("one_hot", one_hot)?,
    ];
    let report = ce_matrix(&sources, &keys, 2)?;
    let d = |a: &str, b: &str| report.mean(a, b).ok_or_else(|| Error::invalid("empty scenario"));
    let (d_rf, d_ro, d_fo) = (d("relabel", "fkd")?, d("relabel", "one_hot")?, d("fkd", "one_hot")?);
    let [relabel, fkd, one_hot]: [LabelSource; 3] = sources.try_into().expect("three sources");
    Ok(MismatchOutcome {
        keys,
        augs,
        fkd,
        relabel,
        one_hot,
        regions,
        report,
        d_rf,
        d_ro,
        d_fo,
        off_grid,
        kl_positive,
    })
}
