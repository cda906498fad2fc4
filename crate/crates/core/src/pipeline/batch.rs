//! Multi-crop mini-batch assembly.
//!
//! A batch of `B` samples takes `m` crops from each of `B / m` images, so it
//! loads only `B / m` images and `B / m` label files. Physical pass `k` reads
//! crops `[k·m, k·m + m)` (mod `M`) of every image, and the assembled batch is
//! shuffled by a seeded permutation so crops of one image are not adjacent.

use std::collections::BTreeMap;
use std::sync::mpsc;

use crate::error::{Error, Result};
use crate::image::{Image, Region};
use crate::label_store::AugRecord;
use crate::numeric::Temperature;
use crate::pipeline::crop::apply_crop;
use crate::pipeline::sampler::{crops_for_image, CropSamplerConfig};
use crate::pipeline::store::{ImageSource, LabelRepository};
use crate::quantize::Target;
use crate::rng::Stream;
use crate::teacher::{teacher_soft_label, Teacher, TeacherOutput};

const ORDER_STREAM: u64 = 0x0de2;
const SHUFFLE_STREAM: u64 = 0x5f1e;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub crops_per_image: usize,
    /// At most `batch_size / crops_per_image` distinct ids; fewer only for
    /// the last batch of a pass.
    pub image_ids: Vec<usize>,
    /// Physical pass; selects the crop window.
    pub pass: usize,
    /// Position of the batch within its pass.
    pub index: usize,
}

impl BatchPlan {
    pub fn new(batch_size: usize, crops_per_image: usize, image_ids: Vec<usize>, pass: usize, index: usize) -> Result<Self> {
        check_divisible(batch_size, crops_per_image)?;
        if image_ids.is_empty() || image_ids.len() > batch_size / crops_per_image {
            return Err(Error::invalid(format!(
                "a batch holds 1..={} images, got {}",
                batch_size / crops_per_image,
                image_ids.len()
            )));
        }
        let mut sorted = image_ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("image ids within a batch must be distinct"));
        }
        Ok(BatchPlan {
            batch_size,
            crops_per_image,
            image_ids,
            pass,
            index,
        })
    }

    pub fn samples(&self) -> usize {
        self.image_ids.len() * self.crops_per_image
    }
}

fn check_divisible(batch_size: usize, crops_per_image: usize) -> Result<()> {
    if crops_per_image == 0 || batch_size == 0 || batch_size % crops_per_image != 0 {
        return Err(Error::invalid(format!(
            "crops per image ({crops_per_image}) must divide the batch size ({batch_size})"
        )));
    }
    Ok(())
}

/// Crop indices of one image used in physical pass `pass`.
pub fn cursor_window(pass: usize, crops_per_image: usize, stored: usize) -> Vec<usize> {
    (pass * crops_per_image..(pass + 1) * crops_per_image)
        .map(|i| i % stored)
        .collect()
}

/// Whether pass `pass` reuses crops already consumed by an earlier pass.
pub fn cursor_wraps(pass: usize, crops_per_image: usize, stored: usize) -> bool {
    (pass + 1) * crops_per_image > stored
}

/// Batch plans covering every image once, in a seeded per-pass order.
pub fn pass_plans(images: usize, batch_size: usize, crops_per_image: usize, pass: usize, seed: u64) -> Result<Vec<BatchPlan>> {
    check_divisible(batch_size, crops_per_image)?;
    let order = Stream::new(seed, &[ORDER_STREAM, pass as u64]).permutation(images);
    order
        .chunks(batch_size / crops_per_image)
        .enumerate()
        .map(|(index, ids)| BatchPlan::new(batch_size, crops_per_image, ids.to_vec(), pass, index))
        .collect()
}

/// Images and label files read to build one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoaderCost {
    pub images_loaded: usize,
    pub label_files_loaded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadStrategy {
    /// One crop per loaded image, teacher run online.
    Vanilla,
    /// One crop per image plus one label-map file per image.
    ReLabel,
    /// `m` crops per loaded image and label file.
    MultiCrop { crops_per_image: usize },
}

impl LoaderCost {
    /// Loads needed for a batch of `batch_size` samples.
    pub fn model(strategy: LoadStrategy, batch_size: usize) -> Result<LoaderCost> {
        Ok(match strategy {
            LoadStrategy::Vanilla => LoaderCost {
                images_loaded: batch_size,
                label_files_loaded: 0,
            },
            LoadStrategy::ReLabel => LoaderCost {
                images_loaded: batch_size,
                label_files_loaded: batch_size,
            },
            LoadStrategy::MultiCrop { crops_per_image } => {
                check_divisible(batch_size, crops_per_image)?;
                LoaderCost {
                    images_loaded: batch_size / crops_per_image,
                    label_files_loaded: batch_size / crops_per_image,
                }
            }
        })
    }
}

/// Where the training targets of a batch come from.
#[derive(Clone, Copy)]
pub enum Supervision<'a> {
    /// Replay stored augmentations and labels.
    Stored(&'a dyn LabelRepository),
    /// Re-sample the same augmentations and run the teacher online.
    Online {
        teacher: &'a Teacher,
        sampler: &'a CropSamplerConfig,
        crops_per_image: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct CropKey {
    pub image: usize,
    pub crop: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub regions: Vec<Region>,
    pub targets: Vec<Target>,
    pub keys: Vec<CropKey>,
    pub augs: Vec<AugRecord>,
    pub cost: LoaderCost,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

fn teacher_target(out: TeacherOutput) -> Target {
    match out {
        TeacherOutput::Probs(p) => Target::Probs(p),
        TeacherOutput::Logits(z) => Target::Logits(z),
    }
}

/// Builds the batch described by `plan`, `resolution` being the side of the
/// materialized regions.
pub fn assemble_batch<S: ImageSource + ?Sized>(
    images: &S,
    supervision: Supervision<'_>,
    plan: &BatchPlan,
    resolution: usize,
    shuffle_seed: u64,
) -> Result<Batch> {
    let m = plan.crops_per_image;
    let n = plan.samples();
    let mut regions = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut keys = Vec::with_capacity(n);
    let mut augs = Vec::with_capacity(n);
    let mut cost = LoaderCost::default();
    for &id in &plan.image_ids {
        let image: Image = images.load_image(id)?;
        cost.images_loaded += 1;
        match supervision {
            Supervision::Stored(repo) => {
                let file = repo.load_labels(id)?;
                cost.label_files_loaded += 1;
                let stored = file.crops();
                if cursor_wraps(plan.pass, m, stored) {
                    log::debug!("image {id}: crop cursor wrapped (pass {}, m={m}, M={stored})", plan.pass);
                }
                for crop in cursor_window(plan.pass, m, stored) {
                    let rec = &file.records[crop];
                    regions.push(apply_crop(&image, &rec.aug, resolution)?);
                    targets.push(rec.label.to_target(file.classes as usize)?);
                    keys.push(CropKey { image: id, crop });
                    augs.push(rec.aug);
                }
            }
            Supervision::Online {
                teacher,
                sampler,
                crops_per_image,
                seed,
            } => {
                let sampled = crops_for_image(sampler, image.width(), image.height(), crops_per_image, seed, id);
                for crop in cursor_window(plan.pass, m, crops_per_image) {
                    let region = apply_crop(&image, &sampled[crop], resolution)?;
                    targets.push(teacher_target(teacher_soft_label(teacher, &region, Temperature::ONE)?));
                    regions.push(region);
                    keys.push(CropKey { image: id, crop });
                    augs.push(sampled[crop]);
                }
            }
        }
    }
    let perm = Stream::new(shuffle_seed, &[SHUFFLE_STREAM, plan.pass as u64, plan.index as u64]).permutation(n);
    Ok(Batch {
        regions: perm.iter().map(|&i| regions[i].clone()).collect(),
        targets: perm.iter().map(|&i| targets[i].clone()).collect(),
        keys: perm.iter().map(|&i| keys[i]).collect(),
        augs: perm.iter().map(|&i| augs[i]).collect(),
        cost,
    })
}

/// Produces `count` items with `make` on `workers` threads and hands them to
/// `consume` in index order. At most `capacity` finished items wait in the
/// queue; the output is the same for every worker count.
pub fn prefetch<T, M, C>(count: usize, workers: usize, capacity: usize, make: M, mut consume: C) -> Result<()>
where
    T: Send,
    M: Fn(usize) -> Result<T> + Sync,
    C: FnMut(usize, T) -> Result<()>,
{
    if workers <= 1 {
        for i in 0..count {
            consume(i, make(i)?)?;
        }
        return Ok(());
    }
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::sync_channel::<(usize, Result<T>)>(capacity.max(1));
        for w in 0..workers {
            let tx = tx.clone();
            let make = &make;
            scope.spawn(move || {
                for i in (w..count).step_by(workers) {
                    let item = make(i);
                    let failed = item.is_err();
                    if tx.send((i, item)).is_err() || failed {
                        break;
                    }
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut next = 0;
        while next < count {
            let Ok((i, item)) = rx.recv() else {
                return Err(Error::invalid("prefetch workers stopped early"));
            };
            pending.insert(i, item);
            while let Some(item) = pending.remove(&next) {
                consume(next, item?)?;
                next += 1;
            }
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::generate::generate_label_store;
    use crate::pipeline::store::{Counting, MemoryStore};
    use crate::pipeline::world::WorldSpec;
    use crate::quantize::QuantizationMode;
    use crate::teacher::TeacherSpec;

    struct Fixture {
        images: Vec<Image>,
        teacher: Teacher,
        sampler: CropSamplerConfig,
        store: MemoryStore,
    }

    fn fixture(images: usize, crops: usize) -> Fixture {
        let world = WorldSpec::new(5, images, 12, 3, 5);
        let teacher = Teacher::from_spec(&TeacherSpec::tabular(2, 5, 6, 3)).unwrap();
        let sampler = CropSamplerConfig {
            resolution: 6,
            ..Default::default()
        };
        let imgs = world.generate();
        let files = generate_label_store(&imgs[..], &teacher, crops, &sampler, QuantizationMode::Full, 17).unwrap();
        Fixture {
            store: MemoryStore::from_files(&files).unwrap(),
            images: imgs,
            teacher,
            sampler,
        }
    }

    #[test]
    fn plan_validation() {
        assert!(BatchPlan::new(10, 3, vec![0, 1, 2], 0, 0).is_err());
        assert!(BatchPlan::new(8, 2, vec![0, 1, 2, 3, 4], 0, 0).is_err());
        assert!(BatchPlan::new(8, 2, vec![0, 1, 1], 0, 0).is_err());
        assert!(BatchPlan::new(8, 2, vec![0, 1, 2, 3], 0, 0).is_ok());
    }

    #[test]
    fn cursor_windows_step_and_wrap() {
        assert_eq!(cursor_window(0, 8, 200), (0..8).collect::<Vec<_>>());
        assert_eq!(cursor_window(24, 8, 200), (192..200).collect::<Vec<_>>());
        assert!(!cursor_wraps(24, 8, 200));
        assert_eq!(cursor_window(25, 8, 200), (0..8).collect::<Vec<_>>());
        assert_eq!(cursor_window(2, 3, 7), vec![6, 0, 1]);
        assert!(cursor_wraps(2, 3, 7));
    }

    #[test]
    fn cost_model_matches_the_loading_argument() {
        let fkd = |m| LoaderCost::model(LoadStrategy::MultiCrop { crops_per_image: m }, 256).unwrap();
        assert_eq!(fkd(1), LoaderCost { images_loaded: 256, label_files_loaded: 256 });
        assert_eq!(fkd(8), LoaderCost { images_loaded: 32, label_files_loaded: 32 });
        assert_eq!(
            LoaderCost::model(LoadStrategy::ReLabel, 256).unwrap(),
            LoaderCost { images_loaded: 256, label_files_loaded: 256 }
        );
        assert_eq!(
            LoaderCost::model(LoadStrategy::Vanilla, 256).unwrap(),
            LoaderCost { images_loaded: 256, label_files_loaded: 0 }
        );
        assert!(LoaderCost::model(LoadStrategy::MultiCrop { crops_per_image: 3 }, 256).is_err());
    }

    #[test]
    fn batch_of_one_image_is_its_full_crop_set() {
        let f = fixture(3, 6);
        let plan = BatchPlan::new(6, 6, vec![1], 0, 0).unwrap();
        let b = assemble_batch(&f.images[..], Supervision::Stored(&f.store), &plan, 6, 3).unwrap();
        let mut crops: Vec<usize> = b.keys.iter().map(|k| k.crop).collect();
        assert_ne!(crops, (0..6).collect::<Vec<_>>(), "shuffled");
        crops.sort_unstable();
        assert_eq!(crops, (0..6).collect::<Vec<_>>());
        assert!(b.keys.iter().all(|k| k.image == 1));
    }

    #[test]
    fn measured_loads_follow_crops_per_image() {
        let f = fixture(64, 32);
        let images = Counting::new(f.images.clone());
        let store = Counting::new(f.store.clone());
        for m in [1, 2, 4, 8, 16, 32] {
            let plans = pass_plans(64, 64, m, 0, 1).unwrap();
            images.reset();
            store.reset();
            let b = assemble_batch(&images, Supervision::Stored(&store), &plans[0], 6, 1).unwrap();
            assert_eq!(b.len(), 64);
            assert_eq!((images.counts().0, store.counts().1), (64 / m, 64 / m));
            assert_eq!(b.cost, LoaderCost { images_loaded: 64 / m, label_files_loaded: 64 / m });
        }
    }

    #[test]
    fn one_pass_draws_m_crops_from_every_image() {
        let f = fixture(10, 8);
        let plans = pass_plans(10, 8, 2, 1, 4).unwrap();
        assert_eq!(plans.len(), 3);
        let mut per_image = vec![Vec::new(); 10];
        for plan in &plans {
            let b = assemble_batch(&f.images[..], Supervision::Stored(&f.store), plan, 6, 4).unwrap();
            let mut counts = BTreeMap::new();
            for k in &b.keys {
                *counts.entry(k.image).or_insert(0) += 1;
                per_image[k.image].push(k.crop);
            }
            assert!(counts.values().all(|c| *c == 2));
        }
        for crops in per_image {
            let mut crops = crops;
            crops.sort_unstable();
            assert_eq!(crops, vec![2, 3]);
        }
    }

    #[test]
    fn stored_full_labels_equal_online_teacher_labels() {
        let f = fixture(6, 8);
        let online = Supervision::Online {
            teacher: &f.teacher,
            sampler: &f.sampler,
            crops_per_image: 8,
            seed: 17,
        };
        for pass in 0..5 {
            for plan in pass_plans(6, 4, 2, pass, 8).unwrap() {
                let a = assemble_batch(&f.images[..], Supervision::Stored(&f.store), &plan, 6, 8).unwrap();
                let b = assemble_batch(&f.images[..], online, &plan, 6, 8).unwrap();
                assert_eq!(a.regions, b.regions);
                assert_eq!(a.targets, b.targets);
                assert_eq!(a.keys, b.keys);
                assert_eq!(b.cost.label_files_loaded, 0);
            }
        }
    }

    #[test]
    fn permutation_only_reorders() {
        let f = fixture(4, 4);
        let plan = BatchPlan::new(8, 4, vec![0, 3], 0, 0).unwrap();
        let a = assemble_batch(&f.images[..], Supervision::Stored(&f.store), &plan, 6, 1).unwrap();
        let b = assemble_batch(&f.images[..], Supervision::Stored(&f.store), &plan, 6, 2).unwrap();
        let sorted = |batch: &Batch| {
            let mut v: Vec<(CropKey, Vec<u64>)> = batch
                .keys
                .iter()
                .zip(&batch.regions)
                .map(|(k, r)| (*k, r.pixels().iter().map(|p| p.to_bits()).collect()))
                .collect();
            v.sort();
            v
        };
        assert_eq!(sorted(&a), sorted(&b));
    }

    #[test]
    fn prefetch_delivers_in_order_for_any_worker_count() {
        for workers in [1, 2, 3, 8] {
            let mut seen = Vec::new();
            prefetch(25, workers, 2, |i| Ok(i * i), |i, v| {
                assert_eq!(v, i * i);
                seen.push(i);
                Ok(())
            })
            .unwrap();
            assert_eq!(seen, (0..25).collect::<Vec<_>>());
        }
    }

    #[test]
    fn prefetch_propagates_errors() {
        let r = prefetch(10, 3, 2, |i| if i == 4 { Err(Error::invalid("boom")) } else { Ok(i) }, |_, _| Ok(()));
        assert!(r.is_err());
    }
}
