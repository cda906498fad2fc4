use std::collections::BTreeMap;

use fkd::analysis::{ce_matrix, LabelSource};
use fkd::label_store::{decode, encode, AugRecord, CropBox, CropRecord, LabelFile};
use fkd::numeric::{softmax, Logits, SoftLabel, Temperature};
use fkd::pipeline::{
    assemble_batch, cursor_window, generate_label_store, pass_plans, CropKey, CropSamplerConfig, LoadStrategy,
    LoaderCost, MemoryStore, Supervision, WorldSpec,
};
use fkd::quantize::{compress, CompressedLabel, QuantizationMode, Target};
use fkd::teacher::{Teacher, TeacherSpec};
use fkd::train::{plateaus, soft_ce_loss, Schedule, ScheduleKind};
use proptest::prelude::*;

fn modes(classes: usize) -> Vec<QuantizationMode> {
    let mut v = vec![QuantizationMode::Full, QuantizationMode::Hard, QuantizationMode::Smooth];
    for k in [1, 2, 3] {
        if k < classes {
            v.push(QuantizationMode::MarginalSmooth { k: k as u16 });
            v.push(QuantizationMode::MarginalRenorm { k: k as u16 });
        }
    }
    v
}

fn distribution(z: &[f64]) -> SoftLabel {
    softmax(&Logits::new(z.to_vec()).unwrap(), Temperature::ONE)
}

fn crop_box() -> impl Strategy<Value = CropBox> {
    (0.0f32..0.9, 0.0f32..0.9, 0.01f32..1.0, 0.01f32..1.0)
        .prop_map(|(x, y, w, h)| CropBox::new(x, y, w.min(1.0 - x), h.min(1.0 - y)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn label_files_round_trip_bitwise(
        classes in 2usize..40,
        mode_pick in 0usize..9,
        ssl in any::<bool>(),
        crops in prop::collection::vec((crop_box(), any::<bool>(), prop::collection::vec(-6.0f64..6.0, 40)), 1..12),
    ) {
        let mode = if ssl {
            QuantizationMode::SslLogits
        } else {
            let all = modes(classes);
            all[mode_pick % all.len()]
        };
        let records: Vec<CropRecord> = crops
            .iter()
            .map(|(b, flip, z)| {
                let z: Vec<f64> = z[..classes].iter().map(|v| *v as f32 as f64).collect();
                let label = if ssl {
                    CompressedLabel::SslLogits(z)
                } else {
                    let p = SoftLabel::new(distribution(&z).into_vec().into_iter().map(|v| v as f32 as f64).collect()).unwrap();
                    compress(mode, &p).unwrap().to_storage_precision()
                };
                CropRecord { aug: AugRecord { crop: *b, flip: *flip }, label }
            })
            .collect();
        let file = LabelFile::new(mode, classes as u32, records).unwrap();
        let bytes = encode(&file).unwrap();
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &file);
        prop_assert_eq!(encode(&back).unwrap(), bytes);
        for r in &back.records {
            match r.label {
                CompressedLabel::SslLogits(_) => {}
                ref other => { other.recover(classes).unwrap(); }
            }
        }
    }

    #[test]
    fn recovered_labels_are_distributions(z in prop::collection::vec(-10.0f64..10.0, 2..60), k in 1u16..6) {
        let p = distribution(&z);
        let c = p.len();
        for mode in modes(c).into_iter().chain([QuantizationMode::MarginalSmooth { k }, QuantizationMode::MarginalRenorm { k }]) {
            if mode.validate(c).is_err() {
                continue;
            }
            let compressed = compress(mode, &p).unwrap();
            let stored = if mode == QuantizationMode::Full { compressed.clone() } else { compressed.to_storage_precision() };
            let r = stored.recover(c).unwrap();
            let sum: f64 = r.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9, "{} sums to {}", mode, sum);
            prop_assert!(r.probs().iter().all(|v| *v >= 0.0));
            if let CompressedLabel::MarginalRenorm(entries) = &stored {
                for (i, v) in r.probs().iter().enumerate() {
                    if !entries.iter().any(|e| e.index as usize == i) {
                        prop_assert_eq!(v.to_bits(), 0u64);
                    }
                }
            }
        }
    }

    #[test]
    fn batches_hold_m_crops_of_each_image(
        images in 1usize..30,
        m in prop::sample::select(vec![1usize, 2, 4]),
        per_batch in 1usize..5,
        pass in 0usize..6,
        seed in any::<u64>(),
    ) {
        let b = m * per_batch;
        let plans = pass_plans(images, b, m, pass, seed).unwrap();
        let mut seen = vec![0usize; images];
        for p in &plans {
            prop_assert!(p.image_ids.len() <= b / m);
            for &id in &p.image_ids {
                seen[id] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&n| n == 1));
        let window = cursor_window(pass, m, 5);
        prop_assert_eq!(window.len(), m);
        prop_assert!(window.iter().all(|&c| c < 5));
    }

    #[test]
    fn soft_ce_gradient_matches_finite_differences(
        batch in prop::collection::vec((prop::collection::vec(-3.0f64..3.0, 6), prop::collection::vec(-3.0f64..3.0, 6)), 1..6),
        ssl in any::<bool>(),
        tau in 0.1f64..2.0,
    ) {
        let tau = if ssl { Temperature::new(tau).unwrap() } else { Temperature::ONE };
        let pred: Vec<Vec<f64>> = batch.iter().map(|(z, _)| z.clone()).collect();
        let targets: Vec<Target> = batch
            .iter()
            .map(|(_, t)| {
                let t = Logits::new(t.clone()).unwrap();
                if ssl { Target::Logits(t) } else { Target::Probs(softmax(&t, Temperature::ONE)) }
            })
            .collect();
        let g = soft_ce_loss(&pred, &targets, tau).unwrap().grad;
        let h = 1e-5;
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        for s in 0..pred.len() {
            for c in 0..6 {
                let mut plus = pred.clone();
                plus[s][c] += h;
                let mut minus = pred.clone();
                minus[s][c] -= h;
                let fd = (soft_ce_loss(&plus, &targets, tau).unwrap().loss - soft_ce_loss(&minus, &targets, tau).unwrap().loss) / (2.0 * h);
                diff += (fd - g[s][c]).powi(2);
                na += g[s][c].powi(2);
                nn += fd * fd;
            }
        }
        let scale = na.sqrt().max(nn.sqrt());
        prop_assume!(scale > 1e-8);
        prop_assert!(diff.sqrt() / scale <= 1e-6);
    }

    #[test]
    fn cosine_schedule_has_one_plateau_per_pass(passes in 1usize..40, m in 1usize..12) {
        let s = Schedule { base_lr: 0.5, passes, crops_per_image: m, kind: ScheduleKind::SerratedCosine };
        let seq = s.sequence().unwrap();
        prop_assert_eq!(seq.len(), passes * m);
        prop_assert_eq!(plateaus(&seq), passes);
        prop_assert!(seq.iter().all(|&lr| lr > 0.0));
        prop_assert!(seq.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn step_schedule_ignores_crops_per_image(
        mut milestones in prop::collection::btree_set(1usize..120, 0..4),
        gamma in 0.05f64..0.9,
        m in prop::sample::select(vec![1usize, 2, 3, 4, 5, 6, 8, 10, 12]),
    ) {
        let milestones: Vec<usize> = std::mem::take(&mut milestones).into_iter().collect();
        let kind = ScheduleKind::StepMilestones { milestones, gamma };
        let base = Schedule { base_lr: 0.1, passes: 120, crops_per_image: 1, kind: kind.clone() };
        let other = Schedule { base_lr: 0.1, passes: 120 / m, crops_per_image: m, kind };
        prop_assert_eq!(base.sequence().unwrap(), other.sequence().unwrap());
    }

    #[test]
    fn loader_cost_halves_as_m_doubles(shift in 0u32..8) {
        let b = 256;
        let m = 1usize << shift;
        let a = LoaderCost::model(LoadStrategy::MultiCrop { crops_per_image: m }, b).unwrap();
        let c = LoaderCost::model(LoadStrategy::MultiCrop { crops_per_image: 2 * m }, b).unwrap();
        prop_assert_eq!(a.images_loaded, 2 * c.images_loaded);
        prop_assert_eq!(a.label_files_loaded, 2 * c.label_files_loaded);
    }

    #[test]
    fn reports_carry_both_directions(n in 1usize..20, seed in 0u64..1000) {
        let keys: Vec<CropKey> = (0..n).map(|i| CropKey { image: i, crop: 0 }).collect();
        let mut rng = fkd::rng::Stream::new(seed, &[]);
        let mut src = |name: &str| {
            let labels: BTreeMap<CropKey, SoftLabel> = keys
                .iter()
                .map(|k| (*k, distribution(&(0..4).map(|_| rng.uniform(-2.0, 2.0)).collect::<Vec<_>>())))
                .collect();
            LabelSource::new(name, labels).unwrap()
        };
        let sources = vec![src("a"), src("b"), src("c")];
        let r = ce_matrix(&sources, &keys, 0).unwrap();
        for x in ["a", "b", "c"] {
            for y in ["a", "b", "c"] {
                if x != y {
                    prop_assert!(r.mean(x, y).is_some());
                }
            }
        }
        let total: usize = r.entries.iter().filter(|e| e.from == "a" && e.to == "b").map(|e| e.n).sum();
        prop_assert_eq!(total, n);
    }
}

#[test]
fn batch_permutation_only_reorders_pairs() {
    let world = WorldSpec::new(61, 12, 12, 3, 4);
    let teacher = Teacher::from_spec(&TeacherSpec::tabular(62, 4, 6, 3)).unwrap();
    let sampler = CropSamplerConfig {
        resolution: 6,
        ..Default::default()
    };
    let images = world.generate();
    let files = generate_label_store(&images[..], &teacher, 6, &sampler, QuantizationMode::Full, 63).unwrap();
    let store = MemoryStore::from_files(&files).unwrap();
    let plan = pass_plans(12, 12, 3, 1, 64).unwrap().remove(0);
    let a = assemble_batch(&images[..], Supervision::Stored(&store), &plan, 6, 1).unwrap();
    let b = assemble_batch(&images[..], Supervision::Stored(&store), &plan, 6, 2).unwrap();
    assert_ne!(a.keys, b.keys);
    let pairs = |x: &fkd::pipeline::Batch| {
        let mut v: Vec<(CropKey, Vec<u64>)> = x
            .keys
            .iter()
            .zip(&x.regions)
            .map(|(k, r)| (*k, r.pixels().iter().map(|p| p.to_bits()).collect()))
            .collect();
        v.sort();
        v
    };
    assert_eq!(pairs(&a), pairs(&b));
}
