//! Storage cost of every label mode at ImageNet scale.

use fkd::label_store::{estimate_fkd_storage, estimate_relabel_storage, gib, StorageModel};
use fkd::quantize::QuantizationMode;

fn main() {
    let m = StorageModel::IMAGENET;
    let rows = [
        ("full", estimate_fkd_storage(&m, QuantizationMode::Full)),
        ("hard", estimate_fkd_storage(&m, QuantizationMode::Hard)),
        ("smooth", estimate_fkd_storage(&m, QuantizationMode::Smooth)),
        ("ms k=5", estimate_fkd_storage(&m, QuantizationMode::MarginalSmooth { k: 5 })),
        ("ms k=10", estimate_fkd_storage(&m, QuantizationMode::MarginalSmooth { k: 10 })),
        ("relabel full", estimate_relabel_storage(&m, None)),
        ("relabel top-5", estimate_relabel_storage(&m, Some(5))),
    ];
    for (name, bytes) in rows {
        println!("{name:<14} {:>10.3} GiB", gib(bytes));
    }
}
