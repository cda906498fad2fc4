//! Learning rate per logical epoch under the serrated cosine schedule and
//! under step milestones.

use fkd::train::{plateaus, Schedule, ScheduleKind};

fn main() -> fkd::Result<()> {
    for m in [1, 4] {
        let s = Schedule {
            base_lr: 0.1,
            passes: 6,
            crops_per_image: m,
            kind: ScheduleKind::SerratedCosine,
        };
        let seq = s.sequence()?;
        println!("cosine m={m}: {} plateaus", plateaus(&seq));
        for (e, lr) in seq.iter().enumerate() {
            println!("  epoch {e:>2} lr {lr:.5}");
        }
    }
    let step = Schedule {
        base_lr: 0.1,
        passes: 6,
        crops_per_image: 4,
        kind: ScheduleKind::StepMilestones {
            milestones: vec![8, 16],
            gamma: 0.1,
        },
    };
    println!("step m=4: {:?}", step.sequence()?);
    Ok(())
}
