//! Fast-training refinement: overfit the scoring mini-batch for a few
//! full-batch steps before scoring, and watch the loss trace and the score
//! move.
//!
//!     cargo run --example fast_training

use das::data::{load_dataset, DatasetSource};
use das::fasttrain::{fast_train_then_score, FastTrainConfig};
use das::proxy::Lambda;
use das::seed::stream_rng;
use das::space::{sample_random, Skeleton};

fn main() {
    let seed = 3;
    let spec = sample_random(seed).expect("sampling succeeds");
    let skeleton = Skeleton::default();
    let splits = load_dataset(&DatasetSource::synthetic_default(), seed).expect("dataset");
    let mut rng = stream_rng(seed, "score-batch", 0);
    let batch = splits.scorebatch.pick_batch(64, &mut rng);

    println!("spec {}\n", spec.spec_hash());
    println!("{:>4}  {:>12}  {:>10}  {:>10}", "e_f", "score", "loss[0]", "loss[last]");
    for e_f in [0usize, 5, 15, 30] {
        let cfg = FastTrainConfig::with_epochs(seed, e_f);
        let (score, trace) = fast_train_then_score(
            &spec,
            &skeleton,
            &batch.images,
            &batch.labels,
            &cfg,
            Lambda::Auto,
        )
        .expect("scoring");
        let (first, last) = match trace.losses.as_slice() {
            [] => (f64::NAN, f64::NAN),
            l => (l[0], *l.last().unwrap()),
        };
        println!("{:>4}  {:>12.4}  {:>10.4}  {:>10.4}", e_f, score.value, first, last);
    }
    println!("\nthe same initialization is shared by every row (seeded streams),");
    println!("so differences come from the training steps alone");
}
