//! Export the activation-overlap kernel of one architecture as CSV and
//! grayscale PGM, before and after fast training, into ./kernel_out.
//! Well-separated inputs give a bright diagonal on a darker field.
//!
//!     cargo run --example kernel_images

use std::fs;
use std::path::Path;

use das::data::{load_dataset, DatasetSource};
use das::fasttrain::{fast_train, FastTrainConfig};
use das::proxy::{extract_codes, hamming_kernel, kernel_dump, log_det, normalize_kernel};
use das::seed::stream_rng;
use das::space::{sample_random, Skeleton};

fn main() {
    let seed = 7;
    // walk seeds until the cell has interior nodes (still deterministic)
    let spec = (seed..)
        .map(|s| sample_random(s).expect("sampling succeeds"))
        .find(|s| s.num_nodes() >= 4)
        .unwrap();
    let skeleton = Skeleton::default();
    let splits = load_dataset(&DatasetSource::synthetic_default(), seed).expect("dataset");
    let mut rng = stream_rng(seed, "score-batch", 0);
    let batch = splits.scorebatch.pick_batch(32, &mut rng);

    let out = Path::new("kernel_out");
    fs::create_dir_all(out).expect("output dir");

    for (name, e_f) in [("init", 0usize), ("fast30", 30)] {
        let cfg = FastTrainConfig::with_epochs(seed, e_f);
        let (mut net, trace) =
            fast_train(&spec, &skeleton, &batch.images, &batch.labels, &cfg).expect("training");
        assert!(trace.diverged_at.is_none(), "diverged");
        let codes = extract_codes(&mut net, &batch.images).expect("codes");
        let raw = hamming_kernel(&codes).expect("kernel");
        let normalized = normalize_kernel(&raw);
        let stem = out.join(format!("{}_{}", spec.spec_hash(), name));
        kernel_dump(&normalized, &stem).expect("dump");
        println!(
            "{}: log|NK_H| = {:.3} -> {}.csv / .pgm",
            name,
            log_det(&normalized),
            stem.display()
        );
    }
}
