//! Small synthetic datasets for smoke runs, examples and tests.

use rand::Rng;

use super::{epoch_rng, Dataset, Pixels, Result, Split};

/// `count` single-channel `side x side` images; class `k` is a bright
/// vertical bar in the `k`-th of `classes` column bands, on a noisy
/// background. Labels cycle through the classes.
pub fn bars(count: usize, side: usize, classes: usize, split: Split, seed: u64) -> Result<Dataset> {
    let mut rng = epoch_rng(seed, 0, 11 + split as u64);
    let band = (side / classes.max(1)).max(1);
    let mut px = Vec::with_capacity(count * side * side);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % classes.max(1);
        let first = (label * side) / classes.max(1);
        for _y in 0..side {
            for x in 0..side {
                let on = (first..first + band).contains(&x);
                px.push(if on { rng.gen_range(180..=255) } else { rng.gen_range(0..60) });
            }
        }
        labels.push(label);
    }
    Dataset::new(Pixels::U8(px), [count, side, side, 1], labels, split, classes)
}
