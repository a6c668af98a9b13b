use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Number of batches per epoch; the final short batch is kept.
pub fn batch_count(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size)
}

/// RNG for one epoch of a seeded run, distinct per `(seed, epoch, stream)`.
pub fn epoch_rng(seed: u64, epoch: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos((epoch as u128) << 40);
    rng
}

/// Sample indices of every batch of `epoch`, from one seeded permutation.
pub fn epoch_batches(samples: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..samples).collect();
    order.shuffle(&mut epoch_rng(seed, epoch, 1));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
