use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator number `stream` derived from a master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard exponential weights for a weighted bootstrap replicate.
pub fn exponential_weights<R: rand::Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(rand_distr::Exp1)).collect()
}
