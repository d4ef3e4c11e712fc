//! Soft aggregation: clusters are found on the attention inputs, then each
//! cluster mean is used as the attention query over the whole grid.

use clusterlens::aggregate::attention_aggregate;
use clusterlens::tensor::{Affine, AttentionHead};
use clusterlens::{AggregationConfig, FeatureGrid, Method, ProjectionWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> clusterlens::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut affine = |i: usize, o: usize| {
        Affine::new(i, o, (0..i * o).map(|_| rng.random_range(-0.3..0.3)).collect(), vec![0.0; o]).unwrap()
    };
    let head = AttentionHead { query: affine(24, 8), key: affine(24, 8), value: affine(24, 8) };
    let weights = ProjectionWeights::new(vec![head], affine(8, 16))?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grid = FeatureGrid::new(10, 10, 24, (0..100 * 24).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let set = attention_aggregate("img", &grid, &weights, &AggregationConfig::with_method(Method::Attention, 4))?;
    println!("{} soft representatives of {} channels", set.len(), set.channels);
    Ok(())
}
