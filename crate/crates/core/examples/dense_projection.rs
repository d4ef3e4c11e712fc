//! Projects a backbone feature grid into the joint embedding space, both as a
//! dense map and as one attention-pooled global vector.

use clusterlens::tensor::{dense_project, global_attention_pool, Affine, AttentionHead};
use clusterlens::{FeatureGrid, ProjectionWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn affine(rng: &mut ChaCha8Rng, i: usize, o: usize) -> Affine {
    let w = (0..i * o).map(|_| rng.random_range(-0.3..0.3)).collect();
    Affine::new(i, o, w, vec![0.0; o]).unwrap()
}

fn main() -> clusterlens::Result<()> {
    let (c_e, c_q, c_v, c_o, heads) = (16, 8, 8, 12, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let heads = (0..heads)
        .map(|_| AttentionHead {
            query: affine(&mut rng, c_e, c_q),
            key: affine(&mut rng, c_e, c_q),
            value: affine(&mut rng, c_e, c_v),
        })
        .collect();
    let weights = ProjectionWeights::new(heads, affine(&mut rng, 2 * c_v, c_o))?;

    let grid = FeatureGrid::new(7, 7, c_e, (0..49 * c_e).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let dense = dense_project(&grid, &weights)?;
    let global = global_attention_pool(&grid, &weights)?;
    println!("dense map: {:?} grid, {} channels", dense.grid_dims(), dense.channels());
    println!("global vector: {} channels, first {:.4}", global.len(), global[0]);
    Ok(())
}
