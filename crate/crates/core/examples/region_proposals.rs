//! Region-mask aggregation: pixel masks are max-pooled down to the patch grid
//! and each surviving mask becomes one averaged representative.

use clusterlens::aggregate::{aggregate, downsample_mask};
use clusterlens::store::RleMask;
use clusterlens::{AggregationConfig, EmbeddingMap, Method, SegmentMask};

fn main() -> clusterlens::Result<()> {
    let (h, w) = (64, 64);
    let square = |r0: usize, c0: usize, side: usize| -> Vec<bool> {
        (0..h * w).map(|p| (r0..r0 + side).contains(&(p / w)) && (c0..c0 + side).contains(&(p % w))).collect()
    };
    // the 3-pixel mask survives downsampling to 4x4 because pooling takes the max
    let masks = SegmentMask::new("img", h, w, vec![square(0, 0, 32), square(40, 40, 3)])?;
    let rle = RleMask::encode(h, w, &masks.masks[1]);
    println!("small mask as RLE: {:?}", rle.rle);
    println!("downsampled: {:?}", downsample_mask(&masks.masks[1], h, w, (4, 4))?);

    let values: Vec<f32> = (0..16).flat_map(|i| [i as f32, 1.0]).collect();
    let map = EmbeddingMap::new("img", 4, 4, 2, values)?;
    let set = aggregate(&map, &AggregationConfig::with_method(Method::RegionProposal, 1), Some(&masks))?;
    for i in 0..set.len() {
        println!("region {i}: {:?}", set.vector(i));
    }
    Ok(())
}
