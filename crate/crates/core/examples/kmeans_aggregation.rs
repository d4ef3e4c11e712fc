//! Condenses a dense map to ten k-means representatives and shows which grid
//! cells each one covers.

use clusterlens::aggregate::aggregate;
use clusterlens::synth::{generate, SynthSpec};
use clusterlens::{AggregationConfig, Method};

fn main() -> clusterlens::Result<()> {
    let data = generate(&SynthSpec { image_count: 1, objects_per_image: (2, 2), ..SynthSpec::default() })?;
    let map = &data.maps[0];
    let set = aggregate(map, &AggregationConfig::with_method(Method::Kmeans, 10), None)?;
    println!("{}: {} locations -> {} representatives", map.image_id, map.len(), set.len());

    let (h, w) = map.grid_dims();
    let labels = set.assignment.as_ref().expect("k-means keeps its assignment").labels();
    for row in labels.chunks(w).take(h) {
        println!("{}", row.iter().map(|l| char::from(b'0' + *l as u8)).collect::<String>());
    }
    for obj in &data.log {
        println!("planted concept {} over {} cells", obj.category_id, obj.cells.len());
    }
    Ok(())
}
