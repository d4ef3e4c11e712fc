//! Ward clustering with and without the grid-connectivity constraint.

use clusterlens::aggregate::aggregate;
use clusterlens::synth::{generate, SynthSpec};
use clusterlens::{AggregationConfig, Method};

fn main() -> clusterlens::Result<()> {
    let data =
        generate(&SynthSpec { image_count: 1, grid_dims: (8, 8), object_patch_count: (2, 8), ..SynthSpec::default() })?;
    let map = &data.maps[0];
    for method in [Method::AgT, Method::AgF] {
        let set = aggregate(map, &AggregationConfig::with_method(method, 6), None)?;
        let sizes: Vec<usize> = set.assignment.as_ref().unwrap().members().iter().map(Vec::len).collect();
        println!("{:>5}: cluster sizes {sizes:?}", method.name());
    }
    Ok(())
}
