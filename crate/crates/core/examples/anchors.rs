//! Fixed square anchors: the grid split into 1x1, 2x2 and 3x3 windows.

use clusterlens::aggregate::aggregate;
use clusterlens::synth::{generate, SynthSpec};
use clusterlens::{AggregationConfig, Method};

fn main() -> clusterlens::Result<()> {
    let data = generate(&SynthSpec { image_count: 1, ..SynthSpec::default() })?;
    let config =
        AggregationConfig { anchors_divisions: vec![1, 2, 3], ..AggregationConfig::with_method(Method::Anchors, 1) };
    let set = aggregate(&data.maps[0], &config, None)?;
    println!("{} anchors over a {:?} grid", set.len(), set.grid_dims);
    Ok(())
}
