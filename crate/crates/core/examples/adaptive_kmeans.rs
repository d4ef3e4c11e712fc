//! Per-image cluster count chosen by BIC from a candidate list.

use clusterlens::aggregate::adaptive_kmeans;
use clusterlens::synth::{generate, SynthSpec};
use clusterlens::{AggregationConfig, Method};

fn main() -> clusterlens::Result<()> {
    let data = generate(&SynthSpec { image_count: 4, ..SynthSpec::default() })?;
    let config = AggregationConfig {
        adaptive_candidates: vec![5, 10, 15, 20, 25],
        ..AggregationConfig::with_method(Method::AdaptiveKmeans, 10)
    };
    for map in &data.maps {
        let sel = adaptive_kmeans(map, &config)?;
        let scores: Vec<String> = sel.scores.iter().map(|(k, b)| format!("{k}:{b:.0}")).collect();
        println!("{} -> k={} (BIC {})", map.image_id, sel.selected, scores.join(" "));
    }
    Ok(())
}
