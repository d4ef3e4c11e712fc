//! Max-over-representatives cosine search with a prompt-ensembled query.

use clusterlens::aggregate::aggregate;
use clusterlens::index::{ensemble_query, search};
use clusterlens::synth::{generate, SynthSpec};
use clusterlens::{AggregationConfig, FlatIndex, Method};

fn main() -> clusterlens::Result<()> {
    let data = generate(&SynthSpec { image_count: 200, ..SynthSpec::default() })?;
    let config = AggregationConfig::with_method(Method::Kmeans, 10);
    let sets = data.maps.iter().map(|m| aggregate(m, &config, None)).collect::<clusterlens::Result<Vec<_>>>()?;
    let index = FlatIndex::from_sets(&sets)?;

    // two noisy "prompts" for concept 1
    let proto = &data.prototypes[0];
    let prompts: Vec<Vec<f32>> = [0.05f32, -0.05]
        .iter()
        .map(|d| proto.iter().enumerate().map(|(i, x)| x + d * (i % 3) as f32).collect())
        .collect();
    let query = ensemble_query(&prompts)?;
    let ranked = search(&index, &query, 5)?;

    let truth: std::collections::HashSet<&str> =
        data.log.iter().filter(|o| o.category_id == 1).map(|o| o.image_id.as_str()).collect();
    for e in &ranked.entries {
        let mark = if truth.contains(e.image_id.as_str()) { "+" } else { " " };
        println!("{mark} {} {:.4}", e.image_id, e.score);
    }
    Ok(())
}
