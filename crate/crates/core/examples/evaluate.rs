//! Scores dense, global and k-means indexes on a planted benchmark and prints
//! the comparison table.

use clusterlens::aggregate::aggregate;
use clusterlens::eval::{evaluate, EvalReport, EvalSpec};
use clusterlens::synth::{generate, SynthSpec};
use clusterlens::{AggregationConfig, FlatIndex, Method};

fn main() -> clusterlens::Result<()> {
    let data = generate(&SynthSpec { image_count: 300, ..SynthSpec::default() })?;
    let queries = data.queries();
    let spec = EvalSpec { size_band: Some(data.spec.area_of(4)), ..EvalSpec::new(&data.manifest) };

    let mut reports = Vec::new();
    for method in [Method::Dense, Method::Global, Method::Kmeans] {
        let config = AggregationConfig::with_method(method, 10);
        let sets = data.maps.iter().map(|m| aggregate(m, &config, None)).collect::<clusterlens::Result<Vec<_>>>()?;
        reports.push((method.name(), evaluate(&FlatIndex::from_sets(&sets)?, &queries, &spec)?));
    }
    let rows: Vec<(&str, &EvalReport)> = reports.iter().map(|(n, r)| (*n, r)).collect();
    print!("{}", EvalReport::to_csv(&rows));
    Ok(())
}
