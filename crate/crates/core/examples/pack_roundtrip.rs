//! Writes representatives to an EPK1 pack with cluster labels and streams
//! them back.

use clusterlens::aggregate::aggregate;
use clusterlens::store::{read_pack, PackWriter, HEADER_LEN};
use clusterlens::synth::{generate, SynthSpec};
use clusterlens::{AggregationConfig, Method};

fn main() -> clusterlens::Result<()> {
    let data = generate(&SynthSpec { image_count: 3, channels: 32, ..SynthSpec::default() })?;
    let path = std::env::temp_dir().join("clusterlens_example.epk");
    let config = AggregationConfig::with_method(Method::Kmeans, 5);

    let mut writer = PackWriter::create(&path, 32, true)?;
    for map in &data.maps {
        writer.write_representatives(&aggregate(map, &config, None)?)?;
    }
    let (summary, _) = writer.finish()?;
    println!(
        "wrote {} records, {} bytes after a {HEADER_LEN}-byte header",
        summary.records,
        std::fs::metadata(&path)?.len() - HEADER_LEN
    );

    for record in read_pack(&path)? {
        let r = record?;
        println!("{} {} vectors, labels {}", r.image_id, r.vec_count(32), r.labels.map_or(0, |l| l.len()));
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
