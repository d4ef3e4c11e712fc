//! Generates the planted-concept dataset on disk, ready for the CLI.
//!
//! ```text
//! cargo run --release --example synth_benchmark -- /tmp/bench
//! clusterlens aggregate --method kmeans --input /tmp/bench/dense.epk --output /tmp/bench/kmeans.epk
//! ```

use clusterlens::synth::{generate, SynthSpec};

fn main() -> clusterlens::Result<()> {
    let out =
        std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("clusterlens_bench").display().to_string());
    let data = generate(&SynthSpec::default())?;
    data.write_to(&out)?;
    let small = data.log.iter().filter(|o| data.spec.area_of(o.cells.len()) <= data.spec.area_of(4)).count();
    println!("{} images, {} objects ({small} small) written to {out}", data.maps.len(), data.log.len());
    Ok(())
}
