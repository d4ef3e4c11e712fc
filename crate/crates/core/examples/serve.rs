//! Runs the query service on a random local port and sends it one request.

use std::sync::Arc;

use clusterlens::service::{serve, AppState, QueryResponse, ServiceConfig};
use clusterlens::synth::{generate, SynthSpec};
use clusterlens::{FlatIndex, RepresentativeSet};

#[tokio::main]
async fn main() -> clusterlens::Result<()> {
    let data = generate(&SynthSpec { image_count: 50, channels: 32, ..SynthSpec::default() })?;
    let sets: Vec<_> = data.maps.iter().map(RepresentativeSet::global_mean).collect();
    let state = Arc::new(AppState::new(FlatIndex::from_sets(&sets)?, ServiceConfig::default()));

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let url = format!("http://{}/v1/query", listener.local_addr()?);
    tokio::spawn(serve(listener, state));

    let body = serde_json::json!({ "vector": data.prototypes[2], "top_k": 3 });
    let reply: QueryResponse =
        tokio::task::spawn_blocking(move || ureq::post(&url).send_json(body)?.body_mut().read_json::<QueryResponse>())
            .await
            .expect("request task")
            .map_err(|e| clusterlens::Error::Encoder(e.to_string()))?;
    for r in &reply.results {
        println!("{} {:.4}", r.image_id, r.score);
    }
    Ok(())
}
