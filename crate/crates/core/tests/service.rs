use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use clusterlens::service::{router, AppState, EncodeResponse, ServiceConfig};
use clusterlens::{FlatIndex, Method};
use serde_json::{json, Value};
use tower::ServiceExt;

const C: usize = 4;

fn index() -> FlatIndex {
    let mut b = FlatIndex::builder(C);
    b.add("a", Method::Global, &[1.0, 0.0, 0.0, 0.0]).unwrap();
    b.add("b", Method::Kmeans, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
    b.add("c", Method::Global, &[0.6, 0.8, 0.0, 0.0]).unwrap();
    b.finish()
}

fn state(config: ServiceConfig) -> Arc<AppState> {
    Arc::new(AppState::new(index(), ServiceConfig { max_top_k: 10, ..config }))
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = router(Arc::clone(state)).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), 1 << 20).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn ids(v: &Value) -> Vec<&str> {
    v["results"].as_array().unwrap().iter().map(|r| r["image_id"].as_str().unwrap()).collect()
}

#[tokio::test]
async fn vector_query_ranks_by_best_representative() {
    let s = state(ServiceConfig::default());
    let (code, v) = call(&s, "POST", "/v1/query", Some(json!({"vector": [0.0, 0.0, 2.0, 0.0], "top_k": 2}))).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(ids(&v), vec!["b", "a"]);
    assert!((v["results"][0]["score"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(v["top_k"], 2);
    assert!(v["latency_ms"].as_f64().unwrap() >= 0.0);
}

#[tokio::test]
async fn self_query_comes_first() {
    let s = state(ServiceConfig::default());
    let (_, v) = call(&s, "POST", "/v1/query", Some(json!({"vector": [0.6, 0.8, 0.0, 0.0]}))).await;
    assert_eq!(ids(&v)[0], "c");
    assert!((v["results"][0]["score"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(ids(&v).len(), 3);
}

#[tokio::test]
async fn bad_requests_are_400_with_reasons() {
    let s = state(ServiceConfig::default());
    let cases = [
        (json!({"vector": [1.0, 2.0]}), "expected 4"),
        (json!({"vector": [1.0, 0.0, 0.0, 0.0], "top_k": 11}), "1..=10"),
        (json!({"vector": [1.0, 0.0, 0.0, 0.0], "top_k": 0}), "top_k"),
        (json!({"vector": [0.0, 0.0, 0.0, 0.0]}), "norm"),
        (json!({}), "vector or a text"),
        (json!({"vector": [1.0, 0.0, 0.0, 0.0], "text": "cat"}), "not both"),
        (json!({"text": "cat"}), "vector queries only"),
    ];
    for (body, needle) in cases {
        let (code, v) = call(&s, "POST", "/v1/query", Some(body.clone())).await;
        assert_eq!(code, StatusCode::BAD_REQUEST, "{body}");
        let msg = v["error"].as_str().unwrap();
        assert!(msg.contains(needle), "{body}: {msg}");
    }
}

#[tokio::test]
async fn health_and_stats() {
    let s = state(ServiceConfig::default());
    let (code, v) = call(&s, "GET", "/v1/healthz", None).await;
    assert_eq!((code, v), (StatusCode::OK, json!({"status": "ok"})));
    let (_, v) = call(&s, "GET", "/v1/stats", None).await;
    assert_eq!(v, json!({"vectors": 4, "channels": 4, "images": 3}));
}

#[tokio::test]
async fn swapped_index_is_served() {
    let s = state(ServiceConfig::default());
    let mut b = FlatIndex::builder(C);
    b.add("z", Method::Global, &[0.0, 0.0, 0.0, 1.0]).unwrap();
    let old = s.swap_index(b.finish());
    assert_eq!(old.image_count(), 3);
    let (_, v) = call(&s, "POST", "/v1/query", Some(json!({"vector": [1.0, 0.0, 0.0, 0.0]}))).await;
    assert_eq!(ids(&v), vec!["z"]);
}

async fn spawn(app: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn text_queries_go_through_the_encoder() {
    let encoder = Router::new().route(
        "/v1/encode",
        post(|Json(body): Json<Value>| async move {
            let vector = if body["text"] == "second axis" { vec![0.0, 3.0, 0.0, 0.0] } else { vec![1.0, 0.0] };
            Json(EncodeResponse { vector })
        }),
    );
    let url = spawn(encoder).await;
    let s = state(ServiceConfig { encoder_url: Some(url), ..ServiceConfig::default() });

    let (code, v) = call(&s, "POST", "/v1/query", Some(json!({"text": "second axis", "top_k": 1}))).await;
    assert_eq!(code, StatusCode::OK, "{v}");
    assert_eq!(ids(&v), vec!["b"]);

    let (code, v) = call(&s, "POST", "/v1/query", Some(json!({"text": "other"}))).await;
    assert_eq!(code, StatusCode::BAD_GATEWAY);
    assert!(v["error"].as_str().unwrap().contains("2 dims"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unreachable_encoder_is_502() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let config = ServiceConfig {
        encoder_url: Some(format!("http://127.0.0.1:{port}")),
        encoder_timeout: Duration::from_secs(2),
        ..ServiceConfig::default()
    };
    let s = state(config);
    let (code, v) = call(&s, "POST", "/v1/query", Some(json!({"text": "cat"}))).await;
    assert_eq!(code, StatusCode::BAD_GATEWAY);
    assert!(v["error"].as_str().unwrap().contains("text encoder"), "{v}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn served_over_tcp() {
    let s = state(ServiceConfig::default());
    let base = spawn(router(s)).await;
    let body = tokio::task::spawn_blocking(move || {
        ureq::post(&format!("{base}/v1/query"))
            .send_json(json!({"vector": [1.0, 0.0, 0.0, 0.0], "top_k": 1}))
            .unwrap()
            .body_mut()
            .read_json::<Value>()
            .unwrap()
    })
    .await
    .unwrap();
    assert_eq!(ids(&body), vec!["a"]);
}
