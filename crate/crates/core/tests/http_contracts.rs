use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use persumm_core::embedding::{EmbeddingProvider, HttpEmbedder};
use persumm_core::eval::external::{scorer_from_arg, ScoreRequest};
use persumm_core::gateway::{AgentSpec, Gateway, GatewayError, HttpBackend, RetryPolicy};
use persumm_core::PromptMessages;

#[derive(Default)]
struct Counters {
    chat: AtomicUsize,
}

async fn chat(State(c): State<Arc<Counters>>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let n = c.chat.fetch_add(1, Ordering::SeqCst);
    let user = body["messages"][1]["content"].as_str().unwrap_or_default();
    if user.contains("always-fail") {
        return (StatusCode::BAD_REQUEST, Json(json!({"error": "bad prompt"})));
    }
    if user.contains("flaky") && n == 0 {
        return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "busy"})));
    }
    let auth = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .unwrap_or("none")
        .to_string();
    let content = format!(
        "model={} temp={} system={} auth={}",
        body["model"].as_str().unwrap(),
        body["temperature"],
        body["messages"][0]["content"].as_str().unwrap(),
        auth
    );
    (StatusCode::OK, Json(json!({"choices": [{"message": {"role": "assistant", "content": content}}]})))
}

async fn embed(Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let texts = body["texts"].as_array().cloned().unwrap_or_default();
    if texts.is_empty() {
        return (StatusCode::BAD_REQUEST, Json(json!({"error": "empty texts"})));
    }
    let vectors: Vec<Vec<f64>> = texts
        .iter()
        .map(|t| {
            let s = t.as_str().unwrap();
            vec![s.len() as f64, s.split_whitespace().count() as f64, 1.0]
        })
        .collect();
    (StatusCode::OK, Json(json!({ "vectors": vectors })))
}

async fn score(body: String) -> String {
    body.lines()
        .map(|l| {
            let r: ScoreRequest = serde_json::from_str(l).unwrap();
            let same = if r.reference == r.hypothesis { 1.0 } else { 0.5 };
            json!({"id": r.id, "bertscore": same, "alignscore": 0.4, "summac": 0.3}).to_string() + "\n"
        })
        .collect()
}

async fn serve() -> (String, Arc<Counters>) {
    let counters = Arc::new(Counters::default());
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/embed", post(embed))
        .route("/score", post(score))
        .with_state(counters.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}"), counters)
}

fn prompt(user: &str) -> PromptMessages {
    PromptMessages {
        system: "sys".into(),
        user: user.into(),
    }
}

fn gateway() -> Gateway {
    Gateway::new(Arc::new(HttpBackend::new(Duration::from_secs(5)).unwrap())).with_retry(RetryPolicy::immediate())
}

#[tokio::test]
async fn chat_request_shape_and_retry() {
    let (base, counters) = serve().await;
    let agent = AgentSpec::new("llama", format!("{base}/v1/chat/completions").parse().unwrap(), "LLaMA-3.3-70B-Instruct")
        .with_temperature(0.5);
    let r = gateway().complete(&agent, &prompt("flaky question")).await.unwrap();
    assert_eq!(r.attempt, 2);
    assert_eq!(r.text, "model=LLaMA-3.3-70B-Instruct temp=0.5 system=sys auth=none");
    assert_eq!(counters.chat.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let (base, counters) = serve().await;
    let agent = AgentSpec::new("llama", format!("{base}/v1/chat/completions").parse().unwrap(), "m");
    let e = gateway().complete(&agent, &prompt("always-fail")).await.unwrap_err();
    assert!(matches!(e, GatewayError::Rejected { .. }), "{e:?}");
    assert_eq!(counters.chat.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn bearer_token_from_environment() {
    let (base, _) = serve().await;
    let mut agent = AgentSpec::new("gpt", format!("{base}/v1/chat/completions").parse().unwrap(), "GPT-4o");
    agent.auth_ref = Some("PERSUMM_TEST_TOKEN".into());
    // SAFETY: no other test reads or writes this variable.
    unsafe { std::env::set_var("PERSUMM_TEST_TOKEN", "s3cret") };
    let r = gateway().complete(&agent, &prompt("hi")).await.unwrap();
    assert!(r.text.ends_with("auth=Bearer s3cret"), "{}", r.text);
    agent.auth_ref = Some("PERSUMM_TEST_TOKEN_UNSET".into());
    assert!(gateway().complete(&agent, &prompt("hi")).await.is_err());
}

#[tokio::test]
async fn embed_endpoint_contract() {
    let (base, _) = serve().await;
    let e = HttpEmbedder::new(format!("{base}/embed").parse().unwrap());
    let items = vec![("a".to_string(), "two words".to_string()), ("b".to_string(), "one".to_string())];
    let out = e.embed(&items).await.unwrap();
    assert_eq!(out["a"].values(), &[9.0, 2.0, 1.0]);
    assert_eq!(out["b"].values(), &[3.0, 1.0, 1.0]);
    assert!(e.embed(&[]).await.unwrap().is_empty());
}

#[tokio::test]
async fn scorer_endpoint_contract() {
    let (base, _) = serve().await;
    let scorer = scorer_from_arg(&format!("{base}/score")).unwrap();
    let req = |id: &str, h: &str| ScoreRequest {
        id: id.into(),
        source: "src".into(),
        reference: "ref".into(),
        hypothesis: h.into(),
    };
    let out = scorer.score(&[req("x::CAUSE", "ref"), req("y::QUESTION", "other")]).await.unwrap();
    let expected: BTreeMap<_, _> = [("x::CAUSE", 1.0), ("y::QUESTION", 0.5)].into_iter().collect();
    for (id, bs) in expected {
        assert_eq!(out[id].bertscore, bs);
        assert_eq!(out[id].summac, 0.3);
    }
}
