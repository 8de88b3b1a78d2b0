//! The LLM client against a local mock of the chat-completions endpoint.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use concept_coherence::elicitation::{run_triplets, LlmClient, LlmRunConfig, PromptTemplate, Task};
use concept_coherence::{Choice, ConceptSet};
use serde_json::{json, Value};

#[derive(Default)]
struct Mock {
    calls: AtomicUsize,
    /// Number of leading requests answered with 503.
    fail_first: usize,
    auth: Mutex<Vec<Option<String>>>,
}

/// Picks the first-named option of a triplet prompt.
fn answer(prompt: &str) -> String {
    let rest = prompt.split(" - ").nth(1).unwrap_or("");
    rest.split(" or ").next().unwrap_or("").to_string()
}

fn spawn(mock: Arc<Mock>) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let app = Router::new().route(
                "/v1/chat/completions",
                post(move |headers: HeaderMap, Json(body): Json<Value>| {
                    let mock = Arc::clone(&mock);
                    async move {
                        let n = mock.calls.fetch_add(1, Ordering::SeqCst);
                        let auth = headers.get("authorization").map(|v| v.to_str().unwrap().to_string());
                        mock.auth.lock().unwrap().push(auth);
                        if n < mock.fail_first {
                            return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "busy"})));
                        }
                        let prompt = body["messages"][0]["content"].as_str().unwrap_or("");
                        let reply = json!({"choices": [{"message": {"role": "assistant", "content": answer(prompt)}}]});
                        (StatusCode::OK, Json(reply))
                    }
                }),
            );
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn config(addr: SocketAddr, key_var: &str) -> LlmRunConfig {
    LlmRunConfig {
        endpoint_url: format!("http://{addr}/v1"),
        model_name: "mock-model".into(),
        api_key_env_var_name: key_var.into(),
        backoff_base_ms: 1,
        concurrency: 2,
        ..LlmRunConfig::default()
    }
}

#[test]
fn triplets_over_http_with_bearer_key_and_retries() {
    let mock = Arc::new(Mock {
        fail_first: 2,
        ..Mock::default()
    });
    let addr = spawn(Arc::clone(&mock));
    std::env::set_var("CC_TEST_HTTP_KEY", "sk-test");
    let client = LlmClient::http(config(addr, "CC_TEST_HTTP_KEY")).unwrap();
    let concepts = ConceptSet::tools_and_reptiles();
    let queries = [(0, 1, 2), (3, 4, 5), (20, 21, 22)];
    let out = run_triplets(&client, &concepts, &queries, &PromptTemplate::default_for(Task::Triplet)).unwrap();
    assert!(out.skipped.is_empty());
    assert_eq!(out.records.len(), 3);
    for r in &out.records {
        assert_eq!(r.choice, Choice::A);
        assert_eq!(r.respondent_id, "mock-model");
    }
    assert_eq!(mock.calls.load(Ordering::SeqCst), 5);
    assert!(mock
        .auth
        .lock()
        .unwrap()
        .iter()
        .all(|a| a.as_deref() == Some("Bearer sk-test")));
}

#[test]
fn cached_rerun_makes_no_requests() {
    let mock = Arc::new(Mock::default());
    let addr = spawn(Arc::clone(&mock));
    let cache = tempfile::tempdir().unwrap();
    let cfg = LlmRunConfig {
        cache_dir: Some(cache.path().to_path_buf()),
        ..config(addr, "CC_TEST_UNSET_KEY")
    };
    let concepts = ConceptSet::tools_and_reptiles();
    let template = PromptTemplate::default_for(Task::Triplet);
    let queries = [(0, 1, 2), (5, 6, 7)];

    let first = run_triplets(&LlmClient::http(cfg.clone()).unwrap(), &concepts, &queries, &template).unwrap();
    assert_eq!(mock.calls.load(Ordering::SeqCst), 2);
    assert!(mock.auth.lock().unwrap().iter().all(Option::is_none));

    let client = LlmClient::http(cfg).unwrap();
    let second = run_triplets(&client, &concepts, &queries, &template).unwrap();
    assert_eq!(client.network_calls(), 0);
    assert_eq!(mock.calls.load(Ordering::SeqCst), 2);
    let choices = |o: &concept_coherence::elicitation::RunOutput<concept_coherence::TripletRecord>| {
        o.records.iter().map(|r| r.choice).collect::<Vec<_>>()
    };
    assert_eq!(choices(&first), choices(&second));
}

#[test]
fn persistent_failure_surfaces_transport_error() {
    let mock = Arc::new(Mock {
        fail_first: usize::MAX,
        ..Mock::default()
    });
    let addr = spawn(Arc::clone(&mock));
    let cfg = LlmRunConfig {
        max_retries: 2,
        ..config(addr, "CC_TEST_UNSET_KEY")
    };
    let client = LlmClient::http(cfg).unwrap();
    let err = client.complete("hello", 0).unwrap_err();
    assert_eq!(err.kind(), "transport");
    assert_eq!(mock.calls.load(Ordering::SeqCst), 3);
}
