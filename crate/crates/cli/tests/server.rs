use std::path::{Path, PathBuf};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use futures_util::{SinkExt, StreamExt};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use specex_cli::server::{router, AppState, Created};
use specex_core::service::SessionConfig;
use tokio_tungstenite::tungstenite::Message;
use tower::ServiceExt;

fn corpus(dir: &Path) -> PathBuf {
    let texts = [
        "rocket orbit launch shuttle", "pitcher inning homer bullpen", "orbit launch shuttle satellite",
        "inning homer bullpen glove", "launch shuttle satellite rocket", "homer bullpen glove pitcher",
        "zebra quartz", "violin marble", "tundra pepper", "cobalt sonnet", "walrus ember", "falcon opal",
    ];
    let path = dir.join("c.jsonl");
    let body: String = texts
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}\n", json!({ "id": format!("d{i:02}"), "text": t })))
        .collect();
    std::fs::write(&path, body).unwrap();
    path
}

fn state(dir: &Path) -> AppState {
    let mut config = SessionConfig::default();
    config.speculation.trigger = specex_core::engine::TriggerMode::EveryBuffer;
    config.speculation.pause_on_speculation = false;
    AppState::new(Some(corpus(dir)), config)
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

#[tokio::test(flavor = "multi_thread")]
async fn session_lifecycle_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(dir.path()));

    let (status, body) = call(&app, "POST", "/sessions", Some("{}".into())).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let created: Created = serde_json::from_str(&body).unwrap();
    assert_eq!(created.snapshot.buffer_size, 12);
    let id = created.session_id;

    let (status, body) = call(&app, "POST", "/sessions", Some("{}".into())).await;
    assert_eq!(status, StatusCode::CREATED);
    let second: Created = serde_json::from_str(&body).unwrap();
    assert_ne!(second.session_id, id);

    let step = json!({ "type": "step", "seq": 1, "payload": { "count": 5 } }).to_string();
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/messages"), Some(step)).await;
    assert_eq!(status, StatusCode::OK);
    let replies: Vec<Value> = serde_json::from_str(&body).unwrap();
    assert_eq!(replies[0]["type"], "step_result");
    assert_eq!(replies[0]["payload"]["request_seq"], 1);

    let (status, body) = call(&app, "GET", &format!("/sessions/{id}/snapshot"), None).await;
    assert_eq!(status, StatusCode::OK);
    let snap: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(snap["session_id"], id.as_str());

    let (status, body) = call(&app, "GET", &format!("/sessions/{id}/provenance"), None).await;
    assert_eq!(status, StatusCode::OK);
    let kinds: Vec<String> = body
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(&kinds[..3], ["config", "ingest", "trigger"]);
    assert_eq!(kinds.len() as u64, snap["provenance_len"].as_u64().unwrap());

    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/messages"), Some("{oops".into())).await;
    assert_eq!(status, StatusCode::OK);
    let replies: Vec<Value> = serde_json::from_str(&body).unwrap();
    assert_eq!(replies[0]["payload"]["code"], "invalid_json");

    let (status, _) = call(&app, "GET", "/sessions/nope/snapshot", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/sessions", Some(r#"{"corpus":"/no/such.jsonl"}"#.into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn websocket_streams_replies_and_pushes() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(dir.path()));
    let (_, body) = call(&app, "POST", "/sessions", Some("{}".into())).await;
    let id = serde_json::from_str::<Created>(&body).unwrap().session_id;

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/{id}/stream"))
        .await
        .unwrap();
    let step = json!({ "type": "step", "seq": 7, "payload": { "count": 1 } }).to_string();
    ws.send(Message::Text(step.into())).await.unwrap();

    let mut seen = Vec::new();
    let deadline = tokio::time::Instant::now() + Duration::from_secs(30);
    while !(seen.iter().any(|m: &Value| m["type"] == "step_result")
        && seen.iter().any(|m: &Value| m["type"] == "sandbox_ready"))
    {
        let msg = tokio::time::timeout_at(deadline, ws.next())
            .await
            .expect("stream went quiet")
            .unwrap()
            .unwrap();
        if let Message::Text(t) = msg {
            seen.push(serde_json::from_str(&t).unwrap());
        }
    }
    let reply = seen.iter().find(|m| m["type"] == "step_result").unwrap();
    assert_eq!(reply["payload"]["request_seq"], 7);
    assert_eq!(reply["payload"]["report"]["batches"].as_array().unwrap().len(), 1);
    let ready = seen.iter().find(|m| m["type"] == "sandbox_ready").unwrap();
    assert_eq!(ready["payload"]["batch_id"], reply["payload"]["report"]["batches"][0]);
    for m in &seen {
        assert!(m["seq"].is_u64() && m["payload"].is_object());
    }
    ws.close(None).await.unwrap();
}
