use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vtg_audit::config::ServiceConfig;
use vtg_audit::http::{router, AppState};
use vtg_audit::AuditStore;
use vtg_core::dataset::{read_dataset, LoadOptions};

const CONFIG: &str = r#"
qc_threshold = 0.1
video_url_template = "https://cdn.example/{video_id}.mp4"

[[workers]]
id = "admin"
token = "tok-admin"
role = "admin"

[[workers]]
id = "ann1"
token = "tok-1"
role = "annotator"

[[workers]]
id = "ann2"
token = "tok-2"
role = "annotator"
"#;

fn app() -> Router {
    let cfg = ServiceConfig::from_toml_str(CONFIG).unwrap();
    let text = "\
{\"video_id\":\"v1\",\"duration\":60.0,\"query\":\"a man opens the door\",\"span\":[2.0,8.0],\"annotation_id\":\"a1\"}
{\"video_id\":\"v1\",\"duration\":60.0,\"query\":\"the man opens the door\",\"span\":[2.5,8.0],\"annotation_id\":\"a2\"}
{\"video_id\":\"v2\",\"duration\":40.0,\"query\":\"a dog barks\",\"span\":[10.0,14.0],\"annotation_id\":\"a3\"}
";
    let d = read_dataset("bench", text.as_bytes(), LoadOptions::default()).unwrap().dataset;
    router(AppState::new(AuditStore::new([d], cfg.worker_ids()), &cfg))
}

async fn call(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let body = match body {
        Some(v) => Body::from(v.to_string()),
        None => Body::empty(),
    };
    let resp = app
        .clone()
        .oneshot(req.header("content-type", "application/json").body(body).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

fn v(mut body: Value) -> Value {
    body["schema_version"] = json!(1);
    body
}

#[tokio::test]
async fn full_workflow_over_http() {
    let app = app();
    let (s, b) = call(&app, "POST", "/batches", Some("tok-admin"),
        Some(v(json!({"dataset": "bench", "annotation_ids": ["a1", "a2", "a3"]})))).await;
    assert_eq!(s, StatusCode::CREATED, "{b}");
    assert_eq!(b["schema_version"], 1);
    let batch_id = b["batch"]["batch_id"].as_str().unwrap().to_string();
    assert_eq!(b["batch"]["status"], "open");
    assert_eq!(b["batch"]["qc_threshold"], 0.1);

    // review everything as ann1; the first task shows its same-video sibling
    let mut reviewed = Vec::new();
    loop {
        let (s, b) = call(&app, "POST", "/assign", Some("tok-1"), Some(v(json!({"phase": "review"})))).await;
        assert_eq!(s, StatusCode::OK);
        if b["task"].is_null() {
            break;
        }
        let id = b["task"]["task"]["task_id"].as_str().unwrap().to_string();
        if b["task"]["task"]["annotation_id"] == "a1" {
            assert_eq!(b["task"]["video_group"].as_array().unwrap().len(), 2);
            assert_eq!(b["task"]["video_url"], "https://cdn.example/v1.mp4");
        }
        let body = if b["task"]["task"]["annotation_id"] == "a2" {
            json!({"diagnosis": {"errors": ["duplicate_query"]},
                   "correction": {"new_query": "the man closes the door"}})
        } else {
            json!({"diagnosis": "no_error"})
        };
        let (s, r) = call(&app, "POST", &format!("/tasks/{id}/review"), Some("tok-1"), Some(v(body))).await;
        assert_eq!(s, StatusCode::OK, "{r}");
        assert_eq!(r["task"]["state"], "reviewed");
        reviewed.push(id);
    }
    assert_eq!(reviewed.len(), 3);

    // ann1 cannot validate their own work
    let (_, b) = call(&app, "POST", "/assign", Some("tok-1"), Some(v(json!({"phase": "validate"})))).await;
    assert!(b["task"].is_null());

    // qc before validation is a conflict
    let (s, b) = call(&app, "POST", &format!("/batches/{batch_id}/qc"), Some("tok-admin"), None).await;
    assert_eq!(s, StatusCode::CONFLICT, "{b}");

    loop {
        let (_, b) = call(&app, "POST", "/assign", Some("tok-2"), Some(v(json!({"phase": "validate"})))).await;
        if b["task"].is_null() {
            break;
        }
        let id = b["task"]["task"]["task_id"].as_str().unwrap().to_string();
        let (s, _) = call(&app, "POST", &format!("/tasks/{id}/validate"), Some("tok-2"),
            Some(v(json!({"verdict": "correct"})))).await;
        assert_eq!(s, StatusCode::OK);
    }

    // annotators may not run qc or export
    let (s, b) = call(&app, "POST", &format!("/batches/{batch_id}/qc"), Some("tok-2"), None).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(b["error"]["code"], "forbidden");

    let (s, b) = call(&app, "POST", &format!("/batches/{batch_id}/qc"), Some("tok-admin"), None).await;
    assert_eq!(s, StatusCode::OK, "{b}");
    assert_eq!(b["qc"]["accepted"], true);
    assert_eq!(b["batch"]["status"], "accepted");

    let (s, first) = call(&app, "GET", "/export/bench", Some("tok-admin"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(first["ledger"]["rewritten"], 1);
    assert_eq!(first["ledger"]["confirmed"], 2);
    assert!(first["jsonl"].as_str().unwrap().contains("the man closes the door"));
    let (_, second) = call(&app, "GET", "/export/bench", Some("tok-admin"), None).await;
    assert_eq!(first, second);

    let (s, b) = call(&app, "GET", &format!("/tasks/{}", reviewed[0]), Some("tok-2"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b["task"]["task"]["state"], "validated");
}

#[tokio::test]
async fn auth_and_error_shapes() {
    let app = app();
    let (s, b) = call(&app, "GET", "/health", None, None).await;
    assert_eq!((s, b["status"].as_str()), (StatusCode::OK, Some("ok")));

    let (s, b) = call(&app, "POST", "/assign", None, Some(v(json!({"phase": "review"})))).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_eq!(b["schema_version"], 1);
    assert_eq!(b["error"]["code"], "unauthorized");
    let (s, _) = call(&app, "POST", "/assign", Some("nope"), Some(v(json!({"phase": "review"})))).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);

    let (s, _) = call(&app, "POST", "/batches", Some("tok-1"),
        Some(v(json!({"dataset": "bench", "annotation_ids": ["a1"]})))).await;
    assert_eq!(s, StatusCode::FORBIDDEN);

    // missing or wrong schema_version, malformed body
    let (s, b) = call(&app, "POST", "/assign", Some("tok-1"), Some(json!({"phase": "review"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(b["error"]["message"].as_str().unwrap().contains("schema_version"));
    let (s, _) = call(&app, "POST", "/assign", Some("tok-1"), Some(json!({"schema_version": 9, "phase": "review"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/assign", Some("tok-1"), Some(v(json!({"phase": "sideways"})))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, _) = call(&app, "POST", "/batches", Some("tok-admin"),
        Some(v(json!({"dataset": "bench", "annotation_ids": []})))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/batches", Some("tok-admin"),
        Some(v(json!({"dataset": "other", "annotation_ids": ["a1"]})))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/batches", Some("tok-admin"),
        Some(v(json!({"dataset": "bench", "annotation_ids": ["a1"]})))).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, b) = call(&app, "POST", "/batches", Some("tok-admin"),
        Some(v(json!({"dataset": "bench", "annotation_ids": ["a1"]})))).await;
    assert_eq!(s, StatusCode::CONFLICT, "{b}");

    let (s, _) = call(&app, "GET", "/tasks/t999999", Some("tok-1"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    // review by a worker who does not hold the task
    let (_, b) = call(&app, "POST", "/assign", Some("tok-1"), Some(v(json!({"phase": "review"})))).await;
    let id = b["task"]["task"]["task_id"].as_str().unwrap().to_string();
    let (s, _) = call(&app, "POST", &format!("/tasks/{id}/review"), Some("tok-2"),
        Some(v(json!({"diagnosis": "no_error"})))).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, b) = call(&app, "POST", &format!("/tasks/{id}/review"), Some("tok-1"),
        Some(v(json!({"diagnosis": {"errors": ["inaccurate_segment"]}, "correction": {"new_span": [5.0, 99.0]}})))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(b["error"]["message"].as_str().unwrap().contains("duration"));
    let (s, _) = call(&app, "POST", &format!("/tasks/{id}/validate"), Some("tok-2"),
        Some(v(json!({"verdict": "correct"})))).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, _) = call(&app, "GET", "/export/bench", Some("tok-admin"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn video_redirect() {
    let app = app();
    let resp = app
        .clone()
        .oneshot(
            Request::builder()
                .uri("/videos/v2")
                .header("authorization", "Bearer tok-1")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::TEMPORARY_REDIRECT);
    assert_eq!(resp.headers()["location"], "https://cdn.example/v2.mp4");
    let (s, _) = call(&app, "GET", "/videos/zzz", Some("tok-1"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_http_assignment() {
    let app = app();
    call(&app, "POST", "/batches", Some("tok-admin"),
        Some(v(json!({"dataset": "bench", "annotation_ids": ["a1", "a2", "a3"]})))).await;
    let mut handles = Vec::new();
    for tok in ["tok-1", "tok-2", "tok-admin"] {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let (_, b) = call(&app, "POST", "/assign", Some(tok), Some(v(json!({"phase": "review"})))).await;
            b["task"]["task"]["task_id"].as_str().map(str::to_string)
        }));
    }
    let mut got = Vec::new();
    for h in handles {
        got.push(h.await.unwrap().expect("three tasks for three workers"));
    }
    got.sort();
    got.dedup();
    assert_eq!(got.len(), 3);
}
