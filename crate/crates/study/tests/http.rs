mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use colorfuse_study::http::{router, ErrorBody, TRIAL_ID, TRIAL_NUMBER, TRIAL_TOTAL};
use colorfuse_study::StudyService;
use common::{fixture, BROKEN, TRUTH};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Reply {
    status: StatusCode,
    headers: Vec<(String, String)>,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap()
    }

    fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    /// Everything a client can see, for leak checks.
    fn visible(&self) -> String {
        let mut s = String::from_utf8_lossy(&self.body).into_owned();
        for (k, v) in &self.headers {
            s.push_str(&format!("\n{k}: {v}"));
        }
        s
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let headers =
        resp.headers().iter().map(|(k, v)| (k.to_string(), v.to_str().unwrap_or("").to_string())).collect();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

fn setup() -> (tempfile::TempDir, Router, Value) {
    let dir = tempfile::tempdir().unwrap();
    let spec = serde_json::to_value(fixture(dir.path(), 3)).unwrap();
    let svc = Arc::new(StudyService::open(&dir.path().join("log.jsonl")).unwrap());
    (dir, router(svc, None), spec)
}

#[tokio::test]
async fn session_flow_never_reveals_sources() {
    let (_dir, app, spec) = setup();
    let secrets = [TRUTH, BROKEN, "secret_", "truth_dir", "corrupted_dir"];
    let mut seen = Vec::new();

    let created = call(&app, "POST", "/studies", Some(spec)).await;
    assert_eq!(created.status, StatusCode::CREATED);
    let id = created.json()["id"].as_str().unwrap().to_string();
    seen.push(created.visible());
    seen.push(call(&app, "GET", "/studies", None).await.visible());

    let opened = call(&app, "POST", &format!("/studies/{id}/sessions"), Some(json!({"alias": "ann", "seed": 4}))).await;
    assert_eq!(opened.status, StatusCode::CREATED);
    let sid = opened.json()["session_id"].as_str().unwrap().to_string();
    seen.push(opened.visible());

    let mut n = 0;
    loop {
        let t = call(&app, "GET", &format!("/sessions/{sid}/trials/next"), None).await;
        if t.status == StatusCode::NO_CONTENT {
            break;
        }
        n += 1;
        assert_eq!(t.status, StatusCode::OK);
        assert_eq!(t.header("content-type"), Some("image/png"));
        assert_eq!(t.header(TRIAL_NUMBER), Some(n.to_string().as_str()));
        assert_eq!(t.header(TRIAL_TOTAL), Some("6"));
        assert!(t.body.starts_with(b"\x89PNG"));
        seen.push(t.visible());
        let trial = t.header(TRIAL_ID).unwrap().to_string();
        let ack = call(&app, "POST", &format!("/sessions/{sid}/judgments"), Some(json!({"trial_id": trial, "verdict": "real"}))).await;
        assert_eq!(ack.status, StatusCode::OK);
        assert_eq!(ack.json()["judged"], n);
        seen.push(ack.visible());
        seen.push(call(&app, "GET", &format!("/sessions/{sid}"), None).await.visible());
    }
    assert_eq!(n, 6);
    for text in &seen {
        for s in secrets {
            assert!(!text.contains(s), "`{s}` leaked in {text}");
        }
    }

    let report = call(&app, "GET", &format!("/studies/{id}/report"), None).await;
    assert_eq!(report.status, StatusCode::OK);
    let r = report.json();
    assert_eq!(r["sources"][0]["label"], TRUTH);
    assert_eq!(r["sources"][0]["rate"], 100.0);
    assert_eq!(r["sources"][1]["rate"], 100.0);
}

#[tokio::test]
async fn error_statuses() {
    let (_dir, app, spec) = setup();
    let id = call(&app, "POST", "/studies", Some(spec.clone())).await.json()["id"].as_str().unwrap().to_string();
    let sid = call(&app, "POST", &format!("/studies/{id}/sessions"), Some(json!({"alias": "bo"}))).await.json()["session_id"]
        .as_str()
        .unwrap()
        .to_string();
    let t = call(&app, "GET", &format!("/sessions/{sid}/trials/next"), None).await;
    let trial = t.header(TRIAL_ID).unwrap().to_string();
    let judge = |verdict: &str| json!({"trial_id": trial, "verdict": verdict});
    let url = format!("/sessions/{sid}/judgments");

    let bad = call(&app, "POST", &url, Some(judge("maybe"))).await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", &url, Some(judge("fake"))).await.status, StatusCode::OK);
    let again = call(&app, "POST", &url, Some(judge("fake"))).await;
    assert_eq!(again.status, StatusCode::CONFLICT);
    let body: ErrorBody = serde_json::from_slice(&again.body).unwrap();
    assert_eq!(body.code, "already_judged");

    let stranger = uuid::Uuid::new_v4();
    for (method, uri) in [
        ("GET", format!("/sessions/{stranger}/trials/next")),
        ("GET", format!("/sessions/{stranger}")),
        ("GET", "/sessions/not-a-uuid/trials/next".to_string()),
        ("GET", format!("/studies/{stranger}/report")),
    ] {
        let r = call(&app, method, &uri, None).await;
        assert_eq!(r.status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(r.json()["code"], "not_found");
    }
    let r = call(&app, "POST", &format!("/studies/{stranger}/sessions"), Some(json!({"alias": "x"}))).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    let mut one = spec;
    one["sources"].as_array_mut().unwrap().pop();
    let r = call(&app, "POST", "/studies", Some(one)).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.json()["code"], "invalid_request");
}

#[tokio::test]
async fn static_files_are_served() {
    let dir = tempfile::tempdir().unwrap();
    let web = dir.path().join("web");
    std::fs::create_dir(&web).unwrap();
    std::fs::write(web.join("index.html"), "<h1>study</h1>").unwrap();
    let svc = Arc::new(StudyService::open(&dir.path().join("log.jsonl")).unwrap());
    let app = router(svc, Some(web));
    let r = call(&app, "GET", "/index.html", None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body, b"<h1>study</h1>");
    assert_eq!(call(&app, "GET", "/studies", None).await.json(), json!([]));
}
