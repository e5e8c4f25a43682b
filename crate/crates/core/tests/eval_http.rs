use std::collections::HashMap;
use std::sync::Arc;

use advgen::corpus::{Passage, PassageSource};
use advgen::eval_service::http::router;
use advgen::eval_service::{default_onboarding, EvalService, ManualClock, QaModel, ServiceConfig};
use advgen::Result;
use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const TEXT: &str = "The Denver Broncos defeated the Carolina Panthers 24-10 in Santa Clara.";

struct Fixed;

impl QaModel for Fixed {
    fn answer(&self, _: &Passage, _: &str) -> Result<String> {
        Ok("Denver Broncos".into())
    }
}

fn app() -> axum::Router {
    let config = ServiceConfig {
        arms: vec!["hidden-roberta".into()],
        ..ServiceConfig::default()
    };
    let model: Arc<dyn QaModel> = Arc::new(Fixed);
    let svc = EvalService::new(
        config,
        HashMap::from([("hidden-roberta".to_string(), model)]),
        vec![Passage::new("p1", TEXT, PassageSource::EvalSet)],
        Arc::new(ManualClock::new(0.0)),
    )
    .unwrap();
    router(Arc::new(svc))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    assert!(!text.contains("hidden-roberta"), "model id leaked: {text}");
    (status, serde_json::from_str(&text).unwrap_or(Value::Null))
}

#[tokio::test]
async fn full_protocol_over_http() {
    let app = app();
    let (st, start) = call(&app, "POST", "/session", Some(json!({"annotator_id": "ann-1"}))).await;
    assert_eq!(st, StatusCode::OK);
    let sid = start["session_id"].as_str().unwrap().to_string();
    let token = start["arm_token"].as_str().unwrap().to_string();
    assert_eq!(start["passage"]["text"], TEXT);

    let (st, _) = call(&app, "POST", &format!("/session/{sid}/question"), Some(json!({"question": "q?", "answer_start": 4, "answer_end": 18}))).await;
    assert_eq!(st, StatusCode::CONFLICT, "onboarding required");

    let (st, script) = call(&app, "GET", "/onboarding", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(script.as_array().unwrap().len(), default_onboarding().len());
    let answers: Vec<Value> = default_onboarding()
        .iter()
        .map(|i| json!({"answer_start": i.answer_start, "answer_end": i.answer_end}))
        .collect();
    let (st, res) = call(&app, "POST", &format!("/session/{sid}/onboarding"), Some(json!({ "answers": answers }))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(res["passed"], true);

    let start = TEXT.find("Carolina Panthers").unwrap();
    let (st, out) = call(
        &app,
        "POST",
        &format!("/session/{sid}/question"),
        Some(json!({"question": "Who lost?", "answer_start": start, "answer_end": start + 17})),
    )
    .await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(out["fooled"], true);
    assert_eq!(out["model_answer"], "Denver Broncos");
    let rid = out["record_id"].as_str().unwrap().to_string();

    let (st, _) = call(&app, "GET", &format!("/arms/{token}/stats"), None).await;
    assert_eq!(st, StatusCode::CONFLICT, "pending record blocks export");

    let (st, q) = call(&app, "GET", "/validation/queue", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(q[0]["record_id"], rid.as_str());

    let validate = format!("/records/{rid}/validate");
    let (st, v) = call(&app, "POST", &validate, Some(json!({"verdict": "valid", "validator_id": "expert"}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["validation"], "valid");
    let (st, _) = call(&app, "POST", &validate, Some(json!({"verdict": "invalid", "validator_id": "expert"}))).await;
    assert_eq!(st, StatusCode::CONFLICT);

    let (st, stats) = call(&app, "GET", &format!("/arms/{token}/stats"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(stats["vmer"], 100.0);
    assert_eq!(stats["aggregate"]["n_qas"], 1);

    let (st, _) = call(&app, "GET", "/arms/arm-nope/stats", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&app, "POST", "/session/nope/question", Some(json!({"question": "q", "answer_start": 0, "answer_end": 3}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&app, "POST", &format!("/session/{sid}/question"), Some(json!({"question": "q", "answer_start": 3, "answer_end": 999}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}
