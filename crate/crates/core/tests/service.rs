mod common;

use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use casejudge::checkpoint::Checkpoint;
use casejudge::corpus::{synth_generate, Case, FactLabel, SynthProfile};
use casejudge::serve::{encode_payload, respond, router, CasePayload, ClaimText, ErrorBody, ModelInfo, ServiceState};
use casejudge::train::{split_cases, train};
use casejudge::{Ablation, FactOverrides};
use common::{max_abs_diff, small_train_config};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    checkpoint: Checkpoint,
    cases: Vec<Case>,
}

/// A briefly trained model, shared by every test in this file.
fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let cases = synth_generate(51, 400, &SynthProfile::default());
        let s = split_cases(&cases, [0.8, 0.1, 0.1], 51);
        let outcome = train(&small_train_config(Ablation::default(), 12), &s.train, &s.valid, |_| {}).unwrap();
        Fixture {
            checkpoint: outcome.best,
            cases: s.test,
        }
    })
}

fn payload(case: &Case) -> CasePayload {
    CasePayload {
        case_id: Some(case.case_id.clone()),
        claims: case.claims.iter().map(|c| ClaimText { text: c.text.clone() }).collect(),
        utterances: case.utterances.clone(),
    }
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn post(app: &axum::Router, uri: &str, body: &Value) -> (StatusCode, Vec<u8>) {
    call(app, "POST", uri, Some(serde_json::to_vec(body).unwrap())).await
}

fn loaded_app() -> axum::Router {
    router(ServiceState::with_checkpoint(fixture().checkpoint.clone()))
}

fn error_field(body: &[u8]) -> Option<String> {
    serde_json::from_slice::<ErrorBody>(body).unwrap().field
}

#[tokio::test]
async fn predict_body_is_the_library_response() {
    let f = fixture();
    let app = loaded_app();
    for case in f.cases.iter().take(10) {
        let p = payload(case);
        let (status, body) = post(&app, "/predict", &serde_json::to_value(&p).unwrap()).await;
        assert_eq!(status, StatusCode::OK);
        let expected = respond(&f.checkpoint, &f.checkpoint.hash(), &p, &FactOverrides::none()).unwrap();
        assert_eq!(body, serde_json::to_vec(&expected).unwrap());
        let direct = f
            .checkpoint
            .model
            .infer(&encode_payload(&f.checkpoint, &p).unwrap(), &FactOverrides::none())
            .unwrap();
        assert_eq!(expected.trace, direct);
        assert_eq!(expected.claims.len(), case.claims.len());
        assert_eq!(expected.facts.len(), 10);
    }
}

#[tokio::test]
async fn concurrent_identical_requests_get_identical_bodies() {
    let app = loaded_app();
    let body = serde_json::to_value(payload(&fixture().cases[0])).unwrap();
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let (app, body) = (app.clone(), body.clone());
            tokio::spawn(async move { post(&app, "/predict", &body).await })
        })
        .collect();
    let mut bodies = Vec::new();
    for h in handles {
        let (status, b) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        bodies.push(b);
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn empty_overrides_equal_plain_prediction() {
    let app = loaded_app();
    let p = serde_json::to_value(payload(&fixture().cases[1])).unwrap();
    let (_, plain) = post(&app, "/predict", &p).await;
    let (status, overridden) = post(&app, "/predict_with_overrides", &json!({ "case": p, "overrides": {} })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(plain, overridden);
}

#[tokio::test]
async fn all_zero_overrides_match_the_model_without_fact_memory() {
    let f = fixture();
    let app = loaded_app();
    let without = f
        .checkpoint
        .model
        .variant(Ablation {
            no_fact_memory: true,
            ..Default::default()
        })
        .unwrap();
    let zeros: serde_json::Map<String, Value> = FactLabel::ALL.iter().map(|l| (l.to_string(), json!(0.0))).collect();
    for case in f.cases.iter().take(10) {
        let p = payload(case);
        let req = json!({ "case": p, "overrides": zeros });
        let (status, body) = post(&app, "/predict_with_overrides", &req).await;
        assert_eq!(status, StatusCode::OK);
        let res: Value = serde_json::from_slice(&body).unwrap();
        let probs: Vec<Vec<f64>> = serde_json::from_value(res["trace"]["claim_probs"].clone()).unwrap();
        let reference = without
            .infer(&encode_payload(&f.checkpoint, &p).unwrap(), &FactOverrides::none())
            .unwrap();
        assert!(max_abs_diff(&probs, &reference.claim_probs) < 1e-10);
        assert!(res["facts"]
            .as_array()
            .unwrap()
            .iter()
            .all(|x| x["overridden"] == json!(true)));
    }
}

#[tokio::test]
async fn single_fact_overrides_reach_the_judgment() {
    let f = fixture();
    let app = loaded_app();
    let p = serde_json::to_value(payload(&f.cases[2])).unwrap();
    for label in FactLabel::ALL {
        let mut replies = Vec::new();
        for value in [0.0, 1.0] {
            let req = json!({ "case": p, "overrides": { label.to_string(): value } });
            let (status, body) = post(&app, "/predict_with_overrides", &req).await;
            assert_eq!(status, StatusCode::OK);
            let res: Value = serde_json::from_slice(&body).unwrap();
            let fact = res["facts"][label.index()].clone();
            assert_eq!(fact["probability"], json!(value));
            assert_eq!(fact["overridden"], json!(true));
            let untouched = res["facts"]
                .as_array()
                .unwrap()
                .iter()
                .filter(|x| x["overridden"] == json!(false));
            assert_eq!(untouched.count(), 9);
            replies.push(res["trace"]["claim_probs"].clone());
        }
        assert_ne!(
            replies[0], replies[1],
            "{label} override left the claim distribution unchanged"
        );
    }
}

#[tokio::test]
async fn malformed_requests_name_the_offending_field() {
    let app = loaded_app();
    let good = serde_json::to_value(payload(&fixture().cases[0])).unwrap();

    let mut missing = good.clone();
    missing.as_object_mut().unwrap().remove("claims");
    let (status, body) = post(&app, "/predict", &missing).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_field(&body).as_deref(), Some("claims"));

    let mut bad_role = good.clone();
    bad_role["utterances"][0]["role"] = json!("bailiff");
    let (status, body) = post(&app, "/predict", &bad_role).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_field(&body).as_deref(), Some("utterances[0].role"));

    let (status, body) = post(
        &app,
        "/predict_with_overrides",
        &json!({ "case": good, "overrides": { "Nope": 1.0 } }),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_field(&body).as_deref(), Some("overrides.Nope"));

    let req = json!({ "case": good, "overrides": { "Couple Debt": 1.5 } });
    let (status, body) = post(&app, "/predict_with_overrides", &req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_field(&body).as_deref(), Some("overrides.Couple Debt"));

    let (status, _) = call(&app, "POST", "/predict", Some(b"{not json".to_vec())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn empty_claims_or_utterances_are_unprocessable() {
    let app = loaded_app();
    let good = serde_json::to_value(payload(&fixture().cases[0])).unwrap();
    for field in ["claims", "utterances"] {
        let mut empty = good.clone();
        empty[field] = json!([]);
        let (status, body) = post(&app, "/predict", &empty).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(error_field(&body).as_deref(), Some(field));
        let (status, _) = post(&app, "/predict_with_overrides", &json!({ "case": empty })).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    }
    let mut blank = good.clone();
    blank["claims"][0]["text"] = json!("  ");
    let (status, body) = post(&app, "/predict", &blank).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_field(&body).as_deref(), Some("claims[0].text"));
}

#[tokio::test]
async fn unloaded_service_answers_503_until_a_model_is_loaded() {
    let state = ServiceState::empty();
    let app = router(state.clone());
    let good = serde_json::to_value(payload(&fixture().cases[0])).unwrap();
    assert_eq!(post(&app, "/predict", &good).await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(
        post(&app, "/predict_with_overrides", &json!({ "case": good })).await.0,
        StatusCode::SERVICE_UNAVAILABLE
    );
    assert_eq!(
        call(&app, "GET", "/model/info", None).await.0,
        StatusCode::SERVICE_UNAVAILABLE
    );
    state.load(fixture().checkpoint.clone());
    assert_eq!(post(&app, "/predict", &good).await.0, StatusCode::OK);
    state.unload();
    assert_eq!(post(&app, "/predict", &good).await.0, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn model_info_describes_the_loaded_checkpoint() {
    let ck = &fixture().checkpoint;
    let (status, body) = call(&loaded_app(), "GET", "/model/info", None).await;
    assert_eq!(status, StatusCode::OK);
    let info: ModelInfo = serde_json::from_slice(&body).unwrap();
    let cfg = ck.model.config();
    assert_eq!(info.checkpoint_hash, ck.hash());
    assert_eq!(info.parameter_count, ck.model.parameter_count());
    assert_eq!(
        (info.dims.word_dim, info.dims.role_dim, info.dims.hidden),
        (cfg.word_dim, cfg.role_dim, cfg.hidden)
    );
    assert_eq!(info.hops, cfg.hops);
    assert_eq!(info.vocab_size, ck.vocab.len());
    assert_eq!(info.fact_labels, FactLabel::ALL.to_vec());
    assert_eq!(info.judgment_labels.len(), 3);
}
