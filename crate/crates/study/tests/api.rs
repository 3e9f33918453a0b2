use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use stormloc::stats::{study_summary, Preference};
use stormloc::synth::build_dataset;
use stormloc::unet::build_unet;
use stormloc::{GridSpec, ModelConfig, NoiseModel, Split};
use stormloc_study::{router, Study, StudyConfig};

fn grid() -> GridSpec {
    GridSpec::new(0.0, 44.0, 1.0, 1.0, 16, 24).unwrap()
}

fn study(n_samples: usize, n_items: usize, log: &Path) -> Study {
    let data = build_dataset(n_samples, &NoiseModel::default(), 0, &grid()).unwrap();
    let mut cfg = ModelConfig::desk(grid());
    cfg.levels = 3;
    cfg.encoder_filters = vec![4, 8, 8];
    let model = build_unet(&cfg, 0).unwrap();
    let cfg = StudyConfig { n_items, ..StudyConfig::default() };
    Study::new(data, model, cfg, log).unwrap()
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

fn submit_body(item: &str, rater: &str, choice: &str) -> Option<Value> {
    Some(json!({ "item_id": item, "rater": rater, "choice": choice }))
}

#[tokio::test]
async fn health_and_placeholder() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(study(60, 5, &dir.path().join("log"))));
    assert_eq!(call(&app, "GET", "/healthz", None).await.0, StatusCode::OK);
    assert_eq!(call(&app, "GET", "/", None).await.0, StatusCode::OK);
}

#[tokio::test]
async fn payload_has_the_documented_shape() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(study(60, 5, &dir.path().join("log"))));
    let (status, v) = call(&app, "GET", "/api/study/test/next?rater=ana", None).await;
    assert_eq!(status, StatusCode::OK);
    let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, BTreeSet::from(["item_id", "grid", "u", "v", "markers"]));
    assert_eq!(v["u"].as_array().unwrap().len(), 16);
    assert_eq!(v["u"][0].as_array().unwrap().len(), 24);
    assert_eq!(v["markers"].as_array().unwrap().len(), 2);
    assert_eq!(v["grid"]["height"], 16);
}

#[tokio::test]
async fn payload_schema_is_identical_for_both_assignments() {
    let dir = tempfile::tempdir().unwrap();
    let s = study(140, 20, &dir.path().join("log"));
    let items = s.items(Split::Test).unwrap();
    assert!(items.iter().any(|i| i.model_first) && items.iter().any(|i| !i.model_first));
    let shape = |v: &Value| -> Vec<String> {
        let mut out = Vec::new();
        for (k, val) in v.as_object().unwrap() {
            out.push(format!("{k}:{}", std::mem::discriminant(val) == std::mem::discriminant(&Value::Null)));
            if let Some(o) = val.as_object() {
                out.extend(o.keys().map(|kk| format!("{k}.{kk}")));
            }
        }
        out
    };
    let mut shapes = BTreeSet::new();
    for item in items {
        let v = serde_json::to_value(s.payload(item).unwrap()).unwrap();
        let text = v.to_string().to_lowercase();
        for banned in ["assign", "model", "label", "truth", "first", "second"] {
            assert!(!text.contains(banned), "payload mentions {banned}");
        }
        shapes.insert(shape(&v));
    }
    assert_eq!(shapes.len(), 1);
}

#[tokio::test]
async fn replayed_submission_is_stored_once() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(study(60, 5, &dir.path().join("log"))));
    let (_, item) = call(&app, "GET", "/api/study/test/next?rater=ana", None).await;
    let id = item["item_id"].as_str().unwrap();
    let (s1, a1) = call(&app, "POST", "/api/study/submit", submit_body(id, "ana", "neither")).await;
    let (s2, a2) = call(&app, "POST", "/api/study/submit", submit_body(id, "ana", "neither")).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a1["replayed"], false);
    assert_eq!(a2["replayed"], true);
    assert_eq!(a1["timestamp"], a2["timestamp"]);
    let (_, report) = call(&app, "GET", "/api/study/test/report", None).await;
    assert_eq!(report["neither"], 1);
    assert_eq!(report["total"], 1);
    let (s3, _) = call(&app, "POST", "/api/study/submit", submit_body(id, "ana", "first")).await;
    assert_eq!(s3, StatusCode::CONFLICT);
}

#[tokio::test]
async fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(study(60, 5, &dir.path().join("log"))));
    assert_eq!(call(&app, "GET", "/api/study/test/next", None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "GET", "/api/study/val/next?rater=a", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/study/nope/report", None).await.0, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/api/study/submit", submit_body("test-999", "a", "first")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/api/study/submit", submit_body("test-000", "a", "maybe")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn scripted_session_tallies_match_summary_and_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log");
    let s = Arc::new(study(140, 20, &log));
    let app = router(s.clone());
    let choices = ["first", "second", "neither", "neither"];
    let mut expected = [0u64; 3];
    for k in 0..20 {
        let (status, item) = call(&app, "GET", "/api/study/test/next?rater=r1", None).await;
        assert_eq!(status, StatusCode::OK);
        let id = item["item_id"].as_str().unwrap().to_string();
        let choice = choices[k % 4];
        let (st, _) = call(&app, "POST", "/api/study/submit", submit_body(&id, "r1", choice)).await;
        assert_eq!(st, StatusCode::OK);
        if k == 3 {
            // Double submit.
            call(&app, "POST", "/api/study/submit", submit_body(&id, "r1", choice)).await;
        }
        // De-blind independently from the stored assignment.
        let model_first = s.items(Split::Test).unwrap().iter().find(|i| i.item_id == id).unwrap().model_first;
        let slot = match (choice, model_first) {
            ("neither", _) => 2,
            ("first", true) | ("second", false) => 0,
            _ => 1,
        };
        expected[slot] += 1;
    }
    assert_eq!(call(&app, "GET", "/api/study/test/next?rater=r1", None).await.0, StatusCode::NO_CONTENT);
    assert_eq!(s.log().entries().len(), 20);
    let (_, report) = call(&app, "GET", "/api/study/test/report", None).await;
    assert_eq!([report["model"].as_u64().unwrap(), report["label"].as_u64().unwrap(), report["neither"].as_u64().unwrap()], expected);
    let direct = study_summary(&s.resolved_records(Split::Test));
    assert_eq!(report["total"], 20);
    assert_eq!(report["p_value"].as_f64().unwrap(), direct.p_value);

    drop(app);
    drop(s);
    let reopened = study(140, 20, &log);
    assert_eq!(study_summary(&reopened.resolved_records(Split::Test)), direct);
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 20);
}

#[tokio::test]
async fn scripted_counts_reproduce_the_expected_p_value() {
    let dir = tempfile::tempdir().unwrap();
    let s = Arc::new(study(1400, 200, &dir.path().join("log")));
    let app = router(s.clone());
    let items = s.items(Split::Test).unwrap().to_vec();
    assert_eq!(items.len(), 200);
    for (k, item) in items.iter().enumerate() {
        let want = if k < 46 { Preference::Model } else if k < 59 { Preference::Label } else { Preference::Neither };
        let choice = match (want, item.model_first) {
            (Preference::Neither, _) => "neither",
            (Preference::Model, true) | (Preference::Label, false) => "first",
            _ => "second",
        };
        let (st, _) = call(&app, "POST", "/api/study/submit", submit_body(&item.item_id, "r", choice)).await;
        assert_eq!(st, StatusCode::OK);
    }
    let (_, report) = call(&app, "GET", "/api/study/test/report", None).await;
    assert_eq!(report["model"], 46);
    assert_eq!(report["label"], 13);
    assert_eq!(report["neither"], 141);
    assert_eq!(report["total"], 200);
    let p = report["p_value"].as_f64().unwrap();
    assert!((p / 9.6e-6 - 1.0).abs() < 0.05, "{p}");
}

#[test]
fn item_sampling_is_seeded_and_unique() {
    let dir = tempfile::tempdir().unwrap();
    let a = study(1400, 200, &dir.path().join("a"));
    let b = study(1400, 200, &dir.path().join("b"));
    let (ia, ib) = (a.items(Split::Test).unwrap(), b.items(Split::Test).unwrap());
    assert_eq!(ia, ib);
    let unique: BTreeSet<usize> = ia.iter().map(|i| i.sample_index).collect();
    assert_eq!(unique.len(), 200);
    assert!(a.truncated_splits().is_empty());
    let small = study(60, 200, &dir.path().join("c"));
    assert_eq!(small.items(Split::Test).unwrap().len(), 9);
    assert!(small.truncated_splits().contains(&Split::Test));
}
