use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use clap::Parser;
use gridstab::stability::TwoBusFamily;
use gridstab_cli::api::Context;
use gridstab_cli::cli::{execute, family_feeder, Cli};
use gridstab_cli::server::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const DATA: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data");

fn app() -> Router {
    let feeder = family_feeder(TwoBusFamily::PbcRx { d: 0.6, l1: 0.2 });
    router(AppState::new(Context::with_feeder(feeder), 100, 2))
}

async fn call(app: &Router, method: &str, uri: &str, body: impl Into<Body>) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.into())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let (s, text) = call(app, "POST", uri, body.to_string()).await;
    (s, serde_json::from_str(&text).unwrap())
}

fn sampling(seed: u64) -> Value {
    json!({"num_samples": 40, "gain_range": [0.01, 100.0], "seed": seed})
}

#[tokio::test]
async fn acrit_of_single_phase_pbc() {
    let (s, v) = post(&app(), "/acrit", json!({"family": "pbc_1ph", "x": 0.2})).await;
    assert_eq!(s, StatusCode::OK);
    assert!((v["a_crit"].as_f64().unwrap() - 10.0).abs() < 1e-5, "{v}");
    let (_, v) = post(&app(), "/acrit", json!({"family": "pbc_1ph", "x": 0.2, "method": "analytic"})).await;
    assert_eq!(v["a_crit"].as_f64().unwrap(), 10.0);
}

#[tokio::test]
async fn heatmap_on_the_two_bus_fixture_has_one_verdict() {
    let (s, v) = post(&app(), "/heatmap", json!({"kind": "pbc", "sampling": sampling(1)})).await;
    assert_eq!(s, StatusCode::OK);
    let verdicts = v["verdicts"].as_array().unwrap();
    assert_eq!(verdicts.len(), 1);
    assert_eq!(verdicts[0]["node"], "pq");
}

#[tokio::test]
async fn malformed_documents_are_rejected_with_400() {
    let mut feeder: Value = serde_json::from_str(&std::fs::read_to_string(format!("{DATA}/two_bus_1ph.json")).unwrap()).unwrap();
    feeder["nodes"][1]["phases"] = json!("AX");
    let (s, v) = post(&app(), "/heatmap", json!({"feeder": feeder, "kind": "pbc", "sampling": sampling(1)})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "schema_error");
    let (s, _) = call(&app(), "POST", "/acrit", "{not json").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post(&app(), "/heatmap", json!({"kind": "pbc", "sampling": sampling(1), "colour": "red"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn domain_errors_carry_a_code() {
    let (s, v) = post(&app(), "/acrit", json!({"family": "pbc_phase", "cx": 2.3, "l2": 0.2})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "no_stabilizing_gain");
    let (s, v) = post(&app(), "/heatmap", json!({"kind": "pbc", "config": {"apnps": ["nowhere"]}, "sampling": sampling(1)})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"]["code"].is_string());
}

#[tokio::test]
async fn unknown_jobs_are_404() {
    let (s, text) = call(&app(), "GET", "/jobs/00000000-0000-4000-8000-000000000000", Body::empty()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(text.contains("unknown_job"));
    let (s, _) = call(&app(), "GET", "/jobs/not-a-uuid", Body::empty()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn async_heatmap_is_pollable() {
    let app = app();
    let body = json!({"kind": "droop", "sampling": sampling(3), "async": true});
    let (s, v) = post(&app, "/heatmap", body).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let id = v["job_id"].as_str().unwrap().to_string();
    let (_, direct) = post(&app, "/heatmap", json!({"kind": "droop", "sampling": sampling(3)})).await;
    for _ in 0..200 {
        let (s, text) = call(&app, "GET", &format!("/jobs/{id}"), Body::empty()).await;
        assert_eq!(s, StatusCode::OK);
        let v: Value = serde_json::from_str(&text).unwrap();
        match v["status"].as_str().unwrap() {
            "done" => {
                assert_eq!(v["result"], direct);
                return;
            }
            "failed" => panic!("{v}"),
            _ => tokio::time::sleep(std::time::Duration::from_millis(20)).await,
        }
    }
    panic!("job did not finish");
}

#[tokio::test]
async fn feeder_view_lists_the_topology() {
    let (s, text) = call(&app(), "GET", "/feeder", Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["nodes"].as_array().unwrap().len(), 2);
    assert!((v["lines"][0]["metrics"]["d"][0].as_f64().unwrap() - 0.6).abs() < 1e-12, "{v}");
}

#[tokio::test]
async fn sweep_and_simulate_answer() {
    let (s, v) = post(&app(), "/sweep", json!({"family": "droop_rx", "d": 0.0, "l1": 0.2, "a": "0:1:10"})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["points"].as_array().unwrap().len(), 11);
    let mut scn: Value = serde_json::from_str(&std::fs::read_to_string(format!("{DATA}/scenarios/rx_unstable.json")).unwrap()).unwrap();
    scn["feeder"] = json!(format!("{DATA}/two_bus_rx.json"));
    let (s, v) = post(&app(), "/simulate", scn).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["converged"], false);
}

fn cli_output(args: &[&str]) -> String {
    let cli = Cli::try_parse_from(std::iter::once("gridstab").chain(args.iter().copied())).unwrap();
    execute(&cli.command).unwrap()
}

#[tokio::test]
async fn cli_and_service_render_identical_bytes() {
    let app = app();
    let cli = cli_output(&["acrit", "--family", "pbc_rx", "--d", "0.6", "--l1", "0.2"]);
    let (_, http) = call(&app, "POST", "/acrit", json!({"family": "pbc_rx", "d": 0.6, "l1": 0.2}).to_string()).await;
    assert_eq!(cli, http);

    let cli = cli_output(&["sweep", "--family", "droop_rx", "--d", "0", "--l1", "0.2", "--a", "0:0.5:5", "--format", "json"]);
    let (_, http) = call(&app, "POST", "/sweep", json!({"family": "droop_rx", "d": 0.0, "l1": 0.2, "a": "0:0.5:5"}).to_string()).await;
    assert_eq!(cli, http);

    let feeder = format!("{DATA}/ieee123.json");
    let req = json!({"feeder": feeder, "kind": "pbc", "config": {"apnps": ["node_66"]}, "sampling": sampling(9)});
    let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("heatmap_request.json");
    std::fs::write(&path, req.to_string()).unwrap();
    let cli = cli_output(&["heatmap", "--request", path.to_str().unwrap()]);
    let (s, http) = call(&app, "POST", "/heatmap", req.to_string()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(cli, http);
}
