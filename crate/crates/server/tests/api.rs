use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use cprism_core::dataset::{ingest_csv, DatasetConfig, Genome};
use cprism_core::estimate::PropensityParams;
use cprism_core::synth::{generate_synthetic, SynthSpec};
use cprism_core::Study;
use cprism_server::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const BOUNDARY: &str = "cprism-test-boundary";
const FOUR_ROWS: &str = "age,color,T,Y\n30,red,yes,2.5\n40,blue,no,1.0\n50,red,no,0.5\n60,blue,yes,3.0\n";

fn multipart(csv: &str, config: Option<&str>) -> Body {
    let mut body = format!(
        "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"csv\"; filename=\"data.csv\"\r\nContent-Type: text/csv\r\n\r\n{csv}\r\n"
    );
    if let Some(cfg) = config {
        body.push_str(&format!(
            "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"config\"\r\nContent-Type: application/json\r\n\r\n{cfg}\r\n"
        ));
    }
    body.push_str(&format!("--{BOUNDARY}--\r\n"));
    Body::from(body)
}

async fn send(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value, String) {
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
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    let json = serde_json::from_str(&text).unwrap_or(Value::Null);
    (status, json, text)
}

async fn upload(app: &Router, csv: &str, config: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(Method::POST)
        .uri("/sessions")
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(multipart(csv, config))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn planted_csv(seed: u64) -> (String, Vec<bool>) {
    let (ds, truth) = generate_synthetic(&SynthSpec {
        seed,
        ..SynthSpec::default()
    })
    .unwrap();
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    (String::from_utf8(buf).unwrap(), truth.planted)
}

async fn planted_session(app: &Router, seed: u64) -> (String, Vec<bool>) {
    let (csv, planted) = planted_csv(seed);
    let (status, body) = upload(app, &csv, None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    (body["session_id"].as_str().unwrap().to_string(), planted)
}

async fn wait_for_job(app: &Router, sid: &str, job: &str) -> Value {
    for _ in 0..1200 {
        let (status, body, _) = send(app, Method::GET, &format!("/sessions/{sid}/jobs/{job}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if body["status"] != "running" {
            return body;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job {job} did not finish");
}

fn app() -> Router {
    router(AppState::new(None).unwrap())
}

#[tokio::test]
async fn four_row_session() {
    let app = app();
    let (status, body) = upload(&app, FOUR_ROWS, Some(r#"{"treatment":"T","outcome":"Y","positive_value":"yes"}"#)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["n"], 4);
    assert_eq!(body["n_treated"], 2);
    assert_eq!(body["covariates"].as_array().unwrap().len(), 2);
    let sid = body["session_id"].as_str().unwrap();
    let (status, again, _) = send(&app, Method::GET, &format!("/sessions/{sid}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again, body);
}

#[tokio::test]
async fn ingest_errors_are_json() {
    let app = app();
    let (status, body) = upload(&app, "a,T,Y\n1,x,1\n2,y,2\n3,z,3\n", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "invalid_dataset");
    assert!(body["message"].as_str().unwrap().contains("treatment"));

    let (status, body, _) = send(&app, Method::GET, "/sessions/nope/subgroups", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "not_found");
    let (status, body, _) = send(&app, Method::GET, "/no/such/route", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["message"].is_string());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn discovery_recovers_the_planted_subgroup() {
    let app = app();
    let (sid, planted) = planted_session(&app, 1).await;
    let (status, body, _) = send(&app, Method::POST, &format!("/sessions/{sid}/discover"), Some(json!({"min_coverage": "10%"}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let job = body["job_id"].as_str().unwrap().to_string();
    let done = wait_for_job(&app, &sid, &job).await;
    assert_eq!(done["status"], "done");
    assert!(done["front"]["subgroups"].as_array().unwrap().len() > 1);

    let (_, body, _) = send(&app, Method::GET, &format!("/sessions/{sid}/subgroups"), None).await;
    let subs = body["subgroups"].as_array().unwrap();
    // membership recomputed in-process from the returned genomes
    let (csv, _) = planted_csv(1);
    let config = DatasetConfig::default();
    let (ds, _) = ingest_csv(csv.as_bytes(), &config).unwrap();
    let study = Study::fit(ds, config.buckets, &PropensityParams::default()).unwrap();
    let pos = planted.iter().filter(|&&b| b).count() as f64;
    let mut best: f64 = 0.0;
    for s in subs {
        let genome = Genome::from_bit_string(s["genome"].as_str().unwrap()).unwrap();
        let mask = study.cover(&genome).unwrap();
        let members: Vec<usize> = (0..planted.len()).filter(|&i| mask.contains(i)).collect();
        assert_eq!(members.len() as u64, s["metrics"]["coverage"].as_u64().unwrap());
        let tp = members.iter().filter(|&&i| planted[i]).count() as f64;
        best = best.max(2.0 * tp / (members.len() as f64 + pos));
    }
    assert!(best >= 0.8, "best F1 {best}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn one_job_at_a_time_and_cancellation() {
    let app = app();
    let (sid, _) = planted_session(&app, 2).await;
    let slow = json!({"population": 200, "generations": 100000, "stagnation_window": 100000});
    let (_, body, _) = send(&app, Method::POST, &format!("/sessions/{sid}/discover"), Some(slow.clone())).await;
    let job = body["job_id"].as_str().unwrap().to_string();
    let (status, body, _) = send(&app, Method::POST, &format!("/sessions/{sid}/discover"), Some(slow)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "job_running");

    let (status, _, _) = send(&app, Method::DELETE, &format!("/sessions/{sid}/jobs/{job}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let done = wait_for_job(&app, &sid, &job).await;
    assert_eq!(done["status"], "cancelled");
    // a cancelled search leaves the store untouched
    let (_, body, _) = send(&app, Method::GET, &format!("/sessions/{sid}/subgroups"), None).await;
    assert!(body["subgroups"].as_array().unwrap().is_empty());

    let (status, body, _) = send(&app, Method::POST, &format!("/sessions/{sid}/discover"), Some(json!({"population": 3}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "invalid_params");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn what_if_merge_split_and_reads() {
    let app = app();
    let (sid, _) = planted_session(&app, 3).await;
    let base = format!("/sessions/{sid}");

    let (status, body, _) = send(&app, Method::POST, &format!("{base}/subgroups"), Some(json!({"atoms": []}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "empty_antecedent");
    let unknown = json!({"atoms": [{"covariate": "zz", "op": "eq", "value": "a"}]});
    let (status, _, _) = send(&app, Method::POST, &format!("{base}/subgroups"), Some(unknown)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let sg = |v: &str| {
        json!({"label": v, "atoms": [
            {"covariate": "c0", "op": "eq", "value": v},
            {"covariate": "x0", "op": "in_range", "value": [0.0, null]},
        ]})
    };
    let (status, a, _) = send(&app, Method::POST, &format!("{base}/subgroups"), Some(sg("a"))).await;
    assert_eq!(status, StatusCode::OK, "{a}");
    let a_id = a["subgroup"]["id"].as_str().unwrap().to_string();
    assert!(a["subgroup"]["metrics"]["tau"].as_f64().unwrap() > 3.0);
    let (_, b, _) = send(&app, Method::POST, &format!("{base}/subgroups"), Some(sg("b"))).await;
    let b_id = b["subgroup"]["id"].as_str().unwrap().to_string();
    assert_ne!(a_id, b_id);

    // editing keeps the id
    let mut edited = sg("c");
    edited["id"] = json!(b_id);
    let (_, e, _) = send(&app, Method::POST, &format!("{base}/subgroups"), Some(edited)).await;
    assert_eq!(e["subgroup"]["id"], b_id.as_str());

    let (status, m, _) = send(&app, Method::POST, &format!("{base}/subgroups/merge"), Some(json!({"a": a_id, "b": b_id}))).await;
    assert_eq!(status, StatusCode::OK, "{m}");
    let m = &m["subgroup"];
    assert_eq!(m["origin"], "merged");
    let cov = |v: &Value| v["metrics"]["coverage"].as_u64().unwrap();
    assert!(cov(m) >= cov(&a["subgroup"]).max(cov(&e["subgroup"])));

    let m_id = m["id"].as_str().unwrap();
    let (status, parts, _) = send(&app, Method::POST, &format!("{base}/subgroups/{m_id}/split"), Some(json!({"covariate": "c0"}))).await;
    assert_eq!(status, StatusCode::OK, "{parts}");
    let parts = parts["subgroups"].as_array().unwrap();
    assert_eq!(cov(&parts[0]) + cov(&parts[1]), cov(m));
    let (status, _, _) = send(&app, Method::POST, &format!("{base}/subgroups/{a_id}/split"), Some(json!({"covariate": "c0"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, report, _) = send(&app, Method::GET, &format!("{base}/subgroups/{a_id}/match?epsilon=0.1"), None).await;
    assert_eq!(status, StatusCode::OK);
    let pairs = report["pairs"].as_array().unwrap();
    assert_eq!(report["n_pairs"].as_u64().unwrap() as usize, pairs.len());
    assert!(pairs.iter().all(|p| p["gap"].as_f64().unwrap() <= 0.1));
    assert!(report["sampled_pairs"].as_array().unwrap().len() <= 500);
    let (status, _, _) = send(&app, Method::GET, &format!("{base}/subgroups/{a_id}/match?epsilon=-1"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, units, _) = send(&app, Method::GET, &format!("{base}/subgroups/{a_id}/units?limit=5&offset=2"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(units["total"].as_u64().unwrap() as usize, 2 * pairs.len());
    let rows = units["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0]["role"], "treated");
    assert_eq!(rows[0]["covariates"]["c0"], "a");

    let (status, dist, _) = send(&app, Method::GET, &format!("{base}/covariates/x0/distribution?bins=10&subgroup={a_id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let bins = dist["bins"].as_array().unwrap();
    assert_eq!(bins.len(), 10);
    assert_eq!(bins.iter().map(|b| b["count"].as_u64().unwrap()).sum::<u64>(), 3000);
    assert_eq!(bins.iter().map(|b| b["in_subgroup"].as_u64().unwrap()).sum::<u64>(), cov(&a["subgroup"]));
    let (_, dist, _) = send(&app, Method::GET, &format!("{base}/covariates/c0/distribution"), None).await;
    assert_eq!(dist["values"].as_array().unwrap().len(), 3);
    let (status, _, _) = send(&app, Method::GET, &format!("{base}/covariates/nope/distribution"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, _, first) = send(&app, Method::GET, &format!("{base}/subgroups?fronts=all"), None).await;
    let (_, _, second) = send(&app, Method::GET, &format!("{base}/subgroups?fronts=all"), None).await;
    assert_eq!(first, second);
    assert!(!first.contains("NaN") && !first.contains("inf"));

    let (status, _, _) = send(&app, Method::DELETE, &format!("{base}/subgroups/{a_id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _, _) = send(&app, Method::GET, &format!("{base}/subgroups/{a_id}/match"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn projection_is_cached_and_tagged() {
    let app = app();
    let (ds, _) = generate_synthetic(&SynthSpec {
        n: 300,
        seed: 4,
        ..SynthSpec::default()
    })
    .unwrap();
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    let (status, body) = upload(&app, std::str::from_utf8(&buf).unwrap(), None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let base = format!("/sessions/{}", body["session_id"].as_str().unwrap());

    let (status, layout, p1) = send(&app, Method::GET, &format!("{base}/projection"), None).await;
    assert_eq!(status, StatusCode::OK);
    let points = layout["points"].as_array().unwrap();
    assert_eq!(points.len(), 300);
    assert!(points.iter().all(|p| p["subgroups"].as_array().unwrap().is_empty()));
    let (_, _, p2) = send(&app, Method::GET, &format!("{base}/projection"), None).await;
    assert_eq!(p1, p2);

    let sg = json!({"atoms": [{"covariate": "c0", "op": "eq", "value": "a"}]});
    let (status, created, _) = send(&app, Method::POST, &format!("{base}/subgroups"), Some(sg)).await;
    assert_eq!(status, StatusCode::OK, "{created}");
    let id = created["subgroup"]["id"].as_str().unwrap();
    let (_, layout, _) = send(&app, Method::GET, &format!("{base}/projection"), None).await;
    let tagged = layout["points"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|p| p["subgroups"].as_array().unwrap().iter().any(|v| v == id))
        .count() as u64;
    assert_eq!(tagged, created["subgroup"]["metrics"]["coverage"].as_u64().unwrap());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn snapshots_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::new(Some(dir.path().to_path_buf())).unwrap());
    let (status, body) = upload(&app, FOUR_ROWS, None).await;
    assert_eq!(status, StatusCode::OK);
    let sid = body["session_id"].as_str().unwrap().to_string();
    let (csv, _) = planted_csv(4);
    let (_, big) = upload(&app, &csv, None).await;
    let big_id = big["session_id"].as_str().unwrap().to_string();
    let sg = json!({"atoms": [{"covariate": "c1", "op": "eq", "value": "b"}]});
    let (status, _, _) = send(&app, Method::POST, &format!("/sessions/{big_id}/subgroups"), Some(sg)).await;
    assert_eq!(status, StatusCode::OK);
    let (_, _, before) = send(&app, Method::GET, &format!("/sessions/{big_id}/subgroups"), None).await;

    let state = AppState::new(Some(dir.path().to_path_buf())).unwrap();
    assert_eq!(state.session_count(), 2);
    let restarted = router(state);
    let (status, body, _) = send(&restarted, Method::GET, &format!("/sessions/{sid}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["n"], 4);
    let (_, _, after) = send(&restarted, Method::GET, &format!("/sessions/{big_id}/subgroups"), None).await;
    assert_eq!(before, after);
    let (_, fresh) = upload(&restarted, FOUR_ROWS, None).await;
    assert_ne!(fresh["session_id"], json!(sid));
    assert_ne!(fresh["session_id"], json!(big_id));
}
