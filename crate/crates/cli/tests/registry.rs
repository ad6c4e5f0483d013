mod common;

use common::*;
use serde_json::{json, Value};

fn http() -> reqwest::Client {
    reqwest::Client::new()
}

#[tokio::test(flavor = "multi_thread")]
async fn register_submit_status_and_stop() {
    let port = free_port();
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("registry.jsonl");
    let _server = spawn(&["registry", "serve", "--port", &port.to_string(), "--log", log.to_str().unwrap()], &[port]);
    let addr = format!("127.0.0.1:{port}");
    let base = format!("http://{addr}");

    let bp = core_data("blueprints/person-alarm.json");
    let o = clic(&["submit", "--blueprint", bp.to_str().unwrap(), "--registry", &addr]);
    assert_eq!(code(&o), 3, "empty pool escalates: {}", String::from_utf8_lossy(&o.stderr));

    for f in ["camera.json", "detector.json", "alarm.json"] {
        let o = clic(&["component", "run", "--descriptor", fixture(f).to_str().unwrap(), "--registry", &addr, "--beats", "1"]);
        assert_eq!(code(&o), 0, "{f}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let same = clic(&["component", "run", "--descriptor", fixture("camera.json").to_str().unwrap(), "--registry", &addr, "--beats", "0"]);
    assert_eq!(code(&same), 0, "identical re-registration is idempotent");
    let mut changed: Value = serde_json::from_str(&std::fs::read_to_string(fixture("camera.json")).unwrap()).unwrap();
    changed["posted_terms"]["price"] = json!(9.0);
    let p = dir.path().join("changed.json");
    std::fs::write(&p, changed.to_string()).unwrap();
    let dup = clic(&["component", "run", "--descriptor", p.to_str().unwrap(), "--registry", &addr, "--beats", "0"]);
    assert_eq!(code(&dup), 2);

    let all: Value = http().get(format!("{base}/components")).send().await.unwrap().json().await.unwrap();
    assert_eq!(all.as_array().unwrap().len(), 3);
    let q = json!({ "kind": "Sensing", "nature": "Any", "capability": "sense.vision", "max_price": 5.0,
                    "min_quality": 0.5, "max_latency": 1000 });
    let hits: Value = http()
        .get(format!("{base}/components"))
        .query(&[("query", q.to_string())])
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(hits.as_array().unwrap().len(), 1);

    let o = clic(&["submit", "--blueprint", bp.to_str().unwrap(), "--registry", &addr]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let set: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(set["system_id"], "person-alarm");

    let o = clic(&["status", "--system", "person-alarm", "--registry", &addr]);
    assert_eq!(code(&o), 0);
    let st: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(st.to_string().contains("cam-entrance"));
    assert_eq!(code(&clic(&["status", "--system", "nope", "--registry", &addr])), 2);

    let r = http().delete(format!("{base}/systems/person-alarm")).send().await.unwrap();
    assert!(r.status().is_success());

    let state: Value = http().get(format!("{base}/state")).send().await.unwrap().json().await.unwrap();
    let ndjson = http().get(format!("{base}/log")).send().await.unwrap().text().await.unwrap();
    let replayed = clic_core::eventlog::replay_text(&ndjson).unwrap().hash();
    assert_eq!(state["state_hash"], replayed);
    let _ = std::fs::read_to_string(&log).unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn teleological_submission_uses_the_builtin_plans() {
    let port = free_port();
    let _server = spawn(&["registry", "serve", "--port", &port.to_string()], &[port]);
    let addr = format!("127.0.0.1:{port}");
    for f in ["camera.json", "detector.json", "alarm.json"] {
        assert_eq!(code(&clic(&["component", "run", "--descriptor", fixture(f).to_str().unwrap(), "--registry", &addr, "--beats", "0"])), 0);
    }
    let o = clic(&["submit", "--teleological", fixture("alert.json").to_str().unwrap(), "--registry", &addr]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let set: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(set["system_id"], "alert-x");
    let plans = core_data("plans.json");
    let o = clic(&["submit", "--teleological", fixture("alert.json").to_str().unwrap(), "--plans", plans.to_str().unwrap(), "--registry", &addr]);
    assert_ne!(code(&o), 0, "resubmitting the same system id is refused");
}

#[tokio::test(flavor = "multi_thread")]
async fn endpoint_errors() {
    let port = free_port();
    let _server = spawn(&["registry", "serve", "--port", &port.to_string()], &[port]);
    let base = format!("http://127.0.0.1:{port}");
    let r = http().post(format!("{base}/components")).body("{}").send().await.unwrap();
    assert_eq!(r.status(), 400);
    let r = http().post(format!("{base}/components/ghost/heartbeat")).send().await.unwrap();
    assert_eq!(r.status(), 404);
    let r = http().delete(format!("{base}/components/ghost")).send().await.unwrap();
    assert_eq!(r.status(), 404);
    let r = http().get(format!("{base}/systems/ghost")).send().await.unwrap();
    assert_eq!(r.status(), 404);
    let r = http().post(format!("{base}/systems")).body("not json").send().await.unwrap();
    assert_eq!(r.status(), 400);
    let body = std::fs::read_to_string(fixture("camera.json")).unwrap();
    assert_eq!(http().post(format!("{base}/components")).body(body).send().await.unwrap().status(), 201);
    let r = http()
        .patch(format!("{base}/components/cam-entrance/availability"))
        .body(json!({ "window": [0, 50_000_000], "capacity": 2.0 }).to_string())
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 200);
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["entry"]["descriptor"]["posted_terms"]["capacity"], 2.0);
}
