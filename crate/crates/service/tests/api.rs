use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt as _;
use serde_json::{json, Value};
use style_opt::store::SessionStore;
use style_opt_service::api::{router, AppState};
use tower::ServiceExt as _;

fn app(dir: &std::path::Path) -> Router {
    router(AppState::new(SessionStore::new(dir.to_path_buf())))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn create(app: &Router, cfg: Value) -> String {
    let (status, body) = call(app, Method::POST, "/sessions", Some(cfg)).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

fn sad_config() -> Value {
    json!({"style": "sad", "cost_type": "featurized", "settings": {"seed": 3}})
}

#[tokio::test]
async fn healthz_answers() {
    let dir = tempfile::tempdir().unwrap();
    let (status, body) = call(&app(dir.path()), Method::GET, "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    for cfg in [
        json!({"style": "sad"}),
        json!({"style": "sad", "cost_type": "spline"}),
        json!({"style": "", "cost_type": "mlp"}),
        json!({"style": "sad", "cost_type": "featurized", "settings": {"trajectory_len": 2}}),
        json!({"style": "sad", "cost_type": "featurized", "tasks": []}),
    ] {
        let (status, body) = call(&app, Method::POST, "/sessions", Some(cfg.clone())).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{cfg}");
        assert_eq!(body["code"], "invalid_config");
    }
}

#[tokio::test]
async fn unknown_session_is_404() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    for (m, uri, body) in [
        (Method::GET, "/sessions/nope/status", None),
        (Method::GET, "/sessions/nope/queries/next", None),
        (
            Method::POST,
            "/sessions/nope/labels",
            Some(json!({"pair_id": "r0-p0", "choice": "A"})),
        ),
    ] {
        let (status, body) = call(&app, m, uri, body).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert_eq!(body["code"], "session_not_found");
    }
}

#[tokio::test]
async fn one_full_round() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, sad_config()).await;

    let (status, batch) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/queries/next"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let pairs = batch["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 4);
    for p in pairs {
        assert_eq!(p["x_a"]["T"], 10);
        assert_eq!(p["x_a"]["timestamps"].as_array().unwrap().len(), 10);
        assert_eq!(p["x_b"]["ee_path"].as_array().unwrap().len(), 10);
    }

    let (status, body) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/queries/next"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "batch_pending");

    let (status, pending) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/queries/pending"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(pending["batch_id"], batch["batch_id"]);

    let labels = format!("/sessions/{id}/labels");
    let (status, body) = call(
        &app,
        Method::POST,
        &labels,
        Some(json!({"pair_id": "zz", "choice": "A"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "pair_not_found");
    let (status, body) = call(
        &app,
        Method::POST,
        &labels,
        Some(json!({"pair_id": "r0-p0", "choice": "C"})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "invalid_label");

    let mut last = Value::Null;
    for (i, p) in pairs.iter().enumerate() {
        let choice = if i % 2 == 0 { "A" } else { "B" };
        let (status, body) = call(
            &app,
            Method::POST,
            &labels,
            Some(json!({"pair_id": p["pair_id"], "choice": choice})),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["remaining_in_batch"], 3 - i);
        if i == 0 {
            let (status, body) = call(
                &app,
                Method::POST,
                &labels,
                Some(json!({"pair_id": p["pair_id"], "choice": "B"})),
            )
            .await;
            assert_eq!(status, StatusCode::CONFLICT);
            assert_eq!(body["code"], "already_labeled");
        }
        last = body;
    }
    assert_eq!(last["trained"], true);
    assert!(last["final_loss"].as_f64().unwrap().is_finite());

    let (status, st) = call(&app, Method::GET, &format!("/sessions/{id}/status"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(st["round_index"], 1);
    assert_eq!(st["labels_total"], 4);
    assert_eq!(st["pending_pairs"], 0);
    assert_eq!(st["cost_snapshot_summary"]["type"], "featurized");
    assert_eq!(
        st["cost_snapshot_summary"]["w"].as_array().unwrap().len(),
        3
    );

    let (status, body) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/queries/pending"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "no_pending_batch");
}

#[tokio::test]
async fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let first = app(dir.path());
    let id = create(&first, sad_config()).await;
    let (_, batch) = call(
        &first,
        Method::GET,
        &format!("/sessions/{id}/queries/next"),
        None,
    )
    .await;
    let pair = batch["pairs"][0]["pair_id"].clone();
    let (status, _) = call(
        &first,
        Method::POST,
        &format!("/sessions/{id}/labels"),
        Some(json!({"pair_id": pair, "choice": "a"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (_, before) = call(&first, Method::GET, &format!("/sessions/{id}/status"), None).await;
    drop(first);

    let second = app(dir.path());
    let (status, after) = call(
        &second,
        Method::GET,
        &format!("/sessions/{id}/status"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
    assert_eq!(after["labels_total"], 1);
    assert_eq!(after["pending_pairs"], 3);
    let (_, pending) = call(
        &second,
        Method::GET,
        &format!("/sessions/{id}/queries/pending"),
        None,
    )
    .await;
    assert_eq!(
        pending["pairs"],
        batch["pairs"]
            .as_array()
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut p = p.clone();
                if i == 0 {
                    p["label"] = json!("A");
                }
                p
            })
            .collect::<Value>()
    );
}

#[tokio::test]
async fn plan_keeps_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(
        &app,
        json!({"style": "calm", "cost_type": "mlp", "settings": {"seed": 1}}),
    )
    .await;
    let start = [0.1, 0.2, 0.3];
    let goal = [1.0, -0.4, 0.9];
    let (status, plan) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/plan"),
        Some(json!({"start": start, "goal": goal, "T": 12, "duration": 3.0})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{plan}");
    let wps = plan["waypoints"].as_array().unwrap();
    assert_eq!(wps.len(), 12);
    assert_eq!(wps[0], json!(start));
    assert_eq!(wps[11], json!(goal));
    assert_eq!(plan["timestamps"][11], 3.0);
    assert_eq!(plan["ee_path"].as_array().unwrap().len(), 12);
    let hist: Vec<f64> = serde_json::from_value(plan["objective_history"].clone()).unwrap();
    assert!(hist.windows(2).all(|w| w[1] <= w[0] + 1e-9));

    for bad in [
        json!({"start": [0.0, 0.0], "goal": goal}),
        json!({"start": start, "goal": goal, "T": 1}),
        json!({"start": start, "goal": [0.0, "x", 1.0]}),
        json!({"start": start, "goal": goal, "lambda": -1.0}),
    ] {
        let (status, body) = call(
            &app,
            Method::POST,
            &format!("/sessions/{id}/plan"),
            Some(bad.clone()),
        )
        .await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
        assert_eq!(body["code"], "invalid_task");
    }
}

#[tokio::test]
async fn creation_checks_dof_and_issues_fresh_ids() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let a = create(&app, sad_config()).await;
    let b = create(&app, sad_config()).await;
    assert_ne!(a, b);
    let (_, st) = call(&app, Method::GET, &format!("/sessions/{a}/status"), None).await;
    assert_eq!(st["labels_total"], 0);
    assert_eq!(st["round_index"], 0);

    let bad = json!({
        "style": "sad",
        "cost_type": "featurized",
        "tasks": [{"start": [0.0, 0.0], "goal": [1.0, 1.0]}]
    });
    let (status, body) = call(&app, Method::POST, "/sessions", Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "invalid_config");
}

#[tokio::test]
async fn zero_cost_plans_are_straight_and_evenly_timed() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, sad_config()).await;
    let start = [0.0, 0.5, 1.0];
    let goal = [0.9, -0.4, 0.1];
    let (status, plan) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/plan"),
        Some(json!({"start": start, "goal": goal, "duration": 1.8})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{plan}");
    let wps: Vec<Vec<f64>> = serde_json::from_value(plan["waypoints"].clone()).unwrap();
    let ts: Vec<f64> = serde_json::from_value(plan["timestamps"].clone()).unwrap();
    for (t, w) in wps.iter().enumerate() {
        let s = t as f64 / 9.0;
        for j in 0..3 {
            assert!((w[j] - (start[j] + s * (goal[j] - start[j]))).abs() < 1e-3);
        }
        assert!((ts[t] - 0.2 * t as f64).abs() < 1e-12);
    }

    let (status, plan) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/plan"),
        Some(json!({"start": start, "goal": start})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let wps: Vec<Vec<f64>> = serde_json::from_value(plan["waypoints"].clone()).unwrap();
    assert!(wps
        .iter()
        .all(|w| w.iter().zip(start).all(|(a, b)| (a - b).abs() < 1e-9)));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_labels_are_serialized() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, sad_config()).await;
    let (_, batch) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/queries/next"),
        None,
    )
    .await;
    let uri = format!("/sessions/{id}/labels");
    let mut tasks = Vec::new();
    for p in batch["pairs"].as_array().unwrap().clone() {
        for choice in ["A", "B"] {
            let (app, uri, pair) = (app.clone(), uri.clone(), p["pair_id"].clone());
            tasks.push(tokio::spawn(async move {
                call(
                    &app,
                    Method::POST,
                    &uri,
                    Some(json!({"pair_id": pair, "choice": choice})),
                )
                .await
            }));
        }
    }
    let mut ok = 0;
    let mut trained = 0;
    for t in tasks {
        let (status, body) = t.await.unwrap();
        match status {
            StatusCode::OK => {
                ok += 1;
                trained += usize::from(body["trained"] == true);
            }
            StatusCode::CONFLICT => assert_eq!(body["code"], "already_labeled"),
            s => panic!("unexpected {s}: {body}"),
        }
    }
    assert_eq!((ok, trained), (4, 1));
    let (_, st) = call(&app, Method::GET, &format!("/sessions/{id}/status"), None).await;
    assert_eq!(st["round_index"], 1);
    assert_eq!(st["labels_total"], 4);
}
