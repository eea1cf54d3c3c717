use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use proofread_cli::server::router;
use proofread_core::evalkit::pr_curve;
use proofread_core::synapse::SiteIndex;
use proofread_core::taskserve::{rle_decode, SliceSource, TaskCandidate, TaskService};
use proofread_core::volume::DEFAULT_VOXEL_SIZE_NM;
use proofread_core::workflow::LogicalClock;
use proofread_core::{
    AdjacencyEdge, BodyState, DecisionLog, GrayVolume, Grid3, LabelVolume, MergeCandidate, Voxel, Workflow,
};

const D: usize = 16;

fn cand(a: u64, b: u64, fusion: f64) -> TaskCandidate {
    TaskCandidate {
        candidate: MergeCandidate::new(
            AdjacencyEdge {
                a,
                b,
                contact_voxels: 10,
                rep_location: Voxel::new(8, 8, 8),
                factor: 1,
            },
            Workflow::Focused,
        ),
        baseline: 0.4,
        cnn: fusion,
        fusion,
    }
}

/// Fragments 1..=4 in x-slabs of width 4; candidates join neighbours.
fn app() -> (Router, Vec<TaskCandidate>) {
    let mut g = Grid3::new([D; 3]);
    let mut gray = Grid3::new([D; 3]);
    for z in 0..D {
        for y in 0..D {
            for x in 0..D {
                g.set(x, y, z, 1 + (x / 4) as u64);
                gray.set(x, y, z, (x * 10 + y) as u8);
            }
        }
    }
    let labels = LabelVolume::from_grid(&g, [DEFAULT_VOXEL_SIZE_NM; 3], 8).unwrap();
    let gray = GrayVolume::from_grid(&gray, [DEFAULT_VOXEL_SIZE_NM; 3], 8).unwrap();
    let cands = vec![cand(1, 2, 0.9), cand(2, 3, 0.2), cand(3, 4, 0.6)];
    let pr = pr_curve(&[(0.9, true), (0.6, false), (0.2, true)]).unwrap();
    let svc = TaskService::new(
        cands.clone(),
        BodyState::new(1..=4),
        DecisionLog::in_memory(),
        Arc::new(LogicalClock::from_unix(1_700_000_000)),
    )
    .unwrap()
    .with_slices(SliceSource {
        gray,
        labels,
        sites: SiteIndex::new(&[], 8),
        edge: 9,
        prox_radius_nm: 80.0,
    })
    .with_pr_curve(pr);
    (router(Arc::new(svc)), cands)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
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
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

#[tokio::test]
async fn next_task_follows_fusion_order_and_leases() {
    let (app, cands) = app();
    let (s, v) = call_json(&app, "GET", "/api/tasks/next?workflow=focused&reviewer=alice", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["empty"], false);
    assert_eq!(v["task"]["candidate_id"], json!(cands[0].candidate.id));
    assert_eq!(v["task"]["lease"]["lease_holder"], "alice");

    let (_, v2) = call_json(&app, "GET", "/api/tasks/next?reviewer=bob", None).await;
    assert_eq!(v2["task"]["candidate_id"], json!(cands[2].candidate.id));

    // Alice asking again renews her own lease.
    let (_, v3) = call_json(&app, "GET", "/api/tasks/next?reviewer=alice", None).await;
    assert_eq!(v3["task"]["candidate_id"], v["task"]["candidate_id"]);
}

#[tokio::test]
async fn bad_queries_are_rejected() {
    let (app, _) = app();
    let (s, v) = call_json(&app, "GET", "/api/tasks/next?workflow=focused", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["code"].is_string() && v["message"].is_string());
    let (s, _) = call_json(&app, "GET", "/api/tasks/next?workflow=sideways&reviewer=a", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn decisions_duplicates_and_conflicts() {
    let (app, cands) = app();
    let id = cands[1].candidate.id.to_string();
    let uri = format!("/api/tasks/{id}/decision");
    let (s, v) = call_json(&app, "POST", &uri, Some(json!({"verdict": "merge", "reviewer": "r1"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["sequence"], 1);
    assert_eq!(v["duplicate"], false);

    let (s, v) = call_json(&app, "POST", &uri, Some(json!({"verdict": "merge", "reviewer": "r2"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["sequence"], 1);
    assert_eq!(v["duplicate"], true);

    let (s, v) = call_json(&app, "POST", &uri, Some(json!({"verdict": "no_merge", "reviewer": "r1"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "conflict");

    let (s, _) = call_json(&app, "POST", "/api/tasks/ffffffffffffffff/decision", Some(json!({"verdict": "merge", "reviewer": "r"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let other = format!("/api/tasks/{}/decision", cands[2].candidate.id);
    let (s, _) = call_json(&app, "POST", &other, Some(json!({"verdict": "maybe", "reviewer": "r"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, v) = call_json(&app, "GET", "/api/stats", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["total"], 3);
    assert_eq!(v["decided"], 1);
    assert_eq!(v["merges"], 1);
    assert_eq!(v["pending"], 2);
    assert_eq!(v["merge_rate"], 1.0);
}

#[tokio::test]
async fn leased_candidate_conflicts_for_other_reviewer() {
    let (app, _) = app();
    let (_, v) = call_json(&app, "GET", "/api/tasks/next?reviewer=alice", None).await;
    let id = v["task"]["candidate_id"].as_str().unwrap().to_string();
    let uri = format!("/api/tasks/{id}/decision");
    let (s, _) = call_json(&app, "POST", &uri, Some(json!({"verdict": "merge", "reviewer": "bob"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call_json(&app, "POST", &uri, Some(json!({"verdict": "merge", "reviewer": "alice"}))).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn queue_drains_to_empty() {
    let (app, _) = app();
    for _ in 0..3 {
        let (_, v) = call_json(&app, "GET", "/api/tasks/next?reviewer=r", None).await;
        let id = v["task"]["candidate_id"].as_str().unwrap().to_string();
        let (s, _) = call_json(
            &app,
            "POST",
            &format!("/api/tasks/{id}/decision"),
            Some(json!({"verdict": "no_merge", "reviewer": "r"})),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
    }
    let (s, v) = call_json(&app, "GET", "/api/tasks/next?reviewer=r", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["empty"], true);
    assert!(v["task"].is_null());
}

#[tokio::test]
async fn slices_json_and_png() {
    let (app, cands) = app();
    let id = cands[0].candidate.id;
    let (s, v) = call_json(&app, "GET", &format!("/api/candidates/{id}/slices?axis=z&index=4"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["width"], 9);
    assert_eq!(v["height"], 9);
    assert!(!v["png_base64"].as_str().unwrap().is_empty());
    // The cube spans x 4..=12, so fragment 1 (x < 4) is absent and
    // fragment 2 fills columns 0..4.
    let runs: Vec<[u32; 2]> = serde_json::from_value(v["mask_b"].clone()).unwrap();
    let b = rle_decode(&runs, 81).unwrap();
    for row in 0..9 {
        for col in 0..9 {
            assert_eq!(b[row * 9 + col], col < 4, "row {row} col {col}");
        }
    }

    let (s, png) = call(&app, "GET", &format!("/api/candidates/{id}/slices?axis=x&format=png"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");

    let (s, _) = call_json(&app, "GET", &format!("/api/candidates/{id}/slices?axis=w"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(&app, "GET", &format!("/api/candidates/{id}/slices?index=99"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(&app, "GET", "/api/candidates/0000000000000001/slices", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn eval_pr_reports_curve() {
    let (app, _) = app();
    let (s, v) = call_json(&app, "GET", "/api/eval/pr", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["available"], true);
    let auprc = v["auprc"].as_f64().unwrap();
    assert!(auprc > 0.0 && auprc <= 1.0);
    assert!(!v["points"].as_array().unwrap().is_empty());
}
