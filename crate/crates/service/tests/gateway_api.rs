mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::DateTime;
use common::{gateway_with, png, square_silhouette};
use p2b_core::broker::{JobMessage, JobState, ManualClock, SystemClock};
use p2b_service::api::Health;
use p2b_service::client::{ClientError, GatewayClient};
use reqwest::blocking::multipart::{Form, Part};
use reqwest::StatusCode;

fn http_status(e: ClientError) -> StatusCode {
    e.status()
        .unwrap_or_else(|| panic!("expected an HTTP error, got {e}"))
}

fn raw_submit(url: &str, image: Vec<u8>, silhouette: Vec<u8>) -> (StatusCode, String) {
    let form = Form::new()
        .part("image", Part::bytes(image))
        .part("silhouette", Part::bytes(silhouette));
    let resp = reqwest::blocking::Client::new()
        .post(format!("{url}/api/jobs"))
        .multipart(form)
        .send()
        .map_err(|e| format!("{e:?}"))
        .unwrap();
    (resp.status(), resp.text().unwrap())
}

#[test]
fn submission_is_validated_and_queued() {
    let gw = gateway_with(Arc::new(SystemClock), |_| {});
    let client = GatewayClient::new(&gw.handle.url()).unwrap();

    let id = client
        .submit(png(512, 512), square_silhouette(512, 512))
        .unwrap();
    assert_eq!(id, 1);
    let s = client.status(id).unwrap();
    assert_eq!(
        (s.state, s.progress, s.worker_id.clone()),
        (JobState::Queued, 0, None)
    );
    let staged = gw.handle.state.config.staging_root.join("1");
    assert!(staged.join("image.png").is_file() && staged.join("silhouette.txt").is_file());

    let mut truncated = png(512, 512);
    truncated.truncate(truncated.len() / 2);
    let (code, body) = raw_submit(&gw.handle.url(), truncated, square_silhouette(512, 512));
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert!(body.contains("image decode failed"), "{body}");

    let outside = b"P2B-SILH 1 512 512\n10 10 600 10\n600 10 10 300\n".to_vec();
    let (code, body) = raw_submit(&gw.handle.url(), png(512, 512), outside);
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert!(body.contains("line 2"), "{body}");

    let (code, body) = raw_submit(&gw.handle.url(), png(512, 512), square_silhouette(256, 256));
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert!(body.contains("line 1"), "{body}");

    let form = Form::new().part("image", Part::bytes(png(8, 8)));
    let resp = reqwest::blocking::Client::new()
        .post(format!("{}/api/jobs", gw.handle.url()))
        .multipart(form)
        .send()
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    // rejected uploads leave nothing behind and burn no ids
    assert_eq!(
        client
            .submit(png(64, 64), square_silhouette(64, 64))
            .unwrap(),
        2
    );
    let leftovers: Vec<_> = std::fs::read_dir(&gw.handle.state.config.staging_root)
        .unwrap()
        .collect();
    assert_eq!(leftovers.len(), 2);

    assert_eq!(
        http_status(client.status(99).unwrap_err()),
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        http_status(client.result(99).unwrap_err()),
        StatusCode::NOT_FOUND
    );
}

#[test]
fn oversize_uploads_get_413() {
    let gw = gateway_with(Arc::new(SystemClock), |c| c.max_upload_bytes = 4096);
    let (code, _) = raw_submit(
        &gw.handle.url(),
        vec![0u8; 64 * 1024],
        square_silhouette(8, 8),
    );
    assert_eq!(code, StatusCode::PAYLOAD_TOO_LARGE);
}

#[test]
fn worker_endpoints_follow_the_broker_contract() {
    let gw = gateway_with(Arc::new(SystemClock), |_| {});
    let client = GatewayClient::new(&gw.handle.url()).unwrap();

    let reg = client.register("w0", 0).unwrap();
    assert_eq!(reg.results_root, gw.handle.state.config.results_root);
    assert_eq!(reg.job_timeout_s, 120);
    assert_eq!(
        http_status(client.register("w1", 0).unwrap_err()),
        StatusCode::CONFLICT
    );
    assert_eq!(
        http_status(client.next("ghost", Duration::ZERO).unwrap_err()),
        StatusCode::NOT_FOUND
    );

    let t = Instant::now();
    assert_eq!(client.next("w0", Duration::from_secs(1)).unwrap(), None);
    assert!(t.elapsed() >= Duration::from_secs(1));

    let id = client
        .submit(png(64, 64), square_silhouette(64, 64))
        .unwrap();
    let raw = client.next("w0", Duration::from_secs(1)).unwrap().unwrap();
    let msg = JobMessage::from_json(&raw).unwrap();
    assert_eq!(msg.job_id, id);
    assert!(msg.image_path.is_absolute() && msg.silhouette_path.is_file());
    let v: serde_json::Value = serde_json::from_str(&raw).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["image", "job_id", "silhouette", "submitted_at"]);
    assert!(DateTime::parse_from_rfc3339(v["submitted_at"].as_str().unwrap()).is_ok());

    let s = client.status(id).unwrap();
    assert_eq!(
        (s.state, s.worker_id.as_deref()),
        (JobState::Running, Some("w0"))
    );
    assert_eq!(
        http_status(client.result(id).unwrap_err()),
        StatusCode::CONFLICT
    );

    client.report(id, JobState::Running, 60, "facade").unwrap();
    assert_eq!(
        http_status(client.report(id, JobState::Running, 40, "").unwrap_err()),
        StatusCode::UNPROCESSABLE_ENTITY
    );
    client.report(id, JobState::Failed, 60, "boom").unwrap();
    assert_eq!(
        http_status(client.report(id, JobState::Running, 80, "").unwrap_err()),
        StatusCode::UNPROCESSABLE_ENTITY
    );
    match client.result(id) {
        Err(ClientError::Http { status, message }) => {
            assert_eq!(status, StatusCode::GONE);
            assert!(message.contains("boom"), "{message}");
        }
        other => panic!("{other:?}"),
    }

    let h: Health = client.health().unwrap();
    assert_eq!(
        h,
        Health {
            workers: 1,
            queued: 0,
            running: 0
        }
    );

    let resp = reqwest::blocking::Client::new()
        .post(format!("{}/api/worker/report", gw.handle.url()))
        .body("{not json")
        .send()
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
}

#[test]
fn status_document_has_the_documented_fields() {
    let gw = gateway_with(Arc::new(SystemClock), |_| {});
    let client = GatewayClient::new(&gw.handle.url()).unwrap();
    let id = client
        .submit(png(32, 32), square_silhouette(32, 32))
        .unwrap();
    let text = reqwest::blocking::get(format!("{}/api/jobs/{id}", gw.handle.url()))
        .unwrap()
        .text()
        .unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        [
            "job_id",
            "message",
            "progress",
            "state",
            "updated_at",
            "worker_id"
        ]
    );
    assert_eq!(v["state"], "queued");
    assert!(v["worker_id"].is_null());
}

#[test]
fn stalled_jobs_time_out_and_their_result_is_gone() {
    let t0 = DateTime::from_timestamp(1_700_000_000, 0).unwrap();
    let clock = Arc::new(ManualClock::new(t0));
    let gw = gateway_with(clock.clone(), |c| c.reap_interval_s = 0.05);
    let client = GatewayClient::new(&gw.handle.url()).unwrap();
    client.register("staller", 0).unwrap();
    let id = client
        .submit(png(32, 32), square_silhouette(32, 32))
        .unwrap();
    client
        .next("staller", Duration::from_secs(1))
        .unwrap()
        .unwrap();

    clock.advance(Duration::from_secs(119));
    std::thread::sleep(Duration::from_millis(200));
    assert_eq!(client.status(id).unwrap().state, JobState::Running);

    clock.advance(Duration::from_secs(2));
    let end = client.wait(id, Duration::from_millis(20), |_| {}).unwrap();
    assert_eq!(end.state, JobState::Timeout);
    match client.result(id) {
        Err(ClientError::Http { status, message }) => {
            assert_eq!(status, StatusCode::GONE);
            assert!(message.contains("timeout"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    // the late report is refused
    assert_eq!(
        http_status(client.report(id, JobState::Completed, 100, "").unwrap_err()),
        StatusCode::UNPROCESSABLE_ENTITY
    );
}

#[test]
fn static_assets_are_served_at_the_root() {
    let gw = gateway_with(Arc::new(SystemClock), |_| {});
    let root = &gw.handle.state.config.static_root;
    std::fs::create_dir_all(root).unwrap();
    std::fs::write(root.join("index.html"), "<!doctype html><title>p2b</title>").unwrap();
    let resp = reqwest::blocking::get(format!("{}/", gw.handle.url())).unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert!(resp.text().unwrap().contains("<title>p2b</title>"));
    let missing = reqwest::blocking::get(format!("{}/nope.js", gw.handle.url())).unwrap();
    assert_eq!(missing.status(), StatusCode::NOT_FOUND);
}

#[test]
fn restart_clears_stale_job_directories() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results");
    std::fs::create_dir_all(results.join("1")).unwrap();
    std::fs::write(results.join("1/model.obj"), "stale").unwrap();
    std::fs::write(results.join("notes.txt"), "keep").unwrap();
    let _gw = gateway_with(Arc::new(SystemClock), |c| c.results_root = results.clone());
    assert!(!results.join("1").exists());
    assert!(results.join("notes.txt").exists());
}
