#![allow(dead_code)]

use std::sync::Arc;

use p2b_core::broker::Clock;
use p2b_core::vision::{write_silhouette, ImageBuffer, SilhouettePolyline};
use p2b_service::config::GatewayConfig;
use p2b_service::gateway::{spawn, GatewayHandle};

pub struct TestGateway {
    pub handle: GatewayHandle,
    pub dir: tempfile::TempDir,
}

pub fn gateway_with(clock: Arc<dyn Clock>, tweak: impl FnOnce(&mut GatewayConfig)) -> TestGateway {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = GatewayConfig {
        listen: "127.0.0.1:0".into(),
        staging_root: dir.path().join("staging"),
        results_root: dir.path().join("results"),
        static_root: dir.path().join("static"),
        ..Default::default()
    };
    tweak(&mut cfg);
    let handle = spawn(cfg, clock).unwrap();
    TestGateway { handle, dir }
}

pub fn png(w: usize, h: usize) -> Vec<u8> {
    ImageBuffer::from_fn(w, h, |x, y| [(x % 256) as u8, (y % 256) as u8, 128]).encode_png()
}

pub fn square_silhouette(w: u32, h: u32) -> Vec<u8> {
    let (a, b) = (w as f64 * 0.25, w as f64 * 0.75);
    let (c, d) = (h as f64 * 0.25, h as f64 * 0.75);
    write_silhouette(&SilhouettePolyline::from_polygon(
        w,
        h,
        &[(a, c), (b, c), (b, d), (a, d)],
    ))
    .into_bytes()
}
