//! Window localization inside one facade tile: Otsu threshold, then the
//! largest dark 4-connected component.

use serde::{Deserialize, Serialize};

use super::image::ImageBuffer;

/// Window rectangle relative to its tile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowBox {
    pub rel_left: f64,
    pub rel_top: f64,
    pub rel_width: f64,
    pub rel_height: f64,
}

const MIN_AREA_FRAC: f64 = 0.02;
/// Otsu classes closer than this (luma levels) are treated as one class.
const MIN_CONTRAST: f64 = 12.0;
const EDGE_EPS: f64 = 1e-3;

/// Otsu's threshold over 256 luma bins. Returns the bin `t` such that
/// values `<= t` form the dark class, with the class means, or `None` for a
/// single-valued histogram.
pub fn otsu_threshold(values: &[u8]) -> Option<(u8, f64, f64)> {
    let mut hist = [0usize; 256];
    for &v in values {
        hist[v as usize] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best: Option<(u8, f64, f64, f64)> = None;
    for t in 0..255 {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if best.is_none_or(|b| between > b.3) {
            best = Some((t as u8, m0, m1, between));
        }
    }
    best.map(|(t, m0, m1, _)| (t, m0, m1))
}

pub fn detect_window(tile: &ImageBuffer) -> Option<WindowBox> {
    let (w, h) = (tile.width, tile.height);
    if w < 8 || h < 8 {
        return None;
    }
    let luma: Vec<u8> = tile
        .luma()
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    let (t, dark_mean, light_mean) = otsu_threshold(&luma)?;
    if light_mean - dark_mean < MIN_CONTRAST {
        return None;
    }
    let dark: Vec<bool> = luma.iter().map(|&v| v <= t).collect();

    // largest 4-connected dark component; ties keep the first in raster order
    let mut label = vec![false; w * h];
    let mut best: Option<(usize, (usize, usize, usize, usize))> = None;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !dark[start] || label[start] {
            continue;
        }
        label[start] = true;
        stack.push(start);
        let (mut n, mut bx) = (0usize, (usize::MAX, usize::MAX, 0usize, 0usize));
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            n += 1;
            bx = (bx.0.min(x), bx.1.min(y), bx.2.max(x), bx.3.max(y));
            let mut visit = |j: usize| {
                if dark[j] && !label[j] {
                    label[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if best.is_none_or(|b| n > b.0) {
            best = Some((n, bx));
        }
    }
    let (n, (x0, y0, x1, y1)) = best?;
    if (n as f64) < MIN_AREA_FRAC * (w * h) as f64 {
        return None;
    }
    let (wf, hf) = (w as f64, h as f64);
    let rel_left = (x0 as f64 / wf).clamp(EDGE_EPS, 1.0 - 2.0 * EDGE_EPS);
    let rel_top = (y0 as f64 / hf).clamp(EDGE_EPS, 1.0 - 2.0 * EDGE_EPS);
    let right = ((x1 + 1) as f64 / wf).min(1.0 - EDGE_EPS);
    let bottom = ((y1 + 1) as f64 / hf).min(1.0 - EDGE_EPS);
    Some(WindowBox {
        rel_left,
        rel_top,
        rel_width: (right - rel_left).max(EDGE_EPS),
        rel_height: (bottom - rel_top).max(EDGE_EPS),
    })
}
