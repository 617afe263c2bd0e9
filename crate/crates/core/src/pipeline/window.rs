//! Stage 3: window style by majority vote over the facade tiles.

use super::facade::FacadeLayout;
use super::recognize::WindowStyleRecognizer;
use crate::grammar::{StyleCatalog, WindowGrammar, WindowStyle};
use crate::vision::{luminance, ImageBuffer, PixelBox};

/// Bins of each trim-occupancy profile.
pub const TRIM_PROFILE_BINS: usize = 32;
const TEMPLATE_SAMPLES: usize = 128;
/// A window must be this much darker (median luma) than its surroundings.
const MIN_WINDOW_CONTRAST: f64 = 12.0;

/// Whether a window-relative point `(x, y)` (y down) is frame or mullion
/// for `style` drawn at `aspect` (width / height), matching the composed
/// geometry.
fn trim_shape(style: &WindowStyle, aspect: f64) -> impl Fn(f64, f64) -> bool {
    let p = style.params_for_aspect(aspect);
    let (frame, panes_x, panes_y) = (p[0], p[1] as u32, p[2] as u32);
    // a length of `min(w, h)` relative to the width and the height
    let (sx, sy) = if aspect >= 1.0 {
        (1.0 / aspect, 1.0)
    } else {
        (1.0, aspect)
    };
    let (ft_x, ft_y) = (frame * sx, frame * sy);
    let bar = if frame > 0.0 { 0.6 * frame } else { 0.06 };
    let (bar_x, bar_y) = (bar * sx, bar * sy);
    let (g0x, g1x, g0y, g1y) = (ft_x, 1.0 - ft_x, ft_y, 1.0 - ft_y);
    move |x, y| {
        if x < g0x || x > g1x || y < g0y || y > g1y {
            return true;
        }
        let on_v = (1..panes_x)
            .any(|k| (x - (g0x + (g1x - g0x) * k as f64 / panes_x as f64)).abs() <= bar_x / 2.0);
        let on_h = (1..panes_y)
            .any(|k| (y - (g0y + (g1y - g0y) * k as f64 / panes_y as f64)).abs() <= bar_y / 2.0);
        on_v || on_h
    }
}

/// Column and row trim-occupancy profiles of a window style drawn at
/// `aspect` (width / height), in window-relative coordinates.
pub fn trim_template_profiles(
    style: &WindowStyle,
    aspect: f64,
) -> ([f64; TRIM_PROFILE_BINS], [f64; TRIM_PROFILE_BINS]) {
    let is_trim = trim_shape(style, aspect);
    let n = TEMPLATE_SAMPLES;
    let per_bin = (n / TRIM_PROFILE_BINS * n) as f64;
    let mut cols = [0.0; TRIM_PROFILE_BINS];
    let mut rows = [0.0; TRIM_PROFILE_BINS];
    for j in 0..n {
        for i in 0..n {
            if is_trim((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64) {
                cols[i * TRIM_PROFILE_BINS / n] += 1.0 / per_bin;
                rows[j * TRIM_PROFILE_BINS / n] += 1.0 / per_bin;
            }
        }
    }
    (cols, rows)
}

fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * q).round() as usize]
}

/// Classifies the window inside `tile` by comparing its trim-occupancy
/// profiles with every style's template. `None` when the box is not darker
/// than the wall around it.
pub fn classify_window_trim(
    tile: &ImageBuffer,
    window: PixelBox,
    aspect: f64,
    catalog: &StyleCatalog,
) -> Option<usize> {
    if catalog.window.is_empty()
        || window.x1 >= tile.width
        || window.y1 >= tile.height
        || window.x1 < window.x0
        || window.y1 < window.y0
    {
        return None;
    }
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for y in 0..tile.height {
        for x in 0..tile.width {
            let l = luminance(tile.get(x, y));
            if window.contains(x, y) {
                inside.push(l)
            } else {
                outside.push(l)
            }
        }
    }
    if !outside.is_empty()
        && percentile(inside.clone(), 0.5) >= percentile(outside, 0.5) - MIN_WINDOW_CONTRAST
    {
        return None;
    }
    let glass = percentile(inside, 0.1);
    let cut = 1.3 * glass + 4.0;

    let (w, h) = (window.width(), window.height());
    let mut cols = [0.0; TRIM_PROFILE_BINS];
    let mut rows = [0.0; TRIM_PROFILE_BINS];
    let mut col_n = [0.0; TRIM_PROFILE_BINS];
    let mut row_n = [0.0; TRIM_PROFILE_BINS];
    for j in 0..h {
        let by = j * TRIM_PROFILE_BINS / h;
        for i in 0..w {
            let bx = i * TRIM_PROFILE_BINS / w;
            let t = if luminance(tile.get(window.x0 + i, window.y0 + j)) > cut {
                1.0
            } else {
                0.0
            };
            cols[bx] += t;
            col_n[bx] += 1.0;
            rows[by] += t;
            row_n[by] += 1.0;
        }
    }
    let mut best = (0, f64::INFINITY);
    for style in &catalog.window {
        let (tc, tr) = trim_template_profiles(style, aspect);
        let mut d = 0.0;
        for b in 0..TRIM_PROFILE_BINS {
            if col_n[b] > 0.0 {
                d += (cols[b] / col_n[b] - tc[b]).abs();
            }
            if row_n[b] > 0.0 {
                d += (rows[b] / row_n[b] - tr[b]).abs();
            }
        }
        if d < best.1 {
            best = (style.id, d);
        }
    }
    Some(best.0)
}

/// Votes a window style over every tile of the layout; ties go to the
/// lower id. Without any vote the first style's defaults are used.
pub fn window_stage(
    rect: &ImageBuffer,
    layout: &FacadeLayout,
    catalog: &StyleCatalog,
    recognizer: &dyn WindowStyleRecognizer,
) -> WindowGrammar {
    let aspect = layout.window_aspect();
    let mut votes = vec![0usize; catalog.window.len()];
    for (tile, win) in layout.tiles() {
        let local = PixelBox {
            x0: win.x0.max(tile.x0) - tile.x0,
            y0: win.y0.max(tile.y0) - tile.y0,
            x1: win.x1.min(tile.x1).saturating_sub(tile.x0),
            y1: win.y1.min(tile.y1).saturating_sub(tile.y0),
        };
        if let Some(id) = recognizer.classify(&rect.crop(tile), local, aspect, catalog) {
            if let Some(v) = votes.get_mut(id) {
                *v += 1;
            }
        }
    }
    let top = votes.iter().copied().max().unwrap_or(0);
    if top == 0 {
        let style = &catalog.window[0];
        return WindowGrammar {
            style_id: style.id,
            shape_params: style.default_params(),
        };
    }
    let id = votes.iter().position(|&v| v == top).unwrap_or(0);
    let style = &catalog.window[id];
    log::debug!("window votes {votes:?} -> {}", style.name);
    WindowGrammar {
        style_id: style.id,
        shape_params: style.params_for_aspect(aspect),
    }
}
