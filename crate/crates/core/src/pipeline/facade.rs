//! Stage 2: rectify the front facade, count floors and columns, place the
//! window box, pick the facade style and color, and fix the metric scale.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::mass::MassFit;
use super::{PipelineConfig, PipelineError, Recognizers, StyleLibrary};
use crate::grammar::{
    denormalize, instantiate_mass, FacadeGrammar, FacadeSurface, MassModel, MassParameters,
    MassStyle, RelBox, StyleCatalog,
};
use crate::optimizer::{minimize, OptProblem};
use crate::vision::{
    facade_color_with, otsu_threshold, rectify_facade, CameraParams, ImageBuffer, PixelBox,
    Projector, VisionError, WindowBox,
};

/// Half-width of the strip unwrapped around the camera-facing direction of
/// a curved mass when looking for its column period.
const BAND_HALF_DEG: f64 = 60.0;
/// Column separators farther than this from the facing direction are too
/// foreshortened to trust.
const BAND_TRUST_DEG: f64 = 50.0;
const QUADRANT_DEG: f64 = 90.0;
/// Lowest floor height, as a fraction of the uniform `1/floors`, the layout
/// refinement may choose.
const MIN_FLOOR_FILL: f64 = 0.6;

/// A rectified facade and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FacadeView {
    pub rect: ImageBuffer,
    pub facade_index: usize,
    /// Facade size in the fitted model's units.
    pub width_m: f64,
    pub height_m: f64,
    /// Camera after any azimuth alignment, in raster units.
    pub camera: CameraParams,
    /// Column count already measured while extracting the view.
    pub columns_hint: Option<u32>,
}

/// Floor/column grid and window placement measured on a rectified facade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacadeLayout {
    pub floors: u32,
    pub columns: u32,
    /// Floor height as a fraction of the facade height; floors stack from
    /// the bottom edge.
    pub floor_frac: f64,
    pub window_rel: RelBox,
    pub width_m: f64,
    pub height_m: f64,
    pub rect_w: usize,
    pub rect_h: usize,
}

impl FacadeLayout {
    /// Window width over height in facade units.
    pub fn window_aspect(&self) -> f64 {
        let tw = self.width_m / self.columns as f64;
        let fh = self.floor_frac * self.height_m;
        (self.window_rel.width * tw) / (self.window_rel.height * fh)
    }

    /// `(tile, window)` pixel boxes, ground floor first, left to right.
    pub fn tiles(&self) -> Vec<(PixelBox, PixelBox)> {
        let (w, h) = (self.rect_w as f64, self.rect_h as f64);
        let cw = w / self.columns as f64;
        let fh = self.floor_frac * h;
        let r = self.window_rel;
        let clamp_x = |v: f64| (v.max(0.0) as usize).min(self.rect_w - 1);
        let clamp_y = |v: f64| (v.max(0.0) as usize).min(self.rect_h - 1);
        let mut out = Vec::new();
        for k in 0..self.floors {
            let top = h - (k + 1) as f64 * fh;
            for j in 0..self.columns {
                let left = j as f64 * cw;
                let tile = PixelBox {
                    x0: clamp_x(left.round()),
                    y0: clamp_y(top.round()),
                    x1: clamp_x((left + cw).round() - 1.0),
                    y1: clamp_y((top + fh).round() - 1.0),
                };
                let win = PixelBox {
                    x0: clamp_x((left + r.left * cw).floor()),
                    y0: clamp_y((top + r.top * fh).floor()),
                    x1: clamp_x((left + (r.left + r.width) * cw).ceil() - 1.0),
                    y1: clamp_y((top + (r.top + r.height) * fh).ceil() - 1.0),
                };
                out.push((tile, win));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacadeOutcome {
    pub view: FacadeView,
    pub layout: FacadeLayout,
    pub facade: FacadeGrammar,
    /// Mass after the metric rescale.
    pub mass: MassParameters,
    /// Camera after the metric rescale, in raster units.
    pub camera: CameraParams,
    pub warnings: Vec<String>,
}

/// The facade whose outward normal points most directly at the camera.
pub fn select_front_facade(mass: &MassModel, cam: &CameraParams) -> usize {
    let eye = Projector::new(cam, mass.center(), 64, 64).eye;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, f) in mass.facades.iter().enumerate() {
        let to_eye = (eye - f.center()).normalize();
        let d = f.mid_normal().dot(&to_eye);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Projector into the photo for a camera fitted on a `raster_w`-wide raster.
fn photo_projector(
    cam: &CameraParams,
    raster_w: usize,
    photo: &ImageBuffer,
    mass: &MassModel,
) -> Projector {
    let s = photo.width as f64 / raster_w as f64;
    let mut c = *cam;
    c.offset_x_px *= s;
    c.offset_y_px *= s;
    Projector::new(&c, mass.center(), photo.width, photo.height)
}

/// Resamples a facade surface into an upright image at `ppm` pixels per
/// model unit.
fn unwrap_surface(
    photo: &ImageBuffer,
    proj: &Projector,
    surface: &FacadeSurface,
    ppm: f64,
) -> ImageBuffer {
    let (fw, fh) = (surface.width(), surface.height());
    let w = ((fw * ppm).round() as usize).max(1);
    let h = ((fh * ppm).round() as usize).max(1);
    ImageBuffer::from_fn(w, h, |x, y| {
        let u = (x as f64 + 0.5) / w as f64 * fw;
        let v = fh - (y as f64 + 0.5) / h as f64 * fh;
        let (px, py, _) = proj.project(&surface.point(u, v, 0.0));
        photo.sample((px, py))
    })
}

/// Photo pixels per model unit along the vertical center line of a facade.
fn pixels_per_unit(proj: &Projector, surface: &FacadeSurface) -> f64 {
    let (w, h) = (surface.width(), surface.height());
    let (_, top, _) = proj.project(&surface.point(w / 2.0, h, 0.0));
    let (_, bottom, _) = proj.project(&surface.point(w / 2.0, 0.0, 0.0));
    ((bottom - top).abs() / h).max(1e-6)
}

fn wrap_deg(a: f64) -> f64 {
    let mut a = a % 360.0;
    if a > 180.0 {
        a -= 360.0;
    } else if a < -180.0 {
        a += 360.0;
    }
    a
}

/// Rectifies the front facade. Planar facades go through the four-corner
/// homography. For a curved mass the column period is read off a band
/// around the facing direction, the azimuth is turned so column seams land
/// on the quadrant edges (a cylinder's outline does not constrain it), and
/// the facing quadrant is unwrapped.
pub fn extract_facade(
    photo: &ImageBuffer,
    mass: &MassModel,
    cam: &CameraParams,
    raster_w: usize,
    recognizers: &Recognizers,
    cfg: &PipelineConfig,
) -> Result<FacadeView, PipelineError> {
    let index = select_front_facade(mass, cam);
    let surface = &mass.facades[index];
    if surface.is_planar() {
        let proj = photo_projector(cam, raster_w, photo, mass);
        let mut quad = [(0.0, 0.0); 4];
        for (q, p) in quad.iter_mut().zip(surface.corners()) {
            let (x, y, z) = proj.project(&p);
            if z <= 0.0 {
                return Err(VisionError::DegenerateCamera(
                    "front facade is behind the camera".into(),
                )
                .into());
            }
            *q = (x, y);
        }
        let (rect, _) = rectify_facade(photo, &quad)?;
        return Ok(FacadeView {
            rect,
            facade_index: index,
            width_m: surface.width(),
            height_m: surface.height(),
            camera: *cam,
            columns_hint: None,
        });
    }

    let FacadeSurface::Curved {
        radius,
        base_y,
        height,
        ..
    } = *surface
    else {
        unreachable!()
    };
    let mut camera = *cam;
    let mut columns_hint = None;
    let facing = cam.azimuth_deg;
    let band = FacadeSurface::Curved {
        radius,
        theta_start: (facing - BAND_HALF_DEG).to_radians(),
        theta_end: (facing + BAND_HALF_DEG).to_radians(),
        base_y,
        height,
    };
    let proj = photo_projector(cam, raster_w, photo, mass);
    let band_img = unwrap_surface(photo, &proj, &band, pixels_per_unit(&proj, &band));
    if let Ok(grid) = recognizers.grid.estimate(&band_img, &cfg.grid) {
        let deg_per_px = 2.0 * BAND_HALF_DEG / band_img.width as f64;
        let seps: Vec<f64> = grid.col_bounds[1..grid.col_bounds.len() - 1]
            .iter()
            .map(|&x| facing - BAND_HALF_DEG + x as f64 * deg_per_px)
            .filter(|a| (a - facing).abs() <= BAND_TRUST_DEG)
            .collect();
        let mut gaps: Vec<f64> = seps.windows(2).map(|p| p[1] - p[0]).collect();
        if !gaps.is_empty() {
            gaps.sort_by(f64::total_cmp);
            let period = gaps[gaps.len() / 2];
            let columns = ((QUADRANT_DEG / period).round() as u32).max(1);
            let p = QUADRANT_DEG / columns as f64;
            // circular mean of the seams' phase against the quadrant edges
            let (mut s, mut c) = (0.0, 0.0);
            for a in &seps {
                let phase = 2.0 * PI * (a - QUADRANT_DEG / 2.0) / p;
                s += phase.sin();
                c += phase.cos();
            }
            let delta = p * s.atan2(c) / (2.0 * PI);
            camera.azimuth_deg = wrap_deg(cam.azimuth_deg - delta);
            columns_hint = Some(columns);
        }
    }
    let quadrant = (camera.azimuth_deg / QUADRANT_DEG).round() as i64;
    let index = quadrant.rem_euclid(mass.facades.len() as i64) as usize;
    let surface = &mass.facades[index];
    let proj = photo_projector(&camera, raster_w, photo, mass);
    let rect = unwrap_surface(photo, &proj, surface, pixels_per_unit(&proj, surface));
    Ok(FacadeView {
        rect,
        facade_index: index,
        width_m: surface.width(),
        height_m: surface.height(),
        camera,
        columns_hint,
    })
}

/// Nearest `(floor parity, window aspect)` signature; a parity mismatch
/// outweighs any aspect difference, aspects compare in log space, ties go
/// to the lower id.
pub fn nearest_facade_style(floors: u32, window_aspect: f64, catalog: &StyleCatalog) -> usize {
    let parity = (floors % 2) as u8;
    let aspect = if window_aspect.is_finite() && window_aspect > 0.0 {
        window_aspect
    } else {
        1.0
    };
    let mut best = (0, f64::INFINITY);
    for s in &catalog.facade {
        let d = if s.floor_parity == parity { 0.0 } else { 1e6 }
            + (aspect / s.window_aspect).ln().abs();
        if d < best.1 {
            best = (s.id, d);
        }
    }
    best.0
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-pixel coverage of `[a, b]` intervals on `n` unit pixels.
fn coverage(n: usize, intervals: impl Iterator<Item = (f64, f64)>) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (a, b) in intervals {
        let (a, b) = (a.max(0.0), b.min(n as f64));
        if b <= a {
            continue;
        }
        for (p, slot) in out
            .iter_mut()
            .enumerate()
            .take(b.ceil() as usize)
            .skip(a.floor() as usize)
        {
            let lo = a.max(p as f64);
            let hi = b.min(p as f64 + 1.0);
            if hi > lo {
                *slot += hi - lo;
            }
        }
    }
    out
}

/// Keeps a box strictly inside the unit tile.
fn legal_box(l: f64, t: f64, w: f64, h: f64) -> RelBox {
    const EPS: f64 = 0.005;
    let l = l.clamp(EPS, 1.0 - 3.0 * EPS);
    let t = t.clamp(EPS, 1.0 - 3.0 * EPS);
    let w = w.clamp(EPS, 1.0 - EPS - l);
    let h = h.clamp(EPS, 1.0 - EPS - t);
    RelBox::new(l, t, w, h)
}

/// Dark-pixel evidence of a rectified facade.
struct DarkMask {
    w: usize,
    h: usize,
    dark: Vec<bool>,
    row_dark: Vec<f64>,
}

impl DarkMask {
    fn new(rect: &ImageBuffer) -> Self {
        let luma: Vec<u8> = rect
            .luma()
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        let dark: Vec<bool> = match otsu_threshold(&luma) {
            Some((t, lo, hi)) if hi - lo >= 12.0 => luma.iter().map(|&v| v <= t).collect(),
            _ => vec![false; luma.len()],
        };
        let (w, h) = (rect.width, rect.height);
        let row_dark = (0..h)
            .map(|y| dark[y * w..(y + 1) * w].iter().filter(|&&d| d).count() as f64)
            .collect();
        DarkMask {
            w,
            h,
            dark,
            row_dark,
        }
    }

    /// Mean absolute difference between the predicted window coverage and
    /// the dark mask.
    fn mismatch(&self, floors: u32, columns: u32, floor_frac: f64, b: RelBox) -> f64 {
        let (w, h) = (self.w as f64, self.h as f64);
        let cw = w / columns as f64;
        let fh = floor_frac * h;
        let xs = coverage(
            self.w,
            (0..columns).map(|j| ((j as f64 + b.left) * cw, (j as f64 + b.left + b.width) * cw)),
        );
        let ys = coverage(
            self.h,
            (0..floors).map(|k| {
                let top = h - (k + 1) as f64 * fh + b.top * fh;
                (top, top + b.height * fh)
            }),
        );
        let mut total = 0.0;
        for (y, &cy) in ys.iter().enumerate() {
            if cy == 0.0 {
                total += self.row_dark[y];
                continue;
            }
            let row = &self.dark[y * self.w..(y + 1) * self.w];
            for (&cx, &d) in xs.iter().zip(row) {
                total += (cx * cy - if d { 1.0 } else { 0.0 }).abs();
            }
        }
        total / (w * h)
    }
}

/// Floor fraction and window box that best explain the dark pixels, with
/// the floor and column counts fixed.
fn refine_layout(
    rect: &ImageBuffer,
    floors: u32,
    columns: u32,
    floor_frac: f64,
    start: RelBox,
    budget: usize,
) -> Result<(f64, RelBox), PipelineError> {
    let mask = DarkMask::new(rect);
    let f = floors as f64;
    let lower = vec![MIN_FLOOR_FILL / f, 0.005, 0.005, 0.02, 0.02];
    let upper = vec![1.0 / f, 0.9, 0.9, 0.99, 0.99];
    let mut x0 = vec![floor_frac, start.left, start.top, start.width, start.height];
    for i in 0..5 {
        x0[i] = x0[i].clamp(lower[i], upper[i]);
    }
    let objective =
        |x: &[f64]| mask.mismatch(floors, columns, x[0], legal_box(x[1], x[2], x[3], x[4]));
    let mut problem = OptProblem::new(lower, upper, budget, 1e-4);
    problem.initial_radius = Some(0.02);
    let r = minimize(objective, &x0, &problem).map_err(|e| PipelineError::Stage {
        stage: super::Stage::Facade,
        message: e.to_string(),
    })?;
    let x = r.x_best;
    Ok((x[0], legal_box(x[1], x[2], x[3], x[4])))
}

/// Scales every length of the mass (and the camera distance with it) so a
/// floor of the layout is `storey_m` tall, which leaves the silhouette
/// unchanged. When that scale would push a length outside its style
/// bounds, the nearest scale that keeps every length legal is used instead
/// and reported; the fitted parameters themselves are always legal, so
/// such a scale exists.
pub fn rescale_to_storeys(
    style: &MassStyle,
    params: &MassParameters,
    camera: &CameraParams,
    facade_height: f64,
    floor_frac: f64,
    storey_m: f64,
) -> Result<(MassParameters, CameraParams, Vec<String>), PipelineError> {
    let wanted = storey_m / (floor_frac * facade_height);
    let mut warnings = Vec::new();
    let physical = denormalize(style, params)?;
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for (&v, b) in physical.iter().zip(&style.params) {
        if b.is_length() && v > 0.0 {
            lo = lo.max(b.lower / v);
            hi = hi.min(b.upper / v);
        }
    }
    let s = if lo <= hi { wanted.clamp(lo, hi) } else { 1.0 };
    if s != wanted {
        warnings.push(format!(
            "metric rescale limited by the style bounds: floors are {:.2} m instead of {storey_m} m",
            storey_m * s / wanted
        ));
    }
    let scaled: Vec<f64> = physical
        .iter()
        .zip(&style.params)
        .map(|(&v, b)| {
            if b.is_length() {
                (v * s).clamp(b.lower, b.upper)
            } else {
                v
            }
        })
        .collect();
    let mut cam = *camera;
    cam.distance_m *= s;
    Ok((style.normalize(&scaled)?, cam, warnings))
}

/// Stage 2. `raster` is the fitting raster size the camera refers to.
pub fn facade_stage(
    photo: &ImageBuffer,
    fit: &MassFit,
    lib: &StyleLibrary,
    recognizers: &Recognizers,
    cfg: &PipelineConfig,
    raster: (usize, usize),
) -> Result<FacadeOutcome, PipelineError> {
    let catalog = &lib.catalog;
    let style = catalog.mass_style(fit.style_id)?;
    let mass = instantiate_mass(style, &fit.params)?;
    let view = extract_facade(photo, &mass, &fit.camera, raster.0, recognizers, cfg)?;
    let rect = &view.rect;
    let mut warnings = Vec::new();

    let grid = match recognizers.grid.estimate(rect, &cfg.grid) {
        Ok(g) => Some(g),
        Err(e @ (VisionError::NoStructure(_) | VisionError::InvalidInput(_))) => {
            warnings.push(format!("no facade grid found ({e}); using a single tile"));
            None
        }
        Err(e) => return Err(e.into()),
    };

    let Some(grid) = grid else {
        let style_id = nearest_facade_style(1, catalog.facade[0].window_aspect, catalog);
        let window_rel = catalog.facade_style(style_id)?.default_window;
        let layout = FacadeLayout {
            floors: 1,
            columns: 1,
            floor_frac: 1.0,
            window_rel,
            width_m: view.width_m,
            height_m: view.height_m,
            rect_w: rect.width,
            rect_h: rect.height,
        };
        let boxes: Vec<PixelBox> = layout.tiles().into_iter().map(|(_, w)| w).collect();
        let color_rgb = facade_color_with(rect, &boxes, cfg.kmeans_k, cfg.kmeans_seed)
            .unwrap_or([128, 128, 128]);
        warnings.push("metric scale left as fitted because no floors were found".into());
        let facade = FacadeGrammar {
            style_id,
            floors: 1,
            columns: 1,
            floor_height_m: view.height_m,
            window_rel,
            color_rgb,
        };
        return Ok(FacadeOutcome {
            camera: view.camera,
            mass: fit.params.clone(),
            view,
            layout,
            facade,
            warnings,
        });
    };

    let floors = grid.floors;
    let columns = view.columns_hint.unwrap_or(grid.columns);
    // the spacing of interior separators is one storey; the border tiles
    // also hold roof or ground, so they only serve when there are none
    let f = floors as f64;
    let gaps: Vec<f64> = grid.row_bounds[1..grid.row_bounds.len() - 1]
        .windows(2)
        .map(|p| (p[1] - p[0]) as f64)
        .collect();
    let floor_frac0 = if gaps.is_empty() {
        1.0 / f
    } else {
        (median(gaps) / rect.height as f64).clamp(MIN_FLOOR_FILL / f, 1.0 / f)
    };
    let uniform = FacadeLayout {
        floors,
        columns,
        floor_frac: floor_frac0,
        window_rel: catalog.facade[0].default_window,
        width_m: view.width_m,
        height_m: view.height_m,
        rect_w: rect.width,
        rect_h: rect.height,
    };
    let found: Vec<WindowBox> = uniform
        .tiles()
        .into_iter()
        .filter_map(|(tile, _)| recognizers.window.locate(&rect.crop(tile)))
        .collect();
    let start = if found.is_empty() {
        warnings.push("no windows detected in any tile; starting from the default box".into());
        uniform.window_rel
    } else {
        legal_box(
            median(found.iter().map(|b| b.rel_left).collect()),
            median(found.iter().map(|b| b.rel_top).collect()),
            median(found.iter().map(|b| b.rel_width).collect()),
            median(found.iter().map(|b| b.rel_height).collect()),
        )
    };
    let (floor_frac, window_rel) =
        refine_layout(rect, floors, columns, floor_frac0, start, cfg.facade_budget)?;
    let layout = FacadeLayout {
        floor_frac,
        window_rel,
        ..uniform
    };

    let style_id = recognizers
        .facade_style
        .select(floors, layout.window_aspect(), catalog);
    let boxes: Vec<PixelBox> = layout
        .tiles()
        .into_iter()
        .map(|(_, b)| PixelBox {
            x0: b.x0.saturating_sub(1),
            y0: b.y0.saturating_sub(1),
            x1: (b.x1 + 1).min(rect.width - 1),
            y1: (b.y1 + 1).min(rect.height - 1),
        })
        .collect();
    let color_rgb = facade_color_with(rect, &boxes, cfg.kmeans_k, cfg.kmeans_seed)?;

    let (params, camera, mut notes) = rescale_to_storeys(
        style,
        &fit.params,
        &view.camera,
        view.height_m,
        floor_frac,
        cfg.storey_height_m,
    )?;
    warnings.append(&mut notes);
    let scaled = instantiate_mass(style, &params)?;
    let height = scaled.facades[view.facade_index].height();
    let facade = FacadeGrammar {
        style_id,
        floors,
        columns,
        floor_height_m: floor_frac * height,
        window_rel,
        color_rgb,
    };
    log::info!(
        "facade: {floors}x{columns} tiles, floor {:.3} m, window {:?}, style {style_id}",
        facade.floor_height_m,
        window_rel
    );
    Ok(FacadeOutcome {
        view,
        layout,
        facade,
        mass: params,
        camera,
        warnings,
    })
}
