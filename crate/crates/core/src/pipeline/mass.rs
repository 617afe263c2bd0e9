//! Stage 1: template ranking of the mass styles, then a joint search over
//! mass parameters and camera for the best few.

use serde::{Deserialize, Serialize};

use super::library::{box_center, StyleLibrary, Template};
use super::{PipelineConfig, PipelineError, Recognizers, Stage};
use crate::grammar::{instantiate_mass, MassParameters, MassStyle};
use crate::optimizer::{minimize, OptProblem, OptResult, StopReason};
use crate::vision::{
    coverage_mask, rasterize_silhouette, CameraParams, ChamferTarget, RasterMask,
    SilhouettePolyline,
};

/// Objective value for parameter vectors that cannot be rendered.
const PENALTY: f64 = 1e3;
const AZIMUTH_WINDOW_DEG: f64 = 30.0;
const ELEVATION_WINDOW_DEG: f64 = 20.0;
const FOV_WINDOW_DEG: f64 = 20.0;

/// Fitting raster for a photo: the longer side is `raster_size`, the other
/// keeps the aspect ratio.
pub fn raster_dims(image_w: usize, image_h: usize, raster_size: usize) -> (usize, usize) {
    let long = image_w.max(image_h).max(1) as f64;
    let scale = raster_size as f64 / long;
    let w = ((image_w as f64 * scale).round() as usize).max(1);
    let h = ((image_h as f64 * scale).round() as usize).max(1);
    (w, h)
}

/// Boundary mask of a mass seen through `cam` on a `w×h` raster.
pub fn render_boundary(
    style: &MassStyle,
    params: &MassParameters,
    cam: &CameraParams,
    w: usize,
    h: usize,
) -> Result<RasterMask, PipelineError> {
    let mesh = instantiate_mass(style, params)?.solid();
    Ok(coverage_mask(&mesh, cam, w, h)?.boundary())
}

/// A ranked mass style and the start point its score was measured at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassCandidate {
    pub style_id: usize,
    /// Chamfer distance of the best aligned template of this style; infinite
    /// when no template could be rendered.
    pub score: f64,
    pub params: MassParameters,
    pub camera: CameraParams,
    /// Next-best aligned templates of the same style, best first, as extra
    /// optimizer starts.
    #[serde(default)]
    pub alternates: Vec<MassStart>,
}

/// An optimizer start: template parameters at an aligned camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassStart {
    pub score: f64,
    pub params: MassParameters,
    pub camera: CameraParams,
}

/// Aligned templates kept per style as optimizer starts.
const STARTS_KEPT: usize = 8;

/// Moves a template's camera so its silhouette lands on the input's
/// bounding box: distance scales with the size ratio, the principal point
/// shifts to match the box centers.
pub fn align_template(
    t: &Template,
    template_raster_w: usize,
    input: &RasterMask,
) -> Option<CameraParams> {
    let b = input.bounding_box()?;
    let size_i = b.width().max(b.height()) as f64;
    let (cx, cy) = box_center(input);
    let (w, h) = (input.width as f64, input.height as f64);
    let wt = template_raster_w as f64;
    let g = w / wt;
    // size ratio in input pixels; exactly 1 for an identical input
    let r = size_i / (t.size * g);
    let mut cam = t.camera;
    cam.distance_m = t.camera.distance_m / r;
    // template box center relative to its principal point, in input pixels
    let rel = |c: f64, half_t: f64, off: f64| (c - half_t - off) * g;
    let shift = |c: f64, half: f64, c_t: f64, half_t: f64, off: f64| {
        if r == 1.0 && g == 1.0 {
            off + ((c - half) - (c_t - half_t))
        } else {
            c - half - rel(c_t, half_t, off) * r
        }
    };
    let th = t.mask.height as f64;
    cam.offset_x_px =
        shift(cx, w / 2.0, t.center.0, wt / 2.0, t.camera.offset_x_px).clamp(-w / 2.0, w / 2.0);
    cam.offset_y_px =
        shift(cy, h / 2.0, t.center.1, th / 2.0, t.camera.offset_y_px).clamp(-h / 2.0, h / 2.0);
    Some(cam)
}

fn score_at(
    target: &ChamferTarget,
    style: &MassStyle,
    params: &MassParameters,
    cam: &CameraParams,
) -> f64 {
    let m = target.mask();
    match render_boundary(style, params, cam, m.width, m.height) {
        Ok(b) if !b.is_empty() => target.distance(&b).unwrap_or(f64::INFINITY),
        _ => f64::INFINITY,
    }
}

/// Scores every mass style by its best aligned template; ascending, ties
/// broken by style id. Every style appears exactly once.
pub fn recognize_mass_mask(
    target: &ChamferTarget,
    lib: &StyleLibrary,
) -> Result<Vec<MassCandidate>, PipelineError> {
    if lib.catalog.mass.is_empty() || lib.templates.is_empty() {
        return Err(PipelineError::Library(
            "library has no mass styles or templates".into(),
        ));
    }
    let mut out: Vec<MassCandidate> = Vec::with_capacity(lib.catalog.mass.len());
    for style in &lib.catalog.mass {
        let mut starts: Vec<MassStart> = lib
            .templates
            .iter()
            .filter(|t| t.style_id == style.id)
            .filter_map(|t| {
                let cam = align_template(t, t.mask.width, target.mask())?;
                Some(MassStart {
                    score: score_at(target, style, &t.params, &cam),
                    params: t.params.clone(),
                    camera: cam,
                })
            })
            .collect();
        // stable: equal scores keep library order
        starts.sort_by(|a, b| a.score.total_cmp(&b.score));
        starts.truncate(STARTS_KEPT);
        let mut it = starts.into_iter();
        out.push(match it.next() {
            Some(best) => MassCandidate {
                style_id: style.id,
                score: best.score,
                params: best.params,
                camera: best.camera,
                alternates: it.collect(),
            },
            None => MassCandidate {
                style_id: style.id,
                score: f64::INFINITY,
                params: style.mid_params(),
                camera: lib.templates[0].camera,
                alternates: Vec::new(),
            },
        });
    }
    out.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then(a.style_id.cmp(&b.style_id))
    });
    Ok(out)
}

/// Rasterizes the silhouette at `raster_size` and ranks the mass styles.
pub fn recognize_mass_candidates(
    sil: &SilhouettePolyline,
    lib: &StyleLibrary,
    raster_size: usize,
) -> Result<Vec<MassCandidate>, PipelineError> {
    let target = input_target(sil, raster_size)?;
    recognize_mass_mask(&target, lib)
}

fn input_target(
    sil: &SilhouettePolyline,
    raster_size: usize,
) -> Result<ChamferTarget, PipelineError> {
    let (w, h) = raster_dims(sil.image_w as usize, sil.image_h as usize, raster_size);
    Ok(ChamferTarget::new(rasterize_silhouette(sil, w, h)?)?)
}

/// Camera search box around a start camera, with the start kept exactly
/// representable in unit coordinates. The box reaches a limited way in
/// each direction so one unit of trust radius is a similar image change
/// for every camera parameter.
///
/// The distance is held at the start value: scaling the mass and the
/// distance together leaves the silhouette unchanged, so searching both
/// only adds a flat valley. Metric scale is settled later from the storey
/// height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraBox {
    pub start: [f64; 6],
    pub lower: [f64; 6],
    pub upper: [f64; 6],
}

/// Camera components searched by [`CameraBox`], in `CameraParams` order.
const FREE: [usize; 5] = [0, 1, 3, 4, 5];

impl CameraBox {
    /// Number of searched camera components.
    pub const DIM: usize = FREE.len();

    pub fn around(cam: &CameraParams, w: usize, h: usize) -> Self {
        let c = cam.to_array();
        let (w, h) = (w as f64, h as f64);
        let lower = [
            (c[0] - AZIMUTH_WINDOW_DEG).max(-180.0),
            (c[1] - ELEVATION_WINDOW_DEG).max(0.0),
            c[2],
            (c[3] - FOV_WINDOW_DEG).max(20.0),
            (c[4] - w / 4.0).max(-w / 2.0),
            (c[5] - h / 4.0).max(-h / 2.0),
        ];
        let upper = [
            (c[0] + AZIMUTH_WINDOW_DEG).min(180.0),
            (c[1] + ELEVATION_WINDOW_DEG).min(80.0),
            c[2],
            (c[3] + FOV_WINDOW_DEG).min(90.0),
            (c[4] + w / 4.0).min(w / 2.0),
            (c[5] + h / 4.0).min(h / 2.0),
        ];
        let mut start = c;
        for i in 0..6 {
            start[i] = start[i].clamp(lower[i], upper[i]);
        }
        CameraBox {
            start,
            lower,
            upper,
        }
    }

    pub fn start_unit(&self) -> [f64; FREE.len()] {
        std::array::from_fn(|k| {
            let i = FREE[k];
            (self.start[i] - self.lower[i]) / (self.upper[i] - self.lower[i])
        })
    }

    /// Unit coordinates back to a camera; the start unit vector decodes to
    /// the start camera bit for bit.
    pub fn decode(&self, u: &[f64]) -> CameraParams {
        let u0 = self.start_unit();
        let mut v = self.start;
        for (k, &i) in FREE.iter().enumerate() {
            let span = self.upper[i] - self.lower[i];
            v[i] = (self.start[i] + (u[k] - u0[k]) * span).clamp(self.lower[i], self.upper[i]);
        }
        CameraParams::from_slice(&v)
    }
}

/// Result of fitting one mass style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassFit {
    pub style_id: usize,
    pub params: MassParameters,
    /// Camera in raster pixel units.
    pub camera: CameraParams,
    pub residual: f64,
    pub start_residual: f64,
    pub evaluations: usize,
    pub stop_reason: StopReason,
}

fn fit_one(
    target: &ChamferTarget,
    style: &MassStyle,
    start: &MassStart,
    budget: usize,
    cfg: &PipelineConfig,
) -> Result<MassFit, String> {
    let m = target.mask();
    let (w, h) = (m.width, m.height);
    let nm = style.dimension();
    let n = nm + CameraBox::DIM;
    let mut params = start.params.clone();
    let mut camera = start.camera;
    let mut best = f64::INFINITY;
    let mut spent = 0;
    let mut history: Vec<f64> = Vec::new();
    let mut stop_reason = StopReason::Budget;
    // The objective is flat below a pixel and jumps between plateaus, which
    // shrinks the trust region early. Restarting from the best point, with
    // the camera box re-centered there, spends the rest of the budget.
    while budget.saturating_sub(spent) > 2 * n + 1 {
        let cam_box = CameraBox::around(&camera, w, h);
        let mut x0 = params.values_unit.clone();
        x0.extend_from_slice(&cam_box.start_unit());
        let decode = |x: &[f64]| {
            let p = MassParameters {
                style_id: style.id,
                values_unit: x[..nm].iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            };
            (p, cam_box.decode(&x[nm..]))
        };
        let objective = |x: &[f64]| {
            let (p, cam) = decode(x);
            let s = score_at(target, style, &p, &cam);
            if s.is_finite() {
                s
            } else {
                PENALTY
            }
        };
        let problem = OptProblem::new(
            vec![0.0; n],
            vec![1.0; n],
            budget - spent,
            cfg.stage1_x_tolerance,
        );
        let r: OptResult = minimize(objective, &x0, &problem).map_err(|e| e.to_string())?;
        spent += r.evaluations;
        history.extend(r.history.iter().map(|&v| v.min(best)));
        stop_reason = r.stop_reason;
        let improved = r.f_best < best - 1e-6;
        if r.f_best < best {
            best = r.f_best;
            (params, camera) = decode(&r.x_best);
        }
        if !improved {
            break;
        }
    }
    if best >= PENALTY {
        return Err(format!(
            "no renderable configuration found in {spent} evaluations"
        ));
    }
    Ok(MassFit {
        style_id: style.id,
        params,
        camera,
        residual: best,
        start_residual: history.first().copied().unwrap_or(best),
        evaluations: spent,
        stop_reason,
    })
}

/// Re-ranks candidates by a short local search: every start of every
/// candidate gets `screen_budget` evaluations, and each candidate is
/// re-scored by its best screened residual with its screened points as
/// starts. Template chamfer alone ranks the styles poorly when the
/// template grid is coarse; a few dozen evaluations separate them well.
/// A zero budget leaves the ranking untouched.
pub fn screen_candidates(
    target: &ChamferTarget,
    lib: &StyleLibrary,
    ranking: &[MassCandidate],
    cfg: &PipelineConfig,
) -> Result<Vec<MassCandidate>, PipelineError> {
    if cfg.screen_budget == 0 {
        return Ok(ranking.to_vec());
    }
    let mut out = Vec::with_capacity(ranking.len());
    for cand in ranking {
        let style = lib.catalog.mass_style(cand.style_id)?;
        let first = MassStart {
            score: cand.score,
            params: cand.params.clone(),
            camera: cand.camera,
        };
        let mut screened: Vec<MassStart> = std::iter::once(&first)
            .chain(&cand.alternates)
            .filter_map(|start| fit_one(target, style, start, cfg.screen_budget, cfg).ok())
            .map(|fit| MassStart {
                score: fit.residual,
                params: fit.params,
                camera: fit.camera,
            })
            .collect();
        screened.sort_by(|a, b| a.score.total_cmp(&b.score));
        if screened.is_empty() {
            out.push(MassCandidate {
                score: f64::INFINITY,
                ..cand.clone()
            });
            continue;
        }
        let best = screened.remove(0);
        out.push(MassCandidate {
            style_id: cand.style_id,
            score: best.score,
            params: best.params,
            camera: best.camera,
            alternates: screened,
        });
    }
    out.sort_by(|a, b| a.score.total_cmp(&b.score));
    Ok(out)
}

/// Refines the `top_k` best-ranked styles, each from up to
/// `starts_per_style` starts, and keeps the lowest residual; ties go to the
/// better-ranked style. A style stops trying further starts once a fit is
/// within `stage1_accept_px`.
pub(crate) fn fit_candidates(
    target: &ChamferTarget,
    lib: &StyleLibrary,
    ranking: &[MassCandidate],
    cfg: &PipelineConfig,
) -> Result<MassFit, PipelineError> {
    let mut best: Option<MassFit> = None;
    let mut failures = Vec::new();
    for cand in ranking.iter().take(cfg.top_k) {
        let style = lib.catalog.mass_style(cand.style_id)?;
        let first = MassStart {
            score: cand.score,
            params: cand.params.clone(),
            camera: cand.camera,
        };
        let starts = std::iter::once(&first)
            .chain(&cand.alternates)
            .take(cfg.starts_per_style);
        for start in starts {
            match fit_one(target, style, start, cfg.stage1_budget, cfg) {
                Ok(fit) => {
                    log::debug!(
                        "style {} fit: {:.3} -> {:.3} px ({} evals, {:?})",
                        style.name,
                        fit.start_residual,
                        fit.residual,
                        fit.evaluations,
                        fit.stop_reason
                    );
                    let done = fit.residual < cfg.stage1_accept_px;
                    if best.as_ref().is_none_or(|b| fit.residual < b.residual) {
                        best = Some(fit);
                    }
                    if done {
                        break;
                    }
                }
                Err(e) => failures.push(format!("{}: {e}", style.name)),
            }
        }
    }
    best.ok_or_else(|| PipelineError::Stage {
        stage: Stage::MassCamera,
        message: failures.join("; "),
    })
}

/// Ranks the styles and fits the best `top_k` against a prepared raster.
pub fn estimate_mass_and_camera_mask(
    target: &ChamferTarget,
    lib: &StyleLibrary,
    recognizers: &Recognizers,
    cfg: &PipelineConfig,
) -> Result<MassFit, PipelineError> {
    let ranking = recognizers.mass.rank(target, lib)?;
    let ranking = screen_candidates(target, lib, &ranking, cfg)?;
    fit_candidates(target, lib, &ranking, cfg)
}

/// Stage 1 on a silhouette with the heuristic recognizer.
pub fn estimate_mass_and_camera(
    sil: &SilhouettePolyline,
    lib: &StyleLibrary,
    cfg: &PipelineConfig,
) -> Result<MassFit, PipelineError> {
    let target = input_target(sil, cfg.raster_size)?;
    estimate_mass_and_camera_mask(&target, lib, &Recognizers::default(), cfg)
}
