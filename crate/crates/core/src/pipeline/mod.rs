//! The three-stage reconstruction: mass and camera from the silhouette,
//! facade layout and color from the rectified front facade, then the window
//! style. Every recognition step sits behind a trait in [`recognize`] so a
//! learned model can replace the heuristic one.

mod config;
mod facade;
mod library;
mod mass;
pub mod recognize;
mod window;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::PipelineConfig;
pub use facade::{
    extract_facade, facade_stage, nearest_facade_style, rescale_to_storeys, select_front_facade,
    FacadeLayout, FacadeOutcome, FacadeView,
};
pub use library::{
    decode_pbm, encode_pbm, load_count, render_templates, LibraryManifest, StyleLibrary, Template,
    TemplateEntry, LIBRARY_FILE, LIBRARY_VERSION,
};
pub use mass::{
    align_template, estimate_mass_and_camera, estimate_mass_and_camera_mask, raster_dims,
    recognize_mass_candidates, recognize_mass_mask, render_boundary, screen_candidates, CameraBox,
    MassCandidate, MassFit, MassStart,
};
pub use recognize::Recognizers;
pub use window::{trim_template_profiles, window_stage, TRIM_PROFILE_BINS};

use crate::grammar::{compose_building, export_obj, BuildingGrammar, GrammarError, MeshGroup};
use crate::vision::{
    rasterize_silhouette, CameraParams, ChamferTarget, ImageBuffer, SilhouettePolyline, VisionError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    MassCamera,
    Facade,
    Window,
    Export,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::MassCamera => "mass_camera",
            Stage::Facade => "facade",
            Stage::Window => "window",
            Stage::Export => "export",
        }
    }

    /// Progress reported when the stage begins; export reports completion.
    pub fn percent(self) -> u8 {
        match self {
            Stage::MassCamera => 5,
            Stage::Facade => 60,
            Stage::Window => 85,
            Stage::Export => 100,
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageProgress {
    pub stage: Stage,
    pub percent: u8,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage} stage failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("style library: {0}")]
    Library(String),
    #[error("pipeline config: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    Request(String),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    fn in_stage(self, stage: Stage) -> Self {
        match self {
            e @ PipelineError::Stage { .. } => e,
            e => PipelineError::Stage {
                stage,
                message: e.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionRequest {
    pub image: ImageBuffer,
    pub silhouette: SilhouettePolyline,
    pub config: PipelineConfig,
}

impl ReconstructionRequest {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.config.validate()?;
        self.silhouette.validate()?;
        let (w, h) = (self.image.width, self.image.height);
        if (
            self.silhouette.image_w as usize,
            self.silhouette.image_h as usize,
        ) != (w, h)
        {
            return Err(PipelineError::Request(format!(
                "silhouette is drawn on a {}x{} image but the photo is {w}x{h}",
                self.silhouette.image_w, self.silhouette.image_h
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub grammar: BuildingGrammar,
    /// Camera in photo pixel units.
    pub camera: CameraParams,
    /// Chamfer distance of the final mass and camera at the fitting raster.
    pub residual: f64,
    /// Fitting raster `(width, height)`.
    pub raster: (usize, usize),
    /// Styles with their screening residual as `(style_id, score)`, best
    /// first.
    pub mass_ranking: Vec<(usize, f64)>,
    /// Milliseconds spent in the mass/camera, facade and window stages.
    pub stage_timings_ms: [f64; 3],
    pub window_count: usize,
    pub face_count: usize,
    pub vertex_count: usize,
    pub warnings: Vec<String>,
    pub output_files: Vec<PathBuf>,
}

/// Runs all stages with the heuristic recognizers and writes
/// `model.obj`/`model.mtl` into `out_dir`.
pub fn reconstruct(
    req: &ReconstructionRequest,
    lib: &StyleLibrary,
    out_dir: &Path,
    progress: &mut dyn FnMut(StageProgress),
) -> Result<ReconstructionResult, PipelineError> {
    reconstruct_with(req, lib, &Recognizers::default(), out_dir, progress)
}

pub fn reconstruct_with(
    req: &ReconstructionRequest,
    lib: &StyleLibrary,
    recognizers: &Recognizers,
    out_dir: &Path,
    progress: &mut dyn FnMut(StageProgress),
) -> Result<ReconstructionResult, PipelineError> {
    req.validate()?;
    let cfg = &req.config;
    let mut warnings = Vec::new();
    let mut timings = [0.0; 3];
    let mut report = |stage: Stage| {
        progress(StageProgress {
            stage,
            percent: stage.percent(),
        })
    };

    // stage 1: mass style, parameters and camera
    report(Stage::MassCamera);
    let t0 = Instant::now();
    let (rw, rh) = raster_dims(req.image.width, req.image.height, cfg.raster_size);
    let input = rasterize_silhouette(&req.silhouette, rw, rh)
        .map_err(|e| PipelineError::from(e).in_stage(Stage::MassCamera))?;
    let target = ChamferTarget::new(input)
        .map_err(|e| PipelineError::from(e).in_stage(Stage::MassCamera))?;
    let ranking = recognizers
        .mass
        .rank(&target, lib)
        .map_err(|e| e.in_stage(Stage::MassCamera))?;
    let ranking = mass::screen_candidates(&target, lib, &ranking, cfg)
        .map_err(|e| e.in_stage(Stage::MassCamera))?;
    let fit = mass::fit_candidates(&target, lib, &ranking, cfg)
        .map_err(|e| e.in_stage(Stage::MassCamera))?;
    timings[0] = t0.elapsed().as_secs_f64() * 1e3;
    log::info!(
        "mass: style {} residual {:.3} px after {} evaluations",
        fit.style_id,
        fit.residual,
        fit.evaluations
    );

    // stage 2: facade
    report(Stage::Facade);
    let t1 = Instant::now();
    let outcome = facade_stage(&req.image, &fit, lib, recognizers, cfg, (rw, rh))
        .map_err(|e| e.in_stage(Stage::Facade))?;
    warnings.extend(outcome.warnings.iter().cloned());
    timings[1] = t1.elapsed().as_secs_f64() * 1e3;

    // stage 3: window style
    report(Stage::Window);
    let t2 = Instant::now();
    let window = window_stage(
        &outcome.view.rect,
        &outcome.layout,
        &lib.catalog,
        recognizers.window_style.as_ref(),
    );
    timings[2] = t2.elapsed().as_secs_f64() * 1e3;

    let grammar = BuildingGrammar {
        mass: outcome.mass.clone(),
        facade: outcome.facade.clone(),
        window,
    };
    let model = compose_building(&lib.catalog, &grammar)
        .map_err(|e| PipelineError::from(e).in_stage(Stage::Export))?;
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::from(e).in_stage(Stage::Export))?;
    let output_files =
        export_obj(&model, out_dir).map_err(|e| PipelineError::from(e).in_stage(Stage::Export))?;

    let style = lib.catalog.mass_style(grammar.mass.style_id)?;
    let boundary = render_boundary(style, &grammar.mass, &outcome.camera, rw, rh)
        .map_err(|e| e.in_stage(Stage::Export))?;
    let residual = target
        .distance(&boundary)
        .map_err(|e| PipelineError::from(e).in_stage(Stage::Export))?;
    let scale = req.image.width as f64 / rw as f64;
    let mut camera = outcome.camera;
    camera.offset_x_px *= scale;
    camera.offset_y_px *= scale;

    report(Stage::Export);
    Ok(ReconstructionResult {
        grammar,
        camera,
        residual,
        raster: (rw, rh),
        mass_ranking: ranking.iter().map(|c| (c.style_id, c.score)).collect(),
        stage_timings_ms: timings,
        window_count: model.count_group(MeshGroup::Window),
        face_count: model.face_count(),
        vertex_count: model.vertex_count(),
        warnings,
        output_files,
    })
}
