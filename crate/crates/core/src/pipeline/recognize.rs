//! Pluggable recognizers. Each trait has the signature a learned model
//! would need; the defaults are deterministic image heuristics.

use super::library::StyleLibrary;
use super::mass::{recognize_mass_mask, MassCandidate};
use super::window::classify_window_trim;
use super::PipelineError;
use crate::grammar::StyleCatalog;
use crate::vision::{
    detect_window, estimate_grid, ChamferTarget, GridConfig, GridEstimate, ImageBuffer, PixelBox,
    VisionError, WindowBox,
};

/// Ranks every mass style for an input silhouette raster.
pub trait MassRecognizer: Send + Sync {
    fn rank(
        &self,
        input: &ChamferTarget,
        lib: &StyleLibrary,
    ) -> Result<Vec<MassCandidate>, PipelineError>;
}

/// Counts floors and columns on a rectified facade.
pub trait GridEstimator: Send + Sync {
    fn estimate(&self, rect: &ImageBuffer, cfg: &GridConfig) -> Result<GridEstimate, VisionError>;
}

/// Finds the window inside one facade tile.
pub trait WindowLocator: Send + Sync {
    fn locate(&self, tile: &ImageBuffer) -> Option<WindowBox>;
}

/// Picks a facade style from the measured layout.
pub trait FacadeStyleRecognizer: Send + Sync {
    /// `window_aspect` is window width over height in meters.
    fn select(&self, floors: u32, window_aspect: f64, catalog: &StyleCatalog) -> usize;
}

/// Picks a window style for one tile; `None` when the tile has no window.
pub trait WindowStyleRecognizer: Send + Sync {
    fn classify(
        &self,
        tile: &ImageBuffer,
        window: PixelBox,
        window_aspect: f64,
        catalog: &StyleCatalog,
    ) -> Option<usize>;
}

/// Aligned-template chamfer ranking.
#[derive(Debug, Default, Clone, Copy)]
pub struct TemplateMassRecognizer;

impl MassRecognizer for TemplateMassRecognizer {
    fn rank(
        &self,
        input: &ChamferTarget,
        lib: &StyleLibrary,
    ) -> Result<Vec<MassCandidate>, PipelineError> {
        recognize_mass_mask(input, lib)
    }
}

/// Gradient projection profiles.
#[derive(Debug, Default, Clone, Copy)]
pub struct ProfileGridEstimator;

impl GridEstimator for ProfileGridEstimator {
    fn estimate(&self, rect: &ImageBuffer, cfg: &GridConfig) -> Result<GridEstimate, VisionError> {
        estimate_grid(rect, cfg)
    }
}

/// Otsu threshold and largest dark component.
#[derive(Debug, Default, Clone, Copy)]
pub struct OtsuWindowLocator;

impl WindowLocator for OtsuWindowLocator {
    fn locate(&self, tile: &ImageBuffer) -> Option<WindowBox> {
        detect_window(tile)
    }
}

/// Nearest `(floor parity, window aspect)` signature.
#[derive(Debug, Default, Clone, Copy)]
pub struct SignatureFacadeStyle;

impl FacadeStyleRecognizer for SignatureFacadeStyle {
    fn select(&self, floors: u32, window_aspect: f64, catalog: &StyleCatalog) -> usize {
        super::facade::nearest_facade_style(floors, window_aspect, catalog)
    }
}

/// Trim-occupancy profiles against per-style window templates.
#[derive(Debug, Default, Clone, Copy)]
pub struct TrimProfileWindowStyle;

impl WindowStyleRecognizer for TrimProfileWindowStyle {
    fn classify(
        &self,
        tile: &ImageBuffer,
        window: PixelBox,
        window_aspect: f64,
        catalog: &StyleCatalog,
    ) -> Option<usize> {
        classify_window_trim(tile, window, window_aspect, catalog)
    }
}

/// The recognizer set a reconstruction runs with.
pub struct Recognizers {
    pub mass: Box<dyn MassRecognizer>,
    pub grid: Box<dyn GridEstimator>,
    pub window: Box<dyn WindowLocator>,
    pub facade_style: Box<dyn FacadeStyleRecognizer>,
    pub window_style: Box<dyn WindowStyleRecognizer>,
}

impl Default for Recognizers {
    fn default() -> Self {
        Recognizers {
            mass: Box::new(TemplateMassRecognizer),
            grid: Box::new(ProfileGridEstimator),
            window: Box::new(OtsuWindowLocator),
            facade_style: Box::new(SignatureFacadeStyle),
            window_style: Box::new(TrimProfileWindowStyle),
        }
    }
}

impl std::fmt::Debug for Recognizers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Recognizers").finish_non_exhaustive()
    }
}
