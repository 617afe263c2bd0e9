//! Pipeline tuning knobs, loadable from TOML.
//!
//! ```toml
//! raster_size = 256
//! top_k = 2
//! stage1_budget = 400
//! stage1_x_tolerance = 1e-4
//! screen_budget = 80
//! starts_per_style = 2
//! stage1_accept_px = 0.75
//! facade_budget = 150
//! kmeans_k = 10
//! kmeans_seed = 42
//! storey_height_m = 3.0
//!
//! [grid]
//! smoothing_frac = 0.02
//! peak_frac = 0.3
//! separation_frac = 0.04
//! min_gradient = 16.0
//! ```
//!
//! Every key is optional; missing keys take the defaults shown.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::vision::GridConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Longer side of the silhouette-fitting raster; the other side keeps
    /// the photo's aspect ratio.
    pub raster_size: usize,
    /// Mass styles refined after template ranking.
    pub top_k: usize,
    /// Objective evaluations per refined mass style.
    pub stage1_budget: usize,
    pub stage1_x_tolerance: f64,
    /// Evaluations of the short screening run from each template start,
    /// which re-ranks the styles before refinement; 0 disables screening.
    pub screen_budget: usize,
    /// Starts refined with the full budget, per style.
    pub starts_per_style: usize,
    /// A fit this close (chamfer pixels) ends the search for its style.
    pub stage1_accept_px: f64,
    /// Evaluations for the facade layout refinement.
    pub facade_budget: usize,
    pub kmeans_k: usize,
    pub kmeans_seed: u64,
    /// Assumed storey height; fixes the metric scale that a single view
    /// cannot observe.
    pub storey_height_m: f64,
    pub grid: GridConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            raster_size: 256,
            top_k: 2,
            stage1_budget: 400,
            stage1_x_tolerance: 1e-4,
            screen_budget: 80,
            starts_per_style: 2,
            stage1_accept_px: 0.75,
            facade_budget: 150,
            kmeans_k: crate::vision::FACADE_KMEANS_K,
            kmeans_seed: crate::vision::DEFAULT_KMEANS_SEED,
            storey_height_m: 3.0,
            grid: GridConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if !(32..=4096).contains(&self.raster_size) {
            return bad("raster_size must be in [32, 4096]");
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        if self.starts_per_style == 0 {
            return bad("starts_per_style must be at least 1");
        }
        if !(self.stage1_accept_px >= 0.0) {
            return bad("stage1_accept_px must be non-negative");
        }
        // the largest stage-1 vector is 5 mass + 6 camera values
        if self.stage1_budget < 2 * 10 + 1 {
            return bad("stage1_budget must be at least 21");
        }
        if self.screen_budget != 0 && self.screen_budget < 2 * 10 + 1 {
            return bad("screen_budget must be 0 or at least 21");
        }
        if self.facade_budget < 2 * 5 + 1 {
            return bad("facade_budget must be at least 11");
        }
        if !(self.stage1_x_tolerance > 0.0 && self.stage1_x_tolerance.is_finite()) {
            return bad("stage1_x_tolerance must be positive");
        }
        if self.kmeans_k == 0 {
            return bad("kmeans_k must be at least 1");
        }
        if !(self.storey_height_m > 0.0 && self.storey_height_m.is_finite()) {
            return bad("storey_height_m must be positive");
        }
        let g = &self.grid;
        let frac = |v: f64| v > 0.0 && v < 1.0;
        if !(frac(g.smoothing_frac) && frac(g.peak_frac) && frac(g.separation_frac))
            || !(g.min_gradient >= 0.0)
        {
            return bad("grid fractions must lie in (0, 1) and min_gradient must be non-negative");
        }
        Ok(())
    }
}
