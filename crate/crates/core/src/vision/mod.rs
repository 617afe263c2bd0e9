//! Image-side machinery: silhouettes, rasterization, camera projection,
//! chamfer distances, facade rectification and analysis, color clustering.

mod camera;
mod color;
mod distance;
mod grid;
mod image;
mod raster;
mod rectify;
mod silhouette;
mod window;

use thiserror::Error;

pub use self::image::{luminance, ImageBuffer};
pub use camera::{
    coverage_mask, fill_triangle, project_mass, CameraBounds, CameraParams, Projector,
};
pub use color::{
    facade_color, facade_color_with, kmeans, kmeans_with_trace, lab_to_rgb, rgb_to_lab, Cluster,
    LabColor, DEFAULT_KMEANS_SEED, FACADE_KMEANS_K,
};
pub use distance::{distance_transform, silhouette_distance, ChamferTarget, DistanceGrid};
pub use grid::{estimate_grid, GridConfig, GridEstimate};
pub use raster::{rasterize_silhouette, simplify_closed, trace_outline, PixelBox, RasterMask};
pub use rectify::{rectify_facade, Homography};
pub use silhouette::{
    parse_silhouette, write_silhouette, Segment, SilhouettePolyline, SILHOUETTE_MAGIC,
};
pub use window::{detect_window, otsu_threshold, WindowBox};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisionError {
    #[error("silhouette format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),
    #[error("degenerate homography: {0}")]
    DegenerateHomography(String),
    #[error("no facade structure: {0}")]
    NoStructure(String),
    #[error("image decode failed: {0}")]
    ImageDecode(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
