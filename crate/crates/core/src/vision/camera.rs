//! Orbit camera, pinhole projection and a small scanline rasterizer.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::raster::RasterMask;
use super::VisionError;
use crate::grammar::Mesh;

/// Orbit camera around the mass center. Azimuth 0 looks from +z towards
/// -z; positive elevation looks down on the building.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance_m: f64,
    pub fov_deg: f64,
    pub offset_x_px: f64,
    pub offset_y_px: f64,
}

impl CameraParams {
    pub const DIM: usize = 6;

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.azimuth_deg,
            self.elevation_deg,
            self.distance_m,
            self.fov_deg,
            self.offset_x_px,
            self.offset_y_px,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        CameraParams {
            azimuth_deg: v[0],
            elevation_deg: v[1],
            distance_m: v[2],
            fov_deg: v[3],
            offset_x_px: v[4],
            offset_y_px: v[5],
        }
    }

    pub fn validate(&self) -> Result<(), VisionError> {
        let bad = |what: &str| Err(VisionError::DegenerateCamera(what.to_string()));
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return bad("non-finite parameter");
        }
        if !(-180.0..=180.0).contains(&self.azimuth_deg) {
            return bad("azimuth outside [-180, 180]");
        }
        if !(0.0..=80.0).contains(&self.elevation_deg) {
            return bad("elevation outside [0, 80]");
        }
        if self.distance_m <= 0.0 {
            return bad("distance must be positive");
        }
        if !(20.0..=90.0).contains(&self.fov_deg) {
            return bad("fov outside [20, 90]");
        }
        Ok(())
    }
}

/// Box bounds for camera search, in [`CameraParams::to_array`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraBounds {
    pub lower: [f64; 6],
    pub upper: [f64; 6],
}

impl CameraBounds {
    /// Full parameter ranges; distance and offsets depend on the scene.
    pub fn for_image(width: usize, height: usize, max_distance_m: f64) -> Self {
        let (w, h) = (width as f64, height as f64);
        CameraBounds {
            lower: [-180.0, 0.0, 1.0, 20.0, -w / 2.0, -h / 2.0],
            upper: [180.0, 80.0, max_distance_m, 90.0, w / 2.0, h / 2.0],
        }
    }
}

/// A camera resolved against a target point and image size.
#[derive(Debug, Clone, Copy)]
pub struct Projector {
    pub eye: Point3<f64>,
    right: Vector3<f64>,
    up: Vector3<f64>,
    forward: Vector3<f64>,
    focal: f64,
    cx: f64,
    cy: f64,
}

impl Projector {
    pub fn new(cam: &CameraParams, target: Point3<f64>, width: usize, height: usize) -> Self {
        let az = match cam.azimuth_deg {
            a if a > 180.0 => a - 360.0,
            a if a < -180.0 => a + 360.0,
            a => a,
        };
        let (az, el) = (az.to_radians(), cam.elevation_deg.to_radians());
        let dir = Vector3::new(az.sin() * el.cos(), el.sin(), az.cos() * el.cos());
        let eye = target + dir * cam.distance_m;
        let forward = -dir;
        let right = forward.cross(&Vector3::y()).normalize();
        let up = right.cross(&forward);
        let focal = (width as f64 / 2.0) / (cam.fov_deg.to_radians() / 2.0).tan();
        Projector {
            eye,
            right,
            up,
            forward,
            focal,
            cx: width as f64 / 2.0 + cam.offset_x_px,
            cy: height as f64 / 2.0 + cam.offset_y_px,
        }
    }

    /// Continuous pixel coordinates (y down) and view depth.
    #[inline]
    pub fn project(&self, p: &Point3<f64>) -> (f64, f64, f64) {
        let d = p - self.eye;
        let z = d.dot(&self.forward);
        let x = self.cx + self.focal * d.dot(&self.right) / z;
        let y = self.cy - self.focal * d.dot(&self.up) / z;
        (x, y, z)
    }

    pub fn view_direction(&self) -> Vector3<f64> {
        self.forward
    }
}

fn mesh_center_and_radius(mesh: &Mesh) -> Option<(Point3<f64>, f64)> {
    let (lo, hi) = mesh.bounds()?;
    let c = nalgebra::center(&lo, &hi);
    let r = mesh
        .vertices
        .iter()
        .map(|v| (v - c).norm())
        .fold(0.0, f64::max);
    Some((c, r))
}

/// Calls `visit(x, y, [w0, w1, w2])` for every pixel whose center lies in
/// the triangle; weights are screen-space barycentrics.
pub fn fill_triangle(
    pts: [(f64, f64); 3],
    width: usize,
    height: usize,
    mut visit: impl FnMut(usize, usize, [f64; 3]),
) {
    let [(x0, y0), (x1, y1), (x2, y2)] = pts;
    let area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
    if area.abs() < 1e-12 || !area.is_finite() {
        return;
    }
    let ymin = y0.min(y1).min(y2);
    let ymax = y0.max(y1).max(y2);
    let row_lo = ((ymin - 0.5).ceil().max(0.0)) as usize;
    let row_hi = (ymax - 0.5).floor().min(height as f64 - 1.0);
    if row_hi < 0.0 {
        return;
    }
    let edges = [
        ((x0, y0), (x1, y1)),
        ((x1, y1), (x2, y2)),
        ((x2, y2), (x0, y0)),
    ];
    for row in row_lo..=row_hi as usize {
        let yc = row as f64 + 0.5;
        let (mut xl, mut xr) = (f64::INFINITY, f64::NEG_INFINITY);
        for &((ax, ay), (bx, by)) in &edges {
            if (ay <= yc && yc <= by) || (by <= yc && yc <= ay) {
                if ay == by {
                    xl = xl.min(ax.min(bx));
                    xr = xr.max(ax.max(bx));
                } else {
                    let x = ax + (yc - ay) * (bx - ax) / (by - ay);
                    xl = xl.min(x);
                    xr = xr.max(x);
                }
            }
        }
        if xl > xr {
            continue;
        }
        let col_lo = ((xl - 0.5).ceil().max(0.0)) as usize;
        let col_hi = (xr - 0.5).floor().min(width as f64 - 1.0);
        if col_hi < 0.0 {
            continue;
        }
        for col in col_lo..=col_hi as usize {
            let xc = col as f64 + 0.5;
            let w1 = ((xc - x0) * (y2 - y0) - (x2 - x0) * (yc - y0)) / area;
            let w2 = ((x1 - x0) * (yc - y0) - (xc - x0) * (y1 - y0)) / area;
            visit(col, row, [1.0 - w1 - w2, w1, w2]);
        }
    }
}

/// Filled silhouette of `mesh` seen by `cam`, before boundary extraction.
pub fn coverage_mask(
    mesh: &Mesh,
    cam: &CameraParams,
    width: usize,
    height: usize,
) -> Result<RasterMask, VisionError> {
    let (center, radius) = mesh_center_and_radius(mesh)
        .ok_or_else(|| VisionError::InvalidInput("empty mesh".into()))?;
    if cam.distance_m <= radius {
        return Err(VisionError::DegenerateCamera(format!(
            "camera at {:.3} m is inside the {radius:.3} m bounding sphere",
            cam.distance_m
        )));
    }
    let proj = Projector::new(cam, center, width, height);
    let pts: Vec<(f64, f64)> = mesh
        .vertices
        .iter()
        .map(|v| {
            let (x, y, _) = proj.project(v);
            (x, y)
        })
        .collect();
    let mut mask = RasterMask::new(width, height);
    for face in &mesh.faces {
        let tri = [
            pts[face[0].vertex],
            pts[face[1].vertex],
            pts[face[2].vertex],
        ];
        fill_triangle(tri, width, height, |x, y, _| mask.set(x, y, true));
    }
    Ok(mask)
}

/// Boundary pixels of the projected mesh coverage.
pub fn project_mass(
    mesh: &Mesh,
    cam: &CameraParams,
    width: usize,
    height: usize,
) -> Result<RasterMask, VisionError> {
    if width == 0 || height == 0 {
        return Err(VisionError::InvalidInput(
            "raster size must be positive".into(),
        ));
    }
    Ok(coverage_mask(mesh, cam, width, height)?.boundary())
}
