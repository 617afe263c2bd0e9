//! Four-point homographies and perspective rectification.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use super::image::ImageBuffer;
use super::VisionError;

type Pt = (f64, f64);

/// Projective map of the plane, `p' ~ M·[x y 1]ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    pub m: Matrix3<f64>,
}

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn check_general_position(pts: &[Pt; 4]) -> Result<(), VisionError> {
    let scale = pts
        .iter()
        .flat_map(|p| pts.iter().map(move |q| (p.0 - q.0).hypot(p.1 - q.1)))
        .fold(0.0, f64::max);
    if !pts.iter().all(|p| p.0.is_finite() && p.1.is_finite()) || scale == 0.0 {
        return Err(VisionError::DegenerateHomography(
            "non-finite or coincident points".into(),
        ));
    }
    for skip in 0..4 {
        let t: Vec<Pt> = (0..4).filter(|&i| i != skip).map(|i| pts[i]).collect();
        if cross(t[0], t[1], t[2]).abs() <= 1e-9 * scale * scale {
            return Err(VisionError::DegenerateHomography(
                "three collinear points".into(),
            ));
        }
    }
    Ok(())
}

/// Similarity that moves the centroid to the origin with mean radius √2.
fn normalizer(pts: &[Pt; 4]) -> Matrix3<f64> {
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let mean = pts.iter().map(|p| (p.0 - cx).hypot(p.1 - cy)).sum::<f64>() / 4.0;
    let s = std::f64::consts::SQRT_2 / mean;
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn transform(m: &Matrix3<f64>, p: Pt) -> Pt {
    let v = m * Vector3::new(p.0, p.1, 1.0);
    (v.x / v.z, v.y / v.z)
}

impl Homography {
    /// Solves the map taking each `src[i]` to `dst[i]` by a direct 8×8 linear
    /// solve on normalized coordinates.
    pub fn from_points(src: &[Pt; 4], dst: &[Pt; 4]) -> Result<Self, VisionError> {
        check_general_position(src)?;
        check_general_position(dst)?;
        let (ns, nd) = (normalizer(src), normalizer(dst));
        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut b = SVector::<f64, 8>::zeros();
        for i in 0..4 {
            let (x, y) = transform(&ns, src[i]);
            let (u, v) = transform(&nd, dst[i]);
            a.set_row(
                2 * i,
                &SMatrix::<f64, 1, 8>::from_row_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]),
            );
            a.set_row(
                2 * i + 1,
                &SMatrix::<f64, 1, 8>::from_row_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]),
            );
            b[2 * i] = u;
            b[2 * i + 1] = v;
        }
        let h = a
            .lu()
            .solve(&b)
            .ok_or_else(|| VisionError::DegenerateHomography("singular system".into()))?;
        let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
        let nd_inv = nd.try_inverse().expect("similarity is invertible");
        let m = nd_inv * hn * ns;
        if !m.iter().all(|v| v.is_finite()) || m[(2, 2)].abs() < f64::EPSILON {
            return Err(VisionError::DegenerateHomography(
                "ill-conditioned solution".into(),
            ));
        }
        Ok(Homography { m: m / m[(2, 2)] })
    }

    pub fn apply(&self, p: Pt) -> Pt {
        transform(&self.m, p)
    }

    pub fn inverse(&self) -> Option<Homography> {
        self.m.try_inverse().map(|m| Homography { m })
    }
}

/// Warps the quad (corners starting top-left, either winding) onto an
/// upright rectangle whose sides are the averaged opposite edge lengths.
pub fn rectify_facade(
    img: &ImageBuffer,
    quad: &[Pt; 4],
) -> Result<(ImageBuffer, Homography), VisionError> {
    check_general_position(quad)?;
    let signs: Vec<f64> = (0..4)
        .map(|i| cross(quad[i], quad[(i + 1) % 4], quad[(i + 2) % 4]))
        .collect();
    if !(signs.iter().all(|&s| s > 0.0) || signs.iter().all(|&s| s < 0.0)) {
        return Err(VisionError::DegenerateHomography(
            "quad is not convex".into(),
        ));
    }
    // normalize to TL, TR, BR, BL (positive area with y down)
    let q = if signs[0] > 0.0 {
        *quad
    } else {
        [quad[0], quad[3], quad[2], quad[1]]
    };
    let len = |a: Pt, b: Pt| (a.0 - b.0).hypot(a.1 - b.1);
    let w = (0.5 * (len(q[0], q[1]) + len(q[3], q[2]))).round().max(1.0);
    let h = (0.5 * (len(q[0], q[3]) + len(q[1], q[2]))).round().max(1.0);
    let rect = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let to_image = Homography::from_points(&rect, &q)?;
    let out = ImageBuffer::from_fn(w as usize, h as usize, |x, y| {
        img.sample(to_image.apply((x as f64 + 0.5, y as f64 + 0.5)))
    });
    let to_rect = to_image
        .inverse()
        .ok_or_else(|| VisionError::DegenerateHomography("singular map".into()))?;
    Ok((out, to_rect))
}
