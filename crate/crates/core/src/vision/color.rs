//! CIELAB conversion and seeded k-means for facade color estimation.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::ImageBuffer;
use super::raster::PixelBox;
use super::VisionError;

pub const DEFAULT_KMEANS_SEED: u64 = 42;
pub const FACADE_KMEANS_K: usize = 10;
const MAX_ITERATIONS: usize = 100;

// D65 reference white
const XN: f64 = 0.950_47;
const YN: f64 = 1.0;
const ZN: f64 = 1.088_83;
const DELTA: f64 = 6.0 / 29.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabColor {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl LabColor {
    pub fn new(l: f64, a: f64, b: f64) -> Self {
        LabColor { l, a, b }
    }

    fn dist2(&self, o: &LabColor) -> f64 {
        (self.l - o.l).powi(2) + (self.a - o.a).powi(2) + (self.b - o.b).powi(2)
    }

    fn key(&self) -> [u64; 3] {
        [
            (self.l + 0.0).to_bits(),
            (self.a + 0.0).to_bits(),
            (self.b + 0.0).to_bits(),
        ]
    }
}

fn srgb_to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    let c = c.clamp(0.0, 1.0);
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn f(t: f64) -> f64 {
    if t > DELTA.powi(3) {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn f_inv(t: f64) -> f64 {
    if t > DELTA {
        t.powi(3)
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

pub fn rgb_to_lab(rgb: [u8; 3]) -> LabColor {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let (fx, fy, fz) = (f(x / XN), f(y / YN), f(z / ZN));
    LabColor {
        l: (116.0 * fy - 16.0).clamp(0.0, 100.0),
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

pub fn lab_to_rgb(lab: LabColor) -> [u8; 3] {
    let fy = (lab.l + 16.0) / 116.0;
    let fx = fy + lab.a / 500.0;
    let fz = fy - lab.b / 200.0;
    let (x, y, z) = (XN * f_inv(fx), YN * f_inv(fy), ZN * f_inv(fz));
    let r = 3.240_454_2 * x - 1.537_138_5 * y - 0.498_531_4 * z;
    let g = -0.969_266_0 * x + 1.876_010_8 * y + 0.041_556_0 * z;
    let b = 0.055_643_4 * x - 0.204_025_9 * y + 1.057_225_2 * z;
    [r, g, b].map(|c| (linear_to_srgb(c) * 255.0).round() as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub centroid: LabColor,
    pub count: usize,
}

/// Collapses equal points into `(point, multiplicity)` in first-seen order.
fn dedupe(points: &[LabColor]) -> Vec<(LabColor, usize)> {
    let mut index: HashMap<[u64; 3], usize> = HashMap::new();
    let mut out: Vec<(LabColor, usize)> = Vec::new();
    for p in points {
        match index.get(&p.key()) {
            Some(&i) => out[i].1 += 1,
            None => {
                index.insert(p.key(), out.len());
                out.push((*p, 1));
            }
        }
    }
    out
}

fn sample_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return i;
        }
        r -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn nearest(p: &LabColor, centers: &[LabColor]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = p.dist2(c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Weighted k-means returning the clusters and the objective after each
/// assignment step.
fn kmeans_weighted(points: &[(LabColor, usize)], k: usize, seed: u64) -> (Vec<Cluster>, Vec<f64>) {
    if points.len() < k {
        let clusters = points
            .iter()
            .map(|&(c, n)| Cluster {
                centroid: c,
                count: n,
            })
            .collect();
        return (clusters, vec![0.0]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = points.iter().map(|p| p.1 as f64).collect();
    let mut centers = vec![points[sample_weighted(&mut rng, &weights)].0];
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|(p, n)| nearest(p, &centers).1 * *n as f64)
            .collect();
        let i = if d2.iter().sum::<f64>() > 0.0 {
            sample_weighted(&mut rng, &d2)
        } else {
            centers.len()
        };
        centers.push(points[i].0);
    }

    let mut assign = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        let mut objective = 0.0;
        for (a, (p, n)) in assign.iter_mut().zip(points) {
            let (c, d) = nearest(p, &centers);
            objective += d * *n as f64;
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        trace.push(objective);
        if !changed {
            break;
        }
        let mut sums = vec![(0.0, 0.0, 0.0, 0usize); k];
        for (&a, (p, n)) in assign.iter().zip(points) {
            let s = &mut sums[a];
            let w = *n as f64;
            s.0 += p.l * w;
            s.1 += p.a * w;
            s.2 += p.b * w;
            s.3 += n;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s.3 > 0 {
                let w = s.3 as f64;
                *c = LabColor {
                    l: s.0 / w,
                    a: s.1 / w,
                    b: s.2 / w,
                };
            }
        }
    }
    let mut counts = vec![0usize; k];
    for (&a, (_, n)) in assign.iter().zip(points) {
        counts[a] += n;
    }
    let clusters = centers
        .into_iter()
        .zip(counts)
        .map(|(centroid, count)| Cluster { centroid, count })
        .collect();
    (clusters, trace)
}

/// k-means with k-means++ seeding from `seed`; Lloyd iterations until the
/// assignment is stable or 100 rounds. Fewer distinct points than `k`
/// yields one cluster per distinct point.
pub fn kmeans(points: &[LabColor], k: usize, seed: u64) -> Result<Vec<Cluster>, VisionError> {
    kmeans_with_trace(points, k, seed).map(|(c, _)| c)
}

/// [`kmeans`] plus the objective recorded at every assignment step.
pub fn kmeans_with_trace(
    points: &[LabColor],
    k: usize,
    seed: u64,
) -> Result<(Vec<Cluster>, Vec<f64>), VisionError> {
    if points.is_empty() {
        return Err(VisionError::InvalidInput(
            "k-means needs at least one point".into(),
        ));
    }
    if k == 0 {
        return Err(VisionError::InvalidInput("k must be at least 1".into()));
    }
    Ok(kmeans_weighted(&dedupe(points), k, seed))
}

/// Dominant wall color: the centroid of the largest k-means cluster over
/// the pixels outside every window box.
pub fn facade_color(rect: &ImageBuffer, windows: &[PixelBox]) -> Result<[u8; 3], VisionError> {
    facade_color_with(rect, windows, FACADE_KMEANS_K, DEFAULT_KMEANS_SEED)
}

/// [`facade_color`] with an explicit cluster count and seed. Ties between
/// equally large clusters go to the lower index.
pub fn facade_color_with(
    rect: &ImageBuffer,
    windows: &[PixelBox],
    k: usize,
    seed: u64,
) -> Result<[u8; 3], VisionError> {
    if k == 0 {
        return Err(VisionError::InvalidInput("k must be at least 1".into()));
    }
    let mut index: HashMap<[u8; 3], usize> = HashMap::new();
    let mut points: Vec<(LabColor, usize)> = Vec::new();
    for y in 0..rect.height {
        for x in 0..rect.width {
            if windows.iter().any(|b| b.contains(x, y)) {
                continue;
            }
            let p = rect.get(x, y);
            match index.get(&p) {
                Some(&i) => points[i].1 += 1,
                None => {
                    index.insert(p, points.len());
                    points.push((rgb_to_lab(p), 1));
                }
            }
        }
    }
    if points.is_empty() {
        return Err(VisionError::InvalidInput("all pixels are masked".into()));
    }
    let (clusters, _) = kmeans_weighted(&points, k, seed);
    let mut best = clusters[0];
    for c in &clusters[1..] {
        if c.count > best.count {
            best = *c;
        }
    }
    Ok(lab_to_rgb(best.centroid))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_black_red() {
        let w = rgb_to_lab([255, 255, 255]);
        assert!(
            (w.l - 100.0).abs() < 1e-3 && w.a.abs() < 1e-3 && w.b.abs() < 1e-3,
            "{w:?}"
        );
        let k = rgb_to_lab([0, 0, 0]);
        assert_eq!((k.l, k.a, k.b), (0.0, 0.0, 0.0));
        let r = rgb_to_lab([255, 0, 0]);
        assert!(
            (r.l - 53.24).abs() < 0.05 && (r.a - 80.09).abs() < 0.05 && (r.b - 67.20).abs() < 0.05,
            "{r:?}"
        );
    }

    #[test]
    fn separable_clusters_are_exact() {
        let mut pts = vec![LabColor::new(40.0, 5.0, 5.0); 70];
        pts.extend(vec![LabColor::new(80.0, -5.0, -5.0); 30]);
        let mut c = kmeans(&pts, 2, DEFAULT_KMEANS_SEED).unwrap();
        c.sort_by_key(|c| std::cmp::Reverse(c.count));
        assert_eq!(
            c[0],
            Cluster {
                centroid: LabColor::new(40.0, 5.0, 5.0),
                count: 70
            }
        );
        assert_eq!(
            c[1],
            Cluster {
                centroid: LabColor::new(80.0, -5.0, -5.0),
                count: 30
            }
        );
    }

    #[test]
    fn identical_points_single_cluster() {
        let c = kmeans(&[LabColor::new(50.0, 1.0, 2.0); 9], 10, 7).unwrap();
        assert_eq!(
            c,
            vec![Cluster {
                centroid: LabColor::new(50.0, 1.0, 2.0),
                count: 9
            }]
        );
        assert!(kmeans(&[], 3, 1).is_err());
    }

    #[test]
    fn uniform_wall_color() {
        let img = ImageBuffer::new(40, 30, [128, 128, 128]);
        assert_eq!(facade_color(&img, &[]).unwrap(), [128, 128, 128]);
        let all = PixelBox {
            x0: 0,
            y0: 0,
            x1: 39,
            y1: 29,
        };
        assert!(facade_color(&img, &[all]).is_err());
    }
}
