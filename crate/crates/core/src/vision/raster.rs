//! Binary masks, polyline rasterization and outline tracing.

use super::silhouette::SilhouettePolyline;
use super::VisionError;

/// Row-major binary image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }
}

impl RasterMask {
    pub fn new(width: usize, height: usize) -> Self {
        RasterMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    /// Out-of-bounds reads as unset.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.get(x as usize, y as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn set_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn bounding_box(&self) -> Option<PixelBox> {
        let mut b: Option<PixelBox> = None;
        for (x, y) in self.set_pixels() {
            b = Some(match b {
                None => PixelBox {
                    x0: x,
                    y0: y,
                    x1: x,
                    y1: y,
                },
                Some(p) => PixelBox {
                    x0: p.x0.min(x),
                    y0: p.y0.min(y),
                    x1: p.x1.max(x),
                    y1: p.y1.max(y),
                },
            });
        }
        b
    }

    /// Set pixels with at least one unset 4-neighbour (outside counts as unset).
    pub fn boundary(&self) -> RasterMask {
        let mut out = RasterMask::new(self.width, self.height);
        for (x, y) in self.set_pixels() {
            let (xi, yi) = (x as i64, y as i64);
            let inner = self.get_signed(xi - 1, yi)
                && self.get_signed(xi + 1, yi)
                && self.get_signed(xi, yi - 1)
                && self.get_signed(xi, yi + 1);
            if !inner {
                out.set(x, y, true);
            }
        }
        out
    }

    /// Draws an 8-connected Bresenham line between integer pixels, clipped.
    pub fn draw_line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64)) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
                self.set(x as usize, y as usize, true);
            }
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

/// Rasterizes the polyline into a `width×height` mask, scaling coordinates
/// from the polyline's image space. A coordinate `c` falls in pixel
/// `floor(c)`, with the far image edge clamped into the last pixel.
pub fn rasterize_silhouette(
    poly: &SilhouettePolyline,
    width: usize,
    height: usize,
) -> Result<RasterMask, VisionError> {
    if width == 0 || height == 0 {
        return Err(VisionError::InvalidInput(
            "raster size must be positive".into(),
        ));
    }
    let sx = width as f64 / poly.image_w as f64;
    let sy = height as f64 / poly.image_h as f64;
    let px = |c: f64, s: f64, n: usize| ((c * s).floor() as i64).clamp(0, n as i64 - 1);
    let mut mask = RasterMask::new(width, height);
    for s in &poly.segments {
        mask.draw_line(
            (px(s.x1, sx, width), px(s.y1, sy, height)),
            (px(s.x2, sx, width), px(s.y2, sy, height)),
        );
    }
    Ok(mask)
}

const MOORE: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

fn direction(dx: i64, dy: i64) -> usize {
    MOORE
        .iter()
        .position(|&d| d == (dx, dy))
        .expect("unit step")
}

/// Moore-neighbour trace of the outer boundary of the component containing
/// the first set pixel in raster order. Returns pixel coordinates in
/// clockwise order (image y down), without repeating the start.
pub fn trace_outline(mask: &RasterMask) -> Vec<(usize, usize)> {
    let Some(start) = mask.data.iter().position(|&b| b) else {
        return Vec::new();
    };
    let start = ((start % mask.width) as i64, (start / mask.width) as i64);
    let mut contour = vec![start];
    let mut current = start;
    // we arrived at the start from the west
    let mut back = 4usize;
    let mut first_move: Option<(i64, i64)> = None;
    let limit = 4 * mask.data.len() + 8;
    for _ in 0..limit {
        let mut next = None;
        for k in 1..=8 {
            let d = (back + k) % 8;
            let p = (current.0 + MOORE[d].0, current.1 + MOORE[d].1);
            if mask.get_signed(p.0, p.1) {
                let prev = (back + k - 1) % 8;
                let b = (current.0 + MOORE[prev].0, current.1 + MOORE[prev].1);
                next = Some((p, direction(b.0 - p.0, b.1 - p.1)));
                break;
            }
        }
        let Some((p, b)) = next else { break };
        if current == start {
            match first_move {
                None => first_move = Some(p),
                Some(f) if f == p => break,
                _ => {}
            }
        }
        current = p;
        back = b;
        if current != start {
            contour.push(current);
        }
    }
    contour
        .into_iter()
        .map(|(x, y)| (x as usize, y as usize))
        .collect()
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return ((p.0 - a.0).powi(2) + (p.1 - a.1).powi(2)).sqrt();
    }
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

fn douglas_peucker(points: &[(f64, f64)], epsilon: f64, keep: &mut [bool], lo: usize, hi: usize) {
    if hi <= lo + 1 {
        return;
    }
    let (mut best, mut at) = (0.0, lo);
    for i in lo + 1..hi {
        let d = point_segment_distance(points[i], points[lo], points[hi]);
        if d > best {
            best = d;
            at = i;
        }
    }
    if best > epsilon {
        keep[at] = true;
        douglas_peucker(points, epsilon, keep, lo, at);
        douglas_peucker(points, epsilon, keep, at, hi);
    }
}

/// Douglas–Peucker on a closed polygon, anchored at the first point and the
/// point farthest from it.
pub fn simplify_closed(points: &[(f64, f64)], epsilon: f64) -> Vec<(f64, f64)> {
    let n = points.len();
    if n <= 3 {
        return points.to_vec();
    }
    let far = (1..n)
        .max_by(|&a, &b| {
            let da = (points[a].0 - points[0].0).powi(2) + (points[a].1 - points[0].1).powi(2);
            let db = (points[b].0 - points[0].0).powi(2) + (points[b].1 - points[0].1).powi(2);
            da.total_cmp(&db)
        })
        .unwrap_or(1);
    let mut closed = points.to_vec();
    closed.push(points[0]);
    let mut keep = vec![false; n + 1];
    keep[0] = true;
    keep[far] = true;
    douglas_peucker(&closed, epsilon, &mut keep, 0, far);
    douglas_peucker(&closed, epsilon, &mut keep, far, n);
    (0..n).filter(|&i| keep[i]).map(|i| points[i]).collect()
}
