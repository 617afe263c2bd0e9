//! Exact Euclidean distance transform and symmetric chamfer distance.

use super::raster::RasterMask;
use super::VisionError;

/// Per-pixel distance grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceGrid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DistanceGrid {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// 1-D squared distance transform over sampled parabolas (lower envelope).
/// `f[q]` is `None` where there is no site. Output is `None` when the line
/// has no site at all.
fn dt_1d(f: &[Option<f64>], out: &mut [Option<f64>], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    for (q, fq) in f.iter().enumerate() {
        let Some(fq) = *fq else { continue };
        let qf = q as f64;
        loop {
            let Some(&last) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            let fl = f[last].unwrap_or(0.0);
            let lf = last as f64;
            let s = ((fq + qf * qf) - (fl + lf * lf)) / (2.0 * qf - 2.0 * lf);
            if s <= *z.last().unwrap_or(&f64::NEG_INFINITY) {
                v.pop();
                z.pop();
                continue;
            }
            v.push(q);
            z.push(s);
            break;
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = None);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let pf = p as f64;
        while k + 1 < v.len() && z[k + 1] < pf {
            k += 1;
        }
        let d = pf - v[k] as f64;
        *o = Some(d * d + f[v[k]].unwrap_or(0.0));
    }
}

/// Exact Euclidean distance from every pixel to the nearest set pixel,
/// computed with two separable passes (columns, then rows).
pub fn distance_transform(mask: &RasterMask) -> Result<DistanceGrid, VisionError> {
    if mask.is_empty() {
        return Err(VisionError::EmptyMask);
    }
    let (w, h) = (mask.width, mask.height);
    let mut cols: Vec<Option<f64>> = vec![None; w * h];
    let (mut v, mut z) = (Vec::new(), Vec::new());
    let mut line = vec![None; h];
    let mut out = vec![None; h];
    for x in 0..w {
        for y in 0..h {
            line[y] = mask.get(x, y).then_some(0.0);
        }
        dt_1d(&line, &mut out, &mut v, &mut z);
        for y in 0..h {
            cols[y * w + x] = out[y];
        }
    }
    let mut data = vec![0.0; w * h];
    let mut row_out = vec![None; w];
    for y in 0..h {
        dt_1d(&cols[y * w..(y + 1) * w], &mut row_out, &mut v, &mut z);
        for x in 0..w {
            data[y * w + x] = row_out[x].expect("non-empty mask reaches every row").sqrt();
        }
    }
    Ok(DistanceGrid {
        width: w,
        height: h,
        data,
    })
}

fn directed_mean(from: &RasterMask, to: &DistanceGrid) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (x, y) in from.set_pixels() {
        sum += to.get(x, y);
        n += 1;
    }
    sum / n as f64
}

fn check_pair(a: &RasterMask, b: &RasterMask) -> Result<(), VisionError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(VisionError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(VisionError::EmptyMask);
    }
    Ok(())
}

/// Symmetric chamfer distance: the two directed mean distances, averaged.
pub fn silhouette_distance(a: &RasterMask, b: &RasterMask) -> Result<f64, VisionError> {
    check_pair(a, b)?;
    let (da, db) = (distance_transform(a)?, distance_transform(b)?);
    Ok(0.5 * (directed_mean(a, &db) + directed_mean(b, &da)))
}

/// A fixed silhouette with its distance transform cached, for repeated
/// comparisons against candidate masks.
#[derive(Debug, Clone)]
pub struct ChamferTarget {
    mask: RasterMask,
    dt: DistanceGrid,
}

impl ChamferTarget {
    pub fn new(mask: RasterMask) -> Result<Self, VisionError> {
        let dt = distance_transform(&mask)?;
        Ok(ChamferTarget { mask, dt })
    }

    pub fn mask(&self) -> &RasterMask {
        &self.mask
    }

    /// Same value as [`silhouette_distance`] with `self` as the first mask.
    pub fn distance(&self, other: &RasterMask) -> Result<f64, VisionError> {
        check_pair(&self.mask, other)?;
        let d_other = distance_transform(other)?;
        Ok(0.5 * (directed_mean(&self.mask, &d_other) + directed_mean(other, &self.dt)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn singleton(w: usize, h: usize, x: usize, y: usize) -> RasterMask {
        let mut m = RasterMask::new(w, h);
        m.set(x, y, true);
        m
    }

    #[test]
    fn full_mask_is_zero() {
        let m = RasterMask {
            width: 5,
            height: 4,
            data: vec![true; 20],
        };
        assert!(distance_transform(&m)
            .unwrap()
            .data
            .iter()
            .all(|&d| d == 0.0));
    }

    #[test]
    fn single_pixel_three_four_five() {
        let d = distance_transform(&singleton(8, 8, 2, 2)).unwrap();
        assert_eq!(d.get(5, 6), 5.0);
        assert_eq!(d.get(2, 2), 0.0);
    }

    #[test]
    fn singleton_pair_distance() {
        let a = singleton(8, 8, 2, 2);
        let b = singleton(8, 8, 5, 6);
        assert_eq!(silhouette_distance(&a, &b).unwrap(), 5.0);
        assert_eq!(silhouette_distance(&a, &a).unwrap(), 0.0);
        let t = ChamferTarget::new(a.clone()).unwrap();
        assert_eq!(t.distance(&b).unwrap(), 5.0);
    }

    #[test]
    fn errors() {
        let a = singleton(8, 8, 2, 2);
        assert_eq!(
            distance_transform(&RasterMask::new(4, 4)),
            Err(VisionError::EmptyMask)
        );
        assert!(matches!(
            silhouette_distance(&a, &singleton(8, 9, 0, 0)),
            Err(VisionError::DimensionMismatch(_))
        ));
        assert_eq!(
            silhouette_distance(&a, &RasterMask::new(8, 8)),
            Err(VisionError::EmptyMask)
        );
    }
}
