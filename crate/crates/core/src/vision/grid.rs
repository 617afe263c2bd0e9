//! Floor/column counting from gradient projection profiles.
//!
//! Rows that cross a band of windows collect strong vertical edges (window
//! sides), while the wall strips between floors collect almost none. Floor
//! separators are therefore the prominent dips of the row profile
//! `p(y) = Σx |∂I/∂x|`; columns use `q(x) = Σy |∂I/∂y|` the same way.

use serde::{Deserialize, Serialize};

use super::image::ImageBuffer;
use super::VisionError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    /// Moving-average width as a fraction of the profile length.
    pub smoothing_frac: f64,
    /// A dip must be at least this fraction of the maximum deep to
    /// separate two bands of windows.
    pub peak_frac: f64,
    /// Separators closer than this fraction of the length are merged.
    pub separation_frac: f64,
    /// Images whose strongest Sobel response is below this are flat.
    pub min_gradient: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            smoothing_frac: 0.02,
            peak_frac: 0.3,
            separation_frac: 0.04,
            min_gradient: 16.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridEstimate {
    pub floors: u32,
    pub columns: u32,
    /// `floors + 1` rows from 0 to the image height, top to bottom.
    pub row_bounds: Vec<usize>,
    /// `columns + 1` columns from 0 to the image width.
    pub col_bounds: Vec<usize>,
}

struct Sobel {
    gx: Vec<f64>,
    gy: Vec<f64>,
}

fn sobel(luma: &[f64], w: usize, h: usize) -> Sobel {
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        luma[y * w + x]
    };
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }
    Sobel { gx, gy }
}

fn smooth(p: &[f64], frac: f64) -> Vec<f64> {
    let n = p.len();
    let half = (((frac * n as f64).round() as usize).max(1)) / 2;
    (0..n)
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(half), (i + half).min(n - 1));
            p[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Tiles narrower than this fraction of the median tile are edge or trim
/// artifacts rather than rows of windows.
const MIN_TILE_FRAC: f64 = 0.5;

/// Depth of the dip at `m` below the lower of the highest points reached
/// on each side before the profile drops under `p[m]` again.
fn dip_prominence(p: &[f64], m: usize) -> f64 {
    let v = p[m];
    let side = |it: &mut dyn Iterator<Item = usize>| {
        let mut top = v;
        for i in it {
            if p[i] < v {
                break;
            }
            top = top.max(p[i]);
        }
        top
    };
    let left = side(&mut (0..m).rev());
    let right = side(&mut (m + 1..p.len()));
    left.min(right) - v
}

/// Wall gaps between window bands: dips of the profile at least
/// `peak_frac · max` deep, at least `separation_frac · n` apart. A gap
/// that would leave a tile much narrower than the others is dropped, so a
/// strip of roof or ground edge at the border does not open an extra floor.
fn separators(profile: &[f64], cfg: &GridConfig) -> Vec<usize> {
    let n = profile.len();
    let max = profile.iter().copied().fold(0.0, f64::max);
    let min_sep = ((cfg.separation_frac * n as f64).ceil() as usize).max(1);
    // local minima, including flat-bottomed ones
    let mut dips: Vec<(usize, f64)> = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if profile[i] < profile[i - 1] {
            let start = i;
            while i + 1 < n && profile[i + 1] == profile[i] {
                i += 1;
            }
            if i + 1 < n && profile[i + 1] > profile[i] {
                let prom = dip_prominence(profile, start);
                // center of the dip at half its depth
                let level = profile[start] + prom / 2.0;
                let (mut lo, mut hi) = (start, i);
                while lo > 0 && profile[lo - 1] <= level {
                    lo -= 1;
                }
                while hi + 1 < n && profile[hi + 1] <= level {
                    hi += 1;
                }
                let c = (lo + hi).div_ceil(2);
                if prom >= cfg.peak_frac * max && c >= min_sep && c + min_sep <= n {
                    dips.push((c, prom));
                }
            }
        }
        i += 1;
    }
    let mut seps: Vec<(usize, f64)> = Vec::new();
    for d in dips {
        match seps.last_mut() {
            Some(last) if d.0 < last.0 + min_sep => {
                if d.1 > last.1 {
                    *last = d;
                }
            }
            _ => seps.push(d),
        }
    }
    // drop the weaker bound of the narrowest tile while it is an outlier
    while !seps.is_empty() {
        let b: Vec<usize> = std::iter::once(0)
            .chain(seps.iter().map(|s| s.0))
            .chain(std::iter::once(n))
            .collect();
        let widths: Vec<usize> = b.windows(2).map(|w| w[1] - w[0]).collect();
        let mut sorted = widths.clone();
        sorted.sort_unstable();
        let median = sorted[sorted.len() / 2] as f64;
        let (k, &narrow) = widths
            .iter()
            .enumerate()
            .min_by_key(|(_, &w)| w)
            .expect("at least two tiles");
        if narrow as f64 >= MIN_TILE_FRAC * median {
            break;
        }
        // tile k lies between separators k-1 and k
        let drop = if k == 0 {
            0
        } else if k == seps.len() || seps[k - 1].1 < seps[k].1 {
            k - 1
        } else {
            k
        };
        seps.remove(drop);
    }
    seps.into_iter().map(|s| s.0).collect()
}

fn bounds(seps: &[usize], n: usize) -> Vec<usize> {
    let mut b = Vec::with_capacity(seps.len() + 2);
    b.push(0);
    b.extend_from_slice(seps);
    b.push(n);
    b
}

pub fn estimate_grid(rect: &ImageBuffer, cfg: &GridConfig) -> Result<GridEstimate, VisionError> {
    let (w, h) = (rect.width, rect.height);
    if w < 32 || h < 32 {
        return Err(VisionError::InvalidInput(format!(
            "facade image {w}x{h} is smaller than 32x32"
        )));
    }
    let g = sobel(&rect.luma(), w, h);
    let strongest =
        g.gx.iter()
            .zip(&g.gy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max);
    if strongest < cfg.min_gradient {
        return Err(VisionError::NoStructure(format!(
            "max gradient {strongest:.2} below {}",
            cfg.min_gradient
        )));
    }
    let mut rows = vec![0.0; h];
    let mut cols = vec![0.0; w];
    for y in 0..h {
        for x in 0..w {
            rows[y] += g.gx[y * w + x].abs();
            cols[x] += g.gy[y * w + x].abs();
        }
    }
    let row_seps = separators(&smooth(&rows, cfg.smoothing_frac), cfg);
    let col_seps = separators(&smooth(&cols, cfg.smoothing_frac), cfg);
    Ok(GridEstimate {
        floors: row_seps.len() as u32 + 1,
        columns: col_seps.len() as u32 + 1,
        row_bounds: bounds(&row_seps, h),
        col_bounds: bounds(&col_seps, w),
    })
}
