//! The silhouette text format.
//!
//! ```text
//! P2B-SILH 1 <width> <height>
//! # comment
//! x1 y1 x2 y2
//! ```
//!
//! Line 1 is the header; every following non-empty, non-comment line is one
//! segment of four decimal numbers separated by single spaces. Coordinates
//! must lie inside `[0,width]×[0,height]`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::VisionError;

pub const SILHOUETTE_MAGIC: &str = "P2B-SILH";
const VERSION: &str = "1";
const MAX_DIMENSION: u32 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouettePolyline {
    pub image_w: u32,
    pub image_h: u32,
    pub segments: Vec<Segment>,
}

impl SilhouettePolyline {
    /// Closed polygon through `points`, one segment per edge.
    pub fn from_polygon(image_w: u32, image_h: u32, points: &[(f64, f64)]) -> Self {
        let n = points.len();
        let segments = (0..n)
            .map(|i| {
                let (a, b) = (points[i], points[(i + 1) % n]);
                Segment {
                    x1: a.0,
                    y1: a.1,
                    x2: b.0,
                    y2: b.1,
                }
            })
            .collect();
        SilhouettePolyline {
            image_w,
            image_h,
            segments,
        }
    }

    /// Bounds of all endpoints as `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.segments.iter().fold(
            (
                f64::INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ),
            |(x0, y0, x1, y1), s| {
                (
                    x0.min(s.x1).min(s.x2),
                    y0.min(s.y1).min(s.y2),
                    x1.max(s.x1).max(s.x2),
                    y1.max(s.y1).max(s.y2),
                )
            },
        )
    }

    pub fn validate(&self) -> Result<(), VisionError> {
        if self.image_w == 0 || self.image_h == 0 {
            return Err(VisionError::Format {
                line: 1,
                message: "image dimensions must be positive".into(),
            });
        }
        if self.segments.is_empty() {
            return Err(VisionError::Format {
                line: 1,
                message: "at least one segment required".into(),
            });
        }
        for (i, s) in self.segments.iter().enumerate() {
            check_segment(s, self.image_w, self.image_h).map_err(|message| {
                VisionError::Format {
                    line: i + 2,
                    message,
                }
            })?;
        }
        Ok(())
    }
}

fn check_segment(s: &Segment, w: u32, h: u32) -> Result<(), String> {
    let (w, h) = (w as f64, h as f64);
    for (v, limit, axis) in [
        (s.x1, w, "x"),
        (s.y1, h, "y"),
        (s.x2, w, "x"),
        (s.y2, h, "y"),
    ] {
        if !(0.0..=limit).contains(&v) {
            return Err(format!("{axis} coordinate {v} outside [0, {limit}]"));
        }
    }
    Ok(())
}

/// Accepts `-?digits(.digits)?` only.
fn decimal(token: &str) -> Option<f64> {
    let body = token.strip_prefix('-').unwrap_or(token);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || frac.is_some_and(|f| !digits(f)) {
        return None;
    }
    token.parse().ok()
}

fn dimension(token: &str) -> Option<u32> {
    if token.is_empty() || !token.bytes().all(|b| b.is_ascii_digit()) || token.len() > 6 {
        return None;
    }
    token.parse().ok().filter(|&v| v > 0 && v <= MAX_DIMENSION)
}

pub fn parse_silhouette(text: &str) -> Result<SilhouettePolyline, VisionError> {
    let err = |line: usize, message: String| VisionError::Format { line, message };
    let mut lines = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));
    let header = lines.next().unwrap_or("");
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 4 || fields[0] != SILHOUETTE_MAGIC || fields[1] != VERSION {
        return Err(err(
            1,
            format!("expected header \"{SILHOUETTE_MAGIC} {VERSION} <width> <height>\""),
        ));
    }
    let image_w =
        dimension(fields[2]).ok_or_else(|| err(1, format!("bad width {:?}", fields[2])))?;
    let image_h =
        dimension(fields[3]).ok_or_else(|| err(1, format!("bad height {:?}", fields[3])))?;

    let mut segments = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split(' ').collect();
        if tokens.len() != 4 {
            return Err(err(
                n,
                format!("expected 4 numbers, found {} fields", tokens.len()),
            ));
        }
        let mut v = [0.0; 4];
        for (slot, t) in v.iter_mut().zip(&tokens) {
            *slot = decimal(t).ok_or_else(|| err(n, format!("bad number {t:?}")))?;
        }
        let s = Segment {
            x1: v[0],
            y1: v[1],
            x2: v[2],
            y2: v[3],
        };
        check_segment(&s, image_w, image_h).map_err(|m| err(n, m))?;
        segments.push(s);
    }
    if segments.is_empty() {
        return Err(err(1, "at least one segment required".into()));
    }
    Ok(SilhouettePolyline {
        image_w,
        image_h,
        segments,
    })
}

pub fn write_silhouette(poly: &SilhouettePolyline) -> String {
    let mut out = format!(
        "{SILHOUETTE_MAGIC} {VERSION} {} {}\n",
        poly.image_w, poly.image_h
    );
    for s in &poly.segments {
        // `+ 0.0` folds -0 into 0
        let _ = writeln!(
            out,
            "{} {} {} {}",
            s.x1 + 0.0,
            s.y1 + 0.0,
            s.x2 + 0.0,
            s.y2 + 0.0
        );
    }
    out
}
