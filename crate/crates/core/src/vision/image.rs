//! RGB pixel buffers and PNG/PPM codecs.

use std::io::Cursor;

use image::{ImageFormat, RgbImage};

use super::raster::PixelBox;
use super::VisionError;

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

/// Rec. 601 luma on the 0–255 scale.
#[inline]
pub fn luminance(p: [u8; 3]) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        let mut rgb = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            rgb.extend_from_slice(&fill);
        }
        ImageBuffer { width, height, rgb }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Self {
        let mut rgb = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                rgb.extend_from_slice(&f(x, y));
            }
        }
        ImageBuffer { width, height, rgb }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, p: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.rgb[i..i + 3].copy_from_slice(&p);
    }

    /// Bilinear sample at continuous image coordinates (pixel centers at
    /// `+0.5`), clamped to the border.
    pub fn sample(&self, (x, y): (f64, f64)) -> [u8; 3] {
        let x = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let y = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let (a, b, c, d) = (
            self.get(x0, y0),
            self.get(x1, y0),
            self.get(x0, y1),
            self.get(x1, y1),
        );
        let mut out = [0u8; 3];
        for k in 0..3 {
            let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
            let bot = c[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
            out[k] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
        }
        out
    }

    pub fn luma(&self) -> Vec<f64> {
        self.rgb
            .chunks_exact(3)
            .map(|c| luminance([c[0], c[1], c[2]]))
            .collect()
    }

    pub fn crop(&self, b: PixelBox) -> ImageBuffer {
        ImageBuffer::from_fn(b.width(), b.height(), |x, y| self.get(b.x0 + x, b.y0 + y))
    }

    /// Decodes PNG or binary PPM bytes.
    pub fn decode(bytes: &[u8]) -> Result<ImageBuffer, VisionError> {
        let format =
            image::guess_format(bytes).map_err(|e| VisionError::ImageDecode(e.to_string()))?;
        if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
            return Err(VisionError::ImageDecode(format!(
                "unsupported format {format:?}"
            )));
        }
        let img = image::load_from_memory_with_format(bytes, format)
            .map_err(|e| VisionError::ImageDecode(e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        if w == 0 || h == 0 {
            return Err(VisionError::ImageDecode("empty image".into()));
        }
        Ok(ImageBuffer {
            width: w as usize,
            height: h as usize,
            rgb: img.into_raw(),
        })
    }

    fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width as u32, self.height as u32, self.rgb.clone())
            .expect("buffer length matches")
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb_image()
            .write_to(&mut out, ImageFormat::Png)
            .expect("in-memory PNG encode");
        out.into_inner()
    }

    /// Binary P6.
    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }
}
