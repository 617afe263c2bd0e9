//! The style library a worker preloads: style tables plus the reference
//! silhouettes the mass recognizer matches against.
//!
//! On disk a library is a directory holding `library.toml` and one PBM
//! bitmap per template:
//!
//! ```toml
//! version = 1
//!
//! [[mass]]            # see grammar::StyleCatalog
//! [[facade]]
//! [[window]]
//!
//! [[template]]
//! style = 0
//! file = "templates/box_00.pbm"
//! params = [0.25, 0.5, 0.15]
//! camera = { azimuth_deg = -25.0, elevation_deg = 8.0, distance_m = 80.0, fov_deg = 50.0, offset_x_px = 0.0, offset_y_px = 0.0 }
//! ```
//!
//! A template mask holds the boundary pixels of the style rendered with
//! `params` (unit cube) through `camera`, black = set.

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::grammar::{
    instantiate_mass, FacadeStyle, MassKind, MassParameters, MassStyle, StyleCatalog, WindowStyle,
};
use crate::vision::{coverage_mask, CameraParams, RasterMask};

pub const LIBRARY_FILE: &str = "library.toml";
pub const LIBRARY_VERSION: u32 = 1;

static LOADS: AtomicUsize = AtomicUsize::new(0);

/// How many times [`StyleLibrary::load`] has parsed a library in this
/// process.
pub fn load_count() -> usize {
    LOADS.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateEntry {
    pub style: usize,
    pub file: String,
    pub params: Vec<f64>,
    pub camera: CameraParams,
}

/// The parsed `library.toml`, before any template file is read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryManifest {
    pub version: u32,
    pub mass: Vec<MassStyle>,
    pub facade: Vec<FacadeStyle>,
    pub window: Vec<WindowStyle>,
    #[serde(default)]
    pub template: Vec<TemplateEntry>,
}

impl LibraryManifest {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let m: LibraryManifest =
            toml::from_str(text).map_err(|e| PipelineError::Library(e.to_string()))?;
        if m.version != LIBRARY_VERSION {
            return Err(PipelineError::Library(format!(
                "unsupported library version {} (expected {LIBRARY_VERSION})",
                m.version
            )));
        }
        m.catalog()
            .validate()
            .map_err(|e| PipelineError::Library(e.to_string()))?;
        for (i, t) in m.template.iter().enumerate() {
            check_entry(&m.mass, t)
                .map_err(|e| PipelineError::Library(format!("template {i} ({}): {e}", t.file)))?;
        }
        Ok(m)
    }

    pub fn catalog(&self) -> StyleCatalog {
        StyleCatalog {
            mass: self.mass.clone(),
            facade: self.facade.clone(),
            window: self.window.clone(),
        }
    }
}

fn check_entry(mass: &[MassStyle], t: &TemplateEntry) -> Result<(), String> {
    let style = mass
        .get(t.style)
        .ok_or_else(|| format!("unknown mass style {}", t.style))?;
    if t.params.len() != style.dimension() || !t.params.iter().all(|u| (0.0..=1.0).contains(u)) {
        return Err(format!(
            "params must be {} values in [0, 1]",
            style.dimension()
        ));
    }
    t.camera.validate().map_err(|e| e.to_string())?;
    let rel = Path::new(&t.file);
    if t.file.is_empty()
        || rel.is_absolute()
        || rel
            .components()
            .any(|c| matches!(c, std::path::Component::ParentDir))
    {
        return Err("file must be a relative path inside the library".into());
    }
    Ok(())
}

/// One reference silhouette and the render settings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub style_id: usize,
    pub file: String,
    pub params: MassParameters,
    pub camera: CameraParams,
    pub mask: RasterMask,
    /// Bounding-box center of the mask, in continuous pixel coordinates.
    pub center: (f64, f64),
    /// Larger bounding-box side, in pixels.
    pub size: f64,
}

impl Template {
    pub fn new(entry: &TemplateEntry, mask: RasterMask) -> Result<Self, PipelineError> {
        let b = mask
            .bounding_box()
            .ok_or_else(|| PipelineError::Library(format!("template {} is empty", entry.file)))?;
        Ok(Template {
            style_id: entry.style,
            file: entry.file.clone(),
            params: MassParameters {
                style_id: entry.style,
                values_unit: entry.params.clone(),
            },
            camera: entry.camera,
            center: box_center(&mask),
            size: b.width().max(b.height()) as f64,
            mask,
        })
    }

    fn entry(&self) -> TemplateEntry {
        TemplateEntry {
            style: self.style_id,
            file: self.file.clone(),
            params: self.params.values_unit.clone(),
            camera: self.camera,
        }
    }
}

/// Center of the set pixels' bounding box, `None`-safe for empty masks.
pub(crate) fn box_center(mask: &RasterMask) -> (f64, f64) {
    match mask.bounding_box() {
        Some(b) => (
            (b.x0 + b.x1 + 1) as f64 / 2.0,
            (b.y0 + b.y1 + 1) as f64 / 2.0,
        ),
        None => (mask.width as f64 / 2.0, mask.height as f64 / 2.0),
    }
}

/// Immutable after construction; share it between jobs.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleLibrary {
    pub catalog: StyleCatalog,
    pub templates: Vec<Template>,
}

impl StyleLibrary {
    /// Reads `library.toml` and every template it lists from `dir`.
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let manifest_path = dir.join(LIBRARY_FILE);
        let text = std::fs::read_to_string(&manifest_path)
            .map_err(|e| PipelineError::Library(format!("{}: {e}", manifest_path.display())))?;
        let lib = Self::from_manifest(&text, |file| {
            let path = dir.join(file);
            let bytes = std::fs::read(&path)
                .map_err(|e| PipelineError::Library(format!("{}: {e}", path.display())))?;
            decode_pbm(&bytes)
                .map_err(|e| PipelineError::Library(format!("{}: {e}", path.display())))
        })?;
        LOADS.fetch_add(1, Ordering::SeqCst);
        log::info!(
            "loaded style library from {} ({} mass, {} facade, {} window styles, {} templates)",
            dir.display(),
            lib.catalog.mass.len(),
            lib.catalog.facade.len(),
            lib.catalog.window.len(),
            lib.templates.len()
        );
        Ok(lib)
    }

    /// Builds a library from manifest text, resolving template files through
    /// `read_mask`.
    pub fn from_manifest(
        text: &str,
        mut read_mask: impl FnMut(&str) -> Result<RasterMask, PipelineError>,
    ) -> Result<Self, PipelineError> {
        let manifest = LibraryManifest::parse(text)?;
        let templates = manifest
            .template
            .iter()
            .map(|t| Template::new(t, read_mask(&t.file)?))
            .collect::<Result<Vec<_>, _>>()?;
        let lib = StyleLibrary {
            catalog: manifest.catalog(),
            templates,
        };
        lib.validate()?;
        Ok(lib)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.catalog
            .validate()
            .map_err(|e| PipelineError::Library(e.to_string()))?;
        for t in &self.templates {
            check_entry(&self.catalog.mass, &t.entry())
                .map_err(|e| PipelineError::Library(format!("template {}: {e}", t.file)))?;
            if t.mask.is_empty() {
                return Err(PipelineError::Library(format!(
                    "template {} is empty",
                    t.file
                )));
            }
        }
        for s in &self.catalog.mass {
            if !self.templates.iter().any(|t| t.style_id == s.id) {
                return Err(PipelineError::Library(format!(
                    "mass style {} has no templates",
                    s.name
                )));
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> LibraryManifest {
        LibraryManifest {
            version: LIBRARY_VERSION,
            mass: self.catalog.mass.clone(),
            facade: self.catalog.facade.clone(),
            window: self.catalog.window.clone(),
            template: self.templates.iter().map(Template::entry).collect(),
        }
    }

    /// Writes `library.toml` and the template bitmaps under `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
        let mut written = Vec::new();
        for t in &self.templates {
            let path = dir.join(&t.file);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, encode_pbm(&t.mask))?;
            written.push(path);
        }
        let text =
            toml::to_string(&self.manifest()).map_err(|e| PipelineError::Library(e.to_string()))?;
        let path = dir.join(LIBRARY_FILE);
        std::fs::write(&path, text)?;
        written.push(path);
        Ok(written)
    }

    /// The built-in style tables with templates rendered at `raster_size`.
    pub fn builtin(raster_size: usize) -> Self {
        let catalog = StyleCatalog::builtin();
        let templates = render_templates(&catalog, raster_size);
        StyleLibrary { catalog, templates }
    }
}

/// Template parameter variants per mass kind, in unit coordinates: narrow
/// and broad fronts, shallow and deep footprints, each low, medium and
/// tall. Cylinders only vary radius and height.
fn variants(kind: MassKind) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for h in [0.15, 0.45, 0.8] {
        if kind == MassKind::Cylinder {
            for r in [0.25, 0.7] {
                out.push(vec![r, h]);
            }
            continue;
        }
        for w in [0.25, 0.7] {
            for d in [0.25, 0.7] {
                out.push(match kind {
                    MassKind::Box => vec![w, d, h],
                    MassKind::Setback => vec![w, d, h, 0.4, 0.5],
                    _ => vec![w, d, h, 0.5, 0.5],
                });
            }
        }
    }
    out
}

const TEMPLATE_AZIMUTHS: [f64; 5] = [-40.0, -20.0, 0.0, 20.0, 40.0];
const TEMPLATE_ELEVATIONS: [f64; 3] = [8.0, 20.0, 32.0];
const TEMPLATE_FOV: f64 = 50.0;
/// Templates fill this fraction of the raster along their larger side.
const TEMPLATE_FILL: f64 = 0.75;

/// Renders the canonical template set: every parameter variant through a
/// small grid of orbit cameras, framed so the silhouette is centered and
/// fills [`TEMPLATE_FILL`] of the raster.
pub fn render_templates(catalog: &StyleCatalog, raster_size: usize) -> Vec<Template> {
    let n = raster_size;
    let mut out = Vec::new();
    for style in &catalog.mass {
        let azimuths: &[f64] = if style.kind == MassKind::Cylinder {
            &[0.0]
        } else {
            &TEMPLATE_AZIMUTHS
        };
        let mut index = 0;
        for params in variants(style.kind) {
            let p = MassParameters {
                style_id: style.id,
                values_unit: params.clone(),
            };
            let mesh = instantiate_mass(style, &p)
                .expect("variant within bounds")
                .solid();
            let (lo, hi) = mesh.bounds().expect("mass has vertices");
            let radius = 0.5 * (hi - lo).norm();
            for &el in &TEMPLATE_ELEVATIONS {
                for &az in azimuths {
                    let mut cam = CameraParams {
                        azimuth_deg: az,
                        elevation_deg: el,
                        distance_m: radius / (TEMPLATE_FOV.to_radians() / 2.0).sin(),
                        fov_deg: TEMPLATE_FOV,
                        offset_x_px: 0.0,
                        offset_y_px: 0.0,
                    };
                    // recentering each round keeps the measured extent from
                    // being clipped by the raster border
                    let measure = |cam: &mut CameraParams| {
                        let cover = coverage_mask(&mesh, cam, n, n)
                            .expect("template camera outside the mass");
                        let b = cover.bounding_box().expect("template in view");
                        let (cx, cy) = box_center(&cover);
                        cam.offset_x_px += n as f64 / 2.0 - cx;
                        cam.offset_y_px += n as f64 / 2.0 - cy;
                        b.width().max(b.height()) as f64 / (TEMPLATE_FILL * n as f64)
                    };
                    for _ in 0..6 {
                        let ratio = measure(&mut cam);
                        cam.distance_m = (cam.distance_m * ratio).max(radius * 1.05);
                    }
                    // a mass that stays too large at the closest distance is
                    // framed by widening the field of view instead
                    for _ in 0..4 {
                        let ratio = measure(&mut cam);
                        let half = (cam.fov_deg.to_radians() / 2.0).tan() * ratio;
                        cam.fov_deg = (2.0 * half.atan().to_degrees()).clamp(20.0, 90.0);
                    }
                    measure(&mut cam);
                    let mask = coverage_mask(&mesh, &cam, n, n)
                        .expect("template camera outside the mass")
                        .boundary();
                    let entry = TemplateEntry {
                        style: style.id,
                        file: format!("templates/{}_{index:02}.pbm", style.name),
                        params: params.clone(),
                        camera: cam,
                    };
                    out.push(Template::new(&entry, mask).expect("template has pixels"));
                    index += 1;
                }
            }
        }
    }
    out
}

/// Binary PBM (P4); set pixels are black.
pub fn encode_pbm(mask: &RasterMask) -> Vec<u8> {
    // the PNM encoder takes 0 = black, 1 = white for bitmaps
    let samples: Vec<u8> = mask.data.iter().map(|&b| if b { 0 } else { 1 }).collect();
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Bitmap(SampleEncoding::Binary))
        .write_image(
            &samples,
            mask.width as u32,
            mask.height as u32,
            ExtendedColorType::L8,
        )
        .expect("in-memory PBM encode");
    out
}

/// Decodes any PBM; black pixels become set pixels.
pub fn decode_pbm(bytes: &[u8]) -> Result<RasterMask, PipelineError> {
    if !bytes.starts_with(b"P1") && !bytes.starts_with(b"P4") {
        return Err(PipelineError::Library("not a PBM bitmap".into()));
    }
    let img = image::load(Cursor::new(bytes), ImageFormat::Pnm)
        .map_err(|e| PipelineError::Library(format!("bad PBM: {e}")))?
        .to_luma8();
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(PipelineError::Library("empty PBM".into()));
    }
    let mut mask = RasterMask::new(w as usize, h as usize);
    for (x, y, p) in img.enumerate_pixels() {
        mask.set(x as usize, y as usize, p.0[0] < 128);
    }
    Ok(mask)
}
