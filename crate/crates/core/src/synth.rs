//! Synthetic scenes with known ground truth: a z-buffered renderer for
//! composed buildings, the silhouette a user would draw, and the seeded
//! round-trip corpus.

use std::ops::Range;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grammar::{
    compose_building, instantiate_mass, BuildingGrammar, BuildingModel, FacadeGrammar,
    GrammarError, MassKind, MassModel, Mesh, RelBox, StyleCatalog, WindowGrammar,
};
use crate::pipeline::{nearest_facade_style, PipelineConfig, ReconstructionRequest};
use crate::vision::{
    coverage_mask, fill_triangle, simplify_closed, trace_outline, CameraParams, ImageBuffer,
    Projector, SilhouettePolyline, VisionError,
};

pub const SKY_TOP: [u8; 3] = [142, 178, 222];
pub const SKY_BOTTOM: [u8; 3] = [214, 224, 236];
/// Ambient term of the Lambert shading.
const AMBIENT: f64 = 0.35;
/// Storey height of every synthetic facade, in meters.
pub const STOREY_M: f64 = 3.0;
pub const CORPUS_SEED: u64 = 2017;
pub const CORPUS_IMAGE_SIZE: usize = 512;
/// Camera azimuth slots of the corpus, in degrees.
pub const CORPUS_AZIMUTHS: [f64; 5] = [-28.0, -14.0, 0.0, 14.0, 28.0];
/// Camera elevations of the corpus, in degrees above the mass center.
/// High enough that the camera sees the roof outline: from below the roof
/// line a box and an L-shape with its notch at the back leave the same
/// silhouette, and no silhouette method can tell them apart.
pub const CORPUS_ELEVATION_DEG: Range<f64> = 24.0..34.0;
/// Street-level elevations, where the roof is mostly hidden.
pub const STREET_ELEVATION_DEG: Range<f64> = 8.0..20.0;

fn light_dir() -> Vector3<f64> {
    Vector3::new(-0.3, 0.75, 0.6).normalize()
}

fn sky(y: usize, h: usize) -> [u8; 3] {
    let t = y as f64 / (h.max(2) - 1) as f64;
    std::array::from_fn(|c| {
        (SKY_TOP[c] as f64 * (1.0 - t) + SKY_BOTTOM[c] as f64 * t).round() as u8
    })
}

/// Renders `model` through `cam`, looking at `target`, with flat material
/// colors, Lambert shading and a sky gradient behind.
pub fn render_photo(
    model: &BuildingModel,
    target: Point3<f64>,
    cam: &CameraParams,
    w: usize,
    h: usize,
) -> ImageBuffer {
    let proj = Projector::new(cam, target, w, h);
    let light = light_dir();
    let mut img = ImageBuffer::from_fn(w, h, |_, y| sky(y, h));
    // inverse depth, so larger is nearer
    let mut depth = vec![0.0f64; w * h];
    for mesh in &model.meshes {
        let base = model
            .materials
            .get(&mesh.material)
            .map_or([128, 128, 128], |m| m.diffuse);
        let pts: Vec<(f64, f64, f64)> = mesh.vertices.iter().map(|v| proj.project(v)).collect();
        for face in &mesh.faces {
            let p = [
                pts[face[0].vertex],
                pts[face[1].vertex],
                pts[face[2].vertex],
            ];
            if p.iter().any(|q| q.2 <= 1e-6) {
                continue;
            }
            let n: [Vector3<f64>; 3] = std::array::from_fn(|k| mesh.normals[face[k].normal]);
            fill_triangle(
                [(p[0].0, p[0].1), (p[1].0, p[1].1), (p[2].0, p[2].1)],
                w,
                h,
                |x, y, b| {
                    let inv_z = b[0] / p[0].2 + b[1] / p[1].2 + b[2] / p[2].2;
                    let i = y * w + x;
                    if inv_z <= depth[i] {
                        return;
                    }
                    depth[i] = inv_z;
                    let normal = (n[0] * b[0] + n[1] * b[1] + n[2] * b[2]).normalize();
                    let shade = AMBIENT + (1.0 - AMBIENT) * normal.dot(&light).max(0.0);
                    img.set(
                        x,
                        y,
                        base.map(|c| (c as f64 * shade).round().clamp(0.0, 255.0) as u8),
                    );
                },
            );
        }
    }
    img
}

/// The silhouette a user would trace: the outer outline of the mass
/// coverage, through pixel centers, simplified to within a pixel.
pub fn silhouette_of(
    mass: &Mesh,
    cam: &CameraParams,
    w: usize,
    h: usize,
) -> Result<SilhouettePolyline, VisionError> {
    let mask = coverage_mask(mass, cam, w, h)?;
    let outline = trace_outline(&mask);
    if outline.len() < 3 {
        return Err(VisionError::EmptyMask);
    }
    let pts: Vec<(f64, f64)> = outline
        .iter()
        .map(|&(x, y)| (x as f64 + 0.5, y as f64 + 0.5))
        .collect();
    Ok(SilhouettePolyline::from_polygon(
        w as u32,
        h as u32,
        &simplify_closed(&pts, 1.0),
    ))
}

/// One synthetic photo with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCase {
    pub name: String,
    pub grammar: BuildingGrammar,
    /// Camera in photo pixel units.
    pub camera: CameraParams,
    pub image: ImageBuffer,
    pub silhouette: SilhouettePolyline,
}

impl SynthCase {
    pub fn request(&self, config: PipelineConfig) -> ReconstructionRequest {
        ReconstructionRequest {
            image: self.image.clone(),
            silhouette: self.silhouette.clone(),
            config,
        }
    }
}

/// Ground truth as physical values, for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSummary {
    pub name: String,
    pub mass_style: usize,
    pub mass_values: Vec<f64>,
    pub floors: u32,
    pub columns: u32,
    pub facade_style: usize,
    pub window_style: usize,
}

const WALL_PALETTE: [[u8; 3]; 5] = [
    [206, 190, 164],
    [188, 176, 158],
    [214, 204, 188],
    [196, 168, 146],
    [178, 182, 176],
];

/// Random facade layout for a mass style: width of the front facade,
/// floors, columns and the window box, with realistic tile sizes.
fn synth_grammar(
    catalog: &StyleCatalog,
    mass_style: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BuildingGrammar, GrammarError> {
    let style = catalog.mass_style(mass_style)?;
    let wide = rng.random_bool(0.5);
    let aspect = if wide { 1.5 } else { 0.6 } * rng.random_range(0.87..1.15);
    let rel_h = if wide {
        rng.random_range(0.4..0.55)
    } else {
        rng.random_range(0.5..0.68)
    };
    let tile_w = rng.random_range(3.5..5.0);
    let rel_w = (aspect * rel_h * STOREY_M / tile_w).min(0.8);
    let rel_top = rng.random_range(0.15..(0.92 - rel_h).max(0.16));
    let window_rel = RelBox::new((1.0 - rel_w) / 2.0, rel_top, rel_w, rel_h);
    // the real aspect after the width cap
    let aspect = rel_w * tile_w / (rel_h * STOREY_M);

    let (mut floors, mut columns);
    let values: Vec<f64> = loop {
        floors = rng.random_range(3..=17u32);
        columns = rng.random_range(2..=6u32);
        let height = floors as f64 * STOREY_M;
        let width = columns as f64 * tile_w;
        let v = match style.kind {
            MassKind::Box => vec![width, rng.random_range(8.0..30.0), height],
            MassKind::Setback => {
                vec![
                    width,
                    rng.random_range(12.0..30.0),
                    height,
                    rng.random_range(6.0..20.0),
                    rng.random_range(0.15..0.3),
                ]
            }
            MassKind::LShape => vec![
                width,
                rng.random_range(12.0..30.0),
                height,
                rng.random_range(0.4..0.6),
                rng.random_range(0.4..0.6),
            ],
            // a quadrant arc carries the columns
            MassKind::Cylinder => vec![width / std::f64::consts::FRAC_PI_2, height],
        };
        if v.iter()
            .zip(&style.params)
            .all(|(x, b)| (b.lower..=b.upper).contains(x))
        {
            break v;
        }
    };
    let mass = style.normalize(&values)?;
    let wall = WALL_PALETTE[rng.random_range(0..WALL_PALETTE.len())];
    let color_rgb = wall.map(|c| (c as i32 + rng.random_range(-8..=8)).clamp(0, 255) as u8);
    let window_style = catalog.window_style(rng.random_range(0..catalog.window.len()))?;
    Ok(BuildingGrammar {
        mass,
        facade: FacadeGrammar {
            style_id: nearest_facade_style(floors, aspect, catalog),
            floors,
            columns,
            floor_height_m: STOREY_M,
            window_rel,
            color_rgb,
        },
        window: WindowGrammar {
            style_id: window_style.id,
            shape_params: window_style.params_for_aspect(aspect),
        },
    })
}

/// Camera near `azimuth`, framing the whole mass with a margin.
fn synth_camera(
    mass: &MassModel,
    azimuth: f64,
    elevation: Range<f64>,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> CameraParams {
    let c = mass.center();
    let solid = mass.solid();
    let radius = solid
        .vertices
        .iter()
        .map(|v| (v - c).norm())
        .fold(0.0, f64::max);
    let fov: f64 = rng.random_range(40.0..60.0);
    let margin = rng.random_range(1.1..1.22);
    let shift = size as f64 * 15.0 / 512.0;
    CameraParams {
        azimuth_deg: azimuth + rng.random_range(-3.0..3.0),
        elevation_deg: rng.random_range(elevation),
        distance_m: radius / (fov.to_radians() / 2.0).sin() * margin,
        fov_deg: fov,
        offset_x_px: rng.random_range(-shift..shift),
        offset_y_px: rng.random_range(-shift..shift),
    }
}

/// One seeded case of `mass_style` seen from around `azimuth`, at an
/// elevation drawn from `elevation`.
pub fn synth_case(
    catalog: &StyleCatalog,
    mass_style: usize,
    azimuth: f64,
    elevation: Range<f64>,
    seed: u64,
    size: usize,
) -> Result<SynthCase, GrammarError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grammar = synth_grammar(catalog, mass_style, &mut rng)?;
    let style = catalog.mass_style(mass_style)?;
    let mass = instantiate_mass(style, &grammar.mass)?;
    let camera = synth_camera(&mass, azimuth, elevation, size, &mut rng);
    let model = compose_building(catalog, &grammar)?;
    let image = render_photo(&model, mass.center(), &camera, size, size);
    let silhouette = silhouette_of(&mass.solid(), &camera, size, size)
        .map_err(|e| GrammarError::Geometry(e.to_string()))?;
    Ok(SynthCase {
        name: format!("{}_{:+03.0}", style.name, azimuth),
        grammar,
        camera,
        image,
        silhouette,
    })
}

/// The round-trip corpus: every mass style from each azimuth slot.
pub fn corpus(catalog: &StyleCatalog, seed: u64) -> Result<Vec<SynthCase>, GrammarError> {
    corpus_at(catalog, seed, CORPUS_ELEVATION_DEG)
}

/// [`corpus`] with cameras drawn from another elevation range.
pub fn corpus_at(
    catalog: &StyleCatalog,
    seed: u64,
    elevation: Range<f64>,
) -> Result<Vec<SynthCase>, GrammarError> {
    let mut out = Vec::new();
    for style in &catalog.mass {
        for (k, &az) in CORPUS_AZIMUTHS.iter().enumerate() {
            let case_seed = seed
                .wrapping_mul(1000)
                .wrapping_add((style.id * 10 + k) as u64);
            out.push(synth_case(
                catalog,
                style.id,
                az,
                elevation.clone(),
                case_seed,
                CORPUS_IMAGE_SIZE,
            )?);
        }
    }
    Ok(out)
}

impl SynthCase {
    pub fn truth(&self, catalog: &StyleCatalog) -> Result<TruthSummary, GrammarError> {
        let style = catalog.mass_style(self.grammar.mass.style_id)?;
        Ok(TruthSummary {
            name: self.name.clone(),
            mass_style: style.id,
            mass_values: crate::grammar::denormalize(style, &self.grammar.mass)?,
            floors: self.grammar.facade.floors,
            columns: self.grammar.facade.columns,
            facade_style: self.grammar.facade.style_id,
            window_style: self.grammar.window.style_id,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cases_are_valid_and_seeded() {
        let cat = StyleCatalog::builtin();
        for style in 0..4 {
            let a = synth_case(&cat, style, 14.0, CORPUS_ELEVATION_DEG, 7, 128).unwrap();
            cat.validate_grammar(&a.grammar).unwrap();
            a.silhouette.validate().unwrap();
            let b = synth_case(&cat, style, 14.0, CORPUS_ELEVATION_DEG, 7, 128).unwrap();
            assert_eq!(a, b);
            let f = &a.grammar.facade;
            assert!((3..=17).contains(&f.floors) && (2..=6).contains(&f.columns));
        }
    }

    #[test]
    fn photo_has_sky_and_building() {
        let cat = StyleCatalog::builtin();
        let c = synth_case(&cat, 0, 0.0, CORPUS_ELEVATION_DEG, 3, 128).unwrap();
        assert_eq!(c.image.get(0, 0), SKY_TOP);
        // the image center is on the building, darker than the sky
        let mid = c.image.get(64, 64);
        assert!(
            mid.iter().map(|&v| v as u32).sum::<u32>()
                < SKY_BOTTOM.iter().map(|&v| v as u32).sum::<u32>()
        );
        let (x0, y0, x1, y1) = c.silhouette.bounds();
        assert!(
            x0 > 0.0 && y0 > 0.0 && x1 < 128.0 && y1 < 128.0,
            "{:?}",
            c.silhouette.bounds()
        );
    }

    #[test]
    fn nearer_surfaces_win() {
        let cat = StyleCatalog::builtin();
        let c = synth_case(&cat, 0, 0.0, CORPUS_ELEVATION_DEG, 5, 256).unwrap();
        // no glass color shows outside the building coverage
        let mass = instantiate_mass(&cat.mass[0], &c.grammar.mass).unwrap();
        let cover = coverage_mask(&mass.solid(), &c.camera, 256, 256).unwrap();
        for y in 0..256 {
            for x in 0..256 {
                if !cover.get(x, y) {
                    assert_eq!(c.image.get(x, y), sky(y, 256), "({x}, {y})");
                }
            }
        }
    }
}
