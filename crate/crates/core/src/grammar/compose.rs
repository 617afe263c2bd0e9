use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Point3;

use super::mass::{instantiate_mass, FacadeSurface};
use super::mesh::{BuildingModel, Material, MeshBuilder, MeshGroup};
use super::{BuildingGrammar, FacadeGrammar, GrammarError, StyleCatalog};

/// Glass panes sit this far in front of the wall.
pub const GLASS_OFFSET_M: f64 = 0.05;
/// Frames and mullions sit in front of the glass.
pub const TRIM_OFFSET_M: f64 = 0.08;

const ROOF_RGB: [u8; 3] = [112, 110, 116];
const GLASS_RGB: [u8; 3] = [38, 46, 58];
const FRAME_RGB: [u8; 3] = [78, 70, 64];

/// Window rectangle of one (floor, column) tile in facade coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowTile {
    pub facade: usize,
    /// 0 is the ground floor.
    pub floor: u32,
    pub column: u32,
    pub u0: f64,
    pub u1: f64,
    pub v0: f64,
    pub v1: f64,
}

/// Lays the floor/column grid on a facade and places the window box in
/// every tile. Floors stack from the base; any remaining height is a parapet.
pub fn window_tiles(
    facade_index: usize,
    surface: &FacadeSurface,
    grammar: &FacadeGrammar,
) -> Result<Vec<WindowTile>, GrammarError> {
    let (w, h) = (surface.width(), surface.height());
    let fh = grammar.floor_height_m;
    if grammar.floors as f64 * fh > h * (1.0 + 1e-9) {
        return Err(GrammarError::Geometry(format!(
            "{} floors of {fh:.3} m overflow a {h:.3} m facade",
            grammar.floors
        )));
    }
    if grammar.floors == 0 || grammar.columns == 0 || !grammar.window_rel.is_valid() {
        return Err(GrammarError::Geometry(
            "empty tile grid or window box outside tile".into(),
        ));
    }
    let tw = w / grammar.columns as f64;
    let r = grammar.window_rel;
    let mut tiles = Vec::with_capacity((grammar.floors * grammar.columns) as usize);
    for floor in 0..grammar.floors {
        let tile_top = (floor + 1) as f64 * fh;
        for column in 0..grammar.columns {
            let left = column as f64 * tw;
            let v1 = tile_top - r.top * fh;
            tiles.push(WindowTile {
                facade: facade_index,
                floor,
                column,
                u0: left + r.left * tw,
                u1: left + (r.left + r.width) * tw,
                v0: v1 - r.height * fh,
                v1,
            });
        }
    }
    Ok(tiles)
}

/// Emits a flat or arc-following panel over `[u0,u1]×[v0,v1]`.
fn panel(b: &mut MeshBuilder, f: &FacadeSurface, u0: f64, u1: f64, v0: f64, v1: f64, offset: f64) {
    if u1 <= u0 || v1 <= v0 {
        return;
    }
    let strips = match *f {
        FacadeSurface::Planar { .. } => 1,
        FacadeSurface::Curved { radius, .. } => {
            (((u1 - u0) / radius) / (PI / 24.0)).ceil().max(1.0) as usize
        }
    };
    for s in 0..strips {
        let a = u0 + (u1 - u0) * s as f64 / strips as f64;
        let c = u0 + (u1 - u0) * (s + 1) as f64 / strips as f64;
        let n = f.normal_at(0.5 * (a + c));
        let q: [Point3<f64>; 4] = [
            f.point(a, v0, offset),
            f.point(c, v0, offset),
            f.point(c, v1, offset),
            f.point(a, v1, offset),
        ];
        b.quad(q, n);
    }
}

/// Composes mass, facade tiling and window style into a building model.
pub fn compose_building(
    catalog: &StyleCatalog,
    grammar: &BuildingGrammar,
) -> Result<BuildingModel, GrammarError> {
    catalog.validate_grammar(grammar)?;
    let mass_style = catalog.mass_style(grammar.mass.style_id)?;
    let window_style = catalog.window_style(grammar.window.style_id)?;
    let mass = instantiate_mass(mass_style, &grammar.mass)?;

    let frame = grammar.window.shape_params[0];
    let panes_x = grammar.window.shape_params[1] as u32;
    let panes_y = grammar.window.shape_params[2] as u32;
    let has_trim = frame > 0.0 || panes_x > 1 || panes_y > 1;

    let mut meshes = vec![mass.walls.clone(), mass.roof.clone()];
    for (fi, surface) in mass.facades.iter().enumerate() {
        for t in window_tiles(fi, surface, &grammar.facade)? {
            let mut glass = MeshBuilder::new(MeshGroup::Window, "glass");
            panel(&mut glass, surface, t.u0, t.u1, t.v0, t.v1, GLASS_OFFSET_M);
            meshes.push(glass.finish());
            if !has_trim {
                continue;
            }
            let (w, h) = (t.u1 - t.u0, t.v1 - t.v0);
            let ft = frame * w.min(h);
            let bar = if ft > 0.0 { 0.6 * ft } else { 0.06 * w.min(h) };
            let mut trim = MeshBuilder::new(MeshGroup::Wall, "frame");
            if ft > 0.0 {
                panel(
                    &mut trim,
                    surface,
                    t.u0,
                    t.u1,
                    t.v1 - ft,
                    t.v1,
                    TRIM_OFFSET_M,
                );
                panel(
                    &mut trim,
                    surface,
                    t.u0,
                    t.u1,
                    t.v0,
                    t.v0 + ft,
                    TRIM_OFFSET_M,
                );
                panel(
                    &mut trim,
                    surface,
                    t.u0,
                    t.u0 + ft,
                    t.v0 + ft,
                    t.v1 - ft,
                    TRIM_OFFSET_M,
                );
                panel(
                    &mut trim,
                    surface,
                    t.u1 - ft,
                    t.u1,
                    t.v0 + ft,
                    t.v1 - ft,
                    TRIM_OFFSET_M,
                );
            }
            let (gu0, gu1, gv0, gv1) = (t.u0 + ft, t.u1 - ft, t.v0 + ft, t.v1 - ft);
            for k in 1..panes_x {
                let c = gu0 + (gu1 - gu0) * k as f64 / panes_x as f64;
                panel(
                    &mut trim,
                    surface,
                    c - bar / 2.0,
                    c + bar / 2.0,
                    gv0,
                    gv1,
                    TRIM_OFFSET_M,
                );
            }
            for k in 1..panes_y {
                let c = gv0 + (gv1 - gv0) * k as f64 / panes_y as f64;
                panel(
                    &mut trim,
                    surface,
                    gu0,
                    gu1,
                    c - bar / 2.0,
                    c + bar / 2.0,
                    TRIM_OFFSET_M,
                );
            }
            let trim = trim.finish();
            if !trim.is_empty() {
                meshes.push(trim);
            }
        }
    }
    log::debug!(
        "composed {} with {} meshes ({} window style)",
        mass_style.name,
        meshes.len(),
        window_style.name
    );

    let mut materials = BTreeMap::new();
    let flat = |rgb: [u8; 3]| Material {
        diffuse: rgb,
        texture: None,
    };
    materials.insert("wall".to_string(), flat(grammar.facade.color_rgb));
    materials.insert("roof".to_string(), flat(ROOF_RGB));
    materials.insert("glass".to_string(), flat(GLASS_RGB));
    materials.insert("frame".to_string(), flat(FRAME_RGB));
    Ok(BuildingModel { meshes, materials })
}
