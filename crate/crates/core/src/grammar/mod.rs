//! Parameterized building grammars.
//!
//! A [`BuildingGrammar`] combines a mass (coarse volume), a facade layout
//! (floor/column tiling, window placement, wall color) and a window style.
//! [`compose_building`] turns it into meshes and [`export_obj`] writes them as
//! Wavefront OBJ/MTL. Styles come from a [`StyleCatalog`], which is plain data
//! so the style counts can grow without code changes.

mod compose;
mod mass;
mod mesh;
mod obj;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compose::{compose_building, window_tiles, WindowTile, GLASS_OFFSET_M, TRIM_OFFSET_M};
pub use mass::{instantiate_mass, FacadeSurface, MassModel};
pub use mesh::{BuildingModel, Corner, Material, Mesh, MeshBuilder, MeshGroup, Triangle};
pub use obj::{
    export_obj, parse_mtl, parse_obj, write_mtl, write_obj, ObjDocument, ObjError, ObjFace,
    MTL_FILE, OBJ_FILE,
};

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown {kind} style {id}")]
    UnknownStyle { kind: &'static str, id: usize },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Physical bound of one mass parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBound {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub unit: String,
}

impl ParamBound {
    pub fn new(name: &str, lower: f64, upper: f64, unit: &str) -> Self {
        ParamBound {
            name: name.into(),
            lower,
            upper,
            unit: unit.into(),
        }
    }

    /// Lengths scale with the scene; fractions do not.
    pub fn is_length(&self) -> bool {
        self.unit == "m"
    }
}

/// Geometric rule family a mass style instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassKind {
    /// width, depth, height
    Box,
    /// width, depth, base_height, tower_height, setback
    Setback,
    /// width, depth, height, wing_x, wing_z
    LShape,
    /// radius, height
    Cylinder,
}

impl MassKind {
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            MassKind::Box => &["width", "depth", "height"],
            MassKind::Setback => &["width", "depth", "base_height", "tower_height", "setback"],
            MassKind::LShape => &["width", "depth", "height", "wing_x", "wing_z"],
            MassKind::Cylinder => &["radius", "height"],
        }
    }

    /// Index of the parameter giving the height of the window-bearing walls.
    pub fn facade_height_index(self) -> usize {
        match self {
            MassKind::Box | MassKind::LShape => 2,
            MassKind::Setback => 2,
            MassKind::Cylinder => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassStyle {
    pub id: usize,
    pub name: String,
    pub kind: MassKind,
    pub params: Vec<ParamBound>,
    /// Lateral segment count for curved masses.
    #[serde(default = "default_segments")]
    pub segments: usize,
}

fn default_segments() -> usize {
    24
}

impl MassStyle {
    pub fn dimension(&self) -> usize {
        self.params.len()
    }

    /// Unit vector mapping to the middle of every parameter range.
    pub fn mid_params(&self) -> MassParameters {
        MassParameters {
            style_id: self.id,
            values_unit: vec![0.5; self.params.len()],
        }
    }

    /// Inverse of [`denormalize`], clamped into the unit cube.
    pub fn normalize(&self, physical: &[f64]) -> Result<MassParameters, GrammarError> {
        if physical.len() != self.params.len() {
            return Err(GrammarError::Schema(format!(
                "style {} expects {} parameters, got {}",
                self.name,
                self.params.len(),
                physical.len()
            )));
        }
        let values_unit = physical
            .iter()
            .zip(&self.params)
            .map(|(v, b)| ((v - b.lower) / (b.upper - b.lower)).clamp(0.0, 1.0))
            .collect();
        Ok(MassParameters {
            style_id: self.id,
            values_unit,
        })
    }

    fn validate(&self) -> Result<(), GrammarError> {
        let names = self.kind.param_names();
        if self.params.is_empty() || self.params.len() != names.len() {
            return Err(GrammarError::Schema(format!(
                "mass style {} ({:?}) needs {} parameters",
                self.name,
                self.kind,
                names.len()
            )));
        }
        for (b, expected) in self.params.iter().zip(names) {
            if b.name != *expected {
                return Err(GrammarError::Schema(format!(
                    "mass style {}: parameter {:?} should be {:?}",
                    self.name, b.name, expected
                )));
            }
            if !(b.lower.is_finite() && b.upper.is_finite() && b.lower < b.upper) {
                return Err(GrammarError::Schema(format!(
                    "mass style {}: bad bounds for {}",
                    self.name, b.name
                )));
            }
            if b.is_length() && b.lower <= 0.0 {
                return Err(GrammarError::Schema(format!(
                    "mass style {}: length {} must be positive",
                    self.name, b.name
                )));
            }
        }
        if self.kind == MassKind::Cylinder && self.segments < 8 {
            return Err(GrammarError::Schema(format!(
                "mass style {}: at least 8 segments required",
                self.name
            )));
        }
        Ok(())
    }
}

/// Mass parameters in the optimizer's unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassParameters {
    pub style_id: usize,
    pub values_unit: Vec<f64>,
}

/// Maps unit-cube parameters linearly onto the style's physical bounds.
pub fn denormalize(style: &MassStyle, params: &MassParameters) -> Result<Vec<f64>, GrammarError> {
    if params.values_unit.len() != style.params.len() {
        return Err(GrammarError::Schema(format!(
            "style {} expects {} parameters, got {}",
            style.name,
            style.params.len(),
            params.values_unit.len()
        )));
    }
    params
        .values_unit
        .iter()
        .zip(&style.params)
        .map(|(&u, b)| {
            if !(0.0..=1.0).contains(&u) {
                return Err(GrammarError::Schema(format!(
                    "{} = {u} outside [0,1]",
                    b.name
                )));
            }
            Ok(b.lower + u * (b.upper - b.lower))
        })
        .collect()
}

/// Axis-aligned box relative to a unit tile; `top` is measured downward from
/// the tile's upper edge, as in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl RelBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Self {
        RelBox {
            left,
            top,
            width,
            height,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.left, self.top, self.width, self.height]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        RelBox::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_valid(&self) -> bool {
        let open = |v: f64| v > 0.0 && v < 1.0;
        open(self.left)
            && open(self.top)
            && open(self.width)
            && open(self.height)
            && self.left + self.width <= 1.0 + 1e-12
            && self.top + self.height <= 1.0 + 1e-12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacadeStyle {
    pub id: usize,
    pub name: String,
    /// 0 = even floor counts, 1 = odd.
    pub floor_parity: u8,
    /// Typical window width / height in meters.
    pub window_aspect: f64,
    pub default_window: RelBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeF {
    pub default: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeI {
    pub base: u32,
    pub lower: u32,
    pub upper: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStyle {
    pub id: usize,
    pub name: String,
    /// Frame thickness as a fraction of the window's smaller side.
    pub frame: RangeF,
    pub panes_x: RangeI,
    pub panes_y: RangeI,
    /// Window width / height the base pane counts are designed for.
    pub nominal_aspect: f64,
}

impl WindowStyle {
    pub fn default_params(&self) -> Vec<f64> {
        vec![
            self.frame.default,
            self.panes_x.base as f64,
            self.panes_y.base as f64,
        ]
    }

    /// Shape parameters for an observed window aspect (width / height):
    /// horizontal panes scale with how much wider the window is than nominal.
    pub fn params_for_aspect(&self, aspect: f64) -> Vec<f64> {
        let scaled = (self.panes_x.base as f64 * aspect / self.nominal_aspect).round();
        let panes_x = scaled.clamp(self.panes_x.lower as f64, self.panes_x.upper as f64);
        vec![self.frame.default, panes_x, self.panes_y.base as f64]
    }

    pub fn params_in_bounds(&self, p: &[f64]) -> bool {
        p.len() == 3
            && (self.frame.lower..=self.frame.upper).contains(&p[0])
            && (self.panes_x.lower as f64..=self.panes_x.upper as f64).contains(&p[1])
            && (self.panes_y.lower as f64..=self.panes_y.upper as f64).contains(&p[2])
            && p[1].fract() == 0.0
            && p[2].fract() == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacadeGrammar {
    pub style_id: usize,
    pub floors: u32,
    pub columns: u32,
    pub floor_height_m: f64,
    pub window_rel: RelBox,
    pub color_rgb: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowGrammar {
    pub style_id: usize,
    /// `[frame_fraction, panes_x, panes_y]`
    pub shape_params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingGrammar {
    pub mass: MassParameters,
    pub facade: FacadeGrammar,
    pub window: WindowGrammar,
}

/// The style tables all grammars are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleCatalog {
    pub mass: Vec<MassStyle>,
    pub facade: Vec<FacadeStyle>,
    pub window: Vec<WindowStyle>,
}

impl StyleCatalog {
    pub fn mass_style(&self, id: usize) -> Result<&MassStyle, GrammarError> {
        self.mass
            .get(id)
            .ok_or(GrammarError::UnknownStyle { kind: "mass", id })
    }

    pub fn facade_style(&self, id: usize) -> Result<&FacadeStyle, GrammarError> {
        self.facade
            .get(id)
            .ok_or(GrammarError::UnknownStyle { kind: "facade", id })
    }

    pub fn window_style(&self, id: usize) -> Result<&WindowStyle, GrammarError> {
        self.window
            .get(id)
            .ok_or(GrammarError::UnknownStyle { kind: "window", id })
    }

    pub fn validate(&self) -> Result<(), GrammarError> {
        if self.mass.is_empty() || self.facade.is_empty() || self.window.is_empty() {
            return Err(GrammarError::Schema(
                "every style table needs at least one entry".into(),
            ));
        }
        for (i, s) in self.mass.iter().enumerate() {
            if s.id != i {
                return Err(GrammarError::Schema(format!(
                    "mass style ids must be dense, found {} at {i}",
                    s.id
                )));
            }
            s.validate()?;
        }
        for (i, s) in self.facade.iter().enumerate() {
            if s.id != i {
                return Err(GrammarError::Schema(format!(
                    "facade style ids must be dense, found {} at {i}",
                    s.id
                )));
            }
            if !s.default_window.is_valid() || s.floor_parity > 1 || s.window_aspect <= 0.0 {
                return Err(GrammarError::Schema(format!(
                    "facade style {} is malformed",
                    s.name
                )));
            }
        }
        for (i, s) in self.window.iter().enumerate() {
            if s.id != i {
                return Err(GrammarError::Schema(format!(
                    "window style ids must be dense, found {} at {i}",
                    s.id
                )));
            }
            let f = s.frame;
            let ok = f.lower <= f.default
                && f.default <= f.upper
                && f.lower >= 0.0
                && f.upper < 0.5
                && s.panes_x.lower >= 1
                && s.panes_y.lower >= 1
                && (s.panes_x.lower..=s.panes_x.upper).contains(&s.panes_x.base)
                && (s.panes_y.lower..=s.panes_y.upper).contains(&s.panes_y.base)
                && s.nominal_aspect > 0.0;
            if !ok {
                return Err(GrammarError::Schema(format!(
                    "window style {} is malformed",
                    s.name
                )));
            }
        }
        Ok(())
    }

    /// Checks a grammar against the tables.
    pub fn validate_grammar(&self, g: &BuildingGrammar) -> Result<(), GrammarError> {
        let mass = self.mass_style(g.mass.style_id)?;
        denormalize(mass, &g.mass)?;
        self.facade_style(g.facade.style_id)?;
        let f = &g.facade;
        if f.floors == 0 || f.columns == 0 || !(f.floor_height_m > 0.0) {
            return Err(GrammarError::Schema(
                "facade needs floors, columns and floor height".into(),
            ));
        }
        if !f.window_rel.is_valid() {
            return Err(GrammarError::Schema(format!(
                "window box {:?} leaves the tile",
                f.window_rel
            )));
        }
        let w = self.window_style(g.window.style_id)?;
        if !w.params_in_bounds(&g.window.shape_params) {
            return Err(GrammarError::Schema(format!(
                "window params {:?} outside style {} bounds",
                g.window.shape_params, w.name
            )));
        }
        Ok(())
    }

    /// The four-of-each desk-scale style set.
    pub fn builtin() -> Self {
        let m = |n: &str, lo: f64, hi: f64| ParamBound::new(n, lo, hi, "m");
        let fr = |n: &str, lo: f64, hi: f64| ParamBound::new(n, lo, hi, "fraction");
        let mass = vec![
            MassStyle {
                id: 0,
                name: "box".into(),
                kind: MassKind::Box,
                params: vec![
                    m("width", 6.0, 60.0),
                    m("depth", 6.0, 60.0),
                    m("height", 6.0, 75.0),
                ],
                segments: 24,
            },
            MassStyle {
                id: 1,
                name: "setback".into(),
                kind: MassKind::Setback,
                params: vec![
                    m("width", 10.0, 60.0),
                    m("depth", 10.0, 60.0),
                    m("base_height", 6.0, 60.0),
                    m("tower_height", 3.0, 40.0),
                    fr("setback", 0.1, 0.35),
                ],
                segments: 24,
            },
            MassStyle {
                id: 2,
                name: "l_shape".into(),
                kind: MassKind::LShape,
                params: vec![
                    m("width", 10.0, 60.0),
                    m("depth", 10.0, 60.0),
                    m("height", 6.0, 75.0),
                    fr("wing_x", 0.3, 0.7),
                    fr("wing_z", 0.3, 0.7),
                ],
                segments: 24,
            },
            MassStyle {
                id: 3,
                name: "cylinder".into(),
                kind: MassKind::Cylinder,
                params: vec![m("radius", 4.0, 30.0), m("height", 6.0, 75.0)],
                segments: 24,
            },
        ];
        let facade = vec![
            FacadeStyle {
                id: 0,
                name: "even_tall".into(),
                floor_parity: 0,
                window_aspect: 0.6,
                default_window: RelBox::new(0.3, 0.2, 0.4, 0.6),
            },
            FacadeStyle {
                id: 1,
                name: "odd_tall".into(),
                floor_parity: 1,
                window_aspect: 0.6,
                default_window: RelBox::new(0.3, 0.2, 0.4, 0.6),
            },
            FacadeStyle {
                id: 2,
                name: "even_wide".into(),
                floor_parity: 0,
                window_aspect: 1.5,
                default_window: RelBox::new(0.15, 0.25, 0.7, 0.5),
            },
            FacadeStyle {
                id: 3,
                name: "odd_wide".into(),
                floor_parity: 1,
                window_aspect: 1.5,
                default_window: RelBox::new(0.15, 0.25, 0.7, 0.5),
            },
        ];
        let window = vec![
            WindowStyle {
                id: 0,
                name: "plain".into(),
                frame: RangeF {
                    default: 0.0,
                    lower: 0.0,
                    upper: 0.0,
                },
                panes_x: RangeI {
                    base: 1,
                    lower: 1,
                    upper: 1,
                },
                panes_y: RangeI {
                    base: 1,
                    lower: 1,
                    upper: 1,
                },
                nominal_aspect: 0.8,
            },
            WindowStyle {
                id: 1,
                name: "framed".into(),
                frame: RangeF {
                    default: 0.14,
                    lower: 0.08,
                    upper: 0.2,
                },
                panes_x: RangeI {
                    base: 1,
                    lower: 1,
                    upper: 2,
                },
                panes_y: RangeI {
                    base: 1,
                    lower: 1,
                    upper: 1,
                },
                nominal_aspect: 0.8,
            },
            WindowStyle {
                id: 2,
                name: "cross".into(),
                frame: RangeF {
                    default: 0.12,
                    lower: 0.08,
                    upper: 0.2,
                },
                panes_x: RangeI {
                    base: 2,
                    lower: 2,
                    upper: 3,
                },
                panes_y: RangeI {
                    base: 2,
                    lower: 2,
                    upper: 2,
                },
                nominal_aspect: 0.8,
            },
            WindowStyle {
                id: 3,
                name: "triple".into(),
                frame: RangeF {
                    default: 0.1,
                    lower: 0.06,
                    upper: 0.16,
                },
                panes_x: RangeI {
                    base: 3,
                    lower: 2,
                    upper: 4,
                },
                panes_y: RangeI {
                    base: 1,
                    lower: 1,
                    upper: 1,
                },
                nominal_aspect: 1.2,
            },
        ];
        StyleCatalog {
            mass,
            facade,
            window,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bound_style() -> MassStyle {
        MassStyle {
            id: 0,
            name: "t".into(),
            kind: MassKind::Cylinder,
            params: vec![
                ParamBound::new("radius", 10.0, 50.0, "m"),
                ParamBound::new("height", 10.0, 50.0, "m"),
            ],
            segments: 24,
        }
    }

    #[test]
    fn denormalize_examples() {
        let s = bound_style();
        let p = |u: f64| MassParameters {
            style_id: 0,
            values_unit: vec![u, u],
        };
        assert_eq!(denormalize(&s, &p(0.0)).unwrap()[0], 10.0);
        assert_eq!(denormalize(&s, &p(1.0)).unwrap()[0], 50.0);
        assert_eq!(denormalize(&s, &p(0.25)).unwrap()[0], 20.0);
    }

    #[test]
    fn denormalize_length_mismatch() {
        let s = bound_style();
        let p = MassParameters {
            style_id: 0,
            values_unit: vec![0.5],
        };
        assert!(matches!(denormalize(&s, &p), Err(GrammarError::Schema(_))));
    }

    #[test]
    fn normalize_inverts_denormalize() {
        let s = bound_style();
        let p = MassParameters {
            style_id: 0,
            values_unit: vec![0.3, 0.9],
        };
        let back = s.normalize(&denormalize(&s, &p).unwrap()).unwrap();
        for (a, b) in back.values_unit.iter().zip(&p.values_unit) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn builtin_catalog_is_valid() {
        let c = StyleCatalog::builtin();
        c.validate().unwrap();
        assert_eq!((c.mass.len(), c.facade.len(), c.window.len()), (4, 4, 4));
    }

    #[test]
    fn catalog_rejects_sparse_ids() {
        let mut c = StyleCatalog::builtin();
        c.window[2].id = 7;
        assert!(c.validate().is_err());
    }

    #[test]
    fn window_params_follow_aspect() {
        let c = StyleCatalog::builtin();
        let triple = &c.window[3];
        assert_eq!(triple.params_for_aspect(1.2)[1], 3.0);
        assert_eq!(triple.params_for_aspect(10.0)[1], 4.0);
        assert_eq!(triple.params_for_aspect(0.1)[1], 2.0);
        assert!(triple.params_in_bounds(&triple.params_for_aspect(0.5)));
    }

    #[test]
    fn relbox_must_fit_tile() {
        assert!(RelBox::new(0.25, 0.2, 0.5, 0.6).is_valid());
        assert!(!RelBox::new(0.6, 0.2, 0.5, 0.6).is_valid());
        assert!(!RelBox::new(0.0, 0.2, 0.5, 0.6).is_valid());
    }
}
