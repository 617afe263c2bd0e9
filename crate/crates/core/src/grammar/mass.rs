use std::f64::consts::{FRAC_PI_4, PI};

use nalgebra::{Point3, Vector2, Vector3};

use super::mesh::{Mesh, MeshBuilder, MeshGroup};
use super::{denormalize, GrammarError, MassKind, MassParameters, MassStyle};

/// A window-bearing wall of a mass, parameterized by `u` (meters along the
/// wall, left to right seen from outside) and `v` (meters up from its base).
#[derive(Debug, Clone, PartialEq)]
pub enum FacadeSurface {
    Planar {
        /// Bottom-left corner seen from outside.
        origin: Point3<f64>,
        right: Vector3<f64>,
        normal: Vector3<f64>,
        width: f64,
        height: f64,
    },
    /// Arc of a vertical cylinder centered on the y axis.
    Curved {
        radius: f64,
        theta_start: f64,
        theta_end: f64,
        base_y: f64,
        height: f64,
    },
}

impl FacadeSurface {
    fn planar(a: (f64, f64), b: (f64, f64), y0: f64, y1: f64) -> Self {
        let dir = Vector3::new(b.0 - a.0, 0.0, b.1 - a.1);
        let width = dir.norm();
        let right = dir / width;
        FacadeSurface::Planar {
            origin: Point3::new(a.0, y0, a.1),
            right,
            normal: right.cross(&Vector3::y()),
            width,
            height: y1 - y0,
        }
    }

    pub fn width(&self) -> f64 {
        match *self {
            FacadeSurface::Planar { width, .. } => width,
            FacadeSurface::Curved {
                radius,
                theta_start,
                theta_end,
                ..
            } => radius * (theta_end - theta_start),
        }
    }

    pub fn height(&self) -> f64 {
        match *self {
            FacadeSurface::Planar { height, .. } | FacadeSurface::Curved { height, .. } => height,
        }
    }

    pub fn is_planar(&self) -> bool {
        matches!(self, FacadeSurface::Planar { .. })
    }

    /// Point at facade coordinates, pushed `offset` meters outward.
    pub fn point(&self, u: f64, v: f64, offset: f64) -> Point3<f64> {
        match *self {
            FacadeSurface::Planar {
                origin,
                right,
                normal,
                ..
            } => origin + right * u + Vector3::y() * v + normal * offset,
            FacadeSurface::Curved {
                radius,
                theta_start,
                base_y,
                ..
            } => {
                let t = theta_start + u / radius;
                let r = radius + offset;
                Point3::new(r * t.sin(), base_y + v, r * t.cos())
            }
        }
    }

    pub fn normal_at(&self, u: f64) -> Vector3<f64> {
        match *self {
            FacadeSurface::Planar { normal, .. } => normal,
            FacadeSurface::Curved {
                radius,
                theta_start,
                ..
            } => {
                let t = theta_start + u / radius;
                Vector3::new(t.sin(), 0.0, t.cos())
            }
        }
    }

    pub fn mid_normal(&self) -> Vector3<f64> {
        self.normal_at(self.width() / 2.0)
    }

    pub fn center(&self) -> Point3<f64> {
        self.point(self.width() / 2.0, self.height() / 2.0, 0.0)
    }

    /// Corners in image-reading order: top-left, top-right, bottom-right,
    /// bottom-left (seen from outside).
    pub fn corners(&self) -> [Point3<f64>; 4] {
        let (w, h) = (self.width(), self.height());
        [
            self.point(0.0, h, 0.0),
            self.point(w, h, 0.0),
            self.point(w, 0.0, 0.0),
            self.point(0.0, 0.0, 0.0),
        ]
    }

    /// Signed distance outward from the surface.
    pub fn offset_of(&self, p: &Point3<f64>) -> f64 {
        match *self {
            FacadeSurface::Planar { origin, normal, .. } => (p - origin).dot(&normal),
            FacadeSurface::Curved { radius, .. } => p.x.hypot(p.z) - radius,
        }
    }
}

/// Instantiated mass: wall and roof meshes plus its window-bearing facades.
#[derive(Debug, Clone, PartialEq)]
pub struct MassModel {
    pub kind: MassKind,
    /// Physical parameter values.
    pub values: Vec<f64>,
    pub walls: Mesh,
    pub roof: Mesh,
    pub facades: Vec<FacadeSurface>,
}

impl MassModel {
    /// Walls and roof welded into one closed mesh.
    pub fn solid(&self) -> Mesh {
        Mesh::welded(&[&self.walls, &self.roof], MeshGroup::Wall, "wall")
    }

    pub fn bounds(&self) -> (Point3<f64>, Point3<f64>) {
        let (a0, a1) = self.walls.bounds().expect("mass has vertices");
        match self.roof.bounds() {
            Some((b0, b1)) => (a0.inf(&b0), a1.sup(&b1)),
            None => (a0, a1),
        }
    }

    /// Center of the bounding box; the camera's look-at point.
    pub fn center(&self) -> Point3<f64> {
        let (lo, hi) = self.bounds();
        nalgebra::center(&lo, &hi)
    }
}

struct Builder {
    walls: MeshBuilder,
    roof: MeshBuilder,
}

impl Builder {
    fn new() -> Self {
        Builder {
            walls: MeshBuilder::new(MeshGroup::Wall, "wall"),
            roof: MeshBuilder::new(MeshGroup::Roof, "roof"),
        }
    }

    /// Vertical wall from footprint point `a` to `b`; outward is `dir × up`.
    fn wall(&mut self, a: (f64, f64), b: (f64, f64), y0: f64, y1: f64) {
        let f = FacadeSurface::planar(a, b, y0, y1);
        let normal = f.normal_at(0.0);
        self.walls.quad(
            [
                Point3::new(a.0, y0, a.1),
                Point3::new(b.0, y0, b.1),
                Point3::new(b.0, y1, b.1),
                Point3::new(a.0, y1, a.1),
            ],
            normal,
        );
    }

    fn cap(&mut self, x0: f64, x1: f64, z0: f64, z1: f64, y: f64, up: bool) {
        let p = [
            Point3::new(x0, y, z1),
            Point3::new(x1, y, z1),
            Point3::new(x1, y, z0),
            Point3::new(x0, y, z0),
        ];
        if up {
            self.roof.quad(p, Vector3::y());
        } else {
            self.walls.quad([p[3], p[2], p[1], p[0]], -Vector3::y());
        }
    }

    fn finish(self, kind: MassKind, values: Vec<f64>, facades: Vec<FacadeSurface>) -> MassModel {
        MassModel {
            kind,
            values,
            walls: self.walls.finish(),
            roof: self.roof.finish(),
            facades,
        }
    }
}

/// Builds the closed mass volume for a style and its unit parameters. The base
/// sits on `y = 0`, centered on the origin in x/z; the front faces `+z`.
pub fn instantiate_mass(
    style: &MassStyle,
    params: &MassParameters,
) -> Result<MassModel, GrammarError> {
    if params.style_id != style.id {
        return Err(GrammarError::UnknownStyle {
            kind: "mass",
            id: params.style_id,
        });
    }
    let v = denormalize(style, params)?;
    Ok(build(style.kind, &v, style.segments))
}

pub(crate) fn build(kind: MassKind, v: &[f64], segments: usize) -> MassModel {
    let mut b = Builder::new();
    let mut facades = Vec::new();
    match kind {
        MassKind::Box => {
            let (hw, hd, h) = (v[0] / 2.0, v[1] / 2.0, v[2]);
            let ring = [(-hw, hd), (hw, hd), (hw, -hd), (-hw, -hd)];
            for k in 0..4 {
                let (a, c) = (ring[k], ring[(k + 1) % 4]);
                b.wall(a, c, 0.0, h);
                facades.push(FacadeSurface::planar(a, c, 0.0, h));
            }
            b.cap(-hw, hw, -hd, hd, h, true);
            b.cap(-hw, hw, -hd, hd, 0.0, false);
        }
        MassKind::Setback => {
            let (hw, hd, h1, h2, s) = (v[0] / 2.0, v[1] / 2.0, v[2], v[3], v[4]);
            let (iw, id) = (hw * (1.0 - 2.0 * s), hd * (1.0 - 2.0 * s));
            let outer = [(-hw, hd), (hw, hd), (hw, -hd), (-hw, -hd)];
            let inner = [(-iw, id), (iw, id), (iw, -id), (-iw, -id)];
            for k in 0..4 {
                let (a, c) = (outer[k], outer[(k + 1) % 4]);
                b.wall(a, c, 0.0, h1);
                facades.push(FacadeSurface::planar(a, c, 0.0, h1));
                b.wall(inner[k], inner[(k + 1) % 4], h1, h1 + h2);
                // terrace ring segment between the outer and inner edge
                let q = [
                    Point3::new(outer[k].0, h1, outer[k].1),
                    Point3::new(outer[(k + 1) % 4].0, h1, outer[(k + 1) % 4].1),
                    Point3::new(inner[(k + 1) % 4].0, h1, inner[(k + 1) % 4].1),
                    Point3::new(inner[k].0, h1, inner[k].1),
                ];
                b.roof.quad(q, Vector3::y());
            }
            b.cap(-iw, iw, -id, id, h1 + h2, true);
            b.cap(-hw, hw, -hd, hd, 0.0, false);
        }
        MassKind::LShape => {
            let (hw, hd, h) = (v[0] / 2.0, v[1] / 2.0, v[2]);
            // notch removed from the back-right corner
            let xi = -hw + v[3] * v[0];
            let zs = -hd + (1.0 - v[4]) * v[1];
            // footprint with the two split points that keep the caps conforming
            let ring = [
                (-hw, hd),
                (xi, hd),
                (hw, hd),
                (hw, zs),
                (xi, zs),
                (xi, -hd),
                (-hw, -hd),
                (-hw, zs),
            ];
            for k in 0..8 {
                b.wall(ring[k], ring[(k + 1) % 8], 0.0, h);
            }
            let logical = [
                ((-hw, hd), (hw, hd)),
                ((hw, hd), (hw, zs)),
                ((hw, zs), (xi, zs)),
                ((xi, zs), (xi, -hd)),
                ((xi, -hd), (-hw, -hd)),
                ((-hw, -hd), (-hw, hd)),
            ];
            for (a, c) in logical {
                facades.push(FacadeSurface::planar(a, c, 0.0, h));
            }
            for (y, up) in [(h, true), (0.0, false)] {
                b.cap(-hw, xi, zs, hd, y, up);
                b.cap(xi, hw, zs, hd, y, up);
                b.cap(-hw, xi, -hd, zs, y, up);
            }
        }
        MassKind::Cylinder => {
            let (r, h) = (v[0], v[1]);
            let n = segments;
            let theta = |k: usize| 2.0 * PI * (k % n) as f64 / n as f64;
            let at = |t: f64, y: f64| Point3::new(r * t.sin(), y, r * t.cos());
            let radial = |t: f64| Vector3::new(t.sin(), 0.0, t.cos());
            for k in 0..n {
                let (t0, t1) = (theta(k), theta(k + 1));
                let u0 = k as f64 / n as f64;
                let u1 = (k + 1) as f64 / n as f64;
                let uv = |u: f64, v: f64| Vector2::new(u, v);
                b.walls.triangle_smooth(
                    [at(t0, 0.0), at(t1, 0.0), at(t1, h)],
                    [uv(u0, 0.0), uv(u1, 0.0), uv(u1, 1.0)],
                    [radial(t0), radial(t1), radial(t1)],
                );
                b.walls.triangle_smooth(
                    [at(t0, 0.0), at(t1, h), at(t0, h)],
                    [uv(u0, 0.0), uv(u1, 1.0), uv(u0, 1.0)],
                    [radial(t0), radial(t1), radial(t0)],
                );
                let zero = [Vector2::new(0.5, 0.5); 3];
                b.roof.triangle(
                    [Point3::new(0.0, h, 0.0), at(t0, h), at(t1, h)],
                    zero,
                    Vector3::y(),
                );
                b.walls.triangle(
                    [Point3::new(0.0, 0.0, 0.0), at(t1, 0.0), at(t0, 0.0)],
                    zero,
                    -Vector3::y(),
                );
            }
            for q in 0..4 {
                let start = -FRAC_PI_4 + q as f64 * PI / 2.0;
                facades.push(FacadeSurface::Curved {
                    radius: r,
                    theta_start: start,
                    theta_end: start + PI / 2.0,
                    base_y: 0.0,
                    height: h,
                });
            }
        }
    }
    b.finish(kind, v.to_vec(), facades)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::StyleCatalog;

    fn phys(kind: MassKind, v: &[f64]) -> MassModel {
        build(kind, v, 24)
    }

    fn assert_closed(m: &MassModel) {
        let solid = m.solid();
        for (edge, uses) in solid.edge_use() {
            assert_eq!(uses, 2, "edge {edge:?} used {uses} times in {:?}", m.kind);
        }
    }

    fn signed_volume(mesh: &Mesh) -> f64 {
        mesh.triangles()
            .map(|[a, b, c]| a.coords.dot(&b.coords.cross(&c.coords)) / 6.0)
            .sum()
    }

    #[test]
    fn box_geometry() {
        let m = phys(MassKind::Box, &[10.0, 8.0, 20.0]);
        let s = m.solid();
        assert_eq!(s.vertices.len(), 8);
        assert_eq!(s.faces.len(), 12);
        let (lo, hi) = m.bounds();
        assert_eq!(hi - lo, Vector3::new(10.0, 20.0, 8.0));
        assert_eq!(lo.y, 0.0);
        assert_eq!(lo.x, -hi.x);
        assert_closed(&m);
        assert!((signed_volume(&s) - 1600.0).abs() < 1e-9);
        assert_eq!(m.facades.len(), 4);
        assert_eq!(m.facades[0].normal_at(0.0), Vector3::z());
    }

    fn shoelace(poly: &[(f64, f64)]) -> f64 {
        let n = poly.len();
        (0..n)
            .map(|i| {
                let (a, b) = (poly[i], poly[(i + 1) % n]);
                a.0 * b.1 - b.0 * a.1
            })
            .sum::<f64>()
            .abs()
            / 2.0
    }

    #[test]
    fn l_shape_footprint_and_vertices() {
        let (w, d) = (20.0, 12.0);
        let m = phys(MassKind::LShape, &[w, d, 9.0, 0.5, 0.5]);
        let s = m.solid();
        assert_eq!(s.vertices.len(), 16);
        assert_closed(&m);
        // footprint from the base vertices, ordered by angle around its centroid
        let mut base: Vec<(f64, f64)> = s
            .vertices
            .iter()
            .filter(|p| p.y == 0.0)
            .map(|p| (p.x, p.z))
            .collect();
        assert_eq!(base.len(), 8);
        // drop the two collinear split points; shoelace is unaffected either way
        let cx = base.iter().map(|p| p.0).sum::<f64>() / 8.0;
        let cz = base.iter().map(|p| p.1).sum::<f64>() / 8.0;
        base.sort_by(|a, b| {
            (a.1 - cz)
                .atan2(a.0 - cx)
                .partial_cmp(&(b.1 - cz).atan2(b.0 - cx))
                .unwrap()
        });
        let area = shoelace(&base);
        assert!(
            (area - (w * d - (0.5 * w) * (0.5 * d))).abs() < 1e-9,
            "area {area}"
        );
        let volume = signed_volume(&s);
        assert!((volume - area * 9.0).abs() < 1e-6);
        assert_eq!(m.facades.len(), 6);
    }

    #[test]
    fn cylinder_lateral_vertices_on_radius() {
        let m = phys(MassKind::Cylinder, &[5.0, 20.0]);
        let s = m.solid();
        assert_eq!(s.vertices.len(), 24 * 2 + 2);
        for p in &s.vertices {
            let r = p.x.hypot(p.z);
            if r > 1e-12 {
                assert!((r - 5.0).abs() < 1e-9);
            }
        }
        assert_closed(&m);
        assert!(signed_volume(&s) > 0.0);
        assert_eq!(m.facades.len(), 4);
        assert!((m.facades[0].mid_normal() - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn setback_is_closed() {
        let m = phys(MassKind::Setback, &[20.0, 16.0, 12.0, 8.0, 0.25]);
        let s = m.solid();
        assert_eq!(s.vertices.len(), 16);
        assert_closed(&m);
        let expected = 20.0 * 16.0 * 12.0 + 10.0 * 8.0 * 8.0;
        assert!((signed_volume(&s) - expected).abs() < 1e-6);
        assert_eq!(m.bounds().1.y, 20.0);
    }

    #[test]
    fn outward_normals() {
        for kind in [MassKind::Box, MassKind::LShape, MassKind::Setback] {
            let v: &[f64] = match kind {
                MassKind::Box => &[10.0, 8.0, 20.0],
                MassKind::LShape => &[20.0, 12.0, 9.0, 0.4, 0.6],
                _ => &[20.0, 16.0, 12.0, 8.0, 0.25],
            };
            let m = phys(kind, v);
            let (w, d) = (v[0], v[1]);
            // footprint membership; the L notch is the back-right corner
            let inside = |x: f64, z: f64| {
                let in_box = x.abs() <= w / 2.0 && z.abs() <= d / 2.0;
                let notch = kind == MassKind::LShape
                    && x > -w / 2.0 + v[3] * w
                    && z < -d / 2.0 + (1.0 - v[4]) * d;
                in_box && !notch
            };
            for f in &m.facades {
                let (c, n) = (f.center(), f.mid_normal());
                assert!(inside(c.x - 0.1 * n.x, c.z - 0.1 * n.z), "{kind:?}");
                assert!(!inside(c.x + 0.1 * n.x, c.z + 0.1 * n.z), "{kind:?}");
            }
        }
    }

    #[test]
    fn unknown_style_is_rejected() {
        let cat = StyleCatalog::builtin();
        let p = MassParameters {
            style_id: 3,
            values_unit: vec![0.5; 3],
        };
        assert!(matches!(
            instantiate_mass(&cat.mass[0], &p),
            Err(GrammarError::UnknownStyle { .. })
        ));
    }
}
