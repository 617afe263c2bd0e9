use std::collections::{BTreeMap, HashMap};

use nalgebra::{Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Semantic label of a mesh; also the OBJ group name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshGroup {
    Wall,
    Window,
    Roof,
    Door,
}

impl MeshGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            MeshGroup::Wall => "wall",
            MeshGroup::Window => "window",
            MeshGroup::Roof => "roof",
            MeshGroup::Door => "door",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "wall" => Some(MeshGroup::Wall),
            "window" => Some(MeshGroup::Window),
            "roof" => Some(MeshGroup::Roof),
            "door" => Some(MeshGroup::Door),
            _ => None,
        }
    }
}

/// One triangle corner: indices into the vertex, uv and normal arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Corner {
    pub vertex: usize,
    pub uv: usize,
    pub normal: usize,
}

pub type Triangle = [Corner; 3];

/// Triangle mesh in meters, y-up.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub uvs: Vec<Vector2<f64>>,
    pub faces: Vec<Triangle>,
    pub group: MeshGroup,
    pub material: String,
}

impl Mesh {
    pub fn new(group: MeshGroup, material: impl Into<String>) -> Self {
        Mesh {
            vertices: Vec::new(),
            normals: Vec::new(),
            uvs: Vec::new(),
            faces: Vec::new(),
            group,
            material: material.into(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Checks index ranges and unit normals.
    pub fn validate(&self) -> Result<(), String> {
        for (i, tri) in self.faces.iter().enumerate() {
            for c in tri {
                if c.vertex >= self.vertices.len()
                    || c.uv >= self.uvs.len()
                    || c.normal >= self.normals.len()
                {
                    return Err(format!("face {i} index out of range"));
                }
            }
        }
        for (i, n) in self.normals.iter().enumerate() {
            if (n.norm() - 1.0).abs() > 1e-6 {
                return Err(format!("normal {i} is not unit length"));
            }
        }
        Ok(())
    }

    pub fn triangles(&self) -> impl Iterator<Item = [Point3<f64>; 3]> + '_ {
        self.faces.iter().map(move |t| {
            [
                self.vertices[t[0].vertex],
                self.vertices[t[1].vertex],
                self.vertices[t[2].vertex],
            ]
        })
    }

    /// Axis-aligned bounds `(min, max)`; `None` for an empty vertex list.
    pub fn bounds(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), p| {
            (
                Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)),
                Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)),
            )
        }))
    }

    /// Concatenates meshes, merging vertices with bit-identical positions.
    /// The result takes the group and material of `self`.
    pub fn welded(parts: &[&Mesh], group: MeshGroup, material: &str) -> Mesh {
        let mut out = MeshBuilder::new(group, material);
        for m in parts {
            for tri in &m.faces {
                let corners =
                    tri.map(|c| out.corner(m.vertices[c.vertex], m.normals[c.normal], m.uvs[c.uv]));
                out.mesh.faces.push(corners);
            }
        }
        out.finish()
    }

    /// Counts how many triangles use each undirected edge.
    pub fn edge_use(&self) -> HashMap<(usize, usize), usize> {
        let mut uses = HashMap::new();
        for tri in &self.faces {
            for k in 0..3 {
                let a = tri[k].vertex;
                let b = tri[(k + 1) % 3].vertex;
                *uses.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        uses
    }
}

fn key3(p: &Point3<f64>) -> [u64; 3] {
    // +0.0 and -0.0 must weld together
    [p.x + 0.0, p.y + 0.0, p.z + 0.0].map(f64::to_bits)
}

/// Incremental mesh construction with shared-vertex deduplication.
pub struct MeshBuilder {
    mesh: Mesh,
    vertex_ids: BTreeMap<[u64; 3], usize>,
    normal_ids: BTreeMap<[u64; 3], usize>,
    uv_ids: BTreeMap<[u64; 2], usize>,
}

impl MeshBuilder {
    pub fn new(group: MeshGroup, material: &str) -> Self {
        MeshBuilder {
            mesh: Mesh::new(group, material),
            vertex_ids: BTreeMap::new(),
            normal_ids: BTreeMap::new(),
            uv_ids: BTreeMap::new(),
        }
    }

    fn corner(&mut self, p: Point3<f64>, n: Vector3<f64>, uv: Vector2<f64>) -> Corner {
        let vertex = *self.vertex_ids.entry(key3(&p)).or_insert_with(|| {
            self.mesh.vertices.push(p);
            self.mesh.vertices.len() - 1
        });
        let n = n.normalize();
        let normal = *self
            .normal_ids
            .entry(key3(&Point3::from(n)))
            .or_insert_with(|| {
                self.mesh.normals.push(n);
                self.mesh.normals.len() - 1
            });
        let uv_key = [uv.x + 0.0, uv.y + 0.0].map(f64::to_bits);
        let uv = *self.uv_ids.entry(uv_key).or_insert_with(|| {
            self.mesh.uvs.push(uv);
            self.mesh.uvs.len() - 1
        });
        Corner { vertex, uv, normal }
    }

    /// Adds a triangle with one flat normal.
    pub fn triangle(&mut self, p: [Point3<f64>; 3], uv: [Vector2<f64>; 3], n: Vector3<f64>) {
        let corners = [
            self.corner(p[0], n, uv[0]),
            self.corner(p[1], n, uv[1]),
            self.corner(p[2], n, uv[2]),
        ];
        self.mesh.faces.push(corners);
    }

    /// Adds a triangle with per-corner normals.
    pub fn triangle_smooth(
        &mut self,
        p: [Point3<f64>; 3],
        uv: [Vector2<f64>; 3],
        n: [Vector3<f64>; 3],
    ) {
        let corners = [
            self.corner(p[0], n[0], uv[0]),
            self.corner(p[1], n[1], uv[1]),
            self.corner(p[2], n[2], uv[2]),
        ];
        self.mesh.faces.push(corners);
    }

    /// Adds a planar quad `a b c d` (counter-clockwise seen from outside) as two
    /// triangles sharing the `a c` diagonal.
    pub fn quad(&mut self, p: [Point3<f64>; 4], n: Vector3<f64>) {
        let uv = [
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(0.0, 1.0),
        ];
        self.triangle([p[0], p[1], p[2]], [uv[0], uv[1], uv[2]], n);
        self.triangle([p[0], p[2], p[3]], [uv[0], uv[2], uv[3]], n);
    }

    pub fn finish(self) -> Mesh {
        self.mesh
    }
}

/// Diffuse material; colors are sRGB bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Material {
    pub diffuse: [u8; 3],
    pub texture: Option<String>,
}

/// Complete building: meshes plus the material table they reference.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingModel {
    pub meshes: Vec<Mesh>,
    pub materials: BTreeMap<String, Material>,
}

impl BuildingModel {
    pub fn validate(&self) -> Result<(), String> {
        for (i, m) in self.meshes.iter().enumerate() {
            m.validate().map_err(|e| format!("mesh {i}: {e}"))?;
            if !self.materials.contains_key(&m.material) {
                return Err(format!(
                    "mesh {i} references unknown material {:?}",
                    m.material
                ));
            }
        }
        Ok(())
    }

    pub fn count_group(&self, group: MeshGroup) -> usize {
        self.meshes.iter().filter(|m| m.group == group).count()
    }

    pub fn face_count(&self) -> usize {
        self.meshes.iter().map(|m| m.faces.len()).sum()
    }

    pub fn vertex_count(&self) -> usize {
        self.meshes.iter().map(|m| m.vertices.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_dedupes_shared_positions() {
        let mut b = MeshBuilder::new(MeshGroup::Wall, "wall");
        let p = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        b.quad(p, Vector3::z());
        let m = b.finish();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.faces.len(), 2);
        assert_eq!(m.normals.len(), 1);
        m.validate().unwrap();
    }

    #[test]
    fn negative_zero_welds() {
        let mut b = MeshBuilder::new(MeshGroup::Wall, "wall");
        let uv = [Vector2::zeros(); 3];
        b.triangle(
            [
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            uv,
            Vector3::z(),
        );
        b.triangle(
            [
                Point3::new(-0.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(-1.0, 0.0, 0.0),
            ],
            uv,
            Vector3::z(),
        );
        assert_eq!(b.finish().vertices.len(), 4);
    }

    #[test]
    fn validate_rejects_bad_index() {
        let mut m = Mesh::new(MeshGroup::Roof, "roof");
        m.vertices.push(Point3::origin());
        m.normals.push(Vector3::y());
        m.uvs.push(Vector2::zeros());
        let c = Corner {
            vertex: 0,
            uv: 0,
            normal: 0,
        };
        m.faces.push([c, c, Corner { vertex: 3, ..c }]);
        assert!(m.validate().is_err());
    }
}
