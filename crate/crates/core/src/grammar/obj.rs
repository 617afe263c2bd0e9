//! Wavefront OBJ/MTL subset: `v`, `vt`, `vn`, `f`, `g`, `usemtl`, `mtllib`,
//! `newmtl`, `Kd`, `map_Kd`. Numbers are written with six fixed decimals and
//! indices are 1-based, so identical models produce identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::mesh::BuildingModel;
use super::GrammarError;

pub const OBJ_FILE: &str = "model.obj";
pub const MTL_FILE: &str = "model.mtl";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ObjError {
    pub line: usize,
    pub message: String,
}

fn num(v: f64) -> String {
    // keep "-0.000000" out of the output
    let v = if v.abs() < 5e-7 { 0.0 } else { v };
    format!("{v:.6}")
}

pub fn write_obj(model: &BuildingModel) -> String {
    let mut out = String::new();
    out.push_str("# p2b building model\n");
    let _ = writeln!(out, "mtllib {MTL_FILE}");
    let (mut v_base, mut vt_base, mut vn_base) = (1, 1, 1);
    for mesh in &model.meshes {
        let _ = writeln!(out, "g {}", mesh.group.as_str());
        let _ = writeln!(out, "usemtl {}", mesh.material);
        for p in &mesh.vertices {
            let _ = writeln!(out, "v {} {} {}", num(p.x), num(p.y), num(p.z));
        }
        for t in &mesh.uvs {
            let _ = writeln!(out, "vt {} {}", num(t.x), num(t.y));
        }
        for n in &mesh.normals {
            let _ = writeln!(out, "vn {} {} {}", num(n.x), num(n.y), num(n.z));
        }
        for tri in &mesh.faces {
            out.push('f');
            for c in tri {
                let _ = write!(
                    out,
                    " {}/{}/{}",
                    c.vertex + v_base,
                    c.uv + vt_base,
                    c.normal + vn_base
                );
            }
            out.push('\n');
        }
        v_base += mesh.vertices.len();
        vt_base += mesh.uvs.len();
        vn_base += mesh.normals.len();
    }
    out
}

pub fn write_mtl(model: &BuildingModel) -> String {
    let mut out = String::from("# p2b materials\n");
    for (name, m) in &model.materials {
        let [r, g, b] = m.diffuse.map(|c| c as f64 / 255.0);
        let _ = writeln!(out, "newmtl {name}");
        let _ = writeln!(out, "Kd {} {} {}", num(r), num(g), num(b));
        if let Some(tex) = &m.texture {
            let _ = writeln!(out, "map_Kd {tex}");
        }
    }
    out
}

/// Writes `model.obj` and `model.mtl` into `out_dir` and returns their paths.
pub fn export_obj(model: &BuildingModel, out_dir: &Path) -> Result<Vec<PathBuf>, GrammarError> {
    fs::create_dir_all(out_dir)?;
    let obj = out_dir.join(OBJ_FILE);
    let mtl = out_dir.join(MTL_FILE);
    fs::write(&obj, write_obj(model))?;
    fs::write(&mtl, write_mtl(model))?;
    Ok(vec![obj, mtl])
}

/// One polygon with 0-based indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjFace {
    pub vertices: Vec<usize>,
    pub uvs: Vec<Option<usize>>,
    pub normals: Vec<Option<usize>>,
    pub group: String,
    pub material: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjDocument {
    pub mtllib: Option<String>,
    pub vertices: Vec<[f64; 3]>,
    pub uvs: Vec<[f64; 2]>,
    pub normals: Vec<[f64; 3]>,
    pub faces: Vec<ObjFace>,
}

impl ObjDocument {
    /// Face count per `(group, material)` pair.
    pub fn faces_by_group(&self) -> BTreeMap<(String, String), usize> {
        let mut out = BTreeMap::new();
        for f in &self.faces {
            *out.entry((f.group.clone(), f.material.clone()))
                .or_insert(0) += 1;
        }
        out
    }
}

fn floats<const N: usize>(parts: &[&str], line: usize) -> Result<[f64; N], ObjError> {
    if parts.len() < N {
        return Err(ObjError {
            line,
            message: format!("expected {N} numbers"),
        });
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| ObjError {
                line,
                message: format!("bad number {p:?}"),
            })?;
    }
    Ok(out)
}

fn index(token: &str, count: usize, line: usize) -> Result<usize, ObjError> {
    let raw: i64 = token.parse().map_err(|_| ObjError {
        line,
        message: format!("bad index {token:?}"),
    })?;
    let resolved = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as i64 + raw
    } else {
        -1
    };
    if resolved < 0 || resolved as usize >= count {
        return Err(ObjError {
            line,
            message: format!("index {raw} out of range"),
        });
    }
    Ok(resolved as usize)
}

/// Parses the OBJ subset written by [`write_obj`]. Unknown statements are
/// skipped; malformed known statements are errors.
pub fn parse_obj(text: &str) -> Result<ObjDocument, ObjError> {
    let mut doc = ObjDocument::default();
    let mut group = String::from("default");
    let mut material = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut parts = content.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        match tag {
            "v" => doc.vertices.push(floats::<3>(&rest, line)?),
            "vt" => doc.uvs.push(floats::<2>(&rest, line)?),
            "vn" => doc.normals.push(floats::<3>(&rest, line)?),
            "g" | "o" => group = rest.first().copied().unwrap_or("default").to_string(),
            "usemtl" => {
                material = rest
                    .first()
                    .ok_or_else(|| ObjError {
                        line,
                        message: "usemtl without name".into(),
                    })?
                    .to_string()
            }
            "mtllib" => doc.mtllib = rest.first().map(|s| s.to_string()),
            "f" => {
                if rest.len() < 3 {
                    return Err(ObjError {
                        line,
                        message: "face needs at least 3 corners".into(),
                    });
                }
                let mut face = ObjFace {
                    vertices: Vec::with_capacity(rest.len()),
                    uvs: Vec::with_capacity(rest.len()),
                    normals: Vec::with_capacity(rest.len()),
                    group: group.clone(),
                    material: material.clone(),
                };
                for corner in rest {
                    let mut it = corner.split('/');
                    let v = it.next().unwrap_or("");
                    face.vertices.push(index(v, doc.vertices.len(), line)?);
                    let vt = it.next().filter(|s| !s.is_empty());
                    face.uvs
                        .push(vt.map(|s| index(s, doc.uvs.len(), line)).transpose()?);
                    let vn = it.next().filter(|s| !s.is_empty());
                    face.normals
                        .push(vn.map(|s| index(s, doc.normals.len(), line)).transpose()?);
                    if it.next().is_some() {
                        return Err(ObjError {
                            line,
                            message: format!("bad corner {corner:?}"),
                        });
                    }
                }
                doc.faces.push(face);
            }
            _ => {}
        }
    }
    Ok(doc)
}

/// Parses `newmtl`/`Kd`/`map_Kd` records into name → (Kd, texture).
pub fn parse_mtl(text: &str) -> Result<BTreeMap<String, ([f64; 3], Option<String>)>, ObjError> {
    let mut out: BTreeMap<String, ([f64; 3], Option<String>)> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut parts = content.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        let need_current = |c: &Option<String>| {
            c.clone().ok_or_else(|| ObjError {
                line,
                message: format!("{tag} before newmtl"),
            })
        };
        match tag {
            "newmtl" => {
                let name = rest.first().ok_or_else(|| ObjError {
                    line,
                    message: "newmtl without name".into(),
                })?;
                out.insert(name.to_string(), ([0.0; 3], None));
                current = Some(name.to_string());
            }
            "Kd" => {
                let name = need_current(&current)?;
                let kd = floats::<3>(&rest, line)?;
                if let Some(e) = out.get_mut(&name) {
                    e.0 = kd;
                }
            }
            "map_Kd" => {
                let name = need_current(&current)?;
                if let Some(e) = out.get_mut(&name) {
                    e.1 = rest.last().map(|s| s.to_string());
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::mesh::{Material, MeshBuilder, MeshGroup};
    use nalgebra::{Point3, Vector3};

    fn quad_model() -> BuildingModel {
        let mut b = MeshBuilder::new(MeshGroup::Wall, "wall");
        b.quad(
            [
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            Vector3::z(),
        );
        let mut materials = BTreeMap::new();
        materials.insert(
            "wall".into(),
            Material {
                diffuse: [178, 168, 152],
                texture: None,
            },
        );
        BuildingModel {
            meshes: vec![b.finish()],
            materials,
        }
    }

    #[test]
    fn single_quad_counts() {
        let text = write_obj(&quad_model());
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 4);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 2);
        assert!(text.contains("mtllib model.mtl"));
        assert!(text.contains("usemtl wall"));
    }

    #[test]
    fn kd_is_six_decimals() {
        let mtl = write_mtl(&quad_model());
        assert!(
            mtl.contains("newmtl wall\nKd 0.698039 0.658824 0.596078\n"),
            "{mtl}"
        );
    }

    #[test]
    fn parse_handles_index_forms() {
        let doc = parse_obj(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1 2 3\nf 1//1 2//1 3//1\nf -3 -2 -1\n",
        )
        .unwrap();
        assert_eq!(doc.faces.len(), 3);
        assert_eq!(doc.faces[1].normals, vec![Some(0); 3]);
        assert_eq!(doc.faces[2].vertices, vec![0, 1, 2]);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let err = parse_obj("v 0 0 0\nf 1 2 3\n").unwrap_err();
        assert_eq!(err.line, 2);
        let err = parse_obj("v 0 zero 0\n").unwrap_err();
        assert_eq!(err.line, 1);
        assert!(parse_obj("v 0 0 0\nf 0 1 1\n").is_err());
    }

    #[test]
    fn parse_mtl_roundtrip() {
        let mut m = quad_model();
        m.materials.get_mut("wall").unwrap().texture = Some("brick.png".into());
        let parsed = parse_mtl(&write_mtl(&m)).unwrap();
        let (kd, tex) = &parsed["wall"];
        assert!((kd[0] - 178.0 / 255.0).abs() < 1e-6);
        assert_eq!(tex.as_deref(), Some("brick.png"));
    }

    #[test]
    fn export_writes_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let files = export_obj(&quad_model(), dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        assert!(files.iter().all(|f| f.exists()));
        let unwritable = dir.path().join("model.obj").join("nested");
        assert!(matches!(
            export_obj(&quad_model(), &unwritable),
            Err(GrammarError::Io(_))
        ));
    }
}
