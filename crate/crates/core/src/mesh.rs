//! Triangle mesh loading, validation and normalization.
//!
//! Meshes come in as ASCII Wavefront OBJ (v / vt / vn / f, comments).
//! Faces with more than three vertices are fan-triangulated. Normals are
//! parsed and discarded since nothing in the pipeline shades with lighting.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type V3 = Vector3<f64>;

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub positions: Vec<V3>,
    pub triangles: Vec<[usize; 3]>,
    pub uvs: Option<Vec<[f64; 2]>>,
    /// Parallel to `triangles` when present.
    pub uv_triangles: Option<Vec<[usize; 3]>>,
}

/// Transform applied by [`normalize_mesh`], kept for provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizeReport {
    pub translation: V3,
    pub scale: f64,
    pub dropped_degenerate: usize,
}

impl TriangleMesh {
    pub fn has_uvs(&self) -> bool {
        self.uvs.is_some() && self.uv_triangles.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.triangles.iter().enumerate() {
            for &v in t {
                if v >= self.positions.len() {
                    return Err(Error::MeshInvalid(format!(
                        "triangle {i} references position {v} out of {}",
                        self.positions.len()
                    )));
                }
            }
        }
        match (&self.uvs, &self.uv_triangles) {
            (Some(uvs), Some(uvt)) => {
                if uvt.len() != self.triangles.len() {
                    return Err(Error::MeshInvalid(format!(
                        "uv_triangles len {} != triangles len {}",
                        uvt.len(),
                        self.triangles.len()
                    )));
                }
                for (i, t) in uvt.iter().enumerate() {
                    for &v in t {
                        if v >= uvs.len() {
                            return Err(Error::MeshInvalid(format!(
                                "uv triangle {i} references uv {v} out of {}",
                                uvs.len()
                            )));
                        }
                    }
                }
            }
            (None, None) => {}
            _ => {
                return Err(Error::MeshInvalid(
                    "uvs and uv_triangles must both be present or both absent".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangles[i];
        let e1 = self.positions[b] - self.positions[a];
        let e2 = self.positions[c] - self.positions[a];
        0.5 * e1.cross(&e2).norm()
    }
}

fn parse_index(tok: &str, count: usize, path: &Path, line: usize) -> Result<usize> {
    let raw: isize = tok.parse().map_err(|_| Error::ObjParse {
        path: path.to_path_buf(),
        line,
        message: format!("bad index '{tok}'"),
    })?;
    // OBJ is 1-based; negative indices count back from the end.
    let idx = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as isize + raw
    } else {
        -1
    };
    if idx < 0 || idx as usize >= count {
        return Err(Error::ObjIndex {
            path: path.to_path_buf(),
            line,
            index: raw,
        });
    }
    Ok(idx as usize)
}

pub fn load_obj(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
    let mut positions: Vec<V3> = Vec::new();
    let mut uvs: Vec<[f64; 2]> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let mut uv_triangles: Vec<Option<[usize; 3]>> = Vec::new();

    let parse_err = |line: usize, message: String| Error::ObjParse {
        path: path.to_path_buf(),
        line,
        message,
    };

    for (lineno, raw_line) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let key = toks.next().unwrap();
        match key {
            "v" => {
                let mut xyz = [0.0f64; 3];
                for v in xyz.iter_mut() {
                    let tok = toks
                        .next()
                        .ok_or_else(|| parse_err(line, "v record needs 3 coordinates".into()))?;
                    *v = tok
                        .parse()
                        .map_err(|_| parse_err(line, format!("bad coordinate '{tok}'")))?;
                }
                positions.push(V3::new(xyz[0], xyz[1], xyz[2]));
            }
            "vt" => {
                let mut uv = [0.0f64; 2];
                for v in uv.iter_mut() {
                    let tok = toks
                        .next()
                        .ok_or_else(|| parse_err(line, "vt record needs 2 coordinates".into()))?;
                    *v = tok
                        .parse()
                        .map_err(|_| parse_err(line, format!("bad coordinate '{tok}'")))?;
                }
                uvs.push(uv);
            }
            "vn" => {} // parsed and ignored
            "f" => {
                let mut verts: Vec<(usize, Option<usize>)> = Vec::new();
                for tok in toks {
                    let mut parts = tok.split('/');
                    let v_tok = parts.next().unwrap();
                    let v = parse_index(v_tok, positions.len(), path, line)?;
                    let vt = match parts.next() {
                        Some("") | None => None,
                        Some(t) => Some(parse_index(t, uvs.len(), path, line)?),
                    };
                    // any trailing /vn component is ignored
                    verts.push((v, vt));
                }
                if verts.len() < 3 {
                    return Err(parse_err(line, "face needs at least 3 vertices".into()));
                }
                let has_uv = verts.iter().all(|(_, vt)| vt.is_some());
                for k in 1..verts.len() - 1 {
                    let tri = [verts[0].0, verts[k].0, verts[k + 1].0];
                    triangles.push(tri);
                    uv_triangles.push(if has_uv {
                        Some([
                            verts[0].1.unwrap(),
                            verts[k].1.unwrap(),
                            verts[k + 1].1.unwrap(),
                        ])
                    } else {
                        None
                    });
                }
            }
            // other records (o, g, s, usemtl, mtllib, ...) are ignored
            _ => {}
        }
    }

    let all_uv = !uv_triangles.is_empty() && uv_triangles.iter().all(|t| t.is_some());
    let mesh = TriangleMesh {
        positions,
        triangles,
        uvs: if all_uv && !uvs.is_empty() {
            Some(uvs)
        } else {
            None
        },
        uv_triangles: if all_uv {
            Some(uv_triangles.into_iter().map(|t| t.unwrap()).collect())
        } else {
            None
        },
    };
    mesh.validate()?;
    Ok(mesh)
}

/// Minimal OBJ writer; `{}` formatting round-trips f64 exactly.
pub fn save_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut out = String::new();
    for p in &mesh.positions {
        writeln!(out, "v {} {} {}", p.x, p.y, p.z).unwrap();
    }
    if let Some(uvs) = &mesh.uvs {
        for uv in uvs {
            writeln!(out, "vt {} {}", uv[0], uv[1]).unwrap();
        }
    }
    for (i, t) in mesh.triangles.iter().enumerate() {
        match &mesh.uv_triangles {
            Some(uvt) => {
                let u = uvt[i];
                writeln!(
                    out,
                    "f {}/{} {}/{} {}/{}",
                    t[0] + 1,
                    u[0] + 1,
                    t[1] + 1,
                    u[1] + 1,
                    t[2] + 1,
                    u[2] + 1
                )
                .unwrap();
            }
            None => writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap(),
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

const DEGENERATE_AREA: f64 = 1e-12;

/// Recenter the vertex centroid at the origin and scale so the farthest
/// vertex sits at distance 1. Degenerate triangles (area < 1e-12 after the
/// transform) are dropped and counted.
pub fn normalize_mesh(mesh: &TriangleMesh) -> Result<(TriangleMesh, NormalizeReport)> {
    if mesh.positions.is_empty() || mesh.triangles.is_empty() {
        return Err(Error::MeshInvalid("mesh has no triangles".into()));
    }
    let n = mesh.positions.len() as f64;
    let centroid: V3 = mesh.positions.iter().sum::<V3>() / n;
    let max_r = mesh
        .positions
        .iter()
        .map(|p| (p - centroid).norm())
        .fold(0.0f64, f64::max);
    if max_r <= 0.0 {
        return Err(Error::MeshInvalid("all vertices coincide".into()));
    }
    let scale = 1.0 / max_r;
    let positions: Vec<V3> = mesh
        .positions
        .iter()
        .map(|p| (p - centroid) * scale)
        .collect();

    let mut out = TriangleMesh {
        positions,
        triangles: Vec::with_capacity(mesh.triangles.len()),
        uvs: mesh.uvs.clone(),
        uv_triangles: mesh.uv_triangles.as_ref().map(|_| Vec::new()),
    };
    let mut dropped = 0usize;
    for (i, tri) in mesh.triangles.iter().enumerate() {
        let [a, b, c] = *tri;
        let e1 = out.positions[b] - out.positions[a];
        let e2 = out.positions[c] - out.positions[a];
        if 0.5 * e1.cross(&e2).norm() < DEGENERATE_AREA {
            dropped += 1;
            continue;
        }
        out.triangles.push(*tri);
        if let (Some(uvt_out), Some(uvt_in)) = (&mut out.uv_triangles, &mesh.uv_triangles) {
            uvt_out.push(uvt_in[i]);
        }
    }
    if out.triangles.is_empty() {
        return Err(Error::MeshInvalid(
            "all triangles degenerate after normalization".into(),
        ));
    }
    Ok((
        out,
        NormalizeReport {
            translation: -centroid,
            scale,
            dropped_degenerate: dropped,
        },
    ))
}
