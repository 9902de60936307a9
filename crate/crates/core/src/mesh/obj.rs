// SPDX-License-Identifier: Apache-2.0

//! ASCII Wavefront OBJ subset: `v`, `vn` and `f` records.

use std::fmt::Write as _;

use super::{Mesh, Vec3};
use crate::error::{Error, Result};

/// Parses an OBJ document. Polygon faces are fan-triangulated around their
/// first corner; `f a/b/c` style references use only the position index.
/// Negative (relative) indices are resolved against the vertices read so far.
pub fn load_obj(bytes: &[u8]) -> Result<Mesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("not UTF-8: {e}"),
    })?;

    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut faces = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        match tag {
            "v" => vertices.push(parse_vec3(tokens, line)?),
            "vn" => normals.push(parse_vec3(tokens, line)?),
            "f" => {
                let corners = tokens
                    .map(|t| parse_index(t, vertices.len(), line))
                    .collect::<Result<Vec<_>>>()?;
                if corners.len() < 3 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("face needs at least 3 corners, got {}", corners.len()),
                    });
                }
                for k in 1..corners.len() - 1 {
                    faces.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            // Groups, objects, smoothing and material records carry nothing we use.
            "vt" | "g" | "o" | "s" | "usemtl" | "mtllib" | "l" | "vp" => {}
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown record `{other}`"),
                })
            }
        }
    }

    let mesh = Mesh::new(vertices, faces)?;
    if !normals.is_empty() && normals.len() == mesh.num_vertices() {
        mesh.with_normals(normals)
    } else {
        Ok(mesh)
    }
}

fn parse_vec3<'a>(mut tokens: impl Iterator<Item = &'a str>, line: usize) -> Result<Vec3> {
    let mut c = [0.0; 3];
    for slot in &mut c {
        let t = tokens.next().ok_or_else(|| Error::Parse {
            line,
            msg: "expected 3 coordinates".into(),
        })?;
        *slot = t.parse::<f64>().map_err(|e| Error::Parse {
            line,
            msg: format!("bad coordinate `{t}`: {e}"),
        })?;
        if !slot.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("non-finite coordinate `{t}`"),
            });
        }
    }
    Ok(Vec3::new(c[0], c[1], c[2]))
}

fn parse_index(token: &str, n_vertices: usize, line: usize) -> Result<usize> {
    let head = token.split('/').next().unwrap_or("");
    let idx: i64 = head.parse().map_err(|e| Error::Parse {
        line,
        msg: format!("bad face index `{token}`: {e}"),
    })?;
    match idx {
        0 => Err(Error::Parse {
            line,
            msg: "face index 0 is invalid (OBJ is 1-based)".into(),
        }),
        i if i > 0 => Ok((i - 1) as usize),
        i => {
            let back = i.unsigned_abs() as usize;
            if back > n_vertices {
                Err(Error::Structure(format!(
                    "line {line}: relative index {i} before start of vertex list"
                )))
            } else {
                Ok(n_vertices - back)
            }
        }
    }
}

/// Serializes a mesh. Coordinates use the shortest decimal form that parses
/// back to the same `f64`, so a load/save round trip is exact.
pub fn save_obj(mesh: &Mesh) -> Vec<u8> {
    let mut out = String::with_capacity(32 * (mesh.num_vertices() + mesh.num_faces()));
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    if let Some(normals) = mesh.normals() {
        for n in normals {
            let _ = writeln!(out, "vn {} {} {}", n.x, n.y, n.z);
        }
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out.into_bytes()
}
