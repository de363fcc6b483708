//! Minimal ASCII Wavefront reader/writer: `v x y z` and `f i j k` only.

use std::fmt::Write as _;

use log::warn;

use super::TriangleMesh;
use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjError {
    pub line: usize,
    pub message: String,
}

fn parse_index(tok: &str) -> Result<u32, String> {
    // `f 1/2/3 ...` style: the vertex index is the first slash field.
    let head = tok.split('/').next().unwrap_or(tok);
    let i: i64 = head.parse().map_err(|e| format!("bad face index {tok:?}: {e}"))?;
    if i < 1 {
        return Err(format!("face index {i} must be 1-based and positive"));
    }
    u32::try_from(i - 1).map_err(|_| format!("face index {i} too large"))
}

/// Parses mesh text. Indices are converted to 0-based but not range-checked;
/// that is reported by scene validation, which knows the owning component.
/// Faces with more than three vertices are fan-triangulated.
pub fn parse_obj(text: &str, source: &str) -> Result<TriangleMesh, ObjError> {
    let mut mesh = TriangleMesh::default();
    let mut ignored = 0usize;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let err = |message: String| ObjError { line: n + 1, message };
        match toks.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for slot in &mut c {
                    let t = toks.next().ok_or_else(|| err("vertex needs 3 coordinates".into()))?;
                    *slot = t.parse().map_err(|e| err(format!("bad coordinate {t:?}: {e}")))?;
                }
                // A fourth (w) component is legal and ignored.
                mesh.vertices.push(Vec3::from(c));
            }
            Some("f") => {
                let idx: Vec<u32> = toks.map(parse_index).collect::<Result<_, _>>().map_err(err)?;
                if idx.len() < 3 {
                    return Err(err(format!("face needs at least 3 indices, found {}", idx.len())));
                }
                for k in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => ignored += 1,
        }
    }
    if ignored > 0 {
        warn!("{source}: ignored {ignored} unsupported line(s)");
    }
    Ok(mesh)
}

pub fn write_obj(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}
