//! Wavefront OBJ input restricted to quads (triangle pairs are merged).

use std::collections::HashMap;
use std::path::Path;

use super::mesh::{cross, dot, norm, sub, QuadMesh, Vec3};
use crate::error::{Error, Result};

const PLANARITY_TOL: f64 = 1e-3;

enum RawFace {
    Quad([u32; 4]),
    Tri([u32; 3], usize),
}

pub fn load_obj(path: &Path) -> Result<QuadMesh> {
    let text = std::fs::read_to_string(path)?;
    parse_obj(&text, path)
}

pub fn parse_obj(text: &str, path: &Path) -> Result<QuadMesh> {
    let perr = |line: usize, msg: String| Error::ObjParse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let xs: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| perr(lineno, format!("bad coordinate `{}`: {}", t, e))))
                    .collect::<Result<_>>()?;
                if xs.len() != 3 {
                    return Err(perr(lineno, "vertex needs 3 coordinates".into()));
                }
                vertices.push([xs[0], xs[1], xs[2]]);
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let v: i64 = first
                            .parse()
                            .map_err(|e| perr(lineno, format!("bad index `{}`: {}", t, e)))?;
                        let resolved = if v < 0 { vertices.len() as i64 + v } else { v - 1 };
                        if resolved < 0 || resolved >= vertices.len() as i64 {
                            return Err(perr(lineno, format!("index {} out of range", v)));
                        }
                        Ok(resolved as u32)
                    })
                    .collect::<Result<_>>()?;
                match idx.len() {
                    4 => raw.push(RawFace::Quad([idx[0], idx[1], idx[2], idx[3]])),
                    3 => raw.push(RawFace::Tri([idx[0], idx[1], idx[2]], lineno)),
                    n => return Err(Error::NonQuad { line: lineno, sides: n }),
                }
            }
            _ => {}
        }
    }
    let faces = merge_triangles(raw, &vertices)?;
    let mut mesh = QuadMesh::new(vertices, faces)?;
    mesh.orient_consistently()?;
    Ok(mesh)
}

/// Pair triangles across shared edges into planar quads, keeping file order.
fn merge_triangles(raw: Vec<RawFace>, vertices: &[Vec3]) -> Result<Vec<[u32; 4]>> {
    let tris: Vec<([u32; 3], usize)> = raw
        .iter()
        .filter_map(|f| match f {
            RawFace::Tri(t, l) => Some((*t, *l)),
            _ => None,
        })
        .collect();
    let mut by_edge: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (ti, (t, _)) in tris.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            by_edge.entry((a.min(b), a.max(b))).or_default().push(ti);
        }
    }
    let mut partner: Vec<Option<[u32; 4]>> = vec![None; tris.len()];
    let mut used = vec![false; tris.len()];
    for ti in 0..tris.len() {
        if used[ti] {
            continue;
        }
        let t = tris[ti].0;
        'edges: for k in 0..3 {
            let (a, b, c) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
            for &ui in &by_edge[&(a.min(b), a.max(b))] {
                if ui == ti || used[ui] {
                    continue;
                }
                let u = tris[ui].0;
                let Some(d) = u.iter().copied().find(|&x| x != a && x != b) else {
                    continue;
                };
                if d == c || !coplanar(vertices, [a, b, c], d) {
                    continue;
                }
                // t walks a->b->c, u walks b->a->d; the union is a->d->b->c.
                partner[ti] = Some([a, d, b, c]);
                used[ti] = true;
                used[ui] = true;
                break 'edges;
            }
        }
        if !used[ti] {
            return Err(Error::NonQuad {
                line: tris[ti].1,
                sides: 3,
            });
        }
    }
    let mut faces = Vec::new();
    let mut ti = 0;
    for f in raw {
        match f {
            RawFace::Quad(q) => faces.push(q),
            RawFace::Tri(..) => {
                if let Some(q) = partner[ti] {
                    faces.push(q);
                }
                ti += 1;
            }
        }
    }
    Ok(faces)
}

fn coplanar(v: &[Vec3], tri: [u32; 3], d: u32) -> bool {
    let [a, b, c] = tri.map(|i| v[i as usize]);
    let n = cross(sub(b, a), sub(c, a));
    let nn = norm(n);
    if nn == 0.0 {
        return false;
    }
    let scale = (norm(sub(b, a)) + norm(sub(c, a)) + norm(sub(c, b))) / 3.0;
    let dist = dot(sub(v[d as usize], a), n).abs() / nn;
    dist <= PLANARITY_TOL * scale
}

/// ASCII OBJ text for a quad mesh (1-based indices).
pub fn to_obj_string(mesh: &QuadMesh) -> String {
    let mut s = String::new();
    for v in mesh.vertices() {
        s.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
    }
    for f in mesh.faces() {
        s.push_str(&format!("f {} {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1, f[3] + 1));
    }
    s
}
