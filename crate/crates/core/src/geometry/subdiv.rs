//! Catmull-Clark refinement and the 1 -> 4 face hierarchy built from it.

use std::collections::HashMap;

use super::mesh::{add, scale, QuadMesh, Vec3, BOUNDARY};
use crate::error::{Error, Result};

/// One Catmull-Clark step. Child `4 f + k` of face `f` is the quad
/// `[corner k, edge point k, face point, edge point k-1]`, so it keeps the
/// parent's orientation and its edge 0 lies on the parent's edge `k`.
/// Returns the refined mesh and the parent index of every new face.
pub fn catmull_clark(mesh: &QuadMesh) -> Result<(QuadMesh, Vec<u32>)> {
    let verts = mesh.vertices();
    let faces = mesh.faces();
    let nv = verts.len();

    let face_points: Vec<Vec3> = faces
        .iter()
        .map(|f| scale(f.iter().fold([0.0; 3], |acc, &v| add(acc, verts[v as usize])), 0.25))
        .collect();

    // Unique edges in first-seen order, with their incident faces.
    let mut edge_index: HashMap<(u32, u32), usize> = HashMap::new();
    let mut edges: Vec<(u32, u32)> = Vec::new();
    let mut edge_faces: Vec<Vec<usize>> = Vec::new();
    let mut face_edges = vec![[0usize; 4]; faces.len()];
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..4 {
            let (a, b) = (f[k], f[(k + 1) % 4]);
            let key = (a.min(b), a.max(b));
            let e = *edge_index.entry(key).or_insert_with(|| {
                edges.push(key);
                edge_faces.push(Vec::new());
                edges.len() - 1
            });
            edge_faces[e].push(fi);
            face_edges[fi][k] = e;
        }
    }
    if edge_faces.iter().any(|f| f.len() > 2) {
        let e = edges[edge_faces.iter().position(|f| f.len() > 2).unwrap()];
        return Err(Error::NonManifold(e.0, e.1));
    }

    let midpoint = |e: (u32, u32)| scale(add(verts[e.0 as usize], verts[e.1 as usize]), 0.5);
    let edge_points: Vec<Vec3> = edges
        .iter()
        .zip(&edge_faces)
        .map(|(&e, fs)| {
            if fs.len() == 2 {
                let s = add(
                    add(verts[e.0 as usize], verts[e.1 as usize]),
                    add(face_points[fs[0]], face_points[fs[1]]),
                );
                scale(s, 0.25)
            } else {
                midpoint(e)
            }
        })
        .collect();

    let mut v_faces: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for (fi, f) in faces.iter().enumerate() {
        for &v in f {
            v_faces[v as usize].push(fi);
        }
    }
    let mut v_edges: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for (ei, e) in edges.iter().enumerate() {
        v_edges[e.0 as usize].push(ei);
        v_edges[e.1 as usize].push(ei);
    }

    let moved: Vec<Vec3> = (0..nv)
        .map(|v| {
            let p = verts[v];
            let fs = &v_faces[v];
            let es = &v_edges[v];
            if fs.is_empty() {
                return p;
            }
            let boundary: Vec<usize> = es.iter().copied().filter(|&e| edge_faces[e].len() == 1).collect();
            if boundary.is_empty() {
                let n = fs.len() as f64;
                let q = scale(fs.iter().fold([0.0; 3], |a, &f| add(a, face_points[f])), 1.0 / n);
                let r = scale(es.iter().fold([0.0; 3], |a, &e| add(a, midpoint(edges[e]))), 1.0 / es.len() as f64);
                scale(add(add(q, scale(r, 2.0)), scale(p, n - 3.0)), 1.0 / n)
            } else if boundary.len() == 2 && fs.len() > 1 {
                let other = |e: usize| {
                    let (a, b) = edges[e];
                    verts[if a as usize == v { b } else { a } as usize]
                };
                let s = add(add(other(boundary[0]), other(boundary[1])), scale(p, 6.0));
                scale(s, 1.0 / 8.0)
            } else {
                // corners and pinched boundary vertices stay put
                p
            }
        })
        .collect();

    let ne = edges.len();
    let mut vertices = moved;
    vertices.extend(edge_points);
    vertices.extend(face_points);
    let ep = |e: usize| (nv + e) as u32;
    let fp = |f: usize| (nv + ne + f) as u32;

    let mut new_faces = Vec::with_capacity(4 * faces.len());
    let mut parents = Vec::with_capacity(4 * faces.len());
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..4 {
            let e_next = face_edges[fi][k];
            let e_prev = face_edges[fi][(k + 3) % 4];
            new_faces.push([f[k], ep(e_next), fp(fi), ep(e_prev)]);
            parents.push(fi as u32);
        }
    }
    Ok((QuadMesh::new(vertices, new_faces)?, parents))
}

/// Quad meshes from coarse (level 0) to fine with exact 1 -> 4 parenting.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadMeshHierarchy {
    levels: Vec<QuadMesh>,
    /// `parent_of[l - 1][f]` is the level `l - 1` parent of face `f` at level `l`.
    parent_of: Vec<Vec<u32>>,
}

impl QuadMeshHierarchy {
    /// Assemble from explicit levels and parent links, checking the 1 -> 4 rule.
    pub fn from_parts(levels: Vec<QuadMesh>, parent_of: Vec<Vec<u32>>) -> Result<Self> {
        if levels.is_empty() || parent_of.len() + 1 != levels.len() {
            return Err(Error::InvalidMesh(format!(
                "{} levels with {} parent maps",
                levels.len(),
                parent_of.len()
            )));
        }
        for l in 1..levels.len() {
            let (coarse, fine) = (levels[l - 1].n_faces(), levels[l].n_faces());
            let parents = &parent_of[l - 1];
            if fine != 4 * coarse || parents.len() != fine {
                return Err(Error::MissingLinks(l - 1, l));
            }
            let mut count = vec![0u8; coarse];
            for &p in parents {
                let p = p as usize;
                if p >= coarse {
                    return Err(Error::MissingLinks(l - 1, l));
                }
                count[p] += 1;
            }
            if count.iter().any(|&c| c != 4) {
                return Err(Error::MissingLinks(l - 1, l));
            }
        }
        Ok(Self { levels, parent_of })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &QuadMesh {
        &self.levels[l]
    }

    pub fn levels(&self) -> &[QuadMesh] {
        &self.levels
    }

    pub fn finest(&self) -> &QuadMesh {
        self.levels.last().expect("at least one level")
    }

    /// Parents (at `level - 1`) of the faces at `level`.
    pub fn parents(&self, level: usize) -> Result<&[u32]> {
        if level == 0 || level >= self.levels.len() {
            return Err(Error::MissingLinks(level.saturating_sub(1), level));
        }
        Ok(&self.parent_of[level - 1])
    }

    /// Copy with every level's vertices mapped through `f`.
    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> Self {
        Self {
            levels: self.levels.iter().map(|m| m.map_vertices(&f)).collect(),
            parent_of: self.parent_of.clone(),
        }
    }

    /// Children (at `level + 1`) of every face at `level`, in face order.
    pub fn children(&self, level: usize) -> Result<Vec<[u32; 4]>> {
        let parents = self.parents(level + 1)?;
        let mut out = vec![[BOUNDARY; 4]; self.levels[level].n_faces()];
        let mut fill = vec![0usize; out.len()];
        for (child, &p) in parents.iter().enumerate() {
            let p = p as usize;
            out[p][fill[p]] = child as u32;
            fill[p] += 1;
        }
        Ok(out)
    }
}

/// Build `levels` levels by repeated Catmull-Clark refinement of `mesh`.
pub fn subdivide(mesh: &QuadMesh, levels: usize) -> Result<QuadMeshHierarchy> {
    if levels == 0 {
        return Err(Error::InvalidArgument("hierarchy needs at least one level".into()));
    }
    let mut meshes = vec![mesh.clone()];
    let mut parents = Vec::new();
    for _ in 1..levels {
        let (next, p) = catmull_clark(meshes.last().unwrap())?;
        meshes.push(next);
        parents.push(p);
    }
    QuadMeshHierarchy::from_parts(meshes, parents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    #[test]
    fn cube_face_counts() {
        let h = subdivide(&shapes::unit_cube(), 3).unwrap();
        assert_eq!(h.level(1).n_faces(), 24);
        assert_eq!(h.level(2).n_faces(), 96);
        for c in h.children(0).unwrap() {
            assert!(c.iter().all(|&x| x != BOUNDARY));
        }
    }

    #[test]
    fn single_quad_center_is_corner_average() {
        let q = shapes::single_quad();
        let h = subdivide(&q, 2).unwrap();
        let fine = h.level(1);
        assert_eq!(fine.n_faces(), 4);
        // corner 2 of every child is the shared face point
        let c = fine.faces()[0][2];
        assert!(fine.faces().iter().all(|f| f[2] == c));
        let p = fine.vertices()[c as usize];
        assert_eq!(p, [0.5, 0.5, 0.0]);
    }

    #[test]
    fn zero_levels_rejected() {
        assert!(subdivide(&shapes::unit_cube(), 0).is_err());
    }

    #[test]
    fn mismatched_parts_rejected() {
        let c = shapes::unit_cube();
        assert!(matches!(
            QuadMeshHierarchy::from_parts(vec![c.clone(), c], vec![vec![0; 6]]),
            Err(Error::MissingLinks(0, 1))
        ));
    }
}
