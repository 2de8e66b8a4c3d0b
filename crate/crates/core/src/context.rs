//! Per-mesh constant structures shared by the generator, field and renderer.

use std::rc::Rc;

use crate::diff::{SparseRows, ZERO_ROW};
use crate::error::{Error, Result};
use crate::geometry::{
    encoder_inputs, face_geometry, noc_frame, Aabb, FaceGeometryFeature, QuadMesh, QuadMeshHierarchy, BOUNDARY,
};

/// Gather tables for face convolution and hierarchy transfer at one level.
#[derive(Clone, Debug)]
pub struct LevelTopology {
    pub n_faces: usize,
    /// `neighbors[k][f]` is the face across edge `k` of `f`, or [`ZERO_ROW`].
    pub neighbors: [Rc<Vec<u32>>; 4],
    /// Mean over the 4 children at the next finer level (absent at the finest).
    pub pool_from_finer: Option<Rc<SparseRows>>,
    /// Parent at the next coarser level (absent at level 0).
    pub parent: Option<Rc<Vec<u32>>>,
}

/// Everything derived once from a hierarchy.
#[derive(Clone, Debug)]
pub struct MeshContext {
    pub hierarchy: QuadMeshHierarchy,
    pub levels: Vec<LevelTopology>,
    /// Finest-level geometry features, `[faces, 8]` row-major.
    pub encoder_input: Vec<f32>,
    pub geometry: Vec<FaceGeometryFeature>,
    /// Rows are vertices; averages incident finest-level faces.
    pub vertex_average: Rc<SparseRows>,
    /// Vertices with no incident face (their features are zero).
    pub isolated_vertices: Vec<u32>,
    pub noc_frame: Aabb,
}

impl MeshContext {
    pub fn new(hierarchy: QuadMeshHierarchy) -> Result<Self> {
        let n = hierarchy.n_levels();
        let mut levels = Vec::with_capacity(n);
        for l in 0..n {
            let m = hierarchy.level(l);
            let neighbors = [0, 1, 2, 3].map(|k| {
                Rc::new(
                    m.adjacency()
                        .iter()
                        .map(|a| if a[k] == BOUNDARY { ZERO_ROW } else { a[k] })
                        .collect::<Vec<u32>>(),
                )
            });
            let pool_from_finer = if l + 1 < n {
                let children = hierarchy.children(l)?;
                let mut sp = SparseRows::new(hierarchy.level(l + 1).n_faces());
                for c in &children {
                    if c.iter().any(|&x| x == BOUNDARY) {
                        return Err(Error::MissingLinks(l, l + 1));
                    }
                    sp.push_row(c.iter().map(|&x| (x, 0.25)));
                }
                Some(Rc::new(sp))
            } else {
                None
            };
            let parent = if l > 0 {
                Some(Rc::new(hierarchy.parents(l)?.to_vec()))
            } else {
                None
            };
            levels.push(LevelTopology {
                n_faces: m.n_faces(),
                neighbors,
                pool_from_finer,
                parent,
            });
        }
        let finest = hierarchy.finest();
        let geometry = face_geometry(finest);
        let encoder_input = encoder_inputs(&geometry);
        let (vertex_average, isolated_vertices) = vertex_average_matrix(finest);
        let noc_frame = noc_frame(&finest.bbox());
        Ok(Self {
            hierarchy,
            levels,
            encoder_input,
            geometry,
            vertex_average: Rc::new(vertex_average),
            isolated_vertices,
            noc_frame,
        })
    }

    pub fn finest(&self) -> &QuadMesh {
        self.hierarchy.finest()
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn finest_level(&self) -> usize {
        self.levels.len() - 1
    }
}

/// Row `v` averages the faces incident to vertex `v`; isolated vertices get
/// an empty row and are reported.
pub fn vertex_average_matrix(mesh: &QuadMesh) -> (SparseRows, Vec<u32>) {
    let inc = mesh.vertex_faces();
    let mut sp = SparseRows::new(mesh.n_faces());
    let mut isolated = Vec::new();
    for (v, faces) in inc.iter().enumerate() {
        if faces.is_empty() {
            isolated.push(v as u32);
        }
        let w = 1.0 / faces.len().max(1) as f32;
        sp.push_row(faces.iter().map(|&f| (f, w)));
    }
    (sp, isolated)
}
