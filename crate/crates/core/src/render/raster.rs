use crate::error::Result;
use crate::geometry::{QuadMesh, SurfacePoint};
use crate::par;

use super::camera::Camera;

/// Face id of pixels no triangle covers.
pub const BACKGROUND: u32 = u32::MAX;

const ROWS_PER_CHUNK: usize = 8;

/// What the nearest triangle left at one pixel centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fragment {
    pub face: u32,
    pub half: u8,
    /// Perspective-correct barycentric weights of the triangle half.
    pub bary: [f32; 3],
    pub depth: f32,
}

impl Fragment {
    pub const EMPTY: Fragment = Fragment {
        face: BACKGROUND,
        half: 0,
        bary: [0.0; 3],
        depth: f32::INFINITY,
    };

    pub fn is_foreground(&self) -> bool {
        self.face != BACKGROUND
    }

    pub fn surface_point(&self) -> Option<SurfacePoint> {
        self.is_foreground()
            .then(|| SurfacePoint::new(self.face, self.half, self.bary))
    }
}

/// Row-major per-pixel fragments of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct FragBuffer {
    pub width: usize,
    pub height: usize,
    pub fragments: Vec<Fragment>,
}

impl FragBuffer {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            fragments: vec![Fragment::EMPTY; width * height],
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn mask(&self) -> Vec<bool> {
        self.fragments.iter().map(Fragment::is_foreground).collect()
    }

    pub fn coverage(&self) -> usize {
        self.fragments.iter().filter(|f| f.is_foreground()).count()
    }

    /// `(pixel index, surface point)` for every covered pixel, in pixel order.
    pub fn surface_points(&self) -> Vec<(usize, SurfacePoint)> {
        self.fragments
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.surface_point().map(|sp| (i, sp)))
            .collect()
    }
}

struct ScreenTri {
    face: u32,
    half: u8,
    p: [[f64; 2]; 3],
    inv_z: [f64; 3],
    y_range: (usize, usize),
    x_range: (usize, usize),
}

fn edge(a: [f64; 2], b: [f64; 2], x: f64, y: f64) -> f64 {
    (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0])
}

fn closer(depth: f64, key: (u32, u8), cur: &Fragment) -> bool {
    let d = depth as f32;
    d < cur.depth || (d == cur.depth && key < (cur.face, cur.half))
}

/// Z-buffered point-sampled rasterization of both triangles of every quad.
/// Triangles with a vertex behind the near plane are skipped.
pub fn rasterize(mesh: &QuadMesh, camera: &Camera) -> Result<FragBuffer> {
    let frame = camera.frame()?;
    let size = camera.image_size;
    let projected: Vec<Option<(f64, f64, f64)>> = mesh.vertices().iter().map(|&v| frame.project(v)).collect();

    let mut tris = Vec::with_capacity(2 * mesh.n_faces());
    for f in 0..mesh.n_faces() {
        for half in 0..2u8 {
            let idx = mesh.triangle(f, half);
            let Some(pr) = idx
                .iter()
                .map(|&v| projected[v as usize])
                .collect::<Option<Vec<_>>>()
            else {
                continue;
            };
            let p = [0, 1, 2].map(|k| [pr[k].0, pr[k].1]);
            let area = edge(p[0], p[1], p[2][0], p[2][1]);
            if area.abs() < 1e-12 {
                continue;
            }
            let min_x = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
            let max_x = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
            let min_y = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
            let max_y = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
            if max_x < 0.0 || max_y < 0.0 || min_x >= size as f64 || min_y >= size as f64 {
                continue;
            }
            let lo = |v: f64| (v - 0.5).ceil().max(0.0) as usize;
            let hi = |v: f64| ((v - 0.5).floor().min(size as f64 - 1.0)).max(-1.0);
            let (hx, hy) = (hi(max_x), hi(max_y));
            if hx < 0.0 || hy < 0.0 {
                continue;
            }
            let (x0, y0) = (lo(min_x), lo(min_y));
            let (x1, y1) = (hx as usize + 1, hy as usize + 1);
            if x0 >= x1 || y0 >= y1 {
                continue;
            }
            tris.push(ScreenTri {
                face: f as u32,
                half,
                p,
                inv_z: [0, 1, 2].map(|k| 1.0 / pr[k].2),
                y_range: (y0, y1),
                x_range: (x0, x1),
            });
        }
    }

    let n_chunks = size.div_ceil(ROWS_PER_CHUNK);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); n_chunks];
    for (i, t) in tris.iter().enumerate() {
        for b in &mut bins[t.y_range.0 / ROWS_PER_CHUNK..=(t.y_range.1 - 1) / ROWS_PER_CHUNK] {
            b.push(i as u32);
        }
    }

    let mut buf = FragBuffer::empty(size, size);
    par::for_each_chunk_mut(&mut buf.fragments, ROWS_PER_CHUNK * size, |chunk, out| {
        let row0 = chunk * ROWS_PER_CHUNK;
        for &ti in &bins[chunk] {
            let t = &tris[ti as usize];
            let area = edge(t.p[0], t.p[1], t.p[2][0], t.p[2][1]);
            let ya = t.y_range.0.max(row0);
            let yb = t.y_range.1.min(row0 + out.len() / size);
            for y in ya..yb {
                let cy = y as f64 + 0.5;
                for x in t.x_range.0..t.x_range.1 {
                    let cx = x as f64 + 0.5;
                    let l0 = edge(t.p[1], t.p[2], cx, cy) / area;
                    let l1 = edge(t.p[2], t.p[0], cx, cy) / area;
                    let l2 = 1.0 - l0 - l1;
                    if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                        continue;
                    }
                    let w = [l0 * t.inv_z[0], l1 * t.inv_z[1], l2 * t.inv_z[2]];
                    let s = w[0] + w[1] + w[2];
                    let depth = 1.0 / s;
                    let px = &mut out[(y - row0) * size + x];
                    if closer(depth, (t.face, t.half), px) {
                        let b0 = (w[0] / s) as f32;
                        let b1 = (w[1] / s) as f32;
                        *px = Fragment {
                            face: t.face,
                            half: t.half,
                            bary: [b0, b1, 1.0 - b0 - b1],
                            depth: depth as f32,
                        };
                    }
                }
            }
        }
    });
    Ok(buf)
}
