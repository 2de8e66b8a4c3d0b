//! Procedurally textured renders used as the "real" image distribution.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{barycentric_point, shapes, subdivide, QuadMesh, QuadMeshHierarchy, Vec3};
use crate::render::{load_rgb_png, rasterize, save_rgb_png, Camera, Image};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProceduralTexture {
    Stripes { dir: Vec3, freq: f64, colors: [[f32; 3]; 2] },
    Checker { cell: f64, colors: [[f32; 3]; 2] },
    TwoTone { normal: Vec3, offset: f64, colors: [[f32; 3]; 2] },
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v: Vec3 = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}

fn color<R: Rng + ?Sized>(rng: &mut R) -> [f32; 3] {
    [0, 1, 2].map(|_| rng.random_range(-0.9..0.9))
}

impl ProceduralTexture {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let colors = [color(rng), color(rng)];
        match rng.random_range(0..3) {
            0 => Self::Stripes {
                dir: unit_vector(rng),
                freq: rng.random_range(2.0..6.0),
                colors,
            },
            1 => Self::Checker {
                cell: rng.random_range(0.15..0.4),
                colors,
            },
            _ => Self::TwoTone {
                normal: unit_vector(rng),
                offset: rng.random_range(-0.2..0.2),
                colors,
            },
        }
    }

    pub fn sample(&self, p: Vec3) -> [f32; 3] {
        let dot = |a: Vec3| a[0] * p[0] + a[1] * p[1] + a[2] * p[2];
        match *self {
            Self::Stripes { dir, freq, colors } => colors[((dot(dir) * freq).rem_euclid(1.0) >= 0.5) as usize],
            Self::Checker { cell, colors } => {
                let s: i64 = p.iter().map(|&c| (c / cell).floor() as i64).sum();
                colors[s.rem_euclid(2) as usize]
            }
            Self::TwoTone { normal, offset, colors } => colors[(dot(normal) > offset) as usize],
        }
    }
}

/// Box or sphere hierarchy with a random anisotropic scale and spin about
/// `y`. Every level is projected back onto the base surface, so the
/// silhouette does not depend on the level.
pub fn random_shape<R: Rng + ?Sized>(rng: &mut R, levels: usize) -> Result<QuadMeshHierarchy> {
    let boxy = rng.random_bool(0.5);
    let h = subdivide(&shapes::unit_cube(), levels)?;
    let s: Vec3 = [0, 1, 2].map(|_| rng.random_range(0.7..1.3));
    let (sa, ca) = rng.random_range(0.0..TAU).sin_cos();
    Ok(h.map_vertices(|v| {
        let n = if boxy {
            2.0 * v[0].abs().max(v[1].abs()).max(v[2].abs())
        } else {
            2.0 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
        };
        let v = v.map(|c| c / n.max(1e-12));
        let v = [v[0] * s[0], v[1] * s[1], v[2] * s[2]];
        [ca * v[0] + sa * v[2], v[1], -sa * v[0] + ca * v[2]]
    }))
}

/// Uniform azimuth and elevation in `elevation_deg` (degrees).
pub fn random_camera<R: Rng + ?Sized>(rng: &mut R, base: &Camera, elevation_deg: (f64, f64)) -> Camera {
    Camera {
        azimuth: rng.random_range(0.0..TAU),
        elevation: rng.random_range(elevation_deg.0..=elevation_deg.1).to_radians(),
        ..*base
    }
}

/// Render of `texture` on `mesh`; background `-1`.
pub fn render_procedural(mesh: &QuadMesh, texture: &ProceduralTexture, camera: &Camera) -> Result<Image> {
    let frag = rasterize(mesh, camera)?;
    let mut img = Image::zeros(frag.width, frag.height, 3);
    img.data.fill(-1.0);
    let plane = frag.n_pixels();
    for (pix, sp) in frag.surface_points() {
        let c = texture.sample(barycentric_point(&sp, mesh));
        for k in 0..3 {
            img.data[k * plane + pix] = c[k];
        }
    }
    Ok(img)
}

/// Hierarchy depth of corpus and training shapes.
pub const SHAPE_LEVELS: usize = 3;

/// `n` images, each a fresh shape + texture + camera.
pub fn generate_corpus(n: usize, image_size: usize, seed: u64) -> Result<Vec<Image>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Camera {
        image_size,
        ..Camera::default()
    };
    (0..n)
        .map(|_| {
            let shape = random_shape(&mut rng, SHAPE_LEVELS)?;
            let tex = ProceduralTexture::random(&mut rng);
            let cam = random_camera(&mut rng, &base, (0.0, 60.0));
            render_procedural(shape.finest(), &tex, &cam)
        })
        .collect()
}

pub fn save_corpus(dir: &Path, images: &[Image]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, img) in images.iter().enumerate() {
        save_rgb_png(&dir.join(format!("{i:05}.png")), img)?;
    }
    Ok(())
}

/// All `*.png` files in `dir`, sorted by name.
pub fn load_corpus(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no png images in {}", dir.display())));
    }
    paths.iter().map(|p| load_rgb_png(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_has_foreground() {
        let a = generate_corpus(3, 16, 9).unwrap();
        let b = generate_corpus(3, 16, 9).unwrap();
        assert_eq!(a, b);
        for img in &a {
            assert!(img.data.iter().any(|&v| v != -1.0));
        }
    }

    #[test]
    fn checker_alternates() {
        let t = ProceduralTexture::Checker {
            cell: 1.0,
            colors: [[0.0; 3], [1.0; 3]],
        };
        assert_ne!(t.sample([0.5, 0.5, 0.5]), t.sample([1.5, 0.5, 0.5]));
    }
}
