//! Normalized object coordinates.

use super::mesh::{Aabb, Vec3};

/// Fractional padding added around the mesh box before normalizing.
pub const NOC_PADDING: f64 = 0.05;

/// Canonical coordinates in `[0, 1]^3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Noc(pub [f64; 3]);

/// `(p - center) / s + 0.5`, where `s` is the largest extent of `frame`,
/// clamped to the unit cube. The scale is isotropic, so aspect ratio is kept.
pub fn noc_of_point(p: Vec3, frame: &Aabb) -> Noc {
    let c = frame.center();
    let s = frame.max_extent().max(f64::MIN_POSITIVE);
    Noc([0, 1, 2].map(|k| ((p[k] - c[k]) / s + 0.5).clamp(0.0, 1.0)))
}

/// The normalization box for a mesh: its bbox grown uniformly by
/// [`NOC_PADDING`] of the largest extent, keeping the center.
pub fn noc_frame(bbox: &Aabb) -> Aabb {
    let c = bbox.center();
    let half = 0.5 * bbox.max_extent() * (1.0 + NOC_PADDING);
    let e = bbox.extent();
    let grow = |k: usize| half.max(0.5 * e[k]);
    Aabb {
        min: [c[0] - grow(0), c[1] - grow(1), c[2] - grow(2)],
        max: [c[0] + grow(0), c[1] + grow(1), c[2] + grow(2)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_and_corners() {
        let b = Aabb {
            min: [-1.0; 3],
            max: [1.0; 3],
        };
        assert_eq!(noc_of_point([0.0; 3], &b), Noc([0.5; 3]));
        assert_eq!(noc_of_point([-1.0; 3], &b), Noc([0.0; 3]));
        assert_eq!(noc_of_point([1.0; 3], &b), Noc([1.0; 3]));
    }

    #[test]
    fn elongated_box_uses_uniform_scale() {
        // 4 x 2 x 1 box centered at the origin: s = 4.
        let b = Aabb {
            min: [-2.0, -1.0, -0.5],
            max: [2.0, 1.0, 0.5],
        };
        let lo = noc_of_point(b.min, &b).0;
        let hi = noc_of_point(b.max, &b).0;
        assert_eq!(lo, [0.0, 0.25, 0.375]);
        assert_eq!(hi, [1.0, 0.75, 0.625]);
    }

    #[test]
    fn padded_frame_keeps_surface_inside() {
        let b = Aabb {
            min: [0.0; 3],
            max: [2.0, 1.0, 1.0],
        };
        let f = noc_frame(&b);
        let n = noc_of_point([2.0, 1.0, 1.0], &f).0;
        assert!(n.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
