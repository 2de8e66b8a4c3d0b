use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::mesh::{cross, dot, norm, scale, sub};
use crate::geometry::Vec3;

/// Orbit camera looking at `target`; `y` is up, azimuth 0 looks down `-z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    pub fov: f64,
    pub image_size: usize,
    #[serde(default)]
    pub target: Vec3,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            azimuth: 0.0,
            elevation: 0.0,
            distance: 2.5,
            fov: 40f64.to_radians(),
            image_size: 256,
            target: [0.0; 3],
        }
    }
}

/// Camera-space basis plus projection constants.
#[derive(Clone, Copy, Debug)]
pub struct ViewFrame {
    pub eye: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
    pub tan_half_fov: f64,
    pub size: usize,
}

/// Points closer than this along the view axis are not rasterized.
pub const NEAR: f64 = 1e-3;

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance > 0.0) {
            return Err(Error::InvalidArgument(format!("camera distance {} must be > 0", self.distance)));
        }
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(Error::InvalidArgument(format!("camera fov {} outside (0, pi)", self.fov)));
        }
        if self.image_size == 0 {
            return Err(Error::InvalidArgument("image size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn eye(&self) -> Vec3 {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        let dir = [ce * sa, se, ce * ca];
        [
            self.target[0] + self.distance * dir[0],
            self.target[1] + self.distance * dir[1],
            self.target[2] + self.distance * dir[2],
        ]
    }

    pub fn frame(&self) -> Result<ViewFrame> {
        self.validate()?;
        let eye = self.eye();
        let f = sub(self.target, eye);
        let forward = scale(f, 1.0 / norm(f));
        let mut right = cross(forward, [0.0, 1.0, 0.0]);
        if norm(right) < 1e-9 {
            // looking straight up or down
            right = cross(forward, [0.0, 0.0, -1.0]);
        }
        let right = scale(right, 1.0 / norm(right));
        let up = cross(right, forward);
        Ok(ViewFrame {
            eye,
            right,
            up,
            forward,
            tan_half_fov: (self.fov / 2.0).tan(),
            size: self.image_size,
        })
    }
}

impl ViewFrame {
    /// Screen position in pixels (x right, y down) and view depth.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let d = sub(p, self.eye);
        let z = dot(d, self.forward);
        if z <= NEAR {
            return None;
        }
        let x = dot(d, self.right) / (z * self.tan_half_fov);
        let y = dot(d, self.up) / (z * self.tan_half_fov);
        let s = self.size as f64;
        Some(((x + 1.0) * 0.5 * s, (1.0 - y) * 0.5 * s, z))
    }
}

/// Azimuth / elevation bin layout used for coarse pose estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseBins {
    pub azimuth_bins: usize,
    pub elevation_bins: usize,
    /// Elevation range in degrees.
    pub elevation_range: (f64, f64),
}

impl Default for PoseBins {
    fn default() -> Self {
        Self {
            azimuth_bins: 12,
            elevation_bins: 5,
            elevation_range: (0.0, 60.0),
        }
    }
}

impl PoseBins {
    pub fn n_poses(&self) -> usize {
        self.azimuth_bins * self.elevation_bins
    }

    /// Camera at the centre of bin `(az_bin, el_bin)`; other fields copied from `base`.
    pub fn camera(&self, az_bin: usize, el_bin: usize, base: &Camera) -> Result<Camera> {
        if az_bin >= self.azimuth_bins || el_bin >= self.elevation_bins {
            return Err(Error::InvalidArgument(format!(
                "pose bin ({}, {}) outside {}x{}",
                az_bin, el_bin, self.azimuth_bins, self.elevation_bins
            )));
        }
        let az = (az_bin as f64 + 0.5) * std::f64::consts::TAU / self.azimuth_bins as f64;
        let (lo, hi) = self.elevation_range;
        let el = lo + (el_bin as f64 + 0.5) * (hi - lo) / self.elevation_bins as f64;
        Ok(Camera {
            azimuth: az,
            elevation: el.to_radians(),
            ..*base
        })
    }

    /// Every bin centre, azimuth-major.
    pub fn all_cameras(&self, base: &Camera) -> Vec<Camera> {
        (0..self.azimuth_bins)
            .flat_map(|a| (0..self.elevation_bins).map(move |e| (a, e)))
            .map(|(a, e)| self.camera(a, e, base).expect("in range"))
            .collect()
    }
}

/// Default 12 x 5 bins over 0-60 degrees of elevation.
pub fn pose_from_bins(az_bin: usize, el_bin: usize, base: &Camera) -> Result<Camera> {
    PoseBins::default().camera(az_bin, el_bin, base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_centres() {
        let c = pose_from_bins(0, 0, &Camera::default()).unwrap();
        assert!((c.azimuth.to_degrees() - 15.0).abs() < 1e-9);
        assert!((c.elevation.to_degrees() - 6.0).abs() < 1e-9);
        assert!(pose_from_bins(12, 0, &Camera::default()).is_err());
        assert!(pose_from_bins(0, 5, &Camera::default()).is_err());
    }

    #[test]
    fn target_projects_to_image_centre() {
        let cam = Camera {
            azimuth: 0.7,
            elevation: 0.3,
            image_size: 64,
            ..Camera::default()
        };
        let (x, y, z) = cam.frame().unwrap().project([0.0; 3]).unwrap();
        assert!((x - 32.0).abs() < 1e-9 && (y - 32.0).abs() < 1e-9);
        assert!((z - cam.distance).abs() < 1e-9);
    }

    #[test]
    fn straight_down_view_has_a_frame() {
        let cam = Camera {
            elevation: std::f64::consts::FRAC_PI_2,
            ..Camera::default()
        };
        let f = cam.frame().unwrap();
        assert!((norm(f.right) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_cameras() {
        let bad = Camera {
            distance: 0.0,
            ..Camera::default()
        };
        assert!(bad.validate().is_err());
        let bad = Camera {
            fov: 4.0,
            ..Camera::default()
        };
        assert!(bad.validate().is_err());
    }
}
