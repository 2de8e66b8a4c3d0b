//! One JSON document describing a whole run. Every field has a default, so
//! `{}` is a valid config and `init-config` prints the fully expanded form.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use meshfield::gantrain::TrainConfig;
use meshfield::generator::ModelConfig;
use meshfield::perceptual::FeatureExtractor;
use meshfield::render::{Camera, DEFAULT_BACKGROUND};
use meshfield::transfer::TransferConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub transfer: TransferConfig,
    pub render: RenderOptions,
    pub corpus: CorpusOptions,
    /// Perceptual extractor files; the bundled tinyvgg when absent.
    pub extractor: Option<ExtractorFiles>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderOptions {
    pub image_size: usize,
    pub distance: f64,
    pub fov_deg: f64,
    pub background: [f32; 3],
    /// Seed of the per-face synthesis noise.
    pub noise_seed: u64,
    /// Hierarchy depth used when a mesh is given as OBJ.
    pub levels: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        let cam = Camera::default();
        Self {
            image_size: cam.image_size,
            distance: cam.distance,
            fov_deg: cam.fov.to_degrees(),
            background: DEFAULT_BACKGROUND,
            noise_seed: 0,
            levels: 4,
        }
    }
}

impl RenderOptions {
    /// Camera at `azimuth`/`elevation` degrees, optionally resized.
    pub fn camera(&self, azimuth_deg: f64, elevation_deg: f64, size: Option<usize>) -> Camera {
        Camera {
            azimuth: azimuth_deg.to_radians(),
            elevation: elevation_deg.to_radians(),
            distance: self.distance,
            fov: self.fov_deg.to_radians(),
            image_size: size.unwrap_or(self.image_size),
            ..Camera::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusOptions {
    pub images: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            images: 512,
            image_size: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorFiles {
    pub weights: PathBuf,
    pub descriptor: PathBuf,
}

impl RunConfig {
    /// Parse `path`; relative paths inside are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(x) = cfg.extractor.as_mut() {
            x.weights = resolve(base, &x.weights);
            x.descriptor = resolve(base, &x.descriptor);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.transfer.validate()?;
        anyhow::ensure!(self.render.image_size > 0, "render.image_size must be positive");
        anyhow::ensure!(self.render.levels >= 1, "render.levels must be >= 1");
        Ok(())
    }

    pub fn extractor(&self) -> Result<FeatureExtractor> {
        Ok(match &self.extractor {
            None => FeatureExtractor::tinyvgg(),
            Some(x) => FeatureExtractor::load(&x.weights, &x.descriptor)
                .with_context(|| format!("loading extractor {}", x.weights.display()))?,
        })
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.transfer.phase1_iters + cfg.transfer.phase2_iters, 400);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"modle": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"lr": 1}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"render": {"size": 3}}"#).is_err());
    }

    #[test]
    fn paths_resolve_against_the_config_directory() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("runs");
        std::fs::create_dir(&sub).unwrap();
        let path = sub.join("run.json");
        std::fs::write(
            &path,
            r#"{"extractor": {"weights": "fx/w.m2tw", "descriptor": "/abs/d.json"}}"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        let x = cfg.extractor.unwrap();
        assert_eq!(x.weights, sub.join("fx/w.m2tw"));
        assert_eq!(x.descriptor, PathBuf::from("/abs/d.json"));
    }

    #[test]
    fn round_trips_through_json() {
        let mut cfg = RunConfig::default();
        cfg.train.iters = 7;
        cfg.render.levels = 3;
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.transfer.lr = 0.0;
        assert!(cfg.validate().is_err());
    }
}
