use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Binding, ParamStore, Tape, Tensor, Trainable, Var};
use crate::error::{Error, Result};

/// Number of exposed activations.
pub const N_TAPS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Layer {
    /// 3x3 (or `kernel`) same-padded conv followed by ReLU.
    Conv { out_channels: usize, kernel: usize },
    /// 2x2 mean pooling.
    Pool,
}

/// Layer structure of a feature extractor; weights live in a matching
/// M2TW file as `fx.conv{i}.weight` / `fx.conv{i}.bias`, `i` counting convs from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorDescriptor {
    pub name: String,
    pub input_channels: usize,
    pub layers: Vec<Layer>,
    /// 1-based conv indices whose post-ReLU activations are exposed.
    pub taps: Vec<usize>,
}

impl ExtractorDescriptor {
    pub fn tinyvgg() -> Self {
        let mut layers = Vec::new();
        for i in 1..=16 {
            let out_channels = match i {
                1..=4 => 16,
                5..=8 => 32,
                _ => 64,
            };
            layers.push(Layer::Conv {
                out_channels,
                kernel: 3,
            });
            if i == 4 || i == 8 {
                layers.push(Layer::Pool);
            }
        }
        Self {
            name: "tinyvgg".into(),
            input_channels: 3,
            layers,
            taps: vec![2, 4, 8, 12, 16],
        }
    }

    pub fn n_convs(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::Conv { .. })).count()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("extractor {}: {}", self.name, m)));
        if self.taps.len() != N_TAPS {
            return bad(format!("{} taps, expected {}", self.taps.len(), N_TAPS));
        }
        if self.taps.windows(2).any(|w| w[0] >= w[1]) {
            return bad("taps must be strictly increasing".into());
        }
        if self.taps.iter().any(|&t| t == 0 || t > self.n_convs()) {
            return bad(format!("tap out of range 1..={}", self.n_convs()));
        }
        for l in &self.layers {
            if let Layer::Conv { kernel, .. } = l {
                if kernel % 2 == 0 {
                    return bad("kernels must be odd".into());
                }
            }
        }
        Ok(())
    }

    /// `(channels, downsampling factor)` at each tap.
    pub fn tap_layout(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let (mut conv, mut factor) = (0, 1);
        for l in &self.layers {
            match l {
                Layer::Conv { out_channels, .. } => {
                    conv += 1;
                    if self.taps.contains(&conv) {
                        out.push((*out_channels, factor));
                    }
                }
                Layer::Pool => factor *= 2,
            }
        }
        out
    }

    /// Fixed-seed He-initialised weights.
    pub fn random_weights(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let (mut cin, mut conv) = (self.input_channels, 0);
        for l in &self.layers {
            if let Layer::Conv { out_channels, kernel } = *l {
                conv += 1;
                let fan_in = cin * kernel * kernel;
                p.insert(
                    format!("fx.conv{conv}.weight"),
                    Tensor::randn(vec![out_channels, cin, kernel, kernel], (2.0 / fan_in as f32).sqrt(), &mut rng),
                );
                p.insert(format!("fx.conv{conv}.bias"), Tensor::zeros(vec![out_channels]));
                cin = out_channels;
            }
        }
        p
    }
}

pub const TINYVGG_SEED: u64 = 20_240_611;
const TINYVGG_WEIGHTS: &[u8] = include_bytes!("../../assets/tinyvgg.m2tw");
const TINYVGG_JSON: &str = include_str!("../../assets/tinyvgg.json");

/// Frozen convolutional feature extractor with 5 taps.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub descriptor: ExtractorDescriptor,
    pub params: ParamStore,
}

impl FeatureExtractor {
    pub fn new(descriptor: ExtractorDescriptor, params: ParamStore) -> Result<Self> {
        descriptor.validate()?;
        let (mut cin, mut conv) = (descriptor.input_channels, 0);
        for l in &descriptor.layers {
            if let Layer::Conv { out_channels, kernel } = *l {
                conv += 1;
                let w = format!("fx.conv{conv}.weight");
                let t = params.get(&w)?;
                if t.shape() != [out_channels, cin, kernel, kernel] {
                    return Err(Error::InvalidArgument(format!("{} has shape {:?}", w, t.shape())));
                }
                params.get(&format!("fx.conv{conv}.bias"))?;
                cin = out_channels;
            }
        }
        Ok(Self { descriptor, params })
    }

    /// The bundled fixed-seed extractor.
    pub fn tinyvgg() -> Self {
        let descriptor: ExtractorDescriptor = serde_json::from_str(TINYVGG_JSON).expect("bundled descriptor parses");
        let params = ParamStore::from_bytes(TINYVGG_WEIGHTS).expect("bundled weights parse");
        Self::new(descriptor, params).expect("bundled extractor is consistent")
    }

    pub fn load(weights: &Path, descriptor: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(descriptor)?;
        let d: ExtractorDescriptor = serde_json::from_str(&text)?;
        Self::new(d, ParamStore::load(weights)?)
    }

    /// Activations `[n, c, h, w]` at each tap for `x: [n, 3, H, W]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Vec<Var>> {
        let mut b = Binding::new(&self.params, Trainable::Nothing);
        let mut taps = Vec::with_capacity(N_TAPS);
        let (mut h, mut conv) = (x, 0);
        for l in &self.descriptor.layers {
            match l {
                Layer::Conv { kernel, .. } => {
                    conv += 1;
                    let w = b.var(tape, &format!("fx.conv{conv}.weight"))?;
                    let bias = b.var(tape, &format!("fx.conv{conv}.bias"))?;
                    h = tape.conv2d(h, w, Some(bias), kernel / 2)?;
                    h = tape.relu(h);
                    if self.descriptor.taps.contains(&conv) {
                        taps.push(h);
                    }
                }
                Layer::Pool => h = tape.avgpool2x(h)?,
            }
            if taps.len() == N_TAPS {
                break;
            }
        }
        Ok(taps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_assets_match_generator() {
        let d = ExtractorDescriptor::tinyvgg();
        let fx = FeatureExtractor::tinyvgg();
        assert_eq!(fx.descriptor, d);
        assert_eq!(fx.params, d.random_weights(TINYVGG_SEED));
    }

    #[test]
    fn tap_layout() {
        let d = ExtractorDescriptor::tinyvgg();
        assert_eq!(d.tap_layout(), vec![(16, 1), (16, 1), (32, 2), (64, 4), (64, 4)]);
    }

    #[test]
    fn rejects_wrong_tap_count() {
        let mut d = ExtractorDescriptor::tinyvgg();
        d.taps.pop();
        assert!(d.validate().is_err());
    }
}
