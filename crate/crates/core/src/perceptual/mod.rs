//! Masked Gram-matrix style losses over a frozen conv feature extractor,
//! globally and on NOC-matched patches.

pub mod extractor;
pub mod patch;
pub mod style;

pub use extractor::{ExtractorDescriptor, FeatureExtractor, Layer, N_TAPS, TINYVGG_SEED};
pub use patch::{clamp_window, match_patch, patch_pairs, patch_style_loss, sample_query_patch, PatchPair, QueryPatch};
pub use style::{
    crop, crop_image, global_style_loss, global_style_loss_images, image_to_var, pyramid, style_grams, style_loss,
    style_target, StyleLossSpec, StyleTarget,
};
