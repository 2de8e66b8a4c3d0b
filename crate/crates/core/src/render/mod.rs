//! Pinhole rasterization, field / flat shading, NOC renders and image IO.
//!
//! Rasterization is hard z-buffering at pixel centres. Gradients flow only
//! through colours: the fragment buffer is a constant of the tape.

pub mod camera;
pub mod image;
pub mod raster;
pub mod shade;

pub use camera::{pose_from_bins, Camera, PoseBins, ViewFrame};
pub use self::image::{
    load_frag, load_mask_png, load_noc_png, load_rgb_png, save_frag, save_mask_png, save_noc_png, save_rgb_png,
    Image, Mask,
};
pub use raster::{rasterize, FragBuffer, Fragment, BACKGROUND};
pub use shade::{render_noc, render_view, shade, shade_coarse, RenderedView, ShadeMode, DEFAULT_BACKGROUND};
