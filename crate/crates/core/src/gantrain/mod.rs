//! Adversarial training of the generator and field on a procedural corpus.

pub mod corpus;
pub mod disc;
pub mod losses;
pub mod train;

pub use corpus::{
    generate_corpus, load_corpus, random_camera, random_shape, render_procedural, save_corpus, ProceduralTexture,
};
pub use disc::{discriminator, init_discriminator, input_gradient, r1_penalty, DiscConfig, DiscTrace};
pub use losses::{d_accuracy, d_loss, g_loss, gan_losses, path_gradient, PathLengthState};
pub use train::{
    stack_images, tail_accuracy, training_shapes, StepMetrics, TrainConfig, Trainer, FIELD_DISC, PROXY_DISC,
};
