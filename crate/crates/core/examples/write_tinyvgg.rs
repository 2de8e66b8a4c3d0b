//! Regenerates the bundled extractor assets under `assets/`.

use std::path::Path;

use meshfield::perceptual::{ExtractorDescriptor, TINYVGG_SEED};

fn main() -> meshfield::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
    let d = ExtractorDescriptor::tinyvgg();
    d.random_weights(TINYVGG_SEED).save(&dir.join("tinyvgg.m2tw"))?;
    std::fs::write(dir.join("tinyvgg.json"), serde_json::to_string_pretty(&d)? + "\n")?;
    Ok(())
}
