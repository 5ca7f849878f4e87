//! Images, depth file I/O, procedural scenes, sparsification and batching.

mod dataset;
mod image;
mod png_io;
mod sample;
mod scene;
mod sparsity;

pub use dataset::{
    derive_seed, generate_dataset, load_dataset, load_pattern_pool, parse_manifest, quantize_sample, save_dataset,
    synthetic_count, DatasetConfig, MANIFEST,
};
pub use image::{DepthImage, Domain, RgbImage, ValidityMask};
pub use png_io::{
    depth_to_raw, load_depth_png, load_depth_raw, load_rgb_png, quantize_depth, quantize_rgb, save_depth_png,
    save_depth_raw, save_rgb_png, DEPTH_SCALE, MAX_PNG_DEPTH,
};
pub use sample::{make_sample, mixed_batch, Batch, Sample};
pub use scene::{generate_scene, DomainStyle, SceneConfig, DEFAULT_SKY_FRACTION};
pub use sparsity::{
    sample_sparsity_pattern, semi_dense_mask, sparsify, validity_mask, PatternStyle, MAX_PATTERN_DENSITY,
};
