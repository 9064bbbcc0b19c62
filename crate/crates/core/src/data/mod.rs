//! Cube files, padding, neighbourhood blocks, stratified splits and synthetic cubes.

mod hsic;
mod patches;
mod split;
mod synth;

pub use hsic::{load_hsic, save_hsic, HsiCube};
pub use patches::{edge_pad, extract_patches, PadMode, PatchSet};
pub use split::{split_counts, stratified_split, ClassCounts, Ratios, SplitSpec, Subset};
pub use synth::{
    min_separation, nearest_centroid_accuracy, prototypes, synthesize_dataset, SynthSpec, MAX_SYNTH_CLASSES,
};
