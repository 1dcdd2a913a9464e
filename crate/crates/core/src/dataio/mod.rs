//! Frames, annotations, masks, patch sampling and the synthetic dataset.

pub mod annotations;
pub mod dataset;
pub mod frame;
pub mod geometry;
pub mod mask;
pub mod sampling;
pub mod synth;

pub use annotations::{format_annotations, load_annotations, parse_annotations, save_annotations};
pub use dataset::{read_dataset, write_dataset, VideoClip};
pub use frame::{Frame, FrameSequence};
pub use geometry::{BoundingBox, PatchSpec, Track};
pub use mask::BinaryMask;
pub use sampling::{crop_mask, crop_patch, sample_bilinear, sample_placement, scale_trajectory};
pub use synth::{generate_sprite_dataset, SpriteConfig};
