//! Sequence I/O, frame sampling, feature layouts, splits and synthetic data.

pub mod dataset;
pub mod features;
pub mod sequence;
pub mod split;
pub mod synth;

pub use dataset::{load_split, write_dataset, Dataset, ManifestEntry};
pub use features::{
    displacement_features, recurrent_features, sample_frames, sample_indices, GestureBatch,
    PrepareOptions, PreparedSample, SAMPLED_FRAMES,
};
pub use sequence::{load_sequence, save_sequence, FingerMode, SkeletonSequence};
pub use split::{build_split, Split, SplitProtocol};
pub use synth::{generate_synthetic, GestureKind, SyntheticSpec};
