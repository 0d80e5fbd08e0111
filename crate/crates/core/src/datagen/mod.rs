//! Synthetic datasets with known ground-truth importance.

mod background;
mod generate;
mod grid;
mod io;
mod pattern;
mod scenario;
mod smooth;

pub use background::{load_background, white_noise, BackgroundSampler};
pub use generate::{
    assemble_additive, build_dataset, build_ground_truth, frobenius_norm, frobenius_normalize,
    generate_additive, generate_multiplicative, rescale_dataset, static_mask, Dataset, LabeledSample,
    Provenance, XorCase, GENERATOR_VERSION,
};
pub use grid::{ImageGrid, Mask};
pub use io::{load_dataset, load_manifest, save_dataset, DatasetManifest, DATASET_FORMAT_VERSION};
pub use pattern::{
    make_pattern, placements, sample_rigid_transform, RigidTransform, TetrominoKind, TetrominoPattern,
};
pub use scenario::{BackgroundKind, ScenarioKind, ScenarioSpec, StaticLayout};
pub use smooth::{gaussian_kernel, gaussian_smooth, threshold_support, SUPPORT_THRESHOLD};
