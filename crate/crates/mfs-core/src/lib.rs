//! Core data model for multimodal volumetric segmentation work: scalar
//! volumes and binary masks on physical grids, resampling, HU-window
//! masks, caudal extent clipping, raw `RV1` file I/O, segmentation
//! metrics (DSC / ASD / HD95), paired statistics, and dose-volume
//! arithmetic (DVH, Dmean, Vd).
//!
//! All operations are pure functions over immutable inputs. With the
//! `parallel` feature (default) the voxel loops run on the rayon pool;
//! chunking is fixed so results are bit-identical to the sequential
//! fallback.

pub mod dose;
pub mod error;
pub mod grid;
pub mod io;
pub mod mask_ops;
pub mod metrics;
pub mod par;
pub mod resample;
pub mod seeds;
pub mod stats;
pub mod volume;

pub use error::CoreError;
pub use grid::GridSpec;
pub use io::{read_volume, write_mask, write_scalar, VolumeFile};
pub use mask_ops::{clip_caudal_extent, hu_window_mask, BONE_WINDOW, MUSCLE_WINDOW};
pub use resample::{resample, resample_mask, Interp};
pub use volume::{BinaryMask, Modality, ScalarVolume};
