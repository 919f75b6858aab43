//! File formats: dataset manifest, OBJ topology, binary vertex/rig files,
//! PNG images, PLY checkpoints, and evaluation reports.

pub mod binfmt;
pub mod dataset;
pub mod manifest;
pub mod obj;
pub mod ply;
pub mod pngio;
pub mod report;

pub use dataset::{load_dataset, Dataset, DatasetFrame};
pub use manifest::{
    read_manifest, write_manifest, CameraRecord, DatasetManifest, FrameImageRef, FrameRecord,
    RigParamsRecord, DEFAULT_NEAR, FORMAT_VERSION,
};
pub use ply::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use report::{read_report, write_report, EvalEntry, EvalReport};
