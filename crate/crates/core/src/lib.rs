//! Differentiable 3D Gaussian splats rigged to the triangles of an
//! animatable mesh.
//!
//! The pipeline: a blendshape rig poses a shared-topology mesh, every splat
//! is carried along by its parent triangle's local frame, a tile rasterizer
//! renders and differentiates the result, and adaptive density control with
//! binding inheritance grows the splat set without losing riggability.

pub mod density;
pub mod error;
pub mod geometry;
pub mod image_buf;
pub mod io;
pub mod losses;
pub mod mesh_rig;
pub mod optim;
pub mod par;
pub mod renderer;
pub mod splat_model;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
