//! Differentiable image formation: projection, SH color, tile rasterization
//! forward/backward, and a brute-force reference oracle.

mod project;
mod rasterize;
mod reference;
pub mod sh;

pub use project::{project, project_vjp, Camera, ProjGrad, Projected2D, LOW_PASS_DILATION};
pub use rasterize::{
    bin_tiles, rasterize_backward, rasterize_forward, splat_alpha, BackwardOutput, RasterState,
    RenderOutput, RenderOptions, ALPHA_CAP, ALPHA_SKIP, TILE, T_MIN,
};
pub use reference::{render_reference, ReferenceOutput};
pub use sh::{coeffs_for_degree, eval_sh};
