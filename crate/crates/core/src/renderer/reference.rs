//! Brute-force reference renderer: the correctness oracle for the tile path.
//!
//! Every pixel evaluates every splat in global depth order with the exact
//! same blending-weight formula as the tile rasterizer, but with no tiling,
//! no early termination, and 64-bit accumulation. Single-threaded by
//! definition, so it is deterministic regardless of thread count.

use crate::image_buf::Image;

use super::project::Projected2D;
use super::rasterize::{splat_alpha, RenderOptions};

pub struct ReferenceOutput {
    pub image: Image,
    pub transmittance: Vec<f32>,
}

/// Render all projected splats by exhaustive per-pixel blending. Only the
/// blend-formula switches of `opts` apply; there is no tiling and no early
/// termination here by definition.
pub fn render_reference(
    projected: &[Option<Projected2D>],
    width: usize,
    height: usize,
    opts: &RenderOptions,
) -> ReferenceOutput {
    let mut order: Vec<u32> = projected
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.as_ref().map(|_| i as u32))
        .collect();
    order.sort_unstable_by(|&a, &b| {
        let da = projected[a as usize].as_ref().unwrap().depth;
        let db = projected[b as usize].as_ref().unwrap().depth;
        da.total_cmp(&db).then(a.cmp(&b))
    });

    let mut image = Image::zeros(width, height);
    let mut transmittance = vec![1.0f32; width * height];
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let mut acc = [0.0f64; 3];
            let mut trans = 1.0f64;
            for &idx in &order {
                let p = projected[idx as usize].as_ref().unwrap();
                let Some(alpha) = splat_alpha(p, px, py, opts.skip_low_alpha, opts.clip_footprint) else {
                    continue;
                };
                let w = alpha as f64 * trans;
                for c in 0..3 {
                    acc[c] += p.color[c] as f64 * w;
                }
                trans *= 1.0 - alpha as f64;
            }
            image.set_pixel(x, y, [acc[0] as f32, acc[1] as f32, acc[2] as f32]);
            transmittance[y * width + x] = trans as f32;
        }
    }
    ReferenceOutput {
        image,
        transmittance,
    }
}
