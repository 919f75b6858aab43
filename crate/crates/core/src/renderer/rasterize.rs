//! Depth-sorted tile rasterization, forward and backward.
//!
//! Splats are binned into 16×16 tiles by their 3σ footprint and composited
//! front to back per pixel:
//!
//! ```text
//!     C = Σ cᵢ α'ᵢ Π_{j<i} (1 − α'ⱼ),    α' = α·exp(−½ δᵀ·conic·δ)
//! ```
//!
//! Tiles own disjoint pixels, so the forward image is thread-count
//! independent by construction. The backward pass produces per-tile sparse
//! gradients; the deterministic mode merges them in fixed tile order, the
//! fast mode reduces them in unspecified order. Both pass gradient checks,
//! only the deterministic merge is bit-reproducible.

use crate::error::{Error, Result};
use crate::image_buf::Image;
use crate::par;

use super::project::{ProjGrad, Projected2D};

pub const TILE: usize = 16;
/// Contributions below this blending weight are skipped (when enabled).
pub const ALPHA_SKIP: f32 = 1.0 / 255.0;
/// Blending weights are capped here so transmittance can never hit zero.
pub const ALPHA_CAP: f32 = 0.99;
/// Front-to-back traversal stops once transmittance falls below this.
pub const T_MIN: f64 = 1e-4;

/// Rasterization switches. The low-alpha skip and early termination exist
/// for speed; both can be disabled to compare against the reference renderer
/// at tight tolerances. Disabling the footprint clip as well makes the
/// blend a smooth function of every parameter, which the finite-difference
/// gradient suites rely on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub skip_low_alpha: bool,
    pub early_terminate: bool,
    /// Evaluate splats only inside their 3σ footprint square.
    pub clip_footprint: bool,
    /// Fixed-order gradient merge (bit-reproducible across thread counts).
    pub deterministic: bool,
    /// Keep the per-tile lists and per-pixel stop indices for the backward pass.
    pub retain_state: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            skip_low_alpha: true,
            early_terminate: true,
            clip_footprint: true,
            deterministic: false,
            retain_state: false,
        }
    }
}

/// Retained forward state needed by [`rasterize_backward`].
#[derive(Debug, Clone)]
pub struct RasterState {
    pub tile_lists: Vec<Vec<u32>>,
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Per pixel: exclusive index into its tile's list where traversal ended.
    pub stop: Vec<u32>,
    /// Per pixel: final transmittance at full accumulator precision.
    pub final_t: Vec<f64>,
    pub opts: RenderOptions,
}

/// Forward rasterization output.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    /// Per-pixel remaining transmittance.
    pub transmittance: Vec<f32>,
    /// Per-pixel count of surviving blended contributions.
    pub n_contrib: Vec<u32>,
    /// Per splat: contributed at least one surviving pixel term.
    pub visible: Vec<bool>,
    pub state: Option<RasterState>,
}

/// Gradients of the image with respect to every projected splat, plus the
/// densification statistics gathered on the way.
#[derive(Debug, Clone)]
pub struct BackwardOutput {
    pub grads: Vec<ProjGrad>,
}

/// Blending weight of a splat at a pixel center, `None` when the pixel is
/// outside the splat's footprint or the contribution is skipped. Shared by
/// the tile rasterizer (both passes) and the reference renderer so every
/// path evaluates the exact same formula.
#[inline]
pub fn splat_alpha(
    p: &Projected2D,
    px: f32,
    py: f32,
    skip_low_alpha: bool,
    clip_footprint: bool,
) -> Option<f32> {
    let dx = px - p.mean2d[0];
    let dy = py - p.mean2d[1];
    if clip_footprint && (dx.abs() > p.radius || dy.abs() > p.radius) {
        return None;
    }
    let power = -0.5 * (p.conic[0] * dx * dx + p.conic[2] * dy * dy) - p.conic[1] * dx * dy;
    if power > 0.0 {
        return None;
    }
    let alpha = (p.alpha * power.exp()).min(ALPHA_CAP);
    if skip_low_alpha && alpha < ALPHA_SKIP {
        return None;
    }
    Some(alpha)
}

/// Bin splats to tiles by their footprint square and sort each tile's list
/// by `(tile, depth)` key — within a tile by `(depth, index)`. Without the
/// footprint clip every splat lands in every tile.
pub fn bin_tiles(
    projected: &[Option<Projected2D>],
    width: usize,
    height: usize,
    clip_footprint: bool,
) -> (Vec<Vec<u32>>, usize, usize) {
    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (idx, p) in projected.iter().enumerate() {
        let Some(p) = p else { continue };
        let (x0, y0, x1, y1) = if clip_footprint {
            let x0 = (((p.mean2d[0] - p.radius) / TILE as f32).floor() as i64).max(0) as usize;
            let y0 = (((p.mean2d[1] - p.radius) / TILE as f32).floor() as i64).max(0) as usize;
            let x1 = (((p.mean2d[0] + p.radius) / TILE as f32).floor() as i64).min(tiles_x as i64 - 1);
            let y1 = (((p.mean2d[1] + p.radius) / TILE as f32).floor() as i64).min(tiles_y as i64 - 1);
            if x1 < 0 || y1 < 0 {
                continue;
            }
            (x0, y0, x1 as usize, y1 as usize)
        } else {
            (0, 0, tiles_x - 1, tiles_y - 1)
        };
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                lists[ty * tiles_x + tx].push(idx as u32);
            }
        }
    }
    for list in lists.iter_mut() {
        list.sort_unstable_by(|&a, &b| {
            let da = projected[a as usize].as_ref().unwrap().depth;
            let db = projected[b as usize].as_ref().unwrap().depth;
            da.total_cmp(&db).then(a.cmp(&b))
        });
    }
    (lists, tiles_x, tiles_y)
}

struct TileOut {
    /// Pixel colors in tile-local row-major order, f64 accumulators.
    pixels: Vec<[f64; 3]>,
    final_t: Vec<f64>,
    n_contrib: Vec<u32>,
    stop: Vec<u32>,
    /// Aligned to the tile's splat list.
    contributed: Vec<bool>,
}

fn tile_bounds(t: usize, tiles_x: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let tx = t % tiles_x;
    let ty = t / tiles_x;
    let x0 = tx * TILE;
    let y0 = ty * TILE;
    (x0, y0, (x0 + TILE).min(width), (y0 + TILE).min(height))
}

/// Composite all projected splats into an image.
pub fn rasterize_forward(
    projected: &[Option<Projected2D>],
    width: usize,
    height: usize,
    opts: &RenderOptions,
) -> RenderOutput {
    let (tile_lists, tiles_x, tiles_y) = bin_tiles(projected, width, height, opts.clip_footprint);

    let tiles: Vec<TileOut> = par::map_indexed(tiles_x * tiles_y, |t| {
        let (x0, y0, x1, y1) = tile_bounds(t, tiles_x, width, height);
        let list = &tile_lists[t];
        let npx = (x1 - x0) * (y1 - y0);
        let mut out = TileOut {
            pixels: vec![[0.0; 3]; npx],
            final_t: vec![1.0; npx],
            n_contrib: vec![0; npx],
            stop: vec![list.len() as u32; npx],
            contributed: vec![false; list.len()],
        };
        for y in y0..y1 {
            for x in x0..x1 {
                let local = (y - y0) * (x1 - x0) + (x - x0);
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                let mut trans = 1.0f64;
                for (pos, &idx) in list.iter().enumerate() {
                    let p = projected[idx as usize].as_ref().unwrap();
                    let Some(alpha) = splat_alpha(p, px, py, opts.skip_low_alpha, opts.clip_footprint) else {
                        continue;
                    };
                    let w = alpha as f64 * trans;
                    for c in 0..3 {
                        out.pixels[local][c] += p.color[c] as f64 * w;
                    }
                    out.contributed[pos] = true;
                    out.n_contrib[local] += 1;
                    trans *= 1.0 - alpha as f64;
                    if opts.early_terminate && trans < T_MIN {
                        out.stop[local] = pos as u32 + 1;
                        break;
                    }
                }
                out.final_t[local] = trans;
            }
        }
        out
    });

    // Tiles own disjoint pixels; the merge order below is fixed regardless.
    let mut image = Image::zeros(width, height);
    let mut transmittance = vec![1.0f32; width * height];
    let mut n_contrib = vec![0u32; width * height];
    let mut final_t = vec![1.0f64; width * height];
    let mut stop = vec![0u32; width * height];
    let mut visible = vec![false; projected.len()];
    for (t, tile) in tiles.iter().enumerate() {
        let (x0, y0, x1, y1) = tile_bounds(t, tiles_x, width, height);
        for y in y0..y1 {
            for x in x0..x1 {
                let local = (y - y0) * (x1 - x0) + (x - x0);
                let global = y * width + x;
                image.set_pixel(
                    x,
                    y,
                    [
                        tile.pixels[local][0] as f32,
                        tile.pixels[local][1] as f32,
                        tile.pixels[local][2] as f32,
                    ],
                );
                transmittance[global] = tile.final_t[local] as f32;
                final_t[global] = tile.final_t[local];
                n_contrib[global] = tile.n_contrib[local];
                stop[global] = tile.stop[local];
            }
        }
        for (pos, &idx) in tile_lists[t].iter().enumerate() {
            if tile.contributed[pos] {
                visible[idx as usize] = true;
            }
        }
    }

    let state = opts.retain_state.then(|| RasterState {
        tile_lists,
        tiles_x,
        tiles_y,
        stop,
        final_t,
        opts: *opts,
    });

    RenderOutput {
        image,
        transmittance,
        n_contrib,
        visible,
        state,
    }
}

/// Per-tile sparse gradients, aligned to the tile's splat list.
struct TileGrads {
    grads: Vec<ProjGrad>,
}

fn backward_tile(
    t: usize,
    state: &RasterState,
    projected: &[Option<Projected2D>],
    upstream: &[f64],
    width: usize,
    height: usize,
) -> TileGrads {
    let (x0, y0, x1, y1) = tile_bounds(t, state.tiles_x, width, height);
    let list = &state.tile_lists[t];
    let mut local = TileGrads {
        grads: vec![ProjGrad::default(); list.len()],
    };
    let skip = state.opts.skip_low_alpha;
    let clip = state.opts.clip_footprint;

    for y in y0..y1 {
        for x in x0..x1 {
            let global = y * width + x;
            let g_pix = [
                upstream[global * 3],
                upstream[global * 3 + 1],
                upstream[global * 3 + 2],
            ];
            if g_pix == [0.0, 0.0, 0.0] {
                continue;
            }
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let stop = state.stop[global] as usize;

            // Walk the composited prefix back to front, reconstructing the
            // transmittance in front of each contribution and the suffix of
            // color already blended behind it.
            let mut trans_after = state.final_t[global];
            let mut suffix = [0.0f64; 3];
            for pos in (0..stop).rev() {
                let idx = list[pos] as usize;
                let p = projected[idx].as_ref().unwrap();
                let Some(alpha) = splat_alpha(p, px, py, skip, clip) else {
                    continue;
                };
                let a = alpha as f64;
                let trans_before = trans_after / (1.0 - a);
                let w = a * trans_before;

                let g = &mut local.grads[pos];
                let mut d_alpha = 0.0;
                for c in 0..3 {
                    g.d_color[c] += g_pix[c] * w;
                    d_alpha += g_pix[c] * (p.color[c] as f64 * trans_before - suffix[c] / (1.0 - a));
                    suffix[c] += p.color[c] as f64 * w;
                }

                // α' = min(α·exp(power), cap); the cap zeroes the gradient.
                let dx = (px - p.mean2d[0]) as f64;
                let dy = (py - p.mean2d[1]) as f64;
                let power = -0.5
                    * (p.conic[0] as f64 * dx * dx + p.conic[2] as f64 * dy * dy)
                    - p.conic[1] as f64 * dx * dy;
                let gauss = power.exp();
                if (p.alpha as f64) * gauss < ALPHA_CAP as f64 {
                    g.d_alpha += d_alpha * gauss;
                    let d_power = d_alpha * p.alpha as f64 * gauss;
                    g.d_conic[0] += d_power * (-0.5 * dx * dx);
                    g.d_conic[1] += d_power * (-dx * dy);
                    g.d_conic[2] += d_power * (-0.5 * dy * dy);
                    // δ = pixel − mean2d ⇒ d_mean2d = −d_δ.
                    let d_dx = d_power * -(p.conic[0] as f64 * dx + p.conic[1] as f64 * dy);
                    let d_dy = d_power * -(p.conic[1] as f64 * dx + p.conic[2] as f64 * dy);
                    g.d_mean2d[0] -= d_dx;
                    g.d_mean2d[1] -= d_dy;
                }

                trans_after = trans_before;
            }
        }
    }
    local
}

/// Backward pass: pull a per-pixel image gradient onto every projected
/// splat's screen-space parameters.
pub fn rasterize_backward(
    output: &RenderOutput,
    projected: &[Option<Projected2D>],
    upstream: &[f64],
) -> Result<BackwardOutput> {
    let state = output.state.as_ref().ok_or(Error::StateMissing)?;
    let width = output.image.width;
    let height = output.image.height;
    if upstream.len() != width * height * 3 {
        return Err(Error::ShapeMismatch {
            context: format!(
                "upstream gradient length {} for {}x{} image",
                upstream.len(),
                width,
                height
            ),
        });
    }
    let n_tiles = state.tiles_x * state.tiles_y;
    let mut grads = vec![ProjGrad::default(); projected.len()];

    if state.opts.deterministic {
        // Per-tile gradients computed in parallel, merged in tile order.
        let tiles: Vec<TileGrads> = par::map_indexed(n_tiles, |t| {
            backward_tile(t, state, projected, upstream, width, height)
        });
        for (t, tile) in tiles.iter().enumerate() {
            for (pos, &idx) in state.tile_lists[t].iter().enumerate() {
                add_grad(&mut grads[idx as usize], &tile.grads[pos]);
            }
        }
    } else {
        // Fast path: dense per-split accumulators reduced in whatever order
        // the scheduler produces.
        let reduced = par::fold_reduce(
            n_tiles,
            || vec![ProjGrad::default(); projected.len()],
            |mut acc, t| {
                let tile = backward_tile(t, state, projected, upstream, width, height);
                for (pos, &idx) in state.tile_lists[t].iter().enumerate() {
                    add_grad(&mut acc[idx as usize], &tile.grads[pos]);
                }
                acc
            },
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    add_grad(x, y);
                }
                a
            },
        );
        grads = reduced;
    }

    Ok(BackwardOutput { grads })
}

fn add_grad(acc: &mut ProjGrad, g: &ProjGrad) {
    acc.d_mean2d[0] += g.d_mean2d[0];
    acc.d_mean2d[1] += g.d_mean2d[1];
    for c in 0..3 {
        acc.d_conic[c] += g.d_conic[c];
        acc.d_color[c] += g.d_color[c];
    }
    acc.d_alpha += g.d_alpha;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_splat(mean: [f32; 2], depth: f32, color: [f32; 3], alpha: f32) -> Projected2D {
        // A huge, almost-constant footprint: conic ≈ 0 makes α' ≈ α nearby.
        Projected2D {
            mean2d: mean,
            conic: [1e-12, 0.0, 1e-12],
            depth,
            radius: 1000.0,
            color,
            alpha,
        }
    }

    #[test]
    fn single_splat_blends_alpha_times_color() {
        let p = flat_splat([8.0, 8.0], 1.0, [1.0, 0.0, 0.0], 0.5);
        let out = rasterize_forward(&[Some(p)], 16, 16, &RenderOptions::default());
        let px = out.image.pixel(7, 7); // pixel center (7.5, 7.5), g ≈ 1
        assert!((px[0] - 0.5).abs() < 1e-5, "{px:?}");
        assert_eq!(px[1], 0.0);
        assert!(out.visible[0]);
        let t = out.transmittance[7 * 16 + 7];
        assert!((t - 0.5).abs() < 1e-5);
    }

    #[test]
    fn two_coincident_splats_compose_front_to_back() {
        let front = flat_splat([8.0, 8.0], 1.0, [1.0, 0.0, 0.0], 0.5);
        let back = flat_splat([8.0, 8.0], 2.0, [0.0, 0.0, 1.0], 0.5);
        // insertion order must not matter; depth decides
        let out = rasterize_forward(&[Some(back), Some(front)], 16, 16, &RenderOptions::default());
        let px = out.image.pixel(8, 8);
        assert!((px[0] - 0.5).abs() < 1e-5);
        assert!((px[2] - 0.25).abs() < 1e-5);
        assert_eq!(out.n_contrib[8 * 16 + 8], 2);
    }

    #[test]
    fn empty_input_is_black_with_unit_transmittance() {
        let out = rasterize_forward(&[], 8, 8, &RenderOptions::default());
        assert!(out.image.data.iter().all(|&v| v == 0.0));
        assert!(out.transmittance.iter().all(|&t| t == 1.0));
    }

    #[test]
    fn culled_splats_are_ignored() {
        let out = rasterize_forward(&[None, None], 8, 8, &RenderOptions::default());
        assert_eq!(out.visible, vec![false, false]);
    }

    #[test]
    fn backward_without_state_is_an_error() {
        let p = flat_splat([4.0, 4.0], 1.0, [1.0, 1.0, 1.0], 0.5);
        let projected = vec![Some(p)];
        let out = rasterize_forward(&projected, 8, 8, &RenderOptions::default());
        let upstream = vec![0.0; 8 * 8 * 3];
        assert!(matches!(
            rasterize_backward(&out, &projected, &upstream),
            Err(Error::StateMissing)
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = flat_splat([4.0, 4.0], 1.0, [1.0, 1.0, 1.0], 0.5);
        let projected = vec![Some(p)];
        let opts = RenderOptions {
            retain_state: true,
            ..Default::default()
        };
        let out = rasterize_forward(&projected, 8, 8, &opts);
        let upstream = vec![0.0; 8 * 8 * 3];
        let back = rasterize_backward(&out, &projected, &upstream).unwrap();
        assert_eq!(back.grads[0].d_alpha, 0.0);
        assert_eq!(back.grads[0].d_color, [0.0; 3]);
    }

    #[test]
    fn single_splat_color_gradient_is_blend_weight() {
        // ∂pixel/∂color = α' at that pixel (one term in the sum).
        let p = flat_splat([4.0, 4.0], 1.0, [0.3, 0.3, 0.3], 0.47);
        let projected = vec![Some(p)];
        let opts = RenderOptions {
            retain_state: true,
            ..Default::default()
        };
        let out = rasterize_forward(&projected, 8, 8, &opts);
        let mut upstream = vec![0.0; 8 * 8 * 3];
        let pix = 4 * 8 + 4;
        upstream[pix * 3] = 1.0;
        let back = rasterize_backward(&out, &projected, &upstream).unwrap();
        let alpha = splat_alpha(&p, 4.5, 4.5, true, true).unwrap() as f64;
        assert!((back.grads[0].d_color[0] - alpha).abs() < 1e-9);
        assert_eq!(back.grads[0].d_color[1], 0.0);
    }

    #[test]
    fn deterministic_and_fast_merges_agree_to_fp_reordering() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(71);
        let projected: Vec<Option<Projected2D>> = (0..40)
            .map(|_| {
                Some(Projected2D {
                    mean2d: [rng.gen_range(0.0..32.0), rng.gen_range(0.0..32.0)],
                    conic: [rng.gen_range(0.05..0.4), 0.0, rng.gen_range(0.05..0.4)],
                    depth: rng.gen_range(1.0..5.0),
                    radius: rng.gen_range(3.0..12.0f32).ceil(),
                    color: [rng.gen(), rng.gen(), rng.gen()],
                    alpha: rng.gen_range(0.1..0.9),
                })
            })
            .collect();
        let upstream: Vec<f64> = (0..32 * 32 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut opts = RenderOptions {
            retain_state: true,
            deterministic: true,
            ..Default::default()
        };
        let out_det = rasterize_forward(&projected, 32, 32, &opts);
        let det = rasterize_backward(&out_det, &projected, &upstream).unwrap();

        opts.deterministic = false;
        let out_fast = rasterize_forward(&projected, 32, 32, &opts);
        let fast = rasterize_backward(&out_fast, &projected, &upstream).unwrap();

        assert_eq!(out_det.image, out_fast.image);
        for (a, b) in det.grads.iter().zip(&fast.grads) {
            for c in 0..2 {
                assert!((a.d_mean2d[c] - b.d_mean2d[c]).abs() < 1e-9);
            }
            assert!((a.d_alpha - b.d_alpha).abs() < 1e-9);
        }
    }
}
