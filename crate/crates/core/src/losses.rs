//! Training objective and image-quality metrics.
//!
//! The color term mixes L1 with structural dissimilarity; two thresholded
//! regularizers keep visible splats near their parent triangles and keep
//! their local scales from exceeding the triangle scale. Both regularizers
//! are exactly flat inside their tolerance boxes. All reductions run in
//! f64 and sequentially, so losses are bit-stable across thread counts.

use crate::error::{Error, Result};
use crate::image_buf::Image;
use crate::splat_model::SplatSet;

/// Loss-term weights and thresholds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda_dssim: f64,
    pub lambda_position: f64,
    pub lambda_scaling: f64,
    pub eps_position: f64,
    pub eps_scaling: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_dssim: 0.2,
            lambda_position: 0.01,
            lambda_scaling: 1.0,
            eps_position: 1.0,
            eps_scaling: 0.6,
        }
    }
}

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            context: format!(
                "images {}x{} vs {}x{}",
                a.width, a.height, b.width, b.height
            ),
        });
    }
    Ok(())
}

/// Mean absolute difference over all pixels and channels, with its image
/// gradient `sign(rendered − target)/N`.
pub fn l1_loss(rendered: &Image, target: &Image) -> Result<(f64, Vec<f64>)> {
    check_shapes(rendered, target)?;
    let n = rendered.data.len();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let d = rendered.data[i] as f64 - target.data[i] as f64;
        loss += d.abs();
        grad[i] = if d > 0.0 {
            inv_n
        } else if d < 0.0 {
            -inv_n
        } else {
            0.0
        };
    }
    Ok((loss * inv_n, grad))
}

// ---------------------------------------------------------------------------
// SSIM / D-SSIM with an 11×11 Gaussian window, σ = 1.5, on valid windows.
// ---------------------------------------------------------------------------

const WIN: usize = 11;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; WIN] {
    let sigma = 1.5;
    let mut w = [0.0; WIN];
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - (WIN as f64 - 1.0) / 2.0;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
        sum += *v;
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Horizontal valid convolution: H×W → H×(W−10).
fn conv_h(src: &[f64], w: usize, h: usize, kern: &[f64; WIN]) -> Vec<f64> {
    let out_w = w - WIN + 1;
    let mut out = vec![0.0; out_w * h];
    for r in 0..h {
        for c in 0..out_w {
            let mut acc = 0.0;
            for (k, kv) in kern.iter().enumerate() {
                acc += src[r * w + c + k] * kv;
            }
            out[r * out_w + c] = acc;
        }
    }
    out
}

/// Vertical valid convolution: H×W → (H−10)×W.
fn conv_v(src: &[f64], w: usize, h: usize, kern: &[f64; WIN]) -> Vec<f64> {
    let out_h = h - WIN + 1;
    let mut out = vec![0.0; w * out_h];
    for r in 0..out_h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kern.iter().enumerate() {
                acc += src[(r + k) * w + c] * kv;
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// Adjoint of [`conv_h`]: H×(W−10) → H×W.
fn adj_h(src: &[f64], out_w: usize, h: usize, kern: &[f64; WIN]) -> Vec<f64> {
    let in_w = out_w - WIN + 1; // src width
    let mut out = vec![0.0; out_w * h];
    for r in 0..h {
        for c in 0..in_w {
            let v = src[r * in_w + c];
            for (k, kv) in kern.iter().enumerate() {
                out[r * out_w + c + k] += v * kv;
            }
        }
    }
    out
}

/// Adjoint of [`conv_v`]: (H−10)×W → H×W.
fn adj_v(src: &[f64], w: usize, out_h: usize, kern: &[f64; WIN]) -> Vec<f64> {
    let in_h = out_h - WIN + 1;
    let mut out = vec![0.0; w * out_h];
    for r in 0..in_h {
        for c in 0..w {
            let v = src[r * w + c];
            for (k, kv) in kern.iter().enumerate() {
                out[(r + k) * w + c] += v * kv;
            }
        }
    }
    out
}

fn window_blur(src: &[f64], w: usize, h: usize, kern: &[f64; WIN]) -> Vec<f64> {
    conv_v(&conv_h(src, w, h, kern), w - WIN + 1, h, kern)
}

fn window_scatter(src: &[f64], w: usize, h: usize, kern: &[f64; WIN]) -> Vec<f64> {
    adj_h(&adj_v(src, w - WIN + 1, h, kern), w, h, kern)
}

struct SsimPlane {
    s: Vec<f64>,
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    sxx: Vec<f64>,
    syy: Vec<f64>,
    sxy: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
}

fn ssim_plane(rendered: &Image, target: &Image, ch: usize, kern: &[f64; WIN]) -> SsimPlane {
    let (w, h) = (rendered.width, rendered.height);
    let x: Vec<f64> = rendered.data.iter().skip(ch).step_by(3).map(|&v| v as f64).collect();
    let y: Vec<f64> = target.data.iter().skip(ch).step_by(3).map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();

    let mu_x = window_blur(&x, w, h, kern);
    let mu_y = window_blur(&y, w, h, kern);
    let sxx = window_blur(&xx, w, h, kern);
    let syy = window_blur(&yy, w, h, kern);
    let sxy = window_blur(&xy, w, h, kern);

    let mut s = vec![0.0; mu_x.len()];
    for p in 0..s.len() {
        let (mx, my) = (mu_x[p], mu_y[p]);
        let var_x = sxx[p] - mx * mx;
        let var_y = syy[p] - my * my;
        let cov = sxy[p] - mx * my;
        let a1 = 2.0 * mx * my + C1;
        let a2 = 2.0 * cov + C2;
        let b1 = mx * mx + my * my + C1;
        let b2 = var_x + var_y + C2;
        s[p] = (a1 * a2) / (b1 * b2);
    }
    SsimPlane {
        s,
        mu_x,
        mu_y,
        sxx,
        syy,
        sxy,
        x,
        y,
    }
}

fn ssim_shape_check(a: &Image, b: &Image) -> Result<()> {
    check_shapes(a, b)?;
    if a.width < WIN || a.height < WIN {
        return Err(Error::ShapeMismatch {
            context: format!("image {}x{} smaller than the {WIN}x{WIN} SSIM window", a.width, a.height),
        });
    }
    Ok(())
}

/// Mean SSIM over channels and valid windows.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_shape_check(a, b)?;
    let kern = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let plane = ssim_plane(a, b, ch, &kern);
        total += plane.s.iter().sum::<f64>();
        count += plane.s.len();
    }
    Ok(total / count as f64)
}

/// `(1 − SSIM)/2` with its gradient on the rendered image.
pub fn dssim_loss(rendered: &Image, target: &Image) -> Result<(f64, Vec<f64>)> {
    ssim_shape_check(rendered, target)?;
    let (w, h) = (rendered.width, rendered.height);
    let kern = gaussian_window();
    let mut grad = vec![0.0; rendered.data.len()];
    let mut mean_s = 0.0;
    let windows = (w - WIN + 1) * (h - WIN + 1);
    let d_loss_d_s = -1.0 / (2.0 * 3.0 * windows as f64);

    for ch in 0..3 {
        let plane = ssim_plane(rendered, target, ch, &kern);
        mean_s += plane.s.iter().sum::<f64>() / (3.0 * windows as f64);

        // Per-window partials of S w.r.t. the blurred statistics of x.
        let mut g_mu = vec![0.0; windows];
        let mut g_sxx = vec![0.0; windows];
        let mut g_sxy = vec![0.0; windows];
        for p in 0..windows {
            let (mx, my) = (plane.mu_x[p], plane.mu_y[p]);
            let var_x = plane.sxx[p] - mx * mx;
            let var_y = plane.syy[p] - my * my;
            let cov = plane.sxy[p] - mx * my;
            let a1 = 2.0 * mx * my + C1;
            let a2 = 2.0 * cov + C2;
            let b1 = mx * mx + my * my + C1;
            let b2 = var_x + var_y + C2;
            let s = plane.s[p];
            let inv_b1b2 = 1.0 / (b1 * b2);
            let ds_da1 = a2 * inv_b1b2;
            let ds_da2 = a1 * inv_b1b2;
            let ds_db1 = -s / b1;
            let ds_db2 = -s / b2;
            // μx enters a1, b1 directly and σx², σxy through the −μ terms.
            g_mu[p] = d_loss_d_s
                * (ds_da1 * 2.0 * my + ds_db1 * 2.0 * mx
                    + ds_da2 * (-2.0 * my)
                    + ds_db2 * (-2.0 * mx));
            g_sxx[p] = d_loss_d_s * ds_db2;
            g_sxy[p] = d_loss_d_s * ds_da2 * 2.0;
        }

        let back_mu = window_scatter(&g_mu, w, h, &kern);
        let back_sxx = window_scatter(&g_sxx, w, h, &kern);
        let back_sxy = window_scatter(&g_sxy, w, h, &kern);
        for i in 0..w * h {
            grad[i * 3 + ch] =
                back_mu[i] + 2.0 * plane.x[i] * back_sxx[i] + plane.y[i] * back_sxy[i];
        }
    }
    Ok(((1.0 - mean_s) / 2.0, grad))
}

/// `10·log10(1/MSE)` in dB, capped at 100 when MSE < 1e-10.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let mut mse = 0.0;
    for (x, y) in a.data.iter().zip(&b.data) {
        let d = *x as f64 - *y as f64;
        mse += d * d;
    }
    mse /= a.data.len() as f64;
    if mse < 1e-10 {
        Ok(100.0)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// Thresholded local-position regularizer.
///
/// Mean over visible splats of `‖max(|μ|, ε)‖₂` (elementwise over absolute
/// coordinates); coordinates inside the tolerance box get zero gradient.
/// Returns the loss and gradients on `mu_local`, laid out like
/// [`SplatSet::mu`].
pub fn position_loss(splats: &SplatSet, visible: &[bool], eps: f64) -> (f64, Vec<f64>) {
    assert_eq!(visible.len(), splats.len());
    let mut grad = vec![0.0; splats.mu.len()];
    let visible_count = visible.iter().filter(|&&v| v).count();
    if visible_count == 0 {
        return (0.0, grad);
    }
    let inv = 1.0 / visible_count as f64;
    let mut loss = 0.0;
    for i in 0..splats.len() {
        if !visible[i] {
            continue;
        }
        let mu = [
            splats.mu[3 * i] as f64,
            splats.mu[3 * i + 1] as f64,
            splats.mu[3 * i + 2] as f64,
        ];
        let clamped = [mu[0].abs().max(eps), mu[1].abs().max(eps), mu[2].abs().max(eps)];
        let norm = (clamped[0] * clamped[0] + clamped[1] * clamped[1] + clamped[2] * clamped[2])
            .sqrt();
        loss += norm;
        for c in 0..3 {
            if mu[c].abs() > eps {
                grad[3 * i + c] = inv * clamped[c] / norm * mu[c].signum();
            }
        }
    }
    (loss * inv, grad)
}

/// Thresholded local-scale regularizer on activated scales.
///
/// Mean over visible splats of `‖max(s, ε)‖₂` with `s = exp(log_scale)`;
/// components at or below the tolerance get zero gradient. Returns gradients
/// on `log_scale` (the exp chain applied).
pub fn scaling_loss(splats: &SplatSet, visible: &[bool], eps: f64) -> (f64, Vec<f64>) {
    assert_eq!(visible.len(), splats.len());
    let mut grad = vec![0.0; splats.log_scale.len()];
    let visible_count = visible.iter().filter(|&&v| v).count();
    if visible_count == 0 {
        return (0.0, grad);
    }
    let inv = 1.0 / visible_count as f64;
    let mut loss = 0.0;
    for i in 0..splats.len() {
        if !visible[i] {
            continue;
        }
        let s = [
            (splats.log_scale[3 * i] as f64).exp(),
            (splats.log_scale[3 * i + 1] as f64).exp(),
            (splats.log_scale[3 * i + 2] as f64).exp(),
        ];
        let clamped = [s[0].max(eps), s[1].max(eps), s[2].max(eps)];
        let norm = (clamped[0] * clamped[0] + clamped[1] * clamped[1] + clamped[2] * clamped[2])
            .sqrt();
        loss += norm;
        for c in 0..3 {
            if s[c] > eps {
                // d‖·‖/ds · ds/d(log s) = (s/‖·‖)·s
                grad[3 * i + c] = inv * clamped[c] / norm * s[c];
            }
        }
    }
    (loss * inv, grad)
}

/// All loss terms of one iteration.
#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub total: f64,
    pub l1: f64,
    pub dssim: f64,
    pub position: f64,
    pub scaling: f64,
    /// Gradient on the rendered image, `(1−λ)·∂L1 + λ·∂DSSIM` (weighted).
    pub d_image: Vec<f64>,
    /// Weighted gradient on `mu_local`, visible splats only.
    pub d_mu: Vec<f64>,
    /// Weighted gradient on `log_scale`, visible splats only.
    pub d_log_scale: Vec<f64>,
}

/// `(1−λ)·L1 + λ·D-SSIM + λ_position·L_position + λ_scaling·L_scaling`,
/// with the regularizers gated to splats visible in this forward pass.
pub fn total_loss(
    rendered: &Image,
    target: &Image,
    splats: &SplatSet,
    visible: &[bool],
    weights: &LossWeights,
) -> Result<TotalLoss> {
    let (l1, g_l1) = l1_loss(rendered, target)?;
    let (dssim, g_dssim) = dssim_loss(rendered, target)?;
    let (position, g_mu) = position_loss(splats, visible, weights.eps_position);
    let (scaling, g_ls) = scaling_loss(splats, visible, weights.eps_scaling);

    let lam = weights.lambda_dssim;
    let mut d_image = vec![0.0; g_l1.len()];
    for i in 0..d_image.len() {
        d_image[i] = (1.0 - lam) * g_l1[i] + lam * g_dssim[i];
    }
    let d_mu: Vec<f64> = g_mu.iter().map(|g| g * weights.lambda_position).collect();
    let d_log_scale: Vec<f64> = g_ls.iter().map(|g| g * weights.lambda_scaling).collect();

    Ok(TotalLoss {
        total: (1.0 - lam) * l1
            + lam * dssim
            + weights.lambda_position * position
            + weights.lambda_scaling * scaling,
        l1,
        dssim,
        position,
        scaling,
        d_image,
        d_mu,
        d_log_scale,
    })
}
