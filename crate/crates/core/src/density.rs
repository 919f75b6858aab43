//! Adaptive density control with binding inheritance.
//!
//! Clone/split decisions follow the accumulated view-space positional
//! gradient; every new splat inherits the parent-triangle index of the splat
//! that triggered it, and pruning never leaves a triangle without at least
//! one attached splat.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::quat_to_rotation;
use crate::splat_model::{inverse_sigmoid, sigmoid, RiggedAvatar};

/// Densification statistics window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DensifyStats {
    /// Per-splat accumulated ‖∂L/∂mean2d‖ over the window.
    pub grad_accum: Vec<f32>,
    /// Per-splat count of iterations that contributed.
    pub hits: Vec<u32>,
    /// Iterations accumulated since the last reset.
    pub window: u32,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        DensifyStats {
            grad_accum: vec![0.0; n],
            hits: vec![0; n],
            window: 0,
        }
    }

    /// Fold one iteration's per-splat gradient norms in; only splats visible
    /// this iteration count as hits.
    pub fn accumulate(&mut self, mean2d_norms: &[f64], visible: &[bool]) {
        assert_eq!(mean2d_norms.len(), self.grad_accum.len());
        assert_eq!(visible.len(), self.grad_accum.len());
        for i in 0..mean2d_norms.len() {
            if visible[i] {
                self.grad_accum[i] += mean2d_norms[i] as f32;
                self.hits[i] += 1;
            }
        }
        self.window += 1;
    }

    /// Mean accumulated gradient per contributing iteration.
    pub fn mean_grad(&self, i: usize) -> f32 {
        if self.hits[i] == 0 {
            0.0
        } else {
            self.grad_accum[i] / self.hits[i] as f32
        }
    }

    pub fn reset(&mut self, n: usize) {
        self.grad_accum.clear();
        self.grad_accum.resize(n, 0.0);
        self.hits.clear();
        self.hits.resize(n, 0);
        self.window = 0;
    }

    fn compact(&mut self, mask: &[bool]) {
        let mut w = 0;
        for r in 0..mask.len() {
            if mask[r] {
                self.grad_accum[w] = self.grad_accum[r];
                self.hits[w] = self.hits[r];
                w += 1;
            }
        }
        self.grad_accum.truncate(w);
        self.hits.truncate(w);
    }
}

/// Density-control thresholds and schedule (paper-scale iteration indices;
/// the trainer rescales them to its iteration budget).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdcConfig {
    /// Mean view-space positional gradient that triggers densification.
    pub grad_threshold: f32,
    /// Local activated scale above which a triggered splat splits rather
    /// than clones.
    pub split_scale_threshold: f32,
    /// Children's activated scales are the parent's divided by this.
    pub split_factor: f32,
    /// Splats with activated opacity below this are pruned.
    pub prune_opacity: f32,
    /// Opacity resets clamp alpha down to this value.
    pub reset_opacity_to: f32,
    /// Densify/prune every this many iterations...
    pub interval: u64,
    /// ...starting at this iteration.
    pub start: u64,
    /// Opacity reset cadence.
    pub reset_interval: u64,
}

impl Default for AdcConfig {
    fn default() -> Self {
        AdcConfig {
            grad_threshold: 2e-4,
            split_scale_threshold: 0.6,
            split_factor: 1.6,
            prune_opacity: 0.005,
            reset_opacity_to: 0.01,
            interval: 2_000,
            start: 10_000,
            reset_interval: 60_000,
        }
    }
}

/// How a structural edit maps new splat slots onto old ones, so optimizer
/// moments and any other per-splat arrays stay aligned. `None` slots start
/// fresh.
pub type SlotRemap = Vec<Option<usize>>;

/// Outcome of one densify pass.
#[derive(Debug, Clone)]
pub struct DensifyOutcome {
    pub remap: SlotRemap,
    pub cloned: usize,
    pub split: usize,
}

/// Clone small / split large splats whose mean view-space gradient exceeds
/// the threshold. Splitting replaces the parent with two children sampled
/// from its own local density (net +1); cloning duplicates in place. New
/// splats inherit the source's parent triangle. Statistics are reset.
pub fn densify<R: Rng>(
    avatar: &mut RiggedAvatar,
    stats: &mut DensifyStats,
    cfg: &AdcConfig,
    rng: &mut R,
) -> DensifyOutcome {
    let n = avatar.splats.len();
    assert_eq!(stats.grad_accum.len(), n);
    let mut remap: SlotRemap = (0..n).map(Some).collect();
    let mut cloned = 0;
    let mut split = 0;

    for i in 0..n {
        if stats.mean_grad(i) <= cfg.grad_threshold {
            continue;
        }
        let g = avatar.splats.get(i);
        let s = g.activated_scale();
        let max_scale = s[0].max(s[1]).max(s[2]);
        if max_scale > cfg.split_scale_threshold {
            // Split in local space: sample both children from the parent's
            // own Gaussian, shrink scales, replace the slot and append.
            let rot = quat_to_rotation(&[
                g.rot_local[0] as f64,
                g.rot_local[1] as f64,
                g.rot_local[2] as f64,
                g.rot_local[3] as f64,
            ]);
            let log_shrink = cfg.split_factor.ln();
            let child = |rng: &mut R| {
                let z: [f64; 3] = [
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ];
                let local = crate::geometry::Vec3::new(
                    s[0] as f64 * z[0],
                    s[1] as f64 * z[1],
                    s[2] as f64 * z[2],
                );
                let offset = rot * local;
                let mut c = g.clone();
                for a in 0..3 {
                    c.mu_local[a] += offset[a] as f32;
                    c.log_scale[a] -= log_shrink;
                }
                c
            };
            let first = child(rng);
            let second = child(rng);
            avatar.splats.set(i, &first);
            avatar.splats.push(&second);
            remap[i] = None;
            remap.push(None);
            split += 1;
        } else {
            avatar.splats.push(&g);
            remap.push(None);
            cloned += 1;
        }
        avatar.per_triangle_count[g.parent_triangle as usize] += 1;
    }

    stats.reset(avatar.splats.len());
    DensifyOutcome {
        remap,
        cloned,
        split,
    }
}

/// Remove splats below the opacity threshold, except that a triangle's
/// last-attached splat survives regardless so coverage never drops to zero.
pub fn prune(avatar: &mut RiggedAvatar, stats: &mut DensifyStats, cfg: &AdcConfig) -> SlotRemap {
    let n = avatar.splats.len();
    let mut keep = vec![false; n];
    let mut covered = vec![false; avatar.topology.triangle_count()];
    for i in 0..n {
        if sigmoid(avatar.splats.opacity[i]) >= cfg.prune_opacity {
            keep[i] = true;
            covered[avatar.splats.parent[i] as usize] = true;
        }
    }
    // Coverage guarantee: rescue the last-attached splat of each bare triangle.
    for i in (0..n).rev() {
        let t = avatar.splats.parent[i] as usize;
        if !covered[t] {
            keep[i] = true;
            covered[t] = true;
        }
    }

    let remap: SlotRemap = (0..n).filter(|&i| keep[i]).map(Some).collect();
    avatar.splats.retain_mask(&keep);
    stats.compact(&keep);
    avatar.per_triangle_count = avatar.recount();
    remap
}

/// Clamp every splat's opacity down to the reset value. Idempotent.
pub fn reset_opacity(avatar: &mut RiggedAvatar, cfg: &AdcConfig) {
    let cap = inverse_sigmoid(cfg.reset_opacity_to);
    for logit in avatar.splats.opacity.iter_mut() {
        if *logit > cap {
            *logit = cap;
        }
    }
}
