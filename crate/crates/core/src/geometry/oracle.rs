//! Monte-Carlo IoU estimate used as an independent check on the clipping
//! kernel. It only relies on point-in-box tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Box3D;

/// Axis-aligned bounds `(min, max)` of a box, per axis.
fn aabb(b: &Box3D) -> ([f64; 3], [f64; 3]) {
    let (s, c) = b.yaw().sin_cos();
    let ex = 0.5 * (b.l() * c.abs() + b.w() * s.abs());
    let ey = 0.5 * (b.l() * s.abs() + b.w() * c.abs());
    let ez = 0.5 * b.h();
    ([b.x() - ex, b.y() - ey, b.z() - ez], [b.x() + ex, b.y() + ey, b.z() + ez])
}

/// Samples `n_samples` points uniformly in the axis-aligned volume covering
/// both boxes and returns `|in both| / |in either|`. Returns 0 when no sample
/// lands in either box.
pub fn mc_iou_oracle(a: &Box3D, b: &Box3D, n_samples: usize, seed: u64) -> f64 {
    let counts = mc_counts(a, b, n_samples, seed);
    if counts.either == 0 {
        0.0
    } else {
        counts.both as f64 / counts.either as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McCounts {
    pub both: u64,
    pub either: u64,
}

pub fn mc_counts(a: &Box3D, b: &Box3D, n_samples: usize, seed: u64) -> McCounts {
    let (lo_a, hi_a) = aabb(a);
    let (lo_b, hi_b) = aabb(b);
    let lo: [f64; 3] = std::array::from_fn(|k| lo_a[k].min(lo_b[k]));
    let hi: [f64; 3] = std::array::from_fn(|k| hi_a[k].max(hi_b[k]));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut both = 0u64;
    let mut either = 0u64;
    for _ in 0..n_samples {
        let p: [f64; 3] = std::array::from_fn(|k| lo[k] + (hi[k] - lo[k]) * rng.gen::<f64>());
        let in_a = a.contains(p[0], p[1], p[2]);
        let in_b = b.contains(p[0], p[1], p[2]);
        if in_a || in_b {
            either += 1;
            if in_a && in_b {
                both += 1;
            }
        }
    }
    McCounts { both, either }
}

/// Three-sigma binomial half-width for a ratio estimate built from `either`
/// trials with success probability `p`.
pub fn three_sigma(p: f64, either: u64) -> f64 {
    if either == 0 {
        return 0.0;
    }
    3.0 * (p * (1.0 - p) / either as f64).sqrt()
}
