//! Input transforms applied during exploiter training: countermeasure
//! pre-filters (grayscale, bit-depth reduction), standard augmentation
//! (random crop / flip), and mixup.
//!
//! All transforms operate on `[0,1]` NHWC batches, before model-internal
//! normalization. Randomized transforms draw fresh randomness per batch from
//! a caller-supplied RNG, so a training run's transform sequence is fully
//! determined by its seed.

use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ITU-R BT.601 luma weights; the standard RGB-to-gray projection.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// One configurable input transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    /// Project to luminance and replicate across all three channels.
    Grayscale,
    /// Quantize each channel to `2^bits` levels.
    BitDepthReduction { bits: u8 },
    /// Pad by `pad` on each side (reflection or zeros) and crop back at a
    /// random offset, independently per image.
    RandomCrop { pad: usize, reflect: bool },
    /// Mirror each image left-right with probability `p`.
    RandomFlip { p: f64 },
    /// Convex combination of the batch with a shuffled copy of itself;
    /// labels become soft. Must come last in a stack.
    Mixup { alpha: f64 },
}

impl Transform {
    /// Compact name for report rows and run labels.
    pub fn label(&self) -> String {
        match *self {
            Transform::Grayscale => "grayscale".into(),
            Transform::BitDepthReduction { bits } => format!("bdr{bits}"),
            Transform::RandomCrop { pad, reflect } => {
                format!("crop{pad}{}", if reflect { "r" } else { "z" })
            }
            Transform::RandomFlip { p } => format!("flip{p}"),
            Transform::Mixup { alpha } => format!("mixup{alpha}"),
        }
    }
}

/// An ordered list of transforms applied to every training batch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransformStack {
    pub transforms: Vec<Transform>,
}

impl TransformStack {
    pub fn new(transforms: Vec<Transform>) -> Result<Self> {
        let stack = TransformStack { transforms };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.transforms.iter().enumerate() {
            match *t {
                Transform::BitDepthReduction { bits } => {
                    if !(1..=8).contains(&bits) {
                        return Err(Error::Config(format!(
                            "bit depth must lie in 1..=8, got {bits}"
                        )));
                    }
                }
                Transform::RandomFlip { p } => {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::Config(format!(
                            "flip probability must lie in [0,1], got {p}"
                        )));
                    }
                }
                Transform::Mixup { alpha } => {
                    if alpha <= 0.0 {
                        return Err(Error::Config(format!(
                            "mixup alpha must be positive, got {alpha}"
                        )));
                    }
                    if i + 1 != self.transforms.len() {
                        return Err(Error::Config(
                            "mixup must be the last transform in a stack".into(),
                        ));
                    }
                }
                Transform::Grayscale | Transform::RandomCrop { .. } => {}
            }
        }
        Ok(())
    }

    pub fn contains_grayscale(&self) -> bool {
        self.transforms.iter().any(|t| matches!(t, Transform::Grayscale))
    }

    pub fn contains_mixup(&self) -> bool {
        self.transforms.iter().any(|t| matches!(t, Transform::Mixup { .. }))
    }
}

/// Labels after a transform stack: hard indices, or a soft distribution if
/// mixup ran.
#[derive(Debug, Clone)]
pub enum BatchLabels {
    Hard(Vec<usize>),
    Soft(Array2<f64>),
}

// ---------------------------------------------------------------------------
// Individual transforms

/// Luminance projection, replicated over the channel axis. Output channels
/// are exactly equal, so applying this twice is a no-op.
pub fn grayscale(x: &Array4<f64>) -> Result<Array4<f64>> {
    let (n, h, w, c) = x.dim();
    if c != 3 {
        return Err(Error::Shape(format!("grayscale expects 3 channels, got {c}")));
    }
    let mut out = Array4::zeros((n, h, w, c));
    for i in 0..n {
        for y in 0..h {
            for z in 0..w {
                let lum = LUMA[0] * x[[i, y, z, 0]]
                    + LUMA[1] * x[[i, y, z, 1]]
                    + LUMA[2] * x[[i, y, z, 2]];
                for ch in 0..c {
                    out[[i, y, z, ch]] = lum;
                }
            }
        }
    }
    Ok(out)
}

/// Quantize to `2^bits` evenly spaced levels in `[0,1]`:
/// `round(x * (2^bits - 1)) / (2^bits - 1)`. Idempotent by construction.
pub fn bit_depth_reduce(x: &Array4<f64>, bits: u8) -> Array4<f64> {
    assert!((1..=8).contains(&bits), "bit depth must lie in 1..=8");
    let levels = (f64::from(2u32.pow(u32::from(bits))) - 1.0).max(1.0);
    x.mapv(|v| (v * levels).round() / levels)
}

/// Reflect an out-of-range coordinate back into `0..n` without repeating the
/// edge pixel (`-1 -> 1`, `n -> n-2`).
fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    // One fold suffices for pad < n, but loop for safety.
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Pad-and-crop at a random offset, independently per image. `reflect`
/// selects reflection padding; otherwise the border is zeros.
pub fn random_crop(
    x: &Array4<f64>,
    pad: usize,
    reflect: bool,
    rng: &mut impl Rng,
) -> Array4<f64> {
    if pad == 0 {
        return x.clone();
    }
    let (n, h, w, c) = x.dim();
    let mut out = Array4::zeros((n, h, w, c));
    for i in 0..n {
        let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
        for y in 0..h {
            for z in 0..w {
                let sy = y as isize + dy;
                let sx = z as isize + dx;
                let value_at = |ch: usize| -> f64 {
                    if reflect {
                        x[[i, reflect_index(sy, h), reflect_index(sx, w), ch]]
                    } else if sy >= 0 && (sy as usize) < h && sx >= 0 && (sx as usize) < w {
                        x[[i, sy as usize, sx as usize, ch]]
                    } else {
                        0.0
                    }
                };
                for ch in 0..c {
                    out[[i, y, z, ch]] = value_at(ch);
                }
            }
        }
    }
    out
}

/// Mirror each image along the width axis with probability `p`.
pub fn random_flip(x: &Array4<f64>, p: f64, rng: &mut impl Rng) -> Array4<f64> {
    let (n, _, _, _) = x.dim();
    let mut out = x.clone();
    for i in 0..n {
        if rng.random_bool(p) {
            let mirrored = x.slice(ndarray::s![i, .., ..;-1, ..]).to_owned();
            out.index_axis_mut(Axis(0), i).assign(&mirrored);
        }
    }
    out
}

/// Mirror every image along the width axis (deterministic; its own inverse).
pub fn flip_image(x: &Array4<f64>) -> Array4<f64> {
    let mut out = x.clone();
    out.invert_axis(Axis(2));
    out
}

/// The standard augmentation pair: random crop then random flip.
pub fn augment(
    x: &Array4<f64>,
    pad: usize,
    reflect: bool,
    flip_p: f64,
    rng: &mut impl Rng,
) -> Array4<f64> {
    let cropped = random_crop(x, pad, reflect, rng);
    random_flip(&cropped, flip_p, rng)
}

/// Deterministic mixup core: `x' = λ·x + (1-λ)·x[perm]`, labels likewise.
/// Exposed separately so the λ∈{0,1} identities are directly testable.
pub fn mixup_with(
    x: &Array4<f64>,
    y_onehot: &Array2<f64>,
    lambda: f64,
    perm: &[usize],
) -> (Array4<f64>, Array2<f64>) {
    let n = x.dim().0;
    assert_eq!(perm.len(), n, "permutation length mismatch");
    assert_eq!(y_onehot.dim().0, n, "label rows mismatch");
    let mut xm = x * lambda;
    let mut ym = y_onehot * lambda;
    for (row, &src) in perm.iter().enumerate() {
        let xi = x.index_axis(Axis(0), src);
        xm.index_axis_mut(Axis(0), row)
            .zip_mut_with(&xi, |a, &b| *a += (1.0 - lambda) * b);
        let yi = y_onehot.index_axis(Axis(0), src);
        ym.index_axis_mut(Axis(0), row)
            .zip_mut_with(&yi, |a, &b| *a += (1.0 - lambda) * b);
    }
    (xm, ym)
}

/// Batch-level mixup: one `λ ~ Beta(alpha, alpha)` per batch and a uniformly
/// random pairing permutation.
pub fn mixup(
    x: &Array4<f64>,
    y_onehot: &Array2<f64>,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<(Array4<f64>, Array2<f64>)> {
    if alpha <= 0.0 {
        return Err(Error::Config(format!("mixup alpha must be positive, got {alpha}")));
    }
    let n = x.dim().0;
    if n < 2 {
        return Err(Error::Config("mixup needs a batch of at least 2".into()));
    }
    let beta = Beta::new(alpha, alpha).expect("alpha > 0");
    let lambda = beta.sample(rng);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    Ok(mixup_with(x, y_onehot, lambda, &perm))
}

/// Apply a full stack to one batch. Hard labels go in; hard labels come out
/// unless mixup ran.
pub fn apply_stack(
    stack: &TransformStack,
    x: &Array4<f64>,
    labels: &[usize],
    class_count: usize,
    rng: &mut impl Rng,
) -> Result<(Array4<f64>, BatchLabels)> {
    stack.validate()?;
    let mut x = x.clone();
    let mut y = BatchLabels::Hard(labels.to_vec());
    for t in &stack.transforms {
        match *t {
            Transform::Grayscale => x = grayscale(&x)?,
            Transform::BitDepthReduction { bits } => x = bit_depth_reduce(&x, bits),
            Transform::RandomCrop { pad, reflect } => x = random_crop(&x, pad, reflect, rng),
            Transform::RandomFlip { p } => x = random_flip(&x, p, rng),
            Transform::Mixup { alpha } => {
                let onehot = ule_nn::one_hot(labels, class_count);
                let (xm, ym) = mixup(&x, &onehot, alpha, rng)?;
                x = xm;
                y = BatchLabels::Soft(ym);
            }
        }
    }
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array4;

    fn rng() -> impl Rng {
        crate::rng::stream(42, "mitigations-test")
    }

    fn sample_batch(n: usize) -> Array4<f64> {
        Array4::from_shape_fn((n, 6, 6, 3), |(i, h, w, c)| {
            (((i * 31 + h * 7 + w * 3 + c * 11) % 97) as f64) / 96.0
        })
    }

    #[test]
    fn grayscale_matches_hand_computation() {
        let mut x = Array4::zeros((1, 1, 1, 3));
        x[[0, 0, 0, 0]] = 1.0;
        x[[0, 0, 0, 1]] = 0.5;
        x[[0, 0, 0, 2]] = 0.25;
        let g = grayscale(&x).unwrap();
        let expected = 0.299 + 0.587 * 0.5 + 0.114 * 0.25;
        for c in 0..3 {
            assert_abs_diff_eq!(g[[0, 0, 0, c]], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn grayscale_is_idempotent() {
        // Not bit-exact: the luma weights sum to 1 only up to f64 rounding,
        // so re-projecting moves each value by at most one ulp-scale error.
        let x = sample_batch(2);
        let once = grayscale(&x).unwrap();
        let twice = grayscale(&once).unwrap();
        let worst =
            once.iter().zip(twice.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-12, "re-projection moved values by {worst}");
    }

    #[test]
    fn bdr_hits_expected_levels() {
        // 2 bits -> levels {0, 1/3, 2/3, 1}.
        let mut x = Array4::zeros((1, 1, 4, 3));
        for (i, v) in [0.1, 0.4, 0.6, 0.95].into_iter().enumerate() {
            for c in 0..3 {
                x[[0, 0, i, c]] = v;
            }
        }
        let q = bit_depth_reduce(&x, 2);
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (i, e) in expected.into_iter().enumerate() {
            assert_abs_diff_eq!(q[[0, 0, i, 0]], e, epsilon = 1e-12);
        }
    }

    #[test]
    fn bdr_eight_bits_fixes_byte_values() {
        // Real image data is already 8-bit; BDR at 8 bits must not move it.
        let x = Array4::from_shape_fn((1, 2, 2, 3), |(_, h, w, c)| {
            ((h * 80 + w * 40 + c * 10) as f64) / 255.0
        });
        let q = bit_depth_reduce(&x, 8);
        let worst = q.iter().zip(x.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-12);
    }

    #[test]
    fn flip_is_an_involution() {
        let x = sample_batch(3);
        assert_eq!(flip_image(&flip_image(&x)), x);
    }

    #[test]
    fn reflect_index_avoids_edge_repeat() {
        assert_eq!(reflect_index(-1, 8), 1);
        assert_eq!(reflect_index(-2, 8), 2);
        assert_eq!(reflect_index(8, 8), 6);
        assert_eq!(reflect_index(9, 8), 5);
        assert_eq!(reflect_index(3, 8), 3);
    }

    #[test]
    fn crop_zero_pad_is_identity() {
        let x = sample_batch(2);
        assert_eq!(random_crop(&x, 0, true, &mut rng()), x);
    }

    #[test]
    fn crop_preserves_shape_and_range() {
        let x = sample_batch(4);
        let out = random_crop(&x, 2, true, &mut rng());
        assert_eq!(out.dim(), x.dim());
        assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn mixup_lambda_one_is_identity() {
        let x = sample_batch(4);
        let y = ule_nn::one_hot(&[0, 1, 2, 0], 3);
        let perm = [3, 2, 1, 0];
        let (xm, ym) = mixup_with(&x, &y, 1.0, &perm);
        assert_eq!(xm, x);
        assert_eq!(ym, y);
    }

    #[test]
    fn mixup_lambda_zero_is_permutation() {
        let x = sample_batch(4);
        let y = ule_nn::one_hot(&[0, 1, 2, 0], 3);
        let perm = [3, 2, 1, 0];
        let (xm, ym) = mixup_with(&x, &y, 0.0, &perm);
        for (row, &src) in perm.iter().enumerate() {
            assert_eq!(
                xm.index_axis(Axis(0), row),
                x.index_axis(Axis(0), src)
            );
            assert_eq!(
                ym.index_axis(Axis(0), row),
                y.index_axis(Axis(0), src)
            );
        }
    }

    #[test]
    fn mixup_soft_labels_sum_to_one() {
        let x = sample_batch(6);
        let y = ule_nn::one_hot(&[0, 1, 2, 0, 1, 2], 3);
        let (_, ym) = mixup(&x, &y, 1.0, &mut rng()).unwrap();
        for row in ym.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn stack_validation_rules() {
        assert!(TransformStack::new(vec![Transform::BitDepthReduction { bits: 0 }]).is_err());
        assert!(TransformStack::new(vec![Transform::BitDepthReduction { bits: 9 }]).is_err());
        assert!(TransformStack::new(vec![
            Transform::Mixup { alpha: 1.0 },
            Transform::Grayscale,
        ])
        .is_err());
        assert!(TransformStack::new(vec![
            Transform::Grayscale,
            Transform::Mixup { alpha: 1.0 },
        ])
        .is_ok());
    }

    #[test]
    fn apply_stack_grayscale_zeroes_channel_spread() {
        let stack = TransformStack::new(vec![Transform::Grayscale]).unwrap();
        let x = sample_batch(3);
        let (out, labels) = apply_stack(&stack, &x, &[0, 1, 2], 3, &mut rng()).unwrap();
        assert!(matches!(labels, BatchLabels::Hard(_)));
        let (n, h, w, _) = out.dim();
        for i in 0..n {
            for y in 0..h {
                for z in 0..w {
                    assert_eq!(out[[i, y, z, 0]], out[[i, y, z, 1]]);
                    assert_eq!(out[[i, y, z, 1]], out[[i, y, z, 2]]);
                }
            }
        }
    }

    #[test]
    fn stack_serde_round_trip() {
        let stack = TransformStack::new(vec![
            Transform::RandomCrop { pad: 4, reflect: true },
            Transform::RandomFlip { p: 0.5 },
            Transform::BitDepthReduction { bits: 2 },
            Transform::Mixup { alpha: 1.0 },
        ])
        .unwrap();
        let json = serde_json::to_string(&stack).unwrap();
        let back: TransformStack = serde_json::from_str(&json).unwrap();
        assert_eq!(stack, back);
    }
}
