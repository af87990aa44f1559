//! Error-minimizing perturbation search.
//!
//! A "bank" of per-sample perturbations is produced by alternating two
//! phases: a few SGD steps that *train* a source model on the currently
//! perturbed data, then per-sample signed-gradient steps that update each
//! perturbation to *minimize* that model's loss. Perturbations that minimize
//! training error act as shortcuts — a classifier trained on the poisoned
//! data latches onto them and learns almost nothing about the real content.
//!
//! Four variants differ only in the view of the image the loss sees:
//!
//! * `uleo`           — `L(F(x + δ))`
//! * `uleo_aug`       — `L(F(Aug(x) + δ))`, fresh augmentations every step
//! * `uleo_gray`      — `L(F(Gray(x) + δ))`, δ shared across channels
//! * `uleo_grayaug`   — `L(F(Gray(Aug(x)) + δ))`, δ shared across channels
//!
//! The gray variants constrain δ to be identical in all three channels, so
//! the perturbation survives a grayscale pre-filter instead of being
//! projected away by it.

use ndarray::{Array4, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::mitigations;
use crate::models::{self, Classifier, ModelSpec, Wrt};
use crate::rng;
use ule_nn::{Mode, Sgd, Targets};

/// Slack for f32 quantization when checking the `‖δ‖∞ ≤ ε` budget.
pub const BUDGET_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Uleo,
    UleoAug,
    UleoGray,
    #[serde(rename = "uleo_grayaug")]
    UleoGrayAug,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Uleo => "uleo",
            Variant::UleoAug => "uleo_aug",
            Variant::UleoGray => "uleo_gray",
            Variant::UleoGrayAug => "uleo_grayaug",
        }
    }

    /// Does this variant constrain δ to be equal across channels?
    pub fn is_gray(&self) -> bool {
        matches!(self, Variant::UleoGray | Variant::UleoGrayAug)
    }

    /// Does this variant look at augmented images while crafting?
    pub fn uses_aug(&self) -> bool {
        matches!(self, Variant::UleoAug | Variant::UleoGrayAug)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uleo" => Ok(Variant::Uleo),
            "uleo_aug" => Ok(Variant::UleoAug),
            "uleo_gray" => Ok(Variant::UleoGray),
            "uleo_grayaug" => Ok(Variant::UleoGrayAug),
            other => Err(Error::Config(format!("unknown crafting variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Augmentation used inside crafting (for the `*_aug` variants).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugSpec {
    pub pad: usize,
    pub reflect: bool,
    pub flip_p: f64,
}

impl Default for AugSpec {
    fn default() -> Self {
        AugSpec { pad: 4, reflect: true, flip_p: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CraftSpec {
    pub variant: Variant,
    pub source_model: ModelSpec,
    /// Max-norm budget in `[0,1]` pixel units (e.g. 8/255).
    pub epsilon: f64,
    /// Signed-gradient steps per batch in the perturbation phase.
    pub inner_steps: usize,
    /// Step size for those updates.
    pub inner_step_size: f64,
    /// Mini-batch SGD steps in the model-training phase of each round.
    pub outer_steps: usize,
    pub batch_size: usize,
    /// Stop once training error drops below this (the search's whole point
    /// is to make the data trivially learnable).
    pub stop_error: f64,
    pub max_rounds: usize,
    /// Required for the `*_aug` variants; ignored otherwise.
    pub aug: Option<AugSpec>,
    /// Whether the model-training phase sees augmented views too (the
    /// perturbation phase of an `*_aug` variant always does).
    pub augment_outer: bool,
    /// Re-initialize the source model at the start of every round instead of
    /// training it continuously.
    pub restart_each_round: bool,
    pub outer_lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl CraftSpec {
    /// Standard settings for a given variant, budget, and seed.
    pub fn standard(variant: Variant, source_model: ModelSpec, epsilon: f64, seed: u64) -> Self {
        CraftSpec {
            variant,
            source_model,
            epsilon,
            inner_steps: 20,
            inner_step_size: epsilon / 10.0,
            outer_steps: 10,
            batch_size: 128,
            stop_error: 0.01,
            max_rounds: 30,
            aug: variant.uses_aug().then(AugSpec::default),
            augment_outer: true,
            restart_each_round: false,
            outer_lr: 0.1,
            momentum: 0.9,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source_model.validate()?;
        if self.epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.inner_step_size > 0.0 && self.inner_step_size <= self.epsilon) {
            return Err(Error::Config(format!(
                "inner_step_size must lie in (0, epsilon], got {}",
                self.inner_step_size
            )));
        }
        if !(self.stop_error > 0.0 && self.stop_error < 1.0) {
            return Err(Error::Config(format!(
                "stop_error must lie in (0,1), got {}",
                self.stop_error
            )));
        }
        if self.max_rounds == 0 || self.inner_steps == 0 || self.outer_steps == 0 {
            return Err(Error::Config(
                "max_rounds, inner_steps, and outer_steps must all be at least 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.variant.uses_aug() && self.aug.is_none() {
            return Err(Error::Config(format!(
                "variant {} requires an aug section",
                self.variant
            )));
        }
        Ok(())
    }
}

/// How a bank was produced and how the search went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CraftMeta {
    pub spec: CraftSpec,
    pub rounds_executed: usize,
    /// Training error on the canonical view after each round.
    pub error_history: Vec<f64>,
    pub final_train_error: f64,
    pub converged: bool,
}

/// Per-sample perturbations keyed by sample id.
///
/// Deltas are stored as `f32` — that is the interchange precision, fixed at
/// construction so an in-memory bank is bit-identical to itself after a
/// save/load round trip. Rows are sorted by sample id.
#[derive(Debug, Clone)]
pub struct PerturbationBank {
    epsilon: f64,
    gray_constrained: bool,
    sample_ids: Vec<u64>,
    delta: Array4<f32>,
    pub meta: Option<CraftMeta>,
}

impl PerturbationBank {
    /// Validate and build. `delta` rows must correspond to `sample_ids`
    /// (any order); they are sorted by id here.
    pub fn new(
        epsilon: f64,
        gray_constrained: bool,
        sample_ids: Vec<u64>,
        delta: Array4<f32>,
        meta: Option<CraftMeta>,
    ) -> Result<Self> {
        let (n, h, w, c) = delta.dim();
        if sample_ids.len() != n {
            return Err(Error::Shape(format!(
                "{} ids for {} delta rows",
                sample_ids.len(),
                n
            )));
        }
        if c != 3 {
            return Err(Error::Shape(format!("deltas must have 3 channels, got {c}")));
        }
        if epsilon <= 0.0 {
            return Err(Error::Invariant("bank epsilon must be positive".into()));
        }

        // Sort rows by id.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| sample_ids[i]);
        let mut ids_sorted = Vec::with_capacity(n);
        let mut delta_sorted = Array4::zeros((n, h, w, c));
        for (row, &i) in order.iter().enumerate() {
            ids_sorted.push(sample_ids[i]);
            delta_sorted
                .index_axis_mut(Axis(0), row)
                .assign(&delta.index_axis(Axis(0), i));
        }
        if ids_sorted.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::Invariant("duplicate sample_id in bank".into()));
        }

        let bank = PerturbationBank {
            epsilon,
            gray_constrained,
            sample_ids: ids_sorted,
            delta: delta_sorted,
            meta,
        };
        bank.check_invariants()?;
        Ok(bank)
    }

    /// An all-zero bank covering a dataset (handy as a control).
    pub fn zeros(ds: &ImageDataset, epsilon: f64, gray_constrained: bool) -> Self {
        let (h, w, c) = ds.image_shape();
        PerturbationBank::new(
            epsilon,
            gray_constrained,
            ds.sample_ids.clone(),
            Array4::zeros((ds.len(), h, w, c)),
            None,
        )
        .expect("zero bank is trivially valid")
    }

    fn check_invariants(&self) -> Result<()> {
        let bound = self.epsilon + BUDGET_SLACK;
        if self.delta.iter().any(|&d| f64::from(d).abs() > bound) {
            return Err(Error::Invariant(format!(
                "perturbation exceeds the ε={} budget",
                self.epsilon
            )));
        }
        if self.gray_constrained {
            let (n, h, w, _) = self.delta.dim();
            for i in 0..n {
                for y in 0..h {
                    for z in 0..w {
                        let d0 = self.delta[[i, y, z, 0]];
                        if self.delta[[i, y, z, 1]] != d0 || self.delta[[i, y, z, 2]] != d0 {
                            return Err(Error::Invariant(
                                "gray-constrained bank has unequal channels".into(),
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn gray_constrained(&self) -> bool {
        self.gray_constrained
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }

    pub fn deltas(&self) -> &Array4<f32> {
        &self.delta
    }

    pub fn image_shape(&self) -> (usize, usize) {
        let (_, h, w, _) = self.delta.dim();
        (h, w)
    }

    /// The perturbation for one sample id, if present.
    pub fn delta_for(&self, id: u64) -> Option<ArrayView3<'_, f32>> {
        let row = self.sample_ids.binary_search(&id).ok()?;
        Some(self.delta.index_axis(Axis(0), row))
    }

    /// SHA-256 over a canonical byte encoding (dims, ids, ε, gray flag, and
    /// the f32 payload, all little-endian). Bit-identical banks — and only
    /// those — hash equal.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        let (n, h, w, c) = self.delta.dim();
        for dim in [n, h, w, c] {
            hasher.update((dim as u32).to_le_bytes());
        }
        for &id in &self.sample_ids {
            hasher.update(id.to_le_bytes());
        }
        hasher.update(self.epsilon.to_le_bytes());
        hasher.update([u8::from(self.gray_constrained)]);
        let flat = self.delta.as_standard_layout();
        for &v in flat.iter() {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

// ---------------------------------------------------------------------------
// The search itself

/// Sign with `sign(0) = 0` (the builtin `f64::signum` maps `±0` to `±1`,
/// which would push untouched pixels around).
pub fn sign3(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clamp δ so that `x + δ` stays inside `[0,1]` exactly, per pixel. For a
/// gray-constrained δ the bound is the intersection over channels, which
/// preserves exact channel equality.
pub fn feasibility_clamp(delta: &mut Array4<f64>, x: &Array4<f64>, gray: bool) {
    let (n, h, w, c) = delta.dim();
    for i in 0..n {
        for y in 0..h {
            for z in 0..w {
                if gray {
                    let mut lo = f64::NEG_INFINITY;
                    let mut hi = f64::INFINITY;
                    for ch in 0..c {
                        lo = lo.max(-x[[i, y, z, ch]]);
                        hi = hi.min(1.0 - x[[i, y, z, ch]]);
                    }
                    let v = delta[[i, y, z, 0]].clamp(lo, hi);
                    for ch in 0..c {
                        delta[[i, y, z, ch]] = v;
                    }
                } else {
                    for ch in 0..c {
                        let xv = x[[i, y, z, ch]];
                        delta[[i, y, z, ch]] = delta[[i, y, z, ch]].clamp(-xv, 1.0 - xv);
                    }
                }
            }
        }
    }
}

/// One signed-gradient descent step on a batch of perturbations.
///
/// `view` is what the loss sees added to δ (the raw image, or its grayscale
/// or augmented version); `x_orig` is the unmodified image the feasibility
/// clamp is taken against. Runs the model in inference mode so each sample's
/// gradient is independent of its batch neighbours. Returns the loss
/// *before* the step.
pub fn inner_min_step(
    model: &mut Classifier,
    view: &Array4<f64>,
    x_orig: &Array4<f64>,
    labels: &[usize],
    delta: &mut Array4<f64>,
    step_size: f64,
    epsilon: f64,
    gray: bool,
) -> f64 {
    let input = view + &*delta;
    let (loss, g) = model.loss_and_grads(&input, Targets::Hard(labels), Wrt::Input, Mode::Eval);
    let mut g = g.expect("input gradient requested");
    if gray {
        // Channel-tied δ: descend along the channel-summed gradient so the
        // update itself keeps the channels equal.
        let summed = g.sum_axis(Axis(3));
        for ch in 0..3 {
            g.index_axis_mut(Axis(3), ch).assign(&summed);
        }
    }
    delta.zip_mut_with(&g, |d, &gv| {
        *d = (*d - step_size * sign3(gv)).clamp(-epsilon, epsilon);
    });
    feasibility_clamp(delta, x_orig, gray);
    loss
}

/// The per-variant view of a batch (fresh randomness for aug variants).
fn view_batch(
    x: &Array4<f64>,
    variant: Variant,
    aug: Option<&AugSpec>,
    use_aug: bool,
    rng: &mut impl Rng,
) -> Result<Array4<f64>> {
    let augmented = if use_aug && variant.uses_aug() {
        let a = aug.expect("validated: aug variants carry an AugSpec");
        mitigations::augment(x, a.pad, a.reflect, a.flip_p, rng)
    } else {
        x.clone()
    };
    if variant.is_gray() {
        mitigations::grayscale(&augmented)
    } else {
        Ok(augmented)
    }
}

/// Training error (1 − accuracy) on the canonical deterministic view:
/// `x + δ` for the standard variants, `Gray(x) + δ` for the gray ones.
fn canonical_error(
    model: &mut Classifier,
    ds: &ImageDataset,
    delta: &Array4<f64>,
    variant: Variant,
    batch_size: usize,
) -> Result<f64> {
    let n = ds.len();
    let mut correct = 0usize;
    let mut start = 0;
    while start < n {
        let idx: Vec<usize> = (start..(start + batch_size).min(n)).collect();
        let (x, y) = ds.batch(&idx);
        let view = if variant.is_gray() { mitigations::grayscale(&x)? } else { x };
        let d = delta.select(Axis(0), &idx);
        let logits = model.logits(&(view + d), Mode::Eval);
        correct += (0..idx.len())
            .filter(|&r| {
                ule_nn::argmax_row(logits.index_axis(Axis(0), r).as_slice().unwrap()) == y[r]
            })
            .count();
        start += batch_size;
    }
    Ok(1.0 - correct as f64 / n as f64)
}

/// Run the full search and return the perturbation bank.
pub fn craft(ds: &ImageDataset, spec: &CraftSpec) -> Result<PerturbationBank> {
    craft_observed(ds, spec, &mut |_, _| {})
}

/// Like [`craft`], reporting `(round, train_error)` after every round.
pub fn craft_observed(
    ds: &ImageDataset,
    spec: &CraftSpec,
    on_round: &mut dyn FnMut(usize, f64),
) -> Result<PerturbationBank> {
    spec.validate()?;
    if spec.source_model.class_count != ds.class_count {
        return Err(Error::Config(format!(
            "source model has {} classes but dataset has {}",
            spec.source_model.class_count, ds.class_count
        )));
    }
    if spec.source_model.input_shape != ds.image_shape() {
        return Err(Error::Config(format!(
            "source model expects input {:?} but dataset images are {:?}",
            spec.source_model.input_shape,
            ds.image_shape()
        )));
    }

    let n = ds.len();
    let (h, w, c) = ds.image_shape();
    let gray = spec.variant.is_gray();
    let eps = spec.epsilon;

    // δ₀ ~ U(−ε, ε); gray variants draw one channel and replicate it.
    let mut init_rng = rng::stream(spec.seed, "craft/delta0");
    let mut delta = Array4::zeros((n, h, w, c));
    for i in 0..n {
        for y in 0..h {
            for z in 0..w {
                if gray {
                    let v = init_rng.random_range(-eps..=eps);
                    for ch in 0..c {
                        delta[[i, y, z, ch]] = v;
                    }
                } else {
                    for ch in 0..c {
                        delta[[i, y, z, ch]] = init_rng.random_range(-eps..=eps);
                    }
                }
            }
        }
    }
    feasibility_clamp(&mut delta, &ds.images, gray);

    let mut model = models::build(&spec.source_model)?;
    let mut opt = Sgd::new(spec.momentum, 0.0);

    let mut error_history = Vec::with_capacity(spec.max_rounds);
    let mut converged = false;
    let mut rounds_executed = 0;

    for round in 1..=spec.max_rounds {
        rounds_executed = round;
        if spec.restart_each_round && round > 1 {
            model = models::build(&spec.source_model)?;
            opt = Sgd::new(spec.momentum, 0.0);
        }
        let mut round_rng = rng::stream(spec.seed, &format!("craft/round/{round}"));

        // Model-training phase: a handful of SGD steps on the perturbed data.
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut round_rng);
        let mut cursor = 0usize;
        for _ in 0..spec.outer_steps {
            let idx: Vec<usize> = (0..spec.batch_size.min(n))
                .map(|k| order[(cursor + k) % n])
                .collect();
            cursor = (cursor + spec.batch_size) % n;
            let (x, y) = ds.batch(&idx);
            let view = view_batch(&x, spec.variant, spec.aug.as_ref(), spec.augment_outer, &mut round_rng)?;
            let input = view + delta.select(Axis(0), &idx);
            let _ = model.loss_and_grads(&input, Targets::Hard(&y), Wrt::Params, Mode::Train);
            model.apply_update(&mut opt, spec.outer_lr);
        }

        // Perturbation phase: signed-gradient descent on every δ, the model
        // held fixed.
        let mut start = 0;
        while start < n {
            let idx: Vec<usize> = (start..(start + spec.batch_size).min(n)).collect();
            let (x, y) = ds.batch(&idx);
            let mut d = delta.select(Axis(0), &idx);
            for _ in 0..spec.inner_steps {
                let view = view_batch(&x, spec.variant, spec.aug.as_ref(), true, &mut round_rng)?;
                inner_min_step(&mut model, &view, &x, &y, &mut d, spec.inner_step_size, eps, gray);
            }
            for (row, &i) in idx.iter().enumerate() {
                delta
                    .index_axis_mut(Axis(0), i)
                    .assign(&d.index_axis(Axis(0), row));
            }
            start += spec.batch_size;
        }

        debug_assert!(delta.iter().all(|&d| d.abs() <= eps + 1e-12), "budget violated");

        let err = canonical_error(&mut model, ds, &delta, spec.variant, spec.batch_size)?;
        error_history.push(err);
        on_round(round, err);
        if err < spec.stop_error {
            converged = true;
            break;
        }
    }

    let final_train_error = *error_history.last().expect("at least one round ran");
    let meta = CraftMeta {
        spec: spec.clone(),
        rounds_executed,
        error_history,
        final_train_error,
        converged,
    };
    PerturbationBank::new(
        eps,
        gray,
        ds.sample_ids.clone(),
        delta.mapv(|v| v as f32),
        Some(meta),
    )
}

/// Craft against a multilayer-perceptron source model (the cross-family
/// transfer study needs banks whose source has no spatial structure at all).
pub fn craft_with_mlp(ds: &ImageDataset, spec: &CraftSpec) -> Result<PerturbationBank> {
    if spec.source_model.arch != crate::models::Arch::Mlp {
        return Err(Error::Config(format!(
            "craft_with_mlp requires an mlp source model, got {}",
            spec.source_model.arch
        )));
    }
    craft(ds, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitTag;
    use crate::models::{Arch, Normalization};
    use ndarray::Array4;

    fn tiny_dataset(n: usize) -> ImageDataset {
        let mut r = rng::stream(5, "crafting-test-data");
        let images = Array4::from_shape_fn((n, 8, 8, 3), |_| r.random_range(0.1..0.9));
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let ids: Vec<u64> = (0..n as u64).collect();
        ImageDataset::new(images, labels, ids, SplitTag::Train, 3, None).unwrap()
    }

    fn tiny_spec(variant: Variant) -> CraftSpec {
        let source = ModelSpec {
            arch: Arch::SmallCnn,
            class_count: 3,
            input_shape: (8, 8, 3),
            normalization: Normalization::centered(),
            init_seed: 0,
        };
        CraftSpec {
            inner_steps: 3,
            outer_steps: 3,
            batch_size: 8,
            max_rounds: 2,
            stop_error: 0.001,
            ..CraftSpec::standard(variant, source, 8.0 / 255.0, 77)
        }
    }

    #[test]
    fn variant_strings_round_trip() {
        for v in [Variant::Uleo, Variant::UleoAug, Variant::UleoGray, Variant::UleoGrayAug] {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.as_str()));
        }
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign3(0.0), 0.0);
        assert_eq!(sign3(-0.0), 0.0);
        assert_eq!(sign3(3.5), 1.0);
        assert_eq!(sign3(-0.1), -1.0);
    }

    #[test]
    fn bank_sorts_and_rejects_duplicates() {
        let delta = Array4::from_elem((3, 2, 2, 3), 0.01f32);
        let bank =
            PerturbationBank::new(0.1, false, vec![30, 10, 20], delta.clone(), None).unwrap();
        assert_eq!(bank.sample_ids(), &[10, 20, 30]);
        assert!(PerturbationBank::new(0.1, false, vec![1, 1, 2], delta, None).is_err());
    }

    #[test]
    fn bank_rejects_budget_violation() {
        let delta = Array4::from_elem((1, 2, 2, 3), 0.2f32);
        assert!(matches!(
            PerturbationBank::new(0.1, false, vec![0], delta, None),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn bank_rejects_unequal_gray_channels() {
        let mut delta = Array4::from_elem((1, 2, 2, 3), 0.05f32);
        delta[[0, 0, 0, 1]] = 0.04;
        assert!(matches!(
            PerturbationBank::new(0.1, true, vec![0], delta, None),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn content_hash_tracks_content() {
        let ds = tiny_dataset(4);
        let a = PerturbationBank::zeros(&ds, 0.1, false);
        let b = PerturbationBank::zeros(&ds, 0.1, false);
        assert_eq!(a.content_hash(), b.content_hash());
        let mut delta = a.deltas().clone();
        delta[[0, 0, 0, 0]] = 0.01;
        let c =
            PerturbationBank::new(0.1, false, ds.sample_ids.clone(), delta, None).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn inner_step_reduces_loss() {
        let ds = tiny_dataset(6);
        let spec = tiny_spec(Variant::Uleo);
        let mut model = models::build(&spec.source_model).unwrap();
        let idx: Vec<usize> = (0..6).collect();
        let (x, y) = ds.batch(&idx);
        let mut delta = Array4::zeros(x.dim());
        let first = inner_min_step(
            &mut model, &x, &x, &y, &mut delta, spec.inner_step_size, spec.epsilon, false,
        );
        let mut last = first;
        for _ in 0..5 {
            last = inner_min_step(
                &mut model, &x, &x, &y, &mut delta, spec.inner_step_size, spec.epsilon, false,
            );
        }
        assert!(last < first, "loss did not shrink: {first} -> {last}");
    }

    #[test]
    fn craft_output_satisfies_budget_and_feasibility() {
        let ds = tiny_dataset(12);
        let bank = craft(&ds, &tiny_spec(Variant::Uleo)).unwrap();
        assert_eq!(bank.len(), 12);
        let eps = bank.epsilon() + BUDGET_SLACK;
        for (i, &id) in ds.sample_ids.iter().enumerate() {
            let d = bank.delta_for(id).unwrap();
            for ((y, z, ch), &dv) in d.indexed_iter() {
                let dv = f64::from(dv);
                assert!(dv.abs() <= eps);
                let px = ds.images[[i, y, z, ch]] + dv;
                assert!((-1e-6..=1.0 + 1e-6).contains(&px));
            }
        }
        assert!(bank.meta.as_ref().unwrap().rounds_executed <= 2);
    }

    #[test]
    fn gray_variant_keeps_channels_tied() {
        let ds = tiny_dataset(9);
        let bank = craft(&ds, &tiny_spec(Variant::UleoGray)).unwrap();
        assert!(bank.gray_constrained());
        let d = bank.deltas();
        let (n, h, w, _) = d.dim();
        for i in 0..n {
            for y in 0..h {
                for z in 0..w {
                    assert_eq!(d[[i, y, z, 0]], d[[i, y, z, 1]]);
                    assert_eq!(d[[i, y, z, 1]], d[[i, y, z, 2]]);
                }
            }
        }
    }

    #[test]
    fn craft_is_deterministic() {
        let ds = tiny_dataset(9);
        let spec = tiny_spec(Variant::UleoGrayAug);
        let a = craft(&ds, &spec).unwrap();
        let b = craft(&ds, &spec).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let other = CraftSpec { seed: 78, ..spec };
        let c = craft(&ds, &other).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn aug_variant_without_aug_section_is_rejected() {
        let mut spec = tiny_spec(Variant::UleoAug);
        spec.aug = None;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn mlp_wrapper_enforces_architecture() {
        let ds = tiny_dataset(6);
        let spec = tiny_spec(Variant::Uleo);
        assert!(matches!(craft_with_mlp(&ds, &spec), Err(Error::Config(_))));
    }
}
