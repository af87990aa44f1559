//! Datasets in canonical pixel space, plus subsetting and poisoned-set
//! assembly.
//!
//! Images live in `[0,1]` as NHWC `f64` tensors; perturbations are added in
//! this space, *before* the per-channel normalization that happens inside a
//! model's input stage. Every constructor re-validates the type invariants.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::crafting::PerturbationBank;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
    Validation,
}

/// Where a sample in a mixed dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Added,
}

/// Labeled images in `[0,1]` pixel space with stable per-sample ids.
#[derive(Debug, Clone)]
pub struct ImageDataset {
    /// `(N, H, W, 3)` pixel intensities in `[0,1]`.
    pub images: Array4<f64>,
    pub labels: Vec<usize>,
    /// Unique, stable across reloads of the same source.
    pub sample_ids: Vec<u64>,
    pub split_tag: SplitTag,
    pub class_count: usize,
    /// Present only on datasets produced by [`mix`].
    pub provenance: Option<Vec<Provenance>>,
}

impl ImageDataset {
    /// Construct and validate. All dataset-producing code funnels through
    /// here so the invariants hold for every instance in the program.
    pub fn new(
        images: Array4<f64>,
        labels: Vec<usize>,
        sample_ids: Vec<u64>,
        split_tag: SplitTag,
        class_count: usize,
        provenance: Option<Vec<Provenance>>,
    ) -> Result<Self> {
        let n = images.dim().0;
        if images.dim().3 != 3 {
            return Err(Error::Shape(format!(
                "images must have 3 channels, got {}",
                images.dim().3
            )));
        }
        if labels.len() != n || sample_ids.len() != n {
            return Err(Error::Invariant(format!(
                "length mismatch: {} images, {} labels, {} ids",
                n,
                labels.len(),
                sample_ids.len()
            )));
        }
        if let Some(p) = &provenance {
            if p.len() != n {
                return Err(Error::Invariant("provenance length mismatch".into()));
            }
        }
        if class_count == 0 {
            return Err(Error::Invariant("class_count must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::Invariant(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        if images.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Invariant("pixel value outside [0,1]".into()));
        }
        let mut seen = HashSet::with_capacity(n);
        for &id in &sample_ids {
            if !seen.insert(id) {
                return Err(Error::Invariant(format!("duplicate sample_id {id}")));
            }
        }
        Ok(ImageDataset { images, labels, sample_ids, split_tag, class_count, provenance })
    }

    pub fn len(&self) -> usize {
        self.images.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(H, W, C)` of a single image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let (_, h, w, c) = self.images.dim();
        (h, w, c)
    }

    /// Gather a batch of images and labels by dataset indices.
    pub fn batch(&self, indices: &[usize]) -> (Array4<f64>, Vec<usize>) {
        let (_, h, w, c) = self.images.dim();
        let mut x = Array4::zeros((indices.len(), h, w, c));
        let mut y = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            x.index_axis_mut(ndarray::Axis(0), row)
                .assign(&self.images.index_axis(ndarray::Axis(0), i));
            y.push(self.labels[i]);
        }
        (x, y)
    }
}

/// How a mixed training set is composed, for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    /// Fraction of the official training data kept clean (e.g. 0.05).
    pub original_fraction: f64,
    /// Fraction added on top.
    pub added_fraction: f64,
    pub added_kind: AddedKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddedKind {
    Clean,
    Poisoned,
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("original_fraction", self.original_fraction), ("added_fraction", self.added_fraction)] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0,1], got {f}")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Loading

/// Load a dataset by id. Known ids:
///
/// * `cifar10-train` / `cifar10-test` — the CIFAR-10 binary batches, looked
///   up under `root/cifar-10-batches-bin/` (or `root` itself).
/// * `synthetic-3class` / `synthetic-3class-test` — a generated 3-class
///   32×32 dataset (5000 train / 1500 test images). On first use it is
///   written under `root/synthetic-3class/` (metadata + raw f32 tensors) and
///   subsequent loads read those files back bit-exactly.
pub fn load_dataset(name: &str, root: &Path) -> Result<ImageDataset> {
    match name {
        "cifar10-train" => load_cifar10(root, true),
        "cifar10-test" => load_cifar10(root, false),
        "synthetic-3class" => load_synthetic(root, SplitTag::Train),
        "synthetic-3class-test" => load_synthetic(root, SplitTag::Test),
        other => Err(Error::Config(format!("unknown dataset id {other:?}"))),
    }
}

fn load_error(path: &Path, reason: impl ToString) -> Error {
    Error::Load { path: path.to_path_buf(), reason: reason.to_string() }
}

// --- CIFAR-10 binary format -------------------------------------------------

const CIFAR_DIM: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_DIM * CIFAR_DIM;
const CIFAR_PER_FILE: usize = 10_000;

fn cifar_dir(root: &Path) -> PathBuf {
    let sub = root.join("cifar-10-batches-bin");
    if sub.is_dir() {
        sub
    } else {
        root.to_path_buf()
    }
}

fn load_cifar10(root: &Path, train: bool) -> Result<ImageDataset> {
    let dir = cifar_dir(root);
    let files: Vec<PathBuf> = if train {
        (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect()
    } else {
        vec![dir.join("test_batch.bin")]
    };

    let n = files.len() * CIFAR_PER_FILE;
    let mut images = Array4::zeros((n, CIFAR_DIM, CIFAR_DIM, 3));
    let mut labels = Vec::with_capacity(n);

    for (fi, file) in files.iter().enumerate() {
        let bytes = fs::read(file).map_err(|e| load_error(file, e))?;
        if bytes.len() != CIFAR_RECORD * CIFAR_PER_FILE {
            return Err(load_error(
                file,
                format!("expected {} bytes, found {}", CIFAR_RECORD * CIFAR_PER_FILE, bytes.len()),
            ));
        }
        for rec in 0..CIFAR_PER_FILE {
            let base = rec * CIFAR_RECORD;
            let label = bytes[base] as usize;
            if label >= 10 {
                return Err(load_error(file, format!("label {label} out of range in record {rec}")));
            }
            labels.push(label);
            let i = fi * CIFAR_PER_FILE + rec;
            // Layout: 1024 red, 1024 green, 1024 blue bytes, row-major.
            for c in 0..3 {
                let plane = base + 1 + c * CIFAR_DIM * CIFAR_DIM;
                for h in 0..CIFAR_DIM {
                    for w in 0..CIFAR_DIM {
                        images[[i, h, w, c]] =
                            bytes[plane + h * CIFAR_DIM + w] as f64 / 255.0;
                    }
                }
            }
        }
    }

    // Test ids live in a disjoint range so train/test sets can coexist.
    let id_base = if train { 0 } else { 1_000_000 };
    let sample_ids = (0..n as u64).map(|i| id_base + i).collect();
    let split = if train { SplitTag::Train } else { SplitTag::Test };
    ImageDataset::new(images, labels, sample_ids, split, 10, None)
}

// --- Synthetic 3-class dataset ----------------------------------------------
//
// Three texture classes: each image is a random base gray level plus a field
// of Gaussian bumps whose radius is class-specific (fine / medium / coarse
// texture). The class signal lives entirely in luminance structure; color
// carries no label information. The noise statistics mirror natural photos,
// where overall brightness varies a lot between images while the mean color
// cast barely does: per-image brightness is drawn from a wide range and
// per-pixel noise dirties both luma and chroma, but the *image-mean chroma*
// direction gets only a whisper of noise. That leaves the channel-uniform
// color subspace quiet — exactly the low-leverage-noise/high-leverage-model
// combination that channel-coupled, translation-invariant convnets are prone
// to encode shortcuts into, and that the grayscale projection wipes out.

const SYNTH_SEED: u64 = 7;
const SYNTH_DIM: usize = 32;
pub const SYNTH_CLASSES: usize = 3;
const SYNTH_TRAIN_N: usize = 5000;
const SYNTH_TEST_N: usize = 1500;
const SYNTH_BUMPS: usize = 14;
const SYNTH_BUMP_AMP: f64 = 0.26;
const SYNTH_CLASS_RADIUS: [f64; SYNTH_CLASSES] = [1.0, 1.9, 3.4];
const SYNTH_LUMA_NOISE: f64 = 0.02;
const SYNTH_CHROMA_NOISE: f64 = 0.02;
/// Noise in the image-mean chroma plane. Kept an order of magnitude below
/// the per-pixel noise so the channel-uniform color subspace stays quiet.
const SYNTH_UNIFORM_CHROMA: f64 = 0.01;

/// Bump when any generator constant changes; cached datasets from older
/// revisions are regenerated instead of silently reused.
const SYNTH_REVISION: u32 = 3;

/// Orthonormal basis of the plane orthogonal to the luminance projection:
/// colors in this plane have zero `grayscale` image.
fn chroma_basis() -> [[f64; 3]; 2] {
    use crate::mitigations::LUMA;
    let norm = |v: [f64; 3]| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    };
    // Two spanning vectors of the chroma plane (both have zero dot with LUMA),
    // orthonormalized by Gram-Schmidt.
    let e1 = norm([LUMA[1], -LUMA[0], 0.0]);
    let u2 = [LUMA[2], 0.0, -LUMA[0]];
    let proj = u2[0] * e1[0] + u2[1] * e1[1] + u2[2] * e1[2];
    let e2 = norm([u2[0] - proj * e1[0], u2[1] - proj * e1[1], u2[2] - proj * e1[2]]);
    [e1, e2]
}
// Keep a full ±8/255 of headroom at both ends so perturbations within the
// usual budget never hit the [0,1] wall.
const SYNTH_CLAMP: (f64, f64) = (0.05, 0.95);

fn synth_dir(root: &Path) -> PathBuf {
    root.join("synthetic-3class")
}

fn synth_file(root: &Path, split: SplitTag, what: &str) -> PathBuf {
    let tag = match split {
        SplitTag::Train => "train",
        SplitTag::Test => "test",
        SplitTag::Validation => "validation",
    };
    synth_dir(root).join(format!("{what}-{tag}.bin"))
}

#[derive(Serialize, Deserialize)]
struct SynthMeta {
    #[serde(default)]
    revision: u32,
    seed: u64,
    class_count: usize,
    image_dim: usize,
    train_n: usize,
    test_n: usize,
    format: String,
}

fn load_synthetic(root: &Path, split: SplitTag) -> Result<ImageDataset> {
    let meta_path = synth_dir(root).join("meta.toml");
    // Regenerate rather than reuse when the cached copy is missing, unreadable,
    // or written by a different generator revision.
    let current = fs::read_to_string(&meta_path)
        .ok()
        .and_then(|text| toml::from_str::<SynthMeta>(&text).ok())
        .is_some_and(|m| {
            m.revision == SYNTH_REVISION
                && m.class_count == SYNTH_CLASSES
                && m.image_dim == SYNTH_DIM
        });
    if !current {
        generate_synthetic(root)?;
    }

    let img_path = synth_file(root, split, "images");
    let lab_path = synth_file(root, split, "labels");
    let (dims, data) = read_f32_tensor(&img_path)?;
    if dims.len() != 4 || dims[3] != 3 {
        return Err(load_error(&img_path, format!("unexpected dims {dims:?}")));
    }
    let n = dims[0];
    let images_f32 =
        Array4::from_shape_vec((dims[0], dims[1], dims[2], dims[3]), data)
            .map_err(|e| load_error(&img_path, e))?;
    let images = images_f32.mapv(f64::from);

    let label_bytes = fs::read(&lab_path).map_err(|e| load_error(&lab_path, e))?;
    if label_bytes.len() != n {
        return Err(load_error(&lab_path, format!("expected {n} labels, found {}", label_bytes.len())));
    }
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();

    let id_base = match split {
        SplitTag::Train => 0,
        _ => 1_000_000,
    };
    let sample_ids = (0..n as u64).map(|i| id_base + i).collect();
    ImageDataset::new(images, labels, sample_ids, split, SYNTH_CLASSES, None)
}

/// Generate both splits and persist them under `root/synthetic-3class/`.
fn generate_synthetic(root: &Path) -> Result<()> {
    let dir = synth_dir(root);
    fs::create_dir_all(&dir)?;

    for (split, n, tag) in [
        (SplitTag::Train, SYNTH_TRAIN_N, "train"),
        (SplitTag::Test, SYNTH_TEST_N, "test"),
    ] {
        let (images, labels) = synthesize_split(n, tag);
        write_f32_tensor(
            &synth_file(root, split, "images"),
            &[n, SYNTH_DIM, SYNTH_DIM, 3],
            images.as_slice().expect("contiguous"),
        )?;
        let label_bytes: Vec<u8> = labels.iter().map(|&y| y as u8).collect();
        fs::write(synth_file(root, split, "labels"), label_bytes)?;
    }

    let meta = SynthMeta {
        revision: SYNTH_REVISION,
        seed: SYNTH_SEED,
        class_count: SYNTH_CLASSES,
        image_dim: SYNTH_DIM,
        train_n: SYNTH_TRAIN_N,
        test_n: SYNTH_TEST_N,
        format: "16-byte header (4x u32 LE dims: N,H,W,C) + f32 LE pixels, NHWC".into(),
    };
    let text = toml::to_string(&meta).expect("serialize synth meta");
    fs::write(dir.join("meta.toml"), text)?;
    Ok(())
}

fn synthesize_split(n: usize, tag: &str) -> (Array4<f32>, Vec<usize>) {
    let mut rng = rng::stream(SYNTH_SEED, &format!("synthetic-3class/{tag}"));
    let basis = chroma_basis();
    let luma_noise = Normal::new(0.0, SYNTH_LUMA_NOISE).expect("sigma > 0");
    let chroma_noise = Normal::new(0.0, SYNTH_CHROMA_NOISE).expect("sigma > 0");
    let uniform_chroma = Normal::new(0.0, SYNTH_UNIFORM_CHROMA).expect("sigma > 0");

    let mut images = Array4::<f32>::zeros((n, SYNTH_DIM, SYNTH_DIM, 3));
    let mut labels = Vec::with_capacity(n);
    let mut field = vec![0.0f64; SYNTH_DIM * SYNTH_DIM];

    for i in 0..n {
        let class = i % SYNTH_CLASSES;
        labels.push(class);

        let base: f64 = rng.random_range(0.3..0.7);
        field.iter_mut().for_each(|v| *v = base);
        for _ in 0..SYNTH_BUMPS {
            let cy: f64 = rng.random_range(0.0..SYNTH_DIM as f64);
            let cx: f64 = rng.random_range(0.0..SYNTH_DIM as f64);
            let sigma = SYNTH_CLASS_RADIUS[class] * rng.random_range(0.8..1.2);
            let amp = if rng.random_bool(0.5) { SYNTH_BUMP_AMP } else { -SYNTH_BUMP_AMP };
            // Evaluate the bump only inside its 3-sigma box.
            let r = (3.0 * sigma).ceil() as isize;
            let inv = 1.0 / (2.0 * sigma * sigma);
            let (icy, icx) = (cy.round() as isize, cx.round() as isize);
            for h in (icy - r).max(0)..(icy + r + 1).min(SYNTH_DIM as isize) {
                for w in (icx - r).max(0)..(icx + r + 1).min(SYNTH_DIM as isize) {
                    let dy = h as f64 - cy;
                    let dx = w as f64 - cx;
                    field[h as usize * SYNTH_DIM + w as usize] +=
                        amp * (-(dy * dy + dx * dx) * inv).exp();
                }
            }
        }

        // Per-image color cast, confined to the chroma plane; the wide `base`
        // range already covers uniform brightness variation.
        let (c1, c2) = (uniform_chroma.sample(&mut rng), uniform_chroma.sample(&mut rng));
        let tint_rgb: [f64; 3] =
            std::array::from_fn(|c| c1 * basis[0][c] + c2 * basis[1][c]);
        for h in 0..SYNTH_DIM {
            for w in 0..SYNTH_DIM {
                let lum = field[h * SYNTH_DIM + w] + luma_noise.sample(&mut rng);
                for c in 0..3 {
                    let color = tint_rgb[c] + chroma_noise.sample(&mut rng);
                    let v = (lum + color).clamp(SYNTH_CLAMP.0, SYNTH_CLAMP.1);
                    images[[i, h, w, c]] = v as f32;
                }
            }
        }
    }
    (images, labels)
}

// --- Raw f32 tensor files (16-byte shape header) -----------------------------

/// Write `[u32 N, u32 H, u32 W, u32 C]` (little-endian) followed by f32 LE
/// data in NHWC order.
pub fn write_f32_tensor(path: &Path, dims: &[usize; 4], data: &[f32]) -> Result<()> {
    let count: usize = dims.iter().product();
    assert_eq!(count, data.len(), "dims do not match data length");
    let mut bytes = Vec::with_capacity(16 + data.len() * 4);
    for &d in dims {
        let mut b = [0u8; 4];
        LittleEndian::write_u32(&mut b, d as u32);
        bytes.extend_from_slice(&b);
    }
    let mut payload = vec![0u8; data.len() * 4];
    LittleEndian::write_f32_into(data, &mut payload);
    bytes.extend_from_slice(&payload);
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_f32_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| load_error(path, e))?;
    if bytes.len() < 16 {
        return Err(load_error(path, "file shorter than the 16-byte header"));
    }
    let dims: Vec<usize> = (0..4)
        .map(|i| LittleEndian::read_u32(&bytes[i * 4..i * 4 + 4]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() != 16 + count * 4 {
        return Err(load_error(
            path,
            format!("expected {} payload bytes, found {}", count * 4, bytes.len() - 16),
        ));
    }
    let mut data = vec![0.0f32; count];
    LittleEndian::read_f32_into(&bytes[16..], &mut data);
    Ok((dims, data))
}

// ---------------------------------------------------------------------------
// Subsetting, poisoning, mixing

/// Class-stratified random subset. Per-class counts are rounded down, then
/// topped up round-robin (ascending class id) to hit `round(fraction * N)`
/// exactly. The selection is sorted by original position, so `fraction=1.0`
/// returns the dataset unchanged.
pub fn subset(ds: &ImageDataset, fraction: f64, seed: u64) -> Result<ImageDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must lie in (0,1], got {fraction}")));
    }
    let n = ds.len();
    let total = (fraction * n as f64).round() as usize;
    if total < ds.class_count {
        return Err(Error::Config(format!(
            "fraction {fraction} keeps {total} samples, fewer than {} classes",
            ds.class_count
        )));
    }

    // Indices per class, each shuffled by its own stream.
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); ds.class_count];
    for (i, &y) in ds.labels.iter().enumerate() {
        per_class[y].push(i);
    }
    let mut take: Vec<usize> = per_class
        .iter()
        .map(|idx| ((fraction * idx.len() as f64).floor() as usize).min(idx.len()))
        .collect();
    let mut have: usize = take.iter().sum();
    let mut class = 0;
    while have < total {
        if take[class] < per_class[class].len() {
            take[class] += 1;
            have += 1;
        }
        class = (class + 1) % ds.class_count;
    }

    let mut selected = Vec::with_capacity(total);
    for (k, idx) in per_class.iter_mut().enumerate() {
        let mut stream = rng::stream(seed, &format!("subset/class/{k}"));
        idx.shuffle(&mut stream);
        selected.extend_from_slice(&idx[..take[k]]);
    }
    selected.sort_unstable();

    Ok(gather(ds, &selected))
}

/// Build a new dataset from a list of indices into `ds` (order preserved).
fn gather(ds: &ImageDataset, indices: &[usize]) -> ImageDataset {
    let (h, w, c) = ds.image_shape();
    let mut images = Array4::zeros((indices.len(), h, w, c));
    let mut labels = Vec::with_capacity(indices.len());
    let mut ids = Vec::with_capacity(indices.len());
    let mut prov = ds.provenance.as_ref().map(|_| Vec::with_capacity(indices.len()));
    for (row, &i) in indices.iter().enumerate() {
        images
            .index_axis_mut(ndarray::Axis(0), row)
            .assign(&ds.images.index_axis(ndarray::Axis(0), i));
        labels.push(ds.labels[i]);
        ids.push(ds.sample_ids[i]);
        if let (Some(out), Some(src)) = (prov.as_mut(), ds.provenance.as_ref()) {
            out.push(src[i]);
        }
    }
    ImageDataset::new(images, labels, ids, ds.split_tag, ds.class_count, prov)
        .expect("gather preserves invariants")
}

/// Replace each image by `clamp(x + δ, 0, 1)` using the bank's perturbation
/// for its sample id. Labels, ids, and split are unchanged.
pub fn assemble_poisoned(ds: &ImageDataset, bank: &PerturbationBank) -> Result<ImageDataset> {
    let missing: Vec<u64> = ds
        .sample_ids
        .iter()
        .copied()
        .filter(|&id| bank.delta_for(id).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingDeltas(missing));
    }
    let (h, w, _) = ds.image_shape();
    if bank.image_shape() != (h, w) {
        return Err(Error::Shape(format!(
            "bank holds {:?} perturbations but dataset images are {h}x{w}",
            bank.image_shape()
        )));
    }

    let mut images = ds.images.clone();
    for (i, &id) in ds.sample_ids.iter().enumerate() {
        let delta = bank.delta_for(id).expect("checked above");
        let mut img = images.index_axis_mut(ndarray::Axis(0), i);
        img.zip_mut_with(&delta, |x, &d| {
            *x = (*x + f64::from(d)).clamp(0.0, 1.0);
        });
    }
    ImageDataset::new(
        images,
        ds.labels.clone(),
        ds.sample_ids.clone(),
        ds.split_tag,
        ds.class_count,
        ds.provenance.clone(),
    )
}

/// Keep only the samples whose id is *not* listed (order preserved). The
/// complement view used to draw additional data disjoint from an existing
/// subset.
pub fn without_ids(ds: &ImageDataset, exclude: &HashSet<u64>) -> ImageDataset {
    let keep: Vec<usize> = (0..ds.len()).filter(|&i| !exclude.contains(&ds.sample_ids[i])).collect();
    gather(ds, &keep)
}

/// Concatenate two datasets with disjoint sample ids, tagging provenance and
/// shuffling the combined order deterministically (so original/added blocks
/// never align with batch boundaries).
pub fn mix(
    original: &ImageDataset,
    added: &ImageDataset,
    spec: &MixSpec,
    seed: u64,
) -> Result<ImageDataset> {
    spec.validate()?;
    if original.class_count != added.class_count {
        return Err(Error::Shape(format!(
            "class counts differ: {} vs {}",
            original.class_count, added.class_count
        )));
    }
    if original.image_shape() != added.image_shape() {
        return Err(Error::Shape("image shapes differ between mixed datasets".into()));
    }
    let ids: HashSet<u64> = original.sample_ids.iter().copied().collect();
    let overlap: Vec<u64> =
        added.sample_ids.iter().copied().filter(|id| ids.contains(id)).collect();
    if !overlap.is_empty() {
        return Err(Error::Invariant(format!("overlapping sample_ids: {overlap:?}")));
    }

    let (h, w, c) = original.image_shape();
    let n = original.len() + added.len();
    let mut images = Array4::zeros((n, h, w, c));
    let mut labels = Vec::with_capacity(n);
    let mut sample_ids = Vec::with_capacity(n);
    let mut provenance = Vec::with_capacity(n);
    for (src, tag) in [(original, Provenance::Original), (added, Provenance::Added)] {
        for i in 0..src.len() {
            let row = labels.len();
            images
                .index_axis_mut(ndarray::Axis(0), row)
                .assign(&src.images.index_axis(ndarray::Axis(0), i));
            labels.push(src.labels[i]);
            sample_ids.push(src.sample_ids[i]);
            provenance.push(tag);
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "mix/shuffle"));
    let shuffled = ImageDataset::new(
        images,
        labels,
        sample_ids,
        original.split_tag,
        original.class_count,
        Some(provenance),
    )?;
    Ok(gather(&shuffled, &order))
}
