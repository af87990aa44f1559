//! Metrics: clean accuracy, white-box robust accuracy (FGSM / PGD),
//! cross-architecture transfer matrices, perturbation-structure profiles,
//! and plot-ready learning curves.

use ndarray::{Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crafting::{sign3, PerturbationBank};
use crate::data::{self, ImageDataset};
use crate::error::{Error, Result};
use crate::exploiter::{self, ExploiterSpec, RunRecord};
use crate::mitigations::Transform;
use crate::models::{Arch, Classifier, Wrt};
use crate::rng;
use ule_nn::{Mode, Targets};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

/// A white-box evasion attack used for robust-accuracy measurement (and as
/// the inner maximization of adversarial training).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub random_start: bool,
}

impl AttackSpec {
    /// Single signed-gradient step of size ε from the clean image.
    pub fn fgsm(epsilon: f64) -> Self {
        AttackSpec {
            kind: AttackKind::Fgsm,
            epsilon,
            steps: 1,
            step_size: epsilon,
            random_start: false,
        }
    }

    /// 20-step PGD with the conventional ε/8 step size and a random start.
    pub fn pgd20(epsilon: f64) -> Self {
        AttackSpec {
            kind: AttackKind::Pgd,
            epsilon,
            steps: 20,
            step_size: epsilon / 8.0,
            random_start: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(Error::Config(format!("attack ε must be ≥ 0, got {}", self.epsilon)));
        }
        if self.steps == 0 {
            return Err(Error::Config("attack needs at least 1 step".into()));
        }
        if self.step_size < 0.0 || self.step_size > self.epsilon {
            return Err(Error::Config(format!(
                "attack step_size must lie in [0, ε], got {} with ε={}",
                self.step_size, self.epsilon
            )));
        }
        if self.kind == AttackKind::Fgsm && self.steps != 1 {
            return Err(Error::Config("fgsm is single-step by definition".into()));
        }
        Ok(())
    }

    /// Short form for report tables, e.g. `fgsm(ε=0.0314)` / `pgd20(ε=0.0314)`.
    pub fn label(&self) -> String {
        match self.kind {
            AttackKind::Fgsm => format!("fgsm(ε={:.4})", self.epsilon),
            AttackKind::Pgd => format!("pgd{}(ε={:.4})", self.steps, self.epsilon),
        }
    }
}

/// Craft loss-*maximizing* examples for one batch against `model`.
///
/// The iterate stays within the ε-ball around `x` and inside `[0,1]`; with
/// ε = 0 the input comes back bit-identical. FGSM is exactly this loop with
/// one step of size ε and no random start.
pub fn attack_batch(
    model: &mut Classifier,
    x: &Array4<f64>,
    labels: &[usize],
    spec: &AttackSpec,
    rng: &mut impl Rng,
) -> Array4<f64> {
    debug_assert!(spec.validate().is_ok(), "invalid attack spec: {spec:?}");
    let eps = spec.epsilon;
    let mut delta: Array4<f64> = if spec.random_start && eps > 0.0 {
        let mut d = Array4::zeros(x.raw_dim());
        d.mapv_inplace(|_| rng.random_range(-eps..=eps));
        d
    } else {
        Array4::zeros(x.raw_dim())
    };
    // Fold the start into the feasible region.
    azip_project(&mut delta, x);

    for _ in 0..spec.steps {
        let input = x + &delta;
        let (_, g) = model.loss_and_grads(&input, Targets::Hard(labels), Wrt::Input, Mode::Eval);
        let g = g.expect("input gradient requested");
        ndarray::Zip::from(&mut delta).and(&g).for_each(|d, &gv| {
            *d = (*d + spec.step_size * sign3(gv)).clamp(-eps, eps);
        });
        azip_project(&mut delta, x);
    }
    x + &delta
}

/// Project δ so that x+δ lands in [0,1] (keeps δ = clamp(x+δ) − x).
fn azip_project(delta: &mut Array4<f64>, x: &Array4<f64>) {
    ndarray::Zip::from(delta).and(x).for_each(|d, &xv| {
        *d = (xv + *d).clamp(0.0, 1.0) - xv;
    });
}

/// Top-1 accuracy on the full dataset, in inference mode.
pub fn clean_accuracy(model: &mut Classifier, test: &ImageDataset, batch_size: usize) -> f64 {
    let n = test.len();
    let mut correct = 0usize;
    let mut start = 0;
    while start < n {
        let idx: Vec<usize> = (start..(start + batch_size).min(n)).collect();
        let (x, y) = test.batch(&idx);
        let logits = model.logits(&x, Mode::Eval);
        for (row, &label) in y.iter().enumerate() {
            let pred = ule_nn::argmax_row(logits.index_axis(Axis(0), row).as_slice().unwrap());
            correct += usize::from(pred == label);
        }
        start += batch_size;
    }
    correct as f64 / n as f64
}

/// Accuracy on adversarial examples crafted against this very model.
pub fn robust_accuracy(
    model: &mut Classifier,
    test: &ImageDataset,
    attack: &AttackSpec,
    batch_size: usize,
    seed: u64,
) -> f64 {
    let n = test.len();
    let mut correct = 0usize;
    let mut start = 0;
    let mut batch_index = 0usize;
    while start < n {
        let idx: Vec<usize> = (start..(start + batch_size).min(n)).collect();
        let (x, y) = test.batch(&idx);
        let mut r = rng::stream(seed, &format!("attack/{batch_index}"));
        let x_adv = attack_batch(model, &x, &y, attack, &mut r);
        let logits = model.logits(&x_adv, Mode::Eval);
        for (row, &label) in y.iter().enumerate() {
            let pred = ule_nn::argmax_row(logits.index_axis(Axis(0), row).as_slice().unwrap());
            correct += usize::from(pred == label);
        }
        start += batch_size;
        batch_index += 1;
    }
    correct as f64 / n as f64
}

// ---------------------------------------------------------------------------
// Transfer matrices

/// Clean test accuracies for every (perturbation source, trained arch) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    /// Row labels: the architecture each bank was crafted against.
    pub defender_archs: Vec<Arch>,
    /// Column labels: the architecture trained on the poisoned data.
    pub exploiter_archs: Vec<Arch>,
    /// Whether the trained models used a grayscale pre-filter.
    pub gray: bool,
    /// `accuracy[row][col]`, as fractions.
    pub accuracy: Vec<Vec<f64>>,
}

impl TransferMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("crafted_on");
        for a in &self.exploiter_archs {
            out.push(',');
            out.push_str(a.as_str());
        }
        out.push('\n');
        for (row, defender) in self.defender_archs.iter().enumerate() {
            out.push_str(defender.as_str());
            for v in &self.accuracy[row] {
                out.push_str(&format!(",{v:.4}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Train one exploiter per (bank, architecture) pair and record clean test
/// accuracy. All banks must share ε and cover every training sample;
/// `gray` appends a grayscale pre-filter to the template's transform stack.
pub fn transfer_matrix(
    ds: &ImageDataset,
    test: &ImageDataset,
    banks: &[(Arch, &PerturbationBank)],
    exploiter_archs: &[Arch],
    template: &ExploiterSpec,
    gray: bool,
) -> Result<TransferMatrix> {
    if banks.is_empty() || exploiter_archs.is_empty() {
        return Err(Error::Config("transfer matrix needs at least one bank and one arch".into()));
    }
    let eps0 = banks[0].1.epsilon();
    for (arch, bank) in banks {
        if (bank.epsilon() - eps0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "bank for {arch} has ε={} but the first bank has ε={eps0}",
                bank.epsilon()
            )));
        }
    }

    let mut transforms = template.transforms.clone();
    if gray {
        // Pipeline order: augment → grayscale → (model-internal) normalize.
        transforms.transforms.push(Transform::Grayscale);
        transforms.validate()?;
    }

    let mut accuracy = Vec::with_capacity(banks.len());
    for (_, bank) in banks {
        let poisoned = data::assemble_poisoned(ds, bank)?;
        let mut row = Vec::with_capacity(exploiter_archs.len());
        for &arch in exploiter_archs {
            let spec = ExploiterSpec {
                model: crate::models::ModelSpec { arch, ..template.model },
                transforms: transforms.clone(),
                ..template.clone()
            };
            let (_, record) = exploiter::train(&poisoned, &spec, test)?;
            row.push(record.final_clean_acc);
        }
        accuracy.push(row);
    }

    Ok(TransferMatrix {
        defender_archs: banks.iter().map(|(a, _)| *a).collect(),
        exploiter_archs: exploiter_archs.to_vec(),
        gray,
        accuracy,
    })
}

// ---------------------------------------------------------------------------
// Perturbation structure

/// Where a bank's energy lives: across color channels or across space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationProfile {
    /// Mean over samples and pixels of the standard deviation of δ across
    /// the three channels. Exactly zero iff δ is gray (channels identical).
    pub channel_dispersion: f64,
    /// Mean per-channel total variation (absolute horizontal + vertical
    /// neighbor differences), normalized by pixel count so the number is
    /// resolution-independent.
    pub spatial_energy: f64,
    /// Largest |δ| in the bank.
    pub linf: f64,
    /// Mean over samples of the per-sample Euclidean norm.
    pub l2: f64,
}

/// Structure metrics over a whole bank (order-independent: banks store rows
/// sorted by sample id).
pub fn perturbation_profile(bank: &PerturbationBank) -> Result<PerturbationProfile> {
    if bank.is_empty() {
        return Err(Error::Config("cannot profile an empty bank".into()));
    }
    let delta = bank.deltas();
    let (n, h, w, c) = delta.dim();

    let mut dispersion_sum = 0.0;
    let mut tv_sum = 0.0;
    let mut linf: f64 = 0.0;
    let mut l2_sum = 0.0;

    for i in 0..n {
        let mut sq = 0.0;
        for y in 0..h {
            for z in 0..w {
                let mut mean = 0.0;
                for ch in 0..c {
                    let v = f64::from(delta[[i, y, z, ch]]);
                    mean += v;
                    sq += v * v;
                    linf = linf.max(v.abs());
                }
                mean /= c as f64;
                let mut var = 0.0;
                for ch in 0..c {
                    let d = f64::from(delta[[i, y, z, ch]]) - mean;
                    var += d * d;
                }
                dispersion_sum += (var / c as f64).sqrt();
            }
        }
        l2_sum += sq.sqrt();

        for ch in 0..c {
            let mut tv = 0.0;
            for y in 0..h {
                for z in 0..w {
                    let v = f64::from(delta[[i, y, z, ch]]);
                    if y + 1 < h {
                        tv += (f64::from(delta[[i, y + 1, z, ch]]) - v).abs();
                    }
                    if z + 1 < w {
                        tv += (f64::from(delta[[i, y, z + 1, ch]]) - v).abs();
                    }
                }
            }
            tv_sum += tv / (h * w) as f64;
        }
    }

    Ok(PerturbationProfile {
        channel_dispersion: dispersion_sum / (n * h * w) as f64,
        spatial_energy: tv_sum / (n * c) as f64,
        linf,
        l2: l2_sum / n as f64,
    })
}

// ---------------------------------------------------------------------------
// Learning curves

/// Aligned per-epoch clean-test-accuracy series for overlay plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub labels: Vec<String>,
    /// One series per record; lengths may differ if runs stopped early.
    pub series: Vec<Vec<f64>>,
}

impl CurveSet {
    /// `epoch,label1,label2,...` with empty cells past a short series' end.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        let max_len = self.series.iter().map(Vec::len).max().unwrap_or(0);
        for e in 0..max_len {
            out.push_str(&e.to_string());
            for s in &self.series {
                out.push(',');
                if let Some(v) = s.get(e) {
                    out.push_str(&format!("{v:.4}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Extract clean-test-accuracy curves from finished runs.
pub fn learning_curves(records: &[(String, &RunRecord)]) -> CurveSet {
    CurveSet {
        labels: records.iter().map(|(l, _)| l.clone()).collect(),
        series: records.iter().map(|(_, r)| r.clean_test_acc.clone()).collect(),
    }
}
