//! Training classifiers on (possibly poisoned) data under a configurable
//! mitigation stack, with per-epoch logging, optional adversarial training,
//! and an optional clean-validation early-stopping monitor.

use ndarray::{Array4, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{ImageDataset, Provenance};
use crate::error::{Error, Result};
use crate::evaluation::{self, AttackSpec};
use crate::mitigations::{self, BatchLabels, TransformStack};
use crate::models::{self, Classifier, ModelSpec};
use crate::rng;
use ule_nn::{LrSchedule, Mode, Sgd, Targets};

/// Adversarial-training configuration: each batch is replaced by PGD
/// adversarial examples (loss-maximizing, ε-ball, random start) before the
/// parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtSpec {
    pub steps: usize,
    pub epsilon: f64,
    pub step_size: f64,
}

impl AtSpec {
    /// The 7-step PGD configuration with the conventional ε/4 step size.
    pub fn pgd7(epsilon: f64) -> Self {
        AtSpec { steps: 7, epsilon, step_size: epsilon / 4.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EarlyStopSpec {
    /// Stop when clean-validation accuracy has not improved for this many
    /// epochs. `usize::MAX` effectively disables the monitor.
    pub patience: usize,
}

/// Learning-rate schedule selector (the base rate lives in `lr`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    Constant,
    Cosine,
    Step { milestones: Vec<usize>, gamma: f64 },
}

impl ScheduleSpec {
    fn build(&self, lr: f64, epochs: usize) -> LrSchedule {
        match self {
            ScheduleSpec::Constant => LrSchedule::Constant { lr },
            ScheduleSpec::Cosine => LrSchedule::Cosine { base: lr, total_epochs: epochs },
            ScheduleSpec::Step { milestones, gamma } => LrSchedule::Step {
                base: lr,
                milestones: milestones.clone(),
                gamma: *gamma,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploiterSpec {
    pub model: ModelSpec,
    /// Applied to every training batch, in order, before any attack.
    pub transforms: TransformStack,
    pub adversarial: Option<AtSpec>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: ScheduleSpec,
    pub momentum: f64,
    pub weight_decay: f64,
    pub early_stop: Option<EarlyStopSpec>,
    pub seed: u64,
}

impl ExploiterSpec {
    /// The conventional recipe: 60 epochs, batch 128, SGD momentum 0.9 with
    /// weight decay 5e-4, lr 0.1 under cosine decay, crop/flip augmentation.
    pub fn standard(model: ModelSpec, seed: u64) -> Self {
        ExploiterSpec {
            model,
            transforms: TransformStack::new(vec![
                mitigations::Transform::RandomCrop { pad: 4, reflect: true },
                mitigations::Transform::RandomFlip { p: 0.5 },
            ])
            .expect("static stack is valid"),
            adversarial: None,
            epochs: 60,
            batch_size: 128,
            lr: 0.1,
            schedule: ScheduleSpec::Cosine,
            momentum: 0.9,
            weight_decay: 5e-4,
            early_stop: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.transforms.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if let Some(at) = &self.adversarial {
            if at.steps == 0 || at.epsilon <= 0.0 {
                return Err(Error::Config("adversarial training needs steps ≥ 1 and ε > 0".into()));
            }
            if !(at.step_size > 0.0 && at.step_size <= at.epsilon) {
                return Err(Error::Config(format!(
                    "AT step_size must lie in (0, ε], got {}",
                    at.step_size
                )));
            }
            if self.transforms.contains_mixup() {
                return Err(Error::Config(
                    "mixup and adversarial training cannot be combined: the attack \
                     needs per-sample hard labels"
                        .into(),
                ));
            }
        }
        Ok(())
    }
}

/// One robust-accuracy measurement attached to a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustEntry {
    pub attack: AttackSpec,
    pub accuracy: f64,
}

/// Everything a finished (or aborted) training run produced. The per-epoch
/// vectors all have length `epochs_run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub spec: ExploiterSpec,
    /// Human-readable provenance of the training data.
    pub data_note: String,
    /// Content hash of the perturbation bank behind the training data, if
    /// any (set by the pipeline that assembled the data).
    pub bank_hash: Option<String>,
    pub train_loss: Vec<f64>,
    pub train_acc: Vec<f64>,
    pub clean_test_acc: Vec<f64>,
    pub val_acc: Option<Vec<f64>>,
    pub final_clean_acc: f64,
    pub robust_acc: Vec<RobustEntry>,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub diverged: bool,
    pub wall_seconds: f64,
    pub seed: u64,
}

/// Per-epoch progress handed to an observer callback.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub clean_test_acc: f64,
    pub val_acc: Option<f64>,
}

/// Early-stopping decision over a clean-validation accuracy history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop { best_epoch: usize },
}

/// Stop once the best validation accuracy is `patience` epochs old. Ties
/// resolve to the earliest epoch.
pub fn early_stop_monitor(val_history: &[f64], patience: usize) -> StopDecision {
    if val_history.is_empty() {
        return StopDecision::Continue;
    }
    let mut best = 0;
    for (i, &v) in val_history.iter().enumerate() {
        if v > val_history[best] {
            best = i;
        }
    }
    if val_history.len() - 1 - best >= patience {
        StopDecision::Stop { best_epoch: best }
    } else {
        StopDecision::Continue
    }
}

fn describe_data(ds: &ImageDataset) -> String {
    let base = format!("{:?} split, {} samples, {} classes", ds.split_tag, ds.len(), ds.class_count);
    match &ds.provenance {
        None => base,
        Some(p) => {
            let added = p.iter().filter(|&&x| x == Provenance::Added).count();
            format!("{base} ({} original + {added} added)", p.len() - added)
        }
    }
}

fn assert_channels_tied(x: &Array4<f64>) {
    let (n, h, w, _) = x.dim();
    for i in 0..n {
        for y in 0..h {
            for z in 0..w {
                assert!(
                    x[[i, y, z, 0]] == x[[i, y, z, 1]] && x[[i, y, z, 1]] == x[[i, y, z, 2]],
                    "grayscale stack produced a batch with cross-channel variation"
                );
            }
        }
    }
}

/// Train per `spec`, logging one entry per epoch.
///
/// `validation` must be supplied iff `spec.early_stop` is set; the monitor
/// watches clean accuracy on it, snapshots the best weights, and restores
/// them before returning. A non-finite training loss or non-finite logits
/// abort with [`Error::Diverged`], carrying the record of all fully
/// completed epochs.
pub fn train_with(
    ds: &ImageDataset,
    spec: &ExploiterSpec,
    test: &ImageDataset,
    validation: Option<&ImageDataset>,
    mut observer: Option<&mut dyn FnMut(&EpochStats)>,
) -> Result<(Classifier, RunRecord)> {
    spec.validate()?;
    if spec.early_stop.is_some() && validation.is_none() {
        return Err(Error::Config("early_stop requires a validation dataset".into()));
    }
    if ds.class_count != test.class_count || ds.image_shape() != test.image_shape() {
        return Err(Error::Config("train and test sets disagree on shape or classes".into()));
    }
    if spec.model.class_count != ds.class_count || spec.model.input_shape != ds.image_shape() {
        return Err(Error::Config(format!(
            "model expects {:?}/{} classes but data is {:?}/{}",
            spec.model.input_shape,
            spec.model.class_count,
            ds.image_shape(),
            ds.class_count
        )));
    }

    let started = std::time::Instant::now();
    let mut model = models::build(&spec.model)?;
    let mut opt = Sgd::new(spec.momentum, spec.weight_decay);
    let schedule = spec.schedule.build(spec.lr, spec.epochs);
    let n = ds.len();
    let check_gray = spec.transforms.contains_grayscale();

    let mut train_loss = Vec::with_capacity(spec.epochs);
    let mut train_acc = Vec::with_capacity(spec.epochs);
    let mut clean_test_acc = Vec::with_capacity(spec.epochs);
    let mut val_acc: Vec<f64> = Vec::new();
    let mut best_state: Option<Vec<ndarray::ArrayD<f64>>> = None;
    let mut best_epoch = None;
    let mut stopped_early = false;

    let make_record = |train_loss: &Vec<f64>,
                       train_acc: &Vec<f64>,
                       clean: &Vec<f64>,
                       val: &Vec<f64>,
                       final_clean: f64,
                       best_epoch: Option<usize>,
                       stopped_early: bool,
                       diverged: bool,
                       wall: f64| RunRecord {
        schema_version: 1,
        spec: spec.clone(),
        data_note: describe_data(ds),
        bank_hash: None,
        train_loss: train_loss.clone(),
        train_acc: train_acc.clone(),
        clean_test_acc: clean.clone(),
        val_acc: validation.map(|_| val.clone()),
        final_clean_acc: final_clean,
        robust_acc: Vec::new(),
        epochs_run: clean.len(),
        best_epoch,
        stopped_early,
        diverged,
        wall_seconds: wall,
        seed: spec.seed,
    };

    for epoch in 0..spec.epochs {
        let lr = schedule.lr_at(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(spec.seed, &format!("train/shuffle/{epoch}")));
        let mut tf_rng = rng::stream(spec.seed, &format!("train/transforms/{epoch}"));
        let mut at_rng = rng::stream(spec.seed, &format!("train/attack/{epoch}"));

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(spec.batch_size) {
            let (x_raw, y) = ds.batch(chunk);
            let (mut x, labels) =
                mitigations::apply_stack(&spec.transforms, &x_raw, &y, ds.class_count, &mut tf_rng)?;
            if check_gray {
                assert_channels_tied(&x);
            }

            if let Some(at) = &spec.adversarial {
                let attack = AttackSpec {
                    kind: evaluation::AttackKind::Pgd,
                    epsilon: at.epsilon,
                    steps: at.steps,
                    step_size: at.step_size,
                    random_start: true,
                };
                let x_adv = evaluation::attack_batch(&mut model, &x, &y, &attack, &mut at_rng);
                let worst = x_adv
                    .iter()
                    .zip(x.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                assert!(
                    worst <= at.epsilon + 1e-6,
                    "adversarial example left the ε-ball: {worst} > {}",
                    at.epsilon
                );
                x = x_adv;
            }

            model.net.zero_grads();
            let logits = model.net.forward(x.clone(), Mode::Train);
            let (loss, grad) = match &labels {
                BatchLabels::Hard(h) => ule_nn::softmax_cross_entropy(&logits, Targets::Hard(h)),
                BatchLabels::Soft(s) => ule_nn::softmax_cross_entropy(&logits, Targets::Soft(s)),
            };
            // The guarded cross-entropy never returns NaN itself, so watch
            // the logits too: a runaway model shows up there first.
            if !loss.is_finite() || logits.iter().any(|v| !v.is_finite()) {
                let final_clean = clean_test_acc.last().copied().unwrap_or(0.0);
                let record = make_record(
                    &train_loss, &train_acc, &clean_test_acc, &val_acc, final_clean, best_epoch,
                    stopped_early, true, started.elapsed().as_secs_f64(),
                );
                return Err(Error::Diverged { epoch, record: Box::new(record) });
            }
            model.net.backward(grad);
            opt.step(&mut model.net, lr);

            loss_sum += loss * chunk.len() as f64;
            // Accuracy against the dominant label (the hard label, or the
            // heavier component of a mixed pair).
            for (row, logit_row) in logits.axis_iter(Axis(0)).enumerate() {
                let pred = ule_nn::argmax_row(logit_row.as_slice().unwrap());
                let target = match &labels {
                    BatchLabels::Hard(h) => h[row],
                    BatchLabels::Soft(s) => {
                        ule_nn::argmax_row(s.index_axis(Axis(0), row).as_slice().unwrap())
                    }
                };
                correct += usize::from(pred == target);
            }
        }

        train_loss.push(loss_sum / n as f64);
        train_acc.push(correct as f64 / n as f64);
        clean_test_acc.push(evaluation::clean_accuracy(&mut model, test, spec.batch_size));

        let mut epoch_val = None;
        if let Some(vds) = validation {
            let v = evaluation::clean_accuracy(&mut model, vds, spec.batch_size);
            val_acc.push(v);
            epoch_val = Some(v);
            let is_best = best_epoch
                .map(|b: usize| v > val_acc[b])
                .unwrap_or(true);
            if is_best {
                best_epoch = Some(epoch);
                if spec.early_stop.is_some() {
                    best_state = Some(model.state());
                }
            }
        }

        if let Some(obs) = observer.as_deref_mut() {
            obs(&EpochStats {
                epoch,
                lr,
                train_loss: train_loss[epoch],
                train_acc: train_acc[epoch],
                clean_test_acc: clean_test_acc[epoch],
                val_acc: epoch_val,
            });
        }

        if let Some(es) = &spec.early_stop {
            if let StopDecision::Stop { best_epoch: b } = early_stop_monitor(&val_acc, es.patience)
            {
                best_epoch = Some(b);
                stopped_early = true;
                break;
            }
        }
    }

    if stopped_early {
        if let Some(state) = &best_state {
            model.set_state(state);
        }
    }
    let final_clean = if stopped_early {
        evaluation::clean_accuracy(&mut model, test, spec.batch_size)
    } else {
        *clean_test_acc.last().expect("at least one epoch ran")
    };

    let record = make_record(
        &train_loss, &train_acc, &clean_test_acc, &val_acc, final_clean, best_epoch,
        stopped_early, false, started.elapsed().as_secs_f64(),
    );
    Ok((model, record))
}

/// Train without a validation monitor or observer.
pub fn train(
    ds: &ImageDataset,
    spec: &ExploiterSpec,
    test: &ImageDataset,
) -> Result<(Classifier, RunRecord)> {
    train_with(ds, spec, test, None, None)
}

/// [`train`] with the adversarial-training section required up front.
pub fn train_adversarial(
    ds: &ImageDataset,
    spec: &ExploiterSpec,
    test: &ImageDataset,
) -> Result<(Classifier, RunRecord)> {
    if spec.adversarial.is_none() {
        return Err(Error::Config("train_adversarial requires an adversarial section".into()));
    }
    train(ds, spec, test)
}
