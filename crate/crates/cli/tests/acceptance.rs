//! Acceptance gate. Prints exactly one status line per numbered criterion and
//! fails if any criterion that could run did not pass.
//!
//! Scales:
//! * Criteria 1-8 and 14 measure the full CIFAR-10 grid. That takes hours of
//!   compute plus the CIFAR-10 dataset, so they run only when `ULE_FULL=1`
//!   and `cifar10-train` is available under `$ULE_DATA_DIR`; otherwise they
//!   are reported as SKIP with the reason.
//! * Criterion 9 runs the small synthetic grid end to end (single core,
//!   well under its 30-minute budget).
//! * Criteria 10-13 check invariants on freshly crafted small banks and tiny
//!   training runs; they always run.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4, Axis};
use ule_core::crafting::{self, CraftSpec, Variant, BUDGET_SLACK};
use ule_core::data::{self, ImageDataset};
use ule_core::evaluation::{attack_batch, AttackKind, AttackSpec};
use ule_core::exploiter::{self, ExploiterSpec};
use ule_core::mitigations;
use ule_core::models::{build, Arch, ModelSpec, Normalization, Wrt};
use ule_core::nn::{Mode, Targets};
use ule_core::rng;
use ule_cli::suite;

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

struct Gate {
    lines: Vec<(usize, Status, String)>,
}

impl Gate {
    fn new() -> Self {
        Gate { lines: Vec::new() }
    }

    fn record(&mut self, criterion: usize, ok: bool, detail: String) {
        self.lines.push((criterion, if ok { Status::Pass } else { Status::Fail }, detail));
    }

    fn skip(&mut self, criterion: usize, reason: &str) {
        self.lines.push((criterion, Status::Skip, reason.to_string()));
    }

    fn finish(mut self) {
        self.lines.sort_by_key(|(c, _, _)| *c);
        let mut out = String::new();
        for (criterion, status, detail) in &self.lines {
            let tag = match status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Skip => "SKIP",
            };
            writeln!(out, "criterion {criterion:>2} [{tag}] {detail}").unwrap();
        }
        println!("\n{out}");
        let failed: Vec<usize> = self
            .lines
            .iter()
            .filter(|(_, s, _)| *s == Status::Fail)
            .map(|(c, _, _)| *c)
            .collect();
        assert!(failed.is_empty(), "criteria failed: {failed:?}\n{out}");
    }
}

fn work_dir(sub: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(sub);
    std::fs::create_dir_all(&dir).expect("create acceptance work dir");
    dir
}

/// A small stratified slice of the synthetic training split plus its test
/// counterpart, shared by the invariant criteria.
fn small_fixture(data_root: &Path) -> (ImageDataset, ImageDataset) {
    let train = data::load_dataset("synthetic-3class", data_root).expect("train split");
    let test = data::load_dataset("synthetic-3class-test", data_root).expect("test split");
    let train = data::subset(&train, 0.06, 11).expect("train subset"); // 300 samples
    let test = data::subset(&test, 0.1, 11).expect("test subset"); // 150 samples
    (train, test)
}

fn small_model(ds: &ImageDataset, init_seed: u64) -> ModelSpec {
    ModelSpec {
        arch: Arch::SmallCnn,
        class_count: ds.class_count,
        input_shape: ds.image_shape(),
        normalization: Normalization::centered(),
        init_seed,
    }
}

fn quick_craft(ds: &ImageDataset, variant: Variant, seed: u64) -> crafting::PerturbationBank {
    let mut spec = CraftSpec::standard(variant, small_model(ds, 900), 8.0 / 255.0, seed);
    spec.inner_steps = 3;
    spec.outer_steps = 5;
    spec.batch_size = 128;
    spec.max_rounds = 2;
    spec.stop_error = 0.30; // convergence is criterion 9's business, not here
    crafting::craft(ds, &spec).expect("craft small bank")
}

// --- criteria 1-8 and 14: the CIFAR-10 grid ------------------------------------

fn full_grid(gate: &mut Gate) {
    const FULL_CRITERIA: [usize; 9] = [1, 2, 3, 4, 5, 6, 7, 8, 14];
    if std::env::var("ULE_FULL").map(|v| v == "1").unwrap_or(false) {
        let out = work_dir("full");
        match suite::run(false, &out, None, 0) {
            Ok(outcome) => {
                // The suite emits its checks in a fixed order; map them onto
                // the criterion numbers (the transfer-matrix stage at index 7
                // feeds the tables but has no numbered criterion of its own).
                let map: [(usize, usize); 9] =
                    [(0, 1), (1, 2), (2, 3), (3, 4), (4, 7), (5, 5), (6, 6), (8, 8), (9, 14)];
                let by_index: HashMap<usize, usize> = map.into_iter().collect();
                for (i, check) in outcome.checks.iter().enumerate() {
                    if let Some(&criterion) = by_index.get(&i) {
                        gate.record(
                            criterion,
                            check.passed != Some(false),
                            format!("{} - {}", check.label, check.detail),
                        );
                    }
                }
            }
            Err(e) => {
                for c in FULL_CRITERIA {
                    gate.skip(c, &format!("full grid did not run: {e}"));
                }
            }
        }
    } else {
        for c in FULL_CRITERIA {
            gate.skip(
                c,
                "needs the CIFAR-10 grid (hours of compute); set ULE_FULL=1 \
                 with cifar10-train under $ULE_DATA_DIR",
            );
        }
    }
}

// --- criterion 9: the synthetic desk grid --------------------------------------

fn desk_grid(gate: &mut Gate, data_root: &Path) {
    let out = work_dir("desk");
    match suite::desk_suite(&out, data_root, 0) {
        Ok(outcome) => {
            let ok = outcome.checks.iter().all(|c| c.passed == Some(true))
                && outcome.elapsed_seconds < 1800.0;
            let detail = outcome
                .checks
                .iter()
                .map(|c| {
                    format!(
                        "{} {}",
                        if c.passed == Some(true) { "ok:" } else { "FAILED:" },
                        c.detail
                    )
                })
                .collect::<Vec<_>>()
                .join("; ");
            gate.record(9, ok, format!("{detail} ({:.0}s)", outcome.elapsed_seconds));
        }
        Err(e) => gate.record(9, false, format!("desk suite errored: {e}")),
    }
}

// --- criterion 10: crafted-bank invariants --------------------------------------

fn bank_invariants(
    gate: &mut Gate,
    train: &ImageDataset,
    uleo: &crafting::PerturbationBank,
    grayaug: &crafting::PerturbationBank,
) {
    let mut problems = Vec::new();

    for (label, bank) in [("standard", uleo), ("gray+aug", grayaug)] {
        // Budget: every component within ε (plus f32 quantization slack).
        let eps = bank.epsilon() + BUDGET_SLACK;
        let max_abs = bank.deltas().iter().fold(0.0f64, |m, &v| m.max(f64::from(v).abs()));
        if max_abs > eps {
            problems.push(format!("{label}: |δ|∞ = {max_abs} exceeds ε"));
        }
        // Feasibility: x + δ stays in pixel range without clamping.
        let mut worst_low = 0.0f64;
        let mut worst_high = 1.0f64;
        for (i, &id) in train.sample_ids.iter().enumerate() {
            let delta = bank.delta_for(id).expect("bank covers the training set");
            let img = train.images.index_axis(Axis(0), i);
            ndarray::Zip::from(&img).and(&delta).for_each(|&x, &d| {
                let v = x + f64::from(d);
                worst_low = worst_low.min(v);
                worst_high = worst_high.max(v);
            });
        }
        if worst_low < -1e-9 || worst_high > 1.0 + 1e-9 {
            problems.push(format!("{label}: x+δ leaves [0,1] ({worst_low}..{worst_high})"));
        }
    }

    // Gray closure: the gray-constrained bank is channel-identical, bit for bit.
    let d = grayaug.deltas();
    let (n, h, w, _) = d.dim();
    'outer: for i in 0..n {
        for y in 0..h {
            for x in 0..w {
                if d[[i, y, x, 0]] != d[[i, y, x, 1]] || d[[i, y, x, 0]] != d[[i, y, x, 2]] {
                    problems.push("gray closure violated".into());
                    break 'outer;
                }
            }
        }
    }

    // Grayscale bypass: gray(x + δ) == gray(x) + δ for gray-constrained δ.
    let poisoned = data::assemble_poisoned(train, grayaug).expect("assemble");
    let gray_poisoned = mitigations::grayscale(&poisoned.images).expect("grayscale");
    let gray_clean = mitigations::grayscale(&train.images).expect("grayscale");
    let mut worst = 0.0f64;
    for (i, &id) in train.sample_ids.iter().enumerate() {
        let delta = grayaug.delta_for(id).expect("covered");
        let a = gray_poisoned.index_axis(Axis(0), i);
        let b = gray_clean.index_axis(Axis(0), i);
        ndarray::Zip::from(&a).and(&b).and(&delta).for_each(|&gp, &gc, &dv| {
            worst = worst.max((gp - (gc + f64::from(dv))).abs());
        });
    }
    if worst > 1e-9 {
        problems.push(format!("grayscale bypass identity off by {worst}"));
    }

    gate.record(
        10,
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "budget, feasibility, gray-closure, and grayscale-bypass hold on {} crafted rows",
                uleo.len() + grayaug.len()
            )
        } else {
            problems.join("; ")
        },
    );
}

// --- criterion 11: transform properties -----------------------------------------

fn transform_properties(gate: &mut Gate, train: &ImageDataset) {
    let mut problems = Vec::new();
    let idx: Vec<usize> = (0..16).collect();
    let (x, y) = train.batch(&idx);

    // Grayscale: idempotent and channel-flat.
    let g = mitigations::grayscale(&x).expect("grayscale");
    let gg = mitigations::grayscale(&g).expect("grayscale twice");
    let drift = g.iter().zip(gg.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if drift > 1e-12 {
        problems.push(format!("grayscale not idempotent (drift {drift})"));
    }
    let (n, h, w, _) = g.dim();
    let mut flat = true;
    for i in 0..n {
        for yy in 0..h {
            for xx in 0..w {
                flat &= g[[i, yy, xx, 0]] == g[[i, yy, xx, 1]] && g[[i, yy, xx, 1]] == g[[i, yy, xx, 2]];
            }
        }
    }
    if !flat {
        problems.push("grayscale output has channel dispersion".into());
    }

    // Bit-depth reduction: lands on the 2^bits grid, idempotent.
    let bits = 2u8;
    let levels = f64::from((1u32 << bits) - 1);
    let b = mitigations::bit_depth_reduce(&x, bits);
    let on_grid = b.iter().all(|&v| {
        let k = (v * levels).round();
        (v - k / levels).abs() < 1e-12
    });
    if !on_grid {
        problems.push("bit-depth reduction leaves the level grid".into());
    }
    if mitigations::bit_depth_reduce(&b, bits) != b {
        problems.push("bit-depth reduction not idempotent".into());
    }

    // Horizontal flip: exact involution.
    if mitigations::flip_image(&mitigations::flip_image(&x)) != x {
        problems.push("flip is not an involution".into());
    }

    // Mixup endpoints: λ=1 identity, λ=0 the permuted batch.
    let classes = train.class_count;
    let mut onehot = Array2::<f64>::zeros((y.len(), classes));
    for (row, &label) in y.iter().enumerate() {
        onehot[[row, label]] = 1.0;
    }
    let perm: Vec<usize> = (0..y.len()).rev().collect();
    let (x1, y1) = mitigations::mixup_with(&x, &onehot, 1.0, &perm);
    if x1 != x || y1 != onehot {
        problems.push("mixup with λ=1 is not the identity".into());
    }
    let (x0, _) = mitigations::mixup_with(&x, &onehot, 0.0, &perm);
    for (row, &src) in perm.iter().enumerate() {
        if x0.index_axis(Axis(0), row) != x.index_axis(Axis(0), src) {
            problems.push("mixup with λ=0 is not the permutation".into());
            break;
        }
    }

    // FGSM is PGD with one full-size step and no random start, bit for bit.
    let mut model = build(&small_model(train, 31)).expect("build");
    let eps = 8.0 / 255.0;
    let fgsm = AttackSpec::fgsm(eps);
    let pgd1 = AttackSpec {
        kind: AttackKind::Pgd,
        epsilon: eps,
        steps: 1,
        step_size: eps,
        random_start: false,
    };
    let a = attack_batch(&mut model, &x, &y, &fgsm, &mut rng::stream(1, "a"));
    let b = attack_batch(&mut model, &x, &y, &pgd1, &mut rng::stream(2, "b"));
    if a != b {
        problems.push("fgsm and single-step pgd disagree".into());
    }

    gate.record(
        11,
        problems.is_empty(),
        if problems.is_empty() {
            "grayscale, bit-depth, flip, mixup, and fgsm/pgd identities hold".into()
        } else {
            problems.join("; ")
        },
    );
}

// --- criterion 12: analytic gradients vs finite differences ---------------------

fn gradient_check(gate: &mut Gate) {
    let mut worst_overall = 0.0f64;
    for arch in [Arch::Mlp, Arch::SmallCnn] {
        let spec = ModelSpec {
            arch,
            class_count: 3,
            input_shape: (8, 8, 3),
            normalization: Normalization::centered(),
            init_seed: 17,
        };
        let mut model = build(&spec).expect("build");
        let mut r = rng::stream(23, "gradcheck/input");
        let mut x = Array4::<f64>::zeros((2, 8, 8, 3));
        x.mapv_inplace(|_| rand::Rng::random_range(&mut r, 0.2..0.8));
        let labels = vec![0usize, 2];

        let (_, g) = model.loss_and_grads(&x, Targets::Hard(&labels), Wrt::Input, Mode::Eval);
        let g = g.expect("input gradient");

        let h = 1e-5;
        let coords = [(0, 1, 1, 0), (0, 4, 6, 1), (1, 2, 3, 2), (1, 7, 7, 0), (0, 0, 5, 2)];
        for (i, yy, xx, c) in coords {
            let mut xp = x.clone();
            xp[[i, yy, xx, c]] += h;
            let (lp, _) = model.loss_and_grads(&xp, Targets::Hard(&labels), Wrt::Params, Mode::Eval);
            let mut xm = x.clone();
            xm[[i, yy, xx, c]] -= h;
            let (lm, _) = model.loss_and_grads(&xm, Targets::Hard(&labels), Wrt::Params, Mode::Eval);
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = g[[i, yy, xx, c]];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst_overall = worst_overall.max(rel);
        }
    }
    gate.record(
        12,
        worst_overall < 1e-3,
        format!("max relative error {worst_overall:.2e} over mlp + small_cnn input gradients"),
    );
}

// --- criterion 13: bit-exact determinism ----------------------------------------

fn determinism(
    gate: &mut Gate,
    train: &ImageDataset,
    test: &ImageDataset,
    first_bank: &crafting::PerturbationBank,
) {
    // Same crafting config twice: identical content hash.
    let second_bank = quick_craft(train, Variant::Uleo, 5);
    let craft_ok = first_bank.content_hash() == second_bank.content_hash();

    // Same training config twice: identical metrics.
    let mut spec = ExploiterSpec::standard(small_model(train, 700), 13);
    spec.epochs = 2;
    spec.batch_size = 64;
    let (_, rec_a) = exploiter::train(train, &spec, test).expect("train");
    let (_, rec_b) = exploiter::train(train, &spec, test).expect("train again");
    let train_ok = rec_a.final_clean_acc == rec_b.final_clean_acc
        && rec_a.clean_test_acc == rec_b.clean_test_acc;

    gate.record(
        13,
        craft_ok && train_ok,
        format!(
            "bank hash {} twice{}; final accuracy {} twice",
            &first_bank.content_hash()[..12],
            if craft_ok { "" } else { " (MISMATCH)" },
            if train_ok {
                format!("{:.4}", rec_a.final_clean_acc)
            } else {
                format!("{:.4} vs {:.4}", rec_a.final_clean_acc, rec_b.final_clean_acc)
            }
        ),
    );
}

#[test]
fn acceptance() {
    let mut gate = Gate::new();
    let data_root = work_dir("data");

    full_grid(&mut gate);
    desk_grid(&mut gate, &data_root);

    let (train, test) = small_fixture(&data_root);
    let uleo = quick_craft(&train, Variant::Uleo, 5);
    let grayaug = quick_craft(&train, Variant::UleoGrayAug, 5);
    bank_invariants(&mut gate, &train, &uleo, &grayaug);
    transform_properties(&mut gate, &train);
    gradient_check(&mut gate);
    determinism(&mut gate, &train, &test, &uleo);

    gate.finish();
}
