//! The `paper-suite` meta-command: run the minimal experiment grid that
//! reproduces the headline tables. Two scales share one code path:
//!
//! * full — CIFAR-10 + ResNet-18 at epsilon 8/255. Compute-heavy; sized for
//!   an accelerator-class budget or a very patient CPU.
//! * desk — the synthetic 3-class set + small CNN at epsilon 16/255,
//!   finishing in well under half an hour on one core.
//!
//! Each stage reuses the regular subcommand implementations, so artifacts
//! land exactly as if the stages had been run by hand.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use ule_core::crafting::Variant;
use ule_core::evaluation::AttackKind;
use ule_core::mitigations::Transform;
use ule_core::models::Arch;
use ule_core::{Error, Result};

use crate::config::{
    AdversarialCfg, AttackCfg, CraftCfg, DatasetCfg, EvalCfg, ExperimentConfig, ExploiterCfg,
    MixCfg, ModelCfg,
};
use crate::ops;

/// One pass/fail line in the suite summary. `passed: None` marks a stage
/// that was skipped or informational.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub label: String,
    pub passed: Option<bool>,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct SuiteOutcome {
    pub desk: bool,
    pub seed: u64,
    pub elapsed_seconds: f64,
    pub checks: Vec<Check>,
    /// Raw numbers the checks were computed from, for downstream tooling.
    pub measurements: serde_json::Map<String, serde_json::Value>,
}

impl SuiteOutcome {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed != Some(false))
    }
}

// --- Desk-scale tuning ---------------------------------------------------------
// Established empirically: small enough to finish on one core, large enough
// that the clean baseline is strong and the poisoning effect unmistakable.

pub const DESK_EPSILON: f64 = 16.0 / 255.0;
pub const DESK_TRAIN_FRACTION: f64 = 0.24; // 1200 of 5000
pub const DESK_TEST_FRACTION: f64 = 0.4; // 600 of 1500
pub const DESK_EPOCHS: usize = 6;
pub const DESK_BATCH: usize = 64;
pub const DESK_LR: f64 = 0.05;
pub const DESK_STOP_ERROR: f64 = 0.03;
// Gray-constrained crafting converges noticeably slower than plain (the
// constraint halves the usable gradient directions), so leave generous room.
pub const DESK_MAX_ROUNDS: usize = 20;
pub const DESK_INNER_STEPS: usize = 5;
pub const DESK_OUTER_STEPS: usize = 10;

fn desk_dataset(data_root: &Path) -> DatasetCfg {
    DatasetCfg {
        name: "synthetic-3class".into(),
        root: Some(data_root.to_path_buf()),
        test_name: None,
        fraction: Some(DESK_TRAIN_FRACTION),
        test_fraction: Some(DESK_TEST_FRACTION),
    }
}

/// Standard augmentation with the grayscale pre-filter, as in the full grid.
fn desk_gray_stack() -> Vec<Transform> {
    vec![
        Transform::RandomCrop { pad: 4, reflect: true },
        Transform::RandomFlip { p: 0.5 },
        Transform::Grayscale,
    ]
}

fn desk_exploiter(transforms: Option<Vec<Transform>>) -> ExploiterCfg {
    ExploiterCfg {
        model: ModelCfg { arch: Arch::SmallCnn, normalization: None, init_seed: None },
        transforms,
        adversarial: None,
        epochs: Some(DESK_EPOCHS),
        batch_size: Some(DESK_BATCH),
        lr: Some(DESK_LR),
        schedule: None,
        momentum: None,
        weight_decay: None,
        validation_fraction: None,
        early_stop_patience: None,
    }
}

fn desk_craft(variant: Variant) -> CraftCfg {
    CraftCfg {
        variant,
        model: ModelCfg { arch: Arch::SmallCnn, normalization: None, init_seed: None },
        epsilon: DESK_EPSILON,
        inner_steps: Some(DESK_INNER_STEPS),
        inner_step_size: None,
        outer_steps: Some(DESK_OUTER_STEPS),
        batch_size: None,
        stop_error: Some(DESK_STOP_ERROR),
        max_rounds: Some(DESK_MAX_ROUNDS),
        augment_outer: None,
        restart_each_round: None,
        outer_lr: None,
        momentum: None,
        aug: None,
    }
}

fn stage_config(
    output_dir: &Path,
    stage: &str,
    dataset: DatasetCfg,
    seed: u64,
    craft: Option<CraftCfg>,
    exploiter: Option<ExploiterCfg>,
) -> ExperimentConfig {
    ExperimentConfig {
        output_dir: output_dir.join(stage),
        seed: Some(seed),
        seeds: None,
        deterministic: true,
        dataset,
        craft,
        exploiter,
        eval: None,
        matrix: None,
        mix: None,
    }
}

fn pct(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

/// Run the suite. `data_root` falls back to $ULE_DATA_DIR / ./data.
pub fn run(desk: bool, output_dir: &Path, data_root: Option<PathBuf>, seed: u64) -> Result<SuiteOutcome> {
    let root = data_root.unwrap_or_else(|| {
        std::env::var_os(crate::config::DATA_ROOT_ENV)
            .map_or_else(|| PathBuf::from("data"), PathBuf::from)
    });
    if desk {
        desk_suite(output_dir, &root, seed)
    } else {
        full_suite(output_dir, &root, seed)
    }
}

/// Synthetic-data suite: clean baselines, a standard bank, a gray+aug bank,
/// and the mitigation checks, all sized for a single CPU core.
pub fn desk_suite(output_dir: &Path, data_root: &Path, seed: u64) -> Result<SuiteOutcome> {
    let started = Instant::now();
    let ds = || desk_dataset(data_root);
    let mut measurements = serde_json::Map::new();
    let mut record = |key: &str, value: f64| {
        measurements.insert(key.to_string(), serde_json::json!(value));
        value
    };

    println!("== desk suite: clean baselines ==");
    let cfg = stage_config(output_dir, "clean-std", ds(), seed, None, Some(desk_exploiter(None)));
    let clean_std = record("clean_std", ops::cmd_train(&cfg, seed, None, false)?.record.final_clean_acc);
    let cfg = stage_config(
        output_dir,
        "clean-gray",
        ds(),
        seed,
        None,
        Some(desk_exploiter(Some(desk_gray_stack()))),
    );
    let clean_gray =
        record("clean_gray", ops::cmd_train(&cfg, seed, None, false)?.record.final_clean_acc);

    println!("== desk suite: craft standard bank ==");
    let cfg = stage_config(output_dir, "craft-uleo", ds(), seed, Some(desk_craft(Variant::Uleo)), None);
    let uleo = ops::cmd_craft(&cfg, seed)?;

    println!("== desk suite: exploiters on the standard bank ==");
    let cfg = stage_config(output_dir, "uleo-std", ds(), seed, None, Some(desk_exploiter(None)));
    let uleo_std =
        record("uleo_std", ops::cmd_train(&cfg, seed, Some(uleo.dir.as_path()), false)?.record.final_clean_acc);
    let cfg = stage_config(
        output_dir,
        "uleo-gray",
        ds(),
        seed,
        None,
        Some(desk_exploiter(Some(desk_gray_stack()))),
    );
    let uleo_gray =
        record("uleo_gray", ops::cmd_train(&cfg, seed, Some(uleo.dir.as_path()), false)?.record.final_clean_acc);

    println!("== desk suite: craft gray+aug bank ==");
    let cfg = stage_config(
        output_dir,
        "craft-grayaug",
        ds(),
        seed,
        Some(desk_craft(Variant::UleoGrayAug)),
        None,
    );
    let grayaug = ops::cmd_craft(&cfg, seed)?;

    println!("== desk suite: grayscale exploiter on the gray+aug bank ==");
    let cfg = stage_config(
        output_dir,
        "grayaug-gray",
        ds(),
        seed,
        None,
        Some(desk_exploiter(Some(desk_gray_stack()))),
    );
    let grayaug_gray = record(
        "grayaug_gray",
        ops::cmd_train(&cfg, seed, Some(grayaug.dir.as_path()), false)?.record.final_clean_acc,
    );

    let drop = clean_std - uleo_std;
    let recovery = if drop.abs() > f64::EPSILON { (uleo_gray - uleo_std) / drop } else { 0.0 };
    let grayaug_gap = clean_gray - grayaug_gray;
    record("uleo_drop", drop);
    record("gray_recovery", recovery);
    record("grayaug_gap", grayaug_gap);

    let checks = vec![
        Check {
            label: "crafting converges within max rounds".into(),
            passed: Some(uleo.converged && grayaug.converged),
            detail: format!(
                "standard bank: {} rounds, gray+aug bank: {} rounds",
                uleo.rounds, grayaug.rounds
            ),
        },
        Check {
            label: "standard bank drops accuracy by >= 30 points".into(),
            passed: Some(drop >= 0.30),
            detail: format!("clean {} -> poisoned {} (drop {})", pct(clean_std), pct(uleo_std), pct(drop)),
        },
        Check {
            label: "grayscale pre-filter recovers >= 50% of the drop".into(),
            passed: Some(recovery >= 0.50),
            detail: format!("gray exploiter {} (recovered {:.0}%)", pct(uleo_gray), recovery * 100.0),
        },
        Check {
            label: "gray+aug bank keeps the gray exploiter >= 20 points below clean".into(),
            passed: Some(grayaug_gap >= 0.20),
            detail: format!("clean-gray {} -> {} (gap {})", pct(clean_gray), pct(grayaug_gray), pct(grayaug_gap)),
        },
    ];

    finish(output_dir, true, seed, started, checks, measurements)
}

/// CIFAR-10 suite covering the headline tables. Stages print their numbers
/// as they land; the summary JSON collects everything.
pub fn full_suite(output_dir: &Path, data_root: &Path, seed: u64) -> Result<SuiteOutcome> {
    let started = Instant::now();
    let dataset = || DatasetCfg {
        name: "cifar10-train".into(),
        root: Some(data_root.to_path_buf()),
        test_name: None,
        fraction: None,
        test_fraction: None,
    };
    let model = |arch: Arch| ModelCfg { arch, normalization: None, init_seed: None };
    let exploiter = |arch: Arch, transforms: Option<Vec<Transform>>| ExploiterCfg {
        model: model(arch),
        transforms,
        adversarial: None,
        epochs: None,
        batch_size: None,
        lr: None,
        schedule: None,
        momentum: None,
        weight_decay: None,
        validation_fraction: None,
        early_stop_patience: None,
    };
    let craft = |variant: Variant, arch: Arch| CraftCfg {
        variant,
        model: model(arch),
        epsilon: 8.0 / 255.0,
        inner_steps: None,
        inner_step_size: None,
        outer_steps: None,
        batch_size: None,
        stop_error: None,
        max_rounds: None,
        augment_outer: None,
        restart_each_round: None,
        outer_lr: None,
        momentum: None,
        aug: None,
    };
    let gray_stack = || {
        vec![
            Transform::RandomCrop { pad: 4, reflect: true },
            Transform::RandomFlip { p: 0.5 },
            Transform::Grayscale,
        ]
    };

    let mut measurements = serde_json::Map::new();
    let mut checks: Vec<Check> = Vec::new();
    let train_acc = |cfg: &ExperimentConfig, bank: Option<&Path>| -> Result<f64> {
        Ok(ops::cmd_train(cfg, seed, bank, false)?.record.final_clean_acc)
    };

    println!("== full suite: clean baselines (ResNet-18) ==");
    let cfg = stage_config(output_dir, "clean-std", dataset(), seed, None, Some(exploiter(Arch::Resnet18, None)));
    let clean_std = train_acc(&cfg, None)?;
    measurements.insert("clean_std".into(), serde_json::json!(clean_std));
    let cfg = stage_config(output_dir, "clean-gray", dataset(), seed, None, Some(exploiter(Arch::Resnet18, Some(gray_stack()))));
    let clean_gray = train_acc(&cfg, None)?;
    measurements.insert("clean_gray".into(), serde_json::json!(clean_gray));
    checks.push(Check {
        label: "clean baselines (94.58 / 93.04 +/- 1.5)".into(),
        passed: Some((clean_std - 0.9458).abs() <= 0.015 && (clean_gray - 0.9304).abs() <= 0.015),
        detail: format!("standard {}, gray {}", pct(clean_std), pct(clean_gray)),
    });

    println!("== full suite: standard bank (ResNet-18) ==");
    let cfg = stage_config(output_dir, "craft-uleo", dataset(), seed, Some(craft(Variant::Uleo, Arch::Resnet18)), None);
    let uleo = ops::cmd_craft(&cfg, seed)?;

    let cfg = stage_config(output_dir, "uleo-std", dataset(), seed, None, Some(exploiter(Arch::Resnet18, None)));
    let uleo_std = train_acc(&cfg, Some(uleo.dir.as_path()))?;
    measurements.insert("uleo_std".into(), serde_json::json!(uleo_std));
    checks.push(Check {
        label: "standard exploiter on the bank <= 35%".into(),
        passed: Some(uleo_std <= 0.35),
        detail: pct(uleo_std),
    });

    let cfg = stage_config(output_dir, "uleo-gray", dataset(), seed, None, Some(exploiter(Arch::Resnet18, Some(gray_stack()))));
    let uleo_gray = train_acc(&cfg, Some(uleo.dir.as_path()))?;
    measurements.insert("uleo_gray".into(), serde_json::json!(uleo_gray));
    checks.push(Check {
        label: "grayscale exploiter on the same bank >= 80%".into(),
        passed: Some(uleo_gray >= 0.80),
        detail: pct(uleo_gray),
    });

    println!("== full suite: mitigation ladder on the standard bank ==");
    let mut mixup_stack = vec![
        Transform::RandomCrop { pad: 4, reflect: true },
        Transform::RandomFlip { p: 0.5 },
        Transform::Mixup { alpha: 1.0 },
    ];
    let cfg = stage_config(output_dir, "uleo-mixup", dataset(), seed, None, Some(exploiter(Arch::Resnet18, Some(mixup_stack.clone()))));
    let uleo_mixup = train_acc(&cfg, Some(uleo.dir.as_path()))?;
    measurements.insert("uleo_mixup".into(), serde_json::json!(uleo_mixup));
    mixup_stack.pop();
    mixup_stack.push(Transform::BitDepthReduction { bits: 2 });
    let cfg = stage_config(output_dir, "uleo-bdr2", dataset(), seed, None, Some(exploiter(Arch::Resnet18, Some(mixup_stack))));
    let uleo_bdr = train_acc(&cfg, Some(uleo.dir.as_path()))?;
    measurements.insert("uleo_bdr2".into(), serde_json::json!(uleo_bdr));

    let mut at_cfg = exploiter(Arch::Resnet18, None);
    at_cfg.adversarial = Some(AdversarialCfg { epsilon: 8.0 / 255.0, steps: None, step_size: None });
    let mut cfg = stage_config(output_dir, "uleo-at", dataset(), seed, None, Some(at_cfg.clone()));
    cfg.eval = Some(EvalCfg {
        attacks: vec![
            AttackCfg { kind: AttackKind::Fgsm, epsilon: 8.0 / 255.0, steps: None, step_size: None, random_start: None },
            AttackCfg { kind: AttackKind::Pgd, epsilon: 8.0 / 255.0, steps: None, step_size: None, random_start: None },
        ],
        batch_size: 256,
        profile: false,
    });
    let at_run = ops::cmd_train(&cfg, seed, Some(uleo.dir.as_path()), true)?;
    let uleo_at = at_run.record.final_clean_acc;
    measurements.insert("uleo_at".into(), serde_json::json!(uleo_at));
    checks.push(Check {
        label: "mitigation ordering gray > AT > mixup > BDR-2 > none".into(),
        passed: Some(
            uleo_gray > uleo_at
                && uleo_at > uleo_mixup
                && uleo_mixup > uleo_bdr
                && uleo_bdr > uleo_std
                && (0.78..=0.90).contains(&uleo_at)
                && (0.40..=0.62).contains(&uleo_mixup)
                && (0.30..=0.55).contains(&uleo_bdr),
        ),
        detail: format!(
            "gray {} > at {} > mixup {} > bdr2 {} > none {}",
            pct(uleo_gray), pct(uleo_at), pct(uleo_mixup), pct(uleo_bdr), pct(uleo_std)
        ),
    });

    println!("== full suite: robustness of the AT run ==");
    let at_eval = ops::cmd_eval(&cfg, seed, &at_run.dir.join("checkpoint"), None)?;
    for (label, acc) in &at_eval.robust {
        measurements.insert(format!("uleo_at_{label}"), serde_json::json!(acc));
    }
    let fgsm = at_eval.robust.iter().find(|(l, _)| l.starts_with("fgsm")).map(|(_, a)| *a);
    let pgd = at_eval.robust.iter().find(|(l, _)| l.starts_with("pgd")).map(|(_, a)| *a);
    checks.push(Check {
        label: "AT on the bank: clean >= 80, PGD-20 in [33,48], FGSM in [45,58]".into(),
        passed: Some(
            uleo_at >= 0.80
                && pgd.is_some_and(|p| (0.33..=0.48).contains(&p))
                && fgsm.is_some_and(|f| (0.45..=0.58).contains(&f)),
        ),
        detail: format!("clean {}, fgsm {:?}, pgd {:?}", pct(uleo_at), fgsm, pgd),
    });

    println!("== full suite: gray-constrained banks ==");
    let cfg = stage_config(output_dir, "craft-grays", dataset(), seed, Some(craft(Variant::UleoGray, Arch::Resnet18)), None);
    let grays = ops::cmd_craft(&cfg, seed)?;
    let cfg = stage_config(output_dir, "craft-grayaug", dataset(), seed, Some(craft(Variant::UleoGrayAug, Arch::Resnet18)), None);
    let grayaug = ops::cmd_craft(&cfg, seed)?;

    let mut band = |stage: &str, bank: &Path, gray: bool| -> Result<f64> {
        let t = if gray { Some(gray_stack()) } else { None };
        let cfg = stage_config(output_dir, stage, dataset(), seed, None, Some(exploiter(Arch::Resnet18, t)));
        let acc = ops::cmd_train(&cfg, seed, Some(bank), false)?.record.final_clean_acc;
        measurements.insert(stage.replace('-', "_"), serde_json::json!(acc));
        Ok(acc)
    };
    let grays_std = band("grays-std", &grays.dir, false)?;
    let grays_gray = band("grays-gray", &grays.dir, true)?;
    let grayaug_std = band("grayaug-std", &grayaug.dir, false)?;
    let grayaug_gray = band("grayaug-gray", &grayaug.dir, true)?;
    checks.push(Check {
        label: "gray+aug bank <= 40% on both exploiters; gray-only lands in 30-60".into(),
        passed: Some(
            grayaug_std <= 0.40
                && grayaug_gray <= 0.40
                && (0.30..=0.60).contains(&grays_std)
                && (0.30..=0.60).contains(&grays_gray),
        ),
        detail: format!(
            "gray+aug {}/{}, gray-only {}/{}",
            pct(grayaug_std), pct(grayaug_gray), pct(grays_std), pct(grays_gray)
        ),
    });

    println!("== full suite: MLP transfer asymmetry ==");
    let cfg = stage_config(output_dir, "craft-mlp", dataset(), seed, Some(craft(Variant::Uleo, Arch::Mlp)), None);
    let mlp_bank = ops::cmd_craft(&cfg, seed)?;
    let mlp_vs_rn = band("mlpbank-rn18", &mlp_bank.dir, false)?;
    let cfg = stage_config(output_dir, "clean-mlp", dataset(), seed, None, Some(exploiter(Arch::Mlp, None)));
    let clean_mlp = train_acc(&cfg, None)?;
    measurements.insert("clean_mlp".into(), serde_json::json!(clean_mlp));
    let cfg = stage_config(output_dir, "mlpbank-mlp", dataset(), seed, None, Some(exploiter(Arch::Mlp, None)));
    let mlp_vs_mlp = train_acc(&cfg, Some(mlp_bank.dir.as_path()))?;
    measurements.insert("mlpbank_mlp".into(), serde_json::json!(mlp_vs_mlp));
    let cfg = stage_config(output_dir, "cnnbank-mlp", dataset(), seed, None, Some(exploiter(Arch::Mlp, None)));
    let cnn_vs_mlp = train_acc(&cfg, Some(uleo.dir.as_path()))?;
    measurements.insert("cnnbank_mlp".into(), serde_json::json!(cnn_vs_mlp));
    checks.push(Check {
        label: "MLP bank beats ResNet-18 but costs the MLP <= 5 points; CNN bank costs the MLP <= 10".into(),
        passed: Some(
            mlp_vs_rn <= 0.40
                && clean_mlp - mlp_vs_mlp <= 0.05
                && clean_mlp - cnn_vs_mlp <= 0.10,
        ),
        detail: format!(
            "mlp-bank vs rn18 {}, vs mlp {} (clean mlp {}), cnn-bank vs mlp {}",
            pct(mlp_vs_rn), pct(mlp_vs_mlp), pct(clean_mlp), pct(cnn_vs_mlp)
        ),
    });

    println!("== full suite: cross-architecture matrix ==");
    let cfg = stage_config(output_dir, "craft-dn121", dataset(), seed, Some(craft(Variant::Uleo, Arch::Densenet121)), None);
    let dn_bank = ops::cmd_craft(&cfg, seed)?;
    let cfg = stage_config(output_dir, "craft-vgg11", dataset(), seed, Some(craft(Variant::Uleo, Arch::Vgg11)), None);
    let vgg_bank = ops::cmd_craft(&cfg, seed)?;
    let mut cfg = stage_config(output_dir, "matrix", dataset(), seed, None, Some(exploiter(Arch::Resnet18, None)));
    cfg.matrix = Some(crate::config::MatrixCfg {
        banks: vec![
            crate::config::BankRef { arch: Arch::Resnet18, path: uleo.dir.clone() },
            crate::config::BankRef { arch: Arch::Densenet121, path: dn_bank.dir.clone() },
            crate::config::BankRef { arch: Arch::Vgg11, path: vgg_bank.dir.clone() },
        ],
        exploiters: vec![Arch::Resnet18, Arch::Densenet121, Arch::Vgg11],
        gray: None,
    });
    let matrices = ops::cmd_matrix(&cfg, seed)?;
    checks.push(Check {
        label: "transfer matrix over three architectures x two pipelines".into(),
        passed: Some(matrices.len() == 2 && matrices.iter().all(|m| m.accuracy.len() == 3)),
        detail: "see matrix-standard.csv / matrix-gray.csv".into(),
    });

    println!("== full suite: mixed-data study ==");
    let mut cfg = stage_config(output_dir, "mix", dataset(), seed, None, Some(exploiter(Arch::Resnet18, None)));
    cfg.mix = Some(MixCfg {
        original_fraction: 0.05,
        added_fractions: vec![0.10, 0.30],
        uleo_bank: uleo.dir.clone(),
        grayaug_bank: grayaug.dir.clone(),
    });
    let rows = ops::cmd_mix_study(&cfg, seed)?;
    let find = |gray: bool| {
        rows.iter()
            .find(|r| r.gray == gray && r.added_fraction == Some(0.30))
            .and_then(|r| r.delta_uleo.zip(r.delta_grayaug))
    };
    let std_deltas = find(false);
    let gray_deltas = find(true);
    checks.push(Check {
        label: "mixed-data deltas: standard uleo < grayaug < 0; order flips under gray".into(),
        passed: Some(match (std_deltas, gray_deltas) {
            (Some((du, dg)), Some((gu, gg))) => du < dg && dg < 0.0 && gg < gu && gg < 0.0,
            _ => false,
        }),
        detail: format!("standard {std_deltas:?}, gray {gray_deltas:?}"),
    });

    println!("== full suite: perturbation structure ==");
    let uleo_profile = evaluation_profile(&uleo.dir)?;
    let grayaug_profile = evaluation_profile(&grayaug.dir)?;
    measurements.insert("uleo_profile".into(), serde_json::to_value(uleo_profile).map_err(Error::from)?);
    measurements.insert("grayaug_profile".into(), serde_json::to_value(grayaug_profile).map_err(Error::from)?);
    checks.push(Check {
        label: "standard bank disperses across channels; gray+aug bank across space".into(),
        passed: Some(
            uleo_profile.channel_dispersion > grayaug_profile.channel_dispersion
                && grayaug_profile.channel_dispersion == 0.0
                && grayaug_profile.spatial_energy > uleo_profile.spatial_energy,
        ),
        detail: format!(
            "dispersion {:.5} vs {:.5}; spatial {:.5} vs {:.5}",
            uleo_profile.channel_dispersion,
            grayaug_profile.channel_dispersion,
            uleo_profile.spatial_energy,
            grayaug_profile.spatial_energy
        ),
    });

    finish(output_dir, false, seed, started, checks, measurements)
}

fn evaluation_profile(bank_dir: &Path) -> Result<ule_core::evaluation::PerturbationProfile> {
    let bank = ule_core::storage::load_bank(bank_dir)?;
    ule_core::evaluation::perturbation_profile(&bank)
}

fn finish(
    output_dir: &Path,
    desk: bool,
    seed: u64,
    started: Instant,
    checks: Vec<Check>,
    measurements: serde_json::Map<String, serde_json::Value>,
) -> Result<SuiteOutcome> {
    let outcome = SuiteOutcome {
        desk,
        seed,
        elapsed_seconds: started.elapsed().as_secs_f64(),
        checks,
        measurements,
    };
    fs::create_dir_all(output_dir)?;
    fs::write(
        output_dir.join("suite-summary.json"),
        serde_json::to_string_pretty(&outcome).map_err(Error::from)?,
    )?;

    println!("\n== suite summary ({:.0}s) ==", outcome.elapsed_seconds);
    for check in &outcome.checks {
        let status = match check.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "INFO",
        };
        println!("[{status}] {} - {}", check.label, check.detail);
    }
    Ok(outcome)
}
