//! The pipeline stages behind each subcommand: craft a bank, train an
//! exploiter, evaluate a checkpoint, sweep the transfer matrix, and run the
//! mixed-data study. Every stage persists the resolved config and its
//! artifacts into the configured output directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ule_core::crafting;
use ule_core::data::{self, AddedKind, ImageDataset, MixSpec};
use ule_core::evaluation::{self, PerturbationProfile, TransferMatrix};
use ule_core::exploiter::{self, EpochStats, ExploiterSpec, RunRecord};
use ule_core::mitigations::Transform;
use ule_core::models::Classifier;
use ule_core::{storage, Error, Result};

use crate::config::ExperimentConfig;
use crate::plot;

/// Append a grayscale pre-filter to a spec's transform stack (the mitigation
/// arm of every study). Augmentations stay in front: augment, then gray.
pub fn with_grayscale(spec: &ExploiterSpec) -> Result<ExploiterSpec> {
    let mut out = spec.clone();
    if !out.transforms.contains_grayscale() {
        out.transforms.transforms.push(Transform::Grayscale);
        out.transforms.validate()?;
    }
    Ok(out)
}

fn print_epoch(total: usize) -> impl FnMut(&EpochStats) {
    move |s: &EpochStats| {
        let val = s.val_acc.map_or(String::new(), |v| format!("  val {v:.4}"));
        println!(
            "  epoch {:>3}/{total}  lr {:.4}  loss {:.4}  train {:.4}  test {:.4}{val}",
            s.epoch + 1,
            s.lr,
            s.train_loss,
            s.train_acc,
            s.clean_test_acc
        );
    }
}

// --- craft -------------------------------------------------------------------

#[derive(Debug)]
pub struct CraftOutcome {
    pub dir: PathBuf,
    pub converged: bool,
    pub rounds: usize,
    pub content_hash: String,
}

pub fn bank_dir(output_dir: &Path, seed: u64) -> PathBuf {
    output_dir.join(format!("bank-seed{seed}"))
}

pub fn cmd_craft(cfg: &ExperimentConfig, seed: u64) -> Result<CraftOutcome> {
    let craft_cfg = cfg.require_craft()?;
    let (train, _) = cfg.dataset.load(seed)?;
    let spec = craft_cfg.to_spec(&train, &cfg.dataset.name, seed)?;
    println!(
        "crafting {} bank: {} samples, epsilon {:.5}, stop error {}, up to {} rounds",
        spec.variant, train.len(), spec.epsilon, spec.stop_error, spec.max_rounds
    );

    let mut log = String::from("round,canonical_error\n");
    let bank = crafting::craft_observed(&train, &spec, &mut |round, err| {
        println!("  round {round:>3}: canonical train error {err:.4}");
        log.push_str(&format!("{round},{err:.6}\n"));
    })?;

    let meta = bank.meta.as_ref().expect("crafted banks carry meta").clone();
    let dir = bank_dir(&cfg.output_dir, seed);
    storage::save_bank(&dir, &bank)?;
    fs::write(dir.join("craft-log.csv"), log)?;
    cfg.persist(&dir)?;

    let max_abs = bank.deltas().iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    println!(
        "budget check: max|delta| = {max_abs:.6} <= epsilon = {:.6}  [ok]",
        bank.epsilon()
    );
    let profile = evaluation::perturbation_profile(&bank)?;
    println!(
        "profile: channel dispersion {:.6}, spatial energy {:.6}, l2 {:.4}",
        profile.channel_dispersion, profile.spatial_energy, profile.l2
    );
    if meta.converged {
        println!(
            "converged after {} rounds (final train error {:.4})",
            meta.rounds_executed, meta.final_train_error
        );
    } else {
        println!(
            "did NOT converge within {} rounds (final train error {:.4} >= {});\nbank written anyway",
            meta.rounds_executed, meta.final_train_error, spec.stop_error
        );
    }
    println!("bank {} -> {}", bank.content_hash(), dir.display());
    Ok(CraftOutcome {
        dir,
        converged: meta.converged,
        rounds: meta.rounds_executed,
        content_hash: bank.content_hash(),
    })
}

// --- train -------------------------------------------------------------------

#[derive(Debug)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub record: RunRecord,
}

pub fn run_dir(output_dir: &Path, seed: u64) -> PathBuf {
    output_dir.join(format!("run-seed{seed}"))
}

/// Carve a validation split out of the training data when the config asks
/// for one. Returns (train, validation).
fn carve_validation(
    ds: ImageDataset,
    fraction: Option<f64>,
    seed: u64,
) -> Result<(ImageDataset, Option<ImageDataset>)> {
    match fraction {
        None => Ok((ds, None)),
        Some(f) => {
            let val = data::subset(&ds, f, seed.wrapping_add(0x5eed))?;
            let val_ids: HashSet<u64> = val.sample_ids.iter().copied().collect();
            let rest = data::without_ids(&ds, &val_ids);
            if rest.is_empty() {
                return Err(Error::Config("validation split consumed all the training data".into()));
            }
            Ok((rest, Some(val)))
        }
    }
}

pub fn cmd_train(
    cfg: &ExperimentConfig,
    seed: u64,
    bank_path: Option<&Path>,
    save_checkpoint: bool,
) -> Result<TrainOutcome> {
    let ex_cfg = cfg.require_exploiter()?;
    let (clean_train, test) = cfg.dataset.load(seed)?;

    let (train, bank_hash) = match bank_path {
        None => (clean_train, None),
        Some(path) => {
            let bank = storage::load_bank(path)?;
            let poisoned = data::assemble_poisoned(&clean_train, &bank)?;
            println!("assembled poisoned data from bank {}", bank.content_hash());
            (poisoned, Some(bank.content_hash()))
        }
    };

    let spec = ex_cfg.to_spec(&train, &cfg.dataset.name, seed)?;
    let (train, validation) = carve_validation(train, ex_cfg.validation_fraction, seed)?;
    println!(
        "training {} for {} epochs on {} samples ({} held-out test)",
        spec.model.arch, spec.epochs, train.len(), test.len()
    );

    let dir = run_dir(&cfg.output_dir, seed);
    let mut observer = print_epoch(spec.epochs);
    match exploiter::train_with(&train, &spec, &test, validation.as_ref(), Some(&mut observer)) {
        Ok((mut model, mut record)) => {
            record.bank_hash = bank_hash;
            storage::save_record(&dir, &record)?;
            cfg.persist(&dir)?;
            write_run_curves(&dir, &record)?;
            if save_checkpoint {
                storage::save_checkpoint(&dir.join("checkpoint"), &mut model)?;
            }
            println!(
                "final clean accuracy {:.4} ({} epochs) -> {}",
                record.final_clean_acc, record.epochs_run, dir.display()
            );
            Ok(TrainOutcome { dir, record })
        }
        Err(Error::Diverged { epoch, record }) => {
            // Persist the truncated record so the aborted run is inspectable,
            // then propagate for the divergence exit code.
            let mut partial = *record;
            partial.bank_hash = bank_hash;
            storage::save_record(&dir, &partial)?;
            cfg.persist(&dir)?;
            eprintln!(
                "training diverged at epoch {epoch}; last good state recorded in {}",
                dir.display()
            );
            Err(Error::Diverged { epoch, record: Box::new(partial) })
        }
        Err(e) => Err(e),
    }
}

fn write_run_curves(dir: &Path, record: &RunRecord) -> Result<()> {
    let mut series: Vec<plot::Series> = vec![
        ("train acc".to_string(), record.train_acc.clone()),
        ("clean test acc".to_string(), record.clean_test_acc.clone()),
    ];
    if let Some(val) = &record.val_acc {
        series.push(("val acc".to_string(), val.clone()));
    }
    plot::line_chart(&dir.join("curves.png"), "accuracy by epoch", "accuracy", &series)
}

// --- eval --------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub clean_accuracy: f64,
    /// (attack label, accuracy under attack) rows, in config order.
    pub robust: Vec<(String, f64)>,
    pub profile: Option<PerturbationProfile>,
    pub seed: u64,
}

pub fn cmd_eval(
    cfg: &ExperimentConfig,
    seed: u64,
    checkpoint: &Path,
    bank_path: Option<&Path>,
) -> Result<EvalReport> {
    let eval_cfg = cfg.eval.clone().unwrap_or_default();
    let (_, test) = cfg.dataset.load(seed)?;
    let mut model = storage::load_checkpoint(checkpoint)?;

    let clean = evaluation::clean_accuracy(&mut model, &test, eval_cfg.batch_size);
    let mut robust = Vec::new();
    for attack_cfg in &eval_cfg.attacks {
        let attack = attack_cfg.to_spec()?;
        let acc = evaluation::robust_accuracy(&mut model, &test, &attack, eval_cfg.batch_size, seed);
        println!("{}: {acc:.4}", attack.label());
        robust.push((attack.label(), acc));
    }
    let profile = match bank_path {
        Some(path) if eval_cfg.profile => {
            let bank = storage::load_bank(path)?;
            let p = evaluation::perturbation_profile(&bank)?;
            println!(
                "bank profile: channel dispersion {:.6}, spatial energy {:.6}, l2 {:.4}",
                p.channel_dispersion, p.spatial_energy, p.l2
            );
            Some(p)
        }
        _ => None,
    };

    let report = EvalReport {
        checkpoint: checkpoint.to_path_buf(),
        clean_accuracy: clean,
        robust,
        profile,
        seed,
    };
    fs::create_dir_all(&cfg.output_dir)?;
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(cfg.output_dir.join(format!("eval-seed{seed}.json")), json)?;
    let mut csv = String::from("metric,accuracy\n");
    csv.push_str(&format!("clean,{clean:.6}\n"));
    for (label, acc) in &report.robust {
        csv.push_str(&format!("{label},{acc:.6}\n"));
    }
    fs::write(cfg.output_dir.join(format!("eval-seed{seed}.csv")), csv)?;
    cfg.persist(&cfg.output_dir)?;

    let row: Vec<String> = std::iter::once(format!("clean {clean:.4}"))
        .chain(report.robust.iter().map(|(l, a)| format!("{l} {a:.4}")))
        .collect();
    println!("{}", row.join("  |  "));
    Ok(report)
}

// --- transfer matrix ----------------------------------------------------------

pub fn cmd_matrix(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<TransferMatrix>> {
    let m_cfg = cfg.require_matrix()?;
    let ex_cfg = cfg.require_exploiter()?;
    let (train, test) = cfg.dataset.load(seed)?;

    let mut banks = Vec::new();
    for bank_ref in &m_cfg.banks {
        banks.push((bank_ref.arch, storage::load_bank(&bank_ref.path)?));
    }
    let bank_refs: Vec<_> = banks.iter().map(|(a, b)| (*a, b)).collect();
    let template = ex_cfg.to_spec(&train, &cfg.dataset.name, seed)?;

    let gray_arms: &[bool] = match m_cfg.gray {
        None => &[false, true],
        Some(false) => &[false],
        Some(true) => &[true],
    };

    fs::create_dir_all(&cfg.output_dir)?;
    let mut out = Vec::new();
    for &gray in gray_arms {
        let label = if gray { "gray" } else { "standard" };
        println!("transfer matrix ({label} exploiters):");
        let matrix =
            evaluation::transfer_matrix(&train, &test, &bank_refs, &m_cfg.exploiters, &template, gray)?;
        print!("{}", matrix.to_csv().replace(',', "  "));
        fs::write(cfg.output_dir.join(format!("matrix-{label}.csv")), matrix.to_csv())?;
        out.push(matrix);
    }
    cfg.persist(&cfg.output_dir)?;
    Ok(out)
}

// --- mixed-data study ----------------------------------------------------------

/// One row of the mixed-data table: accuracy after training on
/// `original_fraction` clean data plus `added_fraction` of clean / poisoned
/// additional data, and the poisoned deltas against the clean-control arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixRow {
    pub original_fraction: f64,
    /// None for the no-added-data baseline row.
    pub added_fraction: Option<f64>,
    pub gray: bool,
    pub clean_added_acc: f64,
    pub delta_uleo: Option<f64>,
    pub delta_grayaug: Option<f64>,
}

pub fn cmd_mix_study(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<MixRow>> {
    let mix_cfg = cfg.require_mix()?;
    let ex_cfg = cfg.require_exploiter()?;
    let (full_train, test) = cfg.dataset.load(seed)?;
    let uleo = storage::load_bank(&mix_cfg.uleo_bank)?;
    let grayaug = storage::load_bank(&mix_cfg.grayaug_bank)?;

    let original = data::subset(&full_train, mix_cfg.original_fraction, seed)?;
    let original_ids: HashSet<u64> = original.sample_ids.iter().copied().collect();
    let pool = data::without_ids(&full_train, &original_ids);
    println!(
        "mix study: {} original samples, {} in the added-data pool",
        original.len(), pool.len()
    );

    let base_spec = ex_cfg.to_spec(&full_train, &cfg.dataset.name, seed)?;
    let mut rows = Vec::new();
    for gray in [false, true] {
        let spec = if gray { with_grayscale(&base_spec)? } else { base_spec.clone() };
        let arm = if gray { "gray" } else { "standard" };

        let base_acc = train_arm(cfg, &spec, &original, &test, &format!("{arm}-base"), None)?;
        println!("[{arm}] original only: {base_acc:.4}");
        rows.push(MixRow {
            original_fraction: mix_cfg.original_fraction,
            added_fraction: None,
            gray,
            clean_added_acc: base_acc,
            delta_uleo: None,
            delta_grayaug: None,
        });

        for &added_fraction in &mix_cfg.added_fractions {
            // `added_fraction` is relative to the full split; rescale against
            // the pool so the same seed keeps smaller draws nested in bigger
            // ones.
            let added_n = (added_fraction * full_train.len() as f64).round();
            let pool_fraction = (added_n / pool.len() as f64).min(1.0);
            let added_clean = data::subset(&pool, pool_fraction, seed)?;
            let pct = (added_fraction * 100.0).round() as u32;

            let mut accs = Vec::new();
            for (kind_label, bank) in
                [("clean", None), ("uleo", Some(&uleo)), ("grayaug", Some(&grayaug))]
            {
                let (added, kind, hash) = match bank {
                    None => (added_clean.clone(), AddedKind::Clean, None),
                    Some(b) => (
                        data::assemble_poisoned(&added_clean, b)?,
                        AddedKind::Poisoned,
                        Some(b.content_hash()),
                    ),
                };
                let mix_spec = MixSpec {
                    original_fraction: mix_cfg.original_fraction,
                    added_fraction,
                    added_kind: kind,
                };
                let mixed = data::mix(&original, &added, &mix_spec, seed)?;
                let label = format!("{arm}-add{pct}-{kind_label}");
                let acc = train_arm(cfg, &spec, &mixed, &test, &label, hash)?;
                println!("[{arm}] +{pct}% {kind_label}: {acc:.4}");
                accs.push(acc);
            }
            rows.push(MixRow {
                original_fraction: mix_cfg.original_fraction,
                added_fraction: Some(added_fraction),
                gray,
                clean_added_acc: accs[0],
                delta_uleo: Some(accs[1] - accs[0]),
                delta_grayaug: Some(accs[2] - accs[0]),
            });
        }
    }

    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("mix-study.csv"), mix_rows_csv(&rows))?;
    cfg.persist(&cfg.output_dir)?;
    print_mix_table(&rows);
    Ok(rows)
}

/// Train one arm of the mix study and keep its record on disk.
fn train_arm(
    cfg: &ExperimentConfig,
    spec: &ExploiterSpec,
    train: &ImageDataset,
    test: &ImageDataset,
    label: &str,
    bank_hash: Option<String>,
) -> Result<f64> {
    let (_, mut record) = exploiter::train(train, spec, test)?;
    record.bank_hash = bank_hash;
    storage::save_record(&cfg.output_dir.join(format!("run-{label}")), &record)?;
    Ok(record.final_clean_acc)
}

pub fn mix_rows_csv(rows: &[MixRow]) -> String {
    let mut out = String::from("original,added,gray,clean_acc,delta_uleo,delta_grayaug\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{},{}\n",
            r.original_fraction,
            r.added_fraction.map_or(String::from("-"), |f| format!("{f}")),
            r.gray,
            r.clean_added_acc,
            r.delta_uleo.map_or(String::from("-"), |d| format!("{d:.6}")),
            r.delta_grayaug.map_or(String::from("-"), |d| format!("{d:.6}")),
        ));
    }
    out
}

fn print_mix_table(rows: &[MixRow]) {
    println!("\n  ori    add    gray   clean    d(uleo)  d(grayaug)");
    for r in rows {
        println!(
            "  {:<5}  {:<5}  {:<5}  {:<7.4}  {:<7}  {:<7}",
            format!("{}%", (r.original_fraction * 100.0).round()),
            r.added_fraction.map_or("-".into(), |f| format!("{}%", (f * 100.0).round())),
            if r.gray { "yes" } else { "no" },
            r.clean_added_acc,
            r.delta_uleo.map_or("-".into(), |d| format!("{d:+.4}")),
            r.delta_grayaug.map_or("-".into(), |d| format!("{d:+.4}")),
        );
    }
}

// --- model loading helper ------------------------------------------------------

/// Load a checkpoint, surfacing a missing path as a load error that the CLI
/// maps to the missing-artifact exit code.
pub fn load_model(path: &Path) -> Result<Classifier> {
    storage::load_checkpoint(path)
}
