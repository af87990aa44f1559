//! Consolidate finished runs: group records that share a configuration,
//! aggregate their accuracies as mean +/- std over seeds, overlay learning
//! curves, and render perturbation sheets for any banks supplied.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use ule_core::evaluation::{self, PerturbationProfile};
use ule_core::exploiter::RunRecord;
use ule_core::{storage, Error, Result};

use crate::plot;

/// Sample mean and standard deviation (n-1 denominator; 0 for a single run).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Everything that must match for two runs to be "the same experiment".
fn group_key(record: &RunRecord) -> String {
    let transforms: Vec<String> =
        record.spec.transforms.transforms.iter().map(|t| t.label()).collect();
    format!(
        "{}|{}|{}|at={}|epochs={}|bank={}",
        record.spec.model.arch,
        record.data_note,
        transforms.join("+"),
        record.spec.adversarial.is_some(),
        record.spec.epochs,
        record.bank_hash.as_deref().unwrap_or("none"),
    )
}

#[derive(Debug, Serialize)]
pub struct GroupSummary {
    pub group: String,
    pub runs: usize,
    pub clean_mean: f64,
    pub clean_std: f64,
    /// Per attack label: (mean, std) across the grouped runs.
    pub robust: BTreeMap<String, (f64, f64)>,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub groups: Vec<GroupSummary>,
    pub profiles: Vec<(PathBuf, PerturbationProfile)>,
}

/// All epsilons a record carries (from its adversarial-training section and
/// every evaluated attack).
fn epsilons_of(record: &RunRecord) -> Vec<f64> {
    let mut out = Vec::new();
    if let Some(at) = &record.spec.adversarial {
        out.push(at.epsilon);
    }
    out.extend(record.robust_acc.iter().map(|r| r.attack.epsilon));
    out
}

pub fn cmd_report(run_dirs: &[PathBuf], bank_dirs: &[PathBuf], output_dir: &Path) -> Result<Report> {
    if run_dirs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    let mut records = Vec::new();
    for dir in run_dirs {
        records.push((dir.clone(), storage::load_record(dir)?));
    }
    let banks: Vec<_> = bank_dirs
        .iter()
        .map(|d| storage::load_bank(d).map(|b| (d.clone(), b)))
        .collect::<Result<_>>()?;

    // Refuse mixed-epsilon aggregation: all budget-bearing numbers in one
    // report must agree, or the mean would average incomparable settings.
    let mut epsilons: Vec<f64> = records.iter().flat_map(|(_, r)| epsilons_of(r)).collect();
    epsilons.extend(banks.iter().map(|(_, b)| b.epsilon()));
    if let Some(&first) = epsilons.first() {
        if epsilons.iter().any(|&e| (e - first).abs() > 1e-9) {
            return Err(Error::Config(format!(
                "refusing to aggregate runs with mixed epsilons: found {epsilons:?}"
            )));
        }
    }

    // Group by configuration; the map is ordered for stable output.
    let mut grouped: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for (_, record) in &records {
        grouped.entry(group_key(record)).or_default().push(record);
    }
    let mut groups = Vec::new();
    for (group, members) in &grouped {
        let clean: Vec<f64> = members.iter().map(|r| r.final_clean_acc).collect();
        let (clean_mean, clean_std) = mean_std(&clean);
        let mut robust: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in members {
            for entry in &r.robust_acc {
                robust.entry(entry.attack.label()).or_default().push(entry.accuracy);
            }
        }
        groups.push(GroupSummary {
            group: group.clone(),
            runs: members.len(),
            clean_mean,
            clean_std,
            robust: robust.into_iter().map(|(k, v)| (k, mean_std(&v))).collect(),
        });
    }

    fs::create_dir_all(output_dir)?;

    // Aggregated table: text to stdout, CSV to disk.
    let mut csv = String::from("group,runs,metric,mean,std\n");
    println!("\n== aggregated over seeds (mean +/- std) ==");
    for g in &groups {
        println!("{}", g.group);
        println!("  clean: {:.2} +/- {:.2}  (n={})", g.clean_mean * 100.0, g.clean_std * 100.0, g.runs);
        csv.push_str(&format!("{},{},clean,{:.6},{:.6}\n", g.group, g.runs, g.clean_mean, g.clean_std));
        for (label, (mean, std)) in &g.robust {
            println!("  {label}: {:.2} +/- {:.2}", mean * 100.0, std * 100.0);
            csv.push_str(&format!("{},{},{label},{mean:.6},{std:.6}\n", g.group, g.runs));
        }
    }
    fs::write(output_dir.join("report.csv"), csv)?;

    // Learning-curve overlay across every run.
    let named: Vec<(String, &RunRecord)> = records
        .iter()
        .map(|(dir, r)| {
            let name = dir
                .file_name()
                .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
            (format!("{name} s{}", r.seed), r)
        })
        .collect();
    let curves = evaluation::learning_curves(&named);
    fs::write(output_dir.join("curves.csv"), curves.to_csv())?;
    let series: Vec<plot::Series> =
        curves.labels.iter().cloned().zip(curves.series.iter().cloned()).collect();
    plot::line_chart(
        &output_dir.join("curves.png"),
        "clean test accuracy by epoch",
        "accuracy",
        &series,
    )?;

    // Perturbation sheets and profiles.
    let mut profiles = Vec::new();
    for (i, (dir, bank)) in banks.iter().enumerate() {
        let profile = evaluation::perturbation_profile(bank)?;
        println!(
            "bank {}: channel dispersion {:.6}, spatial energy {:.6}, linf {:.6}, l2 {:.4}",
            dir.display(), profile.channel_dispersion, profile.spatial_energy, profile.linf, profile.l2
        );
        plot::delta_sheet(&output_dir.join(format!("deltas-{i}.png")), bank, 16)?;
        profiles.push((dir.clone(), profile));
    }

    let report = Report { groups, profiles };
    fs::write(output_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
