//! Oracle gate and its deliberate mutations.

use qst_core::calibration::calibrate;
use qst_core::config::Config;
use qst_core::lab::Lab;
use qst_core::oracle::{run_all, Mutations};
use qst_core::runner::{cmd_oracle_check, RunOptions};

fn lab() -> Lab {
    let cfg = Config::defaults();
    let cal = calibrate(&cfg).unwrap();
    Lab::new(cfg, cal)
}

fn failing(m: Mutations) -> Vec<String> {
    run_all(&lab(), &m, 3, 200_000).unwrap().into_iter().filter(|o| !o.passed).map(|o| o.name).collect()
}

#[test]
fn all_oracles_pass_on_defaults() {
    assert!(failing(Mutations::default()).is_empty());
}

#[test]
fn flipped_filter_phase_breaks_causality_only() {
    assert_eq!(failing(Mutations { flip_afc_phase: true, ..Default::default() }), vec!["memory filter causality"]);
}

#[test]
fn perturbed_dilution_formula_breaks_mixed_statistics_only() {
    assert_eq!(failing(Mutations { perturb_g2_formula: true, ..Default::default() }), vec!["mixed-statistics g2"]);
}

#[test]
fn oracle_command_reports_and_writes_a_manifest() {
    let dir = std::env::temp_dir().join(format!("qst-oracles-{}", std::process::id()));
    let mut opts = RunOptions::new(Config::defaults(), &dir);
    opts.trials = Some(200_000);
    let (ok, _) = cmd_oracle_check(&opts, &Mutations::default()).unwrap();
    assert!(ok.passed);
    assert!(ok.manifest.exists() && dir.join("oracle_report.json").exists());
    let (bad, _) = cmd_oracle_check(&opts, &Mutations { flip_afc_phase: true, perturb_g2_formula: true }).unwrap();
    assert!(!bad.passed);
    assert_eq!(bad.report.lines().filter(|l| l.starts_with("FAIL")).count(), 2);
    std::fs::remove_dir_all(&dir).unwrap();
}
