//! Class-wise trends of the margin and β sweeps on the easy/hard preset,
//! averaged over five seeds.

use cfa_core::experiment::{sweep_beta, sweep_margin, Method, RunConfig, SweepReport, Variant};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const EASY: usize = 0;
const HARD: usize = 3;

fn series(report: &SweepReport, class: Option<usize>, f: fn(&cfa_core::experiment::SweepRow) -> f64) -> Vec<f64> {
    report
        .values
        .iter()
        .map(|&v| f(report.row(v, "best", class).unwrap()))
        .collect()
}

#[test]
fn margin_sweep_helps_easy_classes_and_peaks_for_hard_ones() {
    let base = RunConfig::preset(Method::At, Variant::Plain);
    let margins = [0.0, 0.05, 0.1, 0.15, 0.2];
    let report = sweep_margin(&base, &margins, &SEEDS).unwrap();
    let easy = series(&report, Some(EASY), |r| r.robust_mean);
    let hard = series(&report, Some(HARD), |r| r.robust_mean);
    println!("easy robust {easy:.4?}\nhard robust {hard:.4?}");

    assert!(easy.windows(2).all(|w| w[1] >= w[0]), "easy class not monotone: {easy:?}");
    let peak = (0..hard.len()).max_by(|&a, &b| hard[a].total_cmp(&hard[b])).unwrap();
    assert!(peak > 0 && peak < hard.len() - 1, "hard class peaks at the boundary: {hard:?}");
}

#[test]
fn beta_sweep_costs_hard_classes_more_clean_accuracy() {
    let base = RunConfig::preset(Method::Trades, Variant::Plain);
    let betas = [1.0, 4.0, 8.0];
    let report = sweep_beta(&base, &betas, &SEEDS).unwrap();
    let overall = series(&report, None, |r| r.clean_mean);
    let easy = series(&report, Some(EASY), |r| r.clean_mean);
    let hard = series(&report, Some(HARD), |r| r.clean_mean);
    println!("overall clean {overall:.4?}\neasy clean {easy:.4?}\nhard clean {hard:.4?}");

    assert!(overall.windows(2).all(|w| w[1] <= w[0]), "overall clean rises with beta: {overall:?}");
    let slope = |v: &[f64]| (v[0] - v[v.len() - 1]) / (betas[betas.len() - 1] - betas[0]);
    assert!(slope(&hard) > slope(&easy), "hard drop {} vs easy drop {}", slope(&hard), slope(&easy));
}
