//! Temporary dev probe — measures full-scale robust calibration accuracy and
//! timing. Deleted before finalization.

use std::time::Instant;

use cpnoise_core::robust::{calibrate_robust, RobustParams};
use cpnoise_core::split::calibrate_split_cp;
use cpnoise_core::synth::{self, mc_oracle_threshold, SyntheticConfig, UncertaintyDist};
use cpnoise_core::{eval, LabelKind};

fn table1_config(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        n: 2000,
        sigma_true: 0.2,
        clean_trained: true,
        u_dist: UncertaintyDist {
            easy_prob: 0.0,
            ..UncertaintyDist::default()
        },
        seed,
        ..SyntheticConfig::default()
    }
}

#[test]
fn probe_full_scale_robust() {
    let cfg = table1_config(1);
    let records = synth::generate(&cfg).unwrap();
    let test = synth::generate(&SyntheticConfig {
        n: 10000,
        seed: 999,
        ..cfg.clone()
    })
    .unwrap();

    let noisy_scores: Vec<f64> = records
        .iter()
        .map(|r| r.score(LabelKind::Noisy).unwrap())
        .collect();
    let clean_scores: Vec<f64> = records
        .iter()
        .map(|r| r.score(LabelKind::Clean).unwrap())
        .collect();
    let q_noisy = calibrate_split_cp(&noisy_scores, 0.1).unwrap();
    let q_oracle = calibrate_split_cp(&clean_scores, 0.1).unwrap();
    let q_mc = mc_oracle_threshold(&cfg, 0.1, 1_000_000).unwrap();
    println!("q_noisy={q_noisy:.4} q_oracle={q_oracle:.4} q_mc={q_mc:.4}");

    let t0 = Instant::now();
    let out = calibrate_robust(&records, 0.1, 0.2, &RobustParams::default()).unwrap();
    let dt = t0.elapsed();
    println!(
        "robust: q_hat={:.4} est_cov={:?} floored={} bins={} iterations={} in {:.2?}",
        out.result.q_hat,
        out.result.estimated_coverage,
        out.floored,
        out.num_bins,
        out.result.iterations,
        dt
    );
    for step in &out.trace {
        println!(
            "  q={:.4} cov={:.5} raw={:.5} pgd_iters={}",
            step.q, step.coverage, step.coverage_raw, step.pgd_iterations
        );
    }
    let cov_robust = eval::coverage(&test, out.result.q_hat).unwrap();
    let cov_noisy = eval::coverage(&test, q_noisy).unwrap();
    let cov_oracle = eval::coverage(&test, q_oracle).unwrap();
    println!("coverage: robust={cov_robust:.4} noisy={cov_noisy:.4} oracle={cov_oracle:.4}");
    println!(
        "lengths: robust/oracle={:.3} robust/noisy={:.3}",
        out.result.q_hat / q_oracle,
        out.result.q_hat / q_noisy
    );
}
