//! Temporary dev probe #4 — robust-method accuracy across generator configs
//! and seeds. Deleted before finalization.

use std::time::Instant;

use cpnoise_core::robust::{calibrate_robust, RobustParams};
use cpnoise_core::split::calibrate_split_cp;
use cpnoise_core::synth::{self, SyntheticConfig, UncertaintyDist};
use cpnoise_core::{eval, LabelKind};

fn base_config(seed: u64, round_unit: Option<f64>) -> SyntheticConfig {
    SyntheticConfig {
        n: 2000,
        sigma_true: 0.2,
        clean_trained: true,
        u_dist: UncertaintyDist {
            easy_prob: 0.0,
            ..UncertaintyDist::default()
        },
        round_unit,
        seed,
        ..SyntheticConfig::default()
    }
}

fn run_config(name: &str, round_unit: Option<f64>, seeds: std::ops::Range<u64>) {
    let mut covs = Vec::new();
    let mut qs = Vec::new();
    let mut q_oracles = Vec::new();
    let mut q_noisies = Vec::new();
    let mut steps_total = 0usize;
    let t0 = Instant::now();
    for seed in seeds {
        let cfg = base_config(seed, round_unit);
        let records = synth::generate(&cfg).unwrap();
        let test = synth::generate(&SyntheticConfig {
            n: 10000,
            seed: seed ^ (1 << 63),
            ..cfg.clone()
        })
        .unwrap();
        let out = calibrate_robust(&records, 0.1, 0.2, &RobustParams::default()).unwrap();
        let cov = eval::coverage(&test, out.result.q_hat).unwrap();
        let clean: Vec<f64> = records.iter().map(|r| r.score(LabelKind::Clean).unwrap()).collect();
        let noisy: Vec<f64> = records.iter().map(|r| r.score(LabelKind::Noisy).unwrap()).collect();
        q_oracles.push(calibrate_split_cp(&clean, 0.1).unwrap());
        q_noisies.push(calibrate_split_cp(&noisy, 0.1).unwrap());
        covs.push(cov);
        qs.push(out.result.q_hat);
        steps_total += out.result.iterations;
    }
    let n = covs.len() as f64;
    let mcov = covs.iter().sum::<f64>() / n;
    let mq = qs.iter().sum::<f64>() / n;
    let mqo = q_oracles.iter().sum::<f64>() / n;
    let mqn = q_noisies.iter().sum::<f64>() / n;
    println!(
        "{name}: mean_cov={mcov:.4} mean_q={mq:.4} oracle_q={mqo:.4} noisy_q={mqn:.4} len_vs_oracle={:.3} len_vs_noisy={:.3} steps={} in {:.1?}",
        mq / mqo,
        mq / mqn,
        steps_total,
        t0.elapsed()
    );
    println!("  covs: {covs:.4?}");
}

#[test]
fn probe_configs() {
    run_config("A none      ", None, 1..7);
    run_config("B round 0.025", Some(0.025), 1..7);
    run_config("C round 0.05 ", Some(0.05), 1..7);
}
