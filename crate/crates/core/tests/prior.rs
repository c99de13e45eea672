use std::collections::HashMap;

use gpsmc::prior::{
    log_noise_prior, log_prior, log_prior_subtree, log_structure_prior, sample_noise,
    sample_structure, PcfgConfig,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const BASES: [&str; 3] = ["LIN", "PER", "GE"];

/// All skeletons up to the depth cap with their probabilities, computed
/// directly from the production rules.
fn skeletons(depth: usize, cap: usize, cfg: &PcfgConfig) -> Vec<(String, f64)> {
    let leaf = if depth == cap { 1.0 } else { cfg.p_leaf };
    let mut out: Vec<(String, f64)> = BASES.iter().map(|b| (b.to_string(), leaf / 3.0)).collect();
    if depth < cap {
        let children = skeletons(depth + 1, cap, cfg);
        for (l, pl) in &children {
            for (r, pr) in &children {
                out.push((format!("({l} + {r})"), cfg.p_sum * pl * pr));
                out.push((format!("({l} * {r})"), cfg.p_product * pl * pr));
                out.push((format!("CP({l}; {r})"), cfg.p_change_point * pl * pr));
            }
        }
    }
    out
}

#[test]
fn sampler_matches_skeleton_masses() {
    let cfg = PcfgConfig {
        max_depth: Some(3),
        ..PcfgConfig::default()
    };
    let masses = skeletons(1, 3, &cfg);
    let total: f64 = masses.iter().map(|m| m.1).sum();
    assert!((total - 1.0).abs() < 1e-12);

    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counts: HashMap<String, usize> = HashMap::new();
    for _ in 0..draws {
        let e = sample_structure(&cfg, &mut rng);
        *counts.entry(e.structure_string()).or_default() += 1;
    }
    let mut chi2 = 0.0;
    let mut bins = 0;
    let (mut other_obs, mut other_exp) = (0.0, 0.0);
    for (s, p) in &masses {
        let expected = p * draws as f64;
        let observed = *counts.get(s).unwrap_or(&0) as f64;
        if expected < 5.0 {
            other_obs += observed;
            other_exp += expected;
        } else {
            chi2 += (observed - expected).powi(2) / expected;
            bins += 1;
        }
    }
    if other_exp > 0.0 {
        chi2 += (other_obs - other_exp).powi(2) / other_exp;
        bins += 1;
    }
    let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi-square {chi2} on {bins} bins, p = {p}");

    for (s, p) in masses.iter().take(3) {
        let e = gpsmc::kernel::parse(&format!("{s}{{1,1,1}}")).unwrap();
        assert!((log_structure_prior(&e, 1, &cfg) - p.ln()).abs() < 1e-12);
    }
}

#[test]
fn depth_two_masses_sum_to_one() {
    let cfg = PcfgConfig {
        max_depth: Some(2),
        ..PcfgConfig::default()
    };
    let total: f64 = skeletons(1, 2, &cfg).iter().map(|m| m.1).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(skeletons(1, 2, &cfg).len(), 3 + 3 * 9);
}

#[test]
fn root_leaf_frequency_and_mean_size() {
    let cfg = PcfgConfig {
        max_depth: None,
        ..PcfgConfig::default()
    };
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sizes: Vec<f64> = (0..draws)
        .map(|_| sample_structure(&cfg, &mut rng).node_count() as f64)
        .collect();
    let leaves = sizes.iter().filter(|s| **s == 1.0).count() as f64 / draws as f64;
    let sd = (cfg.p_leaf * (1.0 - cfg.p_leaf) / draws as f64).sqrt();
    assert!((leaves - cfg.p_leaf).abs() < 3.0 * sd, "root leaf frequency {leaves}");

    let mean = sizes.iter().sum::<f64>() / draws as f64;
    let var = sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    let expected = 1.0 / (2.0 * cfg.p_leaf - 1.0);
    assert!(
        (mean - expected).abs() < 3.0 * (var / draws as f64).sqrt(),
        "mean size {mean} vs {expected}"
    );
}

#[test]
fn noise_prior_median_and_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut draws: Vec<f64> = (0..100_000).map(|_| sample_noise(&mut rng)).collect();
    draws.sort_by(f64::total_cmp);
    let median = draws[draws.len() / 2];
    let expected = 1.0 / std::f64::consts::LN_2;
    assert!((median / expected - 1.0).abs() < 0.02, "median {median}");
    assert!((log_noise_prior(1.0).unwrap() + 1.0).abs() < 1e-15);
    assert!(log_noise_prior(1e-300).unwrap() < -1e200);
    assert!(log_noise_prior(0.0).is_err());
    assert!(log_noise_prior(-1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn sampled_priors_are_finite(seed in any::<u64>()) {
        let cfg = PcfgConfig::default();
        let e = sample_structure(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(log_prior(&e, &cfg).is_finite());
    }

    #[test]
    fn context_free_decomposition(seed in any::<u64>(), other in any::<u64>()) {
        let cfg = PcfgConfig { max_depth: Some(6), ..PcfgConfig::default() };
        let e = sample_structure(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let small = PcfgConfig { max_depth: Some(2), ..PcfgConfig::default() };
        let s = sample_structure(&small, &mut ChaCha8Rng::seed_from_u64(other));
        for p in e.node_paths() {
            let depth = p.len() + 1;
            if depth + s.depth() - 1 > 6 {
                continue;
            }
            let old = e.subtree_extract(&p).unwrap();
            let edited = e.subtree_replace_at(&p, s.clone()).unwrap();
            let lhs = log_prior(&edited, &cfg) - log_prior(&e, &cfg);
            let rhs = log_prior_subtree(&s, depth, &cfg) - log_prior_subtree(&old, depth, &cfg);
            prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
        }
    }
}
