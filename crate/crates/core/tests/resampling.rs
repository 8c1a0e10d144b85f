mod common;

use drm_core::baselines::{anova_random_effects, wilcoxon_clustered, SplitLevel, WilcoxonVariant};
use drm_core::bootstrap::{bootstrap_distribution, cluster_multiplicities, monitoring_test, BootstrapPlan, Sided};
use drm_core::simulate::{gen_normal_re, normal_block, NormalREConfig};
use drm_core::BasisFunction;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn resamples_keep_cluster_counts(seed in any::<u64>(), index in 0u64..1000) {
        let ds = normal_block(1, 2).unwrap().generate(seed).unwrap();
        let mult = cluster_multiplicities(&ds, seed, index);
        let mut offset = 0;
        for p in ds.populations() {
            let total: u32 = mult[offset..offset + p.n_clusters()].iter().sum();
            prop_assert_eq!(total as usize, p.n_clusters());
            offset += p.n_clusters();
        }
    }
}

#[test]
fn multiplicities_average_to_one() {
    let ds = normal_block(1, 2).unwrap().generate(9).unwrap();
    let reps = 4000;
    let mut sum = vec![0.0; ds.n_clusters()];
    for b in 0..reps {
        for (s, m) in sum.iter_mut().zip(cluster_multiplicities(&ds, 9, b)) {
            *s += m as f64;
        }
    }
    // Each multiplicity is Binomial(n_k, 1/n_k) with variance below one.
    for s in sum {
        assert!((s / reps as f64 - 1.0).abs() < 4.0 / (reps as f64).sqrt());
    }
}

#[test]
fn bootstrap_is_independent_of_thread_count() {
    let ds = normal_block(1, 5).unwrap().generate(3).unwrap();
    let plan = BootstrapPlan::difference(2, 0.05, 99, 17);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| bootstrap_distribution(&ds, &BasisFunction::linear_quadratic(), &plan).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.replicates, b.replicates);
    assert_eq!(a.ci_two_sided, b.ci_two_sided);
    assert_eq!(a.p_value_one_sided, b.p_value_one_sided);
}

#[test]
fn monitoring_test_detects_a_large_decline() {
    let cfg = NormalREConfig {
        mu: vec![15.5, 12.0],
        sigma2_gamma: vec![1.0, 1.0],
        sigma2_eps: vec![4.0, 4.0],
        n: vec![40, 40],
        d: 5,
    };
    let ds = gen_normal_re(&cfg, 5).unwrap();
    let plan = BootstrapPlan::difference(1, 0.05, 199, 1);
    let one = monitoring_test(&ds, &BasisFunction::linear_quadratic(), &plan, Sided::One).unwrap();
    assert!(one.reject);
    assert!(one.result.p_value_one_sided <= 1.0 / 200.0 + 1e-12);
    let two = monitoring_test(&ds, &BasisFunction::linear_quadratic(), &plan, Sided::Two).unwrap();
    assert!(two.reject);
    // The reversed comparison is firmly inside its null.
    let reversed = BootstrapPlan { r: 1, s: 0, ..plan };
    let rev = monitoring_test(&ds, &BasisFunction::linear_quadratic(), &reversed, Sided::One).unwrap();
    assert!(!rev.reject);
}

#[test]
fn anova_detects_lot_effects() {
    let cfg = NormalREConfig { mu: vec![15.5], sigma2_gamma: vec![1.44], sigma2_eps: vec![4.0], n: vec![25], d: 5 };
    let rejections = (0..200)
        .filter(|&s| anova_random_effects(gen_normal_re(&cfg, s).unwrap().population(0)).unwrap().p_value < 0.05)
        .count();
    assert!(rejections > 180, "{rejections}");
}

#[test]
fn wilcoxon_tests_respect_split_levels() {
    let ds = normal_block(1, 5).unwrap().generate(2).unwrap();
    for split in [SplitLevel::Cluster, SplitLevel::Observation] {
        let a = wilcoxon_clustered(ds.population(3), ds.population(0), WilcoxonVariant::W3, 0.05, 8, split).unwrap();
        let b = wilcoxon_clustered(ds.population(3), ds.population(0), WilcoxonVariant::W3, 0.05, 8, split).unwrap();
        assert_eq!(a.p_value, b.p_value);
        assert_eq!(a.split_p_values, b.split_p_values);
    }
}
