use epistoch::branching::{extinction_probability, OffspringLaw};
use epistoch::final_size::{chain_binomial_distribution, exact_final_size_distribution, final_size_root, Precision};
use epistoch::model::sir_model;
use epistoch::sim::{family_job, run_replicas, simulate_markov, MarkovOptions, Method};
use epistoch::{EpidemicParams, PeriodDistribution, SeedSpec};
use proptest::prelude::*;

fn period() -> impl Strategy<Value = PeriodDistribution> {
    prop_oneof![
        (0.2..3.0f64).prop_map(|c| PeriodDistribution::constant(c).unwrap()),
        (0.2..3.0f64).prop_map(|r| PeriodDistribution::exponential(r).unwrap()),
        (1u32..5, 0.1..1.0f64).prop_map(|(k, s)| PeriodDistribution::gamma(k, s).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn recursion_equals_reed_frost(n in 1usize..=12, lambda in 0.05..6.0f64, c in 0.2..2.0f64) {
        let exact = exact_final_size_distribution(n, lambda, &PeriodDistribution::constant(c).unwrap(), Precision::Auto).unwrap();
        let chain = chain_binomial_distribution(n, 1.0 - (-lambda * c / n as f64).exp()).unwrap();
        for (a, b) in exact.probs.iter().zip(&chain.probs) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn final_size_law_is_a_distribution(n in 1usize..60, lambda in 0.05..5.0f64, inf in period()) {
        let pmf = exact_final_size_distribution(n, lambda, &inf, Precision::Auto).unwrap();
        prop_assert_eq!(pmf.probs.len(), n + 1);
        prop_assert!(pmf.probs.iter().all(|&p| (0.0..=1.0 + 1e-12).contains(&p)));
        prop_assert!((pmf.total() - 1.0).abs() < 1e-9);
        let exact = exact_final_size_distribution(n, lambda, &inf, Precision::HighPrecision).unwrap();
        for (a, b) in pmf.probs.iter().zip(&exact.probs) {
            prop_assert!((a - b).abs() < 1e-9, "auto {} vs high precision {}", a, b);
        }
    }

    #[test]
    fn final_size_root_is_a_fixed_point(r0 in 1.001..25.0f64) {
        let z = final_size_root(r0);
        prop_assert!(z > 0.0 && z <= 1.0);
        prop_assert!((1.0 - z - (-r0 * z).exp()).abs() < 1e-13);
    }

    #[test]
    fn extinction_probability_solves_the_pgf_equation(lambda in 0.1..5.0f64, inf in period()) {
        let law = OffspringLaw::mixed_poisson(lambda, inf).unwrap();
        let q = extinction_probability(&law);
        prop_assert!((0.0..=1.0).contains(&q));
        prop_assert!((law.pgf(q) - q).abs() < 1e-10);
        prop_assert_eq!(q < 1.0 - 1e-9, law.mean() > 1.0 + 1e-6 || (q < 1.0 && law.mean() > 1.0));
    }

    #[test]
    fn markov_sir_paths_conserve_and_are_monotone(
        lambda in 0.2..4.0f64, gamma in 0.2..2.0f64, n in 1i64..300, i0 in 1i64..5, seed in any::<u64>(),
    ) {
        let traj = simulate_markov(&sir_model(lambda, gamma), &[n, i0, 0], n as f64, &MarkovOptions::until(f64::INFINITY), SeedSpec::new(seed, 0)).unwrap();
        for w in traj.states.windows(2) {
            prop_assert!(w[1][0] <= w[0][0]);
            prop_assert!(w[1][2] >= w[0][2]);
        }
        for s in &traj.states {
            prop_assert!(s.iter().all(|&x| x >= 0));
            prop_assert_eq!(s.iter().sum::<i64>(), n + i0);
        }
        prop_assert!(traj.times.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(traj.final_state()[1], 0);
    }

    #[test]
    fn replica_outcomes_ignore_thread_count(seed in any::<u64>(), lambda in 0.5..3.0f64) {
        let p = EpidemicParams::sir(lambda, PeriodDistribution::exponential(1.0).unwrap(), 30).unwrap();
        for method in [Method::Sellke, Method::Agent, Method::Markov] {
            let job = family_job(&p, 64, seed, method);
            prop_assert_eq!(run_replicas(&job, 1).unwrap(), run_replicas(&job, 3).unwrap());
        }
    }
}
