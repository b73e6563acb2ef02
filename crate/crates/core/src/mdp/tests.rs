use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::rng::stream_rng;

fn single_state(reward: f64) -> MdpModel {
    MdpModel::new(1, 2, vec![1.0, 1.0], vec![reward, reward], 0.9).unwrap()
}

/// Two states; action 0 stays, action 1 flips deterministically.
fn stay_or_flip() -> MdpModel {
    MdpModel::new(2, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0], vec![0.0; 8], 0.9).unwrap()
}

fn cycle3() -> MdpModel {
    let mut p = vec![0.0; 9];
    for s in 0..3 {
        p[s * 3 + (s + 1) % 3] = 1.0;
    }
    MdpModel::new(3, 1, p, vec![1.0; 9], 0.5).unwrap()
}

#[test]
fn constructors_reject_invalid_rows_and_discounts() {
    assert!(MdpModel::new(1, 1, vec![0.9], vec![0.0], 0.9).is_err());
    assert!(MdpModel::new(2, 1, vec![1.2, -0.2, 0.0, 1.0], vec![0.0; 4], 0.9).is_err());
    assert!(MdpModel::new(1, 1, vec![1.0], vec![0.0], 1.0).is_err());
    assert!(MdpModel::new(1, 1, vec![1.0], vec![f64::NAN], 0.5).is_err());
    assert!(PolicyTable::from_rows(&[vec![0.5, 0.6]]).is_err());
    assert!(single_state(2.0).with_reward_bound(1.0).is_err());
    assert_eq!(single_state(-2.0).r_max(), 2.0);
}

#[test]
fn single_state_chain_is_a_self_loop() {
    let chain = induced_chain(&single_state(1.0), &PolicyTable::uniform(1, 2)).unwrap();
    assert_eq!(chain, DMatrix::from_element(1, 1, 1.0));
}

#[test]
fn equal_mixture_of_stay_and_flip() {
    let chain = induced_chain(&stay_or_flip(), &PolicyTable::uniform(2, 2)).unwrap();
    assert_eq!(chain, DMatrix::from_element(2, 2, 0.5));
    assert!(induced_chain(&stay_or_flip(), &PolicyTable::uniform(3, 2)).is_err());
}

#[test]
fn induced_chain_matches_triple_loop() {
    let mdp = random_garnet(5, 3, 3, 4, 0.9).unwrap();
    let policy = PolicyTable::random(5, 3, 0.1, &mut stream_rng(4, 9));
    let chain = induced_chain(&mdp, &policy).unwrap();
    for s in 0..5 {
        for s2 in 0..5 {
            let mut total = 0.0;
            for a in 0..3 {
                total += mdp.p(s, a, s2) * policy.prob(s, a);
            }
            assert!((chain[(s, s2)] - total).abs() <= 1e-15);
        }
    }
    assert!(is_row_stochastic(&chain));
}

#[test]
fn stationary_distribution_of_two_state_chains() {
    let mu = stationary_distribution(&two_state_chain(0.3, 0.3)).unwrap();
    assert!((&mu - DVector::from_vec(vec![0.5, 0.5])).amax() <= 1e-12);
    let mu = stationary_distribution(&two_state_chain(0.2, 0.1)).unwrap();
    let (p, q) = (0.2, 0.1);
    assert!((mu - DVector::from_vec(vec![q / (p + q), p / (p + q)])).amax() <= 1e-12);
    assert!(matches!(stationary_distribution(&two_state_chain(0.0, 0.0)), Err(Error::NonErgodic(_))));
    assert!(matches!(stationary_distribution(&two_state_chain(1.0, 1.0)), Err(Error::NonErgodic(_))));
}

#[test]
fn two_state_mixing_matches_closed_form() {
    let chain = two_state_chain(0.25, 0.25);
    let mu = stationary_distribution(&chain).unwrap();
    let profile = total_variation_profile(&chain, &mu, 20);
    for (t, d) in profile.iter().enumerate() {
        assert!((d - 0.5 * 0.5f64.powi(t as i32)).abs() <= 1e-15);
    }
    let fit = fit_geometric_mixing(&chain, &mu, 50).unwrap();
    assert!((fit.rho - 0.5).abs() <= 1e-9);
    assert!(fit.kappa <= 1.0);
    assert!(fit.max_residual <= 1e-10);
}

#[test]
fn one_step_mixing_returns_floor() {
    let chain = DMatrix::from_row_slice(3, 3, &[0.2, 0.3, 0.5, 0.2, 0.3, 0.5, 0.2, 0.3, 0.5]);
    let mu = stationary_distribution(&chain).unwrap();
    let fit = fit_geometric_mixing(&chain, &mu, 10).unwrap();
    assert_eq!(fit.rho, MIXING_RHO_FLOOR);
    assert!(fit.max_residual <= 1e-10);
}

#[test]
fn baird_behavior_mixes_in_one_step() {
    let mdp = baird7();
    let behavior = PolicyTable::from_rows(&vec![vec![6.0 / 7.0, 1.0 / 7.0]; 7]).unwrap();
    let chain = induced_chain(&mdp, &behavior).unwrap();
    let mu = stationary_distribution(&chain).unwrap();
    assert!((&mu - DVector::from_element(7, 1.0 / 7.0)).amax() <= 1e-12);
    assert_eq!(fit_geometric_mixing(&chain, &mu, 10).unwrap().rho, MIXING_RHO_FLOOR);
}

#[test]
fn random_chain_envelope_holds_at_every_step() {
    for seed in 0..5 {
        let mdp = random_garnet(5, 2, 3, seed, 0.9).unwrap();
        let chain = induced_chain(&mdp, &PolicyTable::uniform(5, 2)).unwrap();
        let mu = stationary_distribution(&chain).unwrap();
        let fit = fit_geometric_mixing(&chain, &mu, 60).unwrap();
        assert!(fit.rho > 0.0 && fit.rho < 1.0 && fit.kappa > 0.0);
        for (t, d) in total_variation_profile(&chain, &mu, 60).iter().enumerate() {
            assert!(*d <= fit.kappa * fit.rho.powi(t as i32) + 1e-10, "seed {seed}, t {t}");
        }
        assert!(fit.max_residual <= 1e-10);
    }
}

#[test]
fn mixing_requires_horizon_of_two() {
    let chain = two_state_chain(0.25, 0.25);
    let mu = stationary_distribution(&chain).unwrap();
    assert!(fit_geometric_mixing(&chain, &mu, 1).is_err());
}

#[test]
fn single_state_trajectory_repeats() {
    for x in sample_trajectory(&single_state(3.0), &PolicyTable::from_rows(&[vec![1.0, 0.0]]).unwrap(), 1, 50).unwrap() {
        assert_eq!(x, Transition { s: 0, a: 0, r: 3.0, s_next: 0, a_next: 0 });
    }
}

#[test]
fn deterministic_cycle_is_followed() {
    let path = sample_trajectory(&cycle3(), &PolicyTable::uniform(3, 1), 9, 30).unwrap();
    for (j, x) in path.iter().enumerate() {
        assert_eq!(x.s, j % 3);
    }
}

#[test]
fn long_run_frequency_matches_stationary_law() {
    let mdp = twostate();
    let path = sample_trajectory(&mdp, &PolicyTable::uniform(2, 2), 5, 1_000_000).unwrap();
    let freq = path.iter().filter(|x| x.s == 0).count() as f64 / path.len() as f64;
    // Flip probability 1/4: second eigenvalue 1/2, asymptotic variance 0.25·(1 + 1/2)/(1 − 1/2).
    let sigma = (0.25 * 3.0 / 1e6f64).sqrt();
    assert!((freq - 0.5).abs() <= 3.0 * sigma, "{freq}");
}

#[test]
fn streams_are_deterministic_and_chained() {
    let mdp = random_garnet(6, 2, 3, 1, 0.9).unwrap();
    let policy = PolicyTable::uniform(6, 2);
    let a = sample_trajectory(&mdp, &policy, 77, 10_000).unwrap();
    let b = sample_trajectory(&mdp, &policy, 77, 10_000).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, sample_trajectory(&mdp, &policy, 78, 10_000).unwrap());
    for pair in a.windows(2) {
        assert_eq!(pair[1].s, pair[0].s_next);
        assert_eq!(pair[1].a, pair[0].a_next);
    }
    let mut stream = TrajectoryStream::new(&mdp, &policy, 77, &StartState::Fixed(0)).unwrap();
    let mut batch = Vec::new();
    stream.fill_batch(&mut batch, 100);
    assert_eq!(&batch[..], &a[..100]);
    assert_eq!(stream.cursor(), 100);
    assert!(sample_trajectory(&mdp, &policy, 1, 0).is_err());
}

#[test]
fn value_function_examples() {
    let policy = PolicyTable::uniform(6, 2);
    let mdp = random_garnet(6, 2, 3, 2, 0.9).unwrap();
    assert_eq!(value_function_exact(&mdp.with_zero_rewards(), &policy).unwrap().amax(), 0.0);
    let v = value_function_exact(&single_state(2.0), &PolicyTable::uniform(1, 2)).unwrap();
    assert!((v[0] - 2.0 / (1.0 - 0.9)).abs() <= 1e-12);
    let v = value_function_exact(&mdp, &policy).unwrap();
    let chain = induced_chain(&mdp, &policy).unwrap();
    let backup = mdp.policy_reward(&policy).unwrap() + chain * &v * 0.9;
    assert!((backup - v).amax() <= 1e-10);
}

#[test]
fn json_round_trip_preserves_model() {
    let mdp = random_garnet(4, 2, 2, 3, 0.8).unwrap();
    let back = MdpModel::from_json_str(&mdp.to_json_string()).unwrap();
    assert_eq!(back.n_states(), 4);
    for s in 0..4 {
        for a in 0..2 {
            assert_eq!(back.transition_row(s, a), mdp.transition_row(s, a));
            assert_eq!(back.reward_row(s, a), mdp.reward_row(s, a));
        }
    }
    assert_eq!(back.name(), Some("random-garnet"));
    assert!(MdpModel::from_json_str(r#"{"n_states":2,"n_actions":1,"gamma":0.9,"transition":[[[1,0]]],"reward":[[[0,0]]]}"#).is_err());
}

#[test]
fn importance_ratios_and_support() {
    let target = PolicyTable::from_rows(&[vec![0.5, 0.5]]).unwrap();
    let behavior = PolicyTable::from_rows(&[vec![0.8, 0.2]]).unwrap();
    assert!((target.max_ratio(&behavior).unwrap() - 2.5).abs() <= 1e-15);
    let degenerate = PolicyTable::from_rows(&[vec![1.0, 0.0]]).unwrap();
    assert_eq!(target.max_ratio(&degenerate), Err(Error::Support { state: 0, action: 1 }));
    assert_eq!(degenerate.ratio(&degenerate, 0, 1), Ok(0.0));
}

#[test]
fn garnet_generation_is_seeded() {
    let a = random_garnet(5, 2, 2, 9, 0.9).unwrap();
    let b = random_garnet(5, 2, 2, 9, 0.9).unwrap();
    assert_eq!(a, b);
    assert!(a.r_max() <= 1.0);
    assert!(random_garnet(3, 2, 4, 1, 0.9).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn induced_chains_are_stochastic_with_stationary_law(seed in 0u64..10_000, n in 2usize..8, k in 1usize..4) {
        let mdp = random_garnet(n, k, n.min(3), seed, 0.9).unwrap();
        let policy = PolicyTable::random(n, k, 0.2, &mut stream_rng(seed, 9));
        let chain = induced_chain(&mdp, &policy).unwrap();
        prop_assert!(is_row_stochastic(&chain));
        if let Ok(mu) = stationary_distribution(&chain) {
            prop_assert!((chain.tr_mul(&mu) - &mu).amax() <= 1e-12);
            prop_assert!((mu.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(mu.iter().all(|&m| m >= 0.0));
        }
    }

    #[test]
    fn random_policies_are_distributions(seed in 0u64..10_000, n in 1usize..6, k in 1usize..5, floor in 0.0f64..1.0) {
        let policy = PolicyTable::random(n, k, floor, &mut stream_rng(seed, 9));
        for s in 0..n {
            prop_assert!((policy.row(s).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(policy.row(s).iter().all(|&p| p >= floor / k as f64 - 1e-15));
        }
    }
}
