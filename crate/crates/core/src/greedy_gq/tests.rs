use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::linear_tdc::{build_linear_exact, mspbe, mspbe_gradient, w_of_theta, LinearFeatureMap};
use crate::mdp::{random_garnet, stationary_transitions, MdpModel, PolicyTable, Transition};
use crate::rng::stream_rng;
use crate::schedule::{ResourceCap, RunInit, TwoTimescaleConfig};

fn desk(seed: u64, tau: f64) -> GreedyGqProblem {
    let mdp = random_garnet(8, 2, 3, seed, 0.9).unwrap();
    let features = StateActionFeatureMap::random(8, 2, 4, seed).unwrap();
    GreedyGqProblem::new(mdp, PolicyTable::uniform(8, 2), features, tau).unwrap()
}

fn random_theta(d: usize, scale: f64, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.gen_range(-scale..scale))
}

#[test]
fn zero_parameter_gives_uniform_policy() {
    let f = StateActionFeatureMap::random(5, 3, 4, 1).unwrap();
    let pi = softmax_policy(&f, &DVector::zeros(4), 2.0).unwrap();
    assert_eq!(pi, PolicyTable::uniform(5, 3));
}

#[test]
fn large_temperature_concentrates_on_argmax() {
    let f = StateActionFeatureMap::random(5, 3, 4, 2).unwrap();
    let theta = DVector::from_vec(vec![0.3, -0.5, 0.8, 0.1]);
    let pi = softmax_policy(&f, &theta, 1e3).unwrap();
    for s in 0..5 {
        let best = (0..3).max_by(|&a, &b| f.phi(s, a).dot(&theta).total_cmp(&f.phi(s, b).dot(&theta))).unwrap();
        assert!(pi.prob(s, best) > 0.999);
    }
}

#[test]
fn softmax_matches_direct_normalisation() {
    let f = StateActionFeatureMap::random(6, 4, 3, 3).unwrap();
    let mut rng = stream_rng(3, 9);
    for _ in 0..20 {
        let theta = random_theta(3, 2.0, &mut rng);
        let pi = softmax_policy(&f, &theta, 1.5).unwrap();
        for s in 0..6 {
            let raw: Vec<f64> = (0..4).map(|a| (1.5 * f.phi(s, a).dot(&theta)).exp()).collect();
            let total: f64 = raw.iter().sum();
            assert!((pi.row(s).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for (a, r) in raw.iter().enumerate() {
                assert!((pi.prob(s, a) - r / total).abs() <= 1e-14);
            }
        }
    }
}

#[test]
fn zero_rewards_at_origin_give_zero_quantities() {
    let p = desk(1, 1.0);
    let z = GreedyGqProblem::new(p.mdp.with_zero_rewards(), p.behavior.clone(), p.features.clone(), 1.0).unwrap();
    let zero = DVector::zeros(4);
    assert_eq!(gq_objective(&z, &zero).unwrap(), 0.0);
    assert_eq!(gq_w_of_theta(&z, &zero).unwrap().norm(), 0.0);
    assert_eq!(gq_gradient(&z, &zero).unwrap().norm(), 0.0);
}

/// Chain over pairs x = (s, a): choosing b at x moves to (s', b) with s' ~ P(·|s, a).
fn pair_chain(mdp: &MdpModel) -> MdpModel {
    let (n, k) = (mdp.n_states(), mdp.n_actions());
    let m = n * k;
    let mut p = vec![0.0; m * k * m];
    let mut r = vec![0.0; m * k * m];
    for s in 0..n {
        for a in 0..k {
            let x = s * k + a;
            for b in 0..k {
                for s2 in 0..n {
                    let idx = (x * k + b) * m + s2 * k + b;
                    p[idx] = mdp.p(s, a, s2);
                    r[idx] = mdp.r(s, a, s2);
                }
            }
        }
    }
    MdpModel::new(m, k, p, r, mdp.gamma()).unwrap()
}

#[test]
fn vanishing_temperature_reduces_to_uniform_target_evaluation() {
    for seed in [4, 5, 6] {
        let mdp = random_garnet(5, 2, 3, seed, 0.8).unwrap();
        let behavior_row = vec![0.3, 0.7];
        let behavior = PolicyTable::from_rows(&vec![behavior_row.clone(); 5]).unwrap();
        let features = StateActionFeatureMap::random(5, 2, 4, seed).unwrap();
        let gq = GreedyGqProblem::new(mdp.clone(), behavior, features.clone(), 1e-12).unwrap();
        let pairs = pair_chain(&mdp);
        let linear = build_linear_exact(
            &pairs,
            &PolicyTable::from_rows(&vec![behavior_row; 10]).unwrap(),
            &PolicyTable::uniform(10, 2),
            &LinearFeatureMap::new(features.stacked().matrix().clone()).unwrap(),
        )
        .unwrap();
        let mut rng = stream_rng(seed, 9);
        for _ in 0..10 {
            let theta = random_theta(4, 3.0, &mut rng);
            assert!((gq_objective(&gq, &theta).unwrap() - mspbe(&linear, &theta)).abs() <= 1e-8);
            assert!((gq_w_of_theta(&gq, &theta).unwrap() - w_of_theta(&linear, &theta)).norm() <= 1e-8);
            assert!((gq_gradient(&gq, &theta).unwrap() - mspbe_gradient(&linear, &theta)).norm() <= 1e-8);
        }
    }
}

/// Solves θ = −A_θ⁻¹b by fixed-point iteration on a tabular instance.
fn tabular_fixed_point(p: &GreedyGqProblem) -> DVector<f64> {
    let mut theta = DVector::zeros(p.dim());
    for _ in 0..500 {
        let a = p.snapshot(&theta).unwrap().a;
        let next = -a.lu().solve(&p.b).unwrap();
        if (&next - &theta).norm() <= 1e-15 {
            return next;
        }
        theta = next;
    }
    theta
}

#[test]
fn projected_fixed_point_has_zero_objective_and_measure() {
    let mdp = random_garnet(4, 2, 2, 7, 0.5).unwrap();
    let p = GreedyGqProblem::new(mdp, PolicyTable::uniform(4, 2), StateActionFeatureMap::tabular(4, 2), 0.5).unwrap();
    let theta = tabular_fixed_point(&p);
    assert!(gq_objective(&p, &theta).unwrap() <= 1e-20);
    assert!(gq_gradient(&p, &theta).unwrap().norm() <= 1e-10);
}

#[test]
fn w_solves_covariance_system_and_is_continuous() {
    let p = desk(8, 1.0);
    let mut rng = stream_rng(8, 9);
    for _ in 0..10 {
        let theta = random_theta(4, 2.0, &mut rng);
        let snap = p.snapshot(&theta).unwrap();
        assert!((&p.sigma * &snap.w - &snap.residual).norm() <= 1e-10);
        assert!(snap.objective >= 0.0);
        for i in 0..4 {
            let mut moved = theta.clone();
            moved[i] += 1e-6;
            assert!((gq_w_of_theta(&p, &moved).unwrap() - &snap.w).norm() <= 1e-3);
        }
    }
}

fn hand_features() -> StateActionFeatureMap {
    StateActionFeatureMap::new(DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.0, -1.0]), 2).unwrap()
}

#[test]
fn single_sample_steps_match_hand_arithmetic() {
    let f = hand_features();
    let behavior = PolicyTable::uniform(2, 2);
    let theta = DVector::from_vec(vec![1.0, 0.0]);
    let w = DVector::from_vec(vec![0.5, -1.0]);
    let x = Transition { s: 0, a: 0, r: 1.0, s_next: 1, a_next: 1 };
    let mut ctx = GqStepContext { features: &f, behavior: &behavior, tau: 1.0, gamma: 0.5, mode: NextActionMode::Expected };
    // π_θ(0|1) = p; ψ̄(1) = (p/2, 3p/2 − 1); δ = p/4; φᵀw = 1/2.
    let p = 1.0 / (1.0 + (-0.5f64).exp());
    let (th, wn) = greedy_gq_step(&theta, &w, &[x], 0.1, 0.2, &ctx).unwrap();
    let w_hand = DVector::from_vec(vec![0.5 + 0.2 * (0.25 * p - 0.5), -1.0]);
    let th_hand = DVector::from_vec(vec![1.0 + 0.1 * (0.25 * p - 0.125 * p), -0.025 * (1.5 * p - 1.0)]);
    assert!((wn - w_hand).norm() <= 1e-15);
    assert!((th - th_hand).norm() <= 1e-15);
    // Sampled next action (0, −1): δ = 0, ρ(0,0) = 2q, ρ(1,1) = 2(1 − p).
    ctx.mode = NextActionMode::SampledNext;
    let (th, wn) = greedy_gq_step(&theta, &w, &[x], 0.1, 0.2, &ctx).unwrap();
    assert!((wn - DVector::from_vec(vec![0.4, -1.0])).norm() <= 1e-15);
    assert!((th - DVector::from_vec(vec![1.0, 0.05 * (1.0 - p)])).norm() <= 1e-15);
}

#[test]
fn zero_stepsizes_leave_iterates_unchanged() {
    let p = desk(9, 1.0);
    let theta = DVector::from_element(4, 0.3);
    let w = DVector::from_element(4, -0.2);
    let batch = stationary_transitions(&p.mdp, &p.behavior, &[0.125; 8], 10, 1).unwrap();
    for mode in [NextActionMode::Expected, NextActionMode::SampledNext] {
        let ctx = GqStepContext { features: &p.features, behavior: &p.behavior, tau: 1.0, gamma: 0.9, mode };
        let (th, wn) = greedy_gq_step(&theta, &w, &batch, 0.0, 0.0, &ctx).unwrap();
        assert_eq!((th, wn), (theta.clone(), w.clone()));
    }
}

fn assert_within_three_sigma(draws: &[DVector<f64>], exact: &DVector<f64>) {
    let n = draws.len() as f64;
    let mean = draws.iter().fold(DVector::zeros(exact.len()), |acc, g| acc + g) / n;
    for i in 0..exact.len() {
        let var = draws.iter().map(|g| (g[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!((mean[i] - exact[i]).abs() <= 3.0 * se + 1e-14, "coordinate {i}: {} vs {} (se {se})", mean[i], exact[i]);
    }
}

#[test]
fn expected_step_direction_matches_population_form() {
    let p = desk(10, 1.0);
    let theta = DVector::from_vec(vec![0.4, -0.3, 0.2, 0.6]);
    let w = DVector::from_vec(vec![0.1, 0.2, -0.3, 0.05]);
    let mu: Vec<f64> = p.mu.iter().copied().collect();
    let samples = stationary_transitions(&p.mdp, &p.behavior, &mu, 1_000_000, 23).unwrap();
    let exact = gq_expected_theta_direction(&p, &theta, &w).unwrap();
    for mode in [NextActionMode::Expected, NextActionMode::SampledNext] {
        let ctx = GqStepContext { features: &p.features, behavior: &p.behavior, tau: 1.0, gamma: 0.9, mode };
        let draws: Vec<DVector<f64>> =
            samples.iter().map(|x| greedy_gq_step(&theta, &w, std::slice::from_ref(x), 1.0, 0.0, &ctx).unwrap().0 - &theta).collect();
        assert_within_three_sigma(&draws, &exact);
    }
    let at_fixed_point = gq_expected_theta_direction(&p, &theta, &gq_w_of_theta(&p, &theta).unwrap()).unwrap();
    assert!((at_fixed_point * -2.0 - gq_gradient(&p, &theta).unwrap()).norm() <= 1e-12);
}

#[test]
fn zero_problem_keeps_iterates_at_zero() {
    let p = desk(11, 1.0);
    let z = GreedyGqProblem::new(p.mdp.with_zero_rewards(), p.behavior.clone(), p.features.clone(), 1.0).unwrap();
    let config = TwoTimescaleConfig::new(0.05, 0.1, 10, 20, 5).unwrap();
    let trace = run_greedy_gq(&z, &config, &RunInit::zeros(4)).unwrap();
    assert_eq!(trace.theta_final.norm(), 0.0);
    assert_eq!(trace.w_final.norm(), 0.0);
}

#[test]
fn single_iteration_outputs_index_one() {
    let p = desk(12, 1.0);
    let config = TwoTimescaleConfig::new(0.05, 0.1, 10, 1, 5).unwrap();
    assert_eq!(run_greedy_gq(&p, &config, &RunInit::zeros(4)).unwrap().output_index, Some(1));
}

#[test]
fn runs_are_reproducible() {
    let p = desk(13, 1.0);
    let config = TwoTimescaleConfig::new(0.05, 0.1, 10, 10, 5).unwrap();
    let a = run_greedy_gq_ensemble(&p, &config, &RunInit::zeros(4), &[3, 4]).unwrap();
    let b = run_greedy_gq_ensemble(&p, &config, &RunInit::zeros(4), &[3, 4]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn tripped_guard_projects_parameters() {
    let p = desk(14, 1.0).with_guard(RatioGuard { rho_max: 1.0, radius: 0.05 });
    let config = TwoTimescaleConfig::new(0.5, 0.5, 20, 30, 5).unwrap();
    let trace = run_greedy_gq(&p, &config, &RunInit::zeros(4)).unwrap();
    assert_eq!(trace.events.len(), 1);
    assert!(trace.theta_final.norm() <= 0.05 + 1e-15);
}

#[test]
fn missing_behavior_support_is_rejected() {
    let mdp = random_garnet(3, 2, 2, 1, 0.9).unwrap();
    let behavior = PolicyTable::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
    let f = StateActionFeatureMap::random(3, 2, 2, 1).unwrap();
    assert!(matches!(GreedyGqProblem::new(mdp, behavior, f, 1.0), Err(crate::Error::Support { state: 0, action: 1 })));
}

#[test]
fn probe_constants_are_consistent() {
    let p = desk(15, 1.0);
    let c = GqConstants::estimate(&p, 200, 1).unwrap();
    assert!((c.lambda2 - p.sigma.symmetric_eigen().eigenvalues.min()).abs() <= 1e-12);
    assert!(c.rho_max >= 1.0 && c.rho_max <= 2.0);
    assert!(c.lambda1 >= c.lambda1_literal);
    assert!(c.l_j > 0.0);
    assert_eq!(c.probes, 201);
}

#[test]
fn unit_constants_by_hand() {
    let c = Theorem3Constants::all_ones(1.0, 0.5);
    assert_eq!(compute_c2(&c), 1088.0);
    let (alpha, beta, alpha_terms, beta_terms) = theorem3_stepsizes(&c);
    assert_eq!(beta_terms, vec![0.25, 8.0]);
    assert_eq!(beta, 0.25);
    let expect = [0.125, 0.25 / (8.0 * 2f64.sqrt()), 0.0625 / 5312.0];
    for (a, e) in alpha_terms.iter().zip(expect) {
        assert!((a - e).abs() <= 1e-15 * e);
    }
    assert_eq!(alpha, expect[2]);
    let c1 = 1088.0 + 192.0 / 0.25 * 5.0 * (32.0 * alpha * alpha / 0.25 + 0.5 + 0.125);
    assert!((compute_c1(&c, alpha, beta) - c1).abs() <= 1e-12 * c1);
    let riskier = Theorem3Constants { rho_max: 2.0, ..c };
    assert!(compute_c1(&riskier, alpha, beta) > compute_c1(&c, alpha, beta));
}

#[test]
fn calculator_samples_scale_inverse_square() {
    let c = Theorem3Constants::all_ones(1.0, 0.5);
    // Below ε ≈ 6e-5 the accuracy term, not the fixed lower bound, sets M.
    let (x, y): (Vec<f64>, Vec<f64>) = [1e-6f64, 3e-7, 1e-7, 3e-8, 1e-8]
        .iter()
        .map(|&e| ((1.0 / e).ln(), theorem3_plan(&c, 1.0, 1.0, e, &ResourceCap::unbounded()).unwrap().samples.ln()))
        .unzip();
    let (slope, _, _) = crate::linalg::linear_fit(&x, &y);
    assert!((1.9..=2.1).contains(&slope), "slope {slope}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn policy_rows_are_distributions(seed in 0u64..500, scale in 0.0f64..5.0, tau in 0.01f64..20.0) {
        let f = StateActionFeatureMap::random(4, 3, 3, seed).unwrap();
        let mut rng = stream_rng(seed, 9);
        let theta = random_theta(3, scale.max(1e-3), &mut rng);
        let pi = softmax_policy(&f, &theta, tau).unwrap();
        for s in 0..4 {
            prop_assert!((pi.row(s).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn objective_is_nonnegative(seed in 0u64..5, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let p = desk(seed + 30, 1.0);
        let theta = DVector::from_vec(vec![a, b, b - a, a / 2.0]);
        prop_assert!(gq_objective(&p, &theta).unwrap() >= 0.0);
    }
}
