use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::mdp::{random_garnet, stationary_transitions, value_function_exact, MixingEstimate};
use crate::rng::stream_rng;
use crate::schedule::ResourceCap;

fn random_problem(seed: u64, n: usize, d: usize) -> LinearTdcProblem {
    let mdp = random_garnet(n, 2, 3, seed, 0.9).unwrap();
    let behavior = PolicyTable::random(n, 2, 0.5, &mut stream_rng(seed, 20));
    let target = PolicyTable::random(n, 2, 0.5, &mut stream_rng(seed, 21));
    let features = LinearFeatureMap::random(n, d, seed).unwrap();
    LinearTdcProblem::new(mdp, behavior, target, features).unwrap()
}

fn random_vector(d: usize, scale: f64, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| scale * (2.0 * rng.gen::<f64>() - 1.0))
}

/// Running mean and standard error of a vector-valued sample.
struct Moments {
    sum: DVector<f64>,
    sum_sq: DVector<f64>,
    n: f64,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self { sum: DVector::zeros(len), sum_sq: DVector::zeros(len), n: 0.0 }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.sum += x;
        self.sum_sq += x.component_mul(x);
        self.n += 1.0;
    }

    fn check(&self, expected: &DVector<f64>, sigmas: f64) {
        for i in 0..expected.len() {
            let mean = self.sum[i] / self.n;
            let var = (self.sum_sq[i] / self.n - mean * mean).max(0.0);
            let se = (var / self.n).sqrt();
            assert!((mean - expected[i]).abs() <= sigmas * se + 1e-12, "entry {i}: {mean} vs {} (se {se})", expected[i]);
        }
    }
}

#[test]
fn tabular_on_policy_recovers_value_function() {
    let mdp = random_garnet(6, 2, 3, 3, 0.9).unwrap();
    let policy = PolicyTable::random(6, 2, 0.3, &mut stream_rng(3, 20));
    let scale = 0.5;
    let features = LinearFeatureMap::new(DMatrix::identity(6, 6) * scale).unwrap();
    let exact = build_linear_exact(&mdp, &policy, &policy, &features).unwrap();
    let v = value_function_exact(&mdp, &policy).unwrap();
    assert!((features.matrix() * &exact.theta_star - v).amax() <= 1e-8);
    assert_eq!(exact.rho_max, 1.0);
}

#[test]
fn zero_rewards_give_zero_solution() {
    let p = random_problem(4, 8, 3);
    let exact = build_linear_exact(&p.mdp.with_zero_rewards(), &p.behavior, &p.target, &p.features).unwrap();
    assert_eq!(exact.b.amax(), 0.0);
    assert_eq!(exact.theta_star.amax(), 0.0);
    let zero = DVector::zeros(3);
    assert_eq!(mspbe(&exact, &zero), 0.0);
    assert_eq!(w_of_theta(&exact, &zero).amax(), 0.0);
}

#[test]
fn exact_invariants_hold() {
    for seed in 0..5 {
        let ex = random_problem(seed, 10, 4).exact;
        assert!((&ex.a * &ex.theta_star + &ex.b).amax() <= 1e-10);
        assert!((&ex.sigma + &ex.c).amax() == 0.0);
        assert!(ex.sigma.clone().symmetric_eigenvalues().min() >= ex.lambda2 - 1e-10);
        assert!(ex.r_theta >= ex.theta_star.norm());
        assert!(ex.lambda1 > 0.0 && ex.lambda1 <= ex.lambda1_literal);
        assert!(ex.lambda2 <= ex.lambda2_literal);
    }
}

#[test]
fn matrices_match_stationary_sample_averages() {
    let p = random_problem(10, 10, 4);
    let ex = &p.exact;
    let gamma = p.mdp.gamma();
    let mu: Vec<f64> = ex.mu.iter().copied().collect();
    let mut moments = Moments::new(20);
    let mut x = DVector::zeros(20);
    for chunk in 0..10u64 {
        for t in stationary_transitions(&p.mdp, &p.behavior, &mu, 1_000_000, 500 + chunk).unwrap() {
            let rho = p.ratios.get(t.s, t.a).unwrap();
            let phi = p.features.phi(t.s);
            let diff = p.features.phi(t.s_next) * gamma - phi;
            for i in 0..4 {
                for j in 0..4 {
                    x[i * 4 + j] = rho * phi[i] * diff[j];
                }
                x[16 + i] = rho * t.r * phi[i];
            }
            moments.push(&x);
        }
    }
    let expected = DVector::from_fn(20, |k, _| if k < 16 { ex.a[(k / 4, k % 4)] } else { ex.b[k - 16] });
    moments.check(&expected, 3.0);
}

/// ‖Π(T^π v − v)‖²_μ with the projection built from a QR factorisation of D^{1/2}Φ.
fn projected_bellman_error(p: &LinearTdcProblem, theta: &DVector<f64>) -> f64 {
    let n = p.mdp.n_states();
    let v = p.features.matrix() * theta;
    let chain = crate::mdp::induced_chain(&p.mdp, &p.target).unwrap();
    let bellman = p.mdp.policy_reward(&p.target).unwrap() + chain * &v * p.mdp.gamma() - &v;
    let root = DVector::from_fn(n, |s, _| p.exact.mu[s].sqrt());
    let x = DMatrix::from_fn(n, p.features.dim(), |s, j| root[s] * p.features.matrix()[(s, j)]);
    let y = bellman.component_mul(&root);
    let q = x.qr().q();
    (&q * (q.transpose() * y)).norm_squared()
}

#[test]
fn objective_matches_explicit_projection() {
    let mut rng = stream_rng(1, 30);
    for seed in 0..4 {
        let p = random_problem(seed, 10, 4);
        assert!(mspbe(&p.exact, &p.exact.theta_star) <= 1e-20);
        for _ in 0..5 {
            let theta = random_vector(4, 5.0, &mut rng);
            let oracle = projected_bellman_error(&p, &theta);
            assert!((mspbe(&p.exact, &theta) - oracle).abs() <= 1e-10 * oracle.max(1.0));
        }
    }
}

#[test]
fn tracking_target_solves_normal_equation() {
    let mut rng = stream_rng(2, 30);
    let p = random_problem(5, 10, 4);
    let ex = &p.exact;
    assert!(w_of_theta(ex, &ex.theta_star).amax() <= 1e-10);
    for _ in 0..10 {
        let theta = random_vector(4, 5.0, &mut rng);
        let w = w_of_theta(ex, &theta);
        assert!((&ex.sigma * w - ex.residual(&theta)).amax() <= 1e-10);
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = stream_rng(3, 30);
    let p = random_problem(6, 10, 4);
    let ex = &p.exact;
    assert!(tdc_gradient(ex, &ex.theta_star).amax() <= 1e-10);
    let h = 1e-5;
    for _ in 0..20 {
        let theta = random_vector(4, 5.0, &mut rng);
        let grad = mspbe_gradient(ex, &theta);
        let fd = DVector::from_fn(4, |i, _| {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[i] += h;
            down[i] -= h;
            (mspbe(ex, &up) - mspbe(ex, &down)) / (2.0 * h)
        });
        assert!((&grad - &fd).norm() <= 1e-6 * grad.norm().max(1e-3), "{grad} vs {fd}");
        assert!((&grad + tdc_gradient(ex, &theta) * 2.0).amax() == 0.0);
    }
}

#[test]
fn single_state_gradient_is_scalar_linear() {
    let (c, gamma, r) = (0.8, 0.9, 1.5);
    let mdp = MdpModel::new(1, 1, vec![1.0], vec![r], gamma).unwrap();
    let policy = PolicyTable::uniform(1, 1);
    let features = LinearFeatureMap::new(DMatrix::from_element(1, 1, c)).unwrap();
    let ex = build_linear_exact(&mdp, &policy, &policy, &features).unwrap();
    let theta_star = r / (c * (1.0 - gamma));
    assert!((ex.theta_star[0] - theta_star).abs() <= 1e-12);
    let slope = 2.0 * (c * c * (gamma - 1.0)).powi(2) / (c * c);
    for theta in [-3.0, 0.0, 1.0, 10.0] {
        let g = mspbe_gradient(&ex, &DVector::from_element(1, theta))[0];
        assert!((g - slope * (theta - theta_star)).abs() <= 1e-12 * (1.0 + g.abs()));
    }
}

fn hand_fixture() -> (LinearFeatureMap, RatioTable) {
    let features = LinearFeatureMap::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
    let target = PolicyTable::uniform(3, 2);
    let behavior = PolicyTable::from_rows(&vec![vec![0.25, 0.75]; 3]).unwrap();
    (features, RatioTable::new(&target, &behavior))
}

#[test]
fn zero_stepsizes_leave_iterates_unchanged() {
    let (features, ratios) = hand_fixture();
    let theta = DVector::from_vec(vec![1.0, 2.0]);
    let w = DVector::from_vec(vec![0.5, -1.0]);
    let batch = [Transition { s: 0, a: 0, r: 1.0, s_next: 1, a_next: 1 }, Transition { s: 1, a: 1, r: -1.0, s_next: 2, a_next: 0 }];
    let (t2, w2) = linear_tdc_step(&theta, &w, &batch, 0.0, 0.0, &features, &ratios, 0.9).unwrap();
    assert_eq!((t2, w2), (theta, w));
}

#[test]
fn single_sample_step_matches_hand_arithmetic() {
    let (features, ratios) = hand_fixture();
    let theta = DVector::from_vec(vec![1.0, 2.0]);
    let w = DVector::from_vec(vec![0.5, -1.0]);
    let batch = [Transition { s: 0, a: 0, r: 1.0, s_next: 1, a_next: 1 }];
    // ρ = 2, δ = 1 + 0.9·1.5 − 1 = 1.35, φᵀw = 0.5.
    // w-direction (ρδ − φᵀw)φ = (2.2, 0); θ-direction ρδφ − ργ(φᵀw)φ' = (2.25, −0.45).
    let (t2, w2) = linear_tdc_step(&theta, &w, &batch, 0.1, 0.2, &features, &ratios, 0.9).unwrap();
    assert!((t2 - DVector::from_vec(vec![1.225, 1.955])).amax() <= 1e-15);
    assert!((w2 - DVector::from_vec(vec![0.94, -1.0])).amax() <= 1e-15);
}

#[test]
fn step_rejects_unsupported_actions_and_empty_batches() {
    let features = LinearFeatureMap::tabular(1);
    let ratios = RatioTable::new(&PolicyTable::uniform(1, 2), &PolicyTable::from_rows(&[vec![1.0, 0.0]]).unwrap());
    let z = DVector::zeros(1);
    let x = Transition { s: 0, a: 1, r: 0.0, s_next: 0, a_next: 0 };
    assert!(matches!(linear_tdc_step(&z, &z, &[x], 0.1, 0.1, &features, &ratios, 0.9), Err(Error::Support { .. })));
    assert!(linear_tdc_step(&z, &z, &[], 0.1, 0.1, &features, &ratios, 0.9).is_err());
}

#[test]
fn sampled_direction_is_unbiased_at_stationarity() {
    let p = random_problem(12, 10, 4);
    let ex = &p.exact;
    let gamma = p.mdp.gamma();
    let mut rng = stream_rng(4, 30);
    let theta = random_vector(4, 2.0, &mut rng);
    let w = random_vector(4, 2.0, &mut rng);
    let mu: Vec<f64> = ex.mu.iter().copied().collect();
    let mut moments = Moments::new(4);
    for x in stationary_transitions(&p.mdp, &p.behavior, &mu, 1_000_000, 99).unwrap() {
        let (dt, _) = linear_tdc_step(&theta, &w, &[x], 1.0, 1.0, &p.features, &p.ratios, gamma).unwrap();
        moments.push(&(dt - &theta));
    }
    moments.check(&(ex.residual(&theta) - &ex.b_mat * &w), 3.0);
}

#[test]
fn run_bookkeeping() {
    let p = random_problem(7, 10, 4);
    let init = RunInit::zeros(4);
    let empty = run_linear_tdc(&p, &TwoTimescaleConfig::new(0.01, 0.1, 5, 0, 1).unwrap(), &init).unwrap();
    assert_eq!(empty.records.len(), 1);
    assert_eq!(empty.theta_final, init.theta);

    let cfg = TwoTimescaleConfig::new(0.01, 0.1, 7, 30, 1).unwrap();
    let trace = run_linear_tdc(&p, &cfg, &init).unwrap();
    assert_eq!(trace.records.len(), 31);
    for (t, rec) in trace.records.iter().enumerate() {
        assert_eq!(rec.t, t);
        assert_eq!(rec.samples, (t * 7) as u64);
    }
    assert_eq!(trace, run_linear_tdc(&p, &cfg, &init).unwrap());
    assert_ne!(trace.theta_final, run_linear_tdc(&p, &cfg.with_seed(2), &init).unwrap().theta_final);
    let ensemble = run_linear_ensemble(&p, &cfg, &init, &[1, 2]).unwrap();
    assert_eq!(ensemble[0], trace);
}

#[test]
fn zero_reward_run_stays_at_origin() {
    let p = random_problem(8, 10, 4);
    let zero = LinearTdcProblem::new(p.mdp.with_zero_rewards(), p.behavior, p.target, p.features).unwrap();
    let trace = run_linear_tdc(&zero, &TwoTimescaleConfig::new(0.05, 0.1, 10, 50, 3).unwrap(), &RunInit::zeros(4)).unwrap();
    assert!(trace.records.iter().all(|r| r.theta_err_sq == Some(0.0) && r.tracking_err_sq == 0.0));
    assert_eq!(trace.theta_final.amax(), 0.0);
}

fn half_constants() -> Theorem1Constants {
    Theorem1Constants { lambda1: 0.5, lambda2: 0.5, rho_max: 1.0, r_max: 1.0, r_theta: 2.0, kappa: 1.0, rho: 0.5 }
}

#[test]
fn fast_stepsize_example() {
    let (_, beta, _, beta_terms) = theorem1_stepsizes(&half_constants());
    assert_eq!(beta_terms, vec![0.25, 0.125]);
    assert_eq!(beta, 0.125);
}

#[test]
fn slow_stepsize_is_minimum_of_six_terms() {
    let c = half_constants();
    let (alpha, beta, terms, _) = theorem1_stepsizes(&c);
    let hand = [
        1.0 / 4.0,
        0.25 / 12.0,
        (0.5f64 * beta).sqrt() / (4.0 * 6f64.sqrt()),
        0.5 * 0.5f64.sqrt() * beta / 16.0,
        0.25 * beta / 64.0,
        0.125 * beta / 768.0,
    ];
    assert_eq!(terms.len(), 6);
    for (a, b) in terms.iter().zip(hand) {
        assert!((a - b).abs() <= 1e-15 * b);
    }
    assert_eq!(alpha, 0.125 * 0.125 / 768.0);
}

#[test]
fn a1_hand_evaluation() {
    let ones = Theorem1Constants { lambda1: 1.0, lambda2: 1.0, rho_max: 1.0, r_max: 1.0, r_theta: 1.0, kappa: 1.0, rho: 0.5 };
    // noise 4 + 1 = 5; rate 0.1; bracket 3.2 + 0.2 + 0.02 + 0.2 + 0.03 = 3.65; mixing 1/(1 − 0.5) = 2.
    assert!((compute_a1(&ones, 0.1, 0.1) - 256.0 * 5.0 / 0.1 * 3.65 * 2.0).abs() <= 1e-9);
}

#[test]
fn a1_monotone_in_mixing_and_finite_at_fast_mixing() {
    let c = half_constants();
    let base = compute_a1(&c, 0.01, 0.1);
    assert!(compute_a1(&Theorem1Constants { kappa: 2.0, ..c }, 0.01, 0.1) > base);
    assert!(compute_a1(&Theorem1Constants { rho: 0.6, ..c }, 0.01, 0.1) > base);
    let fast = compute_a1(&Theorem1Constants { rho: 1e-12, ..c }, 0.01, 0.1);
    let mixing_free = compute_a1(&Theorem1Constants { rho: 0.0, ..c }, 0.01, 0.1);
    assert!(fast.is_finite() && (fast - mixing_free).abs() <= 1e-9 * mixing_free);
    assert!((base / mixing_free - 2.0).abs() <= 1e-12);
}

#[test]
fn halving_accuracy_doubles_batch() {
    let c = half_constants();
    let cap = ResourceCap::unbounded();
    let a = theorem1_plan(&c, 1.0, 1e-2, &cap).unwrap();
    let b = theorem1_plan(&c, 1.0, 5e-3, &cap).unwrap();
    assert!(a.batch_for_accuracy > a.batch_lower_bound);
    assert!((b.batch_size / a.batch_size - 2.0).abs() <= 1e-6);
    assert!(b.iterations > a.iterations);
}

#[test]
fn calculator_sample_count_scales_as_inverse_accuracy() {
    let c = half_constants();
    let eps = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for e in eps {
        let plan = theorem1_plan(&c, 1.0, e, &ResourceCap::unbounded()).unwrap();
        x.push((1.0 / e).ln());
        y.push(plan.samples.ln());
    }
    let (slope, _, _) = crate::linalg::linear_fit(&x, &y);
    assert!((0.9..=1.4).contains(&slope), "slope {slope}");
}

#[test]
fn calculator_rejects_bad_targets_and_caps() {
    let c = half_constants();
    assert!(theorem1_plan(&c, 1.0, 0.0, &ResourceCap::unbounded()).is_err());
    let tight = ResourceCap { max_batch: 10.0, max_samples: 1e3 };
    assert!(matches!(theorem1_plan(&c, 1.0, 1e-3, &tight), Err(Error::ResourceCap(_))));
}

#[test]
fn config_for_concrete_problem_uses_exact_initial_gap() {
    let p = random_problem(9, 10, 4);
    let init = RunInit::zeros(4);
    let mixing = MixingEstimate::from_constants(1.0, 0.5);
    let plan = theorem1_config(&p.exact, &mixing, 1e-2, &init, &ResourceCap::unbounded()).unwrap();
    let delta0 = p.exact.theta_star.norm_squared() + w_of_theta(&p.exact, &init.theta).norm_squared();
    assert!((plan.delta0 - delta0).abs() <= 1e-12 * delta0);
    assert!(plan.alpha <= plan.beta);
    assert_eq!(plan.constants.lambda1, p.exact.lambda1);
}

#[test]
fn tracking_coefficients_hand_values() {
    let ones = Theorem1Constants { lambda1: 1.0, lambda2: 1.0, rho_max: 1.0, r_max: 1.0, r_theta: 1.0, kappa: 1.0, rho: 0.5 };
    let tc = linear_tracking_coefficients(&ones, 0.01, 0.1, 10);
    // α²/(λ₂²β) = 1e-3.
    assert!((tc.contraction - (1.0 - 0.025 + 0.016)).abs() <= 1e-15);
    assert!((tc.coupling - (0.096 + 0.0025)).abs() <= 1e-15);
    assert!((tc.noise - 32.0 * 5.0 * (0.032 + 0.2 + 0.02) * 2.0 / 10.0).abs() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn objective_and_lyapunov_are_nonnegative(seed in 0u64..1_000, scale in 0.1f64..20.0) {
        let p = random_problem(seed % 7, 6, 3);
        let mut rng = stream_rng(seed, 31);
        let theta = random_vector(3, scale, &mut rng);
        let w = random_vector(3, scale, &mut rng);
        prop_assert!(mspbe(&p.exact, &theta) >= 0.0);
        prop_assert!(p.exact.lyapunov(&theta, &w) >= 0.0);
        let j = mspbe(&p.exact, &theta);
        let via_w = p.exact.residual(&theta).dot(&w_of_theta(&p.exact, &theta));
        prop_assert!((j - via_w).abs() <= 1e-9 * j.max(1.0));
    }
}
