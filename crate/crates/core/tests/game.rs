use ellipticfund::game::{
    build_isaacs_from_controls, classify_recurrence, estimate_hit_prob, optimal_feedback_policy, radial_hessian,
    recover_exponent_scaling, value_operator, Convention, FeedbackPolicy, GameSpec, Player, Recurrence, SimConfig,
};
use ellipticfund::radial::{exponent_rotinv, xi_radial, PucciSign};
use ellipticfund::{EllipticityPair, Error, OperatorSpec, SymMatrix};
use proptest::prelude::*;

fn pair12() -> EllipticityPair {
    EllipticityPair::new(1.0, 2.0).unwrap()
}

fn passive() -> (FeedbackPolicy, FeedbackPolicy) {
    (FeedbackPolicy::fixed(Player::One, 0), FeedbackPolicy::fixed(Player::Two, 0))
}

/// `(Φ(x) − Φ(R))/(Φ(r) − Φ(R))` for radial `Φ = ξ_α`.
fn radial_value(alpha: f64, r: f64, big_r: f64, x: f64) -> f64 {
    (xi_radial(alpha, x) - xi_radial(alpha, big_r)) / (xi_radial(alpha, r) - xi_radial(alpha, big_r))
}

fn pucci_escape() -> (GameSpec, FeedbackPolicy, FeedbackPolicy) {
    let game = GameSpec::pucci(PucciSign::Plus, pair12(), 2, 64).unwrap();
    let escape = optimal_feedback_policy(&game, radial_hessian(1.0, 2), Player::Two);
    (game, FeedbackPolicy::fixed(Player::One, 0), escape)
}

#[test]
fn brownian_exit_probability_in_three_dimensions() {
    let game = GameSpec::brownian(3).unwrap();
    let (p1, p2) = passive();
    let cfg = SimConfig::new(&game, 0.25, 1.0, vec![0.0, 0.5, 0.0], 100_000, 2024).unwrap();
    let s = estimate_hit_prob(&game, &p1, &p2, &cfg).unwrap();
    let exact = radial_value(1.0, 0.25, 1.0, 0.5);
    assert!((exact - 1.0 / 3.0).abs() < 1e-15);
    assert!((s.p_hat - exact).abs() <= 3.0 * s.stderr, "{s:?}");
    assert_eq!(s.n_timeout, 0);
}

#[test]
fn pucci_escape_game_matches_radial_value() {
    let (game, p1, p2) = pucci_escape();
    let cfg = SimConfig::new(&game, 0.25, 1.0, vec![0.5, 0.0], 20_000, 99).unwrap();
    let s = estimate_hit_prob(&game, &p1, &p2, &cfg).unwrap();
    let exact = radial_value(1.0, 0.25, 1.0, 0.5);
    assert!((exact - 1.0 / 3.0).abs() < 1e-15);
    assert!((s.p_hat - exact).abs() <= 3.0 * s.stderr + 0.01, "{s:?}");
}

#[test]
fn value_bounds_hold_for_optimal_and_suboptimal_escape() {
    // radial Φ has m = M, so the two bounds meet at the radial value; any
    // suboptimal escape policy can only raise the hitting probability
    let (game, p1, optimal) = pucci_escape();
    let x0 = 0.6;
    let bound = radial_value(1.0, 0.25, 1.0, x0);
    let cfg = SimConfig::new(&game, 0.25, 1.0, vec![0.0, x0], 10_000, 5).unwrap();
    let s = estimate_hit_prob(&game, &p1, &optimal, &cfg).unwrap();
    assert!((s.p_hat - bound).abs() <= 3.0 * s.stderr + 0.01, "{s:?} vs {bound}");
    for fixed in [0, 1, 2, 20] {
        let s = estimate_hit_prob(&game, &p1, &FeedbackPolicy::fixed(Player::Two, fixed), &cfg).unwrap();
        assert!(s.p_hat >= bound - 3.0 * s.stderr, "control {fixed}: {s:?} vs {bound}");
    }
}

#[test]
fn hitting_probability_decreases_along_a_ray() {
    let game = GameSpec::brownian(3).unwrap();
    let (p1, p2) = passive();
    let stats: Vec<_> = [0.4, 0.6, 0.8]
        .iter()
        .map(|&x| {
            let cfg = SimConfig::new(&game, 0.25, 1.0, vec![x, 0.0, 0.0], 5_000, 17).unwrap();
            estimate_hit_prob(&game, &p1, &p2, &cfg).unwrap()
        })
        .collect();
    for w in stats.windows(2) {
        assert!(w[1].p_hat <= w[0].p_hat + 3.0 * w[0].stderr.max(w[1].stderr));
    }
}

#[test]
fn halving_dt_base_stays_within_two_standard_errors() {
    let game = GameSpec::brownian(3).unwrap();
    let (p1, p2) = passive();
    let cfg = SimConfig::new(&game, 0.25, 1.0, vec![0.5, 0.0, 0.0], 20_000, 3).unwrap();
    let coarse = estimate_hit_prob(&game, &p1, &p2, &cfg).unwrap();
    let fine = estimate_hit_prob(&game, &p1, &p2, &SimConfig { dt_base: cfg.dt_base / 2.0, ..cfg.clone() }).unwrap();
    assert!((coarse.p_hat - fine.p_hat).abs() <= 2.0 * coarse.stderr, "{coarse:?} {fine:?}");
}

#[test]
fn stats_do_not_depend_on_thread_count() {
    let (game, p1, p2) = pucci_escape();
    let cfg = SimConfig::new(&game, 0.25, 1.0, vec![0.5, 0.0], 400, 8).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| serde_json::to_string(&estimate_hit_prob(&game, &p1, &p2, &cfg).unwrap()).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn brownian_scaling_recovers_n_minus_two() {
    let game = GameSpec::brownian(3).unwrap();
    let (p1, p2) = passive();
    // R = 4 keeps the finite-R curvature of log p (slope 1 + r/(R − r)) small
    let x0 = [0.5, 0.0, 0.0];
    let tpl = SimConfig::new(&game, 0.2, 4.0, x0.to_vec(), 10_000, 40).unwrap();
    let fit = recover_exponent_scaling(&game, &p1, &p2, &[0.2, 0.1, 0.05, 0.025], 4.0, &x0, &tpl).unwrap();
    assert!((fit.slope - 1.0).abs() <= 0.1, "{fit:?}");
    assert_eq!(classify_recurrence(fit.slope, 0.1), Recurrence::Transient);
}

#[test]
fn pucci_scaling_recovers_the_exponent() {
    let (game, p1, p2) = pucci_escape();
    let x0 = [0.5, 0.0];
    let tpl = SimConfig::new(&game, 0.2, 4.0, x0.to_vec(), 4_000, 41).unwrap();
    let fit = recover_exponent_scaling(&game, &p1, &p2, &[0.2, 0.1, 0.05, 0.025], 4.0, &x0, &tpl).unwrap();
    let alpha = exponent_rotinv(&OperatorSpec::pucci_plus(pair12(), 2).unwrap()).unwrap().alpha_star;
    assert!((fit.slope - alpha).abs() <= 0.1 * alpha, "{fit:?}");
}

#[test]
fn planar_brownian_is_not_a_power_law() {
    let game = GameSpec::brownian(2).unwrap();
    let (p1, p2) = passive();
    let x0 = [0.5, 0.0];
    let tpl = SimConfig::new(&game, 0.2, 1.0, x0.to_vec(), 20_000, 42).unwrap();
    let err = recover_exponent_scaling(&game, &p1, &p2, &[0.2, 0.1, 0.05, 0.025], 1.0, &x0, &tpl);
    assert!(matches!(err, Err(Error::NotPowerLaw(_))), "{err:?}");
}

#[test]
fn deep_ladder_is_reported() {
    let game = GameSpec::brownian(3).unwrap();
    let (p1, p2) = passive();
    let x0 = [0.5, 0.0, 0.0];
    let tpl = SimConfig::new(&game, 0.1, 1.0, x0.to_vec(), 100, 1).unwrap();
    let err = recover_exponent_scaling(&game, &p1, &p2, &[0.1, 1e-3, 1e-5], 1.0, &x0, &tpl);
    assert!(matches!(err, Err(Error::LadderTooDeep { radius }) if radius < 0.1), "{err:?}");
}

#[test]
fn recurrence_follows_dimension_for_brownian_motion() {
    for (n, expected) in [(2, Recurrence::NeighborhoodRecurrent), (3, Recurrence::Transient), (5, Recurrence::Transient)] {
        let alpha = exponent_rotinv(&OperatorSpec::laplacian(n).unwrap()).unwrap().alpha_star;
        assert_eq!(classify_recurrence(alpha, 1e-9), expected, "n = {n}");
    }
    let alpha = exponent_rotinv(&OperatorSpec::pucci_minus(pair12(), 2).unwrap()).unwrap().alpha_star;
    assert_eq!(classify_recurrence(alpha, 1e-9), Recurrence::StronglyRecurrent);
}

#[test]
fn brownian_game_operator_is_the_laplacian() {
    let game = GameSpec::brownian(4).unwrap();
    let f = build_isaacs_from_controls(&game, Convention::Upper).unwrap();
    let g = value_operator(&game, Convention::Lower).unwrap();
    let m = SymMatrix::from_fn(4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
    assert!((f.eval(&m).unwrap() + m.trace()).abs() < 1e-12);
    assert!((g.eval(&m).unwrap() + m.trace()).abs() < 1e-12);
}

fn matrix_in_band() -> impl Strategy<Value = SymMatrix> {
    // λ = 1, Λ = 2: diag in [1.2, 1.8], off-diagonal |b| ≤ 0.2
    (1.2..1.8f64, -0.2..0.2f64, 1.2..1.8f64).prop_map(|(a, b, c)| SymMatrix::new2(a, b, c))
}

fn test_matrix() -> impl Strategy<Value = SymMatrix> {
    (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64).prop_map(|(a, b, c)| SymMatrix::new2(a, b, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conventions_coincide_with_a_singleton_player(
        family in prop::collection::vec(matrix_in_band(), 1..6),
        m in test_matrix(),
        singleton_a in any::<bool>(),
    ) {
        let diffusion = if singleton_a { vec![family] } else { family.into_iter().map(|d| vec![d]).collect() };
        let game = GameSpec::from_diffusions(diffusion, pair12()).unwrap();
        let upper = build_isaacs_from_controls(&game, Convention::Upper).unwrap();
        let lower = build_isaacs_from_controls(&game, Convention::Lower).unwrap();
        prop_assert!((upper.eval(&m).unwrap() - lower.eval(&m).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn upper_is_below_lower(
        grid in prop::collection::vec(prop::collection::vec(matrix_in_band(), 3), 1..4),
        m in test_matrix(),
    ) {
        let game = GameSpec::from_diffusions(grid, pair12()).unwrap();
        let upper = build_isaacs_from_controls(&game, Convention::Upper).unwrap();
        let lower = build_isaacs_from_controls(&game, Convention::Lower).unwrap();
        prop_assert!(upper.eval(&m).unwrap() <= lower.eval(&m).unwrap() + 1e-12);
    }
}
