use empirical_saddle::games::epsilon_nash_gap;
use empirical_saddle::geometry::{
    entropy_mirror_step, kl_project, project_euclidean, project_simplex, FeasibleSet, NormTag,
};
use empirical_saddle::linalg::{dist2_sq, dot};
use empirical_saddle::mdp::{make_random_ergodic_mdp, MdpInstance};
use empirical_saddle::problems::{
    make_bilinear_game, make_quadratic_scsc, draw_samples, empirical_objective, GameNorm, PayoffLaw, Regularizer,
    RegularizerKind, StochasticSaddleProblem,
};
use empirical_saddle::rates::{fit_loglog_slope, write_csv_rows, RateRow};
use empirical_saddle::rng::derive_seed;
use empirical_saddle::runner::ExperimentConfig;
use empirical_saddle::solver::{solve_saddle, SolverConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn vec_in(len: std::ops::Range<usize>, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, len)
}

fn in_simplex(p: &[f64]) -> bool {
    p.iter().all(|v| *v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-12
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simplex_projection_is_feasible_idempotent_and_nearest(z in vec_in(1..10, 5.0), seed in any::<u64>()) {
        let p = project_simplex(&z);
        prop_assert!(in_simplex(&p));
        let pp = project_simplex(&p);
        prop_assert!(dist2_sq(&p, &pp) < 1e-24);
        let set = FeasibleSet::simplex(z.len()).unwrap();
        let mut rng = empirical_saddle::rng::stream(seed);
        for _ in 0..20 {
            let q = set.sample_point(&mut rng);
            prop_assert!(dist2_sq(&z, &p) <= dist2_sq(&z, &q) + 1e-12);
        }
    }

    #[test]
    fn box_projection_is_nonexpansive(a in vec_in(3..4, 4.0), b in vec_in(3..4, 4.0), r in 0.1f64..3.0) {
        let set = FeasibleSet::linf_box(3, r).unwrap();
        let pa = project_euclidean(&set, &a).unwrap();
        let pb = project_euclidean(&set, &b).unwrap();
        prop_assert!(set.contains(&pa, 0.0));
        prop_assert!(dist2_sq(&pa, &pb) <= dist2_sq(&a, &b) + 1e-15);
    }

    #[test]
    fn occupancy_projections_land_in_the_set(z in vec_in(6..7, 3.0), lo in 0.05f64..0.3, hi in 0.34f64..0.9) {
        let set = FeasibleSet::occupancy(3, 2, lo, hi).unwrap();
        let p = project_euclidean(&set, &z).unwrap();
        prop_assert!(set.contains(&p, 1e-9));
        let k = kl_project(&set, &z).unwrap();
        prop_assert!(set.contains(&k, 1e-9));
        prop_assert!(k.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn entropy_step_stays_in_simplex(z in vec_in(2..8, 1.0), g in vec_in(8..9, 10.0), eta in 0.001f64..5.0) {
        let p: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let s: f64 = p.iter().sum();
        let p: Vec<f64> = p.iter().map(|v| v / s).collect();
        let q = entropy_mirror_step(&p, &g[..p.len()], eta).unwrap();
        prop_assert!(in_simplex(&q));
    }

    #[test]
    fn dual_norm_pairing(v in vec_in(1..8, 3.0), u in vec_in(8..9, 3.0)) {
        for norm in [NormTag::EuclideanL2, NormTag::SumL1, NormTag::MaxLinf] {
            let u = &u[..v.len()];
            prop_assert!(dot(u, &v) <= norm.norm(u) * norm.dual_norm(&v) + 1e-12);
            let m = norm.dual_maximizer(&v);
            prop_assert!(norm.norm(&m) <= 1.0 + 1e-12);
            prop_assert!((dot(&m, &v) - norm.dual_norm(&v)).abs() < 1e-12);
        }
        prop_assert_eq!(NormTag::SumL1.dual(), NormTag::MaxLinf);
        prop_assert_eq!(NormTag::MaxLinf.dual(), NormTag::SumL1);
        prop_assert_eq!(NormTag::EuclideanL2.dual(), NormTag::EuclideanL2);
    }

    #[test]
    fn duality_gap_is_nonnegative_and_vanishes_at_the_solution(seed in 0u64..10_000, px in vec_in(2..3, 2.0), py in vec_in(3..4, 2.0)) {
        let c = DMatrix::from_fn(2, 3, |i, j| ((i * 3 + j) as f64 * 0.37 + seed as f64).sin());
        let p = make_quadratic_scsc(2, 3, c, 1.0, 0.5, 1.0, seed).unwrap().boxed(1.0, 1.0).unwrap();
        let obj = p.population_objective().unwrap();
        let x = project_euclidean(p.set_x(), &px).unwrap();
        let y = project_euclidean(p.set_y(), &py).unwrap();
        prop_assert!(obj.duality_gap(&x, &y).unwrap() >= -1e-12);
        let sol = solve_saddle(&obj, &SolverConfig::default().with_gap_tol(1e-10, false)).unwrap();
        prop_assert!(sol.converged);
        prop_assert!(obj.duality_gap(&sol.x_hat, &sol.y_hat).unwrap() <= 1e-10);
    }

    #[test]
    fn regularized_game_solutions_are_interior_and_certified(seed in 0u64..10_000, n in 5usize..60) {
        let game = make_bilinear_game(3, 4, PayoffLaw::Sign, seed).unwrap();
        let samples = draw_samples(&game, n, seed);
        let reg = Regularizer::new(RegularizerKind::EntropyEntropy, 0.1, 0.1, 1.0).unwrap();
        let obj = empirical_objective(&game, &samples, reg).unwrap().objective;
        let sol = solve_saddle(&obj, &SolverConfig::default().with_gap_tol(1e-9, false)).unwrap();
        prop_assert!(sol.converged);
        prop_assert!(sol.x_hat.iter().chain(&sol.y_hat).all(|v| *v > 0.0));
        let eps = epsilon_nash_gap(&game.a_bar, &sol.x_hat, &sol.y_hat).unwrap();
        prop_assert!(eps.player1_gain >= -1e-12 && eps.player2_gain >= -1e-12);
    }

    #[test]
    fn sampled_payoffs_stay_bounded(seed in any::<u64>(), half in 0.0f64..2.0) {
        let game = make_bilinear_game(3, 3, PayoffLaw::Uniform { half_width: half }, seed)
            .and_then(|g| g.with_norm(GameNorm::L2))
            .unwrap();
        for m in draw_samples(&game, 20, seed).data {
            prop_assert!(m.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn seed_derivation_is_stable_and_separates_keys(m in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        prop_assert_eq!(derive_seed(m, &[a, b]), derive_seed(m, &[a, b]));
        if a != b {
            prop_assert_ne!(derive_seed(m, &[a]), derive_seed(m, &[b]));
        }
    }

    #[test]
    fn loglog_fit_recovers_power_laws(c in 0.01f64..100.0, slope in -2.0f64..0.5) {
        let pts: Vec<(f64, f64)> = [16.0, 64.0, 256.0, 1024.0].iter().map(|n: &f64| (*n, c * n.powf(slope))).collect();
        let f = fit_loglog_slope(&pts).unwrap();
        prop_assert!((f.slope - slope).abs() < 1e-10);
        prop_assert!((f.intercept - c.ln()).abs() < 1e-9);
    }

    #[test]
    fn csv_values_round_trip_bit_for_bit(mean in any::<f64>().prop_filter("finite", |v| v.is_finite()), se in 0.0f64..1e3, bound in prop::option::of(0.0f64..10.0)) {
        let row = RateRow { n: 32, metric: "wgm".into(), mean, std_error: se, bound, replications: 7, seed: 3, residual: None };
        let mut out = Vec::new();
        write_csv_rows(std::slice::from_ref(&row), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        prop_assert_eq!(lines.next(), Some("n,metric,mean,std_error,bound,replications,seed"));
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        prop_assert_eq!(fields[2].parse::<f64>().unwrap().to_bits(), mean.to_bits());
        prop_assert_eq!(fields[3].parse::<f64>().unwrap().to_bits(), se.to_bits());
        match bound {
            Some(b) => prop_assert_eq!(fields[4].parse::<f64>().unwrap().to_bits(), b.to_bits()),
            None => prop_assert_eq!(fields[4], ""),
        }
    }

    #[test]
    fn mdp_text_round_trips(seed in any::<u64>(), s in 2usize..5, a in 1usize..4) {
        let mdp = make_random_ergodic_mdp(s, a, 0.01, seed).unwrap();
        let back = MdpInstance::from_text(&mdp.to_text()).unwrap();
        prop_assert_eq!(back, mdp);
    }

    #[test]
    fn quadratic_configs_round_trip(seed in any::<u64>(), dx in 1usize..4, mu in 0.1f64..5.0, noise in 0.0f64..2.0, reps in 2usize..500) {
        let text = format!(
            "master_seed = {seed}\nn_grid = [8, 16]\nreplications = {reps}\n[problem]\nfamily = \"quadratic\"\ndim_x = {dx}\ndim_y = 2\nmu_x = {mu:?}\nmu_y = 1.0\nnoise_scale = {noise:?}\ninstance_seed = {seed}\n"
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(again, cfg);
    }
}
