use std::fs;
use std::path::Path;
use std::time::Instant;

use empirical_saddle::games::{build_game_resp, nash_bound, run_game_experiment};
use empirical_saddle::geometry::FeasibleSet;
use empirical_saddle::linalg::dist2_sq;
use empirical_saddle::mdp::{
    build_mdp_resp, check_gradient_envelopes, estimate_mixing_constants, make_random_ergodic_mdp,
    run_mdp_experiment, solve_average_reward_exact, MdpProblem,
};
use empirical_saddle::metrics::{MetricKind, RegularizerRule};
use empirical_saddle::problems::{
    draw_samples, empirical_objective, make_bilinear_game, make_quadratic_scsc, BilinearGame, GameNorm,
    PayoffLaw, QuadraticProblem, Regularizer, RegularizerKind, SaddleObjective, StochasticSaddleProblem,
};
use empirical_saddle::rates::{fit_loglog_slope, run_rate_sweep, RateRow, RateSweep};
use empirical_saddle::rng::stream;
use empirical_saddle::runner::{run, ExperimentKind, RunOptions};
use empirical_saddle::solver::{solve_mirror_prox, solve_quadratic_closed_form, solve_saddle, SolverConfig};
use empirical_saddle::stability::{check_argmap_lipschitz, check_distance_lemma, check_primal_smoothness, run_loo_suite};
use nalgebra::DMatrix;
use rand::Rng;

type Outcome = Result<(bool, String), String>;

fn grid(lo: usize, hi: usize) -> Vec<usize> {
    let mut g = vec![lo];
    while *g.last().unwrap() < hi {
        g.push(g.last().unwrap() * 2);
    }
    g
}

fn tight(tol: f64) -> SolverConfig {
    SolverConfig::default().with_gap_tol(tol, false)
}

fn sweep_quadratic() -> QuadraticProblem {
    let coupling = DMatrix::from_row_slice(2, 2, &[0.3, -0.1, 0.2, 0.25]);
    QuadraticProblem::new(
        1.0,
        1.0,
        coupling,
        vec![0.4, -0.3],
        vec![-0.2, 0.5],
        1.0,
        FeasibleSet::unbounded(2),
        FeasibleSet::unbounded(2),
    )
    .and_then(|p| p.boxed(2.0, 2.0))
    .expect("valid quadratic")
}

fn joint_se(a: &RateRow, b: &RateRow) -> f64 {
    (a.std_error * a.std_error + b.std_error * b.std_error).sqrt()
}

fn slope_in(sweep: &RateSweep, metric: &str, floor: f64, lo: f64, hi: f64) -> (bool, String) {
    let f = sweep.fit(metric, floor);
    let ok = !f.degenerate && f.slope >= lo && f.slope <= hi;
    (ok, format!("{metric} slope {:.4} in [{lo}, {hi}] (r^2 {:.4})", f.slope, f.r_squared))
}

fn solver_matching_pennies() -> Outcome {
    let game = BilinearGame::new(
        DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]),
        PayoffLaw::Deterministic,
        GameNorm::L1,
    )
    .map_err(|e| e.to_string())?;
    let obj = game.population_objective().map_err(|e| e.to_string())?;
    let cfg = SolverConfig {
        max_iter: 5000,
        ..tight(1e-6)
    };
    let t = Instant::now();
    let sol = solve_saddle(&obj, &cfg).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let dev = sol
        .x_hat
        .iter()
        .chain(&sol.y_hat)
        .map(|v| (v - 0.5).abs())
        .fold(0.0, f64::max);
    let ok = sol.certified_gap <= 1e-6 && sol.iterations <= 5000 && dev <= 1e-3 && secs < 1.0;
    Ok((
        ok,
        format!(
            "gap {:.2e} after {} iterations, max deviation from uniform {dev:.2e}, {secs:.3} s",
            sol.certified_gap, sol.iterations
        ),
    ))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = stream(2);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let dx = rng.random_range(1..=5);
        let dy = rng.random_range(1..=5);
        let coupling = DMatrix::from_fn(dx, dy, |_, _| rng.random_range(-1.0..1.0));
        let (mx, my) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
        let p = make_quadratic_scsc(dx, dy, coupling, mx, my, 0.5, 1000 + k).map_err(|e| e.to_string())?;
        let obj = p.population_objective().map_err(|e| e.to_string())?;
        let closed = solve_quadratic_closed_form(&obj).map_err(|e| e.to_string())?;
        let cfg = SolverConfig {
            max_iter: 1_000_000,
            ..tight(1e-14)
        };
        let mp = solve_mirror_prox(&obj, &cfg).map_err(|e| e.to_string())?;
        if !mp.converged {
            return Ok((false, format!("instance {k} did not converge (gap {:.2e})", mp.certified_gap)));
        }
        let d = (dist2_sq(&mp.x_hat, &closed.x_hat) + dist2_sq(&mp.y_hat, &closed.y_hat)).sqrt();
        worst = worst.max(d);
    }
    Ok((worst <= 1e-6, format!("max L2 distance {worst:.2e} over 50 instances")))
}

/// Worst `|g - fd|_inf / max(|g|_inf, 1)` over both blocks. Steps shrink with
/// the coordinate so entropy terms near the boundary stay resolved.
fn fd_error(f: &dyn Fn(&[f64], &[f64]) -> f64, gx: &[f64], gy: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (block, g) in [(0, gx), (1, gy)] {
        let scale = g.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let base = if block == 0 { x } else { y };
        for i in 0..base.len() {
            let h = (1e-3 * base[i].abs()).clamp(1e-9, 1e-5);
            let mut plus = base.to_vec();
            let mut minus = base.to_vec();
            plus[i] += h;
            minus[i] -= h;
            let (fp, fm) = if block == 0 {
                (f(&plus, y), f(&minus, y))
            } else {
                (f(x, &plus), f(x, &minus))
            };
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max((g[i] - fd).abs() / scale);
        }
    }
    worst
}

fn check_family<P: StochasticSaddleProblem>(problem: &P, objective: &SaddleObjective, seed: u64) -> f64 {
    let mut rng = stream(seed);
    let data = draw_samples(problem, 1, seed ^ 0x5eed).data;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let x = problem.set_x().sample_point(&mut rng);
        let y = problem.set_y().sample_point(&mut rng);
        let d = &data[0];
        let e = fd_error(
            &|x: &[f64], y: &[f64]| problem.datum_value(d, x, y),
            &problem.datum_grad_x(d, &x, &y),
            &problem.datum_grad_y(d, &x, &y),
            &x,
            &y,
        );
        let r = fd_error(
            &|x, y| objective.value(x, y),
            &objective.grad_x(&x, &y),
            &objective.grad_y(&x, &y),
            &x,
            &y,
        );
        worst = worst.max(e).max(r);
    }
    worst
}

fn gradient_checks() -> Outcome {
    let e = |e: empirical_saddle::Error| e.to_string();
    let q = sweep_quadratic();
    let qs = draw_samples(&q, 20, 1);
    let qobj = empirical_objective(&q, &qs, Regularizer::new(RegularizerKind::QuadraticQuadratic, 0.3, 0.2, 1.0).map_err(e)?)
        .map_err(e)?
        .objective;
    let g = make_bilinear_game(4, 3, PayoffLaw::Uniform { half_width: 0.5 }, 8).map_err(e)?;
    let gobj = build_game_resp(&g, &draw_samples(&g, 20, 2)).map_err(e)?.objective;
    let mdp = make_random_ergodic_mdp(4, 2, 0.05, 5).map_err(e)?;
    let mixing = estimate_mixing_constants(&mdp, 0, 5).map_err(e)?;
    let m = MdpProblem::new(mdp, mixing, 0.1).map_err(e)?;
    let mobj = build_mdp_resp(&m, &draw_samples(&m, 20, 3)).map_err(e)?.objective;
    let errs = [check_family(&q, &qobj, 10), check_family(&g, &gobj, 11), check_family(&m, &mobj, 12)];
    let ok = errs.iter().all(|v| *v <= 1e-6);
    Ok((
        ok,
        format!(
            "max relative error quadratic {:.1e}, game {:.1e}, mdp {:.1e} (50 points each)",
            errs[0], errs[1], errs[2]
        ),
    ))
}

fn stability_lemmas() -> Outcome {
    let e = |e: empirical_saddle::Error| e.to_string();
    let cfg = tight(1e-13);
    let q = sweep_quadratic();
    let t1 = run_loo_suite(&q, 50, &Regularizer::none(), 200, 41, &cfg).map_err(e)?;
    let game = interior_game()?;
    let reg = RegularizerRule::Corollary.resolve(game.constants(), 50).map_err(e)?;
    let t3 = run_loo_suite(&game, 50, &reg, 200, 43, &cfg).map_err(e)?;
    let count = |ts: &[empirical_saddle::stability::StabilityTrial]| {
        let valid: Vec<_> = ts.iter().filter(|t| t.invalid.is_none()).collect();
        let bad = valid.iter().filter(|t| !t.passes()).count();
        let worst = valid.iter().map(|t| t.lhs / t.rhs).fold(0.0, f64::max);
        (valid.len(), bad, worst)
    };
    let (v1, b1, w1) = count(&t1);
    let (v3, b3, w3) = count(&t3);
    let ok = b1 == 0 && b3 == 0 && v1 == 200 && v3 == 200;
    Ok((
        ok,
        format!(
            "quadratic: {b1} violations in {v1} valid trials (max lhs/rhs {w1:.3}); regularized game: {b3} violations in {v3} valid trials (max lhs/rhs {w3:.3})"
        ),
    ))
}

fn theorem_sweep() -> Result<RateSweep, String> {
    let q = sweep_quadratic();
    run_rate_sweep(
        &q,
        "quadratic",
        &grid(16, 4096),
        200,
        &[MetricKind::Wgm, MetricKind::Sgm, MetricKind::D2],
        &RegularizerRule::None,
        &tight(1e-12),
        20240601,
    )
    .map_err(|e| e.to_string())
}

fn weak_rate(sweep: &RateSweep) -> Outcome {
    let (ok, msg) = slope_in(sweep, "wgm", 5e-12, -1.3, -0.75);
    let dom = sweep.bound_dominance("wgm", 3.0);
    Ok((ok && dom && sweep.aborted.is_none(), format!("{msg}; bound dominance {dom}")))
}

fn strong_rate(sweep: &RateSweep) -> Outcome {
    let (ok, msg) = slope_in(sweep, "sgm", 5e-12, -1.3, -0.75);
    let dom = sweep.bound_dominance("sgm", 3.0);
    Ok((ok && dom, format!("{msg}; bound dominance {dom}")))
}

fn metric_ordering(sweep: &RateSweep) -> Outcome {
    let mu = 1.0;
    let mut worst_first = f64::NEG_INFINITY;
    let mut worst_second = f64::NEG_INFINITY;
    let mut ok = true;
    for w in sweep.rows_for("wgm") {
        let s = sweep.rows_for("sgm").find(|r| r.n == w.n).ok_or("missing sgm row")?;
        let d = sweep.rows_for("d2").find(|r| r.n == w.n).ok_or("missing d2 row")?;
        let lhs = mu * d.mean / 2.0;
        let se_d = mu * d.std_error / 2.0;
        let first = lhs - (w.mean + 4.0 * (se_d * se_d + w.std_error * w.std_error).sqrt());
        let second = w.mean - (s.mean + 4.0 * joint_se(w, s));
        worst_first = worst_first.max(first / w.mean);
        worst_second = worst_second.max(second / w.mean);
        ok &= first <= 0.0 && second <= 0.0;
    }
    Ok((
        ok,
        format!("worst relative excess: mu D2/2 vs WGM {worst_first:.3}, WGM vs SGM {worst_second:.3} (<= 0 required)"),
    ))
}

fn interior_game() -> Result<BilinearGame, String> {
    let a = DMatrix::from_row_slice(3, 3, &[0.0, 0.8, -0.4, -0.6, 0.0, 0.6, 0.5, -0.7, 0.0]);
    BilinearGame::new(a, PayoffLaw::Uniform { half_width: 0.5 }, GameNorm::L2).map_err(|e| e.to_string())
}

fn corollary_rate() -> Outcome {
    let game = interior_game()?;
    let sweep = run_rate_sweep(
        &game,
        "game-l2",
        &grid(16, 4096),
        200,
        &[MetricKind::Wgm],
        &RegularizerRule::Corollary,
        &tight(1e-11),
        808,
    )
    .map_err(|e| e.to_string())?;
    let (ok, msg) = slope_in(&sweep, "wgm", 5e-11, -0.65, -0.35);
    let dom = sweep.bound_dominance("wgm", 3.0);
    Ok((ok && sweep.aborted.is_none(), format!("{msg}; bound dominance {dom}")))
}

fn unbounded_quadratic() -> Result<QuadraticProblem, String> {
    let coupling = DMatrix::from_row_slice(3, 2, &[0.5, -0.3, 0.2, 0.4, -0.6, 0.1]);
    make_quadratic_scsc(3, 2, coupling, 1.0, 0.7, 1.0, 77).map_err(|e| e.to_string())
}

fn unbounded_rates() -> Outcome {
    let e = |e: empirical_saddle::Error| e.to_string();
    let p = unbounded_quadratic()?;
    let ns = grid(16, 4096);
    let sweep = run_rate_sweep(&p, "unbounded", &ns, 200, &[MetricKind::D2], &RegularizerRule::None, &tight(1e-12), 91)
        .map_err(e)?;
    let (d2_ok, d2_msg) = slope_in(&sweep, "d2", 5e-12, -1.3, -0.75);
    let mut violations = 0;
    let mut moments = true;
    let mut centered = Vec::new();
    for &n in &ns {
        let r = check_distance_lemma(&p, n, 200, 92).map_err(e)?;
        violations += r.violations;
        moments &= r.moments_hold();
        centered.push((n as f64, r.centered_moment_x.0));
    }
    let fit = fit_loglog_slope(&centered).map_err(e)?;
    let c_ok = (fit.slope + 1.0).abs() <= 0.15;
    Ok((
        d2_ok && violations == 0 && moments && c_ok,
        format!(
            "{d2_msg}; {violations} pointwise distance violations over {} replications; second-moment bounds {}; centered gradient moment slope {:.4}",
            200 * ns.len(),
            if moments { "hold" } else { "fail" },
            fit.slope
        ),
    ))
}

fn argmap_and_smoothness() -> Outcome {
    let e = |e: empirical_saddle::Error| e.to_string();
    let p = unbounded_quadratic()?;
    let (ax, ay) = check_argmap_lipschitz(&p, 1000, 5).map_err(e)?;
    let (sf, sg) = check_primal_smoothness(&p, 1000, 6).map_err(e)?;
    let (bx, by) = check_argmap_lipschitz(&sweep_quadratic(), 1000, 7).map_err(e)?;
    let v = ax.violations + ay.violations + sf.violations + sg.violations + bx.violations + by.violations;
    Ok((
        v == 0,
        format!(
            "{v} violations; best-response ratios {:.4}/{:.4} (bounds {:.4}/{:.4}), smoothness ratios {:.4}/{:.4} (bounds {:.4}/{:.4})",
            ax.max_ratio, ay.max_ratio, ax.bound, ay.bound, sf.max_ratio, sg.max_ratio, sf.bound, sg.bound
        ),
    ))
}

fn mdp_regret() -> Outcome {
    let e = |e: empirical_saddle::Error| e.to_string();
    let mdp = make_random_ergodic_mdp(5, 2, 0.05, 11).map_err(e)?;
    let mixing = estimate_mixing_constants(&mdp, 200, 11).map_err(e)?;
    let problem = MdpProblem::new(mdp, mixing, 0.0).map_err(e)?;
    let exact = solve_average_reward_exact(&problem.mdp, 1e-12).map_err(e)?;
    let exp = run_mdp_experiment(&problem, &exact, &grid(64, 4096), 50, 11, &SolverConfig::default()).map_err(e)?;
    let fit = exp.sweep.fit("regret", 0.0);
    let rows: Vec<&RateRow> = exp.sweep.rows_for("regret").collect();
    let (first, last) = (rows[0], rows[rows.len() - 1]);
    let drop = first.mean - last.mean;
    let separated = drop > 3.0 * joint_se(first, last);
    let env = check_gradient_envelopes(&problem, 20, 2000, 11);
    let ok = !fit.degenerate
        && fit.slope <= -0.3
        && separated
        && exp.max_residual <= 1e-8
        && exp.sweep.aborted.is_none()
        && env.ratio_x <= 10.0
        && env.ratio_y <= 10.0;
    Ok((
        ok,
        format!(
            "regret slope {:.4} (<= -0.3); drop {:.3e} vs 3 joint SE {:.3e}; max identity residual {:.1e}; envelope ratios x {:.4}, y {:.4} (<= 10); t_mix {}, tau {:.3}",
            fit.slope,
            drop,
            3.0 * joint_se(first, last),
            exp.max_residual,
            env.ratio_x,
            env.ratio_y,
            problem.mixing.t_mix,
            problem.mixing.tau
        ),
    ))
}

fn game_nash() -> Outcome {
    let e = |e: empirical_saddle::Error| e.to_string();
    let game = make_bilinear_game(10, 10, PayoffLaw::Uniform { half_width: 0.5 }, 3).map_err(e)?;
    let exp = run_game_experiment(&game, &grid(16, 4096), 100, 3, &SolverConfig::default()).map_err(e)?;
    let dom = exp.sweep.rows_for("epsilon").all(|r| r.mean <= nash_bound(10, 10, r.n) + 3.0 * r.std_error);
    let (ok, msg) = slope_in(&exp.sweep, "epsilon", 0.0, -0.65, -0.35);
    Ok((ok && dom && exp.sweep.aborted.is_none(), format!("{msg}; bound dominance {dom}")))
}

const DETERMINISM_CONFIGS: &[(&str, &str)] = &[
    (
        "rate-sweep",
        r#"master_seed = 5
n_grid = [16, 64, 256]
replications = 20
metrics = ["wgm", "sgm", "d2"]
[solver]
gap_tol = 1e-12
relative_gap = false
[problem]
family = "quadratic"
dim_x = 2
dim_y = 3
mu_x = 1.0
mu_y = 0.5
coupling_scale = 0.5
noise_scale = 1.0
radius_x = 2.0
radius_y = 2.0
instance_seed = 4
"#,
    ),
    (
        "stability",
        r#"master_seed = 6
regularizer = { rule = "corollary" }
[solver]
gap_tol = 1e-12
relative_gap = false
[stability]
n = 30
trials = 24
[problem]
family = "game"
n1 = 3
n2 = 4
norm = "l2"
law = { law = "uniform", half_width = 0.5 }
instance_seed = 2
"#,
    ),
    (
        "mdp",
        r#"master_seed = 7
n_grid = [64, 256]
replications = 8
[problem]
family = "mdp"
num_states = 3
num_actions = 2
instance_seed = 3
"#,
    ),
    (
        "game",
        r#"master_seed = 8
n_grid = [16, 64, 256]
replications = 16
[problem]
family = "game"
n1 = 4
n2 = 5
law = { law = "sign" }
instance_seed = 9
"#,
    ),
];

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
                .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap_or_default()))
                .collect()
        })
        .unwrap_or_default();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut mismatches = Vec::new();
    let mut files = 0;
    for (kind_label, text) in DETERMINISM_CONFIGS {
        let kind = match *kind_label {
            "rate-sweep" => ExperimentKind::RateSweep,
            "stability" => ExperimentKind::Stability,
            "mdp" => ExperimentKind::Mdp,
            _ => ExperimentKind::Game,
        };
        let cfg_path = tmp.path().join(format!("{kind_label}.toml"));
        fs::write(&cfg_path, text).map_err(|e| e.to_string())?;
        let mut outputs = Vec::new();
        for (k, threads) in [1usize, 4, 1].into_iter().enumerate() {
            let out = tmp.path().join(format!("{kind_label}-{k}"));
            let res = run(&RunOptions {
                kind,
                config_path: cfg_path.clone(),
                out_dir: Some(out.clone()),
                threads: Some(threads),
                seed: None,
            });
            if res.exit_code == 2 {
                return Err(format!("{kind_label}: {}", res.manifest.message.unwrap_or_default()));
            }
            outputs.push(csv_files(&out));
        }
        files += outputs[0].len();
        if outputs[0].is_empty() || outputs.iter().any(|o| *o != outputs[0]) {
            mismatches.push(*kind_label);
        }
    }
    Ok((
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{files} CSV files byte-identical across reruns with 1 and 4 threads")
        } else {
            format!("outputs differ for {}", mismatches.join(", "))
        },
    ))
}

fn report(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let (ok, detail) = match f() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "{} {id:>2} {name}: {detail} [{:.1} s]",
        if ok { "PASS" } else { "FAIL" },
        t.elapsed().as_secs_f64()
    );
    ok
}

fn main() {
    let mut ok = true;
    ok &= report(1, "solver on matching pennies", solver_matching_pennies);
    ok &= report(2, "mirror prox matches closed form", oracle_equivalence);
    ok &= report(3, "analytic gradients vs central differences", gradient_checks);
    ok &= report(4, "leave-one-out stability", stability_lemmas);
    let started = Instant::now();
    let sweep = theorem_sweep();
    let sweep_secs = started.elapsed().as_secs_f64();
    let with_sweep = |f: fn(&RateSweep) -> Outcome| {
        let s = &sweep;
        move || s.as_ref().map_err(Clone::clone).and_then(f)
    };
    ok &= report(5, "weak generalization rate", || {
        with_sweep(weak_rate)().map(|(ok, d)| (ok, format!("{d}; shared sweep took {sweep_secs:.1} s")))
    });
    ok &= report(6, "strong generalization rate", with_sweep(strong_rate));
    ok &= report(7, "metric ordering", with_sweep(metric_ordering));
    ok &= report(8, "regularized game 1/sqrt(n) rate", corollary_rate);
    ok &= report(9, "unbounded quadratic rates and distance inequalities", unbounded_rates);
    ok &= report(10, "best-response Lipschitz and smoothness envelopes", argmap_and_smoothness);
    ok &= report(11, "MDP policy regret", mdp_regret);
    ok &= report(12, "stochastic game epsilon-Nash gap", game_nash);
    ok &= report(13, "determinism across thread counts", determinism);
    if !ok {
        std::process::exit(1);
    }
}
