//! Configuration-driven experiment runner behind the `esp` binary.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

pub use config::{Assertions, ExperimentConfig, ExperimentKind, ProblemSpec, StabilitySettings};

use crate::error::{Error, Result};
use crate::games::{build_game_resp, read_payoff_csv, run_game_experiment};
use crate::mdp::{
    check_gradient_envelopes, estimate_mixing_constants, make_random_ergodic_mdp, run_mdp_experiment,
    solve_average_reward_exact, MdpInstance, MdpProblem,
};
use crate::metrics::{theoretical_bound, BoundKind, RegularizerRule};
use crate::problems::{
    draw_samples, empirical_objective, SampleSet, SaddleObjective, StochasticSaddleProblem,
};
use crate::rates::{run_rate_sweep, write_csv_rows, RateFit, RateRow, RateSweep};
use crate::solver::{solve_saddle, SolverConfig};
use crate::stability::{check_argmap_lipschitz, check_primal_smoothness, run_loo_suite};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub kind: ExperimentKind,
    pub config_path: PathBuf,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn suite(name: &str, passed: bool, detail: impl Into<String>) -> SuiteResult {
    SuiteResult {
        name: name.to_string(),
        passed,
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub status: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub experiment: String,
    pub crate_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub threads: usize,
    pub wall_clock_seconds: f64,
    pub suites: Vec<SuiteResult>,
    pub details: serde_json::Value,
}

/// Tables and verdicts produced by one experiment.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub results: Vec<RateRow>,
    pub fits: Vec<(String, RateFit, Option<bool>, Option<bool>)>,
    pub extra_tables: Vec<(String, String)>,
    pub suites: Vec<SuiteResult>,
    pub details: serde_json::Value,
}

impl Artifacts {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn results_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_csv_rows(&self.results, &mut buf)?;
        Ok(String::from_utf8(buf).expect("csv is ascii"))
    }

    pub fn fits_csv(&self) -> String {
        let mut out = String::from("metric,slope,intercept,r_squared,points,excluded,degenerate,slope_in_band,bound_dominance\n");
        let flag = |v: Option<bool>| v.map_or("na".to_string(), |b| b.to_string());
        for (metric, f, band, dom) in &self.fits {
            out.push_str(&format!(
                "{metric},{:.16e},{:.16e},{:.16e},{},{},{},{},{}\n",
                f.slope,
                f.intercept,
                f.r_squared,
                f.points,
                f.excluded,
                f.degenerate,
                flag(*band),
                flag(*dom)
            ));
        }
        out
    }
}

/// Outcome of [`run`]: the process exit code and the manifest that was written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub manifest: Manifest,
}

fn fit_suites(artifacts: &mut Artifacts, sweep: &RateSweep, assertions: &Assertions, floor: f64, dominance: bool) {
    let mut metrics: Vec<String> = Vec::new();
    for r in &sweep.rows {
        if !metrics.contains(&r.metric) {
            metrics.push(r.metric.clone());
        }
    }
    for m in metrics {
        let fit = sweep.fit(&m, floor);
        let band = (assertions.slope_min.is_some() || assertions.slope_max.is_some()).then(|| {
            !fit.degenerate
                && assertions.slope_min.is_none_or(|lo| fit.slope >= lo)
                && assertions.slope_max.is_none_or(|hi| fit.slope <= hi)
        });
        let has_bound = sweep.rows_for(&m).any(|r| r.bound.is_some());
        let dom = (dominance && has_bound).then(|| sweep.bound_dominance(&m, assertions.bound_dominance_se));
        if let Some(ok) = band {
            artifacts.suites.push(suite(
                &format!("{m} slope"),
                ok,
                format!(
                    "slope {:.4} (band [{}, {}]), r^2 {:.4}",
                    fit.slope,
                    assertions.slope_min.map_or("-inf".into(), |v| v.to_string()),
                    assertions.slope_max.map_or("inf".into(), |v| v.to_string()),
                    fit.r_squared
                ),
            ));
        }
        if let Some(ok) = dom {
            artifacts.suites.push(suite(
                &format!("{m} bound dominance"),
                ok,
                format!("mean <= bound + {} SE at every row", assertions.bound_dominance_se),
            ));
        }
        artifacts.fits.push((m, fit, band, dom));
    }
    artifacts.suites.push(suite(
        "sweep complete",
        sweep.aborted.is_none(),
        sweep.aborted.clone().unwrap_or_else(|| "all rows finished".into()),
    ));
}

fn floor_of(cfg: &SolverConfig) -> f64 {
    5.0 * cfg.gap_tol
}

fn sweep_problem<P: StochasticSaddleProblem>(problem: &P, tag: &str, cfg: &ExperimentConfig) -> Result<Artifacts> {
    let sweep = run_rate_sweep(
        problem,
        tag,
        &cfg.n_grid,
        cfg.replications,
        &cfg.metrics,
        &cfg.regularizer,
        &cfg.solver,
        cfg.master_seed,
    )?;
    let mut a = Artifacts {
        results: sweep.rows.clone(),
        ..Default::default()
    };
    let dominance = matches!(cfg.regularizer, RegularizerRule::None | RegularizerRule::Fixed { .. });
    fit_suites(&mut a, &sweep, &cfg.assertions, floor_of(&cfg.solver), dominance);
    a.details = json!({ "problem_tag": tag, "constants": constants_json(problem) });
    Ok(a)
}

fn constants_json<P: StochasticSaddleProblem>(problem: &P) -> serde_json::Value {
    let c = problem.constants();
    let num = |v: f64| if v.is_finite() { json!(v) } else { json!(v.to_string()) };
    json!({
        "mu_x": num(c.mu_x), "mu_y": num(c.mu_y),
        "lx_w": num(c.lx_w), "ly_w": num(c.ly_w), "lx_s": num(c.lx_s), "ly_s": num(c.ly_s),
        "l_x": num(c.l_x), "l_y": num(c.l_y), "l_xy": num(c.l_xy),
        "d_x": num(c.d_x), "d_y": num(c.d_y), "c": c.c.map(num), "estimated": c.estimated,
    })
}

fn run_stability<P: StochasticSaddleProblem>(
    problem: &P,
    cfg: &ExperimentConfig,
    settings: &StabilitySettings,
    bound: BoundKind,
) -> Result<Artifacts> {
    let n = settings.n;
    let reg = cfg.regularizer.resolve(problem.constants(), n)?;
    let trials = run_loo_suite(problem, n, &reg, settings.trials, cfg.master_seed, &cfg.solver)?;
    let valid: Vec<_> = trials.iter().filter(|t| t.invalid.is_none()).collect();
    let violations = valid.iter().filter(|t| !t.passes()).count();
    let mut table = String::from("trial,i,lhs,rhs,slack,valid,reason\n");
    for (k, t) in trials.iter().enumerate() {
        table.push_str(&format!(
            "{k},{},{:.16e},{:.16e},{:.16e},{},{}\n",
            t.i,
            t.lhs,
            t.rhs,
            t.slack,
            t.invalid.is_none(),
            t.invalid.clone().unwrap_or_default().replace(',', ";")
        ));
    }
    let lhs: Vec<f64> = valid.iter().map(|t| t.lhs).collect();
    let mut a = Artifacts::default();
    if lhs.len() >= 2 {
        a.results.push(RateRow {
            n,
            metric: "loo_distance".into(),
            mean: crate::linalg::mean(&lhs),
            std_error: crate::linalg::sample_std(&lhs) / (lhs.len() as f64).sqrt(),
            bound: theoretical_bound(bound, problem.constants(), &reg, n).ok(),
            replications: lhs.len(),
            seed: cfg.master_seed,
            residual: None,
        });
    }
    a.extra_tables.push(("trials.csv".into(), table));
    a.suites.push(suite(
        "leave-one-out stability",
        violations == 0 && !valid.is_empty(),
        format!(
            "{violations} violations over {} valid trials ({} excluded)",
            valid.len(),
            trials.len() - valid.len()
        ),
    ));
    a.details = json!({ "constants": constants_json(problem), "regularizer": reg_json(&reg) });
    Ok(a)
}

fn reg_json(reg: &crate::problems::Regularizer) -> serde_json::Value {
    json!({ "kind": reg.kind, "alpha_x": reg.alpha_x, "alpha_y": reg.alpha_y, "bound_r": reg.bound_r })
}

fn pair_suites<P: StochasticSaddleProblem>(problem: &P, pairs: usize, seed: u64, unbounded: bool, a: &mut Artifacts) -> Result<()> {
    if pairs == 0 {
        return Ok(());
    }
    let (rx, ry) = check_argmap_lipschitz(problem, pairs, seed)?;
    a.suites.push(suite(
        "best-response Lipschitz",
        rx.violations + ry.violations == 0,
        format!(
            "max ratios {:.6}/{:.6} vs bounds {:.6}/{:.6}; {} pairs skipped",
            rx.max_ratio,
            ry.max_ratio,
            rx.bound,
            ry.bound,
            rx.skipped + ry.skipped
        ),
    ));
    if unbounded {
        let (rf, rg) = check_primal_smoothness(problem, pairs, seed)?;
        a.suites.push(suite(
            "primal/dual smoothness",
            rf.violations + rg.violations == 0,
            format!(
                "max ratios {:.6}/{:.6} vs bounds {:.6}/{:.6}",
                rf.max_ratio, rg.max_ratio, rf.bound, rg.bound
            ),
        ));
    }
    Ok(())
}

fn with_path<T>(path: &Path, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| Error::Input {
        path: path.display().to_string(),
        source: Box::new(e),
    })
}

fn load_mdp(spec: &ProblemSpec, base: &Path) -> Result<MdpProblem> {
    let ProblemSpec::Mdp {
        instance_file,
        num_states,
        num_actions,
        min_transition_prob,
        extra_random_policies,
        reward_noise,
        instance_seed,
    } = spec
    else {
        return Err(Error::invalid("problem is not an MDP"));
    };
    let mdp = match instance_file {
        Some(f) => {
            let path = base.join(f);
            with_path(&path, || MdpInstance::from_text(&fs::read_to_string(&path)?))?
        }
        None => make_random_ergodic_mdp(*num_states, *num_actions, *min_transition_prob, *instance_seed)?,
    };
    let mixing = estimate_mixing_constants(&mdp, *extra_random_policies, *instance_seed)?;
    MdpProblem::new(mdp, mixing, *reward_noise)
}

fn run_mdp(cfg: &ExperimentConfig, base: &Path) -> Result<Artifacts> {
    let problem = load_mdp(&cfg.problem, base)?;
    let exact = solve_average_reward_exact(&problem.mdp, 1e-12)?;
    let exp = run_mdp_experiment(&problem, &exact, &cfg.n_grid, cfg.replications, cfg.master_seed, &cfg.solver)?;
    let env = check_gradient_envelopes(&problem, 20, 2000, cfg.master_seed);
    let mut a = Artifacts {
        results: exp.sweep.rows.clone(),
        ..Default::default()
    };
    fit_suites(&mut a, &exp.sweep, &cfg.assertions, 0.0, false);
    a.suites.push(suite(
        "regret nonnegative",
        exp.min_regret >= -1e-8,
        format!("min regret {:.3e}", exp.min_regret),
    ));
    a.suites.push(suite(
        "complementarity identity",
        exp.max_residual <= 1e-8,
        format!("max residual {:.3e}", exp.max_residual),
    ));
    a.suites.push(suite(
        "gradient moment envelopes",
        env.ratio_x <= 10.0 && env.ratio_y <= 1.0,
        format!("x ratio {:.4} (<= 10), y ratio {:.4} (<= 1)", env.ratio_x, env.ratio_y),
    ));
    let tmix = problem.mixing.t_mix as f64;
    let x_inside = exact.x_star.iter().all(|v| v.abs() <= 2.0 * tmix);
    a.details = json!({
        "mixing": problem.mixing,
        "v_star": exact.v_star,
        "optimal_policy": exact.policy,
        "bias_inside_box": x_inside,
        "envelopes": env,
        "min_regret": exp.min_regret,
        "max_residual": exp.max_residual,
    });
    Ok(a)
}

fn run_game(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let game = cfg.problem.build_game()?;
    let exp = run_game_experiment(&game, &cfg.n_grid, cfg.replications, cfg.master_seed, &cfg.solver)?;
    let mut a = Artifacts {
        results: exp.sweep.rows.clone(),
        ..Default::default()
    };
    fit_suites(&mut a, &exp.sweep, &cfg.assertions, 0.0, true);
    a.details = json!({ "tails": exp.tails });
    Ok(a)
}

fn solve_objective(obj: &SaddleObjective, n: usize, cfg: &ExperimentConfig) -> Result<Artifacts> {
    let sol = solve_saddle(obj, &cfg.solver)?;
    let mut a = Artifacts::default();
    a.results.push(RateRow {
        n,
        metric: "certified_gap".into(),
        mean: sol.certified_gap,
        std_error: 0.0,
        bound: Some(sol.tolerance),
        replications: 1,
        seed: cfg.master_seed,
        residual: None,
    });
    a.suites.push(suite(
        "solver converged",
        sol.converged,
        format!("gap {:.3e} after {} iterations", sol.certified_gap, sol.iterations),
    ));
    if let Some(max) = cfg.assertions.max_certified_gap {
        a.suites.push(suite(
            "certified gap",
            sol.certified_gap <= max,
            format!("{:.3e} <= {max:.3e}", sol.certified_gap),
        ));
    }
    a.details = json!({
        "x_hat": sol.x_hat,
        "y_hat": sol.y_hat,
        "certified_gap": sol.certified_gap,
        "iterations": sol.iterations,
        "converged": sol.converged,
    });
    Ok(a)
}

fn solve_problem<P: StochasticSaddleProblem>(problem: &P, cfg: &ExperimentConfig) -> Result<Artifacts> {
    match cfg.n_grid.first() {
        None => solve_objective(&problem.population_objective()?, 0, cfg),
        Some(&n) => {
            let samples = draw_samples(problem, n, crate::metrics::replication_seed(cfg.master_seed, n, 0));
            let reg = cfg.regularizer.resolve(problem.constants(), n)?;
            solve_objective(&empirical_objective(problem, &samples, reg)?.objective, n, cfg)
        }
    }
}

fn run_solve(cfg: &ExperimentConfig, base: &Path) -> Result<Artifacts> {
    match &cfg.problem {
        ProblemSpec::Quadratic { .. } => solve_problem(&cfg.problem.build_quadratic()?, cfg),
        ProblemSpec::Game { payoff_csv, .. } => {
            let game = cfg.problem.build_game()?;
            match payoff_csv {
                Some(path) => {
                    let path = base.join(path);
                    let data = with_path(&path, || {
                        let file = fs::File::open(&path)?;
                        read_payoff_csv(std::io::BufReader::new(file), game.n1(), game.n2())
                    })?;
                    let samples = SampleSet { data, seed: 0 };
                    let n = samples.n();
                    let obj = match cfg.regularizer {
                        RegularizerRule::None => empirical_objective(&game, &samples, crate::problems::Regularizer::none())?,
                        _ => build_game_resp(&game, &samples)?,
                    };
                    solve_objective(&obj.objective, n, cfg)
                }
                None => solve_problem(&game, cfg),
            }
        }
        ProblemSpec::Mdp { .. } => {
            let problem = load_mdp(&cfg.problem, base)?;
            match cfg.n_grid.first() {
                None => solve_objective(&problem.population_objective()?, 0, cfg),
                Some(&n) => {
                    let samples = draw_samples(&problem, n, crate::metrics::replication_seed(cfg.master_seed, n, 0));
                    solve_objective(&crate::mdp::build_mdp_resp(&problem, &samples)?.objective, n, cfg)
                }
            }
        }
    }
}

/// Runs one experiment without touching the filesystem except for reading
/// inputs referenced by the config (resolved against `base`).
pub fn run_config(kind: ExperimentKind, cfg: &ExperimentConfig, base: &Path) -> Result<Artifacts> {
    match kind {
        ExperimentKind::RateSweep => match &cfg.problem {
            ProblemSpec::Quadratic { .. } => sweep_problem(&cfg.problem.build_quadratic()?, "quadratic", cfg),
            ProblemSpec::Game { .. } => sweep_problem(&cfg.problem.build_game()?, "game", cfg),
            ProblemSpec::Mdp { .. } => Err(Error::unsupported("use the mdp experiment for MDP sweeps")),
        },
        ExperimentKind::Stability => {
            let settings = cfg
                .stability
                .as_ref()
                .ok_or_else(|| Error::invalid("stability experiments need a [stability] table"))?;
            match &cfg.problem {
                ProblemSpec::Quadratic { radius_x, radius_y, .. } => {
                    let p = cfg.problem.build_quadratic()?;
                    let mut a = run_stability(&p, cfg, settings, BoundKind::StabilityRhsLemma1)?;
                    pair_suites(&p, settings.pairs, cfg.master_seed, radius_x.is_none() && radius_y.is_none(), &mut a)?;
                    Ok(a)
                }
                ProblemSpec::Game { .. } => {
                    let g = cfg.problem.build_game()?;
                    run_stability(&g, cfg, settings, BoundKind::StabilityRhsLemma3)
                }
                ProblemSpec::Mdp { .. } => Err(Error::unsupported("stability trials support quadratic and game problems")),
            }
        }
        ExperimentKind::Mdp => run_mdp(cfg, base),
        ExperimentKind::Game => run_game(cfg),
        ExperimentKind::Solve => run_solve(cfg, base),
    }
}

/// Parses the config, runs it on a pool of `threads` workers and writes
/// `results.csv`, `fits.csv` and `manifest.json`. Exit code 0 means every
/// asserted invariant held, 1 a runtime failure or failed invariant, 2 an
/// invalid configuration.
pub fn run(opts: &RunOptions) -> RunOutcome {
    let start = Instant::now();
    let threads = opts.threads.unwrap_or_else(rayon::current_num_threads);
    let mut manifest = Manifest {
        status: "invalid-config".into(),
        exit_code: 2,
        message: None,
        experiment: opts.kind.label().into(),
        crate_version: env!("CARGO_PKG_VERSION").into(),
        config: None,
        master_seed: None,
        threads,
        wall_clock_seconds: 0.0,
        suites: Vec::new(),
        details: serde_json::Value::Null,
    };
    let path = opts.config_path.display().to_string();
    let parsed = fs::read_to_string(&opts.config_path)
        .map_err(|e| format!("{path}: cannot read config: {e}"))
        .and_then(|text| {
            ExperimentConfig::from_toml(&text).map_err(|e| match e {
                Error::Config { line, message } => format!("{path}:{line}: {message}"),
                other => format!("{path}: {other}"),
            })
        })
        .and_then(|cfg| match cfg.experiment {
            Some(k) if k != opts.kind => Err(format!(
                "{path}: config is for `{}` but the `{}` subcommand was used",
                k.label(),
                opts.kind.label()
            )),
            _ => Ok(cfg),
        });
    let mut cfg = match parsed {
        Ok(cfg) => cfg,
        Err(msg) => {
            manifest.message = Some(msg);
            if let Some(out) = &opts.out_dir {
                let _ = fs::create_dir_all(out).and_then(|_| write_manifest(out, &manifest));
            }
            return RunOutcome { exit_code: 2, manifest };
        }
    };
    if let Some(seed) = opts.seed {
        cfg.master_seed = seed;
    }
    cfg.experiment = Some(opts.kind);
    manifest.master_seed = Some(cfg.master_seed);
    manifest.config = cfg.to_toml().ok();
    let out = opts
        .out_dir
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("esp-out"));
    let base = opts
        .config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))
        .and_then(|pool| pool.install(|| run_config(opts.kind, &cfg, &base)));
    let written = fs::create_dir_all(&out).map_err(Error::from).and_then(|_| match &result {
        Ok(a) => {
            fs::write(out.join("results.csv"), a.results_csv()?)?;
            fs::write(out.join("fits.csv"), a.fits_csv())?;
            for (name, table) in &a.extra_tables {
                fs::write(out.join(name), table)?;
            }
            Ok(())
        }
        Err(_) => Ok(()),
    });
    match (result, written) {
        (Ok(a), Ok(())) => {
            let ok = a.passed();
            manifest.status = if ok { "passed" } else { "failed" }.into();
            manifest.exit_code = if ok { 0 } else { 1 };
            if !ok {
                let failed: Vec<&str> = a.suites.iter().filter(|s| !s.passed).map(|s| s.name.as_str()).collect();
                manifest.message = Some(format!("failed invariants: {}", failed.join(", ")));
            }
            manifest.suites = a.suites;
            manifest.details = a.details;
        }
        (Err(e), _) | (Ok(_), Err(e)) => {
            manifest.status = "error".into();
            manifest.exit_code = 1;
            manifest.message = Some(e.to_string());
        }
    }
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    if let Err(e) = fs::create_dir_all(&out).and_then(|_| write_manifest(&out, &manifest)) {
        manifest.exit_code = 1;
        manifest.message = Some(format!("cannot write manifest: {e}"));
    }
    RunOutcome {
        exit_code: manifest.exit_code,
        manifest,
    }
}

fn write_manifest(out: &Path, manifest: &Manifest) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(std::io::Error::other)?;
    fs::write(out.join("manifest.json"), text + "\n")
}
