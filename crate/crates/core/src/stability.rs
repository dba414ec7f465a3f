//! Leave-one-out stability trials and checks of the supporting inequalities
//! (argmin-map Lipschitzness, primal/dual smoothness, distance bounds).

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{mean, norm2, norm2_sq, sample_std, sub};
use crate::metrics::stability_rhs;
use crate::problems::{
    draw_samples, empirical_objective, leave_one_out_swap, QuadraticProblem, Regularizer, SaddleObjective, SampleSet, Side,
    StochasticSaddleProblem,
};
use crate::rng::{derive_seed, stream, tag};
use crate::solver::{solve_quadratic_closed_form, solve_saddle, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityTrial {
    pub lhs: f64,
    pub rhs: f64,
    pub i: usize,
    pub sample_seed: u64,
    pub replacement_seed: u64,
    /// Allowance for solver inexactness.
    pub slack: f64,
    /// Reason the trial was excluded, if any.
    pub invalid: Option<String>,
}

impl StabilityTrial {
    pub fn passes(&self) -> bool {
        self.invalid.is_none() && self.lhs <= self.rhs + self.slack
    }
}

/// Solves the (regularized) empirical problem on a sample set and on the same
/// set with position `i` replaced, and evaluates both sides of the stability
/// inequality.
pub fn run_loo_trial<P: StochasticSaddleProblem>(
    problem: &P,
    n: usize,
    reg: &Regularizer,
    i: usize,
    seeds: (u64, u64),
    config: &SolverConfig,
) -> Result<StabilityTrial> {
    let samples = draw_samples(problem, n, seeds.0);
    let replacement = problem.sample(&mut stream(seeds.1));
    let mut trial = run_loo_trial_with(problem, &samples, i, replacement, reg, config)?;
    trial.replacement_seed = seeds.1;
    Ok(trial)
}

/// Same as [`run_loo_trial`] with an explicit sample set and replacement datum.
pub fn run_loo_trial_with<P: StochasticSaddleProblem>(
    problem: &P,
    samples: &SampleSet<P::Datum>,
    i: usize,
    replacement: P::Datum,
    reg: &Regularizer,
    config: &SolverConfig,
) -> Result<StabilityTrial> {
    let c = problem.constants();
    let mod_x = c.mu_x + reg.nu_x();
    let mod_y = c.mu_y + reg.nu_y();
    if !(mod_x > 0.0 && mod_y > 0.0) {
        return Err(Error::invalid("stability needs mu + nu > 0 in both blocks"));
    }
    let n = samples.n();
    let swapped = leave_one_out_swap(samples, i, replacement.clone())?;
    let a = solve_saddle(&empirical_objective(problem, samples, *reg)?.objective, config)?;
    let b = solve_saddle(&empirical_objective(problem, &swapped, *reg)?.objective, config)?;
    let slack = 10.0 * a.tolerance.max(b.tolerance);
    let mut trial = StabilityTrial {
        lhs: 0.0,
        rhs: 0.0,
        i,
        sample_seed: samples.seed,
        replacement_seed: 0,
        slack,
        invalid: None,
    };
    if !a.converged || !b.converged {
        trial.invalid = Some(format!(
            "inner solve did not converge (gaps {:.3e}, {:.3e})",
            a.certified_gap, b.certified_gap
        ));
        return Ok(trial);
    }
    let dx = problem.norm_x().norm(&sub(&a.x_hat, &b.x_hat));
    let dy = problem.norm_y().norm(&sub(&a.y_hat, &b.y_hat));
    trial.lhs = (mod_x * dx * dx + mod_y * dy * dy).sqrt();
    let xi = &samples.data[i];
    trial.rhs = stability_rhs(
        n,
        (problem.lipschitz_x(xi, &b.y_hat), problem.lipschitz_x(&replacement, &a.y_hat)),
        (problem.lipschitz_y(xi, &b.x_hat), problem.lipschitz_y(&replacement, &a.x_hat)),
        mod_x,
        mod_y,
    );
    if !trial.rhs.is_finite() {
        trial.invalid = Some("stability bound is infinite on an unbounded feasible set".into());
    }
    Ok(trial)
}

/// Runs `trials` independent leave-one-out trials in parallel; trial `t` swaps
/// index `t mod n`.
pub fn run_loo_suite<P: StochasticSaddleProblem>(
    problem: &P,
    n: usize,
    reg: &Regularizer,
    trials: usize,
    master_seed: u64,
    config: &SolverConfig,
) -> Result<Vec<StabilityTrial>> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let seeds = (
                derive_seed(master_seed, &[tag::TRIAL, n as u64, t as u64]),
                derive_seed(master_seed, &[tag::REPLACEMENT, n as u64, t as u64]),
            );
            run_loo_trial(problem, n, reg, t % n, seeds, config)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    pub checked: usize,
    pub skipped: usize,
    pub violations: usize,
    /// Largest observed ratio of measured to allowed change.
    pub max_ratio: f64,
    pub bound: f64,
}

impl InequalityReport {
    fn new(bound: f64) -> Self {
        InequalityReport {
            checked: 0,
            skipped: 0,
            violations: 0,
            max_ratio: 0.0,
            bound,
        }
    }

    fn merge(mut self, other: &InequalityReport) -> Self {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.violations += other.violations;
        self.max_ratio = self.max_ratio.max(other.max_ratio);
        self.bound = self.bound.max(other.bound);
        self
    }
}

const MIN_SEPARATION: f64 = 1e-8;

/// Pairs of points closer than this are skipped as degenerate.
fn record(report: &mut InequalityReport, change: f64, separation: f64, slack: f64) {
    if separation < MIN_SEPARATION {
        report.skipped += 1;
        return;
    }
    report.checked += 1;
    let ratio = change / separation;
    report.max_ratio = report.max_ratio.max(ratio);
    if change > report.bound * separation + slack {
        report.violations += 1;
    }
}

/// Checks `|x*(y1) - x*(y2)| <= (L_xy / mu_x) |y1 - y2|` for the population
/// best-response maps, and the mirrored statement for `y*(x)`.
pub fn check_argmap_lipschitz<P: StochasticSaddleProblem>(
    problem: &P,
    pairs: usize,
    seed: u64,
) -> Result<(InequalityReport, InequalityReport)> {
    let obj = problem.population_objective()?;
    let c = problem.constants();
    let mut rep_x = InequalityReport::new(c.l_xy / c.mu_x);
    let mut rep_y = InequalityReport::new(c.l_xy / c.mu_y);
    let mut rng = stream(derive_seed(seed, &[tag::PAIRS]));
    let (nx, ny) = (problem.norm_x(), problem.norm_y());
    for _ in 0..pairs {
        let y1 = obj.set_y.sample_point(&mut rng);
        let y2 = obj.set_y.sample_point(&mut rng);
        match (obj.best_response(&y1, Side::MinimizeX), obj.best_response(&y2, Side::MinimizeX)) {
            (Ok((x1, _)), Ok((x2, _))) => {
                record(&mut rep_x, nx.norm(&sub(&x1, &x2)), ny.norm(&sub(&y1, &y2)), 1e-6)
            }
            _ => rep_x.skipped += 1,
        }
        let x1 = obj.set_x.sample_point(&mut rng);
        let x2 = obj.set_x.sample_point(&mut rng);
        match (obj.best_response(&x1, Side::MaximizeY), obj.best_response(&x2, Side::MaximizeY)) {
            (Ok((a, _)), Ok((b, _))) => {
                record(&mut rep_y, ny.norm(&sub(&a, &b)), nx.norm(&sub(&x1, &x2)), 1e-6)
            }
            _ => rep_y.skipped += 1,
        }
    }
    Ok((rep_x, rep_y))
}

/// Central finite-difference gradient of `f` with step `h`.
fn fd_gradient(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut g = Vec::with_capacity(x.len());
    let mut p = x.to_vec();
    for k in 0..x.len() {
        p[k] = x[k] + h;
        let up = f(&p)?;
        p[k] = x[k] - h;
        let down = f(&p)?;
        p[k] = x[k];
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

/// Checks that the finite-difference gradients of `f(x) = max_y Phi(x, y)` and
/// `g(y) = min_x Phi(x, y)` are Lipschitz with constants `L_x + L_xy^2/mu_y`
/// and `L_y + L_xy^2/mu_x` (Euclidean norms).
pub fn check_primal_smoothness<P: StochasticSaddleProblem>(
    problem: &P,
    pairs: usize,
    seed: u64,
) -> Result<(InequalityReport, InequalityReport)> {
    let obj = problem.population_objective()?;
    let c = problem.constants();
    let mut rep_f = InequalityReport::new(c.l_x + c.l_xy * c.l_xy / c.mu_y);
    let mut rep_g = InequalityReport::new(c.l_y + c.l_xy * c.l_xy / c.mu_x);
    let f = |x: &[f64]| obj.best_response(x, Side::MaximizeY).map(|r| r.1);
    let g = |y: &[f64]| obj.best_response(y, Side::MinimizeX).map(|r| r.1);
    let h = 1e-5;
    let mut rng = stream(derive_seed(seed, &[tag::PAIRS]));
    for _ in 0..pairs {
        let x1 = obj.set_x.sample_point(&mut rng);
        let x2 = obj.set_x.sample_point(&mut rng);
        match (fd_gradient(f, &x1, h), fd_gradient(f, &x2, h)) {
            (Ok(a), Ok(b)) => record(&mut rep_f, norm2(&sub(&a, &b)), norm2(&sub(&x1, &x2)), 1e-6),
            _ => rep_f.skipped += 1,
        }
        let y1 = obj.set_y.sample_point(&mut rng);
        let y2 = obj.set_y.sample_point(&mut rng);
        match (fd_gradient(g, &y1, h), fd_gradient(g, &y2, h)) {
            (Ok(a), Ok(b)) => record(&mut rep_g, norm2(&sub(&a, &b)), norm2(&sub(&y1, &y2)), 1e-6),
            _ => rep_g.skipped += 1,
        }
    }
    Ok((rep_f, rep_g))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceLemmaReport {
    pub n: usize,
    pub replications: usize,
    /// Replications violating either pointwise distance inequality.
    pub violations: usize,
    /// Largest `|x_hat - x*|^2 / ((4/mu_x^2) |grad_x at (x*, y_n*(x*))|^2)` over both blocks.
    pub max_ratio: f64,
    /// Mean and standard error of `|grad_x Phi_n(x*, y_n*(x*))|^2`.
    pub moment_x: (f64, f64),
    pub moment_y: (f64, f64),
    /// Closed-form right sides of the second-moment bounds.
    pub moment_bound_x: f64,
    pub moment_bound_y: f64,
    /// Mean and standard error of `|grad_x Phi_n(x*, y*)|^2`, which equals the
    /// per-sample gradient variance divided by `n`.
    pub centered_moment_x: (f64, f64),
}

impl DistanceLemmaReport {
    pub fn moments_hold(&self) -> bool {
        self.moment_x.0 <= self.moment_bound_x + 3.0 * self.moment_x.1
            && self.moment_y.0 <= self.moment_bound_y + 3.0 * self.moment_y.1
    }
}

/// Distance inequalities between the empirical and population saddle points of
/// an unconstrained quadratic problem, solved in closed form.
pub fn check_distance_lemma(
    problem: &QuadraticProblem,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<DistanceLemmaReport> {
    if problem.set_x().is_bounded() || problem.set_y().is_bounded() {
        return Err(Error::invalid("distance check needs an unconstrained problem"));
    }
    if replications < 2 {
        return Err(Error::invalid("at least two replications are required"));
    }
    let pop = problem.population_objective()?;
    let star = solve_quadratic_closed_form(&pop)?;
    let (xs, ys) = (&star.x_hat, &star.y_hat);
    let c = problem.constants();
    let (mx, my) = (c.mu_x, c.mu_y);
    let rows = (0..replications)
        .into_par_iter()
        .map(|r| {
            let samples = draw_samples(problem, n, derive_seed(seed, &[tag::SAMPLES, n as u64, r as u64]));
            let emp: SaddleObjective = empirical_objective(problem, &samples, Regularizer::none())?.objective;
            let sol = solve_quadratic_closed_form(&emp)?;
            let (yn, _) = emp.best_response(xs, Side::MaximizeY)?;
            let (xn, _) = emp.best_response(ys, Side::MinimizeX)?;
            let gx = norm2_sq(&emp.grad_x(xs, &yn));
            let gy = norm2_sq(&emp.grad_y(&xn, ys));
            let dx = norm2_sq(&sub(&sol.x_hat, xs));
            let dy = norm2_sq(&sub(&sol.y_hat, ys));
            let centered = norm2_sq(&emp.grad_x(xs, ys));
            Ok((dx, 4.0 / (mx * mx) * gx, dy, 4.0 / (my * my) * gy, gx, gy, centered))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut violations = 0;
    let mut max_ratio: f64 = 0.0;
    for &(dx, bx, dy, by, ..) in &rows {
        // Rounding allowance relative to the magnitudes involved.
        if dx > bx * (1.0 + 1e-9) + 1e-24 || dy > by * (1.0 + 1e-9) + 1e-24 {
            violations += 1;
        }
        if bx > 0.0 {
            max_ratio = max_ratio.max(dx / bx);
        }
        if by > 0.0 {
            max_ratio = max_ratio.max(dy / by);
        }
    }
    let stat = |f: &dyn Fn(&(f64, f64, f64, f64, f64, f64, f64)) -> f64| {
        let v: Vec<f64> = rows.iter().map(f).collect();
        (mean(&v), sample_std(&v) / (v.len() as f64).sqrt())
    };
    let (vx, vy) = problem.gradient_noise_moments();
    let lxy2 = c.l_xy * c.l_xy;
    let nf = n as f64;
    Ok(DistanceLemmaReport {
        n,
        replications,
        violations,
        max_ratio,
        moment_x: stat(&|r| r.4),
        moment_y: stat(&|r| r.5),
        moment_bound_x: (8.0 * lxy2 / (my * my) * vy + 2.0 * vx) / nf,
        moment_bound_y: (8.0 * lxy2 / (mx * mx) * vx + 2.0 * vy) / nf,
        centered_moment_x: stat(&|r| r.6),
    })
}

/// Merges per-pair reports from parallel workers.
pub fn merge_reports(reports: &[InequalityReport]) -> Option<InequalityReport> {
    let first = reports.first()?.clone();
    Some(reports[1..].iter().fold(first, |acc, r| acc.merge(r)))
}
