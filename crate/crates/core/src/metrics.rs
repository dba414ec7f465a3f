//! Monte Carlo generalization measures and closed-form bounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mean, norm2_sq, sample_std};
use crate::problems::{
    default_regularizer_corollary, draw_samples, empirical_objective, ProblemConstants, Regularizer,
    RegularizerKind, SaddleObjective, Side, StochasticSaddleProblem,
};
use crate::rng::{derive_seed, tag};
use crate::solver::{solve_saddle, SaddleSolution, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Wgm,
    Sgm,
    D2,
}

impl MetricKind {
    pub fn label(self) -> &'static str {
        match self {
            MetricKind::Wgm => "wgm",
            MetricKind::Sgm => "sgm",
            MetricKind::D2 => "d2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizationEstimate {
    pub metric_kind: MetricKind,
    pub n: usize,
    pub replications: usize,
    pub mean: f64,
    pub std_error: f64,
    /// Per-replication values; empty for WGM, whose expectation sits inside the max/min.
    pub per_rep_values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    WgmThm1,
    /// The WGM bound divided by `min(mu_x, mu_y)`, bounding `E[d^2]`.
    D2Thm1,
    SgmThm2,
    UnboundedD2Thm3,
    UnboundedSgmThm3,
    RegWgmLemma4,
    CorollaryWgm,
    StabilityRhsLemma1,
    StabilityRhsLemma3,
}

/// How the regularizer of each empirical problem is chosen from `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum RegularizerRule {
    None,
    /// Quadratic with `alpha = l^w / (sqrt(n) D)` per block.
    Corollary,
    Fixed {
        kind: RegularizerKind,
        alpha_x: f64,
        alpha_y: f64,
        bound_r: f64,
    },
}

impl RegularizerRule {
    pub fn resolve(&self, constants: &ProblemConstants, n: usize) -> Result<Regularizer> {
        match *self {
            RegularizerRule::None => Ok(Regularizer::none()),
            RegularizerRule::Corollary => default_regularizer_corollary(constants, n),
            RegularizerRule::Fixed {
                kind,
                alpha_x,
                alpha_y,
                bound_r,
            } => Regularizer::new(kind, alpha_x, alpha_y, bound_r),
        }
    }
}

/// Population objective together with its saddle point.
#[derive(Debug, Clone)]
pub struct PopulationReference {
    pub objective: SaddleObjective,
    pub x_star: Vec<f64>,
    pub y_star: Vec<f64>,
}

/// Saddle point of the population objective, solved to a duality gap of at most 1e-10.
pub fn population_saddle<P: StochasticSaddleProblem>(
    problem: &P,
    config: &SolverConfig,
) -> Result<PopulationReference> {
    let objective = problem.population_objective()?;
    let cfg = SolverConfig {
        max_iter: config.max_iter.max(1_000_000),
        ..*config
    }
    .with_gap_tol(config.gap_tol.min(1e-10), false);
    let sol = solve_saddle(&objective, &cfg)?;
    if !sol.converged {
        return Err(Error::no_convergence(
            "population saddle",
            sol.iterations,
            sol.certified_gap,
        ));
    }
    Ok(PopulationReference {
        objective,
        x_star: sol.x_hat,
        y_star: sol.y_hat,
    })
}

/// Solves one empirical (regularized) problem per replication. Replication `r`
/// draws its samples from the stream keyed by `(master_seed, n, r)`.
pub fn solve_replications<P: StochasticSaddleProblem>(
    problem: &P,
    n: usize,
    replications: usize,
    rule: &RegularizerRule,
    config: &SolverConfig,
    master_seed: u64,
) -> Result<Vec<SaddleSolution>> {
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let reg = rule.resolve(problem.constants(), n)?;
    (0..replications)
        .into_par_iter()
        .map(|r| {
            let seed = replication_seed(master_seed, n, r);
            let samples = draw_samples(problem, n, seed);
            let obj = empirical_objective(problem, &samples, reg)?;
            let sol = solve_saddle(&obj, config)?;
            if !sol.converged {
                return Err(Error::no_convergence(
                    format!("empirical saddle (n {n}, replication {r})"),
                    sol.iterations,
                    sol.certified_gap,
                ));
            }
            Ok(sol)
        })
        .collect()
}

pub fn replication_seed(master_seed: u64, n: usize, r: usize) -> u64 {
    derive_seed(master_seed, &[tag::SAMPLES, n as u64, r as u64])
}

fn std_error(values: &[f64]) -> f64 {
    sample_std(values) / (values.len() as f64).sqrt()
}

/// `max_y mean_r f(x_r, y) - min_x mean_r f(x, y_r)` for an objective of the
/// separable-plus-bilinear form, where averaging over one block reduces to
/// evaluating at the block mean plus a quadratic correction.
fn averaged_gap(objective: &SaddleObjective, xs: &[&[f64]], ys: &[&[f64]]) -> Result<f64> {
    let k = xs.len() as f64;
    let dx = objective.dim_x();
    let dy = objective.dim_y();
    let mut xbar = vec![0.0; dx];
    let mut ybar = vec![0.0; dy];
    let mut sq_x = 0.0;
    let mut sq_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        for (a, b) in xbar.iter_mut().zip(x.iter()) {
            *a += b / k;
        }
        for (a, b) in ybar.iter_mut().zip(y.iter()) {
            *a += b / k;
        }
        sq_x += norm2_sq(x) / k;
        sq_y += norm2_sq(y) / k;
    }
    averaged_gap_from_stats(objective, &xbar, sq_x, &ybar, sq_y)
}

fn averaged_gap_from_stats(
    objective: &SaddleObjective,
    xbar: &[f64],
    sq_x: f64,
    ybar: &[f64],
    sq_y: f64,
) -> Result<f64> {
    if objective.regularizer.kind != RegularizerKind::None {
        return Err(Error::unsupported("generalization measures use the unregularized objective"));
    }
    let model = &objective.model;
    let (_, upper) = objective.best_response(xbar, Side::MaximizeY)?;
    let (_, lower) = objective.best_response(ybar, Side::MinimizeX)?;
    let corr_x = 0.5 * model.qx * (sq_x - norm2_sq(xbar));
    let corr_y = -0.5 * model.qy * (sq_y - norm2_sq(ybar));
    Ok((upper + corr_x) - (lower + corr_y))
}

/// Weak generalization measure with a jackknife standard error.
pub fn estimate_wgm(population: &SaddleObjective, solutions: &[SaddleSolution]) -> Result<(f64, f64)> {
    let r = solutions.len();
    if r < 2 {
        return Err(Error::invalid("at least two replications are required"));
    }
    let xs: Vec<&[f64]> = solutions.iter().map(|s| s.x_hat.as_slice()).collect();
    let ys: Vec<&[f64]> = solutions.iter().map(|s| s.y_hat.as_slice()).collect();
    let full = averaged_gap(population, &xs, &ys)?;
    let rf = r as f64;
    let (dx, dy) = (population.dim_x(), population.dim_y());
    let mut sum_x = vec![0.0; dx];
    let mut sum_y = vec![0.0; dy];
    let mut sq_x = 0.0;
    let mut sq_y = 0.0;
    for s in solutions {
        for (a, b) in sum_x.iter_mut().zip(&s.x_hat) {
            *a += b;
        }
        for (a, b) in sum_y.iter_mut().zip(&s.y_hat) {
            *a += b;
        }
        sq_x += norm2_sq(&s.x_hat);
        sq_y += norm2_sq(&s.y_hat);
    }
    let loo: Vec<f64> = solutions
        .iter()
        .map(|s| {
            let xb: Vec<f64> = sum_x.iter().zip(&s.x_hat).map(|(a, b)| (a - b) / (rf - 1.0)).collect();
            let yb: Vec<f64> = sum_y.iter().zip(&s.y_hat).map(|(a, b)| (a - b) / (rf - 1.0)).collect();
            averaged_gap_from_stats(
                population,
                &xb,
                (sq_x - norm2_sq(&s.x_hat)) / (rf - 1.0),
                &yb,
                (sq_y - norm2_sq(&s.y_hat)) / (rf - 1.0),
            )
        })
        .collect::<Result<Vec<f64>>>()?;
    let m = mean(&loo);
    let var = (rf - 1.0) / rf * loo.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    Ok((full, var.sqrt()))
}

/// Evaluates several measures on one shared set of replications.
pub fn estimate_metrics(
    population: &PopulationReference,
    solutions: &[SaddleSolution],
    n: usize,
    metrics: &[MetricKind],
    norms: (crate::geometry::NormTag, crate::geometry::NormTag),
) -> Result<Vec<GeneralizationEstimate>> {
    let replications = solutions.len();
    if replications < 2 {
        return Err(Error::invalid("at least two replications are required"));
    }
    metrics
        .iter()
        .map(|&metric| {
            let (mean_v, se, per_rep) = match metric {
                MetricKind::Wgm => {
                    let (m, se) = estimate_wgm(&population.objective, solutions)?;
                    (m, se, Vec::new())
                }
                MetricKind::Sgm => {
                    let vals = solutions
                        .par_iter()
                        .map(|s| population.objective.duality_gap(&s.x_hat, &s.y_hat))
                        .collect::<Result<Vec<f64>>>()?;
                    (mean(&vals), std_error(&vals), vals)
                }
                MetricKind::D2 => {
                    let vals: Vec<f64> = solutions
                        .iter()
                        .map(|s| {
                            let dx: Vec<f64> = s.x_hat.iter().zip(&population.x_star).map(|(a, b)| a - b).collect();
                            let dy: Vec<f64> = s.y_hat.iter().zip(&population.y_star).map(|(a, b)| a - b).collect();
                            norms.0.norm(&dx).powi(2) + norms.1.norm(&dy).powi(2)
                        })
                        .collect();
                    (mean(&vals), std_error(&vals), vals)
                }
            };
            Ok(GeneralizationEstimate {
                metric_kind: metric,
                n,
                replications,
                mean: mean_v,
                std_error: se,
                per_rep_values: per_rep,
            })
        })
        .collect()
}

/// Monte Carlo estimate of one generalization measure at sample size `n`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_generalization<P: StochasticSaddleProblem>(
    problem: &P,
    population: &PopulationReference,
    n: usize,
    replications: usize,
    metric: MetricKind,
    config: &SolverConfig,
    rule: &RegularizerRule,
    master_seed: u64,
) -> Result<GeneralizationEstimate> {
    let sols = solve_replications(problem, n, replications, rule, config, master_seed)?;
    let mut out = estimate_metrics(population, &sols, n, &[metric], (problem.norm_x(), problem.norm_y()))?;
    Ok(out.remove(0))
}

fn require_positive(value: f64, what: &str) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::invalid(format!("bound needs a positive finite {what} (got {value})")))
    }
}

fn require_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(Error::invalid(format!("bound needs a finite {what} (got {value})")))
    }
}

/// Right side of the leave-one-out stability inequality with moduli `mu + nu`.
pub fn stability_rhs(n: usize, lx: (f64, f64), ly: (f64, f64), mod_x: f64, mod_y: f64) -> f64 {
    let a = lx.0 + lx.1;
    let b = ly.0 + ly.1;
    (a * a / mod_x + b * b / mod_y).sqrt() / n as f64
}

/// Closed-form value of a generalization or stability bound.
pub fn theoretical_bound(
    kind: BoundKind,
    constants: &ProblemConstants,
    regularizer: &Regularizer,
    n: usize,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let nf = n as f64;
    let c = constants;
    let two_sqrt2 = 2.0 * 2f64.sqrt();
    match kind {
        BoundKind::WgmThm1 | BoundKind::D2Thm1 => {
            let mx = require_positive(c.mu_x, "mu_x (strong convexity)")?;
            let my = require_positive(c.mu_y, "mu_y (strong concavity)")?;
            let lx = require_finite(c.lx_w, "l_x^w (Lipschitz constant)")?;
            let ly = require_finite(c.ly_w, "l_y^w (Lipschitz constant)")?;
            let w = two_sqrt2 / nf * (lx * lx / mx + ly * ly / my);
            Ok(if kind == BoundKind::D2Thm1 { w / mx.min(my) } else { w })
        }
        BoundKind::SgmThm2 => {
            let mx = require_positive(c.mu_x, "mu_x (strong convexity)")?;
            let my = require_positive(c.mu_y, "mu_y (strong concavity)")?;
            let lx = require_finite(c.lx_s, "l_x^s (Lipschitz constant)")?;
            let ly = require_finite(c.ly_s, "l_y^s (Lipschitz constant)")?;
            let lxy = require_finite(c.l_xy, "L_xy (gradient Lipschitz constant)")?;
            Ok(two_sqrt2 / nf * (lxy * lxy / (mx * my) + 1.0).sqrt() * (lx * lx / mx + ly * ly / my))
        }
        BoundKind::UnboundedD2Thm3 | BoundKind::UnboundedSgmThm3 => {
            let mu = require_positive(c.mu(), "min(mu_x, mu_y) (strong convexity)")?;
            let cc = require_finite(
                c.c.ok_or_else(|| Error::invalid("bound needs the gradient second moment C"))?,
                "C (gradient second moment)",
            )?;
            let kappa = require_finite(c.kappa(), "condition number")?;
            Ok(if kind == BoundKind::UnboundedD2Thm3 {
                cc * kappa * kappa / (nf * mu * mu)
            } else {
                cc * kappa.powi(4) / (nf * mu)
            })
        }
        BoundKind::RegWgmLemma4 => {
            let mx = require_positive(c.mu_x + regularizer.nu_x(), "mu_x + nu_x")?;
            let my = require_positive(c.mu_y + regularizer.nu_y(), "mu_y + nu_y")?;
            let lx = require_finite(c.lx_w, "l_x^w (Lipschitz constant)")?;
            let ly = require_finite(c.ly_w, "l_y^w (Lipschitz constant)")?;
            Ok(2.0 * lx * lx / (nf * mx) + 2.0 * ly * ly / (nf * my) + 2.0 * regularizer.bound_r)
        }
        BoundKind::CorollaryWgm => {
            let lx = require_finite(c.lx_w, "l_x^w (Lipschitz constant)")?;
            let ly = require_finite(c.ly_w, "l_y^w (Lipschitz constant)")?;
            let dx = require_finite(c.d_x, "D_x (diameter)")?;
            let dy = require_finite(c.d_y, "D_y (diameter)")?;
            Ok(3.0 * (lx * dx + ly * dy) / nf.sqrt())
        }
        BoundKind::StabilityRhsLemma1 | BoundKind::StabilityRhsLemma3 => {
            let (nx, ny) = if kind == BoundKind::StabilityRhsLemma3 {
                (regularizer.nu_x(), regularizer.nu_y())
            } else {
                (0.0, 0.0)
            };
            let mx = require_positive(c.mu_x + nx, "mu_x + nu_x")?;
            let my = require_positive(c.mu_y + ny, "mu_y + nu_y")?;
            let lx = require_finite(c.lx_s, "l_x^s (Lipschitz constant)")?;
            let ly = require_finite(c.ly_s, "l_y^s (Lipschitz constant)")?;
            Ok(stability_rhs(n, (lx, lx), (ly, ly), mx, my))
        }
    }
}
