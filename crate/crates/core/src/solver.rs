//! Deterministic saddle-point solvers with certified duality gaps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{kl_project, project_euclidean, FeasibleSet, LOG_FLOOR};
use crate::linalg::{dist2_sq, dot, mat_t_vec, mat_vec};
use crate::problems::{RegularizerKind, SaddleObjective, Side};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepRule {
    Fixed { eta: f64 },
    AdaptiveBacktracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Geometry {
    /// Entropy on simplex-like blocks carrying an entropy term or occupancy
    /// constraints, Euclidean elsewhere.
    Auto,
    Euclidean,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub gap_tol: f64,
    /// Scale `gap_tol` by `1 + |f(x0, y0)|`.
    pub relative_gap: bool,
    pub step_rule: StepRule,
    pub geometry_x: Geometry,
    pub geometry_y: Geometry,
    /// Iterations between duality-gap checkpoints.
    pub check_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 100_000,
            gap_tol: 1e-8,
            relative_gap: true,
            step_rule: StepRule::AdaptiveBacktracking,
            geometry_x: Geometry::Auto,
            geometry_y: Geometry::Auto,
            check_every: 10,
        }
    }
}

impl SolverConfig {
    pub fn with_gap_tol(mut self, gap_tol: f64, relative: bool) -> Self {
        self.gap_tol = gap_tol;
        self.relative_gap = relative;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0) {
            return Err(Error::invalid("gap tolerance must be positive"));
        }
        if self.check_every == 0 {
            return Err(Error::invalid("check_every must be positive"));
        }
        if let StepRule::Fixed { eta } = self.step_rule {
            if !(eta > 0.0) {
                return Err(Error::invalid("fixed step size must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleSolution {
    pub x_hat: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub certified_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The absolute gap tolerance the run was held to.
    pub tolerance: f64,
}

pub fn best_response(objective: &SaddleObjective, fixed: &[f64], side: Side) -> Result<(Vec<f64>, f64)> {
    objective.best_response(fixed, side)
}

pub fn empirical_duality_gap(objective: &SaddleObjective, x: &[f64], y: &[f64]) -> Result<f64> {
    objective.duality_gap(x, y)
}

fn effective_tol(objective: &SaddleObjective, config: &SolverConfig) -> f64 {
    if config.relative_gap {
        let (x0, y0) = (objective.set_x.center(), objective.set_y.center());
        config.gap_tol * (1.0 + objective.value(&x0, &y0).abs())
    } else {
        config.gap_tol
    }
}

/// Solves the stationarity system of an unconstrained objective whose blocks
/// are both strictly quadratic.
pub fn solve_quadratic_closed_form(objective: &SaddleObjective) -> Result<SaddleSolution> {
    for set in [&objective.set_x, &objective.set_y] {
        if !matches!(set, FeasibleSet::Unbounded { .. }) {
            return Err(Error::unsupported("closed-form solve needs unbounded sets"));
        }
    }
    let (x, y) = stationary_point(objective)?;
    let gap = objective.duality_gap(&x, &y)?;
    Ok(SaddleSolution {
        x_hat: x,
        y_hat: y,
        certified_gap: gap,
        iterations: 0,
        converged: true,
        tolerance: 1e-10,
    })
}

fn stationary_point(objective: &SaddleObjective) -> Result<(Vec<f64>, Vec<f64>)> {
    let reg = &objective.regularizer;
    if !matches!(reg.kind, RegularizerKind::None | RegularizerKind::QuadraticQuadratic) {
        return Err(Error::unsupported("closed-form solve needs a quadratic or absent regularizer"));
    }
    let model = &objective.model;
    let qx = model.qx + reg.x_quadratic();
    let qy = model.qy + reg.y_quadratic();
    if !(qx > 0.0 && qy > 0.0) {
        return Err(Error::unsupported(format!(
            "stationarity system is singular (curvatures {qx} and {qy})"
        )));
    }
    // (qx I + M M^T / qy) x = -cx - M dy / qy,  y = (dy + M^T x) / qy
    let m = &model.m;
    let dx = model.dim_x();
    let k: DMatrix<f64> = DMatrix::identity(dx, dx) * qx + (m * m.transpose()) / qy;
    let md = mat_vec(m, &model.dy);
    let rhs = DVector::from_iterator(dx, model.cx.iter().zip(&md).map(|(c, v)| -c - v / qy));
    let sol = k
        .cholesky()
        .ok_or_else(|| Error::unsupported("stationarity system is not positive definite"))?
        .solve(&rhs);
    let x: Vec<f64> = sol.iter().copied().collect();
    let mtx = mat_t_vec(m, &x);
    let y = model.dy.iter().zip(&mtx).map(|(d, v)| (d + v) / qy).collect();
    Ok((x, y))
}

/// Closed form when it applies and lands inside the sets, mirror prox otherwise.
pub fn solve_saddle(objective: &SaddleObjective, config: &SolverConfig) -> Result<SaddleSolution> {
    config.validate()?;
    let boxy = |s: &FeasibleSet| matches!(s, FeasibleSet::Unbounded { .. } | FeasibleSet::LinfBox { .. });
    if boxy(&objective.set_x) && boxy(&objective.set_y) {
        if let Ok((x, y)) = stationary_point(objective) {
            if objective.set_x.contains(&x, 0.0) && objective.set_y.contains(&y, 0.0) {
                let gap = objective.duality_gap(&x, &y)?;
                let tol = effective_tol(objective, config);
                if gap <= tol {
                    return Ok(SaddleSolution {
                        x_hat: x,
                        y_hat: y,
                        certified_gap: gap,
                        iterations: 0,
                        converged: true,
                        tolerance: tol,
                    });
                }
            }
        }
    }
    solve_mirror_prox(objective, config)
}

#[derive(Debug, Clone)]
struct Block {
    set: FeasibleSet,
    entropy: bool,
    /// Quadratic weight handled inside the prox step (Euclidean blocks).
    prox_quad: f64,
    /// Entropy weight handled inside the prox step (entropy blocks).
    prox_ent: f64,
    /// Quadratic weight handled through the gradient.
    explicit_quad: f64,
}

impl Block {
    fn new(set: &FeasibleSet, geometry: Geometry, quad: f64, ent: f64) -> Result<Self> {
        let entropy = match geometry {
            Geometry::Euclidean => false,
            Geometry::Entropy => true,
            Geometry::Auto => {
                set.is_simplex_like() && (ent > 0.0 || matches!(set, FeasibleSet::OccupancySet { .. }))
            }
        };
        if entropy && !set.is_simplex_like() {
            return Err(Error::invalid("entropy geometry needs a simplex or occupancy set"));
        }
        if !entropy && ent > 0.0 {
            return Err(Error::unsupported(
                "entropy regularization needs entropy geometry on its block",
            ));
        }
        Ok(if entropy {
            Block {
                set: set.clone(),
                entropy,
                prox_quad: 0.0,
                prox_ent: ent,
                explicit_quad: quad,
            }
        } else {
            Block {
                set: set.clone(),
                entropy,
                prox_quad: quad,
                prox_ent: 0.0,
                explicit_quad: 0.0,
            }
        })
    }

    fn prox(&self, center: &[f64], g: &[f64], eta: f64) -> Result<Vec<f64>> {
        if self.entropy {
            let s = 1.0 + eta * self.prox_ent;
            let logw: Vec<f64> = center
                .iter()
                .zip(g)
                .map(|(c, gi)| (c.max(LOG_FLOOR).ln() - eta * gi) / s)
                .collect();
            kl_project(&self.set, &logw)
        } else {
            let s = 1.0 + eta * self.prox_quad;
            let target: Vec<f64> = center.iter().zip(g).map(|(c, gi)| (c - eta * gi) / s).collect();
            project_euclidean(&self.set, &target)
        }
    }

    fn divergence(&self, a: &[f64], b: &[f64]) -> f64 {
        if self.entropy {
            a.iter()
                .zip(b)
                .map(|(ai, bi)| {
                    let (ai, bi) = (ai.max(LOG_FLOOR), bi.max(LOG_FLOOR));
                    ai * (ai / bi).ln() - ai + bi
                })
                .sum::<f64>()
                .max(0.0)
        } else {
            0.5 * dist2_sq(a, b)
        }
    }
}

struct Operator<'a> {
    objective: &'a SaddleObjective,
    bx: Block,
    by: Block,
}

impl Operator<'_> {
    /// Gradient of the part of the objective not absorbed by the prox steps,
    /// with the y block written as a minimization.
    fn eval(&self, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let model = &self.objective.model;
        let mut gx = mat_vec(&model.m, y);
        for ((g, c), xi) in gx.iter_mut().zip(&model.cx).zip(x) {
            *g += c + self.bx.explicit_quad * xi;
        }
        let mut gy = mat_t_vec(&model.m, x);
        for ((g, d), yi) in gy.iter_mut().zip(&model.dy).zip(y) {
            *g = -(*g + d) + self.by.explicit_quad * yi;
        }
        (gx, gy)
    }
}

/// Composite mirror prox (extragradient with Bregman steps).
///
/// Regularizer terms matching a block's geometry are folded into that block's
/// prox step; everything else enters through the monotone operator. The
/// returned pair is the best checkpoint among last iterates and ergodic
/// averages, with its exact duality gap.
pub fn solve_mirror_prox(objective: &SaddleObjective, config: &SolverConfig) -> Result<SaddleSolution> {
    config.validate()?;
    let reg = &objective.regularizer;
    let model = &objective.model;
    let bx = Block::new(
        &objective.set_x,
        config.geometry_x,
        model.qx + reg.x_quadratic(),
        reg.x_entropy(),
    )?;
    let by = Block::new(
        &objective.set_y,
        config.geometry_y,
        model.qy + reg.y_quadratic(),
        reg.y_entropy(),
    )?;
    let op = Operator { objective, bx, by };
    let tol = effective_tol(objective, config);

    let mut x = objective.set_x.center();
    let mut y = objective.set_y.center();
    let initial_gap = objective.duality_gap(&x, &y)?;
    let mut best = (x.clone(), y.clone(), initial_gap);
    if initial_gap <= tol {
        return Ok(SaddleSolution {
            x_hat: x,
            y_hat: y,
            certified_gap: initial_gap,
            iterations: 0,
            converged: true,
            tolerance: tol,
        });
    }
    let limit = 1e6 * initial_gap.max(tol);

    let (mut eta, adaptive) = match config.step_rule {
        StepRule::Fixed { eta } => (eta, false),
        StepRule::AdaptiveBacktracking => (1.0, true),
    };
    let mut avg_x = vec![0.0; x.len()];
    let mut avg_y = vec![0.0; y.len()];
    let mut weight = 0.0;

    for iter in 1..=config.max_iter {
        let (gzx, gzy) = op.eval(&x, &y);
        let (wx, wy, nx, ny) = loop {
            let wx = op.bx.prox(&x, &gzx, eta)?;
            let wy = op.by.prox(&y, &gzy, eta)?;
            let (gwx, gwy) = op.eval(&wx, &wy);
            let nx = op.bx.prox(&x, &gwx, eta)?;
            let ny = op.by.prox(&y, &gwy, eta)?;
            if !adaptive || eta < 1e-12 {
                break (wx, wy, nx, ny);
            }
            let dgx: Vec<f64> = gwx.iter().zip(&gzx).map(|(a, b)| a - b).collect();
            let dgy: Vec<f64> = gwy.iter().zip(&gzy).map(|(a, b)| a - b).collect();
            let ux: Vec<f64> = wx.iter().zip(&nx).map(|(a, b)| a - b).collect();
            let uy: Vec<f64> = wy.iter().zip(&ny).map(|(a, b)| a - b).collect();
            let lhs = eta * (dot(&dgx, &ux) + dot(&dgy, &uy));
            let rhs = op.bx.divergence(&wx, &x)
                + op.by.divergence(&wy, &y)
                + op.bx.divergence(&nx, &wx)
                + op.by.divergence(&ny, &wy);
            if lhs <= rhs * (1.0 + 1e-9) + 1e-300 {
                break (wx, wy, nx, ny);
            }
            eta *= 0.5;
        };
        for (a, w) in avg_x.iter_mut().zip(&wx) {
            *a += eta * w;
        }
        for (a, w) in avg_y.iter_mut().zip(&wy) {
            *a += eta * w;
        }
        weight += eta;
        x = nx;
        y = ny;
        if adaptive {
            eta *= 1.2;
        }

        if iter % config.check_every == 0 || iter == config.max_iter {
            let gap_last = objective.duality_gap(&x, &y)?;
            if gap_last.is_nan() || gap_last > limit {
                return Err(Error::Divergence {
                    gap: gap_last,
                    limit,
                });
            }
            if gap_last < best.2 {
                best = (x.clone(), y.clone(), gap_last);
            }
            let ax: Vec<f64> = avg_x.iter().map(|v| v / weight).collect();
            let ay: Vec<f64> = avg_y.iter().map(|v| v / weight).collect();
            // Averages can drift off curved sets by rounding; map them back.
            let ax = snap(&objective.set_x, ax)?;
            let ay = snap(&objective.set_y, ay)?;
            let gap_avg = objective.duality_gap(&ax, &ay)?;
            if gap_avg < best.2 {
                best = (ax, ay, gap_avg);
            }
            if best.2 <= tol {
                return Ok(SaddleSolution {
                    x_hat: best.0,
                    y_hat: best.1,
                    certified_gap: best.2,
                    iterations: iter,
                    converged: true,
                    tolerance: tol,
                });
            }
        }
    }
    Ok(SaddleSolution {
        x_hat: best.0,
        y_hat: best.1,
        certified_gap: best.2,
        iterations: config.max_iter,
        converged: false,
        tolerance: tol,
    })
}

fn snap(set: &FeasibleSet, p: Vec<f64>) -> Result<Vec<f64>> {
    if set.contains(&p, 1e-14) {
        Ok(p)
    } else {
        project_euclidean(set, &p)
    }
}
