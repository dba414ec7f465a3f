//! Norms, feasible sets, projections, entropic steps and diameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist2_sq, log_sum_exp, norm2};

/// Floor applied before taking logarithms of simplex coordinates.
pub const LOG_FLOOR: f64 = 1e-300;
pub const DYKSTRA_TOL: f64 = 1e-10;
pub const DYKSTRA_MAX_ITER: usize = 10_000;
/// Tolerance used when `project_euclidean` runs Dykstra internally.
const PROJECTION_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormTag {
    EuclideanL2,
    SumL1,
    MaxLinf,
}

impl NormTag {
    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            NormTag::EuclideanL2 => norm2(v),
            NormTag::SumL1 => v.iter().map(|x| x.abs()).sum(),
            NormTag::MaxLinf => v.iter().fold(0.0, |m, x| f64::max(m, x.abs())),
        }
    }

    pub fn dual(self) -> NormTag {
        match self {
            NormTag::EuclideanL2 => NormTag::EuclideanL2,
            NormTag::SumL1 => NormTag::MaxLinf,
            NormTag::MaxLinf => NormTag::SumL1,
        }
    }

    pub fn dual_norm(self, v: &[f64]) -> f64 {
        self.dual().norm(v)
    }

    /// A unit vector `u` (in this norm) with `<u, v> = dual_norm(v)`.
    pub fn dual_maximizer(self, v: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; v.len()];
        match self {
            NormTag::EuclideanL2 => {
                let n = norm2(v);
                if n > 0.0 {
                    for (ui, vi) in u.iter_mut().zip(v) {
                        *ui = vi / n;
                    }
                }
            }
            NormTag::SumL1 => {
                if let Some((k, _)) = v
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                {
                    u[k] = if v[k] < 0.0 { -1.0 } else { 1.0 };
                }
            }
            NormTag::MaxLinf => {
                for (ui, vi) in u.iter_mut().zip(v) {
                    *ui = if *vi < 0.0 { -1.0 } else { 1.0 };
                }
            }
        }
        u
    }
}

/// Feasible regions for the two blocks of a saddle-point problem.
///
/// Occupancy vectors are stored state-major: index `s * num_actions + a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeasibleSet {
    LinfBox {
        dim: usize,
        radius: f64,
    },
    Simplex {
        dim: usize,
    },
    OccupancySet {
        num_states: usize,
        num_actions: usize,
        marginal_low: f64,
        marginal_high: f64,
    },
    /// Per-state marginal window without the simplex constraint; a Dykstra component.
    MarginalWindow {
        num_states: usize,
        num_actions: usize,
        marginal_low: f64,
        marginal_high: f64,
    },
    Unbounded {
        dim: usize,
    },
}

impl FeasibleSet {
    pub fn linf_box(dim: usize, radius: f64) -> Result<Self> {
        if dim == 0 || !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid(format!(
                "box needs dim > 0 and a positive finite radius (dim {dim}, radius {radius})"
            )));
        }
        Ok(FeasibleSet::LinfBox { dim, radius })
    }

    pub fn simplex(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("simplex dimension must be positive"));
        }
        Ok(FeasibleSet::Simplex { dim })
    }

    pub fn occupancy(num_states: usize, num_actions: usize, low: f64, high: f64) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::invalid("occupancy set needs at least one state and action"));
        }
        let u = 1.0 / num_states as f64;
        if !(low > 0.0 && low <= u * (1.0 + 1e-12) && high >= u * (1.0 - 1e-12)) {
            return Err(Error::invalid(format!(
                "marginal window [{low}, {high}] must satisfy 0 < low <= 1/{num_states} <= high"
            )));
        }
        Ok(FeasibleSet::OccupancySet {
            num_states,
            num_actions,
            marginal_low: low,
            marginal_high: high,
        })
    }

    pub fn unbounded(dim: usize) -> Self {
        FeasibleSet::Unbounded { dim }
    }

    pub fn dim(&self) -> usize {
        match *self {
            FeasibleSet::LinfBox { dim, .. } => dim,
            FeasibleSet::Simplex { dim } => dim,
            FeasibleSet::OccupancySet {
                num_states,
                num_actions,
                ..
            }
            | FeasibleSet::MarginalWindow {
                num_states,
                num_actions,
                ..
            } => num_states * num_actions,
            FeasibleSet::Unbounded { dim } => dim,
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(
            self,
            FeasibleSet::Unbounded { .. } | FeasibleSet::MarginalWindow { .. }
        )
    }

    /// Sets on which entropy geometry is defined.
    pub fn is_simplex_like(&self) -> bool {
        matches!(
            self,
            FeasibleSet::Simplex { .. } | FeasibleSet::OccupancySet { .. }
        )
    }

    /// A canonical interior (or central) feasible point.
    pub fn center(&self) -> Vec<f64> {
        let d = self.dim();
        match self {
            FeasibleSet::Simplex { .. } | FeasibleSet::OccupancySet { .. } => vec![1.0 / d as f64; d],
            _ => vec![0.0; d],
        }
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        if p.len() != self.dim() || p.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match *self {
            FeasibleSet::LinfBox { radius, .. } => p.iter().all(|v| v.abs() <= radius + tol),
            FeasibleSet::Simplex { .. } => {
                p.iter().all(|v| *v >= -tol) && (p.iter().sum::<f64>() - 1.0).abs() <= tol
            }
            FeasibleSet::OccupancySet {
                num_actions,
                marginal_low,
                marginal_high,
                ..
            } => {
                p.iter().all(|v| *v >= -tol)
                    && (p.iter().sum::<f64>() - 1.0).abs() <= tol
                    && marginals(p, num_actions)
                        .iter()
                        .all(|m| *m >= marginal_low - tol && *m <= marginal_high + tol)
            }
            FeasibleSet::MarginalWindow {
                num_actions,
                marginal_low,
                marginal_high,
                ..
            } => marginals(p, num_actions)
                .iter()
                .all(|m| *m >= marginal_low - tol && *m <= marginal_high + tol),
            FeasibleSet::Unbounded { .. } => true,
        }
    }

    /// Random feasible point. Unbounded sets draw from a unit box.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        match *self {
            FeasibleSet::LinfBox { radius, .. } => {
                (0..d).map(|_| rng.random_range(-radius..=radius)).collect()
            }
            FeasibleSet::Unbounded { .. } | FeasibleSet::MarginalWindow { .. } => {
                (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect()
            }
            FeasibleSet::Simplex { .. } => {
                let e: Vec<f64> = (0..d)
                    .map(|_| -(1.0 - rng.random::<f64>()).ln())
                    .collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            }
            FeasibleSet::OccupancySet { .. } => {
                let logw: Vec<f64> = (0..d)
                    .map(|_| (-(1.0 - rng.random::<f64>()).ln()).max(LOG_FLOOR).ln())
                    .collect();
                kl_project(self, &logw).expect("occupancy set accepts any log-weights")
            }
        }
    }
}

/// Per-state marginals `sum_a v[s, a]` of a state-major vector.
pub fn marginals(v: &[f64], num_actions: usize) -> Vec<f64> {
    v.chunks(num_actions).map(|c| c.iter().sum()).collect()
}

fn check_dim(set: &FeasibleSet, len: usize) -> Result<()> {
    if set.dim() != len {
        return Err(Error::invalid(format!(
            "dimension mismatch: set has dimension {}, point has {}",
            set.dim(),
            len
        )));
    }
    Ok(())
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(p: &[f64]) -> Vec<f64> {
    let mut u = p.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    p.iter().map(|v| (v - theta).max(0.0)).collect()
}

fn project_marginal_window(p: &[f64], num_actions: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut out = p.to_vec();
    for block in out.chunks_mut(num_actions) {
        let m: f64 = block.iter().sum();
        let target = m.clamp(lo, hi);
        if target != m {
            let shift = (target - m) / num_actions as f64;
            for v in block.iter_mut() {
                *v += shift;
            }
        }
    }
    out
}

/// Projection onto a single convex component, exact for every variant except
/// `OccupancySet`, which is not a valid Dykstra component.
fn project_component(set: &FeasibleSet, p: &[f64]) -> Result<Vec<f64>> {
    match *set {
        FeasibleSet::LinfBox { radius, .. } => Ok(p.iter().map(|v| v.clamp(-radius, radius)).collect()),
        FeasibleSet::Simplex { .. } => Ok(project_simplex(p)),
        FeasibleSet::MarginalWindow {
            num_actions,
            marginal_low,
            marginal_high,
            ..
        } => Ok(project_marginal_window(p, num_actions, marginal_low, marginal_high)),
        FeasibleSet::Unbounded { .. } => Ok(p.to_vec()),
        FeasibleSet::OccupancySet { .. } => project_euclidean(set, p),
    }
}

/// L2-nearest point of `set`.
pub fn project_euclidean(set: &FeasibleSet, point: &[f64]) -> Result<Vec<f64>> {
    check_dim(set, point.len())?;
    match *set {
        FeasibleSet::OccupancySet {
            num_states,
            num_actions,
            marginal_low,
            marginal_high,
        } => {
            if set.contains(point, 1e-15) {
                return Ok(point.to_vec());
            }
            let window = FeasibleSet::MarginalWindow {
                num_states,
                num_actions,
                marginal_low,
                marginal_high,
            };
            let simplex = FeasibleSet::Simplex {
                dim: num_states * num_actions,
            };
            dykstra_project(&[window, simplex], point, PROJECTION_TOL, DYKSTRA_MAX_ITER)
        }
        _ => project_component(set, point),
    }
}

/// Dykstra's alternating projection onto the intersection of `sets`.
///
/// Stops once a full sweep moves the iterate by less than `tolerance` and the
/// iterate lies in every component within `tolerance`.
pub fn dykstra_project(
    sets: &[FeasibleSet],
    point: &[f64],
    tolerance: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    if sets.is_empty() {
        return Err(Error::invalid("dykstra needs at least one component set"));
    }
    if !(tolerance > 0.0) {
        return Err(Error::invalid("dykstra tolerance must be positive"));
    }
    for s in sets {
        check_dim(s, point.len())?;
    }
    let d = point.len();
    let mut x = point.to_vec();
    let mut incr = vec![vec![0.0; d]; sets.len()];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let start = x.clone();
        for (set, inc) in sets.iter().zip(incr.iter_mut()) {
            let shifted: Vec<f64> = x.iter().zip(inc.iter()).map(|(a, b)| a + b).collect();
            let proj = project_component(set, &shifted)?;
            for k in 0..d {
                inc[k] = shifted[k] - proj[k];
            }
            x = proj;
        }
        let moved = dist2_sq(&start, &x).sqrt();
        let violation = sets
            .iter()
            .map(|s| project_component(s, &x).map(|p| dist2_sq(&p, &x).sqrt()))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        residual = moved.max(violation);
        if residual <= tolerance {
            return Ok(x);
        }
    }
    Err(Error::no_convergence("dykstra projection", max_iter, residual))
}

/// Multiplicative-weights step `p_i ∝ p_i exp(-step g_i)`.
pub fn entropy_mirror_step(point: &[f64], gradient: &[f64], stepsize: f64) -> Result<Vec<f64>> {
    if point.len() != gradient.len() {
        return Err(Error::invalid("point and gradient dimensions differ"));
    }
    if point.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("entropy step needs a strictly positive point"));
    }
    if !(stepsize > 0.0) {
        return Err(Error::invalid("stepsize must be positive"));
    }
    let logw: Vec<f64> = point
        .iter()
        .zip(gradient)
        .map(|(p, g)| p.max(LOG_FLOOR).ln() - stepsize * g)
        .collect();
    Ok(softmax(&logw))
}

/// Normalized exponentials with max subtraction; every output is at least `LOG_FLOOR`.
pub fn softmax(logw: &[f64]) -> Vec<f64> {
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v = (*v / s).max(LOG_FLOOR);
    }
    out
}

/// KL (Bregman) projection of the positive weights `exp(logw)` onto a
/// simplex-like set: the minimizer of `KL(v || exp(logw))`.
pub fn kl_project(set: &FeasibleSet, logw: &[f64]) -> Result<Vec<f64>> {
    check_dim(set, logw.len())?;
    match *set {
        FeasibleSet::Simplex { .. } => Ok(softmax(logw)),
        FeasibleSet::OccupancySet {
            num_actions,
            marginal_low,
            marginal_high,
            ..
        } => Ok(kl_project_occupancy(logw, num_actions, marginal_low, marginal_high)),
        _ => Err(Error::unsupported("entropy geometry needs a simplex or occupancy set")),
    }
}

fn kl_project_occupancy(logw: &[f64], num_actions: usize, lo: f64, hi: f64) -> Vec<f64> {
    let lse: Vec<f64> = logw.chunks(num_actions).map(log_sum_exp).collect();
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    let log_marg = |lambda: f64| -> Vec<f64> {
        lse.iter().map(|a| (a - lambda).clamp(ln_lo, ln_hi)).collect()
    };
    let total = |lambda: f64| -> f64 { log_marg(lambda).iter().map(|l| l.exp()).sum() };
    let amin = lse.iter().cloned().fold(f64::INFINITY, f64::min);
    let amax = lse.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // total(l_lo) = S*hi >= 1 and total(l_hi) = S*lo <= 1; total is nonincreasing.
    let mut l_lo = amin - ln_hi;
    let mut l_hi = amax - ln_lo;
    for _ in 0..200 {
        let mid = 0.5 * (l_lo + l_hi);
        if total(mid) > 1.0 {
            l_lo = mid;
        } else {
            l_hi = mid;
        }
        if l_hi - l_lo <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    let mut lambda = 0.5 * (l_lo + l_hi);
    // Exact solve on the set of states whose marginal is not clipped.
    let lm = log_marg(lambda);
    let mut fixed = 0.0;
    let mut free_lse = Vec::new();
    for (a, l) in lse.iter().zip(&lm) {
        if *l <= ln_lo || *l >= ln_hi {
            fixed += l.exp();
        } else {
            free_lse.push(*a);
        }
    }
    if !free_lse.is_empty() && fixed < 1.0 {
        let exact = log_sum_exp(&free_lse) - (1.0 - fixed).ln();
        if (exact - lambda).abs() <= 1e-8 * (1.0 + lambda.abs()) {
            lambda = exact;
        }
    }
    let lm = log_marg(lambda);
    let mut out = Vec::with_capacity(logw.len());
    for ((block, a), l) in logw.chunks(num_actions).zip(&lse).zip(&lm) {
        let m = l.exp();
        for w in block {
            out.push((m * (w - a).exp()).max(LOG_FLOOR));
        }
    }
    // Remove the last rounding drift so the point sums to one.
    let s: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= s;
    }
    out
}

/// Minimizer over `set` of the separable function
/// `(curvature/2)|v|^2 + <linear, v> + entropy * sum v log v`.
///
/// This is the exact best-response oracle for every model in the crate.
pub fn argmin_separable(
    set: &FeasibleSet,
    curvature: f64,
    linear: &[f64],
    entropy: f64,
) -> Result<Vec<f64>> {
    check_dim(set, linear.len())?;
    if curvature < 0.0 || entropy < 0.0 {
        return Err(Error::invalid("curvature and entropy weight must be nonnegative"));
    }
    if entropy > 0.0 && !set.is_simplex_like() {
        return Err(Error::unsupported(
            "entropy terms are only defined on simplex or occupancy sets",
        ));
    }
    match (curvature > 0.0, entropy > 0.0) {
        (true, false) => {
            let target: Vec<f64> = linear.iter().map(|c| -c / curvature).collect();
            project_euclidean(set, &target)
        }
        (false, false) => linear_minimizer(set, linear),
        (false, true) => {
            let logw: Vec<f64> = linear.iter().map(|c| -c / entropy).collect();
            kl_project(set, &logw)
        }
        (true, true) => match set {
            FeasibleSet::Simplex { .. } => Ok(quad_entropy_simplex(curvature, linear, entropy)),
            _ => quad_entropy_iterative(set, curvature, linear, entropy),
        },
    }
}

/// Minimizer of a linear function; ties go to the lowest index.
pub fn linear_minimizer(set: &FeasibleSet, c: &[f64]) -> Result<Vec<f64>> {
    check_dim(set, c.len())?;
    match *set {
        FeasibleSet::LinfBox { radius, .. } => Ok(c
            .iter()
            .map(|ci| {
                if *ci > 0.0 {
                    -radius
                } else if *ci < 0.0 {
                    radius
                } else {
                    0.0
                }
            })
            .collect()),
        FeasibleSet::Simplex { dim } => {
            let mut best = 0;
            for k in 1..dim {
                if c[k] < c[best] {
                    best = k;
                }
            }
            let mut v = vec![0.0; dim];
            v[best] = 1.0;
            Ok(v)
        }
        FeasibleSet::OccupancySet {
            num_states,
            num_actions,
            marginal_low,
            marginal_high,
        } => {
            let mut best_action = Vec::with_capacity(num_states);
            let mut best_value = Vec::with_capacity(num_states);
            for block in c.chunks(num_actions) {
                let mut b = 0;
                for a in 1..num_actions {
                    if block[a] < block[b] {
                        b = a;
                    }
                }
                best_action.push(b);
                best_value.push(block[b]);
            }
            let mut order: Vec<usize> = (0..num_states).collect();
            order.sort_by(|&i, &j| best_value[i].total_cmp(&best_value[j]).then(i.cmp(&j)));
            let mut m = vec![marginal_low; num_states];
            let mut budget = 1.0 - marginal_low * num_states as f64;
            for s in order {
                let add = budget.min(marginal_high - marginal_low).max(0.0);
                m[s] += add;
                budget -= add;
            }
            let mut v = vec![0.0; num_states * num_actions];
            for s in 0..num_states {
                v[s * num_actions + best_action[s]] = m[s];
            }
            Ok(v)
        }
        FeasibleSet::Unbounded { .. } | FeasibleSet::MarginalWindow { .. } => {
            if c.iter().all(|x| x.abs() <= 1e-14) {
                Ok(vec![0.0; set.dim()])
            } else {
                Err(Error::unsupported(
                    "linear objective is unbounded below on an unbounded set",
                ))
            }
        }
    }
}

/// Solves `kappa v + e ln v = t` for `v > 0`.
fn solve_quad_log(kappa: f64, e: f64, t: f64) -> f64 {
    // Newton in u = ln v on the increasing convex map u -> kappa e^u + e u.
    let f = |u: f64| kappa * u.exp() + e * u - t;
    let mut lo = (t - kappa) / e; // f(lo) <= 0 when lo <= 0
    lo = lo.min(0.0).min(t / e) - 1.0;
    let mut hi = (t / kappa).max(1.0).ln().max(t / e) + 1.0;
    while f(lo) > 0.0 {
        lo -= (lo.abs() + 1.0) * 2.0;
    }
    while f(hi) < 0.0 {
        hi += hi.abs() + 1.0;
    }
    let mut u = hi;
    for _ in 0..200 {
        let fu = f(u);
        if fu > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let step = fu / (kappa * u.exp() + e);
        let mut next = u - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 1e-15 * (1.0 + u.abs()) {
            u = next;
            break;
        }
        u = next;
    }
    u.exp()
}

fn quad_entropy_simplex(kappa: f64, c: &[f64], e: f64) -> Vec<f64> {
    // Stationarity: kappa v_i + e ln v_i = -c_i - e - lambda.
    let v_of = |lambda: f64| -> Vec<f64> {
        c.iter()
            .map(|ci| solve_quad_log(kappa, e, -ci - e - lambda))
            .collect()
    };
    let sum = |lambda: f64| v_of(lambda).iter().sum::<f64>();
    let cmin = c.iter().cloned().fold(f64::INFINITY, f64::min);
    let cmax = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = c.len() as f64;
    // Every v_i >= 1 at l_lo and every v_i <= 1/n at l_hi.
    let mut l_lo = -cmax - e - kappa;
    let mut l_hi = -cmin - e - kappa / n + e * n.ln();
    while sum(l_lo) < 1.0 {
        l_lo -= 1.0 + l_lo.abs();
    }
    while sum(l_hi) > 1.0 {
        l_hi += 1.0 + l_hi.abs();
    }
    for _ in 0..200 {
        let mid = 0.5 * (l_lo + l_hi);
        if sum(mid) > 1.0 {
            l_lo = mid;
        } else {
            l_hi = mid;
        }
        if l_hi - l_lo <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    let mut v = v_of(0.5 * (l_lo + l_hi));
    let s: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x = (*x / s).max(LOG_FLOOR);
    }
    v
}

fn quad_entropy_iterative(set: &FeasibleSet, kappa: f64, c: &[f64], e: f64) -> Result<Vec<f64>> {
    // Composite entropic mirror descent with step 1/kappa (valid since the
    // quadratic is kappa-smooth in L1 and entropy is 1-strongly convex in L1).
    let mut v = set.center();
    let max_iter = 100_000;
    let mut change = f64::INFINITY;
    for _ in 0..max_iter {
        let logw: Vec<f64> = v
            .iter()
            .zip(c)
            .map(|(vi, ci)| (kappa * vi.max(LOG_FLOOR).ln() - kappa * vi - ci) / (kappa + e))
            .collect();
        let next = kl_project(set, &logw)?;
        change = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if change <= 1e-15 {
            return Ok(v);
        }
    }
    if change <= 1e-12 {
        return Ok(v);
    }
    Err(Error::no_convergence("entropic best response", max_iter, change))
}

/// Supremum over pairs of points of the norm distance.
pub fn set_diameter(set: &FeasibleSet, norm: NormTag) -> Result<f64> {
    match *set {
        FeasibleSet::Unbounded { .. } | FeasibleSet::MarginalWindow { .. } => {
            Err(Error::unsupported("diameter of an unbounded set"))
        }
        FeasibleSet::LinfBox { dim, radius } => Ok(match norm {
            NormTag::EuclideanL2 => 2.0 * radius * (dim as f64).sqrt(),
            NormTag::SumL1 => 2.0 * radius * dim as f64,
            NormTag::MaxLinf => 2.0 * radius,
        }),
        FeasibleSet::Simplex { dim } => Ok(if dim == 1 {
            0.0
        } else {
            match norm {
                NormTag::EuclideanL2 => 2f64.sqrt(),
                NormTag::SumL1 => 2.0,
                NormTag::MaxLinf => 1.0,
            }
        }),
        FeasibleSet::OccupancySet {
            num_states,
            num_actions,
            marginal_low,
            marginal_high,
        } => occupancy_diameter(num_states, num_actions, marginal_low, marginal_high, norm),
    }
}

fn occupancy_diameter(s: usize, a: usize, lo: f64, hi: f64, norm: NormTag) -> Result<f64> {
    let sf = s as f64;
    let top = hi.min(1.0 - (sf - 1.0) * lo);
    if a >= 2 {
        // Two points supported on different actions of every state.
        return Ok(match norm {
            NormTag::SumL1 => 2.0,
            NormTag::MaxLinf => top,
            NormTag::EuclideanL2 => (2.0 * max_marginal_square_sum(s, lo, hi)).sqrt(),
        });
    }
    // Single action: the set is the marginal window intersected with the simplex.
    match norm {
        NormTag::MaxLinf => Ok(top - lo.max(1.0 - (sf - 1.0) * hi)),
        NormTag::SumL1 => {
            let mut best: f64 = 0.0;
            for k in 0..=s {
                let kf = k as f64;
                let up = (kf * hi).min(1.0 - (sf - kf) * lo);
                let down = (kf * lo).max(1.0 - (sf - kf) * hi);
                best = best.max(up - down);
            }
            Ok(2.0 * best)
        }
        NormTag::EuclideanL2 => Err(Error::unsupported(
            "L2 diameter of a single-action occupancy set",
        )),
    }
}

/// Maximum of `sum_s m_s^2` over marginals in the window summing to one.
fn max_marginal_square_sum(s: usize, lo: f64, hi: f64) -> f64 {
    let mut m = vec![lo; s];
    let mut budget = 1.0 - lo * s as f64;
    for v in m.iter_mut() {
        let add = budget.min(hi - lo).max(0.0);
        *v += add;
        budget -= add;
    }
    m.iter().map(|x| x * x).sum()
}
