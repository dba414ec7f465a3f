//! Average-reward MDPs as bilinear saddle-point problems: instances, exact
//! reference solutions, transition sampling, the entropy-regularized
//! empirical problem and the policy-regret experiment.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{FeasibleSet, NormTag};
use crate::linalg::{mean, norm2_sq, sample_std, spectral_norm};
use crate::metrics::replication_seed;
use crate::problems::{
    draw_samples, empirical_objective, EmpiricalObjective, ProblemConstants, Regularizer, RegularizerKind,
    SaddleModel, SampleSet, StochasticSaddleProblem,
};
use crate::rates::{assemble, check_grid, RateRow, RateSweep};
use crate::rng::{derive_seed, stream, tag};
use crate::solver::{solve_saddle, SolverConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct MdpInstance {
    pub num_states: usize,
    pub num_actions: usize,
    /// `transitions[a][(s, s')]`, each row stochastic.
    pub transitions: Vec<DMatrix<f64>>,
    /// `rewards[(s, a)]` in `[0, 1]`.
    pub rewards: DMatrix<f64>,
}

/// `prob[(s, a)] = pi(a | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMatrix {
    pub prob: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MdpConstants {
    pub t_mix: usize,
    pub tau: f64,
    pub policy_set_size: usize,
}

/// One sampled successor and reward for every state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTransitionSet {
    pub next_state: Vec<Vec<usize>>,
    pub sampled_reward: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub v_star: f64,
    /// Bias vector, shifted so its range is centered at zero.
    pub x_star: Vec<f64>,
    /// Stationary state-action occupancy of `policy`.
    pub y_star: Vec<f64>,
    pub policy: Vec<usize>,
}

const ROW_TOL: f64 = 1e-12;

impl MdpInstance {
    pub fn new(transitions: Vec<DMatrix<f64>>, rewards: DMatrix<f64>) -> Result<Self> {
        let (s, a) = rewards.shape();
        if s == 0 || a == 0 {
            return Err(Error::invalid("an MDP needs at least one state and one action"));
        }
        if transitions.len() != a {
            return Err(Error::invalid(format!(
                "expected {a} transition matrices, got {}",
                transitions.len()
            )));
        }
        for (k, p) in transitions.iter().enumerate() {
            if p.shape() != (s, s) {
                return Err(Error::invalid(format!("transition matrix {k} must be {s}x{s}")));
            }
            for i in 0..s {
                let row = p.row(i);
                if row.iter().any(|v| !(*v >= 0.0)) || (row.sum() - 1.0).abs() > ROW_TOL {
                    return Err(Error::invalid(format!(
                        "row {i} of transition matrix {k} is not a probability vector"
                    )));
                }
            }
        }
        if rewards.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::invalid("rewards must lie in [0, 1]"));
        }
        Ok(MdpInstance {
            num_states: s,
            num_actions: a,
            transitions,
            rewards,
        })
    }

    /// `P_pi(s, s') = sum_a pi(a|s) P_a(s, s')`.
    pub fn policy_chain(&self, policy: &PolicyMatrix) -> DMatrix<f64> {
        let s = self.num_states;
        DMatrix::from_fn(s, s, |i, j| {
            (0..self.num_actions)
                .map(|a| policy.prob[(i, a)] * self.transitions[a][(i, j)])
                .sum()
        })
    }

    fn policy_reward(&self, policy: &PolicyMatrix) -> Vec<f64> {
        (0..self.num_states)
            .map(|i| {
                (0..self.num_actions)
                    .map(|a| policy.prob[(i, a)] * self.rewards[(i, a)])
                    .sum()
            })
            .collect()
    }

    /// Bilinear model `<y, r> + sum_a y_a^T (P_a - I) x` with `y` stored
    /// state-major.
    pub fn saddle_model(&self) -> SaddleModel {
        let (s, a) = (self.num_states, self.num_actions);
        let mut model = SaddleModel::zeros(s, s * a);
        for i in 0..s {
            for k in 0..a {
                let col = i * a + k;
                model.dy[col] = self.rewards[(i, k)];
                for j in 0..s {
                    model.m[(j, col)] = self.transitions[k][(i, j)];
                }
                model.m[(i, col)] -= 1.0;
            }
        }
        model
    }

    /// Plain-text form: a `states`/`actions` header, a `rewards` block of S rows
    /// with A entries, then one `action k` block of S rows per action.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "states {}", self.num_states);
        let _ = writeln!(out, "actions {}", self.num_actions);
        let row = |v: Vec<f64>| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "rewards");
        for i in 0..self.num_states {
            let _ = writeln!(out, "{}", row(self.rewards.row(i).iter().copied().collect()));
        }
        for (k, p) in self.transitions.iter().enumerate() {
            let _ = writeln!(out, "action {k}");
            for i in 0..self.num_states {
                let _ = writeln!(out, "{}", row(p.row(i).iter().copied().collect()));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut last_line = 0;
        let mut next = |what: &str| -> Result<(usize, &str)> {
            match lines.next() {
                Some((n, l)) => {
                    last_line = n;
                    Ok((n, l))
                }
                None => Err(Error::Parse {
                    line: last_line + 1,
                    message: format!("unexpected end of input, expected {what}"),
                }),
            }
        };
        let header = |(n, l): (usize, &str), key: &str| -> Result<usize> {
            let mut parts = l.split_whitespace();
            match (parts.next(), parts.next().map(str::parse::<usize>), parts.next()) {
                (Some(k), Some(Ok(v)), None) if k == key && v > 0 => Ok(v),
                _ => Err(Error::Parse {
                    line: n,
                    message: format!("expected `{key} <positive integer>`"),
                }),
            }
        };
        let numbers = |(n, l): (usize, &str), len: usize| -> Result<Vec<f64>> {
            let vals = l
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Parse {
                    line: n,
                    message: format!("invalid number: {e}"),
                })?;
            if vals.len() != len {
                return Err(Error::Parse {
                    line: n,
                    message: format!("expected {len} numbers, found {}", vals.len()),
                });
            }
            Ok(vals)
        };
        let s = header(next("states")?, "states")?;
        let a = header(next("actions")?, "actions")?;
        let (n, l) = next("rewards")?;
        if l != "rewards" {
            return Err(Error::Parse {
                line: n,
                message: "expected `rewards`".into(),
            });
        }
        let mut rewards = DMatrix::zeros(s, a);
        for i in 0..s {
            rewards.row_mut(i).copy_from_slice(&numbers(next("reward row")?, a)?);
        }
        let mut transitions = Vec::with_capacity(a);
        for k in 0..a {
            let (n, l) = next("action block")?;
            if l != format!("action {k}") {
                return Err(Error::Parse {
                    line: n,
                    message: format!("expected `action {k}`"),
                });
            }
            let mut p = DMatrix::zeros(s, s);
            for i in 0..s {
                p.row_mut(i).copy_from_slice(&numbers(next("transition row")?, s)?);
            }
            transitions.push(p);
        }
        if let Ok((n, _)) = next("") {
            return Err(Error::Parse {
                line: n,
                message: "trailing content after the last action block".into(),
            });
        }
        MdpInstance::new(transitions, rewards)
    }
}

impl PolicyMatrix {
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        PolicyMatrix {
            prob: DMatrix::from_fn(actions.len(), num_actions, |s, a| if actions[s] == a { 1.0 } else { 0.0 }),
        }
    }
}

/// Random instance whose transition probabilities are all at least `min_prob`;
/// rewards are uniform on `[0, 1]`.
pub fn make_random_ergodic_mdp(
    num_states: usize,
    num_actions: usize,
    min_prob: f64,
    seed: u64,
) -> Result<MdpInstance> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::invalid("an MDP needs at least one state and one action"));
    }
    let u = 1.0 / num_states as f64;
    if !(min_prob > 0.0 && min_prob <= u) {
        return Err(Error::invalid(format!(
            "minimum transition probability {min_prob} must lie in (0, 1/{num_states}]"
        )));
    }
    let mut rng = stream(seed);
    let free = 1.0 - num_states as f64 * min_prob;
    let transitions = (0..num_actions)
        .map(|_| {
            let mut p = DMatrix::zeros(num_states, num_states);
            for i in 0..num_states {
                let w: Vec<f64> = (0..num_states)
                    .map(|_| -(1.0 - rng.random::<f64>()).ln())
                    .collect();
                let total: f64 = w.iter().sum();
                for j in 0..num_states {
                    p[(i, j)] = min_prob + free * w[j] / total;
                }
                let sum: f64 = p.row(i).sum();
                p.row_mut(i).iter_mut().for_each(|v| *v /= sum);
            }
            p
        })
        .collect();
    let rewards = DMatrix::from_fn(num_states, num_actions, |_, _| rng.random::<f64>());
    MdpInstance::new(transitions, rewards)
}

/// Stationary distribution of an ergodic chain.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let s = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(s, s);
    a.row_mut(s - 1).fill(1.0);
    let mut b = DVector::zeros(s);
    b[s - 1] = 1.0;
    let lambda = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::invalid("chain has no unique stationary distribution"))?;
    let residual = (p.transpose() * &lambda - &lambda).amax();
    if lambda.iter().any(|v| !(*v > 0.0)) || residual > 1e-10 {
        return Err(Error::invalid(format!(
            "chain is not ergodic (min mass {:.3e}, residual {residual:.3e})",
            lambda.min()
        )));
    }
    Ok(lambda.iter().copied().collect())
}

const MAX_MIXING_STEPS: usize = 100_000;

/// Smallest `t` with every row of `P^t` within total variation 1/4 of `lambda`.
pub fn mixing_time(p: &DMatrix<f64>, lambda: &[f64]) -> Result<usize> {
    let mut pt = p.clone();
    for t in 1..=MAX_MIXING_STEPS {
        let worst = (0..pt.nrows())
            .map(|i| 0.5 * pt.row(i).iter().zip(lambda).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        if worst <= 0.25 {
            return Ok(t);
        }
        pt = &pt * p;
    }
    Err(Error::no_convergence("mixing time", MAX_MIXING_STEPS, f64::NAN))
}

const MAX_DETERMINISTIC_POLICIES: usize = 4096;

/// Lower estimates of the ergodicity constant and mixing time, taken over all
/// deterministic policies (or 4096 random ones when there are more) plus
/// `extra_random_policies` random stochastic policies.
pub fn estimate_mixing_constants(mdp: &MdpInstance, extra_random_policies: usize, seed: u64) -> Result<MdpConstants> {
    let (s, a) = (mdp.num_states, mdp.num_actions);
    let count = (a as f64).powi(s as i32);
    let mut rng = stream(derive_seed(seed, &[tag::POLICIES]));
    let mut policies: Vec<(String, PolicyMatrix)> = Vec::new();
    if count <= MAX_DETERMINISTIC_POLICIES as f64 {
        for code in 0..count as usize {
            let mut c = code;
            let acts: Vec<usize> = (0..s)
                .map(|_| {
                    let k = c % a;
                    c /= a;
                    k
                })
                .collect();
            policies.push((format!("deterministic {acts:?}"), PolicyMatrix::deterministic(&acts, a)));
        }
    } else {
        for _ in 0..MAX_DETERMINISTIC_POLICIES {
            let acts: Vec<usize> = (0..s).map(|_| rng.random_range(0..a)).collect();
            policies.push((format!("deterministic {acts:?}"), PolicyMatrix::deterministic(&acts, a)));
        }
    }
    for k in 0..extra_random_policies {
        let prob = DMatrix::from_fn(s, a, |_, _| -(1.0 - rng.random::<f64>()).ln());
        let prob = DMatrix::from_fn(s, a, |i, j| prob[(i, j)] / prob.row(i).sum());
        policies.push((format!("random policy {k}"), PolicyMatrix { prob }));
    }
    let per_policy = policies
        .par_iter()
        .map(|(name, pi)| {
            let chain = mdp.policy_chain(pi);
            let lambda = stationary_distribution(&chain).map_err(|e| Error::invalid(format!("{name}: {e}")))?;
            let sf = s as f64;
            let hi = lambda.iter().fold(0.0, |m: f64, v| m.max(*v));
            let lo = lambda.iter().fold(f64::INFINITY, |m: f64, v| m.min(*v));
            let ratio = (sf * hi).max(1.0 / (sf * lo));
            let t = mixing_time(&chain, &lambda).map_err(|e| Error::invalid(format!("{name}: {e}")))?;
            Ok((ratio * ratio, t))
        })
        .collect::<Result<Vec<(f64, usize)>>>()?;
    Ok(MdpConstants {
        t_mix: per_policy.iter().map(|p| p.1).max().unwrap_or(1),
        tau: per_policy.iter().map(|p| p.0).fold(1.0, f64::max),
        policy_set_size: per_policy.len(),
    })
}

/// Long-run average reward of a stationary policy.
pub fn evaluate_policy(mdp: &MdpInstance, policy: &PolicyMatrix) -> Result<f64> {
    if policy.prob.shape() != (mdp.num_states, mdp.num_actions) {
        return Err(Error::invalid("policy shape does not match the MDP"));
    }
    let lambda = stationary_distribution(&mdp.policy_chain(policy))?;
    Ok(lambda.iter().zip(mdp.policy_reward(policy)).map(|(l, r)| l * r).sum())
}

/// Gain and bias (normalized so `h[0] = 0`) of a deterministic policy.
fn gain_and_bias(mdp: &MdpInstance, actions: &[usize]) -> Result<(f64, Vec<f64>)> {
    let s = mdp.num_states;
    let mut m = DMatrix::zeros(s, s);
    let mut rhs = DVector::zeros(s);
    for i in 0..s {
        let k = actions[i];
        m[(i, 0)] = 1.0;
        for j in 1..s {
            m[(i, j)] = if i == j { 1.0 } else { 0.0 } - mdp.transitions[k][(i, j)];
        }
        rhs[i] = mdp.rewards[(i, k)];
    }
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::invalid(format!("policy {actions:?} has a singular evaluation system")))?;
    let mut h = vec![0.0; s];
    h[1..s].copy_from_slice(&sol.as_slice()[1..s]);
    Ok((sol[0], h))
}

fn q_value(mdp: &MdpInstance, h: &[f64], i: usize, k: usize) -> f64 {
    mdp.rewards[(i, k)] + (0..mdp.num_states).map(|j| mdp.transitions[k][(i, j)] * h[j]).sum::<f64>()
}

fn greedy(mdp: &MdpInstance, h: &[f64], current: Option<&[usize]>) -> Vec<usize> {
    (0..mdp.num_states)
        .map(|i| {
            let mut best = current.map_or(0, |c| c[i]);
            let mut best_q = q_value(mdp, h, i, best);
            for k in 0..mdp.num_actions {
                let q = q_value(mdp, h, i, k);
                if q > best_q + 1e-12 {
                    best = k;
                    best_q = q;
                }
            }
            best
        })
        .collect()
}

const RVI_MAX_ITER: usize = 1_000_000;

/// Optimal gain, bias and occupancy. Relative value iteration on the
/// aperiodic transform `(I + P_a) / 2` gives a near-optimal policy, which
/// policy iteration then makes exact.
pub fn solve_average_reward_exact(mdp: &MdpInstance, tolerance: f64) -> Result<ExactSolution> {
    if !(tolerance > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let s = mdp.num_states;
    let mut h = vec![0.0; s];
    let mut span = f64::INFINITY;
    let mut iters = 0;
    while span > tolerance {
        if iters == RVI_MAX_ITER {
            return Err(Error::no_convergence("relative value iteration", iters, span));
        }
        let th: Vec<f64> = (0..s)
            .map(|i| {
                (0..mdp.num_actions)
                    .map(|k| 0.5 * h[i] + 0.5 * q_value(mdp, &h, i, k))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let diff: Vec<f64> = th.iter().zip(&h).map(|(a, b)| a - b).collect();
        span = diff.iter().fold(f64::NEG_INFINITY, |m: f64, v| m.max(*v))
            - diff.iter().fold(f64::INFINITY, |m: f64, v| m.min(*v));
        h = th.iter().map(|v| v - th[0]).collect();
        iters += 1;
    }
    let mut policy = greedy(mdp, &h, None);
    let (mut v, mut bias) = gain_and_bias(mdp, &policy)?;
    for _ in 0..1000 {
        let improved = greedy(mdp, &bias, Some(&policy));
        if improved == policy {
            break;
        }
        policy = improved;
        (v, bias) = gain_and_bias(mdp, &policy)?;
    }
    let hi = bias.iter().fold(f64::NEG_INFINITY, |m: f64, v| m.max(*v));
    let lo = bias.iter().fold(f64::INFINITY, |m: f64, v| m.min(*v));
    let x_star: Vec<f64> = bias.iter().map(|b| b - 0.5 * (hi + lo)).collect();
    let pi = PolicyMatrix::deterministic(&policy, mdp.num_actions);
    let lambda = stationary_distribution(&mdp.policy_chain(&pi))?;
    let a = mdp.num_actions;
    let mut y_star = vec![0.0; s * a];
    for i in 0..s {
        y_star[i * a + policy[i]] = lambda[i];
    }
    let slack = 10.0 * tolerance;
    let value: f64 = y_star.iter().zip(mdp.rewards.transpose().iter()).map(|(y, r)| y * r).sum();
    if (value - v).abs() > slack {
        return Err(Error::no_convergence("occupancy complementarity", iters, (value - v).abs()));
    }
    for i in 0..s {
        for k in 0..a {
            let feas = v + x_star[i] - q_value(mdp, &x_star, i, k);
            if feas < -slack {
                return Err(Error::no_convergence("primal feasibility", iters, -feas));
            }
        }
    }
    Ok(ExactSolution {
        v_star: v,
        x_star,
        y_star,
        policy,
    })
}

/// Draws one successor per state-action pair; with `reward_noise = w > 0`
/// rewards are perturbed by `U[-w', w']`, `w' = min(w, r, 1 - r)`.
pub fn sample_transitions<R: Rng + ?Sized>(mdp: &MdpInstance, reward_noise: f64, rng: &mut R) -> SampledTransitionSet {
    let (s, a) = (mdp.num_states, mdp.num_actions);
    let mut next_state = vec![vec![0; a]; s];
    let mut sampled_reward = vec![vec![0.0; a]; s];
    for i in 0..s {
        for k in 0..a {
            let u: f64 = rng.random();
            let row = mdp.transitions[k].row(i);
            let mut acc = 0.0;
            let mut j = s - 1;
            for (c, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    j = c;
                    break;
                }
            }
            // Guard against rounding in the cumulative sum landing on a zero-probability state.
            while row[j] == 0.0 && j > 0 {
                j -= 1;
            }
            next_state[i][k] = j;
            let r = mdp.rewards[(i, k)];
            let w = reward_noise.min(r).min(1.0 - r);
            sampled_reward[i][k] = if w > 0.0 { r + rng.random_range(-w..=w) } else { r };
        }
    }
    SampledTransitionSet {
        next_state,
        sampled_reward,
    }
}

pub fn sample_xi(mdp: &MdpInstance, seed: u64) -> SampledTransitionSet {
    sample_transitions(mdp, 0.0, &mut stream(seed))
}

/// Row-normalizes an occupancy vector into a policy.
pub fn extract_policy(y: &[f64], num_states: usize, num_actions: usize) -> Result<PolicyMatrix> {
    if y.len() != num_states * num_actions {
        return Err(Error::invalid("occupancy length does not match the state-action count"));
    }
    let mut prob = DMatrix::zeros(num_states, num_actions);
    for (i, chunk) in y.chunks(num_actions).enumerate() {
        let total: f64 = chunk.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid(format!("state {i} has zero occupancy")));
        }
        for (k, v) in chunk.iter().enumerate() {
            prob[(i, k)] = v / total;
        }
    }
    Ok(PolicyMatrix { prob })
}

/// The MDP as a stochastic saddle-point problem over `X = {|x|_inf <= 2 t_mix}`
/// and the occupancy set with marginal window `[1/(sqrt(tau') S), sqrt(tau')/S]`,
/// `tau' = 1.05 tau`; L2 geometry on `x`, L1 on `y`.
#[derive(Debug, Clone)]
pub struct MdpProblem {
    pub mdp: MdpInstance,
    pub mixing: MdpConstants,
    pub reward_noise: f64,
    set_x: FeasibleSet,
    set_y: FeasibleSet,
    constants: ProblemConstants,
}

const WINDOW_INFLATION: f64 = 1.05;

impl MdpProblem {
    pub fn new(mdp: MdpInstance, mixing: MdpConstants, reward_noise: f64) -> Result<Self> {
        if !(mixing.tau >= 1.0) || mixing.t_mix == 0 {
            return Err(Error::invalid("mixing constants must satisfy tau >= 1 and t_mix >= 1"));
        }
        if !(reward_noise >= 0.0) {
            return Err(Error::invalid("reward noise must be nonnegative"));
        }
        let (s, a) = (mdp.num_states, mdp.num_actions);
        let sf = s as f64;
        let tmix = mixing.t_mix as f64;
        let root = (WINDOW_INFLATION * mixing.tau).sqrt();
        let set_x = FeasibleSet::linf_box(s, 2.0 * tmix)?;
        let set_y = FeasibleSet::occupancy(s, a, 1.0 / (root * sf), (root / sf).min(1.0))?;
        let tau = mixing.tau;
        // Almost-sure gradient bounds: |lambda(y)|_2 <= sqrt(tau/S), |w|_2 <= 1,
        // and |r + x(s') - x(s)| <= 1 + 4 t_mix.
        let lx_s = (tau / sf).sqrt() + 1.0;
        let lx_w = lx_s.min(((4.0 * tau + 20.0 * tau.powi(3)) / sf).sqrt());
        let ly = 1.0 + 4.0 * tmix;
        let constants = ProblemConstants {
            mu_x: 0.0,
            mu_y: 0.0,
            lx_w,
            ly_w: ly,
            lx_s,
            ly_s: ly,
            l_x: 0.0,
            l_y: 0.0,
            l_xy: spectral_norm(&mdp.saddle_model().m),
            d_x: 4.0 * tmix * sf.sqrt(),
            d_y: 2.0,
            c: None,
            estimated: false,
        };
        Ok(MdpProblem {
            mdp,
            mixing,
            reward_noise,
            set_x,
            set_y,
            constants,
        })
    }

    /// Quadratic-entropy regularizer with `alpha_x = tau^1.5 / (sqrt(n) S t_mix)`
    /// and `alpha_y = t_mix / sqrt(n log(S A))`.
    pub fn regularizer(&self, n: usize) -> Result<Regularizer> {
        let (s, a) = (self.mdp.num_states as f64, self.mdp.num_actions as f64);
        let log_sa = (s * a).ln();
        if !(log_sa > 0.0) {
            return Err(Error::invalid("the entropy weight needs more than one state-action pair"));
        }
        if n == 0 {
            return Err(Error::invalid("sample size must be positive"));
        }
        let nf = n as f64;
        let tmix = self.mixing.t_mix as f64;
        let alpha_x = self.mixing.tau.powf(1.5) / (nf.sqrt() * s * tmix);
        let alpha_y = tmix / (nf * log_sa).sqrt();
        let bound_r = 2.0 * alpha_x * s * tmix * tmix + alpha_y * log_sa;
        Regularizer::new(RegularizerKind::QuadraticEntropy, alpha_x, alpha_y, bound_r)
    }

    /// `lambda(y) = sum_a y_a` and `w(y)_{s'} = sum_{s,a} y_sa [next(s,a) = s']`.
    fn flows(&self, datum: &SampledTransitionSet, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (s, a) = (self.mdp.num_states, self.mdp.num_actions);
        let mut lambda = vec![0.0; s];
        let mut w = vec![0.0; s];
        for i in 0..s {
            for k in 0..a {
                lambda[i] += y[i * a + k];
                w[datum.next_state[i][k]] += y[i * a + k];
            }
        }
        (lambda, w)
    }

    /// `E |grad_x Phi_xi(x, y)|_2^2`, exactly.
    pub fn x_gradient_moment(&self, y: &[f64]) -> f64 {
        let (s, a) = (self.mdp.num_states, self.mdp.num_actions);
        let mut mean_grad = vec![0.0; s];
        let mut variance = 0.0;
        for i in 0..s {
            for k in 0..a {
                let v = y[i * a + k];
                mean_grad[i] -= v;
                for j in 0..s {
                    let p = self.mdp.transitions[k][(i, j)];
                    mean_grad[j] += v * p;
                    variance += v * v * p * (1.0 - p);
                }
            }
        }
        norm2_sq(&mean_grad) + variance
    }
}

impl StochasticSaddleProblem for MdpProblem {
    type Datum = SampledTransitionSet;

    fn set_x(&self) -> &FeasibleSet {
        &self.set_x
    }

    fn set_y(&self) -> &FeasibleSet {
        &self.set_y
    }

    fn norm_x(&self) -> NormTag {
        NormTag::EuclideanL2
    }

    fn norm_y(&self) -> NormTag {
        NormTag::SumL1
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SampledTransitionSet {
        sample_transitions(&self.mdp, self.reward_noise, rng)
    }

    fn mean_model(&self, data: &[SampledTransitionSet]) -> SaddleModel {
        let (s, a) = (self.mdp.num_states, self.mdp.num_actions);
        let mut model = SaddleModel::zeros(s, s * a);
        let w = 1.0 / data.len() as f64;
        for d in data {
            for i in 0..s {
                for k in 0..a {
                    let col = i * a + k;
                    model.m[(d.next_state[i][k], col)] += w;
                    model.dy[col] += w * d.sampled_reward[i][k];
                }
            }
        }
        for i in 0..s {
            for k in 0..a {
                model.m[(i, i * a + k)] -= 1.0;
            }
        }
        model
    }

    fn population_model(&self) -> Option<SaddleModel> {
        Some(self.mdp.saddle_model())
    }

    fn lipschitz_x(&self, datum: &SampledTransitionSet, y: &[f64]) -> f64 {
        let (lambda, w) = self.flows(datum, y);
        lambda
            .iter()
            .zip(&w)
            .map(|(l, w)| (w - l) * (w - l))
            .sum::<f64>()
            .sqrt()
    }

    fn lipschitz_y(&self, datum: &SampledTransitionSet, x: &[f64]) -> f64 {
        let mut m: f64 = 0.0;
        for (i, (next, rew)) in datum.next_state.iter().zip(&datum.sampled_reward).enumerate() {
            for (j, r) in next.iter().zip(rew) {
                m = m.max((r + x[*j] - x[i]).abs());
            }
        }
        m
    }
}

/// Regularized empirical problem on a set of sampled transitions.
pub fn build_mdp_resp(problem: &MdpProblem, samples: &SampleSet<SampledTransitionSet>) -> Result<EmpiricalObjective> {
    let reg = problem.regularizer(samples.n())?;
    empirical_objective(problem, samples, reg)
}

#[derive(Debug, Clone, Serialize)]
pub struct MdpReplication {
    pub n: usize,
    pub replication: usize,
    pub regret: f64,
    /// `|(v* - sum_a ybar_a^T((P_a - I) x* + r_a)) - (Phi(xbar, y*) - Phi(x*, ybar))|`.
    pub residual: f64,
    pub certified_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MdpExperiment {
    pub sweep: RateSweep,
    pub replications: Vec<MdpReplication>,
    pub min_regret: f64,
    pub max_residual: f64,
}

fn mdp_replication(
    problem: &MdpProblem,
    exact: &ExactSolution,
    population: &SaddleModel,
    n: usize,
    r: usize,
    master_seed: u64,
    config: &SolverConfig,
) -> Result<MdpReplication> {
    let samples = draw_samples(problem, n, replication_seed(master_seed, n, r));
    let objective = build_mdp_resp(problem, &samples)?;
    let sol = solve_saddle(&objective, config)?;
    if !sol.converged {
        return Err(Error::no_convergence("regularized MDP problem", sol.iterations, sol.certified_gap));
    }
    let (s, a) = (problem.mdp.num_states, problem.mdp.num_actions);
    let policy = extract_policy(&sol.y_hat, s, a)?;
    let regret = exact.v_star - evaluate_policy(&problem.mdp, &policy)?;
    let lhs = exact.v_star - population.value(&exact.x_star, &sol.y_hat);
    let rhs = population.value(&sol.x_hat, &exact.y_star) - population.value(&exact.x_star, &sol.y_hat);
    Ok(MdpReplication {
        n,
        replication: r,
        regret,
        residual: (lhs - rhs).abs(),
        certified_gap: sol.certified_gap,
    })
}

/// Policy regret `v* - v^pi_bar` of the regularized empirical policy across
/// sample sizes.
pub fn run_mdp_experiment(
    problem: &MdpProblem,
    exact: &ExactSolution,
    n_grid: &[usize],
    replications: usize,
    master_seed: u64,
    config: &SolverConfig,
) -> Result<MdpExperiment> {
    check_grid(n_grid)?;
    if replications < 2 {
        return Err(Error::invalid("at least two replications are required"));
    }
    let population = problem.mdp.saddle_model();
    let per_n: Vec<(usize, Result<Vec<MdpReplication>>)> = n_grid
        .par_iter()
        .map(|&n| {
            let reps = (0..replications)
                .into_par_iter()
                .map(|r| mdp_replication(problem, exact, &population, n, r, master_seed, config))
                .collect::<Result<Vec<_>>>();
            (n, reps)
        })
        .collect();
    let mut all = Vec::new();
    let rows_in: Vec<(usize, Result<Vec<RateRow>>)> = per_n
        .into_iter()
        .map(|(n, reps)| {
            let row = reps.map(|reps| {
                let regrets: Vec<f64> = reps.iter().map(|r| r.regret).collect();
                let row = RateRow {
                    n,
                    metric: "regret".into(),
                    mean: mean(&regrets),
                    std_error: sample_std(&regrets) / (regrets.len() as f64).sqrt(),
                    bound: None,
                    replications,
                    seed: master_seed,
                    residual: Some(reps.iter().map(|r| r.residual).fold(0.0, f64::max)),
                };
                all.extend(reps);
                vec![row]
            });
            (n, row)
        })
        .collect();
    let (rows, aborted) = assemble(rows_in);
    let min_regret = all.iter().map(|r| r.regret).fold(f64::INFINITY, f64::min);
    let max_residual = all.iter().map(|r| r.residual).fold(0.0, f64::max);
    Ok(MdpExperiment {
        sweep: RateSweep {
            rows,
            problem_tag: format!("mdp-{}x{}", problem.mdp.num_states, problem.mdp.num_actions),
            replications,
            master_seed,
            aborted,
        },
        replications: all,
        min_regret,
        max_residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientEnvelopeReport {
    /// `max_y E|grad_x Phi_xi|_2^2 / (tau^3 / S)` over the probed points.
    pub ratio_x: f64,
    /// `max_x E l_y(xi, x)^2 / (1 + 4 t_mix)^2` over the probed points.
    pub ratio_y: f64,
    pub probes: usize,
}

/// Probes the gradient second moments at `probes` feasible points per block;
/// the `y` moment is exact, the `x`-side Lipschitz moment is averaged over
/// `draws` sampled transition sets.
pub fn check_gradient_envelopes(problem: &MdpProblem, probes: usize, draws: usize, seed: u64) -> GradientEnvelopeReport {
    let mut rng = stream(derive_seed(seed, &[tag::PAIRS]));
    let s = problem.mdp.num_states as f64;
    let tau = problem.mixing.tau;
    let tmix = problem.mixing.t_mix as f64;
    let mut ratio_x: f64 = 0.0;
    let mut ratio_y: f64 = 0.0;
    let data: Vec<SampledTransitionSet> = (0..draws).map(|_| problem.sample(&mut rng)).collect();
    for k in 0..probes {
        let y = problem.set_y.sample_point(&mut rng);
        ratio_x = ratio_x.max(problem.x_gradient_moment(&y) / (tau.powi(3) / s));
        let x: Vec<f64> = if k % 2 == 0 {
            // Box corners make |x(s') - x(s)| as large as possible.
            (0..problem.mdp.num_states)
                .map(|_| if rng.random::<bool>() { 2.0 * tmix } else { -2.0 * tmix })
                .collect()
        } else {
            problem.set_x.sample_point(&mut rng)
        };
        let m = data.iter().map(|d| problem.lipschitz_y(d, &x).powi(2)).sum::<f64>() / draws.max(1) as f64;
        ratio_y = ratio_y.max(m / (1.0 + 4.0 * tmix).powi(2));
    }
    GradientEnvelopeReport {
        ratio_x,
        ratio_y,
        probes,
    }
}
