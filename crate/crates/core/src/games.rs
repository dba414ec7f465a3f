//! Stochastic matrix games: entropy-regularized empirical Nash estimation and
//! epsilon-Nash certification against the mean payoff.

use std::io::BufRead;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{mat_t_vec, mat_vec, mean, sample_std};
use crate::metrics::replication_seed;
use crate::problems::{
    draw_samples, empirical_objective, BilinearGame, EmpiricalObjective, Regularizer, RegularizerKind, SampleSet,
};
use crate::rates::{assemble, check_grid, RateRow, RateSweep};
use crate::solver::{solve_saddle, SolverConfig};

pub type GameInstance = BilinearGame;

/// Entropy weights `1/sqrt(n log N1)`, `1/sqrt(n log N2)` and the bound
/// `R = (sqrt(log N1) + sqrt(log N2)) / sqrt(n)` on the regularizer.
pub fn game_regularizer(n1: usize, n2: usize, n: usize) -> Result<Regularizer> {
    if n1 < 2 || n2 < 2 {
        return Err(Error::invalid("entropy weights need at least two strategies per player"));
    }
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let nf = n as f64;
    let (l1, l2) = ((n1 as f64).ln(), (n2 as f64).ln());
    Regularizer::new(
        RegularizerKind::EntropyEntropy,
        1.0 / (nf * l1).sqrt(),
        1.0 / (nf * l2).sqrt(),
        (l1.sqrt() + l2.sqrt()) / nf.sqrt(),
    )
}

pub fn build_game_resp(game: &GameInstance, samples: &SampleSet<DMatrix<f64>>) -> Result<EmpiricalObjective> {
    let reg = game_regularizer(game.n1(), game.n2(), samples.n())?;
    empirical_objective(game, samples, reg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NashCertificate {
    /// `x^T A y` minus the row player's best deviation value.
    pub player1_gain: f64,
    /// The column player's best deviation value minus `x^T A y`.
    pub player2_gain: f64,
    pub epsilon: f64,
}

/// Unilateral-deviation gains of a strategy pair in the game `min_x max_y x^T A y`.
pub fn epsilon_nash_gap(payoff: &DMatrix<f64>, x: &[f64], y: &[f64]) -> Result<NashCertificate> {
    if x.len() != payoff.nrows() || y.len() != payoff.ncols() {
        return Err(Error::invalid(format!(
            "strategy lengths ({}, {}) do not match the {}x{} payoff",
            x.len(),
            y.len(),
            payoff.nrows(),
            payoff.ncols()
        )));
    }
    let ay = mat_vec(payoff, y);
    let atx = mat_t_vec(payoff, x);
    let value: f64 = x.iter().zip(&ay).map(|(a, b)| a * b).sum();
    let best_row = ay.iter().copied().fold(f64::INFINITY, f64::min);
    let best_col = atx.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let player1_gain = value - best_row;
    let player2_gain = best_col - value;
    Ok(NashCertificate {
        player1_gain,
        player2_gain,
        epsilon: player1_gain.max(player2_gain),
    })
}

/// `16 sqrt(log(N1 N2) / n)`.
pub fn nash_bound(n1: usize, n2: usize, n: usize) -> f64 {
    16.0 * (((n1 * n2) as f64).ln() / n as f64).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct GameRowTail {
    pub n: usize,
    pub median: f64,
    pub q90: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GameExperiment {
    pub sweep: RateSweep,
    /// Empirical quantiles of epsilon per row; recorded, not asserted.
    pub tails: Vec<GameRowTail>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean epsilon-Nash gap of the regularized empirical equilibrium, certified
/// against the mean payoff, across sample sizes.
pub fn run_game_experiment(
    game: &GameInstance,
    n_grid: &[usize],
    replications: usize,
    master_seed: u64,
    config: &SolverConfig,
) -> Result<GameExperiment> {
    check_grid(n_grid)?;
    if replications < 2 {
        return Err(Error::invalid("at least two replications are required"));
    }
    let per_n: Vec<(usize, Result<Vec<f64>>)> = n_grid
        .par_iter()
        .map(|&n| {
            let eps = (0..replications)
                .into_par_iter()
                .map(|r| {
                    let samples = draw_samples(game, n, replication_seed(master_seed, n, r));
                    let obj = build_game_resp(game, &samples)?;
                    let sol = solve_saddle(&obj, config)?;
                    if !sol.converged {
                        return Err(Error::no_convergence(
                            "regularized game",
                            sol.iterations,
                            sol.certified_gap,
                        ));
                    }
                    Ok(epsilon_nash_gap(&game.a_bar, &sol.x_hat, &sol.y_hat)?.epsilon)
                })
                .collect::<Result<Vec<f64>>>();
            (n, eps)
        })
        .collect();
    let mut tails = Vec::new();
    let rows_in = per_n
        .into_iter()
        .map(|(n, eps)| {
            let rows = eps.map(|mut eps| {
                let row = RateRow {
                    n,
                    metric: "epsilon".into(),
                    mean: mean(&eps),
                    std_error: sample_std(&eps) / (eps.len() as f64).sqrt(),
                    bound: Some(nash_bound(game.n1(), game.n2(), n)),
                    replications,
                    seed: master_seed,
                    residual: None,
                };
                eps.sort_by(f64::total_cmp);
                tails.push(GameRowTail {
                    n,
                    median: quantile(&eps, 0.5),
                    q90: quantile(&eps, 0.9),
                    max: eps[eps.len() - 1],
                });
                vec![row]
            });
            (n, rows)
        })
        .collect();
    let (rows, aborted) = assemble(rows_in);
    Ok(GameExperiment {
        sweep: RateSweep {
            rows,
            problem_tag: format!("game-{}x{}", game.n1(), game.n2()),
            replications,
            master_seed,
            aborted,
        },
        tails,
    })
}

/// Reads logged payoffs as `i,j,payoff` lines (0-based indices, optional
/// header). Every consecutive block of `n1 * n2` lines is one play and must
/// list each entry exactly once.
pub fn read_payoff_csv<R: BufRead>(reader: R, n1: usize, n2: usize) -> Result<Vec<DMatrix<f64>>> {
    let per_play = n1 * n2;
    if per_play == 0 {
        return Err(Error::invalid("payoff matrices need positive dimensions"));
    }
    let mut plays = Vec::new();
    let mut current = DMatrix::from_element(n1, n2, f64::NAN);
    let mut filled = 0;
    let mut last_line = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || (line_no == 1 && t.starts_with(|c: char| c.is_alphabetic())) {
            continue;
        }
        last_line = line_no;
        let err = |message: String| Error::Parse { line: line_no, message };
        let fields: Vec<&str> = t.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(err(format!("expected `i,j,payoff`, found {} fields", fields.len())));
        }
        let i: usize = fields[0].parse().map_err(|e| err(format!("row index: {e}")))?;
        let j: usize = fields[1].parse().map_err(|e| err(format!("column index: {e}")))?;
        let v: f64 = fields[2].parse().map_err(|e| err(format!("payoff: {e}")))?;
        if i >= n1 || j >= n2 {
            return Err(err(format!("entry ({i}, {j}) outside a {n1}x{n2} game")));
        }
        if !(v.abs() <= 1.0) {
            return Err(err(format!("payoff {v} outside [-1, 1]")));
        }
        if !current[(i, j)].is_nan() {
            return Err(err(format!("entry ({i}, {j}) repeated within play {}", plays.len())));
        }
        current[(i, j)] = v;
        filled += 1;
        if filled == per_play {
            plays.push(std::mem::replace(&mut current, DMatrix::from_element(n1, n2, f64::NAN)));
            filled = 0;
        }
    }
    if filled != 0 {
        return Err(Error::Parse {
            line: last_line,
            message: format!("incomplete final play: {filled} of {per_play} entries"),
        });
    }
    if plays.is_empty() {
        return Err(Error::Parse {
            line: last_line.max(1),
            message: "no payoff entries".into(),
        });
    }
    Ok(plays)
}
