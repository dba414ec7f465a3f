//! Leave-one-out stability of the empirical saddle point, plus the
//! best-response Lipschitz check.

use empirical_saddle::metrics::RegularizerRule;
use empirical_saddle::problems::{make_quadratic_scsc, BilinearGame, GameNorm, PayoffLaw, Regularizer, StochasticSaddleProblem};
use empirical_saddle::solver::SolverConfig;
use empirical_saddle::stability::{check_argmap_lipschitz, run_loo_suite};
use nalgebra::DMatrix;

fn main() -> empirical_saddle::Result<()> {
    let cfg = SolverConfig::default().with_gap_tol(1e-13, false);
    let coupling = DMatrix::from_row_slice(2, 3, &[0.5, -0.2, 0.1, 0.3, 0.4, -0.6]);
    let quad = make_quadratic_scsc(2, 3, coupling, 1.0, 0.5, 1.0, 3)?.boxed(2.0, 2.0)?;
    let trials = run_loo_suite(&quad, 50, &Regularizer::none(), 100, 7, &cfg)?;
    let worst = trials.iter().map(|t| t.lhs / t.rhs).fold(0.0, f64::max);
    let fails = trials.iter().filter(|t| !t.passes()).count();
    println!("quadratic: {fails} violations in {} trials, worst lhs/rhs {worst:.3}", trials.len());

    let (rx, ry) = check_argmap_lipschitz(&quad, 500, 8)?;
    println!(
        "best responses: ratio {:.4} <= {:.4} and {:.4} <= {:.4}",
        rx.max_ratio, rx.bound, ry.max_ratio, ry.bound
    );

    // Interior equilibrium, so swapping one sample moves the solution.
    let payoff = DMatrix::from_row_slice(3, 3, &[0.0, 0.8, -0.4, -0.6, 0.0, 0.6, 0.5, -0.7, 0.0]);
    let game = BilinearGame::new(payoff, PayoffLaw::Uniform { half_width: 0.5 }, GameNorm::L2)?;
    let reg = RegularizerRule::Corollary.resolve(game.constants(), 50)?;
    let trials = run_loo_suite(&game, 50, &reg, 100, 9, &cfg)?;
    let worst = trials.iter().map(|t| t.lhs / t.rhs).fold(0.0, f64::max);
    println!(
        "regularized game (alpha {:.4}): {} violations, worst lhs/rhs {worst:.3}",
        reg.alpha_x,
        trials.iter().filter(|t| !t.passes()).count()
    );
    Ok(())
}
