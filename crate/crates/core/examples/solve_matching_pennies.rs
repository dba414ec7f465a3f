//! Mirror prox on two small matrix games with a certified duality gap.

use empirical_saddle::games::epsilon_nash_gap;
use empirical_saddle::problems::{BilinearGame, GameNorm, PayoffLaw, StochasticSaddleProblem};
use empirical_saddle::solver::{solve_saddle, SolverConfig};
use nalgebra::DMatrix;

fn main() -> empirical_saddle::Result<()> {
    let cfg = SolverConfig::default().with_gap_tol(1e-8, false);
    for (name, payoff) in [
        ("matching pennies", [1.0, -1.0, -1.0, 1.0]),
        ("skewed pennies", [0.9, -0.3, -0.6, 0.4]),
    ] {
        let a = DMatrix::from_row_slice(2, 2, &payoff);
        let game = BilinearGame::new(a.clone(), PayoffLaw::Deterministic, GameNorm::L1)?;
        let sol = solve_saddle(&game.population_objective()?, &cfg)?;
        let cert = epsilon_nash_gap(&a, &sol.x_hat, &sol.y_hat)?;
        println!(
            "{name}: x = {:.6?}, y = {:.6?}, gap {:.2e} after {} iterations, eps-Nash {:.2e}",
            sol.x_hat, sol.y_hat, sol.certified_gap, sol.iterations, cert.epsilon
        );
    }
    Ok(())
}
