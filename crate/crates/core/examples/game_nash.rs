//! Entropy-regularized empirical equilibria of a stochastic 10x10 game and
//! their epsilon-Nash gaps in the mean game.

use empirical_saddle::games::{nash_bound, run_game_experiment};
use empirical_saddle::problems::{make_bilinear_game, PayoffLaw};
use empirical_saddle::solver::SolverConfig;

fn main() -> empirical_saddle::Result<()> {
    let game = make_bilinear_game(10, 10, PayoffLaw::Uniform { half_width: 0.5 }, 3)?;
    let grid = [16, 64, 256, 1024, 4096];
    let exp = run_game_experiment(&game, &grid, 50, 3, &SolverConfig::default())?;
    for (r, t) in exp.sweep.rows.iter().zip(&exp.tails) {
        println!(
            "n {:>5}: eps {:.4} +- {:.4} (median {:.4}, q90 {:.4}), bound {:.4}",
            r.n,
            r.mean,
            r.std_error,
            t.median,
            t.q90,
            nash_bound(10, 10, r.n)
        );
    }
    println!("slope {:.3}", exp.sweep.fit("epsilon", 0.0).slope);
    Ok(())
}
