//! Batch policy learning on a random ergodic MDP: the regret of the policy
//! read off the regularized empirical occupancy shrinks with the sample size.

use empirical_saddle::mdp::{
    check_gradient_envelopes, estimate_mixing_constants, make_random_ergodic_mdp, run_mdp_experiment,
    solve_average_reward_exact, MdpProblem,
};
use empirical_saddle::solver::SolverConfig;

fn main() -> empirical_saddle::Result<()> {
    let mdp = make_random_ergodic_mdp(5, 2, 0.05, 11)?;
    let mixing = estimate_mixing_constants(&mdp, 200, 11)?;
    println!("t_mix {}, tau {:.3} over {} policies", mixing.t_mix, mixing.tau, mixing.policy_set_size);
    let problem = MdpProblem::new(mdp, mixing, 0.1)?;
    let exact = solve_average_reward_exact(&problem.mdp, 1e-12)?;
    println!("optimal gain {:.6}, policy {:?}", exact.v_star, exact.policy);

    let exp = run_mdp_experiment(&problem, &exact, &[64, 256, 1024, 4096], 20, 1, &SolverConfig::default())?;
    for r in &exp.sweep.rows {
        println!("n {:>5}: regret {:.4e} +- {:.1e}", r.n, r.mean, r.std_error);
    }
    println!("slope {:.3}, max identity residual {:.1e}", exp.sweep.fit("regret", 0.0).slope, exp.max_residual);

    let env = check_gradient_envelopes(&problem, 10, 1000, 2);
    println!("gradient moment ratios: x {:.4}, y {:.4}", env.ratio_x, env.ratio_y);
    Ok(())
}
