//! Weak and strong generalization of the empirical saddle point on a boxed
//! quadratic, with fitted log-log slopes and the matching bounds.

use empirical_saddle::geometry::FeasibleSet;
use empirical_saddle::metrics::{MetricKind, RegularizerRule};
use empirical_saddle::problems::QuadraticProblem;
use empirical_saddle::rates::run_rate_sweep;
use empirical_saddle::solver::SolverConfig;
use nalgebra::DMatrix;

fn main() -> empirical_saddle::Result<()> {
    let problem = QuadraticProblem::new(
        1.0,
        1.0,
        DMatrix::from_row_slice(2, 2, &[0.3, -0.1, 0.2, 0.25]),
        vec![0.4, -0.3],
        vec![-0.2, 0.5],
        1.0,
        FeasibleSet::unbounded(2),
        FeasibleSet::unbounded(2),
    )?
    .boxed(2.0, 2.0)?;
    let grid = [16, 32, 64, 128, 256, 512, 1024];
    let cfg = SolverConfig::default().with_gap_tol(1e-12, false);
    let sweep = run_rate_sweep(
        &problem,
        "quadratic",
        &grid,
        100,
        &[MetricKind::Wgm, MetricKind::Sgm, MetricKind::D2],
        &RegularizerRule::None,
        &cfg,
        1,
    )?;
    sweep.write_csv(std::io::stdout().lock())?;
    for m in ["wgm", "sgm", "d2"] {
        let fit = sweep.fit(m, 5e-12);
        println!(
            "{m}: slope {:.3}, r^2 {:.4}, under bound at every n: {}",
            fit.slope,
            fit.r_squared,
            sweep.bound_dominance(m, 3.0)
        );
    }
    Ok(())
}
