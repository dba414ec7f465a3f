//! Unconstrained quadratic: squared distance to the population saddle point
//! and the pointwise distance inequalities, solved in closed form.

use empirical_saddle::metrics::{MetricKind, RegularizerRule};
use empirical_saddle::problems::make_quadratic_scsc;
use empirical_saddle::rates::run_rate_sweep;
use empirical_saddle::solver::SolverConfig;
use empirical_saddle::stability::check_distance_lemma;
use nalgebra::DMatrix;

fn main() -> empirical_saddle::Result<()> {
    let coupling = DMatrix::from_row_slice(3, 2, &[0.5, -0.3, 0.2, 0.4, -0.6, 0.1]);
    let p = make_quadratic_scsc(3, 2, coupling, 1.0, 0.7, 1.0, 77)?;
    let grid = [16, 64, 256, 1024, 4096];
    let sweep = run_rate_sweep(
        &p,
        "unbounded",
        &grid,
        200,
        &[MetricKind::D2, MetricKind::Sgm],
        &RegularizerRule::None,
        &SolverConfig::default().with_gap_tol(1e-12, false),
        5,
    )?;
    for r in &sweep.rows {
        println!("n {:>5} {:<3} mean {:.3e} +- {:.1e} bound {:.3e}", r.n, r.metric, r.mean, r.std_error, r.bound.unwrap_or(f64::NAN));
    }
    for n in grid {
        let rep = check_distance_lemma(&p, n, 200, 6)?;
        println!(
            "n {n:>5}: violations {}, max ratio {:.3}, E|grad_x|^2 {:.3e} (bound {:.3e})",
            rep.violations, rep.max_ratio, rep.moment_x.0, rep.moment_bound_x
        );
    }
    Ok(())
}
