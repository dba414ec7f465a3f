//! Euclidean and KL projections onto an occupancy set with a marginal window.

use empirical_saddle::geometry::{kl_project, marginals, project_euclidean, set_diameter, FeasibleSet, NormTag};

fn main() -> empirical_saddle::Result<()> {
    let set = FeasibleSet::occupancy(3, 2, 0.2, 0.45)?;
    let z = [0.9, -0.4, 0.1, 0.05, -0.2, 0.3];
    let p = project_euclidean(&set, &z)?;
    let k = kl_project(&set, &z)?;
    println!("euclidean {p:.4?}, marginals {:.4?}", marginals(&p, 2));
    println!("kl        {k:.4?}, marginals {:.4?}", marginals(&k, 2));
    for norm in [NormTag::EuclideanL2, NormTag::SumL1] {
        println!("diameter in {norm:?}: {:.4}", set_diameter(&set, norm)?);
    }
    Ok(())
}
