//! Sample-size sweeps, log-log slope fits and CSV emission.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{
    estimate_metrics, population_saddle, solve_replications, theoretical_bound, BoundKind, MetricKind,
    PopulationReference, RegularizerRule,
};
use crate::problems::{ProblemConstants, StochasticSaddleProblem};
use crate::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub n: usize,
    pub metric: String,
    pub mean: f64,
    pub std_error: f64,
    /// Matching theoretical bound, if the problem's constants admit one.
    pub bound: Option<f64>,
    pub replications: usize,
    pub seed: u64,
    /// Largest per-replication residual of an auxiliary identity (MDP runs).
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSweep {
    pub rows: Vec<RateRow>,
    pub problem_tag: String,
    pub replications: usize,
    pub master_seed: u64,
    /// Set when a row failed; `rows` then holds the rows completed before it.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Points dropped for being nonpositive or below the noise floor.
    pub excluded: usize,
    pub points: usize,
    /// Fewer than two usable points remained; the fit fields are NaN.
    pub degenerate: bool,
}

/// Ordinary least squares of `ln value` on `ln n`. Nonpositive values are
/// excluded and counted.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<RateFit> {
    let used: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(n, v)| n > 0.0 && v > 0.0 && v.is_finite())
        .map(|&(n, v)| (n.ln(), v.ln()))
        .collect();
    if used.len() < 2 {
        return Err(Error::invalid(format!(
            "slope fit needs at least two positive points, got {}",
            used.len()
        )));
    }
    let k = used.len() as f64;
    let mx = used.iter().map(|p| p.0).sum::<f64>() / k;
    let my = used.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = used.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = used.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = used.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("slope fit needs at least two distinct sample sizes"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        excluded: points.len() - used.len(),
        points: used.len(),
        degenerate: false,
    })
}

impl RateSweep {
    pub fn rows_for<'a>(&'a self, metric: &'a str) -> impl Iterator<Item = &'a RateRow> + 'a {
        self.rows.iter().filter(move |r| r.metric == metric)
    }

    /// Slope of one metric's rows, ignoring rows whose mean is below `floor`.
    pub fn fit(&self, metric: &str, floor: f64) -> RateFit {
        let rows: Vec<&RateRow> = self.rows_for(metric).collect();
        let kept: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.mean > floor)
            .map(|r| (r.n as f64, r.mean))
            .collect();
        match fit_loglog_slope(&kept) {
            Ok(mut fit) => {
                fit.excluded += rows.len() - kept.len();
                fit
            }
            Err(_) => RateFit {
                slope: f64::NAN,
                intercept: f64::NAN,
                r_squared: f64::NAN,
                excluded: rows.len(),
                points: 0,
                degenerate: true,
            },
        }
    }

    /// Every row of `metric` with a bound satisfies `mean <= bound + k * se`.
    pub fn bound_dominance(&self, metric: &str, k: f64) -> bool {
        self.rows_for(metric)
            .all(|r| r.bound.is_none_or(|b| r.mean <= b + k * r.std_error))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write_csv_rows(&self.rows, &mut out)
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes rows with the canonical header; a `residual_eq18` column is added
/// when any row carries a residual.
pub fn write_csv_rows<W: Write>(rows: &[RateRow], out: &mut W) -> Result<()> {
    let with_residual = rows.iter().any(|r| r.residual.is_some());
    write!(out, "n,metric,mean,std_error,bound,replications,seed")?;
    if with_residual {
        write!(out, ",residual_eq18")?;
    }
    writeln!(out)?;
    for r in rows {
        write!(
            out,
            "{},{},{},{},{},{},{}",
            r.n,
            r.metric,
            fmt_f64(r.mean),
            fmt_f64(r.std_error),
            r.bound.map(fmt_f64).unwrap_or_default(),
            r.replications,
            r.seed
        )?;
        if with_residual {
            write!(out, ",{}", r.residual.map(fmt_f64).unwrap_or_default())?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Bound matched to a metric and regularizer rule, if one applies.
pub fn default_bound(metric: MetricKind, rule: &RegularizerRule, constants: &ProblemConstants) -> Option<BoundKind> {
    let finite = constants.lx_w.is_finite() && constants.ly_w.is_finite();
    match (metric, rule) {
        (MetricKind::Wgm, RegularizerRule::None) => finite.then_some(BoundKind::WgmThm1),
        (MetricKind::Wgm, RegularizerRule::Corollary) => Some(BoundKind::CorollaryWgm),
        (MetricKind::Wgm, RegularizerRule::Fixed { .. }) => Some(BoundKind::RegWgmLemma4),
        (MetricKind::Sgm, RegularizerRule::None) => Some(if finite {
            BoundKind::SgmThm2
        } else {
            BoundKind::UnboundedSgmThm3
        }),
        (MetricKind::D2, RegularizerRule::None) => Some(if finite {
            BoundKind::D2Thm1
        } else {
            BoundKind::UnboundedD2Thm3
        }),
        _ => None,
    }
}

fn sweep_row<P: StochasticSaddleProblem>(
    problem: &P,
    population: &PopulationReference,
    n: usize,
    replications: usize,
    metrics: &[MetricKind],
    rule: &RegularizerRule,
    config: &SolverConfig,
    master_seed: u64,
) -> Result<Vec<RateRow>> {
    let sols = solve_replications(problem, n, replications, rule, config, master_seed)?;
    let estimates = estimate_metrics(population, &sols, n, metrics, (problem.norm_x(), problem.norm_y()))?;
    let constants = problem.constants();
    let reg = rule.resolve(constants, n)?;
    Ok(estimates
        .into_iter()
        .map(|e| RateRow {
            n,
            metric: e.metric_kind.label().to_string(),
            mean: e.mean,
            std_error: e.std_error,
            bound: default_bound(e.metric_kind, rule, constants)
                .and_then(|k| theoretical_bound(k, constants, &reg, n).ok()),
            replications,
            seed: master_seed,
            residual: None,
        })
        .collect())
}

pub(crate) fn check_grid(n_grid: &[usize]) -> Result<()> {
    if n_grid.is_empty() {
        return Err(Error::invalid("sample-size grid is empty"));
    }
    if n_grid[0] == 0 || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("sample-size grid must be positive and strictly increasing"));
    }
    Ok(())
}

/// Collects per-n results in grid order; the first failing row truncates the
/// sweep and is reported in `aborted`.
pub(crate) fn assemble(results: Vec<(usize, Result<Vec<RateRow>>)>) -> (Vec<RateRow>, Option<String>) {
    let mut rows = Vec::new();
    for (n, r) in results {
        match r {
            Ok(mut rs) => rows.append(&mut rs),
            Err(e) => return (rows, Some(format!("row n = {n} failed: {e}"))),
        }
    }
    (rows, None)
}

/// Estimates each metric at each sample size. All metrics at one `n` share the
/// same replications, and replication `r` at size `n` uses the same samples
/// regardless of which metrics are requested.
#[allow(clippy::too_many_arguments)]
pub fn run_rate_sweep<P: StochasticSaddleProblem>(
    problem: &P,
    problem_tag: &str,
    n_grid: &[usize],
    replications: usize,
    metrics: &[MetricKind],
    rule: &RegularizerRule,
    config: &SolverConfig,
    master_seed: u64,
) -> Result<RateSweep> {
    check_grid(n_grid)?;
    if metrics.is_empty() {
        return Err(Error::invalid("no metrics requested"));
    }
    if replications < 2 {
        return Err(Error::invalid("at least two replications are required"));
    }
    config.validate()?;
    let population = population_saddle(problem, config)?;
    let results: Vec<(usize, Result<Vec<RateRow>>)> = n_grid
        .par_iter()
        .map(|&n| {
            (
                n,
                sweep_row(problem, &population, n, replications, metrics, rule, config, master_seed),
            )
        })
        .collect();
    let (rows, aborted) = assemble(results);
    Ok(RateSweep {
        rows,
        problem_tag: problem_tag.to_string(),
        replications,
        master_seed,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let f = fit_loglog_slope(&[(10.0, 0.1), (100.0, 0.01), (1000.0, 0.001)]).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let f = fit_loglog_slope(&[(10.0, 3.0), (100.0, 3.0)]).unwrap();
        assert!(f.slope.abs() < 1e-12);
        let f = fit_loglog_slope(&[(4.0, 1.0), (16.0, 0.5), (64.0, 0.25)]).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_points_are_excluded() {
        let f = fit_loglog_slope(&[(1.0, -1.0), (10.0, 0.1), (100.0, 0.01), (1000.0, 0.0)]).unwrap();
        assert_eq!(f.excluded, 2);
        assert!((f.slope + 1.0).abs() < 1e-12);
        assert!(fit_loglog_slope(&[(10.0, 1.0), (100.0, 0.0)]).is_err());
    }

    #[test]
    fn floor_makes_fit_degenerate() {
        let sweep = RateSweep {
            rows: [16, 32]
                .iter()
                .map(|&n| RateRow {
                    n,
                    metric: "wgm".into(),
                    mean: 1e-12,
                    std_error: 0.0,
                    bound: None,
                    replications: 2,
                    seed: 0,
                    residual: None,
                })
                .collect(),
            problem_tag: "t".into(),
            replications: 2,
            master_seed: 0,
            aborted: None,
        };
        assert!(sweep.fit("wgm", 5e-8).degenerate);
    }

    #[test]
    fn csv_header_and_precision() {
        let row = RateRow {
            n: 8,
            metric: "sgm".into(),
            mean: 0.1,
            std_error: 0.0,
            bound: None,
            replications: 3,
            seed: 7,
            residual: None,
        };
        let mut buf = Vec::new();
        write_csv_rows(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("n,metric,mean,std_error,bound,replications,seed"));
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields[2].parse::<f64>().unwrap(), 0.1);
        assert_eq!(fields[4], "");
    }

    #[test]
    fn grid_validation() {
        assert!(check_grid(&[]).is_err());
        assert!(check_grid(&[4, 4]).is_err());
        assert!(check_grid(&[0, 4]).is_err());
        assert!(check_grid(&[2, 4]).is_ok());
    }
}
