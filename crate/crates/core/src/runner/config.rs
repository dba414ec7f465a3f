use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FeasibleSet;
use crate::metrics::{MetricKind, RegularizerRule};
use crate::problems::{make_bilinear_game, BilinearGame, GameNorm, PayoffLaw, QuadraticProblem};
use crate::rng::stream;
use crate::solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    RateSweep,
    Stability,
    Mdp,
    Game,
    Solve,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::RateSweep => "rate-sweep",
            ExperimentKind::Stability => "stability",
            ExperimentKind::Mdp => "mdp",
            ExperimentKind::Game => "game",
            ExperimentKind::Solve => "solve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Strongly convex-strongly concave quadratic with uniform noise.
    Quadratic {
        dim_x: usize,
        dim_y: usize,
        mu_x: f64,
        mu_y: f64,
        /// Explicit coupling rows; drawn uniformly from `[-coupling_scale, coupling_scale]` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coupling: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coupling_scale: Option<f64>,
        /// Explicit means; drawn uniformly from `[-1, 1]` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a_bar: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b_bar: Option<Vec<f64>>,
        noise_scale: f64,
        /// Box radii; the block is unconstrained when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius_x: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius_y: Option<f64>,
        #[serde(default)]
        instance_seed: u64,
    },
    Game {
        /// Explicit mean payoff rows; drawn uniformly from `[-1, 1]` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        payoff: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n1: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n2: Option<usize>,
        law: PayoffLaw,
        #[serde(default = "default_game_norm")]
        norm: GameNorm,
        /// Logged `i,j,payoff` samples; replaces synthetic sampling in `solve`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        payoff_csv: Option<String>,
        #[serde(default)]
        instance_seed: u64,
    },
    Mdp {
        /// Plain-text instance; a random ergodic instance is generated when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instance_file: Option<String>,
        #[serde(default = "default_states")]
        num_states: usize,
        #[serde(default = "default_actions")]
        num_actions: usize,
        #[serde(default = "default_min_prob")]
        min_transition_prob: f64,
        #[serde(default = "default_extra_policies")]
        extra_random_policies: usize,
        #[serde(default)]
        reward_noise: f64,
        #[serde(default)]
        instance_seed: u64,
    },
}

fn default_game_norm() -> GameNorm {
    GameNorm::L1
}
fn default_states() -> usize {
    5
}
fn default_actions() -> usize {
    2
}
fn default_min_prob() -> f64 {
    0.05
}
fn default_extra_policies() -> usize {
    200
}
fn default_replications() -> usize {
    20
}
fn default_metrics() -> Vec<MetricKind> {
    vec![MetricKind::Wgm]
}
fn default_bound_se() -> f64 {
    3.0
}

/// Invariants checked after a run; each failure makes the exit code nonzero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_max: Option<f64>,
    /// Rows must satisfy `mean <= bound + k * std_error`.
    #[serde(default = "default_bound_se")]
    pub bound_dominance_se: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_certified_gap: Option<f64>,
}

impl Default for Assertions {
    fn default() -> Self {
        Assertions {
            slope_min: None,
            slope_max: None,
            bound_dominance_se: default_bound_se(),
            max_certified_gap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySettings {
    pub n: usize,
    pub trials: usize,
    /// Sampled pairs for the best-response and smoothness checks (0 skips them).
    #[serde(default)]
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the subcommand when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    pub master_seed: u64,
    #[serde(default)]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
    #[serde(default = "default_rule")]
    pub regularizer: RegularizerRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub assertions: Assertions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilitySettings>,
    pub problem: ProblemSpec,
}

fn default_rule() -> RegularizerRule {
    RegularizerRule::None
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the offending line.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let mut line = e.span().map_or(1, |s| line_of(text, s.start));
            // Tagged tables report the table header; point at the offending key instead.
            if let Some(key) = e.message().strip_prefix("unknown field `").and_then(|m| m.split('`').next()) {
                if let Some(k) = text.lines().skip(line - 1).position(|l| {
                    l.trim_start()
                        .strip_prefix(key)
                        .is_some_and(|rest| rest.trim_start().starts_with('='))
                }) {
                    line += k;
                }
            }
            Error::Config {
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate().map_err(|e| {
            let key = e.0;
            let line = text
                .lines()
                .position(|l| l.trim_start().starts_with(key))
                .map_or(1, |i| i + 1);
            Error::Config { line, message: e.1 }
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot serialize config: {e}")))
    }

    /// Semantic checks; the error names the key to anchor it to a line.
    fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let kind = self.experiment;
        let needs_grid = matches!(
            kind,
            Some(ExperimentKind::RateSweep | ExperimentKind::Mdp | ExperimentKind::Game)
        );
        if needs_grid && self.n_grid.is_empty() {
            return Err(("n_grid", "n_grid must be nonempty for this experiment".into()));
        }
        if self.n_grid.first() == Some(&0) || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(("n_grid", "n_grid must be positive and strictly increasing".into()));
        }
        if self.replications < 2 {
            return Err(("replications", "replications must be at least 2".into()));
        }
        self.solver
            .validate()
            .map_err(|e| ("[solver]", e.to_string()))?;
        if let Some(s) = &self.stability {
            if s.n == 0 || s.trials == 0 {
                return Err(("[stability]", "stability n and trials must be positive".into()));
            }
        }
        if kind == Some(ExperimentKind::Stability) && self.stability.is_none() {
            return Err(("experiment", "stability experiments need a [stability] table".into()));
        }
        match &self.problem {
            ProblemSpec::Quadratic {
                dim_x,
                dim_y,
                coupling,
                a_bar,
                b_bar,
                ..
            } => {
                if *dim_x == 0 || *dim_y == 0 {
                    return Err(("dim_x", "quadratic dimensions must be positive".into()));
                }
                if let Some(c) = coupling {
                    if c.len() != *dim_x || c.iter().any(|r| r.len() != *dim_y) {
                        return Err(("coupling", format!("coupling must be {dim_x}x{dim_y}")));
                    }
                }
                if a_bar.as_ref().is_some_and(|a| a.len() != *dim_x) {
                    return Err(("a_bar", format!("a_bar must have length {dim_x}")));
                }
                if b_bar.as_ref().is_some_and(|b| b.len() != *dim_y) {
                    return Err(("b_bar", format!("b_bar must have length {dim_y}")));
                }
            }
            ProblemSpec::Game { payoff, n1, n2, .. } => {
                if payoff.is_none() && (n1.is_none() || n2.is_none()) {
                    return Err(("family", "games need either payoff rows or n1 and n2".into()));
                }
            }
            ProblemSpec::Mdp { .. } => {}
        }
        Ok(())
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::invalid("matrix rows must be nonempty and of equal length"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl ProblemSpec {
    pub fn family(&self) -> &'static str {
        match self {
            ProblemSpec::Quadratic { .. } => "quadratic",
            ProblemSpec::Game { .. } => "game",
            ProblemSpec::Mdp { .. } => "mdp",
        }
    }

    pub fn build_quadratic(&self) -> Result<QuadraticProblem> {
        let ProblemSpec::Quadratic {
            dim_x,
            dim_y,
            mu_x,
            mu_y,
            coupling,
            coupling_scale,
            a_bar,
            b_bar,
            noise_scale,
            radius_x,
            radius_y,
            instance_seed,
        } = self
        else {
            return Err(Error::invalid("problem is not a quadratic"));
        };
        use rand::Rng;
        let mut rng = stream(*instance_seed);
        let c = match coupling {
            Some(rows) => matrix_from_rows(rows)?,
            None => {
                let s = coupling_scale.unwrap_or(0.0);
                DMatrix::from_fn(*dim_x, *dim_y, |_, _| if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 })
            }
        };
        let a = a_bar
            .clone()
            .unwrap_or_else(|| (0..*dim_x).map(|_| rng.random_range(-1.0..=1.0)).collect());
        let b = b_bar
            .clone()
            .unwrap_or_else(|| (0..*dim_y).map(|_| rng.random_range(-1.0..=1.0)).collect());
        let set = |r: &Option<f64>, d: usize| match r {
            Some(r) => FeasibleSet::linf_box(d, *r),
            None => Ok(FeasibleSet::unbounded(d)),
        };
        QuadraticProblem::new(
            *mu_x,
            *mu_y,
            c,
            a,
            b,
            *noise_scale,
            set(radius_x, *dim_x)?,
            set(radius_y, *dim_y)?,
        )
    }

    pub fn build_game(&self) -> Result<BilinearGame> {
        let ProblemSpec::Game {
            payoff,
            n1,
            n2,
            law,
            norm,
            instance_seed,
            ..
        } = self
        else {
            return Err(Error::invalid("problem is not a game"));
        };
        match payoff {
            Some(rows) => BilinearGame::new(matrix_from_rows(rows)?, *law, *norm),
            None => make_bilinear_game(n1.unwrap_or(0), n2.unwrap_or(0), *law, *instance_seed)?.with_norm(*norm),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SWEEP: &str = r#"
experiment = "rate-sweep"
master_seed = 42
n_grid = [16, 32, 64]
replications = 10
metrics = ["wgm", "sgm"]

[solver]
gap_tol = 1e-9
relative_gap = false

[assertions]
slope_min = -1.3
slope_max = -0.75

[problem]
family = "quadratic"
dim_x = 2
dim_y = 2
mu_x = 1.0
mu_y = 1.0
coupling = [[0.2, 0.0], [0.1, -0.3]]
noise_scale = 1.0
radius_x = 2.0
radius_y = 2.0
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(SWEEP).unwrap();
        assert_eq!(cfg.experiment, Some(ExperimentKind::RateSweep));
        assert_eq!(cfg.solver.gap_tol, 1e-9);
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(cfg.problem.build_quadratic().unwrap().coupling[(1, 1)], -0.3);
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let text = SWEEP.replace("noise_scale = 1.0", "noise_scale = 1.0\nbogus = 3");
        match ExperimentConfig::from_toml(&text) {
            Err(Error::Config { line, message }) => {
                assert!(message.contains("bogus"), "{message}");
                assert!(line >= 18, "line {line}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = SWEEP.replace("gap_tol = 1e-9", "gap_tol = 1e-9\nfoo = 1");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config { .. })));
    }

    #[test]
    fn semantic_errors_point_at_key() {
        let text = SWEEP.replace("n_grid = [16, 32, 64]", "n_grid = [32, 16]");
        match ExperimentConfig::from_toml(&text) {
            Err(Error::Config { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn game_and_mdp_specs() {
        let text = r#"
master_seed = 1
[problem]
family = "game"
payoff = [[1.0, -1.0], [-1.0, 1.0]]
law = { law = "deterministic" }
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let g = cfg.problem.build_game().unwrap();
        assert_eq!(g.n1(), 2);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
        let text = "master_seed = 1\n[problem]\nfamily = \"mdp\"\nnum_states = 3\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}
