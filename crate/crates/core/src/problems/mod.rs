//! Stochastic saddle-point problem families, sample sets and empirical objectives.

mod bilinear;
mod model;
mod quadratic;

use std::fmt::Debug;
use std::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use bilinear::{make_bilinear_game, BilinearGame, GameNorm, PayoffLaw};
pub use model::{neg_entropy, Regularizer, RegularizerKind, SaddleModel, SaddleObjective, Side};
pub use quadratic::{make_quadratic_scsc, QuadraticDatum, QuadraticProblem};

use crate::error::{Error, Result};
use crate::geometry::{FeasibleSet, NormTag};
use crate::rng::stream;

/// Constants of the strong convexity, Lipschitz and smoothness assumptions.
///
/// Entries that do not exist for a problem (for example Lipschitz constants
/// over an unbounded set) are `f64::INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub mu_x: f64,
    pub mu_y: f64,
    pub lx_w: f64,
    pub ly_w: f64,
    pub lx_s: f64,
    pub ly_s: f64,
    pub l_x: f64,
    pub l_y: f64,
    pub l_xy: f64,
    pub d_x: f64,
    pub d_y: f64,
    /// Second moment of the sample gradient at the population saddle, when known.
    pub c: Option<f64>,
    /// Set when some Lipschitz constant is a sampled estimate rather than a bound.
    pub estimated: bool,
}

impl ProblemConstants {
    pub fn kappa(&self) -> f64 {
        let mu = self.mu_x.min(self.mu_y);
        if mu > 0.0 {
            self.l_x.max(self.l_y).max(self.l_xy) / mu
        } else {
            f64::INFINITY
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu_x.min(self.mu_y)
    }
}

/// An ordered list of i.i.d. data drawn from a seeded stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet<D> {
    pub data: Vec<D>,
    pub seed: u64,
}

impl<D> SampleSet<D> {
    pub fn n(&self) -> usize {
        self.data.len()
    }
}

/// A stochastic saddle-point problem `min_x max_y E[Phi_xi(x, y)]`.
pub trait StochasticSaddleProblem: Send + Sync {
    type Datum: Clone + Debug + PartialEq + Send + Sync;

    fn set_x(&self) -> &FeasibleSet;
    fn set_y(&self) -> &FeasibleSet;
    fn norm_x(&self) -> NormTag;
    fn norm_y(&self) -> NormTag;
    fn constants(&self) -> &ProblemConstants;

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::Datum;

    /// Sample-average objective model of `data` (without regularizer).
    fn mean_model(&self, data: &[Self::Datum]) -> SaddleModel;

    /// Population objective `E[Phi_xi]`, when available in closed form.
    fn population_model(&self) -> Option<SaddleModel>;

    /// `l_x(xi, y)`: Lipschitz constant of `Phi_xi(., y)` over the x set in `norm_x`.
    fn lipschitz_x(&self, datum: &Self::Datum, y: &[f64]) -> f64;

    /// `l_y(xi, x)`: Lipschitz constant of `Phi_xi(x, .)` over the y set in `norm_y`.
    fn lipschitz_y(&self, datum: &Self::Datum, x: &[f64]) -> f64;

    fn dim_x(&self) -> usize {
        self.set_x().dim()
    }

    fn dim_y(&self) -> usize {
        self.set_y().dim()
    }

    fn datum_value(&self, datum: &Self::Datum, x: &[f64], y: &[f64]) -> f64 {
        self.mean_model(std::slice::from_ref(datum)).value(x, y)
    }

    fn datum_grad_x(&self, datum: &Self::Datum, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.mean_model(std::slice::from_ref(datum)).grad_x(x, y)
    }

    fn datum_grad_y(&self, datum: &Self::Datum, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.mean_model(std::slice::from_ref(datum)).grad_y(x, y)
    }

    /// Population objective over the problem's sets.
    fn population_objective(&self) -> Result<SaddleObjective> {
        let model = self
            .population_model()
            .ok_or_else(|| Error::unsupported("problem exposes no population objective"))?;
        SaddleObjective::new(
            model,
            Regularizer::none(),
            self.set_x().clone(),
            self.set_y().clone(),
            self.norm_x(),
            self.norm_y(),
        )
    }
}

/// Draws `n` samples from the stream seeded by `seed`.
pub fn draw_samples<P: StochasticSaddleProblem>(problem: &P, n: usize, seed: u64) -> SampleSet<P::Datum> {
    let mut rng = stream(seed);
    let data = (0..n).map(|_| problem.sample(&mut rng)).collect();
    SampleSet { data, seed }
}

/// The (regularized) empirical objective of a sample set.
#[derive(Debug, Clone)]
pub struct EmpiricalObjective {
    pub objective: SaddleObjective,
    pub n: usize,
    pub seed: u64,
}

impl Deref for EmpiricalObjective {
    type Target = SaddleObjective;

    fn deref(&self) -> &SaddleObjective {
        &self.objective
    }
}

pub fn empirical_objective<P: StochasticSaddleProblem>(
    problem: &P,
    samples: &SampleSet<P::Datum>,
    regularizer: Regularizer,
) -> Result<EmpiricalObjective> {
    if samples.data.is_empty() {
        return Err(Error::invalid("empirical objective needs at least one sample"));
    }
    let objective = SaddleObjective::new(
        problem.mean_model(&samples.data),
        regularizer,
        problem.set_x().clone(),
        problem.set_y().clone(),
        problem.norm_x(),
        problem.norm_y(),
    )?;
    Ok(EmpiricalObjective {
        objective,
        n: samples.n(),
        seed: samples.seed,
    })
}

/// Copy of `samples` with position `i` replaced.
pub fn leave_one_out_swap<D: Clone>(samples: &SampleSet<D>, i: usize, replacement: D) -> Result<SampleSet<D>> {
    if i >= samples.data.len() {
        return Err(Error::invalid(format!(
            "index {i} out of range for a sample set of size {}",
            samples.data.len()
        )));
    }
    let mut out = samples.clone();
    out.data[i] = replacement;
    Ok(out)
}

/// Quadratic regularizer with `alpha = l^w / (sqrt(n) D)` in each block.
pub fn default_regularizer_corollary(constants: &ProblemConstants, n: usize) -> Result<Regularizer> {
    let (dx, dy) = (constants.d_x, constants.d_y);
    if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
        return Err(Error::invalid(format!(
            "regularizer needs positive finite diameters (D_x {dx}, D_y {dy})"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let rn = (n as f64).sqrt();
    let alpha_x = constants.lx_w / (rn * dx);
    let alpha_y = constants.ly_w / (rn * dy);
    Regularizer::new(
        RegularizerKind::QuadraticQuadratic,
        alpha_x,
        alpha_y,
        0.5 * alpha_x * dx * dx + 0.5 * alpha_y * dy * dy,
    )
}
