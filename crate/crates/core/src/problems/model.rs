use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{argmin_separable, FeasibleSet, NormTag, LOG_FLOOR};
use crate::linalg::{dot, mat_t_vec, mat_vec, norm2_sq};

/// Objective of the form
/// `(qx/2)|x|^2 + <cx, x> - (qy/2)|y|^2 + <dy, y> + x^T M y`.
///
/// Every problem family in the crate (quadratic, matrix game, Bellman) has
/// this shape, and it is closed under averaging, so a sample mean of per-datum
/// objectives is again a `SaddleModel`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleModel {
    pub qx: f64,
    pub cx: Vec<f64>,
    pub qy: f64,
    pub dy: Vec<f64>,
    pub m: DMatrix<f64>,
}

impl SaddleModel {
    pub fn zeros(dim_x: usize, dim_y: usize) -> Self {
        SaddleModel {
            qx: 0.0,
            cx: vec![0.0; dim_x],
            qy: 0.0,
            dy: vec![0.0; dim_y],
            m: DMatrix::zeros(dim_x, dim_y),
        }
    }

    pub fn dim_x(&self) -> usize {
        self.cx.len()
    }

    pub fn dim_y(&self) -> usize {
        self.dy.len()
    }

    /// `self += w * other`
    pub fn add_scaled(&mut self, other: &SaddleModel, w: f64) {
        self.qx += w * other.qx;
        self.qy += w * other.qy;
        for (a, b) in self.cx.iter_mut().zip(&other.cx) {
            *a += w * b;
        }
        for (a, b) in self.dy.iter_mut().zip(&other.dy) {
            *a += w * b;
        }
        self.m += &other.m * w;
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let my = mat_vec(&self.m, y);
        0.5 * self.qx * norm2_sq(x) + dot(&self.cx, x) - 0.5 * self.qy * norm2_sq(y)
            + dot(&self.dy, y)
            + dot(x, &my)
    }

    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut g = mat_vec(&self.m, y);
        for ((gi, ci), xi) in g.iter_mut().zip(&self.cx).zip(x) {
            *gi += ci + self.qx * xi;
        }
        g
    }

    pub fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut g = mat_t_vec(&self.m, x);
        for ((gi, di), yi) in g.iter_mut().zip(&self.dy).zip(y) {
            *gi += di - self.qy * yi;
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularizerKind {
    None,
    QuadraticQuadratic,
    QuadraticEntropy,
    EntropyEntropy,
}

/// `Psi(x, y) = rx(x) - ry(y)` with each part either `(alpha/2)|v|^2` or
/// `alpha * sum v log v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularizer {
    pub kind: RegularizerKind,
    pub alpha_x: f64,
    pub alpha_y: f64,
    /// Upper bound on `|Psi|` over the feasible sets.
    pub bound_r: f64,
}

impl Regularizer {
    pub fn none() -> Self {
        Regularizer {
            kind: RegularizerKind::None,
            alpha_x: 0.0,
            alpha_y: 0.0,
            bound_r: 0.0,
        }
    }

    pub fn new(kind: RegularizerKind, alpha_x: f64, alpha_y: f64, bound_r: f64) -> Result<Self> {
        if !(alpha_x >= 0.0 && alpha_y >= 0.0 && bound_r >= 0.0) {
            return Err(Error::invalid(format!(
                "regularizer weights must be nonnegative (alpha_x {alpha_x}, alpha_y {alpha_y}, R {bound_r})"
            )));
        }
        if kind == RegularizerKind::None {
            return Ok(Self::none());
        }
        Ok(Regularizer {
            kind,
            alpha_x,
            alpha_y,
            bound_r,
        })
    }

    /// Strong convexity modulus induced in x (entropy is 1-strongly convex in L1 on the simplex).
    pub fn nu_x(&self) -> f64 {
        self.alpha_x
    }

    pub fn nu_y(&self) -> f64 {
        self.alpha_y
    }

    pub fn x_quadratic(&self) -> f64 {
        match self.kind {
            RegularizerKind::QuadraticQuadratic | RegularizerKind::QuadraticEntropy => self.alpha_x,
            _ => 0.0,
        }
    }

    pub fn x_entropy(&self) -> f64 {
        match self.kind {
            RegularizerKind::EntropyEntropy => self.alpha_x,
            _ => 0.0,
        }
    }

    pub fn y_quadratic(&self) -> f64 {
        match self.kind {
            RegularizerKind::QuadraticQuadratic => self.alpha_y,
            _ => 0.0,
        }
    }

    pub fn y_entropy(&self) -> f64 {
        match self.kind {
            RegularizerKind::QuadraticEntropy | RegularizerKind::EntropyEntropy => self.alpha_y,
            _ => 0.0,
        }
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        0.5 * self.x_quadratic() * norm2_sq(x) + self.x_entropy() * neg_entropy(x)
            - 0.5 * self.y_quadratic() * norm2_sq(y)
            - self.y_entropy() * neg_entropy(y)
    }
}

/// `sum v log v` with the convention `0 log 0 = 0`.
pub fn neg_entropy(v: &[f64]) -> f64 {
    v.iter()
        .map(|t| if *t > 0.0 { t * t.ln() } else { 0.0 })
        .sum()
}

/// Which block a best response optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    MinimizeX,
    MaximizeY,
}

/// A fully specified deterministic saddle-point objective over feasible sets.
#[derive(Debug, Clone)]
pub struct SaddleObjective {
    pub model: SaddleModel,
    pub regularizer: Regularizer,
    pub set_x: FeasibleSet,
    pub set_y: FeasibleSet,
    pub norm_x: NormTag,
    pub norm_y: NormTag,
}

impl SaddleObjective {
    pub fn new(
        model: SaddleModel,
        regularizer: Regularizer,
        set_x: FeasibleSet,
        set_y: FeasibleSet,
        norm_x: NormTag,
        norm_y: NormTag,
    ) -> Result<Self> {
        if model.dim_x() != set_x.dim() || model.dim_y() != set_y.dim() {
            return Err(Error::invalid(format!(
                "model is {}x{} but sets have dimensions {} and {}",
                model.dim_x(),
                model.dim_y(),
                set_x.dim(),
                set_y.dim()
            )));
        }
        if regularizer.x_entropy() > 0.0 && !set_x.is_simplex_like()
            || regularizer.y_entropy() > 0.0 && !set_y.is_simplex_like()
        {
            return Err(Error::unsupported(
                "entropy regularization needs a simplex or occupancy feasible set",
            ));
        }
        Ok(SaddleObjective {
            model,
            regularizer,
            set_x,
            set_y,
            norm_x,
            norm_y,
        })
    }

    pub fn dim_x(&self) -> usize {
        self.model.dim_x()
    }

    pub fn dim_y(&self) -> usize {
        self.model.dim_y()
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        self.model.value(x, y) + self.regularizer.value(x, y)
    }

    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut g = self.model.grad_x(x, y);
        let (q, e) = (self.regularizer.x_quadratic(), self.regularizer.x_entropy());
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi += q * xi;
            if e > 0.0 {
                *gi += e * (1.0 + xi.max(LOG_FLOOR).ln());
            }
        }
        g
    }

    pub fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut g = self.model.grad_y(x, y);
        let (q, e) = (self.regularizer.y_quadratic(), self.regularizer.y_entropy());
        for (gi, yi) in g.iter_mut().zip(y) {
            *gi -= q * yi;
            if e > 0.0 {
                *gi -= e * (1.0 + yi.max(LOG_FLOOR).ln());
            }
        }
        g
    }

    /// Exact best response of one block with the other held fixed, and the
    /// objective value there.
    pub fn best_response(&self, fixed: &[f64], side: Side) -> Result<(Vec<f64>, f64)> {
        match side {
            Side::MinimizeX => {
                if fixed.len() != self.dim_y() {
                    return Err(Error::invalid("fixed y has the wrong dimension"));
                }
                let mut lin = mat_vec(&self.model.m, fixed);
                for (l, c) in lin.iter_mut().zip(&self.model.cx) {
                    *l += c;
                }
                let curv = self.model.qx + self.regularizer.x_quadratic();
                let x = argmin_separable(&self.set_x, curv, &lin, self.regularizer.x_entropy())?;
                let v = self.value(&x, fixed);
                Ok((x, v))
            }
            Side::MaximizeY => {
                if fixed.len() != self.dim_x() {
                    return Err(Error::invalid("fixed x has the wrong dimension"));
                }
                let mut lin = mat_t_vec(&self.model.m, fixed);
                for (l, d) in lin.iter_mut().zip(&self.model.dy) {
                    *l = -(*l + d);
                }
                let curv = self.model.qy + self.regularizer.y_quadratic();
                let y = argmin_separable(&self.set_y, curv, &lin, self.regularizer.y_entropy())?;
                let v = self.value(fixed, &y);
                Ok((y, v))
            }
        }
    }

    /// `max_y' f(x, y') - min_x' f(x', y)`.
    pub fn duality_gap(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let (_, upper) = self.best_response(x, Side::MaximizeY)?;
        let (_, lower) = self.best_response(y, Side::MinimizeX)?;
        Ok(upper - lower)
    }

    /// Same objective with a different regularizer.
    pub fn with_regularizer(&self, regularizer: Regularizer) -> Result<Self> {
        SaddleObjective::new(
            self.model.clone(),
            regularizer,
            self.set_x.clone(),
            self.set_y.clone(),
            self.norm_x,
            self.norm_y,
        )
    }
}
