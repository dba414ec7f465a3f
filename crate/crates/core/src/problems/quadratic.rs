use nalgebra::DMatrix;
use rand::Rng;

use super::{ProblemConstants, SaddleModel, StochasticSaddleProblem};
use crate::error::{Error, Result};
use crate::geometry::{set_diameter, FeasibleSet, NormTag};
use crate::linalg::{mat_t_vec, mat_vec, spectral_norm};
use crate::rng::stream;

/// One draw `(a_xi, b_xi)` of the linear coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticDatum {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// `Phi_xi(x, y) = (mu_x/2)|x|^2 - a_xi^T x - (mu_y/2)|y|^2 + b_xi^T y + x^T C y`
/// with `a_xi = a_bar + U[-s, s]^dx` and `b_xi = b_bar + U[-s, s]^dy`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    pub mu_x: f64,
    pub mu_y: f64,
    pub coupling: DMatrix<f64>,
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub noise_scale: f64,
    set_x: FeasibleSet,
    set_y: FeasibleSet,
    constants: ProblemConstants,
}

/// Random means in `[-1, 1]`, unbounded sets.
pub fn make_quadratic_scsc(
    dim_x: usize,
    dim_y: usize,
    coupling: DMatrix<f64>,
    mu_x: f64,
    mu_y: f64,
    noise_scale: f64,
    seed: u64,
) -> Result<QuadraticProblem> {
    let mut rng = stream(seed);
    let a_bar = (0..dim_x).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let b_bar = (0..dim_y).map(|_| rng.random_range(-1.0..=1.0)).collect();
    QuadraticProblem::new(
        mu_x,
        mu_y,
        coupling,
        a_bar,
        b_bar,
        noise_scale,
        FeasibleSet::unbounded(dim_x),
        FeasibleSet::unbounded(dim_y),
    )
}

impl QuadraticProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mu_x: f64,
        mu_y: f64,
        coupling: DMatrix<f64>,
        a_bar: Vec<f64>,
        b_bar: Vec<f64>,
        noise_scale: f64,
        set_x: FeasibleSet,
        set_y: FeasibleSet,
    ) -> Result<Self> {
        if !(mu_x > 0.0 && mu_y > 0.0) {
            return Err(Error::invalid(format!(
                "strong convexity moduli must be positive (mu_x {mu_x}, mu_y {mu_y})"
            )));
        }
        if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
            return Err(Error::invalid("noise scale must be finite and nonnegative"));
        }
        let (dx, dy) = (a_bar.len(), b_bar.len());
        if dx == 0 || dy == 0 {
            return Err(Error::invalid("dimensions must be positive"));
        }
        if coupling.nrows() != dx || coupling.ncols() != dy {
            return Err(Error::invalid(format!(
                "coupling must be {dx}x{dy}, got {}x{}",
                coupling.nrows(),
                coupling.ncols()
            )));
        }
        for set in [&set_x, &set_y] {
            if !matches!(set, FeasibleSet::Unbounded { .. } | FeasibleSet::LinfBox { .. }) {
                return Err(Error::unsupported("quadratic family supports box or unbounded sets"));
            }
        }
        if set_x.dim() != dx || set_y.dim() != dy {
            return Err(Error::invalid("set dimensions do not match the coefficients"));
        }
        let mut p = QuadraticProblem {
            mu_x,
            mu_y,
            coupling,
            a_bar,
            b_bar,
            noise_scale,
            set_x,
            set_y,
            constants: ProblemConstants {
                mu_x,
                mu_y,
                lx_w: 0.0,
                ly_w: 0.0,
                lx_s: 0.0,
                ly_s: 0.0,
                l_x: mu_x,
                l_y: mu_y,
                l_xy: 0.0,
                d_x: 0.0,
                d_y: 0.0,
                c: None,
                estimated: false,
            },
        };
        p.constants = p.compute_constants();
        Ok(p)
    }

    pub fn with_means(self, a_bar: Vec<f64>, b_bar: Vec<f64>) -> Result<Self> {
        QuadraticProblem::new(
            self.mu_x,
            self.mu_y,
            self.coupling,
            a_bar,
            b_bar,
            self.noise_scale,
            self.set_x,
            self.set_y,
        )
    }

    /// Restricts both blocks to centered boxes.
    pub fn boxed(self, radius_x: f64, radius_y: f64) -> Result<Self> {
        let set_x = FeasibleSet::linf_box(self.a_bar.len(), radius_x)?;
        let set_y = FeasibleSet::linf_box(self.b_bar.len(), radius_y)?;
        QuadraticProblem::new(
            self.mu_x,
            self.mu_y,
            self.coupling,
            self.a_bar,
            self.b_bar,
            self.noise_scale,
            set_x,
            set_y,
        )
    }

    /// `(E|grad_x Phi_xi - grad_x Phi|^2, E|grad_y Phi_xi - grad_y Phi|^2)`,
    /// which does not depend on the evaluation point.
    pub fn gradient_noise_moments(&self) -> (f64, f64) {
        let v = self.noise_scale * self.noise_scale / 3.0;
        (self.a_bar.len() as f64 * v, self.b_bar.len() as f64 * v)
    }

    fn box_radius(set: &FeasibleSet) -> f64 {
        match *set {
            FeasibleSet::LinfBox { radius, .. } => radius,
            _ => f64::INFINITY,
        }
    }

    fn compute_constants(&self) -> ProblemConstants {
        let s = self.noise_scale;
        let (rx, ry) = (Self::box_radius(&self.set_x), Self::box_radius(&self.set_y));
        let c = &self.coupling;
        // x-gradient coordinate i: mu_x x_i + (C y)_i - a_bar_i - delta_i.
        let (lx_w, lx_s) = lipschitz_envelopes(
            self.mu_x * rx,
            (0..c.nrows()).map(|i| {
                let hw: f64 = c.row(i).iter().map(|v| v.abs()).sum::<f64>() * ry;
                (-self.a_bar[i], hw)
            }),
            s,
        );
        // y-gradient coordinate j: -mu_y y_j + (C^T x)_j + b_bar_j + delta_j.
        let (ly_w, ly_s) = lipschitz_envelopes(
            self.mu_y * ry,
            (0..c.ncols()).map(|j| {
                let hw: f64 = c.column(j).iter().map(|v| v.abs()).sum::<f64>() * rx;
                (self.b_bar[j], hw)
            }),
            s,
        );
        let diameter = |set: &FeasibleSet| set_diameter(set, NormTag::EuclideanL2).unwrap_or(f64::INFINITY);
        let unconstrained = !self.set_x.is_bounded() && !self.set_y.is_bounded();
        ProblemConstants {
            mu_x: self.mu_x,
            mu_y: self.mu_y,
            lx_w,
            ly_w,
            lx_s,
            ly_s,
            l_x: self.mu_x,
            l_y: self.mu_y,
            l_xy: spectral_norm(c),
            d_x: diameter(&self.set_x),
            d_y: diameter(&self.set_y),
            c: unconstrained.then(|| (self.a_bar.len() + self.b_bar.len()) as f64 * s * s / 3.0),
            estimated: false,
        }
    }
}

/// `E|u - delta|` for `delta ~ U[-s, s]`.
fn mean_abs_dev(u: f64, s: f64) -> f64 {
    if u.abs() >= s {
        u.abs()
    } else {
        (u * u + s * s) / (2.0 * s)
    }
}

/// `E (c + |u - delta|)^2` for `delta ~ U[-s, s]`.
fn second_moment(c: f64, u: f64, s: f64) -> f64 {
    c * c + 2.0 * c * mean_abs_dev(u, s) + u * u + s * s / 3.0
}

/// Squared-sum envelopes `(l^w, l^s)` for gradients whose i-th coordinate
/// magnitude is at most `c + |u_i - delta_i|`, where `u_i` ranges over
/// `[mid_i - hw_i, mid_i + hw_i]`.
fn lipschitz_envelopes(c: f64, coords: impl Iterator<Item = (f64, f64)>, s: f64) -> (f64, f64) {
    let mut w = 0.0;
    let mut st = 0.0;
    for (mid, hw) in coords {
        if !c.is_finite() || !hw.is_finite() {
            return (f64::INFINITY, f64::INFINITY);
        }
        // The moment is convex in u, so its supremum sits at an endpoint.
        w += second_moment(c, mid - hw, s).max(second_moment(c, mid + hw, s));
        // The farthest endpoint from delta is at distance |mid - delta| + hw.
        st += second_moment(c + hw, mid, s);
    }
    (w.sqrt(), st.sqrt())
}

impl StochasticSaddleProblem for QuadraticProblem {
    type Datum = QuadraticDatum;

    fn set_x(&self) -> &FeasibleSet {
        &self.set_x
    }

    fn set_y(&self) -> &FeasibleSet {
        &self.set_y
    }

    fn norm_x(&self) -> NormTag {
        NormTag::EuclideanL2
    }

    fn norm_y(&self) -> NormTag {
        NormTag::EuclideanL2
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> QuadraticDatum {
        let s = self.noise_scale;
        let mut noise = |m: &f64| {
            if s > 0.0 {
                m + rng.random_range(-s..=s)
            } else {
                *m
            }
        };
        let a = self.a_bar.iter().map(&mut noise).collect();
        let b = self.b_bar.iter().map(&mut noise).collect();
        QuadraticDatum { a, b }
    }

    fn mean_model(&self, data: &[QuadraticDatum]) -> SaddleModel {
        let (dx, dy) = (self.a_bar.len(), self.b_bar.len());
        let mut cx = vec![0.0; dx];
        let mut dyv = vec![0.0; dy];
        let w = 1.0 / data.len() as f64;
        for d in data {
            for (c, a) in cx.iter_mut().zip(&d.a) {
                *c -= w * a;
            }
            for (e, b) in dyv.iter_mut().zip(&d.b) {
                *e += w * b;
            }
        }
        SaddleModel {
            qx: self.mu_x,
            cx,
            qy: self.mu_y,
            dy: dyv,
            m: self.coupling.clone(),
        }
    }

    fn population_model(&self) -> Option<SaddleModel> {
        Some(SaddleModel {
            qx: self.mu_x,
            cx: self.a_bar.iter().map(|a| -a).collect(),
            qy: self.mu_y,
            dy: self.b_bar.clone(),
            m: self.coupling.clone(),
        })
    }

    fn lipschitz_x(&self, datum: &QuadraticDatum, y: &[f64]) -> f64 {
        let rx = Self::box_radius(&self.set_x);
        if !rx.is_finite() {
            return f64::INFINITY;
        }
        let cy = mat_vec(&self.coupling, y);
        cy.iter()
            .zip(&datum.a)
            .map(|(v, a)| {
                let t = self.mu_x * rx + (v - a).abs();
                t * t
            })
            .sum::<f64>()
            .sqrt()
    }

    fn lipschitz_y(&self, datum: &QuadraticDatum, x: &[f64]) -> f64 {
        let ry = Self::box_radius(&self.set_y);
        if !ry.is_finite() {
            return f64::INFINITY;
        }
        let ctx = mat_t_vec(&self.coupling, x);
        ctx.iter()
            .zip(&datum.b)
            .map(|(v, b)| {
                let t = self.mu_y * ry + (v + b).abs();
                t * t
            })
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::draw_samples;

    fn scalar(noise: f64) -> QuadraticProblem {
        QuadraticProblem::new(
            1.0,
            1.0,
            DMatrix::from_element(1, 1, 1.0),
            vec![1.0],
            vec![0.0],
            noise,
            FeasibleSet::unbounded(1),
            FeasibleSet::unbounded(1),
        )
        .unwrap()
    }

    #[test]
    fn rejects_nonpositive_moduli() {
        let r = QuadraticProblem::new(
            0.0,
            1.0,
            DMatrix::zeros(1, 1),
            vec![0.0],
            vec![0.0],
            0.0,
            FeasibleSet::unbounded(1),
            FeasibleSet::unbounded(1),
        );
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_noise_samples_are_identical() {
        let p = scalar(0.0);
        let s = draw_samples(&p, 5, 3);
        assert!(s.data.iter().all(|d| *d == s.data[0]));
        assert_eq!(s.data[0].a, vec![1.0]);
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = scalar(0.5);
        assert_eq!(draw_samples(&p, 20, 11), draw_samples(&p, 20, 11));
        assert_ne!(draw_samples(&p, 20, 11), draw_samples(&p, 20, 12));
    }

    #[test]
    fn unbounded_constants() {
        let p = scalar(0.6);
        let c = p.constants();
        assert!((c.l_xy - 1.0).abs() < 1e-12);
        assert!(c.lx_w.is_infinite() && c.d_x.is_infinite());
        assert!((c.c.unwrap() - 2.0 * 0.36 / 3.0).abs() < 1e-15);
        assert!((c.kappa() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boxed_envelopes_dominate_per_sample_values() {
        let p = scalar(0.5).boxed(2.0, 2.0).unwrap();
        let c = *p.constants();
        assert!(c.lx_w <= c.lx_s && c.ly_w <= c.ly_s);
        // l^s squared is E sup_y l_x(xi, y)^2; in one dimension the sup sits at a box corner.
        let mut rng = stream(5);
        let k = 40000;
        let mc: f64 = (0..k)
            .map(|_| {
                let d = p.sample(&mut rng);
                f64::max(p.lipschitz_x(&d, &[-2.0]), p.lipschitz_x(&d, &[2.0])).powi(2)
            })
            .sum::<f64>()
            / k as f64;
        assert!((mc.sqrt() - c.lx_s).abs() < 0.02, "{} vs {}", mc.sqrt(), c.lx_s);
        // Per-sample Lipschitz value bounds the actual gradient norm over the box.
        let d = p.sample(&mut rng);
        let y = [0.3];
        let l = p.lipschitz_x(&d, &y);
        for x in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            let g = p.datum_grad_x(&d, &[x], &y);
            assert!(g[0].abs() <= l + 1e-12);
        }
    }

    #[test]
    fn weak_envelope_matches_monte_carlo_at_extreme_point() {
        // Single coordinate: sup_y E l_x(xi, y)^2 is attained at an endpoint of the y box.
        let p = scalar(0.5).boxed(1.0, 1.0).unwrap();
        let c = *p.constants();
        let mut rng = stream(8);
        let mut best: f64 = 0.0;
        for y in [-1.0, 1.0] {
            let m: f64 = (0..20000)
                .map(|_| p.lipschitz_x(&p.sample(&mut rng), &[y]).powi(2))
                .sum::<f64>()
                / 20000.0;
            best = best.max(m);
        }
        assert!((best.sqrt() - c.lx_w).abs() < 0.02, "{} vs {}", best.sqrt(), c.lx_w);
    }
}
