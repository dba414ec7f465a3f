use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ProblemConstants, SaddleModel, StochasticSaddleProblem};
use crate::error::{Error, Result};
use crate::geometry::{FeasibleSet, NormTag};
use crate::linalg::{mat_t_vec, mat_vec, spectral_norm};
use crate::rng::{derive_seed, stream, tag};

/// Distribution of a sampled payoff matrix around its mean `A_bar`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum PayoffLaw {
    Deterministic,
    /// Independent uniform perturbations of entry `(i, j)` on
    /// `[-w_ij, w_ij]` with `w_ij = min(half_width, 1 - |A_bar_ij|)`.
    Uniform { half_width: f64 },
    /// Entries in `{-1, +1}` with mean `A_bar_ij`.
    Sign,
}

/// Norm pair used for both strategy blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GameNorm {
    L1,
    L2,
}

/// Stochastic matrix game `min_x max_y x^T E[A_xi] y` over two simplices.
#[derive(Debug, Clone)]
pub struct BilinearGame {
    pub a_bar: DMatrix<f64>,
    pub law: PayoffLaw,
    pub game_norm: GameNorm,
    set_x: FeasibleSet,
    set_y: FeasibleSet,
    constants: ProblemConstants,
}

/// Random mean payoff with entries uniform on `[-1, 1]`, L1 geometry.
pub fn make_bilinear_game(n1: usize, n2: usize, law: PayoffLaw, seed: u64) -> Result<BilinearGame> {
    let mut rng = stream(seed);
    let a_bar = DMatrix::from_fn(n1, n2, |_, _| rng.random_range(-1.0..=1.0));
    BilinearGame::new(a_bar, law, GameNorm::L1)
}

const LIPSCHITZ_DRAWS: usize = 10_000;

impl BilinearGame {
    pub fn new(a_bar: DMatrix<f64>, law: PayoffLaw, game_norm: GameNorm) -> Result<Self> {
        let (n1, n2) = a_bar.shape();
        if n1 < 2 || n2 < 2 {
            return Err(Error::invalid(format!(
                "games need at least two strategies per player, got {n1}x{n2}"
            )));
        }
        if a_bar.iter().any(|v| !(v.abs() <= 1.0)) {
            return Err(Error::invalid("mean payoff entries must lie in [-1, 1]"));
        }
        if let PayoffLaw::Uniform { half_width } = law {
            if !(half_width >= 0.0) || !half_width.is_finite() {
                return Err(Error::invalid("uniform payoff half width must be finite and nonnegative"));
            }
        }
        let mut game = BilinearGame {
            a_bar,
            law,
            game_norm,
            set_x: FeasibleSet::simplex(n1)?,
            set_y: FeasibleSet::simplex(n2)?,
            constants: ProblemConstants {
                mu_x: 0.0,
                mu_y: 0.0,
                lx_w: 1.0,
                ly_w: 1.0,
                lx_s: 1.0,
                ly_s: 1.0,
                l_x: 0.0,
                l_y: 0.0,
                l_xy: 0.0,
                d_x: 2.0,
                d_y: 2.0,
                c: None,
                estimated: false,
            },
        };
        game.constants = game.compute_constants();
        Ok(game)
    }

    pub fn with_norm(self, game_norm: GameNorm) -> Result<Self> {
        BilinearGame::new(self.a_bar, self.law, game_norm)
    }

    pub fn n1(&self) -> usize {
        self.a_bar.nrows()
    }

    pub fn n2(&self) -> usize {
        self.a_bar.ncols()
    }

    fn entry_width(&self, mean: f64) -> f64 {
        match self.law {
            PayoffLaw::Uniform { half_width } => half_width.min(1.0 - mean.abs()).max(0.0),
            _ => 0.0,
        }
    }

    /// `E[A_xi(i, j)^2]`.
    fn entry_second_moment(&self, mean: f64) -> f64 {
        match self.law {
            PayoffLaw::Deterministic => mean * mean,
            PayoffLaw::Uniform { .. } => {
                let w = self.entry_width(mean);
                mean * mean + w * w / 3.0
            }
            PayoffLaw::Sign => 1.0,
        }
    }

    fn compute_constants(&self) -> ProblemConstants {
        match self.game_norm {
            GameNorm::L1 => ProblemConstants {
                mu_x: 0.0,
                mu_y: 0.0,
                lx_w: 1.0,
                ly_w: 1.0,
                lx_s: 1.0,
                ly_s: 1.0,
                l_x: 0.0,
                l_y: 0.0,
                l_xy: self.a_bar.iter().fold(0.0, |m, v| f64::max(m, v.abs())),
                d_x: 2.0,
                d_y: 2.0,
                c: None,
                estimated: false,
            },
            GameNorm::L2 => {
                let sq = self.a_bar.map(|v| self.entry_second_moment(v));
                // E|A y|^2 is convex in y, so its maximum over the simplex is at a vertex.
                let lx_w = (0..sq.ncols())
                    .map(|j| sq.column(j).sum())
                    .fold(0.0, f64::max)
                    .sqrt();
                let ly_w = (0..sq.nrows())
                    .map(|i| sq.row(i).sum())
                    .fold(0.0, f64::max)
                    .sqrt();
                let (lx_s, ly_s, estimated) = if self.law == PayoffLaw::Deterministic {
                    (lx_w, ly_w, false)
                } else {
                    let mut rng = stream(derive_seed(0, &[tag::ESTIMATE]));
                    let (mut sx, mut sy) = (0.0, 0.0);
                    for _ in 0..LIPSCHITZ_DRAWS {
                        let a = self.sample(&mut rng);
                        sx += (0..a.ncols())
                            .map(|j| a.column(j).norm_squared())
                            .fold(0.0, f64::max);
                        sy += (0..a.nrows())
                            .map(|i| a.row(i).norm_squared())
                            .fold(0.0, f64::max);
                    }
                    let k = LIPSCHITZ_DRAWS as f64;
                    // Jensen guarantees l^w <= l^s; keep that ordering under sampling error.
                    ((sx / k).sqrt().max(lx_w), (sy / k).sqrt().max(ly_w), true)
                };
                ProblemConstants {
                    mu_x: 0.0,
                    mu_y: 0.0,
                    lx_w,
                    ly_w,
                    lx_s,
                    ly_s,
                    l_x: 0.0,
                    l_y: 0.0,
                    l_xy: spectral_norm(&self.a_bar),
                    d_x: 2f64.sqrt(),
                    d_y: 2f64.sqrt(),
                    c: None,
                    estimated,
                }
            }
        }
    }

    fn tag(&self) -> NormTag {
        match self.game_norm {
            GameNorm::L1 => NormTag::SumL1,
            GameNorm::L2 => NormTag::EuclideanL2,
        }
    }
}

impl StochasticSaddleProblem for BilinearGame {
    type Datum = DMatrix<f64>;

    fn set_x(&self) -> &FeasibleSet {
        &self.set_x
    }

    fn set_y(&self) -> &FeasibleSet {
        &self.set_y
    }

    fn norm_x(&self) -> NormTag {
        self.tag()
    }

    fn norm_y(&self) -> NormTag {
        self.tag()
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        match self.law {
            PayoffLaw::Deterministic => self.a_bar.clone(),
            PayoffLaw::Uniform { .. } => self.a_bar.map(|m| {
                let w = self.entry_width(m);
                if w > 0.0 {
                    m + rng.random_range(-w..=w)
                } else {
                    m
                }
            }),
            PayoffLaw::Sign => self.a_bar.map(|m| {
                if rng.random::<f64>() < 0.5 * (1.0 + m) {
                    1.0
                } else {
                    -1.0
                }
            }),
        }
    }

    fn mean_model(&self, data: &[DMatrix<f64>]) -> SaddleModel {
        let mut model = SaddleModel::zeros(self.n1(), self.n2());
        let w = 1.0 / data.len() as f64;
        for a in data {
            model.m += a * w;
        }
        model
    }

    fn population_model(&self) -> Option<SaddleModel> {
        let mut model = SaddleModel::zeros(self.n1(), self.n2());
        model.m = self.a_bar.clone();
        Some(model)
    }

    fn lipschitz_x(&self, datum: &DMatrix<f64>, y: &[f64]) -> f64 {
        self.tag().dual_norm(&mat_vec(datum, y))
    }

    fn lipschitz_y(&self, datum: &DMatrix<f64>, x: &[f64]) -> f64 {
        self.tag().dual_norm(&mat_t_vec(datum, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::draw_samples;

    #[test]
    fn rejects_out_of_range_payoffs() {
        let a = DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.0]);
        assert!(BilinearGame::new(a, PayoffLaw::Deterministic, GameNorm::L1).is_err());
        let a = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        assert!(BilinearGame::new(a, PayoffLaw::Deterministic, GameNorm::L1).is_err());
    }

    #[test]
    fn sampled_entries_stay_bounded_with_right_mean() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, -0.3, 0.0, -1.0]);
        for law in [PayoffLaw::Uniform { half_width: 0.5 }, PayoffLaw::Sign] {
            let g = BilinearGame::new(a.clone(), law, GameNorm::L1).unwrap();
            let s = draw_samples(&g, 20000, 4);
            assert!(s.data.iter().all(|m| m.iter().all(|v| v.abs() <= 1.0)));
            let mean = g.mean_model(&s.data).m;
            assert!((mean - &a).abs().max() < 0.03);
        }
    }

    #[test]
    fn l2_constants_follow_second_moments() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, 0.0, 1.0]);
        let g = BilinearGame::new(a, PayoffLaw::Deterministic, GameNorm::L2).unwrap();
        let c = g.constants();
        assert!((c.lx_w - (1.25f64).sqrt()).abs() < 1e-15);
        assert!((c.ly_w - 1.0).abs() < 1e-15);
        assert!(!c.estimated && c.lx_s == c.lx_w);
        let g = g.clone().with_norm(GameNorm::L2).unwrap();
        let g = BilinearGame::new(g.a_bar, PayoffLaw::Sign, GameNorm::L2).unwrap();
        assert!(g.constants().estimated);
        assert!(g.constants().lx_w <= g.constants().lx_s);
    }
}
