//! Variograms, Bernstein functions and the operations that preserve the
//! variogram property.
//!
//! A variogram on ℝⁿ is a continuous function with `γ(0) = 0` that is
//! negative definite: `Σᵢⱼ aᵢ aⱼ γ(xⱼ - xᵢ) <= 0` whenever `Σ aᵢ = 0`.
//! `exp(-r γ)` is then a covariance for every `r > 0`. The catalog here is
//! closed-form only; the randomized checks ([`neg_def_test`],
//! [`subadditivity_check`], [`schoenberg_search`]) look for violations and
//! never prove membership.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CovLabError, Result};
use crate::gram::{gram_from_fn, restart_rng, PdCertificate};

/// Bernstein functions: non-negative with completely monotone derivative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BernsteinJson", into = "BernsteinJson")]
pub enum BernsteinFunction {
    /// `b λ`, `b >= 0`.
    Linear { b: f64 },
    /// `λ^α`, `0 < α <= 1`.
    Power { alpha: f64 },
    /// `log(1 + λ)`.
    LogOnePlus,
}

impl BernsteinFunction {
    pub fn linear(b: f64) -> Result<Self> {
        let f = BernsteinFunction::Linear { b };
        f.validate()?;
        Ok(f)
    }

    pub fn power(alpha: f64) -> Result<Self> {
        let f = BernsteinFunction::Power { alpha };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BernsteinFunction::Linear { b } if !(b.is_finite() && b >= 0.0) => {
                Err(CovLabError::InvalidParameter {
                    name: "b",
                    value: b,
                    reason: "linear Bernstein coefficient must be non-negative",
                })
            }
            BernsteinFunction::Power { alpha } if !(alpha > 0.0 && alpha <= 1.0) => {
                Err(CovLabError::InvalidParameter {
                    name: "alpha",
                    value: alpha,
                    reason: "Bernstein power needs 0 < alpha <= 1",
                })
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        match *self {
            BernsteinFunction::Linear { b } => b * lambda,
            BernsteinFunction::Power { alpha } => lambda.powf(alpha),
            BernsteinFunction::LogOnePlus => lambda.ln_1p(),
        }
    }
}

/// Closed-form variograms (and candidate functions whose membership is
/// decided by the randomized checks).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VariogramJson", into = "VariogramJson")]
pub enum Variogram {
    /// `‖η‖²` on ℝⁿ.
    SquaredNorm { dim: usize },
    /// `η·Qη` with `Q` symmetric positive semi-definite.
    Quadratic { q: DMatrix<f64> },
    /// `1 - cos(y·η)`.
    OneMinusCos { y: Vec<f64> },
    /// `log(1 + ‖η‖²)`.
    LogOnePlusSq { dim: usize },
    /// `‖η‖^α`, `0 < α <= 2`.
    PowerNorm { dim: usize, alpha: f64 },
    /// `(‖η‖ + |τ|)^α` on `ℝ^spatial_dim x ℝ`, `α > 0`; a variogram iff `α <= 1`.
    BrcExponent { spatial_dim: usize, alpha: f64 },
    /// `c ‖η‖ |τ|` on `ℝ^spatial_dim x ℝ`; the cross term of `(‖η‖ + |τ|)²`.
    MixedProduct { spatial_dim: usize, coefficient: f64 },
    /// `γ(η') + ψ(η'')` on the concatenated space.
    DirectSum(Box<Variogram>, Box<Variogram>),
    /// `f(γ(η))`.
    Subordinated {
        f: BernsteinFunction,
        child: Box<Variogram>,
    },
    /// `γ` evaluated with zeros on every axis not in `kept`.
    Restriction { child: Box<Variogram>, kept: Vec<usize> },
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(CovLabError::InvalidInput("variogram dimension must be >= 1".into()));
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Variogram {
    pub fn squared_norm(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Variogram::SquaredNorm { dim })
    }

    pub fn quadratic(q: DMatrix<f64>) -> Result<Self> {
        let v = Variogram::Quadratic { q };
        v.validate()?;
        Ok(v)
    }

    pub fn one_minus_cos(y: Vec<f64>) -> Result<Self> {
        let v = Variogram::OneMinusCos { y };
        v.validate()?;
        Ok(v)
    }

    pub fn log_one_plus_sq(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Variogram::LogOnePlusSq { dim })
    }

    pub fn power_norm(dim: usize, alpha: f64) -> Result<Self> {
        let v = Variogram::PowerNorm { dim, alpha };
        v.validate()?;
        Ok(v)
    }

    pub fn brc_exponent(spatial_dim: usize, alpha: f64) -> Result<Self> {
        let v = Variogram::BrcExponent { spatial_dim, alpha };
        v.validate()?;
        Ok(v)
    }

    pub fn mixed_product(spatial_dim: usize, coefficient: f64) -> Result<Self> {
        let v = Variogram::MixedProduct {
            spatial_dim,
            coefficient,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn direct_sum(first: Variogram, second: Variogram) -> Result<Self> {
        let v = Variogram::DirectSum(Box::new(first), Box::new(second));
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Variogram::SquaredNorm { dim } | Variogram::LogOnePlusSq { dim } => check_dim(*dim),
            Variogram::Quadratic { q } => {
                check_dim(q.nrows())?;
                if !q.is_square() {
                    return Err(CovLabError::InvalidInput("Q must be square".into()));
                }
                if q.iter().any(|v| !v.is_finite()) {
                    return Err(CovLabError::NonFinite);
                }
                if q != &q.transpose() {
                    return Err(CovLabError::InvalidInput("Q must be symmetric".into()));
                }
                let cert = PdCertificate::from_matrix(q)?;
                if cert.is_not_pd() {
                    return Err(CovLabError::InvalidInput(format!(
                        "Q must be positive semi-definite, got {cert}"
                    )));
                }
                Ok(())
            }
            Variogram::OneMinusCos { y } => {
                check_dim(y.len())?;
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(CovLabError::NonFinite);
                }
                Ok(())
            }
            Variogram::PowerNorm { dim, alpha } => {
                check_dim(*dim)?;
                if !(*alpha > 0.0 && *alpha <= 2.0) {
                    return Err(CovLabError::InvalidParameter {
                        name: "alpha",
                        value: *alpha,
                        reason: "power-norm needs 0 < alpha <= 2",
                    });
                }
                Ok(())
            }
            Variogram::BrcExponent { spatial_dim, alpha } => {
                check_dim(*spatial_dim)?;
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(CovLabError::InvalidParameter {
                        name: "alpha",
                        value: *alpha,
                        reason: "exponent must be positive",
                    });
                }
                Ok(())
            }
            Variogram::MixedProduct {
                spatial_dim,
                coefficient,
            } => {
                check_dim(*spatial_dim)?;
                if !(coefficient.is_finite() && *coefficient >= 0.0) {
                    return Err(CovLabError::InvalidParameter {
                        name: "coefficient",
                        value: *coefficient,
                        reason: "coefficient must be non-negative",
                    });
                }
                Ok(())
            }
            Variogram::DirectSum(a, b) => {
                a.validate()?;
                b.validate()
            }
            Variogram::Subordinated { f, child } => {
                f.validate()?;
                child.validate()
            }
            Variogram::Restriction { child, kept } => {
                child.validate()?;
                if kept.is_empty() {
                    return Err(CovLabError::InvalidInput(
                        "restriction must keep at least one axis".into(),
                    ));
                }
                let dim = child.dim();
                let mut seen = vec![false; dim];
                for &k in kept {
                    if k >= dim || seen[k] {
                        return Err(CovLabError::InvalidInput(format!(
                            "kept axes {kept:?} are not distinct axes of a {dim}-dimensional variogram"
                        )));
                    }
                    seen[k] = true;
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Variogram::SquaredNorm { dim }
            | Variogram::LogOnePlusSq { dim }
            | Variogram::PowerNorm { dim, .. } => *dim,
            Variogram::Quadratic { q } => q.nrows(),
            Variogram::OneMinusCos { y } => y.len(),
            Variogram::BrcExponent { spatial_dim, .. }
            | Variogram::MixedProduct { spatial_dim, .. } => spatial_dim + 1,
            Variogram::DirectSum(a, b) => a.dim() + b.dim(),
            Variogram::Subordinated { child, .. } => child.dim(),
            Variogram::Restriction { kept, .. } => kept.len(),
        }
    }

    /// Axis at which the argument splits into two independent blocks, if
    /// the form has one (space | environment, or the two summands).
    pub fn natural_split(&self) -> Option<usize> {
        match self {
            Variogram::BrcExponent { spatial_dim, .. }
            | Variogram::MixedProduct { spatial_dim, .. } => Some(*spatial_dim),
            Variogram::DirectSum(a, _) => Some(a.dim()),
            Variogram::Subordinated { child, .. } => child.natural_split(),
            _ => None,
        }
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.dim() {
            return Err(CovLabError::DimensionMismatch {
                expected: self.dim(),
                got: point.len(),
            });
        }
        Ok(self.eval_unchecked(point))
    }

    fn eval_unchecked(&self, p: &[f64]) -> f64 {
        match self {
            Variogram::SquaredNorm { .. } => p.iter().map(|x| x * x).sum(),
            Variogram::Quadratic { q } => {
                let n = p.len();
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        s += p[i] * q[(i, j)] * p[j];
                    }
                }
                s.max(0.0)
            }
            Variogram::OneMinusCos { y } => {
                let dot: f64 = y.iter().zip(p).map(|(a, b)| a * b).sum();
                1.0 - dot.cos()
            }
            Variogram::LogOnePlusSq { .. } => p.iter().map(|x| x * x).sum::<f64>().ln_1p(),
            Variogram::PowerNorm { alpha, .. } => norm(p).powf(*alpha),
            Variogram::BrcExponent { spatial_dim, alpha } => {
                (norm(&p[..*spatial_dim]) + p[*spatial_dim].abs()).powf(*alpha)
            }
            Variogram::MixedProduct {
                spatial_dim,
                coefficient,
            } => coefficient * norm(&p[..*spatial_dim]) * p[*spatial_dim].abs(),
            Variogram::DirectSum(a, b) => {
                let k = a.dim();
                a.eval_unchecked(&p[..k]) + b.eval_unchecked(&p[k..])
            }
            Variogram::Subordinated { f, child } => f.eval(child.eval_unchecked(p)),
            Variogram::Restriction { child, kept } => {
                let mut full = vec![0.0; child.dim()];
                for (&axis, &v) in kept.iter().zip(p) {
                    full[axis] = v;
                }
                child.eval_unchecked(&full)
            }
        }
    }

    /// The part of `γ` left after removing the quadratic term `½ η·Qη` of
    /// its Lévy–Khintchine pair, when that split is known in closed form.
    /// `None` means `γ` is purely quadratic. Forms whose split is not
    /// tabulated are returned unchanged.
    pub fn non_quadratic_part(&self) -> Option<Variogram> {
        match self {
            Variogram::SquaredNorm { .. } | Variogram::Quadratic { .. } => None,
            Variogram::PowerNorm { alpha, .. } if *alpha == 2.0 => None,
            // (‖η‖ + |τ|)² = ‖η‖² + τ² + 2‖η‖|τ|: the first two terms are quadratic.
            Variogram::BrcExponent { spatial_dim, alpha } if *alpha == 2.0 => {
                Some(Variogram::MixedProduct {
                    spatial_dim: *spatial_dim,
                    coefficient: 2.0,
                })
            }
            Variogram::DirectSum(a, b) => match (a.non_quadratic_part(), b.non_quadratic_part()) {
                (None, None) => None,
                (Some(x), None) => Some(Variogram::DirectSum(Box::new(x), Box::new(zero_like(b)))),
                (None, Some(y)) => Some(Variogram::DirectSum(Box::new(zero_like(a)), Box::new(y))),
                (Some(x), Some(y)) => Some(Variogram::DirectSum(Box::new(x), Box::new(y))),
            },
            other => Some(other.clone()),
        }
    }
}

/// The zero function on the same space, as a degenerate quadratic form.
fn zero_like(v: &Variogram) -> Variogram {
    let n = v.dim();
    Variogram::Quadratic {
        q: DMatrix::zeros(n, n),
    }
}

/// `f ∘ γ`; a variogram whenever `γ` is one and `f` is Bernstein.
pub fn subordinate(f: BernsteinFunction, gamma: Variogram) -> Variogram {
    Variogram::Subordinated {
        f,
        child: Box::new(gamma),
    }
}

/// `η' ↦ γ(η', 0)`: keep the listed axes, zero the rest.
pub fn restrict(gamma: Variogram, kept: Vec<usize>) -> Result<Variogram> {
    let v = Variogram::Restriction {
        child: Box::new(gamma),
        kept,
    };
    v.validate()?;
    Ok(v)
}

/// `K(p, q) = exp(-r γ(p - q))`.
#[derive(Clone, Debug, PartialEq)]
pub struct SchoenbergKernel {
    gamma: Variogram,
    r: f64,
}

pub fn schoenberg_cov(gamma: Variogram, r: f64) -> Result<SchoenbergKernel> {
    if !(r.is_finite() && r > 0.0) {
        return Err(CovLabError::InvalidParameter {
            name: "r",
            value: r,
            reason: "the Schoenberg rate must be positive",
        });
    }
    gamma.validate()?;
    Ok(SchoenbergKernel { gamma, r })
}

impl SchoenbergKernel {
    pub fn variogram(&self) -> &Variogram {
        &self.gamma
    }

    pub fn rate(&self) -> f64 {
        self.r
    }

    pub fn eval(&self, p: &[f64], q: &[f64]) -> Result<f64> {
        if p.len() != q.len() {
            return Err(CovLabError::DimensionMismatch {
                expected: p.len(),
                got: q.len(),
            });
        }
        let diff: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
        Ok((-self.r * self.gamma.eval(&diff)?).exp())
    }

    pub fn gram(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        gram_from_fn(points.len(), |i, j| self.eval(&points[i], &points[j]))
    }

    pub fn certify(&self, points: &[Vec<f64>]) -> Result<PdCertificate> {
        PdCertificate::from_matrix(&self.gram(points)?)
    }
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

/// Random point sets for the randomized checks. Even trials draw up to
/// `max_points` points uniformly in a box of random size; odd trials build
/// a small product grid `A x B` across a block split of the axes (the form's
/// natural split when it has one), which is where cross terms between
/// blocks show up.
fn draw_points<R: Rng>(gamma: &Variogram, trial: usize, max_points: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let dim = gamma.dim();
    let grid = trial % 2 == 1 && dim >= 2 && max_points >= 4;
    if !grid {
        let n = 2 + (trial / 2) % (max_points - 1);
        let side = log_uniform(rng, 0.1, 10.0);
        return (0..n)
            .map(|_| (0..dim).map(|_| rng.random::<f64>() * side).collect())
            .collect();
    }
    let split = gamma
        .natural_split()
        .filter(|s| *s > 0 && *s < dim)
        .unwrap_or_else(|| rng.random_range(1..dim));
    let k = rng.random_range(2..=3usize);
    let m = rng.random_range(2..=3usize).min(max_points / k).max(2);
    let (sa, sb) = (log_uniform(rng, 0.1, 10.0), log_uniform(rng, 0.1, 10.0));
    let a: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..split).map(|_| rng.random::<f64>() * sa).collect())
        .collect();
    let b: Vec<Vec<f64>> = (0..m)
        .map(|_| (split..dim).map(|_| rng.random::<f64>() * sb).collect())
        .collect();
    a.iter()
        .flat_map(|x| b.iter().map(move |y| x.iter().chain(y).copied().collect()))
        .collect()
}

/// A point set and zero-sum weights on which the quadratic form of a
/// candidate variogram is positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegDefWitness {
    pub trial: usize,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub form: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum NegDefOutcome {
    Pass { trials: usize },
    Fail(NegDefWitness),
}

impl NegDefOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, NegDefOutcome::Pass { .. })
    }
}

/// `Σᵢⱼ aᵢ aⱼ γ(xⱼ - xᵢ)` together with `Σᵢⱼ |aᵢ aⱼ γ(xⱼ - xᵢ)|`.
pub fn quadratic_form(gamma: &Variogram, points: &[Vec<f64>], weights: &[f64]) -> Result<(f64, f64)> {
    if points.len() != weights.len() {
        return Err(CovLabError::DimensionMismatch {
            expected: points.len(),
            got: weights.len(),
        });
    }
    let mut form = 0.0;
    let mut scale = 0.0;
    let mut diff = vec![0.0; gamma.dim()];
    for (i, xi) in points.iter().enumerate() {
        for (j, xj) in points.iter().enumerate() {
            for (d, (a, b)) in diff.iter_mut().zip(xj.iter().zip(xi)) {
                *d = a - b;
            }
            let term = weights[i] * weights[j] * gamma.eval(&diff)?;
            form += term;
            scale += term.abs();
        }
    }
    Ok((form, scale))
}

/// Randomized negative-definiteness test. Each trial draws a point set and
/// standard-normal weights centred to sum to zero, and fails as soon as the
/// quadratic form exceeds `N ε Σ|terms|`. Trial `t` uses the stream
/// `(seed, t)`.
pub fn neg_def_test(gamma: &Variogram, trials: usize, points_per_trial: usize, seed: u64) -> Result<NegDefOutcome> {
    gamma.validate()?;
    if trials == 0 {
        return Err(CovLabError::InvalidInput("at least one trial is required".into()));
    }
    if points_per_trial < 2 {
        return Err(CovLabError::InvalidInput("at least two points per trial are required".into()));
    }
    for t in 0..trials {
        let mut rng = restart_rng(seed, t as u64);
        let points = draw_points(gamma, t, points_per_trial, &mut rng);
        let n = points.len();
        let mut weights: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mean = weights.iter().sum::<f64>() / n as f64;
        weights.iter_mut().for_each(|w| *w -= mean);
        let (form, scale) = quadratic_form(gamma, &points, &weights)?;
        let tolerance = n as f64 * f64::EPSILON * scale;
        if form > tolerance {
            return Ok(NegDefOutcome::Fail(NegDefWitness {
                trial: t,
                points,
                weights,
                form,
                tolerance,
            }));
        }
    }
    Ok(NegDefOutcome::Pass { trials })
}

/// A pair violating `√γ(a + b) <= √γ(a) + √γ(b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubadditivityWitness {
    pub trial: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// `√γ(a + b) - √γ(a) - √γ(b)`.
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum SubadditivityOutcome {
    Pass { trials: usize },
    Fail(SubadditivityWitness),
}

impl SubadditivityOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, SubadditivityOutcome::Pass { .. })
    }
}

/// Randomized check of subadditivity of `√γ`, applied to the non-quadratic
/// part of `γ` (see [`Variogram::non_quadratic_part`]): every variogram's
/// jump part is again a variogram, so it must be subadditive as well. This
/// is what exposes `(‖η‖ + |τ|)²`, whose cross term `2‖η‖|τ|` is not.
///
/// Even trials draw arbitrary pairs; odd trials draw pairs supported on
/// complementary axis blocks.
pub fn subadditivity_check(gamma: &Variogram, trials: usize, seed: u64) -> Result<SubadditivityOutcome> {
    gamma.validate()?;
    if trials == 0 {
        return Err(CovLabError::InvalidInput("at least one trial is required".into()));
    }
    let Some(target) = gamma.non_quadratic_part() else {
        return Ok(SubadditivityOutcome::Pass { trials });
    };
    let dim = target.dim();
    for t in 0..trials {
        let mut rng = restart_rng(seed, t as u64);
        let side = log_uniform(&mut rng, 0.1, 10.0);
        let mut a: Vec<f64> = (0..dim).map(|_| rng.random_range(-side..side)).collect();
        let mut b: Vec<f64> = (0..dim).map(|_| rng.random_range(-side..side)).collect();
        if t % 2 == 1 && dim >= 2 {
            let split = target
                .natural_split()
                .filter(|s| *s > 0 && *s < dim)
                .unwrap_or_else(|| rng.random_range(1..dim));
            a[split..].iter_mut().for_each(|v| *v = 0.0);
            b[..split].iter_mut().for_each(|v| *v = 0.0);
        }
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let lhs = target.eval(&sum)?.sqrt();
        let rhs = target.eval(&a)?.sqrt() + target.eval(&b)?.sqrt();
        let tol = 8.0 * f64::EPSILON * lhs.max(rhs).max(1.0);
        if lhs > rhs + tol {
            return Ok(SubadditivityOutcome::Fail(SubadditivityWitness {
                trial: t,
                a,
                b,
                excess: lhs - rhs,
            }));
        }
    }
    Ok(SubadditivityOutcome::Pass { trials })
}

/// A configuration and rate at which `exp(-r γ)` has a non-PSD Gram matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchoenbergWitness {
    pub trial: usize,
    pub rate: f64,
    pub points: Vec<Vec<f64>>,
    pub certificate: PdCertificate,
}

/// Searches point sets and rates for a Gram matrix of `exp(-r γ)` with
/// `λ_min < -tol`, using the same point generator as [`neg_def_test`].
/// Trial `t` uses rate `rates[t mod rates.len()]`.
pub fn schoenberg_search(
    gamma: &Variogram,
    rates: &[f64],
    budget: usize,
    max_points: usize,
    seed: u64,
) -> Result<Option<SchoenbergWitness>> {
    if rates.is_empty() || budget == 0 || max_points < 2 {
        return Err(CovLabError::InvalidInput(
            "need at least one rate, a positive budget and two points".into(),
        ));
    }
    let kernels = rates
        .iter()
        .map(|&r| schoenberg_cov(gamma.clone(), r))
        .collect::<Result<Vec<_>>>()?;
    for t in 0..budget {
        let mut rng = restart_rng(seed, t as u64);
        let points = draw_points(gamma, t, max_points, &mut rng);
        let kernel = &kernels[t % kernels.len()];
        let cert = kernel.certify(&points)?;
        if cert.is_not_pd() {
            return Ok(Some(SchoenbergWitness {
                trial: t,
                rate: kernel.rate(),
                points,
                certificate: cert,
            }));
        }
    }
    Ok(None)
}

#[derive(Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spatial_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coefficient: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kept: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bernstein: Option<BernsteinFunction>,
}

impl Params {
    fn is_empty(&self) -> bool {
        self.dim.is_none()
            && self.alpha.is_none()
            && self.b.is_none()
            && self.y.is_none()
            && self.q.is_none()
            && self.spatial_dim.is_none()
            && self.coefficient.is_none()
            && self.kept.is_none()
            && self.bernstein.is_none()
    }
}

#[derive(Serialize, Deserialize)]
struct BernsteinJson {
    form: String,
    #[serde(default, skip_serializing_if = "Params::is_empty")]
    params: Params,
}

#[derive(Serialize, Deserialize)]
struct VariogramJson {
    form: String,
    #[serde(default, skip_serializing_if = "Params::is_empty")]
    params: Params,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<VariogramJson>,
}

fn missing(form: &str, field: &str) -> CovLabError {
    CovLabError::InvalidInput(format!("`{form}` needs params.{field}"))
}

impl TryFrom<BernsteinJson> for BernsteinFunction {
    type Error = CovLabError;

    fn try_from(j: BernsteinJson) -> Result<Self> {
        let f = match j.form.as_str() {
            "linear" => BernsteinFunction::Linear {
                b: j.params.b.unwrap_or(1.0),
            },
            "power" => BernsteinFunction::Power {
                alpha: j.params.alpha.ok_or_else(|| missing("power", "alpha"))?,
            },
            "log-one-plus" => BernsteinFunction::LogOnePlus,
            other => {
                return Err(CovLabError::InvalidInput(format!(
                    "unknown Bernstein form `{other}`"
                )))
            }
        };
        f.validate()?;
        Ok(f)
    }
}

impl From<BernsteinFunction> for BernsteinJson {
    fn from(f: BernsteinFunction) -> Self {
        let mut params = Params::default();
        let form = match f {
            BernsteinFunction::Linear { b } => {
                params.b = Some(b);
                "linear"
            }
            BernsteinFunction::Power { alpha } => {
                params.alpha = Some(alpha);
                "power"
            }
            BernsteinFunction::LogOnePlus => "log-one-plus",
        };
        BernsteinJson {
            form: form.into(),
            params,
        }
    }
}

impl TryFrom<VariogramJson> for Variogram {
    type Error = CovLabError;

    fn try_from(j: VariogramJson) -> Result<Self> {
        let form = j.form.as_str();
        let p = j.params;
        let mut children = j
            .children
            .into_iter()
            .map(Variogram::try_from)
            .collect::<Result<Vec<_>>>()?;
        let expect_children = |n: usize, got: usize| {
            if n == got {
                Ok(())
            } else {
                Err(CovLabError::InvalidInput(format!(
                    "`{form}` takes {n} children, got {got}"
                )))
            }
        };
        let v = match form {
            "squared-norm" | "log-one-plus-sq" | "power-norm" => {
                expect_children(0, children.len())?;
                let dim = p.dim.ok_or_else(|| missing(form, "dim"))?;
                match form {
                    "squared-norm" => Variogram::SquaredNorm { dim },
                    "log-one-plus-sq" => Variogram::LogOnePlusSq { dim },
                    _ => Variogram::PowerNorm {
                        dim,
                        alpha: p.alpha.ok_or_else(|| missing(form, "alpha"))?,
                    },
                }
            }
            "quadratic" => {
                expect_children(0, children.len())?;
                let rows = p.q.ok_or_else(|| missing(form, "q"))?;
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(CovLabError::InvalidInput("Q must be square".into()));
                }
                Variogram::Quadratic {
                    q: DMatrix::from_row_iterator(n, n, rows.into_iter().flatten()),
                }
            }
            "one-minus-cos" => {
                expect_children(0, children.len())?;
                Variogram::OneMinusCos {
                    y: p.y.ok_or_else(|| missing(form, "y"))?,
                }
            }
            "brc-exponent" => {
                expect_children(0, children.len())?;
                Variogram::BrcExponent {
                    spatial_dim: p.spatial_dim.ok_or_else(|| missing(form, "spatialDim"))?,
                    alpha: p.alpha.ok_or_else(|| missing(form, "alpha"))?,
                }
            }
            "mixed-product" => {
                expect_children(0, children.len())?;
                Variogram::MixedProduct {
                    spatial_dim: p.spatial_dim.ok_or_else(|| missing(form, "spatialDim"))?,
                    coefficient: p.coefficient.unwrap_or(1.0),
                }
            }
            "direct-sum" => {
                expect_children(2, children.len())?;
                let b = children.pop().expect("two children");
                let a = children.pop().expect("two children");
                Variogram::DirectSum(Box::new(a), Box::new(b))
            }
            "subordinated" => {
                expect_children(1, children.len())?;
                Variogram::Subordinated {
                    f: p.bernstein.ok_or_else(|| missing(form, "bernstein"))?,
                    child: Box::new(children.pop().expect("one child")),
                }
            }
            "restriction" => {
                expect_children(1, children.len())?;
                Variogram::Restriction {
                    child: Box::new(children.pop().expect("one child")),
                    kept: p.kept.ok_or_else(|| missing(form, "kept"))?,
                }
            }
            other => {
                return Err(CovLabError::InvalidInput(format!(
                    "unknown variogram form `{other}`"
                )))
            }
        };
        v.validate()?;
        Ok(v)
    }
}

impl From<Variogram> for VariogramJson {
    fn from(v: Variogram) -> Self {
        let mut params = Params::default();
        let mut children = Vec::new();
        let form = match v {
            Variogram::SquaredNorm { dim } => {
                params.dim = Some(dim);
                "squared-norm"
            }
            Variogram::Quadratic { q } => {
                params.q = Some(q.row_iter().map(|r| r.iter().copied().collect()).collect());
                "quadratic"
            }
            Variogram::OneMinusCos { y } => {
                params.y = Some(y);
                "one-minus-cos"
            }
            Variogram::LogOnePlusSq { dim } => {
                params.dim = Some(dim);
                "log-one-plus-sq"
            }
            Variogram::PowerNorm { dim, alpha } => {
                params.dim = Some(dim);
                params.alpha = Some(alpha);
                "power-norm"
            }
            Variogram::BrcExponent { spatial_dim, alpha } => {
                params.spatial_dim = Some(spatial_dim);
                params.alpha = Some(alpha);
                "brc-exponent"
            }
            Variogram::MixedProduct {
                spatial_dim,
                coefficient,
            } => {
                params.spatial_dim = Some(spatial_dim);
                params.coefficient = Some(coefficient);
                "mixed-product"
            }
            Variogram::DirectSum(a, b) => {
                children = vec![(*a).into(), (*b).into()];
                "direct-sum"
            }
            Variogram::Subordinated { f, child } => {
                params.bernstein = Some(f);
                children = vec![(*child).into()];
                "subordinated"
            }
            Variogram::Restriction { child, kept } => {
                params.kept = Some(kept);
                children = vec![(*child).into()];
                "restriction"
            }
        };
        VariogramJson {
            form: form.into(),
            params,
            children,
        }
    }
}
