//! Gram matrices, eigenvalue certification of positive-definiteness, random
//! counterexample search and Cholesky simulation.
//!
//! A model is a covariance only if `sum_ij w_i w_j C(s_i, s_j) >= 0` for every
//! finite configuration and weight vector, i.e. if every Gram matrix is
//! positive semi-definite. [`certify_pd`] checks one configuration through the
//! smallest eigenvalue; [`counterexample_search`] looks for a configuration
//! that breaks it. No jitter or nugget is ever added.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CovLabError, Result};
use crate::metrics::{AngleUnit, EuclideanPoint, GeoPoint, JointSample, MetricSpec, Site};
use crate::models::{Base, CovarianceModel, DomainSpec};

/// Samples sharing one site type, together with the metric used between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigurationRepr", into = "ConfigurationRepr")]
pub struct Configuration {
    samples: Vec<JointSample>,
    metric: MetricSpec,
}

#[derive(Serialize, Deserialize)]
struct ConfigurationRepr {
    metric: MetricSpec,
    samples: Vec<JointSample>,
}

impl TryFrom<ConfigurationRepr> for Configuration {
    type Error = CovLabError;

    fn try_from(r: ConfigurationRepr) -> Result<Self> {
        Configuration::new(r.samples, r.metric)
    }
}

impl From<Configuration> for ConfigurationRepr {
    fn from(c: Configuration) -> Self {
        ConfigurationRepr {
            metric: c.metric,
            samples: c.samples,
        }
    }
}

impl Configuration {
    pub fn new(samples: Vec<JointSample>, metric: MetricSpec) -> Result<Self> {
        metric.validate()?;
        let first = samples
            .first()
            .ok_or_else(|| CovLabError::InvalidInput("a configuration needs at least one sample".into()))?;
        let dim = match &first.site {
            Site::Euclidean(p) => Some(p.dim()),
            Site::Geo(_) => None,
        };
        for (i, s) in samples.iter().enumerate() {
            let this_dim = match &s.site {
                Site::Euclidean(p) => Some(p.dim()),
                Site::Geo(_) => None,
            };
            if this_dim != dim {
                return Err(CovLabError::InvalidInput(format!(
                    "sample {i} has a different site type or dimension than sample 0"
                )));
            }
            if !metric.accepts(&s.site) {
                return Err(CovLabError::Incompatible(format!(
                    "metric {metric:?} does not apply to the sites of this configuration"
                )));
            }
        }
        Ok(Self { samples, metric })
    }

    /// All pairs `(sites[i], envs[j])`, site-major.
    pub fn product_grid(sites: &[Site], envs: &[f64], metric: MetricSpec) -> Result<Self> {
        let samples = sites
            .iter()
            .flat_map(|s| envs.iter().map(move |&e| JointSample::new(s.clone(), e)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, metric)
    }

    pub fn samples(&self) -> &[JointSample] {
        &self.samples
    }

    pub fn metric(&self) -> &MetricSpec {
        &self.metric
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_metric(&self, metric: MetricSpec) -> Result<Self> {
        Self::new(self.samples.clone(), metric)
    }

    pub fn is_geo(&self) -> bool {
        self.samples[0].site.is_geo()
    }

    /// Spatial dimension of Euclidean sites; `None` for lon/lat sites.
    pub fn site_dim(&self) -> Option<usize> {
        match &self.samples[0].site {
            Site::Euclidean(p) => Some(p.dim()),
            Site::Geo(_) => None,
        }
    }
}

/// The 3 x 3 sphere configuration used as the reference counterexample for
/// BRC on sphere x R: sites at longitude -60.0, -60.1, -60.2 on latitude 60,
/// environmental values 0.1, 0.2, 0.3, and the model with `alpha0 = 1`,
/// `alpha_g = alpha_e = 1/300`, `alpha2 = 1.01`.
pub fn reference_sphere_grid(unit: AngleUnit) -> (CovarianceModel, Configuration) {
    let model = CovarianceModel::Brc {
        alpha0: 1.0,
        alpha_g: 1.0 / 300.0,
        alpha_e: 1.0 / 300.0,
        alpha2: 1.01,
    };
    let sites: Vec<Site> = [-60.0, -60.1, -60.2]
        .iter()
        .map(|&lon| Site::Geo(GeoPoint::new(lon, 60.0).expect("valid coordinates")))
        .collect();
    let config = Configuration::product_grid(&sites, &[0.1, 0.2, 0.3], MetricSpec::GreatCircle { unit })
        .expect("valid configuration");
    (model, config)
}

/// Builds the Gram matrix of `model` on `config`. Each unordered pair is
/// evaluated once, so the result is exactly symmetric.
pub fn gram_matrix(model: &CovarianceModel, config: &Configuration) -> Result<DMatrix<f64>> {
    model.validate()?;
    model.check_metric(config.metric())?;
    let samples = config.samples();
    let metric = config.metric();
    gram_from_fn(samples.len(), |i, j| {
        model.pair_unchecked(&samples[i], &samples[j], metric)
    })
}

/// Symmetric matrix from `entry(i, j)` evaluated for `i <= j`.
pub fn gram_from_fn<F>(n: usize, mut entry: F) -> Result<DMatrix<f64>>
where
    F: FnMut(usize, usize) -> Result<f64>,
{
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = entry(i, j)?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

fn check_square_finite(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(CovLabError::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CovLabError::NonFinite);
    }
    Ok(())
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn extremal_eigenvalues(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    check_square_finite(m)?;
    if m.nrows() == 0 {
        return Err(CovLabError::InvalidInput("empty matrix".into()));
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    Ok((min, max))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    Ok(extremal_eigenvalues(m)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pd,
    PsdBoundary,
    NotPd,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pd => "pd",
            Verdict::PsdBoundary => "psd-boundary",
            Verdict::NotPd => "not-pd",
        })
    }
}

/// Eigenvalue tolerance `n * eps * max(1, lambda_max)`.
pub fn eigen_tolerance(n: usize, lambda_max: f64) -> f64 {
    n as f64 * f64::EPSILON * lambda_max.max(1.0)
}

fn classify(lambda_min: f64, tolerance: f64) -> Verdict {
    if lambda_min < -tolerance {
        Verdict::NotPd
    } else if lambda_min <= tolerance {
        Verdict::PsdBoundary
    } else {
        Verdict::Pd
    }
}

/// Outcome of a positive-definiteness check on one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdCertificate {
    pub n: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub verdict: Verdict,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Configuration>,
}

impl PdCertificate {
    /// Certificate for an already assembled symmetric matrix. No witness is
    /// attached since the matrix carries no configuration.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let (lambda_min, lambda_max) = extremal_eigenvalues(m)?;
        let n = m.nrows();
        let tolerance = eigen_tolerance(n, lambda_max);
        Ok(Self {
            n,
            lambda_min,
            lambda_max,
            verdict: classify(lambda_min, tolerance),
            tolerance,
            witness: None,
        })
    }

    pub fn is_not_pd(&self) -> bool {
        self.verdict == Verdict::NotPd
    }
}

impl fmt::Display for PdCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (n = {}, lambda_min = {:e}, lambda_max = {:e}, tolerance = {:e})",
            self.verdict, self.n, self.lambda_min, self.lambda_max, self.tolerance
        )
    }
}

pub fn certify_pd(model: &CovarianceModel, config: &Configuration) -> Result<PdCertificate> {
    let m = gram_matrix(model, config)?;
    let mut cert = PdCertificate::from_matrix(&m)?;
    if cert.is_not_pd() {
        cert.witness = Some(config.clone());
    }
    Ok(cert)
}

/// Knobs of [`counterexample_search`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Number of random configurations to try.
    pub budget: usize,
    /// Largest configuration size; sizes cycle upward from 3 to this value.
    pub max_points: usize,
    pub seed: u64,
    /// Include the site x environment product-grid generator (domains with
    /// an environmental axis only).
    pub product_grid: bool,
    /// Angle unit of the great-circle metric on sphere domains.
    pub angle_unit: AngleUnit,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            budget: 1000,
            max_points: 30,
            seed: 0,
            product_grid: true,
            angle_unit: AngleUnit::Radians,
        }
    }
}

/// Independent stream for restart `index` of a run seeded with `seed`.
pub fn restart_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Random configuration generators. Euclidean layouts are drawn in units of
/// the model's correlation range, which is where the validity of scale
/// families is decided; sphere layouts live on the unit sphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Layout {
    UniformBox,
    Lattice,
    UniformSphere,
    GreatCircleRing,
    SphericalCap,
    ProductGrid,
}

fn layouts(domain: &DomainSpec, product_grid: bool) -> Vec<Layout> {
    let mut v = match domain.base {
        Base::Euclidean { .. } => vec![Layout::UniformBox, Layout::Lattice],
        Base::Sphere { .. } => vec![
            Layout::UniformSphere,
            Layout::GreatCircleRing,
            Layout::SphericalCap,
        ],
    };
    if product_grid && domain.with_env {
        v.push(Layout::ProductGrid);
    }
    v
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn normal3<R: Rng>(rng: &mut R) -> [f64; 3] {
    [
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn geo_site(v: [f64; 3]) -> Site {
    Site::Geo(GeoPoint::from_vector(v))
}

fn euclid_site(coords: Vec<f64>) -> Site {
    Site::Euclidean(EuclideanPoint::new(coords).expect("finite coordinates"))
}

struct Generator<'a> {
    model: &'a CovarianceModel,
    domain: &'a DomainSpec,
}

impl Generator<'_> {
    fn dim(&self) -> usize {
        match self.domain.base {
            Base::Euclidean { dim } | Base::Sphere { dim } => dim,
        }
    }

    fn uniform_box_sites<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<Site> {
        let side = log_uniform(rng, 0.25, 8.0) * self.model.geo_range();
        let d = self.dim();
        (0..n)
            .map(|_| euclid_site((0..d).map(|_| rng.random::<f64>() * side).collect()))
            .collect()
    }

    fn lattice_sites<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<Site> {
        let d = self.dim();
        let spacing = rng.random_range(0.2..1.0) * self.model.geo_range();
        let jitter = 0.01 * spacing;
        // Per-axis counts with product <= n, as even as possible.
        let mut counts = vec![1usize; d];
        let base = ((n as f64).powf(1.0 / d as f64).floor() as usize).max(1);
        counts.iter_mut().for_each(|c| *c = base);
        for axis in 0..d {
            let others: usize = counts.iter().enumerate().filter(|(i, _)| *i != axis).map(|(_, c)| c).product();
            counts[axis] = (n / others).max(1);
        }
        let total: usize = counts.iter().product();
        let mut sites = Vec::with_capacity(total);
        for idx in 0..total {
            let mut rem = idx;
            let coords = counts
                .iter()
                .map(|&c| {
                    let k = rem % c;
                    rem /= c;
                    k as f64 * spacing + jitter * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            sites.push(euclid_site(coords));
        }
        sites
    }

    fn sphere_sites<R: Rng>(&self, rng: &mut R, layout: Layout, n: usize) -> Vec<Site> {
        match layout {
            Layout::GreatCircleRing => {
                let a = normalize(normal3(rng));
                let mut b = normal3(rng);
                let proj = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
                b = normalize([b[0] - proj * a[0], b[1] - proj * a[1], b[2] - proj * a[2]]);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (0..n)
                    .map(|k| {
                        let t = phase
                            + std::f64::consts::TAU * k as f64 / n as f64
                            + 0.01 * rng.sample::<f64, _>(StandardNormal);
                        let (s, c) = t.sin_cos();
                        geo_site([c * a[0] + s * b[0], c * a[1] + s * b[1], c * a[2] + s * b[2]])
                    })
                    .collect()
            }
            Layout::SphericalCap => {
                let centre = normalize(normal3(rng));
                let radius = log_uniform(rng, 0.01, 3.0);
                (0..n)
                    .map(|_| {
                        let z = normal3(rng);
                        geo_site([
                            centre[0] + radius * z[0],
                            centre[1] + radius * z[1],
                            centre[2] + radius * z[2],
                        ])
                    })
                    .collect()
            }
            _ => (0..n).map(|_| geo_site(normal3(rng))).collect(),
        }
    }

    fn env_values<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        if !self.domain.with_env {
            return vec![0.0; n];
        }
        let scale = self.model.env_range().unwrap_or(1.0) * log_uniform(rng, 0.25, 8.0);
        (0..n).map(|_| rng.random::<f64>() * scale).collect()
    }

    fn sample<R: Rng>(&self, rng: &mut R, layout: Layout, n: usize, metric: MetricSpec) -> Result<Configuration> {
        if layout == Layout::ProductGrid {
            let k = rng.random_range(2..=(n / 2).max(2));
            let m = (n / k).max(2);
            let sites = if self.domain.is_sphere() {
                let inner = [Layout::UniformSphere, Layout::GreatCircleRing, Layout::SphericalCap]
                    [rng.random_range(0..3)];
                self.sphere_sites(rng, inner, k)
            } else {
                self.uniform_box_sites(rng, k)
            };
            let envs = self.env_values(rng, m);
            return Configuration::product_grid(&sites, &envs, metric);
        }
        let sites = match layout {
            Layout::UniformBox => self.uniform_box_sites(rng, n),
            Layout::Lattice => self.lattice_sites(rng, n),
            other => self.sphere_sites(rng, other, n),
        };
        let envs = self.env_values(rng, sites.len());
        let samples = sites
            .into_iter()
            .zip(envs)
            .map(|(s, e)| JointSample::new(s, e))
            .collect::<Result<Vec<_>>>()?;
        Configuration::new(samples, metric)
    }
}

/// `n` samples with sites uniform in `[0, side]^d` (or uniform on the sphere)
/// and environmental values uniform in `[0, env_side]` (zero without an
/// environmental axis). Uses the domain's default metric.
pub fn random_configuration<R: Rng>(
    domain: &DomainSpec,
    n: usize,
    side: f64,
    env_side: f64,
    rng: &mut R,
) -> Result<Configuration> {
    domain.validate()?;
    let sites: Vec<Site> = match domain.base {
        Base::Euclidean { dim } => (0..n)
            .map(|_| euclid_site((0..dim).map(|_| rng.random::<f64>() * side).collect()))
            .collect(),
        Base::Sphere { dim: 3 } => (0..n).map(|_| geo_site(normal3(rng))).collect(),
        Base::Sphere { .. } => {
            return Err(CovLabError::Unrepresentable(format!(
                "sample coordinates exist on S^2 only, got {domain}"
            )))
        }
    };
    let samples = sites
        .into_iter()
        .map(|s| {
            let e = if domain.with_env {
                rng.random::<f64>() * env_side
            } else {
                0.0
            };
            JointSample::new(s, e)
        })
        .collect::<Result<Vec<_>>>()?;
    Configuration::new(samples, domain.default_metric())
}

/// Draws random configurations of `domain` and returns the first one on
/// which `model` has a Gram matrix that is not positive semi-definite.
///
/// Restart `r` uses size `3 + r mod (max_points - 2)` and cycles through the
/// layouts available for the domain; its randomness comes from
/// [`restart_rng`]`(seed, r)`, so a run is reproducible and restarts are
/// independent. `None` only means no witness was found within the budget.
pub fn counterexample_search(
    model: &CovarianceModel,
    domain: &DomainSpec,
    opts: &SearchOptions,
) -> Result<Option<(Configuration, PdCertificate)>> {
    model.validate()?;
    domain.validate()?;
    if opts.budget == 0 {
        return Err(CovLabError::InvalidInput("search budget must be at least 1".into()));
    }
    if opts.max_points < 3 {
        return Err(CovLabError::InvalidInput("max_points must be at least 3".into()));
    }
    if let Base::Sphere { dim } = domain.base {
        if dim != 3 {
            return Err(CovLabError::Unrepresentable(format!(
                "sphere searches are implemented on S^2 only, got {domain}"
            )));
        }
    }
    let metric = match model.natural_joint_metric() {
        Some(_) if domain.is_sphere() => {
            return Err(CovLabError::Incompatible(
                "modified-brc needs Euclidean sites".into(),
            ))
        }
        Some(m) => m,
        None => match domain.base {
            Base::Euclidean { .. } => MetricSpec::Euclidean,
            Base::Sphere { .. } => MetricSpec::GreatCircle {
                unit: opts.angle_unit,
            },
        },
    };
    let layouts = layouts(domain, opts.product_grid);
    let generator = Generator { model, domain };
    let sizes = opts.max_points - 2;
    for r in 0..opts.budget {
        let mut rng = restart_rng(opts.seed, r as u64);
        let n = 3 + r % sizes;
        let layout = layouts[r % layouts.len()];
        let config = generator.sample(&mut rng, layout, n, metric)?;
        let cert = certify_pd(model, &config)?;
        if cert.is_not_pd() {
            return Ok(Some((config, cert)));
        }
    }
    Ok(None)
}

/// Draws `count` Gaussian vectors `mean + L z` with `L L^T` the Gram matrix.
/// Refuses models whose Gram matrix is not certified positive definite.
pub fn cholesky_simulate(
    model: &CovarianceModel,
    config: &Configuration,
    mean: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let gram = gram_matrix(model, config)?;
    let mut cert = PdCertificate::from_matrix(&gram)?;
    if cert.verdict != Verdict::Pd {
        if cert.is_not_pd() {
            cert.witness = Some(config.clone());
        }
        return Err(CovLabError::NotPositiveDefinite(format!(
            "Gram matrix certificate is {cert}; a Cholesky factor does not exist"
        )));
    }
    let n = gram.nrows();
    let chol = Cholesky::new(gram).ok_or_else(|| {
        CovLabError::NotPositiveDefinite(format!(
            "Cholesky factorisation broke down despite certificate {cert}"
        ))
    })?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(count);
    for _ in 0..count {
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &l * z;
        draws.push(y.iter().map(|v| v + mean).collect());
    }
    Ok(draws)
}
