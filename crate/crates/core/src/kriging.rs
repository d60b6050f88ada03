//! Simple kriging, binned empirical covariances and least-squares fitting.
//!
//! The solver is a general LU decomposition rather than Cholesky, so an
//! invalid model still produces output; its negative variances are the
//! whole point of the demonstration and are reported as computed.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{CovLabError, Result};
use crate::gram::{gram_matrix, restart_rng, Configuration};
use crate::metrics::{JointSample, Site};
use crate::models::{validity_range, CovarianceModel, DomainSpec, ValidityStatus};

/// Kriging variances within this multiple of the sill from zero are
/// treated as rounding noise.
pub const VARIANCE_TOLERANCE: f64 = 1e-9;

/// Observations `z` at the samples of a configuration, with the mean used
/// by simple kriging.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldData {
    config: Configuration,
    values: Vec<f64>,
    mean: f64,
}

impl FieldData {
    /// Uses the sample mean as the known mean.
    pub fn new(config: Configuration, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(CovLabError::InvalidInput("no observations".into()));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Self::with_mean(config, values, mean)
    }

    pub fn with_mean(config: Configuration, values: Vec<f64>, mean: f64) -> Result<Self> {
        if values.len() != config.len() {
            return Err(CovLabError::DimensionMismatch {
                expected: config.len(),
                got: values.len(),
            });
        }
        if !mean.is_finite() || values.iter().any(|v| !v.is_finite()) {
            return Err(CovLabError::NonFinite);
        }
        Ok(FieldData {
            config,
            values,
            mean,
        })
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KrigingResult {
    pub predictions: Vec<f64>,
    /// Raw `C(0) - cᵀC⁻¹c`; negative under invalid models.
    pub variances: Vec<f64>,
    /// Absolute tolerance used to flag negative variances.
    pub tolerance: f64,
    pub warnings: Vec<String>,
}

impl KrigingResult {
    pub fn negative_count(&self) -> usize {
        self.variances.iter().filter(|&&v| v < -self.tolerance).count()
    }

    pub fn min_variance(&self) -> f64 {
        self.variances.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn compare_samples(a: &JointSample, b: &JointSample) -> Ordering {
    let coords = |s: &JointSample| match &s.site {
        Site::Euclidean(p) => p.coords().to_vec(),
        Site::Geo(g) => vec![g.lon(), g.lat()],
    };
    coords(a)
        .iter()
        .zip(coords(b).iter())
        .map(|(x, y)| x.total_cmp(y))
        .chain(std::iter::once(a.env.total_cmp(&b.env)))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Indices of the samples in a canonical order, so that results do not
/// depend on the order the data arrived in (ties broken by value).
fn canonical_order(data: &FieldData) -> Vec<usize> {
    let s = data.config.samples();
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&i, &j| {
        compare_samples(&s[i], &s[j]).then(data.values[i].total_cmp(&data.values[j]))
    });
    idx
}

fn duplicated_pairs(samples: &[JointSample]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            if compare_samples(&samples[i], &samples[j]).is_eq() {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Simple kriging with known mean `m`: prediction `m + cᵀC⁻¹(z - m)` and
/// variance `C(0) - cᵀC⁻¹c` at every target.
pub fn simple_krige(
    model: &CovarianceModel,
    data: &FieldData,
    targets: &[JointSample],
) -> Result<KrigingResult> {
    let metric = *data.config.metric();
    model.validate()?;
    model.check_metric(&metric)?;
    let samples = data.config.samples();
    // Targets must be of the same kind and dimension as the data.
    for t in targets {
        Configuration::new(vec![samples[0].clone(), t.clone()], metric)?;
    }

    let order = canonical_order(data);
    let sorted: Vec<JointSample> = order.iter().map(|&i| samples[i].clone()).collect();
    let z = DVector::from_iterator(order.len(), order.iter().map(|&i| data.values[i] - data.mean));
    let config = Configuration::new(sorted.clone(), metric)?;
    let c = gram_matrix(model, &config)?;
    let n = c.nrows();

    let lu = c.lu();
    let singular = || {
        let dups = duplicated_pairs(samples);
        if dups.is_empty() {
            CovLabError::InvalidInput(
                "covariance matrix is exactly singular although no samples coincide".into(),
            )
        } else {
            CovLabError::Singular(dups)
        }
    };
    if !lu.is_invertible() {
        return Err(singular());
    }
    let mut cross = DMatrix::zeros(n, targets.len());
    for (t, target) in targets.iter().enumerate() {
        for (i, s) in sorted.iter().enumerate() {
            cross[(i, t)] = model.pair_unchecked(s, target, &metric)?;
        }
    }
    let weights = lu.solve(&cross).ok_or_else(singular)?;
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(singular());
    }

    let sill = model.sill();
    let mut predictions = Vec::with_capacity(targets.len());
    let mut variances = Vec::with_capacity(targets.len());
    for t in 0..targets.len() {
        let w = weights.column(t);
        predictions.push(data.mean + w.dot(&z));
        variances.push(sill - w.dot(&cross.column(t)));
    }

    let tolerance = VARIANCE_TOLERANCE * sill;
    let mut result = KrigingResult {
        predictions,
        variances,
        tolerance,
        warnings: Vec::new(),
    };
    let negative = result.negative_count();
    if negative > 0 {
        result.warnings.push(format!(
            "{negative} of {} kriging variances are negative (minimum {:.6e}); the covariance model is not valid on this configuration",
            targets.len(),
            result.min_variance()
        ));
    }
    Ok(result)
}

/// Binned covariance estimates `mean((zᵢ - m̂)(zⱼ - m̂))` over unordered
/// pairs, `m̂` the global sample mean. Bin `k` covers lags in
/// `[edges[k], edges[k+1])`; bin 0 also holds the `i = j` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCovariance {
    pub edges: Vec<f64>,
    /// Mean pair distance per bin, `None` for empty bins.
    pub lags: Vec<Option<f64>>,
    pub estimates: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl EmpiricalCovariance {
    /// Builds estimates directly from `(lag, estimate, count)` triples, one
    /// bin per triple.
    pub fn from_points(points: &[(f64, f64, usize)]) -> Result<Self> {
        let mut edges = vec![0.0];
        for (k, &(lag, est, _)) in points.iter().enumerate() {
            if !lag.is_finite() || !est.is_finite() || lag < edges[k] {
                return Err(CovLabError::InvalidInput(
                    "lags must be finite, non-negative and increasing".into(),
                ));
            }
            let next = points.get(k + 1).map_or(lag + 1.0, |p| 0.5 * (lag + p.0));
            edges.push(next.max(lag));
        }
        Ok(EmpiricalCovariance {
            edges,
            lags: points.iter().map(|p| Some(p.0)).collect(),
            estimates: points.iter().map(|p| Some(p.1)).collect(),
            counts: points.iter().map(|p| p.2).collect(),
        })
    }

    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    /// `(lag, estimate, count)` of every non-empty bin.
    pub fn nonempty(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        (0..self.counts.len()).filter_map(move |k| match (self.lags[k], self.estimates[k]) {
            (Some(l), Some(e)) if self.counts[k] > 0 => Some((l, e, self.counts[k])),
            _ => None,
        })
    }
}

pub fn empirical_covariance(data: &FieldData, bin_width: f64, max_lag: f64) -> Result<EmpiricalCovariance> {
    if !(bin_width.is_finite() && bin_width > 0.0) || !(max_lag.is_finite() && max_lag > 0.0) {
        return Err(CovLabError::InvalidInput(
            "bin width and maximum lag must be positive".into(),
        ));
    }
    let bins = (max_lag / bin_width).ceil() as usize;
    let edges: Vec<f64> = (0..=bins).map(|k| k as f64 * bin_width).collect();
    let samples = data.config.samples();
    let metric = data.config.metric();
    let z = &data.values;
    let m = z.iter().sum::<f64>() / z.len() as f64;

    let mut sum = vec![0.0; bins];
    let mut lag_sum = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for i in 0..samples.len() {
        for j in i..samples.len() {
            let d = metric.distance(&samples[i], &samples[j])?;
            if d > max_lag {
                continue;
            }
            let k = ((d / bin_width).floor() as usize).min(bins - 1);
            sum[k] += (z[i] - m) * (z[j] - m);
            lag_sum[k] += d;
            counts[k] += 1;
        }
    }
    let per_bin = |s: &[f64]| -> Vec<Option<f64>> {
        s.iter()
            .zip(&counts)
            .map(|(v, &c)| (c > 0).then(|| v / c as f64))
            .collect()
    };
    Ok(EmpiricalCovariance {
        edges,
        lags: per_bin(&lag_sum),
        estimates: per_bin(&sum),
        counts,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop when the simplex's objective spread drops below this fraction
    /// of the best value.
    pub rel_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 20_000,
            rel_tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: CovarianceModel,
    /// Weighted sum of squared residuals at the optimum.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Free parameters of a single-family model in log scale, and the model's
/// rebuild from them. The environmental weight, when present, is held at
/// its initial value since binned lags carry no environmental separation.
struct Parametrization {
    init: CovarianceModel,
    upper_log_alpha2: Option<f64>,
}

impl Parametrization {
    fn new(init: &CovarianceModel, domain: &DomainSpec) -> Result<Self> {
        use CovarianceModel::*;
        if init.family().is_composite() {
            return Err(CovLabError::Fit(
                "only single-family models can be fitted".into(),
            ));
        }
        let verdict = validity_range(init, domain)?;
        if verdict.status != ValidityStatus::KnownValid {
            return Err(CovLabError::Fit(format!(
                "initial model lies outside the valid box on {domain}: {} ({})",
                verdict.status,
                verdict.note.as_deref().unwrap_or(&verdict.source)
            )));
        }
        let upper_log_alpha2 = match *init {
            Stable { .. } | Brc { .. } | ModifiedBrc { .. } => {
                // The largest exponent still known-valid on this domain.
                let mut upper = None;
                for a2 in [2.0, 1.0] {
                    let probe = with_alpha2(init, a2);
                    if validity_range(&probe, domain)?.status == ValidityStatus::KnownValid {
                        upper = Some(f64::ln(a2));
                        break;
                    }
                }
                upper
            }
            _ => None,
        };
        Ok(Parametrization {
            init: init.clone(),
            upper_log_alpha2,
        })
    }

    fn start(&self) -> Vec<f64> {
        let mut x = vec![self.init.sill().ln(), (1.0 / self.init.geo_range()).ln()];
        if let CovarianceModel::ModifiedBrc { alpha_g, .. } = self.init {
            x[1] = alpha_g.ln();
        }
        if self.upper_log_alpha2.is_some() {
            x.push(self.init.alpha2().expect("stable-type family").ln());
        }
        x
    }

    fn feasible(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.is_finite()) && self.upper_log_alpha2.is_none_or(|u| x[2] <= u)
    }

    fn build(&self, x: &[f64]) -> CovarianceModel {
        use CovarianceModel::*;
        let (a0, ag) = (x[0].exp(), x[1].exp());
        match self.init {
            Stable { .. } => Stable {
                alpha0: 1.0 / a0,
                alpha_g: ag,
                alpha2: x[2].exp(),
            },
            Brc { alpha_e, .. } => Brc {
                alpha0: 1.0 / a0,
                alpha_g: ag,
                alpha_e,
                alpha2: x[2].exp(),
            },
            ModifiedBrc { alpha_e, .. } => ModifiedBrc {
                alpha0: 1.0 / a0,
                alpha_g: ag,
                alpha_e,
                alpha2: x[2].exp(),
            },
            Exponential { .. } => Exponential {
                alpha0: 1.0 / a0,
                alpha_g: ag,
            },
            Triangle { .. } => Triangle {
                alpha0: 1.0 / a0,
                alpha_g: ag,
            },
            Sum(..) | Product(..) => unreachable!("rejected in Parametrization::new"),
        }
    }
}

fn with_alpha2(m: &CovarianceModel, a2: f64) -> CovarianceModel {
    use CovarianceModel::*;
    match *m {
        Stable { alpha0, alpha_g, .. } => Stable {
            alpha0,
            alpha_g,
            alpha2: a2,
        },
        Brc {
            alpha0,
            alpha_g,
            alpha_e,
            ..
        } => Brc {
            alpha0,
            alpha_g,
            alpha_e,
            alpha2: a2,
        },
        ModifiedBrc {
            alpha0,
            alpha_g,
            alpha_e,
            ..
        } => ModifiedBrc {
            alpha0,
            alpha_g,
            alpha_e,
            alpha2: a2,
        },
        ref other => other.clone(),
    }
}

struct Simplex {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
}

/// Nelder–Mead with standard coefficients. Infeasible points evaluate to
/// +inf, which keeps the simplex inside the box.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    start: &[f64],
    step: f64,
    opts: &FitOptions,
) -> (Vec<f64>, f64, usize, bool) {
    let dim = start.len();
    let mut points = vec![start.to_vec()];
    for k in 0..dim {
        let mut p = start.to_vec();
        p[k] += step;
        if !f(&p).is_finite() {
            p[k] -= 2.0 * step;
        }
        points.push(p);
    }
    let values = points.iter().map(|p| f(p)).collect();
    let mut s = Simplex { points, values };

    for it in 0..opts.max_iterations {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| s.values[a].total_cmp(&s.values[b]));
        s.points = order.iter().map(|&i| s.points[i].clone()).collect();
        s.values = order.iter().map(|&i| s.values[i]).collect();

        let (best, worst) = (s.values[0], s.values[dim]);
        let diameter = s.points[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&s.points[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if best == 0.0 || worst - best <= opts.rel_tolerance * best.abs() || diameter < 1e-13 {
            return (s.points[0].clone(), best, it, true);
        }

        let centroid: Vec<f64> = (0..dim)
            .map(|k| s.points[..dim].iter().map(|p| p[k]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&s.points[dim])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < s.values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            if fe < fr {
                s.points[dim] = expanded;
                s.values[dim] = fe;
            } else {
                s.points[dim] = reflected;
                s.values[dim] = fr;
            }
            continue;
        }
        if fr < s.values[dim - 1] {
            s.points[dim] = reflected;
            s.values[dim] = fr;
            continue;
        }
        let (contracted, fc) = if fr < worst {
            let p = along(-0.5);
            let v = f(&p);
            (p, v)
        } else {
            let p = along(0.5);
            let v = f(&p);
            (p, v)
        };
        if fc < fr.min(worst) {
            s.points[dim] = contracted;
            s.values[dim] = fc;
            continue;
        }
        for i in 1..=dim {
            let p: Vec<f64> = s.points[0]
                .iter()
                .zip(&s.points[i])
                .map(|(b, x)| b + 0.5 * (x - b))
                .collect();
            s.values[i] = f(&p);
            s.points[i] = p;
        }
    }
    let k = (0..=dim)
        .min_by(|&a, &b| s.values[a].total_cmp(&s.values[b]))
        .expect("non-empty simplex");
    (s.points[k].clone(), s.values[k], opts.max_iterations, false)
}

/// Weighted least-squares fit `min Σ nₖ (empₖ - C(lagₖ))²` over the
/// parameters of `init`'s family, starting from `init`. The exponent is
/// boxed to the range known to be valid on `domain`; scale parameters are
/// fitted in log space so they stay positive.
pub fn fit_model(
    emp: &EmpiricalCovariance,
    init: &CovarianceModel,
    domain: &DomainSpec,
    opts: &FitOptions,
) -> Result<FitResult> {
    init.validate()?;
    let bins: Vec<(f64, f64, usize)> = emp.nonempty().collect();
    if bins.len() < 3 {
        return Err(CovLabError::Fit(format!(
            "need at least 3 non-empty bins, got {}",
            bins.len()
        )));
    }
    let param = Parametrization::new(init, domain)?;
    let objective = |x: &[f64]| -> f64 {
        if !param.feasible(x) {
            return f64::INFINITY;
        }
        let model = param.build(x);
        bins.iter()
            .map(|&(lag, est, n)| {
                let r = est - model.eval_unchecked(lag, 0.0);
                n as f64 * r * r
            })
            .sum()
    };

    // Restart from the optimum with a fresh simplex until it stops moving;
    // a collapsed simplex is the usual Nelder-Mead failure mode.
    let mut x = param.start();
    let mut total = 0;
    let mut converged = false;
    let mut best = objective(&x);
    for round in 0..4 {
        let step = if round == 0 { 0.25 } else { 0.05 };
        let budget = FitOptions {
            max_iterations: opts.max_iterations.saturating_sub(total).max(1),
            ..*opts
        };
        let (nx, fx, it, conv) = nelder_mead(&objective, &x, step, &budget);
        total += it;
        let improved = best - fx > opts.rel_tolerance * best.abs();
        x = nx;
        best = best.min(fx);
        converged = conv;
        if !improved || total >= opts.max_iterations {
            break;
        }
    }
    Ok(FitResult {
        model: param.build(&x),
        objective: best,
        iterations: total,
        converged,
    })
}

/// Clustered site layout in `[0, box_size]²`: `clusters` centres drawn
/// uniformly, sites scattered around a random centre with standard
/// deviation `box_size / 15`, redrawn when they fall outside the box.
pub fn clustered_layout(n: usize, box_size: f64, clusters: usize, seed: u64) -> Result<Vec<Site>> {
    if !(box_size.is_finite() && box_size > 0.0) || clusters == 0 {
        return Err(CovLabError::InvalidInput(
            "box size must be positive and at least one cluster is needed".into(),
        ));
    }
    let mut rng = restart_rng(seed, 0);
    let centres: Vec<[f64; 2]> = (0..clusters)
        .map(|_| [rng.random::<f64>() * box_size, rng.random::<f64>() * box_size])
        .collect();
    let spread = Normal::new(0.0, box_size / 15.0).expect("positive spread");
    let mut sites = Vec::with_capacity(n);
    while sites.len() < n {
        let c = centres[rng.random_range(0..clusters)];
        let p = [c[0] + rng.sample(spread), c[1] + rng.sample(spread)];
        if p.iter().all(|v| (0.0..=box_size).contains(v)) {
            sites.push(Site::Euclidean(crate::metrics::EuclideanPoint::new(p.to_vec())?));
        }
    }
    Ok(sites)
}

/// `nx x ny` lattice over `[0, box_size]²` (inclusive), row-major in `y`.
pub fn regular_grid(nx: usize, ny: usize, box_size: f64, env: f64) -> Result<Vec<JointSample>> {
    if nx < 2 || ny < 2 {
        return Err(CovLabError::InvalidInput("grid needs at least 2 x 2 nodes".into()));
    }
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = box_size * i as f64 / (nx - 1) as f64;
            let y = box_size * j as f64 / (ny - 1) as f64;
            out.push(JointSample::euclidean(vec![x, y], env)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gram::cholesky_simulate;
    use crate::metrics::MetricSpec;
    use proptest::prelude::*;
    use rand::Rng;

    fn plane(points: &[[f64; 2]]) -> Configuration {
        let s = points
            .iter()
            .map(|p| JointSample::euclidean(p.to_vec(), 0.0).unwrap())
            .collect();
        Configuration::new(s, MetricSpec::Euclidean).unwrap()
    }

    fn random_data(n: usize, seed: u64) -> FieldData {
        let mut rng = restart_rng(seed, 1);
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0])
            .collect();
        let z = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        FieldData::new(plane(&pts), z).unwrap()
    }

    fn exp_model() -> CovarianceModel {
        CovarianceModel::exponential(1.0, 0.5).unwrap()
    }

    #[test]
    fn interpolates_data_sites() {
        let data = random_data(30, 3);
        let r = simple_krige(&exp_model(), &data, data.config().samples()).unwrap();
        for (p, z) in r.predictions.iter().zip(data.values()) {
            assert!((p - z).abs() <= 1e-8 * z.abs().max(1.0), "{p} vs {z}");
        }
        assert!(r.variances.iter().all(|v| v.abs() <= r.tolerance), "{:?}", r.variances);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn far_targets_revert_to_mean_and_sill() {
        let data = random_data(20, 4);
        let model = CovarianceModel::exponential(2.0, 0.5).unwrap();
        let far = JointSample::euclidean(vec![5.0 + 50.0 * model.geo_range() * 10.0, 5.0], 0.0).unwrap();
        let r = simple_krige(&model, &data, &[far]).unwrap();
        assert!((r.predictions[0] - data.mean()).abs() < 1e-6);
        assert!((r.variances[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn duplicated_samples_are_named() {
        let cfg = plane(&[[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]);
        let data = FieldData::new(cfg, vec![1.0, 2.0, 3.0]).unwrap();
        let t = JointSample::euclidean(vec![0.5, 0.5], 0.0).unwrap();
        match simple_krige(&exp_model(), &data, &[t]) {
            Err(CovLabError::Singular(pairs)) => assert_eq!(pairs, vec![(0, 2)]),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn target_metric_must_match() {
        let data = random_data(5, 1);
        let t = JointSample::geo(10.0, 10.0, 0.0).unwrap();
        assert!(simple_krige(&exp_model(), &data, &[t]).is_err());
    }

    #[test]
    fn triangle_model_gives_negative_variances() {
        let sites = clustered_layout(100, 1000.0, 8, 7).unwrap();
        let samples: Vec<JointSample> = sites
            .into_iter()
            .map(|s| JointSample::new(s, 0.0).unwrap())
            .collect();
        let cfg = Configuration::new(samples, MetricSpec::Euclidean).unwrap();
        let data = FieldData::with_mean(cfg, vec![0.0; 100], 0.0).unwrap();
        let grid = regular_grid(50, 50, 1000.0, 0.0).unwrap();
        let tri = CovarianceModel::triangle(1.0, 1.0 / 300.0).unwrap();
        let r = simple_krige(&tri, &data, &grid).unwrap();
        assert!(r.negative_count() > 0);
        assert_eq!(r.warnings.len(), 1);
        let exp = CovarianceModel::exponential(1.0, 1.0 / 300.0).unwrap();
        let r = simple_krige(&exp, &data, &grid).unwrap();
        assert_eq!(r.negative_count(), 0);
        assert!(r.variances.iter().all(|&v| v <= 1.0 + r.tolerance));
    }

    #[test]
    fn empirical_examples() {
        let cfg = plane(&[[0.0, 0.0], [1.0, 0.0]]);
        let emp = empirical_covariance(&FieldData::new(cfg.clone(), vec![1.0, -1.0]).unwrap(), 0.5, 2.0)
            .unwrap();
        assert_eq!(emp.counts, vec![2, 0, 1, 0]);
        assert_eq!(emp.estimates[2], Some(-1.0));
        assert_eq!(emp.estimates[0], Some(1.0));
        assert_eq!(emp.estimates[1], None);

        let constant = empirical_covariance(&FieldData::new(cfg, vec![3.0, 3.0]).unwrap(), 0.5, 2.0)
            .unwrap();
        assert!(constant.nonempty().all(|(_, e, _)| e == 0.0));
        assert!(empirical_covariance(&random_data(3, 0), 0.0, 1.0).is_err());
    }

    #[test]
    fn empirical_tracks_model_on_simulated_field() {
        // 20 x 20 grid with unit spacing, exponential with range 1.
        let pts: Vec<[f64; 2]> = (0..400).map(|k| [(k % 20) as f64, (k / 20) as f64]).collect();
        let cfg = plane(&pts);
        let model = CovarianceModel::exponential(1.0, 1.0).unwrap();
        let draws = cholesky_simulate(&model, &cfg, 0.0, 40, 5).unwrap();
        // Average the binned estimates over replicates; compare with the
        // model within 3 standard errors of that average.
        let bins = 4;
        let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); bins];
        let mut lags = vec![0.0; bins];
        for z in draws {
            let emp = empirical_covariance(&FieldData::new(cfg.clone(), z).unwrap(), 1.0, 4.0).unwrap();
            for k in 0..bins {
                per_bin[k].push(emp.estimates[k].unwrap());
                lags[k] = emp.lags[k].unwrap();
            }
        }
        for k in 0..bins {
            let v = &per_bin[k];
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let se = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
            // The global mean removes about C-bar ~ sum(C)/N^2 from every bin.
            let truth = model.evaluate(lags[k], 0.0).unwrap();
            assert!((mean - truth).abs() < 3.0 * se + 0.02, "bin {k}: {mean} vs {truth} (se {se})");
        }
    }

    #[test]
    fn fit_recovers_exact_exponential() {
        let truth = CovarianceModel::exponential(1.0, 0.01).unwrap();
        let pts: Vec<(f64, f64, usize)> = (0..12)
            .map(|k| {
                let lag = 25.0 * (k as f64 + 0.5);
                (lag, truth.evaluate(lag, 0.0).unwrap(), 10 + k)
            })
            .collect();
        let emp = EmpiricalCovariance::from_points(&pts).unwrap();
        let init = CovarianceModel::exponential(0.5, 0.05).unwrap();
        let fit = fit_model(&emp, &init, &DomainSpec::euclidean(2), &FitOptions::default()).unwrap();
        match fit.model {
            CovarianceModel::Exponential { alpha0, alpha_g } => {
                assert!((alpha_g - 0.01).abs() < 1e-6, "{alpha_g}");
                assert!((alpha0 - 1.0).abs() < 1e-6, "{alpha0}");
            }
            ref m => panic!("family changed: {m:?}"),
        }
    }

    #[test]
    fn fit_triangle_slope() {
        // C(h) = 2 - 0.4 h, i.e. sill 2 and slope 0.4 = alpha_g / alpha0.
        let mut rng = restart_rng(1, 0);
        let pts: Vec<(f64, f64, usize)> = (0..8)
            .map(|k| {
                let lag = 0.5 * k as f64;
                (lag, 2.0 - 0.4 * lag + rng.random_range(-0.01..0.01), 50)
            })
            .collect();
        let emp = EmpiricalCovariance::from_points(&pts).unwrap();
        let init = CovarianceModel::triangle(1.0, 0.5).unwrap();
        let fit = fit_model(&emp, &init, &DomainSpec::euclidean(1), &FitOptions::default()).unwrap();
        let CovarianceModel::Triangle { alpha0, alpha_g } = fit.model else {
            panic!("family changed")
        };
        let slope = alpha_g / alpha0;
        assert!((slope - 0.4).abs() < 0.02, "slope {slope}");
    }

    #[test]
    fn fit_respects_validity_box() {
        // Gaussian-shaped data on the sphere: the exponent must stay <= 1.
        let truth = CovarianceModel::stable(1.0, 1.0, 2.0).unwrap();
        let pts: Vec<(f64, f64, usize)> = (1..10)
            .map(|k| {
                let lag = 0.1 * k as f64;
                (lag, truth.evaluate(lag, 0.0).unwrap(), 10)
            })
            .collect();
        let emp = EmpiricalCovariance::from_points(&pts).unwrap();
        let init = CovarianceModel::stable(1.0, 1.0, 0.5).unwrap();
        let fit = fit_model(&emp, &init, &DomainSpec::sphere(), &FitOptions::default()).unwrap();
        assert!(fit.model.alpha2().unwrap() <= 1.0);
        let fit = fit_model(&emp, &init, &DomainSpec::euclidean(2), &FitOptions::default()).unwrap();
        assert!((fit.model.alpha2().unwrap() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn fit_errors() {
        let emp = EmpiricalCovariance::from_points(&[(0.0, 1.0, 1), (1.0, 0.5, 1)]).unwrap();
        let init = exp_model();
        assert!(matches!(
            fit_model(&emp, &init, &DomainSpec::euclidean(2), &FitOptions::default()),
            Err(CovLabError::Fit(_))
        ));
        let emp = EmpiricalCovariance::from_points(&[(0.0, 1.0, 1), (1.0, 0.5, 1), (2.0, 0.2, 1)])
            .unwrap();
        let bad = CovarianceModel::stable(1.0, 1.0, 1.5).unwrap();
        assert!(fit_model(&emp, &bad, &DomainSpec::sphere(), &FitOptions::default()).is_err());
        let tri = CovarianceModel::triangle(1.0, 1.0).unwrap();
        assert!(fit_model(&emp, &tri, &DomainSpec::euclidean(2), &FitOptions::default()).is_err());
    }

    #[test]
    fn layout_is_deterministic_and_boxed() {
        let a = clustered_layout(50, 1000.0, 5, 9).unwrap();
        assert_eq!(a, clustered_layout(50, 1000.0, 5, 9).unwrap());
        for s in &a {
            let Site::Euclidean(p) = s else { panic!() };
            assert!(p.coords().iter().all(|v| (0.0..=1000.0).contains(v)));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn permutation_invariance(seed in 0u64..1000, rot in 1usize..19) {
            let data = random_data(20, seed);
            let mut samples = data.config().samples().to_vec();
            let mut values = data.values().to_vec();
            samples.rotate_left(rot);
            values.rotate_left(rot);
            samples.swap(0, 5);
            values.swap(0, 5);
            let permuted = FieldData::with_mean(
                Configuration::new(samples, MetricSpec::Euclidean).unwrap(),
                values,
                data.mean(),
            ).unwrap();
            let targets = regular_grid(5, 5, 10.0, 0.0).unwrap();
            let a = simple_krige(&exp_model(), &data, &targets).unwrap();
            let b = simple_krige(&exp_model(), &permuted, &targets).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn valid_model_variances_in_range(seed in 0u64..1000) {
            let data = random_data(25, seed);
            let targets = regular_grid(10, 10, 10.0, 0.0).unwrap();
            let r = simple_krige(&exp_model(), &data, &targets).unwrap();
            prop_assert!(r.variances.iter().all(|&v| v >= -r.tolerance && v <= 1.0 + r.tolerance));
        }
    }
}
