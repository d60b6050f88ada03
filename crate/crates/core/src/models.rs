//! Parametric covariance families and their parameter ranges of validity.
//!
//! Every single family has a sill `1/alpha0` and a geographic scale `alpha_g`;
//! the BRC and modified-BRC families additionally weight the environmental lag
//! with `alpha_e`. Sums and products glue one geographic-only child to one
//! environmental-only child: `C(h, u) = C_G(h) + C_E(u)` or `C_G(h) * C_E(u)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CovLabError, Result};
use crate::metrics::{env_distance, JointSample, MetricSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Stable,
    Brc,
    ModifiedBrc,
    Exponential,
    Triangle,
    Sum,
    Product,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Stable => "stable",
            Family::Brc => "brc",
            Family::ModifiedBrc => "modified-brc",
            Family::Exponential => "exponential",
            Family::Triangle => "triangle",
            Family::Sum => "sum",
            Family::Product => "product",
        }
    }

    pub fn is_composite(self) -> bool {
        matches!(self, Family::Sum | Family::Product)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = CovLabError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "stable" => Family::Stable,
            "brc" => Family::Brc,
            "modified-brc" => Family::ModifiedBrc,
            "exponential" => Family::Exponential,
            "triangle" => Family::Triangle,
            "sum" => Family::Sum,
            "product" => Family::Product,
            other => {
                return Err(CovLabError::InvalidInput(format!(
                    "unknown model family `{other}`"
                )))
            }
        })
    }
}

/// A covariance model. Construct through the checked constructors; the JSON
/// form `{family, alpha0, alphaG, alphaE, alpha2, children}` is validated on
/// deserialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelJson", into = "ModelJson")]
pub enum CovarianceModel {
    Stable {
        alpha0: f64,
        alpha_g: f64,
        alpha2: f64,
    },
    Brc {
        alpha0: f64,
        alpha_g: f64,
        alpha_e: f64,
        alpha2: f64,
    },
    ModifiedBrc {
        alpha0: f64,
        alpha_g: f64,
        alpha_e: f64,
        alpha2: f64,
    },
    Exponential {
        alpha0: f64,
        alpha_g: f64,
    },
    Triangle {
        alpha0: f64,
        alpha_g: f64,
    },
    Sum(Box<CovarianceModel>, Box<CovarianceModel>),
    Product(Box<CovarianceModel>, Box<CovarianceModel>),
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CovLabError::InvalidParameter {
            name,
            value: v,
            reason: "must be finite and strictly positive",
        })
    }
}

fn non_negative(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(CovLabError::InvalidParameter {
            name,
            value: v,
            reason: "must be finite and non-negative",
        })
    }
}

impl CovarianceModel {
    pub fn stable(alpha0: f64, alpha_g: f64, alpha2: f64) -> Result<Self> {
        let m = CovarianceModel::Stable {
            alpha0,
            alpha_g,
            alpha2,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn brc(alpha0: f64, alpha_g: f64, alpha_e: f64, alpha2: f64) -> Result<Self> {
        let m = CovarianceModel::Brc {
            alpha0,
            alpha_g,
            alpha_e,
            alpha2,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn modified_brc(alpha0: f64, alpha_g: f64, alpha_e: f64, alpha2: f64) -> Result<Self> {
        let m = CovarianceModel::ModifiedBrc {
            alpha0,
            alpha_g,
            alpha_e,
            alpha2,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn exponential(alpha0: f64, alpha_g: f64) -> Result<Self> {
        let m = CovarianceModel::Exponential { alpha0, alpha_g };
        m.validate()?;
        Ok(m)
    }

    pub fn triangle(alpha0: f64, alpha_g: f64) -> Result<Self> {
        let m = CovarianceModel::Triangle { alpha0, alpha_g };
        m.validate()?;
        Ok(m)
    }

    pub fn sum(geo: CovarianceModel, env: CovarianceModel) -> Result<Self> {
        let m = CovarianceModel::Sum(Box::new(geo), Box::new(env));
        m.validate()?;
        Ok(m)
    }

    pub fn product(geo: CovarianceModel, env: CovarianceModel) -> Result<Self> {
        let m = CovarianceModel::Product(Box::new(geo), Box::new(env));
        m.validate()?;
        Ok(m)
    }

    pub fn family(&self) -> Family {
        match self {
            CovarianceModel::Stable { .. } => Family::Stable,
            CovarianceModel::Brc { .. } => Family::Brc,
            CovarianceModel::ModifiedBrc { .. } => Family::ModifiedBrc,
            CovarianceModel::Exponential { .. } => Family::Exponential,
            CovarianceModel::Triangle { .. } => Family::Triangle,
            CovarianceModel::Sum(..) => Family::Sum,
            CovarianceModel::Product(..) => Family::Product,
        }
    }

    pub fn validate(&self) -> Result<()> {
        use CovarianceModel::*;
        match *self {
            Stable {
                alpha0,
                alpha_g,
                alpha2,
            } => {
                positive("alpha0", alpha0)?;
                positive("alpha_g", alpha_g)?;
                positive("alpha2", alpha2)
            }
            Brc {
                alpha0,
                alpha_g,
                alpha_e,
                alpha2,
            }
            | ModifiedBrc {
                alpha0,
                alpha_g,
                alpha_e,
                alpha2,
            } => {
                positive("alpha0", alpha0)?;
                positive("alpha_g", alpha_g)?;
                non_negative("alpha_e", alpha_e)?;
                positive("alpha2", alpha2)
            }
            Exponential { alpha0, alpha_g } | Triangle { alpha0, alpha_g } => {
                positive("alpha0", alpha0)?;
                positive("alpha_g", alpha_g)
            }
            Sum(ref g, ref e) | Product(ref g, ref e) => {
                for child in [g, e] {
                    if !matches!(
                        child.family(),
                        Family::Stable | Family::Exponential | Family::Triangle
                    ) {
                        return Err(CovLabError::InvalidInput(format!(
                            "composite children must be stable, exponential or triangle, got {}",
                            child.family()
                        )));
                    }
                    child.validate()?;
                }
                Ok(())
            }
        }
    }

    /// `1/alpha0` for single families; `C(0, 0)` for composites.
    pub fn sill(&self) -> f64 {
        use CovarianceModel::*;
        match self {
            Stable { alpha0, .. }
            | Brc { alpha0, .. }
            | ModifiedBrc { alpha0, .. }
            | Exponential { alpha0, .. }
            | Triangle { alpha0, .. } => 1.0 / alpha0,
            Sum(g, e) => g.sill() + e.sill(),
            Product(g, e) => g.sill() * e.sill(),
        }
    }

    /// Covariance at geographic lag `h` and environmental lag `u`.
    pub fn evaluate(&self, h: f64, u: f64) -> Result<f64> {
        if !h.is_finite() || h < 0.0 {
            return Err(CovLabError::InvalidInput(format!(
                "geographic lag must be finite and non-negative, got {h}"
            )));
        }
        if !u.is_finite() || u < 0.0 {
            return Err(CovLabError::InvalidInput(format!(
                "environmental lag must be finite and non-negative, got {u}"
            )));
        }
        Ok(self.eval_unchecked(h, u))
    }

    pub(crate) fn eval_unchecked(&self, h: f64, u: f64) -> f64 {
        use CovarianceModel::*;
        match *self {
            Stable {
                alpha0,
                alpha_g,
                alpha2,
            } => (-(alpha_g * h).powf(alpha2)).exp() / alpha0,
            Brc {
                alpha0,
                alpha_g,
                alpha_e,
                alpha2,
            } => (-(alpha_g * h + alpha_e * u).powf(alpha2)).exp() / alpha0,
            ModifiedBrc {
                alpha0,
                alpha_g,
                alpha_e,
                alpha2,
            } => {
                let d = (alpha_g * h * h + alpha_e * u * u).sqrt();
                (-d.powf(alpha2)).exp() / alpha0
            }
            Exponential { alpha0, alpha_g } => (-alpha_g * h).exp() / alpha0,
            Triangle { alpha0, alpha_g } => (1.0 - alpha_g * h).max(0.0) / alpha0,
            Sum(ref g, ref e) => g.eval_unchecked(h, 0.0) + e.eval_unchecked(u, 0.0),
            Product(ref g, ref e) => g.eval_unchecked(h, 0.0) * e.eval_unchecked(u, 0.0),
        }
    }

    /// Covariance between two samples. The modified BRC model is evaluated on
    /// the joint re-scaled distance and therefore needs that metric; every
    /// other family takes `h` from the site metric and `u = |e - e'|`.
    pub fn evaluate_pair(&self, a: &JointSample, b: &JointSample, metric: &MetricSpec) -> Result<f64> {
        self.check_metric(metric)?;
        self.pair_unchecked(a, b, metric)
    }

    pub(crate) fn pair_unchecked(
        &self,
        a: &JointSample,
        b: &JointSample,
        metric: &MetricSpec,
    ) -> Result<f64> {
        match *self {
            CovarianceModel::ModifiedBrc { alpha0, alpha2, .. } => {
                let d = metric.distance(a, b)?;
                Ok((-d.powf(alpha2)).exp() / alpha0)
            }
            _ => {
                let h = metric.site_distance(&a.site, &b.site)?;
                Ok(self.eval_unchecked(h, env_distance(a, b)))
            }
        }
    }

    pub fn check_metric(&self, metric: &MetricSpec) -> Result<()> {
        metric.validate()?;
        let joint = matches!(metric, MetricSpec::JointRescaled { .. });
        match (self.family(), joint) {
            (Family::ModifiedBrc, false) => Err(CovLabError::Incompatible(
                "the modified BRC model needs the joint re-scaled metric".into(),
            )),
            (f, true) if f != Family::ModifiedBrc => Err(CovLabError::Incompatible(format!(
                "the joint re-scaled metric is only meaningful for modified-brc, not {f}"
            ))),
            _ => Ok(()),
        }
    }

    /// The joint metric carrying this model's own weights, for modified BRC.
    pub fn natural_joint_metric(&self) -> Option<MetricSpec> {
        match *self {
            CovarianceModel::ModifiedBrc {
                alpha_g, alpha_e, ..
            } => Some(MetricSpec::JointRescaled { alpha_g, alpha_e }),
            _ => None,
        }
    }

    /// Geographic distance over which the correlation decays by about `1/e`.
    pub fn geo_range(&self) -> f64 {
        use CovarianceModel::*;
        match *self {
            Stable { alpha_g, .. }
            | Brc { alpha_g, .. }
            | Exponential { alpha_g, .. }
            | Triangle { alpha_g, .. } => 1.0 / alpha_g,
            ModifiedBrc { alpha_g, .. } => 1.0 / alpha_g.sqrt(),
            Sum(ref g, _) | Product(ref g, _) => g.geo_range(),
        }
    }

    /// Environmental counterpart of [`CovarianceModel::geo_range`]; `None` when
    /// the model ignores the environment.
    pub fn env_range(&self) -> Option<f64> {
        use CovarianceModel::*;
        match *self {
            Brc { alpha_e, .. } if alpha_e > 0.0 => Some(1.0 / alpha_e),
            ModifiedBrc { alpha_e, .. } if alpha_e > 0.0 => Some(1.0 / alpha_e.sqrt()),
            Sum(_, ref e) | Product(_, ref e) => Some(e.geo_range()),
            _ => None,
        }
    }

    pub fn alpha2(&self) -> Option<f64> {
        use CovarianceModel::*;
        match *self {
            Stable { alpha2, .. } | Brc { alpha2, .. } | ModifiedBrc { alpha2, .. } => {
                Some(alpha2)
            }
            Exponential { .. } => Some(1.0),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ModelJson {
    family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "alphaG")]
    alpha_g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "alphaE")]
    alpha_e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha2: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<ModelJson>,
}

fn required(v: Option<f64>, name: &str, family: Family) -> Result<f64> {
    v.ok_or_else(|| CovLabError::InvalidInput(format!("{family} model needs `{name}`")))
}

impl TryFrom<ModelJson> for CovarianceModel {
    type Error = CovLabError;

    fn try_from(j: ModelJson) -> Result<Self> {
        let f = j.family;
        if !f.is_composite() && !j.children.is_empty() {
            return Err(CovLabError::InvalidInput(format!(
                "{f} model takes no children"
            )));
        }
        let m = match f {
            Family::Stable | Family::Exponential | Family::Triangle => {
                if j.alpha_e.is_some_and(|e| e != 0.0) {
                    return Err(CovLabError::InvalidInput(format!(
                        "{f} model has no environmental weight"
                    )));
                }
                let alpha0 = required(j.alpha0, "alpha0", f)?;
                let alpha_g = required(j.alpha_g, "alphaG", f)?;
                match f {
                    Family::Stable => CovarianceModel::Stable {
                        alpha0,
                        alpha_g,
                        alpha2: required(j.alpha2, "alpha2", f)?,
                    },
                    Family::Exponential => {
                        if j.alpha2.is_some_and(|a| a != 1.0) {
                            return Err(CovLabError::InvalidInput(
                                "exponential model has alpha2 = 1".into(),
                            ));
                        }
                        CovarianceModel::Exponential { alpha0, alpha_g }
                    }
                    _ => {
                        if j.alpha2.is_some() {
                            return Err(CovLabError::InvalidInput(
                                "triangle model takes no alpha2".into(),
                            ));
                        }
                        CovarianceModel::Triangle { alpha0, alpha_g }
                    }
                }
            }
            Family::Brc | Family::ModifiedBrc => {
                let alpha0 = required(j.alpha0, "alpha0", f)?;
                let alpha_g = required(j.alpha_g, "alphaG", f)?;
                let alpha_e = j.alpha_e.unwrap_or(0.0);
                let alpha2 = required(j.alpha2, "alpha2", f)?;
                if f == Family::Brc {
                    CovarianceModel::Brc {
                        alpha0,
                        alpha_g,
                        alpha_e,
                        alpha2,
                    }
                } else {
                    CovarianceModel::ModifiedBrc {
                        alpha0,
                        alpha_g,
                        alpha_e,
                        alpha2,
                    }
                }
            }
            Family::Sum | Family::Product => {
                let [g, e]: [ModelJson; 2] = j.children.try_into().map_err(|_| {
                    CovLabError::InvalidInput(format!(
                        "{f} model needs exactly two children (geographic, environmental)"
                    ))
                })?;
                let g = Box::new(CovarianceModel::try_from(g)?);
                let e = Box::new(CovarianceModel::try_from(e)?);
                if f == Family::Sum {
                    CovarianceModel::Sum(g, e)
                } else {
                    CovarianceModel::Product(g, e)
                }
            }
        };
        m.validate()?;
        Ok(m)
    }
}

impl From<CovarianceModel> for ModelJson {
    fn from(m: CovarianceModel) -> Self {
        let family = m.family();
        let mut j = ModelJson {
            family,
            alpha0: None,
            alpha_g: None,
            alpha_e: None,
            alpha2: None,
            children: Vec::new(),
        };
        match m {
            CovarianceModel::Stable {
                alpha0,
                alpha_g,
                alpha2,
            } => {
                j.alpha0 = Some(alpha0);
                j.alpha_g = Some(alpha_g);
                j.alpha2 = Some(alpha2);
            }
            CovarianceModel::Brc {
                alpha0,
                alpha_g,
                alpha_e,
                alpha2,
            }
            | CovarianceModel::ModifiedBrc {
                alpha0,
                alpha_g,
                alpha_e,
                alpha2,
            } => {
                j.alpha0 = Some(alpha0);
                j.alpha_g = Some(alpha_g);
                j.alpha_e = Some(alpha_e);
                j.alpha2 = Some(alpha2);
            }
            CovarianceModel::Exponential { alpha0, alpha_g } => {
                j.alpha0 = Some(alpha0);
                j.alpha_g = Some(alpha_g);
                j.alpha2 = Some(1.0);
            }
            CovarianceModel::Triangle { alpha0, alpha_g } => {
                j.alpha0 = Some(alpha0);
                j.alpha_g = Some(alpha_g);
            }
            CovarianceModel::Sum(g, e) | CovarianceModel::Product(g, e) => {
                j.children = vec![(*g).into(), (*e).into()];
            }
        }
        j
    }
}

/// Underlying metric space of a domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Base {
    /// ℝᵈ.
    Euclidean { dim: usize },
    /// The unit sphere of ℝᵈ. Only `dim = 3` has sample coordinates (lon/lat).
    Sphere { dim: usize },
}

/// The space a model lives on: ℝᵈ or 𝕊ᵈ⁻¹, optionally crossed with ℝ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub base: Base,
    pub with_env: bool,
}

impl DomainSpec {
    pub fn euclidean(dim: usize) -> Self {
        Self {
            base: Base::Euclidean { dim },
            with_env: false,
        }
    }

    pub fn euclidean_env(dim: usize) -> Self {
        Self {
            base: Base::Euclidean { dim },
            with_env: true,
        }
    }

    /// The 2-sphere 𝕊² ⊂ ℝ³.
    pub fn sphere() -> Self {
        Self {
            base: Base::Sphere { dim: 3 },
            with_env: false,
        }
    }

    pub fn sphere_env() -> Self {
        Self {
            base: Base::Sphere { dim: 3 },
            with_env: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = match self.base {
            Base::Euclidean { dim } => dim,
            Base::Sphere { dim } => dim.saturating_sub(1),
        };
        if dim == 0 {
            return Err(CovLabError::InvalidInput(format!(
                "degenerate domain {self}"
            )));
        }
        Ok(())
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self.base, Base::Sphere { .. })
    }

    pub fn without_env(&self) -> Self {
        Self {
            with_env: false,
            ..*self
        }
    }

    /// The metric under which samples of this domain are compared by default.
    pub fn default_metric(&self) -> MetricSpec {
        match self.base {
            Base::Euclidean { .. } => MetricSpec::Euclidean,
            Base::Sphere { .. } => MetricSpec::great_circle(),
        }
    }
}

impl fmt::Display for DomainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.base {
            Base::Euclidean { dim } => write!(f, "R^{dim}")?,
            Base::Sphere { dim } => write!(f, "S^{}", dim.saturating_sub(1))?,
        }
        if self.with_env {
            f.write_str(" x R")?;
        }
        Ok(())
    }
}

/// Parses `euclidean[:d]`, `euclidean-env[:d]`, `sphere`, `sphere-env`
/// (`d` defaults to 2).
impl FromStr for DomainSpec {
    type Err = CovLabError;

    fn from_str(s: &str) -> Result<Self> {
        let (head, dim) = match s.split_once(':') {
            Some((h, d)) => {
                let d: usize = d
                    .parse()
                    .map_err(|_| CovLabError::InvalidInput(format!("bad dimension in `{s}`")))?;
                (h, Some(d))
            }
            None => (s, None),
        };
        let dom = match head {
            "euclidean" => DomainSpec::euclidean(dim.unwrap_or(2)),
            "euclidean-env" => DomainSpec::euclidean_env(dim.unwrap_or(2)),
            "sphere" => DomainSpec {
                base: Base::Sphere {
                    dim: dim.unwrap_or(3),
                },
                with_env: false,
            },
            "sphere-env" => DomainSpec {
                base: Base::Sphere {
                    dim: dim.unwrap_or(3),
                },
                with_env: true,
            },
            _ => {
                return Err(CovLabError::InvalidInput(format!(
                    "unknown domain `{s}` (expected euclidean[:d], euclidean-env[:d], sphere, sphere-env)"
                )))
            }
        };
        dom.validate()?;
        Ok(dom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidityStatus {
    KnownValid,
    KnownInvalid,
    Unknown,
}

impl fmt::Display for ValidityStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValidityStatus::KnownValid => "known-valid",
            ValidityStatus::KnownInvalid => "known-invalid",
            ValidityStatus::Unknown => "unknown",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityVerdict {
    pub status: ValidityStatus,
    /// Row of the validity table the verdict comes from.
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ValidityVerdict {
    fn new(status: ValidityStatus, source: impl Into<String>) -> Self {
        Self {
            status,
            source: source.into(),
            note: None,
        }
    }

    fn in_range(ok: bool, source: impl Into<String>) -> Self {
        let status = if ok {
            ValidityStatus::KnownValid
        } else {
            ValidityStatus::KnownInvalid
        };
        Self::new(status, source)
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

const SPHERE_BRC_CONJECTURE: &str =
    "conjectured valid iff alpha2 in (0,1]; no proof is known for sphere x R";
const SPHERE_BRC_GAP: &str =
    "between the conjectured bound 1 and the smallest refuted exponent 1.001";

fn stable_range(alpha2: f64, base: Base) -> ValidityVerdict {
    match base {
        Base::Euclidean { .. } => {
            ValidityVerdict::in_range(alpha2 <= 2.0, "stable: alpha in (0,2] on R^d")
        }
        Base::Sphere { .. } => {
            ValidityVerdict::in_range(alpha2 <= 1.0, "stable: alpha in (0,1] on S^(d-1)")
        }
    }
}

/// Looks up the parameter range of validity of `model` on `domain`.
pub fn validity_range(model: &CovarianceModel, domain: &DomainSpec) -> Result<ValidityVerdict> {
    model.validate()?;
    domain.validate()?;
    use CovarianceModel::*;
    let verdict = match *model {
        Stable { alpha2, .. } => stable_range(alpha2, domain.base),
        Exponential { .. } => stable_range(1.0, domain.base),
        Brc {
            alpha_e, alpha2, ..
        } if alpha_e == 0.0 || !domain.with_env => {
            stable_range(alpha2, domain.base).with_note(
                "BRC without an environmental lag reduces to the stable model on the base space",
            )
        }
        Brc { alpha2, .. } => match domain.base {
            Base::Euclidean { .. } => {
                ValidityVerdict::in_range(alpha2 <= 1.0, "BRC: alpha in (0,1] on R^d x R")
            }
            Base::Sphere { .. } => {
                let source = "BRC: unknown on S^(d-1) x R";
                if alpha2 <= 1.0 {
                    ValidityVerdict::new(ValidityStatus::Unknown, source)
                        .with_note(SPHERE_BRC_CONJECTURE)
                } else if alpha2 < 1.001 {
                    ValidityVerdict::new(ValidityStatus::Unknown, source).with_note(SPHERE_BRC_GAP)
                } else {
                    ValidityVerdict::new(ValidityStatus::KnownInvalid, source).with_note(
                        "numerical counterexamples refute every alpha2 >= 1.001 on sphere x R",
                    )
                }
            }
        },
        ModifiedBrc { alpha2, .. } => match domain.base {
            Base::Euclidean { .. } => ValidityVerdict::in_range(
                alpha2 <= 2.0,
                "modified BRC: alpha in (0,2] on R^d x R",
            ),
            Base::Sphere { .. } => {
                return Err(CovLabError::Unrepresentable(
                    "the joint re-scaled metric has no geodesic analogue".into(),
                ))
            }
        },
        Triangle { .. } => match domain.base {
            Base::Euclidean { dim } => {
                ValidityVerdict::in_range(dim == 1, "triangle: valid on R^1 only")
            }
            Base::Sphere { .. } => {
                return Err(CovLabError::Unrepresentable(
                    "the triangle model is only tabulated on Euclidean spaces".into(),
                ))
            }
        },
        Sum(ref g, ref e) | Product(ref g, ref e) => {
            if !domain.with_env {
                return Err(CovLabError::Unrepresentable(format!(
                    "{} models need an environmental axis, domain is {domain}",
                    model.family()
                )));
            }
            let vg = validity_range(g, &domain.without_env())?;
            let ve = validity_range(e, &DomainSpec::euclidean(1))?;
            let status = match (vg.status, ve.status) {
                (ValidityStatus::KnownValid, ValidityStatus::KnownValid) => {
                    ValidityStatus::KnownValid
                }
                (ValidityStatus::KnownInvalid, _) | (_, ValidityStatus::KnownInvalid) => {
                    ValidityStatus::KnownInvalid
                }
                _ => ValidityStatus::Unknown,
            };
            let base = if domain.is_sphere() {
                "(0,1] x (0,2] on S^(d-1) x R"
            } else {
                "(0,2] x (0,2] on R^d x R"
            };
            ValidityVerdict::new(
                status,
                format!("{} of stable models: {base}", model.family()),
            )
            .with_note(format!(
                "geographic child: {} ({}); environmental child: {} ({})",
                vg.status, vg.source, ve.status, ve.source
            ))
        }
    };
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const E_INV: f64 = 0.367_879_441_171_442_33;

    #[test]
    fn evaluate_examples() {
        let brc = CovarianceModel::brc(1.0, 0.3, 0.7, 0.6).unwrap();
        assert_eq!(brc.evaluate(0.0, 0.0).unwrap(), 1.0);
        let st = CovarianceModel::stable(1.0, 1.0, 1.0).unwrap();
        assert!((st.evaluate(1.0, 0.0).unwrap() - E_INV).abs() < 1e-15);
        let fig1 = CovarianceModel::brc(1.0, 1.0 / 20.0, 2.0, 0.9).unwrap();
        assert!((fig1.evaluate(20.0, 0.0).unwrap() - E_INV).abs() < 1e-15);
        let tri = CovarianceModel::triangle(1.0, 1.0).unwrap();
        assert_eq!(tri.evaluate(2.0, 0.0).unwrap(), 0.0);
        assert_eq!(tri.evaluate(0.25, 0.0).unwrap(), 0.75);
    }

    #[test]
    fn evaluate_rejects_negative_lags() {
        let st = CovarianceModel::stable(1.0, 1.0, 1.0).unwrap();
        assert!(st.evaluate(-1.0, 0.0).is_err());
        assert!(st.evaluate(0.0, -1e-3).is_err());
        assert!(st.evaluate(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn construction_rejects_bad_parameters() {
        assert!(CovarianceModel::stable(1.0, 1.0, 0.0).is_err());
        assert!(CovarianceModel::stable(0.0, 1.0, 1.0).is_err());
        assert!(CovarianceModel::brc(1.0, 1.0, -0.1, 1.0).is_err());
        assert!(CovarianceModel::brc(1.0, 1.0, 0.0, 1.0).is_ok());
        let brc = CovarianceModel::brc(1.0, 1.0, 1.0, 1.0).unwrap();
        let st = CovarianceModel::stable(1.0, 1.0, 1.0).unwrap();
        assert!(CovarianceModel::sum(brc, st).is_err());
    }

    #[test]
    fn exponential_is_stable_with_unit_exponent() {
        let e = CovarianceModel::exponential(2.0, 0.7).unwrap();
        let s = CovarianceModel::stable(2.0, 0.7, 1.0).unwrap();
        for k in 0..50 {
            let h = k as f64 * 0.3;
            assert!((e.evaluate(h, 0.0).unwrap() - s.evaluate(h, 0.0).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn pair_examples() {
        let metric = MetricSpec::Euclidean;
        let a = JointSample::euclidean(vec![1.0, 2.0], 0.5).unwrap();
        for m in [
            CovarianceModel::stable(2.0, 1.0, 1.5).unwrap(),
            CovarianceModel::brc(2.0, 1.0, 1.0, 0.5).unwrap(),
            CovarianceModel::exponential(2.0, 3.0).unwrap(),
        ] {
            assert_eq!(m.evaluate_pair(&a, &a, &metric).unwrap(), 0.5);
        }
        let mb = CovarianceModel::modified_brc(1.0, 1.0, 1.0, 2.0).unwrap();
        let joint = mb.natural_joint_metric().unwrap();
        let p = JointSample::euclidean(vec![0.0, 0.0], 0.3).unwrap();
        let q = JointSample::euclidean(vec![1.0, 0.0], 0.3).unwrap();
        assert!((mb.evaluate_pair(&p, &q, &joint).unwrap() - E_INV).abs() < 1e-15);
        assert_eq!(mb.evaluate_pair(&p, &p, &joint).unwrap(), 1.0);
    }

    #[test]
    fn pair_on_sphere_matches_independent_chain() {
        // exp(-(d/300 + 0)^1.01) with d the 40-digit haversine arc between
        // (-60.0, 60) and (-60.1, 60); computed with mpmath.
        let m = CovarianceModel::brc(1.0, 1.0 / 300.0, 1.0 / 300.0, 1.01).unwrap();
        let a = JointSample::geo(-60.0, 60.0, 0.1).unwrap();
        let b = JointSample::geo(-60.1, 60.0, 0.1).unwrap();
        let c = m.evaluate_pair(&a, &b, &MetricSpec::great_circle()).unwrap();
        assert!((c - 0.999_997_439_275_948_6).abs() < 1e-15, "{c}");
    }

    #[test]
    fn pair_rejects_incompatible_metric() {
        let a = JointSample::euclidean(vec![0.0], 0.0).unwrap();
        let mb = CovarianceModel::modified_brc(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!(mb.evaluate_pair(&a, &a, &MetricSpec::Euclidean).is_err());
        let st = CovarianceModel::stable(1.0, 1.0, 1.0).unwrap();
        let joint = MetricSpec::JointRescaled {
            alpha_g: 1.0,
            alpha_e: 1.0,
        };
        assert!(st.evaluate_pair(&a, &a, &joint).is_err());
        assert!(st.evaluate_pair(&a, &a, &MetricSpec::great_circle()).is_err());
    }

    #[test]
    fn validity_examples() {
        use ValidityStatus::*;
        let v = |m: CovarianceModel, d: DomainSpec| validity_range(&m, &d).unwrap();
        assert_eq!(
            v(CovarianceModel::stable(1., 1., 2.).unwrap(), DomainSpec::euclidean(2)).status,
            KnownValid
        );
        assert_eq!(
            v(CovarianceModel::stable(1., 1., 1.5).unwrap(), DomainSpec::sphere()).status,
            KnownInvalid
        );
        assert_eq!(
            v(CovarianceModel::brc(1., 1., 1., 1.5).unwrap(), DomainSpec::euclidean_env(2)).status,
            KnownInvalid
        );
        let conj = v(CovarianceModel::brc(1., 1., 1., 0.8).unwrap(), DomainSpec::sphere_env());
        assert_eq!(conj.status, Unknown);
        assert!(conj.note.unwrap().contains("conjectured"));
        let gap = v(CovarianceModel::brc(1., 1., 1., 1.0005).unwrap(), DomainSpec::sphere_env());
        assert_eq!(gap.status, Unknown);
        assert_eq!(
            v(CovarianceModel::brc(1., 1., 1., 1.001).unwrap(), DomainSpec::sphere_env()).status,
            KnownInvalid
        );
        assert_eq!(
            v(CovarianceModel::triangle(1., 1.).unwrap(), DomainSpec::euclidean(1)).status,
            KnownValid
        );
        assert_eq!(
            v(CovarianceModel::triangle(1., 1.).unwrap(), DomainSpec::euclidean(2)).status,
            KnownInvalid
        );
        assert_eq!(
            v(CovarianceModel::modified_brc(1., 1., 1., 2.).unwrap(), DomainSpec::euclidean_env(2))
                .status,
            KnownValid
        );
    }

    #[test]
    fn validity_of_composites() {
        use ValidityStatus::*;
        let st = |a| CovarianceModel::stable(1.0, 1.0, a).unwrap();
        let sum = CovarianceModel::sum(st(1.0), st(2.0)).unwrap();
        let prod = CovarianceModel::product(st(1.5), st(2.0)).unwrap();
        assert_eq!(validity_range(&sum, &DomainSpec::sphere_env()).unwrap().status, KnownValid);
        assert_eq!(validity_range(&prod, &DomainSpec::euclidean_env(2)).unwrap().status, KnownValid);
        assert_eq!(validity_range(&prod, &DomainSpec::sphere_env()).unwrap().status, KnownInvalid);
        let bad_env = CovarianceModel::sum(st(1.0), st(2.5)).unwrap();
        assert_eq!(
            validity_range(&bad_env, &DomainSpec::euclidean_env(2)).unwrap().status,
            KnownInvalid
        );
        assert!(validity_range(&sum, &DomainSpec::euclidean(2)).is_err());
    }

    #[test]
    fn unrepresentable_combinations_rejected() {
        let mb = CovarianceModel::modified_brc(1., 1., 1., 1.).unwrap();
        assert!(matches!(
            validity_range(&mb, &DomainSpec::sphere_env()),
            Err(CovLabError::Unrepresentable(_))
        ));
        let tri = CovarianceModel::triangle(1., 1.).unwrap();
        assert!(validity_range(&tri, &DomainSpec::sphere()).is_err());
    }

    #[test]
    fn brc_without_environment_is_stable_on_sphere() {
        let m = CovarianceModel::brc(1.0, 1.0, 0.0, 1.5).unwrap();
        let v = validity_range(&m, &DomainSpec::sphere_env()).unwrap();
        assert_eq!(v.status, ValidityStatus::KnownInvalid);
        let m = CovarianceModel::brc(1.0, 1.0, 0.0, 0.9).unwrap();
        let v = validity_range(&m, &DomainSpec::sphere_env()).unwrap();
        assert_eq!(v.status, ValidityStatus::KnownValid);
    }

    #[test]
    fn json_schema() {
        let m = CovarianceModel::sum(
            CovarianceModel::stable(1.0, 0.5, 1.0).unwrap(),
            CovarianceModel::exponential(2.0, 1.0).unwrap(),
        )
        .unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.starts_with("{\"family\":\"sum\",\"children\":[{\"family\":\"stable\""));
        assert_eq!(serde_json::from_str::<CovarianceModel>(&s).unwrap(), m);

        let brc: CovarianceModel = serde_json::from_str(
            r#"{"family":"brc","alpha0":1,"alphaG":0.05,"alphaE":2,"alpha2":0.9}"#,
        )
        .unwrap();
        assert_eq!(brc, CovarianceModel::brc(1.0, 0.05, 2.0, 0.9).unwrap());
        assert!(serde_json::from_str::<CovarianceModel>(
            r#"{"family":"stable","alpha0":1,"alphaG":1,"alpha2":0}"#
        )
        .is_err());
        assert!(serde_json::from_str::<CovarianceModel>(
            r#"{"family":"product","children":[{"family":"triangle","alpha0":1,"alphaG":1}]}"#
        )
        .is_err());
    }

    #[test]
    fn domain_parsing() {
        assert_eq!("euclidean".parse::<DomainSpec>().unwrap(), DomainSpec::euclidean(2));
        assert_eq!("euclidean-env:3".parse::<DomainSpec>().unwrap(), DomainSpec::euclidean_env(3));
        assert_eq!("sphere-env".parse::<DomainSpec>().unwrap(), DomainSpec::sphere_env());
        assert!("euclidean:0".parse::<DomainSpec>().is_err());
        assert!("torus".parse::<DomainSpec>().is_err());
    }

    fn single_model() -> impl Strategy<Value = CovarianceModel> {
        (0.1..5.0f64, 0.01..5.0f64, 0.0..3.0f64, 0.05..2.5f64, 0..5usize).prop_map(
            |(a0, ag, ae, a2, k)| match k {
                0 => CovarianceModel::stable(a0, ag, a2).unwrap(),
                1 => CovarianceModel::brc(a0, ag, ae, a2).unwrap(),
                2 => CovarianceModel::modified_brc(a0, ag, ae, a2).unwrap(),
                3 => CovarianceModel::exponential(a0, ag).unwrap(),
                _ => CovarianceModel::triangle(a0, ag).unwrap(),
            },
        )
    }

    proptest! {
        #[test]
        fn value_at_origin_is_sill(m in single_model()) {
            prop_assert_eq!(m.evaluate(0.0, 0.0).unwrap(), m.sill());
        }

        #[test]
        fn bounded_by_sill(m in single_model(), h in 0.0..50.0f64, u in 0.0..50.0f64) {
            let c = m.evaluate(h, u).unwrap();
            prop_assert!(c <= m.sill());
            prop_assert!(c >= 0.0);
        }

        #[test]
        fn stable_scale_equivalence(ag in 0.01..10.0f64, a2 in 0.1..2.0f64, h in 0.0..20.0f64) {
            let scaled = CovarianceModel::stable(1.0, ag, a2).unwrap();
            let unit = CovarianceModel::stable(1.0, 1.0, a2).unwrap();
            let lhs = scaled.evaluate(h, 0.0).unwrap();
            let rhs = unit.evaluate(ag * h, 0.0).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }

        #[test]
        fn composites_combine_children(a in 0.1..2.0f64, b in 0.1..2.0f64, h in 0.0..5.0f64, u in 0.0..5.0f64) {
            let g = CovarianceModel::stable(1.5, 0.7, a).unwrap();
            let e = CovarianceModel::stable(0.5, 1.3, b).unwrap();
            let cg = g.evaluate(h, 0.0).unwrap();
            let ce = e.evaluate(u, 0.0).unwrap();
            let s = CovarianceModel::sum(g.clone(), e.clone()).unwrap();
            let p = CovarianceModel::product(g, e).unwrap();
            prop_assert_eq!(s.evaluate(h, u).unwrap(), cg + ce);
            prop_assert_eq!(p.evaluate(h, u).unwrap(), cg * ce);
        }

        #[test]
        fn validity_is_idempotent(m in single_model(), k in 0..4usize) {
            let d = [DomainSpec::euclidean(2), DomainSpec::euclidean_env(3), DomainSpec::sphere(), DomainSpec::sphere_env()][k];
            let first = validity_range(&m, &d);
            let second = validity_range(&m, &d);
            match (first, second) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "lookup not deterministic"),
            }
        }

        #[test]
        fn json_round_trip(m in single_model()) {
            let s = serde_json::to_string(&m).unwrap();
            prop_assert_eq!(serde_json::from_str::<CovarianceModel>(&s).unwrap(), m);
        }
    }

    #[test]
    fn strictly_decreasing_over_lag_grid() {
        let models = [
            CovarianceModel::stable(1.0, 0.5, 1.7).unwrap(),
            CovarianceModel::brc(1.0, 0.5, 0.8, 0.9).unwrap(),
            CovarianceModel::exponential(1.0, 0.5).unwrap(),
        ];
        for m in &models {
            let vals: Vec<f64> = (0..100)
                .map(|k| m.evaluate(k as f64 * 0.05, 0.0).unwrap())
                .collect();
            assert!(vals.windows(2).all(|w| w[1] < w[0]), "{m:?} not decreasing in h");
        }
        let brc = &models[1];
        let vals: Vec<f64> = (0..100)
            .map(|k| brc.evaluate(0.3, k as f64 * 0.05).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn validity_boundaries_are_closed() {
        let at = |a2, d: DomainSpec| {
            validity_range(&CovarianceModel::stable(1.0, 1.0, a2).unwrap(), &d)
                .unwrap()
                .status
        };
        assert_eq!(at(2.0, DomainSpec::euclidean(3)), ValidityStatus::KnownValid);
        assert_eq!(at(2.0 + 1e-12, DomainSpec::euclidean(3)), ValidityStatus::KnownInvalid);
        assert_eq!(at(1.0, DomainSpec::sphere()), ValidityStatus::KnownValid);
        assert_eq!(at(1.0 + 1e-12, DomainSpec::sphere()), ValidityStatus::KnownInvalid);
        // Monotone in alpha2: once invalid, stays invalid.
        let statuses: Vec<_> = (1..=60).map(|k| at(k as f64 * 0.05, DomainSpec::euclidean(2))).collect();
        let first_bad = statuses.iter().position(|s| *s == ValidityStatus::KnownInvalid).unwrap();
        assert!(statuses[first_bad..].iter().all(|s| *s == ValidityStatus::KnownInvalid));
    }
}
