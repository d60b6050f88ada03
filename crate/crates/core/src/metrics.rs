//! Distances on Euclidean space, the unit sphere, the environmental axis and
//! the weighted joint metric on sites x environment.

use serde::{Deserialize, Serialize};

use crate::error::{CovLabError, Result};

/// A point of ℝᵈ. Coordinates are finite and `d >= 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EuclideanPoint(Vec<f64>);

impl EuclideanPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(CovLabError::InvalidInput(
                "a Euclidean point needs at least one coordinate".into(),
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(CovLabError::InvalidInput(format!(
                "non-finite coordinate in {coords:?}"
            )));
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for EuclideanPoint {
    type Error = CovLabError;

    fn try_from(coords: Vec<f64>) -> Result<Self> {
        Self::new(coords)
    }
}

impl From<EuclideanPoint> for Vec<f64> {
    fn from(p: EuclideanPoint) -> Self {
        p.0
    }
}

/// A point on the unit sphere given as (longitude, latitude) in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeoPointRepr", into = "GeoPointRepr")]
pub struct GeoPoint {
    lon: f64,
    lat: f64,
}

#[derive(Serialize, Deserialize)]
struct GeoPointRepr {
    lon: f64,
    lat: f64,
}

impl TryFrom<GeoPointRepr> for GeoPoint {
    type Error = CovLabError;

    fn try_from(r: GeoPointRepr) -> Result<Self> {
        GeoPoint::new(r.lon, r.lat)
    }
}

impl From<GeoPoint> for GeoPointRepr {
    fn from(p: GeoPoint) -> Self {
        GeoPointRepr {
            lon: p.lon,
            lat: p.lat,
        }
    }
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !(-180.0..=180.0).contains(&lon) {
            return Err(CovLabError::InvalidInput(format!(
                "longitude {lon} outside [-180, 180]"
            )));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(CovLabError::InvalidInput(format!(
                "latitude {lat} outside [-90, 90]"
            )));
        }
        Ok(Self { lon, lat })
    }

    /// Inverse of [`GeoPoint::unit_vector`]; `v` need not be normalised.
    pub fn from_vector(v: [f64; 3]) -> Self {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let lat = (v[2] / norm).clamp(-1.0, 1.0).asin().to_degrees();
        let lon = v[1].atan2(v[0]).to_degrees();
        Self { lon, lat }
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    /// `(cos lat cos lon, cos lat sin lon, sin lat)`.
    pub fn unit_vector(&self) -> [f64; 3] {
        let (lon, lat) = (self.lon.to_radians(), self.lat.to_radians());
        let (slat, clat) = lat.sin_cos();
        let (slon, clon) = lon.sin_cos();
        [clat * clon, clat * slon, slat]
    }
}

/// Geographic component of a sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Site {
    Euclidean(EuclideanPoint),
    Geo(GeoPoint),
}

impl Site {
    pub fn is_geo(&self) -> bool {
        matches!(self, Site::Geo(_))
    }
}

/// A site together with its environmental value `e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSample {
    pub site: Site,
    pub env: f64,
}

impl JointSample {
    pub fn new(site: Site, env: f64) -> Result<Self> {
        if !env.is_finite() {
            return Err(CovLabError::InvalidInput(format!(
                "environmental value {env} is not finite"
            )));
        }
        Ok(Self { site, env })
    }

    pub fn euclidean(coords: Vec<f64>, env: f64) -> Result<Self> {
        Self::new(Site::Euclidean(EuclideanPoint::new(coords)?), env)
    }

    pub fn geo(lon: f64, lat: f64, env: f64) -> Result<Self> {
        Self::new(Site::Geo(GeoPoint::new(lon, lat)?), env)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnit {
    #[default]
    Radians,
    Degrees,
}

/// How the geographic lag between two samples is measured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MetricSpec {
    Euclidean,
    GreatCircle {
        #[serde(default)]
        unit: AngleUnit,
    },
    /// `sqrt(alpha_g * |x - x'|^2 + alpha_e * (e - e')^2)`; Euclidean sites only.
    JointRescaled { alpha_g: f64, alpha_e: f64 },
}

impl MetricSpec {
    pub fn great_circle() -> Self {
        MetricSpec::GreatCircle {
            unit: AngleUnit::Radians,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let MetricSpec::JointRescaled { alpha_g, alpha_e } = *self {
            check_weights(alpha_g, alpha_e)?;
        }
        Ok(())
    }

    /// Geographic lag `h` between two sites. Not defined for the joint metric,
    /// which mixes in the environment; use [`MetricSpec::distance`] there.
    pub fn site_distance(&self, a: &Site, b: &Site) -> Result<f64> {
        match (self, a, b) {
            (MetricSpec::Euclidean, Site::Euclidean(p), Site::Euclidean(q)) => {
                euclidean_distance(p, q)
            }
            (MetricSpec::GreatCircle { unit }, Site::Geo(p), Site::Geo(q)) => {
                Ok(great_circle_distance(p, q, *unit))
            }
            (MetricSpec::JointRescaled { .. }, _, _) => Err(CovLabError::Incompatible(
                "the joint re-scaled metric has no separate site distance".into(),
            )),
            (m, _, _) => Err(CovLabError::Incompatible(format!(
                "metric {m:?} cannot measure between {} and {} sites",
                site_kind(a),
                site_kind(b)
            ))),
        }
    }

    /// Full distance between samples under this metric. For Euclidean and
    /// great-circle metrics this is the site distance; the environment is ignored.
    pub fn distance(&self, a: &JointSample, b: &JointSample) -> Result<f64> {
        match *self {
            MetricSpec::JointRescaled { alpha_g, alpha_e } => {
                joint_rescaled_distance(a, b, alpha_g, alpha_e)
            }
            _ => self.site_distance(&a.site, &b.site),
        }
    }

    /// Whether the metric can be evaluated on sites of this kind.
    pub fn accepts(&self, site: &Site) -> bool {
        match self {
            MetricSpec::GreatCircle { .. } => site.is_geo(),
            MetricSpec::Euclidean | MetricSpec::JointRescaled { .. } => !site.is_geo(),
        }
    }
}

fn site_kind(s: &Site) -> &'static str {
    match s {
        Site::Euclidean(_) => "euclidean",
        Site::Geo(_) => "geographic",
    }
}

fn check_weights(alpha_g: f64, alpha_e: f64) -> Result<()> {
    for (name, v) in [("alpha_g", alpha_g), ("alpha_e", alpha_e)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(CovLabError::InvalidParameter {
                name,
                value: v,
                reason: "weights must be finite and non-negative",
            });
        }
    }
    if alpha_g == 0.0 && alpha_e == 0.0 {
        return Err(CovLabError::InvalidParameter {
            name: "alpha_g",
            value: 0.0,
            reason: "alpha_g and alpha_e cannot both be zero",
        });
    }
    Ok(())
}

pub fn euclidean_distance(a: &EuclideanPoint, b: &EuclideanPoint) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(CovLabError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(squared_distance(a.coords(), b.coords()).sqrt())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Arc length between two points of the unit sphere, in `[0, π]` radians or
/// `[0, 180]` degrees.
pub fn great_circle_distance(a: &GeoPoint, b: &GeoPoint, unit: AngleUnit) -> f64 {
    if a == b {
        return 0.0;
    }
    let (u, v) = (a.unit_vector(), b.unit_vector());
    let dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let rad = dot.clamp(-1.0, 1.0).acos();
    match unit {
        AngleUnit::Radians => rad,
        AngleUnit::Degrees => rad.to_degrees(),
    }
}

pub fn env_distance(a: &JointSample, b: &JointSample) -> f64 {
    (a.env - b.env).abs()
}

pub fn joint_rescaled_distance(
    a: &JointSample,
    b: &JointSample,
    alpha_g: f64,
    alpha_e: f64,
) -> Result<f64> {
    check_weights(alpha_g, alpha_e)?;
    let (p, q) = match (&a.site, &b.site) {
        (Site::Euclidean(p), Site::Euclidean(q)) => (p, q),
        _ => {
            return Err(CovLabError::Incompatible(
                "geodesic sites cannot be combined with the environment in the joint metric"
                    .into(),
            ))
        }
    };
    if p.dim() != q.dim() {
        return Err(CovLabError::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let de = a.env - b.env;
    Ok((alpha_g * squared_distance(p.coords(), q.coords()) + alpha_e * de * de).sqrt())
}
