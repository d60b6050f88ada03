//! CSV sample tables, synthetic data and run reports.
//!
//! Sample files have a header row and one of two coordinate schemes:
//! `id, x, y[, e][, value]` (planar) or `id, lon, lat[, e][, value]`
//! (geographic, degrees). Numbers are written with 17 significant digits
//! so that a write/load cycle is exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CovLabError, Result};
use crate::gram::{cholesky_simulate, Configuration};
use crate::kriging::{clustered_layout, FieldData, KrigingResult};
use crate::metrics::{AngleUnit, JointSample, MetricSpec, Site};
use crate::models::CovarianceModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoordScheme {
    Planar,
    Geographic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTable {
    pub scheme: CoordScheme,
    pub has_env: bool,
    pub ids: Vec<String>,
    pub samples: Vec<JointSample>,
    pub values: Option<Vec<f64>>,
}

impl SampleTable {
    /// Table without values for the samples of a configuration.
    pub fn from_configuration(config: &Configuration) -> Self {
        let samples = config.samples().to_vec();
        SampleTable {
            scheme: if config.is_geo() {
                CoordScheme::Geographic
            } else {
                CoordScheme::Planar
            },
            has_env: samples.iter().any(|s| s.env != 0.0),
            ids: (1..=samples.len()).map(|i| i.to_string()).collect(),
            samples,
            values: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Great-circle metric for geographic files, Euclidean otherwise.
    pub fn default_metric(&self, unit: AngleUnit) -> MetricSpec {
        match self.scheme {
            CoordScheme::Geographic => MetricSpec::GreatCircle { unit },
            CoordScheme::Planar => MetricSpec::Euclidean,
        }
    }

    pub fn configuration(&self, unit: AngleUnit) -> Result<Configuration> {
        Configuration::new(self.samples.clone(), self.default_metric(unit))
    }

    /// Observations with the sample mean; fails when the file had no
    /// `value` column.
    pub fn field_data(&self, unit: AngleUnit) -> Result<FieldData> {
        let values = self
            .values
            .clone()
            .ok_or_else(|| CovLabError::InvalidInput("sample file has no `value` column".into()))?;
        FieldData::new(self.configuration(unit)?, values)
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> CovLabError {
    CovLabError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Loads a sample file. Malformed rows are reported with their line number.
pub fn load_samples(path: &Path) -> Result<SampleTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(parse_error(path, 1, "empty file: a header row is required"));
    }
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (x, y, lon, lat) = (col("x"), col("y"), col("lon"), col("lat"));
    let scheme = match (x.zip(y), lon.zip(lat)) {
        (Some(_), Some(_)) => {
            return Err(parse_error(path, 1, "mixed coordinate schemes: both x/y and lon/lat columns"))
        }
        (Some(_), None) if lon.is_none() && lat.is_none() => CoordScheme::Planar,
        (None, Some(_)) if x.is_none() && y.is_none() => CoordScheme::Geographic,
        _ => {
            return Err(parse_error(
                path,
                1,
                "exactly one of the column pairs (x, y) or (lon, lat) is required",
            ))
        }
    };
    let (c1, c2) = match scheme {
        CoordScheme::Planar => (x.unwrap(), y.unwrap()),
        CoordScheme::Geographic => (lon.unwrap(), lat.unwrap()),
    };
    let (id_col, e_col, v_col) = (col("id"), col("e"), col("value"));

    let mut table = SampleTable {
        scheme,
        has_env: e_col.is_some(),
        ids: Vec::new(),
        samples: Vec::new(),
        values: v_col.map(|_| Vec::new()),
    };
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let number = |idx: usize, name: &str| -> Result<f64> {
            let raw = record
                .get(idx)
                .ok_or_else(|| parse_error(path, line, format!("missing `{name}` field")))?;
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_error(path, line, format!("`{name}` is not a number: {raw:?}")))?;
            if !v.is_finite() {
                return Err(parse_error(path, line, format!("`{name}` is not finite")));
            }
            Ok(v)
        };
        let a = number(c1, &headers[c1])?;
        let b = number(c2, &headers[c2])?;
        let e = match e_col {
            Some(i) if record.get(i).is_some_and(|s| !s.is_empty()) => number(i, "e")?,
            _ => 0.0,
        };
        let sample = match scheme {
            CoordScheme::Planar => JointSample::euclidean(vec![a, b], e),
            CoordScheme::Geographic => JointSample::geo(a, b, e),
        }
        .map_err(|err| parse_error(path, line, err.to_string()))?;
        if let (Some(i), Some(values)) = (v_col, table.values.as_mut()) {
            values.push(number(i, "value")?);
        }
        let id = match id_col {
            Some(i) => record.get(i).unwrap_or_default().to_string(),
            None => (table.samples.len() + 1).to_string(),
        };
        table.ids.push(id);
        table.samples.push(sample);
    }
    if table.samples.is_empty() {
        return Err(parse_error(path, 1, "file has a header but no data rows"));
    }
    Ok(table)
}

/// Scientific notation with 17 significant digits.
pub fn format_number(v: f64) -> String {
    let s = format!("{v:.16e}");
    debug_assert_eq!(s.parse::<f64>().ok(), Some(v));
    s
}

/// Writes `contents` to a temporary file next to `path`, then renames it
/// over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CovLabError::Io(e.error))?;
    Ok(())
}

/// Header plus rows as CSV bytes.
pub fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner()
        .map_err(|e| CovLabError::Io(std::io::Error::other(e.to_string())))
}

fn coords(s: &JointSample) -> [f64; 2] {
    match &s.site {
        Site::Euclidean(p) => [p.coords()[0], p.coords()[1]],
        Site::Geo(g) => [g.lon(), g.lat()],
    }
}

fn coord_header(scheme: CoordScheme) -> [&'static str; 2] {
    match scheme {
        CoordScheme::Planar => ["x", "y"],
        CoordScheme::Geographic => ["lon", "lat"],
    }
}

pub fn samples_csv(table: &SampleTable) -> Result<Vec<u8>> {
    if table.ids.len() != table.samples.len()
        || table.values.as_ref().is_some_and(|v| v.len() != table.samples.len())
    {
        return Err(CovLabError::InvalidInput("table columns differ in length".into()));
    }
    if table.samples.iter().any(|s| match &s.site {
        Site::Euclidean(p) => p.dim() != 2,
        Site::Geo(_) => false,
    }) {
        return Err(CovLabError::InvalidInput(
            "only planar (x, y) sites can be written to a sample file".into(),
        ));
    }
    let mut header = vec!["id"];
    header.extend(coord_header(table.scheme));
    if table.has_env {
        header.push("e");
    }
    if table.values.is_some() {
        header.push("value");
    }
    let rows = table.samples.iter().enumerate().map(|(i, s)| {
        let c = coords(s);
        let mut row = vec![table.ids[i].clone(), format_number(c[0]), format_number(c[1])];
        if table.has_env {
            row.push(format_number(s.env));
        }
        if let Some(v) = &table.values {
            row.push(format_number(v[i]));
        }
        row
    });
    csv_bytes(&header, rows)
}

pub fn write_samples(path: &Path, table: &SampleTable) -> Result<()> {
    write_atomic(path, &samples_csv(table)?)
}

/// Prediction grid as `x, y[, e], prediction, variance` (or `lon, lat, ...`).
pub fn predictions_csv(targets: &[JointSample], result: &KrigingResult) -> Result<Vec<u8>> {
    if targets.len() != result.predictions.len() {
        return Err(CovLabError::DimensionMismatch {
            expected: targets.len(),
            got: result.predictions.len(),
        });
    }
    let scheme = match targets.first().map(|t| &t.site) {
        Some(Site::Geo(_)) => CoordScheme::Geographic,
        _ => CoordScheme::Planar,
    };
    let has_env = targets.iter().any(|t| t.env != 0.0);
    let mut header = coord_header(scheme).to_vec();
    if has_env {
        header.push("e");
    }
    header.extend(["prediction", "variance"]);
    let rows = targets.iter().enumerate().map(|(i, t)| {
        let c = coords(t);
        let mut row = vec![format_number(c[0]), format_number(c[1])];
        if has_env {
            row.push(format_number(t.env));
        }
        row.push(format_number(result.predictions[i]));
        row.push(format_number(result.variances[i]));
        row
    });
    csv_bytes(&header, rows)
}

/// Parameters of a synthetic data set: a clustered layout in a square box
/// with values simulated from `model`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SynthSpec {
    pub n: usize,
    pub box_km: f64,
    pub model: CovarianceModel,
    pub seed: u64,
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default)]
    pub mean: f64,
}

fn default_clusters() -> usize {
    8
}

/// Clustered sites plus one Cholesky draw. Refuses models that are not
/// certified positive definite on the generated layout.
pub fn synth_generate(spec: &SynthSpec) -> Result<SampleTable> {
    if spec.n == 0 {
        return Err(CovLabError::InvalidInput("n must be at least 1".into()));
    }
    let sites = clustered_layout(spec.n, spec.box_km, spec.clusters, spec.seed)?;
    let samples = sites
        .into_iter()
        .map(|s| JointSample::new(s, 0.0))
        .collect::<Result<Vec<_>>>()?;
    let config = Configuration::new(samples, MetricSpec::Euclidean)?;
    let values = cholesky_simulate(&spec.model, &config, spec.mean, 1, spec.seed)?
        .pop()
        .expect("one draw");
    let mut table = SampleTable::from_configuration(&config);
    table.values = Some(values);
    Ok(table)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of_file(path: &Path) -> Result<Self> {
        Ok(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&fs::read(path)?),
        })
    }
}

/// Everything needed to rerun a command: its arguments, digests of its
/// input files, the model, the seed and the build that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub args: Vec<String>,
    pub inputs: Vec<InputDigest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<serde_json::Value>,
    pub result: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub versions: serde_json::Map<String, serde_json::Value>,
}

impl RunReport {
    pub fn new(command: &str, args: Vec<String>, result: serde_json::Value) -> Self {
        let mut versions = serde_json::Map::new();
        versions.insert("covlab-core".into(), env!("CARGO_PKG_VERSION").into());
        RunReport {
            command: command.into(),
            args,
            inputs: Vec::new(),
            model: None,
            result,
            seed: None,
            versions,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}
