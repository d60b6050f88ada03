use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use covlab_core::data_io::{
    csv_bytes, format_number, predictions_csv, samples_csv, write_atomic, InputDigest,
};
use covlab_core::kriging::{clustered_layout, FitOptions};
use covlab_core::variogram::{schoenberg_search, NegDefOutcome};
use covlab_core::*;
use serde_json::{json, Value};

use super::{Cli, Command, ConfigArgs, ModelArgs};

/// Exit code when a command witnesses invalidity.
const WITNESSED: u8 = 2;

struct Outcome {
    code: u8,
    result: Value,
    model: Option<Value>,
    inputs: Vec<PathBuf>,
    seed: Option<u64>,
}

impl Outcome {
    fn new(code: u8, result: Value) -> Self {
        Outcome {
            code,
            result,
            model: None,
            inputs: Vec::new(),
            seed: None,
        }
    }

    fn model(mut self, m: &CovarianceModel) -> Self {
        self.model = Some(serde_json::to_value(m).expect("models serialize"));
        self
    }

    fn inputs(mut self, paths: impl IntoIterator<Item = PathBuf>) -> Self {
        self.inputs.extend(paths);
        self
    }

    fn seed(mut self, s: u64) -> Self {
        self.seed = Some(s);
        self
    }
}

pub fn run(cli: Cli) -> Result<u8> {
    fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("creating {}", cli.out_dir.display()))?;
    let out = cli.out_dir.as_path();
    let (name, outcome) = match cli.command {
        Command::Validate { model, domain } => ("validate", validate(&model, &domain)?),
        Command::Gram { model, input } => ("gram", gram(out, &model, &input)?),
        Command::Krige {
            model,
            input,
            targets,
            grid,
            mean,
        } => ("krige", krige(out, &model, &input, targets, grid, mean)?),
        Command::Simulate {
            model,
            input,
            count,
            mean,
            seed,
        } => ("simulate", simulate(out, &model, &input, count, mean, seed.seed)?),
        Command::Fit {
            model,
            input,
            bin_width,
            max_lag,
            domain,
        } => ("fit", fit(out, &model, &input, bin_width, max_lag, domain)?),
        Command::Counterexample {
            model,
            domain,
            grid_312,
            budget,
            max_points,
            angle_unit,
            seed,
        } => {
            let opts = SearchOptions {
                budget,
                max_points,
                seed: seed.seed,
                angle_unit: angle_unit.into(),
                ..SearchOptions::default()
            };
            ("counterexample", counterexample(out, &model, domain, grid_312, &opts)?)
        }
        Command::NdTest {
            variogram_file,
            variogram,
            trials,
            points,
            seed,
        } => ("nd-test", nd_test(variogram_file, variogram, trials, points, seed.seed)?),
        Command::Synth {
            model,
            n,
            box_km,
            clusters,
            mean,
            seed,
        } => ("synth", synth(out, &model, n, box_km, clusters, mean, seed.seed)?),
    };

    let mut text = serde_json::to_string_pretty(&outcome.result)?;
    text.push('\n');
    // A closed pipe (`covlab ... | head`) is not an error worth reporting.
    if let Err(e) = std::io::stdout().write_all(text.as_bytes()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            return Err(e.into());
        }
    }
    let mut report = RunReport::new(name, std::env::args().skip(1).collect(), outcome.result);
    report
        .versions
        .insert("covlab-cli".into(), env!("CARGO_PKG_VERSION").into());
    report.model = outcome.model;
    report.seed = outcome.seed;
    for p in &outcome.inputs {
        report.inputs.push(InputDigest::of_file(p)?);
    }
    report.write(&out.join("report.json"))?;
    Ok(outcome.code)
}

fn params_of(m: &CovarianceModel) -> (Family, [Option<f64>; 4]) {
    use CovarianceModel::*;
    let p = match *m {
        Stable {
            alpha0,
            alpha_g,
            alpha2,
        } => [Some(alpha0), Some(alpha_g), None, Some(alpha2)],
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
        } => [Some(alpha0), Some(alpha_g), Some(alpha_e), Some(alpha2)],
        Exponential { alpha0, alpha_g } | Triangle { alpha0, alpha_g } => {
            [Some(alpha0), Some(alpha_g), None, None]
        }
        Sum(..) | Product(..) => [None; 4],
    };
    (m.family(), p)
}

impl ModelArgs {
    /// The model from `--model-file`, or from the family and parameter
    /// flags. Unset parameters come from `base` when given, else 1.
    fn build(&self, base: Option<CovarianceModel>) -> Result<CovarianceModel> {
        if let Some(path) = &self.model_file {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
        }
        let (base_family, base_params) = match &base {
            Some(m) => {
                let (f, p) = params_of(m);
                (Some(f), p)
            }
            None => (None, [None; 4]),
        };
        let family: Family = match (&self.family, base_family) {
            (Some(f), _) => f.parse()?,
            (None, Some(f)) => f,
            (None, None) => bail!("either --family or --model-file is required"),
        };
        let pick = |flag: Option<f64>, k: usize| flag.or(base_params[k]).unwrap_or(1.0);
        let (a0, ag, ae, a2) = (
            pick(self.alpha0, 0),
            pick(self.alpha_g, 1),
            pick(self.alpha_e, 2),
            pick(self.alpha2, 3),
        );
        Ok(match family {
            Family::Stable => CovarianceModel::stable(a0, ag, a2)?,
            Family::Brc => CovarianceModel::brc(a0, ag, ae, a2)?,
            Family::ModifiedBrc => CovarianceModel::modified_brc(a0, ag, ae, a2)?,
            Family::Exponential => CovarianceModel::exponential(a0, ag)?,
            Family::Triangle => CovarianceModel::triangle(a0, ag)?,
            Family::Sum | Family::Product => {
                bail!("composite models are given with --model-file")
            }
        })
    }

    fn file(&self) -> Option<PathBuf> {
        self.model_file.clone()
    }
}

/// Model and configuration for commands that take `--samples` or
/// `--grid-312`. The configuration switches to the model's own joint metric
/// when it has one.
fn model_and_config(
    model: &ModelArgs,
    input: &ConfigArgs,
) -> Result<(CovarianceModel, Configuration, Option<SampleTable>)> {
    let unit: AngleUnit = input.angle_unit.into();
    let (model, config, table) = if input.grid_312 {
        let (reference, config) = reference_sphere_grid(unit);
        (model.build(Some(reference))?, config, None)
    } else {
        let path = input.samples.as_ref().expect("clap requires --samples");
        let table = load_samples(path)?;
        (model.build(None)?, table.configuration(unit)?, Some(table))
    };
    let config = match model.natural_joint_metric() {
        Some(m) => config.with_metric(m)?,
        None => config,
    };
    Ok((model, config, table))
}

fn input_files(model: &ModelArgs, input: &ConfigArgs) -> Vec<PathBuf> {
    input.samples.iter().cloned().chain(model.file()).collect()
}

fn validate(model: &ModelArgs, domain: &str) -> Result<Outcome> {
    let m = model.build(None)?;
    let domain: DomainSpec = domain.parse()?;
    let verdict = validity_range(&m, &domain)?;
    let result = json!({ "domain": domain.to_string(), "verdict": verdict });
    Ok(Outcome::new(0, result).model(&m).inputs(model.file()))
}

fn write_certificate(out: &Path, cert: &PdCertificate) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(cert)?;
    bytes.push(b'\n');
    write_atomic(&out.join("certificate.json"), &bytes)?;
    Ok(())
}

/// Writes the witness as CSV when the sample schema can hold it, and always
/// as JSON.
fn write_witness(out: &Path, config: &Configuration) -> Result<Option<String>> {
    let mut bytes = serde_json::to_vec_pretty(config)?;
    bytes.push(b'\n');
    write_atomic(&out.join("witness.json"), &bytes)?;
    let table = SampleTable::from_configuration(config);
    match samples_csv(&table) {
        Ok(csv) => {
            write_atomic(&out.join("witness.csv"), &csv)?;
            Ok(Some("witness.csv".into()))
        }
        Err(_) => Ok(None),
    }
}

fn gram(out: &Path, model: &ModelArgs, input: &ConfigArgs) -> Result<Outcome> {
    let (m, config, _) = model_and_config(model, input)?;
    let cert = certify_pd(&m, &config)?;
    write_certificate(out, &cert)?;
    let code = if cert.is_not_pd() { WITNESSED } else { 0 };
    let mut result = serde_json::to_value(&cert)?;
    result["model"] = serde_json::to_value(&m)?;
    Ok(Outcome::new(code, result)
        .model(&m)
        .inputs(input_files(model, input)))
}

fn coords(s: &JointSample) -> [f64; 2] {
    match &s.site {
        Site::Euclidean(p) => [p.coords()[0], p.coords().get(1).copied().unwrap_or(0.0)],
        Site::Geo(g) => [g.lon(), g.lat()],
    }
}

/// `n x n` targets spanning the bounding box of the samples.
fn bounding_grid(samples: &[JointSample], n: usize) -> Result<Vec<JointSample>> {
    if n < 2 {
        bail!("--grid needs at least 2 nodes per side");
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for s in samples {
        let c = coords(s);
        for k in 0..2 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    let geo = samples[0].site.is_geo();
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let a = lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64;
            let b = lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64;
            out.push(if geo {
                JointSample::geo(a, b, 0.0)?
            } else {
                JointSample::euclidean(vec![a, b], 0.0)?
            });
        }
    }
    Ok(out)
}

fn krige(
    out: &Path,
    model: &ModelArgs,
    input: &ConfigArgs,
    targets: Option<PathBuf>,
    grid: Option<usize>,
    mean: Option<f64>,
) -> Result<Outcome> {
    if input.grid_312 {
        bail!("krige needs a sample file with a value column");
    }
    let (m, config, table) = model_and_config(model, input)?;
    let table = table.expect("sample file");
    let values = table
        .values
        .clone()
        .context("sample file has no `value` column")?;
    let data = match mean {
        Some(mu) => FieldData::with_mean(config, values, mu)?,
        None => FieldData::new(config, values)?,
    };
    let target_samples = match (&targets, grid) {
        (Some(path), _) => load_samples(path)?.samples,
        (None, Some(n)) => bounding_grid(data.config().samples(), n)?,
        (None, None) => bail!("give --targets FILE or --grid N"),
    };
    let r = simple_krige(&m, &data, &target_samples)?;
    write_atomic(&out.join("predictions.csv"), &predictions_csv(&target_samples, &r)?)?;
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    let negative = r.negative_count();
    let max = r.variances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let result = json!({
        "output": "predictions.csv",
        "targets": target_samples.len(),
        "mean": data.mean(),
        "negativeVariances": negative,
        "minVariance": r.min_variance(),
        "maxVariance": max,
        "tolerance": r.tolerance,
        "warnings": r.warnings,
    });
    let code = if negative > 0 { WITNESSED } else { 0 };
    Ok(Outcome::new(code, result)
        .model(&m)
        .inputs(input_files(model, input).into_iter().chain(targets)))
}

fn simulate(
    out: &Path,
    model: &ModelArgs,
    input: &ConfigArgs,
    count: usize,
    mean: f64,
    seed: u64,
) -> Result<Outcome> {
    let (m, config, _) = model_and_config(model, input)?;
    let files = input_files(model, input);
    let cert = certify_pd(&m, &config)?;
    if cert.is_not_pd() {
        write_certificate(out, &cert)?;
        let result = json!({ "refused": true, "certificate": cert });
        return Ok(Outcome::new(WITNESSED, result).model(&m).inputs(files).seed(seed));
    }
    let draws = cholesky_simulate(&m, &config, mean, count, seed)?;
    let geo = config.is_geo();
    let mut header: Vec<String> = vec!["id".into()];
    header.extend(if geo { ["lon", "lat"] } else { ["x", "y"] }.map(String::from));
    header.push("e".into());
    header.extend((1..=count).map(|k| format!("sim{k}")));
    let rows = config.samples().iter().enumerate().map(|(i, s)| {
        let c = coords(s);
        let mut row = vec![(i + 1).to_string(), format_number(c[0]), format_number(c[1])];
        row.push(format_number(s.env));
        row.extend(draws.iter().map(|d| format_number(d[i])));
        row
    });
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_atomic(&out.join("simulations.csv"), &csv_bytes(&header_refs, rows)?)?;
    let result = json!({ "output": "simulations.csv", "count": count, "certificate": cert });
    Ok(Outcome::new(0, result).model(&m).inputs(files).seed(seed))
}

fn fit(
    out: &Path,
    model: &ModelArgs,
    input: &ConfigArgs,
    bin_width: f64,
    max_lag: f64,
    domain: Option<String>,
) -> Result<Outcome> {
    if input.grid_312 {
        bail!("fit needs a sample file with a value column");
    }
    let path = input.samples.as_ref().expect("clap requires --samples");
    let table = load_samples(path)?;
    let data = table.field_data(input.angle_unit.into())?;
    let init = model.build(None)?;
    let domain = match domain {
        Some(d) => d.parse()?,
        None => {
            let base = match table.scheme {
                data_io::CoordScheme::Geographic => DomainSpec::sphere(),
                data_io::CoordScheme::Planar => DomainSpec::euclidean(2),
            };
            if table.has_env && init.natural_joint_metric().is_some() {
                DomainSpec { with_env: true, ..base }
            } else {
                base
            }
        }
    };
    let emp = empirical_covariance(&data, bin_width, max_lag)?;
    let fitted = fit_model(&emp, &init, &domain, &FitOptions::default())?;
    let result = json!({
        "domain": domain.to_string(),
        "fit": fitted,
        "empirical": emp,
    });
    let mut bytes = serde_json::to_vec_pretty(&result)?;
    bytes.push(b'\n');
    write_atomic(&out.join("fit.json"), &bytes)?;
    Ok(Outcome::new(0, result)
        .model(&fitted.model)
        .inputs(input_files(model, input)))
}

fn counterexample(
    out: &Path,
    model: &ModelArgs,
    domain: Option<String>,
    grid_312: bool,
    opts: &SearchOptions,
) -> Result<Outcome> {
    let (m, found) = if grid_312 {
        let (reference, config) = reference_sphere_grid(opts.angle_unit);
        let m = model.build(Some(reference))?;
        let cert = certify_pd(&m, &config)?;
        (m, cert.is_not_pd().then_some((config, cert)))
    } else {
        let m = model.build(None)?;
        let domain: DomainSpec = domain.expect("clap requires --domain").parse()?;
        let found = counterexample_search(&m, &domain, opts)?;
        (m, found)
    };
    let outcome = match found {
        Some((config, cert)) => {
            write_certificate(out, &cert)?;
            let csv = write_witness(out, &config)?;
            let result = json!({
                "found": true,
                "witnessCsv": csv,
                "certificate": cert,
            });
            Outcome::new(WITNESSED, result)
        }
        None => Outcome::new(
            0,
            json!({ "found": false, "budget": if grid_312 { 1 } else { opts.budget } }),
        ),
    };
    Ok(outcome.model(&m).inputs(model.file()).seed(opts.seed))
}

fn nd_test(
    file: Option<PathBuf>,
    inline: Option<String>,
    trials: usize,
    points: usize,
    seed: u64,
) -> Result<Outcome> {
    let text = match (&file, inline) {
        (Some(p), _) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        (None, Some(s)) => s,
        (None, None) => bail!("give --variogram-file FILE or --variogram JSON"),
    };
    let gamma: Variogram = serde_json::from_str(&text).context("parsing variogram expression")?;
    let nd = neg_def_test(&gamma, trials, points, seed)?;
    let sub = subadditivity_check(&gamma, trials, seed)?;
    let schoenberg = match nd {
        NegDefOutcome::Fail(_) => {
            schoenberg_search(&gamma, &[0.5, 1.0, 2.0, 8.0], trials, points, seed)?
        }
        NegDefOutcome::Pass { .. } => None,
    };
    let code = if nd.passed() && sub.passed() { 0 } else { WITNESSED };
    let result = json!({
        "variogram": gamma,
        "negativeDefinite": nd,
        "subadditivity": sub,
        "schoenbergWitness": schoenberg,
    });
    Ok(Outcome::new(code, result).inputs(file).seed(seed))
}

fn synth(
    out: &Path,
    model: &ModelArgs,
    n: usize,
    box_km: f64,
    clusters: usize,
    mean: f64,
    seed: u64,
) -> Result<Outcome> {
    let m = model.build(None)?;
    let spec = SynthSpec {
        n,
        box_km,
        model: m.clone(),
        seed,
        clusters,
        mean,
    };
    let outcome = match synth_generate(&spec) {
        Ok(table) => {
            write_samples(&out.join("samples.csv"), &table)?;
            Outcome::new(0, json!({ "output": "samples.csv", "spec": spec }))
        }
        Err(CovLabError::NotPositiveDefinite(msg)) => {
            // Certify the same layout so the refusal comes with its evidence.
            let sites = clustered_layout(n, box_km, clusters, seed)?;
            let samples = sites
                .into_iter()
                .map(|s| JointSample::new(s, 0.0))
                .collect::<covlab_core::Result<Vec<_>>>()?;
            let config = Configuration::new(samples, MetricSpec::Euclidean)?;
            let cert = certify_pd(&m, &config)?;
            if !cert.is_not_pd() {
                bail!("{msg}");
            }
            write_certificate(out, &cert)?;
            Outcome::new(WITNESSED, json!({ "refused": true, "reason": msg, "certificate": cert }))
        }
        Err(e) => return Err(e.into()),
    };
    Ok(outcome.model(&m).inputs(model.file()).seed(seed))
}
