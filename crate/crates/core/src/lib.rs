//! Covariance models on geographic x environmental domains.
//!
//! The crate builds covariance models ([`models`]), certifies or refutes
//! their positive-definiteness on point configurations ([`gram`]), provides
//! the variogram / Bernstein-function calculus behind the validity ranges
//! ([`variogram`]) and shows what invalid models do to simple kriging
//! ([`kriging`]). [`data_io`] handles CSV/JSON files and synthetic data.

pub mod data_io;
pub mod error;
pub mod gram;
pub mod kriging;
pub mod metrics;
pub mod models;
pub mod variogram;

pub use error::{CovLabError, Result};
pub use metrics::{AngleUnit, EuclideanPoint, GeoPoint, JointSample, MetricSpec, Site};
pub use models::{
    validity_range, Base, CovarianceModel, DomainSpec, Family, ValidityStatus, ValidityVerdict,
};
pub use gram::{
    certify_pd, cholesky_simulate, counterexample_search, gram_matrix, min_eigenvalue,
    random_configuration, reference_sphere_grid,
    Configuration, PdCertificate, SearchOptions, Verdict,
};
pub use variogram::{
    neg_def_test, restrict, schoenberg_cov, schoenberg_search, subadditivity_check, subordinate,
    BernsteinFunction, NegDefOutcome, SubadditivityOutcome, Variogram,
};
pub use kriging::{
    empirical_covariance, fit_model, simple_krige, EmpiricalCovariance, FieldData, FitOptions,
    FitResult, KrigingResult,
};
pub use data_io::{load_samples, synth_generate, write_samples, RunReport, SampleTable, SynthSpec};
