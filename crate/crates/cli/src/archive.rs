//! Versioned JSON model archive.
//!
//! Only data goes in the file. On load the basis (or saddle system) is
//! rebuilt from the stored inputs, which is deterministic, so predictions
//! match the fitting run bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sipr::data::FeatureScaling;
use sipr::interpolate::{InterpolationPosterior, SaddleSystem};
use sipr::pipeline::{FittedModel, NoiseSummary, Predictor};
use sipr::{Dataset64, Eta, Matrix, Regime, SamplerConfig, SubspaceBasis};

use crate::error::{CliError, CliResult};
use crate::io::VERSION;

pub const FORMAT: &str = "sipr-model";
pub const FORMAT_VERSION: u32 = 1;

/// Stored fitted values must be reproduced this closely after loading.
const CONSISTENCY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArchive {
    pub format: String,
    pub version: u32,
    pub sipr_version: String,
    pub eta: f64,
    pub regime: String,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub scaling: Scaling,
    /// Training inputs after scaling.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub noise: Noise,
    /// Noise scale entering the data band.
    pub sigma_y: f64,
    /// Green's and polynomial coefficients of the predictive mean, in
    /// scaled input units.
    pub mean_spline: SplineCoefficients,
    pub moments: Option<Moments>,
    pub polynomial: Option<PolynomialFit>,
    pub fitted: Vec<f64>,
    pub sampler: SamplerSettings,
    pub diagnostics: DiagnosticsSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub min: Vec<f64>,
    pub range: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Noise {
    Known { value: f64 },
    Sampled { median: f64, q05: f64, q95: f64 },
    Residual { value: f64 },
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineCoefficients {
    pub greens: Vec<f64>,
    pub polynomial: Vec<f64>,
}

/// Posterior mean and covariance of the subspace coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub h_hat: Vec<f64>,
    pub sigma_hat: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialFit {
    pub c: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub dof: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub chains: usize,
    pub samples_per_chain: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub leapfrog_steps: usize,
    pub target_accept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub acceptance: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub divergent: usize,
    pub max_rhat: Option<f64>,
    pub diagonal_fallback: bool,
}

fn rows(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn matrix(rows: &[Vec<f64>], what: &str) -> CliResult<Matrix<f64>> {
    Matrix::from_rows(rows).map_err(|e| CliError::Invalid(format!("model archive field '{what}': {e}")))
}

impl ModelArchive {
    pub fn from_fit(model: &FittedModel<f64>, ds: &Dataset64) -> CliResult<Self> {
        let scaling = ds.scaling.clone().ok_or_else(|| CliError::Invalid("dataset was not scaled".into()))?;
        let noise = match model.noise {
            NoiseSummary::Known(value) => Noise::Known { value },
            NoiseSummary::Sampled { median, q05, q95 } => Noise::Sampled { median, q05, q95 },
            NoiseSummary::Residual(value) => Noise::Residual { value },
            NoiseSummary::Zero => Noise::Zero,
        };
        let spline = model.predictor.mean_spline()?;
        let (moments, polynomial) = match &model.predictor {
            Predictor::Normal { h_hat, sigma_hat, .. } => {
                (Some(Moments { h_hat: h_hat.clone(), sigma_hat: rows(sigma_hat) }), None)
            }
            Predictor::Polynomial { c, cov, dof, .. } => {
                (None, Some(PolynomialFit { c: c.clone(), cov: rows(cov), dof: *dof }))
            }
            Predictor::Interpolation(_) => (None, None),
        };
        let d = &model.posterior.diagnostics;
        Ok(Self {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            sipr_version: VERSION.into(),
            eta: model.config.eta.value(),
            regime: model.regime.as_str().into(),
            feature_names: ds.feature_names.clone(),
            target_name: ds.target_name.clone(),
            scaling: Scaling { min: scaling.min, range: scaling.range },
            x: rows(&model.x),
            y: model.y.clone(),
            noise,
            sigma_y: model.predictor.sigma_y(),
            mean_spline: SplineCoefficients {
                greens: spline.greens_coefficients(),
                polynomial: spline.polynomial_coefficients(),
            },
            moments,
            polynomial,
            fitted: model.fitted_values()?,
            sampler: model.config.sampler.into(),
            diagnostics: DiagnosticsSummary {
                acceptance: d.acceptance.clone(),
                step_sizes: d.step_sizes.clone(),
                divergent: d.divergent,
                max_rhat: Some(d.max_rhat).filter(|r| r.is_finite()),
                diagonal_fallback: d.diagonal_fallback,
            },
        })
    }

    pub fn to_json(&self) -> CliResult<String> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::Numerical(format!("cannot serialize model: {e}")))
    }

    /// Parses an archive, checking the format tag and version before the
    /// rest of the layout.
    pub fn from_json(text: &str) -> CliResult<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Invalid(format!("model archive is not valid JSON: {e}")))?;
        if value.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
            return Err(CliError::Invalid("not a sipr model archive".into()));
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(CliError::Invalid(format!(
                    "unsupported model archive version {v} (this build reads version {FORMAT_VERSION})"
                )))
            }
            None => return Err(CliError::Invalid("model archive has no version".into())),
        }
        serde_json::from_value(value).map_err(|e| CliError::Invalid(format!("malformed model archive: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn scaling(&self) -> FeatureScaling<f64> {
        FeatureScaling { min: self.scaling.min.clone(), range: self.scaling.range.clone() }
    }

    pub fn regime(&self) -> CliResult<Regime> {
        Regime::parse(&self.regime).ok_or_else(|| CliError::Invalid(format!("unknown regime '{}'", self.regime)))
    }

    /// Rebuilds the predictor and checks it against the stored fit.
    pub fn predictor(&self) -> CliResult<Predictor<f64>> {
        let eta = Eta::new(self.eta)?;
        let x = matrix(&self.x, "x")?;
        if x.cols() != self.feature_names.len() || self.scaling.min.len() != x.cols() || self.scaling.range.len() != x.cols() {
            return Err(CliError::Invalid("model archive dimensions disagree".into()));
        }
        let missing = |what: &str| CliError::Invalid(format!("model archive lacks '{what}' for its regime"));
        let predictor = match self.regime()? {
            Regime::Normal => {
                let m = self.moments.as_ref().ok_or_else(|| missing("moments"))?;
                Predictor::Normal {
                    basis: SubspaceBasis::new(&x, eta)?,
                    h_hat: m.h_hat.clone(),
                    sigma_hat: matrix(&m.sigma_hat, "moments.sigma_hat")?,
                    sigma_y: self.sigma_y,
                }
            }
            Regime::NullspacePole => {
                let p = self.polynomial.as_ref().ok_or_else(|| missing("polynomial"))?;
                Predictor::Polynomial {
                    eta,
                    frame: SaddleSystem::new(&x, eta)?.frame().clone(),
                    c: p.c.clone(),
                    cov: matrix(&p.cov, "polynomial.cov")?,
                    sigma_y: self.sigma_y,
                    dof: p.dof,
                }
            }
            Regime::InterpolationPole => Predictor::Interpolation(InterpolationPosterior::new(&x, &self.y, eta)?),
        };
        if self.fitted.len() != x.rows() {
            return Err(CliError::Invalid("model archive dimensions disagree".into()));
        }
        for (i, &want) in self.fitted.iter().enumerate() {
            let got = predictor.mean(x.row(i))?;
            if !got.is_finite() || (got - want).abs() > CONSISTENCY_TOL * want.abs().max(1.0) {
                return Err(CliError::Numerical(format!(
                    "model archive is inconsistent: fitted value {i} is {want}, rebuilt model gives {got}"
                )));
            }
        }
        Ok(predictor)
    }
}

impl From<SamplerConfig> for SamplerSettings {
    fn from(s: SamplerConfig) -> Self {
        Self {
            chains: s.chains,
            samples_per_chain: s.samples_per_chain,
            burn_in: s.burn_in,
            seed: s.seed,
            leapfrog_steps: s.leapfrog_steps,
            target_accept: s.target_accept,
        }
    }
}
