//! Predictive mean and credible bands.
//!
//! The function uncertainty splits into an interpolation part `σ_t` (from
//! the test function at the probe) and a spline part `σ_s` (from the
//! posterior covariance), added in quadrature; the data uncertainty adds the
//! noise scale on top.

use std::io::Write;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::basis::SubspaceBasis;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2};
use crate::sampler::{Regime, RegressionPosterior};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct CredibleBand<T> {
    pub probes: Vec<Vec<T>>,
    pub mean: Vec<T>,
    pub sigma_s: Vec<T>,
    pub sigma_t: Vec<T>,
    pub sigma_f: Vec<T>,
    pub sigma_d: Vec<T>,
    /// Function-band limits at `level`.
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    /// Student-t degrees of freedom; `None` for a Gaussian band.
    pub dof: Option<usize>,
    pub level: f64,
    /// The σ columns hold standard deviations; when false (`dof ≤ 2`) they
    /// hold t scale parameters instead.
    pub sd_defined: bool,
}

/// Two-sided `level` quantile of a Student t (or standard normal).
pub fn t_quantile(level: f64, dof: Option<usize>) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("credible level must lie in (0, 1), got {level}")));
    }
    let p = 0.5 * (1.0 + level);
    Ok(match dof {
        Some(nu) => StudentsT::new(0.0, 1.0, nu as f64).map_err(|e| Error::InvalidConfig(e.to_string()))?.inverse_cdf(p),
        None => Normal::standard().inverse_cdf(p),
    })
}

impl<T: Scalar> CredibleBand<T> {
    /// Assembles a band from per-probe `(mean, σ_s, σ_t)` and the noise
    /// scale. Half-widths use the t scale `σ_f √((ν−2)/ν)` when the σ's are
    /// standard deviations.
    pub fn assemble(
        probes: Vec<Vec<T>>,
        parts: Vec<(T, T, T)>,
        sigma_y: T,
        dof: Option<usize>,
        level: f64,
    ) -> Result<Self> {
        let q = t_quantile(level, dof)?;
        let sd_defined = dof.is_none_or(|nu| nu > 2);
        let to_scale = match dof {
            Some(nu) if nu > 2 => ((nu as f64 - 2.0) / nu as f64).sqrt(),
            _ => 1.0,
        };
        let half = T::lit(q * to_scale);
        let n = parts.len();
        let mut band = Self {
            probes,
            mean: Vec::with_capacity(n),
            sigma_s: Vec::with_capacity(n),
            sigma_t: Vec::with_capacity(n),
            sigma_f: Vec::with_capacity(n),
            sigma_d: Vec::with_capacity(n),
            lower: Vec::with_capacity(n),
            upper: Vec::with_capacity(n),
            dof,
            level,
            sd_defined,
        };
        for (m, ss, st) in parts {
            let sf2 = ss * ss + st * st;
            let sf = sf2.sqrt();
            band.mean.push(m);
            band.sigma_s.push(ss);
            band.sigma_t.push(st);
            band.sigma_f.push(sf);
            band.sigma_d.push((sf2 + sigma_y * sigma_y).sqrt());
            band.lower.push(m - half * sf);
            band.upper.push(m + half * sf);
        }
        Ok(band)
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// CSV with probe coordinates followed by the band columns.
    pub fn write_csv<W: Write>(&self, mut out: W, feature_names: &[String], comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = feature_names.to_vec();
        header.extend(["mean", "sigma_s", "sigma_t", "sigma_f", "sigma_d", "lower", "upper"].map(String::from));
        w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.probes[i].iter().map(|v| v.to_string()).collect();
            for v in [
                self.mean[i],
                self.sigma_s[i],
                self.sigma_t[i],
                self.sigma_f[i],
                self.sigma_d[i],
                self.lower[i],
                self.upper[i],
            ] {
                rec.push(v.to_string());
            }
            w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn require_normal<T>(posterior: &RegressionPosterior<T>) -> Result<()> {
    if posterior.regime != Regime::Normal {
        return Err(Error::WrongRegime { expected: Regime::Normal.as_str(), actual: posterior.regime.as_str() });
    }
    Ok(())
}

/// `f_{ĥ*}(x_t)`.
pub fn predictive_mean<T: Scalar>(posterior: &RegressionPosterior<T>, basis: &SubspaceBasis<T>, xt: &[T]) -> Result<T> {
    require_normal(posterior)?;
    Ok(dot(&basis.eval_functional(xt)?, &posterior.h_hat))
}

/// Per-probe `(mean, σ_s, σ_t)` from posterior moments; shared by fitted
/// posteriors and archived summaries.
pub fn band_parts<T: Scalar>(
    basis: &SubspaceBasis<T>,
    h_hat: &[T],
    sigma_hat: &crate::linalg::Matrix<T>,
    probe: &[T],
) -> Result<(T, T, T)> {
    let nu = basis.nh();
    let e = basis.eval_functional(probe)?;
    let mean = dot(&e, h_hat);
    let sigma_s = sigma_hat.quad_form(&e).max(T::zero()).sqrt();
    let norm_h = norm2(&h_hat[..nu]);
    let sigma_t = match basis.system().test_function(probe) {
        Err(Error::CoincidesWithDatapoint(_)) => T::zero(),
        Err(e) => return Err(e),
        Ok(tf) => {
            let ratio = norm_h / tf.frame_norm_sq().sqrt();
            // t scale when the variance does not exist
            let denom = if nu > 2 { nu - 2 } else { nu.max(1) };
            ratio / T::from_usize_lossy(denom).sqrt()
        }
    };
    Ok((mean, sigma_s, sigma_t))
}

/// Three-tier credible band at `probes`. `sigma_y` is the noise scale used
/// for `σ_d`.
pub fn credible_band<T: Scalar>(
    posterior: &RegressionPosterior<T>,
    basis: &SubspaceBasis<T>,
    sigma_y: T,
    probes: &[Vec<T>],
    level: f64,
) -> Result<CredibleBand<T>> {
    require_normal(posterior)?;
    let parts = probes
        .par_iter()
        .map(|p| band_parts(basis, &posterior.h_hat, &posterior.sigma_hat, p))
        .collect::<Result<Vec<_>>>()?;
    CredibleBand::assemble(probes.to_vec(), parts, sigma_y, Some(basis.nh()), level)
}
