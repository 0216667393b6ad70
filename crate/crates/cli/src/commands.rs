use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sipr::interpolate::{draw_sample_path, InterpolationPosterior};
use sipr::pipeline::{self, FitConfig, FittedModel, NoiseSpec, NoiseSummary};
use sipr::{Eta, Regime, SamplerConfig};

use crate::archive::ModelArchive;
use crate::error::{CliError, CliResult};
use crate::io::{emit, header_comment, load_scaled, Grid, Probes};

fn csv_bytes(comment: &str, header: &[String], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    let mut buf = format!("# {comment}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

#[allow(clippy::too_many_arguments)]
pub fn interpolate(
    data: &Path,
    target: &str,
    eta: f64,
    probe_file: Option<&Path>,
    grids: &[Grid],
    paths: usize,
    seed: u64,
    out: Option<&PathBuf>,
) -> CliResult<()> {
    let eta_v = Eta::new(eta)?;
    let ds = load_scaled(data, target)?;
    let scaling = ds.scaling.clone().expect("scaled dataset");
    let probes = Probes::resolve(probe_file, grids, &ds.feature_names, &scaling)?;
    let post = InterpolationPosterior::new(&ds.x, &ds.y, eta_v)?;
    let dof = post.dof();
    let stats = probes
        .scaled
        .par_iter()
        .map(|p| match post.pointwise(p) {
            Ok(pp) => Ok((pp.mean, pp.scale, pp.sd)),
            // data on a nullspace polynomial: the posterior is a point mass
            Err(sipr::Error::PolynomialData) => Ok((post.model().evaluate(p)?, 0.0, (dof > 2).then_some(0.0))),
            Err(e) => Err(e),
        })
        .collect::<sipr::Result<Vec<_>>>()?;
    let drawn = (0..paths)
        .into_par_iter()
        .map(|k| draw_sample_path(&ds.x, &ds.y, eta_v, &probes.scaled, seed.wrapping_add(k as u64)))
        .collect::<sipr::Result<Vec<_>>>()?;

    let mut header = ds.feature_names.clone();
    header.extend(["mean", "scale", "sd"].map(String::from));
    header.extend((1..=paths).map(|k| format!("path_{k}")));
    let rows: Vec<Vec<String>> = probes
        .original
        .iter()
        .zip(&stats)
        .enumerate()
        .map(|(i, (p, &(mean, scale, sd)))| {
            let mut r: Vec<String> = p.iter().map(f64::to_string).collect();
            r.push(mean.to_string());
            r.push(scale.to_string());
            r.push(sd.map(|v| v.to_string()).unwrap_or_default());
            r.extend(drawn.iter().map(|path| path[i].to_string()));
            r
        })
        .collect();
    emit(out, &csv_bytes(&header_comment(seed, eta), &header, &rows)?)
}

fn summary(model: &FittedModel<f64>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "regime: {}", model.regime);
    let _ = match model.noise {
        NoiseSummary::Known(v) => writeln!(s, "sigma_y: {v} (known)"),
        NoiseSummary::Sampled { median, q05, q95 } => {
            writeln!(s, "sigma_y: median {median:.6} (90% interval {q05:.6} to {q95:.6})")
        }
        NoiseSummary::Residual(v) => writeln!(s, "sigma_y: {v:.6} (polynomial residual scale)"),
        NoiseSummary::Zero => writeln!(s, "sigma_y: 0 (collapsed onto interpolation)"),
    };
    let post = &model.posterior;
    if let Some(chains) = post.samples.rows().checked_div(post.chain_len) {
        let d = &post.diagnostics;
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "draws: {chains} chains x {} kept", post.chain_len);
        let _ = writeln!(s, "acceptance: {}", list(&d.acceptance));
        let _ = writeln!(s, "step size: {}", list(&d.step_sizes));
        let _ = writeln!(s, "divergent: {}", d.divergent);
        let flag = if d.rhat_flagged() { " (chains disagree)" } else { "" };
        let _ = writeln!(s, "max R-hat: {:.4}{flag}", d.max_rhat);
        if d.diagonal_fallback {
            let _ = writeln!(s, "preconditioner: diagonal fallback");
        }
    } else {
        let _ = writeln!(s, "draws: none, pole found at the maximum posterior");
    }
    if model.regime == Regime::NullspacePole {
        if let Ok(spline) = model.predictor.mean_spline() {
            let c = spline.polynomial_coefficients();
            let terms: Vec<String> = spline
                .indices()
                .iter()
                .zip(&c)
                .map(|(nu, v)| format!("{v:.6} {:?}", nu.exponents()))
                .collect();
            let _ = writeln!(s, "polynomial (scaled inputs): {}", terms.join(", "));
        }
    }
    s
}

pub fn fit(
    data: &Path,
    target: &str,
    eta: f64,
    noise: NoiseSpec<f64>,
    sampler: SamplerConfig,
    model_out: Option<&PathBuf>,
    trace: Option<&PathBuf>,
) -> CliResult<()> {
    let eta = Eta::new(eta)?;
    let ds = load_scaled(data, target)?;
    let config = FitConfig { eta, noise, sampler };
    let model = pipeline::fit(&ds.x, &ds.y, &config)?;
    if let Some(path) = model_out {
        let archive = ModelArchive::from_fit(&model, &ds)?;
        emit(Some(path), archive.to_json()?.as_bytes())?;
    }
    if let Some(path) = trace {
        let mut buf = format!("# {}\n", header_comment(sampler.seed, eta.value())).into_bytes();
        model.posterior.write_trace(&mut buf)?;
        emit(Some(path), &buf)?;
    }
    print!("{}", summary(&model));
    Ok(())
}

pub fn predict(model: &Path, probe_file: Option<&Path>, grids: &[Grid], level: f64, out: Option<&PathBuf>) -> CliResult<()> {
    let archive = ModelArchive::load(model)?;
    let predictor = archive.predictor()?;
    let probes = Probes::resolve(probe_file, grids, &archive.feature_names, &archive.scaling())?;
    let mut band = predictor.band(&probes.scaled, level)?;
    band.probes = probes.original;
    let mut buf = Vec::new();
    let comment = header_comment(archive.sampler.seed, archive.eta);
    band.write_csv(&mut buf, &archive.feature_names, Some(&comment))?;
    emit(out, &buf)
}

#[allow(clippy::too_many_arguments)]
pub fn crossval(
    data: &Path,
    target: &str,
    eta: f64,
    folds: usize,
    noise: NoiseSpec<f64>,
    sampler: SamplerConfig,
    out: Option<&PathBuf>,
) -> CliResult<()> {
    let eta_v = Eta::new(eta)?;
    let ds = load_scaled(data, target)?;
    if folds < 2 || folds > ds.len() {
        return Err(CliError::Invalid(format!("--folds must lie in 2..={}, got {folds}", ds.len())));
    }
    let config = FitConfig { eta: eta_v, noise, sampler };
    let cv = pipeline::crossval(&ds, folds, sampler.seed, &config)?;
    let header: Vec<String> = ["fold", "n_test", "rmse", "regime"].map(String::from).to_vec();
    let mut rows: Vec<Vec<String>> = cv
        .folds
        .iter()
        .enumerate()
        .map(|(f, r)| vec![(f + 1).to_string(), r.test.len().to_string(), r.rmse.to_string(), r.regime.to_string()])
        .collect();
    rows.push(vec!["pooled".into(), ds.len().to_string(), cv.pooled_rmse.to_string(), String::new()]);
    emit(out, &csv_bytes(&header_comment(sampler.seed, eta), &header, &rows)?)
}
