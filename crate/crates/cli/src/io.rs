//! Input datasets, probe sets and output files.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sipr::data::{load_csv, minmax_scale, FeatureScaling};
use sipr::Dataset64;

use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Comment line leading every CSV we write.
pub fn header_comment(seed: u64, eta: f64) -> String {
    format!("sipr {VERSION} seed={seed} eta={eta}")
}

/// Reads `path` and min-max scales its features.
pub fn load_scaled(path: &Path, target: &str) -> CliResult<Dataset64> {
    let ds = load_csv::<f64>(path, target)?;
    Ok(minmax_scale(&ds)?)
}

/// `lo:hi:n` evenly spaced values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        (0..self.n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64).collect()
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, n] = parts[..] else {
            return Err(format!("expected LO:HI:N, got '{s}'"));
        };
        let num = |v: &str| v.trim().parse::<f64>().ok().filter(|x| x.is_finite());
        let (Some(lo), Some(hi)) = (num(lo), num(hi)) else {
            return Err(format!("grid bounds must be finite numbers, got '{s}'"));
        };
        let n: usize = n.trim().parse().map_err(|_| format!("grid size must be a positive integer, got '{n}'"))?;
        if n == 0 {
            return Err("grid size must be positive".into());
        }
        Ok(Grid { lo, hi, n })
    }
}

/// Probe locations in original units and in the model's scaled units.
pub struct Probes {
    pub original: Vec<Vec<f64>>,
    pub scaled: Vec<Vec<f64>>,
}

impl Probes {
    /// From a headed CSV holding (at least) the named feature columns, or
    /// the Cartesian product of one grid per feature.
    pub fn resolve(
        file: Option<&Path>,
        grids: &[Grid],
        names: &[String],
        scaling: &FeatureScaling<f64>,
    ) -> CliResult<Self> {
        let original = match (file, grids.is_empty()) {
            (Some(path), true) => read_probes(path, names)?,
            (None, false) => {
                if grids.len() != names.len() {
                    return Err(CliError::Invalid(format!(
                        "need one --grid per feature ({}), got {}",
                        names.len(),
                        grids.len()
                    )));
                }
                cartesian(grids)
            }
            (Some(_), false) => return Err(CliError::Invalid("use either --probes or --grid, not both".into())),
            (None, true) => return Err(CliError::Invalid("no probes given; use --probes or --grid".into())),
        };
        let scaled = original.iter().map(|p| scaling.apply(p)).collect();
        Ok(Self { original, scaled })
    }
}

fn cartesian(grids: &[Grid]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for g in grids {
        let vals = g.values();
        out = out
            .into_iter()
            .flat_map(|prefix| {
                vals.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

fn read_probes(path: &Path, names: &[String]) -> CliResult<Vec<Vec<f64>>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers()?.clone();
    let cols = names
        .iter()
        .map(|name| {
            headers.iter().position(|h| h == name).ok_or_else(|| {
                CliError::Invalid(format!("probe file {} has no column '{name}'", path.display()))
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let p = cols
            .iter()
            .zip(names)
            .map(|(&c, name)| {
                let raw = rec.get(c).unwrap_or("");
                raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    CliError::Invalid(format!("probe row {}, column '{name}': cannot read '{raw}' as a number", row + 1))
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        out.push(p);
    }
    if out.is_empty() {
        return Err(CliError::Invalid(format!("probe file {} has no rows", path.display())));
    }
    Ok(out)
}

/// Writes to `path` through a temporary file in the same directory, or to
/// stdout.
pub fn emit(path: Option<&PathBuf>, bytes: &[u8]) -> CliResult<()> {
    match path {
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
        }
        Some(p) => {
            let dir = match p.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
            tmp.write_all(bytes)?;
            tmp.persist(p).map_err(|e| CliError::Io(format!("{}: {}", p.display(), e.error)))?;
        }
    }
    Ok(())
}
