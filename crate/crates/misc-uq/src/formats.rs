//! On-disk artifacts.
//!
//! * surrogate: JSON container; knots and grid values are stored as hex
//!   images of the IEEE-754 bits, so a round trip is bit-exact;
//! * posterior: JSON with mean, row-major covariance, noise level and the
//!   multistart report;
//! * observations: CSV `qoi,value`;
//! * bands: CSV `qoi,mode,q05,q95,extrapolated_fraction`;
//! * densities: CSV `abscissa,density`.
//!
//! Every written CSV starts with `# config-sha256=<hash>`; JSON files carry
//! the same hash in a `provenance` field.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use misc_uq_core::bayes::{GaussianPosterior, MapEstimate, ObservationSet, StartReport};
use misc_uq_core::forward::{BandRow, PdfEstimate};
use misc_uq_core::interp::{TensorGrid, TensorInterpolant};
use misc_uq_core::leja::{level_to_knots, KnotFamily, KnotKind};
use misc_uq_core::misc::{FidelityLadder, FidelitySpec, MiscSurrogate};
use misc_uq_core::multiindex::{ExtMultiIndex, MultiIndexSet};

use crate::cache_file::{decode_f64, encode_f64};
use crate::error::{CliError, CliResult};

pub const SURROGATE_FORMAT: &str = "misc-uq-surrogate";
pub const POSTERIOR_FORMAT: &str = "misc-uq-posterior";
pub const FORMAT_VERSION: u32 = 1;

pub fn provenance_line(hash: &str) -> String {
    format!("# config-sha256={hash}\n")
}

/// Hash recorded in the first line of a CSV or text artifact.
pub fn read_provenance_line(text: &str) -> Option<&str> {
    text.lines().next()?.strip_prefix("# config-sha256=")
}

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
    }
    fs::write(path, contents).map_err(CliError::io(format!("writing {}", path.display())))
}

pub fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum FamilyRecord {
    SymmetricLeja { lo: f64, hi: f64 },
    WeightedGaussianLeja { mean: f64, std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FidelityRecord {
    alpha: u32,
    cost_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexRecord {
    alpha: u32,
    beta: Vec<u32>,
    coefficient: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRecord {
    alpha: u32,
    beta: Vec<u32>,
    /// Hex knots per dimension.
    knots: Vec<Vec<String>>,
    /// One string per grid point: the QoI values as concatenated hex.
    values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurrogateFile {
    format: String,
    version: u32,
    provenance: String,
    dim: usize,
    parameters: Vec<String>,
    qois: Vec<String>,
    families: Vec<FamilyRecord>,
    fidelities: Vec<FidelityRecord>,
    index_set: Vec<IndexRecord>,
    grids: Vec<GridRecord>,
}

/// A surrogate together with the parameter names it was built over.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSurrogate {
    pub provenance: String,
    pub parameters: Vec<String>,
    pub surrogate: MiscSurrogate,
}

pub fn surrogate_to_json(s: &MiscSurrogate, parameters: &[String], provenance: &str) -> String {
    let coefficients = s.coefficients();
    let file = SurrogateFile {
        format: SURROGATE_FORMAT.into(),
        version: FORMAT_VERSION,
        provenance: provenance.into(),
        dim: s.dim(),
        parameters: parameters.to_vec(),
        qois: s.qoi_names().to_vec(),
        families: s
            .families()
            .iter()
            .map(|f| match f.kind() {
                KnotKind::SymmetricLeja { lo, hi } => FamilyRecord::SymmetricLeja { lo, hi },
                KnotKind::WeightedGaussianLeja { mean, std } => {
                    FamilyRecord::WeightedGaussianLeja { mean, std }
                }
            })
            .collect(),
        fidelities: s
            .ladder()
            .levels()
            .iter()
            .map(|l| FidelityRecord {
                alpha: l.alpha,
                cost_weight: l.cost_weight,
            })
            .collect(),
        index_set: s
            .index_set()
            .iter()
            .map(|i| IndexRecord {
                alpha: i.alpha,
                beta: i.beta.clone(),
                coefficient: coefficients.get(i).copied().unwrap_or(0),
            })
            .collect(),
        grids: s
            .interpolants()
            .iter()
            .map(|(idx, itp)| GridRecord {
                alpha: idx.alpha,
                beta: idx.beta.clone(),
                knots: itp
                    .grid()
                    .knots()
                    .iter()
                    .map(|k| k.iter().map(|&x| encode_f64(x)).collect())
                    .collect(),
                values: itp
                    .values()
                    .chunks_exact(itp.n_outputs())
                    .map(|row| row.iter().map(|&x| encode_f64(x)).collect())
                    .collect(),
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&file).expect("surrogate serialises");
    out.push('\n');
    out
}

pub fn surrogate_from_json(text: &str, origin: &str) -> CliResult<StoredSurrogate> {
    let bad = |reason: String| CliError::format(origin, reason);
    let file: SurrogateFile =
        serde_json::from_str(text).map_err(|e| bad(format!("not a surrogate file: {e}")))?;
    if file.format != SURROGATE_FORMAT {
        return Err(bad(format!(
            "format is {:?}, expected {SURROGATE_FORMAT:?}",
            file.format
        )));
    }
    if file.version != FORMAT_VERSION {
        return Err(bad(format!(
            "version {} is not supported (expected {FORMAT_VERSION})",
            file.version
        )));
    }
    let dim = file.dim;
    if file.families.len() != dim || file.parameters.len() != dim {
        return Err(bad(format!(
            "dimension {dim} does not match {} families / {} parameters",
            file.families.len(),
            file.parameters.len()
        )));
    }
    let ladder = FidelityLadder::new(
        file.fidelities
            .iter()
            .map(|f| FidelitySpec {
                alpha: f.alpha,
                cost_weight: f.cost_weight,
            })
            .collect(),
    )?;
    let mut entries = Vec::with_capacity(file.index_set.len());
    for r in &file.index_set {
        if r.beta.len() != dim {
            return Err(bad(format!(
                "index with {} levels in a {dim}-dimensional file",
                r.beta.len()
            )));
        }
        entries.push(ExtMultiIndex::new(r.alpha, r.beta.clone())?);
    }
    let index_set = MultiIndexSet::from_entries(dim, entries)?;
    let coefficients = index_set.combination_coefficients();
    for r in &file.index_set {
        let idx = ExtMultiIndex::new(r.alpha, r.beta.clone())?;
        if coefficients.get(&idx).copied().unwrap_or(0) != r.coefficient {
            return Err(bad(format!(
                "stored coefficient of {idx} is inconsistent with the index set"
            )));
        }
    }

    let max_level: Vec<u32> = (0..dim)
        .map(|d| {
            file.grids
                .iter()
                .filter_map(|g| g.beta.get(d).copied())
                .max()
                .unwrap_or(1)
        })
        .collect();
    let mut families = Vec::with_capacity(dim);
    for (rec, &lvl) in file.families.iter().zip(&max_level) {
        let kind = match *rec {
            FamilyRecord::SymmetricLeja { lo, hi } => KnotKind::SymmetricLeja { lo, hi },
            FamilyRecord::WeightedGaussianLeja { mean, std } => KnotKind::WeightedGaussianLeja { mean, std },
        };
        let mut fam = KnotFamily::new(kind)?;
        fam.ensure(level_to_knots(lvl)?);
        families.push(fam);
    }

    let nq = file.qois.len();
    let mut interpolants = BTreeMap::new();
    for g in &file.grids {
        let idx = ExtMultiIndex::new(g.alpha, g.beta.clone())?;
        let knots = g
            .knots
            .iter()
            .map(|k| k.iter().map(|h| decode_f64(h)).collect::<Option<Vec<f64>>>())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad(format!("corrupted knots in grid {idx}")))?;
        let mut values = Vec::with_capacity(g.values.len() * nq);
        for row in &g.values {
            if row.len() != 16 * nq {
                return Err(bad(format!("grid {idx}: value row has the wrong length")));
            }
            for i in 0..nq {
                values.push(
                    decode_f64(&row[16 * i..16 * (i + 1)])
                        .ok_or_else(|| bad(format!("grid {idx}: corrupted value")))?,
                );
            }
        }
        let itp = TensorInterpolant::new(TensorGrid::from_knots(knots)?, nq, values)?;
        if interpolants.insert(idx.clone(), itp).is_some() {
            return Err(bad(format!("grid {idx} appears twice")));
        }
    }
    let surrogate = MiscSurrogate::from_parts(file.qois, families, ladder, index_set, interpolants)?;
    Ok(StoredSurrogate {
        provenance: file.provenance,
        parameters: file.parameters,
        surrogate,
    })
}

pub fn write_surrogate(
    path: &Path,
    s: &MiscSurrogate,
    parameters: &[String],
    provenance: &str,
) -> CliResult<()> {
    write_file(path, &surrogate_to_json(s, parameters, provenance))
}

pub fn read_surrogate(path: &Path) -> CliResult<StoredSurrogate> {
    surrogate_from_json(&read_file(path)?, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StartRecord {
    start: Vec<f64>,
    end: Vec<f64>,
    misfit: Option<f64>,
    penalized: Option<f64>,
    iterations: usize,
    converged: bool,
    failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapRecord {
    misfit: f64,
    penalty_weight: f64,
    evaluations: usize,
    starts: Vec<StartRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PosteriorFile {
    format: String,
    version: u32,
    provenance: String,
    parameters: Vec<String>,
    mean: Vec<f64>,
    covariance: Vec<f64>,
    sigma_meas: f64,
    sigma_floored: bool,
    flat_directions: usize,
    map: MapRecord,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn posterior_to_json(p: &GaussianPosterior, provenance: &str) -> String {
    let file = PosteriorFile {
        format: POSTERIOR_FORMAT.into(),
        version: FORMAT_VERSION,
        provenance: provenance.into(),
        parameters: p.names.clone(),
        mean: p.mean.clone(),
        covariance: p.covariance.clone(),
        sigma_meas: p.sigma_meas,
        sigma_floored: p.sigma_floored,
        flat_directions: p.flat_directions,
        map: MapRecord {
            misfit: p.map.misfit,
            penalty_weight: p.map.penalty_weight,
            evaluations: p.map.evaluations,
            starts: p
                .map
                .starts
                .iter()
                .map(|s| StartRecord {
                    start: s.start.clone(),
                    end: s.end.clone(),
                    misfit: finite(s.misfit),
                    penalized: finite(s.penalized),
                    iterations: s.iterations,
                    converged: s.converged,
                    failed: s.failed,
                })
                .collect(),
        },
    };
    let mut out = serde_json::to_string_pretty(&file).expect("posterior serialises");
    out.push('\n');
    out
}

pub fn posterior_from_json(text: &str, origin: &str) -> CliResult<(GaussianPosterior, String)> {
    let bad = |reason: String| CliError::format(origin, reason);
    let f: PosteriorFile =
        serde_json::from_str(text).map_err(|e| bad(format!("not a posterior file: {e}")))?;
    if f.format != POSTERIOR_FORMAT || f.version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported format {:?} version {}",
            f.format, f.version
        )));
    }
    let n = f.mean.len();
    if f.parameters.len() != n || f.covariance.len() != n * n {
        return Err(bad("mean, covariance and parameter names disagree in size".into()));
    }
    if !(f.sigma_meas > 0.0) || f.covariance.iter().chain(&f.mean).any(|x| !x.is_finite()) {
        return Err(bad("posterior contains non-finite or non-positive entries".into()));
    }
    let map = MapEstimate {
        v_map: f.mean.clone(),
        misfit: f.map.misfit,
        penalty_weight: f.map.penalty_weight,
        evaluations: f.map.evaluations,
        starts: f
            .map
            .starts
            .into_iter()
            .map(|s| StartReport {
                start: s.start,
                end: s.end,
                misfit: s.misfit.unwrap_or(f64::NAN),
                penalized: s.penalized.unwrap_or(f64::NAN),
                iterations: s.iterations,
                converged: s.converged,
                failed: s.failed,
            })
            .collect(),
    };
    Ok((
        GaussianPosterior {
            names: f.parameters,
            mean: f.mean,
            covariance: f.covariance,
            sigma_meas: f.sigma_meas,
            sigma_floored: f.sigma_floored,
            flat_directions: f.flat_directions,
            map,
        },
        f.provenance,
    ))
}

#[derive(Debug, Deserialize)]
struct ObservationRow {
    qoi: String,
    value: f64,
}

pub fn read_observations(path: &Path) -> CliResult<ObservationSet> {
    let text = read_file(path)?;
    parse_observations(&text, &path.display().to_string())
}

pub fn parse_observations(text: &str, origin: &str) -> CliResult<ObservationSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| CliError::format(origin, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["qoi", "value"] {
        return Err(CliError::format(origin, "header must be `qoi,value`"));
    }
    let mut entries = Vec::new();
    for row in rdr.deserialize::<ObservationRow>() {
        let row = row.map_err(|e| CliError::format(origin, e.to_string()))?;
        if entries.iter().any(|(q, _): &(String, f64)| *q == row.qoi) {
            return Err(CliError::format(
                origin,
                format!("duplicate observation of {:?}", row.qoi),
            ));
        }
        entries.push((row.qoi, row.value));
    }
    ObservationSet::new(entries).map_err(|e| CliError::format(origin, e.to_string()))
}

pub fn observations_to_csv(obs: &ObservationSet, provenance: &str) -> String {
    let mut out = provenance_line(provenance);
    out.push_str("qoi,value\n");
    for (q, v) in obs.entries() {
        out.push_str(&format!("{q},{v}\n"));
    }
    out
}

pub fn bands_to_csv(rows: &[BandRow], provenance: &str) -> String {
    let mut out = provenance_line(provenance);
    out.push_str("qoi,mode,q05,q95,extrapolated_fraction\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.qoi, r.mode, r.q05, r.q95, r.extrapolated_fraction
        ));
    }
    out
}

pub fn parse_bands(text: &str, origin: &str) -> CliResult<Vec<BandRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::format(origin, e.to_string()))?;
        let num = |i: usize| -> CliResult<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::format(origin, format!("bad number in column {}", i + 1)))
        };
        rows.push(BandRow {
            qoi: rec.get(0).unwrap_or_default().to_string(),
            mode: num(1)?,
            q05: num(2)?,
            q95: num(3)?,
            extrapolated_fraction: num(4)?,
        });
    }
    Ok(rows)
}

pub fn density_to_csv(pdf: &PdfEstimate, provenance: &str) -> String {
    let mut out = provenance_line(provenance);
    out.push_str("abscissa,density\n");
    match pdf.degenerate {
        Some(v) => out.push_str(&format!("{v},inf\n")),
        None => {
            for (x, d) in pdf.grid.iter().zip(&pdf.density) {
                out.push_str(&format!("{x},{d}\n"));
            }
        }
    }
    out
}
