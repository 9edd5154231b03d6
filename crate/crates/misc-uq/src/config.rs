//! Pipeline configuration (TOML).
//!
//! Relative paths are resolved against the directory holding the config
//! file. QoI lists accept brace ranges: `"e{1..120}"` expands to
//! `e1, e2, ..., e120`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use misc_uq_core::misc::{FidelityLadder, FidelitySpec, StopCriteria};
use misc_uq_core::multiindex::{ExtMultiIndex, MultiIndexSet};
use misc_uq_core::params::{Distribution, ParamSpace, ParamSpec};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Base seed; every stage derives its own stream from it.
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub parameters: Vec<ParameterConfig>,
    pub fidelities: Vec<FidelityConfig>,
    pub oracle: OracleConfig,
    pub qois: QoiConfig,
    #[serde(default)]
    pub build: SurrogateConfig,
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub forward: ForwardConfig,
    #[serde(default)]
    pub synthesize: Option<SynthesizeConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "distribution", rename_all = "lowercase")]
pub enum ParameterConfig {
    Uniform {
        name: String,
        lo: f64,
        hi: f64,
        #[serde(default)]
        label: Option<String>,
    },
    Gaussian {
        name: String,
        mean: f64,
        std: f64,
        #[serde(default)]
        label: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityConfig {
    pub alpha: u32,
    pub cost_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Name of a builtin model, e.g. `beam-analog`.
    #[serde(default)]
    pub builtin: Option<String>,
    /// Program and arguments of an external oracle.
    #[serde(default)]
    pub command: Option<Vec<String>>,
    #[serde(default)]
    pub workdir: Option<PathBuf>,
    #[serde(default = "default_lanes")]
    pub lanes: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Evaluation log; defaults to `cache.log` in the output directory.
    #[serde(default)]
    pub cache: Option<PathBuf>,
}

fn default_lanes() -> usize {
    1
}

fn default_timeout() -> f64 {
    3600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QoiConfig {
    pub calibration: Vec<String>,
    pub prediction: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    #[serde(default = "default_max_work")]
    pub max_work: f64,
    #[serde(default)]
    pub max_candidates: Option<usize>,
    #[serde(default = "default_profit_floor")]
    pub profit_floor: f64,
    #[serde(default = "default_max_level")]
    pub max_level: u32,
    /// Fixed index set as `[alpha, beta_1, ..., beta_N]` rows; disables
    /// adaptivity.
    #[serde(default)]
    pub index_set: Option<Vec<Vec<u32>>>,
}

fn default_max_work() -> f64 {
    200.0
}

fn default_profit_floor() -> f64 {
    1e-8
}

fn default_max_level() -> u32 {
    8
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            max_work: default_max_work(),
            max_candidates: None,
            profit_floor: default_profit_floor(),
            max_level: default_max_level(),
            index_set: None,
        }
    }
}

impl SurrogateConfig {
    pub fn stop(&self) -> StopCriteria {
        StopCriteria {
            max_work: self.max_work,
            max_candidates: self.max_candidates.unwrap_or(usize::MAX),
            profit_floor: self.profit_floor,
            max_level: self.max_level,
        }
    }

    pub fn fixed_set(&self, dim: usize) -> CliResult<Option<MultiIndexSet>> {
        let Some(rows) = &self.index_set else {
            return Ok(None);
        };
        let mut entries = Vec::with_capacity(rows.len());
        for row in rows {
            if row.len() != dim + 1 {
                return Err(CliError::Config(format!(
                    "index set row {row:?} needs {} entries (alpha and one level per parameter)",
                    dim + 1
                )));
            }
            entries.push(ExtMultiIndex::new(row[0], row[1..].to_vec())?);
        }
        Ok(Some(MultiIndexSet::from_entries(dim, entries)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub observations: PathBuf,
    #[serde(default = "default_starts")]
    pub n_starts: usize,
    #[serde(default = "default_penalty")]
    pub penalty_scale: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_starts() -> usize {
    20
}

fn default_penalty() -> f64 {
    1e3
}

fn default_max_iter() -> usize {
    5000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Fixed KDE bandwidth; Silverman's rule when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    /// Surrogate on the prior box (uniform knots).
    #[serde(default)]
    pub prior: SurrogateConfig,
    /// Surrogate on Gaussian knots centred at the posterior.
    #[serde(default)]
    pub posterior: SurrogateConfig,
    /// Prediction QoIs whose densities are written out.
    #[serde(default)]
    pub density_dumps: Vec<String>,
}

fn default_samples() -> usize {
    misc_uq_core::forward::DEFAULT_SAMPLES
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig {
            samples: default_samples(),
            bandwidth: None,
            prior: SurrogateConfig::default(),
            posterior: SurrogateConfig::default(),
            density_dumps: Vec::new(),
        }
    }
}

/// Synthetic observations `f(v*) (1 + noise eps)` (relative) or
/// `f(v*) + noise eps` (absolute), `eps ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeConfig {
    pub truth: Vec<f64>,
    pub noise: f64,
    #[serde(default = "default_relative")]
    pub relative: bool,
    /// Oracle fidelity sampled; the builtin exact model when `0`.
    #[serde(default)]
    pub fidelity: u32,
}

fn default_relative() -> bool {
    true
}

/// Offsets added to the base seed per stage.
pub mod seed_offset {
    pub const CALIBRATION: u64 = 0;
    pub const FORWARD_PRIOR: u64 = 1;
    pub const FORWARD_POSTERIOR: u64 = 2;
    pub const SYNTHESIZE: u64 = 3;
}

/// Expands `prefix{a..b}suffix` into the inclusive integer range; other
/// names pass through.
pub fn expand_names(patterns: &[String]) -> CliResult<Vec<String>> {
    let mut out = Vec::new();
    for p in patterns {
        match (p.find('{'), p.find('}')) {
            (Some(open), Some(close)) if open < close => {
                let inner = &p[open + 1..close];
                let (a, b) = inner
                    .split_once("..")
                    .ok_or_else(|| CliError::Config(format!("bad range in QoI pattern {p:?}")))?;
                let parse = |s: &str| {
                    s.trim()
                        .parse::<i64>()
                        .map_err(|_| CliError::Config(format!("bad range bound in QoI pattern {p:?}")))
                };
                let (a, b) = (parse(a)?, parse(b)?);
                if a > b {
                    return Err(CliError::Config(format!("empty range in QoI pattern {p:?}")));
                }
                for i in a..=b {
                    out.push(format!("{}{}{}", &p[..open], i, &p[close + 1..]));
                }
            }
            (None, None) => out.push(p.clone()),
            _ => {
                return Err(CliError::Config(format!(
                    "unbalanced braces in QoI pattern {p:?}"
                )))
            }
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for name in &out {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(CliError::Config(format!(
                "QoI name {name:?} must be non-empty without whitespace"
            )));
        }
        if !seen.insert(name) {
            return Err(CliError::Config(format!("duplicate QoI {name:?}")));
        }
    }
    Ok(out)
}

/// A parsed config plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base_dir)
    }

    pub fn from_str(text: &str, base_dir: PathBuf) -> CliResult<Self> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        let loaded = LoadedConfig { config, base_dir };
        loaded.validate()?;
        Ok(loaded)
    }

    fn validate(&self) -> CliResult<()> {
        let c = &self.config;
        self.space()?;
        self.ladder()?;
        match (&c.oracle.builtin, &c.oracle.command) {
            (Some(_), None) => {}
            (None, Some(cmd)) if !cmd.is_empty() => {}
            _ => {
                return Err(CliError::Config(
                    "oracle needs exactly one of `builtin` or a non-empty `command`".into(),
                ))
            }
        }
        if c.oracle.lanes == 0 {
            return Err(CliError::Config("oracle.lanes must be at least 1".into()));
        }
        if !(c.oracle.timeout_secs > 0.0) {
            return Err(CliError::Config("oracle.timeout_secs must be positive".into()));
        }
        if self.calibration_qois()?.is_empty() || self.prediction_qois()?.is_empty() {
            return Err(CliError::Config(
                "qois.calibration and qois.prediction must be non-empty".into(),
            ));
        }
        if c.forward.samples < 2 {
            return Err(CliError::Config("forward.samples must be at least 2".into()));
        }
        if c.calibration.n_starts == 0 {
            return Err(CliError::Config("calibration.n_starts must be at least 1".into()));
        }
        let dim = c.parameters.len();
        for s in [&c.build, &c.forward.prior, &c.forward.posterior] {
            s.fixed_set(dim)?;
        }
        if let Some(s) = &c.synthesize {
            if s.truth.len() != dim {
                return Err(CliError::Config(format!(
                    "synthesize.truth has {} entries, expected {dim}",
                    s.truth.len()
                )));
            }
            if !(s.noise >= 0.0) {
                return Err(CliError::Config("synthesize.noise must be non-negative".into()));
            }
        }
        let pred = self.prediction_qois()?;
        if let Some(q) = c.forward.density_dumps.iter().find(|q| !pred.contains(q)) {
            return Err(CliError::Config(format!(
                "density dump {q:?} is not a prediction QoI"
            )));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn space(&self) -> CliResult<ParamSpace> {
        let specs = self
            .config
            .parameters
            .iter()
            .map(|p| match p {
                ParameterConfig::Uniform { name, lo, hi, label } => {
                    let s = ParamSpec::new(name.clone(), Distribution::Uniform { lo: *lo, hi: *hi });
                    match label {
                        Some(l) => s.with_label(l.clone()),
                        None => s,
                    }
                }
                ParameterConfig::Gaussian {
                    name,
                    mean,
                    std,
                    label,
                } => {
                    let s = ParamSpec::new(
                        name.clone(),
                        Distribution::Gaussian {
                            mean: *mean,
                            std: *std,
                        },
                    );
                    match label {
                        Some(l) => s.with_label(l.clone()),
                        None => s,
                    }
                }
            })
            .collect();
        Ok(ParamSpace::new(specs)?)
    }

    pub fn ladder(&self) -> CliResult<FidelityLadder> {
        Ok(FidelityLadder::new(
            self.config
                .fidelities
                .iter()
                .map(|f| FidelitySpec {
                    alpha: f.alpha,
                    cost_weight: f.cost_weight,
                })
                .collect(),
        )?)
    }

    pub fn calibration_qois(&self) -> CliResult<Vec<String>> {
        expand_names(&self.config.qois.calibration)
    }

    pub fn prediction_qois(&self) -> CliResult<Vec<String>> {
        expand_names(&self.config.qois.prediction)
    }

    pub fn seed(&self, offset: u64) -> u64 {
        self.config.seed.wrapping_add(offset)
    }

    /// SHA-256 of the config as JSON, with fields that cannot change any
    /// output (lanes, timeout, output directory) cleared.
    pub fn provenance(&self) -> String {
        let mut c = self.config.clone();
        c.oracle.lanes = 0;
        c.oracle.timeout_secs = 0.0;
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
