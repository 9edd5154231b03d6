//! The calibrate-then-predict workflow as separate stages.
//!
//! Every stage reads the config, consults the shared evaluation log and
//! writes its artifacts into the output directory. Outputs depend only on
//! the config (and seed), never on timing or lane count, so reruns are
//! byte-identical; run statistics go to the log only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution as _, StandardNormal};

use misc_uq_core::bayes::{self, GaussianPosterior, MapOptions, ObservationSet};
use misc_uq_core::forward::{self, BandRow, SampleSource};
use misc_uq_core::leja::KnotFamily;
use misc_uq_core::misc::{AdaptStep, AdaptiveMisc, MiscSurrogate};
use misc_uq_core::oracle::{builtin_model, Backend, BeamAnalog, BeamQoi, EvalStats, Evaluator, BEAM_ANALOG};
use misc_uq_core::params::{Distribution, ParamSpace};

use crate::cache_file;
use crate::config::{seed_offset, LoadedConfig, SurrogateConfig};
use crate::error::{CliError, CliResult};
use crate::external::ExternalOracle;
use crate::formats::{self, provenance_line};

pub const SURROGATE_FILE: &str = "surrogate.json";
pub const BUILD_REPORT: &str = "build_report.txt";
pub const POSTERIOR_FILE: &str = "posterior.json";
pub const CALIBRATION_TABLE: &str = "calibration_table.csv";
pub const PRIOR_FORWARD_SURROGATE: &str = "surrogate_forward_prior.json";
pub const POSTERIOR_FORWARD_SURROGATE: &str = "surrogate_forward_posterior.json";
pub const PRIOR_BANDS: &str = "bands_prior.csv";
pub const POSTERIOR_BANDS: &str = "bands_posterior.csv";
pub const FORWARD_SUMMARY: &str = "forward_summary.txt";
pub const DENSITY_DIR: &str = "densities";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_BANDS: &str = "report_bands.csv";
pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const CACHE_FILE: &str = "cache.log";

/// Config plus command-line overrides.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: LoadedConfig,
    pub out_dir: PathBuf,
    pub provenance: String,
}

impl Context {
    pub fn new(
        mut cfg: LoadedConfig,
        out: Option<PathBuf>,
        seed: Option<u64>,
        lanes: Option<usize>,
    ) -> CliResult<Self> {
        if let Some(s) = seed {
            cfg.config.seed = s;
        }
        if let Some(l) = lanes {
            if l == 0 {
                return Err(CliError::Config("--lanes must be at least 1".into()));
            }
            cfg.config.oracle.lanes = l;
        }
        let out_dir = out.unwrap_or_else(|| cfg.resolve(&cfg.config.output_dir));
        let provenance = cfg.provenance();
        Ok(Context {
            cfg,
            out_dir,
            provenance,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn cache_path(&self) -> PathBuf {
        match &self.cfg.config.oracle.cache {
            Some(p) => self.cfg.resolve(p),
            None => self.path(CACHE_FILE),
        }
    }

    fn write(&self, name: &str, contents: &str) -> CliResult<()> {
        formats::write_file(&self.path(name), contents)
    }
}

/// Oracle traffic of one command.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStats {
    pub oracle_points: usize,
    pub oracle_batches: usize,
    pub cache_hits: usize,
}

impl RunStats {
    fn absorb(&mut self, s: &EvalStats) {
        self.oracle_points += s.total_backend_points();
        self.oracle_batches += s.backend_batches;
        self.cache_hits += s.cache_hits;
    }

    fn merge(&mut self, o: &RunStats) {
        self.oracle_points += o.oracle_points;
        self.oracle_batches += o.oracle_batches;
        self.cache_hits += o.cache_hits;
    }
}

type DynBackend = Box<dyn Backend + Send + Sync>;

struct Session {
    evaluator: Evaluator<DynBackend>,
    cache_path: PathBuf,
}

impl Session {
    fn open(ctx: &Context) -> CliResult<Self> {
        let oc = &ctx.cfg.config.oracle;
        let backend: DynBackend = match (&oc.builtin, &oc.command) {
            (Some(name), _) => builtin_model(name)?,
            (None, Some(cmd)) => Box::new(ExternalOracle::new(
                cmd.clone(),
                oc.workdir.as_ref().map(|w| ctx.cfg.resolve(w)),
                oc.lanes,
                Duration::from_secs_f64(oc.timeout_secs),
            )),
            (None, None) => return Err(CliError::Config("no oracle configured".into())),
        };
        let cache_path = ctx.cache_path();
        let cache = cache_file::load(&cache_path)?;
        log::info!(
            "evaluation log {} holds {} records",
            cache_path.display(),
            cache.len()
        );
        Ok(Session {
            evaluator: Evaluator::with_cache(backend, cache),
            cache_path,
        })
    }

    /// Persists new records and reports traffic; runs even if the stage failed.
    fn close(mut self) -> CliResult<RunStats> {
        if let Some(dir) = self.cache_path.parent() {
            std::fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
        }
        let journal = self.evaluator.cache_mut().take_journal();
        cache_file::append(&self.cache_path, &journal)?;
        let mut stats = RunStats::default();
        stats.absorb(self.evaluator.stats());
        log::info!(
            "oracle: {} new points in {} batches, {} cache hits",
            stats.oracle_points,
            stats.oracle_batches,
            stats.cache_hits
        );
        Ok(stats)
    }
}

fn with_session<T>(ctx: &Context, f: impl FnOnce(&mut Session) -> CliResult<T>) -> CliResult<(T, RunStats)> {
    let mut session = Session::open(ctx)?;
    let out = f(&mut session);
    let stats = session.close()?;
    Ok((out?, stats))
}

/// Uniform parameters get symmetric Leja knots on their box, Gaussian ones
/// weighted Gaussian Leja knots.
pub fn prior_families(space: &ParamSpace) -> CliResult<Vec<KnotFamily>> {
    space
        .params()
        .iter()
        .map(|p| {
            Ok(match p.distribution {
                Distribution::Uniform { lo, hi } => KnotFamily::symmetric_leja(lo, hi)?,
                Distribution::Gaussian { mean, std } => KnotFamily::weighted_gaussian_leja(mean, std)?,
            })
        })
        .collect()
}

pub fn posterior_families(post: &GaussianPosterior) -> CliResult<Vec<KnotFamily>> {
    post.mean
        .iter()
        .zip(post.std())
        .zip(&post.names)
        .map(|((&m, s), name)| {
            if !(s > 0.0) {
                return Err(CliError::Numerical(format!("posterior std of {name} is zero")));
            }
            Ok(KnotFamily::weighted_gaussian_leja(m, s)?)
        })
        .collect()
}

/// What a surrogate construction did, for the reports.
#[derive(Debug, Clone)]
pub struct BuildInfo {
    pub mode: &'static str,
    pub stop: &'static str,
    pub committed_work: f64,
    pub explored_points: BTreeMap<u32, usize>,
    pub explored_work: f64,
    pub history: Vec<AdaptStep>,
}

fn build_surrogate(
    ctx: &Context,
    session: &mut Session,
    families: Vec<KnotFamily>,
    qois: &[String],
    sc: &SurrogateConfig,
) -> CliResult<(MiscSurrogate, BuildInfo)> {
    let ladder = ctx.cfg.ladder()?;
    let dim = families.len();
    let explored_work = |pts: &BTreeMap<u32, usize>| -> f64 {
        ladder
            .levels()
            .iter()
            .map(|l| l.cost_weight * *pts.get(&l.alpha).unwrap_or(&0) as f64)
            .sum()
    };
    if let Some(set) = sc.fixed_set(dim)? {
        let s = MiscSurrogate::build(&set, &mut session.evaluator, &ladder, families, qois)?;
        let pts = s.points_per_fidelity();
        let info = BuildInfo {
            mode: "fixed",
            stop: "fixed-index-set",
            committed_work: s.work(),
            explored_work: explored_work(&pts),
            explored_points: pts,
            history: Vec::new(),
        };
        return Ok((s, info));
    }
    let mut a = AdaptiveMisc::new(families, ladder.clone(), qois, &mut session.evaluator)?;
    let reason = a.run(&mut session.evaluator, &sc.stop())?;
    let pts = a.explored_points();
    let info = BuildInfo {
        mode: "adaptive",
        stop: reason.as_str(),
        committed_work: a.committed_work(),
        explored_work: explored_work(&pts),
        explored_points: pts,
        history: a.history().to_vec(),
    };
    Ok((a.surrogate(), info))
}

fn describe_build(title: &str, s: &MiscSurrogate, info: &BuildInfo) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[{title}]");
    let _ = writeln!(out, "qois: {}", s.qoi_names().len());
    let _ = writeln!(out, "mode: {}", info.mode);
    let _ = writeln!(out, "stop: {}", info.stop);
    let _ = writeln!(out, "committed work: {}", info.committed_work);
    let _ = writeln!(out, "work spent: {}", info.explored_work);
    let _ = writeln!(out, "evaluations per fidelity:");
    for (alpha, n) in &info.explored_points {
        let _ = writeln!(out, "  alpha {alpha}: {n}");
    }
    let _ = writeln!(out, "surrogate points per fidelity:");
    for (alpha, n) in s.points_per_fidelity() {
        let _ = writeln!(out, "  alpha {alpha}: {n}");
    }
    let _ = writeln!(
        out,
        "index set ({} entries; index coefficient):",
        s.index_set().len()
    );
    for idx in s.index_set().iter() {
        let c = s.coefficients().get(idx).copied().unwrap_or(0);
        let _ = writeln!(out, "  {idx} {c}");
    }
    if !info.history.is_empty() {
        let _ = writeln!(out, "history (index profit surplus delta_work work_after):");
        for h in &info.history {
            let _ = writeln!(
                out,
                "  {} {:.6e} {:.6e} {} {}",
                h.index, h.profit, h.surplus, h.delta_work, h.work_after
            );
        }
    }
    out
}

fn param_names(space: &ParamSpace) -> Vec<String> {
    space.names().map(str::to_string).collect()
}

pub fn cmd_build(ctx: &Context) -> CliResult<RunStats> {
    let space = ctx.cfg.space()?;
    let qois = ctx.cfg.calibration_qois()?;
    let ((s, info), stats) = with_session(ctx, |sess| {
        build_surrogate(ctx, sess, prior_families(&space)?, &qois, &ctx.cfg.config.build)
    })?;
    formats::write_surrogate(
        &ctx.path(SURROGATE_FILE),
        &s,
        &param_names(&space),
        &ctx.provenance,
    )?;
    let mut report = provenance_line(&ctx.provenance);
    report.push_str(&describe_build("build", &s, &info));
    ctx.write(BUILD_REPORT, &report)?;
    log::info!(
        "build: {} ({}), work spent {}",
        info.mode,
        info.stop,
        info.explored_work
    );
    Ok(stats)
}

/// One row of the prior/posterior comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct StatRow {
    pub parameter: String,
    pub stage: &'static str,
    pub mean: f64,
    pub std: f64,
    pub cov: f64,
    /// `support` for bounded priors, `3sigma` otherwise.
    pub interval_kind: &'static str,
    pub lo: f64,
    pub hi: f64,
}

pub fn stat_row(
    parameter: &str,
    stage: &'static str,
    mean: f64,
    std: f64,
    support: Option<(f64, f64)>,
) -> StatRow {
    let (interval_kind, lo, hi) = match support {
        Some((lo, hi)) => ("support", lo, hi),
        None => ("3sigma", mean - 3.0 * std, mean + 3.0 * std),
    };
    StatRow {
        parameter: parameter.to_string(),
        stage,
        mean,
        std,
        cov: std / mean.abs(),
        interval_kind,
        lo,
        hi,
    }
}

pub fn calibration_table(space: &ParamSpace, post: &GaussianPosterior) -> Vec<StatRow> {
    let mut rows = Vec::new();
    for p in space.params() {
        let d = &p.distribution;
        rows.push(stat_row(&p.name, "prior", d.mean(), d.std(), d.bounds()));
    }
    for ((name, &m), s) in post.names.iter().zip(&post.mean).zip(post.std()) {
        rows.push(stat_row(name, "posterior", m, s, None));
    }
    rows
}

fn table_to_csv(rows: &[StatRow], provenance: &str) -> String {
    let mut out = provenance_line(provenance);
    out.push_str("parameter,stage,mean,std,cov,interval,interval_lo,interval_hi\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.parameter, r.stage, r.mean, r.std, r.cov, r.interval_kind, r.lo, r.hi
        );
    }
    out
}

fn table_to_text(rows: &[StatRow]) -> String {
    let mut out = format!(
        "{:<12} {:<9} {:>14} {:>12} {:>8}  {}\n",
        "parameter", "stage", "mean", "std", "CoV", "interval"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<12} {:<9} {:>14.6} {:>12.6} {:>8.4}  [{:.4}; {:.4}] ({})",
            r.parameter, r.stage, r.mean, r.std, r.cov, r.lo, r.hi, r.interval_kind
        );
    }
    out
}

fn check_provenance(ctx: &Context, found: &str, file: &str) {
    if found != ctx.provenance {
        log::warn!("{file} was produced under a different configuration ({found})");
    }
}

pub fn load_observations(ctx: &Context) -> CliResult<ObservationSet> {
    formats::read_observations(&ctx.cfg.resolve(&ctx.cfg.config.calibration.observations))
}

/// Returns the posterior and the human-readable table.
pub fn cmd_calibrate(ctx: &Context) -> CliResult<(GaussianPosterior, String)> {
    let stored = formats::read_surrogate(&ctx.path(SURROGATE_FILE))?;
    check_provenance(ctx, &stored.provenance, SURROGATE_FILE);
    let space = ctx.cfg.space()?;
    if stored.parameters != param_names(&space) {
        return Err(CliError::Config(format!(
            "surrogate parameters {:?} do not match the config",
            stored.parameters
        )));
    }
    let obs = load_observations(ctx)?;
    let c = &ctx.cfg.config.calibration;
    let options = MapOptions {
        n_starts: c.n_starts,
        seed: ctx.cfg.seed(seed_offset::CALIBRATION),
        penalty_scale: c.penalty_scale,
        max_iter: c.max_iter,
        ..MapOptions::default()
    };
    let post = bayes::calibrate(&stored.surrogate, &obs, &space, &options)?;
    if post.sigma_floored {
        log::warn!(
            "observations are fitted exactly; sigma_meas clamped to {}",
            post.sigma_meas
        );
    }
    if post.flat_directions > 0 {
        log::warn!(
            "J^T J is singular in {} direction(s); covariance uses a pseudo-inverse",
            post.flat_directions
        );
    }
    log::info!(
        "MAP {:?}, misfit {:e}, {} surrogate evaluations over {} starts",
        post.mean,
        post.map.misfit,
        post.map.evaluations,
        post.map.starts.len()
    );
    formats::write_file(
        &ctx.path(POSTERIOR_FILE),
        &formats::posterior_to_json(&post, &ctx.provenance),
    )?;
    let rows = calibration_table(&space, &post);
    ctx.write(CALIBRATION_TABLE, &table_to_csv(&rows, &ctx.provenance))?;
    Ok((post, table_to_text(&rows)))
}

/// Forward-stage outcome.
#[derive(Debug, Clone)]
pub struct ForwardOutcome {
    pub prior: Vec<BandRow>,
    pub posterior: Vec<BandRow>,
    pub reduction: f64,
    pub stats: RunStats,
}

pub fn cmd_forward(ctx: &Context) -> CliResult<ForwardOutcome> {
    let (post, prov) =
        formats::posterior_from_json(&formats::read_file(&ctx.path(POSTERIOR_FILE))?, POSTERIOR_FILE)?;
    check_provenance(ctx, &prov, POSTERIOR_FILE);
    let space = ctx.cfg.space()?;
    if post.names != param_names(&space) {
        return Err(CliError::Config(
            "posterior parameters do not match the config".into(),
        ));
    }
    let qois = ctx.cfg.prediction_qois()?;
    let fc = &ctx.cfg.config.forward;
    let names = param_names(&space);

    let ((prior_s, prior_info, post_s, post_info), stats) = with_session(ctx, |sess| {
        let (ps, pi) = build_surrogate(ctx, sess, prior_families(&space)?, &qois, &fc.prior)?;
        let (qs, qi) = build_surrogate(ctx, sess, posterior_families(&post)?, &qois, &fc.posterior)?;
        Ok((ps, pi, qs, qi))
    })?;
    formats::write_surrogate(
        &ctx.path(PRIOR_FORWARD_SURROGATE),
        &prior_s,
        &names,
        &ctx.provenance,
    )?;
    formats::write_surrogate(
        &ctx.path(POSTERIOR_FORWARD_SURROGATE),
        &post_s,
        &names,
        &ctx.provenance,
    )?;

    let prior_push = forward::push_samples(
        &prior_s,
        SampleSource::Prior(&space),
        fc.samples,
        ctx.cfg.seed(seed_offset::FORWARD_PRIOR),
    )?;
    let post_push = forward::push_samples(
        &post_s,
        SampleSource::Posterior(&post),
        fc.samples,
        ctx.cfg.seed(seed_offset::FORWARD_POSTERIOR),
    )?;
    let (prior_rows, prior_pdfs) = forward::band_summary(&prior_push, fc.bandwidth)?;
    let (post_rows, post_pdfs) = forward::band_summary(&post_push, fc.bandwidth)?;
    let reduction = forward::uncertainty_reduction(&prior_rows, &post_rows)?;

    ctx.write(PRIOR_BANDS, &formats::bands_to_csv(&prior_rows, &ctx.provenance))?;
    ctx.write(
        POSTERIOR_BANDS,
        &formats::bands_to_csv(&post_rows, &ctx.provenance),
    )?;
    for q in &fc.density_dumps {
        let j = qois.iter().position(|n| n == q).expect("validated dump name");
        for (tag, pdfs) in [("prior", &prior_pdfs), ("posterior", &post_pdfs)] {
            let name = format!("{DENSITY_DIR}/{tag}_{q}.csv");
            ctx.write(&name, &formats::density_to_csv(&pdfs[j], &ctx.provenance))?;
        }
    }

    let mut summary = provenance_line(&ctx.provenance);
    let _ = writeln!(summary, "samples: {}", fc.samples);
    let _ = writeln!(summary, "prediction qois: {}", qois.len());
    let _ = writeln!(
        summary,
        "prior extrapolated fraction: {}",
        prior_push.extrapolated_fraction()
    );
    let _ = writeln!(
        summary,
        "posterior extrapolated fraction: {}",
        post_push.extrapolated_fraction()
    );
    let mean_width = |rows: &[BandRow]| rows.iter().map(BandRow::width).sum::<f64>() / rows.len() as f64;
    let _ = writeln!(summary, "mean prior band width: {:e}", mean_width(&prior_rows));
    let _ = writeln!(summary, "mean posterior band width: {:e}", mean_width(&post_rows));
    let _ = writeln!(summary, "uncertainty reduction: {reduction:.4}%");
    summary.push_str(&describe_build("prior surrogate", &prior_s, &prior_info));
    summary.push_str(&describe_build("posterior surrogate", &post_s, &post_info));
    ctx.write(FORWARD_SUMMARY, &summary)?;
    if post_push.extrapolated > 0 {
        log::warn!(
            "{} of {} posterior draws fell outside the trusted surrogate range",
            post_push.extrapolated,
            post_push.count
        );
    }
    log::info!("uncertainty reduction {reduction:.2}%");
    Ok(ForwardOutcome {
        prior: prior_rows,
        posterior: post_rows,
        reduction,
        stats,
    })
}

fn body_without_provenance(text: &str) -> &str {
    match formats::read_provenance_line(text) {
        Some(_) => text.split_once('\n').map(|x| x.1).unwrap_or(""),
        None => text,
    }
}

/// Collects whatever artifacts exist into `report.txt` and `report_bands.csv`.
pub fn cmd_report(out_dir: &Path) -> CliResult<String> {
    let read = |name: &str| std::fs::read_to_string(out_dir.join(name)).ok();
    let build = read(BUILD_REPORT);
    let table = read(CALIBRATION_TABLE);
    let fwd = read(FORWARD_SUMMARY);
    let prior = read(PRIOR_BANDS);
    let post = read(POSTERIOR_BANDS);
    if build.is_none() && table.is_none() && fwd.is_none() {
        return Err(CliError::Config(format!(
            "no pipeline artifacts in {} (expected {BUILD_REPORT}, {CALIBRATION_TABLE} or {FORWARD_SUMMARY})",
            out_dir.display()
        )));
    }
    let provenance = [&build, &table, &fwd]
        .into_iter()
        .flatten()
        .find_map(|t| formats::read_provenance_line(t))
        .unwrap_or("unknown")
        .to_string();
    let mut out = provenance_line(&provenance);
    let mut section = |title: &str, body: Option<&String>, missing: &str| {
        let _ = writeln!(out, "== {title} ==");
        match body {
            Some(b) => out.push_str(body_without_provenance(b)),
            None => {
                let _ = writeln!(out, "(missing {missing})");
            }
        }
        out.push('\n');
    };
    section("surrogate build", build.as_ref(), BUILD_REPORT);
    section("calibration", table.as_ref(), CALIBRATION_TABLE);
    section("forward propagation", fwd.as_ref(), FORWARD_SUMMARY);
    std::fs::write(out_dir.join(REPORT_FILE), &out).map_err(CliError::io(format!(
        "writing {}",
        out_dir.join(REPORT_FILE).display()
    )))?;

    if let (Some(a), Some(b)) = (prior, post) {
        let a = formats::parse_bands(&a, PRIOR_BANDS)?;
        let b = formats::parse_bands(&b, POSTERIOR_BANDS)?;
        let mut csv = provenance_line(&provenance);
        csv.push_str("qoi,prior_mode,prior_q05,prior_q95,posterior_mode,posterior_q05,posterior_q95\n");
        for (x, y) in a.iter().zip(&b) {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                x.qoi, x.mode, x.q05, x.q95, y.mode, y.q05, y.q95
            );
        }
        std::fs::write(out_dir.join(REPORT_BANDS), csv).map_err(CliError::io(format!(
            "writing {}",
            out_dir.join(REPORT_BANDS).display()
        )))?;
    }
    Ok(out)
}

/// Synthetic observations of the calibration QoIs at the configured truth.
pub fn cmd_synthesize(ctx: &Context) -> CliResult<(ObservationSet, RunStats)> {
    let syn = ctx
        .cfg
        .config
        .synthesize
        .clone()
        .ok_or_else(|| CliError::Config("the config has no [synthesize] table".into()))?;
    let qois = ctx.cfg.calibration_qois()?;
    let (clean, stats) = if syn.fidelity == 0 {
        if ctx.cfg.config.oracle.builtin.as_deref() != Some(BEAM_ANALOG) {
            return Err(CliError::Config(format!(
                "synthesize.fidelity = 0 (exact model) needs the builtin {BEAM_ANALOG}"
            )));
        }
        let vals = qois
            .iter()
            .map(|q| {
                BeamQoi::parse(q)
                    .map(|q| BeamAnalog::exact(&syn.truth, q))
                    .ok_or_else(|| CliError::Config(format!("{BEAM_ANALOG} has no QoI {q:?}")))
            })
            .collect::<CliResult<Vec<f64>>>()?;
        (vals, RunStats::default())
    } else {
        with_session(ctx, |sess| {
            let mut r = sess
                .evaluator
                .eval_batch(syn.fidelity, std::slice::from_ref(&syn.truth), &qois)?;
            r.pop()
                .expect("one point requested")
                .map_err(|e| CliError::Oracle(format!("evaluation at the truth failed: {e}")))
        })?
    };
    let mut rng = ChaCha20Rng::seed_from_u64(ctx.cfg.seed(seed_offset::SYNTHESIZE));
    let entries = qois
        .into_iter()
        .zip(clean)
        .map(|(q, v)| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let noisy = if syn.relative {
                v * (1.0 + syn.noise * eps)
            } else {
                v + syn.noise * eps
            };
            (q, noisy)
        })
        .collect();
    let obs = ObservationSet::new(entries)?;
    ctx.write(
        OBSERVATIONS_FILE,
        &formats::observations_to_csv(&obs, &ctx.provenance),
    )?;
    Ok((obs, stats))
}

/// Summary of a full `run`.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub posterior: GaussianPosterior,
    pub forward: ForwardOutcome,
    pub stats: RunStats,
}

pub fn cmd_run(ctx: &Context) -> CliResult<RunOutcome> {
    let mut stats = cmd_build(ctx)?;
    let (posterior, table) = cmd_calibrate(ctx)?;
    log::info!("calibration:\n{table}");
    let forward = cmd_forward(ctx)?;
    stats.merge(&forward.stats);
    cmd_report(&ctx.out_dir)?;
    Ok(RunOutcome {
        posterior,
        forward,
        stats,
    })
}
