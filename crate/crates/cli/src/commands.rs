use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use mesa_core::baselines::{coarray_covariance, rootmusic_direct, ss_music};
use mesa_core::crb::{crb_freqs, CrbRequest};
use mesa_core::harness::{self, matched_errors, preset, preset_names, ExperimentSpec, Method};
use mesa_core::linalg::C64;
use mesa_core::mesa::{solve, SolverConfig};
use mesa_core::signal::{sample_covariance, synthesize};
use mesa_core::toeplitz::{numerical_rank, vandermonde_decompose};
use mesa_core::{ArrayGeometry, Correlation, Error, SnapshotSet, SourceModel, ToeplitzParam};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::snapshot;
use crate::{Cli, Command, CrbArgs, DecomposeArgs, EstimateArgs, ExperimentArgs, Format, ModelArgs, SimulateArgs, SolverArgs};

/// Relative eigenvalue threshold for the default decomposition order.
const RANK_TOL: f64 = 1e-6;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or unreadable/ill-shaped input; exit code 2.
    Usage(String),
    /// The computation itself failed; exit code 3.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Domain(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Usage(msg.into()))
}

/// Dispatches one subcommand, writing its report to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Estimate(a) => estimate(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Crb(a) => crb(a, out),
        Command::Experiment(a) => experiment(a, out),
        Command::Decompose(a) => decompose(a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::Usage(format!("writing output: {e}")))
}

/// Shortest round-trip form, in exponent notation for very small or large
/// magnitudes.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e6).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(",")
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize") + "\n"
}

fn split_kv(s: &str) -> Result<(&str, &str)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim(), v.trim())),
        _ => usage(format!("expected KEY=VALUE, got '{s}'")),
    }
}

pub fn read_snapshots(path: &Path) -> Result<SnapshotSet> {
    let f = File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
    snapshot::read(BufReader::new(f)).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- estimate

/// Applies the explicit solver flags, then each `--set key=value`.
pub fn solver_config(k: usize, a: &SolverArgs) -> Result<SolverConfig> {
    let mut cfg = SolverConfig::with_k(k);
    if let Some(mu) = a.mu {
        cfg.mu = mu;
    }
    if let Some(n) = a.mm_max {
        cfg.mm_max_iters = n;
    }
    if let Some(n) = a.admm_max {
        cfg.admm_max_iters = n;
    }
    if let Some(t) = a.mm_tol {
        cfg.mm_tol = t;
    }
    for s in &a.set {
        let (key, value) = split_kv(s)?;
        let mut table = toml::Table::try_from(&cfg).expect("solver config serializes");
        if !table.contains_key(key) {
            return usage(format!("unknown solver field '{key}' (known: {})", table.keys().cloned().collect::<Vec<_>>().join(", ")));
        }
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .ok_or_else(|| CliError::Usage(format!("cannot parse value '{value}' for {key}")))?;
        table.insert(key.to_string(), parsed);
        cfg = table.try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("{key}={value}: {}", e.message())))?;
    }
    cfg.k = k;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
pub struct EstimateReport {
    pub method: String,
    pub k: usize,
    pub freqs: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub powers: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nll_trace: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mm_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub admm_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_deficient: Option<bool>,
    /// Matched errors against the truth block, when the file carries one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_max_error: Option<f64>,
}

impl EstimateReport {
    fn to_text(&self) -> String {
        let mut s = format!("method={}\nk={}\nfreqs={}\n", self.method, self.k, join(&self.freqs));
        if let Some(p) = &self.powers {
            writeln!(s, "powers={}", join(p)).unwrap();
        }
        if let Some(v) = self.sigma {
            writeln!(s, "sigma={}", num(v)).unwrap();
        }
        if let Some(t) = &self.nll_trace {
            writeln!(s, "nll_trace={}", join(t)).unwrap();
        }
        if let Some(n) = self.mm_iters {
            writeln!(s, "mm_iters={n}").unwrap();
        }
        if let Some(n) = self.admm_iters {
            writeln!(s, "admm_iters={n}").unwrap();
        }
        if let Some(c) = self.converged {
            writeln!(s, "converged={c}").unwrap();
        }
        if let Some(r) = self.rank_deficient {
            writeln!(s, "rank_deficient={r}").unwrap();
        }
        if let Some(v) = self.truth_rmse {
            writeln!(s, "truth_rmse={}", num(v)).unwrap();
        }
        if let Some(v) = self.truth_max_error {
            writeln!(s, "truth_max_error={}", num(v)).unwrap();
        }
        s
    }
}

pub fn estimate_report(data: &SnapshotSet, k: usize, method: Method, solver: &SolverArgs) -> Result<EstimateReport> {
    let mut rep = EstimateReport {
        method: method.name().into(),
        k,
        freqs: vec![],
        powers: None,
        sigma: None,
        nll_trace: None,
        mm_iters: None,
        admm_iters: None,
        converged: None,
        rank_deficient: None,
        truth_rmse: None,
        truth_max_error: None,
    };
    match method {
        Method::Mesa | Method::Mesa1 => {
            let mut cfg = solver_config(k, solver)?;
            cfg.single_mm_iteration = method == Method::Mesa1;
            let r = solve(data, &cfg)?;
            if !r.converged {
                log::warn!("solver stopped without meeting its tolerances");
            }
            rep.freqs = r.estimate.freqs;
            rep.powers = r.estimate.powers;
            rep.sigma = r.estimate.sigma;
            rep.nll_trace = Some(r.nll_trace);
            rep.mm_iters = Some(r.mm_iters);
            rep.admm_iters = Some(r.total_admm_iters);
            rep.converged = Some(r.converged);
            rep.rank_deficient = Some(r.rank_deficient);
        }
        Method::SsMusic => rep.freqs = ss_music(&sample_covariance(data), &data.geometry, k)?.freqs,
        Method::Rootmusic => {
            if !data.geometry.is_ula() {
                return usage("rootmusic needs a uniform array; use ss_music for sparse geometries");
            }
            rep.freqs = rootmusic_direct(&sample_covariance(data), k)?;
        }
    }
    if let Some(t) = &data.truth {
        if rep.freqs.len() <= t.sources.k() {
            let errs = matched_errors(&rep.freqs, &t.sources.freqs)?;
            rep.truth_rmse = Some((errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt());
            rep.truth_max_error = Some(errs.iter().cloned().fold(0.0, f64::max));
        }
    }
    Ok(rep)
}

fn estimate(a: &EstimateArgs, out: &mut dyn Write) -> Result<()> {
    let method = Method::parse(&a.method)?;
    let mut data = read_snapshots(&a.input)?;
    if let Some(g) = &a.geometry {
        let g = ArrayGeometry::parse(g)?;
        if g.m() != data.geometry.m() {
            return usage(format!("geometry has {} sensors, file has {}", g.m(), data.geometry.m()));
        }
        data.geometry = g;
    }
    let rep = estimate_report(&data, a.k, method, &a.solver)?;
    let text = match a.format {
        Format::Text => rep.to_text(),
        Format::Json => to_json(&rep),
    };
    match &a.out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", p.display()))),
        None => emit(out, &text),
    }
}

// ---------------------------------------------------------------- simulate

fn parse_corr(s: &str) -> Result<Correlation> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || CliError::Usage(format!("correlation '{s}' is not I:J:MODULUS[:PHASE]"));
    if !(3..=4).contains(&parts.len()) {
        return Err(bad());
    }
    Ok(Correlation {
        i: parts[0].trim().parse().map_err(|_| bad())?,
        j: parts[1].trim().parse().map_err(|_| bad())?,
        modulus: parts[2].trim().parse().map_err(|_| bad())?,
        phase: parts.get(3).map_or(Ok(0.0), |p| p.trim().parse()).map_err(|_| bad())?,
    })
}

/// Geometry, source model and noise power described by the model flags.
pub fn model_from_args(a: &ModelArgs) -> Result<(ArrayGeometry, SourceModel, f64)> {
    let g = ArrayGeometry::parse(&a.geometry)?;
    let powers = if a.powers.is_empty() { vec![1.0; a.freqs.len()] } else { a.powers.clone() };
    let corr = a.corr.iter().map(|c| parse_corr(c)).collect::<Result<Vec<_>>>()?;
    let model = SourceModel::with_correlations(a.freqs.clone(), powers, corr)?;
    let sigma = match (a.sigma, a.snr_db) {
        (Some(s), None) => s,
        (None, Some(snr)) => model.powers.iter().sum::<f64>() / model.k() as f64 * 10f64.powf(-snr / 10.0),
        (None, None) => return usage("give the noise level with --sigma or --snr-db"),
        (Some(_), Some(_)) => unreachable!("clap rejects both"),
    };
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return usage(format!("noise power {sigma} must be finite and nonnegative"));
    }
    if a.snapshots == 0 {
        return usage("need at least one snapshot");
    }
    Ok((g, model, sigma))
}

fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let (g, model, sigma) = model_from_args(&a.model)?;
    let data = synthesize(&model, sigma, &g, a.model.snapshots, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let f = File::create(&a.out).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", a.out.display())))?;
    snapshot::write(BufWriter::new(f), &data).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", a.out.display())))?;
    emit(
        out,
        &format!("wrote {}: M={} N={} L={} K={} sigma={}\n", a.out.display(), g.m(), g.aperture_n(), data.snapshots(), model.k(), num(sigma)),
    )
}

// ---------------------------------------------------------------- crb

#[derive(Debug, Serialize)]
pub struct CrbReport {
    pub freqs: Vec<f64>,
    /// Standard-deviation bound per frequency.
    pub std: Vec<f64>,
    pub rmse: f64,
    pub condition: f64,
}

fn crb(a: &CrbArgs, out: &mut dyn Write) -> Result<()> {
    let (g, model, sigma) = model_from_args(&a.model)?;
    let b = crb_freqs(&CrbRequest::from_model(&model, sigma, &g, a.model.snapshots)?)?;
    let rep = CrbReport { freqs: model.freqs, std: b.variances.iter().map(|v| v.sqrt()).collect(), rmse: b.rmse(), condition: b.condition };
    let text = match a.format {
        Format::Text => format!("freqs={}\nstd={}\nrmse={}\ncondition={:e}\n", join(&rep.freqs), join(&rep.std), num(rep.rmse), rep.condition),
        Format::Json => to_json(&rep),
    };
    emit(out, &text)
}

// ---------------------------------------------------------------- experiment

/// Resolves a preset name or TOML path and applies the overrides.
pub fn experiment_spec(a: &ExperimentArgs) -> Result<ExperimentSpec> {
    let name = a.preset.as_deref().unwrap_or_default();
    let path = Path::new(name);
    let mut spec = if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {name}: {e}")))?;
        ExperimentSpec::from_toml(&text)?
    } else {
        preset(name).ok_or_else(|| CliError::Usage(format!("unknown preset '{name}'; available: {}", preset_names().join(", "))))?
    };
    if let Some(n) = a.runs {
        spec = spec.with_override("n_runs", &n.to_string())?;
    }
    if let Some(s) = a.seed {
        spec = spec.with_override("base_seed", &s.to_string())?;
    }
    if !a.methods.is_empty() {
        let names = a.methods.iter().map(|m| Method::parse(m.trim()).map(|m| format!("\"{m}\""))).collect::<mesa_core::Result<Vec<_>>>()?;
        spec = spec.with_override("methods", &format!("[{}]", names.join(",")))?;
    }
    for s in &a.set {
        let (key, value) = split_kv(s)?;
        spec = spec.with_override(key, value)?;
    }
    Ok(spec)
}

fn experiment(a: &ExperimentArgs, out: &mut dyn Write) -> Result<()> {
    if a.list {
        let mut s = String::new();
        for p in harness::presets() {
            writeln!(s, "{}\t{} over {} ({} points), M={}, L={}", p.name, p.sweep.variable.name(), fmt_values(&p.sweep.values), p.sweep.values.len(), p.geometry.m(), p.snapshots).unwrap();
        }
        return emit(out, &s);
    }
    let spec = experiment_spec(a)?;
    if a.dry_run {
        return emit(out, &spec.to_toml());
    }
    let summary = harness::run(&spec)?;
    if let Some(dir) = &a.out {
        let io = |e: std::io::Error| CliError::Usage(format!("cannot write to {}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        let csv = dir.join(format!("{}.csv", spec.name));
        summary.write_csv(BufWriter::new(File::create(&csv).map_err(io)?))?;
        let json = dir.join(format!("{}_runs.json", spec.name));
        summary.write_json(BufWriter::new(File::create(&json).map_err(io)?))?;
        log::info!("wrote {} and {}", csv.display(), json.display());
    }
    emit(out, &summary.to_csv())
}

fn fmt_values(v: &[f64]) -> String {
    match v {
        [] => String::new(),
        [x] => x.to_string(),
        [a, .., b] => format!("{a}..{b}"),
    }
}

// ---------------------------------------------------------------- decompose

#[derive(Debug, Serialize)]
pub struct DecomposeReport {
    pub n: usize,
    pub numerical_rank: usize,
    pub freqs: Vec<f64>,
    pub powers: Vec<f64>,
}

fn decompose(a: &DecomposeArgs, out: &mut dyn Write) -> Result<()> {
    let t = match &a.input {
        Some(p) => {
            let data = read_snapshots(p)?;
            coarray_covariance(&sample_covariance(&data), &data.geometry)?
        }
        None => {
            let col = a
                .lags
                .iter()
                .map(|s| s.trim().parse::<C64>().map_err(|_| CliError::Usage(format!("cannot parse lag '{s}'"))))
                .collect::<Result<Vec<_>>>()?;
            if col.len() < 2 {
                return usage("need at least two lags");
            }
            ToeplitzParam::from_first_column(&col)
        }
    };
    let rank = numerical_rank(&t, RANK_TOL)?;
    let k = match a.k {
        Some(k) => k,
        None if rank == 0 => return Err(CliError::Numeric("Toeplitz matrix has no positive eigenvalues".into())),
        None if rank >= t.n() => return Err(CliError::Numeric(format!("Toeplitz matrix has full rank {rank}; pass --k"))),
        None => rank,
    };
    let (freqs, powers) = vandermonde_decompose(&t, k)?;
    let rep = DecomposeReport { n: t.n(), numerical_rank: rank, freqs, powers };
    let text = match a.format {
        Format::Text => format!("n={}\nnumerical_rank={}\nfreqs={}\npowers={}\n", rep.n, rep.numerical_rank, join(&rep.freqs), join(&rep.powers)),
        Format::Json => to_json(&rep),
    };
    emit(out, &text)
}
