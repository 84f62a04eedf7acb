//! Seeded Monte Carlo sweeps comparing the estimators against the CRB.
//!
//! Every `(sweep value, run)` pair draws one data set from its own ChaCha
//! stream (seed `base_seed + run`, stream = sweep index) and feeds the same
//! data to every method, so method comparisons are paired. Runs execute in
//! parallel; results are collected in task order, so summaries are
//! bit-identical across reruns and thread counts.

mod presets;
mod scoring;

pub use presets::{preset, preset_names, presets};
pub use scoring::{matched_errors, min_cost_assignment, rmse, MISSING_PENALTY};

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{rootmusic_direct, ss_music};
use crate::crb::{crb_freqs, CrbRequest};
use crate::error::{invalid, Error, Result};
use crate::geometry::ArrayGeometry;
use crate::mesa::{ground_truth_nll, solve_covariance, SolverConfig};
use crate::signal::{sample_covariance, synthesize, Correlation, SourceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mesa,
    Mesa1,
    SsMusic,
    Rootmusic,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Mesa, Method::Mesa1, Method::SsMusic, Method::Rootmusic];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mesa => "mesa",
            Method::Mesa1 => "mesa1",
            Method::SsMusic => "ss_music",
            Method::Rootmusic => "rootmusic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}' (expected mesa, mesa1, ss_music or rootmusic)")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    SnrDb,
    K,
    Separation,
    Rho,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::SnrDb => "snr_db",
            SweepVariable::K => "k",
            SweepVariable::Separation => "separation",
            SweepVariable::Rho => "rho",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

/// Frequency layout, possibly driven by the sweep variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layout {
    Fixed { freqs: Vec<f64> },
    /// `f_k = start + span (k - 1) / K`; `k` comes from the sweep when swept.
    Uniform {
        start: f64,
        span: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
    },
    /// `freqs` plus one more source at `freqs[anchor] + separation`.
    Pair {
        freqs: Vec<f64>,
        anchor: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        separation: Option<f64>,
    },
}

/// A declared correlation; a missing `modulus` takes the swept `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationSpec {
    pub i: usize,
    pub j: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulus: Option<f64>,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub layout: Layout,
    /// Defaults to unit powers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub powers: Option<Vec<f64>>,
    #[serde(default)]
    pub correlations: Vec<CorrelationSpec>,
}

fn default_runs() -> usize {
    200
}

fn default_snr() -> f64 {
    10.0
}

fn default_threshold() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub geometry: ArrayGeometry,
    /// Snapshots per run.
    pub snapshots: usize,
    /// SNR `p / sigma` in dB when not swept; `inf` gives noiseless data.
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub methods: Vec<Method>,
    /// A run succeeds when every matched error is below this (cycles).
    #[serde(default = "default_threshold")]
    pub success_threshold: f64,
    pub sweep: Sweep,
    pub sources: SourceSpec,
    /// Solver settings for the MESA methods; `k` is set per sweep point.
    #[serde(default)]
    pub solver: SolverConfig,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return invalid("n_runs must be at least 1");
        }
        if self.snapshots == 0 {
            return invalid("snapshots must be at least 1");
        }
        if self.methods.is_empty() {
            return invalid("no methods selected");
        }
        if self.sweep.values.is_empty() || self.sweep.values.iter().any(|v| !v.is_finite()) {
            return invalid("sweep values must be finite and nonempty");
        }
        if self.snr_db.is_nan() {
            return invalid("snr_db is NaN");
        }
        if !(self.success_threshold > 0.0) {
            return invalid("success_threshold must be positive");
        }
        if self.methods.contains(&Method::Rootmusic) && !self.geometry.is_ula() {
            return invalid("rootmusic needs a uniform array");
        }
        match (self.sweep.variable, &self.sources.layout) {
            (SweepVariable::K, Layout::Uniform { .. }) => {}
            (SweepVariable::K, _) => return invalid("sweeping k needs a uniform layout"),
            (SweepVariable::Separation, Layout::Pair { .. }) => {}
            (SweepVariable::Separation, _) => return invalid("sweeping separation needs a pair layout"),
            (_, Layout::Uniform { k: None, .. }) => return invalid("uniform layout needs k unless k is swept"),
            (_, Layout::Pair { separation: None, .. }) => return invalid("pair layout needs separation unless it is swept"),
            _ => {}
        }
        let open = self.sources.correlations.iter().any(|c| c.modulus.is_none());
        if open != (self.sweep.variable == SweepVariable::Rho) {
            return invalid("correlations without modulus exist exactly when rho is swept");
        }
        for &v in &self.sweep.values {
            self.point(v)?;
        }
        SolverConfig { k: 1, ..self.solver.clone() }.validate()
    }

    /// Source model and noise power at one sweep value.
    pub fn point(&self, value: f64) -> Result<(SourceModel, f64)> {
        let var = self.sweep.variable;
        let freqs = match &self.sources.layout {
            Layout::Fixed { freqs } => freqs.clone(),
            Layout::Uniform { start, span, k } => {
                let k = if var == SweepVariable::K { as_count(value)? } else { k.unwrap_or(0) };
                if k == 0 {
                    return invalid("uniform layout needs k >= 1");
                }
                (0..k).map(|i| start + span * i as f64 / k as f64).collect()
            }
            Layout::Pair { freqs, anchor, separation } => {
                let d = if var == SweepVariable::Separation { value } else { separation.unwrap_or(0.0) };
                let base = *freqs.get(*anchor).ok_or_else(|| Error::InvalidArgument("pair anchor out of range".into()))?;
                let mut f = freqs.clone();
                f.push(base + d);
                f
            }
        };
        let powers = self.sources.powers.clone().unwrap_or_else(|| vec![1.0; freqs.len()]);
        let correlations = self
            .sources
            .correlations
            .iter()
            .map(|c| Correlation { i: c.i, j: c.j, modulus: c.modulus.unwrap_or(value), phase: c.phase })
            .collect();
        let model = SourceModel::with_correlations(freqs, powers, correlations)?;
        let snr = if var == SweepVariable::SnrDb { value } else { self.snr_db };
        let mean_power = model.powers.iter().sum::<f64>() / model.k() as f64;
        Ok((model, mean_power * 10f64.powf(-snr / 10.0)))
    }

    /// Sets one field by dotted path (`solver.mu`, `sweep.values`, ...). The
    /// value is parsed as a TOML value, falling back to a plain string.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut cur = &mut doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (n, part) in parts.iter().enumerate() {
            let table = cur.as_table_mut().ok_or_else(|| Error::InvalidArgument(format!("'{key}' does not name a field")))?;
            if n + 1 == parts.len() {
                table.insert(part.to_string(), parsed.clone());
                break;
            }
            cur = table.get_mut(*part).ok_or_else(|| Error::InvalidArgument(format!("unknown key '{key}'")))?;
        }
        let spec: Self = doc.try_into().map_err(|e: toml::de::Error| Error::InvalidArgument(format!("override {key}={value}: {}", e.message())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("bad experiment config: {}", e.message())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment specs serialize")
    }
}

fn as_count(v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        invalid(format!("source count {v} is not a positive integer"))
    }
}

/// Outcome of one method on one data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sweep_index: usize,
    pub sweep_value: f64,
    pub run: usize,
    pub seed: u64,
    pub method: Method,
    pub freqs: Vec<f64>,
    pub rmse: Option<f64>,
    pub max_error: Option<f64>,
    pub success: bool,
    pub nll: Option<f64>,
    pub ground_truth_nll: Option<f64>,
    pub nll_trace: Vec<f64>,
    pub mm_iters: Option<usize>,
    /// MESA stopped before its MM iteration budget.
    pub mm_converged: Option<bool>,
    pub admm_iters: Option<usize>,
    pub wall_time_s: f64,
    /// Set when the method returned an error; such runs are excluded from RMSE.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep_var: SweepVariable,
    pub sweep_value: f64,
    pub method: Method,
    /// `sqrt` of the mean squared matched error over non-failed runs.
    pub rmse: f64,
    /// Fraction of all runs that succeeded; failed runs count as misses.
    pub success_rate: f64,
    pub mean_nll: Option<f64>,
    pub mean_mm_iters: Option<f64>,
    pub mean_admm_iters: Option<f64>,
    pub crb_rmse: Option<f64>,
    pub n_runs: usize,
    pub n_excluded: usize,
    pub mean_wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub rows: Vec<SummaryRow>,
    pub records: Vec<RunRecord>,
}

pub const CSV_HEADER: [&str; 11] = [
    "sweep_var",
    "sweep_value",
    "method",
    "rmse",
    "success_rate",
    "mean_nll",
    "mean_mm_iters",
    "mean_admm_iters",
    "crb_rmse",
    "n_runs",
    "n_excluded",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl RunSummary {
    pub fn row(&self, value: f64, method: Method) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.sweep_value == value && r.method == method)
    }

    /// Summary table. Wall time is left out so that the table is reproducible.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::NumericFailure(format!("writing table: {e}"));
        out.write_record(CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            out.write_record([
                r.sweep_var.name().to_string(),
                format!("{}", r.sweep_value),
                r.method.name().to_string(),
                format!("{:e}", r.rmse),
                format!("{}", r.success_rate),
                opt(r.mean_nll),
                opt(r.mean_mm_iters),
                opt(r.mean_admm_iters),
                opt(r.crb_rmse),
                r.n_runs.to_string(),
                r.n_excluded.to_string(),
            ])
            .map_err(io)?;
        }
        out.flush().map_err(|e| Error::NumericFailure(format!("writing table: {e}")))?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Per-run records as JSON.
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.records).map_err(|e| Error::NumericFailure(format!("writing records: {e}")))
    }
}

/// Runs every method on every `(sweep value, run)` pair.
pub fn run(spec: &ExperimentSpec) -> Result<RunSummary> {
    spec.validate()?;
    let points: Vec<(SourceModel, f64)> = spec.sweep.values.iter().map(|&v| spec.point(v)).collect::<Result<_>>()?;
    let tasks: Vec<(usize, usize)> = (0..points.len()).flat_map(|s| (0..spec.n_runs).map(move |r| (s, r))).collect();
    let per_task: Vec<Vec<RunRecord>> = tasks
        .par_iter()
        .map(|&(s, r)| run_one(spec, s, &points[s].0, points[s].1, r))
        .collect::<Result<_>>()?;
    let records: Vec<RunRecord> = per_task.into_iter().flatten().collect();

    let mut rows = Vec::new();
    for (s, (model, sigma)) in points.iter().enumerate() {
        let crb = if *sigma > 0.0 {
            match CrbRequest::from_model(model, *sigma, &spec.geometry, spec.snapshots).and_then(|q| crb_freqs(&q)) {
                Ok(b) => Some(b.rmse()),
                Err(e) => {
                    log::warn!("{}: no CRB at {} = {}: {e}", spec.name, spec.sweep.variable.name(), spec.sweep.values[s]);
                    None
                }
            }
        } else {
            None
        };
        for &m in &spec.methods {
            let recs: Vec<&RunRecord> = records.iter().filter(|x| x.sweep_index == s && x.method == m).collect();
            rows.push(aggregate(spec, s, m, &recs, crb));
        }
    }
    Ok(RunSummary { name: spec.name.clone(), rows, records })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn aggregate(spec: &ExperimentSpec, s: usize, m: Method, recs: &[&RunRecord], crb: Option<f64>) -> SummaryRow {
    let ok: Vec<&&RunRecord> = recs.iter().filter(|r| r.failure.is_none()).collect();
    let n_excluded = recs.len() - ok.len();
    if n_excluded > 0 {
        log::warn!("{}: {m} failed in {n_excluded} of {} runs at {} = {}", spec.name, recs.len(), spec.sweep.variable.name(), spec.sweep.values[s]);
    }
    let mse = mean(ok.iter().map(|r| r.rmse.unwrap_or(0.0).powi(2)));
    SummaryRow {
        sweep_var: spec.sweep.variable,
        sweep_value: spec.sweep.values[s],
        method: m,
        rmse: mse.map_or(f64::NAN, f64::sqrt),
        success_rate: recs.iter().filter(|r| r.success).count() as f64 / recs.len() as f64,
        mean_nll: mean(ok.iter().filter_map(|r| r.nll)),
        mean_mm_iters: mean(ok.iter().filter_map(|r| r.mm_iters.map(|v| v as f64))),
        mean_admm_iters: mean(ok.iter().filter_map(|r| r.admm_iters.map(|v| v as f64))),
        crb_rmse: crb,
        n_runs: recs.len(),
        n_excluded,
        mean_wall_time_s: mean(recs.iter().map(|r| r.wall_time_s)).unwrap_or(0.0),
    }
}

fn run_one(spec: &ExperimentSpec, s: usize, model: &SourceModel, sigma: f64, r: usize) -> Result<Vec<RunRecord>> {
    let seed = spec.base_seed.wrapping_add(r as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    let data = synthesize(model, sigma, &spec.geometry, spec.snapshots, &mut rng)?;
    let r_hat = sample_covariance(&data);
    let k = model.k();
    let truth_nll = if sigma > 0.0 { ground_truth_nll(&model.freqs, &model.powers, sigma, &r_hat, &spec.geometry).ok() } else { None };

    let mut out = Vec::with_capacity(spec.methods.len());
    for &method in &spec.methods {
        let start = Instant::now();
        let mut rec = RunRecord {
            sweep_index: s,
            sweep_value: spec.sweep.values[s],
            run: r,
            seed,
            method,
            freqs: vec![],
            rmse: None,
            max_error: None,
            success: false,
            nll: None,
            ground_truth_nll: None,
            nll_trace: vec![],
            mm_iters: None,
            mm_converged: None,
            admm_iters: None,
            wall_time_s: 0.0,
            failure: None,
        };
        let result = match method {
            Method::Mesa | Method::Mesa1 => {
                let mut cfg = spec.solver.clone();
                cfg.k = k;
                cfg.single_mm_iteration = method == Method::Mesa1;
                solve_covariance(&r_hat, spec.snapshots, &spec.geometry, &cfg).map(|rep| {
                    rec.nll = Some(rep.final_nll());
                    rec.ground_truth_nll = truth_nll;
                    rec.mm_iters = Some(rep.mm_iters);
                    rec.mm_converged = Some(rep.mm_converged);
                    rec.admm_iters = Some(rep.total_admm_iters);
                    rec.nll_trace = rep.nll_trace;
                    rep.estimate.freqs
                })
            }
            Method::SsMusic => ss_music(&r_hat, &spec.geometry, k).map(|e| e.freqs),
            Method::Rootmusic => rootmusic_direct(&r_hat, k),
        };
        rec.wall_time_s = start.elapsed().as_secs_f64();
        match result {
            Ok(freqs) => {
                let errs = matched_errors(&freqs, &model.freqs)?;
                let max = errs.iter().cloned().fold(0.0, f64::max);
                rec.rmse = Some((errs.iter().map(|e| e * e).sum::<f64>() / k as f64).sqrt());
                rec.max_error = Some(max);
                rec.success = freqs.len() == k && max < spec.success_threshold;
                rec.freqs = freqs;
            }
            Err(e) => rec.failure = Some(e.to_string()),
        }
        out.push(rec);
    }
    Ok(out)
}
