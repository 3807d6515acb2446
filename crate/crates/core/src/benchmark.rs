//! Benchmark grid over (schema, p, g, lambda) at campaign and network level,
//! normalized against a baseline cell, plus the revenue-window error curve.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionFunction, GMode};
use crate::error::{Error, Result};
use crate::metrics::normalize_vs_baseline;
use crate::pipeline::{
    evaluate, simulate, EvalOptions, Level, Profiles, SimOptions, Simulation, WeekError, Window,
};
use crate::rng::Stream;
use crate::schema::{SchemaKind, SchemaSpec};
use crate::synthgen::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    /// Schema labels (`D7 RR`) or text specs (`kind=RR;layout=TTTVVV;horizon=7`).
    pub schemas: Vec<String>,
    pub p_values: Vec<u64>,
    pub g_modes: Vec<GMode>,
    /// Lambda grid for `null_convex`.
    pub lambdas: Vec<f64>,
    pub t: u32,
    pub baseline: String,
    pub include_organic: bool,
    pub per_group_profile: bool,
    pub fit_prefix_days: Option<u32>,
    pub levels: Vec<Level>,
    pub window_curve: Option<WindowCurveConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCurveConfig {
    pub schema: String,
    pub p: u64,
    pub g: GMode,
    pub lambda: f64,
    pub windows: Vec<(u32, u32)>,
}

impl Default for WindowCurveConfig {
    fn default() -> Self {
        WindowCurveConfig {
            schema: "D7 RR".into(),
            p: 0,
            g: GMode::Plain,
            lambda: 0.0,
            windows: vec![(7, 14), (14, 30), (30, 60), (60, 90)],
        }
    }
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            schemas: ["D30 PV", "EV", "D1 RR", "D1 RI", "D3 RR", "D3 RI", "D7 RR", "D7 RI", "UD"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            p_values: crate::privacy::DEFAULT_THRESHOLDS.to_vec(),
            g_modes: vec![GMode::Plain, GMode::NullUniform, GMode::NullEmpirical, GMode::NullConvex],
            lambdas: vec![0.0, 0.5, 1.0],
            t: 30,
            baseline: "D30 PV".into(),
            include_organic: true,
            per_group_profile: false,
            fit_prefix_days: None,
            levels: vec![Level::Campaign, Level::Network],
            window_curve: Some(WindowCurveConfig::default()),
        }
    }
}

impl BenchmarkConfig {
    pub fn parsed_schemas(&self) -> Result<Vec<SchemaSpec>> {
        self.schemas.iter().map(|s| s.parse()).collect()
    }

    /// Attribution functions evaluated at threshold `p`. Plain is only
    /// defined when nothing can be hidden (`p < 2`).
    pub fn functions_for(&self, p: u64) -> Result<Vec<AttributionFunction>> {
        let mut out = Vec::new();
        for mode in &self.g_modes {
            match mode {
                GMode::Plain if p >= 2 => {}
                GMode::NullConvex => {
                    for l in &self.lambdas {
                        out.push(AttributionFunction::convex(*l)?);
                    }
                }
                m => out.push(AttributionFunction::new(*m, 0.0)?),
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let schemas = self.parsed_schemas()?;
        if schemas.is_empty() || self.p_values.is_empty() || self.g_modes.is_empty() {
            return Err(Error::Config("need at least one (schema, p, g) triple".into()));
        }
        if !self.g_modes.contains(&GMode::NullUniform) {
            return Err(Error::Config("null_uniform is required for the baseline".into()));
        }
        let baseline: SchemaSpec = self.baseline.parse()?;
        if !schemas.iter().any(|s| s.label() == baseline.label()) {
            return Err(Error::Config(format!("baseline {} not in schema list", self.baseline)));
        }
        for l in &self.lambdas {
            AttributionFunction::convex(*l)?;
        }
        if self.levels.is_empty() {
            return Err(Error::Config("need at least one level".into()));
        }
        if let Some(w) = &self.window_curve {
            check_windows(&w.windows)?;
        }
        Ok(())
    }

    fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            include_organic: self.include_organic,
            per_group_profile: self.per_group_profile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub schema: String,
    pub schema_spec: String,
    pub p: u64,
    pub g: GMode,
    pub lambda: f64,
    pub level: Level,
    pub hypothetical: bool,
    pub aggregate_error: f64,
    pub score: f64,
    pub weekly: Vec<WeekError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPoint {
    pub lo: u32,
    pub hi: u32,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub config_hash: String,
    pub beta: usize,
    pub organic_alpha: u32,
    pub t: u32,
    pub baseline: String,
    pub normalization: String,
    pub money_unit: String,
    pub rng_streams: Vec<String>,
    pub users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub metadata: ReportMetadata,
    pub cells: Vec<CellReport>,
    pub window_curve: Option<Vec<WindowPoint>>,
}

impl AttributionReport {
    pub fn cell(&self, schema: &str, p: u64, g: GMode, lambda: f64, level: Level) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.schema == schema && c.p == p && c.g == g && c.lambda == lambda && c.level == level)
    }
}

struct RawCell {
    schema: SchemaSpec,
    p: u64,
    func: AttributionFunction,
    level: Level,
    weekly: Vec<WeekError>,
    aggregate: f64,
}

fn wrap<T>(cell: String, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Cell {
        cell,
        source: Box::new(e),
    })
}

fn run_schema(
    dataset: &Dataset,
    schema: &SchemaSpec,
    cfg: &BenchmarkConfig,
    seed: u64,
) -> Result<Vec<RawCell>> {
    let label = schema.label();
    let sim = wrap(label.clone(), simulate(dataset, schema, seed, SimOptions { fit_prefix_days: cfg.fit_prefix_days }))?;
    let window = Window::first(cfg.t);
    let profiles = wrap(label.clone(), Profiles::build(dataset, &sim, window, cfg.per_group_profile))?;
    let mut out = Vec::new();
    for level in &cfg.levels {
        let truth = wrap(label.clone(), crate::pipeline::weekly_truth(dataset, &sim, window, *level))?;
        for p in &cfg.p_values {
            for func in cfg.functions_for(*p)? {
                let name = format!("{label} p={p} g={} level={}", func.label(), level.name());
                let summary = wrap(
                    name,
                    evaluate(dataset, &sim, &profiles, &truth, *p, &func, *level, cfg.eval_options()),
                )?;
                out.push(RawCell {
                    schema: sim.schema.clone(),
                    p: *p,
                    func,
                    level: *level,
                    weekly: summary.weekly,
                    aggregate: summary.aggregate,
                });
            }
        }
    }
    Ok(out)
}

/// Runs the whole grid. Cells come out ordered by schema list order, then
/// level, p and function.
pub fn benchmark_matrix(dataset: &Dataset, cfg: &BenchmarkConfig, seed: u64) -> Result<AttributionReport> {
    cfg.validate()?;
    let schemas = cfg.parsed_schemas()?;
    let run = |s: &SchemaSpec| run_schema(dataset, s, cfg, seed);
    #[cfg(feature = "parallel")]
    let raw: Result<Vec<Vec<RawCell>>> = {
        use rayon::prelude::*;
        schemas.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let raw: Result<Vec<Vec<RawCell>>> = schemas.iter().map(run).collect();
    let raw: Vec<RawCell> = raw?.into_iter().flatten().collect();

    let baseline_label = cfg.baseline.parse::<SchemaSpec>()?.label();
    let mut baselines: BTreeMap<(u64, Level), f64> = BTreeMap::new();
    for c in &raw {
        if c.schema.label() == baseline_label && c.func.mode == GMode::NullUniform {
            baselines.insert((c.p, c.level), c.aggregate);
        }
    }
    let mut cells = Vec::with_capacity(raw.len());
    for c in raw {
        let base = baselines.get(&(c.p, c.level)).copied().ok_or_else(|| {
            Error::Config(format!("no baseline cell for p={} level={}", c.p, c.level.name()))
        })?;
        let score = wrap(
            format!("{} p={} g={}", c.schema.label(), c.p, c.func.label()),
            normalize_vs_baseline(c.aggregate, base),
        )?;
        cells.push(CellReport {
            schema: c.schema.label(),
            schema_spec: c.schema.to_string(),
            p: c.p,
            g: c.func.mode,
            lambda: c.func.lambda,
            level: c.level,
            hypothetical: c.schema.kind == SchemaKind::Pv,
            aggregate_error: c.aggregate,
            score,
            weekly: c.weekly,
        });
    }

    let window_curve = match &cfg.window_curve {
        Some(w) => {
            let schema: SchemaSpec = w.schema.parse()?;
            let func = AttributionFunction::new(w.g, w.lambda)?;
            let windows: Vec<Window> = w.windows.iter().map(|(lo, hi)| Window { lo: *lo, hi: *hi }).collect();
            let errors = window_error_curve(
                dataset,
                &schema,
                w.p,
                &func,
                &windows,
                seed,
                SimOptions { fit_prefix_days: cfg.fit_prefix_days },
                cfg.eval_options(),
            )?;
            Some(
                windows
                    .iter()
                    .zip(errors)
                    .map(|(w, error)| WindowPoint { lo: w.lo, hi: w.hi, error })
                    .collect(),
            )
        }
        None => None,
    };

    Ok(AttributionReport {
        metadata: ReportMetadata {
            seed,
            config_hash: crate::io::config_hash(&(cfg, seed, dataset.users.len(), dataset.observed_until))?,
            beta: dataset.campaigns.beta_count(),
            organic_alpha: dataset.campaigns.organic.0,
            t: cfg.t,
            baseline: format!("{baseline_label} + null_uniform"),
            normalization: "aggregate revenue-weighted error, per p and level".into(),
            money_unit: "cents".into(),
            rng_streams: [Stream::Generation, Stream::Campaigns, Stream::PostbackDelay, Stream::UdSchema]
                .iter()
                .map(|s| s.name().to_string())
                .collect(),
            users: dataset.users.len(),
        },
        cells,
        window_curve,
    })
}

fn check_windows(windows: &[(u32, u32)]) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::Config("no revenue windows".into()));
    }
    let mut sorted = windows.to_vec();
    sorted.sort();
    for (lo, hi) in &sorted {
        if lo >= hi {
            return Err(Error::Config(format!("invalid window [{lo}, {hi})")));
        }
    }
    if sorted.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(Error::Config("revenue windows overlap".into()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
/// Campaign-level aggregate error of attributing the revenue accrued in each
/// window, with bucket means computed for that window.
pub fn window_error_curve(
    dataset: &Dataset,
    schema: &SchemaSpec,
    p: u64,
    func: &AttributionFunction,
    windows: &[Window],
    seed: u64,
    sim_opts: SimOptions,
    eval_opts: EvalOptions,
) -> Result<Vec<f64>> {
    check_windows(&windows.iter().map(|w| (w.lo, w.hi)).collect::<Vec<_>>())?;
    let sim = simulate(dataset, schema, seed, sim_opts)?;
    window_errors_for(dataset, &sim, p, func, windows, eval_opts)
}

pub fn window_errors_for(
    dataset: &Dataset,
    sim: &Simulation,
    p: u64,
    func: &AttributionFunction,
    windows: &[Window],
    opts: EvalOptions,
) -> Result<Vec<f64>> {
    windows
        .iter()
        .map(|w| {
            let profiles = Profiles::build(dataset, sim, *w, opts.per_group_profile)?;
            let truth = crate::pipeline::weekly_truth(dataset, sim, *w, Level::Campaign)?;
            Ok(evaluate(dataset, sim, &profiles, &truth, p, func, Level::Campaign, opts)?.aggregate)
        })
        .collect()
}
