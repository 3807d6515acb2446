//! End-to-end stages over a dataset: schema fitting, traces, postbacks,
//! count matrices, attribution and per-week error.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::attribution::{attribute, estimate_bucket_means_with, Attribution, AttributionFunction, RevenueProfile};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_error, weekly_error};
use crate::model::{ground_truth_with, CampaignKey, CampaignSet, CellKey, Cents, UserRecord, WeekKey};
use crate::postback::{assemble_counts, developer_totals, finalize_postback, CountMatrix, Postback, ValueCounts};
use crate::privacy::{apply_threshold, PrivacyConfig};
use crate::rng::{derive_seed, substream, Stream};
use crate::schema::{fit_buckets, simulate_updates, SchemaKind, SchemaSpec, UpdateTrace};
use crate::synthgen::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SimOptions {
    /// Fit bucket boundaries only on users registered in the first N days
    /// of the dataset instead of on everyone.
    pub fit_prefix_days: Option<u32>,
}

/// Output of running one schema over a dataset.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub schema: SchemaSpec,
    pub traces: Vec<UpdateTrace>,
    /// One per user whose postback arrived before the observation cutoff,
    /// sorted by user id.
    pub postbacks: Vec<Postback>,
    /// Pre-privacy counts with the organic estimate filled in.
    pub matrices: BTreeMap<CellKey, CountMatrix>,
    pub developer_totals: BTreeMap<CellKey, ValueCounts>,
}

fn map_users<T, F>(users: &[UserRecord], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&UserRecord) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        users.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        users.iter().map(f).collect()
    }
}

/// Resolves the UD seed (0 means "derive from the run seed") and fits
/// bucket boundaries.
pub fn prepare_schema(dataset: &Dataset, schema: &SchemaSpec, seed: u64, opts: SimOptions) -> Result<SchemaSpec> {
    let mut schema = schema.clone();
    if schema.kind == SchemaKind::Ud && schema.seed == 0 {
        schema.seed = derive_seed(seed, Stream::UdSchema);
    }
    if !schema.needs_fit() {
        return Ok(schema);
    }
    let population: Vec<UserRecord> = match opts.fit_prefix_days {
        None => return fit_buckets(&dataset.users, &schema, |u| schema.fit_revenue(u)),
        Some(days) => {
            let first = dataset
                .users
                .iter()
                .map(|u| u.registered_at)
                .min()
                .ok_or(Error::DegenerateFit)?;
            let cutoff = first.plus_days(days as i64);
            dataset
                .users
                .iter()
                .filter(|u| u.registered_at < cutoff)
                .cloned()
                .collect()
        }
    };
    fit_buckets(&population, &schema, |u| schema.fit_revenue(u))
}

pub fn simulate(dataset: &Dataset, schema: &SchemaSpec, seed: u64, opts: SimOptions) -> Result<Simulation> {
    let schema = prepare_schema(dataset, schema, seed, opts)?;
    let traces = map_users(&dataset.users, |u| simulate_updates(u, &schema))?;
    let postbacks: Vec<Postback> = dataset
        .users
        .iter()
        .zip(&traces)
        .map(|(u, trace)| {
            let mut rng = substream(seed, Stream::PostbackDelay, u.id);
            finalize_postback(trace, &u.group, &mut rng)
        })
        .filter(|pb| pb.postback_time <= dataset.observed_until)
        .collect();
    let matrices = assemble_counts(&postbacks, &dataset.users, &dataset.campaigns)?;
    let developer_totals = developer_totals(&postbacks)?;
    Ok(Simulation {
        schema,
        traces,
        postbacks,
        matrices,
        developer_totals,
    })
}

impl Simulation {
    pub fn week_index(&self) -> HashMap<u64, WeekKey> {
        self.postbacks
            .iter()
            .map(|pb| (pb.user_id, pb.postback_time.week()))
            .collect()
    }
}

/// Half-open revenue window in days since registration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Window {
    pub lo: u32,
    pub hi: u32,
}

impl Window {
    pub fn first(days: u32) -> Window {
        Window { lo: 0, hi: days }
    }

    pub fn revenue(&self, user: &UserRecord) -> Cents {
        user.revenue_between(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Campaign,
    Network,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::Campaign => "campaign",
            Level::Network => "network",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub include_organic: bool,
    /// Revenue means per group instead of pooled across groups.
    pub per_group_profile: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            include_organic: true,
            per_group_profile: false,
        }
    }
}

/// Developer-side revenue profiles, pooled (key `None`) or per group.
#[derive(Debug, Clone)]
pub struct Profiles {
    pooled: RevenueProfile,
    per_group: Option<BTreeMap<String, RevenueProfile>>,
}

impl Profiles {
    pub fn build(dataset: &Dataset, sim: &Simulation, window: Window, per_group: bool) -> Result<Profiles> {
        let pooled = estimate_bucket_means_with(&dataset.users, &sim.postbacks, window.hi, |u| window.revenue(u))?;
        let per_group = if per_group {
            let mut by_group: BTreeMap<String, Vec<Postback>> = BTreeMap::new();
            for pb in &sim.postbacks {
                by_group.entry(pb.group.clone()).or_default().push(pb.clone());
            }
            let mut out = BTreeMap::new();
            for (g, pbs) in by_group {
                out.insert(g, estimate_bucket_means_with(&dataset.users, &pbs, window.hi, |u| window.revenue(u))?);
            }
            Some(out)
        } else {
            None
        };
        Ok(Profiles { pooled, per_group })
    }

    pub fn pooled(&self) -> &RevenueProfile {
        &self.pooled
    }

    pub fn for_group(&self, group: &str) -> &RevenueProfile {
        self.per_group
            .as_ref()
            .and_then(|m| m.get(group))
            .unwrap_or(&self.pooled)
    }
}

/// Privatizes every cell at `p`.
pub fn privatize_all(
    matrices: &BTreeMap<CellKey, CountMatrix>,
    p: u64,
) -> Result<BTreeMap<CellKey, CountMatrix>> {
    matrices
        .iter()
        .map(|(k, m)| Ok((k.clone(), apply_threshold(m, PrivacyConfig::new(p))?)))
        .collect()
}

/// Attribution per cell using localized profiles.
pub fn attribute_cells(
    private: &BTreeMap<CellKey, CountMatrix>,
    totals: &BTreeMap<CellKey, ValueCounts>,
    profiles: &Profiles,
    func: &AttributionFunction,
) -> Result<BTreeMap<CellKey, Attribution>> {
    private
        .iter()
        .map(|(cell, m)| {
            let dev = totals
                .get(cell)
                .ok_or_else(|| Error::Config(format!("no developer totals for {}/{}", cell.group, cell.week)))?;
            let local = profiles.for_group(&cell.group).localized(dev);
            Ok((cell.clone(), attribute(m, &local, func)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekError {
    pub week: WeekKey,
    /// Error in cents.
    pub error: f64,
    /// True revenue of the week in cents (aggregation weight).
    pub revenue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub weekly: Vec<WeekError>,
    pub aggregate: f64,
}

fn level_key(campaigns: &CampaignSet, level: Level, key: CampaignKey) -> CampaignKey {
    match level {
        Level::Campaign => key,
        Level::Network => campaigns.network_of(key),
    }
}

/// Rounds every attributed amount to whole cents, the precision written to
/// attribution files. Scoring always runs on rounded values so file-based and
/// in-memory evaluation agree bit for bit.
pub fn round_to_cents(mut cells: BTreeMap<CellKey, Attribution>) -> BTreeMap<CellKey, Attribution> {
    for attr in cells.values_mut() {
        for v in attr.values_mut() {
            *v = v.round();
        }
    }
    cells
}

/// Sums cell attributions per week, rolled up to `level`.
pub fn weekly_attribution(
    cells: &BTreeMap<CellKey, Attribution>,
    campaigns: &CampaignSet,
    level: Level,
) -> BTreeMap<WeekKey, BTreeMap<CampaignKey, f64>> {
    let mut out: BTreeMap<WeekKey, BTreeMap<CampaignKey, f64>> = BTreeMap::new();
    for (cell, attr) in cells {
        let week = out.entry(cell.week).or_default();
        for (k, v) in attr {
            *week.entry(level_key(campaigns, level, *k)).or_default() += v;
        }
    }
    out
}

/// Ground truth per week, rolled up to `level`, over revenue `window`.
pub fn weekly_truth(
    dataset: &Dataset,
    sim: &Simulation,
    window: Window,
    level: Level,
) -> Result<BTreeMap<WeekKey, BTreeMap<CampaignKey, f64>>> {
    let weeks = sim.week_index();
    let truth = ground_truth_with(
        &dataset.users,
        window.hi,
        dataset.observed_until,
        |u| weeks.get(&u.id).copied(),
        |u| window.revenue(u),
    )?;
    let mut out: BTreeMap<WeekKey, BTreeMap<CampaignKey, f64>> = BTreeMap::new();
    for (week, m) in truth.by_week() {
        let row = out.entry(week).or_default();
        for (k, v) in m {
            *row.entry(level_key(&dataset.campaigns, level, k)).or_default() += v.as_f64();
        }
    }
    Ok(out)
}

/// Per-week error and revenue-weighted aggregate. Every campaign column in
/// the level's domain is compared; organic optionally dropped.
pub fn score_weeks(
    attributed: &BTreeMap<WeekKey, BTreeMap<CampaignKey, f64>>,
    truth: &BTreeMap<WeekKey, BTreeMap<CampaignKey, f64>>,
    campaigns: &CampaignSet,
    level: Level,
    include_organic: bool,
) -> Result<ErrorSummary> {
    let mut domain: Vec<CampaignKey> = campaigns
        .columns()
        .into_iter()
        .filter(|k| include_organic || !campaigns.is_organic(*k))
        .map(|k| level_key(campaigns, level, k))
        .collect();
    domain.sort();
    domain.dedup();

    let weeks: std::collections::BTreeSet<WeekKey> =
        attributed.keys().chain(truth.keys()).copied().collect();
    let empty = BTreeMap::new();
    let mut weekly = Vec::with_capacity(weeks.len());
    for week in weeks {
        let a = attributed.get(&week).unwrap_or(&empty);
        let t = truth.get(&week).unwrap_or(&empty);
        for k in a.keys().chain(t.keys()) {
            if domain.binary_search(k).is_err() && (include_organic || !campaigns.is_organic(*k)) {
                return Err(Error::Alignment(*k));
            }
        }
        let pick = |m: &BTreeMap<CampaignKey, f64>| -> BTreeMap<CampaignKey, f64> {
            domain.iter().map(|k| (*k, m.get(k).copied().unwrap_or(0.0))).collect()
        };
        let (a, t) = (pick(a), pick(t));
        let revenue: f64 = t.values().sum();
        weekly.push(WeekError {
            week,
            error: weekly_error(&a, &t)?,
            revenue,
        });
    }
    let pairs: Vec<(f64, f64)> = weekly.iter().map(|w| (w.error, w.revenue)).collect();
    let aggregate = aggregate_error(&pairs)?;
    Ok(ErrorSummary { weekly, aggregate })
}

/// One full evaluation: privatize at `p`, attribute with `func`, score at
/// `level` against the truth over `window`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    dataset: &Dataset,
    sim: &Simulation,
    profiles: &Profiles,
    truth: &BTreeMap<WeekKey, BTreeMap<CampaignKey, f64>>,
    p: u64,
    func: &AttributionFunction,
    level: Level,
    opts: EvalOptions,
) -> Result<ErrorSummary> {
    let private = privatize_all(&sim.matrices, p)?;
    let cells = round_to_cents(attribute_cells(&private, &sim.developer_totals, profiles, func)?);
    let attributed = weekly_attribution(&cells, &dataset.campaigns, level);
    score_weeks(&attributed, truth, &dataset.campaigns, level, opts.include_organic)
}
