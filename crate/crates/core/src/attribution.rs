//! Revenue attribution from conversion-value counts.
//!
//! The plain estimator credits each campaign with `x_{v,alpha} * mean_v`.
//! With a privacy threshold, each suppressed value's expected revenue
//! `mean_v * N_v` is split across campaigns by a convex mix of a uniform
//! share `1/beta` and the campaign's share of the null row.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cumulative_revenue, CampaignKey, Cents, UserRecord};
use crate::postback::{CountMatrix, Postback, ValueCounts};
use crate::schema::VALUE_COUNT;

/// Attributed revenue per campaign, in (fractional) cents.
pub type Attribution = BTreeMap<CampaignKey, f64>;

/// Per-value mean revenue `mean_v` and developer-side counts `N_v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueProfile {
    pub window_days: u32,
    pub means: BTreeMap<u8, f64>,
    pub totals: BTreeMap<u8, u64>,
}

impl RevenueProfile {
    /// Builds the profile from `(value, revenue)` pairs.
    pub fn from_pairs<I>(window_days: u32, pairs: I) -> RevenueProfile
    where
        I: IntoIterator<Item = (u8, Cents)>,
    {
        let mut sums = [0i64; VALUE_COUNT];
        let mut counts = [0u64; VALUE_COUNT];
        for (v, r) in pairs {
            sums[v as usize] += r.0;
            counts[v as usize] += 1;
        }
        let mut means = BTreeMap::new();
        let mut totals = BTreeMap::new();
        for v in 0..VALUE_COUNT {
            if counts[v] > 0 {
                means.insert(v as u8, sums[v] as f64 / counts[v] as f64);
                totals.insert(v as u8, counts[v]);
            }
        }
        RevenueProfile {
            window_days,
            means,
            totals,
        }
    }

    pub fn mean(&self, value: u8) -> Option<f64> {
        self.means.get(&value).copied()
    }

    pub fn total(&self, value: u8) -> u64 {
        self.totals.get(&value).copied().unwrap_or(0)
    }

    /// Same means with the counts of one `(group, week)` cell.
    pub fn localized(&self, totals: &ValueCounts) -> RevenueProfile {
        RevenueProfile {
            window_days: self.window_days,
            means: self.means.clone(),
            totals: totals
                .iter()
                .enumerate()
                .filter(|(_, n)| **n > 0)
                .map(|(v, n)| (v as u8, *n))
                .collect(),
        }
    }

    /// `sum_v mean_v * N_v`: the revenue any conserving attribution hands out.
    pub fn expected_total(&self) -> f64 {
        self.totals
            .iter()
            .map(|(v, n)| self.mean(*v).unwrap_or(0.0) * *n as f64)
            .sum()
    }
}

/// Developer-side profile: every postbacked user's final value joined with
/// their `t`-day revenue.
pub fn estimate_bucket_means(
    users: &[UserRecord],
    postbacks: &[Postback],
    window_days: u32,
) -> Result<RevenueProfile> {
    estimate_bucket_means_with(users, postbacks, window_days, |u| {
        cumulative_revenue(u, window_days)
    })
}

pub fn estimate_bucket_means_with<R>(
    users: &[UserRecord],
    postbacks: &[Postback],
    window_days: u32,
    revenue: R,
) -> Result<RevenueProfile>
where
    R: Fn(&UserRecord) -> Cents,
{
    let by_id: HashMap<u64, &UserRecord> = users.iter().map(|u| (u.id, u)).collect();
    let mut pairs = Vec::with_capacity(postbacks.len());
    for pb in postbacks {
        let user = by_id.get(&pb.user_id).ok_or(Error::UnknownUser(pb.user_id))?;
        pairs.push((pb.final_value, revenue(user)));
    }
    Ok(RevenueProfile::from_pairs(window_days, pairs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GMode {
    Plain,
    NullUniform,
    NullEmpirical,
    NullConvex,
}

impl GMode {
    pub fn name(self) -> &'static str {
        match self {
            GMode::Plain => "plain",
            GMode::NullUniform => "null_uniform",
            GMode::NullEmpirical => "null_empirical",
            GMode::NullConvex => "null_convex",
        }
    }
}

impl fmt::Display for GMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<GMode> {
        match s.trim() {
            "plain" => Ok(GMode::Plain),
            "null_uniform" | "U" => Ok(GMode::NullUniform),
            "null_empirical" | "N" => Ok(GMode::NullEmpirical),
            "null_convex" => Ok(GMode::NullConvex),
            other => Err(Error::Config(format!("unknown attribution mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributionFunction {
    pub mode: GMode,
    /// Weight on the null-row share.
    pub lambda: f64,
    /// Number of campaign columns for the uniform share; `None` uses the
    /// matrix's column count (paid campaigns plus organic).
    pub beta_count: Option<usize>,
}

impl AttributionFunction {
    /// Normalizes `lambda` per mode: U forces 0, N forces 1, plain ignores it.
    pub fn new(mode: GMode, lambda: f64) -> Result<AttributionFunction> {
        let lambda = match mode {
            GMode::Plain | GMode::NullUniform => 0.0,
            GMode::NullEmpirical => 1.0,
            GMode::NullConvex => lambda,
        };
        if !(0.0..=1.0).contains(&lambda) || lambda.is_nan() {
            return Err(Error::InvalidLambda(lambda));
        }
        Ok(AttributionFunction {
            mode,
            lambda,
            beta_count: None,
        })
    }

    pub fn plain() -> AttributionFunction {
        AttributionFunction::new(GMode::Plain, 0.0).expect("valid")
    }

    pub fn uniform() -> AttributionFunction {
        AttributionFunction::new(GMode::NullUniform, 0.0).expect("valid")
    }

    pub fn empirical() -> AttributionFunction {
        AttributionFunction::new(GMode::NullEmpirical, 1.0).expect("valid")
    }

    pub fn convex(lambda: f64) -> Result<AttributionFunction> {
        AttributionFunction::new(GMode::NullConvex, lambda)
    }

    pub fn label(&self) -> String {
        match self.mode {
            GMode::NullConvex => format!("{}({})", self.mode, self.lambda),
            m => m.to_string(),
        }
    }
}

fn visible_part(matrix: &CountMatrix, profile: &RevenueProfile) -> Result<Vec<f64>> {
    let mut out = vec![0.0; matrix.columns.len()];
    for v in 0..VALUE_COUNT as u8 {
        if matrix.is_suppressed(v) || matrix.row_total(v) == 0 {
            continue;
        }
        let mean = profile.mean(v).ok_or(Error::MissingProfile(v))?;
        for (col, slot) in out.iter_mut().enumerate() {
            let x = matrix.get_at(v, col).unwrap_or(0);
            *slot += x as f64 * mean;
        }
    }
    Ok(out)
}

fn to_map(matrix: &CountMatrix, values: Vec<f64>) -> Attribution {
    matrix.columns.iter().copied().zip(values).collect()
}

/// `result[alpha] = sum_v x_{v,alpha} * mean_v` on an unsuppressed matrix.
pub fn attribute_plain(matrix: &CountMatrix, profile: &RevenueProfile) -> Result<Attribution> {
    if let Some(null) = matrix.null_row() {
        if null.iter().any(|n| *n > 0) {
            return Err(Error::SuppressedMatrix);
        }
    }
    Ok(to_map(matrix, visible_part(matrix, profile)?))
}

/// Null-aware attribution. `profile.totals` must hold the developer-side
/// counts of the same cell (see [`RevenueProfile::localized`]).
pub fn attribute_with_null(
    matrix: &CountMatrix,
    profile: &RevenueProfile,
    func: &AttributionFunction,
) -> Result<Attribution> {
    if func.mode == GMode::Plain {
        return attribute_plain(matrix, profile);
    }
    let null = matrix.null_row().ok_or(Error::NotPrivatized)?;
    let mut out = visible_part(matrix, profile)?;

    let beta = func.beta_count.unwrap_or(matrix.columns.len()) as f64;
    let null_sum: u64 = null.iter().sum();
    let weights: Vec<f64> = null
        .iter()
        .map(|n| {
            if null_sum == 0 {
                1.0 / beta
            } else {
                (1.0 - func.lambda) / beta + func.lambda * *n as f64 / null_sum as f64
            }
        })
        .collect();

    for v in matrix.suppressed_values() {
        let n = profile.total(v);
        if n == 0 {
            continue;
        }
        let mean = profile.mean(v).ok_or(Error::MissingProfile(v))?;
        let mass = mean * n as f64;
        for (slot, w) in out.iter_mut().zip(&weights) {
            *slot += mass * w;
        }
    }
    Ok(to_map(matrix, out))
}

pub fn attribute(
    matrix: &CountMatrix,
    profile: &RevenueProfile,
    func: &AttributionFunction,
) -> Result<Attribution> {
    attribute_with_null(matrix, profile, func)
}
