//! Shared domain types: campaign keys, users and their event streams,
//! weekly cohort keys and last-click ground truth.

use std::collections::BTreeMap;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub};

use chrono::{DateTime, Datelike, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_HOUR: i64 = 3_600;
pub const SECONDS_PER_DAY: i64 = 86_400;

/// Integer amount of USD cents.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Cents(pub i64);

impl Cents {
    pub const ZERO: Cents = Cents(0);

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    pub fn usd(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl Add for Cents {
    type Output = Cents;
    fn add(self, rhs: Cents) -> Cents {
        Cents(self.0 + rhs.0)
    }
}

impl AddAssign for Cents {
    fn add_assign(&mut self, rhs: Cents) {
        self.0 += rhs.0;
    }
}

impl Sub for Cents {
    type Output = Cents;
    fn sub(self, rhs: Cents) -> Cents {
        Cents(self.0 - rhs.0)
    }
}

impl Sum for Cents {
    fn sum<I: Iterator<Item = Cents>>(iter: I) -> Cents {
        Cents(iter.map(|c| c.0).sum())
    }
}

impl fmt::Display for Cents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

/// Seconds since the Unix epoch, UTC.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn plus_seconds(self, secs: i64) -> Timestamp {
        Timestamp(self.0 + secs)
    }

    pub fn plus_days(self, days: i64) -> Timestamp {
        Timestamp(self.0 + days * SECONDS_PER_DAY)
    }

    fn datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp(self.0, 0).expect("timestamp within chrono range")
    }

    pub fn week(self) -> WeekKey {
        let iso = self.datetime().iso_week();
        WeekKey {
            year: iso.year(),
            week: iso.week(),
        }
    }

    pub fn to_rfc3339(self) -> String {
        self.datetime().to_rfc3339_opts(SecondsFormat::Secs, true)
    }

    pub fn parse_rfc3339(s: &str) -> std::result::Result<Timestamp, String> {
        DateTime::parse_from_rfc3339(s)
            .map(|dt| Timestamp(dt.timestamp()))
            .map_err(|e| format!("bad timestamp {s:?}: {e}"))
    }

    /// Midnight UTC of the given calendar date.
    pub fn from_ymd(year: i32, month: u32, day: u32) -> Option<Timestamp> {
        chrono::NaiveDate::from_ymd_opt(year, month, day)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .map(|dt| Timestamp(dt.and_utc().timestamp()))
    }
}

/// ISO year-week; weeks start on Monday.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WeekKey {
    pub year: i32,
    pub week: u32,
}

impl fmt::Display for WeekKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-W{:02}", self.year, self.week)
    }
}

impl std::str::FromStr for WeekKey {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (y, w) = s
            .split_once("-W")
            .ok_or_else(|| format!("bad week key {s:?}"))?;
        let year = y.parse().map_err(|_| format!("bad week year in {s:?}"))?;
        let week: u32 = w.parse().map_err(|_| format!("bad week number in {s:?}"))?;
        if !(1..=53).contains(&week) {
            return Err(format!("week number out of range in {s:?}"));
        }
        Ok(WeekKey { year, week })
    }
}

/// Scope of one count matrix: a group (country analog) and a week.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub group: String,
    pub week: WeekKey,
}

/// Combined network/campaign identifier `alpha = 100 * network + campaign`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct CampaignKey(pub u32);

impl CampaignKey {
    pub const MAX_CAMPAIGN: u32 = 99;

    pub fn encode(network: u32, campaign: u32) -> Result<CampaignKey> {
        if campaign > Self::MAX_CAMPAIGN {
            return Err(Error::InvalidCampaign(campaign));
        }
        Ok(CampaignKey(100 * network + campaign))
    }

    /// Splits into `(network, campaign)`; the organic sentinel has no decoding.
    pub fn decode(self, organic: CampaignKey) -> Result<(u32, u32)> {
        if self == organic {
            return Err(Error::NotDecodable(self.0));
        }
        Ok((self.0 / 100, self.0 % 100))
    }

    pub fn alpha(self) -> u32 {
        self.0
    }
}

impl fmt::Display for CampaignKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn encode_alpha(network: u32, campaign: u32) -> Result<CampaignKey> {
    CampaignKey::encode(network, campaign)
}

pub fn decode_alpha(key: CampaignKey, organic: CampaignKey) -> Result<(u32, u32)> {
    key.decode(organic)
}

/// The paid campaign columns of a dataset plus the organic sentinel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignSet {
    pub paid: Vec<CampaignKey>,
    pub organic: CampaignKey,
}

impl CampaignSet {
    /// Sorts and dedups `paid`; the sentinel defaults to `max alpha + 1`.
    pub fn new(mut paid: Vec<CampaignKey>, organic: Option<CampaignKey>) -> Result<CampaignSet> {
        paid.sort();
        paid.dedup();
        let organic =
            organic.unwrap_or_else(|| CampaignKey(paid.last().map_or(0, |k| k.0 + 1)));
        if paid.contains(&organic) {
            return Err(Error::Config(format!(
                "organic sentinel {organic} collides with a paid campaign"
            )));
        }
        Ok(CampaignSet { paid, organic })
    }

    /// All columns, paid first then organic.
    pub fn columns(&self) -> Vec<CampaignKey> {
        let mut cols = self.paid.clone();
        cols.push(self.organic);
        cols
    }

    pub fn beta_count(&self) -> usize {
        self.paid.len() + 1
    }

    pub fn is_organic(&self, key: CampaignKey) -> bool {
        key == self.organic
    }

    /// Network identifier of a key, keeping organic as its own bucket.
    pub fn network_of(&self, key: CampaignKey) -> CampaignKey {
        match key.decode(self.organic) {
            Ok((network, _)) => CampaignKey(network * 100),
            Err(_) => key,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Session,
    Purchase { amount: Cents },
    Flag { index: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub timestamp: Timestamp,
    pub kind: EventKind,
}

impl Event {
    pub fn session(timestamp: Timestamp) -> Event {
        Event {
            timestamp,
            kind: EventKind::Session,
        }
    }

    pub fn purchase(timestamp: Timestamp, amount: Cents) -> Event {
        Event {
            timestamp,
            kind: EventKind::Purchase { amount },
        }
    }

    pub fn flag(timestamp: Timestamp, index: u8) -> Event {
        Event {
            timestamp,
            kind: EventKind::Flag { index },
        }
    }
}

pub const FLAG_COUNT: u8 = 6;

/// One user as seen by the measurement partner: registration (first open),
/// last-click origin, group label and the time-ordered event stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub id: u64,
    pub registered_at: Timestamp,
    pub origin: CampaignKey,
    pub group: String,
    pub events: Vec<Event>,
}

impl UserRecord {
    /// Validating constructor.
    pub fn new(
        id: u64,
        registered_at: Timestamp,
        origin: CampaignKey,
        group: impl Into<String>,
        events: Vec<Event>,
    ) -> Result<UserRecord> {
        let user = UserRecord {
            id,
            registered_at,
            origin,
            group: group.into(),
            events,
        };
        user.validate()?;
        Ok(user)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidUser {
            user: self.id,
            reason,
        };
        let mut prev = self.registered_at;
        for event in &self.events {
            if event.timestamp < prev {
                return Err(invalid(if event.timestamp < self.registered_at {
                    "event before registration".into()
                } else {
                    "events not time-ordered".into()
                }));
            }
            prev = event.timestamp;
            match event.kind {
                EventKind::Purchase { amount } if amount.0 <= 0 => {
                    return Err(invalid(format!("non-positive purchase {amount}")));
                }
                EventKind::Flag { index } if index >= FLAG_COUNT => {
                    return Err(invalid(format!("flag index {index} out of range")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn first_open(&self) -> Timestamp {
        self.registered_at
    }

    pub fn purchases(&self) -> impl Iterator<Item = (Timestamp, Cents)> + '_ {
        self.events.iter().filter_map(|e| match e.kind {
            EventKind::Purchase { amount } => Some((e.timestamp, amount)),
            _ => None,
        })
    }

    /// Revenue from purchases in `[registration + lo days, registration + hi days)`.
    pub fn revenue_between(&self, lo_days: u32, hi_days: u32) -> Cents {
        let lo = self.registered_at.plus_days(lo_days as i64);
        let hi = self.registered_at.plus_days(hi_days as i64);
        self.purchases()
            .filter(|(ts, _)| *ts >= lo && *ts < hi)
            .map(|(_, amount)| amount)
            .sum()
    }

    pub fn is_mature(&self, window_days: u32, evaluation: Timestamp) -> bool {
        self.registered_at.plus_days(window_days as i64) <= evaluation
    }
}

/// `r_i^t`: purchases in the half-open window `[registration, registration + t days)`.
pub fn cumulative_revenue(user: &UserRecord, window_days: u32) -> Cents {
    user.revenue_between(0, window_days)
}

/// Last-click attributed revenue per `(group, week, alpha)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub window_days: u32,
    pub cells: BTreeMap<CellKey, BTreeMap<CampaignKey, Cents>>,
}

impl GroundTruth {
    pub fn get(&self, cell: &CellKey, key: CampaignKey) -> Cents {
        self.cells
            .get(cell)
            .and_then(|m| m.get(&key))
            .copied()
            .unwrap_or_default()
    }

    pub fn total(&self) -> Cents {
        self.cells.values().flat_map(|m| m.values().copied()).sum()
    }

    /// Sums groups together, keyed by week.
    pub fn by_week(&self) -> BTreeMap<WeekKey, BTreeMap<CampaignKey, Cents>> {
        let mut out: BTreeMap<WeekKey, BTreeMap<CampaignKey, Cents>> = BTreeMap::new();
        for (cell, m) in &self.cells {
            let week = out.entry(cell.week).or_default();
            for (k, v) in m {
                *week.entry(*k).or_default() += *v;
            }
        }
        out
    }
}

/// Builds `y_alpha^t` per cell. Users for which `week_of` returns `None`
/// (no postback inside the horizon) are skipped; every included user must be
/// mature at `evaluation`.
pub fn ground_truth<F>(
    users: &[UserRecord],
    window_days: u32,
    evaluation: Timestamp,
    week_of: F,
) -> Result<GroundTruth>
where
    F: Fn(&UserRecord) -> Option<WeekKey>,
{
    ground_truth_with(users, window_days, evaluation, week_of, |u| {
        cumulative_revenue(u, window_days)
    })
}

/// Like [`ground_truth`] with a custom per-user revenue, used for revenue
/// windows that do not start at registration.
pub fn ground_truth_with<F, R>(
    users: &[UserRecord],
    window_days: u32,
    evaluation: Timestamp,
    week_of: F,
    revenue: R,
) -> Result<GroundTruth>
where
    F: Fn(&UserRecord) -> Option<WeekKey>,
    R: Fn(&UserRecord) -> Cents,
{
    let mut cells: BTreeMap<CellKey, BTreeMap<CampaignKey, Cents>> = BTreeMap::new();
    for user in users {
        let Some(week) = week_of(user) else { continue };
        if !user.is_mature(window_days, evaluation) {
            return Err(Error::MaturityViolation {
                user: user.id,
                window_days,
            });
        }
        let cell = CellKey {
            group: user.group.clone(),
            week,
        };
        *cells.entry(cell).or_default().entry(user.origin).or_default() += revenue(user);
    }
    Ok(GroundTruth { window_days, cells })
}
