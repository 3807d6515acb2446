//! Conversion-value schemas over a 6-bit value and the per-user update
//! simulation (strictly increasing values, 24h activity timer).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cumulative_revenue, Cents, EventKind, Timestamp, UserRecord, SECONDS_PER_DAY};
use crate::rng::{substream_seed, Stream};

pub const VALUE_BITS: usize = 6;
pub const VALUE_COUNT: usize = 1 << VALUE_BITS;
pub const MAX_VALUE: u8 = (VALUE_COUNT - 1) as u8;

/// Window the app has to commit a new value after the previous commit.
pub const UPDATE_WINDOW_SECS: i64 = SECONDS_PER_DAY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitRole {
    /// Time since first open, in days.
    T,
    /// Revenue bucket.
    V,
    /// Condition or count.
    C,
}

impl BitRole {
    fn symbol(self) -> char {
        match self {
            BitRole::T => 'T',
            BitRole::V => 'V',
            BitRole::C => 'C',
        }
    }
}

/// Six bit roles, most significant first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitLayout(pub [BitRole; VALUE_BITS]);

impl BitLayout {
    pub fn count(&self, role: BitRole) -> u32 {
        self.0.iter().filter(|r| **r == role).count() as u32
    }

    pub fn time_bits(&self) -> u32 {
        self.count(BitRole::T)
    }

    /// Bits below the T block.
    pub fn low_bits(&self) -> u32 {
        VALUE_BITS as u32 - self.time_bits()
    }
}

impl FromStr for BitLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<BitLayout> {
        parse_layout(s)
    }
}

impl fmt::Display for BitLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for role in self.0 {
            write!(f, "{}", role.symbol())?;
        }
        Ok(())
    }
}

/// Parses layouts like `TTTVVV`. T bits must form the most significant block.
pub fn parse_layout(spec: &str) -> Result<BitLayout> {
    let chars: Vec<char> = spec.trim().chars().collect();
    if chars.len() != VALUE_BITS {
        return Err(Error::LayoutParse(format!(
            "{spec:?} has {} bits, expected {VALUE_BITS}",
            chars.len()
        )));
    }
    let mut roles = [BitRole::C; VALUE_BITS];
    for (slot, c) in roles.iter_mut().zip(&chars) {
        *slot = match c {
            'T' => BitRole::T,
            'V' => BitRole::V,
            'C' => BitRole::C,
            other => {
                return Err(Error::LayoutParse(format!(
                    "{spec:?}: unexpected bit role {other:?}"
                )))
            }
        };
    }
    let t = roles.iter().take_while(|r| **r == BitRole::T).count();
    if roles[t..].contains(&BitRole::T) {
        return Err(Error::LayoutParse(format!(
            "{spec:?}: T bits must be contiguous and most significant"
        )));
    }
    Ok(BitLayout(roles))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SchemaKind {
    /// Day-0 event flags.
    Ev,
    /// Rolling revenue.
    Rr,
    /// Rolling purchase count.
    Ri,
    /// Uniform random value.
    Ud,
    /// Hypothetical perfect lifetime value.
    Pv,
}

impl SchemaKind {
    pub fn code(self) -> &'static str {
        match self {
            SchemaKind::Ev => "EV",
            SchemaKind::Rr => "RR",
            SchemaKind::Ri => "RI",
            SchemaKind::Ud => "UD",
            SchemaKind::Pv => "PV",
        }
    }

    fn default_layout(self) -> &'static str {
        match self {
            SchemaKind::Ev => "CCCCCC",
            SchemaKind::Rr => "TTTVVV",
            SchemaKind::Ri => "TTTCCC",
            SchemaKind::Ud => "CCCCCC",
            SchemaKind::Pv => "VVVVVV",
        }
    }
}

impl FromStr for SchemaKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<SchemaKind> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EV" => Ok(SchemaKind::Ev),
            "RR" => Ok(SchemaKind::Rr),
            "RI" => Ok(SchemaKind::Ri),
            "UD" => Ok(SchemaKind::Ud),
            "PV" => Ok(SchemaKind::Pv),
            other => Err(Error::Schema(format!("unknown schema kind {other:?}"))),
        }
    }
}

/// A conversion-value function `f`.
///
/// `boundaries` are the fitted revenue thresholds for V bits; bucket 0 is
/// reserved for non-spenders and an amount strictly greater than
/// `boundaries[k]` lands in bucket `k + 2` or higher.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaSpec {
    pub kind: SchemaKind,
    pub layout: BitLayout,
    pub boundaries: Vec<Cents>,
    /// Last day index observed (RR/RI) or the revenue window in days (PV).
    pub horizon_days: u32,
    /// Seed for UD assignment.
    pub seed: u64,
}

impl SchemaSpec {
    pub fn new(kind: SchemaKind, layout: BitLayout, horizon_days: u32) -> Result<SchemaSpec> {
        let spec = SchemaSpec {
            kind,
            layout,
            boundaries: Vec::new(),
            horizon_days,
            seed: 0,
        };
        spec.check_layout()?;
        Ok(spec)
    }

    /// Builds a schema from a table label such as `D7 RR`, `D30 PV`, `EV` or `UD`.
    pub fn preset(label: &str) -> Result<SchemaSpec> {
        let label = label.trim();
        let (days, kind) = match label.split_once(char::is_whitespace) {
            Some((d, k)) => {
                let days: u32 = d
                    .strip_prefix('D')
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| Error::Schema(format!("bad schema label {label:?}")))?;
                (Some(days), k.parse::<SchemaKind>()?)
            }
            None => (None, label.parse::<SchemaKind>()?),
        };
        match kind {
            SchemaKind::Ev | SchemaKind::Ud => {
                if days.is_some() {
                    return Err(Error::Schema(format!("{label:?}: EV/UD take no day prefix")));
                }
                SchemaSpec::new(kind, parse_layout(kind.default_layout())?, 0)
            }
            SchemaKind::Pv => SchemaSpec::new(kind, parse_layout("VVVVVV")?, days.unwrap_or(30)),
            SchemaKind::Rr | SchemaKind::Ri => {
                let days = days.ok_or_else(|| Error::Schema(format!("{label:?}: needs Dn prefix")))?;
                if days == 0 {
                    return Err(Error::Schema(format!("{label:?}: day span must be >= 1")));
                }
                let t_bits = (u32::BITS - days.leading_zeros()) as usize;
                if t_bits >= VALUE_BITS {
                    return Err(Error::Schema(format!("{label:?}: too many time bits")));
                }
                let low = if kind == SchemaKind::Rr { 'V' } else { 'C' };
                let layout: String = std::iter::repeat_n('T', t_bits)
                    .chain(std::iter::repeat_n(low, VALUE_BITS - t_bits))
                    .collect();
                SchemaSpec::new(kind, parse_layout(&layout)?, days)
            }
        }
    }

    pub fn with_seed(mut self, seed: u64) -> SchemaSpec {
        self.seed = seed;
        self
    }

    /// Table-style label, e.g. `D7 RR`.
    pub fn label(&self) -> String {
        match self.kind {
            SchemaKind::Ev | SchemaKind::Ud => self.kind.code().to_string(),
            _ => format!("D{} {}", self.horizon_days, self.kind.code()),
        }
    }

    fn check_layout(&self) -> Result<()> {
        let t = self.layout.count(BitRole::T);
        let v = self.layout.count(BitRole::V);
        let c = self.layout.count(BitRole::C);
        let ok = match self.kind {
            SchemaKind::Ev => c == 6,
            SchemaKind::Pv => v == 6,
            SchemaKind::Rr => t >= 1 && v >= 1 && c == 0,
            SchemaKind::Ri => t >= 1 && c >= 1 && v == 0,
            SchemaKind::Ud => true,
        };
        if !ok {
            return Err(Error::Schema(format!(
                "layout {} does not fit schema kind {}",
                self.layout,
                self.kind.code()
            )));
        }
        if matches!(self.kind, SchemaKind::Rr | SchemaKind::Ri) {
            let max_day = (1u32 << t) - 1;
            if self.horizon_days > max_day {
                return Err(Error::Schema(format!(
                    "horizon {} exceeds {t} time bits (max day {max_day})",
                    self.horizon_days
                )));
            }
        }
        Ok(())
    }

    /// Number of bits used by the revenue bucket (V bits), zero for non-V kinds.
    pub fn value_bits(&self) -> u32 {
        match self.kind {
            SchemaKind::Rr | SchemaKind::Pv => self.layout.count(BitRole::V),
            _ => 0,
        }
    }

    pub fn expected_boundaries(&self) -> usize {
        match self.value_bits() {
            0 => 0,
            b => (1usize << b) - 2,
        }
    }

    pub fn needs_fit(&self) -> bool {
        self.expected_boundaries() > 0
    }

    /// Revenue the bucket boundaries are fitted on by default: the full
    /// observation span for RR, the revenue window for PV.
    pub fn fit_revenue(&self, user: &UserRecord) -> Cents {
        match self.kind {
            SchemaKind::Rr => cumulative_revenue(user, self.horizon_days + 1),
            SchemaKind::Pv => cumulative_revenue(user, self.horizon_days),
            _ => Cents::ZERO,
        }
    }

    /// Bucket index for a revenue amount; 0 for non-spenders.
    pub fn bucket_of(&self, amount: Cents) -> u32 {
        if amount.0 <= 0 {
            return 0;
        }
        1 + self.boundaries.partition_point(|b| amount > *b) as u32
    }

    fn check_fitted(&self) -> Result<()> {
        if self.boundaries.len() != self.expected_boundaries() {
            return Err(Error::Schema(format!(
                "{} needs {} fitted boundaries, has {}",
                self.label(),
                self.expected_boundaries(),
                self.boundaries.len()
            )));
        }
        if self.boundaries.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Schema("boundaries not ascending".into()));
        }
        Ok(())
    }

    pub fn ud_value(&self, user_id: u64) -> u8 {
        let s = substream_seed(self.seed, Stream::UdSchema, user_id);
        (s % VALUE_COUNT as u64) as u8
    }
}

impl fmt::Display for SchemaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "kind={};layout={}", self.kind.code(), self.layout)?;
        match self.kind {
            SchemaKind::Rr | SchemaKind::Ri | SchemaKind::Pv => {
                write!(f, ";horizon={}", self.horizon_days)
            }
            SchemaKind::Ud => write!(f, ";seed={}", self.seed),
            SchemaKind::Ev => Ok(()),
        }
    }
}

/// Parses `kind=RR;layout=TTTVVV;horizon=7` (keys in any order; `layout`,
/// `horizon` and `seed` optional) or a preset label like `D7 RR`.
impl FromStr for SchemaSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<SchemaSpec> {
        if !s.contains('=') {
            return SchemaSpec::preset(s);
        }
        let mut kind = None;
        let mut layout = None;
        let mut horizon = None;
        let mut seed = None;
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("bad schema field {part:?}")))?;
            match k.trim() {
                "kind" => kind = Some(v.parse::<SchemaKind>()?),
                "layout" => layout = Some(parse_layout(v)?),
                "horizon" => {
                    horizon = Some(
                        v.trim()
                            .parse::<u32>()
                            .map_err(|_| Error::Schema(format!("bad horizon {v:?}")))?,
                    )
                }
                "seed" => {
                    seed = Some(
                        v.trim()
                            .parse::<u64>()
                            .map_err(|_| Error::Schema(format!("bad seed {v:?}")))?,
                    )
                }
                other => return Err(Error::Schema(format!("unknown schema key {other:?}"))),
            }
        }
        let kind = kind.ok_or_else(|| Error::Schema("missing kind".into()))?;
        let layout = match layout {
            Some(l) => l,
            None => parse_layout(kind.default_layout())?,
        };
        let horizon = horizon.unwrap_or(match kind {
            SchemaKind::Rr | SchemaKind::Ri => (1 << layout.time_bits()) - 1,
            SchemaKind::Pv => 30,
            _ => 0,
        });
        let spec = SchemaSpec::new(kind, layout, horizon)?;
        Ok(spec.with_seed(seed.unwrap_or(0)))
    }
}

/// Fits V-bit boundaries as equal-count quantiles of the positive revenues
/// `revenue_fn` yields over `users` (lower empirical quantile). Kinds
/// without V bits are returned unchanged.
pub fn fit_buckets<F>(users: &[UserRecord], schema: &SchemaSpec, revenue_fn: F) -> Result<SchemaSpec>
where
    F: Fn(&UserRecord) -> Cents,
{
    let mut out = schema.clone();
    if !schema.needs_fit() {
        out.boundaries.clear();
        return Ok(out);
    }
    let mut spend: Vec<Cents> = users
        .iter()
        .map(&revenue_fn)
        .filter(|c| c.0 > 0)
        .collect();
    if spend.is_empty() {
        return Err(Error::DegenerateFit);
    }
    spend.sort_unstable();
    out.boundaries = quantile_boundaries(&spend, (1usize << schema.value_bits()) - 1);
    Ok(out)
}

/// Boundary `k` is `sorted[ceil(k * n / buckets) - 1]` for `k = 1..buckets-1`.
pub(crate) fn quantile_boundaries(sorted: &[Cents], buckets: usize) -> Vec<Cents> {
    let n = sorted.len();
    (1..buckets)
        .map(|k| {
            let idx = (k * n).div_ceil(buckets).max(1) - 1;
            sorted[idx.min(n - 1)]
        })
        .collect()
}

/// Running observation state of one user, advanced event by event.
#[derive(Debug, Clone, Default)]
struct Observation {
    revenue: Cents,
    purchases: u64,
    flags: u8,
}

impl Observation {
    fn observe(&mut self, schema: &SchemaSpec, first_open: Timestamp, ts: Timestamp, kind: EventKind) {
        let day = (ts.0 - first_open.0).div_euclid(SECONDS_PER_DAY);
        match kind {
            EventKind::Purchase { amount } => {
                if day <= schema.horizon_days as i64 {
                    self.revenue += amount;
                    self.purchases += 1;
                }
            }
            EventKind::Flag { index } => {
                if day == 0 {
                    self.flags |= 1 << index;
                }
            }
            EventKind::Session => {}
        }
    }

    fn value(&self, schema: &SchemaSpec, user: &UserRecord, day: i64) -> u8 {
        match schema.kind {
            SchemaKind::Ev => self.flags & MAX_VALUE,
            SchemaKind::Ud => schema.ud_value(user.id),
            SchemaKind::Pv => {
                let bucket = schema.bucket_of(cumulative_revenue(user, schema.horizon_days));
                bucket.min(MAX_VALUE as u32) as u8
            }
            SchemaKind::Rr | SchemaKind::Ri => {
                let low_bits = schema.layout.low_bits();
                let low_max = (1u64 << low_bits) - 1;
                let t_max = (1i64 << schema.layout.time_bits()) - 1;
                let t = day.clamp(0, (schema.horizon_days as i64).min(t_max)) as u64;
                let low = if schema.kind == SchemaKind::Rr {
                    (schema.bucket_of(self.revenue) as u64).min(low_max)
                } else {
                    self.purchases.min(low_max)
                };
                ((t << low_bits) | low) as u8
            }
        }
    }
}

/// Value `f` would assign to `user` given everything observed up to and
/// including `at`.
pub fn candidate_value(user: &UserRecord, schema: &SchemaSpec, at: Timestamp) -> u8 {
    let first_open = user.first_open();
    let mut obs = Observation::default();
    for e in user.events.iter().take_while(|e| e.timestamp <= at) {
        obs.observe(schema, first_open, e.timestamp, e.kind);
    }
    let day = (at.0 - first_open.0).div_euclid(SECONDS_PER_DAY);
    obs.value(schema, user, day)
}

/// Committed conversion-value updates of one user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateTrace {
    pub user_id: u64,
    pub first_open: Timestamp,
    pub committed: Vec<(Timestamp, u8)>,
}

impl UpdateTrace {
    pub fn final_value(&self) -> u8 {
        self.committed.last().map_or(0, |(_, v)| *v)
    }

    pub fn last_commit(&self) -> Timestamp {
        self.committed.last().map_or(self.first_open, |(t, _)| *t)
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.committed.windows(2).all(|w| w[0].1 < w[1].1 && w[0].0 <= w[1].0)
    }
}

/// Replays the user's events: the value computed at first open is committed,
/// later candidates are committed only when strictly greater than the
/// current value and no more than 24h after the previous commit. The first
/// event past that window closes the trace. Non-committing events do not
/// reset the timer.
pub fn simulate_updates(user: &UserRecord, schema: &SchemaSpec) -> Result<UpdateTrace> {
    schema.check_fitted()?;
    let first_open = user.first_open();
    let mut obs = Observation::default();
    let mut events = user.events.iter().peekable();
    while let Some(e) = events.next_if(|e| e.timestamp <= first_open) {
        obs.observe(schema, first_open, e.timestamp, e.kind);
    }
    let mut current = obs.value(schema, user, 0);
    let mut last_commit = first_open;
    let mut committed = vec![(first_open, current)];
    if matches!(schema.kind, SchemaKind::Pv | SchemaKind::Ud) {
        // value is fixed at first open
        return Ok(UpdateTrace {
            user_id: user.id,
            first_open,
            committed,
        });
    }

    // Events sharing a timestamp are observed together before the candidate
    // is evaluated.
    while let Some(e) = events.next() {
        let ts = e.timestamp;
        if ts.0 - last_commit.0 > UPDATE_WINDOW_SECS {
            break;
        }
        obs.observe(schema, first_open, ts, e.kind);
        while let Some(same) = events.next_if(|n| n.timestamp == ts) {
            obs.observe(schema, first_open, same.timestamp, same.kind);
        }
        let day = (ts.0 - first_open.0).div_euclid(SECONDS_PER_DAY);
        let candidate = obs.value(schema, user, day);
        if candidate > current {
            current = candidate;
            last_commit = ts;
            committed.push((ts, candidate));
        }
    }

    Ok(UpdateTrace {
        user_id: user.id,
        first_open,
        committed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CampaignKey, Event};

    fn t0() -> Timestamp {
        Timestamp::from_ymd(2021, 5, 3).unwrap().plus_seconds(10 * 3600)
    }

    fn user(id: u64, events: Vec<Event>) -> UserRecord {
        UserRecord::new(id, t0(), CampaignKey(101), "US", events).unwrap()
    }

    fn spender(id: u64, usd: i64) -> UserRecord {
        user(id, vec![Event::session(t0()), Event::purchase(t0(), Cents(usd * 100))])
    }

    #[test]
    fn parse_layout_examples() {
        let l = parse_layout("TTTVVV").unwrap();
        assert_eq!((l.count(BitRole::T), l.count(BitRole::V)), (3, 3));
        assert_eq!(parse_layout("CCCCCC").unwrap().count(BitRole::C), 6);
        assert_eq!(parse_layout("VVVVVV").unwrap().count(BitRole::V), 6);
        assert!(parse_layout("TTTVV").is_err());
        assert!(parse_layout("TTTVVX").is_err());
        assert!(parse_layout("VTTVVV").is_err());
        assert_eq!(l.to_string(), "TTTVVV");
    }

    #[test]
    fn presets_and_text_grammar() {
        let d7 = SchemaSpec::preset("D7 RR").unwrap();
        assert_eq!(d7.layout.to_string(), "TTTVVV");
        assert_eq!(d7.horizon_days, 7);
        assert_eq!(SchemaSpec::preset("D1 RI").unwrap().layout.to_string(), "TCCCCC");
        assert_eq!(SchemaSpec::preset("D3 RR").unwrap().layout.to_string(), "TTVVVV");
        assert_eq!(SchemaSpec::preset("D30 PV").unwrap().horizon_days, 30);
        let parsed: SchemaSpec = "kind=RR;layout=TTTVVV;horizon=7".parse().unwrap();
        assert_eq!(parsed, d7);
        assert_eq!(parsed.to_string().parse::<SchemaSpec>().unwrap(), parsed);
        let ud: SchemaSpec = "kind=UD;seed=9".parse().unwrap();
        assert_eq!(ud.seed, 9);
        assert!("kind=RR;layout=CCCCCC".parse::<SchemaSpec>().is_err());
        assert!("kind=RR;layout=TVVVVV;horizon=7".parse::<SchemaSpec>().is_err());
        assert!("kind=XX".parse::<SchemaSpec>().is_err());
    }

    #[test]
    fn fit_seven_equal_buckets() {
        let users: Vec<_> = (1..=7).map(|i| spender(i, i as i64)).collect();
        let rr = SchemaSpec::preset("D7 RR").unwrap();
        let fitted = fit_buckets(&users, &rr, |u| cumulative_revenue(u, 30)).unwrap();
        assert_eq!(fitted.boundaries.len(), 6);
        // sort-and-slice oracle: 7 spenders into 7 buckets → one per bucket.
        let mut buckets: Vec<u32> = users
            .iter()
            .map(|u| fitted.bucket_of(cumulative_revenue(u, 30)))
            .collect();
        buckets.sort();
        assert_eq!(buckets, (1..=7).collect::<Vec<_>>());
    }

    #[test]
    fn fit_degenerate_cases() {
        let rr = SchemaSpec::preset("D7 RR").unwrap();
        let same: Vec<_> = (0..5).map(|i| spender(i, 3)).collect();
        let fitted = fit_buckets(&same, &rr, |u| cumulative_revenue(u, 30)).unwrap();
        assert!(fitted.boundaries.iter().all(|b| *b == Cents(300)));
        assert_eq!(fitted.bucket_of(Cents(300)), 1);

        let mixed = vec![spender(1, 5), user(2, vec![]), user(3, vec![])];
        let fitted = fit_buckets(&mixed, &rr, |u| cumulative_revenue(u, 30)).unwrap();
        assert_eq!(fitted.bucket_of(Cents(500)), 1);
        assert_eq!(fitted.bucket_of(Cents(0)), 0);

        let none = vec![user(2, vec![])];
        assert!(matches!(
            fit_buckets(&none, &rr, |u| cumulative_revenue(u, 30)),
            Err(Error::DegenerateFit)
        ));
    }

    #[test]
    fn candidate_examples() {
        let ev = SchemaSpec::preset("EV").unwrap();
        let u = user(1, vec![Event::flag(t0(), 0), Event::flag(t0().plus_seconds(60), 5)]);
        assert_eq!(candidate_value(&u, &ev, t0().plus_seconds(3600)), 33);
        // day-1 flags are ignored
        let late = user(2, vec![Event::flag(t0().plus_days(1), 3)]);
        assert_eq!(candidate_value(&late, &ev, t0().plus_days(2)), 0);

        // D7 RR on day 3 with a revenue in bucket 5.
        let mut rr = SchemaSpec::preset("D7 RR").unwrap();
        rr.boundaries = vec![Cents(100), Cents(200), Cents(300), Cents(400), Cents(500), Cents(600)];
        let buyer = user(3, vec![Event::purchase(t0().plus_days(2), Cents(450))]);
        assert_eq!(rr.bucket_of(Cents(450)), 5);
        assert_eq!(candidate_value(&buyer, &rr, t0().plus_days(3)), 3 * 8 + 5);

        let empty = user(4, vec![]);
        for spec in [ev, rr, SchemaSpec::preset("D1 RI").unwrap()] {
            assert_eq!(candidate_value(&empty, &spec, t0()), 0);
        }
    }

    #[test]
    fn daily_sessions_advance_time_bits() {
        let rr = fit_buckets(&[spender(9, 1)], &SchemaSpec::preset("D7 RR").unwrap(), |u| {
            cumulative_revenue(u, 8)
        })
        .unwrap();
        let events = (0..=7).map(|d| Event::session(t0().plus_days(d))).collect();
        let trace = simulate_updates(&user(1, events), &rr).unwrap();
        let values: Vec<u8> = trace.committed.iter().map(|(_, v)| *v).collect();
        // replay oracle: day d → d << 3, committed once per day
        assert_eq!(values, vec![0, 8, 16, 24, 32, 40, 48, 56]);
    }

    #[test]
    fn ev_strict_increase_filter() {
        let ev = SchemaSpec::preset("EV").unwrap();
        let u = user(
            1,
            vec![
                Event::flag(t0(), 0),
                Event::flag(t0().plus_seconds(600), 1),
                Event::flag(t0().plus_seconds(1200), 1),
            ],
        );
        let trace = simulate_updates(&u, &ev).unwrap();
        let values: Vec<u8> = trace.committed.iter().map(|(_, v)| *v).collect();
        assert_eq!(values, vec![1, 3]);
    }

    #[test]
    fn inactive_user_freezes() {
        let mut rr = SchemaSpec::preset("D7 RR").unwrap();
        rr.boundaries = vec![Cents(1); 6];
        let u = user(
            1,
            vec![
                Event::session(t0()),
                Event::session(t0().plus_days(2)),
                Event::purchase(t0().plus_days(2), Cents(5000)),
            ],
        );
        let trace = simulate_updates(&u, &rr).unwrap();
        assert_eq!(trace.committed, vec![(t0(), 0)]);
    }

    #[test]
    fn pv_commits_at_first_open() {
        let users: Vec<_> = (1..=10).map(|i| spender(i, i as i64)).collect();
        let pv = SchemaSpec::preset("D30 PV").unwrap();
        let pv = fit_buckets(&users, &pv, |u| pv.fit_revenue(u)).unwrap();
        for u in &users {
            let trace = simulate_updates(u, &pv).unwrap();
            assert_eq!(trace.committed.len(), 1);
            assert_eq!(trace.final_value() as u32, pv.bucket_of(cumulative_revenue(u, 30)));
        }
    }

    #[test]
    fn ud_reproducible() {
        let a = SchemaSpec::preset("UD").unwrap().with_seed(1);
        let b = SchemaSpec::preset("UD").unwrap().with_seed(1);
        let c = SchemaSpec::preset("UD").unwrap().with_seed(2);
        let va: Vec<u8> = (0..200).map(|i| a.ud_value(i)).collect();
        let vb: Vec<u8> = (0..200).map(|i| b.ud_value(i)).collect();
        let vc: Vec<u8> = (0..200).map(|i| c.ud_value(i)).collect();
        assert_eq!(va, vb);
        assert_ne!(va, vc);
    }

    #[test]
    fn unfitted_schema_rejected() {
        let rr = SchemaSpec::preset("D7 RR").unwrap();
        assert!(simulate_updates(&user(1, vec![]), &rr).is_err());
    }
}
