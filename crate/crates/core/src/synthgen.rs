//! Seeded synthetic free-to-play cohorts with known last-click origins.
//!
//! Modeling choices: geometric retention decay with a floor, spenders
//! drawn per campaign quality, a geometric first-purchase day, repeat
//! purchases as per-active-day Bernoulli trials, and log-normal amounts
//! snapped to store price tiers. Day-0 flags scale with a latent
//! engagement level that is higher for spenders.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    CampaignKey, CampaignSet, Cents, Event, Timestamp, UserRecord, FLAG_COUNT, SECONDS_PER_DAY,
    SECONDS_PER_HOUR,
};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupWeight {
    pub label: String,
    pub weight: f64,
}

/// Probability of being active on day `k >= 1`:
/// `floor + (base - floor) * decay^(k - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retention {
    pub base: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Retention {
    pub fn active_prob(&self, day: u32) -> f64 {
        let k = day.saturating_sub(1) as i32;
        self.floor + (self.base - self.floor) * self.decay.powi(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurchaseModel {
    /// Geometric success probability of the first purchase day (0-based).
    pub first_day_p: f64,
    /// Purchase probability on each later active day.
    pub repeat_prob: f64,
    /// Log-normal location of one purchase, in log-cents.
    pub mu: f64,
    /// Log-normal scale of one purchase.
    pub sigma: f64,
    /// Spread of the per-user spend multiplier (log scale).
    pub user_sigma: f64,
    /// Spread of the per-user repeat-purchase rate (log scale).
    #[serde(default)]
    pub frequency_sigma: f64,
    /// Extra sessions per active day at full engagement.
    #[serde(default = "default_session_spread")]
    pub session_spread: f64,
    /// Additional sessions on the install day.
    #[serde(default)]
    pub day0_extra_sessions: u32,
    /// Hours of the day sessions spread over.
    #[serde(default = "default_day_span")]
    pub day_span_hours: i64,
    /// Fixed price of every spender's first purchase in cents (a starter
    /// pack); 0 draws it like any other purchase.
    #[serde(default)]
    pub starter_price: i64,
    /// Each repeat purchase is `(1 + escalation)` times the previous one in
    /// expectation, up to `escalation_cap` times the base amount.
    #[serde(default)]
    pub escalation: f64,
    #[serde(default = "default_escalation_cap")]
    pub escalation_cap: f64,
    /// Relative growth of purchase amounts per 30 days of tenure.
    #[serde(default)]
    pub tenure_growth: f64,
    /// Probability that a spender quits for good at a uniform day in
    /// `[1, churn_window_days)`.
    #[serde(default)]
    pub early_churn: f64,
    #[serde(default)]
    pub churn_window_days: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_users: usize,
    pub n_networks: u32,
    pub campaigns_per_network: u32,
    pub organic_share: f64,
    pub spender_rate: f64,
    /// Log-normal spread of per-campaign spender propensity.
    pub campaign_quality_sigma: f64,
    /// Install weights per paid campaign; uniform when empty.
    pub campaign_weights: Vec<f64>,
    pub retention: Retention,
    pub spender_retention: Retention,
    pub purchase: PurchaseModel,
    pub flag_probs: [f64; FLAG_COUNT as usize],
    /// How strongly day-0 flag probabilities scale with engagement:
    /// multiplier `1 + effect * (engagement - 0.5)`.
    pub engagement_effect: f64,
    /// Spender engagement is `U^(1/(1+gap))`, everyone else's `U^(1+gap)`.
    pub engagement_gap: f64,
    pub n_weeks: u32,
    /// Monday the registration window starts on, `YYYY-MM-DD`.
    pub start_date: String,
    /// Days of activity generated per user.
    pub horizon_days: u32,
    pub groups: Vec<GroupWeight>,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        let group = |label: &str, weight: f64| GroupWeight {
            label: label.to_string(),
            weight,
        };
        GenConfig {
            n_users: 50_000,
            n_networks: 2,
            campaigns_per_network: 5,
            organic_share: 0.3,
            spender_rate: 0.05,
            campaign_quality_sigma: 0.6,
            campaign_weights: Vec::new(),
            retention: Retention {
                base: 0.35,
                decay: 0.95,
                floor: 0.04,
            },
            spender_retention: Retention {
                base: 0.85,
                decay: 0.98,
                floor: 0.35,
            },
            purchase: PurchaseModel {
                first_day_p: 0.85,
                repeat_prob: 0.1,
                mu: 6.0,
                sigma: 0.6,
                user_sigma: 0.3,
                frequency_sigma: 0.5,
                session_spread: 5.0,
                day0_extra_sessions: 4,
                day_span_hours: 16,
                starter_price: 499,
                escalation: 0.6,
                escalation_cap: 8.0,
                tenure_growth: 0.8,
                early_churn: 0.0,
                churn_window_days: 8,
            },
            flag_probs: [0.9, 0.6, 0.45, 0.3, 0.15, 0.05],
            engagement_effect: 2.0,
            engagement_gap: 2.0,
            n_weeks: 12,
            start_date: "2021-05-03".into(),
            horizon_days: 90,
            groups: vec![
                group("US", 0.28),
                group("JP", 0.14),
                group("DE", 0.1),
                group("GB", 0.1),
                group("FR", 0.08),
                group("KR", 0.08),
                group("rest-a", 0.11),
                group("rest-b", 0.11),
            ],
            seed: 1,
        }
    }
}

fn default_session_spread() -> f64 {
    4.0
}

fn default_escalation_cap() -> f64 {
    8.0
}

fn default_day_span() -> i64 {
    16
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {p} is not a probability")))
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        check_prob("organic_share", self.organic_share)?;
        check_prob("spender_rate", self.spender_rate)?;
        for (name, r) in [("retention", self.retention), ("spender_retention", self.spender_retention)] {
            check_prob(&format!("{name}.base"), r.base)?;
            check_prob(&format!("{name}.decay"), r.decay)?;
            check_prob(&format!("{name}.floor"), r.floor)?;
        }
        check_prob("purchase.first_day_p", self.purchase.first_day_p)?;
        check_prob("purchase.repeat_prob", self.purchase.repeat_prob)?;
        for (i, p) in self.flag_probs.iter().enumerate() {
            check_prob(&format!("flag_probs[{i}]"), *p)?;
        }
        if self.purchase.first_day_p == 0.0 && self.spender_rate > 0.0 {
            return Err(Error::Config("purchase.first_day_p must be > 0".into()));
        }
        if self.campaigns_per_network == 0 || self.campaigns_per_network > 100 {
            return Err(Error::Config("campaigns_per_network must be in 1..=100".into()));
        }
        if self.n_networks == 0 && self.organic_share < 1.0 {
            return Err(Error::Config("n_networks must be >= 1 unless all users are organic".into()));
        }
        if self.n_weeks == 0 {
            return Err(Error::Config("n_weeks must be >= 1".into()));
        }
        if self.groups.is_empty() || self.groups.iter().any(|g| g.weight < 0.0) {
            return Err(Error::Config("groups need non-negative weights".into()));
        }
        if !self.campaign_weights.is_empty()
            && self.campaign_weights.len() != (self.n_networks * self.campaigns_per_network) as usize
        {
            return Err(Error::Config("campaign_weights length != number of campaigns".into()));
        }
        if self.purchase.sigma < 0.0
            || self.purchase.user_sigma < 0.0
            || self.purchase.frequency_sigma < 0.0
            || self.campaign_quality_sigma < 0.0
        {
            return Err(Error::Config("log-normal sigmas must be >= 0".into()));
        }
        if self.engagement_gap < 0.0 || self.engagement_effect < 0.0 {
            return Err(Error::Config("engagement_gap and engagement_effect must be >= 0".into()));
        }
        check_prob("purchase.early_churn", self.purchase.early_churn)?;
        if self.purchase.early_churn > 0.0 && self.purchase.churn_window_days < 2 {
            return Err(Error::Config("purchase.churn_window_days must be >= 2".into()));
        }
        if !(4..=24).contains(&self.purchase.day_span_hours) {
            return Err(Error::Config("purchase.day_span_hours must be in 4..=24".into()));
        }
        if self.purchase.starter_price < 0 {
            return Err(Error::Config("purchase.starter_price must be >= 0".into()));
        }
        if self.purchase.escalation < 0.0 || self.purchase.escalation_cap < 1.0 {
            return Err(Error::Config("purchase.escalation must be >= 0 and escalation_cap >= 1".into()));
        }
        if self.purchase.tenure_growth < 0.0 {
            return Err(Error::Config("purchase.tenure_growth must be >= 0".into()));
        }
        self.start().map(|_| ())
    }

    pub fn start(&self) -> Result<Timestamp> {
        let parts: Vec<&str> = self.start_date.split('-').collect();
        let parse = |s: &str| s.parse::<u32>().ok();
        match parts.as_slice() {
            [y, m, d] => parse(y)
                .zip(parse(m))
                .zip(parse(d))
                .and_then(|((y, m), d)| Timestamp::from_ymd(y as i32, m, d))
                .ok_or_else(|| Error::Config(format!("bad start_date {:?}", self.start_date))),
            _ => Err(Error::Config(format!("bad start_date {:?}", self.start_date))),
        }
    }

    pub fn campaigns(&self) -> Result<CampaignSet> {
        let mut paid = Vec::new();
        for n in 1..=self.n_networks {
            for c in 0..self.campaigns_per_network {
                paid.push(CampaignKey::encode(n, c)?);
            }
        }
        CampaignSet::new(paid, None)
    }
}

/// A user population with its campaign catalogue and observation cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub users: Vec<UserRecord>,
    pub campaigns: CampaignSet,
    /// Instant data is observed until; maturity is checked against it.
    pub observed_until: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: GenConfig,
}

const PRICE_TIERS: [i64; 9] = [99, 199, 299, 499, 999, 1999, 4999, 9999, 19999];

fn snap_price(raw: f64) -> Cents {
    let best = PRICE_TIERS
        .iter()
        .min_by(|a, b| {
            let da = ((**a as f64).ln() - raw.ln()).abs();
            let db = ((**b as f64).ln() - raw.ln()).abs();
            da.total_cmp(&db)
        })
        .copied()
        .unwrap_or(99);
    Cents(best)
}

struct CampaignModel {
    keys: Vec<CampaignKey>,
    index: Option<WeightedIndex<f64>>,
    quality: Vec<f64>,
}

fn campaign_model(cfg: &GenConfig, campaigns: &CampaignSet) -> Result<CampaignModel> {
    let keys = campaigns.paid.clone();
    if keys.is_empty() {
        return Ok(CampaignModel {
            keys,
            index: None,
            quality: Vec::new(),
        });
    }
    let weights = if cfg.campaign_weights.is_empty() {
        vec![1.0; keys.len()]
    } else {
        cfg.campaign_weights.clone()
    };
    let index = WeightedIndex::new(&weights)
        .map_err(|e| Error::Config(format!("campaign_weights: {e}")))?;
    let mut rng = substream(cfg.seed, Stream::Campaigns, 0);
    let spread = LogNormal::new(0.0, cfg.campaign_quality_sigma)
        .map_err(|e| Error::Config(format!("campaign_quality_sigma: {e}")))?;
    let raw: Vec<f64> = keys.iter().map(|_| spread.sample(&mut rng)).collect();
    // normalize to unit install-weighted mean so the overall spender rate holds
    let wsum: f64 = weights.iter().sum();
    let mean: f64 = raw.iter().zip(&weights).map(|(q, w)| q * w).sum::<f64>() / wsum;
    Ok(CampaignModel {
        keys,
        index: Some(index),
        quality: raw.iter().map(|q| q / mean).collect(),
    })
}

fn geometric<R: Rng>(rng: &mut R, p: f64) -> u32 {
    if p >= 1.0 {
        return 0;
    }
    let u: f64 = rng.random::<f64>();
    ((1.0 - u).ln() / (1.0 - p).ln()).floor().min(u32::MAX as f64) as u32
}

fn generate_user(
    cfg: &GenConfig,
    id: u64,
    start: Timestamp,
    campaigns: &CampaignSet,
    model: &CampaignModel,
    groups: &WeightedIndex<f64>,
) -> Result<UserRecord> {
    let mut rng = substream(cfg.seed, Stream::Generation, id);
    let window = cfg.n_weeks as i64 * 7 * SECONDS_PER_DAY;
    let registered_at = start.plus_seconds(rng.random_range(0..window));
    let group = cfg.groups[groups.sample(&mut rng)].label.clone();

    let (origin, quality) = match &model.index {
        Some(index) if rng.random::<f64>() >= cfg.organic_share => {
            let c = index.sample(&mut rng);
            (model.keys[c], model.quality[c])
        }
        _ => (campaigns.organic, 1.0),
    };
    let spender = rng.random::<f64>() < (cfg.spender_rate * quality).min(1.0);
    let gap = 1.0 + cfg.engagement_gap;
    let engagement: f64 = if spender {
        rng.random::<f64>().powf(1.0 / gap)
    } else {
        rng.random::<f64>().powf(gap)
    };
    let retention = if spender { cfg.spender_retention } else { cfg.retention };
    let horizon = cfg.horizon_days.max(1);
    let pm = &cfg.purchase;

    let first_purchase_day = spender.then(|| geometric(&mut rng, pm.first_day_p).min(horizon - 1));
    let amount = LogNormal::new(pm.mu, pm.sigma).map_err(|e| Error::Config(format!("purchase.sigma: {e}")))?;
    let user_scale = Normal::new(0.0, pm.user_sigma)
        .map_err(|e| Error::Config(format!("purchase.user_sigma: {e}")))?
        .sample(&mut rng)
        .exp();
    let frequency = Normal::new(0.0, pm.frequency_sigma)
        .map_err(|e| Error::Config(format!("purchase.frequency_sigma: {e}")))?
        .sample(&mut rng)
        .exp();
    let repeat_prob = (pm.repeat_prob * frequency * (0.5 + engagement)).min(1.0);
    // last active day for churning spenders
    let lifetime = if spender && rng.random::<f64>() < pm.early_churn {
        rng.random_range(1..pm.churn_window_days.max(2))
    } else {
        horizon
    };
    let activity = (0.7 + 0.6 * engagement).min(1.0 / retention.base.max(1e-9));

    let mut events = vec![Event::session(registered_at)];
    // day 0: flags and a couple of extra sessions within the first hours
    let flag_boost = (1.0 + cfg.engagement_effect * (engagement - 0.5)).max(0.0);
    for i in 0..FLAG_COUNT {
        let p = (cfg.flag_probs[i as usize] * flag_boost).min(1.0);
        if rng.random::<f64>() < p {
            let at = registered_at.plus_seconds(rng.random_range(0..8 * SECONDS_PER_HOUR));
            events.push(Event::flag(at, i));
        }
    }
    let mut bought = 0i32;
    for day in 0..horizon {
        let forced = first_purchase_day == Some(day);
        let alive = day <= lifetime || forced;
        let active = day == 0
            || forced
            || (alive && rng.random::<f64>() < (retention.active_prob(day) * activity).min(1.0));
        if !active {
            continue;
        }
        // sessions drift around the registration time of day; day 0 starts at first open
        let n = 1 + (rng.random::<f64>() * (1.0 + pm.session_spread * engagement)) as u32;
        let mut sessions = Vec::with_capacity(n as usize);
        if day == 0 {
            sessions.push(registered_at);
            for _ in 1..n + pm.day0_extra_sessions {
                sessions.push(registered_at.plus_seconds(rng.random_range(0..pm.day_span_hours * SECONDS_PER_HOUR)));
            }
        } else {
            let base = registered_at.plus_days(day as i64);
            for _ in 0..n {
                let offset = rng.random_range(-3 * SECONDS_PER_HOUR..(pm.day_span_hours - 3) * SECONDS_PER_HOUR);
                sessions.push(base.plus_seconds(offset));
            }
        }
        sessions.sort();
        events.extend(sessions.iter().skip(usize::from(day == 0)).map(|t| Event::session(*t)));

        let tenure = 1.0 + pm.tenure_growth * day as f64 / 30.0;
        let draw = |rng: &mut _, bought: &mut i32| {
            let esc = (1.0 + pm.escalation).powi(*bought).min(pm.escalation_cap);
            *bought += 1;
            snap_price(amount.sample(rng) * user_scale * tenure * esc)
        };
        let first_session = match first_purchase_day {
            Some(first) if day == first => Some(rng.random_range(0..sessions.len())),
            Some(first) if day > first => Some(0),
            _ => None,
        };
        let Some(from) = first_session else { continue };
        for (i, at) in sessions.iter().enumerate().skip(from) {
            let at = at.plus_seconds(60);
            if forced && i == from {
                let price = if pm.starter_price > 0 {
                    Cents(pm.starter_price)
                } else {
                    draw(&mut rng, &mut bought)
                };
                events.push(Event::purchase(at, price));
            } else if rng.random::<f64>() < repeat_prob {
                let price = draw(&mut rng, &mut bought);
                events.push(Event::purchase(at, price));
            }
        }
    }

    events.sort_by_key(|e| e.timestamp);
    UserRecord::new(id, registered_at, origin, group, events)
}

/// Generates `cfg.n_users` users, sorted by id, reproducible from `cfg.seed`.
pub fn generate_dataset(cfg: &GenConfig) -> Result<(Dataset, Provenance)> {
    cfg.validate()?;
    let start = cfg.start()?;
    let campaigns = cfg.campaigns()?;
    let model = campaign_model(cfg, &campaigns)?;
    let groups = WeightedIndex::new(cfg.groups.iter().map(|g| g.weight))
        .map_err(|e| Error::Config(format!("group weights: {e}")))?;

    let ids: Vec<u64> = (1..=cfg.n_users as u64).collect();
    let gen = |id: &u64| generate_user(cfg, *id, start, &campaigns, &model, &groups);
    #[cfg(feature = "parallel")]
    let users: Result<Vec<UserRecord>> = {
        use rayon::prelude::*;
        ids.par_iter().map(gen).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let users: Result<Vec<UserRecord>> = ids.iter().map(gen).collect();

    let observed_until = start.plus_days(cfg.n_weeks as i64 * 7 + cfg.horizon_days as i64);
    let provenance = Provenance {
        generator: format!("skattr-synthgen/{}", env!("CARGO_PKG_VERSION")),
        seed: cfg.seed,
        config_hash: crate::io::config_hash(cfg)?,
        config: cfg.clone(),
    };
    Ok((
        Dataset {
            users: users?,
            campaigns,
            observed_until,
        },
        provenance,
    ))
}

/// Users whose revenue is exactly `revenue_per_bucket[b]` for every member
/// of bucket `b`. All purchases happen at first open, so the revenue is the
/// same for every window `t >= 1`. Users cycle through `campaigns`.
pub fn homogeneous_fixture(
    n_buckets: usize,
    users_per_bucket: usize,
    revenue_per_bucket: &[Cents],
    campaigns: &CampaignSet,
    registered_at: Timestamp,
) -> Result<Vec<UserRecord>> {
    if users_per_bucket == 0 {
        return Err(Error::Config("users_per_bucket must be >= 1".into()));
    }
    if revenue_per_bucket.len() != n_buckets {
        return Err(Error::Config("one revenue per bucket required".into()));
    }
    let columns = campaigns.columns();
    let mut users = Vec::with_capacity(n_buckets * users_per_bucket);
    let mut id = 1u64;
    for revenue in revenue_per_bucket {
        for _ in 0..users_per_bucket {
            let mut events = vec![Event::session(registered_at)];
            if revenue.0 > 0 {
                events.push(Event::purchase(registered_at, *revenue));
            }
            let origin = columns[(id as usize - 1) % columns.len()];
            users.push(UserRecord::new(id, registered_at, origin, "US", events)?);
            id += 1;
        }
    }
    Ok(users)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cumulative_revenue;

    fn small(seed: u64) -> GenConfig {
        GenConfig {
            n_users: 2_000,
            seed,
            ..GenConfig::default()
        }
    }

    #[test]
    fn zero_spender_rate_means_no_revenue() {
        let cfg = GenConfig {
            spender_rate: 0.0,
            ..small(3)
        };
        let (ds, _) = generate_dataset(&cfg).unwrap();
        assert!(ds.users.iter().all(|u| cumulative_revenue(u, 90) == Cents(0)));
    }

    #[test]
    fn all_organic() {
        let cfg = GenConfig {
            organic_share: 1.0,
            ..small(4)
        };
        let (ds, _) = generate_dataset(&cfg).unwrap();
        assert!(ds.users.iter().all(|u| u.origin == ds.campaigns.organic));
    }

    #[test]
    fn same_seed_same_dataset() {
        let (a, pa) = generate_dataset(&small(5)).unwrap();
        let (b, pb) = generate_dataset(&small(5)).unwrap();
        let (c, _) = generate_dataset(&small(6)).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_ne!(a, c);
    }

    #[test]
    fn users_valid_and_sorted() {
        let (ds, _) = generate_dataset(&small(7)).unwrap();
        assert!(ds.users.windows(2).all(|w| w[0].id < w[1].id));
        for u in &ds.users {
            u.validate().unwrap();
            assert!(u.is_mature(90, ds.observed_until));
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(generate_dataset(&GenConfig { spender_rate: 1.5, ..small(1) }).is_err());
        assert!(generate_dataset(&GenConfig { campaigns_per_network: 101, ..small(1) }).is_err());
        assert!(generate_dataset(&GenConfig { n_weeks: 0, ..small(1) }).is_err());
    }

    #[test]
    fn fixture_buckets_constant() {
        let cs = CampaignSet::new(vec![CampaignKey(101), CampaignKey(102)], None).unwrap();
        let at = Timestamp::from_ymd(2021, 5, 3).unwrap();
        let users = homogeneous_fixture(2, 3, &[Cents(0), Cents(1000)], &cs, at).unwrap();
        assert_eq!(users.len(), 6);
        let revs: Vec<i64> = users.iter().map(|u| cumulative_revenue(u, 30).0).collect();
        assert_eq!(revs, vec![0, 0, 0, 1000, 1000, 1000]);
        assert!(homogeneous_fixture(1, 0, &[Cents(1)], &cs, at).is_err());
    }

    #[test]
    fn price_snapping() {
        assert_eq!(snap_price(480.0), Cents(499));
        assert_eq!(snap_price(1.0), Cents(99));
        assert_eq!(snap_price(1e9), Cents(19999));
    }
}
