//! Postbacks and per-(group, week) conversion-value count matrices.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CampaignKey, CampaignSet, CellKey, Timestamp, UserRecord, SECONDS_PER_DAY};
use crate::schema::{UpdateTrace, UPDATE_WINDOW_SECS, VALUE_COUNT};

/// Per-value user counts, indexed by conversion value.
pub type ValueCounts = [u64; VALUE_COUNT];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Postback {
    pub user_id: u64,
    pub final_value: u8,
    pub postback_time: Timestamp,
    pub group: String,
}

impl Postback {
    pub fn cell(&self) -> CellKey {
        CellKey {
            group: self.group.clone(),
            week: self.postback_time.week(),
        }
    }
}

/// Final value of the trace, delivered `24h + Uniform[0, 24h)` after the
/// last commit.
pub fn finalize_postback<R: Rng + ?Sized>(trace: &UpdateTrace, group: &str, rng: &mut R) -> Postback {
    let delay = rng.random_range(0..SECONDS_PER_DAY);
    Postback {
        user_id: trace.user_id,
        final_value: trace.final_value(),
        postback_time: trace.last_commit().plus_seconds(UPDATE_WINDOW_SECS + delay),
        group: group.to_string(),
    }
}

/// Count matrix `x_{v,alpha}` for one `(group, week)`.
///
/// Rows are conversion values `0..64`. After privacy is applied, suppressed
/// rows read as `None` and their mass sits in the null row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrix {
    pub scope: CellKey,
    pub columns: Vec<CampaignKey>,
    pub organic: CampaignKey,
    counts: Vec<u64>,
    suppressed: Vec<bool>,
    null_row: Option<Vec<u64>>,
}

impl CountMatrix {
    pub fn new(scope: CellKey, campaigns: &CampaignSet) -> CountMatrix {
        let columns = campaigns.columns();
        CountMatrix {
            scope,
            counts: vec![0; VALUE_COUNT * columns.len()],
            suppressed: vec![false; VALUE_COUNT],
            null_row: None,
            organic: campaigns.organic,
            columns,
        }
    }

    pub fn privacy_applied(&self) -> bool {
        self.null_row.is_some()
    }

    pub fn column_index(&self, key: CampaignKey) -> Option<usize> {
        self.columns.iter().position(|c| *c == key)
    }

    fn idx(&self, value: u8, col: usize) -> usize {
        value as usize * self.columns.len() + col
    }

    /// `None` when the row is suppressed or the column unknown.
    pub fn get(&self, value: u8, key: CampaignKey) -> Option<u64> {
        let col = self.column_index(key)?;
        if self.suppressed[value as usize] {
            return None;
        }
        Some(self.counts[self.idx(value, col)])
    }

    pub fn get_at(&self, value: u8, col: usize) -> Option<u64> {
        if self.suppressed[value as usize] {
            None
        } else {
            Some(self.counts[self.idx(value, col)])
        }
    }

    pub fn add(&mut self, value: u8, key: CampaignKey, n: u64) -> Result<()> {
        let col = self
            .column_index(key)
            .ok_or_else(|| Error::Config(format!("campaign {key} not in matrix columns")))?;
        let i = self.idx(value, col);
        self.counts[i] += n;
        Ok(())
    }

    pub fn is_suppressed(&self, value: u8) -> bool {
        self.suppressed[value as usize]
    }

    pub fn suppressed_values(&self) -> impl Iterator<Item = u8> + '_ {
        (0..VALUE_COUNT as u8).filter(|v| self.suppressed[*v as usize])
    }

    pub fn null_row(&self) -> Option<&[u64]> {
        self.null_row.as_deref()
    }

    /// Visible row total; zero for suppressed rows.
    pub fn row_total(&self, value: u8) -> u64 {
        let start = self.idx(value, 0);
        self.counts[start..start + self.columns.len()].iter().sum()
    }

    pub fn row_totals(&self) -> ValueCounts {
        std::array::from_fn(|v| self.row_total(v as u8))
    }

    /// Column sum including the null row.
    pub fn column_sum(&self, col: usize) -> u64 {
        let visible: u64 = (0..VALUE_COUNT as u8)
            .map(|v| self.counts[self.idx(v, col)])
            .sum();
        visible + self.null_row.as_ref().map_or(0, |n| n[col])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.null_row.as_ref().map_or(0, |n| n.iter().sum())
    }

    /// Folds the given rows into the null row.
    pub(crate) fn suppress_rows(&self, rows: &[bool]) -> CountMatrix {
        let ncols = self.columns.len();
        let mut out = self.clone();
        let mut null = vec![0u64; ncols];
        for (v, hide) in rows.iter().enumerate().take(VALUE_COUNT) {
            if *hide {
                out.suppressed[v] = true;
                for (col, slot) in null.iter_mut().enumerate() {
                    let i = v * ncols + col;
                    *slot += out.counts[i];
                    out.counts[i] = 0;
                }
            }
        }
        out.null_row = Some(null);
        out
    }

    /// Rebuilds a matrix from stored parts (used by the CSV reader).
    pub(crate) fn from_parts(
        scope: CellKey,
        columns: Vec<CampaignKey>,
        organic: CampaignKey,
        counts: Vec<u64>,
        suppressed: Vec<bool>,
        null_row: Option<Vec<u64>>,
    ) -> CountMatrix {
        CountMatrix {
            scope,
            columns,
            organic,
            counts,
            suppressed,
            null_row,
        }
    }
}

fn user_index(users: &[UserRecord]) -> HashMap<u64, &UserRecord> {
    users.iter().map(|u| (u.id, u)).collect()
}

fn check_unique(postbacks: &[Postback]) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(postbacks.len());
    for pb in postbacks {
        if !seen.insert(pb.user_id) {
            return Err(Error::DuplicatePostback(pb.user_id));
        }
    }
    Ok(())
}

/// Paid-install counts per `(group, postback week)`. Organic users send no
/// postback to any network; their column stays zero until
/// [`estimate_organic`].
pub fn build_counts(
    postbacks: &[Postback],
    users: &[UserRecord],
    campaigns: &CampaignSet,
) -> Result<BTreeMap<CellKey, CountMatrix>> {
    check_unique(postbacks)?;
    let by_id = user_index(users);
    let mut out: BTreeMap<CellKey, CountMatrix> = BTreeMap::new();
    for pb in postbacks {
        let user = by_id.get(&pb.user_id).ok_or(Error::UnknownUser(pb.user_id))?;
        if campaigns.is_organic(user.origin) {
            continue;
        }
        let cell = pb.cell();
        out.entry(cell.clone())
            .or_insert_with(|| CountMatrix::new(cell, campaigns))
            .add(pb.final_value, user.origin, 1)?;
    }
    Ok(out)
}

/// Developer-side per-value user counts per cell (the app knows every
/// user's value, paid or organic).
pub fn developer_totals(postbacks: &[Postback]) -> Result<BTreeMap<CellKey, ValueCounts>> {
    check_unique(postbacks)?;
    let mut out: BTreeMap<CellKey, ValueCounts> = BTreeMap::new();
    for pb in postbacks {
        out.entry(pb.cell()).or_insert([0; VALUE_COUNT])[pb.final_value as usize] += 1;
    }
    Ok(out)
}

/// Fills the organic column with `developer_totals[v] - sum of paid counts`.
pub fn estimate_organic(matrix: &CountMatrix, developer_totals: &ValueCounts) -> Result<CountMatrix> {
    if matrix.privacy_applied() {
        return Err(Error::AlreadyPrivatized);
    }
    let organic_col = matrix
        .column_index(matrix.organic)
        .ok_or_else(|| Error::Config("matrix has no organic column".into()))?;
    let mut out = matrix.clone();
    for v in 0..VALUE_COUNT as u8 {
        let paid: u64 = (0..matrix.columns.len())
            .filter(|c| *c != organic_col)
            .map(|c| matrix.counts[matrix.idx(v, c)])
            .sum();
        let total = developer_totals[v as usize];
        if total < paid {
            return Err(Error::InconsistentTotals { value: v, total, paid });
        }
        let i = out.idx(v, organic_col);
        out.counts[i] = total - paid;
    }
    Ok(out)
}

/// Paid counts plus the organic estimate for every cell with any postback.
pub fn assemble_counts(
    postbacks: &[Postback],
    users: &[UserRecord],
    campaigns: &CampaignSet,
) -> Result<BTreeMap<CellKey, CountMatrix>> {
    let mut paid = build_counts(postbacks, users, campaigns)?;
    let totals = developer_totals(postbacks)?;
    let mut out = BTreeMap::new();
    for (cell, dev) in &totals {
        let matrix = paid
            .remove(cell)
            .unwrap_or_else(|| CountMatrix::new(cell.clone(), campaigns));
        out.insert(cell.clone(), estimate_organic(&matrix, dev)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WeekKey;
    use crate::rng::{substream, Stream};

    fn t0() -> Timestamp {
        Timestamp::from_ymd(2021, 5, 3).unwrap()
    }

    fn campaigns() -> CampaignSet {
        CampaignSet::new(vec![CampaignKey(101), CampaignKey(102)], None).unwrap()
    }

    fn user(id: u64, origin: u32) -> UserRecord {
        UserRecord::new(id, t0(), CampaignKey(origin), "US", vec![]).unwrap()
    }

    fn pb(id: u64, v: u8, at: Timestamp) -> Postback {
        Postback {
            user_id: id,
            final_value: v,
            postback_time: at,
            group: "US".into(),
        }
    }

    #[test]
    fn postback_delay_bounds() {
        let single = UpdateTrace {
            user_id: 1,
            first_open: t0(),
            committed: vec![(t0(), 5)],
        };
        let two = UpdateTrace {
            user_id: 2,
            first_open: t0(),
            committed: vec![(t0(), 1), (t0().plus_seconds(20 * 3600), 9)],
        };
        for seed in 0..200 {
            let mut rng = substream(seed, Stream::PostbackDelay, 1);
            let p = finalize_postback(&single, "US", &mut rng);
            assert_eq!(p.final_value, 5);
            assert!(p.postback_time >= t0().plus_seconds(24 * 3600));
            assert!(p.postback_time < t0().plus_seconds(48 * 3600));
            let p = finalize_postback(&two, "US", &mut rng);
            assert_eq!(p.final_value, 9);
            assert!(p.postback_time >= t0().plus_seconds(44 * 3600));
            assert!(p.postback_time < t0().plus_seconds(68 * 3600));
        }
        let a = finalize_postback(&single, "US", &mut substream(3, Stream::PostbackDelay, 1));
        let b = finalize_postback(&single, "US", &mut substream(3, Stream::PostbackDelay, 1));
        assert_eq!(a, b);
    }

    #[test]
    fn counts_simple() {
        let users: Vec<_> = (1..=3).map(|i| user(i, 101)).collect();
        let pbs: Vec<_> = (1..=3).map(|i| pb(i, 7, t0().plus_days(1))).collect();
        let m = build_counts(&pbs, &users, &campaigns()).unwrap();
        assert_eq!(m.len(), 1);
        let matrix = m.values().next().unwrap();
        assert_eq!(matrix.get(7, CampaignKey(101)), Some(3));
        assert_eq!(matrix.get(7, CampaignKey(102)), Some(0));
        assert!(build_counts(&[], &users, &campaigns()).unwrap().is_empty());
    }

    #[test]
    fn week_boundary_splits_cells() {
        let users = vec![user(1, 101), user(2, 101)];
        let sunday = Timestamp::from_ymd(2021, 5, 9).unwrap().plus_seconds(23 * 3600 + 59 * 60);
        let monday = Timestamp::from_ymd(2021, 5, 10).unwrap().plus_seconds(60);
        let m = build_counts(&[pb(1, 0, sunday), pb(2, 0, monday)], &users, &campaigns()).unwrap();
        let weeks: Vec<WeekKey> = m.keys().map(|c| c.week).collect();
        assert_eq!(
            weeks,
            vec![WeekKey { year: 2021, week: 18 }, WeekKey { year: 2021, week: 19 }]
        );
    }

    #[test]
    fn duplicate_postback_rejected() {
        let users = vec![user(1, 101)];
        let err = build_counts(&[pb(1, 0, t0()), pb(1, 2, t0())], &users, &campaigns());
        assert!(matches!(err, Err(Error::DuplicatePostback(1))));
    }

    #[test]
    fn organic_by_subtraction() {
        let cs = campaigns();
        let cell = CellKey { group: "US".into(), week: t0().week() };
        let mut m = CountMatrix::new(cell.clone(), &cs);
        m.add(4, CampaignKey(101), 5).unwrap();
        m.add(4, CampaignKey(102), 2).unwrap();
        let mut totals = [0u64; VALUE_COUNT];
        totals[4] = 10;
        totals[9] = 6;
        let est = estimate_organic(&m, &totals).unwrap();
        assert_eq!(est.get(4, cs.organic), Some(3));
        assert_eq!(est.get(9, cs.organic), Some(6));

        let mut exact = totals;
        exact[4] = 7;
        exact[9] = 0;
        let est = estimate_organic(&m, &exact).unwrap();
        assert!((0..64).all(|v| est.get(v, cs.organic) == Some(0)));

        exact[4] = 6;
        assert!(matches!(
            estimate_organic(&m, &exact),
            Err(Error::InconsistentTotals { value: 4, total: 6, paid: 7 })
        ));
    }

    #[test]
    fn assemble_counts_every_user_once() {
        let cs = campaigns();
        let users = vec![user(1, 101), user(2, 102), user(3, cs.organic.0), user(4, cs.organic.0)];
        let pbs = vec![
            pb(1, 3, t0()),
            pb(2, 3, t0()),
            pb(3, 3, t0()),
            pb(4, 0, t0().plus_days(8)),
        ];
        let m = assemble_counts(&pbs, &users, &cs).unwrap();
        assert_eq!(m.values().map(|x| x.total()).sum::<u64>(), 4);
        let first = m.values().next().unwrap();
        assert_eq!(first.get(3, cs.organic), Some(1));
        let second = m.values().nth(1).unwrap();
        assert_eq!(second.get(0, cs.organic), Some(1));
    }
}
