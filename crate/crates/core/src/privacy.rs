//! Row-global privacy threshold: a conversion value whose total population
//! in the matrix is below `p` has every cell hidden, and those users are
//! reported per campaign in a `null` row.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CampaignKey;
use crate::postback::CountMatrix;
use crate::schema::VALUE_COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivacyConfig {
    pub p: u64,
}

impl PrivacyConfig {
    pub fn new(p: u64) -> PrivacyConfig {
        PrivacyConfig { p }
    }
}

pub const DEFAULT_THRESHOLDS: [u64; 4] = [0, 2, 10, 100];

fn rows_below(matrix: &CountMatrix, cfg: PrivacyConfig) -> Vec<bool> {
    (0..VALUE_COUNT as u8)
        .map(|v| matrix.row_total(v) < cfg.p)
        .collect()
}

pub fn apply_threshold(matrix: &CountMatrix, cfg: PrivacyConfig) -> Result<CountMatrix> {
    if matrix.privacy_applied() {
        return Err(Error::AlreadyPrivatized);
    }
    Ok(matrix.suppress_rows(&rows_below(matrix, cfg)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressionSummary {
    pub users: u64,
    pub suppressed_users: u64,
    pub suppressed_fraction: f64,
    pub suppressed_rows: usize,
    pub null_mass: BTreeMap<CampaignKey, u64>,
}

/// What `apply_threshold` would fold into `null`, for a pre-privacy matrix.
/// On an already privatized matrix it reports the existing null row.
pub fn suppression_report(matrix: &CountMatrix, cfg: PrivacyConfig) -> SuppressionSummary {
    let private = if matrix.privacy_applied() {
        matrix.clone()
    } else {
        matrix.suppress_rows(&rows_below(matrix, cfg))
    };
    let null = private.null_row().unwrap_or(&[]);
    let null_mass: BTreeMap<CampaignKey, u64> = private
        .columns
        .iter()
        .copied()
        .zip(null.iter().copied())
        .collect();
    let users = private.total();
    let suppressed_users: u64 = null_mass.values().sum();
    SuppressionSummary {
        users,
        suppressed_users,
        suppressed_fraction: if users == 0 {
            0.0
        } else {
            suppressed_users as f64 / users as f64
        },
        suppressed_rows: private.suppressed_values().count(),
        null_mass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CampaignSet, CellKey, Timestamp};

    fn matrix(rows: &[(u8, u32, u64)]) -> CountMatrix {
        let cs = CampaignSet::new(vec![CampaignKey(101), CampaignKey(102)], Some(CampaignKey(200)))
            .unwrap();
        let cell = CellKey {
            group: "US".into(),
            week: Timestamp::from_ymd(2021, 5, 3).unwrap().week(),
        };
        let mut m = CountMatrix::new(cell, &cs);
        for (v, a, n) in rows {
            m.add(*v, CampaignKey(*a), *n).unwrap();
        }
        m
    }

    #[test]
    fn p_zero_is_identity_on_counts() {
        let m = matrix(&[(0, 101, 4), (5, 102, 1), (63, 200, 2)]);
        let out = apply_threshold(&m, PrivacyConfig::new(0)).unwrap();
        assert!(out.privacy_applied());
        for v in 0..64u8 {
            for a in [101, 102, 200] {
                assert_eq!(out.get(v, CampaignKey(a)), m.get(v, CampaignKey(a)));
            }
        }
        assert!(out.null_row().unwrap().iter().all(|n| *n == 0));
    }

    #[test]
    fn singleton_can_be_singled_out() {
        let mut rows: Vec<(u8, u32, u64)> = (0..64).map(|v| (v as u8, 101, 5)).collect();
        rows[17] = (17, 102, 1);
        let m = matrix(&rows);
        let out = apply_threshold(&m, PrivacyConfig::new(2)).unwrap();
        assert!(out.is_suppressed(17));
        assert_eq!(out.get(17, CampaignKey(102)), None);
        assert_eq!(out.null_row().unwrap(), &[0, 1, 0]);
    }

    #[test]
    fn fold_and_sum() {
        let m = matrix(&[(1, 101, 1), (2, 101, 3), (2, 102, 2), (3, 102, 2), (3, 200, 1)]);
        let out = apply_threshold(&m, PrivacyConfig::new(4)).unwrap();
        assert!(out.is_suppressed(1) && out.is_suppressed(3) && !out.is_suppressed(2));
        for col in 0..3 {
            assert_eq!(out.column_sum(col), m.column_sum(col));
        }
        assert_eq!(out.null_row().unwrap(), &[1, 2, 1]);
    }

    #[test]
    fn reapplication_rejected() {
        let m = matrix(&[(1, 101, 1)]);
        let once = apply_threshold(&m, PrivacyConfig::new(2)).unwrap();
        assert!(matches!(
            apply_threshold(&once, PrivacyConfig::new(2)),
            Err(Error::AlreadyPrivatized)
        ));
    }

    #[test]
    fn report_examples() {
        let m = matrix(&[(1, 101, 1), (2, 101, 3), (2, 102, 2), (3, 102, 2), (3, 200, 1)]);
        let none = suppression_report(&m, PrivacyConfig::new(0));
        assert_eq!(none.suppressed_fraction, 0.0);
        let all = suppression_report(&m, PrivacyConfig::new(1000));
        assert_eq!(all.suppressed_fraction, 1.0);
        let mixed = suppression_report(&m, PrivacyConfig::new(4));
        let applied = apply_threshold(&m, PrivacyConfig::new(4)).unwrap();
        assert_eq!(mixed.suppressed_users, applied.null_row().unwrap().iter().sum::<u64>());
        assert_eq!(mixed.suppressed_users, 4);
        assert_eq!(mixed.null_mass[&CampaignKey(102)], 2);
    }
}
