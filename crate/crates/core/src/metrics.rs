//! Attribution error, revenue-weighted aggregation across weeks and
//! normalization against a baseline.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::CampaignKey;

/// `sqrt(sum_alpha (attributed - truth)^2)`. Both maps must share the same
/// campaign domain; values are in cents.
pub fn weekly_error(
    attributed: &BTreeMap<CampaignKey, f64>,
    truth: &BTreeMap<CampaignKey, f64>,
) -> Result<f64> {
    if let Some(k) = attributed.keys().find(|k| !truth.contains_key(k)) {
        return Err(Error::Alignment(*k));
    }
    if let Some(k) = truth.keys().find(|k| !attributed.contains_key(k)) {
        return Err(Error::Alignment(*k));
    }
    Ok(attributed
        .iter()
        .map(|(k, a)| {
            let d = a - truth[k];
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// Weighted mean `sum e_i w_i / sum w_i`.
pub fn aggregate_error(weekly: &[(f64, f64)]) -> Result<f64> {
    if weekly.iter().any(|(_, w)| *w < 0.0 || w.is_nan()) {
        return Err(Error::Config("negative aggregation weight".into()));
    }
    let total: f64 = weekly.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Err(Error::UndefinedWeights);
    }
    Ok(weekly.iter().map(|(e, w)| e * w).sum::<f64>() / total)
}

/// Percent improvement over the baseline: `100 * (1 - err / baseline)`.
pub fn normalize_vs_baseline(err: f64, baseline_err: f64) -> Result<f64> {
    if baseline_err <= 0.0 {
        return Err(Error::DegenerateBaseline);
    }
    Ok(100.0 * (1.0 - err / baseline_err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(pairs: &[(u32, f64)]) -> BTreeMap<CampaignKey, f64> {
        pairs.iter().map(|(k, v)| (CampaignKey(*k), *v)).collect()
    }

    #[test]
    fn weekly_error_examples() {
        let truth = map(&[(1, 3.0), (2, 0.0)]);
        assert_eq!(weekly_error(&truth, &truth).unwrap(), 0.0);
        let swapped = map(&[(1, 0.0), (2, 3.0)]);
        assert!((weekly_error(&swapped, &truth).unwrap() - 18f64.sqrt()).abs() < 1e-12);
        assert_eq!(weekly_error(&map(&[(1, 10.0)]), &map(&[(1, 5.0)])).unwrap(), 5.0);
        assert!(matches!(
            weekly_error(&map(&[(1, 1.0)]), &map(&[(2, 1.0)])),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_error(&[(2.0, 1.0), (4.0, 1.0)]).unwrap(), 3.0);
        assert_eq!(aggregate_error(&[(7.0, 1.0), (99.0, 0.0)]).unwrap(), 7.0);
        assert_eq!(aggregate_error(&[(3.0, 2.0), (6.0, 1.0)]).unwrap(), 4.0);
        assert!(matches!(aggregate_error(&[(1.0, 0.0)]), Err(Error::UndefinedWeights)));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_vs_baseline(5.0, 5.0).unwrap(), 0.0);
        assert!((normalize_vs_baseline(1.04 * 5.0, 5.0).unwrap() + 4.0).abs() < 1e-9);
        assert_eq!(normalize_vs_baseline(2.5, 5.0).unwrap(), 50.0);
        assert!(matches!(normalize_vs_baseline(1.0, 0.0), Err(Error::DegenerateBaseline)));
    }

    proptest! {
        #[test]
        fn weekly_error_is_a_metric(
            a in proptest::collection::vec(-1e6f64..1e6, 4),
            b in proptest::collection::vec(-1e6f64..1e6, 4),
            c in proptest::collection::vec(-1e6f64..1e6, 4),
        ) {
            let to = |v: &Vec<f64>| v.iter().enumerate().map(|(i, x)| (CampaignKey(i as u32), *x)).collect::<BTreeMap<_, _>>();
            let (a, b, c) = (to(&a), to(&b), to(&c));
            let ab = weekly_error(&a, &b).unwrap();
            let ba = weekly_error(&b, &a).unwrap();
            let ac = weekly_error(&a, &c).unwrap();
            let cb = weekly_error(&c, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(weekly_error(&a, &a).unwrap(), 0.0);
            prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
            prop_assert!(ab <= ac + cb + 1e-6);
        }

        #[test]
        fn aggregate_within_weekly_range(
            rows in proptest::collection::vec((0f64..1e5, 0.1f64..1e4), 1..20)
        ) {
            let agg = aggregate_error(&rows).unwrap();
            let lo = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(agg >= lo - 1e-9 * hi.max(1.0) && agg <= hi + 1e-9 * hi.max(1.0));
        }

        #[test]
        fn normalize_strictly_decreasing(base in 0.1f64..1e6, e1 in 0f64..1e6, d in 1e-3f64..1e6) {
            let s1 = normalize_vs_baseline(e1, base).unwrap();
            let s2 = normalize_vs_baseline(e1 + d, base).unwrap();
            prop_assert!(s2 < s1);
        }
    }
}
