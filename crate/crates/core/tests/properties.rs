use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use skattr::attribution::{attribute, AttributionFunction, RevenueProfile};
use skattr::model::{decode_alpha, encode_alpha};
use skattr::postback::{finalize_postback, CountMatrix};
use skattr::privacy::{apply_threshold, PrivacyConfig};
use skattr::schema::{fit_buckets, simulate_updates};
use skattr::{CampaignKey, CampaignSet, CellKey, Cents, Event, SchemaSpec, Timestamp, UserRecord};

const DAY: i64 = 86_400;

fn t0() -> Timestamp {
    Timestamp::from_ymd(2021, 5, 3).unwrap()
}

#[derive(Debug, Clone)]
enum Ev {
    Session,
    Purchase(i64),
    Flag(u8),
}

fn user_strategy() -> impl Strategy<Value = UserRecord> {
    let event = (
        0..20 * DAY,
        prop_oneof![
            3 => Just(Ev::Session),
            1 => (1i64..20_000).prop_map(Ev::Purchase),
            1 => (0u8..6).prop_map(Ev::Flag),
        ],
    );
    proptest::collection::vec(event, 0..40).prop_map(|mut evs| {
        evs.sort_by_key(|(t, _)| *t);
        let start = t0();
        let mut events = vec![Event::session(start)];
        events.extend(evs.into_iter().map(|(t, e)| {
            let ts = start.plus_seconds(t);
            match e {
                Ev::Session => Event::session(ts),
                Ev::Purchase(a) => Event::purchase(ts, Cents(a)),
                Ev::Flag(i) => Event::flag(ts, i),
            }
        }));
        UserRecord::new(1, start, CampaignKey(101), "US", events).unwrap()
    })
}

fn fitted(label: &str, population: &[UserRecord]) -> SchemaSpec {
    let schema: SchemaSpec = label.parse().unwrap();
    // guarantee at least one spender so fitting is defined
    let mut pop = population.to_vec();
    pop.push(
        UserRecord::new(2, t0(), CampaignKey(101), "US", vec![Event::purchase(t0(), Cents(499))]).unwrap(),
    );
    fit_buckets(&pop, &schema, |u| schema.fit_revenue(u)).unwrap()
}

fn scope() -> CellKey {
    CellKey {
        group: "US".into(),
        week: t0().week(),
    }
}

fn matrix_strategy() -> impl Strategy<Value = CountMatrix> {
    (1u32..5).prop_flat_map(|paid| {
        proptest::collection::vec(0u64..6, 64 * (paid as usize + 1)).prop_map(move |cells| {
            let cs = CampaignSet::new((1..=paid).map(|c| CampaignKey(100 + c)).collect(), None).unwrap();
            let cols = cs.columns();
            let mut m = CountMatrix::new(scope(), &cs);
            for (i, n) in cells.iter().enumerate() {
                m.add((i / cols.len()) as u8, cols[i % cols.len()], *n).unwrap();
            }
            m
        })
    })
}

proptest! {
    #[test]
    fn traces_strictly_increase(
        user in user_strategy(),
        label in prop::sample::select(vec!["EV", "D1 RR", "D3 RI", "D7 RR", "D7 RI", "D30 PV", "UD"]),
    ) {
        let schema = fitted(label, std::slice::from_ref(&user));
        let trace = simulate_updates(&user, &schema).unwrap();
        prop_assert!(trace.is_strictly_increasing());
        prop_assert_eq!(trace.committed[0].0, user.first_open());
        for w in trace.committed.windows(2) {
            prop_assert!(w[1].0 .0 - w[0].0 .0 <= DAY);
        }
    }

    #[test]
    fn postback_lands_in_delay_window(user in user_strategy(), seed in any::<u64>()) {
        let schema = fitted("D7 RR", std::slice::from_ref(&user));
        let trace = simulate_updates(&user, &schema).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pb = finalize_postback(&trace, "US", &mut rng);
        let last = trace.last_commit();
        prop_assert!(pb.postback_time >= last.plus_seconds(DAY));
        prop_assert!(pb.postback_time < last.plus_seconds(2 * DAY));
        prop_assert_eq!(pb.final_value, trace.final_value());
    }

    #[test]
    fn threshold_preserves_columns(m in matrix_strategy(), p in 0u64..30) {
        let out = apply_threshold(&m, PrivacyConfig::new(p)).unwrap();
        for c in 0..m.columns.len() {
            prop_assert_eq!(out.column_sum(c), m.column_sum(c));
        }
        for v in 0..64u8 {
            prop_assert_eq!(out.is_suppressed(v), m.row_total(v) < p);
        }
        prop_assert!(apply_threshold(&out, PrivacyConfig::new(p)).is_err());
    }

    #[test]
    fn null_aware_attribution_conserves(
        m in matrix_strategy(),
        p in 0u64..30,
        lambda in 0.0f64..=1.0,
        means in proptest::collection::vec(0.0f64..10_000.0, 64),
    ) {
        let totals = m.row_totals();
        let profile = RevenueProfile {
            window_days: 30,
            means: (0..64u8).map(|v| (v, means[v as usize])).collect(),
            totals: (0..64u8).filter(|v| totals[*v as usize] > 0).map(|v| (v, totals[v as usize])).collect(),
        };
        let private = apply_threshold(&m, PrivacyConfig::new(p)).unwrap();
        let attr = attribute(&private, &profile, &AttributionFunction::convex(lambda).unwrap()).unwrap();
        let got: f64 = attr.values().sum();
        let want = profile.expected_total();
        prop_assert!((got - want).abs() <= 1e-6 * want.max(1.0));
    }

    #[test]
    fn alpha_round_trip(network in 0u32..100, campaign in 0u32..100) {
        let key = encode_alpha(network, campaign).unwrap();
        prop_assert_eq!(key.0, 100 * network + campaign);
        prop_assert_eq!(decode_alpha(key, CampaignKey(100 * 100)).unwrap(), (network, campaign));
    }
}
