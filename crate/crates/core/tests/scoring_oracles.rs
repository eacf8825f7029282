use std::collections::BTreeMap;

use chrono::NaiveDate;
use proptest::prelude::*;
use stormbench_core::classify::ObservationTable;
use stormbench_core::scoring::{brier_binary, brier_multi, climatology_reference, scoreboard, skill_score};
use stormbench_core::{ForecastSet, ProbTriple, ScoreOptions, WeatherCategory, Zone};

fn oracle_brier(series: &[(f64, bool)]) -> f64 {
    let mut total = 0.0;
    for &(p, o) in series {
        let y = if o { 1.0 } else { 0.0 };
        total += (p - y) * (p - y);
    }
    total / series.len() as f64
}

#[test]
fn climatology_against_itself_is_exactly_zero() {
    let series: Vec<(f64, bool)> = [true, false, false, true, false].iter().map(|&o| (0.4, o)).collect();
    let bs = brier_binary(&series).unwrap();
    assert_eq!(skill_score(bs, bs).unwrap(), 0.0);
}

#[test]
fn perfect_forecast_is_exactly_one() {
    let perfect = [(1.0, true), (0.0, false), (0.0, false), (1.0, true)];
    let bs = brier_binary(&perfect).unwrap();
    assert_eq!(bs, 0.0);
    assert_eq!(skill_score(bs, 0.25).unwrap(), 1.0);
}

#[test]
fn hand_example() {
    let series = [(0.8, true), (0.2, false), (0.6, true), (0.4, false)];
    let bs = brier_binary(&series).unwrap();
    assert!((bs - 0.10).abs() < 1e-12);
    let reference = brier_binary(&series.map(|(_, o)| (0.5, o))).unwrap();
    assert!((skill_score(bs, reference).unwrap() - 0.6).abs() < 1e-12);
}

#[test]
fn constant_base_rate_scores_f_times_one_minus_f() {
    for (n, k) in [(4usize, 1usize), (8, 3), (16, 5), (32, 8), (64, 21)] {
        let history: Vec<(Zone, WeatherCategory)> = (0..n)
            .map(|i| (Zone::Z1, if i < k { WeatherCategory::Significant } else { WeatherCategory::Nonsignificant }))
            .collect();
        let f = climatology_reference(&history).unwrap()[&Zone::Z1];
        assert_eq!(f, k as f64 / n as f64);
        let series: Vec<(f64, bool)> = history.iter().map(|(_, c)| (f, c.is_event())).collect();
        assert_eq!(brier_binary(&series).unwrap(), f * (1.0 - f), "n={n} k={k}");
    }
}

fn triple() -> impl Strategy<Value = ProbTriple> {
    (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64)
        .prop_filter("non-zero", |(a, b, c)| a + b + c > 1e-6)
        .prop_map(|(a, b, c)| ProbTriple::from_scores([a, b, c]).unwrap())
}

fn category() -> impl Strategy<Value = WeatherCategory> {
    prop::sample::select(WeatherCategory::ALL.to_vec())
}

proptest! {
    #[test]
    fn binary_matches_oracle_and_is_bounded(series in prop::collection::vec((0.0..=1.0f64, any::<bool>()), 1..50)) {
        let bs = brier_binary(&series).unwrap();
        prop_assert!((bs - oracle_brier(&series)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&bs));
    }

    #[test]
    fn multi_is_bounded_by_two(series in prop::collection::vec((triple(), category()), 1..40)) {
        let bs = brier_multi(&series).unwrap();
        prop_assert!((0.0..=2.0).contains(&bs));
    }

    #[test]
    fn scores_do_not_depend_on_row_order(
        series in prop::collection::vec((0.0..=1.0f64, any::<bool>()), 1..50),
        seed in any::<u64>(),
    ) {
        let mut shuffled = series.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(brier_binary(&series).unwrap().to_bits(), brier_binary(&shuffled).unwrap().to_bits());
    }
}

#[test]
fn unobserved_cells_do_not_change_scores() {
    let d = |k: u32| NaiveDate::from_ymd_opt(1989, 6, k).unwrap();
    let set = |k: u32, p: f64| ForecastSet {
        forecaster_id: "f".into(),
        date: d(k),
        entries: [(Zone::Z2, ProbTriple::new(1.0 - p, p, 0.0).unwrap())].into(),
        runtime_ms: 0.0,
        questions_asked: 0,
        operator_id: "op1".into(),
    };
    let obs: ObservationTable =
        [((d(1), Zone::Z2), WeatherCategory::Significant), ((d(2), Zone::Z2), WeatherCategory::Nonsignificant)].into();
    let reference: BTreeMap<Zone, ProbTriple> = [(Zone::Z2, ProbTriple::new(0.6, 0.3, 0.1).unwrap())].into();
    let base = scoreboard(&[set(1, 0.7), set(2, 0.2)], &obs, &reference, &ScoreOptions::default()).unwrap();
    let padded =
        scoreboard(&[set(1, 0.7), set(2, 0.2), set(3, 0.9), set(4, 0.1)], &obs, &reference, &ScoreOptions::default())
            .unwrap();
    assert_eq!(base, padded);
}
