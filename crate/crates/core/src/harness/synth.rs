use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use super::{write_file, HarnessError};
use crate::analog::{AnalogLibrary, AnalogRow};
use crate::classify::{write_ledger, write_observations, EventReport, ObservationTable, ReportKind};
use crate::domain::{Answer, AnswerSet, FeatureMap, Scenario, WeatherCategory, Zone};
use crate::linear::upslope_indicator;
use crate::parcel::SoundingLevel;

/// Knobs of the synthetic season.
#[derive(Debug, Clone, PartialEq)]
pub struct GenOptions {
    pub days: usize,
    pub seed: u64,
    /// Approximate event (category ≥ 1) frequency per zone Z1..Z4.
    pub base_rates: [f64; 4],
    /// Strength of the link between the daily latent state and events.
    pub coupling: f64,
    /// Day index from which `shift_base_rates` apply.
    pub shift_at: Option<usize>,
    pub shift_base_rates: Option<[f64; 4]>,
    pub operators: usize,
    /// Chance that a non-primary operator answers a question differently.
    pub operator_disagreement: f64,
    pub history_days: usize,
    pub start: NaiveDate,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            days: 32,
            seed: 42,
            base_rates: [0.25, 0.35, 0.40, 0.30],
            coupling: 2.0,
            shift_at: None,
            shift_base_rates: None,
            operators: 1,
            operator_disagreement: 0.15,
            history_days: 180,
            start: NaiveDate::from_ymd_opt(1989, 6, 1).expect("valid date"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSeason {
    pub scenarios: Vec<Scenario>,
    pub reports: Vec<EventReport>,
    /// Earlier days' observations, for climatology.
    pub history: ObservationTable,
    /// Earlier days as an analog library.
    pub library: AnalogLibrary,
}

/// Features the default analog forecaster uses.
pub const ANALOG_FEATURES: [&str; 4] = ["cape", "shear_kt", "surface_temp", "dewpoint"];

const QUESTIONS: [(&str, &[&str]); 7] = [
    ("moisture", &["dry", "moist", "wet"]),
    ("pw_trend", &["falling", "steady", "rising"]),
    ("instability", &["low", "moderate", "high"]),
    ("cap", &["weak", "strong"]),
    ("shear", &["weak", "strong"]),
    ("lift", &["none", "weak", "strong"]),
    ("upslope_flow", &["no", "yes"]),
];

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

fn round_to(x: f64, places: i32) -> f64 {
    let k = 10f64.powi(places);
    (x * k).round() / k
}

fn bucket(x: f64, cuts: &[f64]) -> usize {
    cuts.iter().filter(|&&c| x > c).count()
}

struct Day {
    features: BTreeMap<Zone, FeatureMap>,
    sounding: Vec<SoundingLevel>,
    categories: [WeatherCategory; 4],
    answers: AnswerSet,
}

fn gen_day(rng: &mut ChaCha8Rng, base_rates: &[f64; 4], coupling: f64) -> Day {
    let s = normal(rng);
    // intercept scaled so the marginal event rate stays near the base rate
    let spread = (1.0 + std::f64::consts::PI * coupling * coupling / 8.0).sqrt();
    let mut features = BTreeMap::new();
    let mut categories = [WeatherCategory::Nonsignificant; 4];
    let mut xs = [0.0; 4];
    for (i, zone) in Zone::SUB_ZONES.into_iter().enumerate() {
        let x = 0.7 * s + 0.71 * normal(rng);
        xs[i] = x;
        let q = sigmoid(logit(base_rates[i]) * spread + coupling * x);
        categories[i] = if rng.random::<f64>() < q {
            if rng.random::<f64>() < sigmoid(-0.6 + 0.9 * x) {
                WeatherCategory::Severe
            } else {
                WeatherCategory::Significant
            }
        } else {
            WeatherCategory::Nonsignificant
        };
        let surface_temp = round_to(26.0 + 2.5 * x + 1.5 * normal(rng), 1);
        let dewpoint = round_to((9.0 + 3.0 * x + 1.5 * normal(rng)).min(surface_temp - 2.0), 1);
        let wind_dir = if rng.random::<f64>() < sigmoid(1.2 * x) {
            rng.random_range(25.0..155.0)
        } else {
            (rng.random_range(165.0..375.0f64)) % 360.0
        };
        let wind_dir = round_to(wind_dir, 0);
        let fm: FeatureMap = [
            ("cape", round_to((1100.0 + 700.0 * x + 350.0 * normal(rng)).max(0.0), 0)),
            ("shear_kt", round_to((28.0 + 8.0 * x + 6.0 * normal(rng)).max(0.0), 1)),
            ("surface_temp", surface_temp),
            ("dewpoint", dewpoint),
            ("wind_speed", round_to((10.0 + 2.0 * x + 3.0 * normal(rng)).max(0.0), 1)),
            ("wind_dir", wind_dir),
            ("upslope", upslope_indicator(wind_dir)),
            ("noise", round_to(normal(rng), 3)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        features.insert(zone, fm);
    }
    let mean = |name: &str| features.values().map(|f: &FeatureMap| f[name]).sum::<f64>() / 4.0;
    let mean_x = xs.iter().sum::<f64>() / 4.0;
    let sounding = gen_sounding(s, mean("surface_temp"), mean("dewpoint"));

    let mut answers = AnswerSet::new();
    let picks = [
        bucket((mean("dewpoint") - 9.0) / 3.0 + 0.3 * normal(rng), &[-0.9, 0.5]),
        bucket(mean_x + 0.8 * normal(rng), &[-0.5, 0.5]),
        bucket((mean("cape") - 1100.0) / 700.0 + 0.4 * normal(rng), &[-0.5, 0.6]),
        // cap: strong when the synoptic state is suppressive
        if s + 0.5 * normal(rng) < -0.5 { 1 } else { 0 },
        bucket((mean("shear_kt") - 28.0) / 8.0 + 0.4 * normal(rng), &[0.2]),
        bucket(s + 0.6 * normal(rng), &[-0.6, 0.6]),
        usize::from(features.values().filter(|f| f["upslope"] == 1.0).count() >= 2),
    ];
    for ((q, levels), k) in QUESTIONS.iter().zip(picks) {
        answers.insert(q.to_string(), Answer::Categorical(levels[k].to_string()));
    }
    let support = round_to((5.0 + 2.5 * (s + 0.4 * normal(rng))).clamp(0.0, 10.0), 1);
    answers.insert("synoptic_support".into(), Answer::Numeric(support));
    Day { features, sounding, categories, answers }
}

fn gen_sounding(s: f64, mean_t: f64, mean_td: f64) -> Vec<SoundingLevel> {
    const HEIGHTS: [f64; 11] = [0.0, 500.0, 1000.0, 1500.0, 2000.0, 3000.0, 4000.0, 5000.0, 6000.0, 8000.0, 10000.0];
    let t0 = mean_t - 4.0;
    let upper_lapse = (6.3 + 0.7 * s).clamp(5.0, 8.0) / 1000.0;
    HEIGHTS
        .iter()
        .map(|&z| {
            let mut t = if z <= 1500.0 { t0 - 9.0e-3 * z } else { t0 - 13.5 - upper_lapse * (z - 1500.0) };
            if s < -0.2 && (1500.0..=2000.0).contains(&z) {
                t += -2.0 * s;
            }
            let td = (mean_td - 1.0 - 3.0e-3 * z - 1.0e-3 * z * (1.0 - s).max(0.0)).min(t);
            SoundingLevel {
                pressure_hpa: round_to(850.0 * (-z / 8200.0).exp(), 1),
                height_m: z,
                temp_c: round_to(t, 2),
                dewpoint_c: round_to(td, 2),
                wind_kt: round_to((8.0 + 4.0 * z / 1000.0 + 2.0 * s).max(0.0), 1),
                wind_deg: round_to(240.0 + 5.0 * z / 1000.0, 0),
            }
        })
        .collect()
}

fn in_window_minute(rng: &mut ChaCha8Rng) -> u16 {
    // 1900..2359 then 0000..0200 UTC
    let k = rng.random_range(0..(300 + 121));
    if k < 300 {
        1140 + k
    } else {
        k - 300
    }
}

fn gen_reports(rng: &mut ChaCha8Rng, date: NaiveDate, zone: Zone, cat: WeatherCategory) -> Vec<EventReport> {
    const SOURCES: [&str; 3] = ["coop", "mesonet", "spotter"];
    let mut out = Vec::new();
    let mut push = |rng: &mut ChaCha8Rng, time: u16, kind: ReportKind, mag: f64| {
        let mut r = EventReport::new(date, zone, time, kind, mag);
        r.source = SOURCES[rng.random_range(0..SOURCES.len())].to_string();
        out.push(r);
    };
    match cat {
        WeatherCategory::Severe => {
            let t = in_window_minute(rng);
            match rng.random_range(0..3) {
                0 => {
                    let m = round_to(rng.random_range(0.75..1.75), 2);
                    push(rng, t, ReportKind::Hail, m)
                }
                1 => {
                    let m = round_to(rng.random_range(50.0..65.0), 0);
                    push(rng, t, ReportKind::Wind, m)
                }
                _ => push(rng, t, ReportKind::Tornado, 0.0),
            }
        }
        WeatherCategory::Significant => {
            let t = in_window_minute(rng);
            match rng.random_range(0..4) {
                0 => {
                    let m = round_to(rng.random_range(0.25..0.70), 2);
                    push(rng, t, ReportKind::Hail, m)
                }
                1 => {
                    let m = round_to(rng.random_range(35.0..48.0), 0);
                    push(rng, t, ReportKind::Wind, m)
                }
                2 => push(rng, t, ReportKind::FunnelCloud, 0.0),
                _ => {
                    let m = round_to(rng.random_range(2.0..3.0), 1);
                    push(rng, t, ReportKind::RainRate, m)
                }
            }
        }
        WeatherCategory::Nonsignificant => {
            if rng.random::<f64>() < 0.4 {
                let t = in_window_minute(rng);
                let m = round_to(rng.random_range(20.0..33.0), 0);
                push(rng, t, ReportKind::Wind, m);
            }
        }
    }
    // morning reports fall outside the valid window and must not count
    if rng.random::<f64>() < 0.15 {
        let t = rng.random_range(840..1080);
        let m = round_to(rng.random_range(0.75..1.5), 2);
        push(rng, t, ReportKind::Hail, m);
    }
    out
}

fn perturb(rng: &mut ChaCha8Rng, answers: &AnswerSet, p: f64) -> AnswerSet {
    let mut out = answers.clone();
    for (q, levels) in QUESTIONS {
        if rng.random::<f64>() >= p {
            continue;
        }
        let Some(Answer::Categorical(cur)) = answers.get(q) else {
            continue;
        };
        let k = levels.iter().position(|l| l == cur).unwrap_or(0);
        let next = if k == 0 {
            1
        } else if k + 1 == levels.len() || rng.random::<bool>() {
            k - 1
        } else {
            k + 1
        };
        out.insert(q.to_string(), Answer::Categorical(levels[next].to_string()));
    }
    if rng.random::<f64>() < p {
        if let Some(Answer::Numeric(x)) = answers.get("synoptic_support") {
            let y = round_to((x + 1.5 * normal(rng)).clamp(0.0, 10.0), 1);
            out.insert("synoptic_support".into(), Answer::Numeric(y));
        }
    }
    out
}

/// Generates a season and its history. The season and the history draw from
/// separate random streams, so changing `history_days` leaves the season
/// unchanged.
pub fn generate_season(opts: &GenOptions) -> SyntheticSeason {
    let mut season_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut history_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    history_rng.set_stream(1);
    let mut report_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    report_rng.set_stream(2);
    let mut operator_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    operator_rng.set_stream(3);

    let mut history = ObservationTable::new();
    let mut library = AnalogLibrary::new(ANALOG_FEATURES.iter().map(|s| s.to_string()).collect(), false);
    let history_start = opts.start - Days::new(opts.history_days as u64);
    for i in 0..opts.history_days {
        let date = history_start + Days::new(i as u64);
        let day = gen_day(&mut history_rng, &opts.base_rates, opts.coupling);
        for (k, zone) in Zone::SUB_ZONES.into_iter().enumerate() {
            history.insert((date, zone), day.categories[k]);
            let fm = &day.features[&zone];
            let row = AnalogRow {
                date,
                category: day.categories[k],
                features: ANALOG_FEATURES.iter().map(|n| fm[*n]).collect(),
            };
            library.push(row).expect("fixed dimension");
        }
        history.insert((date, Zone::Overall), *day.categories.iter().max().expect("four zones"));
    }

    let mut scenarios = Vec::new();
    let mut reports = Vec::new();
    for i in 0..opts.days {
        let date = opts.start + Days::new(i as u64);
        let rates = match (opts.shift_at, opts.shift_base_rates) {
            (Some(at), Some(r)) if i >= at => r,
            _ => opts.base_rates,
        };
        let day = gen_day(&mut season_rng, &rates, opts.coupling);
        for (k, zone) in Zone::SUB_ZONES.into_iter().enumerate() {
            reports.extend(gen_reports(&mut report_rng, date, zone, day.categories[k]));
        }
        let mut answers = BTreeMap::new();
        for op in 1..=opts.operators.max(1) {
            let set = if op == 1 {
                day.answers.clone()
            } else {
                perturb(&mut operator_rng, &day.answers, opts.operator_disagreement)
            };
            answers.insert(format!("op{op}"), set);
        }
        scenarios.push(Scenario {
            date,
            features: day.features,
            sounding: day.sounding,
            answers,
            climatology_tag: "summer".into(),
        });
    }
    SyntheticSeason { scenarios, reports, history, library }
}

const MODEL_FILES: [(&str, &str); 15] = [
    ("alps.json", include_str!("../../data/models/alps.json")),
    ("oci.json", include_str!("../../data/models/oci.json")),
    ("noise.json", include_str!("../../data/models/noise.json")),
    ("swap.json", include_str!("../../data/models/swap.json")),
    ("swap.rules", include_str!("../../data/models/swap.rules")),
    ("kasspr.json", include_str!("../../data/models/kasspr.json")),
    ("kasspr.rules", include_str!("../../data/models/kasspr.rules")),
    ("gopad.json", include_str!("../../data/models/gopad.json")),
    ("convex.json", include_str!("../../data/models/convex.json")),
    ("convex.rules", include_str!("../../data/models/convex.rules")),
    ("willard.json", include_str!("../../data/models/willard.json")),
    ("willard/severity.csv", include_str!("../../data/models/willard/severity.csv")),
    ("willard/thermo.csv", include_str!("../../data/models/willard/thermo.csv")),
    ("willard/dynamics.csv", include_str!("../../data/models/willard/dynamics.csv")),
    ("README", include_str!("../../data/models/README")),
];

fn default_config() -> serde_json::Value {
    let reg = |id: &str, kind: &str, config: Option<&str>, learning: bool| {
        let mut v = json!({ "id": id, "kind": kind, "learning": learning });
        if let Some(c) = config {
            v["config"] = json!(c);
        }
        v
    };
    json!({
        "scenarios": "scenarios",
        "observations": "reports.csv",
        "climatology_history": "history.csv",
        "output": "out",
        "forecasters": [
            reg("alps", "linear", Some("models/alps.json"), false),
            reg("oci", "linear", Some("models/oci.json"), false),
            reg("swap", "rule_backward", Some("models/swap.json"), true),
            reg("kasspr", "staged_pipeline", Some("models/kasspr.json"), false),
            reg("gopad", "analog", Some("models/gopad.json"), true),
            reg("gopad-static", "analog", Some("models/gopad.json"), false),
            reg("willard", "induction", Some("models/willard.json"), false),
            reg("convex", "parcel", Some("models/convex.json"), false),
            reg("climatology", "climatology", None, false),
            reg("noise", "linear", Some("models/noise.json"), false),
        ],
        "scoring": { "mode": "binary", "merge_12": false, "exclude_zones": [] },
        "reliability_bins": 10
    })
}

/// Writes a season as a ready-to-run experiment directory: `scenarios/`,
/// `reports.csv`, `history.csv`, `library.csv`, `models/` and `config.json`.
pub fn write_season(season: &SyntheticSeason, dir: &Path) -> Result<(), HarnessError> {
    for s in &season.scenarios {
        let mut json = serde_json::to_string_pretty(s).expect("scenario serializes");
        json.push('\n');
        write_file(&dir.join("scenarios").join(format!("{}.json", s.date)), json.as_bytes())?;
    }
    if season.scenarios.is_empty() {
        std::fs::create_dir_all(dir.join("scenarios")).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut buf = Vec::new();
    write_ledger(&mut buf, &season.reports)?;
    if season.reports.is_empty() {
        buf = b"date,zone,time_utc,kind,magnitude,source\n".to_vec();
    }
    write_file(&dir.join("reports.csv"), &buf)?;
    let mut buf = Vec::new();
    write_observations(&mut buf, &season.history)?;
    write_file(&dir.join("history.csv"), &buf)?;
    let mut buf = Vec::new();
    season.library.write_csv(&mut buf).map_err(|e| HarnessError::io(&dir.join("library.csv"), e))?;
    write_file(&dir.join("library.csv"), &buf)?;
    for (name, text) in MODEL_FILES {
        write_file(&dir.join("models").join(name), text.as_bytes())?;
    }
    let mut cfg = serde_json::to_string_pretty(&default_config()).expect("config serializes");
    cfg.push('\n');
    write_file(&dir.join("config.json"), cfg.as_bytes())
}
