//! History ingestion, day sampling, episodes and arm evaluation.

mod common;

use common::*;
use paraflex_core::demand::DemandModel;
use paraflex_core::greedy::GreedyParams;
use paraflex_core::history::{ingest_history, parse_history, DayClass};
use paraflex_core::policy::{NetPolicy, ValueNet};
use paraflex_core::simanneal::SaParams;
use paraflex_core::simulator::*;
use paraflex_core::{check_feasibility, Error, Problem, TimeWindow};
use proptest::prelude::*;
use std::path::PathBuf;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn empty_history_file_gives_empty_table() {
    let t = ingest_history(fixture("history_empty.csv")).unwrap();
    assert!(t.records.is_empty());
    assert!(t.diagnostics.is_empty());
}

#[test]
fn one_row_history() {
    let t = ingest_history(fixture("history_one.csv")).unwrap();
    assert_eq!(t.records.len(), 1);
    let r = &t.records[0];
    assert_eq!(r.pickup_time, 9 * 3600 + 1800);
    assert_eq!(r.booking_time, Some(7 * 3600 + 12 * 60));
    assert_eq!(r.passengers, 1);
    assert_eq!(r.pickup_area, None);
}

#[test]
fn bad_row_is_reported_with_its_line() {
    let t = ingest_history(fixture("history_100.csv")).unwrap();
    assert_eq!(t.records.len(), 99);
    assert_eq!(t.diagnostics.len(), 1);
    assert_eq!(t.diagnostics[0].line, 59);
    assert!(t.diagnostics[0].message.contains("pickup_lat"));
}

#[test]
fn missing_column_is_a_parse_error() {
    let text = "date,pickup_lat,pickup_lon,dropoff_lat,dropoff_lon,passengers\n";
    assert!(matches!(parse_history(text.as_bytes()), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn ragged_row_is_a_parse_error() {
    let text = "date,pickup_lat,pickup_lon,dropoff_lat,dropoff_lon,passengers,pickup_time\n\
                2024-01-01,36.1,-86.8,36.2,-86.7,1,09:00\n\
                2024-01-01,36.1,-86.8\n";
    assert!(matches!(parse_history(text.as_bytes()), Err(Error::Parse { line: 3, .. })));
}

#[test]
fn sampled_days_repeat_for_a_seed() {
    let (_, dm) = synthetic_model(30, 20.0, 2);
    let gen = DayGen::default();
    let a = sample_day(&dm, &gen, None, &mut rng(8)).unwrap();
    let b = sample_day(&dm, &gen, None, &mut rng(8)).unwrap();
    assert_eq!(a, b);
    let c = sample_day(&dm, &gen, None, &mut rng(9)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn empty_model_cannot_be_sampled() {
    assert!(sample_day(&DemandModel::empty(), &DayGen::default(), None, &mut rng(0)).is_err());
}

#[test]
fn mean_request_count_matches_the_model() {
    let (_, dm) = synthetic_model(60, 8.0, 3);
    let days: usize = DayClass::ALL.iter().map(|&c| dm.class(c).days).sum();
    let expected: f64 =
        DayClass::ALL.iter().map(|&c| dm.class(c).days as f64 / days as f64 * dm.class(c).mean_daily()).sum();
    let gen = DayGen::default();
    let mut r = rng(4);
    let n = 10_000;
    let total: usize = (0..n).map(|_| sample_day(&dm, &gen, None, &mut r).unwrap().requests().len()).sum();
    let mean = total as f64 / n as f64;
    assert!((mean - expected).abs() <= 0.05 * expected, "mean {mean} vs model {expected}");
}

#[test]
fn broad_windows_have_the_configured_length() {
    let (_, dm) = synthetic_model(30, 25.0, 5);
    for broad_len in [3 * 3600, 2 * 3600, 1800] {
        let gen = DayGen { broad_len, ..DayGen::default() };
        let mut r = rng(broad_len as u64);
        for _ in 0..30 {
            let day = sample_day(&dm, &gen, None, &mut r).unwrap();
            for req in day.requests() {
                assert_eq!(req.broad_window.len(), broad_len);
                assert!(req.broad_window.start >= gen.service.start && req.broad_window.end <= gen.service.end);
                assert_eq!(req.broad_window.start % gen.cfg.grid, 0);
            }
            assert!(day.requests().windows(2).all(|w| w[0].booking_instant <= w[1].booking_instant));
        }
    }
}

fn options(seed: u64) -> EpisodeOptions<'static> {
    EpisodeOptions { budget_scale: 0.05, audit: true, seed, ..EpisodeOptions::new(SaParams::default()) }
}

#[test]
fn single_request_day() {
    let inst = instance(1, 3);
    let day = DayInstance { instance: inst, class: DayClass::Weekday };
    let net = ValueNet::init(&mut rng(1));
    let t = run_episode(&day, &mut NetPolicy::new(&net), &DemandModel::empty(), &GreedyParams::default(), &options(1))
        .unwrap();
    assert_eq!(t.records.len(), 1);
    assert_eq!(t.solution.routes.len(), 1);
    assert!(t.records[0].iterations > 0);
    assert!(t.cost > 1800);
}

#[test]
fn episodes_are_reproducible() {
    let (_, dm) = synthetic_model(30, 15.0, 6);
    let day = sample_day(&dm, &DayGen::default(), Some(DayClass::Weekday), &mut rng(2)).unwrap();
    let net = ValueNet::init(&mut rng(3));
    let run = || run_episode(&day, &mut NetPolicy::new(&net), &dm, &GreedyParams::default(), &options(5)).unwrap();
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn audited_episodes_stay_feasible(seed in 0u64..10_000) {
        let (_, dm) = synthetic_model(20, 12.0, seed);
        let day = sample_day(&dm, &DayGen::default(), None, &mut rng(seed)).unwrap();
        let net = ValueNet::init(&mut rng(seed + 1));
        let gp = GreedyParams::default();
        let mut policies: [Box<dyn paraflex_core::policy::WindowPolicy>; 2] = [Box::new(NetPolicy::new(&net)), Box::new(NaivePolicy)];
        for finish in [Finish::Current, Finish::Greedy] {
            for policy in policies.iter_mut() {
                let opts = EpisodeOptions { finish, ..options(seed) };
                let t = run_episode(&day, policy.as_mut(), &dm, &gp, &opts).unwrap();
                let p = Problem::new(day.requests(), t.windows.clone(), &day.instance.cfg, &day.instance.matrix).unwrap();
                prop_assert!(check_feasibility(&t.solution, &p).is_empty());
                prop_assert_eq!(t.cost, p.cost(&t.solution).unwrap());
                for r in &t.records {
                    prop_assert!(r.cost_after <= r.plan_cost);
                }
            }
        }
    }

    #[test]
    fn naive_window_stays_inside(start in 0i64..80_000, len in 1800i64..14_400) {
        let cfg = paraflex_core::ProblemConfig::default();
        let broad = TimeWindow { start, end: start + len };
        match naive_window(&broad, &cfg) {
            Ok(w) => {
                prop_assert!(w.start >= broad.start && w.end <= broad.end);
                prop_assert_eq!(w.len(), cfg.window_len);
                prop_assert_eq!(w.start % cfg.grid, 0);
            }
            Err(_) => prop_assert!(paraflex_core::policy::grid_starts(&broad, &cfg).is_empty()),
        }
    }
}

#[test]
fn naive_windows_are_centred() {
    let (_, dm) = synthetic_model(20, 15.0, 7);
    let day = sample_day(&dm, &DayGen::default(), None, &mut rng(7)).unwrap();
    let t = run_episode(&day, &mut NaivePolicy, &dm, &GreedyParams::default(), &options(7)).unwrap();
    let cfg = &day.instance.cfg;
    for (w, req) in t.windows.iter().zip(day.requests()) {
        let b = req.broad_window;
        assert_eq!(w.start + w.end, b.start + b.end, "grid-aligned broad windows centre exactly");
        assert_eq!(*w, naive_window(&b, cfg).unwrap());
    }
}

#[test]
fn naive_window_examples() {
    let cfg = paraflex_core::ProblemConfig::default();
    let w = naive_window(&TimeWindow { start: 14 * 3600, end: 17 * 3600 }, &cfg).unwrap();
    assert_eq!(w, TimeWindow { start: 15 * 3600 + 15 * 60, end: 15 * 3600 + 45 * 60 });
    let w = naive_window(&TimeWindow { start: 14 * 3600 + 600, end: 16 * 3600 + 600 }, &cfg).unwrap();
    assert_eq!(w, TimeWindow { start: 15 * 3600, end: 15 * 3600 + 1800 });
}

fn eval_env<'a>(dm: &'a DemandModel, net: &'a ValueNet, gp: &'a GreedyParams, sa: &'a SaParams, threads: usize) -> EvalEnv<'a> {
    EvalEnv { demand: dm, net: Some(net), greedy: gp, sa, budget_scale: 0.05, audit: true, seed: 11, threads }
}

#[test]
fn arm_against_itself_is_zero() {
    let (_, dm) = synthetic_model(20, 10.0, 8);
    let day = sample_day(&dm, &DayGen::default(), None, &mut rng(8)).unwrap();
    let (net, gp, sa) = (ValueNet::init(&mut rng(8)), GreedyParams::default(), SaParams::default());
    let env = eval_env(&dm, &net, &gp, &sa, 1);
    for arm in Arm::ALL {
        let a = run_arm(&day, arm, &env, 3).unwrap();
        let b = run_arm(&day, arm, &env, 3).unwrap();
        assert_eq!(percent_reduction(a.cost, b.cost), 0.0);
    }
}

#[test]
fn evaluation_ignores_thread_count() {
    let (_, dm) = synthetic_model(20, 8.0, 9);
    let mut r = rng(9);
    let days: Vec<DayInstance> = (0..4).map(|_| sample_day(&dm, &DayGen::default(), None, &mut r).unwrap()).collect();
    let (net, gp, sa) = (ValueNet::init(&mut rng(9)), GreedyParams::default(), SaParams::default());
    let one = evaluate(&days, &Arm::ALL, &eval_env(&dm, &net, &gp, &sa, 1)).unwrap();
    let three = evaluate(&days, &Arm::ALL, &eval_env(&dm, &net, &gp, &sa, 3)).unwrap();
    assert_eq!(one, three);
    assert_eq!(one.rows.len(), 16);
    assert_eq!(one.reductions.len(), 12);
    for row in &one.rows {
        assert_eq!(row.decisions, days[row.day].requests().len());
    }
}

#[test]
fn net_arms_need_a_model() {
    let (_, dm) = synthetic_model(10, 5.0, 1);
    let day = sample_day(&dm, &DayGen::default(), None, &mut rng(1)).unwrap();
    let (gp, sa) = (GreedyParams::default(), SaParams::default());
    let env = EvalEnv { demand: &dm, net: None, greedy: &gp, sa: &sa, budget_scale: 0.0, audit: false, seed: 0, threads: 1 };
    assert!(run_arm(&day, Arm::A, &env, 0).is_err());
    assert!(run_arm(&day, Arm::C, &env, 0).is_ok());
    assert!(evaluate(&[], &[Arm::C], &env).is_err());
}

fn two_day_rows() -> Vec<EvalRow> {
    let row = |day, arm, cost| EvalRow { day, arm, cost, routes: 1, decisions: 1 };
    vec![row(0, Arm::A, 900), row(0, Arm::C, 1000), row(1, Arm::A, 1500), row(1, Arm::C, 1200)]
}

#[test]
fn two_day_percentages_by_hand() {
    let reds = reductions(&two_day_rows(), &[Arm::A, Arm::C]);
    let ac = reds.iter().find(|r| r.arm == Arm::A && r.baseline == Arm::C).unwrap();
    // Day 0: (1000 - 900) / 1000 = 10%. Day 1: (1200 - 1500) / 1200 = -25%.
    assert_eq!(ac.per_day, vec![10.0, -25.0]);
    assert_eq!(ac.summary.median, -7.5);
    assert_eq!(ac.summary.q1, -16.25);
    assert_eq!(ac.summary.q3, 1.25);
    let ca = reds.iter().find(|r| r.arm == Arm::C && r.baseline == Arm::A).unwrap();
    // Day 0: (900 - 1000) / 900. Day 1: (1500 - 1200) / 1500 = 20%.
    assert!((ca.per_day[0] + 100.0 / 9.0).abs() < 1e-12);
    assert_eq!(ca.per_day[1], 20.0);
}

#[test]
fn results_csv_layout() {
    let mut out = Vec::new();
    write_results_csv(&two_day_rows(), &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text, "day,arm,cost,routes,decisions\n0,a,900,1,1\n0,c,1000,1,1\n1,a,1500,1,1\n1,c,1200,1,1\n");
}
