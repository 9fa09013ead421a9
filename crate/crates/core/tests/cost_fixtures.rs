//! Priced fixtures must agree with the hand computation to the cent.

use std::path::PathBuf;

use semslice::eval::{cost_report, CostBreakdown, CostModel};
use semslice::promptgen::HumanEffort;
use semslice::usage::StepUsage;
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    usage: Vec<StepUsage>,
    human_effort: Vec<HumanEffort>,
}

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/costs")
}

fn priced(name: &str) -> CostBreakdown {
    let pricing = CostModel::from_file(&dir().join("pricing.toml")).unwrap();
    let text = std::fs::read_to_string(dir().join(name)).unwrap();
    let f: Fixture = serde_json::from_str(&text).unwrap();
    cost_report(&f.usage, &f.human_effort, &pricing).unwrap()
}

fn cents(usd: f64) -> i64 {
    (usd * 100.0).round() as i64
}

#[test]
fn zero_shot_total() {
    let c = priced("zero_shot.json");
    assert_eq!(cents(c.total_usd), 26);
    assert!((c.total_usd - 0.2592).abs() < 1e-9);
    assert_eq!(c.human_usd, 0.0);
}

#[test]
fn few_shot_total() {
    let c = priced("few_shot.json");
    assert_eq!(cents(c.total_usd), 170);
    assert!((c.total_usd - 1.70024).abs() < 1e-9);
}

#[test]
fn human_in_loop_total() {
    let c = priced("human_in_loop.json");
    assert_eq!(cents(c.total_usd), 951);
    assert!((c.human_usd - 7.80).abs() < 1e-9);
    assert!((c.llm_usd - 1.70564).abs() < 1e-9);
}

#[test]
fn cost_grows_with_supervision() {
    let [zs, fs, hil] =
        ["zero_shot.json", "few_shot.json", "human_in_loop.json"].map(|n| priced(n).total_usd);
    assert!(zs < fs && fs < hil);
}
