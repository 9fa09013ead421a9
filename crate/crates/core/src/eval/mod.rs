//! Slice quality (precision/recall/F1 against gold), downstream task
//! accuracy with Fisher's exact test, and cost/throughput accounting.

mod cost;
mod fisher;
mod report;

pub use cost::{
    cost_report, throughput_report, CostBreakdown, CostModel, HumanRates, ModelPrice, StepCost, Throughput,
};
pub use fisher::{fisher_exact_two_sided, ContingencyTable2x2};
pub use report::{evaluate, EvalInput, EvaluationReport, SliceRow, TokenTotals};

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, Dataset, Slice};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("example {0:?} has no task label or prediction")]
    MissingTask(String),
    #[error("slice {0:?} is empty")]
    EmptySlice(String),
    #[error("contingency table entry {0} is negative")]
    NegativeEntry(i64),
    #[error("contingency table is all zeros")]
    EmptyTable,
    #[error("alpha must be in (0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("no price for model {0:?}")]
    UnpricedModel(String),
    #[error("invalid pricing: {0}")]
    Pricing(String),
    #[error("annotation run is empty")]
    EmptyRun,
    #[error("annotation run has no positive wall-clock time")]
    ZeroWallClock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PRF {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl PRF {
    /// 0/0 ratios are 0. F1 is evaluated as 2tp / (2tp + fp + fn), which
    /// equals 2PR / (P + R) but takes a single rounding.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        Self { precision, recall, f1, tp, fp, fn_ }
    }
}

pub fn slice_prf(predicted: &Slice, gold: &Slice, universe: &Dataset) -> Result<PRF, EvalError> {
    universe.check_slice(predicted)?;
    universe.check_slice(gold)?;
    let gold_ids: std::collections::HashSet<&str> = gold.member_ids.iter().map(String::as_str).collect();
    let tp = predicted.member_ids.iter().filter(|id| gold_ids.contains(id.as_str())).count() as u64;
    let fp = predicted.member_ids.len() as u64 - tp;
    let fn_ = gold.member_ids.len() as u64 - tp;
    Ok(PRF::from_counts(tp, fp, fn_))
}

fn correctness(dataset: &Dataset, id: &str) -> Result<bool, EvalError> {
    dataset.get(id).and_then(|e| e.is_correct()).ok_or_else(|| EvalError::MissingTask(id.to_string()))
}

/// Fraction of slice members whose task prediction equals the label.
pub fn task_accuracy(slice: &Slice, dataset: &Dataset) -> Result<f64, EvalError> {
    dataset.check_slice(slice)?;
    if slice.member_ids.is_empty() {
        return Err(EvalError::EmptySlice(slice.criterion_name.clone()));
    }
    let mut correct = 0usize;
    for id in &slice.member_ids {
        correct += usize::from(correctness(dataset, id)?);
    }
    Ok(correct as f64 / slice.member_ids.len() as f64)
}

/// Accuracy over all examples with predictions.
pub fn overall_accuracy(dataset: &Dataset) -> Option<f64> {
    let judged: Vec<bool> = dataset.examples().iter().filter_map(|e| e.is_correct()).collect();
    (!judged.is_empty()).then(|| judged.iter().filter(|c| **c).count() as f64 / judged.len() as f64)
}

/// Whether the dataset carries a label and prediction for every example.
pub fn has_complete_task(dataset: &Dataset) -> bool {
    dataset.examples().iter().all(|e| e.is_correct().is_some())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Better,
    Worse,
    Same,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceTest {
    pub slice_name: String,
    pub size: usize,
    pub accuracy: f64,
    /// Accuracy outside the slice; absent when the slice is everything.
    pub complement_accuracy: Option<f64>,
    pub overall_accuracy: f64,
    pub table: ContingencyTable2x2,
    pub p_value: f64,
    pub flagged: bool,
    pub direction: Direction,
}

impl SliceTest {
    /// `**` below 0.01, `*` below 0.05.
    pub fn stars(&self) -> &'static str {
        if self.p_value < 0.01 {
            "**"
        } else if self.p_value < 0.05 {
            "*"
        } else {
            ""
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnderperformanceScan {
    pub alpha: f64,
    pub overall_accuracy: f64,
    pub tests: Vec<SliceTest>,
    /// Empty slices, which are not tested.
    pub skipped: Vec<String>,
}

/// Tests each slice's task accuracy against the rest of the dataset. A slice
/// is flagged when p <= alpha and it does worse than the whole dataset;
/// significant improvements are reported but not flagged.
pub fn detect_underperforming(
    slices: &[Slice],
    dataset: &Dataset,
    alpha: f64,
) -> Result<UnderperformanceScan, EvalError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(EvalError::InvalidAlpha(alpha));
    }
    let correct: Vec<bool> =
        dataset.examples().iter().map(|e| correctness(dataset, &e.id)).collect::<Result<_, _>>()?;
    let total_correct = correct.iter().filter(|c| **c).count() as u64;
    let total = correct.len() as u64;
    let overall = total_correct as f64 / total as f64;
    let index: std::collections::HashMap<&str, usize> =
        dataset.ids().enumerate().map(|(i, id)| (id, i)).collect();

    let mut tests = Vec::new();
    let mut skipped = Vec::new();
    for slice in slices {
        dataset.check_slice(slice)?;
        if slice.member_ids.is_empty() {
            log::info!("slice {:?} is empty; not tested", slice.criterion_name);
            skipped.push(slice.criterion_name.clone());
            continue;
        }
        let a = slice.member_ids.iter().filter(|id| correct[index[id.as_str()]]).count() as u64;
        let size = slice.member_ids.len() as u64;
        let b = size - a;
        let c = total_correct - a;
        let d = (total - size) - c;
        let table = ContingencyTable2x2::new(a, b, c, d);
        let p_value = fisher_exact_two_sided(&table)?;
        let accuracy = a as f64 / size as f64;
        let direction = if accuracy < overall {
            Direction::Worse
        } else if accuracy > overall {
            Direction::Better
        } else {
            Direction::Same
        };
        tests.push(SliceTest {
            slice_name: slice.criterion_name.clone(),
            size: size as usize,
            accuracy,
            complement_accuracy: (c + d > 0).then(|| c as f64 / (c + d) as f64),
            overall_accuracy: overall,
            table,
            p_value,
            flagged: p_value <= alpha && direction == Direction::Worse,
            direction,
        });
    }
    Ok(UnderperformanceScan { alpha, overall_accuracy: overall, tests, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Example, SliceSource};

    fn slice(ids: &[&str]) -> Slice {
        Slice {
            criterion_name: "s".into(),
            member_ids: ids.iter().map(|s| s.to_string()).collect(),
            source: SliceSource::Predicted,
        }
    }

    fn universe(n: usize) -> Dataset {
        Dataset::new("u", (0..n).map(|i| Example::new(format!("{i}"), "t")).collect()).unwrap()
    }

    fn ids(range: std::ops::Range<usize>) -> Vec<String> {
        range.map(|i| i.to_string()).collect()
    }

    #[test]
    fn prf_identity_and_disjoint() {
        let u = universe(10);
        let p = slice(&["1", "2"]);
        let prf = slice_prf(&p, &p, &u).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (1.0, 1.0, 1.0));
        let prf = slice_prf(&slice(&["1"]), &slice(&["2"]), &u).unwrap();
        assert_eq!(prf.f1, 0.0);
        let prf = slice_prf(&slice(&[]), &slice(&[]), &u).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn prf_hand_arithmetic() {
        // |gold| = 10, |predicted| = 8, overlap 6
        let u = universe(20);
        let gold = Slice { member_ids: ids(0..10), ..slice(&[]) };
        let pred = Slice { member_ids: ids(4..12), ..slice(&[]) };
        let prf = slice_prf(&pred, &gold, &u).unwrap();
        assert_eq!((prf.tp, prf.fp, prf.fn_), (6, 2, 4));
        assert_eq!(prf.precision, 0.75);
        assert_eq!(prf.recall, 0.6);
        assert!((prf.f1 - 2.0 * 0.45 / 1.35).abs() < 1e-15);
        let back = slice_prf(&gold, &pred, &u).unwrap();
        assert_eq!(back.f1, prf.f1);
    }

    #[test]
    fn prf_rejects_foreign_ids() {
        assert!(matches!(slice_prf(&slice(&["99"]), &slice(&[]), &universe(3)), Err(EvalError::Corpus(_))));
    }

    fn task_dataset(correct: &[bool]) -> Dataset {
        let rows = correct
            .iter()
            .enumerate()
            .map(|(i, c)| Example::new(format!("{i}"), "t").with_task("1", if *c { "1" } else { "0" }))
            .collect();
        Dataset::new("t", rows).unwrap()
    }

    #[test]
    fn task_accuracy_cases() {
        let d = task_dataset(&[true, true, false, true]);
        assert_eq!(task_accuracy(&slice(&["0", "1"]), &d).unwrap(), 1.0);
        assert_eq!(task_accuracy(&slice(&["1", "2"]), &d).unwrap(), 0.5);
        assert!(matches!(task_accuracy(&slice(&[]), &d), Err(EvalError::EmptySlice(_))));
        let mut rows = d.examples().to_vec();
        rows.push(Example::new("bare", "t"));
        let d = Dataset::new("t", rows).unwrap();
        match task_accuracy(&slice(&["0", "bare"]), &d) {
            Err(EvalError::MissingTask(id)) => assert_eq!(id, "bare"),
            other => panic!("{other:?}"),
        }
        assert_eq!(overall_accuracy(&d), Some(0.75));
        assert!(!has_complete_task(&d));
    }

    #[test]
    fn direction_and_flags() {
        // 20 rows: first 10 all wrong, last 10 all right
        let d = task_dataset(&[[false; 10], [true; 10]].concat());
        let bad = Slice { member_ids: ids(0..10), ..slice(&[]) };
        let good = Slice { member_ids: ids(10..20), ..slice(&[]) };
        let scan = detect_underperforming(&[bad, good, slice(&[])], &d, 0.05).unwrap();
        assert_eq!(scan.overall_accuracy, 0.5);
        let (w, b) = (&scan.tests[0], &scan.tests[1]);
        assert!(w.flagged && w.direction == Direction::Worse && w.p_value <= 0.05);
        assert!(!b.flagged && b.direction == Direction::Better && b.p_value <= 0.05);
        assert_eq!(w.table, ContingencyTable2x2::new(0, 10, 10, 0));
        assert_eq!(w.stars(), "**");
        assert_eq!(scan.skipped, ["s"]);
    }

    #[test]
    fn balanced_slice_not_flagged() {
        let d = task_dataset(&[true, false, true, false, true, false, true, false]);
        let scan = detect_underperforming(&[slice(&["0", "1", "2", "3"])], &d, 0.05).unwrap();
        let t = &scan.tests[0];
        assert_eq!(t.p_value, 1.0);
        assert!(!t.flagged);
        assert_eq!(t.direction, Direction::Same);
    }

    #[test]
    fn incomplete_task_data_is_an_error() {
        let mut rows = task_dataset(&[true]).examples().to_vec();
        rows.push(Example::new("x", "t"));
        let d = Dataset::new("t", rows).unwrap();
        assert!(matches!(detect_underperforming(&[slice(&["0"])], &d, 0.05), Err(EvalError::MissingTask(_))));
        assert!(matches!(detect_underperforming(&[], &d, 0.0), Err(EvalError::InvalidAlpha(_))));
    }
}
