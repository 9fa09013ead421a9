use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    cost_report, detect_underperforming, has_complete_task, overall_accuracy, slice_prf, CostBreakdown,
    CostModel, EvalError, SliceTest, Throughput, PRF,
};
use crate::corpus::{Dataset, Slice};
use crate::promptgen::HumanEffort;
use crate::usage::StepUsage;

/// One predicted slice produced under one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInput {
    pub configuration: String,
    pub slice: Slice,
    /// Gold slice in the dataset to score against.
    pub gold: Option<String>,
    pub usage: Vec<StepUsage>,
    pub human_effort: Vec<HumanEffort>,
    pub throughput: Option<Throughput>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenTotals {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub name: String,
    pub gold_size: Option<usize>,
    /// Gold slice size over dataset size.
    pub fraction: Option<f64>,
    /// Keyed by configuration.
    pub prf: BTreeMap<String, PRF>,
    pub gold_task: Option<SliceTest>,
    pub predicted_task: BTreeMap<String, SliceTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset_name: String,
    pub total_examples: usize,
    pub alpha: f64,
    pub overall_accuracy: Option<f64>,
    pub configurations: Vec<String>,
    pub slices: Vec<SliceRow>,
    /// Arithmetic mean of per-slice F1, per configuration.
    pub average_f1: BTreeMap<String, f64>,
    pub tokens: BTreeMap<String, TokenTotals>,
    pub costs: BTreeMap<String, CostBreakdown>,
    pub cost_per_slice: BTreeMap<String, f64>,
    pub throughput: BTreeMap<String, Throughput>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn row_for<'r>(rows: &'r mut Vec<SliceRow>, name: &str) -> &'r mut SliceRow {
    if let Some(i) = rows.iter().position(|r| r.name == name) {
        return &mut rows[i];
    }
    rows.push(SliceRow {
        name: name.to_string(),
        gold_size: None,
        fraction: None,
        prf: BTreeMap::new(),
        gold_task: None,
        predicted_task: BTreeMap::new(),
    });
    rows.last_mut().expect("just pushed")
}

fn merge_throughput(a: Throughput, b: Throughput) -> Throughput {
    let annotations = a.annotations + b.annotations;
    let wall = a.wall_clock_seconds + b.wall_clock_seconds;
    let tokens =
        a.tokens_per_annotation * a.annotations as f64 + b.tokens_per_annotation * b.annotations as f64;
    Throughput {
        annotations,
        wall_clock_seconds: wall,
        annotations_per_sec: annotations as f64 / wall,
        tokens_per_annotation: tokens / annotations as f64,
    }
}

/// Scores every input and assembles the report. Rows are keyed by the gold
/// slice name when one is given, otherwise by the predicted slice's name.
pub fn evaluate(
    dataset: &Dataset,
    inputs: &[EvalInput],
    alpha: f64,
    pricing: Option<&CostModel>,
) -> Result<EvaluationReport, EvalError> {
    let task = has_complete_task(dataset);
    let mut notes = Vec::new();
    if !task {
        notes.push("dataset lacks task labels or predictions; task accuracy not reported".into());
    }
    let mut configurations: Vec<String> = Vec::new();
    let mut rows: Vec<SliceRow> = Vec::new();
    let mut tokens: BTreeMap<String, TokenTotals> = BTreeMap::new();
    let mut usage: BTreeMap<String, (Vec<StepUsage>, Vec<HumanEffort>, usize)> = BTreeMap::new();
    let mut throughput: BTreeMap<String, Throughput> = BTreeMap::new();

    for input in inputs {
        let cfg = &input.configuration;
        if !configurations.contains(cfg) {
            configurations.push(cfg.clone());
        }
        let name = input.gold.as_deref().unwrap_or(&input.slice.criterion_name);
        let gold = input.gold.as_deref().map(|g| dataset.gold_slice(g)).transpose()?;
        dataset.check_slice(&input.slice)?;

        let row = row_for(&mut rows, name);
        if let Some(gold) = &gold {
            row.gold_size = Some(gold.len());
            row.fraction = Some(gold.len() as f64 / dataset.len() as f64);
            row.prf.insert(cfg.clone(), slice_prf(&input.slice, gold, dataset)?);
            if task && row.gold_task.is_none() {
                let named = Slice { criterion_name: name.to_string(), ..gold.clone() };
                row.gold_task = detect_underperforming(&[named], dataset, alpha)?.tests.pop();
            }
        }
        if task {
            let named = Slice { criterion_name: name.to_string(), ..input.slice.clone() };
            match detect_underperforming(&[named], dataset, alpha)?.tests.pop() {
                Some(t) => {
                    row.predicted_task.insert(cfg.clone(), t);
                }
                None => notes.push(format!("{name} ({cfg}): predicted slice is empty; not tested")),
            }
        }

        let t = tokens.entry(cfg.clone()).or_default();
        for u in &input.usage {
            t.calls += u.calls;
            t.input_tokens += u.input_tokens;
            t.output_tokens += u.output_tokens;
        }
        let u = usage.entry(cfg.clone()).or_default();
        u.0.extend(input.usage.iter().cloned());
        u.1.extend(input.human_effort.iter().cloned());
        u.2 += 1;
        if let Some(tp) = input.throughput {
            throughput.entry(cfg.clone()).and_modify(|acc| *acc = merge_throughput(*acc, tp)).or_insert(tp);
        }
    }

    let average_f1 = configurations
        .iter()
        .filter_map(|cfg| {
            let f1s: Vec<f64> = rows.iter().filter_map(|r| r.prf.get(cfg)).map(|p| p.f1).collect();
            (!f1s.is_empty()).then(|| (cfg.clone(), f1s.iter().sum::<f64>() / f1s.len() as f64))
        })
        .collect();

    let mut costs = BTreeMap::new();
    let mut cost_per_slice = BTreeMap::new();
    if let Some(pricing) = pricing {
        for (cfg, (u, h, n)) in &usage {
            let c = cost_report(u, h, pricing)?;
            cost_per_slice.insert(cfg.clone(), c.total_usd / *n as f64);
            costs.insert(cfg.clone(), c);
        }
    }

    Ok(EvaluationReport {
        dataset_name: dataset.name().to_string(),
        total_examples: dataset.len(),
        alpha,
        overall_accuracy: overall_accuracy(dataset),
        configurations,
        slices: rows,
        average_f1,
        tokens,
        costs,
        cost_per_slice,
        throughput,
        notes,
    })
}

fn table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
    out.push_str(&line(header));
    let mut sep = vec!["---".to_string()];
    sep.extend(std::iter::repeat_n("---:".to_string(), header.len() - 1));
    out.push_str(&line(&sep));
    for r in rows {
        out.push_str(&line(r));
    }
}

fn acc_cell(t: Option<&SliceTest>) -> String {
    t.map(|t| format!("{:.3}{}", t.accuracy, t.stars())).unwrap_or_default()
}

impl EvaluationReport {
    /// Whether any slice, gold or predicted, is flagged as under-performing.
    pub fn any_flagged(&self) -> bool {
        self.flagged().next().is_some()
    }

    /// `(slice, column)` pairs flagged as under-performing.
    pub fn flagged(&self) -> impl Iterator<Item = (&str, &str)> {
        self.slices.iter().flat_map(|r| {
            r.gold_task.iter().filter(|t| t.flagged).map(move |_| (r.name.as_str(), "gold")).chain(
                r.predicted_task
                    .iter()
                    .filter(|(_, t)| t.flagged)
                    .map(move |(c, _)| (r.name.as_str(), c.as_str())),
            )
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Per-slice table: fraction, F1 per configuration, and task accuracy
    /// (gold, then per configuration) starred `**` for p < 0.01 and `*` for
    /// p < 0.05. Cost and throughput tables follow when available.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Evaluation: {} ({} examples)\n", self.dataset_name, self.total_examples);

        let f1_cfgs: Vec<&String> = self
            .configurations
            .iter()
            .filter(|c| self.slices.iter().any(|r| r.prf.contains_key(*c)))
            .collect();
        let gold_acc = self.slices.iter().any(|r| r.gold_task.is_some());
        let acc_cfgs: Vec<&String> = self
            .configurations
            .iter()
            .filter(|c| self.slices.iter().any(|r| r.predicted_task.contains_key(*c)))
            .collect();

        let mut header = vec!["Slice".to_string(), "Fraction".to_string()];
        header.extend(f1_cfgs.iter().map(|c| format!("F1 {c}")));
        if gold_acc {
            header.push("Acc gold".into());
        }
        header.extend(acc_cfgs.iter().map(|c| format!("Acc {c}")));

        let mut rows: Vec<Vec<String>> = self
            .slices
            .iter()
            .map(|r| {
                let mut cells =
                    vec![r.name.clone(), r.fraction.map(|f| format!("{f:.3}")).unwrap_or_default()];
                cells.extend(
                    f1_cfgs.iter().map(|c| r.prf.get(*c).map(|p| format!("{:.3}", p.f1)).unwrap_or_default()),
                );
                if gold_acc {
                    cells.push(acc_cell(r.gold_task.as_ref()));
                }
                cells.extend(acc_cfgs.iter().map(|c| acc_cell(r.predicted_task.get(*c))));
                cells
            })
            .collect();
        if !f1_cfgs.is_empty() {
            let mut avg = vec!["avg".to_string(), String::new()];
            avg.extend(f1_cfgs.iter().map(|c| format!("{:.3}", self.average_f1[*c])));
            avg.resize(header.len(), String::new());
            rows.push(avg);
        }
        table(&mut out, &header, &rows);

        if let Some(acc) = self.overall_accuracy {
            let _ = writeln!(out, "\nOverall task accuracy: {acc:.3}. ** p < 0.01, * p < 0.05 (Fisher's exact test, two-sided).");
        }
        let flagged: Vec<String> = self.flagged().map(|(s, c)| format!("{s} ({c})")).collect();
        if !flagged.is_empty() {
            let _ = writeln!(out, "\nUnder-performing at alpha {}: {}", self.alpha, flagged.join(", "));
        }

        if !self.costs.is_empty() {
            out.push_str("\n## Cost (USD)\n\n");
            let header = ["Configuration", "LLM", "Human", "Total", "Per slice"].map(String::from);
            let rows: Vec<Vec<String>> = self
                .costs
                .iter()
                .map(|(c, b)| {
                    vec![
                        c.clone(),
                        format!("{:.2}", b.llm_usd),
                        format!("{:.2}", b.human_usd),
                        format!("{:.2}", b.total_usd),
                        format!("{:.2}", self.cost_per_slice[c]),
                    ]
                })
                .collect();
            table(&mut out, &header, &rows);
        }
        if !self.throughput.is_empty() {
            out.push_str("\n## Throughput\n\n");
            let header = ["Configuration", "Annotations/sec", "Tokens/annotation"].map(String::from);
            let rows: Vec<Vec<String>> = self
                .throughput
                .iter()
                .map(|(c, t)| {
                    vec![
                        c.clone(),
                        format!("{:.1}", t.annotations_per_sec),
                        format!("{:.1}", t.tokens_per_annotation),
                    ]
                })
                .collect();
            table(&mut out, &header, &rows);
        }
        for n in &self.notes {
            let _ = writeln!(out, "\nNote: {n}");
        }
        out
    }
}
