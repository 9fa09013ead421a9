use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::promptgen::{HumanEffort, HumanRole};
use crate::slicer::AnnotationRun;
use crate::usage::{PipelineStep, StepUsage};

/// USD per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPrice {
    pub input_per_million: f64,
    pub output_per_million: f64,
}

/// USD per hour.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanRates {
    #[serde(default)]
    pub crowdworker_per_hour: f64,
    #[serde(default)]
    pub data_scientist_per_hour: f64,
}

/// Pricing file contents:
///
/// ```toml
/// [models."gpt-4-turbo-preview"]
/// input_per_million = 10.0
/// output_per_million = 30.0
///
/// [human]
/// data_scientist_per_hour = 60.0
/// ```
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    #[serde(default)]
    pub models: BTreeMap<String, ModelPrice>,
    #[serde(default)]
    pub human: HumanRates,
}

impl CostModel {
    pub fn from_toml(s: &str) -> Result<Self, EvalError> {
        let model: Self = toml::from_str(s).map_err(|e| EvalError::Pricing(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn from_file(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EvalError::Pricing(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let check = |field: String, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(EvalError::Pricing(format!("{field} must be a non-negative number, got {v}")))
            }
        };
        for (m, p) in &self.models {
            check(format!("models.{m}.input_per_million"), p.input_per_million)?;
            check(format!("models.{m}.output_per_million"), p.output_per_million)?;
        }
        check("human.crowdworker_per_hour".into(), self.human.crowdworker_per_hour)?;
        check("human.data_scientist_per_hour".into(), self.human.data_scientist_per_hour)
    }

    pub fn price(&self, model_id: &str) -> Result<ModelPrice, EvalError> {
        self.models.get(model_id).copied().ok_or_else(|| EvalError::UnpricedModel(model_id.to_string()))
    }

    pub fn hourly(&self, role: HumanRole) -> f64 {
        match role {
            HumanRole::Crowdworker => self.human.crowdworker_per_hour,
            HumanRole::DataScientist => self.human.data_scientist_per_hour,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCost {
    pub step: PipelineStep,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub llm_usd: f64,
    pub human_minutes: f64,
    pub human_usd: f64,
    pub total_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub steps: Vec<StepCost>,
    pub llm_usd: f64,
    pub human_usd: f64,
    pub total_usd: f64,
}

fn step_entry(steps: &mut BTreeMap<PipelineStep, StepCost>, step: PipelineStep) -> &mut StepCost {
    steps.entry(step).or_insert(StepCost {
        step,
        input_tokens: 0,
        output_tokens: 0,
        llm_usd: 0.0,
        human_minutes: 0.0,
        human_usd: 0.0,
        total_usd: 0.0,
    })
}

/// Prices token tallies and operator time per pipeline step. Every token
/// is charged, including those served from the response cache: the figure
/// estimates what the pipeline costs, not what this particular run paid.
pub fn cost_report(
    usage: &[StepUsage],
    human: &[HumanEffort],
    model: &CostModel,
) -> Result<CostBreakdown, EvalError> {
    let mut steps: BTreeMap<PipelineStep, StepCost> = BTreeMap::new();
    for u in usage {
        let price = model.price(&u.model_id)?;
        let s = step_entry(&mut steps, u.step);
        s.input_tokens += u.input_tokens;
        s.output_tokens += u.output_tokens;
        s.llm_usd += u.input_tokens as f64 * price.input_per_million / 1e6
            + u.output_tokens as f64 * price.output_per_million / 1e6;
    }
    for h in human {
        let s = step_entry(&mut steps, h.step);
        s.human_minutes += h.minutes;
        s.human_usd += h.minutes * model.hourly(h.role) / 60.0;
    }
    let mut out = CostBreakdown::default();
    for mut s in steps.into_values() {
        s.total_usd = s.llm_usd + s.human_usd;
        out.llm_usd += s.llm_usd;
        out.human_usd += s.human_usd;
        out.total_usd += s.total_usd;
        out.steps.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub annotations: usize,
    pub wall_clock_seconds: f64,
    pub annotations_per_sec: f64,
    pub tokens_per_annotation: f64,
}

pub fn throughput_report(run: &AnnotationRun) -> Result<Throughput, EvalError> {
    let n = run.annotations.len();
    if n == 0 {
        return Err(EvalError::EmptyRun);
    }
    if run.wall_clock_seconds.is_nan() || run.wall_clock_seconds <= 0.0 {
        return Err(EvalError::ZeroWallClock);
    }
    let tokens: u64 = run.annotations.iter().map(|a| a.input_tokens + a.output_tokens).sum();
    Ok(Throughput {
        annotations: n,
        wall_clock_seconds: run.wall_clock_seconds,
        annotations_per_sec: n as f64 / run.wall_clock_seconds,
        tokens_per_annotation: tokens as f64 / n as f64,
    })
}
