//! Per-step token tallies.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backend::CompletionResponse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStep {
    InstructionGeneration,
    InstructionRefinement,
    ExampleLabeling,
    ExampleSynthesis,
    SliceLabeling,
}

impl fmt::Display for PipelineStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineStep::InstructionGeneration => "instruction_generation",
            PipelineStep::InstructionRefinement => "instruction_refinement",
            PipelineStep::ExampleLabeling => "example_labeling",
            PipelineStep::ExampleSynthesis => "example_synthesis",
            PipelineStep::SliceLabeling => "slice_labeling",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepUsage {
    pub step: PipelineStep,
    pub model_id: String,
    pub calls: u64,
    pub cached_calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Accumulates usage keyed by (step, model).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UsageLedger {
    entries: BTreeMap<(PipelineStep, String), StepUsage>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, step: PipelineStep, model_id: &str, resp: &CompletionResponse) {
        self.add(step, model_id, resp.input_tokens, resp.output_tokens, resp.cached);
    }

    pub fn add(&mut self, step: PipelineStep, model_id: &str, input: u64, output: u64, cached: bool) {
        let e = self.entries.entry((step, model_id.to_string())).or_insert_with(|| StepUsage {
            step,
            model_id: model_id.to_string(),
            calls: 0,
            cached_calls: 0,
            input_tokens: 0,
            output_tokens: 0,
        });
        e.calls += 1;
        e.cached_calls += u64::from(cached);
        e.input_tokens += input;
        e.output_tokens += output;
    }

    pub fn merge(&mut self, other: &[StepUsage]) {
        for u in other {
            let e = self.entries.entry((u.step, u.model_id.clone())).or_insert_with(|| StepUsage {
                calls: 0,
                cached_calls: 0,
                input_tokens: 0,
                output_tokens: 0,
                ..u.clone()
            });
            e.calls += u.calls;
            e.cached_calls += u.cached_calls;
            e.input_tokens += u.input_tokens;
            e.output_tokens += u.output_tokens;
        }
    }

    pub fn into_vec(self) -> Vec<StepUsage> {
        self.entries.into_values().collect()
    }

    pub fn to_vec(&self) -> Vec<StepUsage> {
        self.entries.values().cloned().collect()
    }
}
