//! Slicing-prompt construction: instruction generation and refinement,
//! few-shot example sampling, labeling and synthesis, and assembly.

pub mod templates;

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, Role, RoleBinding};
use crate::corpus::{Dataset, Example};
use crate::runconfig::{
    self, ConfigError, InstructionSource, LabelerKind, Refinement, SamplerKind, SliceConfig,
};
use crate::sampler::{self, EmbeddingProvider, SampleError};
use crate::slicer::{parse_label, ParseStatus, Verdict, SLICE_MAX_OUTPUT_TOKENS};
use crate::usage::{PipelineStep, StepUsage, UsageLedger};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("slicing criterion has an empty name")]
    EmptyCriterion,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("example labeling failed for {failed} of {total} inputs")]
    LabelingFailed { failed: usize, total: usize },
    #[error("no inputs to label")]
    NoInputs,
    #[error("synthesis produced no usable {label:?} examples")]
    SynthesisFailed { label: Label },
    #[error("synthesis produced {got} of {needed} {label:?} examples")]
    SynthesisShort { label: Label, needed: usize, got: usize },
    #[error("{0} needs an instruction editor")]
    NoEditor(&'static str),
    #[error("instruction editor failed: {0}")]
    Editor(String),
}

/// The user's intent: a short concept and optional longer description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlicingCriterion {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl SlicingCriterion {
    pub fn new(name: impl Into<String>) -> Result<Self, PromptError> {
        let name = name.into().trim().to_string();
        if name.is_empty() {
            return Err(PromptError::EmptyCriterion);
        }
        Ok(Self { name, description: None })
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        let d = description.into();
        self.description = (!d.trim().is_empty()).then_some(d);
        self
    }

    /// Lowercase ASCII alphanumerics with `-` separators, for file names.
    pub fn slug(&self) -> String {
        slugify(&self.name)
    }

    /// Text handed to instruction generation: the description when given.
    pub fn goal(&self) -> &str {
        self.description.as_deref().unwrap_or(&self.name)
    }
}

pub fn slugify(s: &str) -> String {
    let mut out = String::new();
    for ch in s.chars().flat_map(char::to_lowercase) {
        if ch.is_ascii_alphanumeric() {
            out.push(ch);
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    let trimmed = out.trim_end_matches('-');
    if trimmed.is_empty() {
        "criterion".to_string()
    } else {
        trimmed.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Template,
    Model,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstructionStep {
    Generation,
    Refinement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionVersion {
    pub question: String,
    pub provenance: Provenance,
    pub step: InstructionStep,
}

/// The yes/no question of a slicing prompt. `history` ends with the current
/// question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub question: String,
    pub source: InstructionSource,
    pub refinement: Refinement,
    pub history: Vec<InstructionVersion>,
}

impl Instruction {
    fn push(&mut self, question: String, provenance: Provenance, step: InstructionStep) {
        self.history.push(InstructionVersion { question: question.clone(), provenance, step });
        self.question = question;
    }

    /// Replays the history; equals `question` for well-formed instructions.
    pub fn replay(&self) -> Option<&str> {
        self.history.last().map(|v| v.question.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Yes,
    No,
}

impl Label {
    pub fn other(self) -> Self {
        match self {
            Label::Yes => Label::No,
            Label::No => Label::Yes,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Yes => "yes",
            Label::No => "no",
        })
    }
}

impl From<Verdict> for Label {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::In => Label::Yes,
            Verdict::Out => Label::No,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Provided,
    Synthesized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Labeler {
    Student,
    Teacher,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub text: String,
    pub label: Label,
    pub origin: Origin,
    pub labeler: Labeler,
    /// Dataset id for provided examples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanRole {
    Crowdworker,
    DataScientist,
}

/// Time an operator spent on a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEffort {
    pub step: PipelineStep,
    pub role: HumanRole,
    pub minutes: f64,
}

/// A fully materialized slicing function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicingPrompt {
    pub criterion: SlicingCriterion,
    pub instruction: Instruction,
    pub examples: Vec<FewShotExample>,
    pub student_model: String,
    pub render_template: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub config: SliceConfig,
    pub usage: Vec<StepUsage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub human_effort: Vec<HumanEffort>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SlicingPrompt {
    pub fn student(&self) -> RoleBinding {
        RoleBinding {
            role: Role::Student,
            model_id: self.student_model.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
        }
    }
}

/// The full labeling prompt for one text.
pub fn render_prompt(prompt: &SlicingPrompt, text: &str) -> String {
    templates::render_labeling(&prompt.instruction.question, &prompt.examples, text)
}

/// What an operator is asked to edit.
#[derive(Debug, Clone)]
pub struct EditRequest<'a> {
    pub current: &'a str,
    pub criterion: Option<&'a SlicingCriterion>,
    pub step: InstructionStep,
}

/// Interactive instruction edit; returns the edited question.
pub trait InstructionEditor {
    fn edit(&self, req: &EditRequest<'_>) -> Result<String, String>;
}

impl<F> InstructionEditor for F
where
    F: Fn(&EditRequest<'_>) -> Result<String, String>,
{
    fn edit(&self, req: &EditRequest<'_>) -> Result<String, String> {
        self(req)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledBatch {
    pub examples: Vec<FewShotExample>,
    /// Positions whose model output could not be read as yes/no.
    pub unparseable: Vec<usize>,
    /// Positions whose backend call failed.
    pub failed: Vec<usize>,
}

/// Parses `Text:`/`Answer:` pairs. Text may continue over several lines.
pub fn parse_synthesized(output: &str) -> Vec<(String, Option<Label>)> {
    let mut pairs = Vec::new();
    let mut current: Option<String> = None;
    for line in output.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("Text:") {
            current = Some(rest.trim().to_string());
        } else if let Some(rest) = line.strip_prefix("Answer:") {
            if let Some(text) = current.take().filter(|t| !t.is_empty()) {
                let (verdict, status) = parse_label(rest);
                let label = (status != ParseStatus::Unparseable).then(|| verdict.into());
                pairs.push((text, label));
            }
        } else if let Some(text) = current.as_mut() {
            if !line.is_empty() {
                text.push('\n');
                text.push_str(line);
            }
        }
    }
    pairs
}

/// Yes first, alternating, stable within each label; leftovers appended.
pub fn alternate(examples: Vec<FewShotExample>) -> Vec<FewShotExample> {
    let (yes, no): (Vec<_>, Vec<_>) = examples.into_iter().partition(|e| e.label == Label::Yes);
    let mut out = Vec::with_capacity(yes.len() + no.len());
    let mut yes = yes.into_iter();
    let mut no = no.into_iter();
    loop {
        match (yes.next(), no.next()) {
            (None, None) => break,
            (y, n) => out.extend(y.into_iter().chain(n)),
        }
    }
    out
}

fn is_unusable_question(q: &str) -> bool {
    q.is_empty() || (!q.contains('?') && q.chars().count() < 5)
}

/// Runs the prompt-construction steps against one backend.
pub struct PromptBuilder<'a> {
    backend: &'a dyn Backend,
    embedder: &'a dyn EmbeddingProvider,
    editor: Option<&'a dyn InstructionEditor>,
    config: SliceConfig,
    usage: UsageLedger,
    human: Vec<HumanEffort>,
    warnings: Vec<String>,
}

impl<'a> PromptBuilder<'a> {
    /// `config` is validated here; human modes require an editor.
    pub fn new(
        backend: &'a dyn Backend,
        embedder: &'a dyn EmbeddingProvider,
        config: &SliceConfig,
        editor: Option<&'a dyn InstructionEditor>,
    ) -> Result<Self, PromptError> {
        let validated = runconfig::validate(config, editor.is_some())?;
        Ok(Self {
            backend,
            embedder,
            editor,
            config: validated.config,
            usage: UsageLedger::new(),
            human: Vec::new(),
            warnings: validated.warnings,
        })
    }

    pub fn config(&self) -> &SliceConfig {
        &self.config
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn usage(&self) -> Vec<StepUsage> {
        self.usage.to_vec()
    }

    pub fn generator(&self) -> RoleBinding {
        RoleBinding::generator(self.config.generator_model.clone())
    }

    pub fn student(&self) -> RoleBinding {
        RoleBinding::classifier(Role::Student, self.config.student_model.clone())
    }

    pub fn teacher(&self) -> RoleBinding {
        RoleBinding::classifier(Role::Teacher, self.config.teacher_model.clone())
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    fn call(
        &mut self,
        step: PipelineStep,
        binding: &RoleBinding,
        prompt: String,
        refresh: bool,
    ) -> Result<String, BackendError> {
        let mut req = binding.request(prompt);
        req.refresh = refresh;
        let resp = self.backend.complete(&req)?;
        self.usage.record(step, &binding.model_id, &resp);
        Ok(resp.text)
    }

    fn human_edit(
        &mut self,
        current: &str,
        criterion: Option<&SlicingCriterion>,
        step: InstructionStep,
        mode: &'static str,
    ) -> Result<String, PromptError> {
        let editor = self.editor.ok_or(PromptError::NoEditor(mode))?;
        let started = Instant::now();
        let edited = editor.edit(&EditRequest { current, criterion, step }).map_err(PromptError::Editor)?;
        self.human.push(HumanEffort {
            step: match step {
                InstructionStep::Generation => PipelineStep::InstructionGeneration,
                InstructionStep::Refinement => PipelineStep::InstructionRefinement,
            },
            role: HumanRole::DataScientist,
            minutes: started.elapsed().as_secs_f64() / 60.0,
        });
        let edited = edited.trim().to_string();
        if edited.is_empty() {
            self.warn("editor returned an empty instruction; keeping the previous one".into());
            return Ok(current.to_string());
        }
        Ok(edited)
    }

    pub fn generate_instruction(
        &mut self,
        criterion: &SlicingCriterion,
        source: InstructionSource,
    ) -> Result<Instruction, PromptError> {
        if criterion.name.trim().is_empty() {
            return Err(PromptError::EmptyCriterion);
        }
        let template_question = format!("Is the text related to {}?", criterion.name);
        let mut instr = Instruction {
            question: String::new(),
            source,
            refinement: Refinement::None,
            history: Vec::new(),
        };
        match source {
            InstructionSource::Template => {
                instr.push(template_question, Provenance::Template, InstructionStep::Generation);
            }
            InstructionSource::Model => {
                let generator = self.generator();
                let reply = self.call(
                    PipelineStep::InstructionGeneration,
                    &generator,
                    templates::render_generation(criterion.goal()),
                    false,
                )?;
                let suggestion = templates::last_marked_line(&reply, "Suggestion:")
                    .or_else(|| reply.lines().map(str::trim).find(|l| !l.is_empty()))
                    .unwrap_or("")
                    .to_string();
                if is_unusable_question(&suggestion) {
                    self.warn(format!(
                        "generator returned no usable question ({reply:?}); using the template"
                    ));
                    instr.push(template_question, Provenance::Template, InstructionStep::Generation);
                } else {
                    instr.push(suggestion, Provenance::Model, InstructionStep::Generation);
                }
            }
            InstructionSource::HumanTemplate => {
                instr.push(template_question.clone(), Provenance::Template, InstructionStep::Generation);
                let edited = self.human_edit(
                    &template_question,
                    Some(criterion),
                    InstructionStep::Generation,
                    "human+template",
                )?;
                instr.push(edited, Provenance::Human, InstructionStep::Generation);
            }
        }
        Ok(instr)
    }

    /// One round of model refinement, optionally followed by a human edit.
    pub fn refine_instruction(
        &mut self,
        instr: &Instruction,
        mode: Refinement,
    ) -> Result<Instruction, PromptError> {
        let mut out = instr.clone();
        out.refinement = mode;
        if mode == Refinement::None {
            return Ok(out);
        }
        let generator = self.generator();
        let reply = self.call(
            PipelineStep::InstructionRefinement,
            &generator,
            templates::render_refinement(&instr.question),
            false,
        )?;
        match templates::last_marked_line(&reply, "Revised instruction:") {
            Some(revised) if !revised.is_empty() => {
                out.push(revised.to_string(), Provenance::Model, InstructionStep::Refinement);
            }
            _ => self
                .warn(format!("refinement reply has no revised instruction; keeping {:?}", instr.question)),
        }
        if mode == Refinement::HumanModel {
            let current = out.question.clone();
            let edited = self.human_edit(&current, None, InstructionStep::Refinement, "human+model")?;
            out.push(edited, Provenance::Human, InstructionStep::Refinement);
        }
        Ok(out)
    }

    /// Zero-shot yes/no labels for `inputs`. The batch fails only when more
    /// than half of the calls fail.
    pub fn label_examples(
        &mut self,
        instr: &Instruction,
        inputs: &[Example],
        labeler: &RoleBinding,
    ) -> Result<LabeledBatch, PromptError> {
        if inputs.is_empty() {
            return Err(PromptError::NoInputs);
        }
        let mut binding = labeler.clone();
        binding.temperature = 0.0;
        binding.max_output_tokens = SLICE_MAX_OUTPUT_TOKENS;
        let who = match binding.role {
            Role::Teacher => Labeler::Teacher,
            _ => Labeler::Student,
        };
        let mut batch = LabeledBatch {
            examples: Vec::with_capacity(inputs.len()),
            unparseable: Vec::new(),
            failed: Vec::new(),
        };
        for (i, ex) in inputs.iter().enumerate() {
            let prompt = templates::render_labeling(&instr.question, &[], &ex.text);
            let label = match self.call(PipelineStep::ExampleLabeling, &binding, prompt, false) {
                Ok(reply) => {
                    let (verdict, status) = parse_label(&reply);
                    if status == ParseStatus::Unparseable {
                        batch.unparseable.push(i);
                    }
                    verdict.into()
                }
                Err(e) => {
                    log::warn!("labeling {} failed: {e}", ex.id);
                    batch.failed.push(i);
                    Label::No
                }
            };
            batch.examples.push(FewShotExample {
                text: ex.text.clone(),
                label,
                origin: Origin::Provided,
                labeler: who,
                source_id: Some(ex.id.clone()),
            });
        }
        if batch.failed.len() * 2 > inputs.len() {
            return Err(PromptError::LabelingFailed { failed: batch.failed.len(), total: inputs.len() });
        }
        if !batch.unparseable.is_empty() {
            self.warn(format!(
                "{} of {} example labels were unparseable and set to no",
                batch.unparseable.len(),
                inputs.len()
            ));
        }
        if !batch.failed.is_empty() {
            self.warn(format!(
                "{} of {} example labeling calls failed and were set to no",
                batch.failed.len(),
                inputs.len()
            ));
        }
        Ok(batch)
    }

    fn synthesize_once(
        &mut self,
        instr: &Instruction,
        existing: &[FewShotExample],
        target: Label,
        n: usize,
        refresh: bool,
    ) -> Result<Vec<FewShotExample>, PromptError> {
        let generator = self.generator();
        let reply = self.call(
            PipelineStep::ExampleSynthesis,
            &generator,
            templates::render_synthesis(&instr.question, existing, n, target),
            refresh,
        )?;
        Ok(parse_synthesized(&reply)
            .into_iter()
            .filter(|(_, label)| *label == Some(target))
            .take(n)
            .map(|(text, _)| FewShotExample {
                text,
                label: target,
                origin: Origin::Synthesized,
                labeler: Labeler::None,
                source_id: None,
            })
            .collect())
    }

    /// Up to `n` model-written examples with label `target`. Retries once
    /// if nothing usable comes back.
    pub fn synthesize_examples(
        &mut self,
        instr: &Instruction,
        existing: &[FewShotExample],
        target: Label,
        n: usize,
    ) -> Result<Vec<FewShotExample>, PromptError> {
        let n = n.max(1);
        let first = self.synthesize_once(instr, existing, target, n, false)?;
        if !first.is_empty() {
            return Ok(first);
        }
        self.warn(format!("synthesis returned no usable {target} examples; retrying"));
        let second = self.synthesize_once(instr, existing, target, n, true)?;
        if second.is_empty() {
            return Err(PromptError::SynthesisFailed { label: target });
        }
        Ok(second)
    }

    /// Tops up the minority label with synthesized examples when it has
    /// fewer than a quarter of the slots, keeping `size` examples in total.
    fn balance(
        &mut self,
        instr: &Instruction,
        labeled: Vec<FewShotExample>,
    ) -> Result<Vec<FewShotExample>, PromptError> {
        let size = self.config.few_shot_size;
        let trigger = size.div_ceil(4);
        let (yes, no): (Vec<_>, Vec<_>) = labeled.into_iter().partition(|e| e.label == Label::Yes);
        let (minority_label, minority, mut majority) =
            if yes.len() <= no.len() { (Label::Yes, yes, no) } else { (Label::No, no, yes) };
        if minority.len() >= trigger {
            return Ok(minority.into_iter().chain(majority).collect());
        }
        let target_minority = size / 2;
        // Drop the highest-index majority examples first.
        majority.truncate(size - target_minority);
        let needed = target_minority - minority.len();
        let kept = alternate(minority.iter().chain(&majority).cloned().collect());

        let mut synthesized = self.synthesize_examples(instr, &kept, minority_label, needed)?;
        if synthesized.len() < needed {
            let more =
                self.synthesize_once(instr, &kept, minority_label, needed - synthesized.len(), true)?;
            synthesized.extend(more);
        }
        if synthesized.len() < needed {
            return Err(PromptError::SynthesisShort {
                label: minority_label,
                needed,
                got: synthesized.len(),
            });
        }
        synthesized.truncate(needed);
        Ok(minority.into_iter().chain(synthesized).chain(majority).collect())
    }

    fn sample(&self, dataset: &Dataset) -> Result<Vec<Example>, PromptError> {
        let n = self.config.few_shot_size;
        let seed = self.config.seed;
        Ok(match self.config.sampler.unwrap_or(SamplerKind::Random) {
            SamplerKind::Random => sampler::sample_random(dataset, n, seed)?,
            SamplerKind::Diversity => sampler::sample_diverse(dataset, n, seed, self.embedder)?,
        })
    }

    /// Runs every configured step and assembles the prompt.
    pub fn build(
        mut self,
        criterion: &SlicingCriterion,
        dataset: &Dataset,
    ) -> Result<SlicingPrompt, PromptError> {
        let generated = self.generate_instruction(criterion, self.config.instruction_source)?;
        let instruction = self.refine_instruction(&generated, self.config.instruction_refinement)?;

        let examples = if self.config.few_shot {
            let inputs = self.sample(dataset)?;
            let labeler = match self.config.labeler.unwrap_or(LabelerKind::Student) {
                LabelerKind::Student => self.student(),
                LabelerKind::Teacher => self.teacher(),
            };
            let labeled = self.label_examples(&instruction, &inputs, &labeler)?.examples;
            let labeled =
                if self.config.synthesis() { self.balance(&instruction, labeled)? } else { labeled };
            alternate(labeled)
        } else {
            Vec::new()
        };

        Ok(SlicingPrompt {
            criterion: criterion.clone(),
            instruction,
            examples,
            student_model: self.config.student_model.clone(),
            render_template: templates::LABELING_TEMPLATE_ID.to_string(),
            temperature: 0.0,
            max_output_tokens: SLICE_MAX_OUTPUT_TOKENS,
            config: self.config,
            usage: self.usage.into_vec(),
            human_effort: self.human,
            warnings: self.warnings,
        })
    }
}

/// Builds a slicing prompt for `criterion` under `config`.
pub fn build_prompt(
    criterion: &SlicingCriterion,
    dataset: &Dataset,
    config: &SliceConfig,
    backend: &dyn Backend,
    embedder: &dyn EmbeddingProvider,
    editor: Option<&dyn InstructionEditor>,
) -> Result<SlicingPrompt, PromptError> {
    PromptBuilder::new(backend, embedder, config, editor)?.build(criterion, dataset)
}
