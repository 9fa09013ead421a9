//! Applies a slicing prompt to every example of a dataset with the student
//! model and extracts the predicted slice.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::backend::{count_tokens, Backend};
use crate::corpus::{Dataset, Slice, SliceSource};
use crate::promptgen::{render_prompt, SlicingPrompt};
use crate::runconfig::SliceConfig;
use crate::usage::{PipelineStep, StepUsage, UsageLedger};

/// Output budget for a yes/no label with room for punctuation.
pub const SLICE_MAX_OUTPUT_TOKENS: u32 = 5;
pub const DEFAULT_PARALLELISM: usize = 8;
pub const DEFAULT_MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Debug, thiserror::Error)]
pub enum SliceError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
    #[error("{failed} of {total} annotations failed (limit {limit:.0}%); first failures: {sample:?}")]
    TooManyFailures { failed: usize, total: usize, limit: f64, sample: Vec<String> },
    #[error("annotation run does not match dataset: {0}")]
    Mismatch(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    In,
    Out,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Clean,
    Normalized,
    Unparseable,
}

/// Reads a yes/no answer. Exact lowercase `yes`/`no` is clean; answers that
/// need trimming, case folding, punctuation stripping, or only lead with
/// yes/no are normalized; anything else is out and unparseable.
pub fn parse_label(raw: &str) -> (Verdict, ParseStatus) {
    let exact = |v: &str| match v {
        "yes" => Some(Verdict::In),
        "no" => Some(Verdict::Out),
        _ => None,
    };
    if let Some(v) = exact(raw) {
        return (v, ParseStatus::Clean);
    }
    let stripped = raw.trim().trim_end_matches(['.', '!']).trim_end().to_lowercase();
    if let Some(v) = exact(&stripped) {
        return (v, ParseStatus::Normalized);
    }
    let first = stripped
        .split(|c: char| c.is_whitespace() || matches!(c, ',' | '.' | '!' | ';' | ':'))
        .next()
        .unwrap_or("");
    match exact(first) {
        Some(v) => (v, ParseStatus::Normalized),
        None => (Verdict::Out, ParseStatus::Unparseable),
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceAnnotation {
    pub example_id: String,
    pub verdict: Verdict,
    pub raw_output: String,
    pub parse_status: ParseStatus,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: f64,
    /// The backend call failed; `raw_output` holds the error.
    #[serde(default, skip_serializing_if = "is_false")]
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRun {
    pub prompt_ref: String,
    pub criterion_name: String,
    pub dataset_name: String,
    pub student_model: String,
    pub config: SliceConfig,
    pub annotations: Vec<SliceAnnotation>,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub total: usize,
    pub members: usize,
    pub non_members: usize,
    pub unparseable: usize,
    pub failed: usize,
}

/// JSON header stored next to the per-annotation JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub prompt_ref: String,
    pub criterion_name: String,
    pub dataset_name: String,
    pub student_model: String,
    pub config: SliceConfig,
    pub wall_clock_seconds: f64,
    pub counts: RunCounts,
    pub usage: Vec<StepUsage>,
}

impl AnnotationRun {
    pub fn counts(&self) -> RunCounts {
        let members = self.annotations.iter().filter(|a| a.verdict == Verdict::In).count();
        RunCounts {
            total: self.annotations.len(),
            members,
            non_members: self.annotations.len() - members,
            unparseable: self
                .annotations
                .iter()
                .filter(|a| a.parse_status == ParseStatus::Unparseable)
                .count(),
            failed: self.annotations.iter().filter(|a| a.failed).count(),
        }
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        self.annotations.iter().map(|a| a.verdict).collect()
    }

    pub fn usage(&self) -> Vec<StepUsage> {
        let mut ledger = UsageLedger::new();
        for a in &self.annotations {
            ledger.add(
                PipelineStep::SliceLabeling,
                &self.student_model,
                a.input_tokens,
                a.output_tokens,
                false,
            );
        }
        ledger.into_vec()
    }

    pub fn header(&self) -> RunHeader {
        RunHeader {
            prompt_ref: self.prompt_ref.clone(),
            criterion_name: self.criterion_name.clone(),
            dataset_name: self.dataset_name.clone(),
            student_model: self.student_model.clone(),
            config: self.config.clone(),
            wall_clock_seconds: self.wall_clock_seconds,
            counts: self.counts(),
            usage: self.usage(),
        }
    }

    pub fn annotations_jsonl(&self) -> String {
        let mut out = String::new();
        for a in &self.annotations {
            out.push_str(&serde_json::to_string(a).expect("annotations serialize"));
            out.push('\n');
        }
        out
    }

    /// Writes the header and the annotations, each atomically.
    pub fn write(&self, header_path: &Path, annotations_path: &Path) -> Result<(), SliceError> {
        let io = |p: &Path| {
            let p = p.display().to_string();
            move |e: std::io::Error| SliceError::Io { path: p, message: e.to_string() }
        };
        artifact::write_atomic(annotations_path, self.annotations_jsonl().as_bytes())
            .map_err(io(annotations_path))?;
        artifact::write_json(header_path, &self.header()).map_err(io(header_path))?;
        Ok(())
    }

    pub fn read(header_path: &Path, annotations_path: &Path) -> Result<Self, SliceError> {
        let err = |p: &Path, m: String| SliceError::Io { path: p.display().to_string(), message: m };
        let header: RunHeader =
            serde_json::from_slice(&fs::read(header_path).map_err(|e| err(header_path, e.to_string()))?)
                .map_err(|e| err(header_path, e.to_string()))?;
        let file = fs::File::open(annotations_path).map_err(|e| err(annotations_path, e.to_string()))?;
        let mut annotations = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(annotations_path, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            annotations.push(
                serde_json::from_str(&line)
                    .map_err(|e| err(annotations_path, format!("line {}: {e}", i + 1)))?,
            );
        }
        Ok(Self {
            prompt_ref: header.prompt_ref,
            criterion_name: header.criterion_name,
            dataset_name: header.dataset_name,
            student_model: header.student_model,
            config: header.config,
            annotations,
            wall_clock_seconds: header.wall_clock_seconds,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotateOptions {
    pub parallelism: usize,
    pub max_failure_rate: f64,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        Self { parallelism: DEFAULT_PARALLELISM, max_failure_rate: DEFAULT_MAX_FAILURE_RATE }
    }
}

impl AnnotateOptions {
    pub fn with_parallelism(parallelism: usize) -> Self {
        Self { parallelism, ..Self::default() }
    }
}

fn annotate_one(backend: &dyn Backend, prompt: &SlicingPrompt, id: &str, text: &str) -> SliceAnnotation {
    let rendered = render_prompt(prompt, text);
    let req = prompt.student().request(rendered).temperature(0.0).max_output_tokens(SLICE_MAX_OUTPUT_TOKENS);
    let started = Instant::now();
    match backend.complete(&req) {
        Ok(resp) => {
            let (verdict, parse_status) = parse_label(&resp.text);
            SliceAnnotation {
                example_id: id.to_string(),
                verdict,
                raw_output: resp.text,
                parse_status,
                input_tokens: resp.input_tokens,
                output_tokens: resp.output_tokens,
                latency_ms: resp.latency_ms,
                failed: false,
            }
        }
        Err(e) => SliceAnnotation {
            example_id: id.to_string(),
            verdict: Verdict::Out,
            raw_output: format!("<error: {e}>"),
            parse_status: ParseStatus::Unparseable,
            input_tokens: count_tokens(&req.prompt_text),
            output_tokens: 0,
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
            failed: true,
        },
    }
}

/// Labels every example with the student model, up to `parallelism` calls
/// at a time. Annotations come back in dataset order.
pub fn annotate(
    dataset: &Dataset,
    prompt: &SlicingPrompt,
    backend: &dyn Backend,
    options: AnnotateOptions,
) -> Result<AnnotationRun, SliceError> {
    if dataset.is_empty() {
        return Err(SliceError::EmptyDataset);
    }
    if options.parallelism == 0 {
        return Err(SliceError::ZeroParallelism);
    }
    let examples = dataset.examples();
    let started = Instant::now();
    let next = AtomicUsize::new(0);
    let workers = options.parallelism.min(examples.len());
    let mut slots: Vec<Option<SliceAnnotation>> = vec![None; examples.len()];
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(ex) = examples.get(i) else { break };
                        done.push((i, annotate_one(backend, prompt, &ex.id, &ex.text)));
                    }
                    done
                })
            })
            .collect();
        for h in handles {
            for (i, a) in h.join().expect("annotation worker panicked") {
                slots[i] = Some(a);
            }
        }
    });
    let annotations: Vec<SliceAnnotation> =
        slots.into_iter().map(|a| a.expect("every index annotated")).collect();
    let wall_clock_seconds = started.elapsed().as_secs_f64();

    let failed: Vec<&str> = annotations.iter().filter(|a| a.failed).map(|a| a.example_id.as_str()).collect();
    if failed.len() as f64 > options.max_failure_rate * annotations.len() as f64 {
        return Err(SliceError::TooManyFailures {
            failed: failed.len(),
            total: annotations.len(),
            limit: options.max_failure_rate * 100.0,
            sample: failed.iter().take(10).map(|s| s.to_string()).collect(),
        });
    }
    if !failed.is_empty() {
        log::warn!("{} annotations failed and were recorded as out", failed.len());
    }

    Ok(AnnotationRun {
        prompt_ref: artifact::digest(prompt),
        criterion_name: prompt.criterion.name.clone(),
        dataset_name: dataset.name().to_string(),
        student_model: prompt.student_model.clone(),
        config: prompt.config.clone(),
        annotations,
        wall_clock_seconds,
    })
}

/// The predicted slice: every example annotated `in`, in dataset order.
pub fn extract_slice(
    dataset: &Dataset,
    run: &AnnotationRun,
    criterion_name: &str,
) -> Result<Slice, SliceError> {
    if run.annotations.len() != dataset.len() {
        return Err(SliceError::Mismatch(format!(
            "{} annotations for {} examples",
            run.annotations.len(),
            dataset.len()
        )));
    }
    let mut member_ids = Vec::new();
    for (ex, a) in dataset.examples().iter().zip(&run.annotations) {
        if ex.id != a.example_id {
            return Err(SliceError::Mismatch(format!(
                "annotation {:?} where example {:?} was expected",
                a.example_id, ex.id
            )));
        }
        if a.verdict == Verdict::In {
            member_ids.push(ex.id.clone());
        }
    }
    Ok(Slice { criterion_name: criterion_name.to_string(), member_ids, source: SliceSource::Predicted })
}
