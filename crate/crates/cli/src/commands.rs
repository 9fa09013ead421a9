//! The subcommands. Each returns the directory it wrote to.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::Utc;
use semslice::artifact::{write_atomic, write_json};
use semslice::backend::Backend;
use semslice::corpus::{load_dataset, DataFormat, Dataset, Slice};
use semslice::eval::{evaluate, throughput_report, CostModel, EvalInput, EvaluationReport};
use semslice::promptgen::{build_prompt, slugify, InstructionEditor, SlicingCriterion, SlicingPrompt};
use semslice::runconfig::{self, SliceConfig, PRESET_NAMES};
use semslice::sampler::EmbeddingProvider;
use semslice::slicer::{annotate, extract_slice, AnnotateOptions, AnnotationRun, DEFAULT_MAX_FAILURE_RATE};

use crate::config::{BackendKind, ToolConfig};
use crate::editor::ExternalEditor;
use crate::manifest::{run_dir, Recorder};
use crate::UsageError;

pub const PROMPT_FILE: &str = "prompt.json";
pub const RUN_FILE: &str = "run.json";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const SLICE_FILE: &str = "slice.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";

/// Settings shared by every command.
pub struct Globals {
    pub config: ToolConfig,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub parallelism: usize,
    pub cache_dir: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub interactive: bool,
}

impl Globals {
    fn backend(&self) -> Result<Arc<dyn Backend>> {
        let kind = self.backend.or(self.config.backend).unwrap_or(BackendKind::Http);
        let cache = self.config.cache_dir(self.cache_dir.as_deref(), kind);
        self.config.build_backend(kind, cache.as_deref())
    }

    fn out_dir(&self, explicit: Option<&Path>, stem: &str) -> PathBuf {
        match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let root = self.config.output_root.clone().unwrap_or_else(|| ".".into());
                run_dir(&root, stem, Utc::now())
            }
        }
    }

    fn annotate_options(&self) -> AnnotateOptions {
        AnnotateOptions {
            parallelism: self.parallelism,
            max_failure_rate: self.config.max_failure_rate.unwrap_or(DEFAULT_MAX_FAILURE_RATE),
        }
    }

    /// Validates `config` for this invocation and returns the editor it
    /// needs, if any.
    fn prepare(&self, config: &SliceConfig) -> Result<(SliceConfig, Option<ExternalEditor>)> {
        // validate() logs its own warnings
        let validated =
            runconfig::validate(config, self.interactive).map_err(|e| UsageError(e.to_string()))?;
        let editor = if validated.config.needs_interaction() {
            Some(ExternalEditor::from_env().ok_or_else(|| {
                UsageError(format!(
                    "{} edits the instruction interactively; set EDITOR",
                    validated.config.label()
                ))
            })?)
        } else {
            None
        };
        Ok((validated.config, editor))
    }

    fn record_config_file(&self, rec: &mut Recorder) -> Result<()> {
        match &self.config_path {
            Some(p) => rec.input(p),
            None => Ok(()),
        }
    }
}

fn load(path: &Path, format: Option<DataFormat>) -> Result<Dataset> {
    let format = format.unwrap_or_else(|| DataFormat::from_path(path));
    load_dataset(path, format).with_context(|| format!("cannot load dataset {}", path.display()))
}

fn read_prompt(path: &Path) -> Result<(SlicingPrompt, Vec<u8>)> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let prompt = serde_json::from_slice(&bytes)
        .with_context(|| format!("{} is not a prompt artifact", path.display()))?;
    Ok((prompt, bytes))
}

fn criterion(name: &str, description: Option<&str>) -> Result<SlicingCriterion> {
    let c = SlicingCriterion::new(name).map_err(|e| UsageError(e.to_string()))?;
    Ok(c.with_description(description.unwrap_or_default()))
}

pub struct PromptArgs {
    pub criterion: String,
    pub description: Option<String>,
    pub data: PathBuf,
    pub format: Option<DataFormat>,
    pub preset: Option<String>,
    pub slice_config: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn prompt(g: &Globals, a: &PromptArgs) -> Result<PathBuf> {
    let mut rec = Recorder::start("prompt", &g.config);
    let config = g.config.slice_config(a.preset.as_deref(), a.slice_config.as_deref(), g.seed)?;
    let (config, editor) = g.prepare(&config)?;
    rec.config(&config);
    let criterion = criterion(&a.criterion, a.description.as_deref())?;
    let dataset = load(&a.data, a.format)?;
    rec.input(&a.data)?;
    if let Some(p) = &a.slice_config {
        rec.input(p)?;
    }
    g.record_config_file(&mut rec)?;

    let backend = g.backend()?;
    let embedder = g.config.build_embedder();
    let prompt = build_prompt(
        &criterion,
        &dataset,
        &config,
        &*backend,
        &*embedder,
        editor.as_ref().map(|e| e as &dyn InstructionEditor),
    )?;

    let dir = g.out_dir(a.out.as_deref(), &format!("{}-{}", criterion.slug(), config.label()));
    let path = dir.join(PROMPT_FILE);
    write_json(&path, &prompt).with_context(|| format!("cannot write {}", path.display()))?;
    rec.finish(&dir, std::slice::from_ref(&path))?;
    println!("instruction: {}", prompt.instruction.question);
    println!("examples: {}", prompt.examples.len());
    println!("wrote {}", path.display());
    Ok(dir)
}

pub struct SliceArgs {
    pub prompt: PathBuf,
    pub data: PathBuf,
    pub format: Option<DataFormat>,
    pub out: Option<PathBuf>,
}

/// Writes the annotation run, the slice, and a copy of the prompt into `dir`.
fn write_slice_outputs(
    dir: &Path,
    prompt_bytes: &[u8],
    run: &AnnotationRun,
    slice: &Slice,
) -> Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> =
        [PROMPT_FILE, RUN_FILE, ANNOTATIONS_FILE, SLICE_FILE].iter().map(|f| dir.join(f)).collect();
    write_atomic(&paths[0], prompt_bytes)?;
    run.write(&paths[1], &paths[2])?;
    write_json(&paths[3], slice)?;
    Ok(paths)
}

fn summarize(run: &AnnotationRun, slice: &Slice) {
    let c = run.counts();
    let rate =
        if run.wall_clock_seconds > 0.0 { c.total as f64 / run.wall_clock_seconds } else { f64::INFINITY };
    println!(
        "annotated {} examples in {:.2}s ({rate:.1} annotations/sec): {} in slice {:?}, {} unparseable, {} failed",
        c.total, run.wall_clock_seconds, slice.len(), slice.criterion_name, c.unparseable, c.failed
    );
}

pub fn slice(g: &Globals, a: &SliceArgs) -> Result<PathBuf> {
    let mut rec = Recorder::start("slice", &g.config);
    let (prompt, prompt_bytes) = read_prompt(&a.prompt)?;
    rec.config(&prompt.config);
    rec.input(&a.prompt)?;
    let dataset = load(&a.data, a.format)?;
    rec.input(&a.data)?;
    g.record_config_file(&mut rec)?;

    let backend = g.backend()?;
    let run = annotate(&dataset, &prompt, &*backend, g.annotate_options())?;
    let slice = extract_slice(&dataset, &run, &prompt.criterion.name)?;

    let stem = format!("{}-{}", prompt.criterion.slug(), prompt.config.label());
    let dir = g.out_dir(a.out.as_deref(), &stem);
    let outputs = write_slice_outputs(&dir, &prompt_bytes, &run, &slice)?;
    rec.finish(&dir, &outputs)?;
    summarize(&run, &slice);
    println!("wrote {}", dir.display());
    Ok(dir)
}

/// The gold slice a predicted slice is scored against: same name, or else
/// the only gold slice with the same slug.
pub fn match_gold(dataset: &Dataset, name: &str) -> Option<String> {
    let names = dataset.gold_slice_names();
    if names.contains(name) {
        return Some(name.to_string());
    }
    let slug = slugify(name);
    let mut hits = names.iter().filter(|g| slugify(g) == slug);
    match (hits.next(), hits.next()) {
        (Some(g), None) => Some(g.clone()),
        _ => None,
    }
}

/// Loads a slice file, or a directory written by `slice`. Sibling prompt
/// and run files, when present, supply the configuration label, usage and
/// throughput.
pub fn load_eval_input(path: &Path, dataset: &Dataset) -> Result<EvalInput> {
    let (dir, slice_path) = if path.is_dir() {
        (path.to_path_buf(), path.join(SLICE_FILE))
    } else {
        (path.parent().map(Path::to_path_buf).unwrap_or_default(), path.to_path_buf())
    };
    let slice: Slice = serde_json::from_slice(
        &std::fs::read(&slice_path).with_context(|| format!("cannot read {}", slice_path.display()))?,
    )
    .with_context(|| format!("{} is not a slice file", slice_path.display()))?;

    let prompt_path = dir.join(PROMPT_FILE);
    let prompt = if prompt_path.is_file() { Some(read_prompt(&prompt_path)?.0) } else { None };
    let (run_path, ann_path) = (dir.join(RUN_FILE), dir.join(ANNOTATIONS_FILE));
    let run = if run_path.is_file() && ann_path.is_file() {
        Some(AnnotationRun::read(&run_path, &ann_path)?)
    } else {
        None
    };

    let configuration = prompt
        .as_ref()
        .map(|p| p.config.label().to_string())
        .or_else(|| run.as_ref().map(|r| r.config.label().to_string()))
        .unwrap_or_else(|| {
            slice_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        });
    let mut usage = prompt.as_ref().map(|p| p.usage.clone()).unwrap_or_default();
    let human_effort = prompt.as_ref().map(|p| p.human_effort.clone()).unwrap_or_default();
    if let Some(r) = &run {
        usage.extend(r.usage());
    }
    Ok(EvalInput {
        configuration,
        gold: match_gold(dataset, &slice.criterion_name),
        throughput: run.as_ref().and_then(|r| throughput_report(r).ok()),
        slice,
        usage,
        human_effort,
    })
}

pub struct EvalArgs {
    pub inputs: Vec<PathBuf>,
    pub data: PathBuf,
    pub format: Option<DataFormat>,
    pub alpha: f64,
    pub pricing: Option<PathBuf>,
    pub require_gold: bool,
    pub out: Option<PathBuf>,
}

pub fn load_pricing(path: Option<&Path>) -> Result<Option<CostModel>> {
    path.map(|p| CostModel::from_file(p).map_err(|e| UsageError(e.to_string()).into())).transpose()
}

fn write_report(dir: &Path, report: &EvaluationReport) -> Result<Vec<PathBuf>> {
    let (json, md) = (dir.join(REPORT_JSON), dir.join(REPORT_MD));
    write_atomic(&json, format!("{}\n", report.to_json()).as_bytes())?;
    write_atomic(&md, report.to_markdown().as_bytes())?;
    Ok(vec![json, md])
}

/// Under-performing slices, one per line, or `None` if there are none.
pub fn flagged_summary(report: &EvaluationReport) -> Option<String> {
    let mut s = String::new();
    for (slice, column) in report.flagged() {
        let _ = writeln!(s, "under-performing: {slice} ({column})");
    }
    (!s.is_empty()).then_some(s)
}

/// Returns the output directory and whether any slice was flagged.
pub fn eval(g: &Globals, a: &EvalArgs) -> Result<(PathBuf, bool)> {
    let mut rec = Recorder::start("eval", &g.config);
    let dataset = load(&a.data, a.format)?;
    rec.input(&a.data)?;
    let pricing = load_pricing(a.pricing.as_deref())?;
    if let Some(p) = &a.pricing {
        rec.input(p)?;
    }
    let mut inputs = Vec::new();
    for path in &a.inputs {
        let input = load_eval_input(path, &dataset)?;
        if input.gold.is_none() {
            if a.require_gold {
                bail!(
                    "no gold slice for {:?} in {} (gold slices: {:?})",
                    input.slice.criterion_name,
                    a.data.display(),
                    dataset.gold_slice_names()
                );
            }
            log::warn!("no gold slice for {:?}; F1 not reported", input.slice.criterion_name);
        }
        rec.input(&if path.is_dir() { path.join(SLICE_FILE) } else { path.clone() })?;
        inputs.push(input);
    }

    let report = evaluate(&dataset, &inputs, a.alpha, pricing.as_ref())?;
    let dir = g.out_dir(a.out.as_deref(), "eval");
    let outputs = write_report(&dir, &report)?;
    rec.finish(&dir, &outputs)?;
    print!("{}", report.to_markdown());
    let flagged = flagged_summary(&report);
    if let Some(s) = &flagged {
        eprint!("{s}");
    }
    println!("wrote {}", dir.display());
    Ok((dir, flagged.is_some()))
}

pub struct BatchArgs {
    pub criteria: PathBuf,
    pub data: PathBuf,
    pub format: Option<DataFormat>,
    pub preset: Option<String>,
    pub slice_config: Option<PathBuf>,
    pub alpha: f64,
    pub pricing: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// One criterion per line; `#` starts a comment line. A tab separates an
/// optional description from the name.
pub fn parse_criteria(text: &str) -> Result<Vec<SlicingCriterion>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for line in text.lines() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (name, description) = match line.split_once('\t') {
            Some((n, d)) => (n, Some(d.trim())),
            None => (line, None),
        };
        let c = criterion(name, description)?;
        if !seen.insert(c.slug()) {
            return Err(UsageError(format!("criterion {:?} appears twice", c.name)).into());
        }
        out.push(c);
    }
    if out.is_empty() {
        return Err(UsageError("criteria file lists no criteria".into()).into());
    }
    Ok(out)
}

/// Prompt, slice and evaluate every criterion in a file. The backend and
/// the embedding memo are shared, so the dataset is embedded once.
pub fn batch(g: &Globals, a: &BatchArgs) -> Result<(PathBuf, bool)> {
    let mut rec = Recorder::start("batch", &g.config);
    let text = std::fs::read_to_string(&a.criteria)
        .with_context(|| format!("cannot read {}", a.criteria.display()))?;
    let criteria = parse_criteria(&text)?;
    rec.input(&a.criteria)?;
    let config = g.config.slice_config(a.preset.as_deref(), a.slice_config.as_deref(), g.seed)?;
    let (config, editor) = g.prepare(&config)?;
    rec.config(&config);
    let dataset = load(&a.data, a.format)?;
    rec.input(&a.data)?;
    let pricing = load_pricing(a.pricing.as_deref())?;
    if let Some(p) = &a.pricing {
        rec.input(p)?;
    }
    g.record_config_file(&mut rec)?;

    let backend = g.backend()?;
    let embedder: Arc<dyn EmbeddingProvider> = g.config.build_embedder();
    let dir = g.out_dir(a.out.as_deref(), &format!("batch-{}", config.label()));
    let mut outputs = Vec::new();
    let mut inputs = Vec::new();
    for c in &criteria {
        let prompt = build_prompt(
            c,
            &dataset,
            &config,
            &*backend,
            &*embedder,
            editor.as_ref().map(|e| e as &dyn InstructionEditor),
        )
        .with_context(|| format!("building the prompt for {:?}", c.name))?;
        let run = annotate(&dataset, &prompt, &*backend, g.annotate_options())
            .with_context(|| format!("annotating {:?}", c.name))?;
        let slice = extract_slice(&dataset, &run, &c.name)?;
        summarize(&run, &slice);
        let sub = dir.join(c.slug());
        let bytes = semslice::artifact::to_json_bytes(&prompt);
        outputs.extend(write_slice_outputs(&sub, &bytes, &run, &slice)?);
        inputs.push(load_eval_input(&sub, &dataset)?);
    }

    let report = evaluate(&dataset, &inputs, a.alpha, pricing.as_ref())?;
    outputs.extend(write_report(&dir, &report)?);
    rec.finish(&dir, &outputs)?;
    print!("{}", report.to_markdown());
    let flagged = flagged_summary(&report);
    if let Some(s) = &flagged {
        eprint!("{s}");
    }
    println!("wrote {}", dir.display());
    Ok((dir, flagged.is_some()))
}

fn field(v: impl serde::Serialize) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(serde_json::Value::Null) => "-".into(),
        Ok(other) => other.to_string(),
        Err(_) => "?".into(),
    }
}

/// The named configurations as a table.
pub fn presets() -> String {
    let mut rows =
        vec![["name", "few_shot", "input_source", "sampler", "labeler", "instruction", "refinement"]
            .map(String::from)];
    for name in PRESET_NAMES {
        let c = runconfig::named_preset(name).expect("listed presets exist");
        rows.push([
            name.to_string(),
            c.few_shot.to_string(),
            field(c.input_source),
            field(c.sampler),
            field(c.labeler),
            field(c.instruction_source),
            field(c.instruction_refinement),
        ]);
    }
    let widths: Vec<usize> = (0..7).map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in &rows {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use semslice::corpus::Example;

    #[test]
    fn criteria_file_format() {
        let cs = parse_criteria("# slices\nMuslim\n\nfood\tMentions of cooking or eating\n").unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[1].description.as_deref(), Some("Mentions of cooking or eating"));
        assert!(parse_criteria("Muslim\nmuslim\n").is_err());
        assert!(parse_criteria("# nothing\n").is_err());
    }

    #[test]
    fn gold_matching_by_name_then_slug() {
        let ds = Dataset::new(
            "d",
            vec![
                Example::new("1", "x").with_gold("Mental illness", true).with_gold("Black", false),
                Example::new("2", "y").with_gold("Mental illness", false).with_gold("Black", true),
            ],
        )
        .unwrap();
        assert_eq!(match_gold(&ds, "Black").as_deref(), Some("Black"));
        assert_eq!(match_gold(&ds, "mental-illness").as_deref(), Some("Mental illness"));
        assert_eq!(match_gold(&ds, "Jewish"), None);
    }

    #[test]
    fn presets_table_lists_every_preset() {
        let t = presets();
        assert_eq!(t.lines().count(), 10);
        assert!(t.lines().any(|l| l.starts_with("M_fs-syn") && l.contains("provided+synthesized")));
        assert!(t.lines().any(|l| l.starts_with("M_zero-shot") && l.contains(" - ")));
    }
}
