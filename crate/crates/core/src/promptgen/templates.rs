//! Prompt templates and their instantiation.
//!
//! The assets under `templates/` are kept verbatim. `{name}` is a
//! placeholder; `{{` and `}}` render as literal braces.

use super::FewShotExample;

pub const INSTRUCTION_GENERATION: &str = include_str!("../../templates/instruction_generation.txt");
pub const INSTRUCTION_REFINEMENT: &str = include_str!("../../templates/instruction_refinement.txt");
pub const LABELING: &str = include_str!("../../templates/labeling.txt");
pub const SYNTHESIS: &str = include_str!("../../templates/synthesis.txt");
/// Goal/question pairs standing in for the generation template's
/// `[examples omitted]` block.
pub const INSTRUCTION_DEMONSTRATIONS: &str = include_str!("../../templates/instruction_demonstrations.txt");

/// Identifier recorded in prompt artifacts for the labeling template.
pub const LABELING_TEMPLATE_ID: &str = "labeling/v1";

const EXAMPLES_PLACEHOLDER: &str = "[examples omitted]";

/// Substitutes `{name}` placeholders. Panics on a placeholder without a
/// value; templates are static so that is a programming error.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push('{');
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            out.push('}');
            rest = after;
        } else if tail.starts_with('{') {
            let end = tail.find('}').expect("unterminated placeholder in template");
            let name = &tail[1..end];
            let value = vars
                .iter()
                .find(|(k, _)| *k == name)
                .unwrap_or_else(|| panic!("no value for template placeholder {{{name}}}"))
                .1;
            out.push_str(value);
            rest = &tail[end + 1..];
        } else {
            panic!("stray '}}' in template");
        }
    }
    out.push_str(rest);
    out
}

/// `Text: <t>\nAnswer: <label>` blocks separated by blank lines.
pub fn examples_block(examples: &[FewShotExample]) -> String {
    examples.iter().map(|e| format!("Text: {}\nAnswer: {}", e.text, e.label)).collect::<Vec<_>>().join("\n\n")
}

/// An empty examples block disappears together with its trailing blank line.
fn with_examples(template: &str, block: &str) -> String {
    if block.is_empty() {
        template.replacen("{examples}\n\n", "", 1)
    } else {
        template.to_string()
    }
}

pub fn render_labeling(question: &str, examples: &[FewShotExample], text: &str) -> String {
    let block = examples_block(examples);
    fill(&with_examples(LABELING, &block), &[("question", question), ("examples", &block), ("text", text)])
}

pub fn render_synthesis(
    question: &str,
    examples: &[FewShotExample],
    n: usize,
    label: super::Label,
) -> String {
    let block = examples_block(examples);
    let n = n.to_string();
    let label = label.to_string();
    fill(
        &with_examples(SYNTHESIS, &block),
        &[("question", question), ("examples", &block), ("n", &n), ("label", &label)],
    )
}

pub fn render_generation(goal: &str) -> String {
    let template = INSTRUCTION_GENERATION.replacen(
        EXAMPLES_PLACEHOLDER,
        &INSTRUCTION_DEMONSTRATIONS.replace('{', "{{").replace('}', "}}"),
        1,
    );
    fill(&template, &[("instruction", goal)])
}

pub fn render_refinement(question: &str) -> String {
    fill(INSTRUCTION_REFINEMENT, &[("instruction", question)])
}

/// Value of the last line starting with `marker` (case-sensitive), trimmed.
pub fn last_marked_line<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.lines().filter_map(|l| l.trim_start().strip_prefix(marker)).next_back().map(str::trim)
}
