//! Instruction edits through the operator's `$EDITOR`.

use std::io::Write;
use std::process::Command;

use semslice::promptgen::{EditRequest, InstructionEditor, InstructionStep};

/// Runs `command <file>` through `sh`, so `EDITOR="code --wait"` works.
pub struct ExternalEditor {
    command: String,
}

impl ExternalEditor {
    pub fn new(command: impl Into<String>) -> Self {
        Self { command: command.into() }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var("EDITOR").ok().filter(|e| !e.trim().is_empty()).map(Self::new)
    }
}

fn draft(req: &EditRequest<'_>) -> String {
    let step = match req.step {
        InstructionStep::Generation => "writing the instruction",
        InstructionStep::Refinement => "reviewing the refined instruction",
    };
    let mut text = format!("{}\n\n# You are {step}.\n", req.current);
    if let Some(c) = req.criterion {
        text.push_str(&format!("# Criterion: {}\n", c.name));
        if let Some(d) = &c.description {
            text.push_str(&format!("# Description: {d}\n"));
        }
    }
    text.push_str("# Write one yes/no question. Lines starting with '#' are ignored.\n");
    text
}

/// Non-comment lines, joined with spaces.
pub fn strip_comments(text: &str) -> String {
    text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect::<Vec<_>>().join(" ")
}

impl InstructionEditor for ExternalEditor {
    fn edit(&self, req: &EditRequest<'_>) -> Result<String, String> {
        let mut file = tempfile::Builder::new()
            .prefix("semslice-instruction-")
            .suffix(".txt")
            .tempfile()
            .map_err(|e| e.to_string())?;
        file.write_all(draft(req).as_bytes()).map_err(|e| e.to_string())?;
        file.flush().map_err(|e| e.to_string())?;

        let status = Command::new("sh")
            .arg("-c")
            .arg(format!("{} \"$1\"", self.command))
            .arg("editor")
            .arg(file.path())
            .status()
            .map_err(|e| format!("cannot start editor {:?}: {e}", self.command))?;
        if !status.success() {
            return Err(format!("editor {:?} exited with {status}", self.command));
        }
        let edited = std::fs::read_to_string(file.path()).map_err(|e| e.to_string())?;
        Ok(strip_comments(&edited))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use semslice::promptgen::SlicingCriterion;

    #[test]
    fn comments_and_blank_lines_are_dropped() {
        assert_eq!(strip_comments("Is it food?\n\n# note\n  # indented\n"), "Is it food?");
        assert_eq!(strip_comments("Is it\nabout food?"), "Is it about food?");
    }

    #[test]
    fn round_trips_through_a_scripted_editor() {
        let editor = ExternalEditor::new("sed -i 's/?/ or its practices?/'");
        let criterion = SlicingCriterion::new("Muslim").unwrap();
        let out = editor
            .edit(&EditRequest {
                current: "Is the text related to Muslim?",
                criterion: Some(&criterion),
                step: InstructionStep::Generation,
            })
            .unwrap();
        assert_eq!(out, "Is the text related to Muslim or its practices?");
    }

    #[test]
    fn failing_editor_is_an_error() {
        let editor = ExternalEditor::new("false");
        let req = EditRequest { current: "Q?", criterion: None, step: InstructionStep::Refinement };
        assert!(editor.edit(&req).unwrap_err().contains("exited"));
    }
}
