//! Experiment configurations: the nine named method presets and
//! validation of user-written configs.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const DEFAULT_FEW_SHOT_SIZE: usize = 8;
pub const DEFAULT_STUDENT_MODEL: &str = "flan-t5-xxl";
pub const DEFAULT_TEACHER_MODEL: &str = "gpt-4-turbo-preview";
pub const DEFAULT_GENERATOR_MODEL: &str = "gpt-4-turbo-preview";

pub const PRESET_NAMES: [&str; 9] = [
    "M_zero-shot",
    "M_few-shot",
    "M_fs-div",
    "M_fs-teacher",
    "M_fs-syn",
    "M_zs-model",
    "M_zs-tmodel",
    "M_zs-hai",
    "M_fs-hai",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputSource {
    #[serde(rename = "provided")]
    Provided,
    #[serde(rename = "provided+synthesized")]
    ProvidedSynthesized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Random,
    Diversity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelerKind {
    Student,
    Teacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InstructionSource {
    #[default]
    #[serde(rename = "template")]
    Template,
    #[serde(rename = "model")]
    Model,
    #[serde(rename = "human+template")]
    HumanTemplate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Refinement {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "model")]
    Model,
    #[serde(rename = "human+model")]
    HumanModel,
}

fn default_few_shot_size() -> usize {
    DEFAULT_FEW_SHOT_SIZE
}

fn default_student() -> String {
    DEFAULT_STUDENT_MODEL.into()
}

fn default_teacher() -> String {
    DEFAULT_TEACHER_MODEL.into()
}

fn default_generator() -> String {
    DEFAULT_GENERATOR_MODEL.into()
}

/// One point in the configuration space. `seed` has no default: config
/// files must state it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub few_shot: bool,
    #[serde(default = "default_few_shot_size")]
    pub few_shot_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_source: Option<InputSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeler: Option<LabelerKind>,
    #[serde(default)]
    pub instruction_source: InstructionSource,
    #[serde(default)]
    pub instruction_refinement: Refinement,
    #[serde(default = "default_student")]
    pub student_model: String,
    #[serde(default = "default_teacher")]
    pub teacher_model: String,
    #[serde(default = "default_generator")]
    pub generator_model: String,
    pub seed: u64,
}

impl SliceConfig {
    fn base(name: &str) -> Self {
        Self {
            name: Some(name.to_string()),
            few_shot: false,
            few_shot_size: DEFAULT_FEW_SHOT_SIZE,
            input_source: None,
            sampler: None,
            labeler: None,
            instruction_source: InstructionSource::Template,
            instruction_refinement: Refinement::None,
            student_model: default_student(),
            teacher_model: default_teacher(),
            generator_model: default_generator(),
            seed: 0,
        }
    }

    fn few_shot(mut self, input: InputSource, sampler: SamplerKind, labeler: LabelerKind) -> Self {
        self.few_shot = true;
        self.input_source = Some(input);
        self.sampler = Some(sampler);
        self.labeler = Some(labeler);
        self
    }

    fn instructions(mut self, source: InstructionSource, refinement: Refinement) -> Self {
        self.instruction_source = source;
        self.instruction_refinement = refinement;
        self
    }

    pub fn synthesis(&self) -> bool {
        self.few_shot && self.input_source == Some(InputSource::ProvidedSynthesized)
    }

    pub fn needs_interaction(&self) -> bool {
        self.instruction_source == InstructionSource::HumanTemplate
            || self.instruction_refinement == Refinement::HumanModel
    }

    /// Label used in reports: the preset name, or `custom`.
    pub fn label(&self) -> &str {
        self.name.as_deref().unwrap_or("custom")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize to TOML")
    }

    pub fn from_toml(s: &str) -> Result<Self, ConfigError> {
        toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads a TOML or JSON config (by extension; JSON for `.json`).
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))
        } else {
            Self::from_toml(&text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown preset {0:?} (expected one of: {list})", list = PRESET_NAMES.join(", "))]
    UnknownPreset(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// The exact configuration of a named method.
pub fn named_preset(name: &str) -> Result<SliceConfig, ConfigError> {
    use InputSource::*;
    use InstructionSource as Src;
    use LabelerKind::*;
    use SamplerKind::*;
    let c = SliceConfig::base(name);
    let config = match name {
        "M_zero-shot" => c,
        "M_few-shot" => c.few_shot(Provided, Random, Student),
        "M_fs-div" => c.few_shot(Provided, Diversity, Student),
        "M_fs-teacher" => c.few_shot(Provided, Diversity, Teacher),
        "M_fs-syn" => c.few_shot(ProvidedSynthesized, Diversity, Teacher),
        "M_zs-model" => c.instructions(Src::Model, Refinement::None),
        "M_zs-tmodel" => c.instructions(Src::Template, Refinement::Model),
        "M_zs-hai" => c.instructions(Src::HumanTemplate, Refinement::HumanModel),
        "M_fs-hai" => {
            c.few_shot(Provided, Diversity, Teacher).instructions(Src::HumanTemplate, Refinement::HumanModel)
        }
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    };
    Ok(config)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validated {
    pub config: SliceConfig,
    pub warnings: Vec<String>,
}

/// Enforces the config invariants and fills defaults. Every violation is
/// reported, each with its field name.
pub fn validate(config: &SliceConfig, interactive: bool) -> Result<Validated, ConfigError> {
    let mut c = config.clone();
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let mut violation = |field: &str, message: &str| {
        errors.push(Violation { field: field.to_string(), message: message.to_string() })
    };

    if c.few_shot_size == 0 {
        violation("few_shot_size", "must be at least 1");
    }
    if c.few_shot {
        c.input_source.get_or_insert(InputSource::Provided);
        c.sampler.get_or_insert(SamplerKind::Random);
        c.labeler.get_or_insert(LabelerKind::Student);
        if c.synthesis() && c.few_shot_size < 2 {
            violation("few_shot_size", "synthesis needs room for both labels (>= 2)");
        }
    } else {
        if c.input_source == Some(InputSource::ProvidedSynthesized) {
            violation("input_source", "provided+synthesized requires few_shot = true");
        }
        for (field, set) in [
            ("input_source", c.input_source.is_some()),
            ("sampler", c.sampler.is_some()),
            ("labeler", c.labeler.is_some()),
        ] {
            if set {
                warnings.push(format!("{field} is ignored without few_shot; recorded as absent"));
            }
        }
        c.input_source = None;
        c.sampler = None;
        c.labeler = None;
    }
    if !interactive {
        if c.instruction_source == InstructionSource::HumanTemplate {
            violation("instruction_source", "human+template requires an interactive session");
        }
        if c.instruction_refinement == Refinement::HumanModel {
            violation("instruction_refinement", "human+model requires an interactive session");
        }
    }
    for (field, model) in [
        ("student_model", &c.student_model),
        ("teacher_model", &c.teacher_model),
        ("generator_model", &c.generator_model),
    ] {
        if model.trim().is_empty() {
            violation(field, "model id must not be empty");
        }
    }

    if errors.is_empty() {
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(Validated { config: c, warnings })
    } else {
        Err(ConfigError::Invalid(errors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fields(e: ConfigError) -> Vec<String> {
        match e {
            ConfigError::Invalid(v) => v.into_iter().map(|v| v.field).collect(),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(named_preset("M_unknown"), Err(ConfigError::UnknownPreset(_))));
    }

    #[test]
    fn human_refinement_needs_interactive() {
        let c = named_preset("M_zs-hai").unwrap();
        let f = fields(validate(&c, false).unwrap_err());
        assert!(f.contains(&"instruction_refinement".to_string()));
        assert!(f.contains(&"instruction_source".to_string()));
        assert!(validate(&c, true).is_ok());
    }

    #[test]
    fn zero_shot_drops_few_shot_fields_with_warning() {
        let mut c = named_preset("M_zero-shot").unwrap();
        c.sampler = Some(SamplerKind::Diversity);
        let v = validate(&c, false).unwrap();
        assert_eq!(v.config.sampler, None);
        assert_eq!(v.warnings.len(), 1);
        assert!(v.warnings[0].starts_with("sampler"));
    }

    #[test]
    fn synthesized_requires_few_shot() {
        let mut c = named_preset("M_zero-shot").unwrap();
        c.input_source = Some(InputSource::ProvidedSynthesized);
        assert_eq!(fields(validate(&c, false).unwrap_err()), vec!["input_source"]);
    }

    #[test]
    fn few_shot_size_defaults_to_eight() {
        let c = SliceConfig::from_toml("few_shot = true\nseed = 3\n").unwrap();
        assert_eq!(c.few_shot_size, 8);
        let v = validate(&c, false).unwrap().config;
        assert_eq!(v.sampler, Some(SamplerKind::Random));
        assert_eq!(v.labeler, Some(LabelerKind::Student));
        assert_eq!(v.input_source, Some(InputSource::Provided));
    }

    #[test]
    fn seed_is_mandatory_in_files() {
        assert!(SliceConfig::from_toml("few_shot = false\n").is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(SliceConfig::from_toml("seed = 1\nfewshot = true\n").is_err());
    }

    #[test]
    fn zero_size_rejected() {
        let mut c = named_preset("M_few-shot").unwrap();
        c.few_shot_size = 0;
        assert_eq!(fields(validate(&c, false).unwrap_err()), vec!["few_shot_size"]);
    }

    #[test]
    fn vocabulary_serializes_as_written() {
        let c = named_preset("M_fs-hai").unwrap();
        let toml = c.to_toml();
        assert!(toml.contains("instruction_source = \"human+template\""));
        assert!(toml.contains("instruction_refinement = \"human+model\""));
        let s = named_preset("M_fs-syn").unwrap().to_toml();
        assert!(s.contains("input_source = \"provided+synthesized\""));
    }

    #[test]
    fn json_files_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, serde_json::to_string(&named_preset("M_fs-div").unwrap()).unwrap()).unwrap();
        assert_eq!(SliceConfig::from_file(&p).unwrap(), named_preset("M_fs-div").unwrap());
    }

    type Row = (
        &'static str,
        bool,
        Option<InputSource>,
        Option<SamplerKind>,
        Option<LabelerKind>,
        InstructionSource,
        Refinement,
    );

    /// The method table, one row per preset.
    fn table() -> [Row; 9] {
        use InputSource::*;
        use InstructionSource as Src;
        use LabelerKind::*;
        use Refinement as R;
        use SamplerKind::*;
        [
            ("M_zero-shot", false, None, None, None, Src::Template, R::None),
            ("M_few-shot", true, Some(Provided), Some(Random), Some(Student), Src::Template, R::None),
            ("M_fs-div", true, Some(Provided), Some(Diversity), Some(Student), Src::Template, R::None),
            ("M_fs-teacher", true, Some(Provided), Some(Diversity), Some(Teacher), Src::Template, R::None),
            (
                "M_fs-syn",
                true,
                Some(ProvidedSynthesized),
                Some(Diversity),
                Some(Teacher),
                Src::Template,
                R::None,
            ),
            ("M_zs-model", false, None, None, None, Src::Model, R::None),
            ("M_zs-tmodel", false, None, None, None, Src::Template, R::Model),
            ("M_zs-hai", false, None, None, None, Src::HumanTemplate, R::HumanModel),
            (
                "M_fs-hai",
                true,
                Some(Provided),
                Some(Diversity),
                Some(Teacher),
                Src::HumanTemplate,
                R::HumanModel,
            ),
        ]
    }

    #[test]
    fn presets_match_method_table() {
        let rows = table();
        assert_eq!(rows.map(|r| r.0), PRESET_NAMES);
        for (name, few, input, sampler, labeler, src, refine) in rows {
            let c = named_preset(name).unwrap();
            assert_eq!(
                (
                    c.few_shot,
                    c.input_source,
                    c.sampler,
                    c.labeler,
                    c.instruction_source,
                    c.instruction_refinement
                ),
                (few, input, sampler, labeler, src, refine),
                "{name}"
            );
            assert_eq!(c.few_shot_size, DEFAULT_FEW_SHOT_SIZE, "{name}");
            assert_eq!(c.label(), name);
            // presets are already valid (given an interactive session)
            assert_eq!(validate(&c, true).unwrap().config, c, "{name}");
        }
    }

    #[test]
    fn presets_round_trip() {
        for name in PRESET_NAMES {
            let c = named_preset(name).unwrap();
            assert_eq!(SliceConfig::from_toml(&c.to_toml()).unwrap(), c, "{name}");
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(serde_json::from_str::<SliceConfig>(&json).unwrap(), c, "{name}");
        }
    }
}
