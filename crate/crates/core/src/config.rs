//! Application configuration: one TOML file naming endpoints, evaluation
//! settings and pipeline defaults. Credentials come from the environment
//! variables the endpoints name, never from the file.
//!
//! ```toml
//! workers = 4
//! out = "runs"
//! breakdown = ["perceiver", "reasoner", "collaborative"]
//!
//! [dialogue]
//! max_turns = 5
//!
//! [[endpoint]]
//! name = "perceiver"
//! base_url = "http://localhost:8000/v1"
//! model_id = "Qwen/Qwen2.5-VL-7B-Instruct"
//! supports_vision = true
//!
//! [[setting]]
//! name = "collaborative"
//! mode = "collaborative"
//! perceiver = "perceiver"
//! reasoner = "reasoner"
//!
//! [synthesis]
//! teacher = "teacher"
//! budget = 8
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{CachedBackend, ChatBackend, Client, DiskCache, EndpointConfig, HttpTransport, MockScript, MockTransport, Transport};
use crate::eval::{Binding, RunMatrix, Setting};
use crate::orchestrator::{single_turn_config, PromptSet};
use crate::synthesis::SynthesisConfig;
use crate::types::{DialogueConfig, Mode, TaskInstance};

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingSpec {
    pub name: String,
    pub mode: Mode,
    /// Endpoint for single-model modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perceiver: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoner: Option<String>,
    /// Single-turn ablation prompts and budget.
    #[serde(default)]
    pub single_turn: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_turns: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    #[serde(default = "default_teacher")]
    pub teacher: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_retries: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub questions_per_image: Option<u32>,
    /// File holding a replacement question-generation prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_prompt_file: Option<PathBuf>,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        SynthesisSection {
            teacher: default_teacher(),
            budget: None,
            sampling_temperature: None,
            question_retries: None,
            questions_per_image: None,
            question_prompt_file: None,
        }
    }
}

fn default_teacher() -> String {
    "teacher".into()
}

fn default_workers() -> usize {
    4
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_dir: Option<PathBuf>,
    /// Response cache; defaults to `<out>/cache`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Settings broken down jointly, in code order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<[String; 3]>,
    #[serde(default)]
    pub dialogue: DialogueConfig,
    #[serde(default, rename = "endpoint")]
    pub endpoints: Vec<EndpointConfig>,
    #[serde(default, rename = "setting")]
    pub settings: Vec<SettingSpec>,
    #[serde(default)]
    pub synthesis: SynthesisSection,
}

impl Default for AppConfig {
    /// Local perceiver and reasoner servers plus a hosted teacher, with the
    /// three baseline settings.
    fn default() -> Self {
        let endpoints = vec![
            EndpointConfig::new("perceiver", "http://localhost:8000/v1", "Qwen/Qwen2.5-VL-7B-Instruct").with_vision(true),
            EndpointConfig::new("reasoner", "http://localhost:8001/v1", "deepseek-ai/DeepSeek-R1-Distill-Qwen-32B").with_thinking(true),
            EndpointConfig {
                api_key_env: Some("OPENAI_API_KEY".into()),
                ..EndpointConfig::new("teacher", "https://api.openai.com/v1", "gpt-4o").with_vision(true)
            },
        ];
        let single = |name: &str, mode, model: &str| SettingSpec {
            name: name.into(),
            mode,
            model: Some(model.into()),
            perceiver: None,
            reasoner: None,
            single_turn: false,
            max_turns: None,
        };
        let settings = vec![
            single("perceiver", Mode::SingleMultimodal, "perceiver"),
            single("reasoner", Mode::SingleTextOnly, "reasoner"),
            SettingSpec {
                name: "collaborative".into(),
                mode: Mode::Collaborative,
                model: None,
                perceiver: Some("perceiver".into()),
                reasoner: Some("reasoner".into()),
                single_turn: false,
                max_turns: None,
            },
        ];
        AppConfig {
            workers: default_workers(),
            out: default_out(),
            prompt_dir: None,
            cache_dir: None,
            breakdown: Some(["perceiver".into(), "reasoner".into(), "collaborative".into()]),
            dialogue: DialogueConfig::default(),
            endpoints,
            settings,
            synthesis: SynthesisSection::default(),
        }
    }
}

/// Where model replies come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendKind {
    Http,
    Mock(PathBuf),
}

impl BackendKind {
    /// `http`, or `mock:<name>` where `<name>` is a script path or the stem
    /// of `fixtures/mocks/<name>.toml` under one of `search`.
    pub fn parse(spec: &str, search: &[&Path]) -> Result<Self, ConfigError> {
        if spec == "http" {
            return Ok(BackendKind::Http);
        }
        let Some(name) = spec.strip_prefix("mock:") else {
            return err(format!("unknown backend {spec:?}; use http or mock:<name>"));
        };
        let direct = PathBuf::from(name);
        if direct.is_file() {
            return Ok(BackendKind::Mock(direct));
        }
        for dir in search {
            let p = dir.join("fixtures/mocks").join(format!("{name}.toml"));
            if p.is_file() {
                return Ok(BackendKind::Mock(p));
            }
        }
        err(format!("mock script {name:?} not found"))
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg: AppConfig = toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        if cfg.endpoints.is_empty() {
            cfg.endpoints = AppConfig::default().endpoints;
        }
        if cfg.settings.is_empty() {
            cfg.settings = AppConfig::default().settings;
            cfg.breakdown = cfg.breakdown.or(AppConfig::default().breakdown);
        }
        cfg.finish()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        self.prompt_dir.as_mut().map(fix);
        self.cache_dir.as_mut().map(fix);
        self.synthesis.question_prompt_file.as_mut().map(fix);
    }

    /// Loads the prompt directory, if any, and validates.
    pub fn finish(&mut self) -> Result<(), ConfigError> {
        if let Some(dir) = &self.prompt_dir {
            self.dialogue.prompt_set = PromptSet::load_dir(dir).map_err(|e| ConfigError(e.to_string()))?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 {
            return err("workers must be at least 1");
        }
        let mut names = std::collections::BTreeSet::new();
        for e in &self.endpoints {
            if !names.insert(e.name.as_str()) {
                return err(format!("duplicate endpoint name {:?}", e.name));
            }
        }
        let known = |n: &Option<String>, field: &str, setting: &str| -> Result<(), ConfigError> {
            match n {
                None => err(format!("setting {setting:?} needs {field}")),
                Some(n) if !names.contains(n.as_str()) => err(format!("setting {setting:?} refers to unknown endpoint {n:?}")),
                Some(_) => Ok(()),
            }
        };
        let mut settings = std::collections::BTreeSet::new();
        for s in &self.settings {
            if !settings.insert(s.name.as_str()) {
                return err(format!("duplicate setting name {:?}", s.name));
            }
            match s.mode {
                Mode::Collaborative => {
                    known(&s.perceiver, "perceiver", &s.name)?;
                    known(&s.reasoner, "reasoner", &s.name)?;
                }
                _ => known(&s.model, "model", &s.name)?,
            }
        }
        if let Some(b) = &self.breakdown {
            if let Some(n) = b.iter().find(|n| !settings.contains(n.as_str())) {
                return err(format!("breakdown refers to unknown setting {n:?}"));
            }
        }
        self.dialogue.validate().map_err(ConfigError)?;
        self.synthesis_config()?.validate().map_err(ConfigError)
    }

    pub fn endpoint(&self, name: &str) -> Option<&EndpointConfig> {
        self.endpoints.iter().find(|e| e.name == name)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out.join("cache"))
    }

    /// `all` or a comma-separated list of setting names.
    pub fn select_settings(&self, which: &str) -> Result<Vec<&SettingSpec>, ConfigError> {
        if which == "all" {
            return Ok(self.settings.iter().collect());
        }
        which
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|n| {
                self.settings
                    .iter()
                    .find(|s| s.name == n)
                    .ok_or_else(|| ConfigError(format!("unknown setting {n:?}")))
            })
            .collect()
    }

    pub fn synthesis_config(&self) -> Result<SynthesisConfig, ConfigError> {
        let s = &self.synthesis;
        let d = SynthesisConfig::default();
        let question_prompt = match &s.question_prompt_file {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?,
            None => d.question_prompt,
        };
        Ok(SynthesisConfig {
            budget: s.budget.unwrap_or(d.budget),
            sampling_temperature: s.sampling_temperature.unwrap_or(d.sampling_temperature),
            question_retries: s.question_retries.unwrap_or(d.question_retries),
            questions_per_image: s.questions_per_image.unwrap_or(d.questions_per_image),
            question_prompt,
            dialogue: self.dialogue.clone(),
        })
    }

    /// One client per endpoint, sharing a transport and a disk cache.
    pub fn build_backends(
        &self,
        kind: &BackendKind,
        image_root: Option<PathBuf>,
    ) -> Result<BTreeMap<String, Arc<dyn ChatBackend>>, ConfigError> {
        let transport: Arc<dyn Transport> = match kind {
            BackendKind::Http => Arc::new(HttpTransport::new(image_root)),
            BackendKind::Mock(path) => Arc::new(MockTransport::new(MockScript::load(path).map_err(ConfigError)?)),
        };
        let dir = self.cache_dir();
        let cache = Arc::new(DiskCache::open(&dir).map_err(|e| ConfigError(format!("cache {}: {e}", dir.display())))?);
        Ok(self
            .endpoints
            .iter()
            .map(|e| {
                let client = Client::new(e.clone(), transport.clone());
                let b: Arc<dyn ChatBackend> = Arc::new(CachedBackend::new(client, cache.clone()));
                (e.name.clone(), b)
            })
            .collect())
    }

    pub fn setting(&self, spec: &SettingSpec, backends: &BTreeMap<String, Arc<dyn ChatBackend>>) -> Result<Setting, ConfigError> {
        let get = |n: &Option<String>| {
            let n = n.as_deref().unwrap_or_default();
            backends.get(n).cloned().ok_or_else(|| ConfigError(format!("unknown endpoint {n:?}")))
        };
        let binding = match spec.mode {
            Mode::Collaborative => Binding::Pair { perceiver: get(&spec.perceiver)?, reasoner: get(&spec.reasoner)? },
            _ => Binding::Single(get(&spec.model)?),
        };
        let mut config = self.dialogue.clone();
        if let Some(t) = spec.max_turns {
            config.max_turns = t;
        }
        if spec.single_turn {
            config = single_turn_config(&config);
        }
        Ok(Setting { name: spec.name.clone(), mode: spec.mode, binding, config })
    }

    pub fn matrix(
        &self,
        tasks: Vec<TaskInstance>,
        specs: &[&SettingSpec],
        backends: &BTreeMap<String, Arc<dyn ChatBackend>>,
        out_dir: PathBuf,
    ) -> Result<RunMatrix, ConfigError> {
        let settings = specs.iter().map(|s| self.setting(s, backends)).collect::<Result<Vec<_>, _>>()?;
        let breakdown = self
            .breakdown
            .clone()
            .filter(|b| b.iter().all(|n| settings.iter().any(|s| &s.name == n)));
        Ok(RunMatrix { tasks, settings, out_dir, workers: self.workers, breakdown })
    }
}
