//! Run configuration: defaults, an optional TOML or JSON file, then flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use textsql_core::artifact::{content_hash, sha256_hex};
use textsql_core::backend::{BackendKind, HttpConfig, DEFAULT_MAX_TOKENS};
use textsql_core::eval::suite::DEFAULT_K;
use textsql_core::eval::{EvalOptions, TimeoutPolicy, DEFAULT_TIMEOUT_MS};
use textsql_core::prompt::{PromptBudget, PromptStyle};
use textsql_core::report::RunDescriptor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: PathBuf,
    pub db_root: PathBuf,
    /// Source of few-shot support pairs.
    pub train: Option<PathBuf>,
    pub prompt: String,
    pub shots: usize,
    pub context_tokens: usize,
    pub completion_reserve: usize,
    pub backend: String,
    pub model: String,
    pub base_url: String,
    pub api_key_env: String,
    pub rpm: u32,
    pub in_flight: usize,
    pub max_tokens: u32,
    pub temperature: f64,
    pub suite_k: usize,
    pub suite_seed: u64,
    pub timeout_ms: u64,
    pub timeout_policy: TimeoutPolicy,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let http = HttpConfig::default();
        RunConfig {
            benchmark: PathBuf::from("dev.json"),
            db_root: PathBuf::from("database"),
            train: None,
            prompt: "create+select:3".into(),
            shots: 0,
            context_tokens: PromptBudget::default().context_tokens,
            completion_reserve: PromptBudget::default().completion_reserve,
            backend: "oracle".into(),
            model: http.model,
            base_url: http.base_url,
            api_key_env: http.api_key_env,
            rpm: http.requests_per_minute,
            in_flight: http.in_flight,
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: 0.0,
            suite_k: DEFAULT_K,
            suite_seed: 0,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            timeout_policy: TimeoutPolicy::Invalid,
            cache_dir: PathBuf::from(".textsql-cache"),
            out_dir: PathBuf::from("runs"),
            seed: 0,
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// Flags shared by the pipeline subcommands. Each overrides the matching
/// config key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML (or .json) file with run configuration keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    #[arg(long)]
    pub db_root: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// question | apidocs | select:X | create | create+select:X
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub context_tokens: Option<usize>,
    #[arg(long)]
    pub completion_reserve: Option<usize>,
    /// oracle | mutate | replay:<file> | http
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub rpm: Option<u32>,
    #[arg(long)]
    pub in_flight: Option<usize>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub suite_k: Option<usize>,
    #[arg(long)]
    pub suite_seed: Option<u64>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    /// invalid | valid-unknown
    #[arg(long)]
    pub timeout_policy: Option<String>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

macro_rules! apply {
    ($cfg:ident, $o:ident, $($field:ident),*) => {
        $(if let Some(v) = $o.$field.clone() { $cfg.$field = v; })*
    };
}

impl RunConfig {
    pub fn load(o: &Overrides) -> Result<RunConfig> {
        let mut cfg = match &o.config {
            Some(path) => Self::from_file(path)?,
            None => RunConfig::default(),
        };
        apply!(
            cfg, o, benchmark, db_root, prompt, shots, context_tokens, completion_reserve, backend, model,
            base_url, api_key_env, rpm, in_flight, max_tokens, temperature, suite_k, suite_seed, timeout_ms,
            cache_dir, out_dir, seed, jobs
        );
        if let Some(t) = &o.train {
            cfg.train = Some(t.clone());
        }
        if let Some(p) = &o.timeout_policy {
            cfg.timeout_policy = serde_json::from_value(serde_json::Value::String(p.clone()))
                .with_context(|| format!("unknown timeout policy {p:?}"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.style()?;
        self.backend_kind()?;
        self.budget()?;
        if self.shots > 0 && self.train.is_none() {
            bail!("--shots {} needs --train with support examples", self.shots);
        }
        if self.suite_k == 0 {
            bail!("--suite-k must be at least 1");
        }
        Ok(())
    }

    pub fn style(&self) -> Result<PromptStyle> {
        let base: PromptStyle = self.prompt.parse()?;
        Ok(if self.shots > 0 {
            PromptStyle::few_shot(base)?
        } else {
            base
        })
    }

    pub fn backend_kind(&self) -> Result<BackendKind> {
        Ok(self.backend.parse()?)
    }

    pub fn budget(&self) -> Result<PromptBudget> {
        Ok(PromptBudget::new(self.context_tokens, self.completion_reserve)?)
    }

    pub fn http(&self) -> HttpConfig {
        HttpConfig {
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            api_key_env: self.api_key_env.clone(),
            requests_per_minute: self.rpm,
            in_flight: self.in_flight,
            ..HttpConfig::default()
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            timeout: Duration::from_millis(self.timeout_ms),
            timeout_policy: self.timeout_policy,
        }
    }

    pub fn backend_label(&self) -> String {
        match self.backend_kind() {
            Ok(BackendKind::Http) => self.model.clone(),
            Ok(BackendKind::Replay(p)) => format!(
                "replay:{}",
                p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())
            ),
            _ => self.backend.clone(),
        }
    }

    pub fn benchmark_name(&self) -> String {
        self.benchmark
            .file_stem()
            .map_or_else(|| "benchmark".into(), |s| s.to_string_lossy().into_owned())
    }

    pub fn descriptor(&self) -> RunDescriptor {
        RunDescriptor {
            benchmark: self.benchmark_name(),
            backend: self.backend_label(),
            prompt: self.style().map_or_else(|_| self.prompt.clone(), |s| s.to_string()),
            shots: self.shots,
            suite_seed: self.suite_seed,
            suite_k: self.suite_k,
            timestamp: None,
        }
    }

    fn file_digest(path: Option<&Path>) -> String {
        path.and_then(|p| std::fs::read(p).ok())
            .map(|b| sha256_hex(&b))
            .unwrap_or_default()
    }

    /// Everything that decides the prompt text.
    pub fn prompt_hash(&self) -> String {
        content_hash(&serde_json::json!({
            "benchmark": Self::file_digest(Some(&self.benchmark)),
            "train": Self::file_digest(self.train.as_deref()),
            "prompt": self.prompt,
            "shots": self.shots,
            "seed": self.seed,
            "context_tokens": self.context_tokens,
            "completion_reserve": self.completion_reserve,
        }))
    }

    /// Everything that decides results; paths and parallelism excluded.
    pub fn config_hash(&self) -> String {
        content_hash(&serde_json::json!({
            "prompt": self.prompt_hash(),
            "backend": self.backend_label(),
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "suite_k": self.suite_k,
            "suite_seed": self.suite_seed,
            "timeout_ms": self.timeout_ms,
            "timeout_policy": self.timeout_policy,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "prompt = \"select:3\"\nsuite_k = 4\n").unwrap();
        let o = Overrides {
            config: Some(path),
            suite_k: Some(8),
            ..Overrides::default()
        };
        let cfg = RunConfig::load(&o).unwrap();
        assert_eq!(cfg.prompt, "select:3");
        assert_eq!(cfg.suite_k, 8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "promt = \"select:3\"\n").unwrap();
        assert!(RunConfig::from_file(&path).is_err());
    }

    #[test]
    fn few_shot_needs_training_data() {
        let o = Overrides {
            shots: Some(3),
            ..Overrides::default()
        };
        assert!(RunConfig::load(&o).is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
