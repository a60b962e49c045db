use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use corpus_annotate::analytics::TierFractions;
use corpus_annotate::provider::ProviderConfig;
use corpus_annotate::runner::RunnerConfig;
use corpus_annotate::verify::DEFAULT_THRESHOLD;
use serde::Deserialize;

pub const CONFIG_ENV: &str = "CORPUS_ANNOTATE_CONFIG";

/// Everything a run can be configured with. Loaded from one TOML file, then
/// overridden field by field from the command line.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub provider: ProviderConfig,
    pub runner: RunnerConfig,
    /// Directory of prompt section files overriding the built-in templates.
    pub prompts_dir: Option<PathBuf>,
    pub threshold: f64,
    pub tiers: TierFractions,
    /// TOML file overriding the default tag table.
    pub taxonomy: Option<PathBuf>,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            provider: ProviderConfig::default(),
            runner: RunnerConfig::default(),
            prompts_dir: None,
            threshold: DEFAULT_THRESHOLD,
            tiers: TierFractions::default(),
            taxonomy: None,
        }
    }
}

impl GlobalConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let src =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: GlobalConfig =
            toml::from_str(&src).with_context(|| format!("parsing {}", path.display()))?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.prompts_dir,
            &mut cfg.taxonomy,
            &mut cfg.provider.stub_fixtures,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// The file named by `--config`, else the environment variable, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(GlobalConfig::default()),
            },
        }
    }
}
