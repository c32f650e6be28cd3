//! Service configuration: one TOML file plus `WIKISURVEY_*` environment
//! overrides.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use wikisurvey_core::estimator::ModelConfig;
use wikisurvey_core::{PromptPolicyConfig, SessionPolicyConfig, DEFAULT_MIN_APPEARANCES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSection {
    pub timeout_minutes: f64,
    pub cookie_name: String,
    pub cookie_max_age_days: u32,
}

impl Default for SessionSection {
    fn default() -> Self {
        Self { timeout_minutes: 10.0, cookie_name: "wikisurvey_session".into(), cookie_max_age_days: 365 }
    }
}

impl SessionSection {
    pub fn policy(&self) -> SessionPolicyConfig {
        SessionPolicyConfig { inactivity_timeout_secs: (self.timeout_minutes * 60.0).round() as i64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResultsSection {
    pub min_appearances: u64,
}

impl Default for ResultsSection {
    fn default() -> Self {
        Self { min_appearances: DEFAULT_MIN_APPEARANCES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: IpAddr,
    pub port: u16,
    /// Event log location; `None` keeps everything in memory.
    pub storage_path: Option<PathBuf>,
    /// Seed for prompt sampling; drawn from the OS when absent.
    pub seed: Option<u64>,
    pub prompt: PromptPolicyConfig,
    pub session: SessionSection,
    pub results: ResultsSection,
    pub estimation: ModelConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            storage_path: None,
            seed: None,
            prompt: PromptPolicyConfig::default(),
            session: SessionSection::default(),
            results: ResultsSection::default(),
            estimation: ModelConfig::default(),
        }
    }
}

const PREFIX: &str = "WIKISURVEY_";

impl ServiceConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).context("invalid service configuration")
    }

    /// Reads the file if given, then applies environment overrides.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        config.apply_overrides(std::env::vars())?;
        config.validate()?;
        Ok(config)
    }

    /// Applies `WIKISURVEY_*` variables, e.g. `WIKISURVEY_PROMPT_ALPHA`.
    pub fn apply_overrides(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> anyhow::Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> anyhow::Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e| anyhow::anyhow!("{PREFIX}{key}={value}: {e}"))
        }
        for (key, value) in vars {
            let Some(key) = key.strip_prefix(PREFIX) else { continue };
            match key {
                "BIND" => self.bind = parse(key, &value)?,
                "PORT" => self.port = parse(key, &value)?,
                "STORAGE_PATH" => self.storage_path = Some(PathBuf::from(value)),
                "SEED" => self.seed = Some(parse(key, &value)?),
                "PROMPT_ALPHA" => self.prompt.alpha = parse(key, &value)?,
                "PROMPT_TAU" => self.prompt.tau = parse(key, &value)?,
                "SESSION_TIMEOUT_MINUTES" => self.session.timeout_minutes = parse(key, &value)?,
                "SESSION_COOKIE_NAME" => self.session.cookie_name = value,
                "RESULTS_MIN_APPEARANCES" => self.results.min_appearances = parse(key, &value)?,
                "ESTIMATION_SIGMA" => self.estimation.sigma = parse(key, &value)?,
                "ESTIMATION_CHAINS" => self.estimation.chains = parse(key, &value)?,
                "ESTIMATION_STEPS" => self.estimation.steps = parse(key, &value)?,
                "ESTIMATION_THIN" => self.estimation.thin = parse(key, &value)?,
                "ESTIMATION_BURNIN_FRAC" => self.estimation.burnin_frac = parse(key, &value)?,
                "ESTIMATION_RHAT_THRESHOLD" => self.estimation.rhat_threshold = parse(key, &value)?,
                "ESTIMATION_SEED" => self.estimation.seed = parse(key, &value)?,
                _ => bail!("unknown environment override {PREFIX}{key}"),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.prompt.validate()?;
        self.session.policy().validate()?;
        self.estimation.validate()?;
        if self.session.cookie_name.is_empty()
            || !self.session.cookie_name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            bail!("cookie name must be non-empty and use only letters, digits, '_' or '-'");
        }
        Ok(())
    }

    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.bind, self.port)
    }
}
