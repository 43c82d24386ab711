//! Flat `key=value` configuration files shared by all subcommands.
//! Unknown keys are errors; lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

use ppa_afl_core::encoding::EncodingConfig;
use ppa_afl_core::protocol::EncryptionServerConfig;

use crate::training::TaskKind;

#[derive(Debug, Clone)]
pub struct Config {
    pub role: Option<String>,
    pub listen_addr: Option<String>,
    pub es_addr: Option<String>,
    pub as_addr: Option<String>,
    pub key_bits: u64,
    pub model_len: usize,
    pub threshold: usize,
    pub scale: u64,
    pub max_summands: u64,
    pub max_abs_value: f64,
    pub share_budget: u64,
    pub rate_limit_count: u32,
    pub rate_limit_window_secs: u64,
    pub seed: u64,
    pub num_clients: usize,
    pub samples_per_client: usize,
    pub noise_std: f64,
    pub task: TaskKind,
    pub epochs: u64,
    pub rounds: u64,
    pub client_id: Option<String>,
    pub learning_rate: f64,
    pub train_epochs: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            role: None,
            listen_addr: None,
            es_addr: None,
            as_addr: None,
            key_bits: 2048,
            model_len: 100,
            threshold: 3,
            scale: EncodingConfig::DEFAULT_SCALE,
            max_summands: EncodingConfig::DEFAULT_MAX_SUMMANDS,
            max_abs_value: EncodingConfig::DEFAULT_MAX_ABS_VALUE,
            share_budget: EncryptionServerConfig::DEFAULT_SHARE_BUDGET,
            rate_limit_count: EncryptionServerConfig::DEFAULT_RATE_LIMIT_COUNT,
            rate_limit_window_secs: 60,
            seed: 0,
            num_clients: 10,
            samples_per_client: 10,
            noise_std: 0.1,
            task: TaskKind::MeanEstimation,
            epochs: 1,
            rounds: 1,
            client_id: None,
            learning_rate: 0.1,
            train_epochs: 5,
        }
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected key=value, got {raw:?}", lineno + 1);
            };
            if map.insert(key.trim().to_string(), value.trim().to_string()).is_some() {
                bail!("config line {}: duplicate key {key:?}", lineno + 1);
            }
        }
        Self::from_map(map)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Config::default();

        fn parse<T: std::str::FromStr>(
            map: &mut BTreeMap<String, String>,
            key: &str,
            into: &mut T,
        ) -> Result<()> {
            if let Some(value) = map.remove(key) {
                *into = value
                    .parse()
                    .map_err(|_| anyhow::anyhow!("config key {key}: bad value {value:?}"))?;
            }
            Ok(())
        }

        cfg.role = map.remove("role");
        cfg.listen_addr = map.remove("listen_addr");
        cfg.es_addr = map.remove("es_addr");
        cfg.as_addr = map.remove("as_addr");
        cfg.client_id = map.remove("client_id");
        if let Some(task) = map.remove("task") {
            cfg.task = task
                .parse()
                .map_err(|e: String| anyhow::anyhow!("config key task: {e}"))?;
        }
        parse(&mut map, "key_bits", &mut cfg.key_bits)?;
        parse(&mut map, "model_len", &mut cfg.model_len)?;
        parse(&mut map, "threshold", &mut cfg.threshold)?;
        parse(&mut map, "scale", &mut cfg.scale)?;
        parse(&mut map, "max_summands", &mut cfg.max_summands)?;
        parse(&mut map, "max_abs_value", &mut cfg.max_abs_value)?;
        parse(&mut map, "share_budget", &mut cfg.share_budget)?;
        parse(&mut map, "rate_limit_count", &mut cfg.rate_limit_count)?;
        parse(&mut map, "rate_limit_window_secs", &mut cfg.rate_limit_window_secs)?;
        parse(&mut map, "seed", &mut cfg.seed)?;
        parse(&mut map, "num_clients", &mut cfg.num_clients)?;
        parse(&mut map, "samples_per_client", &mut cfg.samples_per_client)?;
        parse(&mut map, "noise_std", &mut cfg.noise_std)?;
        parse(&mut map, "epochs", &mut cfg.epochs)?;
        parse(&mut map, "rounds", &mut cfg.rounds)?;
        parse(&mut map, "learning_rate", &mut cfg.learning_rate)?;
        parse(&mut map, "train_epochs", &mut cfg.train_epochs)?;

        if let Some(key) = map.into_keys().next() {
            bail!("unknown config key {key:?}");
        }
        Ok(cfg)
    }

    pub fn encoding(&self) -> Result<EncodingConfig> {
        EncodingConfig::new(self.scale, self.max_summands, self.max_abs_value)
            .map_err(|e| anyhow::anyhow!("encoding config: {e}"))
    }
}
