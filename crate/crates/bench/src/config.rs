//! Benchmark configuration files.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    pub echo: EchoConfig,
    pub kvs: KvsConfig,
    pub flight: FlightConfig,
    pub ifmodel: IfModelConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seed: 1,
            echo: EchoConfig::default(),
            kvs: KvsConfig::default(),
            flight: FlightConfig::default(),
            ifmodel: IfModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EchoConfig {
    pub clients: usize,
    /// Outstanding requests per client.
    pub window: usize,
    pub payload_bytes: usize,
    pub batch: usize,
    /// Offered load; zero runs closed loop.
    pub rate_rps: f64,
    pub duration_s: f64,
}

impl Default for EchoConfig {
    fn default() -> Self {
        EchoConfig {
            clients: 2,
            window: 8,
            payload_bytes: 32,
            batch: 1,
            rate_rps: 0.0,
            duration_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KvsConfig {
    pub dataset: Dataset,
    /// Key count; zero uses the dataset's size.
    pub keys: u64,
    pub zipf_s: f64,
    /// Fraction of requests that are gets.
    pub get_ratio: f64,
    /// Server dispatch threads, one key partition each.
    pub partitions: usize,
    /// Starting and maximum outstanding requests.
    pub window: usize,
    pub max_window: usize,
    pub batch: usize,
    pub duration_s: f64,
    /// Length of one throttle epoch.
    pub epoch_ms: u64,
    /// Drop rate above which the throttle backs off.
    pub drop_budget: f64,
    pub call_timeout_ms: u64,
}

impl Default for KvsConfig {
    fn default() -> Self {
        KvsConfig {
            dataset: Dataset::Tiny,
            keys: 0,
            zipf_s: 0.99,
            get_ratio: 0.5,
            partitions: 4,
            window: 8,
            max_window: 64,
            batch: 1,
            duration_s: 1.0,
            epoch_ms: 50,
            drop_budget: 0.01,
            call_timeout_ms: 200,
        }
    }
}

/// Key-value dataset shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    /// 8 B keys, 8 B values, 10^5 pairs.
    Tiny,
    /// 16 B keys, 32 B values, 10^6 pairs.
    Small,
}

impl Dataset {
    pub fn key_len(self) -> usize {
        match self {
            Dataset::Tiny => 8,
            Dataset::Small => 16,
        }
    }

    pub fn value_len(self) -> usize {
        match self {
            Dataset::Tiny => 8,
            Dataset::Small => 32,
        }
    }

    pub fn pairs(self) -> u64 {
        match self {
            Dataset::Tiny => 100_000,
            Dataset::Small => 1_000_000,
        }
    }
}

impl KvsConfig {
    pub fn key_count(&self) -> u64 {
        if self.keys == 0 {
            self.dataset.pairs()
        } else {
            self.keys
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlightMode {
    /// Every handler inline on its dispatch thread.
    Simple,
    /// Slow tiers hand requests to a worker pool.
    Optimized,
}

impl std::str::FromStr for FlightMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simple" => Ok(FlightMode::Simple),
            "optimized" => Ok(FlightMode::Optimized),
            _ => Err(format!("unknown flight mode {s:?} (simple|optimized)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlightConfig {
    pub mode: FlightMode,
    /// Concurrent passenger sessions.
    pub clients: usize,
    /// Gap between staff reads of Airport DB; zero disables them.
    pub staff_read_interval_us: u64,
    pub workers: usize,
    pub flight_service_us: u64,
    pub baggage_service_us: u64,
    pub passport_service_us: u64,
    pub citizens_service_us: u64,
    pub airport_service_us: u64,
    pub duration_s: f64,
    pub call_timeout_ms: u64,
}

impl Default for FlightConfig {
    fn default() -> Self {
        FlightConfig {
            mode: FlightMode::Optimized,
            clients: 8,
            staff_read_interval_us: 1_000,
            workers: 8,
            flight_service_us: 300,
            baggage_service_us: 20,
            passport_service_us: 50,
            citizens_service_us: 10,
            airport_service_us: 5,
            duration_s: 1.0,
            call_timeout_ms: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IfModelConfig {
    pub method: String,
    pub batch: usize,
    /// Offered loads in Mrps.
    pub load_grid: Vec<f64>,
    pub requests: usize,
    pub poisson: bool,
}

impl Default for IfModelConfig {
    fn default() -> Self {
        IfModelConfig {
            method: "coherent-poll".into(),
            batch: 1,
            load_grid: (1..=12).map(|k| k as f64).collect(),
            requests: 50_000,
            poisson: false,
        }
    }
}

impl BenchConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: BenchConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let e = &self.echo;
        if e.clients == 0 || e.window == 0 {
            return bad("echo.clients and echo.window must be positive");
        }
        if e.rate_rps < 0.0 || !e.rate_rps.is_finite() {
            return bad("echo.rate_rps must be finite and >= 0");
        }
        let k = &self.kvs;
        if k.partitions == 0 || k.window == 0 || k.max_window < k.window {
            return bad("kvs.partitions and kvs.window must be positive, max_window >= window");
        }
        if !(0.0..=1.0).contains(&k.get_ratio) {
            return bad("kvs.get_ratio must be in [0, 1]");
        }
        if !(k.zipf_s >= 0.0) {
            return bad("kvs.zipf_s must be >= 0");
        }
        let f = &self.flight;
        if f.clients == 0 {
            return bad("flight.clients must be positive");
        }
        for d in [e.duration_s, k.duration_s, f.duration_s] {
            if !(d > 0.0 && d.is_finite()) {
                return bad("durations must be positive");
            }
        }
        if self.ifmodel.batch == 0 || self.ifmodel.load_grid.iter().any(|l| !(*l > 0.0)) {
            return bad("ifmodel.batch and every load must be positive");
        }
        Ok(())
    }
}
