//! Hard (construction-time) and soft (runtime register) configuration.

use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};

use super::cm::{LoadBalancer, DEFAULT_CM_ENTRIES};
use super::lb::ObjectKey;
use super::NicError;
use crate::rings::RingConfig;

/// Structure fixed when the NIC is instantiated.
#[derive(Debug, Clone, PartialEq)]
pub struct HardConfig {
    pub n_flows: usize,
    /// Largest batch the soft register may select; sizes the request buffer
    /// (`max_batch * n_flows` slots) and every flow FIFO.
    pub max_batch: usize,
    pub cm_entries: usize,
}

impl Default for HardConfig {
    fn default() -> Self {
        HardConfig {
            n_flows: 8,
            max_batch: 16,
            cm_entries: DEFAULT_CM_ENTRIES,
        }
    }
}

impl HardConfig {
    pub fn validate(&self) -> Result<(), NicError> {
        if self.n_flows == 0 || self.n_flows > 512 {
            return Err(NicError::InvalidValue("n_flows must be in 1..=512"));
        }
        if self.max_batch == 0 || self.max_batch > 255 {
            return Err(NicError::InvalidValue("max_batch must be in 1..=255"));
        }
        if self.cm_entries == 0 {
            return Err(NicError::InvalidValue("cm_entries must be positive"));
        }
        Ok(())
    }
}

pub const DEFAULT_FLUSH_TIMEOUT_NS: u64 = 5_000;

/// One soft-register write.
#[derive(Debug, Clone, PartialEq)]
pub enum SoftSetting {
    Batch(usize),
    LoadBalancer(LoadBalancer),
    /// Delivered frames per second above which the configured batch is used;
    /// below it the NIC sends single entries. Zero disables the switch.
    AutoBatchThreshold(f64),
    FlushTimeoutNs(u64),
    ObjectKey(ObjectKey),
    /// Sizing for rings of flows opened from now on.
    Rings { target_throughput_per_flow: f64, mean_rpc_frames: usize },
    ActiveFlows(usize),
}

impl SoftSetting {
    /// Parse a `key = value` register write.
    pub fn parse(key: &str, value: &str) -> Result<Self, NicError> {
        let num = |v: &str| -> Result<f64, NicError> {
            v.trim()
                .parse::<f64>()
                .map_err(|_| NicError::InvalidValue("expected a number"))
        };
        Ok(match key.trim() {
            "batch" | "batch_size" => SoftSetting::Batch(num(value)? as usize),
            "lb" | "load_balancer" => SoftSetting::LoadBalancer(
                LoadBalancer::parse(value.trim())
                    .ok_or(NicError::InvalidValue("unknown load balancer"))?,
            ),
            "auto_batch_threshold" => SoftSetting::AutoBatchThreshold(num(value)?),
            "flush_timeout_ns" => SoftSetting::FlushTimeoutNs(num(value)? as u64),
            "n_active_flows" | "active_flows" => SoftSetting::ActiveFlows(num(value)? as usize),
            "ring_target_throughput" => SoftSetting::Rings {
                target_throughput_per_flow: num(value)?,
                mean_rpc_frames: 0,
            },
            "ring_mean_frames" => SoftSetting::Rings {
                target_throughput_per_flow: 0.0,
                mean_rpc_frames: num(value)? as usize,
            },
            _ => return Err(NicError::UnknownSetting(key.trim().to_string())),
        })
    }
}

/// Register file shared between the application side and the NIC context.
#[derive(Debug)]
pub struct SoftConfig {
    batch: AtomicU64,
    lb: AtomicU8,
    auto_threshold: AtomicU64,
    flush_timeout_ns: AtomicU64,
    key_offset: AtomicU64,
    key_len: AtomicU64,
    ring_thr: AtomicU64,
    ring_frames: AtomicU64,
    active_flows: AtomicU64,
}

/// Values read once per NIC cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftView {
    pub batch: usize,
    pub lb: LoadBalancer,
    pub auto_threshold: f64,
    pub flush_timeout_ns: u64,
    pub key: ObjectKey,
}

impl SoftConfig {
    pub fn new(hard: &HardConfig) -> Self {
        let ring = RingConfig::default();
        SoftConfig {
            batch: AtomicU64::new(1),
            lb: AtomicU8::new(LoadBalancer::Uniform as u8),
            auto_threshold: AtomicU64::new(0f64.to_bits()),
            flush_timeout_ns: AtomicU64::new(DEFAULT_FLUSH_TIMEOUT_NS),
            key_offset: AtomicU64::new(0),
            key_len: AtomicU64::new(8),
            ring_thr: AtomicU64::new(ring.target_throughput_per_flow.to_bits()),
            ring_frames: AtomicU64::new(4),
            active_flows: AtomicU64::new(hard.n_flows as u64),
        }
    }

    pub fn view(&self) -> SoftView {
        SoftView {
            batch: self.batch.load(Ordering::Relaxed) as usize,
            lb: LoadBalancer::from_u8(self.lb.load(Ordering::Relaxed)).unwrap(),
            auto_threshold: f64::from_bits(self.auto_threshold.load(Ordering::Relaxed)),
            flush_timeout_ns: self.flush_timeout_ns.load(Ordering::Relaxed),
            key: ObjectKey {
                offset: self.key_offset.load(Ordering::Relaxed) as usize,
                len: self.key_len.load(Ordering::Relaxed) as usize,
            },
        }
    }

    pub fn ring_config(&self, hard: &HardConfig) -> RingConfig {
        RingConfig {
            target_throughput_per_flow: f64::from_bits(self.ring_thr.load(Ordering::Relaxed)),
            batch: hard.max_batch,
            mean_rpc_frames: self.ring_frames.load(Ordering::Relaxed) as usize,
            ..RingConfig::default()
        }
    }

    pub fn active_flows(&self) -> usize {
        self.active_flows.load(Ordering::Relaxed) as usize
    }

    /// Apply one write. `flows_open` says whether any flow is currently
    /// attached; structural settings are refused while one is.
    pub fn apply(
        &self,
        hard: &HardConfig,
        setting: &SoftSetting,
        flows_open: bool,
    ) -> Result<(), NicError> {
        match *setting {
            SoftSetting::Batch(b) => {
                if b == 0 || b > hard.max_batch {
                    return Err(NicError::InvalidValue("batch must be in 1..=max_batch"));
                }
                self.batch.store(b as u64, Ordering::Relaxed);
            }
            SoftSetting::LoadBalancer(lb) => self.lb.store(lb as u8, Ordering::Relaxed),
            SoftSetting::AutoBatchThreshold(t) => {
                if !(t >= 0.0) {
                    return Err(NicError::InvalidValue("threshold must be >= 0"));
                }
                self.auto_threshold.store(t.to_bits(), Ordering::Relaxed)
            }
            SoftSetting::FlushTimeoutNs(ns) => self.flush_timeout_ns.store(ns, Ordering::Relaxed),
            SoftSetting::ObjectKey(k) => {
                if k.len == 0 {
                    return Err(NicError::InvalidValue("object key length must be positive"));
                }
                self.key_offset.store(k.offset as u64, Ordering::Relaxed);
                self.key_len.store(k.len as u64, Ordering::Relaxed);
            }
            SoftSetting::Rings {
                target_throughput_per_flow,
                mean_rpc_frames,
            } => {
                if flows_open {
                    return Err(NicError::RejectedWhileActive);
                }
                let mut cfg = self.ring_config(hard);
                if target_throughput_per_flow > 0.0 {
                    cfg.target_throughput_per_flow = target_throughput_per_flow;
                }
                if mean_rpc_frames > 0 {
                    cfg.mean_rpc_frames = mean_rpc_frames;
                }
                crate::rings::create_ring_pair(0, &cfg)
                    .map_err(|_| NicError::InvalidValue("ring sizing out of range"))?;
                self.ring_thr
                    .store(cfg.target_throughput_per_flow.to_bits(), Ordering::Relaxed);
                self.ring_frames
                    .store(cfg.mean_rpc_frames as u64, Ordering::Relaxed);
            }
            SoftSetting::ActiveFlows(n) => {
                if flows_open {
                    return Err(NicError::RejectedWhileActive);
                }
                if n == 0 || n > hard.n_flows {
                    return Err(NicError::InvalidValue("active flows must be in 1..=n_flows"));
                }
                self.active_flows.store(n as u64, Ordering::Relaxed);
            }
        }
        Ok(())
    }
}
