//! Connection Manager cache.
//!
//! Direct-mapped: connection `c` lives at index `c & (N - 1)`. The tuple is
//! split across three parallel tables so the outgoing path, the incoming path
//! and the manager itself can read it at the same time. A per-index sequence
//! counter makes every read see one complete install: one writer, any number
//! of lock-free readers.

use std::sync::atomic::{fence, AtomicU16, AtomicU32, AtomicU64, AtomicU8, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::rings::FlowId;
use crate::wire::TenantAddr;

pub const DEFAULT_CM_ENTRIES: usize = 65_536;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum LoadBalancer {
    /// Round-robin over the serving flows.
    Uniform = 0,
    /// Always the connection's `src_flow`.
    Static = 1,
    /// Hash of the request key, so a key always lands on the same flow.
    ObjectLevel = 2,
}

impl LoadBalancer {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(LoadBalancer::Uniform),
            1 => Some(LoadBalancer::Static),
            2 => Some(LoadBalancer::ObjectLevel),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "round-robin" | "rr" => Some(LoadBalancer::Uniform),
            "static" => Some(LoadBalancer::Static),
            "object" | "object-level" | "objectlevel" => Some(LoadBalancer::ObjectLevel),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectionTuple {
    pub src_flow: FlowId,
    pub dest_addr: TenantAddr,
    pub load_balancer: LoadBalancer,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CmError {
    #[error("connection {0} not cached")]
    Miss(u32),
    #[error("src_flow {src_flow} out of range for {n_flows} flows")]
    InvalidTuple { src_flow: FlowId, n_flows: usize },
}

const VALID: u64 = 1 << 32;

pub struct ConnectionCache {
    seq: Box<[AtomicU32]>,
    tags: Box<[AtomicU64]>,
    src_flow: Box<[AtomicU16]>,
    dest_addr: Box<[AtomicU16]>,
    load_balancer: Box<[AtomicU8]>,
    writer: Mutex<()>,
    n_flows: usize,
    evictions: AtomicU64,
}

impl std::fmt::Debug for ConnectionCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConnectionCache")
            .field("entries", &self.entries())
            .field("n_flows", &self.n_flows)
            .finish()
    }
}

impl ConnectionCache {
    /// `entries` is rounded up to a power of two.
    pub fn new(entries: usize, n_flows: usize) -> Self {
        let n = entries.max(1).next_power_of_two();
        ConnectionCache {
            seq: (0..n).map(|_| AtomicU32::new(0)).collect(),
            tags: (0..n).map(|_| AtomicU64::new(0)).collect(),
            src_flow: (0..n).map(|_| AtomicU16::new(0)).collect(),
            dest_addr: (0..n).map(|_| AtomicU16::new(0)).collect(),
            load_balancer: (0..n).map(|_| AtomicU8::new(0)).collect(),
            writer: Mutex::new(()),
            n_flows,
            evictions: AtomicU64::new(0),
        }
    }

    pub fn entries(&self) -> usize {
        self.tags.len()
    }

    pub fn index_of(&self, c_id: u32) -> usize {
        c_id as usize & (self.entries() - 1)
    }

    pub fn evictions(&self) -> u64 {
        self.evictions.load(Ordering::Relaxed)
    }

    /// Install `tuple` for `c_id`, evicting whatever else occupied its index.
    /// Returns the evicted connection id, if any.
    pub fn open(&self, c_id: u32, tuple: ConnectionTuple) -> Result<Option<u32>, CmError> {
        if tuple.src_flow as usize >= self.n_flows {
            return Err(CmError::InvalidTuple {
                src_flow: tuple.src_flow,
                n_flows: self.n_flows,
            });
        }
        let _w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let i = self.index_of(c_id);
        let old = self.tags[i].load(Ordering::Relaxed);
        let evicted = (old & VALID != 0 && old as u32 != c_id).then_some(old as u32);
        if evicted.is_some() {
            self.evictions.fetch_add(1, Ordering::Relaxed);
        }
        self.write(i, VALID | c_id as u64, tuple);
        Ok(evicted)
    }

    /// Invalidate `c_id`. Returns false if it was not cached.
    pub fn close(&self, c_id: u32) -> bool {
        let _w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let i = self.index_of(c_id);
        let tag = self.tags[i].load(Ordering::Relaxed);
        if tag != VALID | c_id as u64 {
            return false;
        }
        let s = self.seq[i].load(Ordering::Relaxed);
        self.seq[i].store(s.wrapping_add(1), Ordering::Relaxed);
        fence(Ordering::Release);
        self.tags[i].store(0, Ordering::Relaxed);
        self.seq[i].store(s.wrapping_add(2), Ordering::Release);
        true
    }

    fn write(&self, i: usize, tag: u64, t: ConnectionTuple) {
        let s = self.seq[i].load(Ordering::Relaxed);
        self.seq[i].store(s.wrapping_add(1), Ordering::Relaxed);
        fence(Ordering::Release);
        self.tags[i].store(tag, Ordering::Relaxed);
        self.src_flow[i].store(t.src_flow, Ordering::Relaxed);
        self.dest_addr[i].store(t.dest_addr, Ordering::Relaxed);
        self.load_balancer[i].store(t.load_balancer as u8, Ordering::Relaxed);
        self.seq[i].store(s.wrapping_add(2), Ordering::Release);
    }

    pub fn lookup(&self, c_id: u32) -> Result<ConnectionTuple, CmError> {
        let i = self.index_of(c_id);
        loop {
            let s1 = self.seq[i].load(Ordering::Acquire);
            if s1 & 1 == 1 {
                std::hint::spin_loop();
                continue;
            }
            let tag = self.tags[i].load(Ordering::Relaxed);
            let src_flow = self.src_flow[i].load(Ordering::Relaxed);
            let dest_addr = self.dest_addr[i].load(Ordering::Relaxed);
            let lb = self.load_balancer[i].load(Ordering::Relaxed);
            fence(Ordering::Acquire);
            if self.seq[i].load(Ordering::Relaxed) != s1 {
                continue;
            }
            if tag != VALID | c_id as u64 {
                return Err(CmError::Miss(c_id));
            }
            return Ok(ConnectionTuple {
                src_flow,
                dest_addr,
                load_balancer: LoadBalancer::from_u8(lb).expect("written by open()"),
            });
        }
    }
}
