//! Several virtual NICs on one device: a static-table switch between their
//! ports and a round-robin arbiter granting NIC cycles.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam_queue::ArrayQueue;
use thiserror::Error;

use crate::clock::{Backoff, Doorbell};
use crate::nic::config::HardConfig;
use crate::nic::stats::NicStats;
use crate::nic::{ForwardError, FrameSink, Ingress, Nic, NicError, NicHandle};
use crate::rings::Entry64;
use crate::wire::TenantAddr;

pub const DEFAULT_INGRESS_CAPACITY: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FabricError {
    #[error("address {0} already registered")]
    DuplicateAddress(TenantAddr),
    #[error("port {0} already registered")]
    DuplicatePort(usize),
    #[error("ports must be numbered 0..n without gaps (missing {0})")]
    PortGap(usize),
    #[error("unknown tenant `{0}`")]
    UnknownTenant(String),
    #[error(transparent)]
    Nic(#[from] NicError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TenantEntry {
    pub name: String,
    pub addr: TenantAddr,
    pub port: usize,
}

/// Static tenant address to port map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SwitchTable {
    entries: Vec<TenantEntry>,
}

impl SwitchTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, addr: TenantAddr, port: usize) -> Result<(), FabricError> {
        if self.entries.iter().any(|e| e.addr == addr) {
            return Err(FabricError::DuplicateAddress(addr));
        }
        if self.entries.iter().any(|e| e.port == port) {
            return Err(FabricError::DuplicatePort(port));
        }
        self.entries.push(TenantEntry {
            name: name.to_string(),
            addr,
            port,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[TenantEntry] {
        &self.entries
    }

    pub fn addr_of(&self, name: &str) -> Result<TenantAddr, FabricError> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.addr)
            .ok_or_else(|| FabricError::UnknownTenant(name.to_string()))
    }

    /// Entries ordered by port, which must be `0..n`.
    fn by_port(&self) -> Result<Vec<&TenantEntry>, FabricError> {
        let mut v: Vec<&TenantEntry> = self.entries.iter().collect();
        v.sort_by_key(|e| e.port);
        for (i, e) in v.iter().enumerate() {
            if e.port != i {
                return Err(FabricError::PortGap(i));
            }
        }
        Ok(v)
    }
}

/// L2 switch with one bounded ingress queue per port.
pub struct Switch {
    table: HashMap<TenantAddr, usize>,
    ingress: Vec<Ingress>,
    stats: Vec<Arc<NicStats>>,
    bells: Vec<Arc<Doorbell>>,
}

impl Switch {
    fn new() -> Self {
        Switch {
            table: HashMap::new(),
            ingress: Vec::new(),
            stats: Vec::new(),
            bells: Vec::new(),
        }
    }

    pub fn port_of(&self, addr: TenantAddr) -> Option<usize> {
        self.table.get(&addr).copied()
    }

    pub fn ingress_len(&self, port: usize) -> usize {
        self.ingress[port].len()
    }
}

impl FrameSink for Switch {
    fn forward(&self, frame: &Entry64) -> Result<(), ForwardError> {
        let dst = u16::from_le_bytes([frame[0], frame[1]]);
        let port = *self.table.get(&dst).ok_or(ForwardError::UnknownAddress(dst))?;
        if self.ingress[port].push(*frame).is_err() {
            NicStats::bump(&self.stats[port].switch_drops, 1);
            return Err(ForwardError::Overflow(dst));
        }
        self.bells[port].ring();
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FabricMode {
    /// All NICs driven by one arbiter thread, one cycle per grant.
    Deterministic,
    /// One thread per NIC.
    Threaded,
}

pub struct Fabric {
    mode: FabricMode,
    switch: Arc<Switch>,
    nics: Vec<Nic>,
    handles: Vec<NicHandle>,
    grants: Vec<u64>,
    cursor: usize,
    /// Shared by every NIC in deterministic mode.
    bell: Arc<Doorbell>,
    ingress_capacity: usize,
}

impl Fabric {
    pub fn new(mode: FabricMode) -> Self {
        Self::with_ingress_capacity(mode, DEFAULT_INGRESS_CAPACITY)
    }

    pub fn with_ingress_capacity(mode: FabricMode, ingress_capacity: usize) -> Self {
        Fabric {
            mode,
            switch: Arc::new(Switch::new()),
            nics: Vec::new(),
            handles: Vec::new(),
            grants: Vec::new(),
            cursor: 0,
            bell: Arc::new(Doorbell::new()),
            ingress_capacity: ingress_capacity.max(1),
        }
    }

    /// One NIC per table entry, created in port order.
    pub fn from_table(mode: FabricMode, table: &SwitchTable, hard: &HardConfig) -> Result<Self, FabricError> {
        let mut fabric = Fabric::new(mode);
        for e in table.by_port()? {
            fabric.create_virtual_nic(e.addr, hard.clone())?;
        }
        Ok(fabric)
    }

    pub fn mode(&self) -> FabricMode {
        self.mode
    }

    /// Instantiate a NIC on the next switch port.
    pub fn create_virtual_nic(&mut self, addr: TenantAddr, hard: HardConfig) -> Result<NicHandle, FabricError> {
        let switch = Arc::get_mut(&mut self.switch).expect("fabric not running");
        if switch.table.contains_key(&addr) {
            return Err(FabricError::DuplicateAddress(addr));
        }
        let ingress: Ingress = Arc::new(ArrayQueue::new(self.ingress_capacity));
        let bell = match self.mode {
            FabricMode::Deterministic => self.bell.clone(),
            FabricMode::Threaded => Arc::new(Doorbell::new()),
        };
        let (nic, handle) = Nic::with_doorbell(addr, hard, ingress.clone(), bell.clone())?;
        let port = self.nics.len();
        switch.table.insert(addr, port);
        switch.ingress.push(ingress);
        switch.stats.push(handle.stats_arc());
        switch.bells.push(bell);
        self.nics.push(nic);
        self.handles.push(handle.clone());
        self.grants.push(0);
        Ok(handle)
    }

    pub fn handles(&self) -> &[NicHandle] {
        &self.handles
    }

    pub fn handle(&self, addr: TenantAddr) -> Option<&NicHandle> {
        self.handles.iter().find(|h| h.addr() == addr)
    }

    pub fn switch(&self) -> &Switch {
        &self.switch
    }

    pub fn nic(&self, port: usize) -> &Nic {
        &self.nics[port]
    }

    pub fn grants(&self) -> &[u64] {
        &self.grants
    }

    /// Grant one cycle to the next NIC. Returns the port and its progress.
    pub fn arbiter_step(&mut self) -> Option<(usize, bool)> {
        if self.nics.is_empty() {
            return None;
        }
        let port = self.cursor;
        self.cursor = (self.cursor + 1) % self.nics.len();
        self.grants[port] += 1;
        let progress = self.nics[port].cycle(&*self.switch);
        Some((port, progress))
    }

    /// One grant per NIC. Returns whether any NIC made progress.
    pub fn arbiter_round(&mut self) -> bool {
        let mut any = false;
        for _ in 0..self.nics.len() {
            if let Some((_, p)) = self.arbiter_step() {
                any |= p;
            }
        }
        any
    }

    /// Run the NICs in the background until [`RunningFabric::stop`].
    pub fn start(mut self) -> RunningFabric {
        let stop = Arc::new(AtomicBool::new(false));
        let handles = self.handles.clone();
        let threads = match self.mode {
            FabricMode::Deterministic => {
                let s = stop.clone();
                let bell = self.bell.clone();
                let t = std::thread::Builder::new()
                    .name("fabric-arbiter".into())
                    .spawn(move || {
                        let mut backoff = Backoff::default();
                        // all NICs idle: skip rounds until a doorbell rings
                        let mut quiet = false;
                        while !s.load(Ordering::Relaxed) {
                            if quiet && !bell.take() {
                                backoff.snooze_or(|t| {
                                    bell.wait(t);
                                    quiet = false;
                                });
                                continue;
                            }
                            quiet = false;
                            if self.arbiter_round() {
                                backoff.reset();
                            } else if self.nics.iter().all(Nic::is_idle) {
                                quiet = true;
                            } else {
                                backoff.snooze();
                            }
                        }
                        self
                    })
                    .expect("spawn arbiter");
                Threads::Single(t)
            }
            FabricMode::Threaded => {
                let nics = std::mem::take(&mut self.nics);
                let mut ts = Vec::with_capacity(nics.len());
                for (port, mut nic) in nics.into_iter().enumerate() {
                    let s = stop.clone();
                    let switch = self.switch.clone();
                    let t = std::thread::Builder::new()
                        .name(format!("nic-{}", nic.addr()))
                        .spawn(move || {
                            let mut backoff = Backoff::default();
                            let mut grants = 0u64;
                            let bell = nic.doorbell().clone();
                            let mut quiet = false;
                            while !s.load(Ordering::Relaxed) {
                                if quiet && !bell.take() {
                                    backoff.snooze_or(|t| {
                                        bell.wait(t);
                                        quiet = false;
                                    });
                                    continue;
                                }
                                quiet = false;
                                grants += 1;
                                if nic.cycle(&*switch) {
                                    backoff.reset();
                                } else if nic.is_idle() {
                                    quiet = true;
                                } else {
                                    backoff.snooze();
                                }
                            }
                            (port, nic, grants)
                        })
                        .expect("spawn nic thread");
                    ts.push(t);
                }
                Threads::PerNic(ts, self)
            }
        };
        RunningFabric {
            stop,
            threads: Some(threads),
            handles,
        }
    }
}

enum Threads {
    Single(JoinHandle<Fabric>),
    PerNic(Vec<JoinHandle<(usize, Nic, u64)>>, Fabric),
}

pub struct RunningFabric {
    stop: Arc<AtomicBool>,
    threads: Option<Threads>,
    handles: Vec<NicHandle>,
}

impl RunningFabric {
    pub fn handles(&self) -> &[NicHandle] {
        &self.handles
    }

    pub fn handle(&self, addr: TenantAddr) -> Option<&NicHandle> {
        self.handles.iter().find(|h| h.addr() == addr)
    }

    /// Stop all NIC contexts and hand the fabric back.
    pub fn stop(mut self) -> Fabric {
        self.stop.store(true, Ordering::Relaxed);
        match self.threads.take().expect("running") {
            Threads::Single(t) => t.join().expect("arbiter thread panicked"),
            Threads::PerNic(ts, mut fabric) => {
                let mut back: Vec<(usize, Nic, u64)> =
                    ts.into_iter().map(|t| t.join().expect("nic thread panicked")).collect();
                back.sort_by_key(|b| b.0);
                for (port, nic, g) in back {
                    fabric.grants[port] += g;
                    fabric.nics.push(nic);
                }
                fabric
            }
        }
    }
}

impl Drop for RunningFabric {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        match self.threads.take() {
            Some(Threads::Single(t)) => {
                let _ = t.join();
            }
            Some(Threads::PerNic(ts, _)) => {
                for t in ts {
                    let _ = t.join();
                }
            }
            None => {}
        }
    }
}
