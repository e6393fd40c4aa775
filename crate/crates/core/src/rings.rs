//! Per-flow TX/RX rings shared between one application thread and one NIC
//! context.
//!
//! Both directions are polled. Each 64-byte entry
//! carries a phase byte that the writer bumps (release) only after the entry
//! body is complete, so a poller that observes a new phase (acquire) always
//! observes the full entry.
//!
//! TX: the application takes a slot id from the free queue, writes the frame
//! and bumps the slot's phase. The NIC scans for slots whose phase moved since
//! it last looked, fetches them and later hands their ids back through the
//! free queue.
//!
//! RX: the NIC appends batches at the head; the application consumes at the
//! tail. The expected phase of slot `i` on lap `L` is `L + 1 (mod 256)`.
//!
//! Polling never depends on it, but each side may ring a [`Doorbell`] after
//! publishing so that an idle peer thread can park instead of spinning.

use std::cell::UnsafeCell;
use std::sync::atomic::{AtomicU32, AtomicU64, AtomicU8, AtomicUsize, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::clock::Doorbell;
use crate::wire::{RpcFrame, FRAME_SIZE};

pub type FlowId = u16;
pub type SlotId = u16;
pub type Entry64 = [u8; FRAME_SIZE];

pub const DEFAULT_MAX_OUTSTANDING: usize = 128;
/// Slot ids are 16 bits wide.
pub const MAX_RING_ENTRIES: usize = 1 << 15;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RingError {
    #[error("ring is full")]
    Full,
    #[error("slot {0} released twice")]
    DoubleRelease(SlotId),
    #[error("invalid ring configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RingConfig {
    /// Desired requests per second through this flow.
    pub target_throughput_per_flow: f64,
    /// Entries the NIC moves per bus transaction.
    pub batch: usize,
    /// Expected frames per message.
    pub mean_rpc_frames: usize,
    pub max_outstanding: usize,
}

impl Default for RingConfig {
    fn default() -> Self {
        RingConfig {
            target_throughput_per_flow: 12.4e6,
            batch: 4,
            mean_rpc_frames: 1,
            max_outstanding: DEFAULT_MAX_OUTSTANDING,
        }
    }
}

impl RingConfig {
    /// `max(B, ceil(thr * 0.8 / 1e6)) * mean_rpc_frames`: the NIC needs about
    /// 0.8 us to fetch an entry and return its slot.
    pub fn tx_capacity(&self) -> usize {
        let in_flight = (self.target_throughput_per_flow * 0.8 / 1e6).ceil() as usize;
        in_flight.max(self.batch) * self.mean_rpc_frames
    }

    /// One batch worth of messages, rounded up to a power of two.
    pub fn rx_capacity(&self) -> usize {
        (self.batch * self.mean_rpc_frames).next_power_of_two()
    }

    pub fn validate(&self) -> Result<(), RingError> {
        if !(self.target_throughput_per_flow > 0.0) {
            return Err(RingError::InvalidConfig("target throughput must be positive"));
        }
        if self.batch == 0 || self.mean_rpc_frames == 0 || self.max_outstanding == 0 {
            return Err(RingError::InvalidConfig("batch, frames and outstanding must be >= 1"));
        }
        if self.tx_capacity() > MAX_RING_ENTRIES || self.rx_capacity() > MAX_RING_ENTRIES {
            return Err(RingError::InvalidConfig("ring too large"));
        }
        Ok(())
    }
}

struct Entry {
    phase: AtomicU8,
    seq: AtomicU64,
    data: UnsafeCell<Entry64>,
}

impl Entry {
    fn new() -> Self {
        Entry {
            phase: AtomicU8::new(0),
            seq: AtomicU64::new(0),
            data: UnsafeCell::new([0; FRAME_SIZE]),
        }
    }
}

/// Bounded single-producer single-consumer queue of slot ids.
struct IndexQueue {
    buf: Box<[AtomicU32]>,
    head: AtomicUsize,
    tail: AtomicUsize,
}

impl IndexQueue {
    fn new(cap: usize) -> Self {
        IndexQueue {
            buf: (0..cap).map(|_| AtomicU32::new(0)).collect(),
            head: AtomicUsize::new(0),
            tail: AtomicUsize::new(0),
        }
    }

    fn len(&self) -> usize {
        // tail first: head only grows, so head - tail never underflows
        let tail = self.tail.load(Ordering::Acquire);
        let head = self.head.load(Ordering::Acquire);
        head.wrapping_sub(tail)
    }

    fn push(&self, v: u32) -> bool {
        let head = self.head.load(Ordering::Relaxed);
        let tail = self.tail.load(Ordering::Acquire);
        if head.wrapping_sub(tail) == self.buf.len() {
            return false;
        }
        self.buf[head % self.buf.len()].store(v, Ordering::Relaxed);
        self.head.store(head.wrapping_add(1), Ordering::Release);
        true
    }

    fn pop(&self) -> Option<u32> {
        let tail = self.tail.load(Ordering::Relaxed);
        let head = self.head.load(Ordering::Acquire);
        if head == tail {
            return None;
        }
        let v = self.buf[tail % self.buf.len()].load(Ordering::Relaxed);
        self.tail.store(tail.wrapping_add(1), Ordering::Release);
        Some(v)
    }
}

struct TxShared {
    entries: Box<[Entry]>,
    free: IndexQueue,
    pushed: AtomicU64,
    released: AtomicU64,
    /// Wakes the NIC context after a push.
    nic_bell: Option<Arc<Doorbell>>,
}

// SAFETY: an entry body is written only by the application while the slot is
// owned by it (popped from `free`, not yet published) and read only by the
// NIC after the phase acquire and before the slot returns to `free`. Those
// hand-offs are release/acquire pairs, so body accesses never overlap.
unsafe impl Sync for TxShared {}

struct RxShared {
    entries: Box<[Entry]>,
    tail: AtomicU64,
    /// Wakes the application thread after a delivery.
    app_bell: Doorbell,
}

// SAFETY: the NIC writes slot `head % cap` only while `head - tail < cap`,
// where `tail` is published (release) by the application after it finished
// copying the entry; the application reads only after the phase acquire.
unsafe impl Sync for RxShared {}

/// Occupancy snapshot of a TX ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxAccounting {
    pub capacity: usize,
    pub free: usize,
    pub occupied: usize,
}

fn tx_accounting(shared: &TxShared) -> TxAccounting {
    let released = shared.released.load(Ordering::Acquire);
    let pushed = shared.pushed.load(Ordering::Acquire);
    TxAccounting {
        capacity: shared.entries.len(),
        free: shared.free.len(),
        occupied: pushed.saturating_sub(released) as usize,
    }
}

/// Application producer side of the TX ring.
pub struct AppTx {
    shared: Arc<TxShared>,
    next_seq: u64,
}

impl AppTx {
    pub fn capacity(&self) -> usize {
        self.shared.entries.len()
    }

    pub fn free_slots(&self) -> usize {
        self.shared.free.len()
    }

    pub fn push(&mut self, entry: &Entry64) -> Result<SlotId, RingError> {
        let slot = self.shared.free.pop().ok_or(RingError::Full)? as usize;
        let e = &self.shared.entries[slot];
        // SAFETY: the slot came off the free queue, so the NIC is done with it.
        unsafe { *e.data.get() = *entry };
        e.seq.store(self.next_seq, Ordering::Relaxed);
        self.next_seq += 1;
        let phase = e.phase.load(Ordering::Relaxed).wrapping_add(1);
        e.phase.store(phase, Ordering::Release);
        self.shared.pushed.fetch_add(1, Ordering::Release);
        if let Some(bell) = &self.shared.nic_bell {
            bell.ring();
        }
        Ok(slot as SlotId)
    }

    pub fn push_frame(&mut self, frame: &RpcFrame) -> Result<SlotId, RingError> {
        self.push(&frame.encode())
    }

    pub fn accounting(&self) -> TxAccounting {
        tx_accounting(&self.shared)
    }
}

/// NIC consumer side of the TX ring.
pub struct NicTx {
    shared: Arc<TxShared>,
    last_seen: Vec<u8>,
    fetched: Vec<bool>,
    next_seq: u64,
    scratch: Vec<(u64, usize, u8)>,
}

impl NicTx {
    pub fn capacity(&self) -> usize {
        self.shared.entries.len()
    }

    /// Fetch up to `max` newly written entries, oldest first. Slots stay
    /// occupied until [`NicTx::release`].
    pub fn poll(&mut self, max: usize, out: &mut Vec<(SlotId, Entry64)>) -> usize {
        if max == 0 || self.shared.pushed.load(Ordering::Acquire) == self.next_seq {
            return 0;
        }
        self.scratch.clear();
        for (i, e) in self.shared.entries.iter().enumerate() {
            if self.fetched[i] {
                continue;
            }
            let phase = e.phase.load(Ordering::Acquire);
            if phase != self.last_seen[i] {
                self.scratch.push((e.seq.load(Ordering::Relaxed), i, phase));
            }
        }
        self.scratch.sort_unstable_by_key(|c| c.0);
        let mut n = 0;
        for &(seq, slot, phase) in &self.scratch {
            // A later entry can become visible before an earlier one was
            // scanned; stop at the first gap and pick it up next time.
            if seq != self.next_seq || n == max {
                break;
            }
            // SAFETY: phase acquire above; the slot is not free.
            let data = unsafe { *self.shared.entries[slot].data.get() };
            self.last_seen[slot] = phase;
            self.fetched[slot] = true;
            self.next_seq += 1;
            out.push((slot as SlotId, data));
            n += 1;
        }
        n
    }

    /// Return fetched slots to the application.
    pub fn release(&mut self, slots: &[SlotId]) -> Result<(), RingError> {
        for &slot in slots {
            let i = slot as usize;
            if i >= self.fetched.len() || !self.fetched[i] {
                return Err(RingError::DoubleRelease(slot));
            }
            self.fetched[i] = false;
            let ok = self.shared.free.push(slot as u32);
            debug_assert!(ok, "free queue cannot overflow");
            self.shared.released.fetch_add(1, Ordering::Release);
        }
        Ok(())
    }

    pub fn accounting(&self) -> TxAccounting {
        tx_accounting(&self.shared)
    }
}

/// NIC producer side of the RX ring.
pub struct NicRx {
    shared: Arc<RxShared>,
    head: u64,
}

impl NicRx {
    pub fn capacity(&self) -> usize {
        self.shared.entries.len()
    }

    pub fn free_space(&self) -> usize {
        let tail = self.shared.tail.load(Ordering::Acquire);
        self.capacity() - (self.head - tail) as usize
    }

    /// Write as many entries as fit; returns how many were written.
    pub fn push(&mut self, batch: &[Entry64]) -> usize {
        let n = batch.len().min(self.free_space());
        let cap = self.capacity() as u64;
        for entry in &batch[..n] {
            let e = &self.shared.entries[(self.head % cap) as usize];
            // SAFETY: free_space() proved the application released this slot.
            unsafe { *e.data.get() = *entry };
            let lap_phase = (self.head / cap).wrapping_add(1) as u8;
            e.phase.store(lap_phase, Ordering::Release);
            self.head += 1;
        }
        if n > 0 {
            self.shared.app_bell.ring();
        }
        n
    }
}

/// Application consumer side of the RX ring.
pub struct AppRx {
    shared: Arc<RxShared>,
    tail: u64,
}

impl AppRx {
    pub fn capacity(&self) -> usize {
        self.shared.entries.len()
    }

    pub fn poll(&mut self, max: usize, out: &mut Vec<Entry64>) -> usize {
        let cap = self.capacity() as u64;
        let mut n = 0;
        while n < max {
            let e = &self.shared.entries[(self.tail % cap) as usize];
            let want = (self.tail / cap).wrapping_add(1) as u8;
            if e.phase.load(Ordering::Acquire) != want {
                break;
            }
            // SAFETY: phase acquire; the NIC will not reuse the slot until
            // the tail store below.
            out.push(unsafe { *e.data.get() });
            self.tail += 1;
            self.shared.tail.store(self.tail, Ordering::Release);
            n += 1;
        }
        n
    }

    /// Park until the NIC delivers something or `timeout` passes. May
    /// return early; poll afterwards either way.
    pub fn wait(&self, timeout: std::time::Duration) {
        let cap = self.capacity() as u64;
        let e = &self.shared.entries[(self.tail % cap) as usize];
        if e.phase.load(Ordering::Acquire) == (self.tail / cap).wrapping_add(1) as u8 {
            return;
        }
        self.shared.app_bell.wait(timeout);
    }
}

/// Application end of a ring pair.
pub struct AppEnd {
    pub tx: AppTx,
    pub rx: AppRx,
}

/// NIC end of a ring pair.
pub struct NicEnd {
    pub tx: NicTx,
    pub rx: NicRx,
}

pub struct RingPair {
    pub flow_id: FlowId,
    pub app: AppEnd,
    pub nic: NicEnd,
}

impl RingPair {
    pub fn capacity_tx(&self) -> usize {
        self.app.tx.capacity()
    }

    pub fn capacity_rx(&self) -> usize {
        self.app.rx.capacity()
    }

    pub fn split(self) -> (AppEnd, NicEnd) {
        (self.app, self.nic)
    }
}

pub fn create_ring_pair(flow_id: FlowId, cfg: &RingConfig) -> Result<RingPair, RingError> {
    cfg.validate()?;
    create_with_capacity(flow_id, cfg.tx_capacity(), cfg.rx_capacity())
}

/// Build a ring pair with explicit capacities (RX is rounded up to a power
/// of two).
pub fn create_with_capacity(
    flow_id: FlowId,
    tx_cap: usize,
    rx_cap: usize,
) -> Result<RingPair, RingError> {
    create_with_doorbell(flow_id, tx_cap, rx_cap, None)
}

/// As [`create_with_capacity`]; every TX push also rings `nic_bell`.
pub fn create_with_doorbell(
    flow_id: FlowId,
    tx_cap: usize,
    rx_cap: usize,
    nic_bell: Option<Arc<Doorbell>>,
) -> Result<RingPair, RingError> {
    if tx_cap == 0 || rx_cap == 0 || tx_cap > MAX_RING_ENTRIES || rx_cap > MAX_RING_ENTRIES {
        return Err(RingError::InvalidConfig("ring capacity out of range"));
    }
    let rx_cap = rx_cap.next_power_of_two();
    let free = IndexQueue::new(tx_cap);
    for slot in 0..tx_cap {
        free.push(slot as u32);
    }
    let tx = Arc::new(TxShared {
        entries: (0..tx_cap).map(|_| Entry::new()).collect(),
        free,
        pushed: AtomicU64::new(0),
        released: AtomicU64::new(0),
        nic_bell,
    });
    let rx = Arc::new(RxShared {
        entries: (0..rx_cap).map(|_| Entry::new()).collect(),
        tail: AtomicU64::new(0),
        app_bell: Doorbell::new(),
    });
    Ok(RingPair {
        flow_id,
        app: AppEnd {
            tx: AppTx {
                shared: tx.clone(),
                next_seq: 0,
            },
            rx: AppRx {
                shared: rx.clone(),
                tail: 0,
            },
        },
        nic: NicEnd {
            tx: NicTx {
                shared: tx,
                last_seen: vec![0; tx_cap],
                fetched: vec![false; tx_cap],
                next_seq: 0,
                scratch: Vec::with_capacity(tx_cap),
            },
            rx: NicRx { shared: rx, head: 0 },
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(tag: u8) -> Entry64 {
        [tag; FRAME_SIZE]
    }

    #[test]
    fn sizing_follows_the_fetch_window() {
        let cfg = RingConfig {
            target_throughput_per_flow: 12.4e6,
            batch: 4,
            mean_rpc_frames: 1,
            ..RingConfig::default()
        };
        assert_eq!(cfg.tx_capacity(), 10);
        assert_eq!(cfg.rx_capacity(), 4);

        let slow = RingConfig {
            target_throughput_per_flow: 1e6,
            ..cfg.clone()
        };
        assert_eq!(slow.tx_capacity(), 4);

        let big = RingConfig {
            mean_rpc_frames: 3,
            ..cfg
        };
        assert_eq!(big.tx_capacity(), 30);
        assert_eq!(big.rx_capacity(), 16);
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = RingConfig {
            batch: 0,
            ..RingConfig::default()
        };
        assert!(matches!(create_ring_pair(0, &cfg), Err(RingError::InvalidConfig(_))));
    }

    #[test]
    fn push_until_full() {
        let (mut app, _nic) = create_with_capacity(0, 10, 4).unwrap().split();
        let slot = app.tx.push(&entry(1)).unwrap();
        assert!((slot as usize) < 10);
        assert_eq!(app.tx.free_slots(), 9);
        for i in 0..9 {
            app.tx.push(&entry(i)).unwrap();
        }
        assert_eq!(app.tx.push(&entry(0)), Err(RingError::Full));
    }

    #[test]
    fn fetch_release_reuse() {
        let (mut app, mut nic) = create_with_capacity(0, 2, 4).unwrap().split();
        app.tx.push(&entry(1)).unwrap();
        app.tx.push(&entry(2)).unwrap();
        assert_eq!(app.tx.push(&entry(3)), Err(RingError::Full));

        let mut got = Vec::new();
        assert_eq!(nic.tx.poll(8, &mut got), 2);
        assert_eq!(got[0].1, entry(1));
        assert_eq!(got[1].1, entry(2));
        // fetched but not released: still full
        assert_eq!(app.tx.push(&entry(3)), Err(RingError::Full));
        assert_eq!(nic.tx.poll(8, &mut got), 0);

        nic.tx.release(&[got[0].0]).unwrap();
        assert_eq!(nic.tx.release(&[got[0].0]), Err(RingError::DoubleRelease(got[0].0)));
        let reused = app.tx.push(&entry(3)).unwrap();
        assert_eq!(reused, got[0].0);

        got.clear();
        assert_eq!(nic.tx.poll(8, &mut got), 1);
        assert_eq!(got[0].1, entry(3));
        let acct = app.tx.accounting();
        assert_eq!(acct.free + acct.occupied, acct.capacity);
    }

    #[test]
    fn poll_respects_batch_limit_and_order() {
        let (mut app, mut nic) = create_with_capacity(0, 16, 4).unwrap().split();
        for i in 0..10 {
            app.tx.push(&entry(i)).unwrap();
        }
        let mut got = Vec::new();
        assert_eq!(nic.tx.poll(4, &mut got), 4);
        let slots: Vec<SlotId> = got.iter().map(|g| g.0).collect();
        nic.tx.release(&slots).unwrap();
        for i in 10..14 {
            app.tx.push(&entry(i)).unwrap();
        }
        while nic.tx.poll(4, &mut got) > 0 {}
        let tags: Vec<u8> = got.iter().map(|g| g.1[0]).collect();
        assert_eq!(tags, (0..14).collect::<Vec<u8>>());
    }

    #[test]
    fn rx_wraps_many_laps() {
        let (mut app, mut nic) = create_with_capacity(0, 1, 4).unwrap().split();
        let mut out = Vec::new();
        // > 256 laps exercises phase wrap-around
        for lap in 0..300u32 {
            let batch: Vec<Entry64> = (0..4).map(|i| entry((lap * 4 + i) as u8)).collect();
            assert_eq!(nic.rx.push(&batch), 4);
            assert_eq!(nic.rx.free_space(), 0);
            assert_eq!(nic.rx.push(&batch[..1]), 0);
            out.clear();
            assert_eq!(app.rx.poll(16, &mut out), 4);
            assert_eq!(out, batch);
            assert_eq!(app.rx.poll(16, &mut out), 0);
        }
    }
}
