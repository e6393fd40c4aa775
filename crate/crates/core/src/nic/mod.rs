//! Software NIC: polls the TX rings of its attached flows, resolves
//! connections through the Connection Manager, steers inbound frames onto
//! flows and delivers them to RX rings in batches.

pub mod buffer;
pub mod cm;
pub mod config;
pub mod lb;
pub mod stats;

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use crossbeam_channel::{Receiver, Sender, TryRecvError};
use crossbeam_queue::ArrayQueue;
use thiserror::Error;

use crate::clock::{now_ns, Doorbell};
use crate::rings::{self, AppEnd, Entry64, FlowId, NicEnd, RingError, SlotId, DEFAULT_MAX_OUTSTANDING};
use crate::wire::{FrameKind, RpcFrame, TenantAddr, DEFAULT_REASSEMBLY_TIMEOUT_NS};

use buffer::RequestBuffer;
use cm::{ConnectionCache, ConnectionTuple, LoadBalancer};
use config::{HardConfig, SoftConfig, SoftSetting};
use lb::{lb_steer, LbState};
use stats::{NicStats, NicStatsSnapshot};

pub use buffer::Scheduled;

/// Frames taken from the ingress queue per cycle.
const INGRESS_BUDGET: usize = 256;
/// Frames held back, across all flows, while their Flow FIFO is full.
pub const DEFAULT_BACKLOG: usize = 4096;
const RATE_WINDOW_NS: u64 = 200_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NicError {
    #[error("invalid value: {0}")]
    InvalidValue(&'static str),
    #[error("unknown setting `{0}`")]
    UnknownSetting(String),
    #[error("setting can only change while no flow is open")]
    RejectedWhileActive,
    #[error("all active flows are in use")]
    NoFreeFlow,
    #[error("flow {0} is not available")]
    FlowUnavailable(FlowId),
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error("the NIC context has shut down")]
    Detached,
}

/// Status byte of a ConnectAck.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ConnectStatus {
    Ok = 0,
    Duplicate = 1,
    NoServer = 2,
}

impl ConnectStatus {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(ConnectStatus::Ok),
            1 => Some(ConnectStatus::Duplicate),
            2 => Some(ConnectStatus::NoServer),
            _ => None,
        }
    }
}

/// Body of a ConnectAck: `[status u8][client_flow u16][server_addr u16]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectAck {
    pub status: ConnectStatus,
    pub client_flow: FlowId,
    pub server_addr: TenantAddr,
}

impl ConnectAck {
    pub fn encode(&self) -> [u8; 5] {
        let f = self.client_flow.to_le_bytes();
        let a = self.server_addr.to_le_bytes();
        [self.status as u8, f[0], f[1], a[0], a[1]]
    }

    pub fn decode(body: &[u8]) -> Option<Self> {
        if body.len() < 5 {
            return None;
        }
        Some(ConnectAck {
            status: ConnectStatus::from_u8(body[0])?,
            client_flow: u16::from_le_bytes([body[1], body[2]]),
            server_addr: u16::from_le_bytes([body[3], body[4]]),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ForwardError {
    #[error("no port for address {0}")]
    UnknownAddress(TenantAddr),
    /// The destination's ingress queue was full; the sink counted it there.
    #[error("ingress of {0} overflowed")]
    Overflow(TenantAddr),
}

/// Where a NIC sends frames leaving it.
pub trait FrameSink {
    fn forward(&self, frame: &Entry64) -> Result<(), ForwardError>;
}

pub type Ingress = Arc<ArrayQueue<Entry64>>;

enum Control {
    Attach { flow: FlowId, end: NicEnd, serving: bool },
    Detach { flow: FlowId },
}

struct Shared {
    addr: TenantAddr,
    hard: HardConfig,
    soft: SoftConfig,
    stats: Arc<NicStats>,
    cm: ConnectionCache,
    open: Mutex<Vec<bool>>,
    /// Wakes whichever thread drives this NIC.
    bell: Arc<Doorbell>,
}

/// Application-side handle; cheap to clone and usable from any thread.
#[derive(Clone)]
pub struct NicHandle {
    shared: Arc<Shared>,
    control: Sender<Control>,
}

impl std::fmt::Debug for NicHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NicHandle").field("addr", &self.shared.addr).finish()
    }
}

impl NicHandle {
    pub fn addr(&self) -> TenantAddr {
        self.shared.addr
    }

    pub fn hard_config(&self) -> &HardConfig {
        &self.shared.hard
    }

    pub fn stats(&self) -> NicStatsSnapshot {
        self.shared.stats.snapshot()
    }

    pub(crate) fn stats_arc(&self) -> Arc<NicStats> {
        self.shared.stats.clone()
    }

    pub fn cm(&self) -> &ConnectionCache {
        &self.shared.cm
    }

    /// Attach a flow on the lowest free id. Serving flows receive requests
    /// steered by the Uniform and ObjectLevel balancers.
    pub fn open_flow(&self, serving: bool) -> Result<(FlowId, AppEnd), NicError> {
        let mut open = self.shared.open.lock().unwrap_or_else(|e| e.into_inner());
        let active = self.shared.soft.active_flows();
        let flow = open[..active]
            .iter()
            .position(|o| !o)
            .ok_or(NicError::NoFreeFlow)? as FlowId;
        self.attach(&mut open, flow, serving)
    }

    pub fn open_flow_at(&self, flow: FlowId, serving: bool) -> Result<AppEnd, NicError> {
        let mut open = self.shared.open.lock().unwrap_or_else(|e| e.into_inner());
        if flow as usize >= self.shared.soft.active_flows() || open[flow as usize] {
            return Err(NicError::FlowUnavailable(flow));
        }
        self.attach(&mut open, flow, serving).map(|(_, end)| end)
    }

    fn attach(&self, open: &mut [bool], flow: FlowId, serving: bool) -> Result<(FlowId, AppEnd), NicError> {
        let cfg = self.shared.soft.ring_config(&self.shared.hard);
        cfg.validate()?;
        let (app, nic) = rings::create_with_doorbell(
            flow,
            cfg.tx_capacity(),
            cfg.rx_capacity(),
            Some(self.shared.bell.clone()),
        )?
        .split();
        self.control
            .send(Control::Attach { flow, end: nic, serving })
            .map_err(|_| NicError::Detached)?;
        self.shared.bell.ring();
        open[flow as usize] = true;
        Ok((flow, app))
    }

    pub fn close_flow(&self, flow: FlowId) -> Result<(), NicError> {
        let mut open = self.shared.open.lock().unwrap_or_else(|e| e.into_inner());
        if !open.get(flow as usize).copied().unwrap_or(false) {
            return Err(NicError::FlowUnavailable(flow));
        }
        open[flow as usize] = false;
        self.control
            .send(Control::Detach { flow })
            .map_err(|_| NicError::Detached)?;
        self.shared.bell.ring();
        Ok(())
    }

    pub fn flows_open(&self) -> usize {
        let open = self.shared.open.lock().unwrap_or_else(|e| e.into_inner());
        open.iter().filter(|o| **o).count()
    }

    pub fn soft_configure(&self, key: &str, value: &str) -> Result<(), NicError> {
        self.apply(&SoftSetting::parse(key, value)?)
    }

    pub fn apply(&self, setting: &SoftSetting) -> Result<(), NicError> {
        let open = self.shared.open.lock().unwrap_or_else(|e| e.into_inner());
        let any_open = open.iter().any(|o| *o);
        self.shared.soft.apply(&self.shared.hard, setting, any_open)
    }

    pub fn soft_view(&self) -> config::SoftView {
        self.shared.soft.view()
    }
}

struct FlowSlot {
    end: NicEnd,
    serving: bool,
    to_release: Vec<SlotId>,
}

/// The NIC context. Owned and driven by exactly one thread through
/// [`Nic::cycle`].
pub struct Nic {
    shared: Arc<Shared>,
    control: Receiver<Control>,
    ingress: Ingress,
    flows: Vec<Option<FlowSlot>>,
    serving: Vec<FlowId>,
    buffer: RequestBuffer,
    backlog: Vec<VecDeque<Entry64>>,
    backlog_len: usize,
    lb_state: LbState,
    connect_rr: usize,
    steer_memo: HashMap<(u32, u32), (FlowId, u64)>,
    last_prune: u64,
    fetched: Vec<(SlotId, Entry64)>,
    batch: Vec<Entry64>,
    window_start: u64,
    window_frames: u64,
    rate: f64,
}

impl Nic {
    pub fn new(addr: TenantAddr, hard: HardConfig, ingress: Ingress) -> Result<(Nic, NicHandle), NicError> {
        Self::with_doorbell(addr, hard, ingress, Arc::new(Doorbell::new()))
    }

    /// As [`Nic::new`], with the doorbell rung whenever the application
    /// hands this NIC work. NICs driven by one thread can share one.
    pub fn with_doorbell(
        addr: TenantAddr,
        hard: HardConfig,
        ingress: Ingress,
        bell: Arc<Doorbell>,
    ) -> Result<(Nic, NicHandle), NicError> {
        hard.validate()?;
        let (tx, rx) = crossbeam_channel::unbounded();
        let shared = Arc::new(Shared {
            addr,
            soft: SoftConfig::new(&hard),
            stats: Arc::new(NicStats::default()),
            cm: ConnectionCache::new(hard.cm_entries, hard.n_flows),
            open: Mutex::new(vec![false; hard.n_flows]),
            hard,
            bell,
        });
        let hard = &shared.hard;
        let nic = Nic {
            control: rx,
            ingress,
            flows: (0..hard.n_flows).map(|_| None).collect(),
            serving: Vec::new(),
            buffer: RequestBuffer::new(hard.n_flows, hard.max_batch),
            backlog: (0..hard.n_flows).map(|_| VecDeque::new()).collect(),
            backlog_len: 0,
            lb_state: LbState::default(),
            connect_rr: 0,
            steer_memo: HashMap::new(),
            last_prune: 0,
            fetched: Vec::with_capacity(DEFAULT_MAX_OUTSTANDING),
            batch: Vec::with_capacity(hard.max_batch),
            window_start: 0,
            window_frames: 0,
            rate: 0.0,
            shared: shared.clone(),
        };
        let handle = NicHandle { shared, control: tx };
        Ok((nic, handle))
    }

    pub fn addr(&self) -> TenantAddr {
        self.shared.addr
    }

    /// Batch size the scheduler uses this cycle.
    pub fn effective_batch(&self) -> usize {
        let view = self.shared.soft.view();
        if view.auto_threshold > 0.0 && self.rate < view.auto_threshold {
            1
        } else {
            view.batch
        }
    }

    pub fn doorbell(&self) -> &Arc<Doorbell> {
        &self.shared.bell
    }

    /// Nothing is waiting on a timer or on RX room, so the NIC can sleep
    /// until the application or the switch rings its doorbell.
    pub fn is_idle(&self) -> bool {
        self.backlog_len == 0 && self.buffer.is_empty() && self.ingress.is_empty()
    }

    pub fn request_buffer(&self) -> &RequestBuffer {
        &self.buffer
    }

    /// One pass over the pipeline. Returns whether anything moved.
    pub fn cycle(&mut self, sink: &dyn FrameSink) -> bool {
        let mut progress = self.drain_control();
        let now = now_ns();
        let stats = self.shared.stats.clone();

        // slots fetched last cycle go back to the application now
        for slot in self.flows.iter_mut().flatten() {
            if !slot.to_release.is_empty() {
                slot.end
                    .tx
                    .release(&slot.to_release)
                    .expect("each fetched slot is released once");
                slot.to_release.clear();
            }
        }

        for f in 0..self.flows.len() {
            let Some(slot) = self.flows[f].as_mut() else { continue };
            self.fetched.clear();
            if slot.end.tx.poll(DEFAULT_MAX_OUTSTANDING, &mut self.fetched) == 0 {
                continue;
            }
            progress = true;
            slot.to_release.extend(self.fetched.iter().map(|(s, _)| *s));
            let fetched = std::mem::take(&mut self.fetched);
            for (_, entry) in &fetched {
                self.outbound(f as FlowId, *entry, sink, &stats);
            }
            self.fetched = fetched;
        }

        for _ in 0..INGRESS_BUDGET {
            let Some(entry) = self.ingress.pop() else { break };
            progress = true;
            self.inbound(entry, now, sink, &stats);
        }

        let batch = self.effective_batch();
        let flush = self.shared.soft.view().flush_timeout_ns;
        self.refill_all(now);
        loop {
            self.batch.clear();
            let flows = &self.flows;
            let Some(s) = self.buffer.schedule(
                batch,
                flush,
                now,
                |f| flows[f as usize].as_ref().map_or(usize::MAX, |x| x.end.rx.free_space()),
                &mut self.batch,
            ) else {
                break;
            };
            progress = true;
            self.deliver(s.flow, s.partial, &stats);
            self.refill(s.flow, now);
        }

        self.update_rate(now);
        if now.saturating_sub(self.last_prune) > DEFAULT_REASSEMBLY_TIMEOUT_NS {
            self.last_prune = now;
            self.steer_memo
                .retain(|_, (_, t)| now.saturating_sub(*t) < DEFAULT_REASSEMBLY_TIMEOUT_NS);
        }
        progress
    }

    fn drain_control(&mut self) -> bool {
        let mut any = false;
        loop {
            match self.control.try_recv() {
                Ok(Control::Attach { flow, end, serving }) => {
                    self.flows[flow as usize] = Some(FlowSlot {
                        end,
                        serving,
                        to_release: Vec::new(),
                    });
                }
                Ok(Control::Detach { flow }) => {
                    self.flows[flow as usize] = None;
                    let mut n = self.buffer.purge_flow(flow);
                    n += self.backlog[flow as usize].len();
                    self.backlog_len -= self.backlog[flow as usize].len();
                    self.backlog[flow as usize].clear();
                    NicStats::bump(&self.shared.stats.drops, n as u64);
                }
                Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => break,
            }
            any = true;
        }
        if any {
            self.serving = (0..self.flows.len() as FlowId)
                .filter(|f| self.flows[*f as usize].as_ref().is_some_and(|s| s.serving))
                .collect();
        }
        any
    }

    fn outbound(&mut self, flow: FlowId, mut entry: Entry64, sink: &dyn FrameSink, stats: &NicStats) {
        let c_id = u32::from_le_bytes([entry[2], entry[3], entry[4], entry[5]]);
        let kind = FrameKind::from_u8(entry[10]);
        match kind {
            Some(FrameKind::Request | FrameKind::Response) => match self.shared.cm.lookup(c_id) {
                Ok(t) => {
                    NicStats::bump(&stats.cm_hits, 1);
                    entry[0..2].copy_from_slice(&t.dest_addr.to_le_bytes());
                }
                Err(_) => {
                    NicStats::bump(&stats.cm_misses, 1);
                    NicStats::bump(&stats.tx_drops, 1);
                    return;
                }
            },
            Some(FrameKind::Connect) => {
                let mut body = [0u8; 4];
                body[..2].copy_from_slice(&self.shared.addr.to_le_bytes());
                body[2..].copy_from_slice(&flow.to_le_bytes());
                let dst = u16::from_le_bytes([entry[0], entry[1]]);
                entry = RpcFrame::control(FrameKind::Connect, dst, c_id, &body).encode();
            }
            Some(FrameKind::Disconnect) => {
                self.shared.cm.close(c_id);
            }
            Some(FrameKind::ConnectAck) | None => {
                NicStats::bump(&stats.tx_drops, 1);
                return;
            }
        }
        let last = entry[12].wrapping_add(1) == entry[13];
        self.send(&entry, sink, stats);
        if last && matches!(kind, Some(FrameKind::Request | FrameKind::Response)) {
            NicStats::bump(&stats.rpcs_out, 1);
        }
    }

    fn send(&self, entry: &Entry64, sink: &dyn FrameSink, stats: &NicStats) {
        match sink.forward(entry) {
            Ok(()) | Err(ForwardError::Overflow(_)) => NicStats::bump(&stats.frames_tx, 1),
            Err(ForwardError::UnknownAddress(_)) => NicStats::bump(&stats.switch_drops, 1),
        }
    }

    fn inbound(&mut self, entry: Entry64, now: u64, sink: &dyn FrameSink, stats: &NicStats) {
        NicStats::bump(&stats.frames_rx, 1);
        let frame = match RpcFrame::decode(&entry) {
            Ok(f) if f.dst_addr == self.shared.addr => f,
            _ => {
                NicStats::bump(&stats.drops, 1);
                return;
            }
        };
        let c_id = frame.connection_id;
        match frame.kind {
            FrameKind::Request => {
                let tuple = match self.lookup(c_id, stats) {
                    Some(t) => t,
                    None => return,
                };
                let Some(flow) = self.steer_request(&frame, tuple, now) else {
                    NicStats::bump(&stats.drops, 1);
                    return;
                };
                if self.enqueue(flow, &entry, now, stats) && frame.is_last() {
                    NicStats::bump(&stats.rpcs_in, 1);
                }
            }
            FrameKind::Response => {
                let Some(tuple) = self.lookup(c_id, stats) else { return };
                if self.enqueue(tuple.src_flow, &entry, now, stats) && frame.is_last() {
                    NicStats::bump(&stats.rpcs_in, 1);
                }
            }
            FrameKind::Connect => {
                NicStats::bump(&stats.frames_delivered, 1);
                let body = frame.chunk();
                if body.len() < 4 {
                    return;
                }
                let client_addr = u16::from_le_bytes([body[0], body[1]]);
                let client_flow = u16::from_le_bytes([body[2], body[3]]);
                let status = if self.serving.is_empty() {
                    ConnectStatus::NoServer
                } else if self.shared.cm.lookup(c_id).is_ok() {
                    ConnectStatus::Duplicate
                } else {
                    let src_flow = self.serving[self.connect_rr % self.serving.len()];
                    self.connect_rr = self.connect_rr.wrapping_add(1);
                    let tuple = ConnectionTuple {
                        src_flow,
                        dest_addr: client_addr,
                        load_balancer: self.shared.soft.view().lb,
                    };
                    if let Ok(Some(_)) = self.shared.cm.open(c_id, tuple) {
                        NicStats::bump(&stats.cm_evictions, 1);
                    }
                    ConnectStatus::Ok
                };
                let ack = ConnectAck {
                    status,
                    client_flow,
                    server_addr: self.shared.addr,
                };
                let reply = RpcFrame::control(FrameKind::ConnectAck, client_addr, c_id, &ack.encode());
                self.send(&reply.encode(), sink, stats);
            }
            FrameKind::ConnectAck => {
                let Some(ack) = ConnectAck::decode(frame.chunk()) else {
                    NicStats::bump(&stats.drops, 1);
                    return;
                };
                if ack.status == ConnectStatus::Ok {
                    let tuple = ConnectionTuple {
                        src_flow: ack.client_flow,
                        dest_addr: ack.server_addr,
                        load_balancer: LoadBalancer::Static,
                    };
                    match self.shared.cm.open(c_id, tuple) {
                        Ok(Some(_)) => NicStats::bump(&stats.cm_evictions, 1),
                        Ok(None) => {}
                        Err(_) => {
                            NicStats::bump(&stats.drops, 1);
                            return;
                        }
                    }
                }
                self.enqueue(ack.client_flow, &entry, now, stats);
            }
            FrameKind::Disconnect => {
                NicStats::bump(&stats.frames_delivered, 1);
                self.shared.cm.close(c_id);
            }
        }
    }

    fn lookup(&self, c_id: u32, stats: &NicStats) -> Option<ConnectionTuple> {
        match self.shared.cm.lookup(c_id) {
            Ok(t) => {
                NicStats::bump(&stats.cm_hits, 1);
                Some(t)
            }
            Err(_) => {
                NicStats::bump(&stats.cm_misses, 1);
                NicStats::bump(&stats.drops, 1);
                None
            }
        }
    }

    /// All frames of one request land on the same flow.
    fn steer_request(&mut self, frame: &RpcFrame, tuple: ConnectionTuple, now: u64) -> Option<FlowId> {
        let key = (frame.connection_id, frame.rpc_id);
        if frame.frame_count > 1 && frame.frame_index > 0 {
            if let Some(&(flow, _)) = self.steer_memo.get(&key) {
                if frame.is_last() {
                    self.steer_memo.remove(&key);
                }
                return Some(flow);
            }
        }
        let flow = match tuple.load_balancer {
            LoadBalancer::Static => tuple.src_flow,
            policy => {
                if self.serving.is_empty() {
                    return None;
                }
                let view = self.shared.soft.view();
                let i = lb_steer(policy, frame.chunk(), view.key, 0, self.serving.len(), &mut self.lb_state);
                self.serving[i as usize]
            }
        };
        if frame.frame_count > 1 && frame.frame_index == 0 {
            self.steer_memo.insert(key, (flow, now));
        }
        Some(flow)
    }

    /// Put a frame on `flow`'s FIFO, or behind it in the flow's backlog when
    /// the FIFO is full. Counts a drop when neither has room.
    fn enqueue(&mut self, flow: FlowId, entry: &Entry64, now: u64, stats: &NicStats) -> bool {
        if self.flows.get(flow as usize).is_none_or(Option::is_none) {
            NicStats::bump(&stats.drops, 1);
            return false;
        }
        let queue = &mut self.backlog[flow as usize];
        if queue.is_empty() && self.buffer.accept(flow, entry, now).is_ok() {
            return true;
        }
        if self.backlog_len >= DEFAULT_BACKLOG {
            NicStats::bump(&stats.drops, 1);
            return false;
        }
        queue.push_back(*entry);
        self.backlog_len += 1;
        true
    }

    fn refill(&mut self, flow: FlowId, now: u64) {
        let queue = &mut self.backlog[flow as usize];
        while let Some(entry) = queue.front() {
            if self.buffer.accept(flow, entry, now).is_err() {
                break;
            }
            queue.pop_front();
            self.backlog_len -= 1;
        }
    }

    fn refill_all(&mut self, now: u64) {
        if self.backlog_len == 0 {
            return;
        }
        for f in 0..self.backlog.len() {
            self.refill(f as FlowId, now);
        }
    }

    /// Frames waiting behind full Flow FIFOs.
    pub fn backlog_len(&self) -> usize {
        self.backlog_len
    }

    fn deliver(&mut self, flow: FlowId, partial: bool, stats: &NicStats) {
        let slot = self.flows[flow as usize]
            .as_mut()
            .expect("scheduled flows are attached");
        let n = slot.end.rx.push(&self.batch);
        debug_assert_eq!(n, self.batch.len(), "scheduler checked RX room");
        NicStats::bump(&stats.frames_delivered, n as u64);
        NicStats::bump(&stats.batches_sent, 1);
        if partial {
            NicStats::bump(&stats.partial_batches, 1);
        }
        self.window_frames += n as u64;
    }

    fn update_rate(&mut self, now: u64) {
        let dt = now.saturating_sub(self.window_start);
        if dt >= RATE_WINDOW_NS {
            self.rate = self.window_frames as f64 * 1e9 / dt as f64;
            self.window_frames = 0;
            self.window_start = now;
        }
    }
}

