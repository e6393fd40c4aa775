//! Application runtime over one NIC: clients bound to flows, completion
//! queues, and threaded servers with dispatch or worker execution.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{Receiver, Sender, TrySendError};
use thiserror::Error;

use crate::clock::{now_ns, Backoff};
use crate::nic::{ConnectAck, ConnectStatus, NicError, NicHandle};
use crate::rings::{AppRx, AppTx, Entry64, FlowId, RingError};
use crate::wire::{
    fragment, frames_for, FrameKind, Reassembler, RpcFrame, RpcMessage, TenantAddr, WireError,
    DEFAULT_MAX_MESSAGE, DEFAULT_REASSEMBLY_TIMEOUT_NS,
};

pub const DEFAULT_CALL_TIMEOUT_NS: u64 = 100_000_000;
pub const DEFAULT_CONNECT_TIMEOUT_NS: u64 = 1_000_000_000;
pub const DEFAULT_WORK_QUEUE: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RpcError {
    #[error("TX ring has no room for the whole message")]
    WouldBlock,
    #[error("connection {0} is not open")]
    ConnectionClosed(u32),
    #[error("connection id {0} already in use")]
    DuplicateConnectionId(u32),
    #[error("no server flow at address {0}")]
    NoServer(TenantAddr),
    #[error("timed out")]
    Timeout,
    #[error("rpc {0} is not outstanding")]
    UnknownRpc(u32),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Nic(#[from] NicError),
}

impl From<RingError> for RpcError {
    fn from(e: RingError) -> Self {
        match e {
            RingError::Full => RpcError::WouldBlock,
            other => RpcError::Nic(NicError::Ring(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub rpc_id: u32,
    pub connection_id: u32,
    pub function_id: u8,
    pub payload: Vec<u8>,
    pub sent_ns: u64,
    pub completed_ns: u64,
}

impl Completion {
    pub fn rtt_ns(&self) -> u64 {
        self.completed_ns - self.sent_ns
    }
}

pub type Callback = Box<dyn FnMut(Completion) + Send>;

/// Completed responses of asynchronous calls, or a continuation invoked in
/// their place.
#[derive(Default)]
pub struct CompletionQueue {
    queue: VecDeque<Completion>,
    callback: Option<Callback>,
}

impl CompletionQueue {
    fn complete(&mut self, c: Completion) {
        match self.callback.as_mut() {
            Some(cb) => cb(c),
            None => self.queue.push_back(c),
        }
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub call_timeout_ns: u64,
    pub connect_timeout_ns: u64,
    pub max_message: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            call_timeout_ns: DEFAULT_CALL_TIMEOUT_NS,
            connect_timeout_ns: DEFAULT_CONNECT_TIMEOUT_NS,
            max_message: DEFAULT_MAX_MESSAGE,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientCounters {
    pub issued: u64,
    pub completed: u64,
    pub timed_out: u64,
    /// Responses that arrived after their call had timed out.
    pub late: u64,
}

struct InFlight {
    connection_id: u32,
    sent_ns: u64,
    deferred: bool,
}

/// One flow's worth of RPC client. Owned by one thread; see [`SharedClient`]
/// for the shared-queue case.
pub struct RpcClient {
    nic: NicHandle,
    flow: FlowId,
    tx: AppTx,
    rx: AppRx,
    cfg: ClientConfig,
    reasm: Reassembler,
    next_rpc: u32,
    inflight: HashMap<u32, InFlight>,
    parked: HashMap<u32, Completion>,
    connections: HashMap<u32, TenantAddr>,
    acks: HashMap<u32, ConnectStatus>,
    cq: CompletionQueue,
    rx_buf: Vec<Entry64>,
    last_expire: u64,
    counters: ClientCounters,
}

impl RpcClient {
    pub fn new(nic: &NicHandle) -> Result<Self, RpcError> {
        Self::with_config(nic, ClientConfig::default())
    }

    pub fn with_config(nic: &NicHandle, cfg: ClientConfig) -> Result<Self, RpcError> {
        let (flow, end) = nic.open_flow(false)?;
        Ok(RpcClient {
            nic: nic.clone(),
            flow,
            tx: end.tx,
            rx: end.rx,
            cfg,
            reasm: Reassembler::new(DEFAULT_REASSEMBLY_TIMEOUT_NS),
            next_rpc: 1,
            inflight: HashMap::new(),
            parked: HashMap::new(),
            connections: HashMap::new(),
            acks: HashMap::new(),
            cq: CompletionQueue::default(),
            rx_buf: Vec::new(),
            last_expire: 0,
            counters: ClientCounters::default(),
        })
    }

    pub fn flow_id(&self) -> FlowId {
        self.flow
    }

    pub fn nic(&self) -> &NicHandle {
        &self.nic
    }

    pub fn counters(&self) -> ClientCounters {
        self.counters
    }

    pub fn outstanding(&self) -> usize {
        self.inflight.len()
    }

    /// Park until a response may have arrived or `timeout` passes. For
    /// event loops that poll this client and have nothing else to do.
    pub fn idle_wait(&self, timeout: Duration) {
        self.rx.wait(timeout);
    }

    pub fn tx_free_slots(&self) -> usize {
        self.tx.free_slots()
    }

    pub fn is_connected(&self, c_id: u32) -> bool {
        self.connections.contains_key(&c_id)
    }

    /// In-band handshake with the NIC at `remote`.
    pub fn connect(&mut self, remote: TenantAddr, c_id: u32) -> Result<(), RpcError> {
        if self.connections.contains_key(&c_id) {
            return Err(RpcError::DuplicateConnectionId(c_id));
        }
        self.acks.remove(&c_id);
        let frame = RpcFrame::control(FrameKind::Connect, remote, c_id, &[0; 4]);
        self.push_blocking(&frame.encode(), self.cfg.connect_timeout_ns)?;
        let deadline = now_ns() + self.cfg.connect_timeout_ns;
        let mut backoff = Backoff::default();
        loop {
            if self.poll() > 0 {
                backoff.reset();
            }
            if let Some(status) = self.acks.remove(&c_id) {
                return match status {
                    ConnectStatus::Ok => {
                        self.connections.insert(c_id, remote);
                        Ok(())
                    }
                    ConnectStatus::Duplicate => Err(RpcError::DuplicateConnectionId(c_id)),
                    ConnectStatus::NoServer => Err(RpcError::NoServer(remote)),
                };
            }
            if now_ns() > deadline {
                return Err(RpcError::Timeout);
            }
            backoff.snooze_or(|t| self.rx.wait(t));
        }
    }

    pub fn disconnect(&mut self, c_id: u32) -> Result<(), RpcError> {
        let remote = self
            .connections
            .remove(&c_id)
            .ok_or(RpcError::ConnectionClosed(c_id))?;
        let frame = RpcFrame::control(FrameKind::Disconnect, remote, c_id, &[0]);
        self.push_blocking(&frame.encode(), self.cfg.connect_timeout_ns)
    }

    fn push_blocking(&mut self, entry: &Entry64, timeout_ns: u64) -> Result<(), RpcError> {
        let deadline = now_ns() + timeout_ns;
        let mut backoff = Backoff::default();
        loop {
            match self.tx.push(entry) {
                Ok(_) => return Ok(()),
                Err(RingError::Full) if now_ns() < deadline => backoff.snooze(),
                Err(RingError::Full) => return Err(RpcError::Timeout),
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn send(&mut self, c_id: u32, function_id: u8, payload: &[u8], deferred: bool) -> Result<u32, RpcError> {
        if !self.connections.contains_key(&c_id) {
            return Err(RpcError::ConnectionClosed(c_id));
        }
        if payload.len() > self.cfg.max_message {
            return Err(WireError::OversizeMessage {
                len: payload.len(),
                max: self.cfg.max_message,
            }
            .into());
        }
        if frames_for(payload.len()) > self.tx.free_slots() {
            return Err(RpcError::WouldBlock);
        }
        let rpc_id = self.next_rpc;
        let msg = RpcMessage {
            connection_id: c_id,
            rpc_id,
            kind: FrameKind::Request,
            function_id,
            payload: payload.to_vec(),
        };
        let frames = fragment(&msg, 0, self.cfg.max_message)?;
        let sent_ns = now_ns();
        for f in &frames {
            self.tx.push_frame(f)?;
        }
        self.next_rpc = self.next_rpc.wrapping_add(1).max(1);
        self.inflight.insert(
            rpc_id,
            InFlight {
                connection_id: c_id,
                sent_ns,
                deferred,
            },
        );
        self.counters.issued += 1;
        Ok(rpc_id)
    }

    /// Issue a request; its response later shows up in the completion queue
    /// (or the callback).
    pub fn call_async(&mut self, c_id: u32, function_id: u8, payload: &[u8]) -> Result<u32, RpcError> {
        self.send(c_id, function_id, payload, false)
    }

    /// Issue a request whose response is collected with [`RpcClient::wait`]
    /// instead of the completion queue.
    pub fn call_deferred(&mut self, c_id: u32, function_id: u8, payload: &[u8]) -> Result<u32, RpcError> {
        self.send(c_id, function_id, payload, true)
    }

    pub fn call_sync(&mut self, c_id: u32, function_id: u8, payload: &[u8]) -> Result<Vec<u8>, RpcError> {
        let mut backoff = Backoff::default();
        let deadline = now_ns() + self.cfg.call_timeout_ns;
        let rpc_id = loop {
            match self.call_deferred(c_id, function_id, payload) {
                Err(RpcError::WouldBlock) if now_ns() < deadline => {
                    self.poll();
                    backoff.snooze();
                }
                other => break other?,
            }
        };
        self.wait(rpc_id).map(|c| c.payload)
    }

    /// Block until the deferred call `rpc_id` completes or times out.
    pub fn wait(&mut self, rpc_id: u32) -> Result<Completion, RpcError> {
        let mut backoff = Backoff::default();
        loop {
            if let Some(c) = self.parked.remove(&rpc_id) {
                return Ok(c);
            }
            let Some(info) = self.inflight.get(&rpc_id) else {
                return Err(RpcError::UnknownRpc(rpc_id));
            };
            if now_ns().saturating_sub(info.sent_ns) > self.cfg.call_timeout_ns {
                self.inflight.remove(&rpc_id);
                self.counters.timed_out += 1;
                return Err(RpcError::Timeout);
            }
            if self.poll() > 0 {
                backoff.reset();
            } else {
                backoff.snooze_or(|t| self.rx.wait(t));
            }
        }
    }

    /// Wait for several deferred calls; fails if any of them fails.
    pub fn wait_all(&mut self, rpc_ids: &[u32]) -> Result<Vec<Completion>, RpcError> {
        let mut out = Vec::with_capacity(rpc_ids.len());
        let mut first_err = None;
        for &id in rpc_ids {
            match self.wait(id) {
                Ok(c) => out.push(c),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// Drain the RX ring. Returns the number of frames consumed.
    pub fn poll(&mut self) -> usize {
        self.rx_buf.clear();
        let n = self.rx.poll(usize::MAX, &mut self.rx_buf);
        let now = now_ns();
        let entries = std::mem::take(&mut self.rx_buf);
        for entry in &entries {
            let Ok(frame) = RpcFrame::decode(entry) else { continue };
            match frame.kind {
                FrameKind::ConnectAck => {
                    if let Some(ack) = ConnectAck::decode(frame.chunk()) {
                        self.acks.insert(frame.connection_id, ack.status);
                    }
                }
                FrameKind::Response => {
                    if let Ok(Some(msg)) = self.reasm.push(&frame, now) {
                        self.complete(msg, now);
                    }
                }
                _ => {}
            }
        }
        self.rx_buf = entries;
        if now.saturating_sub(self.last_expire) > 1_000_000 {
            self.last_expire = now;
            self.expire(now);
        }
        n
    }

    fn complete(&mut self, msg: RpcMessage, now: u64) {
        let Some(info) = self.inflight.remove(&msg.rpc_id) else {
            self.counters.late += 1;
            return;
        };
        debug_assert_eq!(info.connection_id, msg.connection_id);
        self.counters.completed += 1;
        let c = Completion {
            rpc_id: msg.rpc_id,
            connection_id: msg.connection_id,
            function_id: msg.function_id,
            payload: msg.payload,
            sent_ns: info.sent_ns,
            completed_ns: now,
        };
        if info.deferred {
            self.parked.insert(c.rpc_id, c);
        } else {
            self.cq.complete(c);
        }
    }

    fn expire(&mut self, now: u64) {
        self.reasm.expire(now);
        let timeout = self.cfg.call_timeout_ns;
        let before = self.inflight.len();
        // deferred calls time out in wait()
        self.inflight
            .retain(|_, f| f.deferred || now.saturating_sub(f.sent_ns) <= timeout);
        self.counters.timed_out += (before - self.inflight.len()) as u64;
    }

    /// Up to `max` completions, oldest first. Polls the ring first.
    pub fn cq_poll(&mut self, max: usize) -> Vec<Completion> {
        self.poll();
        let n = max.min(self.cq.queue.len());
        self.cq.queue.drain(..n).collect()
    }

    /// Route completions to `cb` from now on; anything already queued is
    /// handed to it first.
    pub fn cq_set_callback(&mut self, mut cb: Callback) {
        for c in self.cq.queue.drain(..) {
            cb(c);
        }
        self.cq.callback = Some(cb);
    }

    pub fn cq_clear_callback(&mut self) {
        self.cq.callback = None;
    }
}

impl Drop for RpcClient {
    fn drop(&mut self) {
        let _ = self.nic.close_flow(self.flow);
    }
}

/// Shared receive queue: several threads multiplexing connections over one
/// client, serialized by a lock.
#[derive(Clone)]
pub struct SharedClient(Arc<Mutex<RpcClient>>);

impl SharedClient {
    pub fn new(client: RpcClient) -> Self {
        SharedClient(Arc::new(Mutex::new(client)))
    }

    pub fn lock(&self) -> std::sync::MutexGuard<'_, RpcClient> {
        self.0.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// One client per flow on the same NIC.
pub struct RpcClientPool {
    clients: Vec<RpcClient>,
}

impl RpcClientPool {
    pub fn new(nic: &NicHandle, n: usize, cfg: ClientConfig) -> Result<Self, RpcError> {
        let clients = (0..n)
            .map(|_| RpcClient::with_config(nic, cfg.clone()))
            .collect::<Result<_, _>>()?;
        Ok(RpcClientPool { clients })
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn get(&mut self, i: usize) -> &mut RpcClient {
        &mut self.clients[i]
    }

    pub fn into_clients(self) -> Vec<RpcClient> {
        self.clients
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HandlerMode {
    /// Run inline on the dispatch thread.
    #[default]
    Dispatch,
    /// Hand off to the worker pool.
    Worker,
}

/// Per-thread request handler. `None` sends no reply.
pub trait Service: Send {
    fn handle(&mut self, req: &RpcMessage) -> Option<Vec<u8>>;
}

impl<F> Service for F
where
    F: FnMut(&RpcMessage) -> Option<Vec<u8>> + Send,
{
    fn handle(&mut self, req: &RpcMessage) -> Option<Vec<u8>> {
        self(req)
    }
}

/// Builds one service instance per executing thread; the argument is a
/// thread index (dispatch threads first, then workers).
pub type ServiceFactory = Arc<dyn Fn(usize) -> Box<dyn Service> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub trace_id: u64,
    pub tier: Arc<str>,
    pub rpc_id: u32,
    pub t_arrive_ns: u64,
    pub t_dispatch_ns: u64,
    pub t_handler_done_ns: u64,
    pub t_reply_ns: u64,
}

pub type TraceIdFn = fn(&[u8]) -> Option<u64>;

#[derive(Clone)]
pub struct ServerConfig {
    pub dispatch_threads: usize,
    pub workers: usize,
    pub work_queue: usize,
    pub modes: HashMap<u8, HandlerMode>,
    pub tier: Arc<str>,
    pub trace: Option<(TraceIdFn, Sender<TraceRecord>)>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            dispatch_threads: 1,
            workers: 0,
            work_queue: DEFAULT_WORK_QUEUE,
            modes: HashMap::new(),
            tier: Arc::from("server"),
            trace: None,
        }
    }
}

#[derive(Debug, Default)]
pub struct ServerCounters {
    pub requests: AtomicU64,
    pub replies: AtomicU64,
    pub queue_drops: AtomicU64,
}

struct Job {
    msg: RpcMessage,
    t_arrive: u64,
    tx: Arc<Mutex<AppTx>>,
}

pub struct RpcThreadedServer {
    nic: NicHandle,
    cfg: ServerConfig,
    factory: ServiceFactory,
}

impl RpcThreadedServer {
    /// Worker pool size defaults to the NIC's flow count when a handler runs
    /// in worker mode and `cfg.workers` is zero.
    pub fn new(nic: &NicHandle, cfg: ServerConfig, factory: ServiceFactory) -> Self {
        RpcThreadedServer {
            nic: nic.clone(),
            cfg,
            factory,
        }
    }

    pub fn serve(self) -> Result<RunningServer, RpcError> {
        let RpcThreadedServer { nic, mut cfg, factory } = self;
        let uses_workers = cfg.modes.values().any(|m| *m == HandlerMode::Worker);
        if uses_workers && cfg.workers == 0 {
            cfg.workers = nic.hard_config().n_flows;
        }
        let stop = Arc::new(AtomicBool::new(false));
        let counters = Arc::new(ServerCounters::default());
        let (job_tx, job_rx) = crossbeam_channel::bounded::<Job>(cfg.work_queue.max(1));
        let mut threads = Vec::new();
        let mut flows = Vec::new();

        let mut ends = Vec::new();
        for _ in 0..cfg.dispatch_threads.max(1) {
            let (flow, end) = nic.open_flow(true)?;
            flows.push(flow);
            ends.push(end);
        }
        for (i, end) in ends.into_iter().enumerate() {
            let ctx = DispatchCtx {
                rx: end.rx,
                tx: Arc::new(Mutex::new(end.tx)),
                service: factory(i),
                cfg: cfg.clone(),
                jobs: job_tx.clone(),
                stop: stop.clone(),
                counters: counters.clone(),
            };
            threads.push(
                std::thread::Builder::new()
                    .name(format!("{}-dispatch-{i}", cfg.tier))
                    .spawn(move || ctx.run())
                    .expect("spawn dispatch thread"),
            );
        }
        drop(job_tx);
        let base = cfg.dispatch_threads.max(1);
        for w in 0..cfg.workers {
            let mut service = factory(base + w);
            let rx: Receiver<Job> = job_rx.clone();
            let stop = stop.clone();
            let counters = counters.clone();
            let cfg = cfg.clone();
            threads.push(
                std::thread::Builder::new()
                    .name(format!("{}-worker-{w}", cfg.tier))
                    .spawn(move || {
                        while !stop.load(Ordering::Relaxed) {
                            match rx.recv_timeout(Duration::from_millis(5)) {
                                Ok(job) => {
                                    let t_dispatch = now_ns();
                                    let reply = service.handle(&job.msg);
                                    let t_done = now_ns();
                                    if let Some(body) = reply {
                                        let mut tx = job.tx.lock().unwrap_or_else(|e| e.into_inner());
                                        send_reply(&mut tx, &job.msg, &body, &stop);
                                        counters.replies.fetch_add(1, Ordering::Relaxed);
                                    }
                                    record(&cfg, &job.msg, job.t_arrive, t_dispatch, t_done);
                                }
                                Err(crossbeam_channel::RecvTimeoutError::Timeout) => {}
                                Err(crossbeam_channel::RecvTimeoutError::Disconnected) => break,
                            }
                        }
                    })
                    .expect("spawn worker thread"),
            );
        }
        Ok(RunningServer {
            nic,
            stop,
            threads,
            flows,
            counters,
        })
    }
}

fn record(cfg: &ServerConfig, msg: &RpcMessage, t_arrive: u64, t_dispatch: u64, t_done: u64) {
    if let Some((extract, sink)) = &cfg.trace {
        if let Some(trace_id) = extract(&msg.payload) {
            let _ = sink.send(TraceRecord {
                trace_id,
                tier: cfg.tier.clone(),
                rpc_id: msg.rpc_id,
                t_arrive_ns: t_arrive,
                t_dispatch_ns: t_dispatch,
                t_handler_done_ns: t_done,
                t_reply_ns: now_ns(),
            });
        }
    }
}

fn send_reply(tx: &mut AppTx, req: &RpcMessage, body: &[u8], stop: &AtomicBool) {
    let msg = RpcMessage {
        connection_id: req.connection_id,
        rpc_id: req.rpc_id,
        kind: FrameKind::Response,
        function_id: req.function_id,
        payload: body.to_vec(),
    };
    let Ok(frames) = fragment(&msg, 0, DEFAULT_MAX_MESSAGE) else { return };
    let mut backoff = Backoff::default();
    for f in &frames {
        let entry = f.encode();
        loop {
            match tx.push(&entry) {
                Ok(_) => break,
                Err(_) if stop.load(Ordering::Relaxed) => return,
                Err(_) => backoff.snooze(),
            }
        }
    }
}

struct DispatchCtx {
    rx: AppRx,
    tx: Arc<Mutex<AppTx>>,
    service: Box<dyn Service>,
    cfg: ServerConfig,
    jobs: Sender<Job>,
    stop: Arc<AtomicBool>,
    counters: Arc<ServerCounters>,
}

impl DispatchCtx {
    fn run(mut self) {
        let mut reasm = Reassembler::new(DEFAULT_REASSEMBLY_TIMEOUT_NS);
        let mut buf = Vec::new();
        let mut backoff = Backoff::default();
        let mut last_expire = 0;
        while !self.stop.load(Ordering::Relaxed) {
            buf.clear();
            if self.rx.poll(usize::MAX, &mut buf) == 0 {
                backoff.snooze_or(|t| self.rx.wait(t));
                continue;
            }
            backoff.reset();
            let now = now_ns();
            for entry in &buf {
                let Ok(frame) = RpcFrame::decode(entry) else { continue };
                if frame.kind != FrameKind::Request {
                    continue;
                }
                if let Ok(Some(msg)) = reasm.push(&frame, now) {
                    self.counters.requests.fetch_add(1, Ordering::Relaxed);
                    self.dispatch(msg, now);
                }
            }
            if now.saturating_sub(last_expire) > 1_000_000 {
                last_expire = now;
                reasm.expire(now);
            }
        }
    }

    fn dispatch(&mut self, msg: RpcMessage, t_arrive: u64) {
        let mode = self.cfg.modes.get(&msg.function_id).copied().unwrap_or_default();
        match mode {
            HandlerMode::Worker => {
                let job = Job {
                    msg,
                    t_arrive,
                    tx: self.tx.clone(),
                };
                if let Err(TrySendError::Full(_) | TrySendError::Disconnected(_)) = self.jobs.try_send(job) {
                    self.counters.queue_drops.fetch_add(1, Ordering::Relaxed);
                }
            }
            HandlerMode::Dispatch => {
                let t_dispatch = now_ns();
                let reply = self.service.handle(&msg);
                let t_done = now_ns();
                if let Some(body) = reply {
                    let mut tx = self.tx.lock().unwrap_or_else(|e| e.into_inner());
                    send_reply(&mut tx, &msg, &body, &self.stop);
                    self.counters.replies.fetch_add(1, Ordering::Relaxed);
                }
                record(&self.cfg, &msg, t_arrive, t_dispatch, t_done);
            }
        }
    }
}

pub struct RunningServer {
    nic: NicHandle,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    flows: Vec<FlowId>,
    counters: Arc<ServerCounters>,
}

impl RunningServer {
    pub fn counters(&self) -> &ServerCounters {
        &self.counters
    }

    pub fn flows(&self) -> &[FlowId] {
        &self.flows
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        for f in self.flows.drain(..) {
            let _ = self.nic.close_flow(f);
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}
