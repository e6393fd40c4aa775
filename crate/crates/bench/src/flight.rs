//! Eight-tier flight registration application.
//!
//! Passenger sessions on the passenger frontend call Check-in, which fans
//! out to Flight, Baggage and Passport without blocking, waits for all
//! three, then records the registration in Airport DB. Passport looks the
//! traveller up in Citizens DB. The staff frontend polls Airport DB in the
//! background.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_channel::Receiver;
use nicrpc::clock::{hold_for, now_ns, Backoff};
use nicrpc::fabric::{Fabric, FabricMode};
use nicrpc::nic::config::HardConfig;
use nicrpc::nic::NicHandle;
use nicrpc::rpc::{
    ClientConfig, HandlerMode, RpcClient, RpcError, RpcThreadedServer, RunningServer, ServerConfig, Service,
    ServiceFactory, TraceRecord,
};
use nicrpc::wire::{RpcMessage, TenantAddr};

use crate::config::{FlightConfig, FlightMode};
use crate::report::{tier_breakdown, RunReport};
use crate::BenchError;

pub const PASSENGER_FRONTEND: TenantAddr = 10;
pub const STAFF_FRONTEND: TenantAddr = 11;
pub const CHECKIN: TenantAddr = 12;
pub const FLIGHT: TenantAddr = 13;
pub const BAGGAGE: TenantAddr = 14;
pub const PASSPORT: TenantAddr = 15;
pub const CITIZENS_DB: TenantAddr = 16;
pub const AIRPORT_DB: TenantAddr = 17;

pub const TENANTS: [(&str, TenantAddr); 8] = [
    ("passenger_frontend", PASSENGER_FRONTEND),
    ("staff_frontend", STAFF_FRONTEND),
    ("checkin", CHECKIN),
    ("flight", FLIGHT),
    ("baggage", BAGGAGE),
    ("passport", PASSPORT),
    ("citizens_db", CITIZENS_DB),
    ("airport_db", AIRPORT_DB),
];

const FN_HANDLE: u8 = 0;
const FN_AIRPORT_READ: u8 = 1;
const STATUS_OK: u8 = 1;
const STATUS_FAILED: u8 = 0;

/// Request tracing key: the first eight payload bytes; zero is untraced.
pub fn trace_id(payload: &[u8]) -> Option<u64> {
    let id = u64::from_le_bytes(payload.get(..8)?.try_into().ok()?);
    (id != 0).then_some(id)
}

fn reply(payload: &[u8], status: u8) -> Vec<u8> {
    let mut out = payload.get(..8).unwrap_or(&[0; 8]).to_vec();
    out.push(status);
    out
}

fn ok(payload: &[u8]) -> bool {
    payload.get(8) == Some(&STATUS_OK)
}

/// Hands out connection ids unique across the whole deployment.
#[derive(Debug, Clone)]
struct ConnIds(Arc<AtomicU32>);

impl ConnIds {
    fn next(&self) -> u32 {
        self.0.fetch_add(1, Ordering::Relaxed)
    }
}

struct Leaf {
    service_ns: u64,
}

impl Service for Leaf {
    fn handle(&mut self, req: &RpcMessage) -> Option<Vec<u8>> {
        hold_for(self.service_ns, false);
        Some(reply(&req.payload, STATUS_OK))
    }
}

struct AirportDb {
    service_ns: u64,
    registrations: HashMap<u64, u32>,
}

impl Service for AirportDb {
    fn handle(&mut self, req: &RpcMessage) -> Option<Vec<u8>> {
        hold_for(self.service_ns, false);
        if req.function_id == FN_AIRPORT_READ {
            let mut out = reply(&req.payload, STATUS_OK);
            out.extend_from_slice(&(self.registrations.len() as u64).to_le_bytes());
            return Some(out);
        }
        let passenger = req.payload.get(8..12).map_or(0, |b| u32::from_le_bytes(b.try_into().unwrap()));
        self.registrations.insert(trace_id(&req.payload).unwrap_or(0), passenger);
        Some(reply(&req.payload, STATUS_OK))
    }
}

/// Connects a fresh client on `nic` to each of `remotes`.
fn client_to(nic: &NicHandle, ids: &ConnIds, remotes: &[TenantAddr], timeout_ns: u64) -> (RpcClient, Vec<u32>) {
    let mut client = RpcClient::with_config(
        nic,
        ClientConfig {
            call_timeout_ns: timeout_ns,
            ..ClientConfig::default()
        },
    )
    .expect("client flow");
    let conns = remotes
        .iter()
        .map(|&r| {
            let c = ids.next();
            client.connect(r, c).expect("downstream tier is serving");
            c
        })
        .collect();
    (client, conns)
}

struct Passport {
    service_ns: u64,
    client: RpcClient,
    citizens: u32,
}

impl Service for Passport {
    fn handle(&mut self, req: &RpcMessage) -> Option<Vec<u8>> {
        hold_for(self.service_ns, false);
        let status = match self.client.call_sync(self.citizens, FN_HANDLE, &req.payload) {
            Ok(r) if ok(&r) => STATUS_OK,
            _ => STATUS_FAILED,
        };
        Some(reply(&req.payload, status))
    }
}

struct Checkin {
    client: RpcClient,
    /// Flight, Baggage, Passport, Airport DB.
    conns: Vec<u32>,
}

impl Checkin {
    fn register(&mut self, payload: &[u8]) -> Result<bool, RpcError> {
        let mut rpcs = Vec::with_capacity(3);
        for &c in &self.conns[..3] {
            rpcs.push(self.client.call_deferred(c, FN_HANDLE, payload)?);
        }
        let children = self.client.wait_all(&rpcs)?;
        if !children.iter().all(|c| ok(&c.payload)) {
            return Ok(false);
        }
        let r = self.client.call_sync(self.conns[3], FN_HANDLE, payload)?;
        Ok(ok(&r))
    }
}

impl Service for Checkin {
    fn handle(&mut self, req: &RpcMessage) -> Option<Vec<u8>> {
        let status = match self.register(&req.payload) {
            Ok(true) => STATUS_OK,
            _ => STATUS_FAILED,
        };
        Some(reply(&req.payload, status))
    }
}

#[derive(Debug, Clone)]
pub struct FlightReport {
    pub mode: FlightMode,
    pub run: RunReport,
    pub traces: Vec<TraceRecord>,
    /// Completed check-ins whose trace was verified.
    pub causality_checked: u64,
    pub causality_violations: u64,
    pub staff_reads: u64,
    pub server_queue_drops: u64,
}

impl FlightReport {
    pub fn causality_ratio(&self) -> f64 {
        if self.causality_checked == 0 {
            return 0.0;
        }
        1.0 - self.causality_violations as f64 / self.causality_checked as f64
    }
}

/// Every check-in completion must be preceded by its three fan-out children
/// and its Airport DB write, and Passport by its Citizens DB lookup.
/// Returns the number of `completed` traces that fail.
pub fn check_causality(records: &[TraceRecord], completed: &[u64]) -> u64 {
    let mut by_trace: HashMap<u64, HashMap<&str, &TraceRecord>> = HashMap::new();
    for r in records {
        by_trace.entry(r.trace_id).or_default().insert(&r.tier, r);
    }
    let holds = |t: &u64| -> bool {
        let Some(tiers) = by_trace.get(t) else { return false };
        let get = |name: &str| tiers.get(name).copied();
        let (Some(checkin), Some(airport), Some(passport), Some(citizens)) =
            (get("checkin"), get("airport_db"), get("passport"), get("citizens_db"))
        else {
            return false;
        };
        let mut children_done = 0;
        for name in ["flight", "baggage", "passport"] {
            let Some(c) = get(name) else { return false };
            if c.t_handler_done_ns >= checkin.t_handler_done_ns {
                return false;
            }
            children_done = children_done.max(c.t_handler_done_ns);
        }
        airport.t_arrive_ns > children_done
            && airport.t_handler_done_ns < checkin.t_handler_done_ns
            && citizens.t_handler_done_ns < passport.t_handler_done_ns
    };
    completed.iter().filter(|t| !holds(t)).count() as u64
}

struct Session {
    latencies: Vec<u64>,
    completed: Vec<u64>,
    failed: u64,
}

pub fn run(cfg: &FlightConfig) -> Result<FlightReport, BenchError> {
    let hard = HardConfig {
        n_flows: 32,
        ..HardConfig::default()
    };
    if cfg.clients >= hard.n_flows {
        return Err(BenchError::Config(format!("flight.clients must be below {}", hard.n_flows)));
    }
    let mut fabric = Fabric::new(FabricMode::Deterministic);
    let mut nics = HashMap::new();
    for (name, addr) in TENANTS {
        nics.insert(name, fabric.create_virtual_nic(addr, hard.clone())?);
    }
    let running = fabric.start();
    let ids = ConnIds(Arc::new(AtomicU32::new(1)));
    let timeout_ns = cfg.call_timeout_ms * 1_000_000;
    let (trace_tx, trace_rx) = crossbeam_channel::unbounded();
    let optimized = cfg.mode == FlightMode::Optimized;

    let server_cfg = |tier: &str, worker: bool| {
        let mut c = ServerConfig {
            tier: Arc::from(tier),
            trace: Some((trace_id as fn(&[u8]) -> Option<u64>, trace_tx.clone())),
            ..ServerConfig::default()
        };
        if worker && optimized {
            c.modes.insert(FN_HANDLE, HandlerMode::Worker);
            c.workers = cfg.workers.max(1);
        }
        c
    };
    let leaf = |us: u64| -> ServiceFactory {
        Arc::new(move |_| Box::new(Leaf { service_ns: us * 1_000 }))
    };

    // downstream tiers first so every connect finds a server
    let mut servers: Vec<RunningServer> = Vec::new();
    let serve = |name: &'static str, worker: bool, f: ServiceFactory| {
        RpcThreadedServer::new(&nics[name], server_cfg(name, worker), f).serve()
    };
    servers.push(serve("citizens_db", false, leaf(cfg.citizens_service_us))?);
    let airport_ns = cfg.airport_service_us * 1_000;
    servers.push(serve(
        "airport_db",
        false,
        Arc::new(move |_| {
            Box::new(AirportDb {
                service_ns: airport_ns,
                registrations: HashMap::new(),
            })
        }),
    )?);
    servers.push(serve("flight", true, leaf(cfg.flight_service_us))?);
    servers.push(serve("baggage", false, leaf(cfg.baggage_service_us))?);
    let (pnic, pids, pns) = (nics["passport"].clone(), ids.clone(), cfg.passport_service_us * 1_000);
    servers.push(serve(
        "passport",
        true,
        Arc::new(move |_| {
            let (client, conns) = client_to(&pnic, &pids, &[CITIZENS_DB], timeout_ns);
            Box::new(Passport {
                service_ns: pns,
                client,
                citizens: conns[0],
            })
        }),
    )?);
    let (cnic, cids) = (nics["checkin"].clone(), ids.clone());
    servers.push(serve(
        "checkin",
        true,
        Arc::new(move |_| {
            let (client, conns) = client_to(&cnic, &cids, &[FLIGHT, BAGGAGE, PASSPORT, AIRPORT_DB], timeout_ns);
            Box::new(Checkin { client, conns })
        }),
    )?);
    drop(trace_tx);

    let stop = Arc::new(AtomicBool::new(false));
    let next_trace = Arc::new(AtomicU64::new(1));
    let duration_ns = (cfg.duration_s * 1e9) as u64;
    let start = now_ns();
    let mut sessions = Vec::new();
    for p in 0..cfg.clients {
        let (mut client, conns) = client_to(&nics["passenger_frontend"], &ids, &[CHECKIN], timeout_ns);
        let next_trace = next_trace.clone();
        sessions.push(std::thread::spawn(move || {
            let mut s = Session {
                latencies: Vec::new(),
                completed: Vec::new(),
                failed: 0,
            };
            while now_ns() - start < duration_ns {
                let t = next_trace.fetch_add(1, Ordering::Relaxed);
                let mut payload = t.to_le_bytes().to_vec();
                payload.extend_from_slice(&(p as u32).to_le_bytes());
                let t0 = now_ns();
                match client.call_sync(conns[0], FN_HANDLE, &payload) {
                    Ok(r) if ok(&r) => {
                        s.latencies.push(now_ns() - t0);
                        s.completed.push(t);
                    }
                    _ => s.failed += 1,
                }
            }
            s
        }));
    }
    let staff = {
        let (mut client, conns) = client_to(&nics["staff_frontend"], &ids, &[AIRPORT_DB], timeout_ns);
        let stop = stop.clone();
        let interval = cfg.staff_read_interval_us * 1_000;
        std::thread::spawn(move || {
            let mut reads = 0u64;
            let mut next = now_ns();
            let mut backoff = Backoff::default();
            while !stop.load(Ordering::Relaxed) {
                if interval > 0 && now_ns() >= next && client.outstanding() == 0 {
                    next += interval;
                    let _ = client.call_async(conns[0], FN_AIRPORT_READ, &[0; 8]);
                }
                let n = client.cq_poll(usize::MAX).len() as u64;
                reads += n;
                if n > 0 {
                    backoff.reset();
                } else {
                    backoff.snooze();
                }
            }
            reads
        })
    };

    let mut all = Session {
        latencies: Vec::new(),
        completed: Vec::new(),
        failed: 0,
    };
    for h in sessions {
        let s = h.join().expect("passenger session panicked");
        all.latencies.extend(s.latencies);
        all.completed.extend(s.completed);
        all.failed += s.failed;
    }
    let elapsed = now_ns() - start;
    stop.store(true, Ordering::Relaxed);
    let staff_reads = staff.join().expect("staff session panicked");
    let server_queue_drops = servers
        .iter()
        .map(|s| s.counters().queue_drops.load(Ordering::Relaxed))
        .sum();
    // front to back, so no tier blocks on one already stopped
    for s in servers.into_iter().rev() {
        s.stop();
    }
    drop(running);

    let traces: Vec<TraceRecord> = collect(trace_rx);
    let violations = check_causality(&traces, &all.completed);
    let mut run = RunReport::from_samples(
        &format!("flight-{}", mode_name(cfg.mode)),
        0.0,
        all.latencies,
        all.failed,
        elapsed,
    );
    run.tiers = tier_breakdown(&traces);
    Ok(FlightReport {
        mode: cfg.mode,
        run,
        causality_checked: all.completed.len() as u64,
        causality_violations: violations,
        traces,
        staff_reads,
        server_queue_drops,
    })
}

fn collect(rx: Receiver<TraceRecord>) -> Vec<TraceRecord> {
    rx.try_iter().collect()
}

pub fn mode_name(mode: FlightMode) -> &'static str {
    match mode {
        FlightMode::Simple => "simple",
        FlightMode::Optimized => "optimized",
    }
}
