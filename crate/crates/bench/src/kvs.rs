//! Partitioned key-value store: server shards, Zipf load generator and a
//! post-hoc consistency check.

use std::collections::HashMap;
use std::sync::Arc;

use nicrpc::clock::{now_ns, Backoff};
use nicrpc::fabric::{Fabric, FabricMode};
use nicrpc::nic::cm::LoadBalancer;
use nicrpc::nic::config::{HardConfig, SoftSetting};
use nicrpc::nic::lb::{hash64, ObjectKey};
use nicrpc::rpc::{ClientConfig, RpcClient, RpcError, RpcThreadedServer, ServerConfig, ServiceFactory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Dataset, KvsConfig};
use crate::kvs_stubs::{
    key_value_store_ids as ids, GetRequest, GetResponse, KeyValueStoreHandler, KeyValueStoreService,
    SetRequest, SetResponse,
};
use crate::report::RunReport;
use crate::zipf::ZipfGenerator;
use crate::BenchError;

const SERVER: u16 = 1;
const CLIENT: u16 = 2;
const CONN: u32 = 1;
/// Width of the key and value fields in the generated messages; datasets
/// use a prefix and leave the rest zero.
pub const FIELD_LEN: usize = 32;
/// Where the key sits in both request layouts (after the timestamp).
pub const KEY_OFFSET: usize = 4;

pub type Key = [u8; FIELD_LEN];
pub type Value = [u8; FIELD_LEN];

pub fn key_bytes(rank: u64, ds: Dataset) -> Key {
    let mut k = [0u8; FIELD_LEN];
    k[..8].copy_from_slice(&rank.to_le_bytes());
    if ds.key_len() > 8 {
        k[8..16].copy_from_slice(&rank.wrapping_mul(0x9e37_79b9_7f4a_7c15).to_le_bytes());
    }
    k
}

/// Partition owning `key`; the NIC's object-level steering hashes the same
/// bytes.
pub fn partition_of(key: &Key, ds: Dataset, partitions: usize) -> usize {
    (hash64(&key[..ds.key_len()]) % partitions as u64) as usize
}

/// Value id a key holds before any write.
pub fn initial_value(rank: u64) -> u64 {
    rank | 1 << 63
}

fn filler(id: u64, i: usize) -> u8 {
    (id.wrapping_mul(31).wrapping_add(i as u64 * 7) >> 3) as u8
}

pub fn value_bytes(id: u64, ds: Dataset) -> Value {
    let mut v = [0u8; FIELD_LEN];
    v[..8].copy_from_slice(&id.to_le_bytes());
    for (i, b) in v.iter_mut().enumerate().take(ds.value_len()).skip(8) {
        *b = filler(id, i);
    }
    v
}

/// The id a value carries, or `None` if its bytes are not a valid value.
pub fn value_id(v: &Value, ds: Dataset) -> Option<u64> {
    let id = u64::from_le_bytes(v[..8].try_into().expect("8 bytes"));
    (value_bytes(id, ds) == *v).then_some(id)
}

/// One partition's store, owned by a single dispatch thread.
pub struct Shard {
    partition: usize,
    map: HashMap<Key, Value>,
}

impl Shard {
    /// Preloads every key of `0..keys` that belongs to this partition.
    pub fn new(partition: usize, partitions: usize, keys: u64, ds: Dataset) -> Self {
        let map = (0..keys)
            .map(|r| (key_bytes(r, ds), r))
            .filter(|(k, _)| partition_of(k, ds, partitions) == partition)
            .map(|(k, r)| (k, value_bytes(initial_value(r), ds)))
            .collect();
        Shard { partition, map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl KeyValueStoreHandler for Shard {
    fn get(&mut self, req: GetRequest) -> GetResponse {
        GetResponse {
            timestamp: req.timestamp,
            value: self.map.get(&req.key).copied().unwrap_or([0; FIELD_LEN]),
            partition: self.partition as i32,
        }
    }

    fn set(&mut self, req: SetRequest) -> SetResponse {
        self.map.insert(req.key, req.value);
        SetResponse {
            timestamp: req.timestamp,
            partition: self.partition as i32,
        }
    }
}

pub fn kvs_factory(partitions: usize, keys: u64, ds: Dataset) -> ServiceFactory {
    Arc::new(move |i| Box::new(KeyValueStoreService(Shard::new(i, partitions, keys, ds))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Get,
    Set,
}

/// One client operation as observed at the client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Op {
    pub kind: OpKind,
    pub key: u64,
    /// Written id for sets, observed id for completed gets.
    pub value: u64,
    pub issue_ns: u64,
    /// `None` if the response never arrived.
    pub complete_ns: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// The value was never written to this key.
    UnknownValue,
    /// The observed write began after the read finished.
    FutureRead,
    /// A newer write had finished before the read began.
    StaleRead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Index of the offending get in the history.
    pub op: usize,
}

/// Single-register check per key. A completed get that observed write `w`
/// is accepted iff `w` started before the get finished and no write `w'`
/// both started after `w` finished and finished before the get started.
/// Unacknowledged writes count as finishing at infinity.
pub fn check_history(ops: &[Op]) -> Vec<Violation> {
    struct Writes {
        /// (issue, ack, id) sorted by issue.
        list: Vec<(u64, u64, u64)>,
        /// Minimum ack over `list[i..]`.
        suffix_min_ack: Vec<u64>,
        by_id: HashMap<u64, usize>,
    }
    let mut per_key: HashMap<u64, Writes> = HashMap::new();
    for o in ops.iter().filter(|o| o.kind == OpKind::Set) {
        per_key
            .entry(o.key)
            .or_insert_with(|| Writes {
                list: Vec::new(),
                suffix_min_ack: Vec::new(),
                by_id: HashMap::new(),
            })
            .list
            .push((o.issue_ns, o.complete_ns.unwrap_or(u64::MAX), o.value));
    }
    for w in per_key.values_mut() {
        w.list.sort_unstable();
        let mut min = u64::MAX;
        w.suffix_min_ack = vec![u64::MAX; w.list.len() + 1];
        for i in (0..w.list.len()).rev() {
            min = min.min(w.list[i].1);
            w.suffix_min_ack[i] = min;
        }
        w.by_id = w.list.iter().enumerate().map(|(i, e)| (e.2, i)).collect();
    }
    let mut out = Vec::new();
    for (i, o) in ops.iter().enumerate() {
        let (OpKind::Get, Some(done)) = (o.kind, o.complete_ns) else { continue };
        let writes = per_key.get(&o.key);
        let kind = if o.value == initial_value(o.key) {
            // no write may have finished before the read started
            writes.is_some_and(|w| w.suffix_min_ack[0] < o.issue_ns).then_some(ViolationKind::StaleRead)
        } else {
            match writes.and_then(|w| w.by_id.get(&o.value).map(|&j| (w, j))) {
                None => Some(ViolationKind::UnknownValue),
                Some((w, j)) => {
                    let (w_issue, w_ack, _) = w.list[j];
                    if w_issue >= done {
                        Some(ViolationKind::FutureRead)
                    } else {
                        let first_after = w.list.partition_point(|e| e.0 <= w_ack);
                        (w.suffix_min_ack[first_after] < o.issue_ns).then_some(ViolationKind::StaleRead)
                    }
                }
            }
        };
        if let Some(kind) = kind {
            out.push(Violation { kind, op: i });
        }
    }
    out
}

/// Additive-increase, multiplicative-decrease window on the drop rate of
/// each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Throttle {
    pub window: usize,
    pub max_window: usize,
    pub budget: f64,
}

impl Throttle {
    pub fn epoch(&mut self, resolved: u64, dropped: u64) {
        if resolved == 0 {
            return;
        }
        if dropped as f64 / resolved as f64 > self.budget {
            self.window = (self.window / 2).max(1);
        } else {
            self.window = (self.window + 1).min(self.max_window);
        }
    }
}

#[derive(Debug, Clone)]
pub struct KvsReport {
    pub run: RunReport,
    pub gets: u64,
    pub sets: u64,
    pub violations: Vec<Violation>,
    /// Completed responses whose serving partition was checked.
    pub affinity_checked: u64,
    pub affinity_mismatches: u64,
    pub final_window: usize,
}

impl KvsReport {
    pub fn affinity(&self) -> f64 {
        if self.affinity_checked == 0 {
            return 0.0;
        }
        1.0 - self.affinity_mismatches as f64 / self.affinity_checked as f64
    }
}

pub fn run(cfg: &KvsConfig, seed: u64) -> Result<KvsReport, BenchError> {
    let hard = HardConfig::default();
    if cfg.partitions > hard.n_flows {
        return Err(BenchError::Config(format!(
            "kvs.partitions must be at most {}",
            hard.n_flows
        )));
    }
    let ds = cfg.dataset;
    let keys = cfg.key_count();
    let mut fabric = Fabric::new(FabricMode::Deterministic);
    let s = fabric.create_virtual_nic(SERVER, hard.clone())?;
    let c = fabric.create_virtual_nic(CLIENT, hard)?;
    s.apply(&SoftSetting::LoadBalancer(LoadBalancer::ObjectLevel))?;
    s.apply(&SoftSetting::ObjectKey(ObjectKey {
        offset: KEY_OFFSET,
        len: ds.key_len(),
    }))?;
    for h in [&s, &c] {
        h.apply(&SoftSetting::Batch(cfg.batch))?;
    }
    let running = fabric.start();
    let server = RpcThreadedServer::new(
        &s,
        ServerConfig {
            dispatch_threads: cfg.partitions,
            tier: Arc::from("kvs"),
            ..ServerConfig::default()
        },
        kvs_factory(cfg.partitions, keys, ds),
    )
    .serve()?;
    // steering indexes serving flows in id order; thread i must own index i
    if server.flows().windows(2).any(|w| w[0] > w[1]) {
        return Err(BenchError::Config("server flows out of order".into()));
    }
    let mut client = RpcClient::with_config(
        &c,
        ClientConfig {
            call_timeout_ns: cfg.call_timeout_ms * 1_000_000,
            ..ClientConfig::default()
        },
    )?;
    client.connect(SERVER, CONN)?;

    let mut zipf = ZipfGenerator::new(keys, cfg.zipf_s, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut throttle = Throttle {
        window: cfg.window,
        max_window: cfg.max_window,
        budget: cfg.drop_budget,
    };
    let mut ops: Vec<Op> = Vec::new();
    let mut inflight: HashMap<u32, usize> = HashMap::new();
    let mut next_write = 1u64;
    let (mut affinity_checked, mut affinity_mismatches) = (0u64, 0u64);
    let mut latencies = Vec::new();

    let duration_ns = (cfg.duration_s * 1e9) as u64;
    let epoch_ns = cfg.epoch_ms.max(1) * 1_000_000;
    let drain_ns = cfg.call_timeout_ms * 1_000_000 * 2;
    let start = now_ns();
    let mut epoch_start = start;
    let (mut epoch_done, mut epoch_timed_out) = (0u64, client.counters().timed_out);
    let mut backoff = Backoff::default();
    loop {
        let now = now_ns();
        let sending = now - start < duration_ns;
        if !sending && (client.outstanding() == 0 || now - start > duration_ns + drain_ns) {
            break;
        }
        let mut progress = false;
        while sending && client.outstanding() < throttle.window {
            let rank = zipf.next_rank() - 1;
            let key = key_bytes(rank, ds);
            let ts = ops.len() as i32;
            // the invocation starts before the request leaves
            let issue_ns = now_ns();
            let (kind, value, res) = if rng.gen_bool(cfg.get_ratio) {
                let req = GetRequest { timestamp: ts, key };
                (OpKind::Get, 0, client.call_async(CONN, ids::GET, &req.encode()))
            } else {
                let id = next_write;
                let req = SetRequest {
                    timestamp: ts,
                    key,
                    value: value_bytes(id, ds),
                };
                (OpKind::Set, id, client.call_async(CONN, ids::SET, &req.encode()))
            };
            match res {
                Ok(rpc_id) => {
                    if kind == OpKind::Set {
                        next_write += 1;
                    }
                    inflight.insert(rpc_id, ops.len());
                    ops.push(Op {
                        kind,
                        key: rank,
                        value,
                        issue_ns,
                        complete_ns: None,
                    });
                    progress = true;
                }
                Err(RpcError::WouldBlock) => break,
                Err(e) => return Err(e.into()),
            }
        }
        for done in client.cq_poll(usize::MAX) {
            progress = true;
            let Some(i) = inflight.remove(&done.rpc_id) else { continue };
            let op = &mut ops[i];
            let partition = match op.kind {
                OpKind::Get => {
                    let r = GetResponse::decode(&done.payload)?;
                    // an unparseable value can never match a write
                    op.value = value_id(&r.value, ds).unwrap_or(0);
                    r.partition
                }
                OpKind::Set => SetResponse::decode(&done.payload)?.partition,
            };
            op.complete_ns = Some(done.completed_ns);
            latencies.push(done.rtt_ns());
            epoch_done += 1;
            affinity_checked += 1;
            if partition as usize != partition_of(&key_bytes(op.key, ds), ds, cfg.partitions) {
                affinity_mismatches += 1;
            }
        }
        let now = now_ns();
        if now - epoch_start >= epoch_ns {
            let t = client.counters().timed_out;
            throttle.epoch(epoch_done + t - epoch_timed_out, t - epoch_timed_out);
            epoch_start = now;
            epoch_done = 0;
            epoch_timed_out = t;
        }
        if progress {
            backoff.reset();
        } else {
            backoff.snooze_or(|t| client.idle_wait(t));
        }
    }
    let elapsed = now_ns() - start;
    server.stop();
    drop(client);
    drop(running);

    let dropped = ops.iter().filter(|o| o.complete_ns.is_none()).count() as u64;
    let gets = ops.iter().filter(|o| o.kind == OpKind::Get).count() as u64;
    Ok(KvsReport {
        run: RunReport::from_samples("kvs", 0.0, latencies, dropped, elapsed),
        gets,
        sets: ops.len() as u64 - gets,
        violations: check_history(&ops),
        affinity_checked,
        affinity_mismatches,
        final_window: throttle.window,
    })
}
