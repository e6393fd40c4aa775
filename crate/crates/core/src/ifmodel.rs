//! Discrete-event model of four ways a CPU core can hand 64-byte requests to
//! a NIC: MMIO writes, a doorbell per request, a doorbell per batch, and
//! coherent polling of shared memory.
//!
//! A request passes a tandem of FIFO stages on the client and, mirrored, on
//! the server: CPU issue cost, batch formation, NIC transfer (at most
//! `max_outstanding` batches in flight), a serial NIC pipeline stage per
//! batch, and the top-of-rack hop.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("calibration infeasible: {0}")]
    Infeasible(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Mmio,
    Doorbell,
    DoorbellBatch,
    CoherentPoll,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Mmio,
        Method::Doorbell,
        Method::DoorbellBatch,
        Method::CoherentPoll,
    ];

    fn batched(self) -> bool {
        matches!(self, Method::DoorbellBatch | Method::CoherentPoll)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Mmio => "mmio",
            Method::Doorbell => "doorbell",
            Method::DoorbellBatch => "doorbell-batch",
            Method::CoherentPoll => "poll",
        })
    }
}

impl FromStr for Method {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mmio" => Ok(Method::Mmio),
            "doorbell" | "db" => Ok(Method::Doorbell),
            "doorbell-batch" | "doorbell_batch" | "dbb" => Ok(Method::DoorbellBatch),
            "poll" | "coherent-poll" | "coherent_poll" | "coherent" => Ok(Method::CoherentPoll),
            _ => Err(ModelError::UnknownMethod(s.to_string())),
        }
    }
}

/// Faster fetches once the offered load passes a threshold, standing in for
/// polling from the local cache instead of the LLC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PollSwitch {
    /// Offered load (requests/s) at which the fast path engages.
    pub threshold: f64,
    pub fast_fetch_ns: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceModelParams {
    /// CPU time of one 64-byte MMIO write.
    pub mmio_txn_ns: f64,
    /// NIC DMA read after a doorbell.
    pub doorbell_dma_ns: f64,
    /// CPU time of one 64-byte store into shared memory.
    pub cpu_store_ns: f64,
    pub poll_fetch_ns: f64,
    /// Returning fetched slots; asynchronous, off the request path.
    pub bookkeeping_ns: f64,
    pub max_outstanding: usize,
    pub batch: usize,
    pub tor_delay_ns: f64,
    /// Serial NIC processing per transferred batch.
    pub nic_pipeline_ns: f64,
    /// A partial batch leaves after its first entry waited this long.
    pub flush_timeout_ns: f64,
    pub poll_switch: Option<PollSwitch>,
}

impl Default for InterfaceModelParams {
    fn default() -> Self {
        InterfaceModelParams {
            mmio_txn_ns: 154.0,
            doorbell_dma_ns: 450.0,
            cpu_store_ns: 79.0,
            poll_fetch_ns: 400.0,
            bookkeeping_ns: 400.0,
            max_outstanding: 128,
            batch: 1,
            tor_delay_ns: 300.0,
            nic_pipeline_ns: 1e9 / 7.2e6,
            flush_timeout_ns: 500.0,
            poll_switch: None,
        }
    }
}

impl InterfaceModelParams {
    pub fn with_batch(&self, batch: usize) -> Self {
        InterfaceModelParams {
            batch,
            ..self.clone()
        }
    }

    /// Zero every cost; only the wire remains.
    pub fn zero_cost(tor_delay_ns: f64) -> Self {
        InterfaceModelParams {
            mmio_txn_ns: 0.0,
            doorbell_dma_ns: 0.0,
            cpu_store_ns: 0.0,
            poll_fetch_ns: 0.0,
            bookkeeping_ns: 0.0,
            max_outstanding: 128,
            batch: 1,
            tor_delay_ns,
            nic_pipeline_ns: 0.0,
            flush_timeout_ns: 0.0,
            poll_switch: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let costs = [
            self.mmio_txn_ns,
            self.doorbell_dma_ns,
            self.cpu_store_ns,
            self.poll_fetch_ns,
            self.bookkeeping_ns,
            self.tor_delay_ns,
            self.nic_pipeline_ns,
            self.flush_timeout_ns,
        ];
        if costs.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(ModelError::InvalidParam("costs must be finite and >= 0"));
        }
        if self.max_outstanding == 0 || self.batch == 0 {
            return Err(ModelError::InvalidParam("max_outstanding and batch must be >= 1"));
        }
        Ok(())
    }

    fn batch_for(&self, method: Method) -> usize {
        if method.batched() {
            self.batch
        } else {
            1
        }
    }

    /// Amortized CPU time per request.
    pub fn cpu_cost_ns(&self, method: Method) -> f64 {
        let (m, s) = (self.mmio_txn_ns, self.cpu_store_ns);
        match method {
            Method::Mmio | Method::Doorbell => m + s,
            Method::DoorbellBatch => (m + self.batch as f64 * s) / self.batch as f64,
            Method::CoherentPoll => s,
        }
    }

    fn fetch_ns(&self, method: Method, offered: f64) -> f64 {
        match method {
            Method::Mmio => 0.0,
            Method::Doorbell | Method::DoorbellBatch => self.doorbell_dma_ns,
            Method::CoherentPoll => match self.poll_switch {
                Some(sw) if offered >= sw.threshold => sw.fast_fetch_ns,
                _ => self.poll_fetch_ns,
            },
        }
    }

    /// Closed-form saturation throughput in requests/s.
    pub fn saturation(&self, method: Method) -> f64 {
        let b = self.batch_for(method) as f64;
        let mut limit = f64::INFINITY;
        let cpu = self.cpu_cost_ns(method);
        if cpu > 0.0 {
            limit = limit.min(1e9 / cpu);
        }
        if self.nic_pipeline_ns > 0.0 {
            limit = limit.min(1e9 * b / self.nic_pipeline_ns);
        }
        let fetch = self.fetch_ns(method, 0.0);
        if fetch > 0.0 {
            limit = limit.min(1e9 * b * self.max_outstanding as f64 / fetch);
        }
        limit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Arrivals {
    /// Evenly spaced with +-1% jitter.
    #[default]
    Paced,
    /// Exponential inter-arrival times.
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelResult {
    /// Requests per second.
    pub offered_load: f64,
    pub achieved_throughput: f64,
    pub median_rtt_ns: f64,
    pub p99_rtt_ns: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank<T: Copy>(sorted: &[T], p: f64) -> T {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// One side's pipeline: CPU issue, batching, transfer, NIC stage, wire.
struct Side<'a> {
    params: &'a InterfaceModelParams,
    method: Method,
    batch: usize,
    cpu_free: f64,
    fetch: f64,
    fetch_done: Vec<f64>,
    pipe_free: f64,
}

impl<'a> Side<'a> {
    fn new(params: &'a InterfaceModelParams, method: Method, batch: usize, offered: f64) -> Self {
        Side {
            params,
            method,
            batch,
            cpu_free: 0.0,
            fetch: params.fetch_ns(method, offered),
            fetch_done: Vec::new(),
            pipe_free: 0.0,
        }
    }

    /// `ready[i]` is when request i can start on the CPU; returns when each
    /// request reaches the far end. Requests stay in order.
    fn run(&mut self, ready: &[f64]) -> Vec<f64> {
        let p = self.params;
        let n = ready.len();
        let mut issued = Vec::with_capacity(n);
        for (i, &t) in ready.iter().enumerate() {
            let cost = match self.method {
                Method::Mmio | Method::Doorbell => p.mmio_txn_ns + p.cpu_store_ns,
                Method::CoherentPoll => p.cpu_store_ns,
                Method::DoorbellBatch => {
                    // the doorbell is rung after the last store of a batch
                    let last = (i + 1) % self.batch == 0 || i + 1 == n;
                    p.cpu_store_ns + if last { p.mmio_txn_ns } else { 0.0 }
                }
            };
            let start = t.max(self.cpu_free);
            self.cpu_free = start + cost;
            issued.push(self.cpu_free);
        }

        let mut out = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let (len, batch_ready) = self.form_batch(&issued[i..]);
            let k = self.fetch_done.len();
            let slot_free = if k >= p.max_outstanding {
                self.fetch_done[k - p.max_outstanding]
            } else {
                0.0
            };
            let fetched = batch_ready.max(slot_free) + self.fetch;
            self.fetch_done.push(fetched);
            let start = fetched.max(self.pipe_free);
            self.pipe_free = start + p.nic_pipeline_ns;
            let arrive = self.pipe_free + p.tor_delay_ns;
            out[i..i + len].iter_mut().for_each(|o| *o = arrive);
            i += len;
        }
        out
    }

    fn form_batch(&self, issued: &[f64]) -> (usize, f64) {
        let b = self.batch;
        match self.method {
            Method::Mmio | Method::Doorbell => (1, issued[0]),
            Method::DoorbellBatch => {
                let len = b.min(issued.len());
                (len, issued[len - 1])
            }
            Method::CoherentPoll => {
                if b == 1 {
                    return (1, issued[0]);
                }
                let deadline = issued[0] + self.params.flush_timeout_ns;
                let mut len = 1;
                while len < b && len < issued.len() && issued[len] <= deadline {
                    len += 1;
                }
                if len == b {
                    (len, issued[len - 1])
                } else if len == issued.len() {
                    // end of the run: nothing else will arrive
                    (len, deadline.min(issued[len - 1] + self.params.flush_timeout_ns))
                } else {
                    (len, deadline)
                }
            }
        }
    }
}

fn arrivals(offered: f64, n: usize, kind: Arrivals, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = 1e9 / offered;
    let mut t = 0.0;
    (0..n)
        .map(|_| {
            t += match kind {
                Arrivals::Paced => gap * (1.0 + rng.gen_range(-0.01..=0.01)),
                Arrivals::Poisson => -gap * (1.0 - rng.gen::<f64>()).ln(),
            };
            t
        })
        .collect()
}

/// Simulate `n_requests` requests offered at `offered_load` requests/s.
pub fn simulate(
    method: Method,
    params: &InterfaceModelParams,
    offered_load: f64,
    n_requests: usize,
    seed: u64,
) -> ModelResult {
    simulate_with(method, params, offered_load, n_requests, seed, Arrivals::Paced)
}

pub fn simulate_with(
    method: Method,
    params: &InterfaceModelParams,
    offered_load: f64,
    n_requests: usize,
    seed: u64,
    kind: Arrivals,
) -> ModelResult {
    assert!(offered_load > 0.0 && n_requests >= 10, "need a positive load and some requests");
    let batch = params.batch_for(method);
    let sent = arrivals(offered_load, n_requests, kind, seed);
    let at_server = Side::new(params, method, batch, offered_load).run(&sent);
    let back = Side::new(params, method, batch, offered_load).run(&at_server);

    let lo = n_requests / 10;
    let hi = n_requests * 9 / 10;
    let mut done = back.clone();
    done.sort_by(f64::total_cmp);
    let span = done[hi] - done[lo];
    let achieved = if span > 0.0 {
        (hi - lo) as f64 * 1e9 / span
    } else {
        f64::INFINITY
    };
    let mut rtt: Vec<f64> = (lo..hi).map(|i| back[i] - sent[i]).collect();
    rtt.sort_by(f64::total_cmp);
    ModelResult {
        offered_load,
        achieved_throughput: achieved.min(f64::MAX),
        median_rtt_ns: nearest_rank(&rtt, 50.0),
        p99_rtt_ns: nearest_rank(&rtt, 99.0),
    }
}

/// Batch size under automatic adjustment: 1 below `fraction` of the B=1
/// saturation point, otherwise `high`.
pub fn auto_batch(params: &InterfaceModelParams, load: f64, fraction: f64, high: usize) -> usize {
    let sat1 = params.with_batch(1).saturation(Method::CoherentPoll);
    if load < fraction * sat1 {
        1
    } else {
        high
    }
}

pub const DEFAULT_AUTO_FRACTION: f64 = 0.5;

/// Coherent polling with the batch picked by [`auto_batch`].
pub fn simulate_auto(params: &InterfaceModelParams, load: f64, n: usize, seed: u64) -> ModelResult {
    let b = auto_batch(params, load, DEFAULT_AUTO_FRACTION, 4);
    simulate(Method::CoherentPoll, &params.with_batch(b), load, n, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub offered_mrps: f64,
    pub achieved_mrps: f64,
    pub median_ns: f64,
    pub p99_ns: f64,
}

pub const SWEEP_CSV_HEADER: &str = "offered_mrps,achieved_mrps,median_ns,p99_ns";

impl SweepRow {
    pub fn csv(&self) -> String {
        format!(
            "{:.3},{:.3},{:.0},{:.0}",
            self.offered_mrps, self.achieved_mrps, self.median_ns, self.p99_ns
        )
    }
}

/// `batch = None` with coherent polling uses automatic batching.
pub fn sweep(
    method: Method,
    params: &InterfaceModelParams,
    loads_mrps: &[f64],
    n_requests: usize,
    seed: u64,
    kind: Arrivals,
    auto: bool,
) -> Vec<SweepRow> {
    loads_mrps
        .iter()
        .map(|&mrps| {
            let load = mrps * 1e6;
            let p = if auto && method == Method::CoherentPoll {
                params.with_batch(auto_batch(params, load, DEFAULT_AUTO_FRACTION, 4))
            } else {
                params.clone()
            };
            let r = simulate_with(method, &p, load, n_requests, seed, kind);
            SweepRow {
                offered_mrps: mrps,
                achieved_mrps: r.achieved_throughput / 1e6,
                median_ns: r.median_rtt_ns,
                p99_ns: r.p99_rtt_ns,
            }
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

/// Saturation throughputs to fit, in requests/s.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTargets {
    pub mmio: f64,
    pub doorbell: f64,
    pub doorbell_batch: (usize, f64),
    pub poll: (usize, f64),
    pub poll_single: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        CalibrationTargets {
            mmio: 4.2e6,
            doorbell: 4.3e6,
            doorbell_batch: (11, 10.8e6),
            poll: (4, 12.4e6),
            poll_single: 7.2e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub params: InterfaceModelParams,
    /// (method, batch, target, simulated) for every fitted point.
    pub points: Vec<(Method, usize, f64, f64)>,
}

impl Calibration {
    pub fn max_relative_error(&self) -> f64 {
        self.points
            .iter()
            .map(|(_, _, t, s)| (s / t - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

pub const CALIBRATION_TOLERANCE: f64 = 0.05;

/// Fit `mmio_txn_ns` and `cpu_store_ns` to the four CPU-bound targets by
/// least squares on relative per-request cost, and `nic_pipeline_ns` to the
/// single-entry polling target. Every fitted point is then re-measured by
/// simulation; any miss beyond 5% is reported as infeasible.
pub fn calibrate(targets: &CalibrationTargets, base: &InterfaceModelParams) -> Result<Calibration, ModelError> {
    let all = [
        targets.mmio,
        targets.doorbell,
        targets.doorbell_batch.1,
        targets.poll.1,
        targets.poll_single,
    ];
    if all.iter().any(|t| !(*t > 0.0)) || targets.doorbell_batch.0 == 0 || targets.poll.0 == 0 {
        return Err(ModelError::InvalidParam("targets must be positive"));
    }
    let (bb, bp) = (targets.doorbell_batch.0 as f64, targets.poll.0 as f64);
    // cost per request = a*m + b*s, observed cost = 1e9 / target
    let rows = [
        (1.0, 1.0, 1e9 / targets.mmio),
        (1.0, 1.0, 1e9 / targets.doorbell),
        (1.0 / bb, 1.0, 1e9 / targets.doorbell_batch.1),
        (0.0, 1.0, 1e9 / targets.poll.1),
    ];
    let (mut saa, mut sab, mut sbb, mut sa1, mut sb1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, b, c) in rows {
        let (a, b) = (a / c, b / c);
        saa += a * a;
        sab += a * b;
        sbb += b * b;
        sa1 += a;
        sb1 += b;
    }
    let det = saa * sbb - sab * sab;
    if det.abs() < 1e-18 {
        return Err(ModelError::Infeasible("targets do not separate MMIO and store cost".into()));
    }
    let m = (sa1 * sbb - sb1 * sab) / det;
    let s = (saa * sb1 - sab * sa1) / det;
    if !(m >= 0.0) || !(s > 0.0) {
        return Err(ModelError::Infeasible(format!(
            "fit gives negative cost (mmio {m:.1} ns, store {s:.1} ns)"
        )));
    }
    let pipeline = 1e9 / targets.poll_single;
    if 1e9 * bp / pipeline < targets.poll.1 {
        return Err(ModelError::Infeasible(
            "batched polling target exceeds what the NIC pipeline allows".into(),
        ));
    }
    let params = InterfaceModelParams {
        mmio_txn_ns: m,
        cpu_store_ns: s,
        nic_pipeline_ns: pipeline,
        ..base.clone()
    };
    params.validate()?;

    let checks = [
        (Method::Mmio, 1, targets.mmio),
        (Method::Doorbell, 1, targets.doorbell),
        (Method::DoorbellBatch, targets.doorbell_batch.0, targets.doorbell_batch.1),
        (Method::CoherentPoll, targets.poll.0, targets.poll.1),
        (Method::CoherentPoll, 1, targets.poll_single),
    ];
    let mut points = Vec::new();
    for (method, b, target) in checks {
        let p = params.with_batch(b);
        let got = simulate(method, &p, 2.0 * p.saturation(method), 20_000, 1).achieved_throughput;
        if (got / target - 1.0).abs() > CALIBRATION_TOLERANCE {
            return Err(ModelError::Infeasible(format!(
                "{method} B={b}: simulated {:.2} Mrps vs target {:.2}",
                got / 1e6,
                target / 1e6
            )));
        }
        points.push((method, b, target, got));
    }
    Ok(Calibration { params, points })
}
