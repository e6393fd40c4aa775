//! Run summaries, percentiles and trace breakdowns.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nicrpc::ifmodel::nearest_rank;
use nicrpc::rpc::TraceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Percentiles {
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
}

/// Nearest-rank percentiles; sorts `samples` in place.
pub fn percentiles(samples: &mut [u64]) -> Option<Percentiles> {
    if samples.is_empty() {
        return None;
    }
    samples.sort_unstable();
    Some(Percentiles {
        p50: nearest_rank(samples, 50.0),
        p90: nearest_rank(samples, 90.0),
        p99: nearest_rank(samples, 99.0),
    })
}

/// Time split for one tier: waiting before the handler vs inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct TierBreakdown {
    pub tier: String,
    pub count: u64,
    pub queue_p50_ns: u64,
    pub handler_p50_ns: u64,
    pub queue_mean_ns: f64,
    pub handler_mean_ns: f64,
}

pub const TIER_CSV_HEADER: &str = "tier,count,queue_p50_us,handler_p50_us,queue_mean_us,handler_mean_us";

impl TierBreakdown {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{:.3},{:.3},{:.3},{:.3}",
            self.tier,
            self.count,
            self.queue_p50_ns as f64 / 1e3,
            self.handler_p50_ns as f64 / 1e3,
            self.queue_mean_ns / 1e3,
            self.handler_mean_ns / 1e3
        )
    }
}

/// Per-tier breakdown, tiers in name order.
pub fn tier_breakdown(records: &[TraceRecord]) -> Vec<TierBreakdown> {
    let mut by_tier: BTreeMap<&str, (Vec<u64>, Vec<u64>)> = BTreeMap::new();
    for r in records {
        let e = by_tier.entry(&r.tier).or_default();
        e.0.push(r.t_dispatch_ns.saturating_sub(r.t_arrive_ns));
        e.1.push(r.t_handler_done_ns.saturating_sub(r.t_dispatch_ns));
    }
    by_tier
        .into_iter()
        .map(|(tier, (mut q, mut h))| {
            let mean = |v: &[u64]| v.iter().sum::<u64>() as f64 / v.len() as f64;
            let (qm, hm) = (mean(&q), mean(&h));
            TierBreakdown {
                tier: tier.to_string(),
                count: q.len() as u64,
                queue_p50_ns: percentiles(&mut q).map_or(0, |p| p.p50),
                handler_p50_ns: percentiles(&mut h).map_or(0, |p| p.p50),
                queue_mean_ns: qm,
                handler_mean_ns: hm,
            }
        })
        .collect()
}

pub const TRACE_CSV_HEADER: &str =
    "trace_id,tier,rpc_id,t_arrive_ns,t_dispatch_ns,t_handler_done_ns,t_reply_ns";

pub fn trace_csv(records: &[TraceRecord]) -> String {
    let mut s = String::from(TRACE_CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.trace_id, r.tier, r.rpc_id, r.t_arrive_ns, r.t_dispatch_ns, r.t_handler_done_ns, r.t_reply_ns
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub bench: String,
    /// Requests per second the generator aimed for; zero for closed loop.
    pub offered_rps: f64,
    pub achieved_rps: f64,
    pub completed: u64,
    pub dropped: u64,
    pub latency: Option<Percentiles>,
    pub tiers: Vec<TierBreakdown>,
}

pub const REPORT_CSV_HEADER: &str =
    "bench,offered_rps,achieved_rps,completed,dropped,drop_rate,p50_us,p90_us,p99_us";

impl RunReport {
    /// Build from end-to-end latencies gathered over `elapsed_ns`.
    pub fn from_samples(
        bench: &str,
        offered_rps: f64,
        mut latencies_ns: Vec<u64>,
        dropped: u64,
        elapsed_ns: u64,
    ) -> Self {
        let completed = latencies_ns.len() as u64;
        RunReport {
            bench: bench.to_string(),
            offered_rps,
            achieved_rps: if elapsed_ns == 0 {
                0.0
            } else {
                completed as f64 * 1e9 / elapsed_ns as f64
            },
            completed,
            dropped,
            latency: percentiles(&mut latencies_ns),
            tiers: Vec::new(),
        }
    }

    /// Dropped over attempted.
    pub fn drop_rate(&self) -> f64 {
        let total = self.completed + self.dropped;
        if total == 0 {
            0.0
        } else {
            self.dropped as f64 / total as f64
        }
    }

    pub fn csv(&self) -> String {
        let p = self.latency.unwrap_or_default();
        format!(
            "{},{:.1},{:.1},{},{},{:.5},{:.3},{:.3},{:.3}",
            self.bench,
            self.offered_rps,
            self.achieved_rps,
            self.completed,
            self.dropped,
            self.drop_rate(),
            p.p50 as f64 / 1e3,
            p.p90 as f64 / 1e3,
            p.p99 as f64 / 1e3
        )
    }

    /// Run line plus, when traced, a tier table.
    pub fn csv_document(&self) -> String {
        let mut s = format!("{REPORT_CSV_HEADER}\n{}\n", self.csv());
        if !self.tiers.is_empty() {
            s.push('\n');
            s.push_str(TIER_CSV_HEADER);
            s.push('\n');
            for t in &self.tiers {
                s.push_str(&t.csv());
                s.push('\n');
            }
        }
        s
    }

    /// Human-readable summary in microseconds.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{}: {:.0} rps achieved ({} completed, {} dropped, drop rate {:.3}%)",
            self.bench,
            self.achieved_rps,
            self.completed,
            self.dropped,
            self.drop_rate() * 100.0
        );
        if let Some(p) = self.latency {
            let _ = write!(
                s,
                "\n  latency us: p50 {:.1}  p90 {:.1}  p99 {:.1}",
                p.p50 as f64 / 1e3,
                p.p90 as f64 / 1e3,
                p.p99 as f64 / 1e3
            );
        }
        for t in &self.tiers {
            let _ = write!(
                s,
                "\n  {:<14} n={:<8} queue p50 {:>8.1} us  handler p50 {:>8.1} us",
                t.tier,
                t.count,
                t.queue_p50_ns as f64 / 1e3,
                t.handler_p50_ns as f64 / 1e3
            );
        }
        s
    }
}
