//! Flight registration: worker pools against inline handlers, end-to-end
//! latency at low load, and trace causality for every completion.

use nicrpc_bench::config::{FlightConfig, FlightMode};
use nicrpc_bench::flight::{run, FlightReport};

use crate::ensure;

const BUSY_CLIENTS: usize = 16;
const DROP_BUDGET: f64 = 0.01;

fn flight(mode: FlightMode, clients: usize, duration_s: f64) -> Result<FlightReport, String> {
    let r = run(&FlightConfig {
        mode,
        clients,
        duration_s,
        ..FlightConfig::default()
    })
    .map_err(|e| e.to_string())?;
    ensure(r.causality_checked == r.run.completed && r.causality_violations == 0, || {
        format!(
            "{mode:?}: causality holds for {} of {} completions",
            r.causality_checked - r.causality_violations,
            r.run.completed
        )
    })?;
    Ok(r)
}

fn p50_us(r: &FlightReport) -> f64 {
    r.run.latency.map_or(f64::NAN, |p| p.p50 as f64 / 1e3)
}

pub fn check() -> Result<String, String> {
    let mut completions = 0;
    let simple = flight(FlightMode::Simple, BUSY_CLIENTS, 4.0)?;
    let optimized = flight(FlightMode::Optimized, BUSY_CLIENTS, 4.0)?;
    for r in [&simple, &optimized] {
        completions += r.run.completed;
        ensure(r.run.drop_rate() < DROP_BUDGET, || {
            format!("{:?}: drop rate {:.4}", r.mode, r.run.drop_rate())
        })?;
    }

    // one session, alternating modes so drift hits both alike
    let (mut s_p50, mut o_p50) = (Vec::new(), Vec::new());
    for _ in 0..3 {
        let s = flight(FlightMode::Simple, 1, 1.0)?;
        let o = flight(FlightMode::Optimized, 1, 1.0)?;
        completions += s.run.completed + o.run.completed;
        s_p50.push(p50_us(&s));
        o_p50.push(p50_us(&o));
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (s_low, o_low) = (median(&mut s_p50), median(&mut o_p50));

    let ratio = optimized.run.achieved_rps / simple.run.achieved_rps;
    let summary = format!(
        "optimized {:.0} rps vs simple {:.0} rps = {ratio:.2}x; low-load p50 simple {s_low:.0} us vs optimized {o_low:.0} us; causality 100% of {completions}",
        optimized.run.achieved_rps, simple.run.achieved_rps
    );
    ensure(ratio >= 5.0, || format!("{summary}; want >= 5x"))?;
    ensure(s_low < o_low, || format!("{summary}; want simple faster at low load"))?;
    Ok(summary)
}
