//! Partitioned KVS under throttled Zipf load, 50/50 and 95/5 get/set mixes.

use nicrpc_bench::config::KvsConfig;
use nicrpc_bench::kvs::run;

use crate::ensure;

pub fn check() -> Result<String, String> {
    let mut lines = Vec::new();
    for (get_ratio, seed) in [(0.5, 21), (0.95, 22)] {
        let cfg = KvsConfig {
            get_ratio,
            duration_s: 3.0,
            ..KvsConfig::default()
        };
        let r = run(&cfg, seed).map_err(|e| e.to_string())?;
        let mix = format!("{:.0}/{:.0}", get_ratio * 100.0, (1.0 - get_ratio) * 100.0);
        ensure(r.violations.is_empty(), || {
            format!("{mix}: {} violations, first {:?}", r.violations.len(), r.violations[0])
        })?;
        ensure(r.affinity_checked > 0 && r.affinity_mismatches == 0, || {
            format!("{mix}: {} of {} responses off-partition", r.affinity_mismatches, r.affinity_checked)
        })?;
        ensure(r.run.drop_rate() < cfg.drop_budget, || {
            format!("{mix}: drop rate {:.4}", r.run.drop_rate())
        })?;
        lines.push(format!(
            "{mix} {:.0} krps, {} ops, drops {:.3}%",
            r.run.achieved_rps / 1e3,
            r.gets + r.sets,
            r.run.drop_rate() * 100.0
        ));
    }
    Ok(format!("{}; zero violations, 100% affinity", lines.join("; ")))
}
