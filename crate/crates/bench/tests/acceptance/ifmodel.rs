//! Interface model: calibration to the saturation targets and the shape of
//! the coherent-polling latency curves.

use nicrpc::ifmodel::{
    calibrate, simulate, simulate_auto, CalibrationTargets, InterfaceModelParams, Method,
};

use crate::ensure;

const SEEDS: std::ops::RangeInclusive<u64> = 1..=10;
const N: usize = 40_000;

fn calibrated() -> Result<InterfaceModelParams, String> {
    calibrate(&CalibrationTargets::default(), &InterfaceModelParams::default())
        .map(|c| c.params)
        .map_err(|e| e.to_string())
}

/// Simulated throughput when offered twice the closed-form saturation.
fn saturated(p: &InterfaceModelParams, m: Method, seed: u64) -> f64 {
    simulate(m, p, 2.0 * p.saturation(m), N, seed).achieved_throughput
}

pub fn check_calibration() -> Result<String, String> {
    let t = CalibrationTargets::default();
    let p = calibrated()?;
    let points = [
        (Method::Mmio, 1, t.mmio),
        (Method::Doorbell, 1, t.doorbell),
        (Method::DoorbellBatch, t.doorbell_batch.0, t.doorbell_batch.1),
        (Method::CoherentPoll, t.poll.0, t.poll.1),
    ];
    let mut worst = 0.0f64;
    for seed in SEEDS {
        let mut sat = Vec::new();
        for (m, b, target) in points {
            let got = saturated(&p.with_batch(b), m, seed);
            let err = (got / target - 1.0).abs();
            worst = worst.max(err);
            ensure(err <= 0.05, || {
                format!("{m} B={b} seed {seed}: {:.2} Mrps vs {:.2}", got / 1e6, target / 1e6)
            })?;
            sat.push(got);
        }
        let (mmio, db, dbb, poll) = (sat[0], sat[1], sat[2], sat[3]);
        ensure((mmio / db - 1.0).abs() < 0.1 && db.max(mmio) < dbb && dbb < poll, || {
            format!("seed {seed}: ordering broken {sat:?}")
        })?;
        let b1 = saturated(&p.with_batch(1), Method::CoherentPoll, seed);
        let ratio = b1 / poll;
        let want = t.poll_single / t.poll.1;
        ensure((ratio / want - 1.0).abs() <= 0.1, || {
            format!("seed {seed}: B=1:B=4 = {ratio:.3}, want {want:.3}")
        })?;
    }
    Ok(format!(
        "4 targets within {:.2}% over {} seeds; MMIO ~ Doorbell < DoorbellBatch < CoherentPoll; B1:B4 holds",
        worst * 100.0,
        SEEDS.count()
    ))
}

pub fn check_curves() -> Result<String, String> {
    let p = calibrated()?;
    let (p1, p4) = (p.with_batch(1), p.with_batch(4));
    let sat1 = p1.saturation(Method::CoherentPoll);
    let sat4 = p4.saturation(Method::CoherentPoll);

    // B=1 flat from 10% to 95% of its saturation
    let fracs: Vec<f64> = (0..=17).map(|k| 0.10 + 0.05 * k as f64).collect();
    let b1: Vec<f64> = fracs
        .iter()
        .map(|f| simulate(Method::CoherentPoll, &p1, f * sat1, N, 5).median_rtt_ns)
        .collect();
    let (lo, hi) = b1.iter().fold((f64::MAX, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
    ensure(hi / lo - 1.0 <= 0.05, || {
        format!("B=1 median ranges {lo:.0}..{hi:.0} ns over 10-95% load")
    })?;

    // batching costs latency at low load
    let low = 0.1 * sat1;
    let l1 = simulate(Method::CoherentPoll, &p1, low, N, 5).median_rtt_ns;
    let l4 = simulate(Method::CoherentPoll, &p4, low, N, 5).median_rtt_ns;
    ensure(l4 > l1, || format!("low-load B=4 {l4:.0} ns not above B=1 {l1:.0} ns"))?;

    // auto batching: B=1 latency when idle, B=4 throughput when busy
    let a_low = simulate_auto(&p, low, N, 5).median_rtt_ns;
    ensure((a_low / l1 - 1.0).abs() <= 0.05, || {
        format!("auto at low load {a_low:.0} ns vs B=1 {l1:.0} ns")
    })?;
    let high = 0.95 * sat4;
    let a_high = simulate_auto(&p, high, N, 5);
    let h4 = simulate(Method::CoherentPoll, &p4, high, N, 5);
    let h1 = simulate(Method::CoherentPoll, &p1, high, N, 5);
    ensure((a_high.median_rtt_ns / h4.median_rtt_ns - 1.0).abs() <= 0.05, || {
        format!("auto near saturation {:.0} ns vs B=4 {:.0} ns", a_high.median_rtt_ns, h4.median_rtt_ns)
    })?;
    ensure(a_high.achieved_throughput > 1.2 * h1.achieved_throughput, || {
        format!(
            "auto near saturation only {:.2} Mrps (B=1 {:.2})",
            a_high.achieved_throughput / 1e6,
            h1.achieved_throughput / 1e6
        )
    })?;
    Ok(format!(
        "B=1 median {lo:.0}-{hi:.0} ns over 10-95% load; low load B=4 {l4:.0} > B=1 {l1:.0} ns; auto {a_low:.0} ns low, {:.2} Mrps high",
        a_high.achieved_throughput / 1e6
    ))
}
