//! Browser bindings: interface model sweeps, Zipf histograms and IDL stub
//! generation, all computed client-side.

// `!(x > 0.0)` style checks are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use nicrpc::idl::{generate_stubs, parse_idl, GenOptions};
use nicrpc::ifmodel::{calibrate, sweep, Arrivals, CalibrationTargets, InterfaceModelParams, Method};
use nicrpc_bench::zipf::ZipfGenerator;
use wasm_bindgen::prelude::*;

const SWEEP_REQUESTS: usize = 20_000;

fn params() -> InterfaceModelParams {
    let base = InterfaceModelParams::default();
    calibrate(&CalibrationTargets::default(), &base).map_or(base, |c| c.params)
}

/// Latency/throughput curve for one transfer method. `batch` 0 means
/// automatic batching (coherent polling only). Returns rows of
/// `[offered_mrps, achieved_mrps, median_ns, p99_ns]` flattened.
#[wasm_bindgen]
pub fn sweep_curve(method: &str, batch: u32, max_mrps: f64, points: u32) -> Result<Vec<f64>, JsError> {
    let method: Method = method.parse()?;
    if !(max_mrps > 0.0) || points == 0 || points > 200 {
        return Err(JsError::new("need max_mrps > 0 and 1..=200 points"));
    }
    let auto = batch == 0;
    let p = params().with_batch(batch.max(1) as usize);
    let loads: Vec<f64> = (1..=points).map(|k| max_mrps * k as f64 / points as f64).collect();
    let rows = sweep(method, &p, &loads, SWEEP_REQUESTS, 1, Arrivals::Paced, auto);
    Ok(rows
        .iter()
        .flat_map(|r| [r.offered_mrps, r.achieved_mrps, r.median_ns, r.p99_ns])
        .collect())
}

/// Closed-form saturation throughput of a method in Mrps.
#[wasm_bindgen]
pub fn saturation_mrps(method: &str, batch: u32) -> Result<f64, JsError> {
    let method: Method = method.parse()?;
    Ok(params().with_batch(batch.max(1) as usize).saturation(method) / 1e6)
}

/// Observed and expected frequency of ranks `1..=buckets` after `draws`
/// samples over `n` keys. Returns `[observed.., expected..]`.
#[wasm_bindgen]
pub fn zipf_histogram(n: u32, s: f64, draws: u32, buckets: u32, seed: u32) -> Result<Vec<f64>, JsError> {
    let mut z = ZipfGenerator::new(n as u64, s, seed as u64)?;
    let buckets = buckets.min(n) as usize;
    let mut counts = vec![0u32; buckets];
    for _ in 0..draws {
        let r = z.next_rank() as usize;
        if r <= buckets {
            counts[r - 1] += 1;
        }
    }
    let total = draws.max(1) as f64;
    let mut out: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    out.extend((1..=buckets as u64).map(|k| z.probability(k)));
    Ok(out)
}

/// Rust stubs for an interface definition, or the parse error.
#[wasm_bindgen]
pub fn compile_idl(text: &str) -> Result<String, JsError> {
    let spec = parse_idl(text)?;
    let opts = GenOptions {
        source_name: "input.dgr".into(),
        file_stem: "stubs".into(),
        runtime: "nicrpc".into(),
    };
    Ok(generate_stubs(&spec, &opts)
        .into_iter()
        .map(|f| f.contents)
        .collect::<Vec<_>>()
        .join("\n"))
}
