//! Zipf sampler: top-rank frequency against the closed form and a uniform
//! chi-square test at zero skew.

use nicrpc_bench::zipf::ZipfGenerator;

use crate::ensure;

const N: u64 = 10_000;
const DRAWS: usize = 1_000_000;

/// Upper `1 - alpha` quantile of chi-square with `k` degrees of freedom,
/// by the Wilson-Hilferty cube approximation. `z` is the normal quantile.
fn chi2_critical(k: f64, z: f64) -> f64 {
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z * a.sqrt()).powi(3)
}

pub fn check() -> Result<String, String> {
    let mut z = ZipfGenerator::new(N, 0.99, 17).map_err(|e| e.to_string())?;
    // brute-force normalization, independent of the sampler's own
    let h: f64 = (1..=N).map(|k| (k as f64).powf(-0.99)).sum();
    let top = (0..DRAWS).filter(|_| z.next_rank() == 1).count() as f64 / DRAWS as f64;
    let rel = top * h - 1.0;
    ensure(rel.abs() <= 0.02, || format!("top-1 {top:.5} vs {:.5}", 1.0 / h))?;

    let mut u = ZipfGenerator::new(N, 0.0, 18).map_err(|e| e.to_string())?;
    let mut counts = vec![0u32; N as usize];
    for _ in 0..DRAWS {
        counts[u.next_rank() as usize - 1] += 1;
    }
    let e = DRAWS as f64 / N as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // z for alpha = 0.01
    let crit = chi2_critical((N - 1) as f64, 2.326_348);
    ensure(chi2 < crit, || format!("chi2 {chi2:.0} >= {crit:.0}"))?;
    Ok(format!(
        "top-1 {top:.5} vs {:.5} ({:+.2}%); uniform chi2 {chi2:.0} < {crit:.0}",
        1.0 / h,
        rel * 100.0
    ))
}
