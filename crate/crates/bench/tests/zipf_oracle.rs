use nicrpc_bench::zipf::{harmonic, ZipfError, ZipfGenerator};
use proptest::prelude::*;

/// Upper 1% point of chi-square with 99 degrees of freedom.
const CHI2_99_DF_1PCT: f64 = 134.642;

#[test]
fn top_rank_frequency_matches_closed_form() {
    let n = 100_000;
    let mut z = ZipfGenerator::new(n, 0.99, 7).unwrap();
    let draws = 1_000_000;
    let hits = (0..draws).filter(|_| z.next_rank() == 1).count();
    let expect = 1.0 / harmonic(n, 0.99);
    let got = hits as f64 / draws as f64;
    assert!((got / expect - 1.0).abs() < 0.02, "top-1 {got} vs {expect}");
}

#[test]
fn zero_skew_is_uniform_by_chi_square() {
    let n = 100;
    let mut z = ZipfGenerator::new(n, 0.0, 11).unwrap();
    let draws = 200_000;
    let mut counts = vec![0u64; n as usize];
    for _ in 0..draws {
        counts[z.next_rank() as usize - 1] += 1;
    }
    let e = draws as f64 / n as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    assert!(chi2 < CHI2_99_DF_1PCT, "chi2 {chi2}");
}

#[test]
fn probabilities_sum_to_one() {
    let z = ZipfGenerator::new(5_000, 1.2, 1).unwrap();
    let total: f64 = (1..=5_000).map(|k| z.probability(k)).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert_eq!(z.probability(0), 0.0);
    assert_eq!(z.probability(5_001), 0.0);
}

#[test]
fn normalization_is_the_harmonic_number() {
    let z = ZipfGenerator::new(1_000, 0.99, 1).unwrap();
    assert!((z.normalization() - harmonic(1_000, 0.99)).abs() < 1e-9);
    assert_eq!(harmonic(4, 1.0), 1.0 + 0.5 + 1.0 / 3.0 + 0.25);
}

#[test]
fn rejects_bad_parameters() {
    assert_eq!(ZipfGenerator::new(0, 1.0, 1).unwrap_err(), ZipfError::EmptyKeyspace);
    assert!(matches!(ZipfGenerator::new(10, -0.5, 1), Err(ZipfError::BadSkew(_))));
    assert!(matches!(ZipfGenerator::new(10, f64::NAN, 1), Err(ZipfError::BadSkew(_))));
}

#[test]
fn same_seed_same_sequence() {
    let mut a = ZipfGenerator::new(1_000, 0.99, 42).unwrap();
    let mut b = ZipfGenerator::new(1_000, 0.99, 42).unwrap();
    assert!((0..10_000).all(|_| a.next_rank() == b.next_rank()));
}

proptest! {
    #[test]
    fn ranks_stay_in_range(n in 1u64..2_000, s in 0.0f64..3.0, seed: u64) {
        let mut z = ZipfGenerator::new(n, s, seed).unwrap();
        for _ in 0..200 {
            let r = z.next_rank();
            prop_assert!((1..=n).contains(&r));
        }
    }

    #[test]
    fn probability_never_increases_with_rank(n in 2u64..500, s in 0.0f64..3.0) {
        let z = ZipfGenerator::new(n, s, 0).unwrap();
        for k in 1..n {
            prop_assert!(z.probability(k) >= z.probability(k + 1));
        }
    }
}
