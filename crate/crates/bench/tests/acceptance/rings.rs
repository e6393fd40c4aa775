//! 10^6 frames each way through one ring pair with random pauses on both
//! sides; checks order, checksums and slot conservation at checkpoints.

use std::sync::Barrier;
use std::thread;

use nicrpc::nic::lb::hash64;
use nicrpc::rings::{create_with_capacity, Entry64, SlotId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FRAMES: u64 = 1_000_000;
const CHECKPOINTS: u64 = 20;

fn make_entry(seq: u64) -> Entry64 {
    let mut e = [0u8; 64];
    e[..8].copy_from_slice(&seq.to_le_bytes());
    let mut x = seq.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    for b in &mut e[8..56] {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        *b = x as u8;
    }
    let sum = hash64(&e[..56]);
    e[56..].copy_from_slice(&sum.to_le_bytes());
    e
}

fn seq_of(e: &Entry64) -> Result<u64, String> {
    let sum = u64::from_le_bytes(e[56..].try_into().unwrap());
    if sum != hash64(&e[..56]) {
        return Err("torn entry".into());
    }
    Ok(u64::from_le_bytes(e[..8].try_into().unwrap()))
}

fn jitter(rng: &mut ChaCha8Rng) {
    match rng.gen_range(0..256) {
        0..=3 => thread::yield_now(),
        4 => thread::sleep(std::time::Duration::from_micros(rng.gen_range(1..50))),
        _ => {}
    }
}

pub fn check() -> Result<String, String> {
    let (mut app, mut nic) = create_with_capacity(0, 64, 64).map_err(|e| e.to_string())?.split();
    let step = FRAMES / CHECKPOINTS;
    let barrier = Barrier::new(2);
    let (app_res, nic_res) = thread::scope(|s| {
        let barrier = &barrier;
        let app_side = s.spawn(move || -> Result<u64, String> {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let (mut next, mut rx_expect, mut boundary) = (0u64, 0u64, step);
            let mut got = Vec::new();
            while rx_expect < FRAMES {
                for _ in 0..rng.gen_range(1..8) {
                    if next < boundary && app.tx.push(&make_entry(next)).is_ok() {
                        next += 1;
                    }
                }
                got.clear();
                app.rx.poll(rng.gen_range(1..16), &mut got);
                for e in &got {
                    let seq = seq_of(e)?;
                    if seq != rx_expect {
                        return Err(format!("rx expected {rx_expect}, got {seq}"));
                    }
                    rx_expect += 1;
                }
                jitter(&mut rng);
                if rx_expect == boundary && boundary < FRAMES {
                    barrier.wait();
                    barrier.wait();
                    boundary += step;
                }
            }
            Ok(rx_expect)
        });
        let nic_side = s.spawn(move || -> Result<u64, String> {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut fetched: Vec<(SlotId, Entry64)> = Vec::new();
            let mut pending: Vec<Entry64> = Vec::new();
            let (mut tx_expect, mut rx_sent, mut boundary, mut checks) = (0u64, 0u64, step, 0u64);
            while rx_sent < FRAMES {
                fetched.clear();
                nic.tx.poll(rng.gen_range(1..16), &mut fetched);
                let slots: Vec<SlotId> = fetched.iter().map(|f| f.0).collect();
                for (_, e) in &fetched {
                    let seq = seq_of(e)?;
                    if seq != tx_expect {
                        return Err(format!("tx expected {tx_expect}, got {seq}"));
                    }
                    tx_expect += 1;
                    pending.push(*e);
                }
                nic.tx.release(&slots).map_err(|e| e.to_string())?;
                let k = nic.rx.push(&pending);
                pending.drain(..k);
                rx_sent += k as u64;
                let acc = nic.tx.accounting();
                if acc.free + acc.occupied != acc.capacity {
                    return Err(format!("slot accounting {acc:?}"));
                }
                jitter(&mut rng);
                if rx_sent == boundary && boundary < FRAMES {
                    barrier.wait();
                    let acc = nic.tx.accounting();
                    let quiet = acc.occupied == 0 && nic.rx.free_space() == nic.rx.capacity();
                    barrier.wait();
                    if !quiet {
                        return Err(format!("checkpoint {checks}: {acc:?}, rx free {}", nic.rx.free_space()));
                    }
                    checks += 1;
                    boundary += step;
                }
            }
            Ok(checks)
        });
        (app_side.join().expect("app side"), nic_side.join().expect("nic side"))
    });
    let received = app_res?;
    let checks = nic_res?;
    Ok(format!("{received} frames each way in order, {checks} quiet checkpoints conserved"))
}
