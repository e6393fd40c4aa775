//! One writer and three readers on a shared connection cache, then the
//! direct-mapped eviction rule against a brute-force 16-entry model.

use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;

use nicrpc::nic::cm::{CmError, ConnectionCache, ConnectionTuple, LoadBalancer};
use nicrpc::nic::lb::hash64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensure;

const FLOWS: usize = 8;
const WRITER_OPS: usize = 1_000_000;
const ORACLE_OPS: usize = 200_000;

fn checksum(c_id: u32, src_flow: u16, lb: LoadBalancer) -> u16 {
    let mut b = c_id.to_le_bytes().to_vec();
    b.extend_from_slice(&src_flow.to_le_bytes());
    b.push(lb as u8);
    hash64(&b) as u16
}

/// The destination doubles as a checksum over the other fields, so a tuple
/// mixed from two installs fails the check.
fn tuple(c_id: u32, nonce: usize) -> ConnectionTuple {
    let src_flow = (nonce % FLOWS) as u16;
    let lb = LoadBalancer::from_u8((nonce / FLOWS % 3) as u8).unwrap();
    ConnectionTuple {
        src_flow,
        dest_addr: checksum(c_id, src_flow, lb),
        load_balancer: lb,
    }
}

fn concurrent() -> Result<(u64, u64), String> {
    let cm = ConnectionCache::new(64, FLOWS);
    let stop = AtomicBool::new(false);
    thread::scope(|s| {
        let readers: Vec<_> = (0..3u64)
            .map(|r| {
                let (cm, stop) = (&cm, &stop);
                s.spawn(move || -> Result<(u64, u64), String> {
                    let mut rng = ChaCha8Rng::seed_from_u64(r);
                    let (mut hits, mut reads) = (0u64, 0u64);
                    while !stop.load(Ordering::Relaxed) {
                        let c_id = rng.gen_range(0..256u32);
                        reads += 1;
                        if let Ok(t) = cm.lookup(c_id) {
                            if t.dest_addr != checksum(c_id, t.src_flow, t.load_balancer) {
                                return Err(format!("torn tuple for {c_id}: {t:?}"));
                            }
                            hits += 1;
                        }
                    }
                    Ok((hits, reads))
                })
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for i in 0..WRITER_OPS {
            let c_id = rng.gen_range(0..256u32);
            if rng.gen_ratio(1, 4) {
                cm.close(c_id);
            } else {
                cm.open(c_id, tuple(c_id, i)).map_err(|e| e.to_string())?;
            }
            if i % 4096 == 0 {
                // let readers in on a single core
                thread::yield_now();
            }
        }
        stop.store(true, Ordering::Relaxed);
        let mut total = (0, 0);
        for h in readers {
            let (hits, reads) = h.join().expect("reader")?;
            total.0 += hits;
            total.1 += reads;
        }
        Ok(total)
    })
}

fn oracle() -> Result<u64, String> {
    let cm = ConnectionCache::new(16, FLOWS);
    let mut model: [Option<(u32, ConnectionTuple)>; 16] = [None; 16];
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut evictions = 0u64;
    for i in 0..ORACLE_OPS {
        let c = rng.gen_range(0..64u32);
        let slot = (c % 16) as usize;
        match rng.gen_range(0..3) {
            0 => {
                let t = tuple(c, i);
                let want = model[slot].filter(|(old, _)| *old != c).map(|(old, _)| old);
                evictions += want.is_some() as u64;
                model[slot] = Some((c, t));
                let got = cm.open(c, t).map_err(|e| e.to_string())?;
                ensure(got == want, || format!("op {i}: open {c} evicted {got:?}, model {want:?}"))?;
            }
            1 => {
                let present = matches!(model[slot], Some((old, _)) if old == c);
                if present {
                    model[slot] = None;
                }
                let got = cm.close(c);
                ensure(got == present, || format!("op {i}: close {c} -> {got}, model {present}"))?;
            }
            _ => {
                let want = match model[slot] {
                    Some((old, t)) if old == c => Ok(t),
                    _ => Err(CmError::Miss(c)),
                };
                let got = cm.lookup(c);
                ensure(got == want, || format!("op {i}: lookup {c} -> {got:?}, model {want:?}"))?;
            }
        }
    }
    ensure(cm.evictions() == evictions, || {
        format!("evictions {} vs model {evictions}", cm.evictions())
    })?;
    Ok(evictions)
}

pub fn check() -> Result<String, String> {
    let (hits, reads) = concurrent()?;
    ensure(hits > 0, || "readers never hit".into())?;
    let evictions = oracle()?;
    Ok(format!(
        "{WRITER_OPS} writes vs {reads} reads ({hits} consistent hits); {ORACLE_OPS} ops match the N=16 model ({evictions} evictions)"
    ))
}
