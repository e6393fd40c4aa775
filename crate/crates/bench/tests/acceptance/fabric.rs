//! Eight busy tenants on one switch: strict round-robin grants and no frame
//! delivered to the wrong tenant over 10^6 frames.

use nicrpc::fabric::{Fabric, FabricMode};
use nicrpc::nic::cm::{ConnectionTuple, LoadBalancer};
use nicrpc::nic::config::HardConfig;
use nicrpc::rings::AppEnd;
use nicrpc::wire::{FrameKind, RpcFrame};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensure;

const N: u16 = 8;
const FRAMES: u64 = 1_000_000;

fn addr(i: u16) -> u16 {
    100 + i
}

fn conn(i: u16, j: u16) -> u32 {
    (i as u32) << 8 | j as u32
}

fn mesh() -> Result<(Fabric, Vec<AppEnd>), String> {
    let mut fabric = Fabric::new(FabricMode::Deterministic);
    let mut apps = Vec::new();
    for i in 0..N {
        let h = fabric
            .create_virtual_nic(addr(i), HardConfig::default())
            .map_err(|e| e.to_string())?;
        let (flow, app) = h.open_flow(true).map_err(|e| e.to_string())?;
        for j in (0..N).filter(|&j| j != i) {
            for c in [conn(i, j), conn(j, i)] {
                h.cm()
                    .open(
                        c,
                        ConnectionTuple {
                            src_flow: flow,
                            dest_addr: addr(j),
                            load_balancer: LoadBalancer::Static,
                        },
                    )
                    .map_err(|e| e.to_string())?;
            }
        }
        apps.push(app);
    }
    Ok((fabric, apps))
}

/// Largest spread of per-port grant counts over every window of `len`
/// consecutive grants.
fn worst_spread(seq: &[u8], len: usize) -> usize {
    let mut count = [0usize; N as usize];
    let mut worst = 0;
    for (k, &p) in seq.iter().enumerate() {
        count[p as usize] += 1;
        if k >= len {
            count[seq[k - len] as usize] -= 1;
        }
        if k + 1 >= len {
            let (lo, hi) = (count.iter().min().unwrap(), count.iter().max().unwrap());
            worst = worst.max(hi - lo);
        }
    }
    worst
}

pub fn check() -> Result<String, String> {
    let (mut fabric, mut apps) = mesh()?;
    // attach the flows before counting
    fabric.arbiter_round();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let per_tenant = FRAMES / N as u64;
    let mut sent = vec![0u64; N as usize];
    let mut grants: Vec<u8> = Vec::new();
    let mut out = Vec::new();
    let mut received = 0u64;
    while received < FRAMES {
        ensure(grants.len() < 100 * FRAMES as usize, || format!("stalled at {received} frames"))?;
        for i in 0..N {
            let iu = i as usize;
            for _ in 0..rng.gen_range(1..8) {
                if sent[iu] == per_tenant {
                    break;
                }
                let j = (i + rng.gen_range(1..N)) % N;
                let mut f = RpcFrame::control(FrameKind::Request, 0, conn(i, j), &[i as u8, j as u8]);
                f.rpc_id = sent[iu] as u32;
                if apps[iu].tx.push_frame(&f).is_err() {
                    break;
                }
                sent[iu] += 1;
            }
        }
        for _ in 0..N {
            let (port, _) = fabric.arbiter_step().ok_or("no NICs")?;
            grants.push(port as u8);
        }
        for (j, app) in apps.iter_mut().enumerate() {
            out.clear();
            app.rx.poll(usize::MAX, &mut out);
            for e in &out {
                let f = RpcFrame::decode(e).map_err(|e| e.to_string())?;
                let (from, to) = (f.chunk()[0] as u16, f.chunk()[1] as usize);
                ensure(to == j && f.dst_addr == addr(j as u16) && f.connection_id == conn(from, j as u16), || {
                    format!("tenant {j} received a frame for {to}: {f:?}")
                })?;
            }
            received += out.len() as u64;
        }
    }
    for h in fabric.handles() {
        ensure(h.stats().total_drops() == 0, || format!("drops at {}: {:?}", h.addr(), h.stats()))?;
    }
    let mut worst = 0;
    for len in [1, 2, 3, 7, 8, 9, 13, 64, 100, 1_000, 12_345] {
        worst = worst.max(worst_spread(&grants, len));
    }
    ensure(worst <= 1, || format!("grant counts spread by {worst} within a window"))?;
    Ok(format!(
        "{received} frames, 0 leaked, 0 dropped; {} grants, max spread {worst} over every window",
        grants.len()
    ))
}
