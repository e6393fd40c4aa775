//! Echo server and load generator.

use std::sync::Arc;

use nicrpc::clock::{now_ns, Backoff};
use nicrpc::fabric::{Fabric, FabricMode};
use nicrpc::nic::config::{HardConfig, SoftSetting};
use nicrpc::rpc::{ClientConfig, RpcClient, RpcError, RpcThreadedServer, ServerConfig, ServiceFactory};
use nicrpc::wire::RpcMessage;

use crate::config::EchoConfig;
use crate::report::RunReport;
use crate::BenchError;

const SERVER: u16 = 1;
const CLIENT: u16 = 2;

pub fn echo_factory() -> ServiceFactory {
    Arc::new(|_| Box::new(|req: &RpcMessage| Some(req.payload.clone())))
}

pub fn run(cfg: &EchoConfig) -> Result<RunReport, BenchError> {
    let mut fabric = Fabric::new(FabricMode::Deterministic);
    let s = fabric.create_virtual_nic(SERVER, HardConfig::default())?;
    let c = fabric.create_virtual_nic(CLIENT, HardConfig::default())?;
    for h in [&s, &c] {
        h.apply(&SoftSetting::Batch(cfg.batch))?;
    }
    let running = fabric.start();
    let server = RpcThreadedServer::new(&s, ServerConfig::default(), echo_factory()).serve()?;

    let mut clients = Vec::with_capacity(cfg.clients);
    for i in 0..cfg.clients {
        let mut cl = RpcClient::with_config(&c, ClientConfig::default())?;
        cl.connect(SERVER, i as u32 + 1)?;
        clients.push(cl);
    }

    let payload = vec![0x5A; cfg.payload_bytes];
    let duration_ns = (cfg.duration_s * 1e9) as u64;
    let gap_ns = if cfg.rate_rps > 0.0 { (1e9 / cfg.rate_rps) as u64 } else { 0 };
    let mut rtts = Vec::new();
    let start = now_ns();
    let mut next_send = start;
    let mut backoff = Backoff::default();
    loop {
        let now = now_ns();
        let sending = now - start < duration_ns;
        let mut progress = false;
        for (i, cl) in clients.iter_mut().enumerate() {
            while sending && cl.outstanding() < cfg.window && (gap_ns == 0 || now_ns() >= next_send) {
                match cl.call_async(i as u32 + 1, 0, &payload) {
                    Ok(_) => {
                        next_send += gap_ns;
                        progress = true;
                    }
                    Err(RpcError::WouldBlock) => break,
                    Err(e) => return Err(e.into()),
                }
            }
            for done in cl.cq_poll(usize::MAX) {
                rtts.push(done.rtt_ns());
                progress = true;
            }
        }
        if !sending && clients.iter().all(|cl| cl.outstanding() == 0) {
            break;
        }
        if progress {
            backoff.reset();
        } else {
            backoff.snooze();
        }
    }
    let elapsed = now_ns() - start;
    let dropped: u64 = clients.iter().map(|cl| cl.counters().timed_out).sum();
    server.stop();
    drop(clients);
    drop(running);
    Ok(RunReport::from_samples("echo", cfg.rate_rps, rtts, dropped, elapsed))
}
