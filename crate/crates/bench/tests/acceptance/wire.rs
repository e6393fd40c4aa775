//! Fragmentation, frame encoding and argument encoding round trips over
//! 10^4 random messages, with duplicated frames mixed in.

use std::collections::VecDeque;

use nicrpc::wire::{
    decode_args, encode_args, fragment, FieldDesc, FieldType, FieldValue, FrameKind, Reassembler, RpcFrame,
    RpcMessage,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensure;

const MESSAGES: usize = 10_000;
/// Messages interleaved on the wire at once.
const GROUP: usize = 8;

fn message(rng: &mut ChaCha8Rng, rpc_id: u32) -> RpcMessage {
    let len = rng.gen_range(1..=4096);
    RpcMessage {
        connection_id: rng.gen(),
        rpc_id,
        kind: if rng.gen() { FrameKind::Request } else { FrameKind::Response },
        function_id: rng.gen(),
        payload: (0..len).map(|_| rng.gen()).collect(),
    }
}

fn args(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let descs: Vec<FieldDesc> = (0..rng.gen_range(0..8))
        .map(|_| match rng.gen_range(0..3) {
            0 => FieldDesc::new("a", FieldType::Int32),
            1 => FieldDesc::new("b", FieldType::Int64),
            _ => FieldDesc::new("c", FieldType::Char(rng.gen_range(1..64))),
        })
        .collect();
    let values: Vec<FieldValue> = descs
        .iter()
        .map(|d| match d.ty {
            FieldType::Int32 => FieldValue::Int32(rng.gen()),
            FieldType::Int64 => FieldValue::Int64(rng.gen()),
            FieldType::Char(n) => {
                let len = rng.gen_range(0..=n);
                FieldValue::Chars((0..len).map(|_| rng.gen_range(1..=255)).collect())
            }
        })
        .collect();
    let bytes = encode_args(&descs, &values).map_err(|e| e.to_string())?;
    let back = decode_args(&descs, &bytes).map_err(|e| e.to_string())?;
    ensure(back == values, || format!("args {values:?} decoded as {back:?}"))
}

pub fn check() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut r = Reassembler::default();
    let (mut done, mut frames, mut dups) = (0usize, 0usize, 0usize);
    for group in 0..MESSAGES / GROUP {
        let msgs: Vec<RpcMessage> = (0..GROUP)
            .map(|i| message(&mut rng, (group * GROUP + i) as u32))
            .collect();
        let mut queues: Vec<VecDeque<RpcFrame>> = msgs
            .iter()
            .map(|m| fragment(m, 7, 4096).map(Into::into))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let mut out: Vec<RpcMessage> = Vec::new();
        let mut sent: Vec<RpcFrame> = Vec::new();
        while queues.iter().any(|q| !q.is_empty()) {
            let live: Vec<usize> = (0..GROUP).filter(|&i| !queues[i].is_empty()).collect();
            let f = queues[*live.choose(&mut rng).unwrap()].pop_front().unwrap();
            // resend an earlier frame now and then
            let dup = (!sent.is_empty() && rng.gen_ratio(1, 8)).then(|| sent[rng.gen_range(0..sent.len())].clone());
            for f in std::iter::once(f).chain(dup.clone()) {
                let bytes = f.encode();
                let back = RpcFrame::decode(&bytes).map_err(|e| e.to_string())?;
                ensure(back == f, || format!("frame {f:?} decoded as {back:?}"))?;
                if let Some(m) = r.push(&back, 0).map_err(|e| e.to_string())? {
                    out.push(m);
                }
                frames += 1;
                sent.push(f);
            }
            dups += dup.is_some() as usize;
        }
        // a late duplicate of a finished message completes nothing
        for f in sent.choose_multiple(&mut rng, 4) {
            ensure(r.push(f, 0).map_err(|e| e.to_string())?.is_none(), || "duplicate completed a message".into())?;
            dups += 1;
        }
        ensure(out.len() == GROUP, || format!("group {group}: {} of {GROUP} messages", out.len()))?;
        out.sort_by_key(|m| m.rpc_id);
        ensure(out == msgs, || format!("group {group}: reassembled messages differ"))?;
        done += out.len();
        args(&mut rng)?;
    }
    ensure(r.pending() == 0, || format!("{} partial messages left", r.pending()))?;
    Ok(format!("{done} messages, {frames} frames, {dups} duplicates ignored"))
}
