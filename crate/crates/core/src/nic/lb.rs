//! Request steering.

use super::cm::LoadBalancer;
use crate::rings::FlowId;

/// Bytes of the request payload used as the object key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectKey {
    pub offset: usize,
    pub len: usize,
}

impl Default for ObjectKey {
    fn default() -> Self {
        ObjectKey { offset: 0, len: 8 }
    }
}

impl ObjectKey {
    /// The key bytes of `payload`, clipped to what is present.
    pub fn slice<'a>(&self, payload: &'a [u8]) -> &'a [u8] {
        let start = self.offset.min(payload.len());
        let end = (self.offset + self.len).min(payload.len());
        &payload[start..end]
    }
}

/// 64-bit FNV-1a. Stable across runs and platforms; not cryptographic.
pub fn hash64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

#[derive(Debug, Default, Clone)]
pub struct LbState {
    next: usize,
}

/// Pick a flow for an incoming request.
///
/// `Uniform` and `ObjectLevel` return an index in `0..n_flows`; `Static`
/// returns `static_flow` unchanged.
pub fn lb_steer(
    policy: LoadBalancer,
    payload: &[u8],
    key: ObjectKey,
    static_flow: FlowId,
    n_flows: usize,
    state: &mut LbState,
) -> FlowId {
    assert!(n_flows >= 1, "at least one flow");
    match policy {
        LoadBalancer::Uniform => {
            let f = state.next % n_flows;
            state.next = state.next.wrapping_add(1);
            f as FlowId
        }
        LoadBalancer::Static => static_flow,
        LoadBalancer::ObjectLevel => (hash64(key.slice(payload)) % n_flows as u64) as FlowId,
    }
}
