//! Polling ring-based RPC fabric.

// `!(x > 0.0)` style checks are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clock;
pub mod fabric;
pub mod idl;
pub mod ifmodel;
pub mod nic;
pub mod rings;
pub mod rpc;
pub mod wire;
