//! Benchmarks and example services for the `nicrpc` runtime.

// `!(x > 0.0)` style checks are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use thiserror::Error;

pub mod config;
pub mod echo;
pub mod flight;
pub mod kvs;
pub mod report;
pub mod zipf;

/// Stubs generated at build time from `idl/kvs.dgr`.
#[allow(clippy::derivable_impls)]
pub mod kvs_stubs {
    include!(concat!(env!("OUT_DIR"), "/kvs.rs"));
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    ConfigFile(#[from] config::ConfigError),
    #[error(transparent)]
    Rpc(#[from] nicrpc::rpc::RpcError),
    #[error(transparent)]
    Nic(#[from] nicrpc::nic::NicError),
    #[error(transparent)]
    Fabric(#[from] nicrpc::fabric::FabricError),
    #[error(transparent)]
    Wire(#[from] nicrpc::wire::WireError),
    #[error(transparent)]
    Zipf(#[from] zipf::ZipfError),
}
