//! IDL: the key-value listing parses to the expected service definition, generation is
//! byte-stable and matches the checked-in golden file, and the stubs built
//! from it serve get/set over the fabric.

use std::sync::Arc;

use nicrpc::fabric::{Fabric, FabricMode};
use nicrpc::idl::{generate_stubs, parse_idl, FieldSpec, GenOptions, MessageSpec, RpcSpec, ServiceDef};
use nicrpc::nic::config::HardConfig;
use nicrpc::rpc::{RpcClient, RpcThreadedServer, ServerConfig};
use nicrpc::wire::FieldType;
use nicrpc_bench::config::Dataset;
use nicrpc_bench::kvs::{initial_value, key_bytes, kvs_factory, value_bytes, value_id};
use nicrpc_bench::kvs_stubs::{GetRequest, KeyValueStoreClient, SetRequest};

use crate::ensure;

const LISTING: &str = include_str!("../golden/kvs_listing.dgr");
const GOLDEN: &str = "tests/golden/kvs_listing.rs.golden";

fn message(name: &str, fields: &[(&str, FieldType)]) -> MessageSpec {
    MessageSpec {
        name: name.into(),
        fields: fields
            .iter()
            .map(|(n, ty)| FieldSpec { name: (*n).into(), ty: *ty })
            .collect(),
    }
}

fn rpc(name: &str, req: &str, resp: &str) -> RpcSpec {
    RpcSpec {
        name: name.into(),
        request: req.into(),
        response: resp.into(),
    }
}

fn golden() -> Result<String, String> {
    let spec = parse_idl(LISTING).map_err(|e| e.to_string())?;
    let (i32_, c32) = (FieldType::Int32, FieldType::Char(32));
    let want_messages = vec![
        message("GetRequest", &[("timestamp", i32_), ("key", c32)]),
        message("GetResponse", &[("timestamp", i32_), ("value", c32)]),
        message("SetRequest", &[("timestamp", i32_), ("key", c32), ("value", c32)]),
        message("SetResponse", &[("timestamp", i32_), ("status", i32_)]),
    ];
    ensure(spec.messages == want_messages, || format!("messages {:?}", spec.messages))?;
    let want_services = vec![ServiceDef {
        name: "KeyValueStore".into(),
        rpcs: vec![
            rpc("get", "GetRequest", "GetResponse"),
            rpc("set", "SetRequest", "SetResponse"),
        ],
    }];
    ensure(spec.services == want_services, || format!("services {:?}", spec.services))?;

    let opts = GenOptions {
        source_name: "kvs_listing.dgr".into(),
        file_stem: "kvs_listing".into(),
        runtime: "nicrpc".into(),
    };
    let a = generate_stubs(&spec, &opts);
    let b = generate_stubs(&parse_idl(LISTING).map_err(|e| e.to_string())?, &opts);
    ensure(a == b, || "two generations differ".into())?;
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join(GOLDEN);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &a[0].contents).map_err(|e| e.to_string())?;
    }
    let want = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    ensure(a[0].contents == want, || format!("output differs from {GOLDEN}"))?;
    Ok(format!("{} bytes of stubs match {GOLDEN}", want.len()))
}

fn round_trip() -> Result<(), String> {
    let ds = Dataset::Tiny;
    let mut fabric = Fabric::new(FabricMode::Deterministic);
    let s = fabric.create_virtual_nic(1, HardConfig::default()).map_err(|e| e.to_string())?;
    let c = fabric.create_virtual_nic(2, HardConfig::default()).map_err(|e| e.to_string())?;
    let running = fabric.start();
    let server = RpcThreadedServer::new(
        &s,
        ServerConfig {
            tier: Arc::from("kvs"),
            ..ServerConfig::default()
        },
        kvs_factory(1, 100, ds),
    )
    .serve()
    .map_err(|e| e.to_string())?;
    let mut rpc = RpcClient::new(&c).map_err(|e| e.to_string())?;
    rpc.connect(1, 1).map_err(|e| e.to_string())?;
    let result = (|| {
        let mut kv = KeyValueStoreClient::new(&mut rpc, 1);
        let key = key_bytes(42, ds);
        let before = kv.get(&GetRequest { timestamp: 1, key }).map_err(|e| e.to_string())?;
        ensure(value_id(&before.value, ds) == Some(initial_value(42)), || "preloaded value missing".into())?;
        let value = value_bytes(7, ds);
        let w = kv.set(&SetRequest { timestamp: 2, key, value }).map_err(|e| e.to_string())?;
        ensure(w.timestamp == 2, || format!("set echoed timestamp {}", w.timestamp))?;
        let after = kv.get(&GetRequest { timestamp: 3, key }).map_err(|e| e.to_string())?;
        ensure(after.value == value && after.timestamp == 3, || "get after set returned stale data".into())
    })();
    server.stop();
    drop(rpc);
    drop(running);
    result
}

pub fn check() -> Result<String, String> {
    let g = golden()?;
    round_trip()?;
    Ok(format!("listing parses to the expected service definition; {g}; get/set round trip over the fabric"))
}
