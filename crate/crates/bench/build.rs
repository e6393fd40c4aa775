use std::path::PathBuf;

use nicrpc::idl::{generate_stubs, parse_idl, GenOptions};

fn main() {
    let src = "idl/kvs.dgr";
    println!("cargo:rerun-if-changed={src}");
    let text = std::fs::read_to_string(src).expect("read kvs.dgr");
    let spec = parse_idl(&text).unwrap_or_else(|e| panic!("{src}:{e}"));
    let opts = GenOptions {
        source_name: "kvs.dgr".into(),
        file_stem: "kvs".into(),
        runtime: "nicrpc".into(),
    };
    let out = PathBuf::from(std::env::var("OUT_DIR").expect("OUT_DIR"));
    for f in generate_stubs(&spec, &opts) {
        std::fs::write(out.join(&f.path), f.contents).expect("write stubs");
    }
}
