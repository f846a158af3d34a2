use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    let out = PathBuf::from(env::var("OUT_DIR").unwrap()).join("hetsim.h");
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let config = cbindgen::Config::from_file(crate_dir.join("cbindgen.toml")).expect("cbindgen.toml");
    cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("generate C header")
        .write_to_file(&out);
    // keep a checked-in copy for C consumers; only touch it when it changes
    let include = crate_dir.join("include/hetsim.h");
    let fresh = std::fs::read(&out).unwrap();
    if std::fs::read(&include).ok().as_deref() != Some(&fresh[..]) {
        let _ = std::fs::create_dir_all(include.parent().unwrap());
        let _ = std::fs::write(&include, &fresh);
    }
}
