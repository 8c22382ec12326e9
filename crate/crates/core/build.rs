//! Embeds the locked versions of the numeric and serialization crates so
//! run manifests can name the exact libraries that produced them.

use std::env;
use std::fs;
use std::path::PathBuf;

const TRACKED: [&str; 8] = [
    "ndarray",
    "rand",
    "rand_chacha",
    "rand_distr",
    "rayon",
    "serde_json",
    "sha2",
    "toml",
];

fn main() {
    let manifest_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    let lock = manifest_dir.join("../../Cargo.lock");
    println!("cargo:rerun-if-changed={}", lock.display());
    let text = fs::read_to_string(&lock).unwrap_or_default();

    let mut found = Vec::new();
    let mut name = None;
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("name = ") {
            name = Some(v.trim_matches('"').to_string());
        } else if let Some(v) = line.strip_prefix("version = ") {
            if let Some(n) = name.take() {
                if TRACKED.contains(&n.as_str())
                    && !found.iter().any(|(f, _): &(String, String)| *f == n)
                {
                    found.push((n, v.trim_matches('"').to_string()));
                }
            }
        }
    }
    found.sort();
    let body: Vec<String> = found
        .iter()
        .map(|(n, v)| format!("(\"{n}\", \"{v}\")"))
        .collect();
    let out = PathBuf::from(env::var("OUT_DIR").unwrap()).join("versions.rs");
    fs::write(
        out,
        format!(
            "pub const LOCKED_VERSIONS: &[(&str, &str)] = &[{}];\n",
            body.join(", ")
        ),
    )
    .unwrap();
}
