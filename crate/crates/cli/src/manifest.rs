//! Per-stage run manifests: versions, seed, counts, and the digests of
//! every input and output artifact, so runs chain verifiably.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::{json, Value};
use toolforge::canonical::digest_bytes;

fn file_entry(path: &Path) -> anyhow::Result<Value> {
    let bytes =
        std::fs::read(path).with_context(|| format!("hashing artifact {}", path.display()))?;
    Ok(json!({
        "path": path.display().to_string(),
        "sha256": digest_bytes(&bytes),
    }))
}

/// Write `<manifest_dir>/<stage>.manifest.json` and return its path.
pub fn write_stage_manifest(
    manifest_dir: &Path,
    stage: &str,
    seed: u64,
    inputs: &[&Path],
    outputs: &[&Path],
    counts: Value,
) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(manifest_dir)?;
    let manifest = json!({
        "stage": stage,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "inputs": inputs.iter().map(|p| file_entry(p)).collect::<anyhow::Result<Vec<_>>>()?,
        "outputs": outputs.iter().map(|p| file_entry(p)).collect::<anyhow::Result<Vec<_>>>()?,
        "counts": counts,
    });
    let path = manifest_dir.join(format!("{stage}.manifest.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_records_digests() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.jsonl");
        std::fs::write(&input, "data\n").unwrap();
        let path = write_stage_manifest(
            &dir.path().join("manifests"),
            "demo",
            7,
            &[&input],
            &[&input],
            json!({"n": 1}),
        )
        .unwrap();
        let manifest: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(manifest["stage"], "demo");
        assert_eq!(manifest["inputs"][0]["sha256"], manifest["outputs"][0]["sha256"]);
        assert_eq!(manifest["counts"]["n"], 1);
    }
}
