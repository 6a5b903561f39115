use std::path::Path;

use ecg_core::models::Model;
use ecg_core::transfer::load_checkpoint;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

/// Combined hash over the per-tensor hashes of the selected tensors.
fn group_hash(hashes: &[(String, String)], head: bool) -> String {
    let mut h = Sha256::new();
    for (name, t) in hashes.iter().filter(|(n, _)| Model::is_head_param(n) == head) {
        h.update(name.as_bytes());
        h.update(t.as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn cmd_verify(path: &Path, against: Option<&Path>) -> CliResult<()> {
    let ckpt = load_checkpoint(path)?;
    let hashes = ckpt.tensor_hashes();
    println!("fingerprint: {}", ckpt.fingerprint());
    println!("architecture: {}", ckpt.spec.architecture);
    println!("task: {:?}", ckpt.spec.head.task);
    println!("source: {}", ckpt.provenance.source);
    println!("epochs: {}", ckpt.provenance.epochs);
    println!("backbone: {}", group_hash(&hashes, false));
    println!("head: {}", group_hash(&hashes, true));
    for (n, h) in &hashes {
        println!("tensor {n} {h}");
    }
    if let Some(other) = against {
        let theirs = load_checkpoint(other)?.tensor_hashes();
        let lookup = |name: &str| theirs.iter().find(|(n, _)| n == name).map(|(_, h)| h.as_str());
        let mut changed: Vec<&str> = hashes
            .iter()
            .filter(|(n, h)| lookup(n) != Some(h.as_str()))
            .map(|(n, _)| n.as_str())
            .collect();
        changed.extend(theirs.iter().filter(|(n, _)| !hashes.iter().any(|(m, _)| m == n)).map(|(n, _)| n.as_str()));
        let backbone_same = !changed.iter().any(|n| !Model::is_head_param(n));
        println!("changed: {}", changed.join(","));
        println!("backbone identical: {}", if backbone_same { "yes" } else { "no" });
    }
    Ok(())
}
