use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::ParamKind;
use crate::error::{Error, Result};
use crate::learn::MetricsReport;
use crate::models::{build, Model, ModelSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ECGCKPT1";
pub const VERSION: u32 = 1;

/// Where the weights came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// `PTB-XL`, `CPSC18`, `MedalCare`, `synthetic:<tag>` or `none`.
    pub source: String,
    pub epochs: usize,
    pub val_metrics: Option<MetricsReport>,
}

impl Provenance {
    pub fn none() -> Self {
        Provenance {
            source: "none".into(),
            epochs: 0,
            val_metrics: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let known = ["PTB-XL", "CPSC18", "MedalCare", "none"];
        let synthetic = self.source.strip_prefix("synthetic:").is_some_and(|t| !t.is_empty());
        if known.contains(&self.source.as_str()) || synthetic {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "provenance source `{}` must be one of {} or synthetic:<tag>",
                self.source,
                known.join(", ")
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    buffer: bool,
    shape: Vec<usize>,
    /// In f64 elements from the start of the data section.
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    spec: ModelSpec,
    spec_fingerprint: String,
    seed: u64,
    provenance: Provenance,
    tensors: Vec<TensorEntry>,
    data_len: usize,
    data_sha256: String,
}

/// A loaded checkpoint whose parameters match its spec exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub seed: u64,
    pub provenance: Provenance,
    /// In the model's canonical order.
    pub parameters: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn fingerprint(&self) -> String {
        self.spec.fingerprint()
    }

    pub fn from_model(model: &Model, provenance: Provenance) -> Self {
        Checkpoint {
            spec: model.spec().clone(),
            seed: model.seed(),
            provenance,
            parameters: model.store.iter().map(|(_, p)| (p.name().to_string(), p.value().clone())).collect(),
        }
    }

    /// A model carrying these parameters.
    pub fn to_model(&self) -> Result<Model> {
        let mut m = build(&self.spec, self.seed)?;
        load_into(&mut m, &self.parameters)?;
        Ok(m)
    }

    /// SHA-256 of each tensor's little-endian bytes, in order.
    pub fn tensor_hashes(&self) -> Vec<(String, String)> {
        self.parameters
            .iter()
            .map(|(n, t)| {
                let mut h = Sha256::new();
                for v in t.data() {
                    h.update(v.to_le_bytes());
                }
                (n.clone(), hex::encode(h.finalize()))
            })
            .collect()
    }
}

/// Copies `params` into `model`, requiring the same names and shapes.
pub(crate) fn load_into(model: &mut Model, params: &[(String, Tensor)]) -> Result<()> {
    check_layout(model, params.iter().map(|(n, t)| (n.as_str(), t.shape())))?;
    for (name, t) in params {
        let id = model.store.id(name).expect("checked above");
        model.store.set_value(id, t.clone())?;
    }
    Ok(())
}

fn check_layout<'a>(model: &Model, entries: impl Iterator<Item = (&'a str, &'a [usize])>) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for (name, shape) in entries {
        let p = model.store.by_name(name).ok_or_else(|| Error::UnexpectedParameter(name.to_string()))?;
        if p.value().shape() != shape {
            return Err(Error::ParameterShape {
                name: name.to_string(),
                expected: p.value().shape().to_vec(),
                found: shape.to_vec(),
            });
        }
        seen.insert(name.to_string());
    }
    if let Some((_, p)) = model.store.iter().find(|(_, p)| !seen.contains(p.name())) {
        return Err(Error::MissingParameter(p.name().to_string()));
    }
    Ok(())
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Writes `model` atomically: a temporary sibling file renamed into place.
pub fn save_checkpoint(model: &Model, provenance: &Provenance, path: &Path) -> Result<()> {
    provenance.validate()?;
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    let mut offset = 0;
    for (_, p) in model.store.iter() {
        tensors.push(TensorEntry {
            name: p.name().to_string(),
            buffer: p.kind() == ParamKind::Buffer,
            shape: p.value().shape().to_vec(),
            offset,
        });
        offset += p.value().len();
        for v in p.value().data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        version: VERSION,
        spec: model.spec().clone(),
        spec_fingerprint: model.fingerprint(),
        seed: model.seed(),
        provenance: provenance.clone(),
        tensors,
        data_len: offset,
        data_sha256: hex::encode(Sha256::digest(&data)),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Serde(e.to_string()))?;
    let mut bytes = Vec::with_capacity(20 + json.len() + data.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&data);

    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file_name = path.file_name().ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads and fully validates a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(format_err(path, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < header_len {
        return Err(format_err(path, format!("header needs {header_len} bytes, file has {}", body.len())));
    }
    let header: Header = serde_json::from_slice(&body[..header_len]).map_err(|e| format_err(path, format!("header: {e}")))?;
    if header.version != version {
        return Err(format_err(path, "header version disagrees with the file prefix"));
    }
    let computed = header.spec.fingerprint();
    if computed != header.spec_fingerprint {
        return Err(Error::FingerprintMismatch {
            stored: header.spec_fingerprint,
            computed,
        });
    }
    let data = &body[header_len..];
    if data.len() != header.data_len * 8 {
        return Err(format_err(
            path,
            format!("expected {} data bytes, found {}", header.data_len * 8, data.len()),
        ));
    }
    if hex::encode(Sha256::digest(data)) != header.data_sha256 {
        return Err(format_err(path, "parameter data checksum mismatch"));
    }
    let model = build(&header.spec, header.seed)?;
    check_layout(&model, header.tensors.iter().map(|t| (t.name.as_str(), t.shape.as_slice())))?;
    let mut parameters = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        if t.offset + n > header.data_len {
            return Err(format_err(path, format!("tensor `{}` runs past the data section", t.name)));
        }
        let is_buffer = model.store.by_name(&t.name).map(|p| p.kind() == ParamKind::Buffer);
        if is_buffer != Some(t.buffer) {
            return Err(format_err(path, format!("tensor `{}` has the wrong kind", t.name)));
        }
        let values = data[t.offset * 8..(t.offset + n) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        parameters.push((t.name.clone(), Tensor::new(t.shape.clone(), values)?));
    }
    Ok(Checkpoint {
        spec: header.spec,
        seed: header.seed,
        provenance: header.provenance,
        parameters,
    })
}
