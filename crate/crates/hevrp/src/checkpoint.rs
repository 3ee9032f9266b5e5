//! Parameter checkpoints.
//!
//! Layout: the 8-byte magic, a little-endian `u64` header length, a JSON
//! header, then every tensor's `f64` data little-endian and row-major. The
//! header lists each tensor's name, shape and byte offset into the data
//! block, plus the policy configuration needed to rebuild the modules.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use hevrp_core::nn::EdgeScoring;
use hevrp_core::numcore::Tensor;
use hevrp_core::policy::{PolicyConfig, PolicyParams};

pub const MAGIC: &[u8; 8] = b"HEVRPCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringDoc {
    Additive,
    DotProduct,
}

/// Serialisable mirror of [`PolicyConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfigDoc {
    pub d_h: usize,
    pub heads: usize,
    pub gat_layers: usize,
    pub edge_layers: usize,
    pub d_edge: usize,
    pub d_ff: usize,
    pub clip: f64,
    pub bn_eps: f64,
    pub use_ee: bool,
    pub use_twe: bool,
    pub use_hd: bool,
    pub ee_sparse: bool,
    pub scoring: ScoringDoc,
}

impl From<PolicyConfig> for PolicyConfigDoc {
    fn from(c: PolicyConfig) -> Self {
        Self {
            d_h: c.d_h,
            heads: c.heads,
            gat_layers: c.gat_layers,
            edge_layers: c.edge_layers,
            d_edge: c.d_edge,
            d_ff: c.d_ff,
            clip: c.clip,
            bn_eps: c.bn_eps,
            use_ee: c.use_ee,
            use_twe: c.use_twe,
            use_hd: c.use_hd,
            ee_sparse: c.ee_sparse,
            scoring: match c.scoring {
                EdgeScoring::Additive => ScoringDoc::Additive,
                EdgeScoring::DotProduct => ScoringDoc::DotProduct,
            },
        }
    }
}

impl From<PolicyConfigDoc> for PolicyConfig {
    fn from(c: PolicyConfigDoc) -> Self {
        Self {
            d_h: c.d_h,
            heads: c.heads,
            gat_layers: c.gat_layers,
            edge_layers: c.edge_layers,
            d_edge: c.d_edge,
            d_ff: c.d_ff,
            clip: c.clip,
            bn_eps: c.bn_eps,
            use_ee: c.use_ee,
            use_twe: c.use_twe,
            use_hd: c.use_hd,
            ee_sparse: c.ee_sparse,
            scoring: match c.scoring {
                ScoringDoc::Additive => EdgeScoring::Additive,
                ScoringDoc::DotProduct => EdgeScoring::DotProduct,
            },
        }
    }
}

impl Default for PolicyConfigDoc {
    fn default() -> Self {
        PolicyConfig::desk().into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Bytes from the start of the data block.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub policy: PolicyConfigDoc,
    pub tensors: Vec<TensorEntry>,
    /// Free-form provenance such as seed and epoch.
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

pub fn encode(params: &PolicyParams, meta: BTreeMap<String, String>) -> Vec<u8> {
    let store = params.store();
    let mut offset = 0u64;
    let tensors = store
        .names()
        .iter()
        .zip(store.tensors())
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape(),
                offset,
            };
            offset += 8 * t.len() as u64;
            e
        })
        .collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        policy: (*params.config()).into(),
        tensors,
        meta,
    };
    let header = serde_json::to_vec(&manifest).expect("manifests always serialise");
    let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in store.tensors() {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(PolicyParams, Manifest)> {
    ensure!(bytes.len() >= 16 && &bytes[..8] == MAGIC, "not a checkpoint file");
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let data_start = 16usize.checked_add(header_len).filter(|&e| e <= bytes.len()).context("truncated checkpoint header")?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..data_start]).context("parsing checkpoint manifest")?;
    if manifest.format_version != FORMAT_VERSION {
        bail!("unsupported checkpoint format_version {} (expected {FORMAT_VERSION})", manifest.format_version);
    }
    let data = &bytes[data_start..];
    let mut params = PolicyParams::new(manifest.policy.into(), 0).context("checkpoint policy config")?;
    let names = params.store().names().to_vec();
    ensure!(
        names.len() == manifest.tensors.len(),
        "checkpoint holds {} tensors, the configured policy has {}",
        manifest.tensors.len(),
        names.len()
    );
    let mut tensors = Vec::with_capacity(names.len());
    for (want, e) in names.iter().zip(&manifest.tensors) {
        ensure!(*want == e.name, "tensor {} found where {want} was expected", e.name);
        let len = e.shape[0].checked_mul(e.shape[1]).context("tensor shape overflows")?;
        let start = e.offset as usize;
        let end = len.checked_mul(8).and_then(|b| start.checked_add(b)).filter(|&end| end <= data.len()).with_context(|| format!("tensor {} runs past the data block", e.name))?;
        let values = data[start..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Tensor::from_vec(e.shape[0], e.shape[1], values));
    }
    params.store_mut().load(tensors).context("checkpoint tensor shapes")?;
    Ok((params, manifest))
}

pub fn save(path: &Path, params: &PolicyParams, meta: BTreeMap<String, String>) -> Result<()> {
    fs::write(path, encode(params, meta)).with_context(|| format!("writing {}", path.display()))
}

pub fn load(path: &Path) -> Result<(PolicyParams, Manifest)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes).with_context(|| format!("loading {}", path.display()))
}
