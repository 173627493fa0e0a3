//! Versioned binary checkpoints with a plain-text manifest sidecar.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "VGFCKPT\n"
//! version u32
//! meta    u64 length + UTF-8 JSON
//! count   u32
//! tensor  u32 name length, name, u32 ndim, u64 dims..., f64 data...
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentBundle, ScoreSource};
use crate::autodiff::{Mlp, MlpSpec, Tensor};
use crate::critic::{Aggregation, CriticConfig, GradientNet, ValueModel};
use crate::error::{Error, Result};
use crate::flow::{ActionBox, FlowConfig};
use crate::refmodel::FlowMatchModel;

pub const MAGIC: &[u8; 8] = b"VGFCKPT\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.txt");
    PathBuf::from(s)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.metadata)?;
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(8)? != MAGIC {
            return Err(r.bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let meta_len = r.u64()? as usize;
        let metadata = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| r.bad("tensor name is not UTF-8"))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(8).ok_or_else(|| r.bad("tensor too large"))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(r.bad("trailing bytes"));
        }
        Ok(Checkpoint { metadata, tensors })
    }

    /// Human-readable summary of the file contents.
    pub fn manifest(&self) -> Result<String> {
        let mut s = format!("format_version: {FORMAT_VERSION}\ntensors:\n");
        for (name, t) in &self.tensors {
            s.push_str(&format!("  {name} {:?}\n", t.shape()));
        }
        s.push_str("metadata:\n");
        s.push_str(&serde_json::to_string_pretty(&self.metadata)?);
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        f.flush()?;
        fs::write(manifest_path(path), self.manifest()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    fn take_prefix(&self, prefix: &str) -> Vec<Tensor> {
        let mut found: Vec<(usize, Tensor)> = self
            .tensors
            .iter()
            .filter_map(|(n, t)| {
                let rest = n.strip_prefix(prefix)?.strip_prefix('.')?;
                rest.parse::<usize>().ok().map(|i| (i, t.clone()))
            })
            .collect();
        found.sort_by_key(|(i, _)| *i);
        found.into_iter().map(|(_, t)| t).collect()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn bad(&self, reason: &str) -> Error {
        Error::Format {
            path: self.origin.to_string(),
            reason: format!("{reason} at byte {}", self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.bad("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Everything about a bundle that is not a parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BundleMeta {
    kind: String,
    state_dim: usize,
    action_dim: usize,
    integration_steps: usize,
    action_bounds: Option<ActionBox>,
    refmodel_spec: MlpSpec,
    critic_spec: MlpSpec,
    gradient_net_spec: Option<MlpSpec>,
    aggregation: Aggregation,
    score_aggregation: Aggregation,
    gamma: f64,
    tau: f64,
    flow: FlowConfig,
    score_source: ScoreSource,
    #[serde(default)]
    extra: serde_json::Value,
}

impl AgentBundle {
    /// Pack the bundle; `extra` is stored verbatim (seed, config hash, ...).
    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Result<Checkpoint> {
        let meta = BundleMeta {
            kind: "vgf-agent".into(),
            state_dim: self.state_dim(),
            action_dim: self.action_dim(),
            integration_steps: self.refmodel.integration_steps(),
            action_bounds: self.refmodel.bounds(),
            refmodel_spec: self.refmodel.net().spec().clone(),
            critic_spec: self.value.q1.spec().clone(),
            gradient_net_spec: self.gradient_net.as_ref().map(|g| g.net.spec().clone()),
            aggregation: self.value.aggregation,
            score_aggregation: self.value.score_aggregation,
            gamma: self.value.gamma,
            tau: self.value.tau,
            flow: self.flow.clone(),
            score_source: self.score_source,
            extra,
        };
        let mut tensors = Vec::new();
        let mut add = |prefix: &str, net: &Mlp| {
            for (i, p) in net.params().iter().enumerate() {
                tensors.push((format!("{prefix}.{i}"), p.clone()));
            }
        };
        add("refmodel", self.refmodel.net());
        add("q1", &self.value.q1);
        add("q2", &self.value.q2);
        add("q1_target", &self.value.q1_target);
        add("q2_target", &self.value.q2_target);
        if let Some(g) = &self.gradient_net {
            add("gradient_net", &g.net);
        }
        Ok(Checkpoint {
            metadata: serde_json::to_value(meta)?,
            tensors,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, serde_json::Value)> {
        let meta: BundleMeta = serde_json::from_value(ck.metadata.clone())?;
        if meta.kind != "vgf-agent" {
            return Err(Error::Format {
                path: "checkpoint".into(),
                reason: format!("unexpected kind {:?}", meta.kind),
            });
        }
        let net = |prefix: &str, spec: &MlpSpec| Mlp::from_params(spec.clone(), ck.take_prefix(prefix));
        let refmodel = FlowMatchModel::from_net(
            net("refmodel", &meta.refmodel_spec)?,
            meta.state_dim,
            meta.action_dim,
            meta.integration_steps,
            meta.action_bounds,
        )?;
        let critic_cfg = CriticConfig {
            hidden_dims: meta.critic_spec.hidden_dims.clone(),
            activation: meta.critic_spec.activation,
            gamma: meta.gamma,
            tau: meta.tau,
            aggregation: meta.aggregation,
            score_aggregation: meta.score_aggregation,
            ..CriticConfig::default()
        };
        let value = ValueModel::from_nets(
            net("q1", &meta.critic_spec)?,
            net("q2", &meta.critic_spec)?,
            net("q1_target", &meta.critic_spec)?,
            net("q2_target", &meta.critic_spec)?,
            meta.state_dim,
            meta.action_dim,
            &critic_cfg,
        )?;
        let gradient_net = match &meta.gradient_net_spec {
            Some(spec) => Some(GradientNet::from_net(net("gradient_net", spec)?, meta.state_dim, meta.action_dim)?),
            None => None,
        };
        let bundle = AgentBundle {
            refmodel,
            value,
            gradient_net,
            flow: meta.flow,
            score_source: meta.score_source,
        };
        bundle.validate()?;
        Ok((bundle, meta.extra))
    }
}
