//! Offline transition datasets: CSV columns plus a JSON manifest sidecar.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::critic::Batch;
use crate::error::{Error, Result};

/// One generated trajectory: its family, rows `start .. start + len`, and endpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryInfo {
    pub family: String,
    pub start: usize,
    pub len: usize,
    pub origin: Vec<f64>,
    pub terminus: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator: String,
    pub seed: u64,
    pub size: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectories: Vec<TrajectoryInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Transitions `(s, a, r, s', done)` stored column-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub manifest: DatasetManifest,
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_states: Tensor,
    pub dones: Vec<f64>,
}

/// Row-by-row builder used by the generators.
#[derive(Clone, Debug)]
pub(crate) struct DatasetBuilder {
    state_dim: usize,
    action_dim: usize,
    s: Vec<f64>,
    a: Vec<f64>,
    r: Vec<f64>,
    ns: Vec<f64>,
    d: Vec<f64>,
    pub trajectories: Vec<TrajectoryInfo>,
}

impl DatasetBuilder {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        DatasetBuilder {
            state_dim,
            action_dim,
            s: Vec::new(),
            a: Vec::new(),
            r: Vec::new(),
            ns: Vec::new(),
            d: Vec::new(),
            trajectories: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn push(&mut self, s: &[f64], a: &[f64], r: f64, ns: &[f64], done: bool) {
        self.s.extend_from_slice(s);
        self.a.extend_from_slice(a);
        self.r.push(r);
        self.ns.extend_from_slice(ns);
        self.d.push(if done { 1.0 } else { 0.0 });
    }

    pub fn finish(self, generator: &str, seed: u64) -> Result<OfflineDataset> {
        let n = self.r.len();
        let ds = OfflineDataset {
            manifest: DatasetManifest {
                generator: generator.into(),
                seed,
                size: n,
                state_dim: self.state_dim,
                action_dim: self.action_dim,
                trajectories: self.trajectories,
                config_hash: None,
            },
            states: Tensor::matrix(n, self.state_dim, self.s)?,
            actions: Tensor::matrix(n, self.action_dim, self.a)?,
            rewards: self.r,
            next_states: Tensor::matrix(n, self.state_dim, self.ns)?,
            dones: self.d,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Sidecar manifest path: `data.csv` -> `data.manifest.json`.
pub fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("manifest.json")
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.manifest.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.manifest.action_dim
    }

    /// Shape agreement, finiteness and boolean done flags.
    pub fn validate(&self) -> Result<()> {
        let n = self.rewards.len();
        let m = &self.manifest;
        let bad = |reason: String| Error::Format {
            path: "dataset".into(),
            reason,
        };
        if m.size != n {
            return Err(bad(format!("manifest size {} but {n} rows", m.size)));
        }
        for (name, t, d) in [
            ("states", &self.states, m.state_dim),
            ("actions", &self.actions, m.action_dim),
            ("next_states", &self.next_states, m.state_dim),
        ] {
            if t.shape() != [n, d] {
                return Err(bad(format!("{name} has shape {:?}, expected [{n}, {d}]", t.shape())));
            }
            if let Some(i) = t.first_non_finite() {
                return Err(Error::NonFinite { what: "dataset value", index: i / d.max(1) });
            }
        }
        if self.dones.len() != n {
            return Err(bad(format!("{} done flags for {n} rows", self.dones.len())));
        }
        if let Some(i) = self.rewards.iter().position(|r| !r.is_finite()) {
            return Err(Error::NonFinite { what: "dataset reward", index: i });
        }
        if let Some(i) = self.dones.iter().position(|&d| d != 0.0 && d != 1.0) {
            return Err(bad(format!("done flag at row {i} is {}", self.dones[i])));
        }
        for t in &m.trajectories {
            if t.start + t.len > n {
                return Err(bad(format!("trajectory rows {}..{} exceed {n}", t.start, t.start + t.len)));
            }
        }
        Ok(())
    }

    /// Rows at the given indices.
    pub fn gather(&self, idx: &[usize]) -> Batch {
        let pick = |t: &Tensor| {
            let c = t.cols();
            let data = idx.iter().flat_map(|&i| t.row(i).iter().copied()).collect();
            Tensor::matrix(idx.len(), c, data).expect("rows have equal width")
        };
        Batch {
            states: pick(&self.states),
            actions: pick(&self.actions),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_states: pick(&self.next_states),
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
        }
    }

    /// Uniform minibatch with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Batch {
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..self.len())).collect();
        self.gather(&idx)
    }

    /// Write `path` (CSV) and its manifest sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        let (ds, da) = (self.state_dim(), self.action_dim());
        let mut header: Vec<String> = (0..ds).map(|i| format!("s{i}")).collect();
        header.extend((0..da).map(|i| format!("a{i}")));
        header.push("r".into());
        header.extend((0..ds).map(|i| format!("ns{i}")));
        header.push("done".into());
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut fields: Vec<String> = self.states.row(i).iter().map(f64::to_string).collect();
            fields.extend(self.actions.row(i).iter().map(f64::to_string));
            fields.push(self.rewards[i].to_string());
            fields.extend(self.next_states.row(i).iter().map(f64::to_string));
            fields.push(self.dones[i].to_string());
            writeln!(w, "{}", fields.join(","))?;
        }
        w.flush()?;
        fs::write(manifest_path(path), serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        Ok(())
    }

    /// Read a dataset written by [`OfflineDataset::save`] and validate it.
    pub fn load(path: &Path) -> Result<Self> {
        let mpath = manifest_path(path);
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(&mpath)?)?;
        let (ds, da) = (manifest.state_dim, manifest.action_dim);
        let width = 2 * ds + da + 2;
        let bad = |reason: String| Error::Format {
            path: path.display().to_string(),
            reason,
        };
        let mut b = DatasetBuilder::new(ds, da);
        for (lineno, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let v = line
                .split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|e| bad(format!("line {}: {e}", lineno + 1))))
                .collect::<Result<Vec<_>>>()?;
            if v.len() != width {
                return Err(bad(format!("line {}: {} fields, expected {width}", lineno + 1, v.len())));
            }
            let done = v[width - 1];
            if done != 0.0 && done != 1.0 {
                return Err(bad(format!("line {}: done flag {done}", lineno + 1)));
            }
            b.push(&v[..ds], &v[ds..ds + da], v[ds + da], &v[ds + da + 1..width - 1], done == 1.0);
        }
        b.trajectories = manifest.trajectories.clone();
        let mut out = b.finish(&manifest.generator, manifest.seed)?;
        if out.manifest.size != manifest.size {
            return Err(bad(format!("manifest size {} but {} rows", manifest.size, out.len())));
        }
        out.manifest = manifest;
        out.validate()?;
        Ok(out)
    }
}
