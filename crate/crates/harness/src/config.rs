//! Experiment configuration: a TOML file with an explicit schema version,
//! named presets, and `key=value` overrides addressed by dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use vgf::agent::{PolicyKind, ScoreSource, TrainConfig};
use vgf::autodiff::Activation;
use vgf::critic::{Aggregation, CriticConfig};
use vgf::flow::{ActionBox, FlowConfig};
use vgf::kernels::BandwidthPolicy;
use vgf::refmodel::RefModelConfig;

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;
/// Relative output directories resolve against this variable (default `runs`).
pub const OUTPUT_ROOT_ENV: &str = "VGF_OUTPUT_ROOT";

pub const PRESETS: [&str; 5] = ["bandit", "bandit_n5", "maze", "chain", "bound_check"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Bandit,
    Maze,
    Chain,
    BoundCheck,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub task: Task,
    /// Training seeds, or bound-check seeds.
    pub seeds: Vec<u64>,
    pub output_dir: String,
    pub flow: FlowConfig,
    pub training: TrainingConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub gradient_steps: usize,
    pub batch_size: usize,
    pub log_every: usize,
    pub score_source: ScoreSource,
    pub gradient_net_hidden: Vec<usize>,
    pub gradient_net_lr: f64,
    pub critic: CriticConfig,
    pub refmodel: RefModelConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Transitions (bandit), trajectories (maze) or transitions per state (chain).
    pub size: usize,
    /// Training seed `s` generates its dataset with seed `seed + s`.
    pub seed: u64,
    /// Load this dataset instead of generating one.
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub l_test: Vec<usize>,
    /// One episode per entry; duplicates give duplicate rows.
    pub seeds: Vec<u64>,
    pub max_steps: usize,
    pub baselines: Vec<PolicyKind>,
    /// Record particle paths at the first episode's initial state.
    pub dump_trajectories: bool,
}

/// Grid axes. For training an empty list means "use the `flow` value"; the
/// bound check needs every axis it reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub l_train: Vec<usize>,
    pub epsilon: Vec<f64>,
    pub num_particles: Vec<usize>,
    pub steps: Vec<usize>,
    pub alpha: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Lipschitz constants `c` of the linear rewards.
    pub reward_scale: Vec<f64>,
    /// Action dimension of the bound check.
    pub dim: usize,
    /// Worker threads for sweep cells; 0 means one per core.
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            l_train: Vec::new(),
            epsilon: Vec::new(),
            num_particles: Vec::new(),
            steps: Vec::new(),
            alpha: Vec::new(),
            sigma: Vec::new(),
            reward_scale: Vec::new(),
            dim: 2,
            workers: 0,
        }
    }
}

impl TrainingConfig {
    fn defaults() -> Self {
        TrainingConfig {
            gradient_steps: 50_000,
            batch_size: 256,
            log_every: 1000,
            score_source: ScoreSource::Autodiff,
            gradient_net_hidden: vec![64, 64],
            gradient_net_lr: 3e-4,
            critic: CriticConfig::default(),
            refmodel: RefModelConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Option<Self> {
        let base = |name: &str, task| ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            name: name.to_string(),
            task,
            seeds: vec![0],
            output_dir: name.to_string(),
            flow: FlowConfig::default(),
            training: TrainingConfig::defaults(),
            data: DataConfig {
                size: 0,
                seed: 0,
                path: None,
            },
            eval: EvalConfig {
                l_test: vec![1],
                seeds: (1000..1020).collect(),
                max_steps: 1,
                baselines: Vec::new(),
                dump_trajectories: false,
            },
            sweep: SweepConfig::default(),
        };
        let cfg = match name {
            "bandit" | "bandit_n5" => {
                let mut c = base(name, Task::Bandit);
                c.seeds = (0..10).collect();
                c.flow = FlowConfig {
                    l_train: 0,
                    l_test: 5,
                    epsilon: 0.05,
                    alpha: 0.1,
                    num_particles: if name == "bandit" { 3 } else { 5 },
                    maxent: true,
                    clip_bounds: Some(ActionBox::UNIT),
                    ..FlowConfig::default()
                };
                c.training.gradient_steps = 10_000;
                c.training.batch_size = 64;
                c.training.log_every = 500;
                c.training.critic.lr = 1e-3;
                c.training.refmodel.lr = 1e-3;
                c.data.size = 2000;
                c.eval.l_test = vec![0, 1, 3, 5];
                c.eval.seeds = (1000..1050).collect();
                c.eval.baselines = vec![PolicyKind::BestOfN { n: 20 }, PolicyKind::BehaviorCloning];
                c.eval.dump_trajectories = true;
                c
            }
            "maze" => {
                let mut c = base(name, Task::Maze);
                c.flow.epsilon = 0.05;
                c.training.batch_size = 64;
                c.training.critic.aggregation = Aggregation::Min;
                c.data.size = 500;
                c.eval.l_test = vec![0, 1, 2, 3];
                c.eval.max_steps = vgf::envs::constants::MAZE_HORIZON;
                c.eval.baselines = vec![PolicyKind::BehaviorCloning];
                c
            }
            "chain" => {
                let mut c = base(name, Task::Chain);
                c.flow.clip_bounds = Some(ActionBox::UNIT);
                c.training.gradient_steps = 3000;
                c.training.batch_size = 64;
                c.training.log_every = 250;
                c.training.critic = CriticConfig {
                    hidden_dims: vec![32, 32],
                    activation: Activation::Gelu,
                    gamma: vgf::envs::constants::CHAIN_GAMMA,
                    tau: 0.05,
                    lr: 1e-3,
                    ..CriticConfig::default()
                };
                c.training.refmodel.lr = 1e-3;
                c.data.size = 200;
                c.eval.l_test = vec![1];
                c.eval.seeds = vec![1000];
                c.eval.max_steps = vgf::envs::chain::CHAIN_LEN;
                c
            }
            "bound_check" => {
                let mut c = base(name, Task::BoundCheck);
                c.flow = FlowConfig {
                    maxent: true,
                    clip_bounds: None,
                    bandwidth: BandwidthPolicy::Fixed(1.0),
                    ..FlowConfig::default()
                };
                c.training.gradient_steps = 0;
                c.eval.l_test = Vec::new();
                c.eval.seeds = Vec::new();
                c.sweep = SweepConfig {
                    epsilon: vec![0.01, 0.05],
                    steps: (1..=10).collect(),
                    alpha: vec![0.1, 1.0],
                    sigma: vec![0.5, 1.0, 2.0],
                    num_particles: vec![5, 20],
                    reward_scale: vec![0.5, 1.0],
                    ..SweepConfig::default()
                };
                c
            }
            _ => return None,
        };
        Some(cfg)
    }

    /// Parse a TOML document; the schema version is checked before anything else.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Value = text.parse().map_err(|e: toml::de::Error| HarnessError::config("<file>", e.message().to_string()))?;
        Self::from_value(value)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::config("<serialize>", e.to_string()))
    }

    fn to_value(&self) -> Result<toml::Value> {
        toml::Value::try_from(self).map_err(|e| HarnessError::config("<serialize>", e.to_string()))
    }

    fn from_value(value: toml::Value) -> Result<Self> {
        match value.get("schema_version") {
            None => return Err(HarnessError::config("schema_version", "missing field")),
            Some(v) if v.as_integer() != Some(SCHEMA_VERSION as i64) => {
                return Err(HarnessError::config("schema_version", format!("expected {SCHEMA_VERSION}, got {v}")))
            }
            _ => {}
        }
        let cfg: ExperimentConfig = value.try_into().map_err(|e: toml::de::Error| {
            let msg = e.message().to_string();
            let field = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<file>".into());
            HarnessError::config(field, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load from a preset name or a file, then apply `key=value` overrides.
    pub fn resolve(preset: Option<&str>, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match (preset, file) {
            (Some(_), Some(_)) => return Err(HarnessError::config("--preset", "give either a preset or a config file, not both")),
            (Some(p), None) => Self::preset(p)
                .ok_or_else(|| HarnessError::config("--preset", format!("unknown preset {p:?}; known: {}", PRESETS.join(", "))))?
                .to_value()?,
            (None, Some(f)) => {
                let text = std::fs::read_to_string(f).map_err(|e| HarnessError::io(f, e))?;
                text.parse().map_err(|e: toml::de::Error| HarnessError::config(f.display().to_string(), e.message().to_string()))?
            }
            (None, None) => return Err(HarnessError::config("--config", "a preset or a config file is required")),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn validate(&self) -> Result<()> {
        let core = |e: vgf::Error| match e {
            vgf::Error::Config { field, reason } => HarnessError::config(field, reason),
            other => HarnessError::config("<config>", other.to_string()),
        };
        if self.name.is_empty() {
            return Err(HarnessError::config("name", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::config("seeds", "need at least one seed"));
        }
        self.flow.validate().map_err(core)?;
        if self.task == Task::BoundCheck {
            let s = &self.sweep;
            for (field, empty) in [
                ("sweep.epsilon", s.epsilon.is_empty()),
                ("sweep.steps", s.steps.is_empty()),
                ("sweep.alpha", s.alpha.is_empty()),
                ("sweep.sigma", s.sigma.is_empty()),
                ("sweep.num_particles", s.num_particles.is_empty()),
                ("sweep.reward_scale", s.reward_scale.is_empty()),
            ] {
                if empty {
                    return Err(HarnessError::config(field, "bound check needs at least one value"));
                }
            }
            if s.dim == 0 {
                return Err(HarnessError::config("sweep.dim", "must be >= 1"));
            }
            for (field, values) in [
                ("sweep.epsilon", &s.epsilon),
                ("sweep.alpha", &s.alpha),
                ("sweep.sigma", &s.sigma),
                ("sweep.reward_scale", &s.reward_scale),
            ] {
                if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                    return Err(HarnessError::config(field, format!("values must be positive, got {v}")));
                }
            }
            if s.num_particles.contains(&0) {
                return Err(HarnessError::config("sweep.num_particles", "values must be >= 1"));
            }
            return Ok(());
        }
        for cell in self.cells() {
            self.train_config(&cell).validate().map_err(core)?;
        }
        if self.data.size == 0 && self.data.path.is_none() {
            return Err(HarnessError::config("data.size", "must be >= 1 unless data.path is set"));
        }
        if self.eval.max_steps == 0 {
            return Err(HarnessError::config("eval.max_steps", "must be >= 1"));
        }
        if self.eval.baselines.contains(&PolicyKind::BestOfN { n: 0 }) {
            return Err(HarnessError::config("eval.baselines", "best_of_n needs n >= 1"));
        }
        Ok(())
    }

    /// Short content hash of the whole configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex16(&Sha256::digest(json.as_bytes()))
    }

    pub fn output_dir(&self) -> PathBuf {
        let dir = PathBuf::from(&self.output_dir);
        if dir.is_absolute() {
            return dir;
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(dir)
    }

    /// Training cells from the sweep axes, in a fixed order.
    pub fn cells(&self) -> Vec<TrainCell> {
        let or = |v: &Vec<usize>, d: usize| if v.is_empty() { vec![d] } else { v.clone() };
        let eps = if self.sweep.epsilon.is_empty() {
            vec![self.flow.epsilon]
        } else {
            self.sweep.epsilon.clone()
        };
        let mut cells = Vec::new();
        for &l_train in &or(&self.sweep.l_train, self.flow.l_train) {
            for &epsilon in &eps {
                for &num_particles in &or(&self.sweep.num_particles, self.flow.num_particles) {
                    cells.push(TrainCell {
                        l_train,
                        epsilon,
                        num_particles,
                    });
                }
            }
        }
        cells
    }

    pub fn train_config(&self, cell: &TrainCell) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            gradient_steps: t.gradient_steps,
            batch_size: t.batch_size,
            log_every: t.log_every,
            flow: FlowConfig {
                l_train: cell.l_train,
                epsilon: cell.epsilon,
                num_particles: cell.num_particles,
                ..self.flow.clone()
            },
            critic: t.critic.clone(),
            refmodel: t.refmodel.clone(),
            score_source: t.score_source,
            gradient_net_hidden: t.gradient_net_hidden.clone(),
            gradient_net_lr: t.gradient_net_lr,
        }
    }
}

/// One point of the training grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainCell {
    pub l_train: usize,
    pub epsilon: f64,
    pub num_particles: usize,
}

impl TrainCell {
    /// Directory-safe label, stable across runs.
    pub fn label(&self) -> String {
        format!("L{}_eps{}_N{}", self.l_train, self.epsilon, self.num_particles)
    }
}

pub fn hex16(bytes: &[u8]) -> String {
    bytes.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// `a.b.c=value`. The value is read as a TOML literal when it parses as
/// one and as a bare string otherwise. Only existing keys can be set, except
/// optional leaf fields.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::config(spec, "override must look like key=value"))?;
    let path = path.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.split('.').collect();
    let (last, parents) = keys.split_last().expect("split yields at least one item");
    let mut node = root;
    for (depth, k) in parents.iter().enumerate() {
        node = node
            .get_mut(*k)
            .filter(|v| v.is_table())
            .ok_or_else(|| HarnessError::config(keys[..=depth].join("."), "no such section"))?;
    }
    let table = node.as_table_mut().expect("checked above");
    table.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for name in PRESETS {
            let cfg = ExperimentConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            let text = cfg.to_toml_string().unwrap();
            let back = ExperimentConfig::from_toml_str(&text).unwrap();
            assert_eq!(back, cfg, "{name}");
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn missing_field_is_named() {
        let mut v = ExperimentConfig::preset("maze").unwrap().to_value().unwrap();
        v.as_table_mut().unwrap().remove("task");
        let err = ExperimentConfig::from_value(v).unwrap_err();
        match err {
            HarnessError::Config { field, .. } => assert_eq!(field, "task"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn wrong_schema_version_is_refused() {
        let text = ExperimentConfig::preset("chain").unwrap().to_toml_string().unwrap();
        let text = text.replace("schema_version = 1", "schema_version = 7");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, HarnessError::Config { ref field, .. } if field == "schema_version"));
        assert_eq!(err.exit_code(), crate::error::exit::CONFIG);
    }

    #[test]
    fn overrides_set_nested_fields() {
        let cfg = ExperimentConfig::resolve(
            Some("maze"),
            None,
            &["flow.epsilon=0.2".into(), "training.critic.aggregation=mean".into(), "seeds=[3, 4]".into()],
        )
        .unwrap();
        assert_eq!(cfg.flow.epsilon, 0.2);
        assert_eq!(cfg.training.critic.aggregation, Aggregation::Mean);
        assert_eq!(cfg.seeds, vec![3, 4]);
    }

    #[test]
    fn bad_override_names_the_field() {
        let err = ExperimentConfig::resolve(Some("maze"), None, &["flow.epsilon=-1".into()]).unwrap_err();
        assert!(matches!(err, HarnessError::Config { ref field, .. } if field == "flow.epsilon"), "{err}");
        let err = ExperimentConfig::resolve(Some("maze"), None, &["nope.x=1".into()]).unwrap_err();
        assert!(matches!(err, HarnessError::Config { ref field, .. } if field == "nope"), "{err}");
        let err = ExperimentConfig::resolve(Some("maze"), None, &["flow.bogus=1".into()]).unwrap_err();
        assert!(matches!(err, HarnessError::Config { ref field, .. } if field == "bogus"), "{err}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::preset("maze").unwrap();
        let mut b = a.clone();
        b.flow.epsilon = 0.051;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn cells_cover_the_grid() {
        let mut c = ExperimentConfig::preset("maze").unwrap();
        assert_eq!(c.cells().len(), 1);
        c.sweep.l_train = vec![0, 1];
        c.sweep.epsilon = vec![0.01, 0.05, 0.1];
        assert_eq!(c.cells().len(), 6);
        assert!(c.cells().iter().all(|x| x.num_particles == 5));
    }

    #[test]
    fn bound_check_sweep_matches_acceptance_grid() {
        let c = ExperimentConfig::preset("bound_check").unwrap();
        let s = &c.sweep;
        let n = s.epsilon.len() * s.steps.len() * s.alpha.len() * s.sigma.len() * s.num_particles.len() * s.reward_scale.len();
        assert_eq!(n, 2 * 10 * 2 * 3 * 2 * 2);
        assert!(c.flow.maxent && c.flow.clip_bounds.is_none());
    }
}
