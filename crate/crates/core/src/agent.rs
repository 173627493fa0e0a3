//! The end-to-end policy: reference samples, value-gradient transport,
//! best-of-N selection, environment rollouts and the offline training loop.
//!
//! Randomness at acting time is keyed by episode seed and step: the action
//! at step `t` of the episode with seed `s` draws its reference samples from
//! `SeedStreams::new(s).indexed("policy", t)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Adam, Tensor};
use crate::critic::{self, CriticConfig, CriticOptimizer, GradientNet, Nets, ValueModel};
use crate::envs::{Env, OfflineDataset};
use crate::error::{Error, Result};
use crate::flow::{self, ActionBox, FlowConfig, ParticleSet, ScoreOracle, ValueFunction};
use crate::refmodel::{FlowMatchModel, RefModelConfig};
use crate::rng::{SeedStreams, StreamRng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    /// Differentiate the online critics with respect to the action.
    #[default]
    Autodiff,
    /// Use the distilled gradient network.
    GradientNet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub gradient_steps: usize,
    pub batch_size: usize,
    /// Metrics are recorded every `log_every` steps and after the last one.
    pub log_every: usize,
    pub flow: FlowConfig,
    pub critic: CriticConfig,
    pub refmodel: RefModelConfig,
    pub score_source: ScoreSource,
    pub gradient_net_hidden: Vec<usize>,
    pub gradient_net_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gradient_steps: 50_000,
            batch_size: 256,
            log_every: 1000,
            flow: FlowConfig::default(),
            critic: CriticConfig::default(),
            refmodel: RefModelConfig::default(),
            score_source: ScoreSource::Autodiff,
            gradient_net_hidden: vec![64, 64],
            gradient_net_lr: 3e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be >= 1"));
        }
        if self.log_every == 0 {
            return Err(Error::config("training.log_every", "must be >= 1"));
        }
        if !(self.gradient_net_lr > 0.0) {
            return Err(Error::config("training.gradient_net_lr", "must be > 0"));
        }
        self.flow.validate()?;
        self.critic.validate()?;
        self.refmodel.validate()
    }
}

/// Everything needed to act: reference model, critics, transport settings.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentBundle {
    pub refmodel: FlowMatchModel,
    pub value: ValueModel,
    pub gradient_net: Option<GradientNet>,
    pub flow: FlowConfig,
    pub score_source: ScoreSource,
}

impl AgentBundle {
    /// Untrained bundle; networks are initialized from named streams of `streams`.
    pub fn init(state_dim: usize, action_dim: usize, cfg: &TrainConfig, bounds: Option<ActionBox>, streams: &SeedStreams) -> Result<Self> {
        cfg.validate()?;
        let refmodel = FlowMatchModel::new(state_dim, action_dim, &cfg.refmodel, bounds, &mut streams.stream("init-refmodel"))?;
        let value = ValueModel::new(state_dim, action_dim, &cfg.critic, &mut streams.stream("init-critic"))?;
        let gradient_net = match cfg.score_source {
            ScoreSource::GradientNet => Some(GradientNet::new(
                state_dim,
                action_dim,
                cfg.gradient_net_hidden.clone(),
                Activation::Gelu,
                &mut streams.stream("init-gradient-net"),
            )?),
            ScoreSource::Autodiff => None,
        };
        let bundle = AgentBundle {
            refmodel,
            value,
            gradient_net,
            flow: cfg.flow.clone(),
            score_source: cfg.score_source,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.refmodel.action_dim();
        let s = self.refmodel.state_dim();
        if self.value.action_dim() != d || self.value.state_dim() != s {
            return Err(Error::shape("AgentBundle", format!("critic ({s}, {d})"), format!("({}, {})", self.value.state_dim(), self.value.action_dim())));
        }
        if let Some(g) = &self.gradient_net {
            if g.action_dim() != d || g.state_dim() != s {
                return Err(Error::shape("AgentBundle", format!("gradient net ({s}, {d})"), format!("({}, {})", g.state_dim(), g.action_dim())));
            }
        }
        if self.score_source == ScoreSource::GradientNet && self.gradient_net.is_none() {
            return Err(Error::config("score_source", "gradient_net selected but the bundle has none"));
        }
        self.flow.validate()
    }

    pub fn state_dim(&self) -> usize {
        self.refmodel.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.refmodel.action_dim()
    }

    /// The score used to transport particles at acting time.
    pub fn score(&self) -> Box<dyn ScoreOracle + '_> {
        match (self.score_source, &self.gradient_net) {
            (ScoreSource::GradientNet, Some(g)) => Box::new(g),
            _ => Box::new(self.value.view(Nets::Online, self.value.score_aggregation, self.value.aggregation)),
        }
    }

    /// The value used to pick among particles.
    pub fn selector(&self) -> critic::CriticView<'_> {
        self.value.view(Nets::Online, self.value.score_aggregation, self.value.aggregation)
    }
}

/// `N` reference samples at `state`, transported `steps` flow steps.
pub fn vgf(state: &[f64], bundle: &AgentBundle, steps: usize, rng: &mut StreamRng) -> Result<ParticleSet> {
    let init = bundle.refmodel.sample(state, bundle.flow.num_particles, rng)?;
    let set = ParticleSet::new(init)?;
    flow::transport(&set, state, bundle.score().as_ref(), &bundle.flow, steps)
}

/// Index and coordinates of the highest-valued particle; the first one wins ties.
pub fn select_best(particles: &ParticleSet, state: &[f64], value: &dyn ValueFunction) -> Result<(usize, Vec<f64>)> {
    let states = Tensor::repeat_row(state, particles.len());
    let v = value.values(&states, particles.points())?;
    let best = argmax_first(&v)?;
    Ok((best, particles.particle(best).to_vec()))
}

/// Lowest index among the maximal entries.
pub fn argmax_first(values: &[f64]) -> Result<usize> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "particle value", index: i });
    }
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    if values.is_empty() {
        return Err(Error::usage("selection over an empty particle set"));
    }
    Ok(best)
}

/// How actions are chosen during a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Transport `l_test` steps, then take the best particle.
    Vgf { l_test: usize },
    /// One reference sample, no critic.
    BehaviorCloning,
    /// `n` reference samples, best by critic value, no transport.
    BestOfN { n: usize },
}

/// Per-step rng for acting in the episode with the given seed.
pub fn policy_rng(seed: u64, t: usize) -> StreamRng {
    SeedStreams::new(seed).indexed("policy", t as u64)
}

pub fn act(bundle: &AgentBundle, policy: PolicyKind, state: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
    match policy {
        PolicyKind::Vgf { l_test } => {
            let set = vgf(state, bundle, l_test, rng)?;
            Ok(select_best(&set, state, &bundle.selector())?.1)
        }
        PolicyKind::BehaviorCloning => Ok(bundle.refmodel.sample(state, 1, rng)?.into_data()),
        PolicyKind::BestOfN { n } => {
            let set = ParticleSet::new(bundle.refmodel.sample(state, n, rng)?)?;
            Ok(select_best(&set, state, &bundle.selector())?.1)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub l_test: Option<usize>,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    #[serde(rename = "return")]
    pub ret: f64,
    pub success: bool,
    pub steps: usize,
}

/// The one-line JSON form of an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub success: bool,
    pub steps: usize,
    pub l_test: Option<usize>,
}

impl EpisodeRecord {
    pub fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            seed: self.seed,
            ret: self.ret,
            success: self.success,
            steps: self.steps,
            l_test: self.l_test,
        }
    }
}

pub fn write_episodes_jsonl<W: Write>(mut w: W, episodes: &[EpisodeRecord]) -> Result<()> {
    for e in episodes {
        serde_json::to_writer(&mut w, &e.summary())?;
        writeln!(w)?;
    }
    Ok(())
}

/// Run one episode with an arbitrary per-step action rule.
pub fn rollout_with<E, F>(env: &mut E, max_steps: usize, seed: u64, mut choose: F) -> Result<EpisodeRecord>
where
    E: Env + ?Sized,
    F: FnMut(usize, &[f64]) -> Result<Vec<f64>>,
{
    let mut state = env.reset(seed);
    let mut rec = EpisodeRecord {
        seed,
        l_test: None,
        states: vec![state.clone()],
        actions: Vec::new(),
        rewards: Vec::new(),
        ret: 0.0,
        success: false,
        steps: 0,
    };
    for t in 0..max_steps {
        if env.is_terminal() {
            break;
        }
        let a = choose(t, &state)?;
        let out = env.step(&a).map_err(|e| match e {
            Error::Env { reason, .. } => Error::Env { step: t, reason },
            other => Error::Env { step: t, reason: other.to_string() },
        })?;
        rec.actions.push(a);
        rec.rewards.push(out.reward);
        rec.ret += out.reward;
        rec.states.push(out.state.clone());
        rec.steps += 1;
        state = out.state;
        if out.done {
            break;
        }
    }
    rec.success = env.success();
    Ok(rec)
}

/// Run one episode with the bundle.
pub fn rollout<E: Env + ?Sized>(env: &mut E, bundle: &AgentBundle, policy: PolicyKind, max_steps: usize, seed: u64) -> Result<EpisodeRecord> {
    let mut rec = rollout_with(env, max_steps, seed, |t, s| act(bundle, policy, s, &mut policy_rng(seed, t)))?;
    if let PolicyKind::Vgf { l_test } = policy {
        rec.l_test = Some(l_test);
    }
    Ok(rec)
}

/// One row of training metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub critic_loss: f64,
    pub fm_loss: f64,
    pub mean_q: f64,
    pub target_drift: f64,
    pub gradient_net_loss: Option<f64>,
}

impl MetricRow {
    pub const CSV_HEADER: &'static str = "step,critic_loss,fm_loss,mean_q,target_drift,gradient_net_loss";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step,
            self.critic_loss,
            self.fm_loss,
            self.mean_q,
            self.target_drift,
            self.gradient_net_loss.map_or(String::new(), |v| v.to_string())
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub bundle: AgentBundle,
    pub metrics: Vec<MetricRow>,
}

/// A run that hit a non-finite value; `bundle` holds the last finite parameters.
#[derive(Debug)]
pub struct TrainFailure {
    pub step: usize,
    pub error: Error,
    pub bundle: Box<AgentBundle>,
    pub metrics: Vec<MetricRow>,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training aborted at step {}: {}", self.step, self.error)
    }
}

impl std::error::Error for TrainFailure {}

/// Joint reference-model and critic training over a fixed dataset.
///
/// Each step draws one minibatch, takes a flow-matching step on its
/// `(s, a)` pairs, builds particle-averaged TD targets at `s'`, updates both
/// critics, optionally distills the gradient net, and soft-updates targets.
/// Updates are applied only after their loss and gradients are known to be
/// finite, so on failure the returned bundle is the last good state.
pub fn train_offline(
    dataset: &OfflineDataset,
    cfg: &TrainConfig,
    bounds: Option<ActionBox>,
    seed: u64,
    mut on_metrics: impl FnMut(&MetricRow),
) -> std::result::Result<TrainOutcome, TrainFailure> {
    let streams = SeedStreams::new(seed);
    let fail0 = |error: Error| TrainFailure {
        step: 0,
        error,
        bundle: Box::new(placeholder_bundle()),
        metrics: Vec::new(),
    };
    cfg.validate().map_err(fail0)?;
    if dataset.is_empty() {
        return Err(fail0(Error::usage("training on an empty dataset")));
    }
    let mut bundle = AgentBundle::init(dataset.state_dim(), dataset.action_dim(), cfg, bounds, &streams).map_err(fail0)?;
    let mut metrics = Vec::new();
    let mut batch_rng = streams.stream("batches");
    let mut fm_rng = streams.stream("fm-noise");
    let mut td_rng = streams.stream("td-particles");
    let mut fm_opt = Adam::new(cfg.refmodel.lr);
    let mut critic_opt = CriticOptimizer::new(cfg.critic.lr);
    let mut gnet_opt = Adam::new(cfg.gradient_net_lr);

    for step in 1..=cfg.gradient_steps {
        let result = (|| -> Result<MetricRow> {
            let batch = dataset.sample_batch(cfg.batch_size, &mut batch_rng);
            let fm_loss = bundle.refmodel.train_step(&mut fm_opt, &batch.states, &batch.actions, &mut fm_rng)?;
            let y = critic::td_target(&bundle.value, &bundle.refmodel, &bundle.flow, &batch, &mut td_rng)?;
            let critic_loss = bundle.value.critic_update(&mut critic_opt, &batch, &y)?;
            let gradient_net_loss = match bundle.gradient_net.as_mut() {
                Some(g) => Some(g.distill(&mut gnet_opt, &bundle.value, &batch.states, &batch.actions)?),
                None => None,
            };
            bundle.value.soft_update();
            let log = step % cfg.log_every == 0 || step == cfg.gradient_steps;
            let (mean_q, target_drift) = if log {
                let q = bundle.value.aggregated(Nets::Online, bundle.value.aggregation, &batch.states, &batch.actions)?;
                (q.iter().sum::<f64>() / q.len() as f64, bundle.value.target_drift())
            } else {
                (f64::NAN, f64::NAN)
            };
            Ok(MetricRow {
                step,
                critic_loss,
                fm_loss,
                mean_q,
                target_drift,
                gradient_net_loss,
            })
        })();
        match result {
            Ok(row) => {
                if step % cfg.log_every == 0 || step == cfg.gradient_steps {
                    on_metrics(&row);
                    metrics.push(row);
                }
            }
            Err(error) => {
                return Err(TrainFailure {
                    step,
                    error,
                    bundle: Box::new(bundle),
                    metrics,
                })
            }
        }
    }
    Ok(TrainOutcome { bundle, metrics })
}

fn placeholder_bundle() -> AgentBundle {
    let cfg = TrainConfig {
        critic: CriticConfig {
            hidden_dims: vec![1],
            ..CriticConfig::default()
        },
        refmodel: RefModelConfig {
            hidden_dims: vec![1],
            ..RefModelConfig::default()
        },
        ..TrainConfig::default()
    };
    AgentBundle::init(1, 1, &cfg, None, &SeedStreams::new(0)).expect("static config is valid")
}
