//! The `train`, `eval`, `verify-bound` and `gen-data` commands.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use vgf::agent::{self, AgentBundle, MetricRow, PolicyKind};
use vgf::checkpoint::Checkpoint;
use vgf::envs::bandit::gen_bandit_dataset;
use vgf::envs::chain::gen_chain_dataset;
use vgf::envs::maze::gen_maze_dataset;
use vgf::envs::{AnalyticReward, BimodalBandit, ChainMdp, Env, OfflineDataset, PointMaze};
use vgf::flow::{self, ActionBox, FlowConfig, ParticleSet, Trajectory, TransportBudget};
use vgf::kernels::{self, BandwidthPolicy};
use vgf::refmodel::standard_normal;
use vgf::rng::SeedStreams;

use crate::config::{ExperimentConfig, Task, TrainCell};
use crate::error::{HarnessError, Result};
use crate::record::{self, BoundRow, EvalRow, RunRecord, Summary, TrainSummary};

pub fn make_env(task: Task) -> Result<Box<dyn Env + Send>> {
    Ok(match task {
        Task::Bandit => Box::new(BimodalBandit::new()),
        Task::Maze => Box::new(PointMaze::new()),
        Task::Chain => Box::new(ChainMdp::new()),
        Task::BoundCheck => return Err(HarnessError::config("task", "bound_check has no environment")),
    })
}

pub fn action_bounds(task: Task) -> ActionBox {
    match task {
        Task::Bandit => BimodalBandit::action_box(),
        Task::Maze => PointMaze::action_box(),
        Task::Chain | Task::BoundCheck => ActionBox::UNIT,
    }
}

/// The dataset training seed `seed` uses.
pub fn dataset_for(cfg: &ExperimentConfig, seed: u64) -> Result<OfflineDataset> {
    if let Some(p) = &cfg.data.path {
        return Ok(OfflineDataset::load(p)?);
    }
    let data_seed = cfg.data.seed.wrapping_add(seed);
    let mut d = match cfg.task {
        Task::Bandit => gen_bandit_dataset(cfg.data.size, data_seed)?,
        Task::Maze => gen_maze_dataset(cfg.data.size, data_seed)?,
        Task::Chain => gen_chain_dataset(cfg.data.size, data_seed)?,
        Task::BoundCheck => return Err(HarnessError::config("task", "bound_check has no dataset")),
    };
    d.manifest.config_hash = Some(cfg.hash());
    Ok(d)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::config("sweep.workers", e.to_string()))
}

fn policy_label(p: PolicyKind) -> String {
    match p {
        PolicyKind::Vgf { .. } => "vgf".into(),
        PolicyKind::BehaviorCloning => "behavior_cloning".into(),
        PolicyKind::BestOfN { n } => format!("best_of_{n}"),
    }
}

fn relative(dir: &Path, path: &Path) -> String {
    path.strip_prefix(dir).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

/// Evaluation policies: VGF at every `L_test`, then the baselines.
pub fn policies(l_test: &[usize], baselines: &[PolicyKind]) -> Vec<PolicyKind> {
    l_test.iter().map(|&l| PolicyKind::Vgf { l_test: l }).chain(baselines.iter().copied()).collect()
}

/// One episode per (policy, episode seed).
pub fn evaluate(task: Task, bundle: &AgentBundle, policies: &[PolicyKind], episode_seeds: &[u64], max_steps: usize, cell: &str, seed: u64) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::with_capacity(policies.len() * episode_seeds.len());
    for &policy in policies {
        for &ep in episode_seeds {
            let mut env = make_env(task)?;
            let rec = agent::rollout(env.as_mut(), bundle, policy, max_steps, ep)?;
            rows.push(EvalRow {
                cell: cell.to_string(),
                seed,
                policy: policy_label(policy),
                l_test: rec.l_test,
                episode_seed: ep,
                ret: rec.ret,
                success: rec.success,
                steps: rec.steps,
                first_action: rec.actions.first().cloned().unwrap_or_default(),
            });
        }
    }
    Ok(rows)
}

/// Particle paths at the initial state of the episode with `episode_seed`,
/// starting from the same reference samples the VGF policy draws there.
pub fn trace_first_state(task: Task, bundle: &AgentBundle, episode_seed: u64, steps: usize) -> Result<Trajectory> {
    let state = make_env(task)?.reset(episode_seed);
    let mut rng = agent::policy_rng(episode_seed, 0);
    let init = ParticleSet::new(bundle.refmodel.sample(&state, bundle.flow.num_particles, &mut rng)?)?;
    let (_, traj) = flow::transport_traced(&init, &state, bundle.score().as_ref(), &bundle.flow, steps)?;
    Ok(traj)
}

struct CellOutput {
    rows: Vec<EvalRow>,
    train: TrainSummary,
    files: Vec<PathBuf>,
}

fn train_cell(cfg: &ExperimentConfig, hash: &str, dir: &Path, cell: TrainCell, seed: u64) -> Result<CellOutput> {
    let label = cell.label();
    let cell_dir = dir.join("cells").join(&label).join(format!("seed{seed}"));
    let data = dataset_for(cfg, seed)?;
    let tc = cfg.train_config(&cell);
    let metrics_path = cell_dir.join(record::METRICS_FILE);
    let outcome = agent::train_offline(&data, &tc, Some(action_bounds(cfg.task)), seed, |_| {});
    let (bundle, metrics): (AgentBundle, Vec<MetricRow>) = match outcome {
        Ok(o) => (o.bundle, o.metrics),
        Err(f) => {
            record::write(&metrics_path, &record::metrics_csv(hash, &f.metrics))?;
            return Err(HarnessError::Diverged {
                cell: format!("{label}/seed{seed}"),
                step: f.step,
                source: f.error,
            });
        }
    };
    record::write(&metrics_path, &record::metrics_csv(hash, &metrics))?;
    let ck_path = cell_dir.join(record::CHECKPOINT_FILE);
    let extra = json!({ "config_hash": hash, "name": cfg.name, "task": cfg.task, "cell": cell, "seed": seed });
    std::fs::create_dir_all(&cell_dir).map_err(|e| HarnessError::io(&cell_dir, e))?;
    bundle.to_checkpoint(extra)?.save(&ck_path)?;
    let mut files = vec![metrics_path, ck_path.clone(), vgf::checkpoint::manifest_path(&ck_path)];

    let pols = policies(&cfg.eval.l_test, &cfg.eval.baselines);
    let rows = evaluate(cfg.task, &bundle, &pols, &cfg.eval.seeds, cfg.eval.max_steps, &label, seed)?;
    if cfg.eval.dump_trajectories {
        if let Some(&ep) = cfg.eval.seeds.first() {
            let steps = cfg.eval.l_test.iter().copied().max().unwrap_or(0);
            let traj = trace_first_state(cfg.task, &bundle, ep, steps)?;
            let mut buf = record::hash_line(hash).into_bytes();
            traj.write_csv(&mut buf).map_err(|e| HarnessError::io(&cell_dir, e))?;
            let p = cell_dir.join(record::TRAJECTORY_FILE);
            record::write(&p, &String::from_utf8(buf).expect("csv is utf-8"))?;
            files.push(p);
        }
    }
    Ok(CellOutput {
        rows,
        train: TrainSummary {
            cell: label,
            seed,
            steps: tc.gradient_steps,
            last: metrics.last().cloned(),
        },
        files,
    })
}

fn finish(command: &str, cfg: &ExperimentConfig, dir: &Path, mut files: Vec<PathBuf>, summary: Summary) -> Result<RunRecord> {
    let hash = cfg.hash();
    let cfg_path = dir.join("config.toml");
    record::write(&cfg_path, &cfg.to_toml_string()?)?;
    files.push(cfg_path);
    files.push(dir.join(record::SUMMARY_FILE));
    let mut rel: Vec<String> = files.iter().map(|p| relative(dir, p)).collect();
    rel.sort();
    let rec = RunRecord {
        command: command.into(),
        config: cfg.clone(),
        config_hash: hash,
        build_id: record::build_id(),
        files: rel,
        summary,
    };
    rec.save(dir)?;
    Ok(rec)
}

fn write_eval(dir: &Path, hash: &str, rows: &mut [EvalRow]) -> Result<PathBuf> {
    rows.sort_by(|a, b| a.key().cmp(&b.key()));
    let path = dir.join(record::EVAL_FILE);
    record::write(&path, &record::csv_with_hash(hash, EvalRow::HEADER, rows.iter().map(EvalRow::csv)))?;
    Ok(path)
}

/// Train every (cell, seed) pair on the worker pool, checkpoint, evaluate.
pub fn train(cfg: &ExperimentConfig, dir: &Path) -> Result<RunRecord> {
    if cfg.task == Task::BoundCheck {
        return Err(HarnessError::config("task", "bound_check has nothing to train; use verify-bound"));
    }
    let hash = cfg.hash();
    let jobs: Vec<(TrainCell, u64)> = cfg.cells().into_iter().flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s))).collect();
    let outputs: Vec<Result<CellOutput>> = pool(cfg.sweep.workers)?.install(|| jobs.par_iter().map(|&(c, s)| train_cell(cfg, &hash, dir, c, s)).collect());
    let mut rows = Vec::new();
    let mut training = Vec::new();
    let mut files = Vec::new();
    for out in outputs {
        let out = out?;
        rows.extend(out.rows);
        training.push(out.train);
        files.extend(out.files);
    }
    training.sort_by(|a, b| (&a.cell, a.seed).cmp(&(&b.cell, b.seed)));
    files.push(write_eval(dir, &hash, &mut rows)?);
    let summary = Summary {
        training,
        eval: record::summarize_eval(&rows),
        bound: None,
    };
    finish("train", cfg, dir, files, summary)
}

/// Evaluate a saved checkpoint at the configured `L_test` values and episode seeds.
pub fn eval(cfg: &ExperimentConfig, checkpoint: &Path, dir: &Path) -> Result<RunRecord> {
    let ck = Checkpoint::load(checkpoint)?;
    let (bundle, extra) = AgentBundle::from_checkpoint(&ck)?;
    let task = match extra.get("task") {
        Some(t) => serde_json::from_value(t.clone())?,
        None => cfg.task,
    };
    if task != cfg.task {
        return Err(HarnessError::config("task", format!("checkpoint was trained on {task:?}, config says {:?}", cfg.task)));
    }
    let seed = extra.get("seed").and_then(|s| s.as_u64()).unwrap_or(0);
    let cell = extra
        .get("cell")
        .and_then(|c| serde_json::from_value::<TrainCell>(c.clone()).ok())
        .map(|c| c.label())
        .unwrap_or_else(|| "checkpoint".into());
    let hash = cfg.hash();
    let pols = policies(&cfg.eval.l_test, &cfg.eval.baselines);
    let mut rows = evaluate(task, &bundle, &pols, &cfg.eval.seeds, cfg.eval.max_steps, &cell, seed)?;
    let files = vec![write_eval(dir, &hash, &mut rows)?];
    let summary = Summary {
        training: Vec::new(),
        eval: record::summarize_eval(&rows),
        bound: None,
    };
    finish("eval", cfg, dir, files, summary)
}

/// One bound-check cell. The initial particles depend only on `(seed, N)`,
/// so every budget is measured from the same starting set.
pub fn bound_cell(dim: usize, epsilon: f64, steps: usize, alpha: f64, sigma: f64, n: usize, c: f64, seed: u64) -> Result<BoundRow> {
    let mut rng = SeedStreams::new(seed).indexed("bound-init", n as u64);
    let x0 = standard_normal(n, dim, &mut rng);
    let mut w = vec![0.0; dim];
    w[0] = c;
    let reward = AnalyticReward::linear(w)?;
    let cfg = FlowConfig {
        l_train: steps,
        l_test: steps,
        epsilon,
        alpha,
        num_particles: n,
        maxent: true,
        bandwidth: BandwidthPolicy::Fixed(sigma),
        optimizer: flow::ParticleOptimizer::Plain,
        clip_bounds: None,
    };
    let state = [0.0];
    let xl = flow::transport(&ParticleSet::new(x0.clone())?, &state, &reward, &cfg, steps)?;
    let mmd2 = kernels::mmd_squared(&x0, xl.points(), sigma)?;
    let bound = flow::mmd_bound(&TransportBudget {
        epsilon,
        steps,
        sigma,
        alpha,
        lipschitz: reward.lipschitz(),
    })?;
    Ok(BoundRow {
        epsilon,
        steps,
        alpha,
        sigma,
        num_particles: n,
        reward_scale: c,
        seed,
        mmd2,
        bound,
    })
}

/// Empirical MMD² against the analytic bound over the whole sweep grid.
pub fn verify_bound(cfg: &ExperimentConfig, dir: &Path) -> Result<RunRecord> {
    let s = &cfg.sweep;
    let mut grid = Vec::new();
    for &eps in &s.epsilon {
        for &l in &s.steps {
            for &alpha in &s.alpha {
                for &sigma in &s.sigma {
                    for &n in &s.num_particles {
                        for &c in &s.reward_scale {
                            for &seed in &cfg.seeds {
                                grid.push((eps, l, alpha, sigma, n, c, seed));
                            }
                        }
                    }
                }
            }
        }
    }
    let mut rows: Vec<BoundRow> = pool(s.workers)?.install(|| {
        grid.par_iter()
            .map(|&(eps, l, alpha, sigma, n, c, seed)| bound_cell(s.dim, eps, l, alpha, sigma, n, c, seed))
            .collect::<Result<_>>()
    })?;
    rows.sort_by_key(BoundRow::key);
    let hash = cfg.hash();
    let path = dir.join(record::BOUND_FILE);
    record::write(&path, &record::csv_with_hash(&hash, BoundRow::HEADER, rows.iter().map(BoundRow::csv)))?;
    let summary = Summary {
        training: Vec::new(),
        eval: Vec::new(),
        bound: Some(record::summarize_bound(&rows)),
    };
    finish("verify-bound", cfg, dir, vec![path], summary)
}

/// Write the dataset every training seed would use, with manifests.
pub fn gen_data(cfg: &ExperimentConfig, dir: &Path) -> Result<RunRecord> {
    let mut files = Vec::new();
    for &seed in &cfg.seeds {
        let d = dataset_for(cfg, seed)?;
        let path = dir.join("data").join(format!("{}_seed{seed}.csv", cfg.name));
        if let Some(p) = path.parent() {
            std::fs::create_dir_all(p).map_err(|e| HarnessError::io(p, e))?;
        }
        d.save(&path)?;
        files.push(vgf::envs::dataset::manifest_path(&path));
        files.push(path);
    }
    finish("gen-data", cfg, dir, files, Summary::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_step_bound_cell_is_exact() {
        let r = bound_cell(2, 0.05, 0, 0.1, 1.0, 5, 1.0, 0).unwrap();
        assert!(r.mmd2 <= 1e-12);
        assert_eq!(r.bound, 0.0);
    }

    #[test]
    fn bound_doubles_with_steps() {
        let a = bound_cell(2, 0.01, 3, 1.0, 0.5, 5, 1.0, 0).unwrap();
        let b = bound_cell(2, 0.01, 6, 1.0, 0.5, 5, 1.0, 0).unwrap();
        assert_eq!(b.bound, 2.0 * a.bound);
        assert!(a.slack() >= 0.0 && b.slack() >= 0.0);
    }

    #[test]
    fn policy_list_puts_vgf_first() {
        let p = policies(&[0, 2], &[PolicyKind::BehaviorCloning]);
        assert_eq!(p, vec![PolicyKind::Vgf { l_test: 0 }, PolicyKind::Vgf { l_test: 2 }, PolicyKind::BehaviorCloning]);
        assert_eq!(policy_label(PolicyKind::BestOfN { n: 20 }), "best_of_20");
    }
}
