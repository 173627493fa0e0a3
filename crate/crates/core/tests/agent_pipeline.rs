//! End-to-end pieces of the agent: dataset properties, TD targets, acting
//! and checkpoints.

use vgf::agent::{self, AgentBundle, PolicyKind, TrainConfig};
use vgf::autodiff::Tensor;
use vgf::checkpoint::Checkpoint;
use vgf::critic::{self, Aggregation, CriticConfig, Nets};
use vgf::envs::bandit::gen_bandit_dataset;
use vgf::envs::maze::{gen_maze_dataset, verify_dataset};
use vgf::envs::{BimodalBandit, Env, PointMaze};
use vgf::flow::FlowConfig;
use vgf::refmodel::RefModelConfig;
use vgf::rng::SeedStreams;

fn small_train_config(l_train: usize, n: usize) -> TrainConfig {
    TrainConfig {
        gradient_steps: 30,
        batch_size: 16,
        log_every: 10,
        flow: FlowConfig {
            l_train,
            l_test: 2,
            num_particles: n,
            ..FlowConfig::default()
        },
        critic: CriticConfig {
            hidden_dims: vec![16, 16],
            aggregation: Aggregation::Min,
            ..CriticConfig::default()
        },
        refmodel: RefModelConfig {
            hidden_dims: vec![16, 16],
            integration_steps: 4,
            ..RefModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn maze_dataset_has_no_start_to_goal_trajectory() {
    let d = gen_maze_dataset(500, 0).unwrap();
    verify_dataset(&d).unwrap();
    let mut reaching_goal = 0;
    for t in &d.manifest.trajectories {
        let origin = [t.origin[0], t.origin[1]];
        let end = [t.terminus[0], t.terminus[1]];
        assert!(!(PointMaze::in_start_region(origin) && PointMaze::in_goal(end)), "{t:?}");
        if PointMaze::in_goal(end) {
            reaching_goal += 1;
            assert_eq!(t.family, "b");
        }
    }
    assert!(reaching_goal > 0, "nothing to stitch toward");
    assert!(d.manifest.trajectories.iter().any(|t| t.family == "a"));
}

#[test]
fn td_target_without_transport_matches_a_direct_average() {
    let data = gen_bandit_dataset(64, 1).unwrap();
    let cfg = small_train_config(0, 4);
    let bundle = AgentBundle::init(1, 2, &cfg, Some(BimodalBandit::action_box()), &SeedStreams::new(5)).unwrap();
    let batch = data.gather(&(0..8).collect::<Vec<_>>());
    let mut rng = SeedStreams::new(9).stream("td");
    let mut twin = rng.clone();
    let y = critic::td_target(&bundle.value, &bundle.refmodel, &bundle.flow, &batch, &mut rng).unwrap();

    let n = 4;
    let samples = bundle.refmodel.sample_rows(&batch.next_states, n, &mut twin).unwrap();
    let states = Tensor::from_rows(&(0..8 * n).map(|k| batch.next_states.row(k / n).to_vec()).collect::<Vec<_>>()).unwrap();
    let (q1, q2) = bundle.value.q_values(Nets::Target, &states, &samples).unwrap();
    for i in 0..8 {
        let boot: f64 = (0..n).map(|k| q1[i * n + k].min(q2[i * n + k])).sum::<f64>() / n as f64;
        let want = batch.rewards[i] + bundle.value.gamma * (1.0 - batch.dones[i]) * boot;
        assert!((y[i] - want).abs() < 1e-12, "row {i}: {} vs {want}", y[i]);
    }
}

#[test]
fn zero_step_vgf_is_best_of_n_over_reference_samples() {
    let data = gen_bandit_dataset(128, 2).unwrap();
    let cfg = small_train_config(1, 5);
    let out = agent::train_offline(&data, &cfg, Some(BimodalBandit::action_box()), 3, |_| {}).unwrap();
    let b = &out.bundle;
    for t in 0..20 {
        let state = [0.0];
        let vgf = agent::act(b, PolicyKind::Vgf { l_test: 0 }, &state, &mut agent::policy_rng(77, t)).unwrap();
        let bon = agent::act(b, PolicyKind::BestOfN { n: 5 }, &state, &mut agent::policy_rng(77, t)).unwrap();
        assert_eq!(vgf, bon);

        let samples = b.refmodel.sample(&state, 5, &mut agent::policy_rng(77, t)).unwrap();
        let values = b.value.aggregated(Nets::Online, b.value.aggregation, &Tensor::repeat_row(&state, 5), &samples).unwrap();
        let best = agent::argmax_first(&values).unwrap();
        assert_eq!(vgf.as_slice(), samples.row(best));
    }
}

#[test]
fn checkpoint_restores_identical_behaviour() {
    let data = gen_maze_dataset(20, 4).unwrap();
    let cfg = small_train_config(1, 3);
    let out = agent::train_offline(&data, &cfg, Some(PointMaze::action_box()), 8, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("agent.vgf");
    out.bundle.to_checkpoint(serde_json::json!({ "seed": 8 })).unwrap().save(&path).unwrap();
    let (restored, extra) = AgentBundle::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(extra["seed"], 8);
    assert_eq!(restored, out.bundle);
    let policy = PolicyKind::Vgf { l_test: 2 };
    let a = agent::rollout(&mut PointMaze::new(), &out.bundle, policy, 15, 1001).unwrap();
    let b = agent::rollout(&mut PointMaze::new(), &restored, policy, 15, 1001).unwrap();
    assert_eq!(a, b);
}

#[test]
fn rollouts_respect_the_step_limit_and_record_actions() {
    let data = gen_maze_dataset(20, 4).unwrap();
    let out = agent::train_offline(&data, &small_train_config(1, 3), Some(PointMaze::action_box()), 1, |_| {}).unwrap();
    let mut env = PointMaze::new();
    let rec = agent::rollout(&mut env, &out.bundle, PolicyKind::BehaviorCloning, 7, 3).unwrap();
    assert!(rec.steps <= 7);
    assert_eq!(rec.actions.len(), rec.steps);
    assert!(rec.actions.iter().all(|a| PointMaze::action_box().contains(a)));
    assert_eq!(env.state_dim(), 2);
}
