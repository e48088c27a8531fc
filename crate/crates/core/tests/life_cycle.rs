use neurevo_core::inner_loop::{
    fitness_weights, run_genotype, run_life_cycle, LifeCycleConfig, RandomAgent, TraceRecord,
};
use neurevo_core::linalg::sigmoid;
use neurevo_core::maze::MazeTask;
use neurevo_core::models::{Arch, ModelConfig};
use neurevo_core::plasticity::ModulationKind;
use neurevo_core::seed::rng_from;
use proptest::prelude::*;
use rand::Rng;

// East of the start is a wall.
const EAST_BLOCKED: &str = "5 5\n#####\n#.#.#\n#...#\n#...#\n#####\nstart 1 1\ngoal 3 3\n";
// Goal one step east of the start.
const EAST_GOAL: &str = "5 5\n#####\n#.#.#\n#...#\n#...#\n#####\nstart 2 1\ngoal 2 2\n";

fn model() -> ModelConfig {
    ModelConfig::new(Arch::DecPrnn, 4, ModulationKind::PostDn)
}

/// Zero genotype whose action head is forced into the greedy branch.
/// With all direction logits equal, greedy picks east every step.
fn greedy_east(cfg: &ModelConfig) -> Vec<f64> {
    let mut g = vec![0.0; cfg.param_count()];
    let out_b = cfg.layout().get("out.b").unwrap().range();
    g[out_b.start + 4] = 10.0;
    g
}

fn random_genotype(cfg: &ModelConfig, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = rng_from(seed);
    (0..cfg.param_count())
        .map(|_| rng.random_range(-scale..scale))
        .collect()
}

#[test]
fn stuck_agent_times_out_every_episode() {
    let cfg = model();
    let task = MazeTask::from_text(EAST_BLOCKED).unwrap();
    let r = run_genotype(&greedy_east(&cfg), &cfg, &task, &LifeCycleConfig::default(), 1).unwrap();
    assert_eq!(r.episode_steps, vec![200; 8]);
    assert!(r.episode_rewards.iter().all(|x| (x + 2.0).abs() < 1e-9));
    assert!((r.fitness - -2.0 * 3.68928).abs() < 1e-9);
    assert!((r.fitness + 7.37856).abs() < 1e-9);
    assert!(r.reached_goal.iter().all(|g| !g));
}

#[test]
fn one_step_agent_hits_upper_bound() {
    let cfg = model();
    let task = MazeTask::from_text(EAST_GOAL).unwrap();
    let r = run_genotype(&greedy_east(&cfg), &cfg, &task, &LifeCycleConfig::default(), 1).unwrap();
    assert_eq!(r.episode_rewards, vec![1.0; 8]);
    assert!((r.fitness - 3.68928).abs() < 1e-12);
}

#[test]
fn zero_genotype_samples_uniformly() {
    // σ(0) = 0.5 is not above one half, so a zero genotype random-walks.
    assert_eq!(sigmoid(0.0), 0.5);
    let cfg = model();
    let task = MazeTask::generate(9, 3).unwrap();
    let zero = vec![0.0; cfg.param_count()];
    let r = run_genotype(&zero, &cfg, &task, &LifeCycleConfig::default(), 5).unwrap();
    let walk = run_life_cycle(&mut RandomAgent, &task, &LifeCycleConfig::default(), 5).unwrap();
    assert!(r.accumulated_coverage.last().unwrap() > &(1.0 / task.free_count() as f64));
    assert_eq!(r.episode_rewards.len(), walk.episode_rewards.len());
}

#[test]
fn same_inputs_same_result() {
    let cfg = model();
    let g = random_genotype(&cfg, 7, 0.5);
    let task = MazeTask::generate(9, 11).unwrap();
    let lc = LifeCycleConfig::default();
    let a = run_genotype(&g, &cfg, &task, &lc, 99).unwrap();
    let b = run_genotype(&g, &cfg, &task, &lc, 99).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.fitness.to_bits(), b.fitness.to_bits());
}

#[test]
fn fitness_is_the_weighted_sum() {
    let cfg = model();
    let lc = LifeCycleConfig::default();
    let w = fitness_weights(8).unwrap();
    for seed in 0..8 {
        let g = random_genotype(&cfg, seed, 1.0);
        let task = MazeTask::generate(9, seed).unwrap();
        let r = run_genotype(&g, &cfg, &task, &lc, seed).unwrap();
        let mut expect = 0.0;
        for z in 0..8 {
            expect += w[z] * r.episode_rewards[z];
        }
        assert_eq!(r.fitness.to_bits(), expect.to_bits());
    }
}

#[test]
fn traces_count_and_replay() {
    let cfg = ModelConfig::new(Arch::DecPrnn, 3, ModulationKind::PostDn);
    let g = random_genotype(&cfg, 21, 0.8);
    let task = MazeTask::generate(9, 2).unwrap();
    let mut lc = LifeCycleConfig::with_episodes(3).unwrap();
    lc.max_steps = 40;
    lc.record_traces = true;

    for stride in [1, 3, 7] {
        lc.record_stride = stride;
        let r = run_genotype(&g, &cfg, &task, &lc, 4).unwrap();
        let n = r.traces.as_ref().unwrap().len();
        assert_eq!(n, r.total_steps().div_ceil(stride), "stride {stride}");
    }

    // Stride 1: every weight change is the modulated decomposed delta of the
    // recorded consecutive hidden states.
    lc.record_stride = 1;
    let r = run_genotype(&g, &cfg, &task, &lc, 4).unwrap();
    let layout = cfg.layout();
    let get = |name: &str| &g[layout.get(name).unwrap().range()];
    let (ax, bx, cx, dx) = (get("rule_h.ax"), get("rule_h.bx"), get("rule_h.cx"), get("rule_h.dx"));
    let (ay, by, cy, dy) = (get("rule_h.ay"), get("rule_h.by"), get("rule_h.cy"), get("rule_h.dy"));
    let (mw, mb) = (get("mod.w"), get("mod.b"));
    let traces: &[TraceRecord] = r.traces.as_ref().unwrap();
    for pair in traces.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        let x = &prev.h;
        let y = &next.h;
        let m = sigmoid((0..3).map(|k| mw[k] * y[k]).sum::<f64>() + mb[0]);
        for r_ in 0..3 {
            for c in 0..3 {
                let delta = (ay[r_] * y[r_]) * (ax[c] * x[c])
                    + by[r_] * (bx[c] * x[c])
                    + (cy[r_] * y[r_]) * cx[c]
                    + dy[r_] * dx[c];
                let got = next.w_h_p[r_ * 3 + c] - prev.w_h_p[r_ * 3 + c];
                assert!(
                    (got - m * delta).abs() < 1e-12,
                    "t={} ({r_},{c}): {got} vs {}",
                    next.t,
                    m * delta
                );
            }
        }
    }
}

#[test]
fn trace_records_serialize_with_expected_keys() {
    let rec = TraceRecord {
        t: 3,
        episode: 0,
        w_h_p: vec![0.5],
        h: vec![-0.25],
        c: None,
    };
    let json = serde_json::to_string(&rec).unwrap();
    assert_eq!(json, r#"{"t":3,"episode":0,"W_h_p":[0.5],"h":[-0.25]}"#);
    let back: TraceRecord = serde_json::from_str(&json).unwrap();
    assert_eq!(back, rec);
}

#[test]
fn lstm_traces_carry_cell_state() {
    let cfg = ModelConfig::new(Arch::MetaLstm, 2, ModulationKind::None);
    let g = random_genotype(&cfg, 1, 0.3);
    let task = MazeTask::generate(9, 1).unwrap();
    let mut lc = LifeCycleConfig::with_episodes(3).unwrap();
    lc.max_steps = 5;
    lc.record_traces = true;
    let r = run_genotype(&g, &cfg, &task, &lc, 0).unwrap();
    assert!(r
        .traces
        .unwrap()
        .iter()
        .all(|t| t.c.as_ref().is_some_and(|c| c.len() == 2)));
}

#[test]
fn exploding_rules_rank_worst() {
    let cfg = ModelConfig::new(Arch::Prnn, 4, ModulationKind::None);
    let g = vec![1e307; cfg.param_count()];
    let task = MazeTask::generate(9, 0).unwrap();
    let r = run_genotype(&g, &cfg, &task, &LifeCycleConfig::default(), 0).unwrap();
    assert_eq!(r.fitness, f64::NEG_INFINITY);
    assert!(r.fault.as_deref().unwrap().contains("episode"));
}

#[test]
fn reset_flag_changes_only_state_handling() {
    let cfg = model();
    let g = random_genotype(&cfg, 3, 0.7);
    let task = MazeTask::generate(9, 8).unwrap();
    let keep = LifeCycleConfig::default();
    let reset = LifeCycleConfig {
        reset_state_between_episodes: true,
        ..LifeCycleConfig::default()
    };
    let a = run_genotype(&g, &cfg, &task, &keep, 2).unwrap();
    let b = run_genotype(&g, &cfg, &task, &reset, 2).unwrap();
    // The first episode runs before any boundary.
    assert_eq!(a.episode_rewards[0], b.episode_rewards[0]);
    assert_eq!(a.episode_steps[0], b.episode_steps[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rewards_bounded_and_coverage_monotone(gseed in any::<u64>(), maze in any::<u64>(), scale in 0.01f64..2.0) {
        let cfg = model();
        let g = random_genotype(&cfg, gseed, scale);
        let task = MazeTask::generate(9, maze).unwrap();
        let r = run_genotype(&g, &cfg, &task, &LifeCycleConfig::default(), gseed ^ maze).unwrap();
        for z in 0..8 {
            prop_assert!(r.episode_rewards[z] >= -2.0 - 1e-9 && r.episode_rewards[z] <= 1.0);
            prop_assert!(r.per_episode_coverage[z] > 0.0 && r.per_episode_coverage[z] <= 1.0);
            prop_assert!(r.per_episode_coverage[z] <= r.accumulated_coverage[z] + 1e-15);
        }
        for w in r.accumulated_coverage.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
    }
}
