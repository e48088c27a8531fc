//! One genotype living through a multi-episode life cycle on one maze.
//!
//! The phenotype is initialized once per task and persists across all
//! episodes: plastic weights and neuron states carry whatever the agent
//! learned in earlier episodes into later ones.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::sigmoid;
use crate::maze::{Direction, EnvState, InputVector, MazeTask, Pos, VisitedSet, INPUT_DIM};
use crate::models::{Model, ModelConfig, Phenotype, OUTPUT_DIM};
use crate::seed::{Rng as StreamRng, SeedPath};
use crate::{Error, Result};

pub const DEFAULT_EPISODES: usize = 8;
pub const FITNESS_DISCOUNT: f64 = 0.8;

/// Episode weights: zero for the first two episodes, then `0.8^(τ-z-1)`.
pub fn fitness_weights(episodes: usize) -> Result<Vec<f64>> {
    if episodes < 3 {
        return Err(Error::InvalidArgument(format!(
            "a life cycle needs at least 3 episodes, got {episodes}"
        )));
    }
    Ok((0..episodes)
        .map(|z| {
            if z < 2 {
                0.0
            } else {
                FITNESS_DISCOUNT.powi((episodes - z - 1) as i32)
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifeCycleConfig {
    pub episodes: usize,
    pub max_steps: usize,
    pub fitness_weights: Vec<f64>,
    pub record_traces: bool,
    pub record_stride: usize,
    pub record_paths: bool,
    /// Zero neuron states at each episode boundary (ablation; default keeps them).
    pub reset_state_between_episodes: bool,
}

impl Default for LifeCycleConfig {
    fn default() -> Self {
        Self::with_episodes(DEFAULT_EPISODES).expect("default episode count is valid")
    }
}

impl LifeCycleConfig {
    pub fn with_episodes(episodes: usize) -> Result<Self> {
        Ok(LifeCycleConfig {
            episodes,
            max_steps: crate::maze::DEFAULT_MAX_STEPS,
            fitness_weights: fitness_weights(episodes)?,
            record_traces: false,
            record_stride: 1,
            record_paths: false,
            reset_state_between_episodes: false,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.fitness_weights.len() != self.episodes {
            return Err(Error::InvalidArgument(format!(
                "{} fitness weights for {} episodes",
                self.fitness_weights.len(),
                self.episodes
            )));
        }
        if self.fitness_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "fitness weights must be finite and non-negative".into(),
            ));
        }
        if self.max_steps == 0 || self.record_stride == 0 {
            return Err(Error::InvalidArgument(
                "max_steps and record_stride must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn weight_sum(&self) -> f64 {
        self.fitness_weights.iter().sum()
    }
}

/// Softmax-or-argmax action head.
///
/// `logits[4]` picks the mode: if `σ(logits[4]) > 0.5` the agent acts greedily
/// on `logits[0..4]` (lowest index wins ties); otherwise it samples from their
/// softmax. A random draw is consumed only in the sampling branch.
pub fn select_action(logits: &[f64; OUTPUT_DIM], rng: &mut impl Rng) -> Result<Direction> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("logits"));
    }
    let dirs = &logits[..4];
    if sigmoid(logits[4]) > 0.5 {
        let mut best = 0;
        for k in 1..4 {
            if dirs[k] > dirs[best] {
                best = k;
            }
        }
        return Direction::from_index(best);
    }
    let max = dirs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = dirs.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, e) in exp.iter().enumerate() {
        if u < *e {
            return Direction::from_index(k);
        }
        u -= e;
    }
    Direction::from_index(3)
}

/// Anything that can live through a life cycle.
pub trait Agent {
    /// Start a new life: adaptive components from scratch.
    fn begin_life(&mut self, rng: &mut StreamRng);
    fn act(&mut self, input: &[f64; INPUT_DIM], rng: &mut StreamRng) -> Result<Direction>;
    fn reset_state(&mut self) {}
    /// `(plastic weights, hidden state, cell state)` for trace recording.
    fn snapshot(&self) -> Option<TraceState> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceState {
    pub weights: Vec<f64>,
    pub hidden: Vec<f64>,
    pub cell: Option<Vec<f64>>,
}

/// A decoded model plus its evolving phenotype.
pub struct PlasticAgent<'m> {
    model: &'m Model,
    phenotype: Option<Phenotype>,
}

impl<'m> PlasticAgent<'m> {
    pub fn new(model: &'m Model) -> Self {
        PlasticAgent { model, phenotype: None }
    }

    pub fn phenotype(&self) -> Option<&Phenotype> {
        self.phenotype.as_ref()
    }
}

impl Agent for PlasticAgent<'_> {
    fn begin_life(&mut self, rng: &mut StreamRng) {
        self.phenotype = Some(Phenotype::init(self.model, rng));
    }

    fn act(&mut self, input: &[f64; INPUT_DIM], rng: &mut StreamRng) -> Result<Direction> {
        let phen = self
            .phenotype
            .as_mut()
            .ok_or_else(|| Error::ContractViolation("act called before begin_life".into()))?;
        let logits = self.model.forward(phen, input)?;
        select_action(&logits, rng)
    }

    fn reset_state(&mut self) {
        if let Some(p) = &mut self.phenotype {
            p.reset_state();
        }
    }

    fn snapshot(&self) -> Option<TraceState> {
        self.phenotype.as_ref().map(|p| TraceState {
            weights: p.plastic_snapshot(),
            hidden: p.h.clone(),
            cell: p.cell().map(<[f64]>::to_vec),
        })
    }
}

/// Uniformly random walker, the reference floor.
#[derive(Debug, Default, Clone, Copy)]
pub struct RandomAgent;

impl Agent for RandomAgent {
    fn begin_life(&mut self, _rng: &mut StreamRng) {}

    fn act(&mut self, _input: &[f64; INPUT_DIM], rng: &mut StreamRng) -> Result<Direction> {
        Direction::from_index(rng.random_range(0..4))
    }
}

/// One line of the trace JSONL stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub episode: usize,
    #[serde(rename = "W_h_p")]
    pub w_h_p: Vec<f64>,
    pub h: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifeCycleResult {
    /// `Σ_z w_z·R_z`, or `-∞` if the rollout hit a numeric fault.
    pub fitness: f64,
    pub episode_rewards: Vec<f64>,
    pub episode_steps: Vec<usize>,
    pub per_episode_coverage: Vec<f64>,
    pub accumulated_coverage: Vec<f64>,
    pub reached_goal: Vec<bool>,
    pub traces: Option<Vec<TraceRecord>>,
    pub paths: Option<Vec<Vec<Pos>>>,
    pub fault: Option<String>,
}

impl LifeCycleResult {
    pub fn total_steps(&self) -> usize {
        self.episode_steps.iter().sum()
    }

    pub fn is_faulted(&self) -> bool {
        self.fault.is_some()
    }
}

/// Weighted episode-reward sum, accumulated in episode order.
pub fn weighted_fitness(weights: &[f64], rewards: &[f64]) -> f64 {
    weights.iter().zip(rewards).fold(0.0, |acc, (w, r)| acc + w * r)
}

/// Run `agent` through `lc.episodes` episodes of `task`.
///
/// `seed` fixes both the phenotype initialization and the action sampling.
/// Numeric faults end the life cycle with a `-∞` fitness instead of an error.
pub fn run_life_cycle(
    agent: &mut impl Agent,
    task: &MazeTask,
    lc: &LifeCycleConfig,
    seed: u64,
) -> Result<LifeCycleResult> {
    lc.validate()?;
    let root = SeedPath::root(seed);
    let mut init_rng = root.stream("init").rng();
    let mut action_rng = root.stream("action").rng();

    let reachable = task.reachable_count() as f64;
    let mut result = LifeCycleResult {
        fitness: 0.0,
        episode_rewards: Vec::with_capacity(lc.episodes),
        episode_steps: Vec::with_capacity(lc.episodes),
        per_episode_coverage: Vec::with_capacity(lc.episodes),
        accumulated_coverage: Vec::with_capacity(lc.episodes),
        reached_goal: Vec::with_capacity(lc.episodes),
        traces: lc.record_traces.then(Vec::new),
        paths: lc.record_paths.then(Vec::new),
        fault: None,
    };

    agent.begin_life(&mut init_rng);
    let mut env = EnvState::with_max_steps(task, lc.max_steps);
    let mut all_visited = VisitedSet::new(task);
    let mut previous: Option<(Direction, f64)> = None;
    let mut t = 0usize;

    'life: for z in 0..lc.episodes {
        if z > 0 {
            env.next_episode(task);
            if lc.reset_state_between_episodes {
                agent.reset_state();
            }
        }
        let mut reward_sum = 0.0;
        let mut path = lc.record_paths.then(|| vec![task.start()]);
        let reached = loop {
            let obs = env.observe(task);
            let input = match previous {
                None => InputVector::initial(obs),
                Some((a, r)) => InputVector::new(obs, a, r),
            };
            let direction = match agent.act(&input.to_array(), &mut action_rng) {
                Ok(d) => d,
                Err(e @ Error::NumericFault { .. }) => {
                    result.fault = Some(e.at_step(z, env.step_in_episode()).to_string());
                    result.episode_rewards.push(reward_sum);
                    result.episode_steps.push(env.step_in_episode());
                    result.reached_goal.push(false);
                    break 'life;
                }
                Err(e) => return Err(e),
            };
            let out = env.step(task, direction)?;
            reward_sum += out.reward;
            previous = Some((direction, out.reward));
            if let Some(p) = &mut path {
                p.push(env.position());
            }
            if let Some(traces) = &mut result.traces {
                if t.is_multiple_of(lc.record_stride) {
                    if let Some(s) = agent.snapshot() {
                        traces.push(TraceRecord {
                            t,
                            episode: z,
                            w_h_p: s.weights,
                            h: s.hidden,
                            c: s.cell,
                        });
                    }
                }
            }
            t += 1;
            if out.done {
                break out.reached_goal;
            }
        };
        all_visited.union_with(env.visited());
        result.episode_rewards.push(reward_sum);
        result.episode_steps.push(env.step_in_episode());
        result.reached_goal.push(reached);
        result.per_episode_coverage.push(env.visited().len() as f64 / reachable);
        result.accumulated_coverage.push(all_visited.len() as f64 / reachable);
        if let (Some(paths), Some(p)) = (&mut result.paths, path) {
            paths.push(p);
        }
    }

    result.fitness = if result.fault.is_some() {
        f64::NEG_INFINITY
    } else {
        weighted_fitness(&lc.fitness_weights, &result.episode_rewards)
    };
    Ok(result)
}

/// Decode-free convenience: run a decoded model on one task.
pub fn evaluate_model(model: &Model, task: &MazeTask, lc: &LifeCycleConfig, seed: u64) -> Result<LifeCycleResult> {
    run_life_cycle(&mut PlasticAgent::new(model), task, lc, seed)
}

/// Decode `genotype` under `config` and run one life cycle.
pub fn run_genotype(
    genotype: &[f64],
    config: &ModelConfig,
    task: &MazeTask,
    lc: &LifeCycleConfig,
    seed: u64,
) -> Result<LifeCycleResult> {
    let model = Model::decode(genotype, config)?;
    evaluate_model(&model, task, lc, seed)
}

/// Which controller drives a batch evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'m> {
    Model(&'m Model),
    Random,
}

/// One life cycle per task, in parallel on the current rayon pool; results
/// come back in task order. `seed(j)` seeds task `j`'s rollout.
pub fn run_many(
    policy: Policy<'_>,
    tasks: &[MazeTask],
    lc: &LifeCycleConfig,
    seed: impl Fn(usize) -> u64 + Sync,
) -> Result<Vec<LifeCycleResult>> {
    use rayon::prelude::*;
    tasks
        .par_iter()
        .enumerate()
        .map(|(j, task)| match policy {
            Policy::Model(m) => evaluate_model(m, task, lc, seed(j)),
            Policy::Random => run_life_cycle(&mut RandomAgent, task, lc, seed(j)),
        })
        .collect()
}
