//! Meta-training driver: fresh training mazes every generation, a fixed
//! validation set, and a worker pool for the population × task rollouts.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_population, sep_cma_step, vanilla_es_update, EvolutionState, FitnessShaping};
use crate::inner_loop::{evaluate_model, LifeCycleConfig};
use crate::maze::{MazeGenConfig, MazeTask};
use crate::models::{hex, write_checkpoint, Checkpoint, Model, ModelConfig};
use crate::seed::SeedPath;
use crate::{Error, Result};

pub const REPORT_HEADER: &str = "generation,mean_fit,max_fit,min_fit,valid_fit,sigma";

/// The search space the optimizer moves in, and how a point in it becomes
/// a full genotype for `model_config()`.
pub trait GenotypeSpace: Sync {
    fn dim(&self) -> usize;
    fn model_config(&self) -> &ModelConfig;
    fn expand(&self, point: &[f64]) -> Result<Vec<f64>>;
    /// Text identifying the space; checkpoints refuse to resume across spaces.
    fn descriptor(&self) -> String;
}

impl GenotypeSpace for ModelConfig {
    fn dim(&self) -> usize {
        self.param_count()
    }

    fn model_config(&self) -> &ModelConfig {
        self
    }

    fn expand(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.param_count() {
            return Err(Error::shape("genotype", self.param_count(), point.len()));
        }
        Ok(point.to_vec())
    }

    fn descriptor(&self) -> String {
        format!("{};digest={}", ModelConfig::descriptor(self), hex(&self.digest()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[default]
    SepCma,
    Es,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "sepcma" | "sepcmaes" | "cma" => Ok(OptimizerKind::SepCma),
            "es" | "vanilla" | "vanillaes" => Ok(OptimizerKind::Es),
            _ => Err(Error::Parse {
                what: "optimizer",
                reason: format!("expected sep-cma or es, got `{s}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub maze_size: usize,
    pub loop_fraction: f64,
    pub population: usize,
    pub train_tasks: usize,
    pub episodes: usize,
    pub max_steps: usize,
    pub generations: usize,
    pub sigma0: f64,
    pub seed: u64,
    pub validation_interval: usize,
    pub validation_tasks: usize,
    pub optimizer: OptimizerKind,
    pub es_alpha: f64,
    pub shaping: FitnessShaping,
    /// Reset covariance and step size after this many generations without
    /// improvement of the population mean.
    pub restart_patience: Option<usize>,
    pub checkpoint_interval: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            maze_size: 9,
            loop_fraction: 0.0,
            population: 64,
            train_tasks: 8,
            episodes: 8,
            max_steps: 200,
            generations: 300,
            sigma0: 0.01,
            seed: 0,
            validation_interval: 10,
            validation_tasks: 32,
            optimizer: OptimizerKind::SepCma,
            es_alpha: 1.0,
            shaping: FitnessShaping::Rank,
            restart_patience: None,
            checkpoint_interval: 10,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.population < 2 || (self.optimizer == OptimizerKind::SepCma && self.population < 4) {
            return bad(format!(
                "population {} is too small for {:?}",
                self.population, self.optimizer
            ));
        }
        if self.train_tasks == 0 || self.validation_tasks == 0 {
            return bad("task counts must be positive".into());
        }
        if self.validation_interval == 0 || self.checkpoint_interval == 0 {
            return bad("intervals must be positive".into());
        }
        if !(self.sigma0.is_finite() && self.sigma0 > 0.0) {
            return bad(format!("sigma0 must be positive, got {}", self.sigma0));
        }
        if !self.es_alpha.is_finite() {
            return bad("es_alpha must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.loop_fraction) {
            return bad("loop_fraction must be in [0, 1]".into());
        }
        if self.maze_size < 5 || self.maze_size.is_multiple_of(2) {
            return bad(format!("maze size must be odd and at least 5, got {}", self.maze_size));
        }
        self.life_cycle().map(|_| ())
    }

    pub fn life_cycle(&self) -> Result<LifeCycleConfig> {
        let mut lc = LifeCycleConfig::with_episodes(self.episodes)?;
        lc.max_steps = self.max_steps;
        lc.validate()?;
        Ok(lc)
    }

    fn maze_config(&self) -> MazeGenConfig {
        MazeGenConfig {
            loop_fraction: self.loop_fraction,
        }
    }

    fn root(&self) -> SeedPath {
        SeedPath::root(self.seed)
    }

    /// The fixed validation set, identical for the whole run.
    pub fn validation_set(&self) -> Result<Vec<MazeTask>> {
        let stream = self.root().stream("maze").stream("validation");
        (0..self.validation_tasks)
            .map(|j| MazeTask::generate_with(self.maze_size, stream.index(j as u64).value(), &self.maze_config()))
            .collect()
    }

    /// Fresh training tasks for generation `k`, shared by every individual.
    pub fn training_set(&self, k: usize) -> Result<Vec<MazeTask>> {
        let stream = self.root().stream("maze").stream("train").index(k as u64);
        (0..self.train_tasks)
            .map(|j| MazeTask::generate_with(self.maze_size, stream.index(j as u64).value(), &self.maze_config()))
            .collect()
    }

    /// Held-out test mazes, disjoint in seed stream from training and validation.
    pub fn test_set(&self, n: usize) -> Result<Vec<MazeTask>> {
        let stream = self.root().stream("maze").stream("test");
        (0..n)
            .map(|j| MazeTask::generate_with(self.maze_size, stream.index(j as u64).value(), &self.maze_config()))
            .collect()
    }

    /// Rollout seed for test task `j`.
    pub fn test_seed(&self, j: usize) -> u64 {
        self.root().stream("test_eval").index(j as u64).value()
    }

    fn population_rng(&self, k: usize) -> crate::seed::Rng {
        self.root().stream("es").index(k as u64).rng()
    }

    fn rollout_seed(&self, k: usize, i: usize, j: usize) -> u64 {
        self.root()
            .stream("eval")
            .index(k as u64)
            .index(i as u64)
            .index(j as u64)
            .value()
    }

    fn validation_seed(&self, j: usize) -> u64 {
        self.root().stream("valid_eval").index(j as u64).value()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    pub generation: usize,
    pub mean_fit: f64,
    pub max_fit: f64,
    pub min_fit: f64,
    pub valid_fit: Option<f64>,
    pub sigma: f64,
    pub seconds: f64,
}

impl GenerationReport {
    /// One CSV row in `REPORT_HEADER` order. Wall-clock time is kept out so
    /// reruns are byte-identical.
    pub fn csv_row(&self) -> String {
        let valid = self.valid_fit.map_or(String::new(), |v| v.to_string());
        format!(
            "{},{},{},{},{},{}",
            self.generation, self.mean_fit, self.max_fit, self.min_fit, valid, self.sigma
        )
    }
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCheckpoint {
    pub space: String,
    pub config: TrainingConfig,
    pub state: EvolutionState,
}

impl TrainingCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Parse {
            what: "training checkpoint",
            reason: e.to_string(),
        })?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            what: "training checkpoint",
            reason: e.to_string(),
        })
    }
}

#[derive(Debug, Default)]
pub struct RunOptions {
    /// Worker threads; 0 lets the pool pick.
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    pub resume: Option<TrainingCheckpoint>,
    /// Starting centroid (warm start); zeros otherwise.
    pub init: Option<Vec<f64>>,
    /// Stop after this many generations in this call (for chunked runs).
    pub max_generations_this_call: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    /// Expanded genotype of the best validated centroid.
    pub best_genotype: Vec<f64>,
    pub best_validation: Option<f64>,
    pub state: EvolutionState,
    pub reports: Vec<GenerationReport>,
}

struct Evaluator<'a, S: GenotypeSpace> {
    space: &'a S,
    lc: LifeCycleConfig,
    pool: rayon::ThreadPool,
}

impl<S: GenotypeSpace> Evaluator<'_, S> {
    /// Mean fitness of each point over `tasks`, reduced in index order.
    fn evaluate(
        &self,
        points: &[Vec<f64>],
        tasks: &[MazeTask],
        seed: impl Fn(usize, usize) -> u64 + Sync,
    ) -> Result<Vec<f64>> {
        let config = self.space.model_config();
        let models: Vec<Model> = self.pool.install(|| {
            points
                .par_iter()
                .map(|p| Model::decode(&self.space.expand(p)?, config))
                .collect::<Result<_>>()
        })?;
        let jobs: Vec<(usize, usize)> = (0..points.len())
            .flat_map(|i| (0..tasks.len()).map(move |j| (i, j)))
            .collect();
        let fits: Vec<f64> = self.pool.install(|| {
            jobs.par_iter()
                .map(|&(i, j)| evaluate_model(&models[i], &tasks[j], &self.lc, seed(i, j)).map(|r| r.fitness))
                .collect::<Result<_>>()
        })?;
        Ok(fits
            .chunks(tasks.len())
            .map(|c| c.iter().sum::<f64>() / tasks.len() as f64)
            .collect())
    }
}

fn append(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

fn write_header(path: &Path, header: &str) -> Result<()> {
    fs::write(path, format!("{header}\n")).map_err(|e| Error::io(path, e))
}

/// Run (or continue) meta-training.
pub fn run_meta_training(
    space: &impl GenotypeSpace,
    config: &TrainingConfig,
    options: RunOptions,
) -> Result<TrainingOutcome> {
    config.validate()?;
    space.model_config().validate()?;
    let evaluator = Evaluator {
        space,
        lc: config.life_cycle()?,
        pool: rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?,
    };

    let mut state = match (&options.resume, &options.init) {
        (Some(ck), _) => {
            if ck.space != space.descriptor() {
                return Err(Error::DigestMismatch {
                    expected: space.descriptor(),
                    found: ck.space.clone(),
                });
            }
            if ck.config.seed != config.seed {
                log::warn!(
                    "resuming with seed {} over a run started with seed {}",
                    config.seed,
                    ck.config.seed
                );
            }
            ck.state.clone()
        }
        (None, Some(init)) => {
            if init.len() != space.dim() {
                return Err(Error::shape("initial centroid", space.dim(), init.len()));
            }
            EvolutionState::new(init.clone(), config.sigma0)?
        }
        (None, None) => EvolutionState::new(vec![0.0; space.dim()], config.sigma0)?,
    };
    state.check()?;

    let files = options.out_dir.as_ref().map(|dir| RunFiles::new(dir));
    if let Some(f) = &files {
        fs::create_dir_all(&f.dir).map_err(|e| Error::io(&f.dir, e))?;
        if options.resume.is_none() || !f.report.exists() {
            write_header(&f.report, REPORT_HEADER)?;
            write_header(&f.timing, "generation,seconds")?;
        }
    }

    let validation = config.validation_set()?;
    let start = state.generation;
    let stop = options
        .max_generations_this_call
        .map_or(config.generations, |n| (start + n).min(config.generations));
    let mut reports = Vec::with_capacity(stop.saturating_sub(start));

    for k in start..stop {
        let clock = Instant::now();
        let valid_fit = if k % config.validation_interval == 0 || k + 1 == config.generations {
            let v = evaluator.evaluate(std::slice::from_ref(&state.centroid), &validation, |_, j| {
                config.validation_seed(j)
            })?[0];
            if state.offer_validation(v, &state.centroid.clone()) {
                if let Some(f) = &files {
                    write_checkpoint(
                        &f.best,
                        &Checkpoint::new(space.model_config(), space.expand(&state.centroid)?)?,
                    )?;
                }
            }
            Some(v)
        } else {
            None
        };

        let tasks = config.training_set(k)?;
        let samples = sample_population(&state, config.population, &mut config.population_rng(k))?;
        let fits = evaluator.evaluate(&samples, &tasks, |i, j| config.rollout_seed(k, i, j))?;

        let mean_fit = fits.iter().sum::<f64>() / fits.len() as f64;
        let max_fit = fits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min_fit = fits.iter().copied().fold(f64::INFINITY, f64::min);

        let sigma = state.sigma;
        state = match config.optimizer {
            OptimizerKind::SepCma => sep_cma_step(&state, &samples, &fits)?,
            OptimizerKind::Es => {
                let mut next = state.clone();
                next.centroid = vanilla_es_update(&state.centroid, &samples, &fits, config.es_alpha, config.shaping)?;
                next.generation += 1;
                next
            }
        };
        if mean_fit.is_finite() && state.note_mean(mean_fit, config.restart_patience) {
            log::info!(
                "generation {k}: no progress for {} generations, restarting covariance",
                state.stagnation
            );
            state.restart();
        }
        state.check()?;

        let report = GenerationReport {
            generation: k,
            mean_fit,
            max_fit,
            min_fit,
            valid_fit,
            sigma,
            seconds: clock.elapsed().as_secs_f64(),
        };
        log::info!(
            "gen {k}: mean {mean_fit:.4} max {max_fit:.4}{} sigma {sigma:.4e} ({:.1}s)",
            valid_fit.map_or(String::new(), |v| format!(" valid {v:.4}")),
            report.seconds
        );
        if let Some(f) = &files {
            append(&f.report, &report.csv_row())?;
            append(&f.timing, &format!("{k},{:.3}", report.seconds))?;
            if (k + 1) % config.checkpoint_interval == 0 || k + 1 == stop {
                f.save_state(space, config, &state)?;
            }
        }
        reports.push(report);
    }

    let (best_validation, best_point) = match &state.best_validation {
        Some((v, g)) => (Some(*v), g.clone()),
        None => (None, state.centroid.clone()),
    };
    Ok(TrainingOutcome {
        best_genotype: space.expand(&best_point)?,
        best_validation,
        state,
        reports,
    })
}

struct RunFiles {
    dir: PathBuf,
    report: PathBuf,
    timing: PathBuf,
    best: PathBuf,
}

impl RunFiles {
    fn new(dir: &Path) -> Self {
        RunFiles {
            dir: dir.to_path_buf(),
            report: dir.join("generations.csv"),
            timing: dir.join("timing.csv"),
            best: dir.join("best.bin"),
        }
    }

    fn save_state(&self, space: &impl GenotypeSpace, config: &TrainingConfig, state: &EvolutionState) -> Result<()> {
        TrainingCheckpoint {
            space: space.descriptor(),
            config: config.clone(),
            state: state.clone(),
        }
        .save(&self.dir.join("state.json"))?;
        write_checkpoint(
            &self.dir.join("centroid.bin"),
            &Checkpoint::new(space.model_config(), space.expand(&state.centroid)?)?,
        )
    }
}

/// Whole report log as CSV text.
pub fn reports_csv(reports: &[GenerationReport]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in reports {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}
