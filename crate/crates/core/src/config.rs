//! `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected.
//! [`RunConfig::to_text`] writes every key back out, so a snapshot of a
//! resolved configuration reproduces the run when read again.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::evolution::{OptimizerKind, TrainingConfig};
use crate::models::{Arch, ModelConfig};
use crate::plasticity::ModulationKind;
use crate::{Error, Result};

/// Raw key/value pairs, in file order with later entries overriding earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                what: "config",
                reason: format!("line {}: expected `key = value`, got `{raw}`", n + 1),
            })?;
            kv.set(k.trim(), v.trim());
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries
            .insert(key.to_ascii_lowercase().replace('-', "_"), value.to_string());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| Error::Parse {
                what: "config",
                reason: format!("`{key} = {v}`: {e}"),
            }),
        }
    }
}

/// Everything a train/eval/demo run needs besides file paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub training: TrainingConfig,
    /// Held-out test mazes for evaluation.
    pub eval_tasks: usize,
    /// Worker threads; 0 means one per core.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::new(Arch::DecPrnn, 32, ModulationKind::PostDn),
            training: TrainingConfig::default(),
            eval_tasks: 128,
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn from_key_values(mut kv: KeyValues) -> Result<Self> {
        let mut c = RunConfig::default();
        let m = &mut c.model;
        if let Some(v) = kv.take::<Arch>("arch")? {
            m.arch = v;
        }
        if let Some(v) = kv.take("hidden")? {
            m.hidden = v;
        }
        if let Some(v) = kv.take::<ModulationKind>("modulation")? {
            m.modulation = v;
        }
        if let Some(v) = kv.take("retro_init")? {
            m.retro_init_from_genotype = v;
        }
        if let Some(v) = kv.take("init_scale")? {
            m.phenotype_init_scale = v;
        }
        let t = &mut c.training;
        macro_rules! field {
            ($($key:literal => $field:expr),* $(,)?) => {
                $( if let Some(v) = kv.take($key)? { $field = v; } )*
            };
        }
        field! {
            "maze_size" => t.maze_size,
            "loop_fraction" => t.loop_fraction,
            "population" => t.population,
            "train_tasks" => t.train_tasks,
            "episodes" => t.episodes,
            "max_steps" => t.max_steps,
            "generations" => t.generations,
            "sigma0" => t.sigma0,
            "seed" => t.seed,
            "validation_interval" => t.validation_interval,
            "validation_tasks" => t.validation_tasks,
            "es_alpha" => t.es_alpha,
            "checkpoint_interval" => t.checkpoint_interval,
            "eval_tasks" => c.eval_tasks,
            "workers" => c.workers,
        }
        if let Some(v) = kv.take::<OptimizerKind>("optimizer")? {
            t.optimizer = v;
        }
        if let Some(v) = kv.take("shaping")? {
            t.shaping = v;
        }
        if let Some(v) = kv.take::<usize>("restart_patience")? {
            t.restart_patience = (v > 0).then_some(v);
        }
        if let Some(k) = kv.keys().next() {
            return Err(Error::Parse {
                what: "config",
                reason: format!("unknown key `{k}`"),
            });
        }
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_key_values(KeyValues::parse(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        if self.eval_tasks == 0 {
            return Err(Error::InvalidArgument("eval_tasks must be positive".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.training;
        let optimizer = match t.optimizer {
            OptimizerKind::SepCma => "sep-cma",
            OptimizerKind::Es => "es",
        };
        let shaping = match t.shaping {
            crate::evolution::FitnessShaping::Rank => "rank",
            crate::evolution::FitnessShaping::Raw => "raw",
        };
        let mut s = String::new();
        let mut line = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("arch", &m.arch);
        line("hidden", &m.hidden);
        line("modulation", &m.modulation);
        line("retro_init", &m.retro_init_from_genotype);
        line("init_scale", &m.phenotype_init_scale);
        line("maze_size", &t.maze_size);
        line("loop_fraction", &t.loop_fraction);
        line("population", &t.population);
        line("train_tasks", &t.train_tasks);
        line("episodes", &t.episodes);
        line("max_steps", &t.max_steps);
        line("generations", &t.generations);
        line("sigma0", &t.sigma0);
        line("seed", &t.seed);
        line("validation_interval", &t.validation_interval);
        line("validation_tasks", &t.validation_tasks);
        line("optimizer", &optimizer);
        line("es_alpha", &t.es_alpha);
        line("shaping", &shaping);
        line("restart_patience", &t.restart_patience.unwrap_or(0));
        line("checkpoint_interval", &t.checkpoint_interval);
        line("eval_tasks", &self.eval_tasks);
        line("workers", &self.workers);
        s
    }
}
