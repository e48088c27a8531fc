//! Evaluation statistics over finished life cycles and recorded traces.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::inner_loop::LifeCycleResult;
use crate::linalg::l2_distance;
use crate::maze::{MazeTask, VisitedSet};
use crate::{Error, Result};

/// Half-width of the smoothing window (window size 15).
pub const DEFAULT_WINDOW: usize = 7;
/// Trace statistics are only reported over the first 1000 steps.
pub const DEFAULT_STEP_CAP: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BestRolloutMode {
    /// One rollout index chosen from the across-task means.
    #[default]
    Global,
    /// Each task contributes its own best rollout.
    PerTask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestRollout {
    pub reward: f64,
    pub failure_rate: f64,
    /// Rollout index in global mode; `None` in per-task mode.
    pub index: Option<usize>,
}

fn check_results(results: &[LifeCycleResult]) -> Result<usize> {
    let first = results
        .first()
        .ok_or_else(|| Error::InvalidArgument("no life-cycle results".into()))?;
    let tau = first.episode_rewards.len();
    if results
        .iter()
        .any(|r| r.episode_rewards.len() != tau || r.reached_goal.len() != tau)
    {
        return Err(Error::InvalidArgument("life cycles differ in episode count".into()));
    }
    Ok(tau)
}

fn column_mean(results: &[LifeCycleResult], f: impl Fn(&LifeCycleResult) -> f64) -> f64 {
    results.iter().map(f).sum::<f64>() / results.len() as f64
}

pub fn best_rollout(results: &[LifeCycleResult]) -> Result<BestRollout> {
    best_rollout_with(results, BestRolloutMode::Global)
}

pub fn best_rollout_with(results: &[LifeCycleResult], mode: BestRolloutMode) -> Result<BestRollout> {
    let tau = check_results(results)?;
    match mode {
        BestRolloutMode::Global => {
            let means: Vec<f64> = (0..tau)
                .map(|z| column_mean(results, |r| r.episode_rewards[z]))
                .collect();
            let mut best = 0;
            for z in 1..tau {
                if means[z] > means[best] {
                    best = z;
                }
            }
            Ok(BestRollout {
                reward: means[best],
                failure_rate: column_mean(results, |r| f64::from(u8::from(!r.reached_goal[best]))),
                index: Some(best),
            })
        }
        BestRolloutMode::PerTask => {
            let mut reward = 0.0;
            let mut failures = 0usize;
            for r in results {
                let mut best = 0;
                for z in 1..tau {
                    if r.episode_rewards[z] > r.episode_rewards[best] {
                        best = z;
                    }
                }
                reward += r.episode_rewards[best];
                failures += usize::from(!r.reached_goal[best]);
            }
            let n = results.len() as f64;
            Ok(BestRollout {
                reward: reward / n,
                failure_rate: failures as f64 / n,
                index: None,
            })
        }
    }
}

/// Unique visited cells over reachable free cells.
pub fn coverage_rate(task: &MazeTask, visited: &VisitedSet) -> f64 {
    visited.len() as f64 / task.reachable_count() as f64
}

fn check_series(series: &[Vec<f64>], m: usize) -> Result<()> {
    if series.len() <= 2 * m {
        return Err(Error::InvalidArgument(format!(
            "series of length {} is too short for window half-width {m}",
            series.len()
        )));
    }
    let d = series[0].len();
    if let Some(bad) = series.iter().find(|x| x.len() != d) {
        return Err(Error::shape("trace series", d, bad.len()));
    }
    Ok(())
}

/// Centered moving average with the window clipped at both ends.
pub fn moving_average(series: &[Vec<f64>], m: usize) -> Vec<Vec<f64>> {
    let n = series.len();
    let d = series.first().map_or(0, Vec::len);
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(m);
            let hi = (t + m).min(n - 1);
            let mut acc = vec![0.0; d];
            for x in &series[lo..=hi] {
                for (a, v) in acc.iter_mut().zip(x) {
                    *a += v;
                }
            }
            let k = (hi - lo + 1) as f64;
            acc.iter_mut().for_each(|a| *a /= k);
            acc
        })
        .collect()
}

/// `E_t |x_t − x̂_t|`, over all `t` or only the interior `[m, T−m)`.
pub fn vibration_with(series: &[Vec<f64>], m: usize, interior_only: bool) -> Result<f64> {
    check_series(series, m)?;
    let smooth = moving_average(series, m);
    let range = if interior_only {
        m..series.len() - m
    } else {
        0..series.len()
    };
    let n = range.len() as f64;
    Ok(range.map(|t| l2_distance(&series[t], &smooth[t])).sum::<f64>() / n)
}

pub fn vibration(series: &[Vec<f64>], m: usize) -> Result<f64> {
    vibration_with(series, m, false)
}

/// `|x̂_t − x̂_0|` for every `t`.
pub fn migration(series: &[Vec<f64>], m: usize) -> Result<Vec<f64>> {
    check_series(series, m)?;
    let smooth = moving_average(series, m);
    Ok(smooth.iter().map(|x| l2_distance(x, &smooth[0])).collect())
}

/// Keep at most `cap` leading entries.
pub fn cap_steps<T>(series: &[T], cap: usize) -> &[T] {
    &series[..series.len().min(cap)]
}

/// Aggregate evaluation over a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub per_rollout_mean_reward: Vec<f64>,
    pub per_rollout_failure_rate: Vec<f64>,
    pub per_rollout_coverage: Vec<f64>,
    pub accumulated_coverage: Vec<f64>,
    pub best_rollout_reward: f64,
    pub best_rollout_index: Option<usize>,
    pub failure_rate: f64,
    pub task_count: usize,
}

impl EvalSummary {
    pub fn from_results(results: &[LifeCycleResult], mode: BestRolloutMode) -> Result<Self> {
        let tau = check_results(results)?;
        if results.iter().any(|r| r.per_episode_coverage.len() != tau) {
            return Err(Error::InvalidArgument(
                "faulted life cycles have no coverage record".into(),
            ));
        }
        let per = |f: &dyn Fn(&LifeCycleResult, usize) -> f64| -> Vec<f64> {
            (0..tau).map(|z| column_mean(results, |r| f(r, z))).collect()
        };
        let best = best_rollout_with(results, mode)?;
        Ok(EvalSummary {
            per_rollout_mean_reward: per(&|r, z| r.episode_rewards[z]),
            per_rollout_failure_rate: per(&|r, z| f64::from(u8::from(!r.reached_goal[z]))),
            per_rollout_coverage: per(&|r, z| r.per_episode_coverage[z]),
            accumulated_coverage: per(&|r, z| r.accumulated_coverage[z]),
            best_rollout_reward: best.reward,
            best_rollout_index: best.index,
            failure_rate: best.failure_rate,
            task_count: results.len(),
        })
    }

    /// Mean reward of rollouts `from..to` (0-based, half-open).
    pub fn mean_reward_over(&self, from: usize, to: usize) -> f64 {
        let s = &self.per_rollout_mean_reward[from..to];
        s.iter().sum::<f64>() / s.len() as f64
    }

    /// `rollout,mean_reward,failure_rate,coverage,accumulated_coverage`, one row per rollout.
    pub fn per_rollout_csv(&self) -> String {
        let mut out = String::from("rollout,mean_reward,failure_rate,coverage,accumulated_coverage\n");
        for z in 0..self.per_rollout_mean_reward.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                z + 1,
                self.per_rollout_mean_reward[z],
                self.per_rollout_failure_rate[z],
                self.per_rollout_coverage[z],
                self.accumulated_coverage[z]
            );
        }
        out
    }

    /// `key,value` rows for the scalar fields.
    pub fn summary_csv(&self) -> String {
        format!(
            "key,value\ntask_count,{}\nbest_rollout_reward,{}\nbest_rollout_index,{}\nfailure_rate,{}\n",
            self.task_count,
            self.best_rollout_reward,
            self.best_rollout_index.map_or(String::new(), |z| (z + 1).to_string()),
            self.failure_rate
        )
    }
}

/// `t,<name>...` CSV from equally long columns.
pub fn series_csv(columns: &[(&str, &[f64])]) -> Result<String> {
    let n = columns.first().map_or(0, |c| c.1.len());
    if columns.iter().any(|c| c.1.len() != n) {
        return Err(Error::InvalidArgument("series columns differ in length".into()));
    }
    let mut out = String::from("t");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for t in 0..n {
        let _ = write!(out, "{t}");
        for (_, col) in columns {
            let _ = write!(out, ",{}", col[t]);
        }
        out.push('\n');
    }
    Ok(out)
}
