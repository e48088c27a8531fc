//! Outer loop: population sampling, vanilla ES, separable CMA-ES, the
//! training driver and rule merging.

mod merge;
mod training;

pub use merge::{connection_rules, kmeans, KMeansConfig, KMeansResult, TiedSpace, MAX_RESTARTS};
pub use training::{
    reports_csv, run_meta_training, GenerationReport, GenotypeSpace, OptimizerKind, RunOptions, TrainingCheckpoint,
    TrainingConfig, TrainingOutcome, REPORT_HEADER,
};

use std::cmp::Ordering;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionState {
    pub centroid: Vec<f64>,
    pub sigma: f64,
    pub sigma0: f64,
    pub diag_c: Vec<f64>,
    pub path_sigma: Vec<f64>,
    pub path_c: Vec<f64>,
    pub generation: usize,
    /// Best validated centroid so far.
    pub best_validation: Option<(f64, Vec<f64>)>,
    /// Generations since the population mean last improved.
    pub stagnation: usize,
    pub best_mean: Option<f64>,
}

impl EvolutionState {
    pub fn new(centroid: Vec<f64>, sigma0: f64) -> Result<Self> {
        if centroid.is_empty() {
            return Err(Error::InvalidArgument("empty centroid".into()));
        }
        if !(sigma0.is_finite() && sigma0 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {sigma0}"
            )));
        }
        if centroid.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("centroid has non-finite entries".into()));
        }
        let n = centroid.len();
        Ok(EvolutionState {
            centroid,
            sigma: sigma0,
            sigma0,
            diag_c: vec![1.0; n],
            path_sigma: vec![0.0; n],
            path_c: vec![0.0; n],
            generation: 0,
            best_validation: None,
            stagnation: 0,
            best_mean: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.centroid.len()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.dim();
        if self.diag_c.len() != n || self.path_sigma.len() != n || self.path_c.len() != n {
            return Err(Error::ContractViolation(
                "evolution state vectors differ in length".into(),
            ));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::ContractViolation(format!("sigma = {}", self.sigma)));
        }
        if self.diag_c.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::ContractViolation(
                "diag_c has a non-positive or non-finite entry".into(),
            ));
        }
        Ok(())
    }

    /// Reset covariance, paths and step size, keeping the centroid.
    pub fn restart(&mut self) {
        self.diag_c.iter_mut().for_each(|c| *c = 1.0);
        self.path_sigma.iter_mut().for_each(|c| *c = 0.0);
        self.path_c.iter_mut().for_each(|c| *c = 0.0);
        self.sigma = self.sigma0;
        self.stagnation = 0;
    }

    /// Track population-mean progress; returns true once `patience` is exhausted.
    pub fn note_mean(&mut self, mean: f64, patience: Option<usize>) -> bool {
        if self.best_mean.is_none_or(|b| mean > b) {
            self.best_mean = Some(mean);
            self.stagnation = 0;
        } else {
            self.stagnation += 1;
        }
        patience.is_some_and(|p| self.stagnation >= p)
    }

    /// Keep `(fitness, genotype)` if it beats the best validated centroid.
    pub fn offer_validation(&mut self, fitness: f64, genotype: &[f64]) -> bool {
        if fitness.is_finite() && self.best_validation.as_ref().is_none_or(|(b, _)| fitness > *b) {
            self.best_validation = Some((fitness, genotype.to_vec()));
            return true;
        }
        false
    }
}

/// `φ + σ·√diag_c ⊙ z` for `g` standard-normal draws `z`.
pub fn sample_population(state: &EvolutionState, g: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    if g < 2 {
        return Err(Error::InvalidArgument(format!(
            "population size must be at least 2, got {g}"
        )));
    }
    let scale: Vec<f64> = state.diag_c.iter().map(|c| state.sigma * c.sqrt()).collect();
    Ok((0..g)
        .map(|_| {
            state
                .centroid
                .iter()
                .zip(&scale)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FitnessShaping {
    /// Centered ranks in `[-0.5, 0.5]`.
    #[default]
    Rank,
    Raw,
}

impl FromStr for FitnessShaping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rank" => Ok(FitnessShaping::Rank),
            "raw" => Ok(FitnessShaping::Raw),
            _ => Err(Error::Parse {
                what: "fitness shaping",
                reason: format!("expected rank or raw, got `{s}`"),
            }),
        }
    }
}

/// Non-finite values sort below everything, and equal among themselves.
fn fitness_cmp(a: f64, b: f64) -> Ordering {
    match (a.is_finite(), b.is_finite()) {
        (true, true) => a.total_cmp(&b),
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        (false, false) => Ordering::Equal,
    }
}

/// Centered ranks `r/(g-1) - 0.5`; tied fitnesses share their mean rank.
pub fn centered_ranks(fitnesses: &[f64]) -> Vec<f64> {
    let g = fitnesses.len();
    if g < 2 {
        return vec![0.0; g];
    }
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| fitness_cmp(fitnesses[a], fitnesses[b]));
    let mut ranks = vec![0.0; g];
    let mut start = 0;
    while start < g {
        let mut end = start + 1;
        while end < g && fitness_cmp(fitnesses[order[start]], fitnesses[order[end]]) == Ordering::Equal {
            end += 1;
        }
        let mean_rank = (start + end - 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mean_rank / (g - 1) as f64 - 0.5;
        }
        start = end;
    }
    ranks
}

/// `φ' = φ + α·(1/g)·Σ_i s_i·(φ_i − φ)` with `s` the shaped fitnesses.
pub fn vanilla_es_update(
    centroid: &[f64],
    samples: &[Vec<f64>],
    fitnesses: &[f64],
    alpha: f64,
    shaping: FitnessShaping,
) -> Result<Vec<f64>> {
    if samples.len() != fitnesses.len() || samples.is_empty() {
        return Err(Error::ContractViolation(format!(
            "{} samples for {} fitness values",
            samples.len(),
            fitnesses.len()
        )));
    }
    if let Some(s) = samples.iter().find(|s| s.len() != centroid.len()) {
        return Err(Error::shape("vanilla_es_update", centroid.len(), s.len()));
    }
    let scores = match shaping {
        FitnessShaping::Rank => centered_ranks(fitnesses),
        FitnessShaping::Raw => {
            if fitnesses.iter().any(|f| !f.is_finite()) {
                return Err(Error::ContractViolation(
                    "raw ES update needs finite fitness values".into(),
                ));
            }
            fitnesses.to_vec()
        }
    };
    let step = alpha / samples.len() as f64;
    let mut next = centroid.to_vec();
    for (sample, s) in samples.iter().zip(&scores) {
        for ((n, x), m) in next.iter_mut().zip(sample).zip(centroid) {
            *n += step * s * (x - m);
        }
    }
    Ok(next)
}

/// Strategy constants for sep-CMA-ES.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaParams {
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl CmaParams {
    pub fn new(n: usize, lambda: usize) -> Result<Self> {
        if lambda < 4 {
            return Err(Error::InvalidArgument(format!(
                "sep-CMA-ES needs a population of at least 4, got {lambda}"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("zero-dimensional search space".into()));
        }
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu).map(|i| ((mu as f64) + 0.5).ln() - (i as f64).ln()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        // Full-covariance learning rates, enlarged for the diagonal model.
        let sep = (nf + 2.0) / 3.0;
        let c_1 = (sep * 2.0 / ((nf + 1.3).powi(2) + mu_eff)).min(1.0);
        let c_mu = (sep * 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff)).min(1.0 - c_1);
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Ok(CmaParams {
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        })
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// One sep-CMA-ES generation (maximizing fitness).
///
/// The update depends only on the multiset of `(sample, fitness)` pairs:
/// fitness ties are broken by comparing the samples themselves.
#[allow(clippy::needless_range_loop)]
pub fn sep_cma_step(state: &EvolutionState, samples: &[Vec<f64>], fitnesses: &[f64]) -> Result<EvolutionState> {
    if samples.len() != fitnesses.len() {
        return Err(Error::ContractViolation(format!(
            "{} samples for {} fitness values",
            samples.len(),
            fitnesses.len()
        )));
    }
    let n = state.dim();
    if let Some(s) = samples.iter().find(|s| s.len() != n) {
        return Err(Error::shape("sep_cma_step", n, s.len()));
    }
    let p = CmaParams::new(n, samples.len())?;

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        fitness_cmp(fitnesses[b], fitnesses[a]).then_with(|| lexicographic(&samples[a], &samples[b]))
    });

    let sigma = state.sigma;
    let mut y_w = vec![0.0; n];
    let mut y2_w = vec![0.0; n];
    for (w, &i) in p.weights.iter().zip(&order) {
        for j in 0..n {
            let y = (samples[i][j] - state.centroid[j]) / sigma;
            y_w[j] += w * y;
            y2_w[j] += w * y * y;
        }
    }

    let mut next = state.clone();
    for j in 0..n {
        next.centroid[j] += sigma * y_w[j];
    }

    let ps_coef = (p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff).sqrt();
    for j in 0..n {
        let z = y_w[j] / state.diag_c[j].sqrt();
        next.path_sigma[j] = (1.0 - p.c_sigma) * state.path_sigma[j] + ps_coef * z;
    }
    let ps_norm = next.path_sigma.iter().map(|v| v * v).sum::<f64>().sqrt();
    let gens = (state.generation + 1) as f64;
    let h_sigma =
        ps_norm / (1.0 - (1.0 - p.c_sigma).powf(2.0 * gens)).sqrt() < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n;
    let h = if h_sigma { 1.0 } else { 0.0 };

    let pc_coef = h * (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt();
    for j in 0..n {
        next.path_c[j] = (1.0 - p.c_c) * state.path_c[j] + pc_coef * y_w[j];
    }

    let delta_h = (1.0 - h) * p.c_c * (2.0 - p.c_c);
    let keep = 1.0 - p.c_1 - p.c_mu + p.c_1 * delta_h;
    for j in 0..n {
        let c = keep * state.diag_c[j] + p.c_1 * next.path_c[j].powi(2) + p.c_mu * y2_w[j];
        next.diag_c[j] = c.clamp(f64::MIN_POSITIVE, f64::MAX);
    }

    let sigma_next = sigma * ((p.c_sigma / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
    next.sigma = sigma_next.clamp(f64::MIN_POSITIVE, f64::MAX);
    next.generation = state.generation + 1;
    Ok(next)
}
