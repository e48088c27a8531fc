//! Evolving & Merging: cluster the per-connection `(A, B, C, D)` rules of a
//! trained PRNN and re-evolve only the cluster centres.

use rand::Rng;
use sha2::{Digest, Sha256};

use super::training::GenotypeSpace;
use crate::models::{hex, Arch, ModelConfig};
use crate::seed::rng_from;
use crate::{Error, Result};

pub const MAX_RESTARTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            restarts: 10,
            max_iter: 300,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<[f64; 4]>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

fn dist2(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64; 4], centroids: &[[f64; 4]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn distinct_count(points: &[[f64; 4]]) -> usize {
    let mut keys: Vec<[u64; 4]> = points.iter().map(|p| p.map(f64::to_bits)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

fn plus_plus(points: &[[f64; 4]], k: usize, rng: &mut impl Rng) -> Vec<[f64; 4]> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = d.iter().rposition(|&v| v > 0.0).unwrap_or(0);
        for (i, &v) in d.iter().enumerate() {
            if u < v {
                pick = i;
                break;
            }
            u -= v;
        }
        let c = points[pick];
        for (di, p) in d.iter_mut().zip(points) {
            *di = di.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &[[f64; 4]], mut centroids: Vec<[f64; 4]>, max_iter: usize) -> KMeansResult {
    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (a, p) in assignment.iter_mut().zip(points) {
            let (k, _) = nearest(p, &centroids);
            changed |= *a != k;
            *a = k;
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; 4]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (&a, p) in assignment.iter().zip(points) {
            counts[a] += 1;
            for q in 0..4 {
                sums[a][q] += p[q];
            }
        }
        for k in 0..centroids.len() {
            if counts[k] > 0 {
                centroids[k] = sums[k].map(|s| s / counts[k] as f64);
            }
        }
    }
    // Drop clusters that ended up empty and renumber.
    let mut counts = vec![0usize; centroids.len()];
    assignment.iter().for_each(|&a| counts[a] += 1);
    let mut remap = vec![usize::MAX; centroids.len()];
    let mut kept = Vec::new();
    for k in 0..centroids.len() {
        if counts[k] > 0 {
            remap[k] = kept.len();
            kept.push(centroids[k]);
        }
    }
    let assignment: Vec<usize> = assignment.iter().map(|&a| remap[a]).collect();
    let inertia = points.iter().zip(&assignment).map(|(p, &a)| dist2(p, &kept[a])).sum();
    KMeansResult {
        centroids: kept,
        assignment,
        inertia,
    }
}

/// K-means with k-means++ seeding, keeping the lowest-inertia restart.
///
/// With fewer distinct points than `k`, the surplus clusters are dropped
/// with a warning.
pub fn kmeans(points: &[[f64; 4]], config: &KMeansConfig) -> Result<KMeansResult> {
    if points.is_empty() || config.k == 0 {
        return Err(Error::InvalidArgument("k-means needs points and k > 0".into()));
    }
    if config.restarts == 0 || config.restarts > MAX_RESTARTS || config.max_iter == 0 {
        return Err(Error::InvalidArgument(format!(
            "k-means restarts must be in 1..={MAX_RESTARTS} and max_iter positive"
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("k-means points must be finite".into()));
    }
    let distinct = distinct_count(points);
    let k = if config.k > distinct {
        log::warn!(
            "k = {} exceeds {distinct} distinct rules; dropping degenerate clusters",
            config.k
        );
        distinct
    } else {
        config.k
    };
    let mut rng = rng_from(config.seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..config.restarts {
        let r = lloyd(points, plus_plus(points, k, &mut rng), config.max_iter);
        if best.as_ref().is_none_or(|b| r.inertia < b.inertia) {
            best = Some(r);
        }
        if best.as_ref().is_some_and(|b| b.inertia == 0.0) {
            break;
        }
    }
    let best = best.expect("at least one restart");
    if best.centroids.len() < k {
        log::warn!(
            "{} of {k} clusters came out empty and were dropped",
            k - best.centroids.len()
        );
    }
    Ok(best)
}

const RULE_LAYERS: [&str; 2] = ["rule_h", "rule_i"];
const RULE_PARTS: [&str; 4] = ["a", "b", "c", "d"];

/// A PRNN genotype whose rules are tied to shared centres by a frozen map.
///
/// Points are laid out as the `k × 4` centres followed by every non-rule
/// parameter in the base layout's order.
#[derive(Debug, Clone, PartialEq)]
pub struct TiedSpace {
    base: ModelConfig,
    k: usize,
    assignment: Vec<usize>,
}

impl TiedSpace {
    pub fn new(base: ModelConfig, k: usize, assignment: Vec<usize>) -> Result<Self> {
        if base.arch != Arch::Prnn {
            return Err(Error::InvalidArgument(format!(
                "rule merging needs a PRNN, got {}",
                base.arch
            )));
        }
        let n = connection_count(&base);
        if assignment.len() != n {
            return Err(Error::shape("rule assignment", n, assignment.len()));
        }
        if k == 0 || assignment.iter().any(|&a| a >= k) {
            return Err(Error::InvalidArgument("assignment refers to a missing rule".into()));
        }
        Ok(TiedSpace { base, k, assignment })
    }

    /// Cluster the rules of `genotype` and return the tied space plus its starting point.
    pub fn merge(base: &ModelConfig, genotype: &[f64], config: &KMeansConfig) -> Result<(Self, Vec<f64>)> {
        let rules = connection_rules(base, genotype)?;
        let km = kmeans(&rules, config)?;
        let space = TiedSpace::new(*base, km.centroids.len(), km.assignment)?;
        let mut point: Vec<f64> = km.centroids.iter().flatten().copied().collect();
        for s in base.layout().slices() {
            if !is_rule(&s.name) {
                point.extend_from_slice(&genotype[s.range()]);
            }
        }
        Ok((space, point))
    }

    pub fn rule_count(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn base(&self) -> &ModelConfig {
        &self.base
    }
}

fn is_rule(name: &str) -> bool {
    RULE_LAYERS.iter().any(|l| name.starts_with(&format!("{l}.")))
}

fn connection_count(base: &ModelConfig) -> usize {
    let h = base.hidden;
    h * h + h * base.input_dim()
}

/// Per-connection `(A, B, C, D)` of a PRNN genotype, recurrent layer first,
/// each layer row-major.
pub fn connection_rules(base: &ModelConfig, genotype: &[f64]) -> Result<Vec<[f64; 4]>> {
    if base.arch != Arch::Prnn {
        return Err(Error::InvalidArgument(format!(
            "rule merging needs a PRNN, got {}",
            base.arch
        )));
    }
    if genotype.len() != base.param_count() {
        return Err(Error::shape("PRNN genotype", base.param_count(), genotype.len()));
    }
    let layout = base.layout();
    let mut out = Vec::with_capacity(connection_count(base));
    for layer in RULE_LAYERS {
        let parts: Vec<_> = RULE_PARTS
            .iter()
            .map(|p| layout.get(&format!("{layer}.{p}")).expect("PRNN rule slice").range())
            .collect();
        for idx in 0..parts[0].len() {
            out.push(std::array::from_fn(|q| genotype[parts[q].start + idx]));
        }
    }
    Ok(out)
}

impl GenotypeSpace for TiedSpace {
    fn dim(&self) -> usize {
        4 * self.k + self.base.param_count() - 4 * connection_count(&self.base)
    }

    fn model_config(&self) -> &ModelConfig {
        &self.base
    }

    fn expand(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.dim() {
            return Err(Error::shape("tied genotype", self.dim(), point.len()));
        }
        let (rules, rest) = point.split_at(4 * self.k);
        let layout = self.base.layout();
        let mut out = vec![0.0; self.base.param_count()];
        let mut cursor = 0;
        for s in layout.slices() {
            if !is_rule(&s.name) {
                out[s.range()].copy_from_slice(&rest[cursor..cursor + s.len()]);
                cursor += s.len();
            }
        }
        let mut conn = 0;
        for layer in RULE_LAYERS {
            let parts: Vec<_> = RULE_PARTS
                .iter()
                .map(|p| layout.get(&format!("{layer}.{p}")).expect("PRNN rule slice").range())
                .collect();
            for idx in 0..parts[0].len() {
                let a = self.assignment[conn];
                for q in 0..4 {
                    out[parts[q].start + idx] = rules[4 * a + q];
                }
                conn += 1;
            }
        }
        Ok(out)
    }

    fn descriptor(&self) -> String {
        let mut hasher = Sha256::new();
        for a in &self.assignment {
            hasher.update((*a as u64).to_le_bytes());
        }
        let digest: [u8; 32] = hasher.finalize().into();
        format!(
            "tied;{};k={};assignment={}",
            GenotypeSpace::descriptor(&self.base),
            self.k,
            hex(&digest[..16])
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plasticity::ModulationKind;

    #[test]
    fn kmeans_separates_obvious_clusters() {
        let mut pts = vec![[0.0, 0.0, 0.0, 0.0]; 5];
        pts.extend(vec![[10.0, 10.0, 10.0, 10.0]; 5]);
        pts[1][0] = 0.2;
        let r = kmeans(&pts, &KMeansConfig::new(2, 3)).unwrap();
        assert_eq!(r.centroids.len(), 2);
        assert_eq!(
            r.assignment[..5].iter().collect::<std::collections::HashSet<_>>().len(),
            1
        );
        assert_ne!(r.assignment[0], r.assignment[9]);
        assert!((r.inertia - 0.032).abs() < 1e-12);
    }

    #[test]
    fn surplus_clusters_are_dropped() {
        let pts = vec![[1.0, 2.0, 3.0, 4.0]; 6];
        let r = kmeans(&pts, &KMeansConfig::new(4, 0)).unwrap();
        assert_eq!(r.centroids, vec![[1.0, 2.0, 3.0, 4.0]]);
        assert!(r.assignment.iter().all(|&a| a == 0));
    }

    #[test]
    fn tied_dim_matches_parameter_budget() {
        let base = ModelConfig::new(Arch::Prnn, 64, ModulationKind::PostDn);
        let s = TiedSpace::new(base, 207, vec![0; 64 * 64 + 64 * 15]).unwrap();
        assert_eq!(s.dim(), 1347);
        assert!(TiedSpace::new(ModelConfig::new(Arch::DecPrnn, 4, ModulationKind::None), 1, vec![]).is_err());
    }
}
