//! Labelled examples, the synthetic source and per-drone partitioning.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LearningError;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

/// A drone's local data (or the shared evaluation split).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPartition {
    pub examples: Vec<Example>,
    /// Index of each example in the pool it was drawn from.
    pub source_indices: Vec<usize>,
}

impl DatasetPartition {
    pub fn new(examples: Vec<Example>) -> Result<Self, LearningError> {
        if examples.is_empty() {
            return Err(LearningError::InvalidPartition("partition must hold at least one example".into()));
        }
        let dim = examples[0].features.len();
        if examples.iter().any(|e| e.features.len() != dim) {
            return Err(LearningError::InvalidPartition("feature dimension is not uniform".into()));
        }
        let source_indices = (0..examples.len()).collect();
        Ok(Self { examples, source_indices })
    }

    /// n_k
    pub fn size(&self) -> usize {
        self.examples.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.examples[0].features.len()
    }
}

/// Isotropic Gaussian blobs, one per class, with balanced labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBlobs {
    pub features: usize,
    pub classes: usize,
    /// Standard deviation of the class means around the origin.
    pub separation: f64,
    /// Within-class standard deviation.
    pub noise: f64,
}

impl Default for SyntheticBlobs {
    fn default() -> Self {
        Self { features: 10, classes: 4, separation: 1.0, noise: 1.0 }
    }
}

impl SyntheticBlobs {
    pub fn generate(&self, samples: usize, seed: u64) -> Result<Vec<Example>, LearningError> {
        if self.features == 0 || self.classes < 2 {
            return Err(LearningError::InvalidPartition("synthetic source needs features >= 1 and classes >= 2".into()));
        }
        if !(self.separation > 0.0 && self.noise > 0.0) {
            return Err(LearningError::InvalidPartition("separation and noise must be positive".into()));
        }
        let mut rng = seed::rng(seed::derive_seed(seed, "blobs", 0));
        let centre = Normal::new(0.0, self.separation).expect("positive std");
        let means: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| (0..self.features).map(|_| centre.sample(&mut rng)).collect())
            .collect();
        let jitter = Normal::new(0.0, self.noise).expect("positive std");
        let mut examples: Vec<Example> = (0..samples)
            .map(|i| {
                let label = i % self.classes;
                let features = means[label].iter().map(|m| m + jitter.sample(&mut rng)).collect();
                Example::new(features, label)
            })
            .collect();
        examples.shuffle(&mut rng);
        Ok(examples)
    }
}

/// Loads `label,f1,f2,...` rows without a header.
pub fn load_csv_dataset(path: &Path) -> Result<Vec<Example>, LearningError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| LearningError::Load(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| LearningError::Load(format!("{}: {e}", path.display())))?;
        let mut fields = row.iter();
        let label = fields
            .next()
            .and_then(|l| l.parse::<usize>().ok())
            .ok_or_else(|| LearningError::Load(format!("row {}: first column must be a class label", line + 1)))?;
        let features = fields
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| LearningError::Load(format!("row {}: {e}", line + 1)))?;
        out.push(Example::new(features, label));
    }
    if out.is_empty() {
        return Err(LearningError::EmptySource);
    }
    Ok(out)
}

/// Shuffles `source` and splits off `eval_fraction` of it (at least one
/// example when the fraction is positive) as a held-out set.
pub fn split_holdout(
    source: Vec<Example>,
    eval_fraction: f64,
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>), LearningError> {
    if source.is_empty() {
        return Err(LearningError::EmptySource);
    }
    if !(0.0..1.0).contains(&eval_fraction) {
        return Err(LearningError::InvalidPartition(format!("eval_fraction must be in [0, 1), got {eval_fraction}")));
    }
    let mut source = source;
    source.shuffle(&mut seed::rng(seed::derive_seed(seed, "holdout", 0)));
    let mut held = (eval_fraction * source.len() as f64).round() as usize;
    if eval_fraction > 0.0 {
        held = held.clamp(1, source.len() - 1);
    }
    let pool = source.split_off(held);
    Ok((pool, source))
}

/// Draws `n_drones` partitions of `per_drone` examples each from `source`.
///
/// Each partition starts with a common core of `round(overlap * per_drone)`
/// examples shared by every drone; the remainder is drawn without
/// replacement from the rest of the pool and falls back to sampling with
/// replacement once the pool runs dry.
pub fn partition_dataset(
    source: &[Example],
    n_drones: usize,
    per_drone: usize,
    overlap: f64,
    seed: u64,
) -> Result<Vec<DatasetPartition>, LearningError> {
    if source.is_empty() {
        return Err(LearningError::EmptySource);
    }
    if per_drone == 0 {
        return Err(LearningError::InvalidPartition("per_drone must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&overlap) {
        return Err(LearningError::InvalidPartition(format!("overlap must be in [0, 1], got {overlap}")));
    }
    let mut rng = seed::rng(seed::derive_seed(seed, "partition", 0));
    let mut order: Vec<usize> = (0..source.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = order.into_iter();

    let shared = (overlap * per_drone as f64).round() as usize;
    let mut draw = |rng: &mut rand_chacha::ChaCha8Rng| cursor.next().unwrap_or_else(|| rng.random_range(0..source.len()));
    let core: Vec<usize> = (0..shared).map(|_| draw(&mut rng)).collect();

    let mut partitions = Vec::with_capacity(n_drones);
    for _ in 0..n_drones {
        let mut indices = core.clone();
        indices.extend((shared..per_drone).map(|_| draw(&mut rng)));
        let examples = indices.iter().map(|&i| source[i].clone()).collect();
        partitions.push(DatasetPartition { examples, source_indices: indices });
    }
    Ok(partitions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn source(n: usize) -> Vec<Example> {
        SyntheticBlobs::default().generate(n, 3).unwrap()
    }

    #[test]
    fn blobs_are_balanced_and_seeded() {
        let a = SyntheticBlobs::default().generate(400, 1).unwrap();
        let b = SyntheticBlobs::default().generate(400, 1).unwrap();
        assert_eq!(a, b);
        for class in 0..4 {
            assert_eq!(a.iter().filter(|e| e.label == class).count(), 100);
        }
        assert!(a.iter().all(|e| e.features.len() == 10));
    }

    #[test]
    fn disjoint_when_source_is_exact() {
        let src = source(60);
        let parts = partition_dataset(&src, 6, 10, 0.0, 9).unwrap();
        assert_eq!(parts.len(), 6);
        let all: Vec<usize> = parts.iter().flat_map(|p| p.source_indices.clone()).collect();
        let unique: HashSet<usize> = all.iter().copied().collect();
        assert_eq!(all.len(), 60);
        assert_eq!(unique.len(), 60);
        assert!(parts.iter().all(|p| p.size() == 10));
    }

    #[test]
    fn single_drone() {
        let parts = partition_dataset(&source(100), 1, 25, 0.0, 0).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].size(), 25);
    }

    #[test]
    fn falls_back_to_replacement_when_short() {
        let src = source(10);
        let parts = partition_dataset(&src, 3, 8, 0.0, 2).unwrap();
        assert!(parts.iter().all(|p| p.size() == 8));
        assert!(parts.iter().flat_map(|p| &p.source_indices).all(|&i| i < 10));
    }

    #[test]
    fn errors() {
        assert_eq!(partition_dataset(&[], 2, 5, 0.0, 0), Err(LearningError::EmptySource));
        assert!(partition_dataset(&source(10), 2, 0, 0.0, 0).is_err());
        assert!(partition_dataset(&source(10), 2, 2, 1.5, 0).is_err());
        assert!(DatasetPartition::new(vec![]).is_err());
        assert!(DatasetPartition::new(vec![Example::new(vec![1.0], 0), Example::new(vec![1.0, 2.0], 0)]).is_err());
    }

    #[test]
    fn measured_overlap_matches_request() {
        let src = source(2000);
        let mut ratios = Vec::new();
        for seed in 0..30 {
            let parts = partition_dataset(&src, 5, 40, 0.5, seed).unwrap();
            for i in 0..parts.len() {
                for j in i + 1..parts.len() {
                    let a: HashSet<_> = parts[i].source_indices.iter().collect();
                    let common = parts[j].source_indices.iter().filter(|k| a.contains(k)).count();
                    ratios.push(common as f64 / 40.0);
                }
            }
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 0.5).abs() <= 0.05, "mean pairwise overlap {mean}");
    }

    #[test]
    fn partitions_are_seeded() {
        let src = source(500);
        assert_eq!(partition_dataset(&src, 4, 20, 0.2, 8).unwrap(), partition_dataset(&src, 4, 20, 0.2, 8).unwrap());
        assert_ne!(partition_dataset(&src, 4, 20, 0.2, 8).unwrap(), partition_dataset(&src, 4, 20, 0.2, 9).unwrap());
    }

    #[test]
    fn holdout_split_sizes() {
        let (pool, eval) = split_holdout(source(100), 0.1, 4).unwrap();
        assert_eq!(pool.len(), 90);
        assert_eq!(eval.len(), 10);
        assert!(split_holdout(vec![], 0.1, 0).is_err());
        assert!(split_holdout(source(10), 1.0, 0).is_err());
    }

    #[test]
    fn csv_loader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "0, 1.5, 2\n1,-3,4e-1\n").unwrap();
        let data = load_csv_dataset(&path).unwrap();
        assert_eq!(data, vec![Example::new(vec![1.5, 2.0], 0), Example::new(vec![-3.0, 0.4], 1)]);
        std::fs::write(&path, "x,1\n").unwrap();
        assert!(load_csv_dataset(&path).is_err());
    }
}
