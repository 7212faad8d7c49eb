//! Random-hyperplane LSH over enrolled features.
//!
//! Each table hashes a vector to the sign pattern of its projections onto
//! seeded random hyperplanes; near-identical vectors collide with high
//! probability, so a query only re-ranks the union of its buckets across
//! tables. Exact similarity decides the final outcome, which keeps the
//! exhaustive scan the behavioral oracle: the index can only miss
//! candidates, never invent scores.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::features::{self, FeatureVector};
use crate::registry::{decision_from_best, MatchDecision, MatchOutcome, Registry};
use crate::{mix_seed, Error, Result};

pub const DEFAULT_PLANES: usize = 12;
pub const DEFAULT_TABLES: usize = 8;

struct Table {
    /// planes x dim, row-major.
    normals: Vec<f64>,
    buckets: HashMap<u64, Vec<u32>>,
}

pub struct LshIndex {
    dim: usize,
    planes: usize,
    seed: u64,
    tables: Vec<Table>,
    /// (device_id, feature values), ordered by id then enrollment order, so
    /// the index itself is deterministic.
    entries: Vec<(String, Vec<f64>)>,
}

fn signature(normals: &[f64], planes: usize, dim: usize, v: &[f64]) -> u64 {
    let mut key = 0u64;
    for p in 0..planes {
        let row = &normals[p * dim..(p + 1) * dim];
        let dot: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
        if dot >= 0.0 {
            key |= 1 << p;
        }
    }
    key
}

/// Build an index over every enrolled feature. `planes` = 0 degenerates to a
/// single bucket per table, i.e. exhaustive search.
pub fn build(registry: &Registry, planes: usize, tables: usize, seed: u64) -> Result<LshIndex> {
    if registry.is_empty() {
        return Err(Error::Registry("cannot index an empty registry".into()));
    }
    if planes > 63 {
        return Err(Error::Registry(format!(
            "at most 63 hyperplanes per table, got {planes}"
        )));
    }
    if tables == 0 {
        return Err(Error::Registry("need at least one table".into()));
    }
    let mut entries = Vec::with_capacity(registry.enrolled_count());
    for profile in registry.profiles() {
        for feature in &profile.enrolled {
            entries.push((profile.device_id.clone(), feature.values.clone()));
        }
    }
    let dim = entries[0].1.len();
    let tables = (0..tables)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, t as u64));
            let normals: Vec<f64> = (0..planes * dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let mut buckets: HashMap<u64, Vec<u32>> = HashMap::new();
            for (i, (_, values)) in entries.iter().enumerate() {
                let key = signature(&normals, planes, dim, values);
                buckets.entry(key).or_default().push(i as u32);
            }
            Table { normals, buckets }
        })
        .collect();
    Ok(LshIndex {
        dim,
        planes,
        seed,
        tables,
        entries,
    })
}

impl LshIndex {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    /// Union of the query's buckets across tables, deduplicated, in entry
    /// order.
    pub fn candidates(&self, query: &FeatureVector) -> Result<Vec<u32>> {
        if query.values.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "index over {} dims, query has {}",
                self.dim,
                query.values.len()
            )));
        }
        let mut seen = vec![false; self.entries.len()];
        let mut out = Vec::new();
        for table in &self.tables {
            let key = signature(&table.normals, self.planes, self.dim, &query.values);
            if let Some(bucket) = table.buckets.get(&key) {
                for &i in bucket {
                    if !seen[i as usize] {
                        seen[i as usize] = true;
                        out.push(i);
                    }
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Threshold decision over the candidate set, re-ranked by exact
    /// similarity. An empty candidate set reports new-device with -inf, the
    /// same shape an empty registry produces.
    pub fn query(&self, query: &FeatureVector, alpha: f64) -> Result<MatchDecision> {
        let candidates = self.candidates(query)?;
        // Candidates are in entry order (device id, then enrollment), so the
        // strict comparison reproduces the exhaustive lexicographic tie-break.
        let mut best: Option<(&str, f64)> = None;
        let mut sims = Vec::with_capacity(candidates.len());
        for &i in &candidates {
            let (id, values) = &self.entries[i as usize];
            let sim = 1.0 - features::distance_slices(values, &query.values);
            sims.push(sim);
            if best.is_none() || sim > best.unwrap().1 {
                best = Some((id.as_str(), sim));
            }
        }
        let Some((best_id, best_sim)) = best else {
            return Ok(MatchDecision {
                outcome: MatchOutcome::NewDevice,
                device_id: None,
                best_similarity: f64::NEG_INFINITY,
                threshold: alpha,
                runner_up_similarity: None,
            });
        };
        let runner_up = candidates
            .iter()
            .zip(&sims)
            .filter(|(i, _)| self.entries[**i as usize].0 != best_id)
            .map(|(_, s)| *s)
            .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))));
        Ok(decision_from_best(best_id, best_sim, alpha, runner_up))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn unit(values: Vec<f64>) -> FeatureVector {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        FeatureVector {
            spec_id: "t".into(),
            device_label: None,
            captured_at: None,
            values: values.into_iter().map(|v| v / norm).collect(),
        }
    }

    fn random_registry(devices: usize, per_device: usize, dim: usize, seed: u64) -> Registry {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reg = Registry::new();
        for d in 0..devices {
            let base: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() + 0.05).collect();
            for _ in 0..per_device {
                let jittered: Vec<f64> = base
                    .iter()
                    .map(|v| v * (1.0 + 0.01 * (rng.random::<f64>() - 0.5)))
                    .collect();
                reg.enroll(unit(jittered), &format!("dev-{d:03}")).unwrap();
            }
        }
        reg
    }

    #[test]
    fn single_profile_matches_bruteforce() {
        let mut reg = Registry::new();
        let f = unit(vec![0.3, 0.9, 0.2, 0.1]);
        reg.enroll(f.clone(), "only").unwrap();
        let index = build(&reg, DEFAULT_PLANES, DEFAULT_TABLES, 5).unwrap();
        let lsh = index.query(&f, 0.7).unwrap();
        let exact = reg.identify(&f, 0.7).unwrap();
        assert_eq!(lsh, exact);
    }

    #[test]
    fn zero_planes_degenerates_to_bruteforce() {
        let reg = random_registry(20, 3, 16, 99);
        let index = build(&reg, 0, 1, 7).unwrap();
        assert_eq!(index.entry_count(), 60);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..50 {
            let q = unit((0..16).map(|_| rng.random::<f64>() + 0.01).collect());
            assert_eq!(index.candidates(&q).unwrap().len(), 60);
            assert_eq!(index.query(&q, 0.9).unwrap(), reg.identify(&q, 0.9).unwrap());
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let reg = random_registry(10, 2, 8, 4);
        let q = unit((0..8).map(|i| 0.3 + i as f64 * 0.07).collect());
        let a = build(&reg, 8, 4, 11).unwrap();
        let b = build(&reg, 8, 4, 11).unwrap();
        assert_eq!(a.candidates(&q).unwrap(), b.candidates(&q).unwrap());
    }

    #[test]
    fn build_rejects_bad_configs() {
        assert!(build(&Registry::new(), 12, 8, 0).is_err());
        let reg = random_registry(2, 1, 4, 0);
        assert!(build(&reg, 64, 8, 0).is_err());
        assert!(build(&reg, 12, 0, 0).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let reg = random_registry(2, 1, 4, 0);
        let index = build(&reg, 4, 2, 0).unwrap();
        assert!(index.candidates(&unit(vec![1.0, 0.5, 0.2])).is_err());
    }
}
