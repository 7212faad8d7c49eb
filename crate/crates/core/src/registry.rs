//! Profile registry: enrollment, persistence, and threshold matching.
//!
//! Matching scans every enrolled feature (the exhaustive route is the oracle
//! the LSH accelerator in [`lsh`] is audited against) and declares a match
//! only when the best similarity reaches the threshold. Concurrency contract:
//! lookups take `&self` and may run in parallel; enrollment takes `&mut self`
//! and is therefore serialized by the borrow checker; swapping in a freshly
//! built LSH index is a plain value move.

pub mod lsh;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::features::{self, FeatureVector};
use crate::{Error, Result};

// ---- Types ----

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfile {
    pub device_id: String,
    pub enrolled: Vec<FeatureVector>,
    pub created_at: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchOutcome {
    Matched,
    NewDevice,
    /// Multi-sample queries that neither agree on one device nor all miss.
    Inconclusive,
}

/// Result of a threshold decision. `device_id` is present iff the outcome is
/// `Matched`; `best_similarity` is -inf against an empty registry (serialized
/// as null).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub outcome: MatchOutcome,
    pub device_id: Option<String>,
    pub best_similarity: f64,
    pub threshold: f64,
    pub runner_up_similarity: Option<f64>,
}

/// What a profile is matched against: its single most similar enrolled
/// feature (default), or the normalized mean of its enrolled features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchTarget {
    #[default]
    BestFeature,
    Centroid,
}

/// One line of the append-only journal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnrollmentRecord {
    pub device_id: String,
    pub feature: FeatureVector,
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    profiles: BTreeMap<String, DeviceProfile>,
}

// ---- Operations ----

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn enrolled_count(&self) -> usize {
        self.profiles.values().map(|p| p.enrolled.len()).sum()
    }

    pub fn get(&self, device_id: &str) -> Option<&DeviceProfile> {
        self.profiles.get(device_id)
    }

    /// Profiles in device-id order.
    pub fn profiles(&self) -> impl Iterator<Item = &DeviceProfile> {
        self.profiles.values()
    }

    pub fn spec_id(&self) -> Option<&str> {
        self.profiles
            .values()
            .next()
            .and_then(|p| p.enrolled.first())
            .map(|f| f.spec_id.as_str())
    }

    fn check_compatible(&self, feature: &FeatureVector) -> Result<()> {
        if let Some(existing) = self
            .profiles
            .values()
            .next()
            .and_then(|p| p.enrolled.first())
        {
            if existing.spec_id != feature.spec_id {
                return Err(Error::SpecMismatch(format!(
                    "registry holds spec {}, feature has {}",
                    existing.spec_id, feature.spec_id
                )));
            }
            if existing.values.len() != feature.values.len() {
                return Err(Error::DimensionMismatch(format!(
                    "registry features have {} entries, got {}",
                    existing.values.len(),
                    feature.values.len()
                )));
            }
        }
        Ok(())
    }

    pub fn enroll(&mut self, feature: FeatureVector, device_id: &str) -> Result<()> {
        feature.validate()?;
        self.check_compatible(&feature)?;
        if device_id.is_empty() {
            return Err(Error::Registry("empty device id".into()));
        }
        let profile = self
            .profiles
            .entry(device_id.to_string())
            .or_insert_with(|| DeviceProfile {
                device_id: device_id.to_string(),
                enrolled: Vec::new(),
                created_at: feature.captured_at.clone(),
            });
        profile.enrolled.push(feature);
        Ok(())
    }

    /// Most similar enrolled feature over all profiles. Ties break toward
    /// the lexicographically smallest device id.
    pub fn nearest_bruteforce(&self, query: &FeatureVector) -> Result<(&str, f64)> {
        if self.is_empty() {
            return Err(Error::Registry("empty registry".into()));
        }
        self.check_compatible(query)?;
        let mut best: Option<(&str, f64)> = None;
        for profile in self.profiles.values() {
            for enrolled in &profile.enrolled {
                let sim = 1.0 - features::distance_slices(&enrolled.values, &query.values);
                // Strict comparison keeps the earlier (smaller) id on ties.
                if best.is_none() || sim > best.unwrap().1 {
                    best = Some((profile.device_id.as_str(), sim));
                }
            }
        }
        Ok(best.unwrap())
    }

    pub fn identify(&self, query: &FeatureVector, alpha: f64) -> Result<MatchDecision> {
        self.identify_with(query, alpha, MatchTarget::BestFeature)
    }

    pub fn identify_with(
        &self,
        query: &FeatureVector,
        alpha: f64,
        target: MatchTarget,
    ) -> Result<MatchDecision> {
        check_alpha(alpha)?;
        if self.is_empty() {
            return Ok(MatchDecision {
                outcome: MatchOutcome::NewDevice,
                device_id: None,
                best_similarity: f64::NEG_INFINITY,
                threshold: alpha,
                runner_up_similarity: None,
            });
        }
        self.check_compatible(query)?;
        let mut best: Option<(&str, f64)> = None;
        let mut runner_up: Option<f64> = None;
        for profile in self.profiles.values() {
            let sim = match target {
                MatchTarget::BestFeature => profile
                    .enrolled
                    .iter()
                    .map(|e| 1.0 - features::distance_slices(&e.values, &query.values))
                    .fold(f64::NEG_INFINITY, f64::max),
                MatchTarget::Centroid => {
                    let c = centroid(&profile.enrolled);
                    1.0 - features::distance_slices(&c, &query.values)
                }
            };
            match best {
                None => best = Some((profile.device_id.as_str(), sim)),
                Some((_, b)) if sim > b => {
                    runner_up = Some(b);
                    best = Some((profile.device_id.as_str(), sim));
                }
                Some(_) => runner_up = Some(runner_up.map_or(sim, |r| r.max(sim))),
            }
        }
        let (id, sim) = best.unwrap();
        Ok(decision_from_best(id, sim, alpha, runner_up))
    }

    /// Unanimity rule over k samples: matched only if every sample matches
    /// the same device, new-device only if every sample misses; any mix is
    /// inconclusive. k = 1 reduces exactly to `identify`.
    pub fn identify_multisample(
        &self,
        queries: &[FeatureVector],
        alpha: f64,
    ) -> Result<MatchDecision> {
        if queries.is_empty() {
            return Err(Error::EmptyInput("no query samples".into()));
        }
        let decisions: Vec<MatchDecision> = queries
            .iter()
            .map(|q| self.identify(q, alpha))
            .collect::<Result<_>>()?;
        let all_missed = decisions
            .iter()
            .all(|d| d.outcome == MatchOutcome::NewDevice);
        let unanimous_id = match decisions[0].device_id.as_deref() {
            Some(first)
                if decisions
                    .iter()
                    .all(|d| d.device_id.as_deref() == Some(first)) =>
            {
                Some(first.to_string())
            }
            _ => None,
        };
        if let Some(id) = unanimous_id {
            let worst = decisions
                .iter()
                .map(|d| d.best_similarity)
                .fold(f64::INFINITY, f64::min);
            return Ok(MatchDecision {
                outcome: MatchOutcome::Matched,
                device_id: Some(id),
                best_similarity: worst,
                threshold: alpha,
                runner_up_similarity: None,
            });
        }
        let closest = decisions
            .iter()
            .map(|d| d.best_similarity)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(MatchDecision {
            outcome: if all_missed {
                MatchOutcome::NewDevice
            } else {
                MatchOutcome::Inconclusive
            },
            device_id: None,
            best_similarity: closest,
            threshold: alpha,
            runner_up_similarity: None,
        })
    }

    // ---- Persistence: append-only JSONL journal ----

    pub fn load(path: &Path) -> Result<Registry> {
        let text = fs::read_to_string(path)?;
        let mut registry = Registry::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let record: EnrollmentRecord = serde_json::from_str(line)?;
            registry.enroll(record.feature, &record.device_id)?;
        }
        Ok(registry)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for profile in self.profiles.values() {
            for feature in &profile.enrolled {
                let record = EnrollmentRecord {
                    device_id: profile.device_id.clone(),
                    feature: feature.clone(),
                };
                serde_json::to_writer(&mut out, &record)?;
                out.write_all(b"\n")?;
            }
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Append one enrollment to the journal without rewriting it.
pub fn append_record(path: &Path, record: &EnrollmentRecord) -> Result<()> {
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(&line)?;
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha <= -1.0 || alpha >= 1.0 {
        return Err(Error::InvalidSamples(format!(
            "threshold must lie in (-1, 1), got {alpha}"
        )));
    }
    Ok(())
}

fn centroid(enrolled: &[FeatureVector]) -> Vec<f64> {
    let dim = enrolled[0].values.len();
    let mut mean = vec![0.0f64; dim];
    for f in enrolled {
        for (m, v) in mean.iter_mut().zip(&f.values) {
            *m += v;
        }
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for m in &mut mean {
            *m /= norm;
        }
    }
    mean
}

fn decision_from_best(
    id: &str,
    sim: f64,
    alpha: f64,
    runner_up: Option<f64>,
) -> MatchDecision {
    if sim >= alpha {
        MatchDecision {
            outcome: MatchOutcome::Matched,
            device_id: Some(id.to_string()),
            best_similarity: sim,
            threshold: alpha,
            runner_up_similarity: runner_up,
        }
    } else {
        MatchDecision {
            outcome: MatchOutcome::NewDevice,
            device_id: None,
            best_similarity: sim,
            threshold: alpha,
            runner_up_similarity: runner_up,
        }
    }
}
