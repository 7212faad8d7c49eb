//! Frequency-response features: per-tone magnitude estimation, the
//! normalized feature vector, and its distance/similarity metrics.
//!
//! Magnitudes come from single-bin DFT evaluation (Goertzel recurrence) at
//! exactly the comb frequencies over windows holding a whole number of comb
//! periods, so bin estimates are leakage-free: on-grid energy lands entirely
//! in its own bin, off-grid energy decays with window length. The flat input
//! spectrum is constant across tones and disappears in normalization, so no
//! explicit division by the stimulus is performed.

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::stimulus::{AudioBuffer, StimulusSpec};
use crate::{Error, Result};

/// Cap on the analysis window: 100 comb periods (1 s at the default spec).
/// Longer recordings are split into equal windows of this size and the
/// per-window magnitudes averaged; a trailing remainder shorter than the
/// window is dropped so the average stays evenly weighted.
const MAX_WINDOW_PERIODS: usize = 100;

// ---- Feature vector ----

/// L2-normalized per-tone response magnitudes; the device fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub spec_id: String,
    pub device_label: Option<String>,
    pub captured_at: Option<String>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    /// Normalize raw magnitudes into a unit feature vector.
    pub fn from_magnitudes(magnitudes: Vec<f64>, spec_id: String) -> Result<Self> {
        if magnitudes.is_empty() {
            return Err(Error::EmptyInput("no magnitudes".into()));
        }
        if magnitudes.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidSamples(
                "magnitudes must be finite and non-negative".into(),
            ));
        }
        let norm = magnitudes.iter().map(|m| m * m).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::InvalidSamples(
                "magnitude vector has no energy".into(),
            ));
        }
        Ok(FeatureVector {
            spec_id,
            device_label: None,
            captured_at: None,
            values: magnitudes.into_iter().map(|m| m / norm).collect(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::EmptyInput("empty feature vector".into()));
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidSamples(
                "feature entries must be finite and non-negative".into(),
            ));
        }
        let norm = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSamples(format!(
                "feature vector norm {norm} is not 1"
            )));
        }
        Ok(())
    }
}

// ---- Magnitude estimation ----

/// Goertzel recurrence: single-bin DFT magnitude, returned as the amplitude
/// of a cosine at that frequency (2|X_k|/N).
fn goertzel_amplitude(samples: &[f64], freq: f64, sample_rate: f64) -> f64 {
    let omega = 2.0 * PI * freq / sample_rate;
    let coeff = 2.0 * omega.cos();
    let (mut q1, mut q2) = (0.0f64, 0.0f64);
    for x in samples {
        let q0 = x + coeff * q1 - q2;
        q2 = q1;
        q1 = q0;
    }
    let power = (q1 * q1 + q2 * q2 - coeff * q1 * q2).max(0.0);
    2.0 * power.sqrt() / samples.len() as f64
}

/// Window layout for a recording: equal coherent windows, remainder dropped.
pub(crate) fn window_plan(samples_len: usize, period: usize) -> (usize, usize) {
    let total_periods = samples_len / period;
    let window_periods = total_periods.min(MAX_WINDOW_PERIODS);
    if window_periods == 0 {
        return (0, 0);
    }
    let window_len = window_periods * period;
    (window_len, samples_len / window_len)
}

/// Raw per-tone amplitudes of a recording, before normalization. Windows are
/// magnitude-averaged, which is unbiased under zero-mean noise.
pub fn tone_magnitudes(recording: &AudioBuffer, spec: &StimulusSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if recording.sample_rate != spec.sample_rate {
        return Err(Error::SpecMismatch(format!(
            "recording at {} Hz, spec at {} Hz",
            recording.sample_rate, spec.sample_rate
        )));
    }
    let period = spec.coherent_period_samples();
    let (window_len, windows) = window_plan(recording.samples.len(), period);
    if windows == 0 {
        return Err(Error::InvalidSamples(format!(
            "recording of {} samples is shorter than one coherent period ({period})",
            recording.samples.len()
        )));
    }
    let freqs = spec.frequencies();
    let fs = spec.sample_rate as f64;
    let mut mags = vec![0.0f64; freqs.len()];
    for w in 0..windows {
        let chunk = &recording.samples[w * window_len..(w + 1) * window_len];
        for (m, f) in mags.iter_mut().zip(&freqs) {
            *m += goertzel_amplitude(chunk, *f, fs);
        }
    }
    for m in &mut mags {
        *m /= windows as f64;
    }
    Ok(mags)
}

/// Full extraction: magnitudes at the spec frequencies, L2-normalized.
pub fn extract(recording: &AudioBuffer, spec: &StimulusSpec) -> Result<FeatureVector> {
    let mags = tone_magnitudes(recording, spec)?;
    FeatureVector::from_magnitudes(mags, spec.id())
        .map_err(|_| Error::InvalidSamples("recording has no in-band energy".into()))
}

// ---- Metrics ----

fn check_comparable(p: &FeatureVector, q: &FeatureVector) -> Result<()> {
    if p.values.len() != q.values.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} entries",
            p.values.len(),
            q.values.len()
        )));
    }
    if p.spec_id != q.spec_id {
        return Err(Error::SpecMismatch(format!(
            "feature specs differ: {} vs {}",
            p.spec_id, q.spec_id
        )));
    }
    Ok(())
}

pub(crate) fn distance_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean distance; in [0, 2] for unit vectors.
pub fn distance(p: &FeatureVector, q: &FeatureVector) -> Result<f64> {
    check_comparable(p, q)?;
    Ok(distance_slices(&p.values, &q.values))
}

/// 1 - distance; 1 for identical fingerprints, negative past orthogonality.
pub fn similarity(p: &FeatureVector, q: &FeatureVector) -> Result<f64> {
    Ok(1.0 - distance(p, q)?)
}

// ---- JSONL persistence ----

pub fn write_features_jsonl(path: &Path, features: &[FeatureVector]) -> Result<()> {
    let mut out = Vec::new();
    for f in features {
        serde_json::to_writer(&mut out, f)?;
        out.write_all(b"\n")?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_features_jsonl(path: &Path) -> Result<Vec<FeatureVector>> {
    let text = fs::read_to_string(path)?;
    let mut features = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let f: FeatureVector = serde_json::from_str(line)?;
        f.validate()?;
        features.push(f);
    }
    Ok(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimulus::{synthesize, synthesize_with_gains, PhaseScheme};
    use proptest::prelude::*;

    fn unit(values: Vec<f64>) -> FeatureVector {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        FeatureVector {
            spec_id: "t".into(),
            device_label: None,
            captured_at: None,
            values: values.into_iter().map(|v| v / norm).collect(),
        }
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn goertzel_exact_on_grid() {
        let fs = 44_100.0;
        let samples: Vec<f64> = (0..441)
            .map(|t| 0.37 * (2.0 * PI * 15_300.0 * t as f64 / fs + 1.1).cos())
            .collect();
        let a = goertzel_amplitude(&samples, 15_300.0, fs);
        assert!((a - 0.37).abs() < 1e-9, "amplitude {a}");
        // Orthogonal bin sees nothing.
        let z = goertzel_amplitude(&samples, 15_400.0, fs);
        assert!(z < 1e-12, "leakage {z}");
    }

    #[test]
    fn flat_chain_gives_uniform_vector() {
        for scheme in [PhaseScheme::Zero, PhaseScheme::Newman] {
            let spec = StimulusSpec {
                phase_scheme: scheme,
                ..StimulusSpec::default()
            };
            let feature = extract(&synthesize(&spec).unwrap(), &spec).unwrap();
            let expect = 1.0 / 71f64.sqrt();
            for v in &feature.values {
                assert!((v - expect).abs() < 1e-6, "entry {v} vs {expect}");
            }
            feature.validate().unwrap();
        }
    }

    #[test]
    fn known_gain_curve_recovered() {
        let spec = StimulusSpec::default();
        let gains: Vec<f64> = (0..71)
            .map(|i| 0.6 + 0.35 * (i as f64 / 5.0).sin() + 0.02 * i as f64 / 7.0)
            .collect();
        let rec = synthesize_with_gains(&spec, &gains).unwrap();
        let feature = extract(&rec, &spec).unwrap();
        assert!(cosine(&feature.values, &gains) >= 0.9999);
        // Stronger: proportional entry by entry.
        let norm = gains.iter().map(|g| g * g).sum::<f64>().sqrt();
        for (v, g) in feature.values.iter().zip(&gains) {
            assert!((v - g / norm).abs() < 1e-9);
        }
    }

    #[test]
    fn on_grid_out_of_band_tone_rejected() {
        let spec = StimulusSpec::default();
        let clean = synthesize(&spec).unwrap();
        let mut noisy = clean.clone();
        // A strong 5 kHz tone sits on the comb grid, far below the band;
        // coherent windows keep it exactly orthogonal to every feature bin.
        for (t, s) in noisy.samples.iter_mut().enumerate() {
            *s += 0.5 * (2.0 * PI * 5_000.0 * t as f64 / 44_100.0).cos();
        }
        let a = extract(&clean, &spec).unwrap();
        let b = extract(&noisy, &spec).unwrap();
        let worst = a
            .values
            .iter()
            .zip(&b.values)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(worst < 1e-6, "feature moved by {worst}");
    }

    #[test]
    fn window_averaging_layout() {
        assert_eq!(window_plan(44_100, 441), (44_100, 1));
        assert_eq!(window_plan(88_200, 441), (44_100, 2));
        assert_eq!(window_plan(22_050, 441), (22_050, 1));
        assert_eq!(window_plan(66_150, 441), (44_100, 1)); // 1.5 s: tail dropped
        assert_eq!(window_plan(440, 441), (0, 0));
        assert_eq!(window_plan(1_000, 441), (882, 1));
    }

    #[test]
    fn repeated_recording_matches_single_window() {
        let spec = StimulusSpec::default();
        let one = synthesize(&spec).unwrap();
        let mut two = one.clone();
        two.samples.extend_from_slice(&one.samples);
        let fa = extract(&one, &spec).unwrap();
        let fb = extract(&two, &spec).unwrap();
        for (a, b) in fa.values.iter().zip(&fb.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn extract_error_cases() {
        let spec = StimulusSpec::default();
        let short = AudioBuffer {
            samples: vec![0.1; 300],
            sample_rate: 44_100,
        };
        assert!(matches!(extract(&short, &spec), Err(Error::InvalidSamples(_))));
        let silent = AudioBuffer {
            samples: vec![0.0; 44_100],
            sample_rate: 44_100,
        };
        assert!(matches!(extract(&silent, &spec), Err(Error::InvalidSamples(_))));
        let wrong_rate = AudioBuffer {
            samples: vec![0.1; 48_000],
            sample_rate: 48_000,
        };
        assert!(matches!(extract(&wrong_rate, &spec), Err(Error::SpecMismatch(_))));
    }

    #[test]
    fn distance_hand_examples() {
        let p = unit(vec![1.0, 0.0, 0.0]);
        let q = unit(vec![0.6, 0.8, 0.0]);
        assert_eq!(distance(&p, &p).unwrap(), 0.0);
        assert!((distance(&p, &q).unwrap() - 0.8944271909999159).abs() < 1e-12);
        let e1 = unit(vec![1.0, 0.0]);
        let e2 = unit(vec![0.0, 1.0]);
        assert!((distance(&e1, &e2).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!((similarity(&e1, &e2).unwrap() - (1.0 - 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(similarity(&p, &p).unwrap(), 1.0);
    }

    #[test]
    fn metric_mismatch_errors() {
        let p = unit(vec![1.0, 0.0]);
        let q = unit(vec![1.0, 0.0, 0.0]);
        assert!(matches!(distance(&p, &q), Err(Error::DimensionMismatch(_))));
        let mut r = unit(vec![1.0, 0.0]);
        r.spec_id = "other".into();
        assert!(matches!(distance(&p, &r), Err(Error::SpecMismatch(_))));
    }

    #[test]
    fn from_magnitudes_validation() {
        assert!(FeatureVector::from_magnitudes(vec![], "t".into()).is_err());
        assert!(FeatureVector::from_magnitudes(vec![0.5, -0.1], "t".into()).is_err());
        assert!(FeatureVector::from_magnitudes(vec![0.0, 0.0], "t".into()).is_err());
        let f = FeatureVector::from_magnitudes(vec![3.0, 4.0], "t".into()).unwrap();
        assert!((f.values[0] - 0.6).abs() < 1e-12);
        assert!((f.values[1] - 0.8).abs() < 1e-12);
        f.validate().unwrap();
    }

    #[test]
    fn jsonl_round_trip_and_key_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feats.jsonl");
        let mut a = unit(vec![0.6, 0.8]);
        a.device_label = Some("dev-1".into());
        a.captured_at = Some("2024-05-01T10:00:00Z".into());
        let b = unit(vec![1.0, 1.0]);
        write_features_jsonl(&path, &[a.clone(), b.clone()]).unwrap();
        let back = read_features_jsonl(&path).unwrap();
        assert_eq!(back, vec![a.clone(), b]);
        let line = serde_json::to_string(&a).unwrap();
        assert!(line.starts_with("{\"spec_id\":"), "line was {line}");
        assert!(line.contains("\"device_label\":\"dev-1\""));
    }

    #[test]
    fn jsonl_rejects_denormalized_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(
            &path,
            "{\"spec_id\":\"t\",\"device_label\":null,\"captured_at\":null,\"values\":[0.5,0.5]}\n",
        )
        .unwrap();
        assert!(read_features_jsonl(&path).is_err());
    }

    proptest! {
        #[test]
        fn metric_properties_on_unit_vectors(
            raw in proptest::collection::vec(0.01..1.0f64, 2..40),
            raw2 in proptest::collection::vec(0.01..1.0f64, 2..40),
            raw3 in proptest::collection::vec(0.01..1.0f64, 2..40),
        ) {
            let dim = raw.len().min(raw2.len()).min(raw3.len());
            let p = unit(raw[..dim].to_vec());
            let q = unit(raw2[..dim].to_vec());
            let r = unit(raw3[..dim].to_vec());
            let dpq = distance(&p, &q).unwrap();
            let dqp = distance(&q, &p).unwrap();
            prop_assert!((dpq - dqp).abs() < 1e-15);
            prop_assert_eq!(distance(&p, &p).unwrap(), 0.0);
            let dpr = distance(&p, &r).unwrap();
            let dqr = distance(&q, &r).unwrap();
            prop_assert!(dpr <= dpq + dqr + 1e-12);
            prop_assert!((0.0..=2.0 + 1e-12).contains(&dpq));
            prop_assert!((similarity(&p, &q).unwrap() - similarity(&q, &p).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn extraction_scale_invariance(scale in 1e-3..1e3f64) {
            let spec = StimulusSpec {
                f_start: 14_112.0,
                f_end: 15_435.0,
                spacing: 441.0,
                duration: 0.01,
                ..StimulusSpec::default()
            };
            let rec = synthesize(&spec).unwrap();
            let scaled = AudioBuffer {
                samples: rec.samples.iter().map(|s| s * scale).collect(),
                sample_rate: rec.sample_rate,
            };
            let fa = extract(&rec, &spec).unwrap();
            let fb = extract(&scaled, &spec).unwrap();
            for (a, b) in fa.values.iter().zip(&fb.values) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
