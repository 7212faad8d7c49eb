//! Multi-tone stimulus synthesis and PCM16 WAV I/O.
//!
//! The stimulus is a comb of equal-amplitude cosines, by default 14-21 kHz at
//! 100 Hz spacing (71 tones), inaudible to most adults but well inside what a
//! phone speaker and microphone pass. All frequencies sit on the comb grid,
//! so an analysis window holding a whole number of comb periods sees an
//! integer number of cycles of every tone (no spectral leakage anywhere in
//! the processing chain).

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

// ---- Public types ----

/// Per-tone phase assignment.
///
/// Equal phases stack constructively at t = 0 and give a peak-to-average
/// power ratio of 2K for K tones, wasting amplitude headroom. The quadratic
/// phase ramp keeps the envelope nearly flat, so it is the default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseScheme {
    Zero,
    Newman,
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusSpec {
    pub f_start: f64,
    pub f_end: f64,
    pub spacing: f64,
    pub duration: f64,
    pub sample_rate: u32,
    /// Peak amplitude as a fraction of full scale, in (0, 1].
    pub amplitude: f64,
    pub phase_scheme: PhaseScheme,
}

impl Default for StimulusSpec {
    fn default() -> Self {
        StimulusSpec {
            f_start: 14_000.0,
            f_end: 21_000.0,
            spacing: 100.0,
            duration: 1.0,
            sample_rate: 44_100,
            amplitude: 0.9,
            phase_scheme: PhaseScheme::Newman,
        }
    }
}

fn is_integral(x: f64) -> bool {
    (x - x.round()).abs() < 1e-9 * x.abs().max(1.0)
}

impl StimulusSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(msg));
        if !(self.f_start.is_finite() && self.f_end.is_finite() && self.spacing.is_finite()) {
            return fail("non-finite frequency parameters".into());
        }
        if self.f_start <= 0.0 {
            return fail(format!("f_start must be positive, got {}", self.f_start));
        }
        if self.f_start > self.f_end {
            return fail(format!(
                "f_start {} exceeds f_end {}",
                self.f_start, self.f_end
            ));
        }
        if self.spacing <= 0.0 {
            return fail(format!("spacing must be positive, got {}", self.spacing));
        }
        if !is_integral((self.f_end - self.f_start) / self.spacing) {
            return fail(format!(
                "band {}..{} is not an integer number of {} Hz steps",
                self.f_start, self.f_end, self.spacing
            ));
        }
        if !is_integral(self.f_start / self.spacing) {
            return fail(format!(
                "f_start {} is off the {} Hz comb grid",
                self.f_start, self.spacing
            ));
        }
        if !is_integral(self.sample_rate as f64 / self.spacing) {
            return fail(format!(
                "one comb period is not a whole number of samples at {} Hz / {} Hz spacing",
                self.sample_rate, self.spacing
            ));
        }
        if self.f_end >= self.sample_rate as f64 / 2.0 {
            return fail(format!(
                "f_end {} violates Nyquist for sample rate {}",
                self.f_end, self.sample_rate
            ));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return fail(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return fail(format!(
                "amplitude must lie in (0, 1], got {}",
                self.amplitude
            ));
        }
        Ok(())
    }

    pub fn tone_count(&self) -> usize {
        ((self.f_end - self.f_start) / self.spacing).round() as usize + 1
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.tone_count())
            .map(|k| self.f_start + k as f64 * self.spacing)
            .collect()
    }

    /// Samples in one full period of the comb envelope (441 by default).
    pub fn coherent_period_samples(&self) -> usize {
        (self.sample_rate as f64 / self.spacing).round() as usize
    }

    /// Canonical identifier tying features to the spec that produced them.
    pub fn id(&self) -> String {
        format!(
            "{}-{}-{}-{}",
            self.f_start, self.f_end, self.spacing, self.sample_rate
        )
    }

    pub fn phases(&self) -> Vec<f64> {
        let k = self.tone_count();
        match self.phase_scheme {
            PhaseScheme::Zero => vec![0.0; k],
            PhaseScheme::Newman => (0..k).map(|j| PI * (j * j) as f64 / k as f64).collect(),
            PhaseScheme::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..k).map(|_| rng.random::<f64>() * 2.0 * PI).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

// ---- Synthesis ----

/// Sum of equal-amplitude cosines at the spec frequencies, peak-normalized to
/// `spec.amplitude`.
pub fn synthesize(spec: &StimulusSpec) -> Result<AudioBuffer> {
    spec.validate()?;
    synth_inner(spec, None)
}

/// Same comb with one gain factor per tone; used to imprint a known response
/// curve onto the stimulus. Gains must be non-negative with at least one
/// positive entry.
pub fn synthesize_with_gains(spec: &StimulusSpec, gains: &[f64]) -> Result<AudioBuffer> {
    spec.validate()?;
    if gains.len() != spec.tone_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} gains for {} tones",
            gains.len(),
            spec.tone_count()
        )));
    }
    if gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::InvalidSpec("gains must be finite and >= 0".into()));
    }
    if gains.iter().all(|g| *g == 0.0) {
        return Err(Error::InvalidSpec("all-zero gain curve".into()));
    }
    synth_inner(spec, Some(gains))
}

fn synth_inner(spec: &StimulusSpec, gains: Option<&[f64]>) -> Result<AudioBuffer> {
    let n = (spec.duration * spec.sample_rate as f64).round() as usize;
    let freqs = spec.frequencies();
    let phases = spec.phases();
    let fs = spec.sample_rate as f64;
    let mut samples = vec![0.0f64; n];
    for (k, (f, phi)) in freqs.iter().zip(&phases).enumerate() {
        let g = gains.map_or(1.0, |g| g[k]);
        if g == 0.0 {
            continue;
        }
        let w = 2.0 * PI * f / fs;
        add_oscillator(&mut samples, g, w, *phi);
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak <= 0.0 {
        return Err(Error::InvalidSpec("synthesized silence".into()));
    }
    let scale = spec.amplitude / peak;
    for s in &mut samples {
        *s *= scale;
    }
    Ok(AudioBuffer {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Accumulate g*cos(w*t + phi) via complex rotation instead of a cos() per
/// sample; one call per tone keeps long multi-tone renders cheap. The phase
/// is re-seeded from the closed form every block, so rounding drift stays at
/// the last-bit level over arbitrarily long buffers.
pub(crate) fn add_oscillator(samples: &mut [f64], g: f64, w: f64, phi: f64) {
    const BLOCK: usize = 4096;
    let (sin_w, cos_w) = w.sin_cos();
    let n = samples.len();
    let mut t0 = 0usize;
    while t0 < n {
        let block = &mut samples[t0..n.min(t0 + BLOCK)];
        let (mut im, mut re) = (w * t0 as f64 + phi).sin_cos();
        for s in block.iter_mut() {
            *s += g * re;
            let next_re = re * cos_w - im * sin_w;
            im = re * sin_w + im * cos_w;
            re = next_re;
        }
        t0 += BLOCK;
    }
}

/// Peak-to-average power ratio (linear). 2K for K equal-amplitude tones in
/// phase; the quadratic-phase comb sits near 3.
pub fn papr(buffer: &AudioBuffer) -> Result<f64> {
    if buffer.samples.is_empty() {
        return Err(Error::EmptyInput("empty buffer".into()));
    }
    let peak = buffer.samples.iter().fold(0.0f64, |m, s| m.max(s * s));
    let mean = buffer.samples.iter().map(|s| s * s).sum::<f64>() / buffer.samples.len() as f64;
    if mean == 0.0 {
        return Err(Error::EmptyInput("all-zero buffer".into()));
    }
    Ok(peak / mean)
}

// ---- WAV I/O (mono PCM16 little-endian) ----

pub fn write_wav(buffer: &AudioBuffer, path: &Path) -> Result<()> {
    let n = buffer.samples.len();
    let data_len = (n * 2) as u32;
    let mut bytes = Vec::with_capacity(44 + n * 2);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
    bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
    bytes.extend_from_slice(&buffer.sample_rate.to_le_bytes());
    bytes.extend_from_slice(&(buffer.sample_rate * 2).to_le_bytes());
    bytes.extend_from_slice(&2u16.to_le_bytes()); // block align
    bytes.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    for s in &buffer.samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        bytes.extend_from_slice(&q.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let bytes = fs::read(path)?;
    parse_wav(&bytes)
}

fn parse_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    let bad = |msg: &str| Err(Error::AudioFormat(msg.into()));
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return bad("not a RIFF/WAVE file");
    }
    let mut sample_rate = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = pos + 8 + size;
        if body_end > bytes.len() {
            return bad("truncated chunk");
        }
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return bad("fmt chunk too short");
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if format != 1 {
                    return bad("only uncompressed PCM is supported");
                }
                if channels != 1 {
                    return bad("only mono is supported");
                }
                if bits != 16 {
                    return bad("only 16-bit samples are supported");
                }
                sample_rate = Some(rate);
            }
            b"data" => data = Some(body),
            _ => {} // skip LIST, fact, etc.
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        pos = body_end + (size & 1);
    }
    let (Some(sample_rate), Some(data)) = (sample_rate, data) else {
        return bad("missing fmt or data chunk");
    };
    if data.len() % 2 != 0 {
        return bad("data chunk has odd byte length");
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| (i16::from_le_bytes([c[0], c[1]]) as f64 / 32767.0).max(-1.0))
        .collect();
    Ok(AudioBuffer {
        samples,
        sample_rate,
    })
}
