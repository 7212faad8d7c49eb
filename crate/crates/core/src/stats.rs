//! Lognormal error model of the similarity populations.
//!
//! Both similarity populations (same-device pairs, cross-device pairs) are
//! modeled as `1 - similarity ~ Lognormal(mu, sigma)`. Everything downstream
//! follows from the two fitted parameter pairs: false-positive and
//! false-negative rates at a threshold, the optimal threshold, k-sample
//! error, identity entropy, and the minimum in-band SNR needed to hold a
//! target threshold.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const SQRT_2PI: f64 = 2.5066282746310002;

// ---- Normal / lognormal primitives ----

/// Standard normal CDF via erfc; keeps relative accuracy deep in the lower
/// tail (the rates of interest live near z = -4).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

/// MLE lognormal fit of a positive sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalFit {
    pub mu: f64,
    pub sigma: f64,
    /// Number of samples behind the fit; 0 for externally supplied parameters.
    pub n: usize,
}

impl LognormalFit {
    pub fn from_params(mu: f64, sigma: f64) -> Self {
        LognormalFit { mu, sigma, n: 0 }
    }

    /// All-equal inputs collapse to sigma = 0; rates are undefined there.
    pub fn is_degenerate(&self) -> bool {
        self.sigma == 0.0
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        normal_cdf((x.ln() - self.mu) / self.sigma)
    }
}

/// Closed-form MLE on logs: mu = mean(ln x), sigma = population std(ln x).
pub fn fit_lognormal(samples: &[f64]) -> Result<LognormalFit> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to fit".into()));
    }
    if let Some(bad) = samples.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidSamples(format!(
            "lognormal fit requires positive samples, got {bad}"
        )));
    }
    let n = samples.len() as f64;
    let mu = samples.iter().map(|x| x.ln()).sum::<f64>() / n;
    let var = samples.iter().map(|x| (x.ln() - mu).powi(2)).sum::<f64>() / n;
    Ok(LognormalFit {
        mu,
        sigma: var.sqrt(),
        n: samples.len(),
    })
}

/// Fit `1 - similarity`; similarities >= 1 have no positive residual and are
/// excluded. Returns the fit and the excluded count.
pub fn fit_one_minus_similarities(sims: &[f64]) -> Result<(LognormalFit, usize)> {
    let residuals: Vec<f64> = sims.iter().filter(|s| **s < 1.0).map(|s| 1.0 - s).collect();
    let excluded = sims.len() - residuals.len();
    let fit = fit_lognormal(&residuals)?;
    Ok((fit, excluded))
}

/// One-sample Kolmogorov-Smirnov statistic against the fitted lognormal.
pub fn ks_statistic(samples: &[f64], fit: &LognormalFit) -> f64 {
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = fit.cdf(*x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max((f - (i as f64 + 1.0) / n).abs());
    }
    d
}

/// Two-sample Kolmogorov-Smirnov statistic (max ECDF gap).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xa: Vec<f64> = a.to_vec();
    let mut xb: Vec<f64> = b.to_vec();
    xa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    xb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        // Step past every copy of the smaller value on both sides before
        // reading the gap, so ties never register a spurious jump.
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] == x {
            i += 1;
        }
        while j < xb.len() && xb[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Log-likelihood of the samples under the fitted lognormal; degenerate fits
/// give -inf.
pub fn log_likelihood(samples: &[f64], fit: &LognormalFit) -> f64 {
    if fit.is_degenerate() {
        return f64::NEG_INFINITY;
    }
    samples
        .iter()
        .map(|x| {
            let z = (x.ln() - fit.mu) / fit.sigma;
            -(x * fit.sigma * SQRT_2PI).ln() - 0.5 * z * z
        })
        .sum()
}

// ---- Error model ----

/// The pair of population fits everything else is derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub fit_self: LognormalFit,
    pub fit_corr: LognormalFit,
}

impl ErrorModel {
    pub fn new(fit_self: LognormalFit, fit_corr: LognormalFit) -> Self {
        ErrorModel { fit_self, fit_corr }
    }

    /// P(cross-device similarity >= alpha).
    pub fn false_positive_rate(&self, alpha: f64) -> f64 {
        if alpha >= 1.0 {
            return 0.0;
        }
        normal_cdf(((1.0 - alpha).ln() - self.fit_corr.mu) / self.fit_corr.sigma)
    }

    /// P(same-device similarity < alpha).
    pub fn false_negative_rate(&self, alpha: f64) -> f64 {
        if alpha >= 1.0 {
            return 1.0;
        }
        1.0 - normal_cdf(((1.0 - alpha).ln() - self.fit_self.mu) / self.fit_self.sigma)
    }

    pub fn total_error(&self, alpha: f64) -> f64 {
        self.false_positive_rate(alpha) + self.false_negative_rate(alpha)
    }

    /// Error when k independent samples must unanimously agree:
    /// FP^k + FN^k.
    pub fn multi_sample_error(&self, alpha: f64, k: u32) -> f64 {
        self.false_positive_rate(alpha).powi(k as i32)
            + self.false_negative_rate(alpha).powi(k as i32)
    }

    pub fn optimal_threshold(&self) -> (f64, f64) {
        self.optimal_threshold_multisample(1)
    }

    /// Grid 0.50..0.95 step 1e-3, then golden-section refinement to 1e-4 in
    /// alpha. Returns (alpha*, error at alpha*).
    pub fn optimal_threshold_multisample(&self, k: u32) -> (f64, f64) {
        let f = |a: f64| self.multi_sample_error(a, k);
        let mut best_a = 0.50;
        let mut best_v = f(best_a);
        for i in 1..=450 {
            let a = 0.50 + i as f64 * 1e-3;
            let v = f(a);
            if v < best_v {
                best_v = v;
                best_a = a;
            }
        }
        let mut lo = (best_a - 1e-3).max(0.50);
        let mut hi = (best_a + 1e-3).min(0.95);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = hi - g * (hi - lo);
        let mut d = lo + g * (hi - lo);
        let (mut fc, mut fd) = (f(c), f(d));
        while hi - lo > 1e-4 {
            if fc < fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - g * (hi - lo);
                fc = f(c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + g * (hi - lo);
                fd = f(d);
            }
        }
        let a = 0.5 * (lo + hi);
        (a, f(a))
    }

    /// The second false-positive mode: a cross-device candidate beating the
    /// genuine device, integral of f_corr(x) * F_self(x) over x in [alpha, 1)
    /// in the similarity domain. Orders of magnitude below
    /// `false_positive_rate`; computed to justify neglecting it.
    pub fn neglected_fp_term(&self, alpha: f64) -> f64 {
        if alpha >= 1.0 {
            return 0.0;
        }
        // Substitute u = ln(1 - x): the cross density becomes a plain normal
        // in u and the integrand is smooth everywhere.
        let (mu_c, sg_c) = (self.fit_corr.mu, self.fit_corr.sigma);
        let (mu_s, sg_s) = (self.fit_self.mu, self.fit_self.sigma);
        let hi = (1.0 - alpha).ln();
        let lo = mu_c - 12.0 * sg_c;
        if hi <= lo {
            return 0.0;
        }
        let g = |u: f64| {
            normal_pdf((u - mu_c) / sg_c) / sg_c * (1.0 - normal_cdf((u - mu_s) / sg_s))
        };
        // Simpson's rule, 2000 intervals.
        let n = 2000usize;
        let h = (hi - lo) / n as f64;
        let mut acc = g(lo) + g(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * g(lo + i as f64 * h);
        }
        acc * h / 3.0
    }
}

/// Identity entropy of an error rate: -log2(error_rate).
pub fn entropy_bits(error_rate: f64) -> f64 {
    -error_rate.log2()
}

// ---- SNR requirement ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrRequirement {
    pub linear: f64,
    pub db: f64,
}

/// Minimum in-band SNR for two captures of the same response to stay at
/// similarity >= alpha in the worst case (noise anti-aligned vs aligned).
pub fn snr_requirement(alpha: f64) -> Result<SnrRequirement> {
    let a = alpha;
    let num = 1.0 + 4.0 * a + 2.0 * a * a - 4.0 * a * a * a + a.powi(4);
    let den = 3.0 - 4.0 * a - 2.0 * a * a + 4.0 * a * a * a - a.powi(4);
    if den <= 0.0 {
        return Err(Error::Infeasible(format!(
            "no finite SNR holds threshold {a}"
        )));
    }
    let linear = num / den;
    Ok(SnrRequirement {
        linear,
        db: 10.0 * linear.log10(),
    })
}

/// Similarity of a unit response to the same response plus orthogonal noise
/// at the given SNR: 1 - sqrt(2 - 2*sqrt(snr/(snr+1))). Inverse of
/// `snr_requirement` (algebraic round trip).
pub fn similarity_at_snr(snr_linear: f64) -> f64 {
    1.0 - (2.0 - 2.0 * (snr_linear / (snr_linear + 1.0)).sqrt()).sqrt()
}

// ---- Scale convergence ----

/// Refit the cross-device population on the sub-fleet induced by the first m
/// devices of a seeded shuffle, for each m in `sizes`. Nested prefixes, so
/// the sequence shows how the parameters settle as devices accumulate.
pub fn scale_convergence(
    pair_sims: &[((usize, usize), Vec<f64>)],
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<(usize, LognormalFit)>> {
    if pair_sims.is_empty() {
        return Err(Error::EmptyInput("no cross-device pairs".into()));
    }
    let device_count = pair_sims
        .iter()
        .map(|((a, b), _)| (*a).max(*b) + 1)
        .max()
        .unwrap();
    let mut order: Vec<usize> = (0..device_count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut rows = Vec::with_capacity(sizes.len());
    for &m in sizes {
        if m < 2 || m > device_count {
            return Err(Error::InvalidSamples(format!(
                "subset size {m} outside 2..={device_count}"
            )));
        }
        let mut selected = vec![false; device_count];
        for &d in &order[..m] {
            selected[d] = true;
        }
        let sims: Vec<f64> = pair_sims
            .iter()
            .filter(|((a, b), _)| selected[*a] && selected[*b])
            .flat_map(|(_, s)| s.iter().copied())
            .collect();
        let (fit, _) = fit_one_minus_similarities(&sims)?;
        rows.push((m, fit));
    }
    Ok(rows)
}
