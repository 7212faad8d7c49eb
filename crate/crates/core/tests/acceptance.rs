//! Acceptance gate: ten go/no-go checks, one test per criterion, tolerances
//! fixed here. Each prints a single PASS line (visible with --nocapture);
//! the per-test ok/FAILED line is the machine-readable verdict.

use std::sync::OnceLock;
use std::time::Instant;

use speakerprint_core::features::{self, FeatureVector};
use speakerprint_core::registry::{lsh, MatchOutcome, Registry};
use speakerprint_core::simbench::{
    generate_fleet, run_experiment, simulate_measurement, simulate_measurement_in_mode,
    ExperimentConfig, ExperimentReport, FleetCalibration, MeasurementMode, NoiseProfile,
    SpeakerModel,
};
use speakerprint_core::stats::{
    entropy_bits, fit_lognormal, fit_one_minus_similarities, similarity_at_snr, snr_requirement,
    ErrorModel, LognormalFit,
};
use speakerprint_core::stimulus::{self, StimulusSpec};

// Published population parameters the analytic checks run against.
const MU_SELF: f64 = -3.17698;
const SIGMA_SELF: f64 = 0.546804;
const MU_CORR: f64 = -0.457726;
const SIGMA_CORR: f64 = 0.178714;

fn reference_model() -> ErrorModel {
    ErrorModel::new(
        LognormalFit::from_params(MU_SELF, SIGMA_SELF),
        LognormalFit::from_params(MU_CORR, SIGMA_CORR),
    )
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target.abs()
}

/// Calibrated clean-room experiment shared by the fidelity and agreement
/// criteria. Criterion 5 times its own fresh runs.
fn silent_experiment() -> &'static (Vec<SpeakerModel>, ExperimentReport) {
    static CELL: OnceLock<(Vec<SpeakerModel>, ExperimentReport)> = OnceLock::new();
    CELL.get_or_init(|| {
        let cal = FleetCalibration::default();
        let spec = StimulusSpec::default();
        let fleet = generate_fleet(50, &cal, 1000).unwrap();
        let cfg = ExperimentConfig {
            samples_per_device: 60,
            seed: 2000,
            ..ExperimentConfig::default()
        };
        let report = run_experiment(&fleet, &cal, &spec, &cfg).unwrap();
        (fleet, report)
    })
}

#[test]
fn criterion_01_analytic_error_reproduction() {
    let t = Instant::now();
    let model = reference_model();
    let total = model.total_error(0.69);
    let (alpha_star, _) = model.optimal_threshold();
    let elapsed = t.elapsed();

    assert!(within(total, 1.55e-4, 0.05), "total_error(0.69) = {total:.6e}");
    assert!(
        (0.67..=0.71).contains(&alpha_star),
        "optimal threshold = {alpha_star}"
    );
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 01 analytic error reproduction: PASS (total(0.69)={total:.4e}, alpha*={alpha_star:.4}, {elapsed:?})"
    );
}

#[test]
fn criterion_02_multi_sample_error() {
    let model = reference_model();
    let two = model.multi_sample_error(0.68, 2);
    assert!(within(two, 1.41e-8, 0.10), "k=2 error = {two:.6e}");
    let (_, three) = model.optimal_threshold_multisample(3);
    assert!(
        (1.23e-13..=1.23e-11).contains(&three),
        "k=3 optimized error = {three:.6e}"
    );
    println!("criterion 02 multi-sample error: PASS (k2={two:.4e}, k3*={three:.4e})");
}

#[test]
fn criterion_03_entropy_bits() {
    let model = reference_model();
    let e1 = entropy_bits(model.total_error(0.69));
    let e2 = entropy_bits(model.multi_sample_error(0.68, 2));
    let (_, err3) = model.optimal_threshold_multisample(3);
    let e3 = entropy_bits(err3);
    assert!((e1 - 12.6).abs() <= 0.2, "single-sample entropy = {e1:.3}");
    assert!((e2 - 26.0).abs() <= 0.2, "two-sample entropy = {e2:.3}");
    assert!((e3 - 39.6).abs() <= 0.2, "three-sample entropy = {e3:.3}");
    println!("criterion 03 entropy: PASS ({e1:.2} / {e2:.2} / {e3:.2} bits)");
}

#[test]
fn criterion_04_snr_requirement() {
    let req = snr_requirement(0.7).unwrap();
    assert!(
        (10.0..=10.5).contains(&req.db),
        "snr_requirement(0.7) = {} dB",
        req.db
    );
    // Algebraic round trip across the working threshold range.
    let mut alpha = 0.0;
    while alpha < 0.95 {
        let r = snr_requirement(alpha).unwrap();
        let back = similarity_at_snr(r.linear);
        assert!((back - alpha).abs() < 1e-9, "round trip at {alpha}: {back}");
        alpha += 0.01;
    }
    println!("criterion 04 snr requirement: PASS ({:.3} dB, round trip 1e-9)", req.db);
}

#[test]
fn criterion_05_zero_error_experiment() {
    let t = Instant::now();
    let cal = FleetCalibration::default();
    let fleet = generate_fleet(50, &cal, 1000).unwrap();

    let silent_cfg = ExperimentConfig {
        samples_per_device: 60,
        seed: 2000,
        ..ExperimentConfig::default()
    };
    let silent = run_experiment(&fleet, &cal, &StimulusSpec::default(), &silent_cfg).unwrap();

    // Rendered route with out-of-band clutter; a short stimulus keeps the
    // 3000 renders cheap without touching the margins.
    let office_cfg = ExperimentConfig {
        samples_per_device: 60,
        noise: NoiseProfile::office(),
        mode: MeasurementMode::FullPath,
        seed: 2000,
        ..ExperimentConfig::default()
    };
    let short = StimulusSpec { duration: 0.2, ..StimulusSpec::default() };
    let office = run_experiment(&fleet, &cal, &short, &office_cfg).unwrap();
    let elapsed = t.elapsed();

    for (label, report) in [("silent", &silent), ("office", &office)] {
        assert_eq!(report.fp_count, 0, "{label}: false positives");
        assert_eq!(report.fn_count, 0, "{label}: false negatives");
        assert_eq!(report.query_count, 50 * 59, "{label}: query count");
        assert_eq!(report.self_pair_count(), 88_500, "{label}: self pairs");
        assert_eq!(report.cross_pair_count(), 4_410_000, "{label}: cross pairs");
    }
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    println!("criterion 05 zero-error experiment: PASS (silent+office, 0 fp / 0 fn, {elapsed:?})");
}

#[test]
fn criterion_06_calibration_fidelity() {
    let (_, report) = silent_experiment();
    let (fit_self, _) = fit_one_minus_similarities(&report.self_similarities).unwrap();
    let cross: Vec<f64> = report.cross_similarities().collect();
    let (fit_corr, _) = fit_one_minus_similarities(&cross).unwrap();

    for (name, got, want) in [
        ("mu_self", fit_self.mu, MU_SELF),
        ("sigma_self", fit_self.sigma, SIGMA_SELF),
        ("mu_corr", fit_corr.mu, MU_CORR),
        ("sigma_corr", fit_corr.sigma, SIGMA_CORR),
    ] {
        assert!(
            within(got, want, 0.15),
            "{name}: fitted {got:.4} vs target {want:.4}"
        );
    }
    println!(
        "criterion 06 calibration fidelity: PASS (self ({:.3}, {:.3}), cross ({:.3}, {:.3}))",
        fit_self.mu, fit_self.sigma, fit_corr.mu, fit_corr.sigma
    );
}

#[test]
fn criterion_07_dsp_oracle() {
    let spec = StimulusSpec::default();
    let k = spec.tone_count();
    let gains: Vec<f64> = (0..k)
        .map(|i| (0.25 * (2.0 * std::f64::consts::PI * 4.0 * i as f64 / k as f64).sin()).exp())
        .collect();
    let audio = stimulus::synthesize_with_gains(&spec, &gains).unwrap();
    let feature = features::extract(&audio, &spec).unwrap();
    let expected = FeatureVector::from_magnitudes(gains, spec.id()).unwrap();
    let dot: f64 = feature.values.iter().zip(&expected.values).map(|(a, b)| a * b).sum();
    assert!(dot >= 0.9999, "cosine against known curve = {dot}");

    let flat = features::extract(&stimulus::synthesize(&spec).unwrap(), &spec).unwrap();
    let uniform = (k as f64).sqrt().recip();
    for v in &flat.values {
        assert!((v - uniform).abs() < 1e-6, "flat chain bin {v} vs {uniform}");
    }
    println!("criterion 07 dsp oracle: PASS (cosine={dot:.6}, flat within 1e-6)");
}

#[test]
fn criterion_08_lsh_agreement() {
    let cal = FleetCalibration::default();
    let spec = StimulusSpec::default();
    let (fleet, _) = silent_experiment();

    let mut reg = Registry::new();
    for (k, model) in fleet.iter().enumerate() {
        let f = simulate_measurement(model, &cal, &NoiseProfile::silent(), &spec, 40_000 + k as u64)
            .unwrap();
        reg.enroll(f, &model.device_label).unwrap();
    }
    let index = lsh::build(&reg, lsh::DEFAULT_PLANES, lsh::DEFAULT_TABLES, 99).unwrap();

    let mut agree = 0usize;
    let total = 500usize;
    for q in 0..total {
        let model = &fleet[q % fleet.len()];
        let probe = simulate_measurement(
            model,
            &cal,
            &NoiseProfile::silent(),
            &spec,
            50_000 + q as u64,
        )
        .unwrap();
        let exact = reg.identify(&probe, 0.7).unwrap();
        let approx = index.query(&probe, 0.7).unwrap();
        if exact.outcome == approx.outcome && exact.device_id == approx.device_id {
            agree += 1;
        }
        // Brute force stays the audited oracle for every query.
        let (nearest, sim) = reg.nearest_bruteforce(&probe).unwrap();
        assert_eq!(exact.best_similarity, sim);
        if exact.outcome == MatchOutcome::Matched {
            assert_eq!(exact.device_id.as_deref(), Some(nearest));
        }
    }
    assert!(
        agree * 100 >= total * 99,
        "lsh agreed on {agree}/{total} queries"
    );
    println!("criterion 08 lsh agreement: PASS ({agree}/{total})");
}

#[test]
fn criterion_09_fit_round_trip() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(424242);
    let (mu, sigma) = (-1.0f64, 0.2f64);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            (mu + sigma * z).exp()
        })
        .collect();
    let fit = fit_lognormal(&draws).unwrap();
    assert!((fit.mu - mu).abs() <= 0.01, "recovered mu = {}", fit.mu);
    assert!((fit.sigma - sigma).abs() <= 0.01, "recovered sigma = {}", fit.sigma);
    println!(
        "criterion 09 fit round trip: PASS (mu={:.4}, sigma={:.4})",
        fit.mu, fit.sigma
    );
}

#[test]
fn criterion_10_noise_behavior() {
    let cal = FleetCalibration::default();
    let spec = StimulusSpec::default();
    let fleet = generate_fleet(10, &cal, 555).unwrap();

    // Out-of-band office clutter leaves the rendered feature in place.
    let model = &fleet[0];
    let silent = simulate_measurement_in_mode(
        model,
        &cal,
        &NoiseProfile::silent(),
        &spec,
        77,
        MeasurementMode::FullPath,
    )
    .unwrap();
    let office = simulate_measurement_in_mode(
        model,
        &cal,
        &NoiseProfile::office(),
        &spec,
        77,
        MeasurementMode::FullPath,
    )
    .unwrap();
    let drift = features::distance(&silent, &office).unwrap();
    assert!(drift <= 1e-3, "office noise moved the feature by {drift:.3e}");

    // In-band metro noise at 0 dB defeats identification.
    let mut reg = Registry::new();
    for (k, m) in fleet.iter().enumerate() {
        let f = simulate_measurement(m, &cal, &NoiseProfile::silent(), &spec, 600 + k as u64)
            .unwrap();
        reg.enroll(f, &m.device_label).unwrap();
    }
    assert!(NoiseProfile::metro().in_band_snr_db <= 0.0);
    let mut failures = 0usize;
    let total = 30usize;
    for q in 0..total {
        let m = &fleet[q % fleet.len()];
        let probe =
            simulate_measurement(m, &cal, &NoiseProfile::metro(), &spec, 700 + q as u64).unwrap();
        if reg.identify(&probe, 0.7).unwrap().outcome == MatchOutcome::NewDevice {
            failures += 1;
        }
    }
    assert_eq!(
        failures, total,
        "metro captures should all fail to identify at alpha=0.7"
    );
    println!(
        "criterion 10 noise behavior: PASS (office drift {drift:.2e}, metro {failures}/{total} rejected)"
    );
}
