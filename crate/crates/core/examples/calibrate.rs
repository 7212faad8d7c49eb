//! Dev harness for tuning `FleetCalibration::default`. Runs the clean-room
//! experiment across seeds, fits both similarity populations, and prints the
//! fitted parameters next to the targets plus the error-margin extremes.
//!
//!   cargo run -p speakerprint-core --example calibrate -- \
//!       [seeds] [deviation_sigma noise_sigma device_spread measurement_spread
//!        dev_clip_lo dev_clip_hi meas_clip_lo meas_clip_hi]

use speakerprint_core::simbench::{
    generate_fleet, run_experiment, ExperimentConfig, FleetCalibration, MeasurementMode,
    NoiseProfile,
};
use speakerprint_core::stats::fit_one_minus_similarities;
use speakerprint_core::stimulus::StimulusSpec;

const TARGETS: [(&str, f64); 4] = [
    ("mu_self", -3.17698),
    ("sigma_self", 0.546804),
    ("mu_corr", -0.457726),
    ("sigma_corr", 0.178714),
];

fn main() {
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("numeric args"))
        .collect();
    let seeds = *args.first().unwrap_or(&5.0) as u64;
    let mut cal = FleetCalibration::default();
    if args.len() > 1 {
        cal.deviation_sigma = args[1];
        cal.noise_sigma = args[2];
        cal.device_spread = args[3];
        cal.measurement_spread = args[4];
        cal.device_clip = (args[5], args[6]);
        cal.measurement_clip = (args[7], args[8]);
    }
    println!(
        "cal: dev_sigma={} noise_sigma={} dev_spread={} meas_spread={} dev_clip=({}, {}) meas_clip=({}, {})",
        cal.deviation_sigma,
        cal.noise_sigma,
        cal.device_spread,
        cal.measurement_spread,
        cal.device_clip.0,
        cal.device_clip.1,
        cal.measurement_clip.0,
        cal.measurement_clip.1
    );

    let spec = StimulusSpec::default();
    let mut worst = [0.0f64; 4];
    let mut total_fp = 0;
    let mut total_fn = 0;
    let (mut min_cross_d, mut max_self_d) = (f64::INFINITY, 0.0f64);
    for seed in 0..seeds {
        let fleet = generate_fleet(50, &cal, 1000 + seed).unwrap();
        let cfg = ExperimentConfig {
            samples_per_device: 60,
            enroll_per_device: 1,
            alpha: 0.7,
            noise: NoiseProfile::silent(),
            mode: MeasurementMode::Spectral,
            seed: 2000 + seed,
            alpha_grid: (0.5, 0.95, 0.05),
        };
        let report = run_experiment(&fleet, &cal, &spec, &cfg).unwrap();
        let (fit_self, exc_s) = fit_one_minus_similarities(&report.self_similarities).unwrap();
        let cross: Vec<f64> = report.cross_similarities().collect();
        let (fit_corr, exc_c) = fit_one_minus_similarities(&cross).unwrap();

        let got = [fit_self.mu, fit_self.sigma, fit_corr.mu, fit_corr.sigma];
        print!("seed {seed}: ");
        for (i, ((name, target), g)) in TARGETS.iter().zip(&got).enumerate() {
            let err = (g - target) / target.abs() * 100.0;
            worst[i] = worst[i].max(err.abs());
            print!("{name}={g:.4} ({err:+.1}%)  ");
        }
        let self_max = report
            .self_similarities
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let cross_max = report.cross_similarities().fold(f64::NEG_INFINITY, f64::max);
        let (smd, mcd) = (1.0 - self_max, 1.0 - cross_max);
        max_self_d = max_self_d.max(smd);
        min_cross_d = min_cross_d.min(mcd);
        total_fp += report.fp_count;
        total_fn += report.fn_count;
        println!(
            "\n         fp={} fn={} max_self_d={smd:.3} min_cross_d={mcd:.3} excluded={exc_s}/{exc_c}",
            report.fp_count, report.fn_count
        );
    }
    println!("---");
    for ((name, _), w) in TARGETS.iter().zip(&worst) {
        println!("worst |{name}| error: {w:.1}%");
    }
    println!(
        "total fp={total_fp} fn={total_fn}  max_self_d={max_self_d:.3} min_cross_d={min_cross_d:.3}"
    );
}
