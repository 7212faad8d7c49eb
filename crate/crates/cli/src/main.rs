//! Command-line frontend for the speakerprint pipeline.
//!
//! One executable, nine subcommands: `synth`, `extract`, `enroll`, `match`,
//! `simulate`, `fit`, `analyze`, `snr`, `stability`. Exit code 0 on success,
//! 1 on a domain error (a JSON error object goes to stderr), 2 on a usage
//! error. Numeric reports are CSV with a one-line header; decisions and fits
//! are single JSON objects. Every randomized run records its seed in the
//! output metadata, and rerunning a command with the same flags and seed
//! reproduces its output files byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use speakerprint_core::stimulus::{self, PhaseScheme, StimulusSpec};
use speakerprint_core::{features, mix_seed, registry, simbench, stats, Error, Result};

use registry::{EnrollmentRecord, Registry};
use simbench::{FleetCalibration, MeasurementMode, NoiseProfile};
use stats::{ErrorModel, LognormalFit};

#[derive(Parser)]
#[command(name = "speakerprint", version, about = "Loudspeaker fingerprinting toolkit")]
struct Cli {
    /// Emit machine-readable JSON summaries instead of prose.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PhaseArg {
    Zero,
    Newman,
    Random,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum NoiseArg {
    Silent,
    White,
    Office,
    Street,
    Metro,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    /// Per-tone response synthesis, no audio rendering.
    Spectral,
    /// Render audio, mix noise, extract from samples.
    FullPath,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ColumnArg {
    #[value(name = "self")]
    SelfSim,
    Cross,
}

/// Stimulus flags shared by `synth` and `extract`.
#[derive(Args, Debug)]
struct SpecArgs {
    /// First tone frequency in Hz.
    #[arg(long, default_value_t = 14_000.0)]
    start: f64,
    /// Last tone frequency in Hz.
    #[arg(long, default_value_t = 21_000.0)]
    end: f64,
    /// Tone spacing in Hz.
    #[arg(long, default_value_t = 100.0)]
    step: f64,
    /// Stimulus length in seconds.
    #[arg(long, default_value_t = 1.0)]
    dur: f64,
    /// Sample rate in Hz.
    #[arg(long, default_value_t = 44_100)]
    rate: u32,
    /// Peak amplitude as a fraction of full scale.
    #[arg(long, default_value_t = 0.9)]
    amplitude: f64,
    /// Per-tone phase assignment.
    #[arg(long, value_enum, default_value_t = PhaseArg::Newman)]
    phase: PhaseArg,
}

impl SpecArgs {
    fn build(&self, seed: u64) -> StimulusSpec {
        StimulusSpec {
            f_start: self.start,
            f_end: self.end,
            spacing: self.step,
            duration: self.dur,
            sample_rate: self.rate,
            amplitude: self.amplitude,
            phase_scheme: match self.phase {
                PhaseArg::Zero => PhaseScheme::Zero,
                PhaseArg::Newman => PhaseScheme::Newman,
                PhaseArg::Random => PhaseScheme::Random { seed },
            },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the probe stimulus as a mono PCM16 WAV file.
    Synth {
        #[command(flatten)]
        spec: SpecArgs,
        /// Seed for random phases.
        #[arg(long, env = "SPEAKERPRINT_SEED", default_value_t = 1)]
        seed: u64,
        /// Output WAV path.
        #[arg(short, long)]
        out: PathBuf,
        /// Also write the stimulus description as JSON (input for `extract --spec`).
        #[arg(long)]
        spec_out: Option<PathBuf>,
    },
    /// Extract a fingerprint from a recorded WAV.
    Extract {
        /// Input WAV path.
        #[arg(short, long)]
        input: PathBuf,
        /// Stimulus description JSON; overrides the inline stimulus flags.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        spec_flags: SpecArgs,
        /// Seed for random phases (inline flags only).
        #[arg(long, env = "SPEAKERPRINT_SEED", default_value_t = 1)]
        seed: u64,
        /// Device label stored with the feature.
        #[arg(long)]
        label: Option<String>,
        /// Capture timestamp to store. Kept out of the numeric payload and
        /// never auto-filled, so reruns stay byte-identical.
        #[arg(long)]
        captured_at: Option<String>,
        /// Output features path (JSON lines).
        #[arg(short, long)]
        out: PathBuf,
        /// Append to the output file instead of overwriting it.
        #[arg(long)]
        append: bool,
    },
    /// Add features from a file to a device's enrolled profile.
    Enroll {
        /// Registry journal path (created if missing).
        #[arg(short, long)]
        registry: PathBuf,
        /// Features to enroll (JSON lines).
        #[arg(short, long)]
        input: PathBuf,
        /// Device id to enroll under.
        #[arg(long)]
        id: String,
    },
    /// Match probe features against the registry; prints a JSON decision.
    Match {
        /// Registry journal path. Missing or empty means an empty registry.
        #[arg(short, long)]
        registry: PathBuf,
        /// Probe features (JSON lines).
        #[arg(short, long)]
        input: PathBuf,
        /// Similarity threshold.
        #[arg(long, default_value_t = 0.7)]
        alpha: f64,
        /// Combine the first k probe features into one unanimous decision.
        #[arg(long, default_value_t = 1)]
        samples: usize,
        /// Use the hyperplane-hash index instead of exhaustive search.
        #[arg(long)]
        lsh: bool,
        #[arg(long, default_value_t = 12)]
        lsh_planes: usize,
        #[arg(long, default_value_t = 8)]
        lsh_tables: usize,
        /// Seed for the hash hyperplanes.
        #[arg(long, env = "SPEAKERPRINT_SEED", default_value_t = 1)]
        seed: u64,
    },
    /// Run a seeded fleet identification experiment and write a JSON report.
    Simulate {
        #[arg(long, default_value_t = 50)]
        devices: usize,
        /// Measurements per device.
        #[arg(long, default_value_t = 60)]
        samples: usize,
        /// Enrolled measurements per device; the rest become queries.
        #[arg(long, default_value_t = 1)]
        enroll: usize,
        /// Similarity threshold.
        #[arg(long, default_value_t = 0.7)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = NoiseArg::Silent)]
        noise: NoiseArg,
        /// In-band SNR in dB; only white and metro noise accept it.
        #[arg(long)]
        snr_db: Option<f64>,
        #[arg(long, value_enum, default_value_t = ModeArg::Spectral)]
        mode: ModeArg,
        /// Stimulus length in seconds (full-path mode renders real audio).
        #[arg(long, default_value_t = 1.0)]
        dur: f64,
        #[arg(long, env = "SPEAKERPRINT_SEED", default_value_t = 1)]
        seed: u64,
        /// Output report path (JSON).
        #[arg(short, long)]
        out: PathBuf,
        /// Also export similarity samples as CSV columns (self, cross).
        #[arg(long)]
        sims_csv: Option<PathBuf>,
        /// Re-fit the cross population on nested sub-fleets of these sizes.
        #[arg(long, value_delimiter = ',')]
        scale_sizes: Vec<usize>,
    },
    /// Fit a lognormal to 1 - similarity for one CSV column.
    Fit {
        /// Similarity CSV (from `simulate --sims-csv`).
        #[arg(short, long)]
        input: PathBuf,
        /// Which column to fit.
        #[arg(long, value_enum)]
        column: ColumnArg,
        /// Output fit path (JSON).
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Tabulate analytic error rates across a threshold grid as CSV.
    Analyze {
        /// Self-population fit JSON (from `fit`).
        #[arg(long)]
        fit_self: PathBuf,
        /// Cross-population fit JSON (from `fit`).
        #[arg(long)]
        fit_corr: PathBuf,
        /// Threshold grid as start:stop:step.
        #[arg(long, default_value = "0.5:0.95:0.001")]
        alpha_grid: String,
        /// Add a column with the k-sample unanimous error.
        #[arg(long)]
        multisample: Option<u32>,
        /// Output curve path (CSV).
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Minimum in-band SNR for a similarity threshold; prints JSON.
    Snr {
        #[arg(long, default_value_t = 0.7)]
        alpha: f64,
    },
    /// Similarity matrix of a simulated measurement series, as CSV.
    Stability {
        #[arg(long, default_value_t = 2)]
        devices: usize,
        /// Measurements per device.
        #[arg(long, default_value_t = 60)]
        samples: usize,
        #[arg(long, value_enum, default_value_t = NoiseArg::Silent)]
        noise: NoiseArg,
        /// In-band SNR in dB; only white and metro noise accept it.
        #[arg(long)]
        snr_db: Option<f64>,
        #[arg(long, env = "SPEAKERPRINT_SEED", default_value_t = 1)]
        seed: u64,
        /// Output matrix path (CSV).
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let obj = json!({ "error": err.to_string(), "kind": error_kind(&err) });
            eprintln!("{obj}");
            ExitCode::FAILURE
        }
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::InvalidSpec(_) => "invalid_spec",
        Error::AudioFormat(_) => "audio_format",
        Error::DimensionMismatch(_) => "dimension_mismatch",
        Error::SpecMismatch(_) => "spec_mismatch",
        Error::EmptyInput(_) => "empty_input",
        Error::InvalidSamples(_) => "invalid_samples",
        Error::Registry(_) => "registry",
        Error::Infeasible(_) => "infeasible",
        Error::Io(_) => "io",
        Error::Json(_) => "serialization",
    }
}

fn run(cli: Cli) -> Result<()> {
    let json = cli.json;
    match cli.command {
        Command::Synth { spec, seed, out, spec_out } => cmd_synth(json, spec, seed, out, spec_out),
        Command::Extract {
            input,
            spec,
            spec_flags,
            seed,
            label,
            captured_at,
            out,
            append,
        } => cmd_extract(json, input, spec, spec_flags, seed, label, captured_at, out, append),
        Command::Enroll { registry, input, id } => cmd_enroll(json, registry, input, id),
        Command::Match {
            registry,
            input,
            alpha,
            samples,
            lsh,
            lsh_planes,
            lsh_tables,
            seed,
        } => cmd_match(registry, input, alpha, samples, lsh, lsh_planes, lsh_tables, seed),
        Command::Simulate {
            devices,
            samples,
            enroll,
            alpha,
            noise,
            snr_db,
            mode,
            dur,
            seed,
            out,
            sims_csv,
            scale_sizes,
        } => cmd_simulate(
            json, devices, samples, enroll, alpha, noise, snr_db, mode, dur, seed, out, sims_csv,
            scale_sizes,
        ),
        Command::Fit { input, column, out } => cmd_fit(json, input, column, out),
        Command::Analyze { fit_self, fit_corr, alpha_grid, multisample, out } => {
            cmd_analyze(json, fit_self, fit_corr, &alpha_grid, multisample, out)
        }
        Command::Snr { alpha } => cmd_snr(alpha),
        Command::Stability { devices, samples, noise, snr_db, seed, out } => {
            cmd_stability(json, devices, samples, noise, snr_db, seed, out)
        }
    }
}

// ---- synth / extract ----

fn cmd_synth(
    json: bool,
    spec_args: SpecArgs,
    seed: u64,
    out: PathBuf,
    spec_out: Option<PathBuf>,
) -> Result<()> {
    let spec = spec_args.build(seed);
    let buffer = stimulus::synthesize(&spec)?;
    stimulus::write_wav(&buffer, &out)?;
    if let Some(path) = &spec_out {
        write_json_file(path, &spec)?;
    }
    let papr = stimulus::papr(&buffer)?;
    emit(
        json,
        json!({
            "spec_id": spec.id(),
            "tones": spec.tone_count(),
            "sample_rate": spec.sample_rate,
            "samples": buffer.samples.len(),
            "papr": papr,
            "seed": seed,
            "out": out,
        }),
        format!(
            "wrote {} ({} tones, {} samples, PAPR {:.3})",
            out.display(),
            spec.tone_count(),
            buffer.samples.len(),
            papr
        ),
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_extract(
    json: bool,
    input: PathBuf,
    spec_path: Option<PathBuf>,
    spec_flags: SpecArgs,
    seed: u64,
    label: Option<String>,
    captured_at: Option<String>,
    out: PathBuf,
    append: bool,
) -> Result<()> {
    let spec: StimulusSpec = match &spec_path {
        Some(p) => read_json_file(p)?,
        None => spec_flags.build(seed),
    };
    let audio = stimulus::read_wav(&input)?;
    let mut feature = features::extract(&audio, &spec)?;
    feature.device_label = label;
    feature.captured_at = captured_at;
    if append {
        let mut file = fs::OpenOptions::new().create(true).append(true).open(&out)?;
        writeln!(file, "{}", serde_json::to_string(&feature)?)?;
    } else {
        features::write_features_jsonl(&out, &[feature.clone()])?;
    }
    emit(
        json,
        json!({
            "spec_id": feature.spec_id,
            "device_label": feature.device_label,
            "dimension": feature.dimension(),
            "appended": append,
            "out": out,
        }),
        format!(
            "extracted {}-tone feature from {} into {}",
            feature.dimension(),
            input.display(),
            out.display()
        ),
    );
    Ok(())
}

// ---- enroll / match ----

fn load_registry_or_empty(path: &Path) -> Result<Registry> {
    if path.exists() {
        Registry::load(path)
    } else {
        Ok(Registry::new())
    }
}

fn cmd_enroll(json: bool, registry_path: PathBuf, input: PathBuf, id: String) -> Result<()> {
    let mut reg = load_registry_or_empty(&registry_path)?;
    let feats = features::read_features_jsonl(&input)?;
    if feats.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no features in {}",
            input.display()
        )));
    }
    // Validate the whole batch in memory before touching the journal.
    for f in &feats {
        reg.enroll(f.clone(), &id)?;
    }
    for feature in feats.iter().cloned() {
        registry::append_record(&registry_path, &EnrollmentRecord { device_id: id.clone(), feature })?;
    }
    emit(
        json,
        json!({
            "device_id": id,
            "enrolled": feats.len(),
            "devices": reg.len(),
            "features_total": reg.enrolled_count(),
            "registry": registry_path,
        }),
        format!(
            "enrolled {} feature(s) under {id}; registry now holds {} device(s)",
            feats.len(),
            reg.len()
        ),
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_match(
    registry_path: PathBuf,
    input: PathBuf,
    alpha: f64,
    samples: usize,
    lsh: bool,
    lsh_planes: usize,
    lsh_tables: usize,
    seed: u64,
) -> Result<()> {
    let reg = load_registry_or_empty(&registry_path)?;
    let feats = features::read_features_jsonl(&input)?;
    if feats.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no probe features in {}",
            input.display()
        )));
    }
    if samples == 0 || samples > feats.len() {
        return Err(Error::InvalidSamples(format!(
            "--samples {samples} outside 1..={}",
            feats.len()
        )));
    }
    let decision = if lsh {
        if samples != 1 {
            return Err(Error::InvalidSamples(
                "--lsh answers single-sample queries; drop --samples".into(),
            ));
        }
        if reg.is_empty() {
            reg.identify(&feats[0], alpha)?
        } else {
            registry::lsh::build(&reg, lsh_planes, lsh_tables, seed)?.query(&feats[0], alpha)?
        }
    } else if samples == 1 {
        reg.identify(&feats[0], alpha)?
    } else {
        reg.identify_multisample(&feats[..samples], alpha)?
    };
    // The decision is the output contract: one JSON object on stdout.
    println!("{}", serde_json::to_string(&decision)?);
    Ok(())
}

// ---- simulate ----

#[derive(Serialize)]
struct FitBlock {
    mu: f64,
    sigma: f64,
    n: usize,
    excluded: usize,
}

#[derive(Serialize)]
struct ScaleRow {
    devices: usize,
    mu: f64,
    sigma: f64,
}

#[derive(Serialize)]
struct SimulateReport {
    devices: usize,
    samples_per_device: usize,
    enroll_per_device: usize,
    alpha: f64,
    noise: NoiseProfile,
    mode: MeasurementMode,
    stimulus_seconds: f64,
    seed: u64,
    query_count: u64,
    false_positives: u64,
    false_negatives: u64,
    self_pairs: usize,
    cross_pairs: usize,
    fit_self: FitBlock,
    fit_cross: FitBlock,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    scale: Vec<ScaleRow>,
    error_table: Vec<simbench::AlphaErrorRow>,
}

fn noise_profile(kind: NoiseArg, snr_db: Option<f64>) -> Result<NoiseProfile> {
    match kind {
        NoiseArg::Silent | NoiseArg::Office | NoiseArg::Street => {
            if snr_db.is_some() {
                return Err(Error::InvalidSamples(
                    "--snr-db only applies to white or metro noise".into(),
                ));
            }
            Ok(match kind {
                NoiseArg::Silent => NoiseProfile::silent(),
                NoiseArg::Office => NoiseProfile::office(),
                _ => NoiseProfile::street(),
            })
        }
        NoiseArg::White => Ok(NoiseProfile::white(snr_db.unwrap_or(10.0))),
        NoiseArg::Metro => {
            let mut p = NoiseProfile::metro();
            if let Some(db) = snr_db {
                p.in_band_snr_db = db;
            }
            Ok(p)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    json: bool,
    devices: usize,
    samples: usize,
    enroll: usize,
    alpha: f64,
    noise: NoiseArg,
    snr_db: Option<f64>,
    mode: ModeArg,
    dur: f64,
    seed: u64,
    out: PathBuf,
    sims_csv: Option<PathBuf>,
    scale_sizes: Vec<usize>,
) -> Result<()> {
    let noise = noise_profile(noise, snr_db)?;
    let mode = match mode {
        ModeArg::Spectral => MeasurementMode::Spectral,
        ModeArg::FullPath => MeasurementMode::FullPath,
    };
    let spec = StimulusSpec { duration: dur, ..StimulusSpec::default() };
    let cal = FleetCalibration::default();
    let fleet = simbench::generate_fleet(devices, &cal, seed)?;
    let cfg = simbench::ExperimentConfig {
        samples_per_device: samples,
        enroll_per_device: enroll,
        alpha,
        noise,
        mode,
        seed,
        ..simbench::ExperimentConfig::default()
    };
    let report = simbench::run_experiment(&fleet, &cal, &spec, &cfg)?;

    let (self_fit, self_excl) = stats::fit_one_minus_similarities(&report.self_similarities)?;
    let cross: Vec<f64> = report.cross_similarities().collect();
    let (cross_fit, cross_excl) = stats::fit_one_minus_similarities(&cross)?;
    let scale = if scale_sizes.is_empty() {
        Vec::new()
    } else {
        stats::scale_convergence(&report.cross_blocks, &scale_sizes, seed)?
            .into_iter()
            .map(|(m, f)| ScaleRow { devices: m, mu: f.mu, sigma: f.sigma })
            .collect()
    };
    if let Some(path) = &sims_csv {
        write_sims_csv(path, &report.self_similarities, &cross)?;
    }

    let file = SimulateReport {
        devices,
        samples_per_device: samples,
        enroll_per_device: enroll,
        alpha,
        noise,
        mode,
        stimulus_seconds: dur,
        seed,
        query_count: report.query_count,
        false_positives: report.fp_count,
        false_negatives: report.fn_count,
        self_pairs: report.self_pair_count(),
        cross_pairs: report.cross_pair_count(),
        fit_self: FitBlock {
            mu: self_fit.mu,
            sigma: self_fit.sigma,
            n: self_fit.n,
            excluded: self_excl,
        },
        fit_cross: FitBlock {
            mu: cross_fit.mu,
            sigma: cross_fit.sigma,
            n: cross_fit.n,
            excluded: cross_excl,
        },
        scale,
        error_table: report.error_table.clone(),
    };
    write_json_file(&out, &file)?;
    emit(
        json,
        json!({
            "out": out,
            "seed": seed,
            "query_count": report.query_count,
            "false_positives": report.fp_count,
            "false_negatives": report.fn_count,
            "self_pairs": report.self_pair_count(),
            "cross_pairs": report.cross_pair_count(),
        }),
        format!(
            "{} devices x {} samples (seed {seed}): {} queries, {} fp, {} fn; report in {}",
            devices,
            samples,
            report.query_count,
            report.fp_count,
            report.fn_count,
            out.display()
        ),
    );
    Ok(())
}

/// Two ragged columns; rows run until the longer column is exhausted.
fn write_sims_csv(path: &Path, self_sims: &[f64], cross_sims: &[f64]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "self,cross")?;
    for i in 0..self_sims.len().max(cross_sims.len()) {
        match (self_sims.get(i), cross_sims.get(i)) {
            (Some(s), Some(c)) => writeln!(w, "{s},{c}")?,
            (Some(s), None) => writeln!(w, "{s},")?,
            (None, Some(c)) => writeln!(w, ",{c}")?,
            (None, None) => unreachable!(),
        }
    }
    w.flush()?;
    Ok(())
}

// ---- fit / analyze / snr ----

#[derive(Serialize)]
struct FitFile {
    column: String,
    mu: f64,
    sigma: f64,
    n: usize,
    excluded: usize,
    ks: f64,
    log_likelihood: f64,
}

/// `analyze` only needs the fitted parameters; extra fields are ignored so
/// hand-written fit files work too.
#[derive(Deserialize)]
struct FitParams {
    mu: f64,
    sigma: f64,
}

fn cmd_fit(json: bool, input: PathBuf, column: ColumnArg, out: PathBuf) -> Result<()> {
    let name = match column {
        ColumnArg::SelfSim => "self",
        ColumnArg::Cross => "cross",
    };
    let sims = read_csv_column(&input, name)?;
    let (fit, excluded) = stats::fit_one_minus_similarities(&sims)?;
    // Mirror the fitting residuals for the goodness-of-fit numbers.
    let residuals: Vec<f64> = sims.iter().filter(|s| **s < 1.0).map(|s| 1.0 - *s).collect();
    let file = FitFile {
        column: name.to_string(),
        mu: fit.mu,
        sigma: fit.sigma,
        n: fit.n,
        excluded,
        ks: stats::ks_statistic(&residuals, &fit),
        log_likelihood: stats::log_likelihood(&residuals, &fit),
    };
    write_json_file(&out, &file)?;
    emit(
        json,
        json!({
            "column": name,
            "mu": file.mu,
            "sigma": file.sigma,
            "n": file.n,
            "excluded": file.excluded,
            "ks": file.ks,
            "out": out,
        }),
        format!(
            "{name}: mu {:.5}, sigma {:.5} over {} samples ({} excluded); fit in {}",
            file.mu,
            file.sigma,
            file.n,
            file.excluded,
            out.display()
        ),
    );
    Ok(())
}

fn parse_grid(s: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::InvalidSamples(format!("alpha grid '{s}' is not start:stop:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || stop < start || !start.is_finite() || !stop.is_finite() {
        return Err(bad());
    }
    Ok((start, stop, step))
}

fn cmd_analyze(
    json: bool,
    fit_self: PathBuf,
    fit_corr: PathBuf,
    alpha_grid: &str,
    multisample: Option<u32>,
    out: PathBuf,
) -> Result<()> {
    let fs_params: FitParams = read_json_file(&fit_self)?;
    let fc_params: FitParams = read_json_file(&fit_corr)?;
    let model = ErrorModel::new(
        LognormalFit::from_params(fs_params.mu, fs_params.sigma),
        LognormalFit::from_params(fc_params.mu, fc_params.sigma),
    );
    let (start, stop, step) = parse_grid(alpha_grid)?;
    if let Some(k) = multisample {
        if k == 0 {
            return Err(Error::InvalidSamples("--multisample must be at least 1".into()));
        }
    }

    let mut csv = String::from("alpha,false_positive,false_negative,total");
    if multisample.is_some() {
        csv.push_str(",multi");
    }
    csv.push('\n');
    let steps = ((stop - start) / step).round() as usize;
    for i in 0..=steps {
        let alpha = start + i as f64 * step;
        if alpha > stop + step * 1e-9 {
            break;
        }
        let fp = model.false_positive_rate(alpha);
        let fnr = model.false_negative_rate(alpha);
        csv.push_str(&format!("{alpha:.6},{fp},{fnr},{}", fp + fnr));
        if let Some(k) = multisample {
            csv.push_str(&format!(",{}", model.multi_sample_error(alpha, k)));
        }
        csv.push('\n');
    }
    fs::write(&out, &csv)?;

    let (best_alpha, best_err) = model.optimal_threshold();
    emit(
        json,
        json!({
            "rows": steps + 1,
            "optimal_alpha": best_alpha,
            "optimal_total_error": best_err,
            "multisample": multisample,
            "out": out,
        }),
        format!(
            "{} rows in {}; analytic optimum at alpha {:.4} (total error {:.3e})",
            steps + 1,
            out.display(),
            best_alpha,
            best_err
        ),
    );
    Ok(())
}

fn cmd_snr(alpha: f64) -> Result<()> {
    let req = stats::snr_requirement(alpha)?;
    // Single JSON object on stdout, like every other decision/fit output.
    println!(
        "{}",
        json!({ "alpha": alpha, "snr_linear": req.linear, "snr_db": req.db })
    );
    Ok(())
}

// ---- stability ----

fn cmd_stability(
    json: bool,
    devices: usize,
    samples: usize,
    noise: NoiseArg,
    snr_db: Option<f64>,
    seed: u64,
    out: PathBuf,
) -> Result<()> {
    if samples == 0 {
        return Err(Error::InvalidSamples("need at least one sample per device".into()));
    }
    let noise = noise_profile(noise, snr_db)?;
    let spec = StimulusSpec::default();
    let cal = FleetCalibration::default();
    let fleet = simbench::generate_fleet(devices, &cal, seed)?;

    // Same per-device/per-measurement seed layout as the experiment runner.
    let mut feats = Vec::with_capacity(devices * samples);
    for (k, model) in fleet.iter().enumerate() {
        let dev_stream = mix_seed(seed, k as u64);
        for m in 0..samples {
            feats.push(simbench::simulate_measurement(
                model,
                &cal,
                &noise,
                &spec,
                mix_seed(dev_stream, m as u64),
            )?);
        }
    }
    let matrix = simbench::stability_matrix(&feats)?;

    let file = fs::File::create(&out)?;
    let mut w = std::io::BufWriter::new(file);
    let header: Vec<String> = (0..matrix.len()).map(|i| format!("m{i}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in &matrix {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;

    emit(
        json,
        json!({
            "devices": devices,
            "samples_per_device": samples,
            "matrix_side": matrix.len(),
            "seed": seed,
            "out": out,
        }),
        format!(
            "{0}x{0} similarity matrix ({1} devices x {2} samples, seed {3}) in {4}",
            matrix.len(),
            devices,
            samples,
            seed,
            out.display()
        ),
    );
    Ok(())
}

// ---- shared plumbing ----

fn emit(json: bool, machine: serde_json::Value, human: String) {
    if json {
        println!("{machine}");
    } else {
        println!("{human}");
    }
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Pull one named column out of a headed CSV, skipping empty cells (the
/// similarity export has ragged columns).
fn read_csv_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::EmptyInput(format!("{} is empty", path.display())))?;
    let idx = header
        .split(',')
        .position(|h| h.trim() == column)
        .ok_or_else(|| {
            Error::InvalidSamples(format!("no '{column}' column in {}", path.display()))
        })?;
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cell = line.split(',').nth(idx).unwrap_or("").trim();
        if cell.is_empty() {
            continue;
        }
        let v: f64 = cell.parse().map_err(|_| {
            Error::InvalidSamples(format!(
                "{}:{}: '{cell}' is not a number",
                path.display(),
                lineno + 2
            ))
        })?;
        values.push(v);
    }
    Ok(values)
}
