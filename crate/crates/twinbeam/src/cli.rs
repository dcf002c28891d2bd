//! Thin command-line front end. All logic lives in the library; the
//! subcommands parse flags, call one pipeline each and format the result.
//!
//! Exit codes: 0 on success, 1 when a scenario expectation fails, 2 on
//! usage or configuration errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use crate::circuit::{
    extract_loss_from_contrast, splitting_ratio_estimate, Port, TransmissionSpectrum,
    DEFAULT_FACET_REFLECTIVITY,
};
use crate::coincidence::{
    background_correction, g2_heralded_from_counts, histogram_delays, AnalysisOptions,
    CorrelationReport,
};
use crate::config;
use crate::jsa::{self, MarginalAxis};
use crate::montecarlo::simulate_run;
use crate::plot;
use crate::scenario::{load_scenario, run_scenario, ScenarioOutcome};
use crate::spectrograph::{build_jsi_histogram, ReconstructionOptions};
use crate::squeezed_state::power_sweep;
use crate::tagstream::TagStreamReader;

#[derive(Parser)]
#[command(
    name = "twinbeam",
    version,
    about = "Simulate and analyze a heralded single-photon source with an on-chip beamsplitter"
)]
struct Cli {
    /// Cap the worker threads (results are identical at any setting).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte-Carlo experiment and write a tag stream.
    Simulate {
        /// Experiment TOML file.
        #[arg(long)]
        config: PathBuf,
        /// Output tag-stream path.
        #[arg(long)]
        out: PathBuf,
        /// Override the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the pulse count from the config file.
        #[arg(long)]
        pulses: Option<u64>,
    },
    /// Coincidence analysis of a tag stream (or a raw counts fixture).
    Analyze {
        /// Input tag stream.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// TOML with raw Grangier counts instead of a stream.
        #[arg(long, conflicts_with = "input")]
        counts: Option<PathBuf>,
        #[arg(long, default_value_t = 2.5)]
        window_ns: f64,
        /// Subtract configured dark accidentals: "dH,d1,d2" per window.
        #[arg(long)]
        dark_probs: Option<String>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also build a delay histogram: "ch_a,ch_b,bin_ps,span_ns".
        #[arg(long)]
        histogram: Option<String>,
        #[arg(long, requires = "histogram")]
        histogram_out: Option<PathBuf>,
        /// Reconstruct the joint spectrum into this text-matrix file
        /// (requires --spectro-config).
        #[arg(long, requires = "spectro_config")]
        jsi: Option<PathBuf>,
        /// Spectrograph calibrations and output axes (TOML).
        #[arg(long)]
        spectro_config: Option<PathBuf>,
        /// Heatmap of the reconstructed joint spectrum.
        #[arg(long, requires = "jsi")]
        jsi_svg: Option<PathBuf>,
    },
    /// Model joint spectrum: Schmidt number, marginals, export.
    Jsa {
        /// Pump/grid TOML ([jsa] fields at the root); defaults to the
        /// reference device when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_jsi: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Also report the resolution-convergence delta.
        #[arg(long)]
        check_convergence: bool,
    },
    /// Extract loss and splitting ratio from transmission scans.
    Characterize {
        /// Two-column (wavelength nm, power) scan of output port 1.
        #[arg(long)]
        port1: PathBuf,
        /// Same for output port 2.
        #[arg(long)]
        port2: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FACET_REFLECTIVITY)]
        reflectivity: f64,
        #[arg(long)]
        length_cm: f64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Analytic pump-power sweep (optionally with Monte-Carlo points).
    Sweep {
        /// Experiment TOML (source + calibration set the scaling).
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated pump powers in mW.
        #[arg(long)]
        powers: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Simulate this many pulses per power and append MC estimates.
        #[arg(long)]
        mc_pulses: Option<u64>,
    },
    /// Run a bundled or file-based regression scenario.
    Scenario {
        /// Scenario name or path to a scenario TOML.
        name: String,
        /// Directory of scenario files shadowing the bundled set
        /// (also honours TWINBEAM_SCENARIO_DIR).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

/// Entry point shared by the binary and the CLI tests.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = cli.threads;
    let body = || match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    };
    match threads {
        None => body(),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(body),
            Err(e) => {
                eprintln!("error: {e}");
                2
            }
        },
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Simulate {
            config,
            out,
            seed,
            pulses,
        } => {
            let mut experiment = config::load_experiment(&config)?;
            if let Some(seed) = seed {
                experiment.rng_seed = seed;
            }
            if let Some(pulses) = pulses {
                experiment.n_pulses = pulses;
            }
            let header = simulate_run(&experiment, &out, None)?;
            println!("records = {}", header.record_count);
            println!("rep_period_ps = {}", header.rep_period_ps);
            println!("out = {}", out.display());
            Ok(0)
        }
        Command::Analyze {
            input,
            counts,
            window_ns,
            dark_probs,
            report,
            histogram,
            histogram_out,
            jsi,
            spectro_config,
            jsi_svg,
        } => {
            if let Some(counts_path) = counts {
                let fixture = config::load_counts(&counts_path)?;
                let g2 = g2_heralded_from_counts(
                    fixture.n_h,
                    fixture.n_1h,
                    fixture.n_2h,
                    fixture.n_12h,
                );
                let mut out = String::new();
                let _ = writeln!(out, "g2_heralded = {g2:.4}");
                let _ = writeln!(out, "g2_heralded_full = {g2:.9e}");
                emit(report.as_deref(), &out)?;
                return Ok(0);
            }
            let input = input.ok_or_else(|| anyhow!("one of --in or --counts is required"))?;
            let options = AnalysisOptions::with_window_ns(window_ns);
            let mut acc = crate::coincidence::CoincidenceAccumulator::new(options)?;
            for tag in TagStreamReader::open(&input)? {
                acc.push(tag?)?;
            }
            let mut correlation = acc.finish();
            if let Some(spec) = &dark_probs {
                let dark = parse_triple(spec).context("--dark-probs expects dH,d1,d2")?;
                correlation = background_correction(&correlation, dark);
            }
            emit(report.as_deref(), &format_report(&correlation))?;

            if let Some(spec) = histogram {
                let (ch_a, ch_b, bin_ps, span_ns) =
                    parse_histogram_spec(&spec).context("--histogram expects chA,chB,bin_ps,span_ns")?;
                let tags = TagStreamReader::open(&input)?
                    .collect::<Result<Vec<_>, _>>()?;
                let hist = histogram_delays(tags, ch_a, ch_b, bin_ps, span_ns)?;
                let target = histogram_out
                    .ok_or_else(|| anyhow!("--histogram-out is required with --histogram"))?;
                fs::write(&target, hist.to_text())?;
                println!("histogram = {}", target.display());
            }

            if let (Some(jsi_path), Some(spectro_path)) = (jsi, spectro_config) {
                let spectro = config::load_spectro_analysis(&spectro_path)?;
                let tags = TagStreamReader::open(&input)?
                    .collect::<Result<Vec<_>, _>>()?;
                let grid = build_jsi_histogram(
                    tags,
                    &spectro.cal_signal,
                    &spectro.cal_idler,
                    &spectro.grid_spec(),
                    &ReconstructionOptions {
                        window_ps: (window_ns * 1e3).round() as u64,
                        signal_channel: spectro.signal_channel,
                        extra_blur_sigma_nm: None,
                    },
                )?;
                jsa::save_jsi(&grid, &jsi_path)?;
                println!("jsi = {}", jsi_path.display());
                let bound = jsa::schmidt_lower_bound(&grid)?;
                println!("schmidt_lower_bound = {bound:.4}");
                if let Some(svg_path) = jsi_svg {
                    plot::save_svg(
                        &plot::heatmap_svg(&grid, "reconstructed joint spectral intensity"),
                        &svg_path,
                    )?;
                    println!("svg = {}", svg_path.display());
                }
            }
            Ok(0)
        }
        Command::Jsa {
            config,
            out_jsi,
            svg,
            check_convergence,
        } => {
            let section: config::JsaSection = match config {
                Some(path) => toml::from_str(&fs::read_to_string(&path)?)
                    .map_err(|e| anyhow!("{}: {e}", path.display()))?,
                None => toml::from_str("").expect("defaults"),
            };
            let amplitude = section.amplitude()?;
            let (_, k) = jsa::schmidt_decompose(&amplitude)?;
            let jsi = jsa::jsi_from_jsa(&amplitude)?;
            let marginal = jsa::marginal_spectrum(&jsi, MarginalAxis::Signal)?;
            println!("schmidt_k = {k:.6}");
            println!("marginal_fwhm_nm = {:.6}", marginal.fwhm_nm);
            if check_convergence {
                let (_, delta) = jsa::schmidt_convergence(
                    &section.pump(),
                    &section.phase_match()?,
                    &section.grid_spec()?,
                )?;
                println!("convergence_delta = {delta:.3e}");
            }
            if let Some(path) = out_jsi {
                jsa::save_jsi(&jsi, &path)?;
                println!("jsi = {}", path.display());
            }
            if let Some(path) = svg {
                let coarse = if jsi.values().nrows() >= 256 {
                    jsi.downsample(jsi.values().nrows() / 128)?
                } else {
                    jsi.clone()
                };
                plot::save_svg(&plot::heatmap_svg(&coarse, "joint spectral intensity"), &path)?;
                println!("svg = {}", path.display());
            }
            Ok(0)
        }
        Command::Characterize {
            port1,
            port2,
            reflectivity,
            length_cm,
            report,
        } => {
            let spec1 = TransmissionSpectrum::load(&port1, Port::One)?;
            let spec2 = TransmissionSpectrum::load(&port2, Port::Two)?;
            let loss1 = extract_loss_from_contrast(&spec1, reflectivity, length_cm)?;
            let loss2 = extract_loss_from_contrast(&spec2, reflectivity, length_cm)?;
            let (ratio, ratio_sigma) = splitting_ratio_estimate(&spec1, &spec2)?;
            let mut out = String::new();
            let _ = writeln!(out, "alpha_port1_per_cm = {:.6}", loss1.alpha_per_cm);
            let _ = writeln!(out, "alpha_port1_sigma = {:.6}", loss1.alpha_sigma);
            let _ = writeln!(out, "alpha_port2_per_cm = {:.6}", loss2.alpha_per_cm);
            let _ = writeln!(out, "alpha_port2_sigma = {:.6}", loss2.alpha_sigma);
            let _ = writeln!(out, "splitting_ratio = {ratio:.6}");
            let _ = writeln!(out, "splitting_ratio_sigma = {ratio_sigma:.6}");
            let _ = writeln!(out, "fringes_port1 = {}", loss1.fringes.len());
            emit(report.as_deref(), &out)?;
            Ok(0)
        }
        Command::Sweep {
            config,
            powers,
            out,
            svg,
            mc_pulses,
        } => {
            let experiment = config::load_experiment(&config)?;
            let powers = parse_powers(&powers)?;
            let model = experiment.effective_source()?;
            let points = power_sweep(&model, experiment.pump_power_mw, &powers)?;
            let mut table = String::from(
                "power_mw\tmean_n\tg2_cross\tg2_auto\tg2_heralded\tp1_pair\tp2_pair",
            );
            if mc_pulses.is_some() {
                table.push_str("\tmc_g2_heralded\tmc_sigma");
            }
            table.push('\n');
            let mut curve = Vec::new();
            for point in &points {
                let p = &point.prediction;
                let _ = write!(
                    table,
                    "{:.3}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}",
                    point.power_mw, p.mean_n, p.g2_cross, p.g2_auto, p.g2_heralded, p.p1_pair, p.p2_pair
                );
                if let Some(pulses) = mc_pulses {
                    let mut run = experiment.clone();
                    run.pump_power_mw = point.power_mw;
                    run.n_pulses = pulses;
                    if run.calibration_pairs_per_mw.is_none() {
                        // scale the raw source when no calibration is given
                        run.source = model.scaled(point.power_mw / experiment.pump_power_mw);
                    }
                    let tags = crate::montecarlo::simulate_collect(&run)?;
                    let estimate = crate::coincidence::g2_heralded_estimate(
                        tags,
                        run.coincidence_window_ns,
                    )?;
                    let _ = write!(table, "\t{:.6e}\t{:.6e}", estimate.value, estimate.sigma);
                }
                table.push('\n');
                curve.push((point.power_mw, p.g2_heralded));
            }
            emit(out.as_deref(), &table)?;
            if let Some(path) = svg {
                plot::save_svg(
                    &plot::sweep_svg(
                        &curve,
                        "heralded autocorrelation against pump power",
                        "pump power (mW)",
                        "g2_heralded(0)",
                    ),
                    &path,
                )?;
                println!("svg = {}", path.display());
            }
            Ok(0)
        }
        Command::Scenario { name, dir } => {
            let file = load_scenario(&name, dir.as_deref())?;
            let outcome = run_scenario(&file)?;
            print!("{}", format_outcome(&outcome));
            Ok(if outcome.passed() { 0 } else { 1 })
        }
    }
}

fn emit(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(path) => {
            fs::write(path, content).with_context(|| path.display().to_string())?;
            println!("report = {}", path.display());
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn parse_powers(spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| anyhow!("bad power '{s}': {e}"))
        })
        .collect()
}

fn parse_triple(spec: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()?;
    if parts.len() != 3 {
        bail!("expected 3 comma-separated values");
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn parse_histogram_spec(spec: &str) -> Result<(u16, u16, u64, f64)> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        bail!("expected 4 comma-separated values");
    }
    Ok((
        parts[0].parse()?,
        parts[1].parse()?,
        parts[2].parse()?,
        parts[3].parse()?,
    ))
}

/// Key-value block plus a delimited table, fixed formatting throughout so
/// repeated runs are byte-identical.
pub fn format_report(report: &CorrelationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "n_pulses = {}", report.n_pulses);
    let _ = writeln!(out, "window_ns = {:.6}", report.window_ns);
    let _ = writeln!(out, "n_h = {}", report.n_h);
    let _ = writeln!(out, "n_1 = {}", report.n_1);
    let _ = writeln!(out, "n_2 = {}", report.n_2);
    let _ = writeln!(out, "n_1h = {}", report.n_1h);
    let _ = writeln!(out, "n_2h = {}", report.n_2h);
    let _ = writeln!(out, "n_12 = {}", report.n_12);
    let _ = writeln!(out, "n_12h = {}", report.n_12h);
    let _ = writeln!(out, "n_outside_windows = {}", report.n_outside_windows);
    let _ = writeln!(out, "side_peaks_used = {}", report.side_peaks_used);
    let _ = writeln!(
        out,
        "accidental_per_peak = {:.6e}",
        report.accidental_per_peak
    );
    if let Some((lo, hi)) = report.g2_heralded_ci95 {
        let _ = writeln!(out, "g2_heralded_ci95 = [{lo:.6e}, {hi:.6e}]");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "quantity\tvalue\tsigma");
    for (name, estimate) in [
        ("car", report.car),
        ("g2_cross", report.g2_cross),
        ("g2_auto", report.g2_auto),
        ("g2_heralded", report.g2_heralded),
        ("mean_n", report.mean_n_estimate),
        ("schmidt_k", report.schmidt_k_estimate),
    ] {
        match estimate {
            Some(e) => {
                let _ = writeln!(out, "{name}\t{:.6e}\t{:.6e}", e.value, e.sigma);
            }
            None => {
                let _ = writeln!(out, "{name}\tn/a\tn/a");
            }
        }
    }
    out
}

pub fn format_outcome(outcome: &ScenarioOutcome) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario = {}", outcome.name);
    for check in &outcome.checks {
        let _ = writeln!(
            out,
            "[{}] {}: observed {:.6e} (sigma {:.2e}), expected {:.6e} +/- {:.2e}",
            if check.pass { "PASS" } else { "FAIL" },
            check.quantity,
            check.observed.value,
            check.observed.sigma,
            check.expected.value,
            check.tolerance,
        );
    }
    let _ = writeln!(
        out,
        "result = {}",
        if outcome.passed() { "pass" } else { "fail" }
    );
    out
}
