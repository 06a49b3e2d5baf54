//! Subcommand implementations. Each writes its primary output to a file or
//! stdout and a short summary as text or JSON.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use pdqrng::config::RunConfig;
use pdqrng::extractor::io::{self as bitio, ExportFormat};
use pdqrng::extractor::{block_parity, distill, extract as parity_extract};
use pdqrng::heterodyne::holevo::DEFAULT_LAG_NS;
use pdqrng::heterodyne::{
    classify, fit_scaling, holevo_dispersion, matched_model, rts_smooth, synthesize_trace, AmplitudeBinning,
    HeterodyneTrace, SynthesisParams, DEFAULT_OMEGA, DEFAULT_SAMPLE_PERIOD_NS,
};
use pdqrng::metrology::{epsilon_bound, mean_vc_from_p1, predictability_report, combine_noise, NoiseBreakdown};
use pdqrng::photonics::PulseSimulator;
use pdqrng::pipeline::{analog_samples, chunk_rng, run_pipeline, throughput_bench, PipelineOptions, MIN_BENCH_BITS};
use pdqrng::stats::{autocorrelation_par, mini_battery, with_bound, write_autocorr_csv};
use pdqrng::{BitStream, DistrustLevel, StreamKind};
use rayon::prelude::*;
use serde_json::json;

use crate::GlobalArgs;

/// A command-line combination that cannot be satisfied.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Prints the summary to stdout, or to stderr when stdout carries bits.
fn summary(g: &GlobalArgs, text: &str, value: serde_json::Value) -> Result<()> {
    let body = if g.json {
        serde_json::to_string_pretty(&value)? + "\n"
    } else {
        text.to_string()
    };
    if g.stdout_raw {
        io::stderr().write_all(body.as_bytes())?;
    } else {
        io::stdout().write_all(body.as_bytes())?;
    }
    Ok(())
}

fn load_bits(path: &Path) -> Result<BitStream> {
    bitio::load(path).with_context(|| format!("reading {}", path.display()))
}

fn save_bits(s: &BitStream, path: &Path) -> Result<()> {
    bitio::save(s, path).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn raw_to_stdout(s: &BitStream) -> Result<()> {
    let mut out = io::stdout().lock();
    bitio::write_rawbytes(s, &mut out)?;
    out.flush()?;
    Ok(())
}

fn kind_name(kind: StreamKind) -> String {
    match kind {
        StreamKind::Raw => "raw".into(),
        StreamKind::Extracted => "extracted".into(),
        StreamKind::Distilled(k) => format!("distilled(k={k})"),
    }
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of pulses (= raw bits); overrides `simulation.n_pulses`.
    #[arg(long, value_name = "N")]
    pub bits: Option<u64>,

    /// Output file for the extracted bits.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Output file for the raw comparator bits.
    #[arg(long, value_name = "FILE")]
    pub raw_out: Option<PathBuf>,

    /// Per-pulse CSV (pulse_index, v, phi and the voltage components) for
    /// the first `--analog-pulses` pulses.
    #[arg(long, value_name = "FILE")]
    pub analog_csv: Option<PathBuf>,

    /// Analog samples as little-endian float32 for histogramming.
    #[arg(long, value_name = "FILE")]
    pub analog_f32: Option<PathBuf>,

    /// Pulses written to the analog outputs.
    #[arg(long, value_name = "N", default_value_t = 100_000)]
    pub analog_pulses: u64,

    /// Generate chunks on a single thread (output is identical).
    #[arg(long)]
    pub serial: bool,
}

pub fn simulate(g: &GlobalArgs, config: &RunConfig, a: &SimulateArgs) -> Result<()> {
    let mut config = *config;
    if let Some(n) = a.bits {
        config.simulation.n_pulses = n;
    }
    config.validate()?;
    if a.out.is_none() && a.raw_out.is_none() && !g.stdout_raw && a.analog_csv.is_none() && a.analog_f32.is_none() {
        return Err(usage("nothing to write: give --out, --raw-out, --analog-csv, --analog-f32 or --stdout-raw"));
    }
    let sim = config.simulation;
    let phase = config.phase_process();
    let opts = PipelineOptions {
        parallel: !a.serial,
        keep_raw: a.raw_out.is_some(),
        keep_extracted: a.out.is_some() || g.stdout_raw,
        x0: false,
    };
    let out = run_pipeline(&sim, &config.noise, &phase, opts)?;
    if let (Some(path), Some(raw)) = (&a.raw_out, &out.raw) {
        save_bits(raw, path)?;
    }
    if let Some(x) = &out.extracted {
        if let Some(path) = &a.out {
            save_bits(x, path)?;
        }
        if g.stdout_raw {
            raw_to_stdout(x)?;
        }
    }
    if a.analog_csv.is_some() || a.analog_f32.is_some() {
        let analog = pdqrng::SimConfig {
            n_pulses: a.analog_pulses,
            ..sim
        };
        if let Some(path) = &a.analog_csv {
            write_analog_csv(&config, analog.n_pulses, path)?;
        }
        if let Some(path) = &a.analog_f32 {
            let v = analog_samples(&analog, &config.noise, &phase, !a.serial)?;
            let mut w = create(path)?;
            for x in v {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
            w.flush()?;
        }
    }
    let t = out.wall.as_secs_f64();
    let text = format!(
        "pulses       {}\nraw mean     {:.6}\nfinal v_ref  {:.3} mV\nwall time    {:.3} s ({:.3e} bits/s)\n",
        out.n_pulses,
        out.raw_mean(),
        out.comparator.v_ref_mean,
        t,
        out.n_pulses as f64 / t
    );
    summary(
        g,
        &text,
        json!({
            "pulses": out.n_pulses,
            "seed": sim.rng_seed,
            "raw_mean": out.raw_mean(),
            "final_v_ref_mV": out.comparator.v_ref_mean,
            "x_final": out.x_final,
            "wall_seconds": t,
        }),
    )
}

fn write_analog_csv(config: &RunConfig, n: u64, path: &Path) -> Result<()> {
    let sim = PulseSimulator::new(config.simulation, config.noise, config.phase_process())?;
    let mut rng = chunk_rng(config.simulation.rng_seed, u64::MAX);
    let mut w = create(path)?;
    writeln!(w, "pulse_index,v,phi,vs,vl,vphi,vho,vpd")?;
    for (i, p) in sim.train_of(n as usize, &mut rng).iter().enumerate() {
        match &p.components {
            Some(c) => writeln!(w, "{i},{},{},{},{},{},{},{}", p.v, p.phi, c.vs, c.vl, c.vphi, c.vho, c.vpd)?,
            None => writeln!(w, "{i},{},{},,,,,", p.v, p.phi)?,
        }
    }
    w.flush()?;
    Ok(())
}

// ----------------------------------------------------------------- extract

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Input bit file (raw or extracted).
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,

    /// Output bit file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Initial parity state for the running-parity extractor.
    #[arg(long)]
    pub x0: bool,

    /// Keep every k-th extracted bit.
    #[arg(long, value_name = "K")]
    pub distill: Option<usize>,

    /// Replace the distilled stream by its successive differences, the
    /// parities of disjoint raw-bit blocks.
    #[arg(long, requires = "distill")]
    pub block_parity: bool,
}

pub fn extract(g: &GlobalArgs, a: &ExtractArgs) -> Result<()> {
    if a.out.is_none() && !g.stdout_raw {
        return Err(usage("give --out or --stdout-raw"));
    }
    let input = load_bits(&a.input)?;
    let in_kind = input.kind();
    let in_len = input.len();
    let mut s = match in_kind {
        StreamKind::Raw => parity_extract(&input, a.x0)?,
        _ => input,
    };
    if let Some(k) = a.distill {
        s = distill(&s, k)?;
        if a.block_parity {
            s = block_parity(&s);
        }
    }
    if let Some(path) = &a.out {
        save_bits(&s, path)?;
    }
    if g.stdout_raw {
        raw_to_stdout(&s)?;
    }
    let text = format!(
        "{in_len} bits ({}) -> {} bits ({})\n",
        kind_name(in_kind),
        s.len(),
        kind_name(s.kind())
    );
    summary(
        g,
        &text,
        json!({"input_kind": kind_name(in_kind), "output_kind": kind_name(s.kind()), "bits": s.len()}),
    )
}

// ------------------------------------------------------------------ report

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistrustArg {
    Ordinary,
    DigitizerParanoid,
    FullyParanoid,
    All,
}

impl DistrustArg {
    fn levels(self) -> Vec<DistrustLevel> {
        match self {
            DistrustArg::Ordinary => vec![DistrustLevel::Ordinary],
            DistrustArg::DigitizerParanoid => vec![DistrustLevel::DigitizerParanoid],
            DistrustArg::FullyParanoid => vec![DistrustLevel::FullyParanoid],
            DistrustArg::All => vec![
                DistrustLevel::Ordinary,
                DistrustLevel::DigitizerParanoid,
                DistrustLevel::FullyParanoid,
            ],
        }
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Noise correlation assumption.
    #[arg(long, value_enum, default_value = "all")]
    pub distrust: DistrustArg,

    /// Distillation factors, comma separated.
    #[arg(long, value_name = "K", value_delimiter = ',', default_values_t = vec![4u32, 6])]
    pub k: Vec<u32>,

    /// Confidence level of the bound in standard deviations.
    #[arg(long, value_name = "N", default_value_t = 6)]
    pub sigmas: u32,

    /// Also write the table as CSV.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

/// Mean comparator fraction the offset is inferred from, and the swing
/// used for the inference.
const MEASURED_P1: f64 = 0.50035;
const MEASURED_TWO_DVPHI: f64 = 966.0;

pub fn report(g: &GlobalArgs, config: &RunConfig, a: &ReportArgs) -> Result<()> {
    if a.k.is_empty() {
        return Err(usage("--k needs at least one value"));
    }
    let mut rows = Vec::new();
    for level in a.distrust.levels() {
        let mut per_k = Vec::new();
        for &k in &a.k {
            per_k.push(predictability_report(&config.noise, level, a.sigmas, k, &config.timing)?);
        }
        rows.push((level, per_k));
    }

    let mut text = format!("{:<14} {:>9} {:>11}", "distrust", "σ_vc (mV)", "ε_max");
    for k in &a.k {
        text += &format!(" {:>11} {:>18}", format!("ε_max^{k}"), format!("fresh k={k} (ns)"));
    }
    text.push('\n');
    for (level, per_k) in &rows {
        let r0 = &per_k[0];
        text += &format!("{:<14} {:>9.2} {:>11.3e}", level.to_string(), r0.sigma_vc, r0.epsilon_max);
        for r in per_k {
            let f = r.freshness_ns.expect("report rows carry freshness");
            text += &format!(" {:>11.2e} {:>18}", r.epsilon_max_k, format!("[{:.2}, {:.2}]", f.lb, f.ub));
        }
        text.push('\n');
    }
    let inferred = mean_vc_from_p1(MEASURED_P1, MEASURED_TWO_DVPHI)?;
    text += &format!(
        "\n{}σ bound, tail fraction {:.1e}; swing derated to {:.1} mV\n\
         note: ⟨v_c⟩ = {:.2} mV is used; inferring it from ⟨P₁⟩ = {MEASURED_P1} at 2Δv_φ = {MEASURED_TWO_DVPHI} mV gives {:.2} mV\n",
        a.sigmas, rows[0].1[0].tail_fraction, rows[0].1[0].dvphi_eff, config.noise.mean_vc, inferred
    );

    if let Some(path) = &a.csv {
        let mut w = create(path)?;
        writeln!(w, "distrust,sigma_vc_mV,vc_bound_mV,dvphi_eff_mV,epsilon_max,k,epsilon_max_k,freshness_lb_ns,freshness_ub_ns")?;
        for (level, per_k) in &rows {
            for r in per_k {
                let f = r.freshness_ns.expect("report rows carry freshness");
                writeln!(
                    w,
                    "{},{:.4},{:.4},{:.4},{:.6e},{},{:.6e},{:.4},{:.4}",
                    serde_json::to_value(level)?.as_str().unwrap_or_default(),
                    r.sigma_vc,
                    r.vc_bound,
                    r.dvphi_eff,
                    r.epsilon_max,
                    r.k,
                    r.epsilon_max_k,
                    f.lb,
                    f.ub
                )?;
            }
        }
        w.flush()?;
    }

    let value = json!({
        "sigmas": a.sigmas,
        "mean_vc_mV": config.noise.mean_vc,
        "mean_vc_inferred_mV": inferred,
        "rows": rows.iter().flat_map(|(_, per_k)| per_k.iter()).collect::<Vec<_>>(),
    });
    summary(g, &text, value)
}

// ---------------------------------------------------------------- autocorr

#[derive(Debug, Args)]
pub struct AutocorrArgs {
    /// Input bit file.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,

    /// Largest lag.
    #[arg(long, value_name = "K", default_value_t = 10)]
    pub kmax: usize,

    /// Raw-bit excess predictability for the ε^k/4 bound column. Defaults
    /// to the configured noise model at --distrust and --sigmas.
    #[arg(long, value_name = "E")]
    pub epsilon: Option<f64>,

    /// Distrust level for the default bound.
    #[arg(long, value_enum, default_value = "ordinary")]
    pub distrust: DistrustArg,

    /// Confidence level of the default bound in standard deviations.
    #[arg(long, value_name = "N", default_value_t = 6)]
    pub sigmas: u32,

    /// Leave the bound column empty.
    #[arg(long, conflicts_with = "epsilon")]
    pub no_bound: bool,

    /// CSV destination (default: stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

pub fn autocorr(g: &GlobalArgs, config: &RunConfig, a: &AutocorrArgs) -> Result<()> {
    let x = load_bits(&a.input)?;
    let mut results = autocorrelation_par(&x, a.kmax)?;
    let eps = if a.no_bound {
        None
    } else if let Some(e) = a.epsilon {
        Some(e)
    } else {
        let level = match a.distrust.levels().as_slice() {
            [one] => *one,
            _ => return Err(usage("--distrust all is not meaningful for a single bound")),
        };
        let sigma_vc = combine_noise(&NoiseBreakdown::from_model(&config.noise), level)?;
        Some(epsilon_bound(&config.noise, sigma_vc, a.sigmas, 1)?.epsilon_max)
    };
    if let Some(e) = eps {
        with_bound(&mut results, e)?;
    }
    if g.json {
        let value = json!({"n_bits": x.len(), "epsilon_max": eps, "lags": results});
        return match &a.out {
            Some(path) => {
                let mut w = create(path)?;
                serde_json::to_writer_pretty(&mut w, &value)?;
                writeln!(w)?;
                w.flush()?;
                Ok(())
            }
            None => summary(g, "", value),
        };
    }
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            write_autocorr_csv(&results, &mut w)?;
            w.flush()?;
        }
        None => {
            let mut out = io::stdout().lock();
            write_autocorr_csv(&results, &mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}

// ----------------------------------------------------------------- battery

#[derive(Debug, Args)]
pub struct BatteryArgs {
    /// Input bit file.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,

    /// Test the successive differences of the input (block parities of a
    /// distilled stream) rather than the input itself.
    #[arg(long)]
    pub block_parity: bool,
}

pub fn battery(g: &GlobalArgs, a: &BatteryArgs) -> Result<()> {
    let mut x = load_bits(&a.input)?;
    if a.block_parity {
        x = block_parity(&x);
    }
    let report = mini_battery(&x)?;
    let mut text = format!("{} bits\n{:<16} {:>12}  verdict\n", report.n_bits, "test", "p-value");
    for r in &report.results {
        text += &format!("{:<16} {:>12.4e}  {}\n", r.name, r.p_value, r.verdict);
    }
    text += &format!("worst: {}\n", report.worst());
    summary(g, &text, serde_json::to_value(&report)?)
}

// -------------------------------------------------------------- heterodyne

#[derive(Debug, Args)]
pub struct HeterodyneArgs {
    /// Trace files: `.csv` with time_ns,v_mV rows, anything else raw
    /// float32. Without inputs, traces are synthesised from the model below.
    #[arg(long = "in", value_name = "FILE", num_args = 1..)]
    pub inputs: Vec<PathBuf>,

    /// Synthetic traces to generate.
    #[arg(long, value_name = "N", default_value_t = 10)]
    pub traces: usize,

    /// Samples per synthetic trace.
    #[arg(long, value_name = "N", default_value_t = 100_000)]
    pub samples: usize,

    /// Per-quadrature field diffusion coefficient, Ā²/ns.
    #[arg(long, value_name = "D", default_value_t = 9e-5)]
    pub diffusion: f64,

    /// Field relaxation rate below threshold, 1/ns.
    #[arg(long, value_name = "RATE", default_value_t = 9e-3)]
    pub damping: f64,

    /// Additive measurement noise, mV.
    #[arg(long, value_name = "SIGMA", default_value_t = 3e-4)]
    pub noise: f64,

    /// Beat angular frequency, rad/ns.
    #[arg(long, value_name = "W", default_value_t = DEFAULT_OMEGA)]
    pub omega: f64,

    /// Sample period for float32 inputs, ns.
    #[arg(long, value_name = "NS", default_value_t = DEFAULT_SAMPLE_PERIOD_NS)]
    pub sample_period: f64,

    /// Lag over which the phase dispersion is measured, ns.
    #[arg(long, value_name = "NS", default_value_t = DEFAULT_LAG_NS)]
    pub lag: f64,

    /// Per-bin dispersion CSV.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

fn read_trace(path: &Path, a: &HeterodyneArgs) -> Result<HeterodyneTrace<f64>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let trace = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        HeterodyneTrace::read_csv(BufReader::new(f), a.omega, 1.0)
    } else {
        HeterodyneTrace::read_f32(BufReader::new(f), a.sample_period, a.omega, 1.0)
    };
    trace.with_context(|| format!("reading {}", path.display()))
}

pub fn heterodyne(g: &GlobalArgs, config: &RunConfig, a: &HeterodyneArgs) -> Result<()> {
    let params = SynthesisParams {
        omega: a.omega,
        ..SynthesisParams::below_threshold(a.diffusion, a.damping)
    };
    let model = matched_model::<f64>(&params, a.noise);
    let seed = config.simulation.rng_seed;
    let estimates = if a.inputs.is_empty() {
        (0..a.traces)
            .into_par_iter()
            .map(|i| {
                let mut rng = chunk_rng(seed, i as u64);
                let (trace, _) = synthesize_trace::<_, f64>(&params, a.noise, a.samples, &mut rng)?;
                Ok(rts_smooth(&trace, &model)?)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        a.inputs
            .par_iter()
            .map(|p| Ok(rts_smooth(&read_trace(p, a)?, &model)?))
            .collect::<Result<Vec<_>>>()?
    };
    let h = holevo_dispersion(&estimates, a.lag, AmplitudeBinning::default())?;
    if let Some(path) = &a.csv {
        let mut w = create(path)?;
        h.write_csv(&mut w)?;
        w.flush()?;
    }
    let fit = fit_scaling(&h)?;
    let mechanism = classify(&fit);
    let text = format!(
        "traces       {}\nvalid bins   {} of {}\nslope        {:.3} ± {:.3}\nintercept    {:.3}\nD (−1 law)   {:.3e} Ā²/ns\nmechanism    {}\n",
        estimates.len(),
        h.valid_bins().count(),
        h.bins.len(),
        fit.slope,
        fit.slope_stderr,
        fit.intercept,
        fit.diffusion_coefficient(h.lag_ns),
        mechanism.name()
    );
    summary(
        g,
        &text,
        json!({
            "traces": estimates.len(),
            "fit": fit,
            "diffusion_coefficient": fit.diffusion_coefficient(h.lag_ns),
            "mechanism": mechanism.name(),
            "dispersion": h,
        }),
    )
}

// ------------------------------------------------------------------- bench

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Bits to generate.
    #[arg(long, value_name = "N", default_value_t = MIN_BENCH_BITS)]
    pub bits: u64,

    /// Run on one thread.
    #[arg(long)]
    pub serial: bool,
}

pub fn bench(g: &GlobalArgs, config: &RunConfig, a: &BenchArgs) -> Result<()> {
    let r = throughput_bench(&config.simulation, a.bits, !a.serial)?;
    let text = format!(
        "bits         {}\nthreads      {}\nwall time    {:.3} s\nthroughput   {:.3e} bits/s\nstages       analog {:.2} s, digitize {:.2} s, extract {:.2} s\n",
        r.bits,
        r.threads,
        r.seconds,
        r.bits_per_second,
        r.timings.analog.as_secs_f64(),
        r.timings.digitize.as_secs_f64(),
        r.timings.extract.as_secs_f64()
    );
    summary(
        g,
        &text,
        json!({
            "bits": r.bits,
            "threads": r.threads,
            "seconds": r.seconds,
            "bits_per_second": r.bits_per_second,
            "stage_seconds": {
                "analog": r.timings.analog.as_secs_f64(),
                "digitize": r.timings.digitize.as_secs_f64(),
                "extract": r.timings.extract.as_secs_f64(),
            },
        }),
    )
}

// ------------------------------------------------------------------ export

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    /// One ASCII '0' or '1' per bit.
    Ascii01,
    /// Packed bytes, least significant bit first.
    Rawbytes,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Input bit file.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,

    /// Output format.
    #[arg(long, value_enum)]
    pub format: FormatArg,

    /// Output file (default: stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

pub fn export(g: &GlobalArgs, a: &ExportArgs) -> Result<()> {
    let s = load_bits(&a.input)?;
    let format = match a.format {
        FormatArg::Ascii01 => ExportFormat::Ascii01,
        FormatArg::Rawbytes => ExportFormat::RawBytes,
    };
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            bitio::export(&s, format, &mut w)?;
            w.flush()?;
            summary(
                g,
                &format!("{} bits -> {}\n", s.len(), path.display()),
                json!({"bits": s.len(), "out": path}),
            )
        }
        None => {
            let mut out = io::stdout().lock();
            bitio::export(&s, format, &mut out)?;
            out.flush()?;
            Ok(())
        }
    }
}
