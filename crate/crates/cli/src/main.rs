use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ct3s::bounds::write_bound_curves;
use ct3s::experiment::{
    bound_curves, certificate_rows, create_output, match_labels, run, separate_signal, summarize, synthesize,
    write_certificates_csv, write_ground_truth_csv, Preset, RunConfig,
};
use ct3s::ridge::{write_recovered_csv, Threshold};
use ct3s::signal::{SampledSignal, SignalModel};
use ct3s::transform::{write_plane_csv, ChirpletTransform, CubeGrid, SigmaSpec};
use ct3s::window::{b0, check_admissibility, pft_closed, pft_modulus, pft_numeric, QuadrantGrid};
use serde::{Deserialize, Serialize};
use serde_json::json;

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOFT: u8 = 3;

#[derive(Parser)]
#[command(name = "ct3s", version, about = "Chirplet-transform signal separation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a model and write the signal and its ground truth.
    Synth(RunArgs),
    /// Write the transform: a binary cube, or CSV slices with --at.
    Transform {
        #[command(flatten)]
        run: RunArgs,
        /// Times (seconds) of slices to export as CSV instead of the full cube.
        #[arg(long, value_delimiter = ',')]
        at: Vec<f64>,
    },
    /// Extract and track ridges.
    Ridges(RunArgs),
    /// Full separation: ridges, recovered components and a summary.
    Separate(RunArgs),
    /// Error-bound curves and hypothesis margins.
    Bounds {
        #[command(flatten)]
        run: RunArgs,
        /// Also run the separation and compare observed errors with the bounds.
        #[arg(long)]
        observed: bool,
    },
    /// Evaluate the Gaussian window transform at one point.
    Pft {
        #[arg(long, allow_hyphen_values = true)]
        eta: f64,
        #[arg(long, allow_hyphen_values = true)]
        lambda: f64,
    },
    /// Check the Gaussian window's admissibility conditions on a grid.
    Admissibility {
        #[arg(long)]
        b: Option<f64>,
        #[arg(long, default_value_t = 5.0)]
        eta_max: f64,
        #[arg(long, default_value_t = 5.0)]
        lambda_max: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
}

#[derive(Args, Clone, Debug, Default)]
struct RunArgs {
    /// JSON file with any of the flag values; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Model description (JSON).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Signal CSV (t,re,im) to analyze instead of sampling a model.
    #[arg(long)]
    signal: Option<PathBuf>,
    #[arg(long)]
    rate: Option<f64>,
    /// A constant in seconds or a JSON table [[t, sigma], ...].
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    eta_max: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    lambda_range: Option<Vec<f64>>,
    #[arg(long)]
    lambda_step: Option<f64>,
    #[arg(long)]
    threshold_frac: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    eval_interval: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Config-file mirror of [`RunArgs`].
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileArgs {
    preset: Option<String>,
    model: Option<PathBuf>,
    signal: Option<PathBuf>,
    rate: Option<f64>,
    sigma: Option<serde_json::Value>,
    eta_max: Option<f64>,
    lambda_range: Option<[f64; 2]>,
    lambda_step: Option<f64>,
    threshold_frac: Option<f64>,
    rho: Option<f64>,
    delta: Option<f64>,
    k: Option<usize>,
    eval_interval: Option<[f64; 2]>,
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

struct Resolved {
    cfg: RunConfig,
    signal: Option<PathBuf>,
    out: PathBuf,
}

fn parse_sigma(text: &str) -> anyhow::Result<SigmaSpec> {
    if let Ok(v) = text.trim().parse::<f64>() {
        return Ok(SigmaSpec::Constant(v));
    }
    serde_json::from_str(text).map_err(|e| config_err(format!("bad --sigma '{text}': {e}")))
}

fn pair(v: Vec<f64>, name: &str) -> anyhow::Result<[f64; 2]> {
    <[f64; 2]>::try_from(v).map_err(|_| config_err(format!("--{name} takes two values")))
}

impl RunArgs {
    fn merged(&self) -> anyhow::Result<RunArgs> {
        let Some(path) = &self.config else {
            return Ok(self.clone());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: FileArgs =
            serde_json::from_str(&text).map_err(|e| config_err(format!("config {}: {e}", path.display())))?;
        let sigma = match file.sigma {
            Some(serde_json::Value::Number(n)) => Some(n.to_string()),
            Some(v) => Some(v.to_string()),
            None => None,
        };
        Ok(RunArgs {
            config: None,
            preset: self.preset.clone().or(file.preset),
            model: self.model.clone().or(file.model),
            signal: self.signal.clone().or(file.signal),
            rate: self.rate.or(file.rate),
            sigma: self.sigma.clone().or(sigma),
            eta_max: self.eta_max.or(file.eta_max),
            lambda_range: self.lambda_range.clone().or(file.lambda_range.map(Vec::from)),
            lambda_step: self.lambda_step.or(file.lambda_step),
            threshold_frac: self.threshold_frac.or(file.threshold_frac),
            rho: self.rho.or(file.rho),
            delta: self.delta.or(file.delta),
            k: self.k.or(file.k),
            eval_interval: self.eval_interval.clone().or(file.eval_interval.map(Vec::from)),
            out: self.out.clone().or(file.out),
        })
    }

    fn resolve(&self) -> anyhow::Result<Resolved> {
        let a = self.merged()?;
        let preset = a.preset.as_deref().map(Preset::parse).transpose().map_err(|e| config_err(e.to_string()))?;
        if preset.is_none() && a.model.is_none() && a.signal.is_none() {
            return Err(config_err("one of --preset, --model or --signal is required"));
        }
        let mut cfg = RunConfig::preset(preset.unwrap_or(Preset::TwoLfm));
        cfg.preset = preset;
        cfg.model = a.model.clone();
        if let Some(path) = &a.model {
            let model = SignalModel::load(path).map_err(|e| config_err(format!("model {}: {e}", path.display())))?;
            cfg.separation.expected_components = model.oscillating_count();
            cfg.separation.trend = model.has_trend();
            if preset.is_none() {
                let [t0, t1] = model.t_span();
                let margin = 0.125 * (t1 - t0);
                cfg.eval_interval = [t0 + margin, t1 - margin];
            }
        }
        if let Some(v) = a.rate {
            cfg.rate = v;
        }
        if let Some(s) = &a.sigma {
            cfg.sigma = parse_sigma(s)?;
            if a.rho.is_none() {
                if let SigmaSpec::Constant(v) = cfg.sigma {
                    cfg.separation.rho = v;
                }
            }
        }
        if let Some(v) = a.eta_max {
            cfg.eta_range = [0.0, v];
        }
        if let Some(v) = a.lambda_range {
            cfg.lambda_range = pair(v, "lambda-range")?;
        }
        if let Some(v) = a.lambda_step {
            cfg.lambda_step = v;
        }
        if let Some(v) = a.threshold_frac {
            cfg.separation.threshold = Threshold::Fraction(v);
        }
        if let Some(v) = a.rho {
            cfg.separation.rho = v;
        }
        if let Some(v) = a.delta {
            cfg.separation.delta = v;
        }
        if let Some(v) = a.k {
            cfg.separation.expected_components = v;
        }
        if let Some(v) = a.eval_interval {
            cfg.eval_interval = pair(v, "eval-interval")?;
        }
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        let out = a.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        cfg.out = Some(out.clone());
        Ok(Resolved { cfg, signal: a.signal, out })
    }
}

impl Resolved {
    fn has_model(&self) -> bool {
        self.cfg.preset.is_some() || self.cfg.model.is_some()
    }

    fn load_signal(&self) -> anyhow::Result<SampledSignal> {
        match &self.signal {
            Some(path) => {
                let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                SampledSignal::read_csv(io::BufReader::new(file)).map_err(|e| config_err(e.to_string()))
            }
            None => Ok(synthesize(&self.cfg).map_err(|e| config_err(e.to_string()))?.1),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn write_with<F>(path: &Path, f: F) -> anyhow::Result<()>
where
    F: FnOnce(&mut io::BufWriter<fs::File>) -> ct3s::Result<()>,
{
    let mut w = create_output(path).with_context(|| format!("creating {}", path.display()))?;
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_with(path, |w| Ok(w.write_all(text.as_bytes())?))
}

fn cmd_synth(args: &RunArgs) -> anyhow::Result<u8> {
    let r = args.resolve()?;
    let (model, signal) = synthesize(&r.cfg).map_err(|e| config_err(e.to_string()))?;
    write_with(&r.path("signal.csv"), |w| signal.write_csv(w))?;
    write_with(&r.path("ground_truth.csv"), |w| write_ground_truth_csv(&model, &signal, w))?;
    eprintln!("wrote {} samples to {}", signal.len(), r.out.display());
    Ok(0)
}

fn cmd_transform(args: &RunArgs, at: &[f64]) -> anyhow::Result<u8> {
    let r = args.resolve()?;
    let signal = r.load_signal()?;
    let grid = CubeGrid::new(&signal, &r.cfg.grid_spec(), &r.cfg.window).map_err(|e| config_err(e.to_string()))?;
    let transform = ChirpletTransform::new(&signal, grid, r.cfg.window)?;
    if at.is_empty() {
        let cube = transform.cube()?;
        write_with(&r.path("cube.bin"), |w| cube.write_binary(w))?;
        return Ok(0);
    }
    let axis = transform.grid().t_axis().to_vec();
    for &t in at {
        let ti = axis
            .iter()
            .position(|&x| (x - t).abs() < 0.5 / r.cfg.rate)
            .ok_or_else(|| config_err(format!("t = {t} is not on the transform time grid")))?;
        let plane = transform.plane(ti)?;
        write_with(&r.path(&format!("slice_{ti}.csv")), |w| {
            write_plane_csv(transform.grid(), plane.values.view(), w)
        })?;
    }
    Ok(0)
}

fn cmd_separate(args: &RunArgs, full: bool) -> anyhow::Result<u8> {
    let r = args.resolve()?;
    let signal = r.load_signal()?;
    let (grid, sep) = separate_signal(&r.cfg, &signal).map_err(|e| config_err(e.to_string()))?;
    write_with(&r.path("ridges.csv"), |w| sep.ridges.write_csv(w))?;
    if !full {
        write_json(&r.path("slices.json"), &sep.slices)?;
        let empty = sep.ridges.flags.iter().any(|f| f.empty);
        return Ok(if empty { EXIT_SOFT } else { 0 });
    }
    write_with(&r.path("recovered.csv"), |w| write_recovered_csv(&sep.components, w))?;
    let model = if r.has_model() && r.signal.is_none() { Some(r.cfg.resolve_model()?) } else { None };
    let summary = match &model {
        Some(m) if m.components().len() == r.cfg.separation.labels() => {
            let assignment = match_labels(m, &sep.ridges, &r.cfg)?;
            summarize(&r.cfg, Some((m, &assignment)), &grid, &sep)?
        }
        _ => summarize(&r.cfg, None, &grid, &sep)?,
    };
    write_json(&r.path("summary.json"), &summary)?;
    if summary.empty_slices > 0 {
        eprintln!("{} evaluation slices had an empty threshold set", summary.empty_slices);
    }
    Ok(if summary.soft_failure { EXIT_SOFT } else { 0 })
}

fn cmd_bounds(args: &RunArgs, observed: bool) -> anyhow::Result<u8> {
    let r = args.resolve()?;
    if r.signal.is_some() || !r.has_model() {
        return Err(config_err("bounds need a model or preset for ground truth"));
    }
    let (model, signal) = synthesize(&r.cfg).map_err(|e| config_err(e.to_string()))?;
    let grid = CubeGrid::new(&signal, &r.cfg.grid_spec(), &r.cfg.window).map_err(|e| config_err(e.to_string()))?;
    let reports = bound_curves(&r.cfg, &model, grid.t_axis())?;
    write_json(&r.path("bounds.json"), &reports)?;
    write_with(&r.path("bounds.csv"), |w| write_bound_curves(&reports, w))?;
    let failing = reports.iter().filter(|rep| !rep.hypotheses.pass).count();
    if observed {
        let run = run(&r.cfg).map_err(|e| config_err(e.to_string()))?;
        let rows = certificate_rows(&run, &reports)?;
        let slacks = (run.grid.eta_step(), run.grid.lambda_step(), 1e-3);
        write_with(&r.path("certificates.csv"), |w| write_certificates_csv(&rows, slacks, w))?;
    }
    if failing > 0 {
        eprintln!("hypotheses fail at {failing} of {} evaluated times", reports.len());
        return Ok(EXIT_SOFT);
    }
    Ok(0)
}

fn cmd_pft(eta: f64, lambda: f64) -> anyhow::Result<u8> {
    let closed = pft_closed(eta, lambda);
    let numeric = pft_numeric(&Default::default(), eta, lambda);
    let value = json!({
        "eta": eta,
        "lambda": lambda,
        "closed": [closed.re, closed.im],
        "numeric": [numeric.re, numeric.im],
        "modulus": pft_modulus(eta, lambda),
        "abs_error": (closed - numeric).norm(),
    });
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(0)
}

fn cmd_admissibility(b: Option<f64>, eta_max: f64, lambda_max: f64, step: f64) -> anyhow::Result<u8> {
    let grid = QuadrantGrid { eta_max, lambda_max, step };
    let report = check_admissibility(&Default::default(), b.unwrap_or_else(b0), &grid)
        .map_err(|e| config_err(e.to_string()))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "b": report.b,
            "points_checked": report.points_checked,
            "decay_violations": report.decay_violations.len(),
            "symmetry_violations": report.symmetry_violations.len(),
            "level_violations": report.level_violations.len(),
            "pass": report.pass,
        }))?
    );
    Ok(if report.pass { 0 } else { EXIT_SOFT })
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Transform { run, at } => cmd_transform(&run, &at),
        Command::Ridges(a) => cmd_separate(&a, false),
        Command::Separate(a) => cmd_separate(&a, true),
        Command::Bounds { run, observed } => cmd_bounds(&run, observed),
        Command::Pft { eta, lambda } => cmd_pft(eta, lambda),
        Command::Admissibility { b, eta_max, lambda_max, step } => cmd_admissibility(b, eta_max, lambda_max, step),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(EXIT_CONFIG)
            } else if e.downcast_ref::<ct3s::Error>().is_some_and(|e| !matches!(e, ct3s::Error::Io(_))) {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_IO)
            }
        }
    }
}
