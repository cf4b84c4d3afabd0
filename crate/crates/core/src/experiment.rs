//! End-to-end runs: synthesize, separate, score against ground truth and
//! evaluate the certificates.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_report, BoundParams, BoundReport};
use crate::error::{invalid, Result};
use crate::ridge::{separate, RidgeSet, Separation, SeparationParams, Threshold};
use crate::signal::{radar_model, two_lfm_model, SampledSignal, SignalModel};
use crate::transform::{ChirpletTransform, CubeGrid, GridSpec, SigmaSpec};
use crate::window::WindowSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    TwoLfm,
    Radar,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "two-lfm" => Ok(Preset::TwoLfm),
            "radar" => Ok(Preset::Radar),
            other => Err(invalid(format!("unknown preset '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::TwoLfm => "two-lfm",
            Preset::Radar => "radar",
        }
    }

    pub fn model(&self) -> SignalModel {
        match self {
            Preset::TwoLfm => two_lfm_model(),
            Preset::Radar => radar_model(),
        }
    }
}

/// Everything a run needs. Presets fill every field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub model: Option<PathBuf>,
    pub rate: f64,
    pub sigma: SigmaSpec,
    pub t_hop: usize,
    pub eta_range: [f64; 2],
    pub lambda_range: [f64; 2],
    pub lambda_step: f64,
    pub separation: SeparationParams,
    pub eval_interval: [f64; 2],
    #[serde(default)]
    pub window: WindowSpec,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::TwoLfm => RunConfig {
                preset: Some(preset),
                model: None,
                rate: 128.0,
                sigma: SigmaSpec::Constant(0.15),
                t_hop: 1,
                eta_range: [0.0, 50.0],
                lambda_range: [-10.0, 10.0],
                lambda_step: 0.25,
                separation: SeparationParams {
                    threshold: Threshold::default(),
                    rho: 0.15,
                    delta: 0.5,
                    expected_components: 2,
                    trend: false,
                },
                eval_interval: [1.0, 7.0],
                window: WindowSpec::default(),
                out: None,
            },
            Preset::Radar => RunConfig {
                preset: Some(preset),
                model: None,
                rate: 2048.0,
                sigma: SigmaSpec::Constant(0.15),
                t_hop: 4,
                eta_range: [0.0, 500.0],
                lambda_range: [-4000.0, 4000.0],
                lambda_step: 40.0,
                separation: SeparationParams {
                    threshold: Threshold::default(),
                    rho: 0.15,
                    delta: 20.0,
                    expected_components: 3,
                    trend: false,
                },
                eval_interval: [0.3, 0.7],
                window: WindowSpec::default(),
                out: None,
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(invalid("sample rate must be positive"));
        }
        if self.t_hop == 0 {
            return Err(invalid("t_hop must be at least 1"));
        }
        if !(self.eval_interval[0] < self.eval_interval[1]) {
            return Err(invalid("evaluation interval must be increasing"));
        }
        self.sigma.validate()?;
        self.window.validate()?;
        self.separation.validate()
    }

    /// A model file takes precedence over the preset's built-in model.
    pub fn resolve_model(&self) -> Result<SignalModel> {
        match (&self.model, self.preset) {
            (Some(path), _) => SignalModel::load(path),
            (None, Some(p)) => Ok(p.model()),
            (None, None) => Err(invalid("either a preset or a model file is required")),
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            t_range: None,
            t_hop: self.t_hop,
            eta_range: self.eta_range,
            lambda_range: self.lambda_range,
            lambda_step: self.lambda_step,
            sigma: self.sigma.clone(),
        }
    }

    pub fn in_eval(&self, t: f64) -> bool {
        t >= self.eval_interval[0] - 1e-9 && t <= self.eval_interval[1] + 1e-9
    }

    fn sigma_at(&self, t: f64) -> f64 {
        self.sigma.at(t)
    }
}

/// Scores of one tracked label against its matched model component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentScore {
    pub label: usize,
    pub model_component: usize,
    /// Over non-gap evaluation times.
    pub max_if_error: Option<f64>,
    pub max_chirp_rate_error: Option<f64>,
    /// Gap samples count as zero.
    pub relative_l2_error: f64,
    pub coverage: f64,
    pub gaps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub preset: Option<String>,
    pub eval_interval: [f64; 2],
    pub eta_step: f64,
    pub lambda_step: f64,
    pub n_fft: usize,
    pub slices: usize,
    pub eval_slices: usize,
    pub empty_slices: usize,
    pub flagged_slices: usize,
    pub components: Vec<ComponentScore>,
    /// Some evaluation slice was empty or a label went missing.
    pub soft_failure: bool,
}

pub struct ExperimentRun {
    pub config: RunConfig,
    pub model: SignalModel,
    pub signal: SampledSignal,
    pub grid: CubeGrid,
    pub separation: Separation,
    /// `assignment[label]` is the model component matched to that label.
    pub assignment: Vec<usize>,
    pub summary: RunSummary,
}

pub fn synthesize(cfg: &RunConfig) -> Result<(SignalModel, SampledSignal)> {
    let model = cfg.resolve_model()?;
    let signal = model.sample(cfg.rate)?;
    Ok((model, signal))
}

/// Ground-truth CSV `t,component,amplitude,inst_freq,chirp_rate`.
pub fn write_ground_truth_csv<W: std::io::Write>(model: &SignalModel, signal: &SampledSignal, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "component", "amplitude", "inst_freq", "chirp_rate"])?;
    for n in 0..signal.len() {
        let t = signal.time(n);
        for (k, g) in model.ground_truth(t)?.iter().enumerate() {
            w.write_record([
                t.to_string(),
                k.to_string(),
                g.amplitude.to_string(),
                g.inst_freq.to_string(),
                g.chirp_rate.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Runs the separation on an already sampled signal.
pub fn separate_signal(cfg: &RunConfig, signal: &SampledSignal) -> Result<(CubeGrid, Separation)> {
    cfg.validate()?;
    let grid = CubeGrid::new(signal, &cfg.grid_spec(), &cfg.window)?;
    let transform = ChirpletTransform::new(signal, grid.clone(), cfg.window)?;
    let sep = separate(&transform, &cfg.separation)?;
    Ok((grid, sep))
}

pub fn run(cfg: &RunConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let (model, signal) = synthesize(cfg)?;
    if model.components().len() != cfg.separation.labels() {
        return Err(invalid(format!(
            "model has {} components but the separation expects {}",
            model.components().len(),
            cfg.separation.labels()
        )));
    }
    let (grid, separation) = separate_signal(cfg, &signal)?;
    let assignment = match_labels(&model, &separation.ridges, cfg)?;
    let summary = summarize(cfg, Some((&model, &assignment)), &grid, &separation)?;
    Ok(ExperimentRun { config: cfg.clone(), model, signal, grid, separation, assignment, summary })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Label-to-component assignment minimizing total `d` to ground truth over the evaluation interval.
pub fn match_labels(model: &SignalModel, ridges: &RidgeSet, cfg: &RunConfig) -> Result<Vec<usize>> {
    let n = ridges.components();
    let rho = cfg.separation.rho;
    let mut cost = vec![vec![0.0; n]; n];
    for (ti, &t) in ridges.t_axis.iter().enumerate() {
        if !cfg.in_eval(t) {
            continue;
        }
        let gt = model.ground_truth(t)?;
        for (label, track) in ridges.tracks.iter().enumerate() {
            if let Some(p) = track[ti] {
                for (k, g) in gt.iter().enumerate().take(n) {
                    cost[label][k] += (p.eta - g.inst_freq).abs() + rho * (p.lambda - g.chirp_rate).abs();
                }
            }
        }
    }
    let best = permutations(n)
        .into_iter()
        .min_by(|a, b| {
            let ca: f64 = a.iter().enumerate().map(|(l, &k)| cost[l][k]).sum();
            let cb: f64 = b.iter().enumerate().map(|(l, &k)| cost[l][k]).sum();
            ca.total_cmp(&cb)
        })
        .expect("at least one permutation");
    Ok(best)
}

/// Scores the separation; without ground truth only the slice statistics are filled.
pub fn summarize(
    cfg: &RunConfig,
    truth: Option<(&SignalModel, &[usize])>,
    grid: &CubeGrid,
    sep: &Separation,
) -> Result<RunSummary> {
    let ridges = &sep.ridges;
    let eval: Vec<usize> = (0..ridges.t_axis.len()).filter(|&i| cfg.in_eval(ridges.t_axis[i])).collect();
    let mut components = Vec::new();
    let (model, assignment) = match truth {
        Some((m, a)) => (Some(m), a),
        None => (None, &[][..]),
    };
    for (label, &k) in assignment.iter().enumerate() {
        let model = model.expect("assignment implies a model");
        let (mut if_err, mut cr_err) = (None::<f64>, None::<f64>);
        let (mut num, mut den, mut gaps) = (0.0, 0.0, 0usize);
        for &ti in &eval {
            let t = ridges.t_axis[ti];
            let g = model.ground_truth(t)?[k];
            let truth = model.component_value(k, t)?;
            let est = sep.components[label].samples[ti];
            match ridges.tracks[label][ti] {
                Some(p) => {
                    if_err = Some(if_err.unwrap_or(0.0).max((p.eta - g.inst_freq).abs()));
                    cr_err = Some(cr_err.unwrap_or(0.0).max((p.lambda - g.chirp_rate).abs()));
                }
                None => gaps += 1,
            }
            num += (est.unwrap_or(Complex64::new(0.0, 0.0)) - truth).norm_sqr();
            den += truth.norm_sqr();
        }
        components.push(ComponentScore {
            label,
            model_component: k,
            max_if_error: if_err,
            max_chirp_rate_error: cr_err,
            relative_l2_error: if den > 0.0 { (num / den).sqrt() } else { 0.0 },
            coverage: if eval.is_empty() { 0.0 } else { 1.0 - gaps as f64 / eval.len() as f64 },
            gaps,
        });
    }
    let empty_slices = eval.iter().filter(|&&ti| ridges.flags[ti].empty).count();
    let flagged_slices = eval.iter().filter(|&&ti| ridges.flags[ti].gap || ridges.flags[ti].excess).count();
    let gap_slices = eval.iter().filter(|&&ti| ridges.tracks.iter().any(|tr| tr[ti].is_none())).count();
    let soft_failure = empty_slices > 0 || gap_slices > 0;
    Ok(RunSummary {
        preset: cfg.preset.map(|p| p.name().to_string()),
        eval_interval: cfg.eval_interval,
        eta_step: grid.eta_step(),
        lambda_step: grid.lambda_step(),
        n_fft: grid.n_fft(),
        slices: ridges.t_axis.len(),
        eval_slices: eval.len(),
        empty_slices,
        flagged_slices,
        components,
        soft_failure,
    })
}

/// Bound reports on every grid time inside the evaluation interval.
pub fn bound_curves(cfg: &RunConfig, model: &SignalModel, t_axis: &[f64]) -> Result<Vec<BoundReport>> {
    t_axis
        .iter()
        .filter(|&&t| cfg.in_eval(t))
        .map(|&t| {
            let params = BoundParams {
                sigma: cfg.sigma_at(t),
                delta: cfg.separation.delta,
                rho: cfg.separation.rho,
                threshold: None,
            };
            bound_report(model, t, &params)
        })
        .collect()
}

/// Observed errors next to their certificates at one time for one component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateRow {
    pub t: f64,
    pub label: usize,
    pub model_component: usize,
    pub hypotheses_pass: bool,
    pub if_error: Option<f64>,
    pub bd1: Option<f64>,
    pub chirp_rate_error: Option<f64>,
    pub bd2: Option<f64>,
    pub recovery_error: Option<f64>,
    pub bd3: Option<f64>,
    pub amplitude_error: Option<f64>,
    pub res: f64,
}

impl CertificateRow {
    /// Whether observed errors sit under the certificates with the given slacks.
    ///
    /// Vacuously true when the hypotheses fail.
    pub fn consistent(&self, eta_slack: f64, lambda_slack: f64, value_slack: f64) -> bool {
        if !self.hypotheses_pass {
            return true;
        }
        let le = |obs: Option<f64>, bound: Option<f64>, slack: f64| match (obs, bound) {
            (Some(o), Some(b)) => o <= b + slack,
            (Some(_), None) => false,
            (None, _) => false,
        };
        le(self.if_error, self.bd1, eta_slack)
            && le(self.chirp_rate_error, self.bd2, lambda_slack)
            && le(self.recovery_error, self.bd3, value_slack)
            && le(self.amplitude_error, Some(self.res), value_slack)
    }
}

/// Certificate table with a `consistent` column evaluated at the given slacks.
pub fn write_certificates_csv<W: std::io::Write>(
    rows: &[CertificateRow],
    slacks: (f64, f64, f64),
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t",
        "label",
        "component",
        "hypotheses",
        "if_error",
        "bd1",
        "chirp_rate_error",
        "bd2",
        "recovery_error",
        "bd3",
        "amplitude_error",
        "res",
        "consistent",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in rows {
        w.write_record([
            row.t.to_string(),
            row.label.to_string(),
            row.model_component.to_string(),
            row.hypotheses_pass.to_string(),
            opt(row.if_error),
            opt(row.bd1),
            opt(row.chirp_rate_error),
            opt(row.bd2),
            opt(row.recovery_error),
            opt(row.bd3),
            opt(row.amplitude_error),
            row.res.to_string(),
            row.consistent(slacks.0, slacks.1, slacks.2).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn certificate_rows(run: &ExperimentRun, reports: &[BoundReport]) -> Result<Vec<CertificateRow>> {
    let ridges = &run.separation.ridges;
    let mut rows = Vec::new();
    for r in reports {
        let Some(ti) = ridges.t_axis.iter().position(|&t| (t - r.t).abs() < 1e-12) else {
            continue;
        };
        for (label, &k) in run.assignment.iter().enumerate() {
            let g = run.model.ground_truth(r.t)?[k];
            let truth = run.model.component_value(k, r.t)?;
            let p = ridges.tracks[label][ti];
            rows.push(CertificateRow {
                t: r.t,
                label,
                model_component: k,
                hypotheses_pass: r.hypotheses.pass,
                if_error: p.map(|p| (p.eta - g.inst_freq).abs()),
                bd1: r.bd1[k].value(),
                chirp_rate_error: p.map(|p| (p.lambda - g.chirp_rate).abs()),
                bd2: r.bd2[k].value(),
                recovery_error: p.map(|p| (p.q - truth).norm()),
                bd3: r.bd3[k].value(),
                amplitude_error: p.map(|p| (p.q.norm() - g.amplitude).abs()),
                res: r.res[k],
            });
        }
    }
    Ok(rows)
}

/// Writes a CSV through a buffered file, creating parent directories.
pub fn create_output(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(std::io::BufWriter::new(fs::File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in [Preset::TwoLfm, Preset::Radar] {
            let cfg = RunConfig::preset(p);
            cfg.validate().unwrap();
            assert_eq!(Preset::parse(p.name()).unwrap(), p);
        }
        assert!(Preset::parse("sonar").is_err());
    }

    #[test]
    fn preset_sample_counts() {
        let (_, s) = synthesize(&RunConfig::preset(Preset::TwoLfm)).unwrap();
        assert_eq!(s.len(), 1025);
        let (_, s) = synthesize(&RunConfig::preset(Preset::Radar)).unwrap();
        assert_eq!(s.len(), 2049);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = RunConfig::preset(Preset::Radar);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn permutations_are_complete() {
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(1), vec![vec![0]]);
    }

    #[test]
    fn config_without_model_has_no_ground_truth() {
        let mut cfg = RunConfig::preset(Preset::TwoLfm);
        cfg.preset = None;
        cfg.validate().unwrap();
        assert!(cfg.resolve_model().is_err());
    }
}
