//! Analytic multi-component AM-FM signals.
//!
//! A [`SignalModel`] is a sum of components `A_k(t) exp(i 2π φ_k(t))`. Phases
//! are measured in cycles, so `φ'` is the instantaneous frequency in Hz and
//! `φ''` the chirp rate in Hz/s. A trend is a component whose phase is
//! identically zero.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};

/// Relative slack used when testing whether a time lies inside a span.
const SPAN_EPS: f64 = 1e-12;

/// Amplitude envelope `A(t) = level + slope * t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Envelope {
    pub level: f64,
    pub slope: f64,
}

impl Envelope {
    pub fn constant(level: f64) -> Self {
        Envelope { level, slope: 0.0 }
    }

    pub fn at(&self, t: f64) -> f64 {
        self.level + self.slope * t
    }
}

/// Phase law of one component, in cycles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PhaseLaw {
    /// `c t + r t^2 / 2`
    Linear { c: f64, r: f64 },
    /// `f0 t - depth sin(2π mod_freq t)`
    Sinusoidal { f0: f64, depth: f64, mod_freq: f64 },
    /// `φ ≡ 0` (trend)
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentSpec {
    pub envelope: Envelope,
    pub law: PhaseLaw,
    pub span: [f64; 2],
}

fn check_span(span: [f64; 2]) -> Result<()> {
    if !(span[0].is_finite() && span[1].is_finite() && span[1] > span[0]) {
        return Err(invalid(format!("span {span:?} must be a finite increasing interval")));
    }
    Ok(())
}

impl ComponentSpec {
    pub fn new(envelope: Envelope, law: PhaseLaw, span: [f64; 2]) -> Result<Self> {
        check_span(span)?;
        let (a0, a1) = (envelope.at(span[0]), envelope.at(span[1]));
        if !(a0 > 0.0 && a1 > 0.0) || !envelope.level.is_finite() || !envelope.slope.is_finite() {
            return Err(invalid("amplitude must be positive on the whole span"));
        }
        Ok(ComponentSpec { envelope, law, span })
    }

    pub fn amplitude(&self, t: f64) -> f64 {
        self.envelope.at(t)
    }

    pub fn phase(&self, t: f64) -> f64 {
        match self.law {
            PhaseLaw::Linear { c, r } => c * t + 0.5 * r * t * t,
            PhaseLaw::Sinusoidal { f0, depth, mod_freq } => {
                f0 * t - depth * (2.0 * PI * mod_freq * t).sin()
            }
            PhaseLaw::Zero => 0.0,
        }
    }

    pub fn phase_d1(&self, t: f64) -> f64 {
        match self.law {
            PhaseLaw::Linear { c, r } => c + r * t,
            PhaseLaw::Sinusoidal { f0, depth, mod_freq } => {
                let w = 2.0 * PI * mod_freq;
                f0 - w * depth * (w * t).cos()
            }
            PhaseLaw::Zero => 0.0,
        }
    }

    pub fn phase_d2(&self, t: f64) -> f64 {
        match self.law {
            PhaseLaw::Linear { r, .. } => r,
            PhaseLaw::Sinusoidal { depth, mod_freq, .. } => {
                let w = 2.0 * PI * mod_freq;
                w * w * depth * (w * t).sin()
            }
            PhaseLaw::Zero => 0.0,
        }
    }

    /// Supremum of `|φ'''|` over the real line.
    pub fn phase_d3_sup(&self) -> f64 {
        match self.law {
            PhaseLaw::Linear { .. } | PhaseLaw::Zero => 0.0,
            PhaseLaw::Sinusoidal { depth, mod_freq, .. } => {
                (2.0 * PI * mod_freq).powi(3) * depth.abs()
            }
        }
    }

    /// Smallest `ε₁` with `|A(t+τ) - A(t)| ≤ ε₁ |τ| A(t)` for `t, t+τ` in the span.
    pub fn amplitude_lipschitz_rel(&self) -> f64 {
        let min_a = self.amplitude(self.span[0]).min(self.amplitude(self.span[1]));
        self.envelope.slope.abs() / min_a
    }

    pub fn is_trend(&self) -> bool {
        matches!(self.law, PhaseLaw::Zero)
    }

    /// `A(t) exp(i 2π φ(t))`, with the phase reduced modulo one cycle first.
    pub fn value(&self, t: f64) -> Complex64 {
        let phi = self.phase(t);
        let frac = phi - phi.floor();
        Complex64::from_polar(self.amplitude(t), 2.0 * PI * frac)
    }
}

/// Linear chirp `A exp(i 2π (c t + r t²/2))`.
pub fn make_lfm(amplitude: f64, c: f64, r: f64, span: [f64; 2]) -> Result<ComponentSpec> {
    if !(amplitude > 0.0) {
        return Err(invalid(format!("amplitude {amplitude} must be positive")));
    }
    ComponentSpec::new(Envelope::constant(amplitude), PhaseLaw::Linear { c, r }, span)
}

/// Sinusoidal FM `A exp(i 2π (f0 t - depth sin(2π mod_freq t)))`.
///
/// A negative `depth` flips the modulation sign.
pub fn make_sfm(
    amplitude: f64,
    f0: f64,
    depth: f64,
    mod_freq: f64,
    span: [f64; 2],
) -> Result<ComponentSpec> {
    if !(amplitude > 0.0) {
        return Err(invalid(format!("amplitude {amplitude} must be positive")));
    }
    if !(mod_freq > 0.0) {
        return Err(invalid(format!("modulation frequency {mod_freq} must be positive")));
    }
    ComponentSpec::new(
        Envelope::constant(amplitude),
        PhaseLaw::Sinusoidal { f0, depth, mod_freq },
        span,
    )
}

pub fn make_trend(amplitude: f64, span: [f64; 2]) -> Result<ComponentSpec> {
    if !(amplitude > 0.0) {
        return Err(invalid(format!("amplitude {amplitude} must be positive")));
    }
    ComponentSpec::new(Envelope::constant(amplitude), PhaseLaw::Zero, span)
}

/// Per-component ground truth at one instant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub amplitude: f64,
    pub inst_freq: f64,
    pub chirp_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignalModel {
    components: Vec<ComponentSpec>,
    t_span: [f64; 2],
}

impl SignalModel {
    pub fn new(components: Vec<ComponentSpec>, t_span: [f64; 2]) -> Result<Self> {
        check_span(t_span)?;
        if components.iter().filter(|c| !c.is_trend()).count() == 0 {
            return Err(invalid("a model needs at least one non-trend component"));
        }
        if components.iter().filter(|c| c.is_trend()).count() > 1 {
            return Err(invalid("at most one trend component is allowed"));
        }
        Ok(SignalModel { components, t_span })
    }

    /// Builds a model that may consist only of a trend.
    ///
    /// Used for oracle checks on the `φ ≡ 0` term; the separation pipeline
    /// requires at least one oscillating component.
    pub fn trend_only(amplitude: f64, t_span: [f64; 2]) -> Result<Self> {
        Ok(SignalModel { components: vec![make_trend(amplitude, t_span)?], t_span })
    }

    pub fn components(&self) -> &[ComponentSpec] {
        &self.components
    }

    pub fn t_span(&self) -> [f64; 2] {
        self.t_span
    }

    pub fn has_trend(&self) -> bool {
        self.components.iter().any(|c| c.is_trend())
    }

    /// Number of oscillating (non-trend) components.
    pub fn oscillating_count(&self) -> usize {
        self.components.iter().filter(|c| !c.is_trend()).count()
    }

    pub fn contains(&self, t: f64) -> bool {
        let scale = self.t_span[0].abs().max(self.t_span[1].abs()).max(1.0);
        t >= self.t_span[0] - SPAN_EPS * scale && t <= self.t_span[1] + SPAN_EPS * scale
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(domain(format!("t = {t} outside model span {:?}", self.t_span)))
        }
    }

    pub fn evaluate(&self, t: f64) -> Result<Complex64> {
        self.check_time(t)?;
        Ok(self.components.iter().map(|c| c.value(t)).sum())
    }

    /// Value of component `k` alone.
    pub fn component_value(&self, k: usize, t: f64) -> Result<Complex64> {
        self.check_time(t)?;
        let c = self
            .components
            .get(k)
            .ok_or(Error::OutOfRange { index: k, len: self.components.len() })?;
        Ok(c.value(t))
    }

    pub fn ground_truth(&self, t: f64) -> Result<Vec<GroundTruth>> {
        self.check_time(t)?;
        Ok(self
            .components
            .iter()
            .map(|c| GroundTruth {
                amplitude: c.amplitude(t),
                inst_freq: c.phase_d1(t),
                chirp_rate: c.phase_d2(t),
            })
            .collect())
    }

    pub fn sample(&self, rate: f64) -> Result<SampledSignal> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(invalid(format!("sample rate {rate} must be positive")));
        }
        let [t0, t1] = self.t_span;
        let count = ((t1 - t0) * rate + 1e-9).floor() as usize + 1;
        let samples = (0..count)
            .map(|n| self.evaluate(t0 + n as f64 / rate))
            .collect::<Result<Vec<_>>>()?;
        SampledSignal::new(samples, rate, t0)
    }

    /// Largest relative amplitude Lipschitz constant over all components.
    pub fn epsilon1(&self) -> f64 {
        self.components.iter().map(|c| c.amplitude_lipschitz_rel()).fold(0.0, f64::max)
    }

    /// Largest `sup |φ'''|` over the oscillating components.
    pub fn epsilon3(&self) -> f64 {
        self.components.iter().map(|c| c.phase_d3_sup()).fold(0.0, f64::max)
    }

    /// `max_t A_k(t)` summed over components (envelopes are linear, so the
    /// maximum sits at an endpoint).
    pub fn amplitude_sum_max(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.amplitude(self.t_span[0]).max(c.amplitude(self.t_span[1])))
            .sum()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from_model(self))?)
    }
}

/// On-disk model description.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub components: Vec<ComponentDef>,
    pub t_span: [f64; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ComponentDef {
    Lfm {
        amplitude: f64,
        c: f64,
        r: f64,
        #[serde(default, skip_serializing_if = "is_zero")]
        amplitude_slope: f64,
    },
    Sfm {
        amplitude: f64,
        f0: f64,
        depth: f64,
        mod_freq: f64,
        #[serde(default, skip_serializing_if = "is_zero")]
        amplitude_slope: f64,
    },
    Trend {
        amplitude: f64,
        #[serde(default, skip_serializing_if = "is_zero")]
        amplitude_slope: f64,
    },
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl ModelFile {
    pub fn into_model(self) -> Result<SignalModel> {
        let span = self.t_span;
        let components = self
            .components
            .into_iter()
            .map(|def| match def {
                ComponentDef::Lfm { amplitude, c, r, amplitude_slope } => ComponentSpec::new(
                    Envelope { level: amplitude, slope: amplitude_slope },
                    PhaseLaw::Linear { c, r },
                    span,
                ),
                ComponentDef::Sfm { amplitude, f0, depth, mod_freq, amplitude_slope } => {
                    if !(mod_freq > 0.0) {
                        return Err(invalid("sfm mod_freq must be positive"));
                    }
                    ComponentSpec::new(
                        Envelope { level: amplitude, slope: amplitude_slope },
                        PhaseLaw::Sinusoidal { f0, depth, mod_freq },
                        span,
                    )
                }
                ComponentDef::Trend { amplitude, amplitude_slope } => ComponentSpec::new(
                    Envelope { level: amplitude, slope: amplitude_slope },
                    PhaseLaw::Zero,
                    span,
                ),
            })
            .collect::<Result<Vec<_>>>()?;
        SignalModel::new(components, span)
    }

    pub fn from_model(model: &SignalModel) -> Self {
        let components = model
            .components
            .iter()
            .map(|c| {
                let (amplitude, amplitude_slope) = (c.envelope.level, c.envelope.slope);
                match c.law {
                    PhaseLaw::Linear { c, r } => ComponentDef::Lfm { amplitude, c, r, amplitude_slope },
                    PhaseLaw::Sinusoidal { f0, depth, mod_freq } => {
                        ComponentDef::Sfm { amplitude, f0, depth, mod_freq, amplitude_slope }
                    }
                    PhaseLaw::Zero => ComponentDef::Trend { amplitude, amplitude_slope },
                }
            })
            .collect();
        ModelFile { components, t_span: model.t_span }
    }
}

/// Two crossing linear chirps on `[0, 8]`: IFs `42 - 4t` and `10 + 4t`.
pub fn two_lfm_model() -> SignalModel {
    let span = [0.0, 8.0];
    SignalModel::new(
        vec![
            make_lfm(1.0, 42.0, -4.0, span).expect("valid preset"),
            make_lfm(1.0, 10.0, 4.0, span).expect("valid preset"),
        ],
        span,
    )
    .expect("valid preset")
}

/// Micro-Doppler style echo on `[0, 1]`: two sinusoidal FM returns with
/// opposite modulation and one constant 250 Hz return.
pub fn radar_model() -> SignalModel {
    let span = [0.0, 1.0];
    let depth = 30.0 / PI;
    SignalModel::new(
        vec![
            make_sfm(1.0, 250.0, depth, 3.0, span).expect("valid preset"),
            make_sfm(1.0, 250.0, -depth, 3.0, span).expect("valid preset"),
            make_lfm(1.0, 250.0, 0.0, span).expect("valid preset"),
        ],
        span,
    )
    .expect("valid preset")
}

/// Uniformly sampled complex signal.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledSignal {
    samples: Vec<Complex64>,
    sample_rate: f64,
    t_start: f64,
}

impl SampledSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64, t_start: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(invalid("a sampled signal needs at least two samples"));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(invalid(format!("sample rate {sample_rate} must be positive")));
        }
        Ok(SampledSignal { samples, sample_rate, t_start })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn step(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.samples.len() - 1)
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t_start + n as f64 / self.sample_rate
    }

    /// Index of the sample taken at `t`, which must lie on the sample grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let pos = (t - self.t_start) * self.sample_rate;
        let n = pos.round();
        if (pos - n).abs() > 1e-6 {
            return Err(domain(format!("t = {t} is not on the sample grid")));
        }
        if n < 0.0 || n as usize >= self.samples.len() {
            return Err(domain(format!(
                "t = {t} outside signal span [{}, {}]",
                self.t_start,
                self.t_end()
            )));
        }
        Ok(n as usize)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        SampledSignal {
            samples: self.samples.iter().map(|z| z * factor).collect(),
            ..self.clone()
        }
    }

    /// CSV with header `t,re,im`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "re", "im"])?;
        for (n, z) in self.samples.iter().enumerate() {
            w.write_record([self.time(n).to_string(), z.re.to_string(), z.im.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a `t,re,im` CSV; the rate is recovered from the first two rows.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::Format(format!("missing column {i}")))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(e.to_string()))
            };
            times.push(field(0)?);
            samples.push(Complex64::new(field(1)?, field(2)?));
        }
        if times.len() < 2 {
            return Err(Error::Format("signal CSV needs at least two rows".into()));
        }
        let rate = (times.len() - 1) as f64 / (times[times.len() - 1] - times[0]);
        SampledSignal::new(samples, rate, times[0])
    }
}
