//! Adaptive chirplet transform, STFT baseline and the local-LFM model transform.
//!
//! For a sampled signal with step `h` the transform at a sample instant `t`
//! is the Riemann sum
//!
//! ```text
//! Q(t, η, λ) = Σ_m x(t + m h) w_m exp(-i2πη m h - iπλ (m h)²)
//! ```
//!
//! where `w_m` are the window weights of [`WindowSpec::weights`] at scale
//! `σ(t)` (they already carry the `h/σ` factor and sum to one). For one `t`
//! and one `λ`, all `η` on the grid `k · rate / N_fft` come out of a single
//! zero-padded FFT.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::signal::{SampledSignal, SignalModel};
use crate::window::{pft_closed, WindowSpec};

/// Window scale as a function of time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Constant(f64),
    /// `(t, σ)` knots, linearly interpolated and held constant outside.
    Table(Vec<[f64; 2]>),
}

impl Default for SigmaSpec {
    fn default() -> Self {
        SigmaSpec::Constant(0.15)
    }
}

impl SigmaSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SigmaSpec::Constant(s) if *s > 0.0 && s.is_finite() => Ok(()),
            SigmaSpec::Constant(s) => Err(Error::InvalidGrid(format!("σ = {s} must be positive"))),
            SigmaSpec::Table(knots) => {
                if knots.is_empty() {
                    return Err(Error::InvalidGrid("σ table is empty".into()));
                }
                if knots.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err(Error::InvalidGrid("σ table times must increase".into()));
                }
                if knots.iter().any(|k| !(k[1] > 0.0 && k[1].is_finite())) {
                    return Err(Error::InvalidGrid("σ table values must be positive".into()));
                }
                Ok(())
            }
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            SigmaSpec::Constant(s) => *s,
            SigmaSpec::Table(knots) => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if t <= first[0] {
                    return first[1];
                }
                if t >= last[0] {
                    return last[1];
                }
                let i = knots.partition_point(|k| k[0] <= t);
                let (a, b) = (knots[i - 1], knots[i]);
                a[1] + (b[1] - a[1]) * (t - a[0]) / (b[0] - a[0])
            }
        }
    }
}

/// User-facing description of a cube grid; resolved against a signal by
/// [`CubeGrid::new`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Time range in seconds; defaults to the whole signal.
    pub t_range: Option<[f64; 2]>,
    /// Time hop in samples.
    pub t_hop: usize,
    pub eta_range: [f64; 2],
    pub lambda_range: [f64; 2],
    pub lambda_step: f64,
    pub sigma: SigmaSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeGrid {
    t_axis: Vec<f64>,
    t_index: Vec<usize>,
    eta_first_bin: i64,
    eta_len: usize,
    eta_step: f64,
    lambda_min: f64,
    lambda_step: f64,
    lambda_len: usize,
    n_fft: usize,
    sigma: SigmaSpec,
}

impl CubeGrid {
    pub fn new(signal: &SampledSignal, spec: &GridSpec, window: &WindowSpec) -> Result<Self> {
        window.validate()?;
        spec.sigma.validate()?;
        if spec.t_hop == 0 {
            return Err(Error::InvalidGrid("t hop must be at least one sample".into()));
        }
        let [t0, t1] = spec.t_range.unwrap_or([signal.t_start(), signal.t_end()]);
        let i0 = signal.index_of(t0)?;
        let i1 = signal.index_of(t1)?;
        let t_index: Vec<usize> = (i0..=i1).step_by(spec.t_hop).collect();
        let t_axis = t_index.iter().map(|&n| signal.time(n)).collect();

        let rate = signal.sample_rate();
        let sigma_max = t_index
            .iter()
            .map(|&n| spec.sigma.at(signal.time(n)))
            .fold(0.0, f64::max);
        let half = (window.truncation_radius * sigma_max * rate + 1e-9).floor() as usize;
        let n_fft = (4 * (2 * half + 1)).next_power_of_two();
        let eta_step = rate / n_fft as f64;

        let [e0, e1] = spec.eta_range;
        if !(e1 > e0) {
            return Err(Error::InvalidGrid(format!("η range {:?} must increase", spec.eta_range)));
        }
        if e0 < -rate / 2.0 || e1 > rate / 2.0 {
            return Err(Error::InvalidGrid(format!(
                "η range {:?} exceeds the Nyquist band ±{}",
                spec.eta_range,
                rate / 2.0
            )));
        }
        let first = (e0 / eta_step - 1e-9).ceil() as i64;
        let last = (e1 / eta_step + 1e-9).floor() as i64;
        let eta_len = (last - first + 1).max(0) as usize;

        let [l0, l1] = spec.lambda_range;
        if !(spec.lambda_step > 0.0) || !(l1 > l0) {
            return Err(Error::InvalidGrid("λ range must increase with a positive step".into()));
        }
        let lambda_len = ((l1 - l0) / spec.lambda_step + 1e-9).floor() as usize + 1;

        let grid = CubeGrid {
            t_axis,
            t_index,
            eta_first_bin: first,
            eta_len,
            eta_step,
            lambda_min: l0,
            lambda_step: spec.lambda_step,
            lambda_len,
            n_fft,
            sigma: spec.sigma.clone(),
        };
        grid.check_axes()?;
        Ok(grid)
    }

    fn check_axes(&self) -> Result<()> {
        if self.t_axis.len() < 2 || self.eta_len < 2 || self.lambda_len < 2 {
            return Err(Error::InvalidGrid(format!(
                "axis lengths (t {}, η {}, λ {}) must all be at least 2",
                self.t_axis.len(),
                self.eta_len,
                self.lambda_len
            )));
        }
        Ok(())
    }

    pub fn t_axis(&self) -> &[f64] {
        &self.t_axis
    }

    pub fn eta_axis(&self) -> Vec<f64> {
        (0..self.eta_len).map(|k| self.eta(k)).collect()
    }

    pub fn lambda_axis(&self) -> Vec<f64> {
        (0..self.lambda_len).map(|j| self.lambda(j)).collect()
    }

    pub fn eta(&self, k: usize) -> f64 {
        (self.eta_first_bin + k as i64) as f64 * self.eta_step
    }

    pub fn lambda(&self, j: usize) -> f64 {
        self.lambda_min + j as f64 * self.lambda_step
    }

    pub fn eta_step(&self) -> f64 {
        self.eta_step
    }

    pub fn lambda_step(&self) -> f64 {
        self.lambda_step
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn sigma(&self) -> &SigmaSpec {
        &self.sigma
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.t_axis.len(), self.eta_len, self.lambda_len)
    }

    /// Nearest η grid index, if `eta` lies within half a step of the axis.
    pub fn eta_index(&self, eta: f64) -> Option<usize> {
        let k = (eta / self.eta_step).round() as i64 - self.eta_first_bin;
        (0..self.eta_len as i64).contains(&k).then_some(k as usize)
    }

    pub fn lambda_index(&self, lambda: f64) -> Option<usize> {
        let j = ((lambda - self.lambda_min) / self.lambda_step).round() as i64;
        (0..self.lambda_len as i64).contains(&j).then_some(j as usize)
    }
}

/// One `(η, λ)` plane of the transform.
#[derive(Clone, Debug)]
pub struct Plane {
    pub values: Array2<Complex64>,
    /// True when the truncated window reaches past the signal ends.
    pub boundary: bool,
}

/// FFT-backed evaluator for one signal on one grid.
pub struct ChirpletTransform<'a> {
    signal: &'a SampledSignal,
    grid: CubeGrid,
    window: WindowSpec,
    fft: Arc<dyn Fft<f64>>,
    constant_weights: Option<(usize, Vec<f64>)>,
}

impl<'a> ChirpletTransform<'a> {
    pub fn new(signal: &'a SampledSignal, grid: CubeGrid, window: WindowSpec) -> Result<Self> {
        window.validate()?;
        for &t in grid.t_axis() {
            signal.index_of(t)?;
        }
        let fft = FftPlanner::new().plan_fft_forward(grid.n_fft);
        let constant_weights = match grid.sigma {
            SigmaSpec::Constant(s) => Some(window.weights(1.0 / (s * signal.sample_rate()))),
            SigmaSpec::Table(_) => None,
        };
        Ok(ChirpletTransform { signal, grid, window, fft, constant_weights })
    }

    pub fn grid(&self) -> &CubeGrid {
        &self.grid
    }

    pub fn signal(&self) -> &SampledSignal {
        self.signal
    }

    fn weights_at(&self, ti: usize) -> std::borrow::Cow<'_, (usize, Vec<f64>)> {
        match &self.constant_weights {
            Some(w) => std::borrow::Cow::Borrowed(w),
            None => {
                let s = self.grid.sigma.at(self.grid.t_axis[ti]);
                std::borrow::Cow::Owned(self.window.weights(1.0 / (s * self.signal.sample_rate())))
            }
        }
    }

    /// Window support `[lo, hi]` in sample offsets, clipped to the signal.
    fn support(&self, n: usize, half: usize) -> (i64, i64, bool) {
        let len = self.signal.len() as i64;
        let n = n as i64;
        let half = half as i64;
        let lo = (-half).max(-n);
        let hi = half.min(len - 1 - n);
        (lo, hi, lo > -half || hi < half)
    }

    /// Whether the truncated window at grid time `ti` is clipped by the signal ends.
    pub fn is_boundary(&self, ti: usize) -> bool {
        let (half, _) = &*self.weights_at(ti);
        self.support(self.grid.t_index[ti], *half).2
    }

    fn check_t(&self, ti: usize) -> Result<()> {
        if ti >= self.grid.t_axis.len() {
            return Err(Error::OutOfRange { index: ti, len: self.grid.t_axis.len() });
        }
        Ok(())
    }

    /// Transform values over the η grid for an arbitrary list of chirp rates.
    ///
    /// Output is indexed `(η, λ)`.
    pub fn plane_for_lambdas(&self, ti: usize, lambdas: &[f64]) -> Result<Plane> {
        self.check_t(ti)?;
        let n = self.grid.t_index[ti];
        let weights = self.weights_at(ti);
        let (half, w) = (&weights.0, &weights.1);
        let (lo, hi, boundary) = self.support(n, *half);
        let nfft = self.grid.n_fft;
        let h = self.signal.step();
        let x = self.signal.samples();

        let mut values = Array2::zeros((self.grid.eta_len, lambdas.len()));
        let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for (j, &lambda) in lambdas.iter().enumerate() {
            buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            for m in lo..=hi {
                let tau = m as f64 * h;
                let chirp = Complex64::from_polar(1.0, -PI * lambda * tau * tau);
                let xm = x[(n as i64 + m) as usize];
                buf[m.rem_euclid(nfft as i64) as usize] = xm * w[(m + *half as i64) as usize] * chirp;
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..self.grid.eta_len {
                let bin = (self.grid.eta_first_bin + k as i64).rem_euclid(nfft as i64) as usize;
                values[[k, j]] = buf[bin];
            }
        }
        Ok(Plane { values, boundary })
    }

    pub fn plane(&self, ti: usize) -> Result<Plane> {
        self.plane_for_lambdas(ti, &self.grid.lambda_axis())
    }

    /// Direct evaluation of the same Riemann sum at one `(η, λ)`.
    pub fn point(&self, ti: usize, eta: f64, lambda: f64) -> Result<Complex64> {
        self.check_t(ti)?;
        let n = self.grid.t_index[ti];
        let weights = self.weights_at(ti);
        let (half, w) = (&weights.0, &weights.1);
        let (lo, hi, _) = self.support(n, *half);
        let h = self.signal.step();
        let x = self.signal.samples();
        Ok((lo..=hi)
            .map(|m| {
                let tau = m as f64 * h;
                let phase = -2.0 * PI * eta * tau - PI * lambda * tau * tau;
                x[(n as i64 + m) as usize] * w[(m + *half as i64) as usize] * Complex64::from_polar(1.0, phase)
            })
            .sum())
    }

    /// Full cube, computed in parallel over `t`.
    pub fn cube(&self) -> Result<TransformCube> {
        let (nt, ne, nl) = self.grid.shape();
        let planes = (0..nt)
            .into_par_iter()
            .map(|ti| self.plane(ti))
            .collect::<Result<Vec<_>>>()?;
        let mut values = Array3::zeros((nt, ne, nl));
        let mut boundary_flags = Vec::with_capacity(nt);
        for (ti, p) in planes.into_iter().enumerate() {
            values.index_axis_mut(Axis(0), ti).assign(&p.values);
            boundary_flags.push(p.boundary);
        }
        Ok(TransformCube { grid: self.grid.clone(), values, boundary_flags })
    }
}

#[derive(Clone, Debug)]
pub struct TransformCube {
    pub grid: CubeGrid,
    /// Indexed `(t, η, λ)`.
    pub values: Array3<Complex64>,
    pub boundary_flags: Vec<bool>,
}

pub fn chirplet_cube(signal: &SampledSignal, grid: CubeGrid, window: WindowSpec) -> Result<TransformCube> {
    ChirpletTransform::new(signal, grid, window)?.cube()
}

/// Read-only `(η, λ)` plane at one time index.
pub fn slice(cube: &TransformCube, ti: usize) -> Result<ArrayView2<'_, Complex64>> {
    let nt = cube.values.len_of(Axis(0));
    if ti >= nt {
        return Err(Error::OutOfRange { index: ti, len: nt });
    }
    Ok(cube.values.index_axis(Axis(0), ti))
}

/// STFT magnitude grid: the transform restricted to `λ = 0`.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    pub t_axis: Vec<f64>,
    pub eta_axis: Vec<f64>,
    /// Indexed `(t, η)`.
    pub values: Array2<Complex64>,
}

pub fn stft(
    signal: &SampledSignal,
    t_range: Option<[f64; 2]>,
    t_hop: usize,
    eta_range: [f64; 2],
    sigma: SigmaSpec,
    window: WindowSpec,
) -> Result<Spectrogram> {
    let spec = GridSpec {
        t_range,
        t_hop,
        eta_range,
        // Placeholder λ axis; only λ = 0 is evaluated.
        lambda_range: [0.0, 1.0],
        lambda_step: 1.0,
        sigma,
    };
    let grid = CubeGrid::new(signal, &spec, &window)?;
    let tr = ChirpletTransform::new(signal, grid, window)?;
    let nt = tr.grid().t_axis().len();
    let rows = (0..nt)
        .into_par_iter()
        .map(|ti| tr.plane_for_lambdas(ti, &[0.0]))
        .collect::<Result<Vec<_>>>()?;
    let mut values = Array2::zeros((nt, tr.grid().eta_len));
    for (ti, p) in rows.into_iter().enumerate() {
        values.row_mut(ti).assign(&p.values.column(0));
    }
    Ok(Spectrogram { t_axis: tr.grid().t_axis().to_vec(), eta_axis: tr.grid().eta_axis(), values })
}

/// Local-LFM model transform `Σ_k x_k(t) ğ(σ(η - φ'_k), σ²(λ - φ''_k))`.
pub fn p_oracle(model: &SignalModel, t: f64, eta: f64, lambda: f64, sigma: f64) -> Result<Complex64> {
    if !model.contains(t) {
        return Err(domain(format!("t = {t} outside model span")));
    }
    Ok(model
        .components()
        .iter()
        .map(|c| {
            c.value(t) * pft_closed(sigma * (eta - c.phase_d1(t)), sigma * sigma * (lambda - c.phase_d2(t)))
        })
        .sum())
}

const CUBE_MAGIC: &[u8; 8] = b"CT3SCUBE";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CubeHeader {
    format: String,
    version: u32,
    shape: [usize; 3],
    t_axis: Vec<f64>,
    eta_axis: Vec<f64>,
    lambda_axis: Vec<f64>,
    grid: CubeGrid,
    boundary_flags: Vec<bool>,
}

impl TransformCube {
    /// Binary container: 8-byte magic, u64 LE header length, JSON header,
    /// then little-endian f64 pairs `(re, im)` in row-major `(t, η, λ)` order.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let (nt, ne, nl) = self.grid.shape();
        let header = CubeHeader {
            format: "ct3s-cube".into(),
            version: 1,
            shape: [nt, ne, nl],
            t_axis: self.grid.t_axis.clone(),
            eta_axis: self.grid.eta_axis(),
            lambda_axis: self.grid.lambda_axis(),
            grid: self.grid.clone(),
            boundary_flags: self.boundary_flags.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(CUBE_MAGIC)?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        let mut data = Vec::with_capacity(self.values.len() * 16);
        for z in self.values.iter() {
            data.extend_from_slice(&z.re.to_le_bytes());
            data.extend_from_slice(&z.im.to_le_bytes());
        }
        out.write_all(&data)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CUBE_MAGIC {
            return Err(Error::Format("not a cube file".into()));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        input.read_exact(&mut json)?;
        let header: CubeHeader = serde_json::from_slice(&json)?;
        let [nt, ne, nl] = header.shape;
        let mut raw = vec![0u8; nt * ne * nl * 16];
        input.read_exact(&mut raw)?;
        let vals: Vec<Complex64> = raw
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                Complex64::new(re, im)
            })
            .collect();
        let values = Array3::from_shape_vec((nt, ne, nl), vals)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(TransformCube { grid: header.grid, values, boundary_flags: header.boundary_flags })
    }

    /// CSV of one time plane: `eta,lambda,re,im,abs`.
    pub fn write_slice_csv<W: Write>(&self, ti: usize, out: W) -> Result<()> {
        write_plane_csv(&self.grid, slice(self, ti)?, out)
    }
}

/// CSV of an `(η, λ)` plane on `grid`: `eta,lambda,re,im,abs`.
pub fn write_plane_csv<W: Write>(grid: &CubeGrid, plane: ArrayView2<'_, Complex64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["eta", "lambda", "re", "im", "abs"])?;
    for ((k, j), z) in plane.indexed_iter() {
        w.write_record([
            grid.eta(k).to_string(),
            grid.lambda(j).to_string(),
            z.re.to_string(),
            z.im.to_string(),
            z.norm().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
