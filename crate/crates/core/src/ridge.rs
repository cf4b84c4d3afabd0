//! Ridge extraction and component recovery.
//!
//! Each time slice is thresholded, the surviving grid points are grouped by
//! single linkage under `d((η,λ),(η',λ')) = |η-η'| + ρ|λ-λ'|` with cutoff
//! `Δ`, and the modulus maximum of every group becomes a ridge candidate.
//! Candidates are then associated across time and read back as the
//! recovered components.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use ndarray::ArrayView2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::transform::{ChirpletTransform, CubeGrid, TransformCube};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum Threshold {
    Absolute(f64),
    /// Fraction of the slice maximum of `|Q|`.
    Fraction(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Fraction(0.3)
    }
}

impl Threshold {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Threshold::Absolute(v) if v >= 0.0 && v.is_finite() => Ok(()),
            Threshold::Fraction(f) if f > 0.0 && f < 1.0 => Ok(()),
            t => Err(invalid(format!("bad threshold {t:?}"))),
        }
    }

    pub fn resolve(&self, plane: ArrayView2<'_, Complex64>) -> f64 {
        match *self {
            Threshold::Absolute(v) => v,
            Threshold::Fraction(f) => f * plane.iter().map(|z| z.norm()).fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationParams {
    pub threshold: Threshold,
    /// Seconds.
    pub rho: f64,
    /// Hz.
    pub delta: f64,
    /// Oscillating components, not counting a trend.
    pub expected_components: usize,
    #[serde(default)]
    pub trend: bool,
}

impl SeparationParams {
    pub fn validate(&self) -> Result<()> {
        self.threshold.validate()?;
        if !(self.rho > 0.0 && self.delta > 0.0) {
            return Err(invalid("ρ and Δ must be positive"));
        }
        if self.expected_components == 0 {
            return Err(invalid("expected_components must be at least 1"));
        }
        Ok(())
    }

    /// Number of tracked labels including the trend.
    pub fn labels(&self) -> usize {
        self.expected_components + usize::from(self.trend)
    }

    fn metric(&self, grid: &CubeGrid) -> Metric {
        Metric { eta_step: grid.eta_step(), lambda_step: grid.lambda_step(), rho: self.rho, delta: self.delta }
    }
}

/// The `d` metric on grid indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metric {
    pub eta_step: f64,
    pub lambda_step: f64,
    pub rho: f64,
    pub delta: f64,
}

impl Metric {
    pub fn between(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        a.0.abs_diff(b.0) as f64 * self.eta_step + self.rho * a.1.abs_diff(b.1) as f64 * self.lambda_step
    }
}

/// Grid points `(η index, λ index)` with `|Q|` strictly above the resolved threshold, row-major.
pub fn threshold_set(plane: ArrayView2<'_, Complex64>, threshold: Threshold) -> Vec<(usize, usize)> {
    let level = threshold.resolve(plane);
    plane
        .indexed_iter()
        .filter(|(_, z)| z.norm() > level)
        .map(|(ix, _)| ix)
        .collect()
}

/// A set of grid points sorted by `(η index, λ index)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cluster {
    pub points: Vec<(usize, usize)>,
}

/// Maximal run of consecutive η indices in one λ column.
#[derive(Clone, Copy, Debug)]
struct Run {
    lambda: usize,
    first: usize,
    last: usize,
}

impl Run {
    fn eta_gap(&self, other: &Run) -> usize {
        if other.first > self.last {
            other.first - self.last
        } else if self.first > other.last {
            self.first - other.last
        } else {
            0
        }
    }

    fn distance(&self, other: &Run, m: &Metric) -> f64 {
        self.eta_gap(other) as f64 * m.eta_step + m.rho * self.lambda.abs_diff(other.lambda) as f64 * m.lambda_step
    }
}

fn runs_of(points: &[(usize, usize)]) -> Vec<Run> {
    let mut sorted: Vec<(usize, usize)> = points.iter().map(|&(i, j)| (j, i)).collect();
    sorted.sort_unstable();
    sorted.dedup();
    let mut runs: Vec<Run> = Vec::new();
    for (j, i) in sorted {
        match runs.last_mut() {
            Some(r) if r.lambda == j && r.last + 1 == i => r.last = i,
            _ => runs.push(Run { lambda: j, first: i, last: i }),
        }
    }
    runs
}

struct DisjointSet(Vec<usize>);

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet((0..n).collect())
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Single-linkage clusters: points closer than `Δ` in `d` end up together.
///
/// Clusters are ordered by their first point.
pub fn cluster(points: &[(usize, usize)], metric: &Metric) -> Vec<Cluster> {
    let runs = runs_of(points);
    let mut sets = DisjointSet::new(runs.len());
    let lambda_reach = if metric.rho * metric.lambda_step > 0.0 {
        (metric.delta / (metric.rho * metric.lambda_step)).ceil() as usize
    } else {
        usize::MAX
    };
    let max_column = runs.last().map_or(0, |r| r.lambda);
    let mut by_column: HashMap<usize, Vec<usize>> = HashMap::new();
    for (r, run) in runs.iter().enumerate() {
        by_column.entry(run.lambda).or_default().push(r);
    }
    for (a, run) in runs.iter().enumerate() {
        let hi = run.lambda.saturating_add(lambda_reach).min(max_column);
        for j in run.lambda..=hi {
            let Some(column) = by_column.get(&j) else { continue };
            for &b in column {
                if b > a && run.distance(&runs[b], metric) < metric.delta {
                    sets.union(a, b);
                }
            }
        }
    }
    let mut groups: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
    for (r, run) in runs.iter().enumerate() {
        let root = sets.find(r);
        groups.entry(root).or_default().extend((run.first..=run.last).map(|i| (i, run.lambda)));
    }
    let mut clusters: Vec<Cluster> = groups
        .into_values()
        .map(|mut points| {
            points.sort_unstable();
            Cluster { points }
        })
        .collect();
    clusters.sort_by_key(|c| c.points[0]);
    clusters
}

/// Smallest `d` between points of different clusters, `None` with fewer than two clusters.
pub fn min_cluster_distance(clusters: &[Cluster], metric: &Metric) -> Option<f64> {
    let runs: Vec<Vec<Run>> = clusters.iter().map(|c| runs_of(&c.points)).collect();
    let mut best: Option<f64> = None;
    for a in 0..runs.len() {
        for b in a + 1..runs.len() {
            for ra in &runs[a] {
                for rb in &runs[b] {
                    let d = ra.distance(rb, metric);
                    best = Some(best.map_or(d, |v| v.min(d)));
                }
            }
        }
    }
    best
}

/// A ridge candidate at one time slice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub eta_index: usize,
    pub lambda_index: usize,
    pub eta: f64,
    pub lambda: f64,
    pub q: Complex64,
}

/// Modulus maximum of each cluster; ties go to the smallest η index, then λ index.
pub fn argmax_per_cluster(plane: ArrayView2<'_, Complex64>, clusters: &[Cluster], grid: &CubeGrid) -> Vec<Peak> {
    clusters
        .iter()
        .filter(|c| !c.points.is_empty())
        .map(|c| {
            let mut best = c.points[0];
            let mut best_abs = plane[best].norm();
            for &p in &c.points[1..] {
                let v = plane[p].norm();
                if v > best_abs || (v == best_abs && p < best) {
                    best = p;
                    best_abs = v;
                }
            }
            Peak { eta_index: best.0, lambda_index: best.1, eta: grid.eta(best.0), lambda: grid.lambda(best.1), q: plane[best] }
        })
        .collect()
}

/// Everything the tracker and diagnostics need from one slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceResult {
    pub t: f64,
    pub threshold: f64,
    pub point_count: usize,
    pub cluster_count: usize,
    pub min_cluster_distance: Option<f64>,
    pub peaks: Vec<Peak>,
    pub boundary: bool,
}

pub fn analyze_slice(
    plane: ArrayView2<'_, Complex64>,
    t: f64,
    boundary: bool,
    grid: &CubeGrid,
    params: &SeparationParams,
) -> SliceResult {
    let metric = params.metric(grid);
    let points = threshold_set(plane, params.threshold);
    let clusters = cluster(&points, &metric);
    SliceResult {
        t,
        threshold: params.threshold.resolve(plane),
        point_count: points.len(),
        cluster_count: clusters.len(),
        min_cluster_distance: min_cluster_distance(&clusters, &metric),
        peaks: argmax_per_cluster(plane, &clusters, grid),
        boundary,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceFlags {
    /// No grid point above threshold.
    pub empty: bool,
    /// More clusters than labels; the weakest were dropped.
    pub excess: bool,
    /// Fewer clusters than labels.
    pub gap: bool,
    pub boundary: bool,
}

impl SliceFlags {
    pub fn any(&self) -> bool {
        self.empty || self.excess || self.gap || self.boundary
    }
}

impl fmt::Display for SliceFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.empty, "empty"), (self.excess, "excess"), (self.gap, "gap"), (self.boundary, "boundary")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect();
        if names.is_empty() {
            f.write_str("ok")
        } else {
            f.write_str(&names.join("|"))
        }
    }
}

/// Ridge traces, one per label; label 0 is the trend when one is expected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeSet {
    pub t_axis: Vec<f64>,
    /// `tracks[k][n]` is component `k` at `t_axis[n]`; `None` marks a gap.
    pub tracks: Vec<Vec<Option<Peak>>>,
    pub flags: Vec<SliceFlags>,
    pub trend: bool,
}

impl RidgeSet {
    pub fn components(&self) -> usize {
        self.tracks.len()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["component", "t", "eta_hat", "lambda_hat", "q_re", "q_im", "flag"])?;
        for (k, track) in self.tracks.iter().enumerate() {
            for (n, p) in track.iter().enumerate() {
                let t = self.t_axis[n].to_string();
                let mut flag = self.flags[n];
                match p {
                    Some(p) => w.write_record([
                        k.to_string(),
                        t,
                        p.eta.to_string(),
                        p.lambda.to_string(),
                        p.q.re.to_string(),
                        p.q.im.to_string(),
                        flag.to_string(),
                    ])?,
                    None => {
                        flag.gap = true;
                        w.write_record([k.to_string(), t, String::new(), String::new(), String::new(), String::new(), flag.to_string()])?
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn predict(history: &[(f64, f64, f64)], t: f64) -> Option<(f64, f64)> {
    match history {
        [] => None,
        [.., (_, e, l)] if history.len() == 1 => Some((*e, *l)),
        [.., (t0, e0, l0), (t1, e1, l1)] => {
            let s = (t - t1) / (t1 - t0);
            Some((e1 + (e1 - e0) * s, l1 + (l1 - l0) * s))
        }
        _ => unreachable!(),
    }
}

/// Associates per-slice peaks with component labels over time.
///
/// Each label is predicted by linear extrapolation from its last two
/// detections (or its last detection when only one exists) and pairs are
/// matched greedily by smallest `d`. The first slice orders peaks by `λ̂`
/// then `η̂`.
pub fn track(slices: &[SliceResult], params: &SeparationParams) -> Result<RidgeSet> {
    params.validate()?;
    let labels = params.labels();
    let k = params.expected_components;
    let first_osc = usize::from(params.trend);
    let mut tracks: Vec<Vec<Option<Peak>>> = vec![Vec::with_capacity(slices.len()); labels];
    let mut history: Vec<Vec<(f64, f64, f64)>> = vec![Vec::new(); labels];
    let mut flags = Vec::with_capacity(slices.len());
    let d = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() + params.rho * (a.1 - b.1).abs();

    for slice in slices {
        let mut flag = SliceFlags { boundary: slice.boundary, empty: slice.point_count == 0, ..Default::default() };
        let mut peaks = slice.peaks.clone();
        let mut assigned: Vec<Option<Peak>> = vec![None; labels];

        if params.trend && !peaks.is_empty() {
            let nearest = (0..peaks.len())
                .min_by(|&a, &b| d((peaks[a].eta, peaks[a].lambda), (0.0, 0.0)).total_cmp(&d((peaks[b].eta, peaks[b].lambda), (0.0, 0.0))))
                .expect("non-empty");
            assigned[0] = Some(peaks.remove(nearest));
        }
        if peaks.len() > k {
            flag.excess = true;
            peaks.sort_by(|a, b| b.q.norm().total_cmp(&a.q.norm()));
            peaks.truncate(k);
        }

        let predictions: Vec<Option<(f64, f64)>> =
            (first_osc..labels).map(|l| predict(&history[l], slice.t)).collect();
        if predictions.iter().all(Option::is_none) {
            peaks.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.eta.total_cmp(&b.eta)));
            for (i, p) in peaks.into_iter().enumerate() {
                assigned[first_osc + i] = Some(p);
            }
        } else {
            let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
            for (li, pred) in predictions.iter().enumerate() {
                if let Some(pred) = pred {
                    for (pi, p) in peaks.iter().enumerate() {
                        pairs.push((d(*pred, (p.eta, p.lambda)), li, pi));
                    }
                }
            }
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut label_used = vec![false; predictions.len()];
            let mut peak_used = vec![false; peaks.len()];
            for (_, li, pi) in pairs {
                if !label_used[li] && !peak_used[pi] {
                    label_used[li] = true;
                    peak_used[pi] = true;
                    assigned[first_osc + li] = Some(peaks[pi]);
                }
            }
            let mut spare = (0..peaks.len()).filter(|&pi| !peak_used[pi]);
            for li in 0..predictions.len() {
                if predictions[li].is_none() {
                    if let Some(pi) = spare.next() {
                        assigned[first_osc + li] = Some(peaks[pi]);
                    }
                }
            }
        }

        for (l, a) in assigned.into_iter().enumerate() {
            if let Some(p) = a {
                history[l].push((slice.t, p.eta, p.lambda));
                if history[l].len() > 2 {
                    history[l].remove(0);
                }
            } else {
                flag.gap = true;
            }
            tracks[l].push(a);
        }
        flags.push(flag);
    }
    Ok(RidgeSet { t_axis: slices.iter().map(|s| s.t).collect(), tracks, flags, trend: params.trend })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveredComponent {
    pub component_index: usize,
    pub t_axis: Vec<f64>,
    /// `None` where the ridge has a gap.
    pub samples: Vec<Option<Complex64>>,
    pub amplitude_estimate: Vec<Option<f64>>,
}

impl RecoveredComponent {
    fn from_track(component_index: usize, t_axis: &[f64], values: Vec<Option<Complex64>>) -> Self {
        RecoveredComponent {
            component_index,
            t_axis: t_axis.to_vec(),
            amplitude_estimate: values.iter().map(|v| v.map(|z| z.norm())).collect(),
            samples: values,
        }
    }
}

/// Reads each ridge's transform value from the cube.
pub fn retrieve(cube: &TransformCube, ridge: &RidgeSet) -> Result<Vec<RecoveredComponent>> {
    let (nt, ne, nl) = cube.grid.shape();
    if ridge.t_axis.len() != nt {
        return Err(invalid("ridge and cube have different time axes"));
    }
    ridge
        .tracks
        .iter()
        .enumerate()
        .map(|(k, track)| {
            let values = track
                .iter()
                .enumerate()
                .map(|(n, p)| match p {
                    None => Ok(None),
                    Some(p) if p.eta_index < ne && p.lambda_index < nl => {
                        Ok(Some(cube.values[[n, p.eta_index, p.lambda_index]]))
                    }
                    Some(p) => Err(Error::OutOfRange { index: p.eta_index.max(p.lambda_index), len: ne.min(nl) }),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RecoveredComponent::from_track(k, &ridge.t_axis, values))
        })
        .collect()
}

/// Recovery straight from the ridge peaks, which carry the same cube values.
pub fn retrieve_from_ridge(ridge: &RidgeSet) -> Vec<RecoveredComponent> {
    ridge
        .tracks
        .iter()
        .enumerate()
        .map(|(k, track)| RecoveredComponent::from_track(k, &ridge.t_axis, track.iter().map(|p| p.map(|p| p.q)).collect()))
        .collect()
}

pub fn write_recovered_csv<W: Write>(components: &[RecoveredComponent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["component", "t", "re", "im", "amp"])?;
    for c in components {
        for (n, s) in c.samples.iter().enumerate() {
            let t = c.t_axis[n].to_string();
            match s {
                Some(z) => w.write_record([
                    c.component_index.to_string(),
                    t,
                    z.re.to_string(),
                    z.im.to_string(),
                    z.norm().to_string(),
                ])?,
                None => w.write_record([c.component_index.to_string(), t, String::new(), String::new(), String::new()])?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Output of the full separation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Separation {
    pub slices: Vec<SliceResult>,
    pub ridges: RidgeSet,
    pub components: Vec<RecoveredComponent>,
}

/// Slice analysis over a stored cube.
pub fn analyze_cube(cube: &TransformCube, params: &SeparationParams) -> Result<Vec<SliceResult>> {
    params.validate()?;
    let nt = cube.grid.shape().0;
    Ok((0..nt)
        .into_par_iter()
        .map(|ti| {
            let plane = cube.values.index_axis(ndarray::Axis(0), ti);
            analyze_slice(plane, cube.grid.t_axis()[ti], cube.boundary_flags[ti], &cube.grid, params)
        })
        .collect())
}

/// Slice analysis computing one plane at a time, so the cube is never held in memory.
pub fn analyze_streaming(transform: &ChirpletTransform<'_>, params: &SeparationParams) -> Result<Vec<SliceResult>> {
    params.validate()?;
    let grid = transform.grid();
    (0..grid.shape().0)
        .into_par_iter()
        .map(|ti| {
            let plane = transform.plane(ti)?;
            Ok(analyze_slice(plane.values.view(), grid.t_axis()[ti], plane.boundary, grid, params))
        })
        .collect()
}

pub fn separate(transform: &ChirpletTransform<'_>, params: &SeparationParams) -> Result<Separation> {
    let slices = analyze_streaming(transform, params)?;
    let ridges = track(&slices, params)?;
    let components = retrieve_from_ridge(&ridges);
    Ok(Separation { slices, ridges, components })
}
