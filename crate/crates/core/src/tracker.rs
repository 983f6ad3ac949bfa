//! Lagrangian markers carried by the computed velocity, per-bubble
//! statistics, and the empirical checks built on them.
//!
//! Velocity snapshots arrive in time order. Markers are advanced one snapshot
//! interval at a time with RK4; in space the velocity is interpolated with an
//! 8-point tensor Lagrange stencil on the parity-extended lattice, in time by a
//! cubic through the four nearest snapshots.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BubbleSpec, DataSpec};
use crate::spectral::{Field, MultiplierSpec, SpectralError, SpectralOps, Spectrum};

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("marker {index} (bubble {bubble}) left the open quarter at t = {t}: {x:?}")]
    AxisCrossing { index: usize, bubble: u32, t: f64, x: [f64; 2] },
    #[error("snapshot times must increase: {prev} then {next}")]
    Time { prev: f64, next: f64 },
    #[error("snapshot grid differs from the first one")]
    Grid,
    #[error("bubble {n}: {cells} quadrature cells inside the support, need at least {min}")]
    Coverage { n: u32, cells: usize, min: usize },
    #[error("bubble {0} is not tracked")]
    UnknownBubble(u32),
    #[error("T_{ell} is beyond the simulated horizon {horizon}")]
    BeyondHorizon { ell: u32, horizon: f64 },
    #[error("invalid marker policy: {0}")]
    Policy(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

const PAD: usize = 4;

/// Lattice values extended by parity into a `PAD`-cell halo, for local
/// interpolation near the axes.
#[derive(Clone, Debug)]
pub struct PaddedField {
    data: Array2<f64>,
    h: f64,
}

fn lagrange_weights(s: f64, lo: i32, w: &mut [f64]) {
    let n = w.len() as i32;
    for k in 0..n {
        let mut p = 1.0;
        for m in 0..n {
            if m != k {
                p *= (s - (lo + m) as f64) / (k - m) as f64;
            }
        }
        w[k as usize] = p;
    }
}

impl PaddedField {
    pub fn new(field: &Field) -> Self {
        let l = field.grid().half() as isize;
        let p = PAD as isize;
        let n = (l + 1 + 2 * p) as usize;
        let data = Array2::from_shape_fn((n, n), |(i, j)| field.torus_value(i as isize - p, j as isize - p));
        Self { data, h: field.grid().spacing() }
    }

    fn eval_order(&self, x: [f64; 2], order: usize) -> f64 {
        let lo = -(order as i32 / 2 - 1);
        let mut w = [[0.0; 8]; 2];
        let mut base = [0isize; 2];
        for a in 0..2 {
            let y = x[a] / self.h;
            let i0 = y.floor();
            lagrange_weights(y - i0, lo, &mut w[a][..order]);
            base[a] = i0 as isize + lo as isize + PAD as isize;
        }
        let max = self.data.nrows() as isize - order as isize;
        let (b0, b1) = (base[0].clamp(0, max) as usize, base[1].clamp(0, max) as usize);
        let mut s = 0.0;
        for (p, wp) in w[0][..order].iter().enumerate() {
            let row = self.data.row(b0 + p);
            let mut r = 0.0;
            for (q, wq) in w[1][..order].iter().enumerate() {
                r += wq * row[b1 + q];
            }
            s += wp * r;
        }
        s
    }

    /// 8-point tensor Lagrange interpolation.
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.eval_order(x, 8)
    }

    /// Difference between the 8- and 6-point interpolants, a local error proxy.
    pub fn error_estimate(&self, x: [f64; 2]) -> f64 {
        (self.eval_order(x, 8) - self.eval_order(x, 6)).abs()
    }

    fn combine(parts: &[(f64, &PaddedField)]) -> PaddedField {
        let mut data = parts[0].1.data.clone() * parts[0].0;
        for (w, f) in &parts[1..] {
            data.scaled_add(*w, &f.data);
        }
        PaddedField { data, h: parts[0].1.h }
    }
}

/// Velocity and scalar at one time, ready for interpolation.
#[derive(Clone, Debug)]
pub struct TrackerSnapshot {
    pub t: f64,
    pub u1: PaddedField,
    pub u2: PaddedField,
    pub theta: PaddedField,
    /// the spectrum the fields came from, kept for frame-time diagnostics
    pub spectrum: Option<Spectrum>,
    resolution: usize,
}

impl TrackerSnapshot {
    pub fn from_fields(t: f64, u1: &Field, u2: &Field, theta: &Field) -> Self {
        Self {
            t,
            u1: PaddedField::new(u1),
            u2: PaddedField::new(u2),
            theta: PaddedField::new(theta),
            spectrum: None,
            resolution: theta.grid().resolution(),
        }
    }

    pub fn from_spectrum(ops: &SpectralOps, t: f64, theta: &Spectrum, mult: &MultiplierSpec) -> Result<Self, SpectralError> {
        let (u1, u2) = ops.velocity_from_scalar(theta, mult)?;
        let mut snap = Self::from_fields(t, &ops.inverse(&u1)?, &ops.inverse(&u2)?, &ops.inverse(theta)?);
        snap.spectrum = Some(theta.clone());
        Ok(snap)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerKind {
    /// boundary of the support
    Ring,
    /// boundary of the plateau
    CoreRing,
    Interior,
    Top,
    Center,
    Quadrature,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub bubble: u32,
    pub kind: MarkerKind,
    /// index within the bubble
    pub label: usize,
    pub x0: [f64; 2],
    pub theta0: f64,
    /// quadrature weight times `theta0` (zero for non-quadrature markers)
    pub mass: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerPolicy {
    pub ring: usize,
    /// interior sub-grid is `interior x interior` inside the plateau
    pub interior: usize,
    /// quadrature cells per side of the support square
    pub quadrature: usize,
}

impl Default for MarkerPolicy {
    fn default() -> Self {
        Self { ring: 256, interior: 8, quadrature: 16 }
    }
}

const MIN_QUADRATURE_CELLS: usize = 32;

#[derive(Clone, Debug)]
pub struct MarkerSet {
    pub bubbles: Vec<BubbleSpec>,
    pub markers: Vec<Marker>,
}

impl MarkerSet {
    pub fn seed(spec: &DataSpec, policy: &MarkerPolicy) -> Result<Self, TrackerError> {
        if policy.ring < 64 {
            return Err(TrackerError::Policy(format!("ring = {} < 64", policy.ring)));
        }
        if policy.interior == 0 {
            return Err(TrackerError::Policy("interior must be positive".into()));
        }
        let bubbles = spec.bubbles();
        let mut markers = Vec::new();
        for b in &bubbles {
            let mut label = 0;
            let mut push = |kind, x: [f64; 2], mass: f64, markers: &mut Vec<Marker>| {
                markers.push(Marker { bubble: b.n, kind, label, x0: x, theta0: b.value(x), mass });
                label += 1;
            };
            let c = b.center;
            for (kind, r) in [(MarkerKind::Ring, b.support_radius), (MarkerKind::CoreRing, b.core_radius)] {
                for k in 0..policy.ring {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / policy.ring as f64;
                    push(kind, [c[0] + r * a.cos(), c[1] + r * a.sin()], 0.0, &mut markers);
                }
            }
            let half = b.core_radius / std::f64::consts::SQRT_2;
            let m = policy.interior;
            for i in 0..m {
                for j in 0..m {
                    let f = |k: usize| if m == 1 { 0.0 } else { -half + 2.0 * half * k as f64 / (m - 1) as f64 };
                    push(MarkerKind::Interior, [c[0] + f(i), c[1] + f(j)], 0.0, &mut markers);
                }
            }
            push(MarkerKind::Top, b.top_point(), 0.0, &mut markers);
            push(MarkerKind::Center, c, 0.0, &mut markers);
            let q = policy.quadrature;
            let cell = 2.0 * b.support_radius / q as f64;
            let mut cells = 0;
            for i in 0..q {
                for j in 0..q {
                    let x = [
                        c[0] - b.support_radius + (i as f64 + 0.5) * cell,
                        c[1] - b.support_radius + (j as f64 + 0.5) * cell,
                    ];
                    let v = b.value(x);
                    if v > 0.0 {
                        cells += 1;
                        push(MarkerKind::Quadrature, x, v * cell * cell, &mut markers);
                    }
                }
            }
            if cells < MIN_QUADRATURE_CELLS {
                return Err(TrackerError::Coverage { n: b.n, cells, min: MIN_QUADRATURE_CELLS });
            }
        }
        Ok(Self { bubbles, markers })
    }

    pub fn bubble(&self, n: u32) -> Result<&BubbleSpec, TrackerError> {
        self.bubbles.iter().find(|b| b.n == n).ok_or(TrackerError::UnknownBubble(n))
    }

    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }

    pub fn initial_positions(&self) -> Vec<[f64; 2]> {
        self.markers.iter().map(|m| m.x0).collect()
    }

    /// Indices of the markers of bubble `n` of the given kind, in label order.
    pub fn indices(&self, n: u32, kind: MarkerKind) -> Vec<usize> {
        self.markers.iter().enumerate().filter(|(_, m)| m.bubble == n && m.kind == kind).map(|(i, _)| i).collect()
    }
}

/// Sup/inf of the transported coordinates over a set of markers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub sup1: f64,
    pub inf1: f64,
    pub sup2: f64,
}

impl Extent {
    fn of(points: impl Iterator<Item = [f64; 2]>) -> Self {
        let mut e = Extent { sup1: f64::NEG_INFINITY, inf1: f64::INFINITY, sup2: f64::NEG_INFINITY };
        for p in points {
            e.sup1 = e.sup1.max(p[0]);
            e.inf1 = e.inf1.min(p[0]);
            e.sup2 = e.sup2.max(p[1]);
        }
        e
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BubbleStats {
    pub n: u32,
    /// over the image of the support
    pub support: Extent,
    /// over the image of the plateau
    pub core: Extent,
    pub interaction: f64,
    /// area enclosed by the transported support ring
    pub ring_area: f64,
    /// largest distance of the transported support ring from the initial centre
    pub ring_reach: f64,
}

#[derive(Clone, Debug)]
pub struct Frame {
    pub t: f64,
    pub positions: Vec<[f64; 2]>,
    pub stats: Vec<BubbleStats>,
    /// largest 8-vs-6 point velocity interpolation difference at this time
    pub interp_error: f64,
    /// `|theta(t, X) - theta(0, x0)| / amplitude` for each interior marker,
    /// bubble by bubble
    pub transport_error: Vec<f64>,
}

fn polygon_area(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s.abs()
}

/// Groups of marker indices for one bubble.
#[derive(Clone, Debug)]
struct BubbleIndex {
    spec: BubbleSpec,
    ring: Vec<usize>,
    core: Vec<usize>,
    quad: Vec<usize>,
    interior: Vec<usize>,
}

/// Streaming integrator. Feed snapshots in time order with [`Tracker::push`];
/// frames are emitted at snapshot times as the markers reach them.
pub struct Tracker {
    set: MarkerSet,
    groups: Vec<BubbleIndex>,
    current: Vec<[f64; 2]>,
    buffer: Vec<TrackerSnapshot>,
    /// buffer index of the markers' current time
    at: usize,
    frames: Vec<Frame>,
    substeps: usize,
    /// computed initial scalar at the interior markers
    theta_ref: Vec<f64>,
}

impl Tracker {
    pub fn new(set: MarkerSet) -> Self {
        let groups = set
            .bubbles
            .iter()
            .map(|b| BubbleIndex {
                spec: *b,
                ring: set.indices(b.n, MarkerKind::Ring),
                core: [MarkerKind::CoreRing, MarkerKind::Interior, MarkerKind::Center]
                    .iter()
                    .flat_map(|k| set.indices(b.n, *k))
                    .collect(),
                quad: set.indices(b.n, MarkerKind::Quadrature),
                interior: [MarkerKind::Interior, MarkerKind::Center].iter().flat_map(|k| set.indices(b.n, *k)).collect(),
            })
            .collect();
        let current = set.initial_positions();
        Self { set, groups, current, buffer: Vec::new(), at: 0, frames: Vec::new(), substeps: 1, theta_ref: Vec::new() }
    }

    /// RK4 substeps per snapshot interval.
    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps.max(1);
        self
    }

    pub fn markers(&self) -> &MarkerSet {
        &self.set
    }

    fn frame(&self, snap: &TrackerSnapshot, interp_error: f64) -> Frame {
        let p = &self.current;
        let mut stats = Vec::with_capacity(self.groups.len());
        let mut transport_error = Vec::new();
        for g in &self.groups {
            let b = &g.spec;
            let ring: Vec<[f64; 2]> = g.ring.iter().map(|&i| p[i]).collect();
            let mut support_pts = ring.clone();
            support_pts.extend(g.core.iter().map(|&i| p[i]));
            let interaction = g
                .quad
                .iter()
                .map(|&i| {
                    let y = p[i];
                    let r2 = y[0] * y[0] + y[1] * y[1];
                    self.set.markers[i].mass * y[0] * y[1] / (r2 * r2 * r2.sqrt())
                })
                .sum();
            let ring_reach = ring.iter().fold(0.0f64, |m, y| m.max((y[0] - b.center[0]).hypot(y[1] - b.center[1])));
            stats.push(BubbleStats {
                n: b.n,
                support: Extent::of(support_pts.into_iter()),
                core: Extent::of(g.core.iter().map(|&i| p[i])),
                interaction,
                ring_area: polygon_area(&ring),
                ring_reach,
            });
            for &i in &g.interior {
                let k = transport_error.len();
                let reference = self.theta_ref.get(k).copied().unwrap_or(self.set.markers[i].theta0);
                transport_error.push((snap.theta.eval(p[i]) - reference).abs() / b.amplitude);
            }
        }
        Frame { t: snap.t, positions: p.clone(), stats, interp_error, transport_error }
    }

    /// Cubic-in-time blend of the buffered snapshots `lo..lo+4` (fewer at
    /// the start) at time `t`.
    fn blend(&self, lo: usize, hi: usize, t: f64) -> (PaddedField, PaddedField) {
        let times: Vec<f64> = self.buffer[lo..hi].iter().map(|s| s.t).collect();
        let mut parts1 = Vec::new();
        let mut parts2 = Vec::new();
        for k in 0..times.len() {
            let mut w = 1.0;
            for m in 0..times.len() {
                if m != k {
                    w *= (t - times[m]) / (times[k] - times[m]);
                }
            }
            if w != 0.0 {
                parts1.push((w, &self.buffer[lo + k].u1));
                parts2.push((w, &self.buffer[lo + k].u2));
            }
        }
        (PaddedField::combine(&parts1), PaddedField::combine(&parts2))
    }

    fn advance(&mut self) -> Result<f64, TrackerError> {
        let i = self.at;
        let hi = (i + 3).min(self.buffer.len());
        let lo = hi.saturating_sub(4);
        let (t0, t1) = (self.buffer[i].t, self.buffer[i + 1].t);
        let dt = (t1 - t0) / self.substeps as f64;
        let mut err = 0.0f64;
        for s in 0..self.substeps {
            let ts = t0 + s as f64 * dt;
            let f0 = self.blend(lo, hi, ts);
            let fm = self.blend(lo, hi, ts + 0.5 * dt);
            let f1 = self.blend(lo, hi, ts + dt);
            let vel = |f: &(PaddedField, PaddedField), x: [f64; 2]| [f.0.eval(x), f.1.eval(x)];
            for x in self.current.iter_mut() {
                if s == 0 {
                    err = err.max(f0.0.error_estimate(*x)).max(f0.1.error_estimate(*x));
                }
                let k1 = vel(&f0, *x);
                let k2 = vel(&fm, [x[0] + 0.5 * dt * k1[0], x[1] + 0.5 * dt * k1[1]]);
                let k3 = vel(&fm, [x[0] + 0.5 * dt * k2[0], x[1] + 0.5 * dt * k2[1]]);
                let k4 = vel(&f1, [x[0] + dt * k3[0], x[1] + dt * k3[1]]);
                for a in 0..2 {
                    x[a] += dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
                }
            }
            for (index, x) in self.current.iter().enumerate() {
                if !(x[0] > 0.0 && x[1] > 0.0 && x[0] < 1.0 && x[1] < 1.0) {
                    let bubble = self.set.markers[index].bubble;
                    return Err(TrackerError::AxisCrossing { index, bubble, t: ts + dt, x: *x });
                }
            }
        }
        self.at += 1;
        Ok(err)
    }

    fn drain(&mut self, all: bool, on_frame: &mut impl FnMut(&Frame, &TrackerSnapshot)) -> Result<(), TrackerError> {
        while self.at + 1 < self.buffer.len() && (all || self.at + 3 <= self.buffer.len()) {
            let err = self.advance()?;
            let f = self.frame(&self.buffer[self.at], err);
            on_frame(&f, &self.buffer[self.at]);
            self.frames.push(f);
            if self.at >= 2 {
                self.buffer.remove(0);
                self.at -= 1;
            }
        }
        Ok(())
    }

    pub fn push(&mut self, snap: TrackerSnapshot, mut on_frame: impl FnMut(&Frame, &TrackerSnapshot)) -> Result<(), TrackerError> {
        if let Some(last) = self.buffer.last() {
            if snap.t <= last.t {
                return Err(TrackerError::Time { prev: last.t, next: snap.t });
            }
            if snap.resolution != last.resolution {
                return Err(TrackerError::Grid);
            }
        }
        self.buffer.push(snap);
        if self.frames.is_empty() {
            let snap = &self.buffer[0];
            self.theta_ref = self.groups.iter().flat_map(|g| g.interior.iter().map(|&i| snap.theta.eval(self.current[i]))).collect();
            let f = self.frame(&self.buffer[0], 0.0);
            on_frame(&f, &self.buffer[0]);
            self.frames.push(f);
        }
        self.drain(false, &mut on_frame)
    }

    pub fn finish(mut self, mut on_frame: impl FnMut(&Frame, &TrackerSnapshot)) -> Result<Trace, TrackerError> {
        self.drain(true, &mut on_frame)?;
        let transport_bubble = self.groups.iter().flat_map(|g| g.interior.iter().map(|_| g.spec.n)).collect();
        Ok(Trace { markers: self.set, frames: self.frames, transport_bubble })
    }
}

/// Run a tracker over a finished sequence of snapshots.
pub fn trace(set: MarkerSet, snapshots: impl IntoIterator<Item = TrackerSnapshot>) -> Result<Trace, TrackerError> {
    let mut tr = Tracker::new(set);
    for s in snapshots {
        tr.push(s, |_, _| {})?;
    }
    tr.finish(|_, _| {})
}

/// Complete marker history.
#[derive(Clone, Debug)]
pub struct Trace {
    pub markers: MarkerSet,
    pub frames: Vec<Frame>,
    /// bubble of each entry of `Frame::transport_error`
    pub transport_bubble: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Claim1Result {
    pub n: u32,
    /// first time `sup Phi1 > 2 inf Phi1` on the plateau image
    pub spread_violation: Option<f64>,
    /// first time `2 sup Phi1(n+1) > inf Phi1(n)`; `None` also for the last bubble
    pub order_violation: Option<f64>,
    pub first_violation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Claim1Report {
    pub bubbles: Vec<Claim1Result>,
    /// earliest violation, or the end of the trace
    pub window: f64,
    /// `window * (1 + M)`
    pub c_emp: f64,
    pub holds_initially: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitTime {
    pub n: u32,
    pub exit: Option<f64>,
    /// `n^(alpha - 1)`
    pub predicted_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub ell: u32,
    pub t_ell: f64,
    /// `(n, x2hat / Phi2hat(T_ell))`
    pub ratios: Vec<(u32, f64)>,
    pub nondecreasing: bool,
    /// least-squares slope through the origin of `ln ratio` against `ln(n/ell)`
    pub c0_emp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Claim2Result {
    pub n: u32,
    /// `-(ln Phi2hat - ln x2hat) / sum int I_j` at the end of the window
    pub coefficient: Option<f64>,
    /// `max_t (ln(Phi2hat/x2hat) + 10 sum int I_j) / (M t)`
    pub c_emp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub pairs: usize,
    /// smallest `C` for which every sampled pair obeys the envelope
    pub c_emp: f64,
    /// envelope at `t = 0` is tight for every pair
    pub tight_at_zero: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportReport {
    pub markers: usize,
    pub within: usize,
    pub fraction: f64,
    pub worst: f64,
}

/// Least-squares slope of `ln T_n` against `ln n` over the bubbles that
/// exited, with the number of points used. Needs two distinct bubbles.
pub fn exit_time_slope(exits: &[ExitTime]) -> Option<(f64, usize)> {
    let pts: Vec<(f64, f64)> =
        exits.iter().filter_map(|e| e.exit.filter(|t| *t > 0.0).map(|t| ((e.n as f64).ln(), t.ln()))).collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some((sxy / sxx, pts.len()))
}

impl Trace {
    pub fn horizon(&self) -> f64 {
        self.frames.last().map_or(0.0, |f| f.t)
    }

    pub fn bubble_numbers(&self) -> Vec<u32> {
        self.markers.bubbles.iter().map(|b| b.n).collect()
    }

    fn slot(&self, n: u32) -> Result<usize, TrackerError> {
        self.markers.bubbles.iter().position(|b| b.n == n).ok_or(TrackerError::UnknownBubble(n))
    }

    /// End of each bubble's almost-invariance window (its exit time, or the
    /// horizon), in bubble order.
    pub fn windows(&self, alpha: f64) -> Vec<f64> {
        self.almost_invariance(alpha).iter().map(|e| e.exit.unwrap_or(self.horizon())).collect()
    }

    /// `Phi2hat^n(t)` series.
    pub fn sup2_series(&self, n: u32) -> Result<Vec<(f64, f64)>, TrackerError> {
        let k = self.slot(n)?;
        Ok(self.frames.iter().map(|f| (f.t, f.stats[k].support.sup2)).collect())
    }

    /// Interaction integral of bubble `n` at frame `frame`.
    pub fn interaction_integral(&self, n: u32, frame: usize) -> Result<f64, TrackerError> {
        Ok(self.frames[frame].stats[self.slot(n)?].interaction)
    }

    /// `int_0^t I_n` at every frame (trapezoid).
    pub fn interaction_primitive(&self, n: u32) -> Result<Vec<f64>, TrackerError> {
        let k = self.slot(n)?;
        let mut acc = vec![0.0];
        for w in self.frames.windows(2) {
            let s = acc.last().unwrap() + 0.5 * (w[1].t - w[0].t) * (w[0].stats[k].interaction + w[1].stats[k].interaction);
            acc.push(s);
        }
        Ok(acc)
    }

    pub fn claim1_check(&self, m: f64) -> Claim1Report {
        let nb = self.markers.bubbles.len();
        let mut bubbles = Vec::with_capacity(nb);
        for k in 0..nb {
            let mut spread = None;
            let mut order = None;
            for f in &self.frames {
                let c = f.stats[k].core;
                if spread.is_none() && c.sup1 > 2.0 * c.inf1 {
                    spread = Some(f.t);
                }
                if order.is_none() && k + 1 < nb && 2.0 * f.stats[k + 1].core.sup1 > c.inf1 {
                    order = Some(f.t);
                }
            }
            let first = match (spread, order) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            bubbles.push(Claim1Result { n: self.markers.bubbles[k].n, spread_violation: spread, order_violation: order, first_violation: first });
        }
        let window = bubbles.iter().filter_map(|b| b.first_violation).fold(self.horizon(), f64::min);
        let holds_initially = bubbles.iter().all(|b| b.first_violation.is_none_or(|t| t > 0.0));
        Claim1Report { bubbles, window, c_emp: window * (1.0 + m), holds_initially }
    }

    /// First time the transported support leaves `B(c_n, 2 r_n)`.
    pub fn almost_invariance(&self, alpha: f64) -> Vec<ExitTime> {
        self.markers
            .bubbles
            .iter()
            .enumerate()
            .map(|(k, b)| ExitTime {
                n: b.n,
                exit: self.frames.iter().find(|f| f.stats[k].ring_reach > 2.0 * b.support_radius).map(|f| f.t),
                predicted_scale: (b.n as f64).powf(alpha - 1.0),
            })
            .collect()
    }

    /// `x2hat^n / Phi2hat^n(t_ell)` with `Phi2hat` taken at the last frame
    /// not after `t_ell`.
    pub fn growth_ratio(&self, n: u32, t_ell: f64) -> Result<f64, TrackerError> {
        let k = self.slot(n)?;
        let f = self.frames.iter().rev().find(|f| f.t <= t_ell).unwrap_or(&self.frames[0]);
        Ok(self.frames[0].stats[k].support.sup2 / f.stats[k].support.sup2)
    }

    pub fn growth_fit(&self, ell: u32, alpha: f64) -> Result<GrowthFit, TrackerError> {
        self.slot(ell)?;
        let exits = self.almost_invariance(alpha);
        let t_ell = exits
            .iter()
            .find(|e| e.n == ell)
            .and_then(|e| e.exit)
            .ok_or(TrackerError::BeyondHorizon { ell, horizon: self.horizon() })?;
        let mut ratios = Vec::new();
        for b in self.markers.bubbles.iter().filter(|b| b.n > ell) {
            ratios.push((b.n, self.growth_ratio(b.n, t_ell)?));
        }
        let nondecreasing = ratios.windows(2).all(|w| w[1].1 >= w[0].1);
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (n, r) in &ratios {
            let x = (*n as f64 / ell as f64).ln();
            sxy += x * r.ln();
            sxx += x * x;
        }
        let c0_emp = if sxx > 0.0 { sxy / sxx } else { f64::NAN };
        Ok(GrowthFit { ell, t_ell, ratios, nondecreasing, c0_emp })
    }

    pub fn claim2_check(&self, m: f64, alpha: f64) -> Result<Vec<Claim2Result>, TrackerError> {
        let exits = self.almost_invariance(alpha);
        let prims: Vec<Vec<f64>> =
            self.markers.bubbles.iter().map(|b| self.interaction_primitive(b.n)).collect::<Result<_, _>>()?;
        let mut out = Vec::new();
        for (k, b) in self.markers.bubbles.iter().enumerate() {
            let x2hat = self.frames[0].stats[k].support.sup2;
            let end = exits[k].exit.unwrap_or(self.horizon());
            let mut c_emp = f64::NEG_INFINITY;
            let mut coefficient = None;
            for (i, f) in self.frames.iter().enumerate() {
                if f.t > end {
                    break;
                }
                let s: f64 = (0..k).map(|j| prims[j][i]).sum();
                let lr = (f.stats[k].support.sup2 / x2hat).ln();
                if f.t > 0.0 && m > 0.0 {
                    c_emp = c_emp.max((lr + 10.0 * s) / (m * f.t));
                }
                coefficient = if s > 0.0 { Some(-lr / s) } else { None };
            }
            out.push(Claim2Result { n: b.n, coefficient, c_emp });
        }
        Ok(out)
    }

    /// First time some bubble overtakes the next larger one:
    /// `Phi1hat^{n+1}(t) >= inf Phi1^n(t)` on the supports.
    pub fn ordering_chain(&self) -> Option<(u32, f64)> {
        let nb = self.markers.bubbles.len();
        for f in &self.frames {
            for k in 0..nb.saturating_sub(1) {
                if f.stats[k + 1].support.sup1 >= f.stats[k].support.inf1 {
                    return Some((self.markers.bubbles[k].n, f.t));
                }
            }
        }
        None
    }

    /// Largest relative change of each support-ring area, bubble `k` up to
    /// `ends[k]`.
    pub fn area_drift(&self, ends: &[f64]) -> Vec<(u32, f64)> {
        self.markers
            .bubbles
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let a0 = self.frames[0].stats[k].ring_area;
                let d = self
                    .frames
                    .iter()
                    .filter(|f| f.t <= ends[k])
                    .fold(0.0f64, |m, f| m.max((f.stats[k].ring_area / a0 - 1.0).abs()));
                (b.n, d)
            })
            .collect()
    }

    /// Per interior marker, the worst transport error while its bubble is
    /// inside its window (`ends[k]` for bubble `k`).
    pub fn transport_check(&self, tol: f64, ends: &[f64]) -> TransportReport {
        let count = self.frames[0].transport_error.len();
        let slot: Vec<usize> = self.transport_bubble.iter().map(|n| self.slot(*n).unwrap_or(0)).collect();
        let mut worst = vec![0.0f64; count];
        for f in &self.frames {
            for ((w, e), k) in worst.iter_mut().zip(&f.transport_error).zip(&slot) {
                if f.t <= ends[*k] {
                    *w = w.max(*e);
                }
            }
        }
        let within = worst.iter().filter(|w| **w <= tol).count();
        TransportReport {
            markers: count,
            within,
            fraction: if count == 0 { 1.0 } else { within as f64 / count as f64 },
            worst: worst.iter().fold(0.0f64, |m, w| m.max(*w)),
        }
    }

    /// `Phi2hat^n` strictly decreasing on frames spaced at least `spacing`
    /// apart, up to `until`.
    pub fn strictly_squeezed(&self, n: u32, spacing: f64, until: Option<f64>) -> Result<bool, TrackerError> {
        let series = self.sup2_series(n)?;
        let end = until.unwrap_or(f64::INFINITY);
        let mut last: Option<(f64, f64)> = None;
        for (t, v) in series.into_iter().filter(|(t, _)| *t <= end) {
            match last {
                None => last = Some((t, v)),
                Some((t0, v0)) if t - t0 >= spacing => {
                    if v >= v0 {
                        return Ok(false);
                    }
                    last = Some((t, v));
                }
                _ => {}
            }
        }
        Ok(true)
    }

    /// Random marker pairs with `|x - y| < 1/2`.
    pub fn sample_pairs(&self, count: usize, seed: u64) -> Vec<(usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.markers.len();
        let mut out = Vec::new();
        if n < 2 {
            return out;
        }
        let mut tries = 0;
        while out.len() < count && tries < 100 * count {
            tries += 1;
            let ij = sample(&mut rng, n, 2);
            let (i, j) = (ij.index(0), ij.index(1));
            let (a, b) = (self.markers.markers[i].x0, self.markers.markers[j].x0);
            let d = (a[0] - b[0]).hypot(a[1] - b[1]);
            if d > 0.0 && d < 0.5 {
                out.push((i, j));
            }
        }
        out
    }

    /// Smallest `C` with `d0^{exp(CMt)} <= d_t <= d0^{exp(-CMt)}` for every
    /// pair and frame up to `until`.
    pub fn flow_continuity_check(&self, pairs: &[(usize, usize)], m: f64, until: Option<f64>) -> ContinuityReport {
        let dist = |p: &[[f64; 2]], i: usize, j: usize| (p[i][0] - p[j][0]).hypot(p[i][1] - p[j][1]);
        let mut c_emp = 0.0f64;
        let f0 = &self.frames[0];
        let tight_at_zero = pairs.iter().all(|&(i, j)| {
            let d = dist(&f0.positions, i, j);
            let d0 = (self.markers.markers[i].x0[0] - self.markers.markers[j].x0[0])
                .hypot(self.markers.markers[i].x0[1] - self.markers.markers[j].x0[1]);
            (d - d0).abs() <= 1e-14 * d0.max(1.0)
        });
        let end = until.unwrap_or(f64::INFINITY);
        for f in self.frames.iter().filter(|f| f.t > 0.0 && f.t <= end) {
            for &(i, j) in pairs {
                let d0 = dist(&f0.positions, i, j);
                let dt = dist(&f.positions, i, j);
                if dt >= 1.0 || d0 >= 1.0 {
                    c_emp = f64::INFINITY;
                    continue;
                }
                let q = (dt.ln() / d0.ln()).ln().abs();
                if q > 0.0 {
                    c_emp = c_emp.max(if m > 0.0 { q / (m * f.t) } else { f64::INFINITY });
                }
            }
        }
        ContinuityReport { pairs: pairs.len(), c_emp, tight_at_zero }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{Grid, Parity, ODD_ODD};

    fn spec() -> DataSpec {
        DataSpec { n0: 3, n_max: 5, alpha: 0.55, scale_ratio: 2.35, outer_scale: 1.75 }
    }

    fn zero_snapshot(g: Grid, t: f64) -> TrackerSnapshot {
        let oe = [Parity::Odd, Parity::Even];
        let eo = [Parity::Even, Parity::Odd];
        TrackerSnapshot::from_fields(t, &Field::zeros(g, oe), &Field::zeros(g, eo), &Field::zeros(g, ODD_ODD))
    }

    #[test]
    fn lagrange_reproduces_polynomials() {
        let g = Grid::new(64).unwrap();
        // even-even field: a polynomial in x^2 and y^2 is parity consistent
        let f = Field::from_fn(g, [Parity::Even, Parity::Even], |x, y| 1.0 + x * x - 0.5 * y * y * y * y + x * x * y * y);
        let p = PaddedField::new(&f);
        for x in [[0.013f64, 0.41f64], [0.5, 0.5], [0.77, 0.002]] {
            let exact = 1.0 + x[0] * x[0] - 0.5 * x[1].powi(4) + x[0] * x[0] * x[1] * x[1];
            assert!((p.eval(x) - exact).abs() < 1e-12, "{x:?}");
        }
    }

    #[test]
    fn seeding_counts_and_coverage() {
        let set = MarkerSet::seed(&spec(), &MarkerPolicy::default()).unwrap();
        for b in &set.bubbles {
            let count = set.markers.iter().filter(|m| m.bubble == b.n).count();
            assert!(count >= 64);
            assert_eq!(set.indices(b.n, MarkerKind::Ring).len(), 256);
            assert_eq!(set.indices(b.n, MarkerKind::Interior).len(), 64);
        }
        assert!(set.markers.iter().all(|m| m.x0[0] > 0.0 && m.x0[1] > 0.0));
        let coarse = MarkerPolicy { quadrature: 4, ..Default::default() };
        assert!(matches!(MarkerSet::seed(&spec(), &coarse), Err(TrackerError::Coverage { .. })));
    }

    #[test]
    fn zero_velocity_is_identity() {
        let g = Grid::new(32).unwrap();
        let set = MarkerSet::seed(&spec(), &MarkerPolicy::default()).unwrap();
        let x0 = set.initial_positions();
        let tr = trace(set, (0..6).map(|k| zero_snapshot(g, 0.1 * k as f64))).unwrap();
        assert_eq!(tr.frames.len(), 6);
        for f in &tr.frames {
            assert_eq!(f.positions, x0);
        }
        let i0: Vec<f64> = tr.frames[0].stats.iter().map(|s| s.interaction).collect();
        let i5: Vec<f64> = tr.frames[5].stats.iter().map(|s| s.interaction).collect();
        assert_eq!(i0, i5);
        assert!(tr.almost_invariance(0.55).iter().all(|e| e.exit.is_none()));
        let c1 = tr.claim1_check(1.0);
        assert!(c1.bubbles.iter().all(|b| b.first_violation.is_none()));
        assert_eq!(tr.ordering_chain(), None);
        let pairs = tr.sample_pairs(50, 1);
        assert_eq!(pairs.len(), 50);
        let rep = tr.flow_continuity_check(&pairs, 1.0, None);
        assert!(rep.tight_at_zero);
        assert_eq!(rep.c_emp, 0.0);
        assert_eq!(tr.growth_ratio(5, 0.3).unwrap(), 1.0);
    }

    #[test]
    fn rigid_rotation_keeps_radius() {
        // u = (-(y - 1/2), x - 1/2) around the centre of the quarter
        let g = Grid::new(128).unwrap();
        let oe = [Parity::Odd, Parity::Even];
        let eo = [Parity::Even, Parity::Odd];
        let u1 = Field::from_fn(g, oe, |_, y| -(y - 0.5));
        let u2 = Field::from_fn(g, eo, |x, _| x - 0.5);
        let th = Field::zeros(g, ODD_ODD);
        let set = MarkerSet::seed(
            &DataSpec { n0: 1, n_max: 1, alpha: 0.55, scale_ratio: 2.0, outer_scale: 0.9 },
            &MarkerPolicy::default(),
        )
        .unwrap();
        let x0 = set.initial_positions();
        let dt = 0.02;
        let steps = 50;
        let tr = trace(set, (0..=steps).map(|k| TrackerSnapshot::from_fields(k as f64 * dt, &u1, &u2, &th))).unwrap();
        let last = tr.frames.last().unwrap();
        let t = last.t;
        for (a, b) in x0.iter().zip(&last.positions) {
            let r0 = (a[0] - 0.5).hypot(a[1] - 0.5);
            let r1 = (b[0] - 0.5).hypot(b[1] - 0.5);
            assert!((r1 - r0).abs() / t < 1e-6);
            // closed form: rotation by angle t
            let (s, c) = t.sin_cos();
            let e = [0.5 + c * (a[0] - 0.5) - s * (a[1] - 0.5), 0.5 + s * (a[0] - 0.5) + c * (a[1] - 0.5)];
            assert!((e[0] - b[0]).hypot(e[1] - b[1]) < 1e-8);
        }
        assert!(tr.area_drift(&[t])[0].1 < 1e-8);
    }

    #[test]
    fn interaction_quadrature_and_scaling() {
        let s = spec();
        let set = MarkerSet::seed(&s, &MarkerPolicy::default()).unwrap();
        let g = Grid::new(32).unwrap();
        let tr = trace(set, [zero_snapshot(g, 0.0)]).unwrap();
        let stats = &tr.frames[0].stats;
        // homogeneity: I_n(0) n^alpha is the same for every n
        let scaled: Vec<f64> = stats.iter().map(|st| st.interaction * (st.n as f64).powf(s.alpha)).collect();
        for v in &scaled {
            assert!((v / scaled[0] - 1.0).abs() < 1e-10, "{scaled:?}");
        }
        // independent fine midpoint rule on the analytic data
        let b = s.bubble(4);
        let m = 800;
        let cell = 2.0 * b.support_radius / m as f64;
        let mut fine = 0.0;
        for i in 0..m {
            for j in 0..m {
                let y = [
                    b.center[0] - b.support_radius + (i as f64 + 0.5) * cell,
                    b.center[1] - b.support_radius + (j as f64 + 0.5) * cell,
                ];
                let r2 = y[0] * y[0] + y[1] * y[1];
                fine += b.value(y) * y[0] * y[1] / (r2 * r2 * r2.sqrt()) * cell * cell;
            }
        }
        assert!((stats[1].interaction / fine - 1.0).abs() < 0.02, "{} {}", stats[1].interaction, fine);
    }

    #[test]
    fn exit_slope_recovers_power_law() {
        let exits: Vec<ExitTime> = (3..8)
            .map(|n| ExitTime { n, exit: Some(0.7 * (n as f64).powf(-0.45)), predicted_scale: 0.0 })
            .chain([ExitTime { n: 9, exit: None, predicted_scale: 0.0 }])
            .collect();
        let (slope, used) = exit_time_slope(&exits).unwrap();
        assert!((slope + 0.45).abs() < 1e-12);
        assert_eq!(used, 5);
        assert!(exit_time_slope(&exits[..1]).is_none());
    }

    #[test]
    fn time_order_enforced() {
        let g = Grid::new(32).unwrap();
        let mut tr = Tracker::new(MarkerSet::seed(&spec(), &MarkerPolicy::default()).unwrap());
        tr.push(zero_snapshot(g, 0.1), |_, _| {}).unwrap();
        assert!(matches!(tr.push(zero_snapshot(g, 0.1), |_, _| {}), Err(TrackerError::Time { .. })));
    }
}
