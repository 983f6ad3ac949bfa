//! Post-processing: per-bubble Hessian energy, inflation bookkeeping, and the
//! log-Lipschitz modulus of a velocity snapshot.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::FieldDiagnostics;
use crate::spectral::{derivative, Field, SpectralError, SpectralOps, Spectrum};
use crate::tracker::{MarkerKind, MarkerSet};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("hulls of bubbles {a} and {b} overlap at node ({i}, {j})")]
    HullOverlap { a: u32, b: u32, i: usize, j: usize },
    #[error("{expected} marker positions expected, got {got}")]
    Positions { expected: usize, got: usize },
    #[error("records are not strictly time ordered at index {0}")]
    TimeOrder(usize),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BubbleH2 {
    pub n: u32,
    /// `int |D^2 theta|^2` over the four reflected copies of the hull
    /// neighbourhood
    pub h2_squared: f64,
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BubbleH2Report {
    pub bubbles: Vec<BubbleH2>,
    /// `||theta||^2_{H2dot}` of the whole field
    pub total_squared: f64,
    /// `sum h2_squared / total_squared`
    pub captured: f64,
}

fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn distance_to_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let s = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
        best = best.min((p[0] - a[0] - s * dx).hypot(p[1] - a[1] - s * dy));
    }
    best
}

/// Pointwise `|D^2 theta|^2` on the quarter lattice.
pub fn hessian_density(ops: &SpectralOps, theta: &Spectrum) -> Result<Array2<f64>, SpectralError> {
    let d1 = derivative(theta, 0);
    let d2 = derivative(theta, 1);
    let a = ops.inverse(&derivative(&d1, 0))?;
    let b = ops.inverse(&derivative(&d1, 1))?;
    let c = ops.inverse(&derivative(&d2, 1))?;
    let mut out = a.values().mapv(|v| v * v);
    out.zip_mut_with(b.values(), |o, v| *o += 2.0 * v * v);
    out.zip_mut_with(c.values(), |o, v| *o += v * v);
    Ok(out)
}

/// Split the Hessian energy among bubbles. Each bubble owns the lattice nodes
/// inside its transported support ring or within `margin` of it.
pub fn per_bubble_h2(
    ops: &SpectralOps,
    theta: &Spectrum,
    set: &MarkerSet,
    positions: &[[f64; 2]],
    margin: f64,
) -> Result<BubbleH2Report, DiagnosticsError> {
    if positions.len() != set.len() {
        return Err(DiagnosticsError::Positions { expected: set.len(), got: positions.len() });
    }
    let grid = ops.grid();
    let (h, l) = (grid.spacing(), grid.half());
    let density = hessian_density(ops, theta)?;
    let weight = |i: usize, j: usize| {
        let wi = if i == 0 || i == l { 0.5 } else { 1.0 };
        let wj = if j == 0 || j == l { 0.5 } else { 1.0 };
        4.0 * wi * wj * h * h
    };
    let total_squared: f64 = density.indexed_iter().map(|((i, j), v)| weight(i, j) * v).sum();
    let mut owner: Array2<Option<u32>> = Array2::from_elem(density.dim(), None);
    let mut bubbles = Vec::new();
    for b in &set.bubbles {
        let ring: Vec<[f64; 2]> = set.indices(b.n, MarkerKind::Ring).iter().map(|&i| positions[i]).collect();
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &ring {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a] - margin);
                hi[a] = hi[a].max(p[a] + margin);
            }
        }
        let range = |a: usize| {
            let s = (lo[a] / h).floor().max(0.0) as usize;
            let e = ((hi[a] / h).ceil().max(0.0) as usize).min(l);
            s..=e
        };
        let mut acc = 0.0;
        let mut nodes = 0;
        for i in range(0) {
            for j in range(1) {
                let p = [i as f64 * h, j as f64 * h];
                if point_in_polygon(p, &ring) || distance_to_polygon(p, &ring) <= margin {
                    if let Some(a) = owner[[i, j]] {
                        return Err(DiagnosticsError::HullOverlap { a, b: b.n, i, j });
                    }
                    owner[[i, j]] = Some(b.n);
                    acc += weight(i, j) * density[[i, j]];
                    nodes += 1;
                }
            }
        }
        bubbles.push(BubbleH2 { n: b.n, h2_squared: acc, nodes });
    }
    let captured = if total_squared > 0.0 { bubbles.iter().map(|b| b.h2_squared).sum::<f64>() / total_squared } else { 1.0 };
    Ok(BubbleH2Report { bubbles, total_squared, captured })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t: f64,
    pub h2dot: f64,
    /// `||theta||_inf + ||grad theta||_inf`
    pub w1inf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InflationSummary {
    pub n_max: u32,
    pub n0: u32,
    pub alpha: f64,
    pub c0_emp: Option<f64>,
    /// `(c0/2) ln N`
    pub m_n: Option<f64>,
    /// `1 / (M_N ln M_N)`, only when `M_N > 1`
    pub t_n: Option<f64>,
    /// `M_N^3`
    pub ell_n: Option<f64>,
    pub series: Vec<SeriesPoint>,
    pub initial_h2dot: f64,
    pub max_h2dot: f64,
    pub max_ratio: f64,
    pub inflation_factor: f64,
    pub inflated: bool,
    /// Kendall rank correlation of `H2dot` with time
    pub trend: f64,
}

/// Kendall's tau between the index and the values.
pub fn kendall_trend(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += match values[j].partial_cmp(&values[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    2.0 * s as f64 / (n * (n - 1)) as f64
}

pub fn inflation_summary(
    records: &[FieldDiagnostics],
    n0: u32,
    n_max: u32,
    alpha: f64,
    c0_emp: Option<f64>,
    inflation_factor: f64,
) -> Result<InflationSummary, DiagnosticsError> {
    for (i, w) in records.windows(2).enumerate() {
        if w[1].t <= w[0].t {
            return Err(DiagnosticsError::TimeOrder(i + 1));
        }
    }
    let series: Vec<SeriesPoint> =
        records.iter().map(|r| SeriesPoint { t: r.t, h2dot: r.h2dot, w1inf: r.linf + r.grad_inf }).collect();
    let initial_h2dot = records.first().map_or(0.0, |r| r.h2dot);
    let max_h2dot = records.iter().fold(0.0f64, |m, r| m.max(r.h2dot));
    let max_ratio = if initial_h2dot > 0.0 { max_h2dot / initial_h2dot } else { 1.0 };
    let m_n = c0_emp.map(|c| 0.5 * c * (n_max as f64).ln());
    let t_n = m_n.filter(|m| *m > 1.0).map(|m| 1.0 / (m * m.ln()));
    let h2: Vec<f64> = records.iter().map(|r| r.h2dot).collect();
    Ok(InflationSummary {
        n_max,
        n0,
        alpha,
        c0_emp,
        m_n,
        t_n,
        ell_n: m_n.map(|m| m * m * m),
        series,
        initial_h2dot,
        max_h2dot,
        max_ratio,
        inflation_factor,
        inflated: max_ratio >= inflation_factor,
        trend: kendall_trend(&h2),
    })
}

/// `max |u(x) - u(y)| / (|x - y| ln(10 + 1/|x - y|))` over `pairs` random
/// pairs of interior lattice nodes, with separations log-uniform in
/// `[h, 1/2]`.
pub fn log_lipschitz_modulus(u1: &Field, u2: &Field, pairs: usize, seed: u64) -> f64 {
    let grid = u1.grid();
    let l = grid.half() as i64;
    let h = grid.spacing();
    if l < 2 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    let (lmin, lmax) = (1.0f64.ln(), (l as f64 / 2.0).ln());
    let mut done = 0;
    let mut tries = 0;
    while done < pairs && tries < 20 * pairs.max(1) {
        tries += 1;
        let i = rng.gen_range(1..l);
        let j = rng.gen_range(1..l);
        let r = rng.gen_range(lmin..=lmax).exp();
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        let p = i + (r * a.cos()).round() as i64;
        let q = j + (r * a.sin()).round() as i64;
        if p < 1 || q < 1 || p >= l || q >= l || (p == i && q == j) {
            continue;
        }
        done += 1;
        let (i, j, p, q) = (i as usize, j as usize, p as usize, q as usize);
        let du = (u1.values()[[i, j]] - u1.values()[[p, q]]).hypot(u2.values()[[i, j]] - u2.values()[[p, q]]);
        let d = h * ((i as f64 - p as f64).hypot(j as f64 - q as f64));
        best = best.max(du / (d * (10.0 + 1.0 / d).ln()));
    }
    best
}
