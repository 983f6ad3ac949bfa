//! Bump profile, dyadic bubbles and the assembled odd-odd initial data.
//!
//! Bubble `n` has length scale `l_n = outer_scale * q^{-(n - n0)}`, where `q`
//! is the scale ratio. It is `n^{-alpha} l_n phi(|x - c_n| / l_n)` with centre
//! `c_n = (l_n / q) (1, 1/2)`. With `q = 4` and `outer_scale = 4^{-n0}` this
//! is `n^{-alpha} 4^{-n} phi(4^n (x - c_n))`, `c_n = (4^{-n-1}, 4^{-n-1}/2)`.
//! Other values of `outer_scale` are images of that family under the scaling
//! `theta -> lambda^{-1} theta(lambda x)`, which leaves time unchanged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{Field, Grid, ODD_ODD};

/// `phi = 1` for `r <= PLATEAU_RADIUS`.
pub const PLATEAU_RADIUS: f64 = 1.0 / 32.0;
/// `phi = 0` for `r >= SUPPORT_RADIUS`.
pub const SUPPORT_RADIUS: f64 = 1.0 / 8.0;
/// Minimum number of grid cells across the smallest support diameter.
pub const MIN_CELLS_ACROSS: f64 = 8.0;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("invalid data spec: {0}")]
    Invalid(String),
    #[error("bubble {n} has support diameter {diameter:.3e} < {cells} grid cells of {spacing:.3e}")]
    Unresolved { n: u32, diameter: f64, spacing: f64, cells: f64 },
    #[error("initial ordering violated for bubble {n}: {what}")]
    Ordering { n: u32, what: String },
}

/// Smooth radial bump and its first two derivatives in `r`.
pub fn bump_with_derivatives(r: f64) -> (f64, f64, f64) {
    let (a, b) = (PLATEAU_RADIUS, SUPPORT_RADIUS);
    if r <= a {
        return (1.0, 0.0, 0.0);
    }
    if r >= b {
        return (0.0, 0.0, 0.0);
    }
    let w = b - a;
    let s = (r - a) / w;
    // phi = 1 / (1 + exp(e)), e = 1/(1-s) - 1/s
    let e = 1.0 / (1.0 - s) - 1.0 / s;
    let (p, q) = if e > 0.0 {
        let t = (-e).exp();
        (t / (1.0 + t), 1.0 / (1.0 + t))
    } else {
        let t = e.exp();
        (1.0 / (1.0 + t), t / (1.0 + t))
    };
    let e1 = 1.0 / ((1.0 - s) * (1.0 - s)) + 1.0 / (s * s);
    let e2 = 2.0 / (1.0 - s).powi(3) - 2.0 / s.powi(3);
    let pq = p * q;
    let d1 = -pq * e1;
    // d(pq)/ds = (q - p) * dp/ds
    let d2 = -((q - p) * d1 * e1 + pq * e2);
    (p, d1 / w, d2 / (w * w))
}

pub fn bump(r: f64) -> f64 {
    bump_with_derivatives(r).0
}

/// Geometry of one bubble.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BubbleSpec {
    pub n: u32,
    /// length scale `l_n`
    pub scale: f64,
    pub center: [f64; 2],
    /// radius of the support of `phi`, `l_n / 8`
    pub support_radius: f64,
    /// radius of the plateau `phi = 1`, `l_n / 32`
    pub core_radius: f64,
    pub amplitude: f64,
}

impl BubbleSpec {
    pub fn value(&self, x: [f64; 2]) -> f64 {
        let r = (x[0] - self.center[0]).hypot(x[1] - self.center[1]) / self.scale;
        if r >= SUPPORT_RADIUS {
            0.0
        } else {
            self.amplitude * bump(r)
        }
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        (x[0] - self.center[0]).hypot(x[1] - self.center[1]) < self.support_radius
    }

    /// Top point of the support.
    pub fn top_point(&self) -> [f64; 2] {
        [self.center[0], self.center[1] + self.support_radius]
    }

    /// `||Delta theta_n||^2` over the torus (four reflected copies), from the
    /// radial profile. Independent of the scale.
    pub fn h2_squared(&self) -> f64 {
        let a = self.amplitude / self.scale;
        4.0 * a * a * 2.0 * std::f64::consts::PI * laplacian_profile_integral()
    }
}

/// `int_0^{1/8} (phi'' + phi'/r)^2 r dr` by composite Simpson.
pub fn laplacian_profile_integral() -> f64 {
    let (a, b) = (PLATEAU_RADIUS, SUPPORT_RADIUS);
    let m = 20_000;
    let h = (b - a) / m as f64;
    let f = |r: f64| {
        let (_, d1, d2) = bump_with_derivatives(r);
        let lap = d2 + d1 / r;
        lap * lap * r
    };
    let mut s = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Parameters of the truncated bubble sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub n0: u32,
    pub n_max: u32,
    pub alpha: f64,
    /// ratio `q` of consecutive bubble scales
    pub scale_ratio: f64,
    /// length scale of bubble `n0`
    pub outer_scale: f64,
}

impl DataSpec {
    /// The original dyadic family: `q = 4`, `l_n = 4^{-n}`.
    pub fn dyadic(n0: u32, n_max: u32, alpha: f64) -> Self {
        Self { n0, n_max, alpha, scale_ratio: 4.0, outer_scale: 4f64.powi(-(n0 as i32)) }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |s: String| Err(DataError::Invalid(s));
        if self.n0 < 1 {
            return bad("n0 must be at least 1".into());
        }
        if self.n_max < self.n0 {
            return bad(format!("n_max = {} < n0 = {}", self.n_max, self.n0));
        }
        if !(self.alpha > 0.5 && self.alpha < 0.75) {
            return bad(format!("alpha = {} not in (1/2, 3/4)", self.alpha));
        }
        if !(self.scale_ratio > 1.0 && self.scale_ratio <= 4.0) {
            return bad(format!("scale_ratio = {} not in (1, 4]", self.scale_ratio));
        }
        if !(self.outer_scale > 0.0) {
            return bad(format!("outer_scale = {} must be positive", self.outer_scale));
        }
        let outer = self.bubble(self.n0);
        if outer.center[0] + outer.support_radius >= 1.0 || outer.center[1] + outer.support_radius >= 1.0 {
            return bad(format!("bubble {} leaves the unit square", self.n0));
        }
        for pair in self.bubbles().windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let d = (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1]);
            if d <= a.support_radius + b.support_radius {
                return bad(format!("bubbles {} and {} overlap", a.n, b.n));
            }
        }
        Ok(())
    }

    pub fn bubble(&self, n: u32) -> BubbleSpec {
        let q = self.scale_ratio;
        let scale = self.outer_scale * q.powi(-((n - self.n0) as i32));
        let c = scale / q;
        BubbleSpec {
            n,
            scale,
            center: [c, 0.5 * c],
            support_radius: scale * SUPPORT_RADIUS,
            core_radius: scale * PLATEAU_RADIUS,
            amplitude: (n as f64).powf(-self.alpha) * scale,
        }
    }

    pub fn bubbles(&self) -> Vec<BubbleSpec> {
        (self.n0..=self.n_max).map(|n| self.bubble(n)).collect()
    }

    /// Distance from the axes to the closest support, `c_2 - r` of the smallest bubble.
    pub fn axis_margin(&self) -> f64 {
        let b = self.bubble(self.n_max);
        b.center[1] - b.support_radius
    }

    pub fn check_resolved(&self, grid: &Grid) -> Result<(), DataError> {
        let b = self.bubble(self.n_max);
        let diameter = 2.0 * b.support_radius;
        if diameter < MIN_CELLS_ACROSS * grid.spacing() {
            return Err(DataError::Unresolved { n: b.n, diameter, spacing: grid.spacing(), cells: MIN_CELLS_ACROSS });
        }
        Ok(())
    }

    /// Exact value of the bubble sum at a point of the first quadrant.
    pub fn value(&self, x: [f64; 2]) -> f64 {
        self.bubbles().iter().map(|b| b.value(x)).sum()
    }
}

/// Sample the truncated bubble sum on the quarter lattice.
pub fn assemble_data(spec: &DataSpec, grid: Grid) -> Result<Field, DataError> {
    spec.validate()?;
    spec.check_resolved(&grid)?;
    let mut field = Field::zeros(grid, ODD_ODD);
    let h = grid.spacing();
    let l = grid.half();
    let mut values = field.values().clone();
    for b in spec.bubbles() {
        let lo = |c: f64| (((c - b.support_radius) / h).floor().max(1.0)) as usize;
        let hi = |c: f64| (((c + b.support_radius) / h).ceil() as usize).min(l - 1);
        for i in lo(b.center[0])..=hi(b.center[0]) {
            for j in lo(b.center[1])..=hi(b.center[1]) {
                values[[i, j]] += b.value([i as f64 * h, j as f64 * h]);
            }
        }
    }
    field = Field::odd_odd(grid, values).expect("shape taken from grid");
    Ok(field)
}

/// Per-radius ordering figures for one bubble.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusOrdering {
    pub radius: f64,
    /// `sup x1 / inf x1` over the ball
    pub sup_over_inf: f64,
    /// `inf x1` over this ball divided by `sup x1` over the next smaller one
    pub consecutive: Option<f64>,
    /// `sup 2 x2 / x1` over the ball
    pub max_slope: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BubbleOrdering {
    pub n: u32,
    pub nominal: RadiusOrdering,
    pub core: RadiusOrdering,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub bubbles: Vec<BubbleOrdering>,
    pub sup_over_inf_limit: f64,
    pub consecutive_limit: f64,
}

impl OrderingReport {
    /// Both ratio conditions hold for the plateau discs.
    pub fn core_holds(&self) -> bool {
        self.bubbles.iter().all(|b| {
            b.core.sup_over_inf < self.sup_over_inf_limit
                && b.core.consecutive.is_none_or(|c| c > self.consecutive_limit)
        })
    }

    pub fn nominal_holds(&self) -> bool {
        self.bubbles.iter().all(|b| {
            b.nominal.sup_over_inf < self.sup_over_inf_limit
                && b.nominal.consecutive.is_none_or(|c| c > self.consecutive_limit)
        })
    }

    /// `2 x2 <= x1` on every disc of the given kind.
    pub fn slope_holds(&self, core: bool) -> bool {
        self.bubbles.iter().all(|b| if core { b.core.max_slope <= 1.0 } else { b.nominal.max_slope <= 1.0 })
    }
}

fn disc_ordering(c: [f64; 2], r: f64, next: Option<([f64; 2], f64)>) -> RadiusOrdering {
    let norm = c[0].hypot(c[1]);
    let angle = (c[1] / c[0]).atan() + (r / norm).min(1.0).asin();
    RadiusOrdering {
        radius: r,
        sup_over_inf: (c[0] + r) / (c[0] - r),
        consecutive: next.map(|(cn, rn)| (c[0] - r) / (cn[0] + rn)),
        max_slope: 2.0 * angle.tan(),
    }
}

/// Ratio bookkeeping on both the nominal support and the plateau disc.
pub fn ordering_report(spec: &DataSpec) -> OrderingReport {
    let bubbles = spec.bubbles();
    let rows = bubbles
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let next = bubbles.get(i + 1);
            BubbleOrdering {
                n: b.n,
                nominal: disc_ordering(b.center, b.support_radius, next.map(|x| (x.center, x.support_radius))),
                core: disc_ordering(b.center, b.core_radius, next.map(|x| (x.center, x.core_radius))),
            }
        })
        .collect();
    OrderingReport { bubbles: rows, sup_over_inf_limit: 1.5, consecutive_limit: 2.0 }
}

/// Fails when a ratio condition is violated on the plateau discs.
pub fn verify_initial_ordering(spec: &DataSpec) -> Result<OrderingReport, DataError> {
    spec.validate()?;
    let report = ordering_report(spec);
    for b in &report.bubbles {
        if b.core.sup_over_inf >= report.sup_over_inf_limit {
            return Err(DataError::Ordering { n: b.n, what: format!("sup/inf x1 = {:.4}", b.core.sup_over_inf) });
        }
        if let Some(c) = b.core.consecutive {
            if c <= report.consecutive_limit {
                return Err(DataError::Ordering { n: b.n, what: format!("consecutive ratio = {c:.4}") });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{sobolev_norm, SpectralOps};
    use approx::assert_relative_eq;

    fn spec() -> DataSpec {
        DataSpec { n0: 3, n_max: 5, alpha: 0.55, scale_ratio: 2.35, outer_scale: 1.75 }
    }

    #[test]
    fn bump_values() {
        assert_eq!(bump(0.0), 1.0);
        assert_eq!(bump(1.0 / 64.0), 1.0);
        assert_eq!(bump(1.0 / 8.0), 0.0);
        assert_eq!(bump(0.2), 0.0);
        assert_relative_eq!(bump(0.5 * (PLATEAU_RADIUS + SUPPORT_RADIUS)), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn bump_derivatives_match_differences() {
        let h = 1e-6;
        for r in [0.035, 0.05, 0.078, 0.1, 0.12] {
            let (_, d1, d2) = bump_with_derivatives(r);
            let fd1 = (bump(r + h) - bump(r - h)) / (2.0 * h);
            let fd2 = (bump(r + h) - 2.0 * bump(r) + bump(r - h)) / (h * h);
            assert!((d1 - fd1).abs() < 1e-5 * d1.abs().max(1.0), "r={r}");
            assert!((d2 - fd2).abs() < 1e-3 * d2.abs().max(1.0), "r={r} {d2} {fd2}");
        }
    }

    #[test]
    fn dyadic_family_matches_closed_form() {
        let s = DataSpec::dyadic(3, 6, 0.55);
        for n in 3..=6 {
            let b = s.bubble(n);
            let p = 4f64.powi(-(n as i32) - 1);
            assert_relative_eq!(b.center[0], p, max_relative = 1e-14);
            assert_relative_eq!(b.center[1], 0.5 * p, max_relative = 1e-14);
            assert_relative_eq!(b.support_radius, 0.5 * p, max_relative = 1e-14);
            assert_relative_eq!(b.amplitude, (n as f64).powf(-0.55) * 4f64.powi(-(n as i32)), max_relative = 1e-14);
        }
        assert!(s.validate().is_ok());
        assert!(s.check_resolved(&Grid::new(1024).unwrap()).is_err());
    }

    #[test]
    fn single_bubble_peak() {
        let s = DataSpec { n_max: 3, ..spec() };
        let f = assemble_data(&s, Grid::new(256).unwrap()).unwrap();
        let b = s.bubble(3);
        assert_relative_eq!(b.amplitude, 3f64.powf(-0.55) * 1.75);
        assert_relative_eq!(f.max_abs(), b.amplitude, max_relative = 1e-14);
    }

    #[test]
    fn supports_are_disjoint_on_the_grid() {
        let s = DataSpec { n_max: 6, ..spec() };
        let g = Grid::new(1024).unwrap();
        let f = assemble_data(&s, g).unwrap();
        let h = g.spacing();
        for ((i, j), v) in f.values().indexed_iter() {
            let x = [i as f64 * h, j as f64 * h];
            let owners = s.bubbles().iter().filter(|b| b.contains(x)).count();
            assert!(owners <= 1);
            if *v != 0.0 {
                assert_eq!(owners, 1);
            }
        }
        assert!(f.axis_margin().unwrap() >= s.axis_margin() - h);
    }

    #[test]
    fn unresolved_data_refused() {
        let s = DataSpec { n_max: 7, ..spec() };
        assert!(matches!(assemble_data(&s, Grid::new(256).unwrap()), Err(DataError::Unresolved { n: 7, .. })));
    }

    #[test]
    fn spec_validation() {
        assert!(DataSpec { alpha: 0.5, ..spec() }.validate().is_err());
        assert!(DataSpec { n_max: 2, ..spec() }.validate().is_err());
        assert!(DataSpec { outer_scale: 2.5, ..spec() }.validate().is_err());
        assert!(DataSpec { scale_ratio: 5.0, ..spec() }.validate().is_err());
    }

    #[test]
    fn ordering_ratios_match_interval_arithmetic() {
        let r = ordering_report(&DataSpec::dyadic(3, 6, 0.55));
        for b in &r.bubbles {
            assert_relative_eq!(b.nominal.sup_over_inf, 3.0, max_relative = 1e-12);
            assert_relative_eq!(b.core.sup_over_inf, 9.0 / 7.0, max_relative = 1e-12);
            if let Some(c) = b.core.consecutive {
                assert_relative_eq!(c, 28.0 / 9.0, max_relative = 1e-12);
            }
            // the centre lies on 2 x2 = x1, so any disc crosses it
            assert!(b.core.max_slope > 1.0);
        }
        assert!(r.core_holds());
        assert!(!r.nominal_holds());
        assert!(verify_initial_ordering(&DataSpec::dyadic(3, 6, 0.55)).is_ok());
        // consecutive plateau ratio is q (32 - q) / (32 + q), below 2 for q = 2
        let q2 = DataSpec { scale_ratio: 2.0, outer_scale: 1.5, ..spec() };
        assert!(matches!(verify_initial_ordering(&q2), Err(DataError::Ordering { .. })));
        let c = ordering_report(&spec()).bubbles[0].core.consecutive.unwrap();
        assert_relative_eq!(c, 2.35 * 29.65 / 34.35, max_relative = 1e-12);
    }

    #[test]
    fn h2_norm_matches_profile_quadrature() {
        let s = spec();
        let g = Grid::new(512).unwrap();
        let ops = SpectralOps::new(g);
        let f = assemble_data(&s, g).unwrap();
        let spectral = sobolev_norm(&ops.forward(&f).unwrap(), 2.0).unwrap();
        let analytic: f64 = s.bubbles().iter().map(|b| b.h2_squared()).sum::<f64>().sqrt();
        assert!((spectral / analytic - 1.0).abs() < 0.01, "{spectral} vs {analytic}");
    }

    #[test]
    fn norms_decrease_with_n0() {
        let g = Grid::new(256).unwrap();
        let ops = SpectralOps::new(g);
        let mut last = f64::INFINITY;
        for n0 in 3..=5 {
            let s = DataSpec { n0, n_max: n0 + 2, ..spec() };
            let f = assemble_data(&s, g).unwrap();
            let sp = ops.forward(&f).unwrap();
            let (linf, grad) = ops.winfty_norm(&f).unwrap();
            let norm = crate::spectral::h2_norm(&sp) + linf + grad;
            assert!(norm < last);
            last = norm;
        }
    }
}
