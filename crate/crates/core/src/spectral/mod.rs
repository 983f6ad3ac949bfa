//! Fourier machinery on the period-2 torus `[-1,1)^2`.
//!
//! Fields are stored on the quarter lattice `[0,1]^2` and carry a parity per
//! axis. A scalar of the odd-odd class (the only class `theta` ever lives in)
//! is expanded in `sin(k1 x1) sin(k2 x2)` with `k = pi m`; velocity components
//! and derivatives pick up cosine factors. Because the basis is fixed by the
//! parity, a field that breaks the reflection symmetry cannot be represented.

mod trig;

use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use trig::{Direction, TrigPlan};

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("resolution {0} must be a power of two and at least 32")]
    BadResolution(usize),
    #[error("array shape {got:?} does not match the quarter lattice {want:?}")]
    Shape { got: (usize, usize), want: (usize, usize) },
    #[error("grid mismatch: {0} vs {1}")]
    GridMismatch(usize, usize),
    #[error("multiplier parameter out of range: {0}")]
    Multiplier(String),
    #[error("Sobolev index {0} outside [0, 3]")]
    SobolevIndex(f64),
}

/// Reflection parity of a field along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    /// odd about 0 (and about 1): sine basis
    Odd,
    /// even about 0 (and about 1): cosine basis
    Even,
}

impl Parity {
    pub fn flip(self) -> Self {
        match self {
            Parity::Odd => Parity::Even,
            Parity::Even => Parity::Odd,
        }
    }

    fn sign(self) -> f64 {
        match self {
            Parity::Odd => -1.0,
            Parity::Even => 1.0,
        }
    }
}

pub const ODD_ODD: [Parity; 2] = [Parity::Odd, Parity::Odd];

/// Uniform grid on `[-1,1)^2` with `resolution` points per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Grid {
    resolution: usize,
}

impl TryFrom<usize> for Grid {
    type Error = SpectralError;
    fn try_from(n: usize) -> Result<Self, Self::Error> {
        Grid::new(n)
    }
}

impl From<Grid> for usize {
    fn from(g: Grid) -> usize {
        g.resolution
    }
}

impl Grid {
    pub fn new(resolution: usize) -> Result<Self, SpectralError> {
        if resolution < 32 || !resolution.is_power_of_two() {
            return Err(SpectralError::BadResolution(resolution));
        }
        Ok(Self { resolution })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Number of lattice intervals on `[0,1]`, `L = resolution / 2`.
    pub fn half(&self) -> usize {
        self.resolution / 2
    }

    pub fn spacing(&self) -> f64 {
        2.0 / self.resolution as f64
    }

    /// Coordinate of quarter-lattice index `j` (also valid for negative or
    /// out-of-range indices, which address the rest of the torus).
    pub fn coord(&self, j: isize) -> f64 {
        j as f64 * self.spacing()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.half() + 1, self.half() + 1)
    }

    /// Largest retained index under the 2/3 rule.
    pub fn dealias_cutoff(&self) -> usize {
        self.resolution / 3
    }

    /// Nearest quarter-lattice index to a coordinate in `[0,1]`.
    pub fn nearest_index(&self, x: f64) -> isize {
        (x / self.spacing()).round() as isize
    }
}

/// Node values on the quarter lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    parity: [Parity; 2],
    values: Array2<f64>,
}

/// The advected scalar: a [`Field`] of odd-odd parity.
pub type ScalarField = Field;

impl Field {
    pub fn zeros(grid: Grid, parity: [Parity; 2]) -> Self {
        Self { grid, parity, values: Array2::zeros(grid.shape()) }
    }

    /// Wrap node values. Entries on a lattice line where the parity forces
    /// zero are overwritten with zero.
    pub fn new(grid: Grid, parity: [Parity; 2], mut values: Array2<f64>) -> Result<Self, SpectralError> {
        if values.dim() != grid.shape() {
            return Err(SpectralError::Shape { got: values.dim(), want: grid.shape() });
        }
        let l = grid.half();
        if parity[0] == Parity::Odd {
            values.row_mut(0).fill(0.0);
            values.row_mut(l).fill(0.0);
        }
        if parity[1] == Parity::Odd {
            values.column_mut(0).fill(0.0);
            values.column_mut(l).fill(0.0);
        }
        Ok(Self { grid, parity, values })
    }

    pub fn odd_odd(grid: Grid, values: Array2<f64>) -> Result<Self, SpectralError> {
        Self::new(grid, ODD_ODD, values)
    }

    /// Sample `f` at every quarter-lattice node.
    pub fn from_fn(grid: Grid, parity: [Parity; 2], f: impl Fn(f64, f64) -> f64) -> Self {
        let h = grid.spacing();
        let values = Array2::from_shape_fn(grid.shape(), |(i, j)| f(i as f64 * h, j as f64 * h));
        Self::new(grid, parity, values).expect("shape is taken from the grid")
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn parity(&self) -> [Parity; 2] {
        self.parity
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Value at an arbitrary lattice index of the full torus, obtained from the
    /// quarter by periodicity and reflection.
    pub fn torus_value(&self, j1: isize, j2: isize) -> f64 {
        let n = self.grid.resolution() as isize;
        let l = self.grid.half() as isize;
        let fold = |j: isize, p: Parity| -> (usize, f64) {
            let r = j.rem_euclid(n);
            if r <= l {
                (r as usize, 1.0)
            } else {
                ((n - r) as usize, p.sign())
            }
        };
        let (a, sa) = fold(j1, self.parity[0]);
        let (b, sb) = fold(j2, self.parity[1]);
        sa * sb * self.values[[a, b]]
    }

    /// Reconstruct the `resolution x resolution` array on `[-1,1)^2`
    /// (index `[i, j]` is the node `(-1 + i h, -1 + j h)`).
    pub fn to_torus(&self) -> Array2<f64> {
        let n = self.grid.resolution();
        let l = self.grid.half() as isize;
        Array2::from_shape_fn((n, n), |(i, j)| self.torus_value(i as isize - l, j as isize - l))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Trapezoid quadrature of `f(value)` over the whole torus.
    pub fn torus_integral(&self, f: impl Fn(f64) -> f64) -> f64 {
        let l = self.grid.half();
        let h = self.grid.spacing();
        let mut s = 0.0;
        for ((i, j), v) in self.values.indexed_iter() {
            let wi = if i == 0 || i == l { 0.5 } else { 1.0 };
            let wj = if j == 0 || j == l { 0.5 } else { 1.0 };
            s += wi * wj * f(*v);
        }
        4.0 * s * h * h
    }

    /// Distance from the axes to the nearest nonzero node (the axis margin).
    /// Returns `None` for the zero field.
    pub fn axis_margin(&self) -> Option<f64> {
        let h = self.grid.spacing();
        let mut best: Option<usize> = None;
        for ((i, j), v) in self.values.indexed_iter() {
            if *v != 0.0 {
                let d = i.min(j);
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
        best.map(|d| d as f64 * h)
    }
}

/// Expansion coefficients in the parity-adapted trigonometric basis.
///
/// `coeffs[[m1, m2]]` multiplies `b1(pi m1 x1) b2(pi m2 x2)` where `b` is `sin`
/// for an odd axis and `cos` for an even axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    grid: Grid,
    parity: [Parity; 2],
    coeffs: Array2<f64>,
}

impl Spectrum {
    pub fn zeros(grid: Grid, parity: [Parity; 2]) -> Self {
        Self { grid, parity, coeffs: Array2::zeros(grid.shape()) }
    }

    /// Wrap coefficients; modes absent from a sine basis (`m = 0`, `m = L`)
    /// are cleared.
    pub fn new(grid: Grid, parity: [Parity; 2], mut coeffs: Array2<f64>) -> Result<Self, SpectralError> {
        if coeffs.dim() != grid.shape() {
            return Err(SpectralError::Shape { got: coeffs.dim(), want: grid.shape() });
        }
        let l = grid.half();
        if parity[0] == Parity::Odd {
            coeffs.row_mut(0).fill(0.0);
            coeffs.row_mut(l).fill(0.0);
        }
        if parity[1] == Parity::Odd {
            coeffs.column_mut(0).fill(0.0);
            coeffs.column_mut(l).fill(0.0);
        }
        Ok(Self { grid, parity, coeffs })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn parity(&self) -> [Parity; 2] {
        self.parity
    }

    pub fn coeffs(&self) -> &Array2<f64> {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut Array2<f64> {
        &mut self.coeffs
    }

    pub fn set(&mut self, m: [usize; 2], value: f64) {
        let l = self.grid.half();
        let forbidden = |p: Parity, m: usize| p == Parity::Odd && (m == 0 || m == l);
        if !(forbidden(self.parity[0], m[0]) || forbidden(self.parity[1], m[1])) {
            self.coeffs[[m[0], m[1]]] = value;
        }
    }

    /// Wavenumber of index `m`.
    pub fn wavenumber(m: usize) -> f64 {
        PI * m as f64
    }

    /// Complex exponential coefficient of mode `m` in `sum c_m exp(i pi m . x)`.
    pub fn complex_coefficient(&self, m: [i64; 2]) -> Complex64 {
        let l = self.grid.half() as i64;
        if m[0].abs() > l || m[1].abs() > l {
            return Complex64::new(0.0, 0.0);
        }
        let factor = |p: Parity, mi: i64| -> Complex64 {
            match p {
                // sin(a) = (e^{ia} - e^{-ia}) / 2i
                Parity::Odd => Complex64::new(0.0, -0.5 * mi.signum() as f64),
                Parity::Even if mi == 0 || mi.abs() == l => Complex64::new(1.0, 0.0),
                Parity::Even => Complex64::new(0.5, 0.0),
            }
        };
        let c = self.coeffs[[m[0].unsigned_abs() as usize, m[1].unsigned_abs() as usize]];
        factor(self.parity[0], m[0]) * factor(self.parity[1], m[1]) * c
    }

    /// Index pairs holding a nonzero coefficient.
    pub fn support(&self) -> Vec<[usize; 2]> {
        self.coeffs
            .indexed_iter()
            .filter(|(_, c)| **c != 0.0)
            .map(|((a, b), _)| [a, b])
            .collect()
    }

    /// Torus `L^2` weight of a basis function with index `m` on one axis.
    fn basis_weight(p: Parity, m: usize) -> f64 {
        if p == Parity::Even && m == 0 {
            2.0
        } else {
            1.0
        }
    }

    fn check_same_grid(&self, other: &Spectrum) -> Result<(), SpectralError> {
        if self.grid != other.grid {
            return Err(SpectralError::GridMismatch(self.grid.resolution(), other.grid.resolution()));
        }
        Ok(())
    }

    /// `self + factor * other`.
    pub fn axpy(&self, factor: f64, other: &Spectrum) -> Spectrum {
        debug_assert_eq!(self.parity, other.parity);
        let mut out = self.clone();
        out.coeffs.scaled_add(factor, &other.coeffs);
        out
    }

    /// Largest coefficient magnitude.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Fraction of the `L^2` energy in the top third of the retained band
    /// (indices with `max(m) > 2/3 * cutoff`).
    pub fn tail_fraction(&self) -> f64 {
        let cutoff = self.grid.dealias_cutoff();
        let edge = 2 * cutoff / 3;
        let (mut total, mut tail) = (0.0, 0.0);
        for ((a, b), c) in self.coeffs.indexed_iter() {
            let e = c * c * Self::basis_weight(self.parity[0], a) * Self::basis_weight(self.parity[1], b);
            total += e;
            if a.max(b) > edge {
                tail += e;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            tail / total
        }
    }

    /// Restrict to the band `max(m) <= keep`, returning a compact array of
    /// shape `(keep+1, keep+1)`.
    pub fn truncated_coeffs(&self, keep: usize) -> Array2<f64> {
        let k = keep.min(self.grid.half());
        self.coeffs.slice(ndarray::s![..=k, ..=k]).to_owned()
    }

    /// Inverse of [`Spectrum::truncated_coeffs`].
    pub fn from_truncated(grid: Grid, parity: [Parity; 2], compact: &Array2<f64>) -> Result<Self, SpectralError> {
        let (a, b) = compact.dim();
        if a != b || a > grid.half() + 1 {
            return Err(SpectralError::Shape { got: (a, b), want: grid.shape() });
        }
        let mut coeffs = Array2::zeros(grid.shape());
        coeffs.slice_mut(ndarray::s![..a, ..b]).assign(compact);
        Spectrum::new(grid, parity, coeffs)
    }
}

/// Constitutive symbol `P(Lambda) = Lambda^{-alpha} log^{-gamma}(10 + Lambda)`
/// with an overall normalization.
///
/// `alpha = 1, gamma = 0` with normalization `2 pi` is the SQG law in the
/// kernel convention `u(x) = sum_n int (x - y - 2n)^perp / |x - y - 2n|^3 theta(y) dy`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSpec {
    pub alpha: f64,
    pub gamma: f64,
    pub normalization: f64,
}

impl Default for MultiplierSpec {
    fn default() -> Self {
        Self::sqg()
    }
}

impl MultiplierSpec {
    pub const SQG_NORMALIZATION: f64 = 2.0 * PI;

    pub fn sqg() -> Self {
        Self { alpha: 1.0, gamma: 0.0, normalization: Self::SQG_NORMALIZATION }
    }

    /// 2D Euler (`alpha = 2`), with the same overall normalization.
    pub fn euler() -> Self {
        Self { alpha: 2.0, gamma: 0.0, normalization: Self::SQG_NORMALIZATION }
    }

    pub fn validate(&self) -> Result<(), SpectralError> {
        if !(1.0..=2.0).contains(&self.alpha) {
            return Err(SpectralError::Multiplier(format!("alpha = {} not in [1, 2]", self.alpha)));
        }
        if !(self.gamma >= 0.0) {
            return Err(SpectralError::Multiplier(format!("gamma = {} is negative", self.gamma)));
        }
        if !(self.normalization > 0.0 && self.normalization.is_finite()) {
            return Err(SpectralError::Multiplier(format!(
                "normalization = {} must be positive",
                self.normalization
            )));
        }
        Ok(())
    }

    /// `normalization * |k|^{-alpha} * log^{-gamma}(10 + |k|)`, zero at `k = 0`.
    pub fn symbol(&self, k: f64) -> f64 {
        if k == 0.0 {
            return 0.0;
        }
        let mut s = self.normalization * k.powf(-self.alpha);
        if self.gamma != 0.0 {
            s *= (10.0 + k).ln().powf(-self.gamma);
        }
        s
    }
}

/// Transform context for one grid. Cheap to clone; each worker should own one.
#[derive(Clone, Debug)]
pub struct SpectralOps {
    grid: Grid,
    plan: TrigPlan,
}

impl SpectralOps {
    pub fn new(grid: Grid) -> Self {
        Self { grid, plan: TrigPlan::new(grid.half()) }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    fn check(&self, g: Grid) -> Result<(), SpectralError> {
        if g != self.grid {
            return Err(SpectralError::GridMismatch(self.grid.resolution(), g.resolution()));
        }
        Ok(())
    }

    pub fn forward(&self, field: &Field) -> Result<Spectrum, SpectralError> {
        self.check(field.grid)?;
        let coeffs = self.plan.transform_2d(&field.values, field.parity, Direction::Analysis);
        Spectrum::new(self.grid, field.parity, coeffs)
    }

    pub fn inverse(&self, spectrum: &Spectrum) -> Result<Field, SpectralError> {
        self.check(spectrum.grid)?;
        let values = self.plan.transform_2d(&spectrum.coeffs, spectrum.parity, Direction::Synthesis);
        Field::new(self.grid, spectrum.parity, values)
    }

    /// Stream function `psi = P(Lambda) theta` (same parity as `theta`).
    pub fn stream_function(&self, theta: &Spectrum, mult: &MultiplierSpec) -> Spectrum {
        let mut psi = theta.clone();
        Zip::indexed(&mut psi.coeffs).for_each(|(a, b), c| {
            let k = PI * ((a * a + b * b) as f64).sqrt();
            *c *= mult.symbol(k);
        });
        psi
    }

    /// Velocity `(u1, u2) = (d2 psi, -d1 psi)`, i.e. the symbol
    /// `normalization * i (k2, -k1) P(|k|)` applied to `theta`.
    ///
    /// For odd-odd `theta`, `u1` is odd-even and `u2` is even-odd.
    pub fn velocity_from_scalar(&self, theta: &Spectrum, mult: &MultiplierSpec) -> Result<(Spectrum, Spectrum), SpectralError> {
        self.check(theta.grid)?;
        let psi = self.stream_function(theta, mult);
        let u1 = derivative(&psi, 1);
        let mut u2 = derivative(&psi, 0);
        u2.coeffs.mapv_inplace(|v| -v);
        Ok((u1, u2))
    }

    /// Node values of both gradient components.
    pub fn gradient(&self, theta: &Spectrum) -> Result<(Field, Field), SpectralError> {
        Ok((self.inverse(&derivative(theta, 0))?, self.inverse(&derivative(theta, 1))?))
    }

    /// `(max |theta|, max |grad theta|)` over the lattice nodes.
    pub fn winfty_norm(&self, theta: &Field) -> Result<(f64, f64), SpectralError> {
        let spec = self.forward(theta)?;
        let (g1, g2) = self.gradient(&spec)?;
        let grad_max = Zip::from(g1.values())
            .and(g2.values())
            .fold(0.0f64, |m, a, b| m.max(a.hypot(*b)));
        Ok((theta.max_abs(), grad_max))
    }
}

/// Band-limited interpolation of a field onto a grid `factor` times finer.
pub fn prolong(field: &Field, factor: usize) -> Result<Field, SpectralError> {
    if factor <= 1 {
        return Ok(field.clone());
    }
    let coarse = SpectralOps::new(field.grid());
    let fine = SpectralOps::new(Grid::new(field.grid().resolution() * factor)?);
    let spec = coarse.forward(field)?;
    let padded = Spectrum::from_truncated(fine.grid(), field.parity(), spec.coeffs())?;
    fine.inverse(&padded)
}

/// Exact derivative along `axis` (0 or 1) in the parity basis.
pub fn derivative(spec: &Spectrum, axis: usize) -> Spectrum {
    let l = spec.grid.half();
    let from = spec.parity[axis];
    let mut parity = spec.parity;
    parity[axis] = from.flip();
    let mut out = Array2::zeros(spec.grid.shape());
    Zip::indexed(&mut out).and(&spec.coeffs).for_each(|(a, b), o, c| {
        let m = if axis == 0 { a } else { b };
        let k = PI * m as f64;
        *o = match from {
            // d/dx sin(kx) = k cos(kx)
            Parity::Odd => k * c,
            // d/dx cos(kx) = -k sin(kx); the m = L cosine vanishes on the lattice
            Parity::Even if m == l => 0.0,
            Parity::Even => -k * c,
        };
    });
    Spectrum::new(spec.grid, parity, out).expect("shape is taken from the grid")
}

/// Divergence `d1 u1 + d2 u2` of an (odd-even, even-odd) velocity pair, in
/// the even-even basis.
pub fn divergence(u1: &Spectrum, u2: &Spectrum) -> Result<Spectrum, SpectralError> {
    u1.check_same_grid(u2)?;
    let d1 = derivative(u1, 0);
    let d2 = derivative(u2, 1);
    if d1.parity != d2.parity {
        return Err(SpectralError::Multiplier("velocity components have incompatible parity".into()));
    }
    Ok(d1.axpy(1.0, &d2))
}

/// `(sum_m |k|^{2s} |theta_m|^2)^{1/2}` with `k = pi m`, the torus norm of the
/// homogeneous Sobolev space `H^s`. At `s = 0` this is the `L^2` norm.
pub fn sobolev_norm(theta: &Spectrum, s: f64) -> Result<f64, SpectralError> {
    if !(0.0..=3.0).contains(&s) {
        return Err(SpectralError::SobolevIndex(s));
    }
    let mut acc = 0.0;
    for ((a, b), c) in theta.coeffs.indexed_iter() {
        if *c == 0.0 {
            continue;
        }
        let k2 = PI * PI * (a * a + b * b) as f64;
        if k2 == 0.0 && s > 0.0 {
            continue;
        }
        let w = Spectrum::basis_weight(theta.parity[0], a) * Spectrum::basis_weight(theta.parity[1], b);
        acc += w * k2.powf(s) * c * c;
    }
    Ok(acc.sqrt())
}

/// Inhomogeneous `H^2` norm `(||theta||_{L^2}^2 + ||theta||_{H^2 dot}^2)^{1/2}`.
pub fn h2_norm(theta: &Spectrum) -> f64 {
    let l2 = sobolev_norm(theta, 0.0).expect("valid index");
    let h2 = sobolev_norm(theta, 2.0).expect("valid index");
    l2.hypot(h2)
}

/// 2/3-rule truncation: zero every mode with `max(m1, m2) > resolution / 3`.
pub fn dealias(spec: &Spectrum) -> Spectrum {
    let mut out = spec.clone();
    dealias_in_place(&mut out);
    out
}

pub fn dealias_in_place(spec: &mut Spectrum) {
    let cutoff = spec.grid.dealias_cutoff();
    for ((a, b), c) in spec.coeffs.indexed_iter_mut() {
        if a.max(b) > cutoff {
            *c = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Grid {
        Grid::new(n).unwrap()
    }

    fn sin_sin(g: Grid) -> Field {
        Field::from_fn(g, ODD_ODD, |x, y| (PI * x).sin() * (PI * y).sin())
    }

    fn random_odd_odd(g: Grid, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array2::from_shape_fn(g.shape(), |_| rng.gen_range(-1.0..1.0));
        Field::odd_odd(g, values).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(16).is_err());
        assert!(Grid::new(48).is_err());
        assert_eq!(Grid::new(64).unwrap().half(), 32);
        assert_relative_eq!(Grid::new(64).unwrap().spacing(), 1.0 / 32.0);
    }

    #[test]
    fn zero_field_has_zero_spectrum() {
        let g = grid(32);
        let ops = SpectralOps::new(g);
        let s = ops.forward(&Field::zeros(g, ODD_ODD)).unwrap();
        assert_eq!(s.max_abs(), 0.0);
    }

    #[test]
    fn product_of_sines_is_one_mode_quadruple() {
        let g = grid(64);
        let ops = SpectralOps::new(g);
        let s = ops.forward(&sin_sin(g)).unwrap();
        let support: Vec<_> = s
            .coeffs()
            .indexed_iter()
            .filter(|(_, c)| c.abs() > 1e-13)
            .map(|((a, b), c)| ([a, b], *c))
            .collect();
        assert_eq!(support.len(), 1);
        assert_eq!(support[0].0, [1, 1]);
        assert_relative_eq!(support[0].1, 1.0, epsilon = 1e-13);
        // the four exponentials (+-1, +-1) carry -sgn(m1) sgn(m2) / 4
        for (m, expect) in [([1, 1], -0.25), ([-1, 1], 0.25), ([1, -1], 0.25), ([-1, -1], -0.25)] {
            let c = s.complex_coefficient(m);
            assert_relative_eq!(c.re, expect, epsilon = 1e-13);
            assert!(c.im.abs() < 1e-13);
        }
        assert!(s.complex_coefficient([2, 1]).norm() < 1e-13);
    }

    #[test]
    fn complex_view_is_hermitian_for_mixed_parity() {
        let g = grid(32);
        let ops = SpectralOps::new(g);
        let theta = ops.forward(&random_odd_odd(g, 3)).unwrap();
        let (u1, u2) = ops.velocity_from_scalar(&theta, &MultiplierSpec::sqg()).unwrap();
        for s in [&theta, &u1, &u2] {
            for m in [[1i64, 2i64], [3, -4], [-5, 0], [0, 7]] {
                let a = s.complex_coefficient(m);
                let b = s.complex_coefficient([-m[0], -m[1]]);
                assert!((a - b.conj()).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn round_trip_random_fields() {
        for n in [32, 64, 128] {
            let g = grid(n);
            let ops = SpectralOps::new(g);
            let f = random_odd_odd(g, n as u64);
            let back = ops.inverse(&ops.forward(&f).unwrap()).unwrap();
            let err = (&back.values - &f.values).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err / f.max_abs() < 1e-12, "n={n} err={err}");
        }
    }

    #[test]
    fn torus_reconstruction_has_exact_symmetry() {
        let g = grid(32);
        let f = random_odd_odd(g, 11);
        let t = f.to_torus();
        let n = 32isize;
        let l = 16isize;
        let at = |i: isize, j: isize| t[[(i + l).rem_euclid(n) as usize, (j + l).rem_euclid(n) as usize]];
        for i in -l..l {
            for j in -l..l {
                let v = at(i, j);
                assert_eq!(v, -at(i, -j));
                assert_eq!(v, at(-i, -j));
                assert_eq!(v, -at(-i, j));
            }
        }
    }

    #[test]
    fn sobolev_norms_of_sin_sin() {
        let g = grid(64);
        let ops = SpectralOps::new(g);
        let s = ops.forward(&sin_sin(g)).unwrap();
        assert_relative_eq!(sobolev_norm(&s, 0.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(sobolev_norm(&s, 2.0).unwrap(), 2.0 * PI * PI, epsilon = 1e-10);
        assert_eq!(sobolev_norm(&Spectrum::zeros(g, ODD_ODD), 2.0).unwrap(), 0.0);
        assert!(sobolev_norm(&s, 3.5).is_err());
    }

    #[test]
    fn plancherel_matches_grid_quadrature() {
        let g = grid(64);
        let ops = SpectralOps::new(g);
        let f = random_odd_odd(g, 5);
        let s = ops.forward(&f).unwrap();
        let spectral = sobolev_norm(&s, 0.0).unwrap().powi(2);
        let quad = f.torus_integral(|v| v * v);
        assert_relative_eq!(spectral, quad, max_relative = 1e-10);
    }

    #[test]
    fn winfty_of_sin_sin() {
        let g = grid(256);
        let ops = SpectralOps::new(g);
        let (linf, grad) = ops.winfty_norm(&sin_sin(g)).unwrap();
        assert!((linf - 1.0).abs() < 1e-6);
        assert!((grad - PI).abs() < 1e-6);
        assert_eq!(ops.winfty_norm(&Field::zeros(g, ODD_ODD)).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn single_mode_velocity_by_hand() {
        // theta = sin(pi x1) sin(pi x2): |k| = sqrt(2) pi, psi = 2 pi / (sqrt 2 pi) theta
        let g = grid(32);
        let ops = SpectralOps::new(g);
        let mut s = Spectrum::zeros(g, ODD_ODD);
        s.set([1, 1], 1.0);
        let (u1, u2) = ops.velocity_from_scalar(&s, &MultiplierSpec::sqg()).unwrap();
        let amp = 2.0 * PI / (2f64.sqrt() * PI) * PI;
        assert_eq!(u1.parity(), [Parity::Odd, Parity::Even]);
        assert_eq!(u2.parity(), [Parity::Even, Parity::Odd]);
        assert_relative_eq!(u1.coeffs()[[1, 1]], amp, epsilon = 1e-12);
        assert_relative_eq!(u2.coeffs()[[1, 1]], -amp, epsilon = 1e-12);
        assert_eq!(u1.support(), vec![[1, 1]]);
        assert_eq!(u2.support(), vec![[1, 1]]);
        let zero = ops.velocity_from_scalar(&Spectrum::zeros(g, ODD_ODD), &MultiplierSpec::sqg()).unwrap();
        assert_eq!(zero.0.max_abs() + zero.1.max_abs(), 0.0);
    }

    #[test]
    fn velocity_is_divergence_free_mode_by_mode() {
        let g = grid(64);
        let ops = SpectralOps::new(g);
        let theta = ops.forward(&random_odd_odd(g, 9)).unwrap();
        for mult in [MultiplierSpec::sqg(), MultiplierSpec::euler(), MultiplierSpec { alpha: 1.5, gamma: 1.0, normalization: 1.0 }] {
            let (u1, u2) = ops.velocity_from_scalar(&theta, &mult).unwrap();
            let div = divergence(&u1, &u2).unwrap();
            let scale = u1.max_abs().max(u2.max_abs()) * PI * g.half() as f64;
            assert!(div.max_abs() <= 1e-15 * scale, "div {}", div.max_abs());
        }
    }

    #[test]
    fn dealias_keeps_exactly_the_retained_band() {
        let g = grid(64);
        let mut s = Spectrum::zeros(g, ODD_ODD);
        s.coeffs_mut().fill(1.0);
        let s = Spectrum::new(g, ODD_ODD, s.coeffs().clone()).unwrap();
        let d = dealias(&s);
        let cutoff = g.dealias_cutoff();
        for ((a, b), c) in d.coeffs().indexed_iter() {
            let kept = a.max(b) <= cutoff && a >= 1 && b >= 1 && a < 32 && b < 32;
            assert_eq!(*c != 0.0, kept, "({a},{b})");
        }
        assert_eq!(dealias(&d), d);
    }

    #[test]
    fn multiplier_family() {
        assert!(MultiplierSpec { alpha: 0.5, ..MultiplierSpec::sqg() }.validate().is_err());
        assert!(MultiplierSpec { gamma: -1.0, ..MultiplierSpec::sqg() }.validate().is_err());
        let m = MultiplierSpec { alpha: 1.0, gamma: 2.0, normalization: 1.0 };
        assert_relative_eq!(m.symbol(5.0), 1.0 / 5.0 / 15f64.ln().powi(2));
        assert_eq!(m.symbol(0.0), 0.0);
    }

    #[test]
    fn prolongation_reproduces_band_limited_fields() {
        let g = grid(32);
        let f = Field::from_fn(g, ODD_ODD, |x, y| (PI * x).sin() * (3.0 * PI * y).sin() + 0.5 * (5.0 * PI * x).sin() * (PI * y).sin());
        let fine = prolong(&f, 4).unwrap();
        let exact = Field::from_fn(grid(128), ODD_ODD, |x, y| (PI * x).sin() * (3.0 * PI * y).sin() + 0.5 * (5.0 * PI * x).sin() * (PI * y).sin());
        let err = (fine.values() - exact.values()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-13);
        for i in 0..=16 {
            for j in 0..=16 {
                assert!((fine.values()[[4 * i, 4 * j]] - f.values()[[i, j]]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn truncation_round_trip() {
        let g = grid(64);
        let ops = SpectralOps::new(g);
        let s = dealias(&ops.forward(&random_odd_odd(g, 1)).unwrap());
        let compact = s.truncated_coeffs(g.dealias_cutoff());
        let back = Spectrum::from_truncated(g, ODD_ODD, &compact).unwrap();
        assert_eq!(back, s);
    }
}
