//! Leading hyperbolic term and remainders of the velocity near the origin,
//! plus the one-dimensional Hardy inequalities.
//!
//! For `x1 > x2 > 0` and `|x| < 1/4` the velocity of odd-odd data satisfies
//! `u1/x1 ~ L(x)` and `u2/x2 ~ -L(x)` with
//! `L(x) = 12 int_{Q(x)} y1 y2 / |y|^5 theta(y) dy`, `Q(x) = [2 x1, 1] x [0, 1]`.
//! The remainders are compared against two families of bounds:
//! `H^2`-type (`B1`, `B2`, `B3`) and Lipschitz-type (`B4`, `B5`, `B6`).
//! Every bound is reported as a ratio; the constants are measured, not assumed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{DirectKernel, KernelError, KernelProbe};
use crate::spectral::{derivative, sobolev_norm, Field, Grid, SpectralError, SpectralOps};

#[derive(Debug, Error, PartialEq)]
pub enum KeyLemmaError {
    #[error("probe ({0}, {1}) is outside the cone x1 > x2 > 0, |x| < 1/4")]
    OutsideCone(f64, f64),
    #[error("Q(x) is empty for x1 = {0} >= 1/2")]
    EmptyQ(f64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Error, PartialEq)]
pub enum HardyError {
    #[error("f(0) = {0} is not zero")]
    NonzeroAtOrigin(f64),
    #[error("need an even number of intervals and matching sample lengths")]
    Samples,
    #[error("interval length {0} not in (0, 1]")]
    Length(f64),
}

/// Norms entering the remainder bounds. `[0,1]^2` norms are quarter-domain norms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LemmaNorms {
    /// `||grad^2 theta||_{L2([0,1]^2)}`
    pub hessian_l2: f64,
    /// `||theta||_{L_inf}`
    pub theta_inf: f64,
    /// `||grad theta||_{L2(R(x))}`
    pub grad_l2_r: f64,
    /// `||y2^{-1} d1 theta||_{L2(R(x))}`
    pub weighted_d1_l2_r: f64,
    /// `||grad^2 theta||_{L2(R(x))}`, the norm used in the proof's estimate
    pub hessian_l2_r: f64,
    /// `||grad theta||_{L_inf([0,1]^2)}`
    pub grad_inf: f64,
    /// `||grad theta||_{L_inf(R(x))}`
    pub grad_inf_r: f64,
}

/// Remainders normalized by their bounds (the empirical constants).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LemmaRatios {
    /// `res1 / (||grad^2 theta|| + ||theta||_inf)`
    pub res1: f64,
    /// `res2 / [(1+log) (||grad^2 theta|| + ||theta||_inf) + (1+log)^{3/2} (||grad theta||_R + ||y2^{-1} d1 theta||_R)]`
    pub res2: f64,
    /// `res1 / (||grad theta||_inf + ||theta||_inf)`
    pub res1_lipschitz: f64,
    /// `res2 / [(1+log) (||grad theta||_inf + ||theta||_inf) + (1+log)^2 ||grad theta||_{inf,R}]`
    pub res2_lipschitz: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyLemmaReport {
    /// snapped probe
    pub x: [f64; 2],
    pub u: [f64; 2],
    pub leading: f64,
    pub res1: f64,
    pub res2: f64,
    pub norms: LemmaNorms,
    /// `1 + log(x1/x2)`
    pub logfac: f64,
    pub ratios: LemmaRatios,
    /// `R(x)` sticks out of `[0,1]^2`
    pub r_clipped: bool,
    /// `theta` vanishes on `R(x)` (the `B3`/`B6` terms drop)
    pub r_empty: bool,
}

/// Weights of node cells `[(i-1/2)h, (i+1/2)h]` overlapping `[a, b] ∩ [0, 1]`.
fn overlap_weights(grid: Grid, a: f64, b: f64) -> Vec<(usize, f64)> {
    let h = grid.spacing();
    let l = grid.half();
    let (a, b) = (a.max(0.0), b.min(1.0));
    let mut out = Vec::new();
    if b <= a {
        return out;
    }
    let lo = ((a / h) - 0.5).floor().max(0.0) as usize;
    let hi = (((b / h) + 0.5).ceil() as usize).min(l);
    for i in lo..=hi {
        let c0 = ((i as f64 - 0.5) * h).max(0.0);
        let c1 = ((i as f64 + 0.5) * h).min(1.0);
        let w = (c1.min(b) - c0.max(a)).max(0.0) / h;
        if w > 0.0 {
            out.push((i, w));
        }
    }
    out
}

/// Precomputed derivative fields and direct evaluator for one `theta`.
#[derive(Clone, Debug)]
pub struct KeyLemmaVerifier {
    theta: Field,
    d1: Field,
    d2: Field,
    d11: Field,
    d12: Field,
    d22: Field,
    kernel: DirectKernel,
    hessian_l2: f64,
    theta_inf: f64,
    grad_inf: f64,
    image_radius: usize,
}

impl KeyLemmaVerifier {
    /// `refine` is passed to the direct evaluator.
    pub fn new(theta: &Field, refine: usize) -> Result<Self, KeyLemmaError> {
        let ops = SpectralOps::new(theta.grid());
        let s = ops.forward(theta)?;
        let (s1, s2) = (derivative(&s, 0), derivative(&s, 1));
        let d1 = ops.inverse(&s1)?;
        let d2 = ops.inverse(&s2)?;
        let d11 = ops.inverse(&derivative(&s1, 0))?;
        let d12 = ops.inverse(&derivative(&s1, 1))?;
        let d22 = ops.inverse(&derivative(&s2, 1))?;
        // on the torus int |grad^2 theta|^2 = int |Delta theta|^2; the quarter holds a fourth
        let hessian_l2 = 0.5 * sobolev_norm(&s, 2.0)?;
        let grad_inf = ndarray::Zip::from(d1.values())
            .and(d2.values())
            .fold(0.0f64, |m, a, b| m.max(a.hypot(*b)));
        Ok(Self {
            theta: theta.clone(),
            kernel: DirectKernel::new(theta, refine)?,
            d1,
            d2,
            d11,
            d12,
            d22,
            hessian_l2,
            theta_inf: theta.max_abs(),
            grad_inf,
            image_radius: KernelProbe::DEFAULT_IMAGE_RADIUS,
        })
    }

    pub fn with_image_radius(mut self, image_radius: usize) -> Self {
        self.image_radius = image_radius;
        self
    }

    pub fn grid(&self) -> Grid {
        self.theta.grid()
    }

    /// `12 int_{Q(x)} y1 y2 / |y|^5 theta dy` by the midpoint rule on node
    /// cells, with the cells cut by `y1 = 2 x1` weighted by their overlap.
    pub fn leading_term(&self, x: [f64; 2]) -> Result<f64, KeyLemmaError> {
        if x[0] >= 0.5 {
            return Err(KeyLemmaError::EmptyQ(x[0]));
        }
        let g = self.grid();
        let h = g.spacing();
        let v = self.theta.values();
        let rows = overlap_weights(g, 2.0 * x[0], 1.0);
        let mut s = 0.0;
        for (i, wi) in rows {
            let y1 = i as f64 * h;
            for j in 1..g.half() {
                let t = v[[i, j]];
                if t == 0.0 {
                    continue;
                }
                let y2 = j as f64 * h;
                let r2 = y1 * y1 + y2 * y2;
                s += wi * y1 * y2 / (r2 * r2 * r2.sqrt()) * t;
            }
        }
        Ok(12.0 * s * h * h)
    }

    fn region_norms(&self, x: [f64; 2]) -> (f64, f64, f64, f64, bool) {
        let g = self.grid();
        let h = g.spacing();
        let rows = overlap_weights(g, 0.5 * x[0], 2.0 * x[0]);
        let cols = overlap_weights(g, 2.0 * x[1], 1.0);
        let (d1, d2) = (self.d1.values(), self.d2.values());
        let (d11, d12, d22) = (self.d11.values(), self.d12.values(), self.d22.values());
        let tv = self.theta.values();
        let (mut grad, mut weighted, mut hess, mut ginf) = (0.0, 0.0, 0.0, 0.0f64);
        let mut empty = true;
        for &(i, wi) in &rows {
            for &(j, wj) in &cols {
                let w = wi * wj;
                let (a, b) = (d1[[i, j]], d2[[i, j]]);
                let y2 = j as f64 * h;
                grad += w * (a * a + b * b);
                weighted += w * a * a / (y2 * y2);
                hess += w * (d11[[i, j]].powi(2) + 2.0 * d12[[i, j]].powi(2) + d22[[i, j]].powi(2));
                ginf = ginf.max(a.hypot(b));
                if tv[[i, j]] != 0.0 {
                    empty = false;
                }
            }
        }
        let a = h * h;
        ((grad * a).sqrt(), (weighted * a).sqrt(), (hess * a).sqrt(), ginf, empty)
    }

    /// Full report at the grid node nearest to `x`, with both bound families.
    pub fn report(&self, x: [f64; 2]) -> Result<KeyLemmaReport, KeyLemmaError> {
        let probe = KernelProbe { x, image_radius: self.image_radius, exclusion_radius: 1 };
        let xs = self.kernel.snap(x);
        if !(KernelProbe { x: xs, ..probe }).in_lemma_cone() {
            return Err(KeyLemmaError::OutsideCone(xs[0], xs[1]));
        }
        let dv = self.kernel.velocity(&probe)?;
        let leading = self.leading_term(xs)?;
        let res1 = (dv.u[0] / xs[0] - leading).abs();
        let res2 = (dv.u[1] / xs[1] + leading).abs();
        let (grad_l2_r, weighted_d1_l2_r, hessian_l2_r, grad_inf_r, r_empty) = self.region_norms(xs);
        let norms = LemmaNorms {
            hessian_l2: self.hessian_l2,
            theta_inf: self.theta_inf,
            grad_l2_r,
            weighted_d1_l2_r,
            hessian_l2_r,
            grad_inf: self.grad_inf,
            grad_inf_r,
        };
        let logfac = 1.0 + (xs[0] / xs[1]).ln();
        let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else if num == 0.0 { 0.0 } else { f64::INFINITY };
        let b12 = norms.hessian_l2 + norms.theta_inf;
        let b45 = norms.grad_inf + norms.theta_inf;
        let ratios = LemmaRatios {
            res1: ratio(res1, b12),
            res2: ratio(res2, logfac * b12 + logfac.powf(1.5) * (grad_l2_r + weighted_d1_l2_r)),
            res1_lipschitz: ratio(res1, b45),
            res2_lipschitz: ratio(res2, logfac * b45 + logfac * logfac * grad_inf_r),
        };
        Ok(KeyLemmaReport {
            x: xs,
            u: dv.u,
            leading,
            res1,
            res2,
            norms,
            logfac,
            ratios,
            r_clipped: 2.0 * xs[0] > 1.0 || 2.0 * xs[1] > 1.0,
            r_empty,
        })
    }
}

/// One-off leading term.
pub fn leading_term(theta: &Field, x: [f64; 2]) -> Result<f64, KeyLemmaError> {
    KeyLemmaVerifier::new(theta, 1)?.leading_term(x)
}

/// Remainders against the `H^2`-type bounds.
pub fn residuals(theta: &Field, x: [f64; 2]) -> Result<KeyLemmaReport, KeyLemmaError> {
    KeyLemmaVerifier::new(theta, 1)?.report(x)
}

/// Remainders against the Lipschitz-type bounds. The report carries both
/// families; this entry point exists for symmetry with [`residuals`].
pub fn residuals_lipschitz(theta: &Field, x: [f64; 2]) -> Result<KeyLemmaReport, KeyLemmaError> {
    residuals(theta, x)
}

/// Largest normalized ratios over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyLemmaSummary {
    pub probes: usize,
    pub max: LemmaRatios,
    pub r_empty_probes: usize,
}

pub fn summarize(reports: &[KeyLemmaReport]) -> KeyLemmaSummary {
    let mut s = KeyLemmaSummary { probes: reports.len(), ..Default::default() };
    for r in reports {
        s.max.res1 = s.max.res1.max(r.ratios.res1);
        s.max.res2 = s.max.res2.max(r.ratios.res2);
        s.max.res1_lipschitz = s.max.res1_lipschitz.max(r.ratios.res1_lipschitz);
        s.max.res2_lipschitz = s.max.res2_lipschitz.max(r.ratios.res2_lipschitz);
        if r.r_empty {
            s.r_empty_probes += 1;
        }
    }
    s
}

/// Probe points on `grid` nodes inside the cone: `on_support` drawn from the
/// nodes where `theta != 0`, the rest spread over the given rings
/// `|x| = radius` (meant to lie between bubbles) at random angles.
pub fn sample_probes(theta: &Field, on_support: usize, rings: &[f64], per_ring: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = theta.grid();
    let h = g.spacing();
    let in_cone = |x: [f64; 2]| x[0] > x[1] && x[1] > 2.0 * h && x[0].hypot(x[1]) < 0.25;
    let mut support: Vec<[f64; 2]> = theta
        .values()
        .indexed_iter()
        .filter(|(_, v)| **v != 0.0)
        .map(|((i, j), _)| [i as f64 * h, j as f64 * h])
        .filter(|x| in_cone(*x))
        .collect();
    support.shuffle(&mut rng);
    let mut out: Vec<[f64; 2]> = support.into_iter().take(on_support).collect();
    for &r in rings {
        let mut placed = 0;
        let mut tries = 0;
        while placed < per_ring && tries < 100 * per_ring {
            tries += 1;
            let a = rng.gen_range(0.0..std::f64::consts::FRAC_PI_4);
            let x = [g.coord(g.nearest_index(r * a.cos())), g.coord(g.nearest_index(r * a.sin()))];
            if in_cone(x) && !out.contains(&x) {
                out.push(x);
                placed += 1;
            }
        }
    }
    out
}

/// Both sides of both Hardy inequalities on `(0, l)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardyResult {
    /// `||f/x||`
    pub lhs1: f64,
    /// `2 ||f'||`
    pub rhs1: f64,
    /// `||f/x^2||`, infinite unless `f'(0) = 0`
    pub lhs2: f64,
    /// `sqrt(2) ||f''||`, so that the second inequality reads `lhs2^2 <= rhs2^2`
    pub rhs2: f64,
}

impl HardyResult {
    pub fn first_holds(&self) -> bool {
        self.lhs1 <= self.rhs1
    }

    pub fn second_holds(&self) -> bool {
        self.lhs2 * self.lhs2 <= self.rhs2 * self.rhs2
    }
}

/// Uniform samples of `f`, `f'`, `f''` at `x_i = i l / m`, `i = 0..=m`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledFunction {
    pub l: f64,
    pub f: Vec<f64>,
    pub df: Vec<f64>,
    pub d2f: Vec<f64>,
}

impl SampledFunction {
    pub fn from_fn(l: f64, m: usize, f: impl Fn(f64) -> (f64, f64, f64)) -> Self {
        let mut s = Self { l, f: Vec::with_capacity(m + 1), df: Vec::with_capacity(m + 1), d2f: Vec::with_capacity(m + 1) };
        for i in 0..=m {
            let (a, b, c) = f(l * i as f64 / m as f64);
            s.f.push(a);
            s.df.push(b);
            s.d2f.push(c);
        }
        s
    }
}

fn simpson(values: impl Iterator<Item = f64>, m: usize, dx: f64) -> f64 {
    let mut s = 0.0;
    for (i, v) in values.enumerate() {
        let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * v;
    }
    s * dx / 3.0
}

/// Composite Simpson evaluation; the singular quotients take their limits at 0.
pub fn hardy_check(sample: &SampledFunction) -> Result<HardyResult, HardyError> {
    let m = sample.f.len().saturating_sub(1);
    if m < 2 || !m.is_multiple_of(2) || sample.df.len() != m + 1 || sample.d2f.len() != m + 1 {
        return Err(HardyError::Samples);
    }
    if !(sample.l > 0.0 && sample.l <= 1.0) {
        return Err(HardyError::Length(sample.l));
    }
    let scale = sample.f.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    if sample.f[0].abs() > 1e-12 * scale {
        return Err(HardyError::NonzeroAtOrigin(sample.f[0]));
    }
    let dx = sample.l / m as f64;
    let x = |i: usize| i as f64 * dx;
    let q1 = (0..=m).map(|i| if i == 0 { sample.df[0] } else { sample.f[i] / x(i) });
    let lhs1 = simpson(q1.map(|v| v * v), m, dx).sqrt();
    let rhs1 = 2.0 * simpson(sample.df.iter().map(|v| v * v), m, dx).sqrt();
    let dscale = sample.df.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let lhs2 = if sample.df[0].abs() > 1e-9 * dscale {
        f64::INFINITY
    } else {
        let q2 = (0..=m).map(|i| if i == 0 { 0.5 * sample.d2f[0] } else { sample.f[i] / (x(i) * x(i)) });
        simpson(q2.map(|v| v * v), m, dx).sqrt()
    };
    let rhs2 = std::f64::consts::SQRT_2 * simpson(sample.d2f.iter().map(|v| v * v), m, dx).sqrt();
    Ok(HardyResult { lhs1, rhs1, lhs2, rhs2 })
}

/// Random sine series `sum a_k sin(k pi x / l)` with `sum k a_k = 0`, so that
/// `f(0) = f'(0) = 0`.
pub fn random_hardy_function(rng: &mut impl Rng, l: f64, modes: usize, m: usize) -> SampledFunction {
    let mut a: Vec<f64> = (1..=modes).map(|k| rng.gen_range(-1.0..1.0) / (k * k) as f64).collect();
    // remove the component along (1, 2, ..., K)
    let kk: f64 = (1..=modes).map(|k| (k * k) as f64).sum();
    let dot: f64 = a.iter().enumerate().map(|(i, v)| v * (i + 1) as f64).sum();
    for (i, v) in a.iter_mut().enumerate() {
        *v -= dot / kk * (i + 1) as f64;
    }
    let w = std::f64::consts::PI / l;
    SampledFunction::from_fn(l, m, |x| {
        let (mut f, mut d1, mut d2) = (0.0, 0.0, 0.0);
        for (i, c) in a.iter().enumerate() {
            let k = (i + 1) as f64 * w;
            let (s, co) = (k * x).sin_cos();
            f += c * s;
            d1 += c * k * co;
            d2 -= c * k * k * s;
        }
        (f, d1, d2)
    })
}
