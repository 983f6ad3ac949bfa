//! Direct evaluation of the periodic Biot-Savart sum
//! `u(x) = sum_n int (x - y - 2n)^perp / |x - y - 2n|^3 theta(y) dy`
//! with `z^perp = (-z2, z1)`.
//!
//! The integral over the torus is the lattice sum over the four reflections
//! of every quarter node. A block of `(2k+1)^2` nodes around the probe is left
//! out of the sum and replaced by a local correction
//! `h E_k (d2 theta(x), -d1 theta(x))`, where `E_k` is the difference between
//! the principal-value integral and the lattice sum of the linear Taylor term.
//! Since the quadratic term integrates to zero against the odd kernel, the
//! remaining error is `O(h^3)`.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{prolong, Field, Grid, Parity, SpectralError};

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("probe ({0}, {1}) lies on an axis or outside (0,1)^2 after snapping to the grid")]
    OffDomain(f64, f64),
    #[error("image radius must be at least 1")]
    ImageRadius,
    #[error("exclusion radius must be at least one grid cell")]
    ExclusionRadius,
    #[error("exclusion block around ({0}, {1}) meets its reflection across an axis and theta is nonzero there")]
    ExclusionTouchesSupport(f64, f64),
    #[error("field is not odd-odd")]
    Parity,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Evaluation point plus summation controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelProbe {
    pub x: [f64; 2],
    /// images `2n` with `|n|_inf <= image_radius` are summed
    pub image_radius: usize,
    /// half-width of the excluded node block, in grid cells
    pub exclusion_radius: usize,
}

impl KernelProbe {
    pub const DEFAULT_IMAGE_RADIUS: usize = 8;

    pub fn new(x: [f64; 2]) -> Self {
        Self { x, image_radius: Self::DEFAULT_IMAGE_RADIUS, exclusion_radius: 1 }
    }

    /// Whether the point satisfies `x1 > x2 > 0` and `|x| < 1/4`.
    pub fn in_lemma_cone(&self) -> bool {
        self.x[0] > self.x[1] && self.x[1] > 0.0 && self.x[0].hypot(self.x[1]) < 0.25
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectVelocity {
    /// grid node actually used (the probe is snapped to the nearest node)
    pub x: [f64; 2],
    pub u: [f64; 2],
    pub tail_bound: f64,
    /// magnitude of the local correction that replaced the excluded block
    pub excluded: f64,
}

/// Crude explicit constant for the image tail.
///
/// Pairing the images `n` and `(-n1, n2)` turns each quadruple into a mixed
/// second difference of `K1`, bounded by `4 x1 y1 y2 sup|d1 d2 K1|` with
/// `|d1 d2 K1| <= 18 |z|^-4`. Images in the shell `|n|_inf = k >= 2` keep a
/// distance of at least `2k - 5/4 >= (11/8) k` from the quarter, there are at
/// most `8k` of them, and `sum_{k > N} k^-3 <= 1/(2 N^2)`. The extra `sqrt 2`
/// covers `|u|` rather than `|u1|`.
pub const TAIL_CONSTANT: f64 = std::f64::consts::SQRT_2 * 4.0 * 72.0 / (2.0 * 1.375 * 1.375 * 1.375 * 1.375);

/// Bound on the contribution of all images with `|n|_inf > image_radius`.
pub fn tail_bound(theta_inf: f64, x1: f64, image_radius: usize) -> f64 {
    let n = image_radius.max(1) as f64;
    TAIL_CONSTANT * x1.abs() * theta_inf / (n * n)
}

/// `lim_m [ pv-integral - lattice sum ]` of `j^2 / (i^2 + j^2)^{3/2}` over the
/// square `[-m-1/2, m+1/2]^2`, with the `(2k+1)^2` central block excluded from
/// the lattice sum.
pub fn local_correction_constant(k: usize) -> f64 {
    static CACHE: OnceLock<Mutex<BTreeMap<usize, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
    if let Some(v) = cache.lock().expect("cache lock").get(&k) {
        return *v;
    }
    let v = extrapolate_correction(k);
    cache.lock().expect("cache lock").insert(k, v);
    v
}

fn truncated_correction(k: usize, m: usize) -> f64 {
    // j^2/r^3 summed over a symmetric set equals half the sum of 1/r
    let mut s = 0.0;
    let (m, k) = (m as i64, k as i64);
    for i in -m..=m {
        for j in -m..=m {
            if i.abs().max(j.abs()) > k {
                s += 1.0 / ((i * i + j * j) as f64).sqrt();
            }
        }
    }
    4.0 * (m as f64 + 0.5) * 1f64.asinh() - 0.5 * s
}

fn extrapolate_correction(k: usize) -> f64 {
    // error behaves like a/m + b/m^2
    let base = 128.max(8 * (k + 1));
    let e: Vec<f64> = [base, 2 * base, 4 * base].iter().map(|&m| truncated_correction(k, m)).collect();
    let r1 = 2.0 * e[1] - e[0];
    let r2 = 2.0 * e[2] - e[1];
    (4.0 * r2 - r1) / 3.0
}

const FD6: [f64; 3] = [3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];

fn node_gradient(theta: &Field, p: [isize; 2]) -> [f64; 2] {
    let h = theta.grid().spacing();
    let mut g = [0.0; 2];
    for (s, c) in FD6.iter().enumerate() {
        let s = s as isize + 1;
        g[0] += c * (theta.torus_value(p[0] + s, p[1]) - theta.torus_value(p[0] - s, p[1]));
        g[1] += c * (theta.torus_value(p[0], p[1] + s) - theta.torus_value(p[0], p[1] - s));
    }
    [g[0] / h, g[1] / h]
}

/// Direct evaluator bound to one field.
///
/// With `refine > 1` the sum runs over the band-limited interpolant of the
/// field sampled on a lattice `refine` times finer, so the quadrature error
/// of the singular sum no longer depends on how well the native lattice
/// resolves `theta`.
#[derive(Clone, Debug)]
pub struct DirectKernel {
    field: Field,
    native: Grid,
    refine: usize,
    theta_inf: f64,
    tables: Arc<Mutex<TableCache>>,
}

/// Keyed by (image radius, exclusion radius).
type TableCache = BTreeMap<(usize, usize), Arc<ImageTable>>;

/// Periodized kernel tabulated by integer node offset `d = p - i`, with the
/// images summed and the exclusion block already removed. Probes and sources
/// both sit on lattice nodes, so this is all the sum ever needs.
#[derive(Debug)]
struct ImageTable {
    lo: isize,
    width: usize,
    g: Vec<[f64; 2]>,
}

impl ImageTable {
    fn build(grid: Grid, image_radius: usize, exclusion: usize) -> Self {
        let n_res = grid.resolution() as isize;
        let l = grid.half() as isize;
        let h = grid.spacing();
        let (nimg, k) = (image_radius as isize, exclusion as isize);
        // probe index in [1, l - 1], reflected source index in [-l, l]
        let lo = 1 - l;
        let width = (3 * l - 1) as usize;
        let mut g = vec![[0.0; 2]; width * width];
        for a in 0..width {
            let d1 = lo + a as isize;
            for b in 0..width {
                let d2 = lo + b as isize;
                let mut u = [0.0f64; 2];
                for n1 in -nimg..=nimg {
                    let e1 = d1 - n1 * n_res;
                    let z1 = e1 as f64 * h;
                    for n2 in -nimg..=nimg {
                        let e2 = d2 - n2 * n_res;
                        if e1.abs() <= k && e2.abs() <= k {
                            continue;
                        }
                        let z2 = e2 as f64 * h;
                        let r2s = z1 * z1 + z2 * z2;
                        let inv3 = 1.0 / (r2s * r2s.sqrt());
                        u[0] -= z2 * inv3;
                        u[1] += z1 * inv3;
                    }
                }
                g[a * width + b] = u;
            }
        }
        Self { lo, width, g }
    }

    fn at(&self, d1: isize, d2: isize) -> [f64; 2] {
        self.g[(d1 - self.lo) as usize * self.width + (d2 - self.lo) as usize]
    }
}

impl DirectKernel {
    pub fn new(theta: &Field, refine: usize) -> Result<Self, KernelError> {
        if theta.parity() != [Parity::Odd, Parity::Odd] {
            return Err(KernelError::Parity);
        }
        let refine = refine.max(1);
        Ok(Self {
            field: prolong(theta, refine)?,
            native: theta.grid(),
            refine,
            theta_inf: theta.max_abs(),
            tables: Arc::default(),
        })
    }

    pub fn native_grid(&self) -> Grid {
        self.native
    }

    fn table(&self, image_radius: usize, exclusion: usize) -> Arc<ImageTable> {
        let mut tables = self.tables.lock().unwrap_or_else(|e| e.into_inner());
        tables
            .entry((image_radius, exclusion))
            .or_insert_with(|| Arc::new(ImageTable::build(self.field.grid(), image_radius, exclusion)))
            .clone()
    }

    /// Native grid node used for a requested point.
    pub fn snap(&self, x: [f64; 2]) -> [f64; 2] {
        let g = self.native;
        [g.coord(g.nearest_index(x[0])), g.coord(g.nearest_index(x[1]))]
    }

    /// Velocity at the native grid node nearest to `probe.x`.
    pub fn velocity(&self, probe: &KernelProbe) -> Result<DirectVelocity, KernelError> {
        if probe.image_radius < 1 {
            return Err(KernelError::ImageRadius);
        }
        if probe.exclusion_radius < 1 {
            return Err(KernelError::ExclusionRadius);
        }
        let native = self.native;
        let pn = [native.nearest_index(probe.x[0]), native.nearest_index(probe.x[1])];
        let x = [native.coord(pn[0]), native.coord(pn[1])];
        let ln = native.half() as isize;
        if pn[0] <= 0 || pn[1] <= 0 || pn[0] >= ln || pn[1] >= ln {
            return Err(KernelError::OffDomain(x[0], x[1]));
        }
        let theta = &self.field;
        let grid = theta.grid();
        let h = grid.spacing();
        let r = self.refine as isize;
        let p = [pn[0] * r, pn[1] * r];
        let k = probe.exclusion_radius as isize;
        if p[0] <= k || p[1] <= k {
            for i in p[0] - k..=p[0] + k {
                for j in p[1] - k..=p[1] + k {
                    if theta.torus_value(i, j) != 0.0 {
                        return Err(KernelError::ExclusionTouchesSupport(x[0], x[1]));
                    }
                }
            }
        }

        let table = self.table(probe.image_radius, probe.exclusion_radius);
        let w = h * h;
        let mut u = [0.0f64; 2];
        for ((j1, j2), v) in theta.values().indexed_iter() {
            if *v == 0.0 {
                continue;
            }
            let (j1, j2) = (j1 as isize, j2 as isize);
            for (s1, s2) in [(1isize, 1isize), (-1, 1), (-1, -1), (1, -1)] {
                let q = w * (s1 * s2) as f64 * v;
                let g = table.at(p[0] - s1 * j1, p[1] - s2 * j2);
                u[0] += q * g[0];
                u[1] += q * g[1];
            }
        }

        let grad = node_gradient(theta, p);
        let e = local_correction_constant(probe.exclusion_radius);
        let corr = [h * e * grad[1], -h * e * grad[0]];
        u[0] += corr[0];
        u[1] += corr[1];
        Ok(DirectVelocity {
            x,
            u,
            tail_bound: tail_bound(self.theta_inf, x[0], probe.image_radius),
            excluded: corr[0].hypot(corr[1]),
        })
    }
}

/// Velocity at the grid node nearest to `probe.x`, summed on the native lattice.
pub fn direct_velocity(theta: &Field, probe: &KernelProbe) -> Result<DirectVelocity, KernelError> {
    DirectKernel::new(theta, 1)?.velocity(probe)
}
