//! Experiment configuration: TOML in, validated [`ExperimentConfig`] out.
//!
//! Every field is required. Validation collects all problems and reports
//! them with their full path (`evolution.cfl: ...`).

use serde::{Deserialize, Serialize};
use sqg_core::data::DataSpec;
use sqg_core::evolution::{DtPolicy, EvolutionConfig};
use sqg_core::spectral::{Grid, MultiplierSpec};
use sqg_core::tracker::MarkerPolicy;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    data: Option<RawData>,
    grid: Option<RawGrid>,
    multiplier: Option<RawMultiplier>,
    evolution: Option<RawEvolution>,
    kernel: Option<RawKernel>,
    lemmas: Option<RawLemmas>,
    markers: Option<RawMarkers>,
    trace: Option<RawTrace>,
    report: Option<RawReport>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    n0: Option<u32>,
    n_max: Option<u32>,
    alpha: Option<f64>,
    scale_ratio: Option<f64>,
    outer_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    resolution: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMultiplier {
    alpha: Option<f64>,
    gamma: Option<f64>,
    normalization: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvolution {
    cfl: Option<f64>,
    t_end: Option<f64>,
    snapshot_stride: Option<usize>,
    dealias: Option<bool>,
    exhaustion_threshold: Option<f64>,
    max_steps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernel {
    probes: Option<usize>,
    refine: Option<usize>,
    image_radius: Option<usize>,
    tolerance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLemmas {
    probe_resolution: Option<usize>,
    on_support: Option<usize>,
    rings: Option<Vec<f64>>,
    per_ring: Option<usize>,
    refine: Option<usize>,
    image_radius: Option<usize>,
    hardy_functions: Option<usize>,
    hardy_lengths: Option<Vec<f64>>,
    hardy_modes: Option<usize>,
    hardy_samples: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMarkers {
    ring: Option<usize>,
    interior: Option<usize>,
    quadrature: Option<usize>,
    substeps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrace {
    t_end: Option<f64>,
    transport_tolerance: Option<f64>,
    continuity_pairs: Option<usize>,
    squeeze_spacing: Option<f64>,
    per_bubble_stride: Option<usize>,
    h2_margin_cells: Option<f64>,
    trajectory_stride: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReport {
    inflation_factor: Option<f64>,
    loglip_pairs: Option<usize>,
    loglip_stride: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelCheck {
    pub probes: usize,
    pub refine: usize,
    pub image_radius: usize,
    /// pass threshold on the relative sup error
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaCheck {
    /// probes are nodes of this lattice (so they are shared by refinements)
    pub probe_resolution: usize,
    pub on_support: usize,
    pub rings: Vec<f64>,
    pub per_ring: usize,
    pub refine: usize,
    pub image_radius: usize,
    pub hardy_functions: usize,
    pub hardy_lengths: Vec<f64>,
    pub hardy_modes: usize,
    pub hardy_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceSettings {
    pub t_end: f64,
    pub substeps: usize,
    pub transport_tolerance: f64,
    pub continuity_pairs: usize,
    pub squeeze_spacing: f64,
    pub per_bubble_stride: usize,
    pub h2_margin_cells: f64,
    pub trajectory_stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportSettings {
    pub inflation_factor: f64,
    pub loglip_pairs: usize,
    pub loglip_stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSpec,
    pub resolution: usize,
    pub multiplier: MultiplierSpec,
    pub evolution: EvolutionConfig,
    pub max_steps: usize,
    pub kernel: KernelCheck,
    pub lemmas: LemmaCheck,
    pub markers: MarkerPolicy,
    pub trace: TraceSettings,
    pub report: ReportSettings,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

struct Check {
    errors: Vec<String>,
}

impl Check {
    fn req<T: Clone>(&mut self, path: &str, v: &Option<T>) -> Option<T> {
        if v.is_none() {
            self.errors.push(format!("{path}: missing"));
        }
        v.clone()
    }

    fn rule(&mut self, ok: bool, path: &str, msg: impl FnOnce() -> String) {
        if !ok {
            self.errors.push(format!("{path}: {}", msg()));
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let mut c = Check { errors: Vec::new() };
        let seed = c.req("seed", &raw.seed);

        let d = raw.data.unwrap_or_default();
        let n0 = c.req("data.n0", &d.n0);
        let n_max = c.req("data.n_max", &d.n_max);
        let alpha = c.req("data.alpha", &d.alpha);
        let scale_ratio = c.req("data.scale_ratio", &d.scale_ratio);
        let outer_scale = c.req("data.outer_scale", &d.outer_scale);

        let g = raw.grid.unwrap_or_default();
        let resolution = c.req("grid.resolution", &g.resolution);

        let m = raw.multiplier.unwrap_or_default();
        let m_alpha = c.req("multiplier.alpha", &m.alpha);
        let m_gamma = c.req("multiplier.gamma", &m.gamma);
        let m_norm = c.req("multiplier.normalization", &m.normalization);

        let e = raw.evolution.unwrap_or_default();
        let cfl = c.req("evolution.cfl", &e.cfl);
        let t_end = c.req("evolution.t_end", &e.t_end);
        let snapshot_stride = c.req("evolution.snapshot_stride", &e.snapshot_stride);
        let dealias = c.req("evolution.dealias", &e.dealias);
        let exhaustion = c.req("evolution.exhaustion_threshold", &e.exhaustion_threshold);
        let max_steps = c.req("evolution.max_steps", &e.max_steps);

        let k = raw.kernel.unwrap_or_default();
        let k_probes = c.req("kernel.probes", &k.probes);
        let k_refine = c.req("kernel.refine", &k.refine);
        let k_images = c.req("kernel.image_radius", &k.image_radius);
        let k_tol = c.req("kernel.tolerance", &k.tolerance);

        let l = raw.lemmas.unwrap_or_default();
        let probe_resolution = c.req("lemmas.probe_resolution", &l.probe_resolution);
        let on_support = c.req("lemmas.on_support", &l.on_support);
        let rings = c.req("lemmas.rings", &l.rings);
        let per_ring = c.req("lemmas.per_ring", &l.per_ring);
        let l_refine = c.req("lemmas.refine", &l.refine);
        let l_images = c.req("lemmas.image_radius", &l.image_radius);
        let hardy_functions = c.req("lemmas.hardy_functions", &l.hardy_functions);
        let hardy_lengths = c.req("lemmas.hardy_lengths", &l.hardy_lengths);
        let hardy_modes = c.req("lemmas.hardy_modes", &l.hardy_modes);
        let hardy_samples = c.req("lemmas.hardy_samples", &l.hardy_samples);

        let mk = raw.markers.unwrap_or_default();
        let ring = c.req("markers.ring", &mk.ring);
        let interior = c.req("markers.interior", &mk.interior);
        let quadrature = c.req("markers.quadrature", &mk.quadrature);
        let substeps = c.req("markers.substeps", &mk.substeps);

        let t = raw.trace.unwrap_or_default();
        let tr_end = c.req("trace.t_end", &t.t_end);
        let transport_tolerance = c.req("trace.transport_tolerance", &t.transport_tolerance);
        let continuity_pairs = c.req("trace.continuity_pairs", &t.continuity_pairs);
        let squeeze_spacing = c.req("trace.squeeze_spacing", &t.squeeze_spacing);
        let per_bubble_stride = c.req("trace.per_bubble_stride", &t.per_bubble_stride);
        let h2_margin_cells = c.req("trace.h2_margin_cells", &t.h2_margin_cells);
        let trajectory_stride = c.req("trace.trajectory_stride", &t.trajectory_stride);

        let r = raw.report.unwrap_or_default();
        let inflation_factor = c.req("report.inflation_factor", &r.inflation_factor);
        let loglip_pairs = c.req("report.loglip_pairs", &r.loglip_pairs);
        let loglip_stride = c.req("report.loglip_stride", &r.loglip_stride);

        if !c.errors.is_empty() {
            return Err(ConfigError::Invalid(c.errors));
        }
        // every field is present from here on
        let data = DataSpec {
            n0: n0.unwrap(),
            n_max: n_max.unwrap(),
            alpha: alpha.unwrap(),
            scale_ratio: scale_ratio.unwrap(),
            outer_scale: outer_scale.unwrap(),
        };
        let resolution = resolution.unwrap();
        let multiplier = MultiplierSpec { alpha: m_alpha.unwrap(), gamma: m_gamma.unwrap(), normalization: m_norm.unwrap() };
        let evolution = EvolutionConfig {
            multiplier,
            dt_policy: DtPolicy::Cfl(cfl.unwrap()),
            t_end: t_end.unwrap(),
            snapshot_stride: snapshot_stride.unwrap(),
            dealias: dealias.unwrap(),
            exhaustion_threshold: exhaustion.unwrap(),
        };
        let cfg = ExperimentConfig {
            seed: seed.unwrap(),
            data,
            resolution,
            multiplier,
            evolution,
            max_steps: max_steps.unwrap(),
            kernel: KernelCheck {
                probes: k_probes.unwrap(),
                refine: k_refine.unwrap(),
                image_radius: k_images.unwrap(),
                tolerance: k_tol.unwrap(),
            },
            lemmas: LemmaCheck {
                probe_resolution: probe_resolution.unwrap(),
                on_support: on_support.unwrap(),
                rings: rings.unwrap(),
                per_ring: per_ring.unwrap(),
                refine: l_refine.unwrap(),
                image_radius: l_images.unwrap(),
                hardy_functions: hardy_functions.unwrap(),
                hardy_lengths: hardy_lengths.unwrap(),
                hardy_modes: hardy_modes.unwrap(),
                hardy_samples: hardy_samples.unwrap(),
            },
            markers: MarkerPolicy { ring: ring.unwrap(), interior: interior.unwrap(), quadrature: quadrature.unwrap() },
            trace: TraceSettings {
                t_end: tr_end.unwrap(),
                substeps: substeps.unwrap(),
                transport_tolerance: transport_tolerance.unwrap(),
                continuity_pairs: continuity_pairs.unwrap(),
                squeeze_spacing: squeeze_spacing.unwrap(),
                per_bubble_stride: per_bubble_stride.unwrap(),
                h2_margin_cells: h2_margin_cells.unwrap(),
                trajectory_stride: trajectory_stride.unwrap(),
            },
            report: ReportSettings {
                inflation_factor: inflation_factor.unwrap(),
                loglip_pairs: loglip_pairs.unwrap(),
                loglip_stride: loglip_stride.unwrap(),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let mut c = Check { errors: Vec::new() };
        if let Err(e) = self.data.validate() {
            c.errors.push(format!("data: {e}"));
        }
        match Grid::new(self.resolution) {
            Err(e) => c.errors.push(format!("grid.resolution: {e}")),
            Ok(g) => {
                if c.errors.is_empty() {
                    if let Err(e) = self.data.check_resolved(&g) {
                        c.errors.push(format!("grid.resolution: {e}"));
                    }
                }
            }
        }
        if let Err(e) = self.multiplier.validate() {
            c.errors.push(format!("multiplier: {e}"));
        }
        let cfl = match self.evolution.dt_policy {
            DtPolicy::Cfl(v) => v,
            DtPolicy::Fixed(v) => v,
        };
        c.rule(cfl > 0.0 && cfl < 1.0, "evolution.cfl", || format!("must lie in (0, 1), got {cfl}"));
        let ev = &self.evolution;
        c.rule(ev.t_end.is_finite() && ev.t_end >= 0.0, "evolution.t_end", || format!("must be finite and >= 0, got {}", ev.t_end));
        c.rule(ev.snapshot_stride >= 1, "evolution.snapshot_stride", || "must be at least 1".into());
        c.rule(ev.exhaustion_threshold > 0.0 && ev.exhaustion_threshold < 1.0, "evolution.exhaustion_threshold", || {
            format!("must lie in (0, 1), got {}", ev.exhaustion_threshold)
        });
        c.rule(self.max_steps >= 1, "evolution.max_steps", || "must be at least 1".into());

        let k = &self.kernel;
        c.rule(k.probes >= 1, "kernel.probes", || "must be at least 1".into());
        c.rule((1..=8).contains(&k.refine), "kernel.refine", || format!("must lie in 1..=8, got {}", k.refine));
        c.rule(k.image_radius >= 1, "kernel.image_radius", || "must be at least 1".into());
        c.rule(k.tolerance > 0.0, "kernel.tolerance", || format!("must be positive, got {}", k.tolerance));

        let l = &self.lemmas;
        match Grid::new(l.probe_resolution) {
            Err(e) => c.errors.push(format!("lemmas.probe_resolution: {e}")),
            Ok(_) => c.rule(self.resolution.is_multiple_of(l.probe_resolution), "lemmas.probe_resolution", || {
                format!("must divide grid.resolution = {}", self.resolution)
            }),
        }
        c.rule(l.on_support + l.per_ring * l.rings.len() >= 1, "lemmas.on_support", || "no probes requested".into());
        for (i, r) in l.rings.iter().enumerate() {
            c.rule(*r > 0.0 && *r < 0.25, &format!("lemmas.rings[{i}]"), || format!("must lie in (0, 1/4), got {r}"));
        }
        c.rule((1..=8).contains(&l.refine), "lemmas.refine", || format!("must lie in 1..=8, got {}", l.refine));
        c.rule(l.image_radius >= 1, "lemmas.image_radius", || "must be at least 1".into());
        c.rule(l.hardy_modes >= 3, "lemmas.hardy_modes", || "need at least 3 modes".into());
        c.rule(l.hardy_samples >= 16 && l.hardy_samples.is_multiple_of(2), "lemmas.hardy_samples", || "must be even and >= 16".into());
        for (i, v) in l.hardy_lengths.iter().enumerate() {
            c.rule(*v > 0.0 && *v <= 1.0, &format!("lemmas.hardy_lengths[{i}]"), || format!("must lie in (0, 1], got {v}"));
        }

        c.rule(self.markers.ring >= 64, "markers.ring", || format!("must be at least 64, got {}", self.markers.ring));
        c.rule(self.markers.interior >= 1, "markers.interior", || "must be at least 1".into());
        c.rule(self.markers.quadrature >= 8, "markers.quadrature", || "must be at least 8".into());

        let t = &self.trace;
        c.rule(t.t_end > 0.0 && t.t_end <= ev.t_end, "trace.t_end", || format!("must lie in (0, evolution.t_end], got {}", t.t_end));
        c.rule(t.substeps >= 1, "markers.substeps", || "must be at least 1".into());
        c.rule(t.transport_tolerance > 0.0, "trace.transport_tolerance", || "must be positive".into());
        c.rule(t.squeeze_spacing >= 0.0, "trace.squeeze_spacing", || "must be nonnegative".into());
        c.rule(t.per_bubble_stride >= 1, "trace.per_bubble_stride", || "must be at least 1".into());
        c.rule(t.h2_margin_cells >= 0.0, "trace.h2_margin_cells", || "must be nonnegative".into());
        c.rule(t.trajectory_stride >= 1, "trace.trajectory_stride", || "must be at least 1".into());

        let r = &self.report;
        c.rule(r.inflation_factor >= 1.0, "report.inflation_factor", || format!("must be >= 1, got {}", r.inflation_factor));
        c.rule(r.loglip_stride >= 1, "report.loglip_stride", || "must be at least 1".into());

        if c.errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(c.errors))
        }
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.resolution).expect("validated")
    }

    /// Canonical JSON, the input of the config hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
