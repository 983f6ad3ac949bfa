//! The six stages. Each reads its inputs from the run directory, writes its
//! artifacts there and records them in the manifest.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sqg_core::data::{assemble_data, ordering_report, verify_initial_ordering, BubbleSpec, OrderingReport};
use sqg_core::diagnostics::{inflation_summary, log_lipschitz_modulus, per_bubble_h2, BubbleH2Report, InflationSummary};
use sqg_core::evolution::{run_with, EvolutionError, FieldDiagnostics, StopReason, Stepper};
use sqg_core::io::{read_field, read_spectrum, write_field, write_spectrum, SpectrumReader};
use sqg_core::kernel::{DirectKernel, KernelProbe};
use sqg_core::key_lemma::{
    hardy_check, random_hardy_function, sample_probes, summarize, HardyResult, KeyLemmaSummary, KeyLemmaVerifier,
};
use sqg_core::spectral::{dealias_in_place, h2_norm, Field, Grid, SpectralOps};
use sqg_core::tracker::{
    exit_time_slope, Claim1Report, Claim2Result, ContinuityReport, ExitTime, Frame, GrowthFit, MarkerKind, MarkerSet,
    TrackerError, TrackerSnapshot, Tracker, TransportReport,
};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::run_dir::RunDir;

// Independent random streams derived from the one configured seed.
const SALT_HARDY: u64 = 0x4841_5244;
const SALT_PAIRS: u64 = 0x5041_4952;
const SALT_LOGLIP: u64 = 0x4c4f_474c;

type Csv = csv::Writer<std::io::BufWriter<File>>;

fn csv_out(dir: &RunDir, name: &str, header: &[&str]) -> Result<Csv, CliError> {
    let mut w = csv::Writer::from_writer(dir.create(name)?);
    w.write_record(header)?;
    Ok(w)
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn load_data(dir: &RunDir) -> Result<Field, CliError> {
    dir.require("gen-data")?;
    let p = dir.path("data.bin");
    let f = File::open(&p).map_err(|e| CliError::io(&p, e))?;
    Ok(read_field(BufReader::new(f))?.0)
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

fn kind_name(kind: MarkerKind) -> String {
    serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn is_sqg(cfg: &ExperimentConfig) -> bool {
    cfg.multiplier.alpha == 1.0 && cfg.multiplier.gamma == 0.0
}

#[derive(Serialize)]
struct DataReport {
    resolution: usize,
    bubbles: Vec<BubbleSpec>,
    h2_squared: Vec<(u32, f64)>,
    ordering: OrderingReport,
    core_holds: bool,
    nominal_holds: bool,
}

pub fn gen_data(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<(), CliError> {
    let field = assemble_data(&cfg.data, cfg.grid()).map_err(|e| CliError::Validation(format!("data: {e}")))?;
    let mut w = dir.create("data.bin")?;
    write_field(&mut w, &field, Some(0.0))?;
    w.flush()?;
    drop(w);
    let ordering = ordering_report(&cfg.data);
    let bubbles = cfg.data.bubbles();
    dir.write_json(
        "ordering.json",
        &DataReport {
            resolution: cfg.resolution,
            h2_squared: bubbles.iter().map(|b| (b.n, b.h2_squared())).collect(),
            bubbles,
            core_holds: ordering.core_holds(),
            nominal_holds: ordering.nominal_holds(),
            ordering,
        },
    )?;
    dir.complete("gen-data", &["data.bin", "ordering.json"])?;
    verify_initial_ordering(&cfg.data).map_err(|e| CliError::Claim(format!("initial ordering: {e}")))?;
    Ok(())
}

/// Random nodes of the data support, away from the axes.
fn support_probes(theta: &Field, count: usize, seed: u64) -> Vec<[f64; 2]> {
    let g = theta.grid();
    let mut nodes: Vec<[f64; 2]> = theta
        .values()
        .indexed_iter()
        .filter(|((i, j), v)| **v != 0.0 && *i >= 2 && *j >= 2 && *i + 2 <= g.half() && *j + 2 <= g.half())
        .map(|((i, j), _)| [g.coord(i as isize), g.coord(j as isize)])
        .collect();
    nodes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    nodes.truncate(count);
    nodes
}

#[derive(Serialize)]
struct KernelSummary {
    resolution: usize,
    refine: usize,
    image_radius: usize,
    probes: usize,
    max_abs_error: f64,
    velocity_scale: f64,
    max_rel_linf_error: f64,
    normalization_estimate: f64,
    normalization_rel_error: f64,
    tolerance: f64,
    pass: bool,
}

pub fn verify_kernel(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<(), CliError> {
    if !is_sqg(cfg) {
        return Err(CliError::Validation("multiplier: the kernel oracle needs alpha = 1, gamma = 0".into()));
    }
    let theta = load_data(dir)?;
    let grid = theta.grid();
    let ops = SpectralOps::new(grid);
    let spec = ops.forward(&theta).map_err(numerical)?;
    let (u1, u2) = ops.velocity_from_scalar(&spec, &cfg.multiplier).map_err(numerical)?;
    let (u1, u2) = (ops.inverse(&u1).map_err(numerical)?, ops.inverse(&u2).map_err(numerical)?);
    let scale = u1.max_abs().max(u2.max_abs());
    let kernel = DirectKernel::new(&theta, cfg.kernel.refine).map_err(numerical)?;
    let probes = support_probes(&theta, cfg.kernel.probes, cfg.seed);
    if probes.is_empty() {
        return Err(CliError::Validation("kernel.probes: no admissible probe nodes in the data support".into()));
    }

    let mut w = csv_out(dir, "kernel.csv", &["x1", "x2", "u1_direct", "u2_direct", "u1_spectral", "u2_spectral", "abs_error", "tail_bound", "excluded"])?;
    let h = grid.spacing();
    let (mut max_err, mut dot, mut norm) = (0.0f64, 0.0, 0.0);
    for x in &probes {
        let mut probe = KernelProbe::new(*x);
        probe.image_radius = cfg.kernel.image_radius;
        let d = kernel.velocity(&probe).map_err(numerical)?;
        let (i, j) = ((d.x[0] / h).round() as usize, (d.x[1] / h).round() as usize);
        let s = [u1.values()[[i, j]], u2.values()[[i, j]]];
        let err = (d.u[0] - s[0]).abs().max((d.u[1] - s[1]).abs());
        max_err = max_err.max(err);
        dot += d.u[0] * s[0] + d.u[1] * s[1];
        norm += s[0] * s[0] + s[1] * s[1];
        w.write_record([num(d.x[0]), num(d.x[1]), num(d.u[0]), num(d.u[1]), num(s[0]), num(s[1]), num(err), num(d.tail_bound), num(d.excluded)])?;
    }
    w.flush()?;
    drop(w);
    let rel = max_err / scale;
    let estimate = cfg.multiplier.normalization * dot / norm;
    let norm_err = (estimate - 2.0 * PI).abs() / (2.0 * PI);
    let summary = KernelSummary {
        resolution: grid.resolution(),
        refine: cfg.kernel.refine,
        image_radius: cfg.kernel.image_radius,
        probes: probes.len(),
        max_abs_error: max_err,
        velocity_scale: scale,
        max_rel_linf_error: rel,
        normalization_estimate: estimate,
        normalization_rel_error: norm_err,
        tolerance: cfg.kernel.tolerance,
        pass: rel < cfg.kernel.tolerance && norm_err < cfg.kernel.tolerance,
    };
    dir.write_json("kernel.json", &summary)?;
    dir.complete("verify-kernel", &["kernel.csv", "kernel.json"])?;
    if !summary.pass {
        return Err(CliError::Numerical(format!(
            "kernel oracle mismatch: relative error {rel:e}, normalization {estimate} (tolerance {})",
            cfg.kernel.tolerance
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct HardySummary {
    functions: usize,
    first_violations: usize,
    second_violations: usize,
    max_first_ratio: f64,
    max_second_ratio: f64,
}

#[derive(Serialize)]
struct LemmaFile {
    resolution: usize,
    probe_resolution: usize,
    refine: usize,
    summary: KeyLemmaSummary,
    clipped_probes: usize,
    hardy: HardySummary,
}

pub fn verify_lemmas(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<(), CliError> {
    if !is_sqg(cfg) {
        return Err(CliError::Validation("multiplier: the lemma checks need alpha = 1, gamma = 0".into()));
    }
    let theta = load_data(dir)?;
    let lc = &cfg.lemmas;
    let probe_grid = Grid::new(lc.probe_resolution).map_err(|e| CliError::Validation(e.to_string()))?;
    let probe_field = assemble_data(&cfg.data, probe_grid).map_err(|e| CliError::Validation(format!("data: {e}")))?;
    let probes = sample_probes(&probe_field, lc.on_support, &lc.rings, lc.per_ring, cfg.seed);
    let verifier = KeyLemmaVerifier::new(&theta, lc.refine).map_err(numerical)?.with_image_radius(lc.image_radius);

    let mut w = csv_out(
        dir,
        "lemmas.csv",
        &[
            "x1", "x2", "u1", "u2", "leading", "res1", "res2", "hessian_l2", "theta_inf", "grad_l2_r",
            "weighted_d1_l2_r", "hessian_l2_r", "grad_inf", "grad_inf_r", "logfac", "ratio_res1", "ratio_res2",
            "ratio_res1_lipschitz", "ratio_res2_lipschitz", "r_clipped", "r_empty",
        ],
    )?;
    let mut reports = Vec::with_capacity(probes.len());
    for x in &probes {
        let r = verifier.report(*x).map_err(numerical)?;
        let n = &r.norms;
        let q = &r.ratios;
        w.write_record([
            num(r.x[0]), num(r.x[1]), num(r.u[0]), num(r.u[1]), num(r.leading), num(r.res1), num(r.res2),
            num(n.hessian_l2), num(n.theta_inf), num(n.grad_l2_r), num(n.weighted_d1_l2_r), num(n.hessian_l2_r),
            num(n.grad_inf), num(n.grad_inf_r), num(r.logfac), num(q.res1), num(q.res2), num(q.res1_lipschitz),
            num(q.res2_lipschitz), r.r_clipped.to_string(), r.r_empty.to_string(),
        ])?;
        reports.push(r);
    }
    w.flush()?;
    drop(w);
    let summary = summarize(&reports);
    let non_finite = [summary.max.res1, summary.max.res2, summary.max.res1_lipschitz, summary.max.res2_lipschitz]
        .iter()
        .any(|v| !v.is_finite());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SALT_HARDY);
    let mut hw = csv_out(dir, "hardy.csv", &["index", "l", "lhs1", "rhs1", "lhs2", "rhs2", "first_holds", "second_holds"])?;
    let mut results: Vec<HardyResult> = Vec::new();
    for &l in &lc.hardy_lengths {
        for _ in 0..lc.hardy_functions {
            let f = random_hardy_function(&mut rng, l, lc.hardy_modes, lc.hardy_samples);
            let r = hardy_check(&f).map_err(numerical)?;
            hw.write_record([
                results.len().to_string(), num(l), num(r.lhs1), num(r.rhs1), num(r.lhs2), num(r.rhs2),
                r.first_holds().to_string(), r.second_holds().to_string(),
            ])?;
            results.push(r);
        }
    }
    hw.flush()?;
    drop(hw);
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let hardy = HardySummary {
        functions: results.len(),
        first_violations: results.iter().filter(|r| !r.first_holds()).count(),
        second_violations: results.iter().filter(|r| !r.second_holds()).count(),
        max_first_ratio: results.iter().fold(0.0, |m, r| m.max(ratio(r.lhs1, r.rhs1))),
        max_second_ratio: results.iter().fold(0.0, |m, r| m.max(ratio(r.lhs2, r.rhs2))),
    };
    let violations = hardy.first_violations + hardy.second_violations;
    dir.write_json(
        "lemmas.json",
        &LemmaFile {
            resolution: theta.grid().resolution(),
            probe_resolution: lc.probe_resolution,
            refine: lc.refine,
            clipped_probes: reports.iter().filter(|r| r.r_clipped).count(),
            summary,
            hardy,
        },
    )?;
    dir.complete("verify-lemmas", &["lemmas.csv", "lemmas.json", "hardy.csv"])?;
    if non_finite {
        return Err(CliError::Numerical("key lemma ratios are not finite".into()));
    }
    if violations > 0 {
        return Err(CliError::Claim(format!("{violations} Hardy inequality violations")));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct EvolveSummary {
    pub stop: StopReason,
    pub steps: usize,
    pub t_final: f64,
    pub snapshots_stored: usize,
    pub stored_until: f64,
    pub max_divergence: f64,
    pub l2_drift: f64,
    pub linf_drift: f64,
    pub initial_h2dot: f64,
    pub max_h2dot: f64,
    pub final_tail_fraction: f64,
}

fn diagnostics_row(d: &FieldDiagnostics) -> [String; 13] {
    [
        num(d.t), d.step.to_string(), num(d.dt), num(d.l2), num(d.linf), num(d.min_value), num(d.h2dot), num(d.h2),
        num(d.grad_inf), num(d.umax), num(d.tail_fraction), num(d.divergence), String::new(),
    ]
}

pub fn evolve(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<(), CliError> {
    let theta = load_data(dir)?;
    let grid = theta.grid();
    let ev = cfg.evolution;
    let keep = ev.dealias.then(|| grid.dealias_cutoff());

    // step-count estimate at the initial speed
    let ops = SpectralOps::new(grid);
    let mut s0 = ops.forward(&theta).map_err(numerical)?;
    if ev.dealias {
        dealias_in_place(&mut s0);
    }
    let umax = Stepper::new(ops, cfg.multiplier, ev.dealias).max_speed(&s0).map_err(numerical)?;
    let cfl = match ev.dt_policy {
        sqg_core::evolution::DtPolicy::Cfl(c) | sqg_core::evolution::DtPolicy::Fixed(c) => c,
    };
    let estimate = (ev.t_end * umax / (cfl * grid.spacing())).ceil();
    if estimate > cfg.max_steps as f64 {
        return Err(CliError::Validation(format!(
            "evolution.max_steps: reaching t_end = {} needs at least {estimate} steps at the initial speed, above the limit {}",
            ev.t_end, cfg.max_steps
        )));
    }

    let mut snaps = dir.create("snapshots.bin")?;
    let mut stored = 0usize;
    let mut stored_until = 0.0;
    let mut write_err: Option<CliError> = None;
    let horizon = cfg.trace.t_end * (1.0 + 1e-12);
    let result = run_with(&theta, &ev, |s, _| {
        if write_err.is_some() || s.t > horizon {
            return;
        }
        match write_spectrum(&mut snaps, &s.theta, Some(cfg.multiplier), Some(s.t), keep) {
            Ok(()) => {
                stored += 1;
                stored_until = s.t;
            }
            Err(e) => write_err = Some(e.into()),
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    snaps.flush()?;
    drop(snaps);
    let summary = match result {
        Ok(s) => s,
        Err(EvolutionError::NonFinite { t, step, last_good }) => {
            let mut w = dir.create("abort_state.bin")?;
            write_spectrum(&mut w, &last_good, Some(cfg.multiplier), Some(t), None)?;
            w.flush()?;
            return Err(CliError::Numerical(format!(
                "non-finite state at step {step} (t = {t}); last good state saved to abort_state.bin"
            )));
        }
        Err(e @ EvolutionError::Config(_)) => return Err(CliError::Validation(e.to_string())),
        Err(e) => return Err(numerical(e)),
    };

    let records = &summary.records;
    let r0 = records[0];
    let drift = |f: fn(&FieldDiagnostics) -> f64| {
        let base = f(&r0);
        records.iter().fold(0.0f64, |m, r| m.max(if base > 0.0 { (f(r) / base - 1.0).abs() } else { f(r).abs() }))
    };
    let mut w = csv_out(
        dir,
        "diagnostics.csv",
        &["t", "step", "dt", "l2", "linf", "min", "h2dot", "h2", "grad_inf", "umax", "tail_fraction", "divergence", "h2dot_ratio"],
    )?;
    for r in records {
        let mut row = diagnostics_row(r);
        row[12] = num(if r0.h2dot > 0.0 { r.h2dot / r0.h2dot } else { 1.0 });
        w.write_record(&row)?;
    }
    w.flush()?;
    drop(w);
    dir.write_json("records.json", records)?;
    let mut w = dir.create("final.bin")?;
    write_spectrum(&mut w, &summary.final_state, Some(cfg.multiplier), Some(summary.t_final), keep)?;
    w.flush()?;
    drop(w);
    dir.write_json(
        "evolve.json",
        &EvolveSummary {
            stop: summary.stop,
            steps: summary.steps,
            t_final: summary.t_final,
            snapshots_stored: stored,
            stored_until,
            max_divergence: summary.max_divergence,
            l2_drift: drift(|r| r.l2),
            linf_drift: drift(|r| r.linf),
            initial_h2dot: r0.h2dot,
            max_h2dot: records.iter().fold(0.0f64, |m, r| m.max(r.h2dot)),
            final_tail_fraction: summary.final_state.tail_fraction(),
        },
    )?;
    dir.complete("evolve", &["snapshots.bin", "records.json", "diagnostics.csv", "evolve.json", "final.bin"])?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct SqueezeResult {
    pub n: u32,
    pub window_end: f64,
    pub strictly_decreasing: bool,
}

#[derive(Serialize, Deserialize)]
pub struct PartitionSummary {
    pub frames: usize,
    pub initial: Option<BubbleH2Report>,
    pub last: Option<BubbleH2Report>,
    /// first frame time whose transported hulls overlap
    pub overlap_at: Option<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct Claims {
    pub horizon: f64,
    pub frames: usize,
    /// sup of the H2 seminorm over the tracked window
    pub m: f64,
    pub max_interp_error: f64,
    pub claim1: Claim1Report,
    pub exits: Vec<ExitTime>,
    pub exit_slope: Option<f64>,
    pub exit_slope_points: usize,
    pub predicted_slope: f64,
    pub growth: Option<GrowthFit>,
    pub claim2: Vec<Claim2Result>,
    pub ordering_chain_break: Option<(u32, f64)>,
    pub windows: Vec<(u32, f64)>,
    pub area_drift: Vec<(u32, f64)>,
    pub transport: TransportReport,
    pub squeezing: Vec<SqueezeResult>,
    pub continuity: ContinuityReport,
    pub per_bubble_h2: PartitionSummary,
}

fn tracker_error(e: TrackerError) -> CliError {
    match e {
        TrackerError::AxisCrossing { .. } => CliError::Claim(e.to_string()),
        _ => CliError::Numerical(e.to_string()),
    }
}

pub fn trace(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<(), CliError> {
    dir.require("evolve")?;
    let records: Vec<FieldDiagnostics> = dir.read_json("records.json")?;
    let grid = cfg.grid();
    let ops = SpectralOps::new(grid);
    let set = MarkerSet::seed(&cfg.data, &cfg.markers).map_err(tracker_error)?;
    let kinds: Vec<(u32, String, usize)> = set.markers.iter().map(|m| (m.bubble, kind_name(m.kind), m.label)).collect();
    let nb = set.bubbles.len();
    let bubble_numbers: Vec<u32> = set.bubbles.iter().map(|b| b.n).collect();
    let partition_set = set.clone();
    let mut tracker = Tracker::new(set).with_substeps(cfg.trace.substeps);

    let mut traj = csv_out(dir, "trajectories.csv", &["t", "marker", "bubble", "kind", "label", "x1", "x2"])?;
    let mut bub = csv_out(
        dir,
        "bubbles.csv",
        &[
            "t", "n", "support_sup1", "support_inf1", "support_sup2", "core_sup1", "core_inf1", "core_sup2",
            "interaction", "ring_area", "ring_reach", "interp_error",
        ],
    )?;
    let mut part = csv_out(dir, "per_bubble_h2.csv", &["t", "n", "h2_squared", "nodes", "total_squared", "captured"])?;
    let margin = cfg.trace.h2_margin_cells * grid.spacing();
    let mut frame_index = 0usize;
    let mut partition = PartitionSummary { frames: 0, initial: None, last: None, overlap_at: None };
    let mut sink_err: Option<CliError> = None;

    let mut on_frame = |f: &Frame, snap: &TrackerSnapshot| {
        let k = frame_index;
        frame_index += 1;
        if sink_err.is_some() {
            return;
        }
        let mut go = || -> Result<(), CliError> {
            if k.is_multiple_of(cfg.trace.trajectory_stride) {
                for (i, p) in f.positions.iter().enumerate() {
                    let (b, kind, label) = &kinds[i];
                    traj.write_record([num(f.t), i.to_string(), b.to_string(), kind.clone(), label.to_string(), num(p[0]), num(p[1])])?;
                }
            }
            for s in &f.stats {
                bub.write_record([
                    num(f.t), s.n.to_string(), num(s.support.sup1), num(s.support.inf1), num(s.support.sup2),
                    num(s.core.sup1), num(s.core.inf1), num(s.core.sup2), num(s.interaction), num(s.ring_area),
                    num(s.ring_reach), num(f.interp_error),
                ])?;
            }
            if k.is_multiple_of(cfg.trace.per_bubble_stride) && partition.overlap_at.is_none() {
                if let Some(spec) = &snap.spectrum {
                    match per_bubble_h2(&ops, spec, &partition_set, &f.positions, margin) {
                        Ok(r) => {
                            for b in &r.bubbles {
                                part.write_record([num(f.t), b.n.to_string(), num(b.h2_squared), b.nodes.to_string(), num(r.total_squared), num(r.captured)])?;
                            }
                            partition.frames += 1;
                            if partition.initial.is_none() {
                                partition.initial = Some(r.clone());
                            }
                            partition.last = Some(r);
                        }
                        Err(sqg_core::diagnostics::DiagnosticsError::HullOverlap { .. }) => partition.overlap_at = Some(f.t),
                        Err(e) => return Err(numerical(e)),
                    }
                }
            }
            Ok(())
        };
        if let Err(e) = go() {
            sink_err = Some(e);
        }
    };

    let p = dir.path("snapshots.bin");
    let file = File::open(&p).map_err(|e| CliError::io(&p, e))?;
    for item in SpectrumReader::new(BufReader::new(file)) {
        let (spec, header) = item?;
        let t = header.time.ok_or_else(|| CliError::Validation("snapshot without a time stamp".into()))?;
        let snap = TrackerSnapshot::from_spectrum(&ops, t, &spec, &cfg.multiplier).map_err(numerical)?;
        tracker.push(snap, &mut on_frame).map_err(tracker_error)?;
    }
    let tr = tracker.finish(&mut on_frame).map_err(tracker_error)?;
    if let Some(e) = sink_err {
        return Err(e);
    }
    traj.flush()?;
    bub.flush()?;
    part.flush()?;
    drop((traj, bub, part));

    let alpha = cfg.data.alpha;
    let horizon = tr.horizon();
    let m = records.iter().filter(|r| r.t <= horizon * (1.0 + 1e-12)).fold(0.0f64, |a, r| a.max(r.h2dot));
    let claim1 = tr.claim1_check(m);
    let exits = tr.almost_invariance(alpha);
    let slope = exit_time_slope(&exits);
    let growth = match tr.growth_fit(cfg.data.n0, alpha) {
        Ok(g) => Some(g),
        Err(TrackerError::BeyondHorizon { .. }) => None,
        Err(e) => return Err(tracker_error(e)),
    };
    let claim2 = tr.claim2_check(m, alpha).map_err(tracker_error)?;
    let ends = tr.windows(alpha);
    let squeezing = bubble_numbers
        .iter()
        .zip(&ends)
        .map(|(n, end)| {
            Ok(SqueezeResult {
                n: *n,
                window_end: *end,
                strictly_decreasing: tr.strictly_squeezed(*n, cfg.trace.squeeze_spacing, Some(*end)).map_err(tracker_error)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let pairs = tr.sample_pairs(cfg.trace.continuity_pairs, cfg.seed ^ SALT_PAIRS);
    let continuity = tr.flow_continuity_check(&pairs, m, Some(claim1.window));
    let claims = Claims {
        horizon,
        frames: tr.frames.len(),
        m,
        max_interp_error: tr.frames.iter().fold(0.0f64, |a, f| a.max(f.interp_error)),
        exits,
        exit_slope: slope.map(|s| s.0),
        exit_slope_points: slope.map_or(0, |s| s.1),
        predicted_slope: alpha - 1.0,
        growth,
        claim2,
        ordering_chain_break: tr.ordering_chain(),
        windows: bubble_numbers.iter().copied().zip(ends.iter().copied()).collect(),
        area_drift: tr.area_drift(&ends),
        transport: tr.transport_check(cfg.trace.transport_tolerance, &ends),
        squeezing,
        continuity,
        per_bubble_h2: partition,
        claim1,
    };
    debug_assert_eq!(claims.windows.len(), nb);
    dir.write_json("claims.json", &claims)?;
    dir.complete("trace", &["trajectories.csv", "bubbles.csv", "per_bubble_h2.csv", "claims.json"])?;
    if !claims.claim1.holds_initially {
        return Err(CliError::Claim("bubble ordering fails at t = 0".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct LogLipPoint {
    t: f64,
    modulus: f64,
    h2dot: f64,
}

#[derive(Serialize)]
struct Summary {
    inflation: InflationSummary,
    per_bubble_h2_initial: Option<BubbleH2Report>,
    per_bubble_h2_last: Option<BubbleH2Report>,
    exit_slope: Option<f64>,
    predicted_slope: f64,
    claim1_window: f64,
    claim1_c_emp: f64,
    loglip_max_ratio: f64,
    /// the asymptotic regime needs ln N >> 1 and M_N > 1
    asymptotic_regime_reached: bool,
}

pub fn report(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<(), CliError> {
    dir.require("evolve")?;
    dir.require("trace")?;
    let records: Vec<FieldDiagnostics> = dir.read_json("records.json")?;
    let claims: Claims = dir.read_json("claims.json")?;
    let c0 = claims.growth.as_ref().map(|g| g.c0_emp).filter(|c| c.is_finite());
    let inflation = inflation_summary(&records, cfg.data.n0, cfg.data.n_max, cfg.data.alpha, c0, cfg.report.inflation_factor)
        .map_err(numerical)?;

    let mut w = csv_out(dir, "h2_series.csv", &["t", "h2dot", "w1inf", "h2dot_ratio", "l2", "linf", "tail_fraction"])?;
    for (p, r) in inflation.series.iter().zip(&records) {
        w.write_record([
            num(p.t), num(p.h2dot), num(p.w1inf), num(p.h2dot / inflation.initial_h2dot), num(r.l2), num(r.linf),
            num(r.tail_fraction),
        ])?;
    }
    w.flush()?;
    drop(w);

    let mut w = csv_out(dir, "exits.csv", &["n", "exit", "predicted_scale"])?;
    for e in &claims.exits {
        w.write_record([e.n.to_string(), opt(e.exit), num(e.predicted_scale)])?;
    }
    w.flush()?;
    drop(w);

    let mut w = csv_out(dir, "growth.csv", &["ell", "t_ell", "n", "ratio"])?;
    if let Some(g) = &claims.growth {
        for (n, r) in &g.ratios {
            w.write_record([g.ell.to_string(), num(g.t_ell), n.to_string(), num(*r)])?;
        }
    }
    w.flush()?;
    drop(w);

    let grid = cfg.grid();
    let ops = SpectralOps::new(grid);
    let mut points = Vec::new();
    let modulus_at = |spec: &sqg_core::spectral::Spectrum, t: f64| -> Result<LogLipPoint, CliError> {
        let (u1, u2) = ops.velocity_from_scalar(spec, &cfg.multiplier).map_err(numerical)?;
        let (u1, u2) = (ops.inverse(&u1).map_err(numerical)?, ops.inverse(&u2).map_err(numerical)?);
        let seed = cfg.seed ^ SALT_LOGLIP;
        Ok(LogLipPoint { t, modulus: log_lipschitz_modulus(&u1, &u2, cfg.report.loglip_pairs, seed), h2dot: h2_norm(spec) })
    };
    let p = dir.path("snapshots.bin");
    let file = File::open(&p).map_err(|e| CliError::io(&p, e))?;
    for (i, item) in SpectrumReader::new(BufReader::new(file)).enumerate() {
        let (spec, header) = item?;
        if i % cfg.report.loglip_stride == 0 {
            points.push(modulus_at(&spec, header.time.unwrap_or(0.0))?);
        }
    }
    let p = dir.path("final.bin");
    let (spec, header) = read_spectrum(BufReader::new(File::open(&p).map_err(|e| CliError::io(&p, e))?))?;
    let t_final = header.time.unwrap_or(0.0);
    if points.last().is_none_or(|q| q.t < t_final) {
        points.push(modulus_at(&spec, t_final)?);
    }
    let mut w = csv_out(dir, "loglip.csv", &["t", "modulus", "h2dot", "ratio"])?;
    let mut max_ratio = 0.0f64;
    for q in &points {
        let ratio = if q.h2dot > 0.0 { q.modulus / q.h2dot } else { 0.0 };
        max_ratio = max_ratio.max(ratio);
        w.write_record([num(q.t), num(q.modulus), num(q.h2dot), num(ratio)])?;
    }
    w.flush()?;
    drop(w);

    let summary = Summary {
        asymptotic_regime_reached: inflation.t_n.is_some(),
        inflation,
        per_bubble_h2_initial: claims.per_bubble_h2.initial.clone(),
        per_bubble_h2_last: claims.per_bubble_h2.last.clone(),
        exit_slope: claims.exit_slope,
        predicted_slope: claims.predicted_slope,
        claim1_window: claims.claim1.window,
        claim1_c_emp: claims.claim1.c_emp,
        loglip_max_ratio: max_ratio,
    };
    dir.write_json("summary.json", &summary)?;
    dir.complete("report", &["summary.json", "h2_series.csv", "exits.csv", "growth.csv", "loglip.csv"])?;
    Ok(())
}
