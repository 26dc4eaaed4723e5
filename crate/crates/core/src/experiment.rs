//! Benchmark configurations and the stages of an experiment:
//! full-order solve, registration, training and evaluation.

use std::path::Path;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::dmd::{DmdModel, SnapshotMatrix};
use crate::error::{Error, Result};
use crate::io;
use crate::mesh::{project_to_cells, CellField, Grid, Profile, VertexField};
use crate::metrics::{
    check_error_bound, reference_fields, sample_times, speedup, sv_decay, window_errors, BoundReport, TimingReport, Window, WindowErrors,
};
use crate::registration::{register_trajectory, select_order, RegistrationOptions, TransformSet, WarmStart};
use crate::solver::{solve, solve_after_initial, solve_at, total_variation_with_boundary, ProblemSpec, SnapshotSet};
use crate::transform::{min_jacobian, InversionReport, TransformedSnapshotSet};
use crate::tsdmd::{baseline, baseline_field, PhiRepresentation, TsdmdModel};

/// Everything needed to reproduce one benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: ProblemSpec,
    /// Cells per axis.
    pub cells: Vec<usize>,
    /// Number of snapshots, uniformly spaced in `[0, T]`.
    pub snapshots: usize,
    /// Whether the first snapshot is the initial state. Otherwise the
    /// snapshots sit at `i T / K`, `i = 1..=K`.
    #[serde(default)]
    pub include_initial: bool,
    /// Polynomial order `M` of the displacement space (the cap when
    /// `select_order` is set).
    pub order: usize,
    #[serde(default)]
    pub select_order: bool,
    pub eps: f64,
    /// Reference time; `T / 2` when absent.
    #[serde(default)]
    pub t_ref: Option<f64>,
    /// Ranks `n` to train and evaluate.
    pub ranks: Vec<usize>,
    pub interp: Window,
    pub extrap: Window,
    pub samples: usize,
    pub seed: u64,
    /// Ranks for the Jacobian study of the inverse-map model.
    pub jacobian_ranks: Vec<usize>,
    /// Rank and window of the speedup measurement.
    pub timing_rank: usize,
    pub timing_window: Window,
    /// Ranks for the discrete error-bound check (1D only).
    #[serde(default)]
    pub bound_ranks: Vec<usize>,
    /// Number of scaled singular values reported.
    pub sv_count: usize,
    #[serde(default)]
    pub registration: RegistrationOptions,
    #[serde(default = "default_warm_start")]
    pub warm_start: WarmStart,
    #[serde(default)]
    pub phi_representation: PhiRepresentation,
}

fn default_warm_start() -> WarmStart {
    WarmStart::NearestSolved
}

impl ExperimentConfig {
    /// Linear advection of a step, 4000 cells, 500 snapshots on `[0, 0.8]`.
    pub fn test1() -> Self {
        Self {
            name: "test1".into(),
            problem: ProblemSpec::advection_step(),
            cells: vec![4000],
            snapshots: 500,
            include_initial: false,
            order: 4,
            select_order: false,
            eps: 1e-3,
            t_ref: None,
            ranks: (1..=13).collect(),
            interp: Window::closed("interpolation", 0.0, 0.8),
            extrap: Window::left_open("extrapolation", 0.8, 1.0),
            samples: 100,
            seed: 20210,
            jacobian_ranks: vec![1, 10],
            timing_rank: 13,
            timing_window: Window::closed("timing", 0.0, 1.0),
            bound_ranks: (5..=13).collect(),
            sv_count: 20,
            registration: RegistrationOptions::default(),
            warm_start: WarmStart::NearestSolved,
            phi_representation: PhiRepresentation::Coordinates,
        }
    }

    /// Wave system with two bumps, 4000 cells, 500 snapshots on `[0, 0.6]`.
    pub fn test2() -> Self {
        Self {
            name: "test2".into(),
            problem: ProblemSpec::wave_bumps(),
            order: 5,
            ranks: (1..=13).collect(),
            interp: Window::closed("interpolation", 0.0, 0.6),
            extrap: Window::left_open("extrapolation", 0.6, 0.7),
            timing_rank: 10,
            timing_window: Window::closed("timing", 0.0, 0.7),
            bound_ranks: Vec::new(),
            ..Self::test1()
        }
    }

    /// 2D Burgers, 300 x 300 cells, 50 snapshots on `[0, 1]`.
    pub fn test3() -> Self {
        Self {
            name: "test3".into(),
            problem: ProblemSpec::burgers_square(),
            cells: vec![300, 300],
            snapshots: 50,
            order: 6,
            ranks: vec![1, 2, 3, 4, 5, 6, 7, 8],
            interp: Window::closed("interpolation", 0.0, 1.0),
            extrap: Window::left_open("extrapolation", 1.0, 1.1),
            timing_rank: 5,
            timing_window: Window::closed("timing", 0.0, 1.1),
            bound_ranks: Vec::new(),
            ..Self::test1()
        }
    }

    /// Test 3 with snapshots restricted to `[0, 0.8]`.
    pub fn test3_short_window() -> Self {
        let mut c = Self::test3();
        c.name = "test3-window08".into();
        c.problem.final_time = 0.8;
        c.interp = Window::closed("interpolation", 0.0, 0.8);
        c.extrap = Window::left_open("extrapolation", 0.8, 1.1);
        c
    }

    /// Test 3 with the reference snapshot at `t = 1`.
    pub fn test3_tref1() -> Self {
        let mut c = Self::test3();
        c.name = "test3-tref1".into();
        c.t_ref = Some(1.0);
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "test1" => Ok(Self::test1()),
            "test2" => Ok(Self::test2()),
            "test3" => Ok(Self::test3()),
            "test3-window08" => Ok(Self::test3_short_window()),
            "test3-tref1" => Ok(Self::test3_tref1()),
            _ => {
                Err(Error::InvalidArgument(format!("unknown preset {name:?} (expected test1, test2, test3, test3-window08, test3-tref1)")))
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = io::read_json(path)?;
        c.validate()?;
        Ok(c)
    }

    pub fn t_ref(&self) -> f64 {
        self.t_ref.unwrap_or(0.5 * self.problem.final_time)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(&self.problem.bounds, &self.cells)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.problem.validate(&grid)?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.snapshots < 3 {
            return bad(format!("need at least 3 snapshots, got {}", self.snapshots));
        }
        if self.order == 0 {
            return bad("polynomial order must be at least 1".into());
        }
        if !(self.eps >= 0.0) {
            return bad(format!("eps = {} must be non-negative", self.eps));
        }
        let t = self.t_ref();
        let t_first = if self.include_initial { 0.0 } else { self.problem.final_time / self.snapshots as f64 };
        if !(t_first..=self.problem.final_time).contains(&t) {
            return bad(format!("t_ref = {t} outside [{t_first}, {}]", self.problem.final_time));
        }
        let max_rank = self.snapshots - 1;
        for &n in self.ranks.iter().chain(&self.jacobian_ranks).chain(&self.bound_ranks).chain([&self.timing_rank]) {
            if n == 0 || n > max_rank {
                return bad(format!("rank {n} outside 1..={max_rank}"));
            }
        }
        for w in [&self.interp, &self.extrap, &self.timing_window] {
            if !(w.lo <= w.hi) || w.lo < 0.0 {
                return bad(format!("window {} = [{}, {}] is invalid", w.name, w.lo, w.hi));
            }
        }
        if self.samples == 0 || self.sv_count == 0 {
            return bad("samples and sv_count must be positive".into());
        }
        if !self.bound_ranks.is_empty() && grid.dim() != 1 {
            return bad("the error-bound check needs a 1D problem".into());
        }
        Ok(())
    }
}

/// Runs the full-order solver at the training times.
pub fn run_hf(cfg: &ExperimentConfig) -> Result<SnapshotSet> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    info!("{}: solving on {:?} cells for {} snapshots", cfg.name, cfg.cells, cfg.snapshots);
    if cfg.include_initial {
        solve(&cfg.problem, &grid, cfg.snapshots)
    } else {
        solve_after_initial(&cfg.problem, &grid, cfg.snapshots)
    }
}

/// Registration results of one trajectory.
#[derive(Clone, Debug)]
pub struct Registered {
    pub transforms: TransformSet,
    pub transformed: TransformedSnapshotSet,
    /// Matching value per order, when the order was selected by escalation.
    pub order_history: Vec<(usize, f64)>,
}

pub fn run_register(cfg: &ExperimentConfig, snaps: &SnapshotSet) -> Result<Registered> {
    let mut order = cfg.order;
    let mut order_history = Vec::new();
    if cfg.select_order {
        let (m, hist) = select_order(snaps, cfg.t_ref(), cfg.order, cfg.eps, 10, &cfg.registration)?;
        info!("{}: selected order {m} from {hist:?}", cfg.name);
        order = m;
        order_history = hist;
    }
    info!("{}: registering {} snapshots with M = {order}", cfg.name, snaps.len());
    let transforms = register_trajectory(snaps, cfg.t_ref(), order, cfg.eps, cfg.warm_start, &cfg.registration)?;
    let transformed = TransformedSnapshotSet::build(snaps, &transforms)?;
    Ok(Registered { transforms, transformed, order_history })
}

/// Per-rank errors of both methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankErrors {
    pub n: usize,
    pub tsdmd: Vec<WindowErrors>,
    pub dmd: Vec<WindowErrors>,
    pub tsdmd_flags: (crate::dmd::FitFlags, crate::dmd::FitFlags),
    pub dmd_flags: crate::dmd::FitFlags,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvDecay {
    pub raw: Vec<f64>,
    pub g: Vec<f64>,
    pub phi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianStudy {
    pub n: usize,
    pub times: Vec<f64>,
    pub minima: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStudy {
    pub n: usize,
    pub times: Vec<f64>,
    pub report: TimingReport,
    /// Errors of the reduced model at the timing samples.
    pub errors: WindowErrors,
}

/// Total variation and mass of the training snapshots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HfInvariants {
    /// Per component: total variation at each snapshot, including jumps to
    /// the boundary state.
    pub total_variation: Vec<Vec<f64>>,
    /// Largest relative increase of the total variation between
    /// consecutive snapshots (0 when non-increasing).
    pub max_tv_increase: f64,
    /// Largest relative deviation of the integral from its initial value.
    pub max_mass_drift: f64,
}

pub fn hf_invariants(snaps: &SnapshotSet) -> HfInvariants {
    let comps = snaps.fields[0].components();
    let bc = snaps.problem.boundary_value;
    let total_variation: Vec<Vec<f64>> =
        (0..comps).map(|k| snaps.fields.iter().map(|f| total_variation_with_boundary(f, k, bc)).collect()).collect();
    let max_tv_increase = total_variation
        .iter()
        .flat_map(|tv| tv.windows(2).map(|w| ((w[1] - w[0]) / w[0].max(f64::MIN_POSITIVE)).max(0.0)).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    let max_mass_drift = (0..comps)
        .flat_map(|k| {
            let m0 = snaps.fields[0].integral(k);
            let scale = snaps.fields[0].l1_norm(k).max(f64::MIN_POSITIVE);
            snaps.fields.iter().map(move |f| (f.integral(k) - m0).abs() / scale)
        })
        .fold(0.0, f64::max);
    HfInvariants { total_variation, max_tv_increase, max_mass_drift }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationSummary {
    pub order: usize,
    pub t_ref: f64,
    pub reference_index: usize,
    pub warnings: usize,
    /// Matching value relative to the unregistered one, per snapshot.
    pub matching_ratio: Vec<f64>,
    pub min_forward_jacobian: f64,
    pub max_inversion_residual: f64,
    pub fallback_vertices: usize,
    pub flagged_vertices: usize,
    pub order_history: Vec<(usize, f64)>,
}

/// Everything `train-eval` reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    pub ranks: Vec<RankErrors>,
    pub sv_decay: SvDecay,
    pub jacobian: Vec<JacobianStudy>,
    pub timing: TimingStudy,
    pub bound: Vec<(usize, BoundReport)>,
    pub hf: HfInvariants,
    pub registration: Option<RegistrationSummary>,
}

impl EvalReport {
    pub fn rank(&self, n: usize) -> Option<&RankErrors> {
        self.ranks.iter().find(|r| r.n == n)
    }
}

pub fn registration_summary(t: &TransformSet, inversion: &[InversionReport], order_history: &[(usize, f64)]) -> RegistrationSummary {
    RegistrationSummary {
        order: t.order,
        t_ref: t.t_ref,
        reference_index: t.reference_index,
        warnings: t.warnings(),
        matching_ratio: t
            .diagnostics
            .iter()
            .map(|d| if d.initial.matching > 0.0 { d.fin.matching / d.initial.matching } else { 0.0 })
            .collect(),
        min_forward_jacobian: inversion.iter().map(|r| r.min_forward_jacobian).fold(f64::INFINITY, f64::min),
        max_inversion_residual: inversion.iter().map(|r| r.max_residual).fold(0.0, f64::max),
        fallback_vertices: inversion.iter().map(|r| r.fallback_vertices.len()).sum(),
        flagged_vertices: inversion.iter().map(|r| r.flagged_vertices.len()).sum(),
        order_history: order_history.to_vec(),
    }
}

/// Trains both methods for every configured rank and evaluates them.
/// `g` and `phi` hold the transformed snapshots and the inverse maps.
pub fn run_train_eval(
    cfg: &ExperimentConfig,
    snaps: &SnapshotSet,
    g: &SnapshotMatrix,
    phi: &SnapshotMatrix,
    registration: Option<RegistrationSummary>,
) -> Result<EvalReport> {
    cfg.validate()?;
    let grid = snaps.grid.clone();
    let comps = snaps.fields[0].components();
    let u = snaps.to_matrix()?;
    let problem = &cfg.problem;
    let hf = |ts: &[f64]| solve_at(problem, &grid, ts).map(|(f, _)| f);

    let windows = [&cfg.interp, &cfg.extrap];
    let mut refs = Vec::new();
    for (i, w) in windows.iter().enumerate() {
        let times = sample_times(w, cfg.samples, cfg.seed + i as u64)?;
        info!("{}: reference solves for the {} window", cfg.name, w.name);
        let fields = reference_fields(hf, &times)?;
        refs.push((times, fields));
    }

    let mut ranks = Vec::new();
    for &n in &cfg.ranks {
        let model = TsdmdModel::offline_with(g, phi, n, n, &grid, comps, cfg.phi_representation)?;
        let base = baseline(&u, n)?;
        let mut ts = Vec::new();
        let mut dm = Vec::new();
        for (i, w) in windows.iter().enumerate() {
            let (times, fields) = &refs[i];
            let seed = cfg.seed + i as u64;
            ts.push(window_errors(|t| model.online(t), fields, w, seed, times.clone())?);
            dm.push(window_errors(|t| baseline_field(&base, &grid, comps, t), fields, w, seed, times.clone())?);
        }
        info!("{}: n = {n}: TS-DMD {:?} / {:?}, DMD {:?} / {:?}", cfg.name, ts[0].average, ts[1].average, dm[0].average, dm[1].average);
        ranks.push(RankErrors {
            n,
            tsdmd: ts,
            dmd: dm,
            tsdmd_flags: (model.dmd_g.flags.clone(), model.dmd_phi.flags.clone()),
            dmd_flags: base.flags.clone(),
        });
    }

    let count = cfg.sv_count.min(u.rows()).min(u.cols());
    let sv = SvDecay { raw: sv_decay(&u, count)?, g: sv_decay(g, count)?, phi: sv_decay(phi, count.min(phi.rows()))? };

    let jac_window = Window::closed("jacobian", 0.0, cfg.problem.final_time);
    let jac_times = sample_times(&jac_window, cfg.samples, cfg.seed + 2)?;
    let mut jacobian = Vec::new();
    for &n in &cfg.jacobian_ranks {
        let model = TsdmdModel::offline_with(g, phi, n, n, &grid, comps, cfg.phi_representation)?;
        let minima = jac_times.iter().map(|&t| min_jacobian(&model.phi_unclamped_at(t))).collect();
        jacobian.push(JacobianStudy { n, times: jac_times.clone(), minima });
    }

    let timing = timing_study(cfg, &grid, comps, g, phi)?;

    let mut bound = Vec::new();
    if !cfg.bound_ranks.is_empty() {
        let nv = grid.num_vertices() * grid.dim();
        let g_hf: Vec<CellField> =
            (0..g.cols()).map(|k| CellField::new(grid.clone(), comps, g.column(k).to_vec())).collect::<Result<_>>()?;
        let phi_hf: Vec<VertexField> = (0..phi.cols())
            .map(|k| {
                debug_assert_eq!(phi.column(k).len(), nv);
                VertexField::new(grid.clone(), phi.column(k).to_vec())
            })
            .collect::<Result<_>>()?;
        for &n in &cfg.bound_ranks {
            let model = TsdmdModel::offline_with(g, phi, n, n, &grid, comps, cfg.phi_representation)?;
            let g_rom: Vec<CellField> = snaps.times.iter().map(|&t| model.g_at(t)).collect();
            let phi_rom: Vec<VertexField> = snaps.times.iter().map(|&t| model.phi_unclamped_at(t)).collect();
            let r = check_error_bound(&snaps.fields, &g_hf, &g_rom, &phi_hf, &phi_rom, &snaps.times, 0.1)?;
            bound.push((n, r));
        }
    }

    Ok(EvalReport { config: cfg.clone(), ranks, sv_decay: sv, jacobian, timing, bound, hf: hf_invariants(snaps), registration })
}

/// Speedup of the reduced model over fresh full-order solves. The
/// full-order time of a sample is the wall-clock from `t = 0` until the
/// solver reaches it.
fn timing_study(cfg: &ExperimentConfig, grid: &Grid, comps: usize, g: &SnapshotMatrix, phi: &SnapshotMatrix) -> Result<TimingStudy> {
    let n = cfg.timing_rank;
    let model = TsdmdModel::offline_with(g, phi, n, n, grid, comps, cfg.phi_representation)?;
    let times = sample_times(&cfg.timing_window, cfg.samples, cfg.seed + 3)?;
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    info!("{}: timing full-order solves", cfg.name);
    let (fields_sorted, wall) = solve_at(&cfg.problem, grid, &sorted)?;
    let mut tau_hf = vec![0.0; times.len()];
    let mut fields: Vec<Option<CellField>> = vec![None; times.len()];
    for ((f, w), &i) in fields_sorted.into_iter().zip(wall).zip(&order) {
        tau_hf[i] = w;
        fields[i] = Some(f);
    }
    let fields: Vec<CellField> = fields.into_iter().map(|f| f.expect("every sample solved")).collect();

    std::hint::black_box(model.online(times[0]));
    let tau_rom: Vec<f64> = times
        .iter()
        .map(|&t| {
            let start = Instant::now();
            std::hint::black_box(model.online(t));
            start.elapsed().as_secs_f64()
        })
        .collect();
    let report = speedup(tau_hf, tau_rom)?;
    let errors = window_errors(|t| model.online(t), &fields, &cfg.timing_window, cfg.seed + 3, times.clone())?;
    Ok(TimingStudy { n, times, report, errors })
}

/// L1 errors of the advected step against the exact translate at time `t`
/// for each grid size.
pub fn advection_convergence(cells: &[usize], t: f64) -> Result<Vec<(usize, f64)>> {
    let p = ProblemSpec::advection_step();
    let (lo, hi) = p.bounds[0];
    cells
        .iter()
        .map(|&n| {
            let grid = Grid::uniform_1d(lo, hi, n)?;
            let (fields, _) = solve_at(&p, &grid, &[t])?;
            let exact = project_to_cells(&[Profile::indicator(&[-0.2 + t], &[0.3 + t])], &grid)?;
            let err = crate::metrics::l1_distance(&fields[0], &exact);
            Ok((n, err))
        })
        .collect()
}

/// Observed convergence rates between consecutive grid sizes.
pub fn convergence_rates(errors: &[(usize, f64)]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0].1 / w[1].1).ln() / (w[1].0 as f64 / w[0].0 as f64).ln()).collect()
}

/// Writes the snapshot file and the timing sidecar of `snaps`.
pub fn write_snapshots(dir: &Path, snaps: &SnapshotSet) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = serde_json::json!({
        "grid": snaps.grid,
        "components": snaps.fields[0].components(),
        "layout": "component-major within each column",
        "problem": snaps.problem,
    });
    snaps.to_matrix()?.write(&dir.join("snapshots.bin"), meta)?;
    io::write_json(
        &dir.join("hf_timing.json"),
        &serde_json::json!({
            "times": snaps.times,
            "wall_clock": snaps.wall_clock,
            "clock": "monotonic (std::time::Instant), cumulative from t = 0",
        }),
    )
}

pub fn read_snapshots(dir: &Path) -> Result<SnapshotSet> {
    let (m, header) = SnapshotMatrix::read(&dir.join("snapshots.bin"))?;
    let meta = &header.meta;
    let grid: Grid = serde_json::from_value(meta["grid"].clone())?;
    let comps: usize = serde_json::from_value(meta["components"].clone())?;
    let problem: ProblemSpec = serde_json::from_value(meta["problem"].clone())?;
    let timing: serde_json::Value = io::read_json(&dir.join("hf_timing.json"))?;
    let times: Vec<f64> = serde_json::from_value(timing["times"].clone())?;
    let wall_clock: Vec<f64> = serde_json::from_value(timing["wall_clock"].clone())?;
    if times.len() != m.cols() || wall_clock.len() != m.cols() {
        return Err(Error::Format("timing sidecar does not match the snapshot file".into()));
    }
    let fields = (0..m.cols()).map(|k| CellField::new(grid.clone(), comps, m.column(k).to_vec())).collect::<Result<_>>()?;
    Ok(SnapshotSet { grid, times, fields, problem, wall_clock })
}

/// Writes the registration artifacts: transforms, transformed snapshots,
/// inverse maps and the per-snapshot optimizer log.
pub fn write_registration(dir: &Path, reg: &Registered) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    io::write_json(&dir.join("transforms.json"), &reg.transforms)?;
    let layout = serde_json::json!({ "grid": reg.transformed.grid });
    reg.transformed.g_matrix()?.write(&dir.join("g.bin"), layout.clone())?;
    let mut phi_meta = layout;
    phi_meta["layout"] = "vertex coordinates, component-major".into();
    reg.transformed.phi_matrix()?.write(&dir.join("phi.bin"), phi_meta)?;
    io::write_json(&dir.join("inversion.json"), &reg.transformed.inversion)?;
    let rows: Vec<Vec<String>> = reg
        .transforms
        .diagnostics
        .iter()
        .map(|d| {
            vec![
                format!("{}", d.time),
                format!("{:e}", d.initial.matching),
                format!("{:e}", d.fin.matching),
                format!("{:e}", d.fin.regularization),
                d.iterations.to_string(),
                d.converged.to_string(),
                d.warning.clone().unwrap_or_default().replace(',', ";"),
            ]
        })
        .collect();
    io::write_csv(
        &dir.join("registration.csv"),
        &["time", "initial_matching", "final_matching", "regularization", "iterations", "converged", "warning"],
        &rows,
    )
}

/// Reads the outputs of [`write_registration`]: transforms, `g` and the
/// inverse maps.
pub fn read_registration(dir: &Path) -> Result<(TransformSet, SnapshotMatrix, SnapshotMatrix, Vec<InversionReport>)> {
    let t: TransformSet = io::read_json(&dir.join("transforms.json"))?;
    let (g, _) = SnapshotMatrix::read(&dir.join("g.bin"))?;
    let (phi, _) = SnapshotMatrix::read(&dir.join("phi.bin"))?;
    let inv: Vec<InversionReport> = io::read_json(&dir.join("inversion.json"))?;
    Ok((t, g, phi, inv))
}

/// Writes the JSON summary and the CSV series of a report.
pub fn write_report(dir: &Path, r: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    io::write_json(&dir.join("summary.json"), r)?;
    let mut avg = Vec::new();
    let mut samples = Vec::new();
    for re in &r.ranks {
        for (method, ws) in [("tsdmd", &re.tsdmd), ("dmd", &re.dmd)] {
            for w in ws.iter() {
                for (k, a) in w.average.iter().enumerate() {
                    avg.push(vec![method.into(), re.n.to_string(), w.window.name.clone(), k.to_string(), format!("{a:e}")]);
                }
                for (s, (t, e)) in w.times.iter().zip(&w.errors).enumerate() {
                    for (k, v) in e.iter().enumerate() {
                        samples.push(vec![
                            method.into(),
                            re.n.to_string(),
                            w.window.name.clone(),
                            s.to_string(),
                            format!("{t}"),
                            k.to_string(),
                            format!("{v:e}"),
                        ]);
                    }
                }
            }
        }
    }
    io::write_csv(&dir.join("average_errors.csv"), &["method", "n", "window", "component", "average_error"], &avg)?;
    io::write_csv(&dir.join("errors.csv"), &["method", "n", "window", "sample", "time", "component", "error"], &samples)?;
    let sv: Vec<Vec<String>> = (0..r.sv_decay.raw.len())
        .map(|i| {
            let get = |v: &Vec<f64>| v.get(i).map_or(String::new(), |x| format!("{x:e}"));
            vec![(i + 1).to_string(), get(&r.sv_decay.raw), get(&r.sv_decay.g), get(&r.sv_decay.phi)]
        })
        .collect();
    io::write_csv(&dir.join("sv_decay.csv"), &["n", "raw", "g", "phi"], &sv)?;
    let jac: Vec<Vec<String>> = r
        .jacobian
        .iter()
        .flat_map(|j| j.times.iter().zip(&j.minima).map(move |(t, m)| vec![j.n.to_string(), format!("{t}"), format!("{m:e}")]))
        .collect();
    io::write_csv(&dir.join("jacobian.csv"), &["n", "time", "min_jacobian"], &jac)?;
    let tr = &r.timing.report;
    let timing: Vec<Vec<String>> = (0..tr.tau_hf.len())
        .map(|i| {
            vec![
                i.to_string(),
                format!("{}", r.timing.times[i]),
                format!("{:e}", tr.tau_hf[i]),
                format!("{:e}", tr.tau_rom[i]),
                format!("{:e}", r.timing.errors.errors[i][0]),
            ]
        })
        .collect();
    io::write_csv(&dir.join("timing.csv"), &["sample", "time", "tau_hf", "tau_rom", "tsdmd_error"], &timing)?;
    let bound: Vec<Vec<String>> = r
        .bound
        .iter()
        .map(|(n, b)| {
            vec![
                n.to_string(),
                format!("{:e}", b.delta),
                format!("{:e}", b.c1),
                format!("{:e}", b.lhs),
                format!("{:e}", b.bound),
                format!("{:e}", b.ratio),
                b.holds.to_string(),
                format!("{:e}", b.bound_with_measure),
                b.holds_with_measure.to_string(),
            ]
        })
        .collect();
    io::write_csv(
        &dir.join("error_bound.csv"),
        &["n", "delta", "c1", "lhs", "bound", "ratio", "holds", "bound_with_measure", "holds_with_measure"],
        &bound,
    )
}

/// Trains both methods at rank `n` on the given matrices (convenience for
/// callers outside [`run_train_eval`]).
pub fn train_pair(
    cfg: &ExperimentConfig,
    snaps: &SnapshotSet,
    g: &SnapshotMatrix,
    phi: &SnapshotMatrix,
    n: usize,
) -> Result<(TsdmdModel, DmdModel)> {
    let comps = snaps.fields[0].components();
    let model = TsdmdModel::offline_with(g, phi, n, n, &snaps.grid, comps, cfg.phi_representation)?;
    Ok((model, baseline(&snaps.to_matrix()?, n)?))
}
