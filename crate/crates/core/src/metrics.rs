//! Error, singular value, timing and error-bound diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dmd::{singular_values, SnapshotMatrix};
use crate::error::{Error, Result};
use crate::mesh::{CellField, EvalMode, VertexField};
use crate::tsdmd::compose;

/// Relative L1 error of `approx` against `reference`, per component.
pub fn rel_l1_error(reference: &CellField, approx: &CellField) -> Result<Vec<f64>> {
    reference.grid().ensure_same(approx.grid())?;
    if reference.components() != approx.components() {
        return Err(Error::GridMismatch("component counts differ".into()));
    }
    (0..reference.components())
        .map(|k| {
            let (r, a) = (reference.component(k), approx.component(k));
            let den: f64 = r.iter().map(|v| v.abs()).sum();
            if den == 0.0 {
                return Err(Error::InvalidArgument(format!("reference component {k} has zero L1 norm")));
            }
            let num: f64 = r.iter().zip(a).map(|(x, y)| (x - y).abs()).sum();
            Ok(num / den)
        })
        .collect()
}

/// Absolute L1 distance of two fields (all components).
pub fn l1_distance(a: &CellField, b: &CellField) -> f64 {
    a.grid().cell_volume() * a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// A sampling window `[lo, hi]`, or `(lo, hi]` when `left_open`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub left_open: bool,
}

impl Window {
    pub fn closed(name: &str, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), lo, hi, left_open: false }
    }

    pub fn left_open(name: &str, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), lo, hi, left_open: true }
    }
}

/// `count` independent uniform samples from `window`, reproducible from
/// `seed`.
pub fn sample_times(window: &Window, count: usize, seed: u64) -> Result<Vec<f64>> {
    if !(window.lo <= window.hi) || count == 0 {
        return Err(Error::InvalidArgument(format!("bad window [{}, {}] or count {count}", window.lo, window.hi)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = window.hi - window.lo;
    Ok((0..count)
        .map(|_| {
            let u: f64 = rng.random();
            if window.left_open {
                window.hi - w * u
            } else {
                window.lo + w * u
            }
        })
        .collect())
}

/// Errors at the sampled times of one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowErrors {
    pub window: Window,
    pub seed: u64,
    pub times: Vec<f64>,
    /// `errors[s][k]`: sample `s`, component `k`.
    pub errors: Vec<Vec<f64>>,
    /// Mean over samples, per component.
    pub average: Vec<f64>,
}

impl WindowErrors {
    pub fn max(&self, k: usize) -> f64 {
        self.errors.iter().map(|e| e[k]).fold(0.0, f64::max)
    }
}

/// Errors of a reduced model over sampled windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub method: String,
    pub n: usize,
    pub windows: Vec<WindowErrors>,
}

/// Average relative error of `rom` against `hf` over `count` samples from
/// `window`. `hf` receives the samples in ascending order and must return
/// one reference field per time.
pub fn avg_error<R, H>(rom: R, hf: H, window: &Window, count: usize, seed: u64) -> Result<WindowErrors>
where
    R: Fn(f64) -> CellField + Sync,
    H: FnOnce(&[f64]) -> Result<Vec<CellField>>,
{
    let times = sample_times(window, count, seed)?;
    let references = reference_fields(hf, &times)?;
    window_errors(rom, &references, window, seed, times)
}

/// Reference fields for unsorted `times`, obtained from one sorted batch.
pub fn reference_fields<H>(hf: H, times: &[f64]) -> Result<Vec<CellField>>
where
    H: FnOnce(&[f64]) -> Result<Vec<CellField>>,
{
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    let fields = hf(&sorted)?;
    if fields.len() != times.len() {
        return Err(Error::InvalidArgument("reference solver returned the wrong number of fields".into()));
    }
    let mut out: Vec<Option<CellField>> = vec![None; times.len()];
    for (f, &i) in fields.into_iter().zip(&order) {
        out[i] = Some(f);
    }
    Ok(out.into_iter().map(|f| f.expect("every sample has a reference")).collect())
}

/// Errors of `rom` against precomputed references at `times`.
pub fn window_errors<R>(rom: R, references: &[CellField], window: &Window, seed: u64, times: Vec<f64>) -> Result<WindowErrors>
where
    R: Fn(f64) -> CellField + Sync,
{
    let errors: Vec<Vec<f64>> = times.par_iter().zip(references).map(|(&t, r)| rel_l1_error(r, &rom(t))).collect::<Result<_>>()?;
    let comps = errors.first().map_or(0, |e| e.len());
    let average = (0..comps).map(|k| errors.iter().map(|e| e[k]).sum::<f64>() / errors.len() as f64).collect();
    Ok(WindowErrors { window: window.clone(), seed, times, errors, average })
}

/// Scaled singular values `sigma_i / sigma_1` for `i = 1..=n_max` of all
/// snapshot columns.
pub fn sv_decay(s: &SnapshotMatrix, n_max: usize) -> Result<Vec<f64>> {
    if n_max == 0 || n_max > s.rows().min(s.cols()) {
        return Err(Error::InvalidArgument(format!("n_max {n_max} outside 1..={}", s.rows().min(s.cols()))));
    }
    let sv = singular_values(s.data());
    if sv[0] == 0.0 {
        return Err(Error::InvalidArgument("snapshot matrix is zero".into()));
    }
    Ok(sv[..n_max].iter().map(|v| v / sv[0]).collect())
}

/// Wall-clock comparison of the full and the reduced model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub tau_hf: Vec<f64>,
    pub tau_rom: Vec<f64>,
    pub speedup: f64,
    pub clock: String,
    pub warmup: String,
}

/// `kappa = sum tau_hf / sum tau_rom`.
pub fn speedup(tau_hf: Vec<f64>, tau_rom: Vec<f64>) -> Result<TimingReport> {
    if tau_hf.len() != tau_rom.len() || tau_hf.is_empty() {
        return Err(Error::InvalidArgument("timing samples do not match".into()));
    }
    if tau_hf.iter().chain(&tau_rom).any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument("timings must be positive".into()));
    }
    let s = tau_hf.iter().sum::<f64>() / tau_rom.iter().sum::<f64>();
    Ok(TimingReport {
        tau_hf,
        tau_rom,
        speedup: s,
        clock: "monotonic (std::time::Instant)".into(),
        warmup: "one untimed reduced-model evaluation before measuring".into(),
    })
}

/// Total variation of component `k` (interior jumps only). In 2D the
/// axis-wise jumps are weighted by the transverse cell width.
pub fn bv_seminorm(f: &CellField, k: usize) -> f64 {
    let g = f.grid();
    let v = f.component(k);
    let nx = g.axis(0).cells;
    if g.dim() == 1 {
        return v.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    }
    let ny = g.axis(1).cells;
    let (hx, hy) = (g.axis(0).width(), g.axis(1).width());
    let mut tv = 0.0;
    for j in 0..ny {
        for i in 0..nx - 1 {
            tv += hy * (v[j * nx + i + 1] - v[j * nx + i]).abs();
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            tv += hx * (v[(j + 1) * nx + i] - v[j * nx + i]).abs();
        }
    }
    tv
}

fn slopes(phi: &VertexField) -> Vec<f64> {
    let h = phi.grid().axis(0).width();
    phi.component(0).windows(2).map(|w| (w[1] - w[0]) / h).collect()
}

/// Discrete `W^{1,inf}` distance of two 1D vertex fields.
pub fn w1inf_distance(a: &VertexField, b: &VertexField) -> f64 {
    let sup = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let grad = slopes(a).iter().zip(slopes(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    sup + grad
}

/// Quantities of the discrete error bound at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub time: f64,
    /// `|u_N - u_n|_{L1}`
    pub error: f64,
    /// `|g_N o phi - g_N o phi_n|_{L1}`
    pub a1: f64,
    /// `|g_N o phi_n - g_n o phi_n|_{L1}`
    pub a2: f64,
    /// `|u_N - g_N o phi|_{L1}`: how far the discrete decomposition is from
    /// exact
    pub decomposition_residual: f64,
    pub g_distance: f64,
    pub phi_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub delta: f64,
    pub bv_max: f64,
    pub grad_phi_max: f64,
    pub c1: f64,
    pub lhs: f64,
    pub bound: f64,
    pub ratio: f64,
    pub domain_measure: f64,
    /// Bound with `C1` multiplied by the domain measure.
    pub bound_with_measure: f64,
    pub slack: f64,
    pub holds: bool,
    pub holds_with_measure: bool,
    pub terms: Vec<BoundTerms>,
}

/// Checks `max_t |u_N - u_n|_{L1} <= C1 delta + delta^2` on the given
/// times (1D only), with `slack` relative tolerance.
pub fn check_error_bound(
    u_hf: &[CellField],
    g_hf: &[CellField],
    g_rom: &[CellField],
    phi: &[VertexField],
    phi_rom: &[VertexField],
    times: &[f64],
    slack: f64,
) -> Result<BoundReport> {
    let k = times.len();
    if [u_hf.len(), g_hf.len(), g_rom.len(), phi.len(), phi_rom.len()].iter().any(|&l| l != k) || k == 0 {
        return Err(Error::InvalidArgument("bound inputs differ in length".into()));
    }
    let grid = u_hf[0].grid();
    if grid.dim() != 1 {
        return Err(Error::Unsupported("the error bound check is one-dimensional".into()));
    }
    let mode = EvalMode::Multilinear;
    let terms: Vec<BoundTerms> = (0..k)
        .map(|i| {
            let exact = compose(&g_hf[i], &phi[i], mode);
            let mixed = compose(&g_hf[i], &phi_rom[i], mode);
            let rom = compose(&g_rom[i], &phi_rom[i], mode);
            BoundTerms {
                time: times[i],
                error: l1_distance(&u_hf[i], &rom),
                a1: l1_distance(&exact, &mixed),
                a2: l1_distance(&mixed, &rom),
                decomposition_residual: l1_distance(&u_hf[i], &exact),
                g_distance: l1_distance(&g_hf[i], &g_rom[i]),
                phi_distance: w1inf_distance(&phi[i], &phi_rom[i]),
            }
        })
        .collect();
    let delta = terms.iter().map(|t| t.g_distance.max(t.phi_distance)).fold(0.0, f64::max);
    let comps = u_hf[0].components();
    let bv_max = u_hf.iter().map(|u| (0..comps).map(|c| bv_seminorm(u, c)).fold(0.0, f64::max)).fold(0.0, f64::max);
    let grad_phi_max = phi.iter().map(|p| slopes(p).iter().map(|s| s.abs()).fold(0.0, f64::max)).fold(0.0, f64::max);
    let c1 = bv_max + grad_phi_max;
    let lhs = terms.iter().map(|t| t.error).fold(0.0, f64::max);
    let bound = c1 * delta + delta * delta;
    let measure = grid.measure();
    let bound_with_measure = measure * c1 * delta + delta * delta;
    let tol = |b: f64| b * (1.0 + slack) + 1e-14;
    Ok(BoundReport {
        delta,
        bv_max,
        grad_phi_max,
        c1,
        lhs,
        bound,
        ratio: if bound > 0.0 {
            lhs / bound
        } else if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        },
        domain_measure: measure,
        bound_with_measure,
        slack,
        holds: lhs <= tol(bound),
        holds_with_measure: lhs <= tol(bound_with_measure),
        terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{project_to_cells, Grid, Profile};
    use proptest::prelude::*;

    fn ind(g: &Grid, lo: f64, hi: f64) -> CellField {
        project_to_cells(&[Profile::indicator(&[lo], &[hi])], g).unwrap()
    }

    #[test]
    fn rel_error_examples() {
        let g = Grid::uniform_1d(0.0, 2.0, 200).unwrap();
        let r = ind(&g, 0.0, 1.0);
        assert_eq!(rel_l1_error(&r, &r).unwrap(), vec![0.0]);
        assert_eq!(rel_l1_error(&r, &CellField::constant(g.clone(), 1, 0.0)).unwrap(), vec![1.0]);
        let a = ind(&g, 0.1, 1.1);
        assert!((rel_l1_error(&r, &a).unwrap()[0] - 0.2).abs() < 1e-12);
        assert!(rel_l1_error(&CellField::constant(g.clone(), 1, 0.0), &r).is_err());
    }

    #[test]
    fn sampling_is_reproducible_and_inside_windows() {
        let w = Window::left_open("extrap", 0.8, 1.0);
        let a = sample_times(&w, 100, 42).unwrap();
        assert_eq!(a, sample_times(&w, 100, 42).unwrap());
        assert_ne!(a, sample_times(&w, 100, 43).unwrap());
        assert!(a.iter().all(|&t| t > 0.8 && t <= 1.0));
        let c = sample_times(&Window::closed("interp", 0.0, 0.8), 100, 1).unwrap();
        assert!(c.iter().all(|&t| (0.0..0.8).contains(&t)));
    }

    #[test]
    fn avg_error_degenerate_cases() {
        let g = Grid::uniform_1d(0.0, 1.0, 50).unwrap();
        let field = |t: f64| ind(&g, 0.2 + 0.1 * t, 0.5 + 0.1 * t);
        let w = Window::closed("w", 0.0, 1.0);
        let hf = |ts: &[f64]| Ok(ts.iter().map(|&t| field(t)).collect());
        let e = avg_error(field, hf, &w, 10, 3).unwrap();
        assert_eq!(e.average, vec![0.0]);
        assert_eq!(e.times.len(), 10);

        let stored = ind(&g, 0.2, 0.5);
        let w0 = Window::closed("point", 0.0, 0.0);
        let approx = ind(&g, 0.25, 0.5);
        let e = avg_error(|_| approx.clone(), |ts: &[f64]| Ok(vec![stored.clone(); ts.len()]), &w0, 1, 0).unwrap();
        assert_eq!(e.average, rel_l1_error(&stored, &approx).unwrap());
    }

    #[test]
    fn references_follow_sample_order() {
        let g = Grid::uniform_1d(0.0, 1.0, 4).unwrap();
        let times = vec![0.3, 0.1, 0.2];
        let refs = reference_fields(
            |ts: &[f64]| {
                assert!(ts.windows(2).all(|w| w[0] <= w[1]));
                Ok(ts.iter().map(|&t| CellField::constant(g.clone(), 1, t)).collect())
            },
            &times,
        )
        .unwrap();
        for (r, t) in refs.iter().zip(&times) {
            assert_eq!(r.values()[0], *t);
        }
    }

    #[test]
    fn sv_decay_examples() {
        let col = [1.0, 2.0, 3.0];
        let s = SnapshotMatrix::from_columns(&[&col, &col, &col], 0.0, 1.0).unwrap();
        let d = sv_decay(&s, 3).unwrap();
        assert_eq!(d[0], 1.0);
        assert!(d[1] < 1e-14 && d[2] < 1e-14);
        assert!(sv_decay(&s, 4).is_err());
    }

    #[test]
    fn speedup_examples() {
        let r = speedup(vec![5.0, 5.0], vec![0.004, 0.006]).unwrap();
        assert!((r.speedup - 1000.0).abs() < 1e-9);
        assert!((speedup(vec![1.0], vec![1.0]).unwrap().speedup - 1.0).abs() < 1e-15);
        assert!(speedup(vec![1.0], vec![0.0]).is_err());
        assert!(speedup(vec![1.0, 2.0], vec![1.0]).is_err());
    }

    #[test]
    fn bv_examples() {
        let g = Grid::uniform_1d(0.0, 1.0, 100).unwrap();
        assert_eq!(bv_seminorm(&CellField::constant(g.clone(), 1, 3.0), 0), 0.0);
        assert!((bv_seminorm(&ind(&g, 0.2, 0.7), 0) - 2.0).abs() < 1e-12);
        let ramp: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        assert!((bv_seminorm(&CellField::new(g, 1, ramp).unwrap(), 0) - 1.0).abs() < 1e-12);
        let g2 = Grid::uniform_2d((0.0, 1.0), 20).unwrap();
        let sq = project_to_cells(&[Profile::indicator(&[0.25, 0.25], &[0.75, 0.75])], &g2).unwrap();
        assert!((bv_seminorm(&sq, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bound_trivial_and_perturbed() {
        let g = Grid::uniform_1d(0.0, 1.0, 100).unwrap();
        let u = ind(&g, 0.3, 0.6);
        let id = VertexField::identity(g.clone());
        let r = check_error_bound(&[u.clone()], &[u.clone()], &[u.clone()], &[id.clone()], &[id.clone()], &[0.0], 0.1).unwrap();
        assert_eq!(r.delta, 0.0);
        assert_eq!(r.lhs, 0.0);
        assert!(r.holds);

        let eps = 0.05;
        let bump = ind(&g, 0.1, 0.2);
        let gn = CellField::new(g.clone(), 1, u.values().iter().zip(bump.values()).map(|(a, b)| a + eps * b).collect()).unwrap();
        let r = check_error_bound(&[u.clone()], &[u.clone()], &[gn], &[id.clone()], &[id], &[0.0], 0.1).unwrap();
        assert!((r.lhs - eps * 0.1).abs() < 1e-12);
        assert!((r.terms[0].a2 - eps * 0.1).abs() < 1e-12);
        assert_eq!(r.terms[0].a1, 0.0);
        assert!(r.holds && r.holds_with_measure);

        let g2 = Grid::uniform_2d((0.0, 1.0), 4).unwrap();
        let c = CellField::constant(g2.clone(), 1, 1.0);
        let id2 = VertexField::identity(g2);
        assert!(check_error_bound(&[c.clone()], &[c.clone()], &[c], &[id2.clone()], &[id2], &[0.0], 0.1).is_err());
    }

    proptest! {
        #[test]
        fn bv_invariant_under_reversal(vals in proptest::collection::vec(-5.0f64..5.0, 2..60)) {
            let n = vals.len();
            let g = Grid::uniform_1d(0.0, 1.0, n).unwrap();
            let f = CellField::new(g.clone(), 1, vals.clone()).unwrap();
            let rev = CellField::new(g, 1, vals.into_iter().rev().collect()).unwrap();
            prop_assert!((bv_seminorm(&f, 0) - bv_seminorm(&rev, 0)).abs() < 1e-12);
        }

        #[test]
        fn sv_decay_monotone_and_permutation_invariant(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = nalgebra::DMatrix::from_fn(12, 6, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
            let mut perm = m.clone();
            perm.swap_columns(0, 5);
            perm.swap_columns(1, 3);
            let a = sv_decay(&SnapshotMatrix::new(m, 0.0, 1.0).unwrap(), 6).unwrap();
            let b = sv_decay(&SnapshotMatrix::new(perm, 0.0, 1.0).unwrap(), 6).unwrap();
            prop_assert_eq!(a[0], 1.0);
            for w in a.windows(2) { prop_assert!(w[1] <= w[0]); }
            for (x, y) in a.iter().zip(&b) { prop_assert!((x - y).abs() < 1e-12); }
        }

        #[test]
        fn relative_error_nonnegative_and_zero_iff_equal(vals in proptest::collection::vec(0.1f64..5.0, 3..40), bump in 0usize..3) {
            let g = Grid::uniform_1d(0.0, 1.0, vals.len()).unwrap();
            let r = CellField::new(g.clone(), 1, vals.clone()).unwrap();
            prop_assert_eq!(rel_l1_error(&r, &r).unwrap()[0], 0.0);
            let mut other = vals;
            other[bump] += 0.5;
            let e = rel_l1_error(&r, &CellField::new(g, 1, other).unwrap()).unwrap()[0];
            prop_assert!(e > 0.0);
        }
    }
}
