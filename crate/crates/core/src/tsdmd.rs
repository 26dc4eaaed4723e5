//! Offline training and online evaluation of the transformed-snapshot model:
//! one DMD model for the transformed solution `g`, one for the inverse
//! transform, recomposed as `u_n(x, t) = g_n(phi_n(x, t), t)`.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dmd::{DmdModel, SnapshotMatrix};
use crate::error::{Error, Result};
use crate::io;
use crate::mesh::{CellField, EvalMode, Grid, VertexField};

/// How inverse transforms are stored in the DMD state vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiRepresentation {
    /// Raw vertex coordinates.
    #[default]
    Coordinates,
    /// Offset from the identity map.
    Displacement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    grid: Grid,
    components: usize,
    n: usize,
    n_phi: usize,
    mode: EvalMode,
    phi_representation: PhiRepresentation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsdmdModel {
    pub dmd_g: DmdModel,
    pub dmd_phi: DmdModel,
    pub grid: Grid,
    pub components: usize,
    pub mode: EvalMode,
    pub phi_representation: PhiRepresentation,
    identity: Vec<f64>,
}

impl TsdmdModel {
    /// Trains both models with the same rank `n`.
    pub fn offline(g: &SnapshotMatrix, phi: &SnapshotMatrix, n: usize, grid: &Grid, components: usize) -> Result<Self> {
        Self::offline_with(g, phi, n, n, grid, components, PhiRepresentation::Coordinates)
    }

    /// Trains with separate ranks for `g` and the inverse transform.
    pub fn offline_with(
        g: &SnapshotMatrix,
        phi: &SnapshotMatrix,
        n_g: usize,
        n_phi: usize,
        grid: &Grid,
        components: usize,
        repr: PhiRepresentation,
    ) -> Result<Self> {
        if g.cols() != phi.cols() || g.dt() != phi.dt() || g.t0() != phi.t0() {
            return Err(Error::InvalidArgument("transformed snapshots and inverse maps differ in their time axes".into()));
        }
        if g.rows() != grid.num_cells() * components {
            return Err(Error::GridMismatch(format!("g snapshots have {} rows, grid needs {}", g.rows(), grid.num_cells() * components)));
        }
        let identity = VertexField::identity(grid.clone()).into_values();
        if phi.rows() != identity.len() {
            return Err(Error::GridMismatch(format!("inverse maps have {} rows, grid needs {}", phi.rows(), identity.len())));
        }
        let dmd_g = DmdModel::fit(g, n_g)?;
        let dmd_phi = match repr {
            PhiRepresentation::Coordinates => DmdModel::fit(phi, n_phi)?,
            PhiRepresentation::Displacement => {
                let mut d = phi.data().clone();
                for mut col in d.column_iter_mut() {
                    for (v, id) in col.iter_mut().zip(&identity) {
                        *v -= id;
                    }
                }
                DmdModel::fit(&SnapshotMatrix::new(d, phi.t0(), phi.dt())?, n_phi)?
            }
        };
        Ok(Self { dmd_g, dmd_phi, grid: grid.clone(), components, mode: EvalMode::Multilinear, phi_representation: repr, identity })
    }

    /// Predicted transformed solution at `t`.
    pub fn g_at(&self, t: f64) -> CellField {
        CellField::from_parts_unchecked(self.grid.clone(), self.components, self.dmd_g.predict(t))
    }

    /// Predicted inverse transform at `t`, clamped to the closed domain.
    pub fn phi_at(&self, t: f64) -> VertexField {
        let mut phi = self.phi_unclamped_at(t);
        phi.clamp_to_domain();
        phi
    }

    /// Predicted inverse transform at `t` as returned by the reduced model.
    pub fn phi_unclamped_at(&self, t: f64) -> VertexField {
        let mut v = self.dmd_phi.predict(t);
        if self.phi_representation == PhiRepresentation::Displacement {
            v.iter_mut().zip(&self.identity).for_each(|(a, b)| *a += b);
        }
        VertexField::from_parts_unchecked(self.grid.clone(), v)
    }

    /// Reduced solution at `t`.
    pub fn online(&self, t: f64) -> CellField {
        compose(&self.g_at(t), &self.phi_at(t), self.mode)
    }

    pub fn online_batch(&self, times: &[f64]) -> Vec<CellField> {
        times.par_iter().map(|&t| self.online(t)).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.dmd_g.write(&dir.join("dmd_g.bin"))?;
        self.dmd_phi.write(&dir.join("dmd_phi.bin"))?;
        let manifest = Manifest {
            grid: self.grid.clone(),
            components: self.components,
            n: self.dmd_g.requested_rank,
            n_phi: self.dmd_phi.requested_rank,
            mode: self.mode,
            phi_representation: self.phi_representation,
        };
        io::write_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: Manifest = io::read_json(&dir.join("manifest.json"))?;
        let dmd_g = DmdModel::read(&dir.join("dmd_g.bin"))?;
        let dmd_phi = DmdModel::read(&dir.join("dmd_phi.bin"))?;
        let identity = VertexField::identity(m.grid.clone()).into_values();
        if dmd_g.state_dim() != m.grid.num_cells() * m.components || dmd_phi.state_dim() != identity.len() {
            return Err(Error::Format(format!("{}: model dimensions do not match the manifest grid", dir.display())));
        }
        Ok(Self {
            dmd_g,
            dmd_phi,
            grid: m.grid,
            components: m.components,
            mode: m.mode,
            phi_representation: m.phi_representation,
            identity,
        })
    }
}

/// `u(x_i) = g(phi(x_i))` at every cell center.
pub fn compose(g: &CellField, phi: &VertexField, mode: EvalMode) -> CellField {
    let grid = g.grid();
    let n = grid.num_cells();
    let c = g.components();
    let mut values = vec![0.0; n * c];
    for i in 0..n {
        let p = phi.eval_unchecked(&grid.cell_center(i));
        for k in 0..c {
            values[k * n + i] = g.eval_component(k, &p, mode);
        }
    }
    CellField::from_parts_unchecked(grid.clone(), c, values)
}

/// Standard DMD on the raw solution snapshots.
pub fn baseline(u: &SnapshotMatrix, n: usize) -> Result<DmdModel> {
    DmdModel::fit(u, n)
}

/// Baseline prediction reshaped onto the grid.
pub fn baseline_field(model: &DmdModel, grid: &Grid, components: usize, t: f64) -> CellField {
    CellField::from_parts_unchecked(grid.clone(), components, model.predict(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{project_to_cells, Profile};

    fn translating_step(grid: &Grid, k: usize, dt: f64) -> Vec<CellField> {
        (0..k)
            .map(|i| {
                let s = i as f64 * dt;
                project_to_cells(&[Profile::indicator(&[0.2 + s], &[0.4 + s])], grid).unwrap()
            })
            .collect()
    }

    fn matrix(fields: &[CellField], dt: f64) -> SnapshotMatrix {
        let cols: Vec<&[f64]> = fields.iter().map(|f| f.values()).collect();
        SnapshotMatrix::from_columns(&cols, 0.0, dt).unwrap()
    }

    fn identity_matrix(grid: &Grid, k: usize, dt: f64) -> SnapshotMatrix {
        let id = VertexField::identity(grid.clone());
        let cols: Vec<&[f64]> = (0..k).map(|_| id.values()).collect();
        SnapshotMatrix::from_columns(&cols, 0.0, dt).unwrap()
    }

    #[test]
    fn constant_solution_with_identity_maps() {
        let grid = Grid::uniform_1d(0.0, 1.0, 40).unwrap();
        let c = CellField::constant(grid.clone(), 2, 0.7);
        let g = matrix(&vec![c.clone(); 6], 0.1);
        let phi = identity_matrix(&grid, 6, 0.1);
        let m = TsdmdModel::offline(&g, &phi, 3, &grid, 2).unwrap();
        for t in [0.0, 0.33, 1.2] {
            let u = m.online(t);
            assert!(u.values().iter().all(|v| (v - 0.7).abs() < 1e-12));
        }
    }

    #[test]
    fn identity_maps_reduce_to_baseline() {
        let grid = Grid::uniform_1d(0.0, 1.0, 200).unwrap();
        let snaps = translating_step(&grid, 12, 0.03);
        let u = matrix(&snaps, 0.03);
        let phi = identity_matrix(&grid, 12, 0.03);
        let m = TsdmdModel::offline(&u, &phi, 5, &grid, 1).unwrap();
        let b = baseline(&u, 5).unwrap();
        for t in [0.0, 0.05, 0.17, 0.4] {
            let a = m.online(t);
            let e = baseline_field(&b, &grid, 1, t);
            let diff = a.values().iter().zip(e.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-10, "t = {t}: {diff}");
        }
    }

    #[test]
    fn exact_translation_gives_time_invariant_g() {
        // step moving at unit speed; exact maps phi(x) = x + t, inverse x - t
        let grid = Grid::uniform_1d(0.0, 1.0, 200).unwrap();
        let (k, dt) = (10, 0.02);
        let snaps = translating_step(&grid, k, dt);
        let mut gs = Vec::new();
        let mut phis = Vec::new();
        for (i, u) in snaps.iter().enumerate() {
            let s = i as f64 * dt;
            let n = grid.num_cells();
            let g: Vec<f64> =
                (0..n).map(|c| u.eval_component(0, &[grid.axis(0).clamp(grid.cell_center(c)[0] + s)], EvalMode::Multilinear)).collect();
            gs.push(CellField::new(grid.clone(), 1, g).unwrap());
            let v: Vec<f64> = (0..=n).map(|j| grid.axis(0).clamp(grid.vertex(j)[0] - s)).collect();
            phis.push(v);
        }
        // g is the same for every snapshot up to round-off
        for g in &gs[1..] {
            let d = g.values().iter().zip(gs[0].values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d < 1e-9);
        }
        let prefs: Vec<&[f64]> = phis.iter().map(|v| v.as_slice()).collect();
        let phi = SnapshotMatrix::from_columns(&prefs, 0.0, dt).unwrap();
        let m = TsdmdModel::offline(&matrix(&gs, dt), &phi, 2, &grid, 1).unwrap();
        assert!((m.dmd_g.lambda[0].norm() - 1.0).abs() < 1e-8);
        // the composed prediction tracks the step between snapshots
        let t = 4.5 * dt;
        let exact = project_to_cells(&[Profile::indicator(&[0.2 + t], &[0.4 + t])], &grid).unwrap();
        let u = m.online(t);
        let err: f64 = u.values().iter().zip(exact.values()).map(|(a, b)| (a - b).abs()).sum::<f64>() / exact.values().iter().sum::<f64>();
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn full_rank_reproduces_first_snapshot() {
        let grid = Grid::uniform_1d(0.0, 1.0, 100).unwrap();
        let snaps = translating_step(&grid, 6, 0.05);
        let u = matrix(&snaps, 0.05);
        let phi = identity_matrix(&grid, 6, 0.05);
        let m = TsdmdModel::offline(&u, &phi, 5, &grid, 1).unwrap();
        let out = m.online(0.0);
        let err: f64 = out.values().iter().zip(snaps[0].values()).map(|(a, b)| (a - b).abs()).sum::<f64>() * grid.cell_volume();
        assert!(err <= 2.0 * grid.cell_volume(), "{err}");
    }

    #[test]
    fn displacement_representation_agrees_for_identity() {
        let grid = Grid::uniform_2d((0.0, 1.0), 8).unwrap();
        let c = CellField::constant(grid.clone(), 1, 2.0);
        let g = matrix(&vec![c; 5], 0.1);
        let phi = identity_matrix(&grid, 5, 0.1);
        // the displacement snapshots are identically zero, which DMD rejects
        assert!(TsdmdModel::offline_with(&g, &phi, 2, 2, &grid, 1, PhiRepresentation::Displacement).is_err());
        let m = TsdmdModel::offline_with(&g, &phi, 2, 2, &grid, 1, PhiRepresentation::Coordinates).unwrap();
        assert!(m.online(0.25).values().iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let grid = Grid::uniform_1d(0.0, 1.0, 10).unwrap();
        let c = CellField::constant(grid.clone(), 1, 1.0);
        let g = matrix(&vec![c.clone(); 5], 0.1);
        assert!(TsdmdModel::offline(&g, &identity_matrix(&grid, 4, 0.1), 2, &grid, 1).is_err());
        assert!(TsdmdModel::offline(&g, &identity_matrix(&grid, 5, 0.2), 2, &grid, 1).is_err());
        assert!(TsdmdModel::offline(&g, &identity_matrix(&grid, 5, 0.1), 2, &grid, 2).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let grid = Grid::uniform_1d(0.0, 1.0, 50).unwrap();
        let snaps = translating_step(&grid, 8, 0.03);
        let m = TsdmdModel::offline(&matrix(&snaps, 0.03), &identity_matrix(&grid, 8, 0.03), 3, &grid, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = TsdmdModel::load(dir.path()).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.online(0.1), back.online(0.1));
    }
}
