//! Plain dynamic mode decomposition: truncated SVD of the snapshot matrix,
//! projected one-step operator, its eigendecomposition, and the
//! continuous-time exponential predictor.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Relative singular value below which a POD mode is discarded.
pub const SIGMA_DROP: f64 = 1e-12;
/// Eigenvalue modulus below which a DMD mode is discarded.
pub const LAMBDA_DROP: f64 = 1e-12;
/// Condition number of the eigenvector matrix above which the amplitudes
/// are computed by regularized least squares.
pub const COND_LIMIT: f64 = 1e12;

/// Snapshots `F(t0 + k dt)`, one per column.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotMatrix {
    data: DMatrix<f64>,
    t0: f64,
    dt: f64,
}

impl SnapshotMatrix {
    pub fn new(data: DMatrix<f64>, t0: f64, dt: f64) -> Result<Self> {
        if data.ncols() < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 snapshots, got {}", data.ncols())));
        }
        if data.nrows() == 0 {
            return Err(Error::InvalidArgument("snapshots are empty".into()));
        }
        if !(dt > 0.0) || !dt.is_finite() || !t0.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid time axis t0 = {t0}, dt = {dt}")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("snapshot entry ({}, {})", i % data.nrows(), i / data.nrows())));
        }
        Ok(Self { data, t0, dt })
    }

    pub fn from_columns(cols: &[&[f64]], t0: f64, dt: f64) -> Result<Self> {
        let rows = cols.first().map_or(0, |c| c.len());
        if cols.iter().any(|c| c.len() != rows) {
            return Err(Error::InvalidArgument("snapshot columns differ in length".into()));
        }
        let mut data = DMatrix::zeros(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            data.column_mut(j).copy_from_slice(c);
        }
        Self::new(data, t0, dt)
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn column(&self, k: usize) -> &[f64] {
        let n = self.rows();
        &self.data.as_slice()[k * n..(k + 1) * n]
    }

    /// Writes the matrix in the snapshot file format; `extra` is merged into
    /// the header.
    pub fn write(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let header = io::SnapshotHeader::new(self.rows(), self.cols(), self.t0, self.dt, extra);
        io::write_blob(path, &header, self.data.as_slice())
    }

    pub fn read(path: &Path) -> Result<(Self, io::SnapshotHeader)> {
        let (header, data): (io::SnapshotHeader, Vec<f64>) = io::read_blob(path)?;
        header.check()?;
        if data.len() != header.rows * header.cols {
            return Err(Error::Format(format!(
                "{}: header announces {}x{} values, found {}",
                path.display(),
                header.rows,
                header.cols,
                data.len()
            )));
        }
        let m = DMatrix::from_vec(header.rows, header.cols, data);
        Ok((Self::new(m, header.t0, header.dt)?, header))
    }
}

/// Leading singular triplets of a matrix.
#[derive(Clone, Debug)]
pub struct SvdTriple {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

/// All singular values of `a`, descending.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let small = if a.nrows() > a.ncols() { a.clone().qr().r() } else { a.clone() };
    let mut s: Vec<f64> = small.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Rank-`n` truncated SVD. Tall matrices are first reduced by a Householder
/// QR factorization so that only a small square SVD is needed.
pub fn truncated_svd(a: &DMatrix<f64>, n: usize) -> Result<SvdTriple> {
    let (rows, cols) = a.shape();
    if n == 0 || n > rows.min(cols) {
        return Err(Error::InvalidArgument(format!("rank {n} outside 1..={}", rows.min(cols))));
    }
    let (q, small) = if rows > cols {
        let qr = a.clone().qr();
        (Some(qr.q()), qr.r())
    } else {
        (None, a.clone())
    };
    let svd = small.svd(true, true);
    let (us, vt) = (
        svd.u.ok_or_else(|| Error::Numerical("SVD did not return U".into()))?,
        svd.v_t.ok_or_else(|| Error::Numerical("SVD did not return V".into()))?,
    );
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let idx = &idx[..n];
    let sigma: Vec<f64> = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let us = DMatrix::from_fn(us.nrows(), n, |r, c| us[(r, idx[c])]);
    let v = DMatrix::from_fn(cols, n, |r, c| vt[(idx[c], r)]);
    let u = match q {
        Some(q) => q * us,
        None => us,
    };
    if sigma[0] > 0.0 && sigma[n - 1] / sigma[0] < SIGMA_DROP {
        warn!("requested rank {n} exceeds the numerical rank of the snapshot matrix");
    }
    Ok(SvdTriple { u, sigma, v })
}

/// Fitted DMD model `F_n(t) = U W diag(exp(omega (t - t0))) b`.
#[derive(Clone, Debug, PartialEq)]
pub struct DmdModel {
    /// POD basis, `N x r` with `r <= n` retained POD modes.
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub w: DMatrix<Complex64>,
    pub lambda: Vec<Complex64>,
    pub omega: Vec<Complex64>,
    pub b: Vec<Complex64>,
    /// `true` for modes discarded because of a vanishing eigenvalue.
    pub dropped: Vec<bool>,
    pub requested_rank: usize,
    pub t0: f64,
    pub dt: f64,
    pub flags: FitFlags,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitFlags {
    /// POD modes discarded by the singular value threshold.
    pub dropped_sigma: usize,
    /// DMD modes discarded by the eigenvalue threshold.
    pub dropped_lambda: usize,
    /// Amplitudes computed by regularized least squares.
    pub regularized_amplitudes: bool,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    magic: String,
    version: u32,
    rows: usize,
    rank: usize,
    requested_rank: usize,
    t0: f64,
    dt: f64,
    sigma_drop: f64,
    lambda_drop: f64,
    cond_limit: f64,
    flags: FitFlags,
    dropped: Vec<bool>,
    layout: String,
}

const MODEL_MAGIC: &str = "tsdmd-dmd-model";

impl DmdModel {
    /// Fits a rank-`n` model to the snapshots.
    pub fn fit(s: &SnapshotMatrix, n: usize) -> Result<Self> {
        let (rows, k) = (s.rows(), s.cols());
        if k < 3 {
            return Err(Error::InvalidArgument(format!("DMD needs at least 3 snapshots, got {k}")));
        }
        if n == 0 || n > rows.min(k - 1) {
            return Err(Error::InvalidArgument(format!("rank {n} outside 1..={}", rows.min(k - 1))));
        }
        let s1 = s.data.columns(0, k - 1).into_owned();
        let s2 = s.data.columns(1, k - 1);
        let mut svd = truncated_svd(&s1, n)?;
        let mut flags = FitFlags::default();
        let s_max = svd.sigma[0];
        let r = if s_max > 0.0 { svd.sigma.iter().take_while(|&&v| v / s_max >= SIGMA_DROP).count() } else { 0 };
        if r == 0 {
            return Err(Error::Numerical("snapshot matrix is zero".into()));
        }
        if r < n {
            flags.dropped_sigma = n - r;
            svd.u = svd.u.columns(0, r).into_owned();
            svd.v = svd.v.columns(0, r).into_owned();
            svd.sigma.truncate(r);
        }
        let inv_sigma = DMatrix::from_diagonal(&DVector::from_iterator(r, svd.sigma.iter().map(|v| 1.0 / v)));
        let a = svd.u.transpose() * s2 * &svd.v * inv_sigma;
        let (lambda, w) = eigen(&a)?;
        let dropped: Vec<bool> = lambda.iter().map(|l| l.norm() < LAMBDA_DROP).collect();
        flags.dropped_lambda = dropped.iter().filter(|&&d| d).count();
        let omega: Vec<Complex64> =
            lambda.iter().zip(&dropped).map(|(l, &d)| if d { Complex64::new(0.0, 0.0) } else { l.ln() / s.dt }).collect();

        let y = svd.u.transpose() * DVector::from_column_slice(s.column(0));
        let y = y.map(|v| Complex64::new(v, 0.0));
        let keep: Vec<usize> = (0..r).filter(|&i| !dropped[i]).collect();
        let wk = DMatrix::from_fn(r, keep.len(), |i, j| w[(i, keep[j])]);
        let (bk, regularized) = amplitudes(&wk, &y)?;
        flags.regularized_amplitudes = regularized;
        if regularized {
            warn!("DMD eigenvector matrix is ill-conditioned; amplitudes regularized");
        }
        let mut b = vec![Complex64::new(0.0, 0.0); r];
        for (j, &i) in keep.iter().enumerate() {
            b[i] = bk[j];
        }
        Ok(Self { u: svd.u, sigma: svd.sigma, w, lambda, omega, b, dropped, requested_rank: n, t0: s.t0, dt: s.dt, flags })
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn state_dim(&self) -> usize {
        self.u.nrows()
    }

    /// Reduced coefficients `W diag(exp(omega (t - t0))) b`.
    fn reduced(&self, t: f64) -> Vec<Complex64> {
        let r = self.rank();
        let e: Vec<Complex64> = (0..r)
            .map(|i| if self.dropped[i] { Complex64::new(0.0, 0.0) } else { (self.omega[i] * (t - self.t0)).exp() * self.b[i] })
            .collect();
        (0..r).map(|row| (0..r).map(|j| self.w[(row, j)] * e[j]).sum()).collect()
    }

    /// Real part of the prediction at time `t`.
    pub fn predict(&self, t: f64) -> Vec<f64> {
        let c = self.reduced(t);
        let re = DVector::from_iterator(c.len(), c.iter().map(|z| z.re));
        (&self.u * re).as_slice().to_vec()
    }

    /// Full complex prediction (before taking the real part).
    pub fn predict_complex(&self, t: f64) -> Vec<Complex64> {
        let c = self.reduced(t);
        let re = DVector::from_iterator(c.len(), c.iter().map(|z| z.re));
        let im = DVector::from_iterator(c.len(), c.iter().map(|z| z.im));
        let (pr, pi) = (&self.u * re, &self.u * im);
        pr.iter().zip(pi.iter()).map(|(a, b)| Complex64::new(*a, *b)).collect()
    }

    /// Residual `|W b - U^T F(t0)| / |U^T F(t0)|` of the amplitude system
    /// for the first snapshot `f0`.
    pub fn amplitude_residual(&self, f0: &[f64]) -> f64 {
        let y = self.u.transpose() * DVector::from_column_slice(f0);
        let r = self.rank();
        let mut num = 0.0;
        for i in 0..r {
            let wb: Complex64 = (0..r).filter(|&j| !self.dropped[j]).map(|j| self.w[(i, j)] * self.b[j]).sum();
            num += (wb - y[i]).norm_sqr();
        }
        num.sqrt() / y.norm().max(f64::MIN_POSITIVE)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let r = self.rank();
        let header = ModelHeader {
            magic: MODEL_MAGIC.into(),
            version: 1,
            rows: self.state_dim(),
            rank: r,
            requested_rank: self.requested_rank,
            t0: self.t0,
            dt: self.dt,
            sigma_drop: SIGMA_DROP,
            lambda_drop: LAMBDA_DROP,
            cond_limit: COND_LIMIT,
            flags: self.flags.clone(),
            dropped: self.dropped.clone(),
            layout: "u(rows x rank), sigma(rank), w(rank x rank), lambda(rank), omega(rank), b(rank); \
                     column-major; complex as interleaved re, im"
                .into(),
        };
        let mut data = Vec::with_capacity(self.u.len() + r + 2 * (r * r + 3 * r));
        data.extend_from_slice(self.u.as_slice());
        data.extend_from_slice(&self.sigma);
        for z in self.w.iter().chain(&self.lambda).chain(&self.omega).chain(&self.b) {
            data.push(z.re);
            data.push(z.im);
        }
        io::write_blob(path, &header, &data)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (h, data): (ModelHeader, Vec<f64>) = io::read_blob(path)?;
        if h.magic != MODEL_MAGIC || h.version != 1 {
            return Err(Error::Format(format!("{}: not a DMD model file", path.display())));
        }
        let r = h.rank;
        let expected = h.rows * r + r + 2 * (r * r + 3 * r);
        if data.len() != expected || h.dropped.len() != r {
            return Err(Error::Format(format!("{}: expected {expected} values, found {}", path.display(), data.len())));
        }
        let (u, rest) = data.split_at(h.rows * r);
        let (sigma, rest) = rest.split_at(r);
        let cplx: Vec<Complex64> = rest.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        let (w, rest) = cplx.split_at(r * r);
        let (lambda, rest) = rest.split_at(r);
        let (omega, b) = rest.split_at(r);
        Ok(Self {
            u: DMatrix::from_column_slice(h.rows, r, u),
            sigma: sigma.to_vec(),
            w: DMatrix::from_column_slice(r, r, w),
            lambda: lambda.to_vec(),
            omega: omega.to_vec(),
            b: b.to_vec(),
            dropped: h.dropped,
            requested_rank: h.requested_rank,
            t0: h.t0,
            dt: h.dt,
            flags: h.flags,
        })
    }
}

/// Eigenvalues and unit eigenvectors of a real square matrix, sorted by
/// modulus (descending) and then by phase. Complex eigenvalues come in
/// exact conjugate pairs with conjugate eigenvectors.
pub fn eigen(a: &DMatrix<f64>) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
    let n = a.nrows();
    let ev = a
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?
        .complex_eigenvalues();
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let mut lambda: Vec<Complex64> = Vec::with_capacity(n);
    let mut positive: Vec<Complex64> = Vec::new();
    for z in ev.iter() {
        if z.im.abs() <= 1e-14 * scale {
            lambda.push(Complex64::new(z.re, 0.0));
        } else if z.im > 0.0 {
            positive.push(*z);
        }
    }
    for z in positive {
        lambda.push(z);
        lambda.push(z.conj());
    }
    if lambda.len() != n {
        return Err(Error::Numerical("eigenvalues do not pair into conjugates".into()));
    }
    lambda.sort_by(|x, y| {
        let (mx, my) = (x.norm(), y.norm());
        if (mx - my).abs() > 1e-12 * mx.max(my) {
            my.total_cmp(&mx)
        } else {
            x.arg().total_cmp(&y.arg())
        }
    });

    let ac = a.map(|v| Complex64::new(v, 0.0));
    let mut w = DMatrix::<Complex64>::zeros(n, n);
    let mut i = 0;
    while i < n {
        let l = lambda[i];
        let v = inverse_iteration(&ac, l, scale)?;
        w.set_column(i, &v);
        if l.im != 0.0 && i + 1 < n && lambda[i + 1] == l.conj() {
            w.set_column(i + 1, &v.map(|z| z.conj()));
            i += 2;
        } else {
            i += 1;
        }
    }
    Ok((lambda, w))
}

fn inverse_iteration(a: &DMatrix<Complex64>, l: Complex64, scale: f64) -> Result<DVector<Complex64>> {
    let n = a.nrows();
    let shift = l + Complex64::new(1e-10 * scale, 0.0);
    let m = a - DMatrix::<Complex64>::identity(n, n) * shift;
    let lu = m.lu();
    let mut v = DVector::from_fn(n, |i, _| Complex64::new(1.0 + 0.1 * i as f64, 0.05 * i as f64));
    for _ in 0..4 {
        let x = lu.solve(&v).ok_or_else(|| Error::Numerical("singular shifted matrix in inverse iteration".into()))?;
        let nrm = x.norm();
        if !nrm.is_finite() || nrm == 0.0 {
            return Err(Error::Numerical("inverse iteration broke down".into()));
        }
        v = x / Complex64::new(nrm, 0.0);
    }
    // fix the phase: largest entry real positive
    let k = (0..n).max_by(|&i, &j| v[i].norm().total_cmp(&v[j].norm())).unwrap_or(0);
    let phase = v[k] / v[k].norm();
    v /= phase;
    if l.im == 0.0 {
        v.iter_mut().for_each(|z| z.im = 0.0);
        let nrm = v.norm();
        v /= Complex64::new(nrm, 0.0);
    }
    Ok(v)
}

/// Solves `W b = y`; switches to Tikhonov-regularized least squares when
/// `W` is not square or is ill-conditioned.
fn amplitudes(w: &DMatrix<Complex64>, y: &DVector<Complex64>) -> Result<(Vec<Complex64>, bool)> {
    if w.ncols() == 0 {
        return Ok((Vec::new(), false));
    }
    let svd = w.clone().svd(true, true);
    let s = &svd.singular_values;
    let smax = s.max();
    let smin = s.min();
    let regularized = w.nrows() != w.ncols() || smin <= 0.0 || smax / smin > COND_LIMIT;
    let mu = if regularized { (smax / COND_LIMIT).powi(2) } else { 0.0 };
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Numerical("SVD did not return V".into()))?;
    let uy = u.adjoint() * y;
    let scaled = DVector::from_fn(s.len(), |i, _| {
        let si = s[i];
        if si > 0.0 {
            uy[i] * (si / (si * si + mu))
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let b = vt.adjoint() * scaled;
    Ok((b.as_slice().to_vec(), regularized))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::time::Instant;

    fn orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        m.qr().q()
    }

    fn power_snapshots(a: &DMatrix<f64>, x0: &DVector<f64>, k: usize, dt: f64) -> SnapshotMatrix {
        let mut cols = vec![x0.clone()];
        for i in 1..k {
            cols.push(a * &cols[i - 1]);
        }
        let m = DMatrix::from_columns(&cols);
        SnapshotMatrix::new(m, 0.0, dt).unwrap()
    }

    fn orthonormality_error(m: &DMatrix<f64>) -> f64 {
        (m.transpose() * m - DMatrix::identity(m.ncols(), m.ncols())).amax()
    }

    #[test]
    fn snapshot_matrix_validation() {
        assert!(SnapshotMatrix::from_columns(&[&[1.0, 2.0]], 0.0, 0.1).is_err());
        assert!(SnapshotMatrix::from_columns(&[&[1.0], &[1.0, 2.0]], 0.0, 0.1).is_err());
        assert!(SnapshotMatrix::from_columns(&[&[1.0], &[2.0]], 0.0, 0.0).is_err());
        assert!(SnapshotMatrix::from_columns(&[&[1.0], &[f64::NAN]], 0.0, 0.1).is_err());
        let s = SnapshotMatrix::from_columns(&[&[1.0, 2.0], &[3.0, 4.0]], 0.5, 0.25).unwrap();
        assert_eq!(s.column(1), &[3.0, 4.0]);
        assert_eq!(s.time(1), 0.75);
    }

    #[test]
    fn svd_small_examples() {
        let u = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let v = DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0]);
        let a = &u * v.transpose() * 3.0;
        let s = truncated_svd(&a, 1).unwrap();
        assert!((s.sigma[0] - 3.0).abs() < 1e-14);

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let s = truncated_svd(&d, 2).unwrap();
        assert!((s.sigma[0] - 3.0).abs() < 1e-14 && (s.sigma[1] - 2.0).abs() < 1e-14);
        assert!(truncated_svd(&d, 4).is_err());
        assert!(truncated_svd(&d, 0).is_err());
    }

    #[test]
    fn svd_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (rows, cols) in [(50, 20), (20, 50), (300, 12)] {
            let a = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
            let s = truncated_svd(&a, 5).unwrap();
            let oracle = a.clone().svd(true, false);
            let mut sv: Vec<f64> = oracle.singular_values.iter().copied().collect();
            sv.sort_by(|x, y| y.total_cmp(x));
            for i in 0..5 {
                assert!((s.sigma[i] - sv[i]).abs() < 1e-10);
            }
            assert!(orthonormality_error(&s.u) < 1e-10);
            assert!(orthonormality_error(&s.v) < 1e-10);
            // subspace check: A v_i = sigma_i u_i
            for i in 0..5 {
                let r = &a * s.v.column(i) - s.u.column(i) * s.sigma[i];
                assert!(r.norm() < 1e-10);
            }
            // largest principal angle against the oracle's leading subspace
            let ou = oracle.u.unwrap();
            let mut idx: Vec<usize> = (0..oracle.singular_values.len()).collect();
            idx.sort_by(|&i, &j| oracle.singular_values[j].total_cmp(&oracle.singular_values[i]));
            let ou5 = DMatrix::from_fn(rows, 5, |r, c| ou[(r, idx[c])]);
            let cosines = (s.u.transpose() * ou5).singular_values();
            assert!(cosines.min() > 1.0 - 1e-10);
        }
    }

    #[test]
    fn constant_snapshots() {
        let c = [1.0, -2.0, 0.5];
        let s = SnapshotMatrix::from_columns(&[&c, &c, &c, &c], 0.0, 0.1).unwrap();
        let m = DmdModel::fit(&s, 1).unwrap();
        assert!((m.lambda[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(m.omega[0].norm() < 1e-10);
        for t in [0.0, 0.37, 5.0] {
            for (p, e) in m.predict(t).iter().zip(&c) {
                assert!((p - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decaying_pair_recovered() {
        let q = orthogonal(6, 3);
        let mut d = DMatrix::zeros(6, 6);
        d[(0, 0)] = 0.9;
        d[(1, 1)] = 0.5;
        let a = &q * d * q.transpose();
        let x0 = q.column(0) * 1.0 + q.column(1) * 2.0;
        let s = power_snapshots(&a, &x0, 20, 0.1);
        let m = DmdModel::fit(&s, 2).unwrap();
        assert!((m.lambda[0] - Complex64::new(0.9, 0.0)).norm() < 1e-8);
        assert!((m.lambda[1] - Complex64::new(0.5, 0.0)).norm() < 1e-8);
        let mut x = x0.clone();
        for _ in 0..5 {
            x = &a * x;
        }
        let p = m.predict(5.0 * 0.1);
        for (pi, xi) in p.iter().zip(x.iter()) {
            assert!((pi - xi).abs() < 1e-7);
        }
        assert!(m.amplitude_residual(s.column(0)) < 1e-8);
    }

    #[test]
    fn rotation_pair_recovered() {
        let th: f64 = 0.3;
        let cols: Vec<Vec<f64>> = (0..30).map(|k| vec![(th * k as f64).cos(), (th * k as f64).sin()]).collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let s = SnapshotMatrix::from_columns(&refs, 0.0, 1.0).unwrap();
        let m = DmdModel::fit(&s, 2).unwrap();
        let expect = [Complex64::from_polar(1.0, -th), Complex64::from_polar(1.0, th)];
        for (l, e) in m.lambda.iter().zip(&expect) {
            assert!((l - e).norm() < 1e-8, "{l} vs {e}");
            assert!((l.norm() - 1.0).abs() < 1e-8);
        }
        assert_eq!(m.lambda[0], m.lambda[1].conj());
        let z = m.predict_complex(12.5);
        assert!(z.iter().all(|v| v.im.abs() < 1e-9));
        assert!((z[0].re - (th * 12.5).cos()).abs() < 1e-7);
    }

    #[test]
    fn nyquist_mode_is_retained() {
        let cols: Vec<Vec<f64>> = (0..10).map(|k| vec![(-0.8f64).powi(k), 1.0]).collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let s = SnapshotMatrix::from_columns(&refs, 0.0, 0.5).unwrap();
        let m = DmdModel::fit(&s, 2).unwrap();
        let neg = m.lambda.iter().position(|l| l.re < 0.0).unwrap();
        assert!((m.omega[neg].im - std::f64::consts::PI / 0.5).abs() < 1e-9);
        let p = m.predict(3.0 * 0.5);
        assert!((p[0] - (-0.8f64).powi(3)).abs() < 1e-8);
    }

    #[test]
    fn residual_matches_least_squares_oracle() {
        let q = orthogonal(8, 11);
        let mut d = DMatrix::zeros(8, 8);
        for (i, l) in [0.95, 0.7, 0.4].iter().enumerate() {
            d[(i, i)] = *l;
        }
        let a = &q * d * q.transpose();
        let x0 = q.column(0) + q.column(1) * 0.5 + q.column(2) * 0.25;
        let s = power_snapshots(&a, &x0, 12, 1.0);
        let m = DmdModel::fit(&s, 3).unwrap();
        let k = s.cols();
        let s1 = s.data().columns(0, k - 1).into_owned();
        let s2 = s.data().columns(1, k - 1).into_owned();
        // reduced operator lifted back: A = U W L W^-1 U^T
        let wl = &m.w * DMatrix::from_diagonal(&DVector::from_vec(m.lambda.clone()));
        let winv = m.w.clone().try_inverse().unwrap();
        let ar = wl * winv;
        let ur = m.u.map(|v| Complex64::new(v, 0.0));
        let lifted = &ur * ar * ur.adjoint();
        let lifted = lifted.map(|z| z.re);
        let ours = (&s2 - &lifted * &s1).norm();
        let pinv = s1.clone().pseudo_inverse(1e-12).unwrap();
        let oracle = (&s2 - &s2 * pinv * &s1).norm();
        assert!((ours - oracle).abs() < 1e-8, "{ours} vs {oracle}");
    }

    #[test]
    fn zero_eigenvalue_is_dropped() {
        // nilpotent tail: second component vanishes after the first step
        let cols: Vec<Vec<f64>> = (0..6).map(|k| vec![0.9f64.powi(k), if k == 0 { 1.0 } else { 0.0 }]).collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let s = SnapshotMatrix::from_columns(&refs, 0.0, 1.0).unwrap();
        let m = DmdModel::fit(&s, 2).unwrap();
        assert_eq!(m.flags.dropped_lambda, 1);
        assert!(m.predict(2.0).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn prediction_cost_independent_of_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = DMatrix::from_fn(2000, 40, |_, _| rng.random_range(-1.0..1.0));
        let s = SnapshotMatrix::new(data, 0.0, 0.01).unwrap();
        let m = DmdModel::fit(&s, 10).unwrap();
        let time = |t: f64| {
            let start = Instant::now();
            for _ in 0..50 {
                std::hint::black_box(m.predict(t));
            }
            start.elapsed().as_secs_f64()
        };
        time(0.1);
        let (a, b) = (time(0.1), time(100.0));
        assert!(b < 5.0 * a + 1e-3 && a < 5.0 * b + 1e-3, "{a} vs {b}");
    }

    #[test]
    fn model_round_trips_through_file() {
        let q = orthogonal(5, 9);
        let mut d = DMatrix::zeros(5, 5);
        d[(0, 0)] = 0.8;
        d[(1, 1)] = 0.6;
        d[(2, 2)] = -0.3;
        let a = &q * d * q.transpose();
        let x0 = q.column(0) + q.column(1) + q.column(2);
        let s = power_snapshots(&a, &x0, 10, 0.2);
        let m = DmdModel::fit(&s, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        m.write(&p).unwrap();
        let back = DmdModel::read(&p).unwrap();
        assert_eq!(m, back);
    }
}
