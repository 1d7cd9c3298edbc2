//! Sparse-free linear algebra used by the solvers: a symmetric banded Cholesky
//! factorization, operator probing into band storage, preconditioned conjugate
//! gradients, and a small-block LOBPCG for the top generalized eigenpair.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Symmetric band matrix holding the lower band: `data[i * (kd + 1) + d] = A[i][i - d]`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kd: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kd: usize) -> Self {
        BandMatrix {
            n,
            kd,
            data: vec![0.0; n * (kd + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.kd
    }

    /// Entry `A[i][j]` of the symmetric matrix.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let d = i - j;
        if d > self.kd {
            0.0
        } else {
            self.data[i * (self.kd + 1) + d]
        }
    }

    /// Sets the symmetric pair `A[i][j] = A[j][i] = value`. Panics outside the band.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let d = i - j;
        assert!(d <= self.kd, "entry ({i},{j}) outside band {}", self.kd);
        self.data[i * (self.kd + 1) + d] = value;
    }

    /// `sum_k coeffs[k] * parts[k]`; all parts must share dimension and bandwidth.
    pub fn combine(parts: &[(&BandMatrix, f64)]) -> BandMatrix {
        let (first, _) = parts[0];
        let mut out = BandMatrix::zeros(first.n, first.kd);
        for (m, c) in parts {
            assert!(m.n == first.n && m.kd == first.kd, "band shapes differ");
            for (o, x) in out.data.iter_mut().zip(&m.data) {
                *o += c * x;
            }
        }
        out
    }

    /// Max absolute row sum; bounds the spectral norm of the symmetric matrix.
    pub fn norm_inf(&self) -> f64 {
        let w = self.kd + 1;
        let mut rows = vec![0.0; self.n];
        for i in 0..self.n {
            rows[i] += self.data[i * w].abs();
            for d in 1..w.min(i + 1) {
                let a = self.data[i * w + d].abs();
                rows[i] += a;
                rows[i - d] += a;
            }
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let v = self.get(i, j);
        self.set(i, j, v + value);
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let w = self.kd + 1;
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let row = &self.data[i * w..(i + 1) * w];
            y[i] += row[0] * x[i];
            for d in 1..w.min(i + 1) {
                let a = row[d];
                y[i] += a * x[i - d];
                y[i - d] += a * x[i];
            }
        }
    }

    /// In-place Cholesky `A = L L^T`. Fails on a non-positive pivot.
    pub fn cholesky(mut self) -> Result<BandCholesky> {
        let w = self.kd + 1;
        let n = self.n;
        for i in 0..n {
            let lo = i.saturating_sub(self.kd);
            for j in lo..=i {
                // L[i][j] = (A[i][j] - sum_{k<j} L[i][k] L[j][k]) / L[j][j]
                let mut s = self.data[i * w + (i - j)];
                let klo = lo.max(j.saturating_sub(self.kd));
                for k in klo..j {
                    s -= self.data[i * w + (i - k)] * self.data[j * w + (j - k)];
                }
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::numerical(
                            format!("banded Cholesky hit a non-positive pivot at row {i}"),
                            s,
                        ));
                    }
                    self.data[i * w] = s.sqrt();
                } else {
                    self.data[i * w + (i - j)] = s / self.data[j * w];
                }
            }
        }
        Ok(BandCholesky { l: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    l: BandMatrix,
}

impl BandCholesky {
    pub fn dim(&self) -> usize {
        self.l.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let w = self.l.kd + 1;
        let n = self.l.n;
        let data = &self.l.data;
        for i in 0..n {
            let mut s = b[i];
            for d in 1..w.min(i + 1) {
                s -= data[i * w + d] * b[i - d];
            }
            b[i] = s / data[i * w];
        }
        for i in (0..n).rev() {
            let bi = b[i] / data[i * w];
            b[i] = bi;
            for d in 1..w.min(i + 1) {
                b[i - d] -= data[i * w + d] * bi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Recovers the band of a symmetric operator on an `ni x nj` lattice (index
/// `i * nj + j`) whose stencil reaches at most `radius` in each direction.
///
/// Uses `(2 radius + 1)^2` colored probes; within one stencil window every color
/// occurs once, so each product entry belongs to exactly one matrix entry.
pub fn probe_lattice_operator(
    ni: usize,
    nj: usize,
    radius: usize,
    mut apply: impl FnMut(&[f64], &mut [f64]),
) -> BandMatrix {
    let n = ni * nj;
    let period = 2 * radius + 1;
    let kd = radius * nj + radius;
    let mut band = BandMatrix::zeros(n, kd.min(n.saturating_sub(1)));
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    for ci in 0..period {
        for cj in 0..period {
            x.iter_mut().for_each(|v| *v = 0.0);
            for i in (ci..ni).step_by(period) {
                for j in (cj..nj).step_by(period) {
                    x[i * nj + j] = 1.0;
                }
            }
            apply(&x, &mut y);
            for i in 0..ni {
                for j in 0..nj {
                    let row = i * nj + j;
                    // column in the window with the probe's color, at or left of the diagonal
                    for di in 0..=radius.min(i) {
                        let qi = i - di;
                        if qi % period != ci {
                            continue;
                        }
                        let jlo = j.saturating_sub(radius);
                        let jhi = (j + radius).min(nj - 1);
                        for qj in jlo..=jhi {
                            if qj % period != cj {
                                continue;
                            }
                            let col = qi * nj + qj;
                            if col <= row {
                                band.set(row, col, y[row]);
                            }
                        }
                    }
                }
            }
        }
    }
    band
}

#[derive(Debug, Clone, Copy)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients on an SPD operator.
///
/// With `project_mean` the operator is taken to be singular with the constant
/// vector as its null space; the right-hand side, residual and iterate are kept
/// mean-free. `x` holds the initial guess on entry.
pub fn pcg(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    project_mean: bool,
) -> Result<CgOutcome> {
    let n = b.len();
    let remove_mean = |v: &mut [f64]| {
        if project_mean && !v.is_empty() {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|e| *e -= m);
        }
    };
    let mut rhs = b.to_vec();
    remove_mean(&mut rhs);
    remove_mean(x);
    let bnorm = norm(&rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    remove_mean(&mut r);
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    remove_mean(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = norm(&r) / bnorm;
    for it in 0..max_iter {
        if rel <= tol {
            return Ok(CgOutcome {
                iterations: it,
                relative_residual: rel,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::numerical("conjugate gradients lost positive curvature", rel));
        }
        let alpha = rz / pap;
        axpy(x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        remove_mean(&mut r);
        rel = norm(&r) / bnorm;
        precond(&r, &mut z);
        remove_mean(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    if rel <= tol {
        return Ok(CgOutcome {
            iterations: max_iter,
            relative_residual: rel,
        });
    }
    Err(Error::numerical(
        format!("conjugate gradients did not reach {tol:e} in {max_iter} iterations"),
        rel,
    ))
}

/// Converged top eigenpairs of a symmetric definite pencil `(A, M)`.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    /// Ritz values, descending.
    pub values: Vec<f64>,
    /// M-orthonormal Ritz vectors, same order as `values`.
    pub vectors: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Scaled residual of the leading pair.
    pub residual: f64,
}

/// Operator bundle consumed by [`lobpcg_max`].
pub trait Pencil {
    fn dim(&self) -> usize;
    fn apply_a(&self, x: &[f64], y: &mut [f64]);
    fn apply_m(&self, x: &[f64], y: &mut [f64]);
    fn precondition(&self, r: &[f64], z: &mut [f64]);
    /// Normalizer for the residual of the pair `(alpha, x)`; `ax` and `mx` are the products.
    fn residual_scale(&self, alpha: f64, x: &[f64], ax: &[f64], mx: &[f64]) -> f64 {
        let _ = x;
        norm(ax) + alpha.abs() * norm(mx)
    }
}

fn columns_to_matrix(cols: &[Vec<f64>]) -> DMatrix<f64> {
    let n = cols.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// Locally optimal block preconditioned conjugate gradients for the largest
/// `initial.len()` eigenvalues of `A x = alpha M x`.
///
/// Only the leading pair is required to reach `tol`.
pub fn lobpcg_max(pencil: &impl Pencil, initial: Vec<Vec<f64>>, tol: f64, max_iter: usize) -> Result<EigenPairs> {
    let n = pencil.dim();
    let k = initial.len();
    assert!(k >= 1 && k < n, "block size {k} invalid for dimension {n}");
    let apply_block = |cols: &[Vec<f64>], a: bool| -> Vec<Vec<f64>> {
        cols.iter()
            .map(|c| {
                let mut y = vec![0.0; n];
                if a {
                    pencil.apply_a(c, &mut y)
                } else {
                    pencil.apply_m(c, &mut y)
                }
                y
            })
            .collect()
    };

    let mut x = initial;
    let mut p: Vec<Vec<f64>> = Vec::new();
    let mut last_residual = f64::INFINITY;
    let mut it = 0;
    loop {
        // Rayleigh-Ritz on span [X, W, P].
        let (basis, ab, mb) = {
            let mut s = x.clone();
            if it > 0 {
                let ax = apply_block(&x, true);
                let mx = apply_block(&x, false);
                let alphas: Vec<f64> = (0..k).map(|c| dot(&x[c], &ax[c]) / dot(&x[c], &mx[c])).collect();
                let mut resid = Vec::with_capacity(k);
                for c in 0..k {
                    let r: Vec<f64> = ax[c].iter().zip(&mx[c]).map(|(a, m)| a - alphas[c] * m).collect();
                    resid.push(r);
                }
                let scale = pencil.residual_scale(alphas[0], &x[0], &ax[0], &mx[0]);
                last_residual = if scale > 0.0 { norm(&resid[0]) / scale } else { 0.0 };
                if last_residual <= tol {
                    let mut pairs: Vec<(f64, Vec<f64>)> = alphas.into_iter().zip(x).collect();
                    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
                    return Ok(EigenPairs {
                        values: pairs.iter().map(|p| p.0).collect(),
                        vectors: pairs.into_iter().map(|p| p.1).collect(),
                        iterations: it,
                        residual: last_residual,
                    });
                }
                if it >= max_iter {
                    return Err(Error::numerical(
                        format!("LOBPCG did not converge in {max_iter} iterations"),
                        last_residual,
                    ));
                }
                for r in &resid {
                    let mut w = vec![0.0; n];
                    pencil.precondition(r, &mut w);
                    s.push(w);
                }
                s.extend(p.iter().cloned());
            }
            let ab = apply_block(&s, true);
            let mb = apply_block(&s, false);
            (s, ab, mb)
        };
        let m = basis.len();
        let sm = columns_to_matrix(&basis);
        let gm = sm.transpose() * columns_to_matrix(&mb);
        let ga = sm.transpose() * columns_to_matrix(&ab);
        let gm = (&gm + gm.transpose()) * 0.5;
        let ga = (&ga + ga.transpose()) * 0.5;

        // SVQB: M-orthonormalize the basis, dropping near-dependent directions.
        let d: Vec<f64> = (0..m).map(|i| 1.0 / gm[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();
        let dmat = DMatrix::from_diagonal(&DVector::from_vec(d));
        let gms = &dmat * &gm * &dmat;
        let eg = SymmetricEigen::new(gms);
        let lmax = eg.eigenvalues.iter().copied().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..m).filter(|&i| eg.eigenvalues[i] > 1e-13 * lmax).collect();
        if keep.len() < k {
            return Err(Error::numerical("LOBPCG basis collapsed", last_residual));
        }
        let z = DMatrix::from_fn(m, keep.len(), |i, j| {
            let c = keep[j];
            eg.eigenvectors[(i, c)] / eg.eigenvalues[c].sqrt()
        });
        let z = &dmat * z;
        let reduced = z.transpose() * &ga * &z;
        let reduced = (&reduced + reduced.transpose()) * 0.5;
        let er = SymmetricEigen::new(reduced);
        let mut order: Vec<usize> = (0..er.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| er.eigenvalues[b].total_cmp(&er.eigenvalues[a]));
        let coeff = DMatrix::from_fn(keep.len(), k, |i, j| er.eigenvectors[(i, order[j])]);
        let c = z * coeff;

        let combine = |rows: std::ops::Range<usize>, col: usize| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for r in rows {
                axpy(&mut out, c[(r, col)], &basis[r]);
            }
            out
        };
        let new_x: Vec<Vec<f64>> = (0..k).map(|col| combine(0..m, col)).collect();
        if m > k {
            p = (0..k).map(|col| combine(k..m, col)).collect();
        }
        x = new_x;
        it += 1;
    }
}

/// Dense symmetric-definite generalized eigenvalues of `(a, m)`, ascending.
pub fn dense_generalized_eigenvalues(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let l = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("mass matrix is not positive definite", f64::NAN))?
        .l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::numerical("singular Cholesky factor", f64::NAN))?;
    let c = &linv * a * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let mut vals: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplace_band(n: usize) -> BandMatrix {
        let mut a = BandMatrix::zeros(n, 1);
        for i in 0..n {
            a.set(i, i, 2.0);
            if i > 0 {
                a.set(i, i - 1, -1.0);
            }
        }
        a
    }

    #[test]
    fn band_cholesky_solves_tridiagonal() {
        let n = 50;
        let a = laplace_band(n);
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = vec![0.0; n];
        a.matvec(&x, &mut b);
        let got = a.cholesky().unwrap().solve(&b);
        for (g, w) in got.iter().zip(&x) {
            assert!((g - w).abs() < 1e-10);
        }
    }

    #[test]
    fn band_cholesky_rejects_indefinite() {
        let mut a = laplace_band(5);
        a.set(2, 2, -1.0);
        assert!(a.cholesky().is_err());
    }

    #[test]
    fn probing_recovers_2d_stencil() {
        let (ni, nj) = (7, 6);
        let n = ni * nj;
        // radius-2 symmetric operator with position-dependent coefficients
        let coef = |p: usize, q: usize| -> f64 {
            let (a, b) = (p.min(q), p.max(q));
            1.0 + 0.01 * (a as f64) + 0.003 * (b as f64)
        };
        let within = |p: usize, q: usize| {
            let (pi, pj) = (p / nj, p % nj);
            let (qi, qj) = (q / nj, q % nj);
            pi.abs_diff(qi) <= 2 && pj.abs_diff(qj) <= 2
        };
        let apply = |x: &[f64], y: &mut [f64]| {
            for p in 0..n {
                y[p] = (0..n).filter(|&q| within(p, q)).map(|q| coef(p, q) * x[q]).sum();
            }
        };
        let band = probe_lattice_operator(ni, nj, 2, apply);
        for p in 0..n {
            for q in 0..n {
                let want = if within(p, q) { coef(p, q) } else { 0.0 };
                assert_eq!(band.get(p, q), want, "entry {p},{q}");
            }
        }
    }

    #[test]
    fn pcg_with_mean_projection_solves_neumann_chain() {
        let n = 40;
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let l = if i > 0 { x[i - 1] } else { x[i] };
                let r = if i + 1 < n { x[i + 1] } else { x[i] };
                y[i] = 2.0 * x[i] - l - r;
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = b.iter().sum::<f64>() / n as f64;
        b.iter_mut().for_each(|v| *v -= m);
        let mut x = vec![0.0; n];
        let out = pcg(apply, |r, z| z.copy_from_slice(r), &b, &mut x, 1e-12, 500, true).unwrap();
        assert!(out.relative_residual <= 1e-12);
        let mut ax = vec![0.0; n];
        apply(&x, &mut ax);
        for (a, b) in ax.iter().zip(&b) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(x.iter().sum::<f64>().abs() < 1e-9);
    }

    struct DiagPencil {
        a: Vec<f64>,
        m: Vec<f64>,
    }

    impl Pencil for DiagPencil {
        fn dim(&self) -> usize {
            self.a.len()
        }
        fn apply_a(&self, x: &[f64], y: &mut [f64]) {
            for i in 0..x.len() {
                y[i] = self.a[i] * x[i];
            }
        }
        fn apply_m(&self, x: &[f64], y: &mut [f64]) {
            for i in 0..x.len() {
                y[i] = self.m[i] * x[i];
            }
        }
        fn precondition(&self, r: &[f64], z: &mut [f64]) {
            for i in 0..r.len() {
                z[i] = r[i] / (self.m[i] * 10.0 - self.a[i]);
            }
        }
    }

    #[test]
    fn lobpcg_finds_top_of_diagonal_pencil() {
        let n = 60;
        let a: Vec<f64> = (0..n).map(|i| -(i as f64) * 0.1 + 3.0).collect();
        let m: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * i as f64).collect();
        let mut want: Vec<f64> = a.iter().zip(&m).map(|(a, m)| a / m).collect();
        want.sort_by(|x, y| y.total_cmp(x));
        let pencil = DiagPencil { a, m };
        let init = vec![vec![1.0; n], (0..n).map(|i| (i as f64).cos()).collect()];
        let out = lobpcg_max(&pencil, init, 1e-12, 500).unwrap();
        assert!((out.values[0] - want[0]).abs() < 1e-12);
        assert!((out.values[1] - want[1]).abs() < 1e-8);
    }
}
