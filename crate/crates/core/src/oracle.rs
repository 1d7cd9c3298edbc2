//! Dense reference assembly for small grids.
//!
//! Every operator is built entry by entry from its quadrature definition (the
//! Dirichlet form as a sum over difference links, the buoyancy form through an
//! explicit averaging matrix), independently of the matrix-free code in
//! [`crate::operators`]. Used to cross-check `Phi`, the growth rate and single
//! linearized steps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::evolution::PerturbationState;
use crate::grid::{Grid, Placement, ScalarField, VectorField};
use crate::linalg::dense_generalized_eigenvalues;
use crate::steady::SteadyState;

/// Largest interior node count an oracle will assemble.
pub const ORACLE_NODE_CAP: usize = 4096;

#[derive(Debug, Clone)]
pub struct DenseOracle {
    pub grid: Grid,
    pub mu: f64,
    /// Faces x interior nodes.
    pub c: DMatrix<f64>,
    /// Face-space Dirichlet form.
    pub k: DMatrix<f64>,
    /// Cells x faces, `V . grad f` at cell centres.
    pub q: DMatrix<f64>,
    /// Face-space buoyancy form `Q^T diag(w h) Q`.
    pub b: DMatrix<f64>,
    /// Face mass `diag(w rhobar0)`.
    pub m: DMatrix<f64>,
    /// `h` per cell.
    pub h: DVector<f64>,
}

fn u_index(g: &Grid, i: usize, j: usize) -> usize {
    i * g.ny + j
}

fn v_index(g: &Grid, i: usize, j: usize) -> usize {
    (g.nx + 1) * g.ny + i * (g.ny + 1) + j
}

fn face_count(g: &Grid) -> usize {
    (g.nx + 1) * g.ny + g.nx * (g.ny + 1)
}

fn node_index(g: &Grid, i: usize, j: usize) -> Option<usize> {
    if i == 0 || j == 0 || i == g.nx || j == g.ny {
        None
    } else {
        Some((i - 1) * (g.ny - 1) + (j - 1))
    }
}

pub fn faces_to_vec(vf: &VectorField) -> DVector<f64> {
    let g = vf.grid();
    let mut out = DVector::zeros(face_count(&g));
    for ((i, j), &x) in vf.u.values.indexed_iter() {
        out[u_index(&g, i, j)] = x;
    }
    for ((i, j), &x) in vf.v.values.indexed_iter() {
        out[v_index(&g, i, j)] = x;
    }
    out
}

pub fn vec_to_faces(g: Grid, x: &DVector<f64>) -> VectorField {
    let mut vf = VectorField::zeros(g);
    for i in 0..=g.nx {
        for j in 0..g.ny {
            vf.u.values[[i, j]] = x[u_index(&g, i, j)];
        }
    }
    for i in 0..g.nx {
        for j in 0..=g.ny {
            vf.v.values[[i, j]] = x[v_index(&g, i, j)];
        }
    }
    vf
}

fn cells_to_vec(f: &ScalarField) -> DVector<f64> {
    DVector::from_iterator(f.values.len(), f.values.iter().copied())
}

fn vec_to_cells(g: Grid, x: &DVector<f64>) -> Result<ScalarField> {
    let arr = ndarray::Array2::from_shape_fn((g.nx, g.ny), |(i, j)| x[i * g.ny + j]);
    ScalarField::from_array(g, Placement::Cell, arr)
}

/// A single difference link `weight * (sum coeff_k x_k)^2` of the Dirichlet form.
struct Link {
    weight: f64,
    terms: Vec<(usize, f64)>,
}

fn dirichlet_links(g: &Grid) -> Vec<Link> {
    let w = g.cell_area();
    let (hx, hy) = (g.hx(), g.hy());
    let (nx, ny) = (g.nx, g.ny);
    let mut links = Vec::new();
    // u: normal faces i = 0, nx are fixed at zero
    let u_free = |i: usize| i > 0 && i < nx;
    for j in 0..ny {
        for i in 0..nx {
            let mut terms = Vec::new();
            if u_free(i + 1) {
                terms.push((u_index(g, i + 1, j), 1.0 / hx));
            }
            if u_free(i) {
                terms.push((u_index(g, i, j), -1.0 / hx));
            }
            if !terms.is_empty() {
                links.push(Link { weight: w, terms });
            }
        }
    }
    for i in 1..nx {
        for j in 0..ny - 1 {
            links.push(Link {
                weight: w,
                terms: vec![(u_index(g, i, j + 1), 1.0 / hy), (u_index(g, i, j), -1.0 / hy)],
            });
        }
        // wall links: the mirrored ghost gives a difference of 2u / hy over half a cell
        links.push(Link {
            weight: 0.5 * w,
            terms: vec![(u_index(g, i, 0), 2.0 / hy)],
        });
        links.push(Link {
            weight: 0.5 * w,
            terms: vec![(u_index(g, i, ny - 1), 2.0 / hy)],
        });
    }
    let v_free = |j: usize| j > 0 && j < ny;
    for i in 0..nx {
        for j in 0..ny {
            let mut terms = Vec::new();
            if v_free(j + 1) {
                terms.push((v_index(g, i, j + 1), 1.0 / hy));
            }
            if v_free(j) {
                terms.push((v_index(g, i, j), -1.0 / hy));
            }
            if !terms.is_empty() {
                links.push(Link { weight: w, terms });
            }
        }
    }
    for j in 1..ny {
        for i in 0..nx - 1 {
            links.push(Link {
                weight: w,
                terms: vec![(v_index(g, i + 1, j), 1.0 / hx), (v_index(g, i, j), -1.0 / hx)],
            });
        }
        links.push(Link {
            weight: 0.5 * w,
            terms: vec![(v_index(g, 0, j), 2.0 / hx)],
        });
        links.push(Link {
            weight: 0.5 * w,
            terms: vec![(v_index(g, nx - 1, j), 2.0 / hx)],
        });
    }
    links
}

impl DenseOracle {
    pub fn new(state: &SteadyState) -> Result<Self> {
        let g = state.grid;
        if g.interior_nodes() > ORACLE_NODE_CAP {
            return Err(Error::Domain(format!(
                "dense oracle refuses {} interior nodes (cap {ORACLE_NODE_CAP})",
                g.interior_nodes()
            )));
        }
        let nf = face_count(&g);
        let nn = g.interior_nodes();
        let nc = g.nx * g.ny;
        let w = g.cell_area();
        let (hx, hy) = (g.hx(), g.hy());

        // u = d psi / dy, v = -d psi / dx on faces from the node values at their ends
        let mut c = DMatrix::zeros(nf, nn);
        for i in 0..=g.nx {
            for j in 0..g.ny {
                let row = u_index(&g, i, j);
                if let Some(k) = node_index(&g, i, j + 1) {
                    c[(row, k)] += 1.0 / hy;
                }
                if let Some(k) = node_index(&g, i, j) {
                    c[(row, k)] -= 1.0 / hy;
                }
            }
        }
        for i in 0..g.nx {
            for j in 0..=g.ny {
                let row = v_index(&g, i, j);
                if let Some(k) = node_index(&g, i + 1, j) {
                    c[(row, k)] -= 1.0 / hx;
                }
                if let Some(k) = node_index(&g, i, j) {
                    c[(row, k)] += 1.0 / hx;
                }
            }
        }

        let mut k = DMatrix::zeros(nf, nf);
        for link in dirichlet_links(&g) {
            for &(a, ca) in &link.terms {
                for &(b, cb) in &link.terms {
                    k[(a, b)] += link.weight * ca * cb;
                }
            }
        }

        let gu = &state.potential.grad_f.u.values;
        let gv = &state.potential.grad_f.v.values;
        let mut q = DMatrix::zeros(nc, nf);
        for i in 0..g.nx {
            for j in 0..g.ny {
                let row = i * g.ny + j;
                let fx = 0.5 * (gu[[i, j]] + gu[[i + 1, j]]);
                let fy = 0.5 * (gv[[i, j]] + gv[[i, j + 1]]);
                q[(row, u_index(&g, i, j))] += 0.5 * fx;
                q[(row, u_index(&g, i + 1, j))] += 0.5 * fx;
                q[(row, v_index(&g, i, j))] += 0.5 * fy;
                q[(row, v_index(&g, i, j + 1))] += 0.5 * fy;
            }
        }
        let h = cells_to_vec(&state.h);
        let wh = DMatrix::from_diagonal(&h.map(|x| w * x));
        let b = q.transpose() * &wh * &q;

        let r = &state.rho0.values;
        let mut m = DMatrix::zeros(nf, nf);
        for i in 0..=g.nx {
            for j in 0..g.ny {
                let a = r[[i.saturating_sub(1), j]];
                let bb = r[[i.min(g.nx - 1), j]];
                m[(u_index(&g, i, j), u_index(&g, i, j))] = w * 0.5 * (a + bb);
            }
        }
        for i in 0..g.nx {
            for j in 0..=g.ny {
                let a = r[[i, j.saturating_sub(1)]];
                let bb = r[[i, j.min(g.ny - 1)]];
                m[(v_index(&g, i, j), v_index(&g, i, j))] = w * 0.5 * (a + bb);
            }
        }

        Ok(DenseOracle {
            grid: g,
            mu: state.mu,
            c,
            k,
            q,
            b,
            m,
            h,
        })
    }

    /// `A(s) = C^T (-s mu K + B) C`.
    pub fn a(&self, s: f64) -> DMatrix<f64> {
        let face = &self.b - &self.k * (s * self.mu);
        self.c.transpose() * face * &self.c
    }

    /// `C^T M C`.
    pub fn m_stream(&self) -> DMatrix<f64> {
        self.c.transpose() * &self.m * &self.c
    }

    /// Relative asymmetry of `A(s)`.
    pub fn asymmetry(&self, s: f64) -> f64 {
        let a = self.a(s);
        (&a - a.transpose()).amax() / a.amax().max(f64::MIN_POSITIVE)
    }

    pub fn phi(&self, s: f64) -> Result<f64> {
        let vals = dense_generalized_eigenvalues(&self.a(s), &self.m_stream())?;
        vals.last()
            .copied()
            .ok_or_else(|| Error::Domain("empty eigenproblem".into()))
    }

    /// `H(s) = s^2 - Phi(s)`.
    pub fn h_value(&self, s: f64) -> Result<f64> {
        Ok(s * s - self.phi(s)?)
    }

    /// Root of `H` by a coarse scan of step `coarse`, refined by a scan of step `fine`
    /// inside the first sign-change cell. Returns the midpoint of the fine cell.
    pub fn scan_growth_rate(&self, s_max: f64, coarse: f64, fine: f64) -> Result<f64> {
        let mut lo = fine;
        let mut h_lo = self.h_value(lo)?;
        if h_lo >= 0.0 {
            return Err(Error::NoInstability { upper_bound: self.phi(lo)? });
        }
        let mut hi = lo;
        loop {
            hi += coarse;
            if hi > s_max + coarse {
                return Err(Error::Bracketing(format!("no sign change of H below {s_max}")));
            }
            let h_hi = self.h_value(hi)?;
            if h_hi >= 0.0 {
                break;
            }
            lo = hi;
            h_lo = h_hi;
        }
        let _ = h_lo;
        let mut s = lo;
        while s + fine <= hi + 0.5 * fine {
            if self.h_value(s + fine)? >= 0.0 {
                return Ok(s + 0.5 * fine);
            }
            s += fine;
        }
        Ok(0.5 * (s + hi))
    }

    /// One backward-Euler-coupled linearized step solved densely.
    pub fn linstep(&self, pert: &PerturbationState, dt: f64) -> Result<PerturbationState> {
        let g = self.grid;
        if pert.grid() != g {
            return Err(Error::Structural("perturbation lives on a different grid".into()));
        }
        let w = g.cell_area();
        let v0 = faces_to_vec(&pert.v);
        let r0 = cells_to_vec(&pert.rho);
        let face_op = &self.m / dt + &self.k * self.mu - &self.b * dt;
        let lhs = self.c.transpose() * face_op * &self.c;
        let rhs = self.c.transpose() * (&self.m * &v0 / dt - self.q.transpose() * &r0 * w);
        let psi = lhs
            .cholesky()
            .ok_or_else(|| Error::numerical("dense step operator is not positive definite", f64::NAN))?
            .solve(&rhs);
        let v1 = &self.c * psi;
        let qv = &self.q * &v1;
        let r1 = DVector::from_fn(r0.len(), |i, _| r0[i] - dt * self.h[i] * qv[i]);

        // pressure: least-squares gradient fit of the momentum residual, zero mean
        let resid = &self.m * (&v1 - &v0) / dt + &self.k * &v1 * self.mu + self.q.transpose() * &r1 * w;
        let p = self.pressure_fit(&resid)?;
        Ok(PerturbationState {
            t: pert.t + dt,
            v: vec_to_faces(g, &v1),
            rho: vec_to_cells(g, &r1)?,
            p: vec_to_cells(g, &p)?,
        })
    }

    /// Solves `min |G P + R / w|` over interior faces with `sum P = 0`.
    fn pressure_fit(&self, resid: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.grid;
        let nc = g.nx * g.ny;
        let w = g.cell_area();
        let nf = face_count(&g);
        let mut grad = DMatrix::zeros(nf, nc);
        for i in 1..g.nx {
            for j in 0..g.ny {
                let row = u_index(&g, i, j);
                grad[(row, i * g.ny + j)] = 1.0 / g.hx();
                grad[(row, (i - 1) * g.ny + j)] = -1.0 / g.hx();
            }
        }
        for i in 0..g.nx {
            for j in 1..g.ny {
                let row = v_index(&g, i, j);
                grad[(row, i * g.ny + j)] = 1.0 / g.hy();
                grad[(row, i * g.ny + j - 1)] = -1.0 / g.hy();
            }
        }
        let mut target = -resid / w;
        for i in [0, g.nx] {
            for j in 0..g.ny {
                target[u_index(&g, i, j)] = 0.0;
            }
        }
        for i in 0..g.nx {
            for j in [0, g.ny] {
                target[v_index(&g, i, j)] = 0.0;
            }
        }
        let gtg = grad.transpose() * &grad;
        let gtb = grad.transpose() * target;
        let mut sys = DMatrix::zeros(nc + 1, nc + 1);
        sys.view_mut((0, 0), (nc, nc)).copy_from(&gtg);
        let mut rhs = DVector::zeros(nc + 1);
        for i in 0..nc {
            sys[(i, nc)] = 1.0;
            sys[(nc, i)] = 1.0;
            rhs[i] = gtb[i];
        }
        let sol = sys
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::numerical("singular pressure system", f64::NAN))?;
        Ok(sol.rows(0, nc).into_owned())
    }
}

pub fn oracle_phi(state: &SteadyState, s: f64) -> Result<f64> {
    DenseOracle::new(state)?.phi(s)
}

pub fn oracle_linstep(state: &SteadyState, pert: &PerturbationState, dt: f64) -> Result<PerturbationState> {
    DenseOracle::new(state)?.linstep(pert, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{dirichlet_energy, StreamSpace};
    use crate::steady::{uniform_gravity_state, DensityProfile};

    fn state(n: usize) -> SteadyState {
        let g = Grid::unit_square(n).unwrap();
        uniform_gravity_state(g, 1.0, DensityProfile::Linear { a: 1.0, b: 0.1 }, 0.01, 0.5).unwrap()
    }

    #[test]
    fn dense_forms_match_matrix_free_forms() {
        let st = state(6);
        let o = DenseOracle::new(&st).unwrap();
        let space = StreamSpace::new(st.grid);
        let psi: Vec<f64> = (0..space.dim()).map(|k| ((k * 7 % 11) as f64 - 5.0) * 0.1).collect();
        let v = space.curl(&psi);
        let x = faces_to_vec(&v);
        let e1 = (x.transpose() * &o.k * &x)[(0, 0)];
        assert!((e1 - dirichlet_energy(&v)).abs() < 1e-12 * e1);
        let e2 = (x.transpose() * &o.b * &x)[(0, 0)];
        assert!((e2 - st.buoyancy().e2(&v)).abs() < 1e-12 * e2.abs().max(1e-300));
        let c_psi = &o.c * DVector::from_vec(psi);
        assert!((c_psi - x).amax() < 1e-13);
    }

    #[test]
    fn forms_are_symmetric_and_mass_is_definite() {
        let o = DenseOracle::new(&state(6)).unwrap();
        assert!(o.asymmetry(0.3) < 1e-13);
        assert!(o.m_stream().cholesky().is_some());
    }

    #[test]
    fn phi_increases_as_s_decreases() {
        let o = DenseOracle::new(&state(6)).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for s in [1.0, 0.3, 0.1, 0.03, 0.01, 0.001] {
            let p = o.phi(s).unwrap();
            assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn cap_is_enforced() {
        let g = Grid::unit_square(66).unwrap();
        let st = uniform_gravity_state(g, 1.0, DensityProfile::Linear { a: 1.0, b: 0.1 }, 0.01, 0.5).unwrap();
        assert!(matches!(DenseOracle::new(&st), Err(Error::Domain(_))));
    }
}
