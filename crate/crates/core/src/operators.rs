//! Discrete quadratic forms and transport operators on the staggered grid.
//!
//! Face vectors are [`VectorField`]s; the Euclidean dot product over all face
//! samples is the pairing. With `w = hx * hy`:
//!
//! * `K` gives `E1(V) = V^T K V`, the no-slip Dirichlet form of `|grad V|^2`;
//! * `Q` maps faces to cells, `(QV)_c = ubar_c df/dx_c + vbar_c df/dy_c`;
//! * `B = Q^T diag(w h) Q` gives `E2(V) = V^T B V`;
//! * `M_rho = diag(w rhobar)` gives `J(V) = V^T M_rho V`.
//!
//! [`StreamSpace`] maps interior node streamfunctions to face velocities (`C`) and
//! back (`C^T`). Every `C psi` is divergence-free with zero normal velocity.

use ndarray::Array2;

use crate::error::Result;
use crate::grid::{Grid, Placement, ScalarField, VectorField};
use crate::linalg::{self, BandMatrix};

fn face_field(grid: Grid, u: Array2<f64>, v: Array2<f64>) -> VectorField {
    VectorField {
        u: ScalarField {
            grid,
            placement: Placement::XFace,
            values: u,
        },
        v: ScalarField {
            grid,
            placement: Placement::YFace,
            values: v,
        },
    }
}

/// `a += alpha * b` on face vectors of the same grid.
pub fn face_axpy(a: &mut VectorField, alpha: f64, b: &VectorField) {
    a.u.values.scaled_add(alpha, &b.u.values);
    a.v.values.scaled_add(alpha, &b.v.values);
}

/// Euclidean pairing of two face vectors.
pub fn face_dot(a: &VectorField, b: &VectorField) -> f64 {
    let su: f64 = a.u.values.iter().zip(b.u.values.iter()).map(|(x, y)| x * y).sum();
    let sv: f64 = a.v.values.iter().zip(b.v.values.iter()).map(|(x, y)| x * y).sum();
    su + sv
}

#[derive(Debug, Clone, Copy)]
pub struct StreamSpace {
    pub grid: Grid,
}

impl StreamSpace {
    pub fn new(grid: Grid) -> Self {
        StreamSpace { grid }
    }

    pub fn dim(&self) -> usize {
        self.grid.interior_nodes()
    }

    /// Lattice extents `(nx - 1, ny - 1)`; unknown `(i, j)` (interior node `(i+1, j+1)`) sits at `i * (ny - 1) + j`.
    pub fn lattice(&self) -> (usize, usize) {
        (self.grid.nx - 1, self.grid.ny - 1)
    }

    /// Node field with the interior unknowns filled in and zero boundary.
    pub fn embed(&self, psi: &[f64]) -> ScalarField {
        let g = self.grid;
        let m = g.ny - 1;
        let mut f = ScalarField::zeros(g, Placement::Node);
        for i in 1..g.nx {
            for j in 1..g.ny {
                f.values[[i, j]] = psi[(i - 1) * m + (j - 1)];
            }
        }
        f
    }

    pub fn restrict(&self, node: &ScalarField) -> Vec<f64> {
        let g = self.grid;
        let mut out = Vec::with_capacity(self.dim());
        for i in 1..g.nx {
            for j in 1..g.ny {
                out.push(node.values[[i, j]]);
            }
        }
        out
    }

    /// `C psi`.
    pub fn curl(&self, psi: &[f64]) -> VectorField {
        let g = self.grid;
        let (hx, hy) = (g.hx(), g.hy());
        let m = g.ny - 1;
        let at = |i: usize, j: usize| -> f64 {
            if i == 0 || j == 0 || i == g.nx || j == g.ny {
                0.0
            } else {
                psi[(i - 1) * m + (j - 1)]
            }
        };
        let u = Array2::from_shape_fn((g.nx + 1, g.ny), |(i, j)| (at(i, j + 1) - at(i, j)) / hy);
        let v = Array2::from_shape_fn((g.nx, g.ny + 1), |(i, j)| -(at(i + 1, j) - at(i, j)) / hx);
        face_field(g, u, v)
    }

    /// Banded matrix of `C^T op C`; `op` must be a face operator coupling only nearby faces.
    pub fn band(&self, op: impl Fn(&VectorField) -> VectorField) -> BandMatrix {
        let (ni, nj) = self.lattice();
        linalg::probe_lattice_operator(ni, nj, 2, |x, y| y.copy_from_slice(&self.curl_t(&op(&self.curl(x)))))
    }

    /// Least-squares streamfunction of a face field: `(C^T C)^{-1} C^T V`. For a
    /// divergence-free field with zero normal flux `C psi` reproduces it.
    pub fn potential(&self, vf: &VectorField) -> Result<Vec<f64>> {
        let ctc = self.band(|v| v.clone()).cholesky()?;
        Ok(ctc.solve(&self.curl_t(vf)))
    }

    /// `C^T V`.
    pub fn curl_t(&self, vf: &VectorField) -> Vec<f64> {
        let g = self.grid;
        let (hx, hy) = (g.hx(), g.hy());
        let m = g.ny - 1;
        let mut out = vec![0.0; self.dim()];
        let mut add = |i: usize, j: usize, val: f64| {
            if i > 0 && j > 0 && i < g.nx && j < g.ny {
                out[(i - 1) * m + (j - 1)] += val;
            }
        };
        for ((i, j), &u) in vf.u.values.indexed_iter() {
            add(i, j + 1, u / hy);
            add(i, j, -u / hy);
        }
        for ((i, j), &v) in vf.v.values.indexed_iter() {
            add(i + 1, j, -v / hx);
            add(i, j, v / hx);
        }
        out
    }
}

/// `K V`: the viscous form, `-w` times the no-slip vector Laplacian on the
/// non-boundary faces. Boundary normal faces map to zero.
pub fn viscous_form(vf: &VectorField) -> VectorField {
    let g = vf.grid();
    let w = g.cell_area();
    let (hx2, hy2) = (g.hx() * g.hx(), g.hy() * g.hy());
    let (nx, ny) = (g.nx, g.ny);
    let u = &vf.u.values;
    let v = &vf.v.values;
    // boundary normal faces are treated as zero whatever they hold
    let uu = |i: usize, j: usize| if i == 0 || i == nx { 0.0 } else { u[[i, j]] };
    let vv = |i: usize, j: usize| if j == 0 || j == ny { 0.0 } else { v[[i, j]] };
    let ku = Array2::from_shape_fn((nx + 1, ny), |(i, j)| {
        if i == 0 || i == nx {
            return 0.0;
        }
        let c = uu(i, j);
        let s = if j > 0 { uu(i, j - 1) } else { -c };
        let n = if j + 1 < ny { uu(i, j + 1) } else { -c };
        -w * ((uu(i - 1, j) - 2.0 * c + uu(i + 1, j)) / hx2 + (s - 2.0 * c + n) / hy2)
    });
    let kv = Array2::from_shape_fn((nx, ny + 1), |(i, j)| {
        if j == 0 || j == ny {
            return 0.0;
        }
        let c = vv(i, j);
        let wv = if i > 0 { vv(i - 1, j) } else { -c };
        let ev = if i + 1 < nx { vv(i + 1, j) } else { -c };
        -w * ((wv - 2.0 * c + ev) / hx2 + (vv(i, j - 1) - 2.0 * c + vv(i, j + 1)) / hy2)
    });
    face_field(g, ku, kv)
}

/// `E1(V) = V^T K V`.
pub fn dirichlet_energy(vf: &VectorField) -> f64 {
    face_dot(vf, &viscous_form(vf))
}

/// Cell-centred potential gradient and `h`, the data behind `Q` and `B`.
#[derive(Debug, Clone)]
pub struct BuoyancyForm {
    pub grid: Grid,
    /// `df/dx` at cell centres.
    pub fx: Array2<f64>,
    /// `df/dy` at cell centres.
    pub fy: Array2<f64>,
    /// `h` at cell centres.
    pub h: Array2<f64>,
}

impl BuoyancyForm {
    /// Averages the face gradient of `f` to cell centres.
    pub fn new(grad_f: &VectorField, h: &ScalarField) -> Self {
        let g = grad_f.grid();
        let gu = &grad_f.u.values;
        let gv = &grad_f.v.values;
        let fx = Array2::from_shape_fn((g.nx, g.ny), |(i, j)| 0.5 * (gu[[i, j]] + gu[[i + 1, j]]));
        let fy = Array2::from_shape_fn((g.nx, g.ny), |(i, j)| 0.5 * (gv[[i, j]] + gv[[i, j + 1]]));
        BuoyancyForm {
            grid: g,
            fx,
            fy,
            h: h.values.clone(),
        }
    }

    /// `Q V`: `V . grad f` at cell centres.
    pub fn q(&self, vf: &VectorField) -> Array2<f64> {
        let g = self.grid;
        let u = &vf.u.values;
        let v = &vf.v.values;
        Array2::from_shape_fn((g.nx, g.ny), |(i, j)| {
            let ub = 0.5 * (u[[i, j]] + u[[i + 1, j]]);
            let vb = 0.5 * (v[[i, j]] + v[[i, j + 1]]);
            ub * self.fx[[i, j]] + vb * self.fy[[i, j]]
        })
    }

    /// `Q^T c`.
    pub fn q_t(&self, c: &Array2<f64>) -> VectorField {
        let g = self.grid;
        let mut u = Array2::zeros((g.nx + 1, g.ny));
        let mut v = Array2::zeros((g.nx, g.ny + 1));
        for ((i, j), &val) in c.indexed_iter() {
            let a = 0.5 * val * self.fx[[i, j]];
            u[[i, j]] += a;
            u[[i + 1, j]] += a;
            let b = 0.5 * val * self.fy[[i, j]];
            v[[i, j]] += b;
            v[[i, j + 1]] += b;
        }
        face_field(g, u, v)
    }

    /// `B V = Q^T diag(w h) Q V`.
    pub fn b(&self, vf: &VectorField) -> VectorField {
        let w = self.grid.cell_area();
        let mut qv = self.q(vf);
        qv.zip_mut_with(&self.h, |x, &h| *x *= w * h);
        self.q_t(&qv)
    }

    /// `E2(V)`.
    pub fn e2(&self, vf: &VectorField) -> f64 {
        let w = self.grid.cell_area();
        let qv = self.q(vf);
        qv.iter().zip(self.h.iter()).map(|(q, h)| w * h * q * q).sum()
    }

    /// `max(0, max over cells of (h / rho0) |grad f|^2)`, an upper bound for `E2 / J`.
    ///
    /// The positive part matters when `h < 0` everywhere: `E2` can still reach zero on
    /// fields orthogonal to `grad f`.
    pub fn upper_bound(&self, rho0: &ScalarField) -> f64 {
        let mut m: f64 = 0.0;
        for ((i, j), &h) in self.h.indexed_iter() {
            let g2 = self.fx[[i, j]].powi(2) + self.fy[[i, j]].powi(2);
            m = m.max(h / rho0.values[[i, j]] * g2);
        }
        m
    }
}

/// Diagonal face weights `w * rhobar`, with `rhobar` the mean of the adjacent cells.
#[derive(Debug, Clone)]
pub struct FaceMass {
    pub wu: Array2<f64>,
    pub wv: Array2<f64>,
}

impl FaceMass {
    pub fn new(rho_cell: &Array2<f64>, grid: Grid) -> Self {
        let w = grid.cell_area();
        let (nx, ny) = (grid.nx, grid.ny);
        let c = rho_cell;
        let wu = Array2::from_shape_fn((nx + 1, ny), |(i, j)| {
            w * 0.5 * (c[[i.saturating_sub(1), j]] + c[[i.min(nx - 1), j]])
        });
        let wv = Array2::from_shape_fn((nx, ny + 1), |(i, j)| {
            w * 0.5 * (c[[i, j.saturating_sub(1)]] + c[[i, j.min(ny - 1)]])
        });
        FaceMass { wu, wv }
    }

    pub fn apply(&self, vf: &VectorField) -> VectorField {
        face_field(vf.grid(), &vf.u.values * &self.wu, &vf.v.values * &self.wv)
    }

    pub fn energy(&self, vf: &VectorField) -> f64 {
        let su: f64 = vf.u.values.iter().zip(self.wu.iter()).map(|(x, w)| w * x * x).sum();
        let sv: f64 = vf.v.values.iter().zip(self.wv.iter()).map(|(x, w)| w * x * x).sum();
        su + sv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Advection {
    Upwind1,
    Centered2WithLimiter,
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Conservative transport `q - dt div(V q)` of a cell scalar.
///
/// Face values are upwinded; `Centered2WithLimiter` adds minmod-limited linear
/// reconstruction. Boundary faces carry no flux.
pub fn transport(q: &Array2<f64>, vf: &VectorField, dt: f64, scheme: Advection) -> Array2<f64> {
    let g = vf.grid();
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (g.hx(), g.hy());
    let u = &vf.u.values;
    let v = &vf.v.values;
    let limited = scheme == Advection::Centered2WithLimiter;
    // reconstructed value of cell `c` on the side towards `d` (d = +1 or -1)
    let slope_x = |i: usize, j: usize| -> f64 {
        if !limited || i == 0 || i + 1 == nx {
            0.0
        } else {
            minmod(q[[i, j]] - q[[i - 1, j]], q[[i + 1, j]] - q[[i, j]])
        }
    };
    let slope_y = |i: usize, j: usize| -> f64 {
        if !limited || j == 0 || j + 1 == ny {
            0.0
        } else {
            minmod(q[[i, j]] - q[[i, j - 1]], q[[i, j + 1]] - q[[i, j]])
        }
    };
    let fx = Array2::from_shape_fn((nx + 1, ny), |(i, j)| {
        if i == 0 || i == nx {
            return 0.0;
        }
        let vel = u[[i, j]];
        let face = if vel >= 0.0 {
            q[[i - 1, j]] + 0.5 * slope_x(i - 1, j)
        } else {
            q[[i, j]] - 0.5 * slope_x(i, j)
        };
        vel * face
    });
    let fy = Array2::from_shape_fn((nx, ny + 1), |(i, j)| {
        if j == 0 || j == ny {
            return 0.0;
        }
        let vel = v[[i, j]];
        let face = if vel >= 0.0 {
            q[[i, j - 1]] + 0.5 * slope_y(i, j - 1)
        } else {
            q[[i, j]] - 0.5 * slope_y(i, j)
        };
        vel * face
    });
    Array2::from_shape_fn((nx, ny), |(i, j)| {
        q[[i, j]] - dt * ((fx[[i + 1, j]] - fx[[i, j]]) / hx + (fy[[i, j + 1]] - fy[[i, j]]) / hy)
    })
}

/// Momentum advection `div(V V)` in divergence form on the staggered grid.
/// Boundary normal faces map to zero.
pub fn momentum_advection(vf: &VectorField) -> VectorField {
    let g = vf.grid();
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (g.hx(), g.hy());
    let u = &vf.u.values;
    let v = &vf.v.values;
    // u v product at node (i, j); zero on the walls where the normal component vanishes
    let uv_node = |i: usize, j: usize| -> f64 {
        if i == 0 || i == nx || j == 0 || j == ny {
            return 0.0;
        }
        let un = 0.5 * (u[[i, j - 1]] + u[[i, j]]);
        let vn = 0.5 * (v[[i - 1, j]] + v[[i, j]]);
        un * vn
    };
    let uu_cell = |i: usize, j: usize| -> f64 {
        let ub = 0.5 * (u[[i, j]] + u[[i + 1, j]]);
        ub * ub
    };
    let vv_cell = |i: usize, j: usize| -> f64 {
        let vb = 0.5 * (v[[i, j]] + v[[i, j + 1]]);
        vb * vb
    };
    let nu = Array2::from_shape_fn((nx + 1, ny), |(i, j)| {
        if i == 0 || i == nx {
            return 0.0;
        }
        (uu_cell(i, j) - uu_cell(i - 1, j)) / hx + (uv_node(i, j + 1) - uv_node(i, j)) / hy
    });
    let nv = Array2::from_shape_fn((nx, ny + 1), |(i, j)| {
        if j == 0 || j == ny {
            return 0.0;
        }
        (uv_node(i + 1, j) - uv_node(i, j)) / hx + (vv_cell(i, j) - vv_cell(i, j - 1)) / hy
    });
    face_field(g, nu, nv)
}

/// Quadrature norms of face and cell data.
pub mod norms {
    use super::*;

    pub fn cell_lp(q: &Array2<f64>, grid: &Grid, p: u32) -> f64 {
        let w = grid.cell_area();
        match p {
            1 => q.iter().map(|x| x.abs()).sum::<f64>() * w,
            2 => (q.iter().map(|x| x * x).sum::<f64>() * w).sqrt(),
            _ => panic!("unsupported exponent {p}"),
        }
    }

    fn face_sum(f: &ScalarField, op: impl Fn(f64) -> f64) -> f64 {
        let g = f.grid;
        f.values
            .indexed_iter()
            .map(|((i, j), &x)| g.quadrature_weight(f.placement, i, j) * op(x))
            .sum()
    }

    /// `||u||_L1 + ||v||_L1` and similar per component.
    pub fn component_l1(f: &ScalarField) -> f64 {
        face_sum(f, f64::abs)
    }

    pub fn component_l2(f: &ScalarField) -> f64 {
        face_sum(f, |x| x * x).sqrt()
    }

    /// L1 norm of `|V|_1 = |u| + |v|` over the domain.
    pub fn velocity_l1(vf: &VectorField) -> f64 {
        component_l1(&vf.u) + component_l1(&vf.v)
    }

    pub fn velocity_l2(vf: &VectorField) -> f64 {
        (component_l2(&vf.u).powi(2) + component_l2(&vf.v).powi(2)).sqrt()
    }

    /// `sqrt(||V||^2 + E1(V))`.
    pub fn velocity_h1(vf: &VectorField) -> f64 {
        (velocity_l2(vf).powi(2) + dirichlet_energy(vf)).sqrt()
    }

    /// Squared second-difference seminorm of the velocity. Boundary-adjacent
    /// differences use the no-slip ghost `-interior` and are included.
    pub fn velocity_d2_squared(vf: &VectorField) -> f64 {
        let g = vf.grid();
        let w = g.cell_area();
        let (hx, hy) = (g.hx(), g.hy());
        let mut acc = 0.0;
        // tangential-ghost accessor for a component sampled on an (a x b) lattice where
        // index 0 and a-1 along `normal` are wall faces
        let comp = |vals: &Array2<f64>, normal_x: bool| -> f64 {
            let (a, b) = vals.dim();
            let get = |i: isize, j: isize| -> f64 {
                // walls along the normal direction hold zero; tangential direction mirrors
                let (ii, jj) = (i, j);
                if normal_x {
                    if ii <= 0 || ii >= a as isize - 1 {
                        return 0.0;
                    }
                    if jj < 0 {
                        return -vals[[ii as usize, 0]];
                    }
                    if jj >= b as isize {
                        return -vals[[ii as usize, b - 1]];
                    }
                    vals[[ii as usize, jj as usize]]
                } else {
                    if jj <= 0 || jj >= b as isize - 1 {
                        return 0.0;
                    }
                    if ii < 0 {
                        return -vals[[0, jj as usize]];
                    }
                    if ii >= a as isize {
                        return -vals[[a - 1, jj as usize]];
                    }
                    vals[[ii as usize, jj as usize]]
                }
            };
            let mut s = 0.0;
            for i in 0..a as isize {
                for j in 0..b as isize {
                    let c = get(i, j);
                    let dxx = (get(i - 1, j) - 2.0 * c + get(i + 1, j)) / (hx * hx);
                    let dyy = (get(i, j - 1) - 2.0 * c + get(i, j + 1)) / (hy * hy);
                    let interior = if normal_x {
                        i > 0 && i < a as isize - 1
                    } else {
                        j > 0 && j < b as isize - 1
                    };
                    if interior {
                        s += w * (dxx * dxx + dyy * dyy);
                    }
                }
            }
            // mixed differences on the dual lattice, one per 2x2 block including ghosts
            for i in -1..a as isize {
                for j in -1..b as isize {
                    let dxy = (get(i + 1, j + 1) - get(i, j + 1) - get(i + 1, j) + get(i, j)) / (hx * hy);
                    s += 2.0 * w * dxy * dxy;
                }
            }
            s
        };
        acc += comp(&vf.u.values, true);
        acc += comp(&vf.v.values, false);
        acc
    }

    pub fn velocity_h2(vf: &VectorField) -> f64 {
        (velocity_h1(vf).powi(2) + velocity_d2_squared(vf)).sqrt()
    }

    /// `sqrt(||q||^2 + ||grad q||^2)` for a cell scalar with Neumann walls.
    pub fn cell_h1(q: &Array2<f64>, grid: &Grid) -> f64 {
        let w = grid.cell_area();
        let (nx, ny) = (grid.nx, grid.ny);
        let (hx, hy) = (grid.hx(), grid.hy());
        let mut s = q.iter().map(|x| x * x).sum::<f64>() * w;
        for i in 1..nx {
            for j in 0..ny {
                s += w * ((q[[i, j]] - q[[i - 1, j]]) / hx).powi(2);
            }
        }
        for i in 0..nx {
            for j in 1..ny {
                s += w * ((q[[i, j]] - q[[i, j - 1]]) / hy).powi(2);
            }
        }
        s.sqrt()
    }
}
