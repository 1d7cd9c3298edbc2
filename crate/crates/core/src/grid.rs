//! Staggered (MAC) discretization of the rectangle `[0, Lx] x [0, Ly]`.
//!
//! Placement conventions, with `i` the x index and `j` the y index:
//!
//! * cell scalars live at `((i + 1/2) hx, (j + 1/2) hy)`, shape `nx x ny`;
//! * x-face values (the `u` velocity) at `(i hx, (j + 1/2) hy)`, shape `(nx + 1) x ny`;
//! * y-face values (the `v` velocity) at `((i + 1/2) hx, j hy)`, shape `nx x (ny + 1)`;
//! * nodes (the streamfunction) at `(i hx, j hy)`, shape `(nx + 1) x (ny + 1)`.
//!
//! No-slip velocity fields carry zero normal velocity on the boundary faces. The
//! tangential component is reflected into ghost cells with a sign flip so that
//! its wall value is zero. Cell scalars use homogeneous Neumann ghosts.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound on `nx * ny`.
pub const DEFAULT_CELL_CAP: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub length_x: f64,
    pub length_y: f64,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Cell,
    Node,
    XFace,
    YFace,
}

impl Placement {
    pub fn code(self) -> u32 {
        match self {
            Placement::Cell => 0,
            Placement::Node => 1,
            Placement::XFace => 2,
            Placement::YFace => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Placement::Cell),
            1 => Some(Placement::Node),
            2 => Some(Placement::XFace),
            3 => Some(Placement::YFace),
            _ => None,
        }
    }
}

impl Grid {
    pub fn new(length_x: f64, length_y: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::with_cap(length_x, length_y, nx, ny, DEFAULT_CELL_CAP)
    }

    pub fn with_cap(length_x: f64, length_y: f64, nx: usize, ny: usize, cap: usize) -> Result<Self> {
        if !(length_x.is_finite() && length_x > 0.0 && length_y.is_finite() && length_y > 0.0) {
            return Err(Error::Domain(format!(
                "domain lengths must be positive, got {length_x} x {length_y}"
            )));
        }
        if nx < 4 || ny < 4 {
            return Err(Error::Domain(format!("need at least 4 cells per direction, got {nx} x {ny}")));
        }
        if nx.saturating_mul(ny) > cap {
            return Err(Error::Domain(format!("{nx} x {ny} cells exceeds the cap of {cap}")));
        }
        Ok(Grid {
            length_x,
            length_y,
            nx,
            ny,
        })
    }

    /// Unit square with `n x n` cells.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(1.0, 1.0, n, n)
    }

    #[inline]
    pub fn hx(&self) -> f64 {
        self.length_x / self.nx as f64
    }

    #[inline]
    pub fn hy(&self) -> f64 {
        self.length_y / self.ny as f64
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn area(&self) -> f64 {
        self.length_x * self.length_y
    }

    pub fn min_spacing(&self) -> f64 {
        self.hx().min(self.hy())
    }

    pub fn shape(&self, placement: Placement) -> (usize, usize) {
        match placement {
            Placement::Cell => (self.nx, self.ny),
            Placement::Node => (self.nx + 1, self.ny + 1),
            Placement::XFace => (self.nx + 1, self.ny),
            Placement::YFace => (self.nx, self.ny + 1),
        }
    }

    /// Physical coordinates of sample `(i, j)`.
    pub fn position(&self, placement: Placement, i: usize, j: usize) -> (f64, f64) {
        let (hx, hy) = (self.hx(), self.hy());
        let (i, j) = (i as f64, j as f64);
        match placement {
            Placement::Cell => ((i + 0.5) * hx, (j + 0.5) * hy),
            Placement::Node => (i * hx, j * hy),
            Placement::XFace => (i * hx, (j + 0.5) * hy),
            Placement::YFace => ((i + 0.5) * hx, j * hy),
        }
    }

    /// Number of interior streamfunction nodes, the unknowns of the divergence-free space.
    pub fn interior_nodes(&self) -> usize {
        (self.nx - 1) * (self.ny - 1)
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    /// Midpoint/trapezoid quadrature weight of sample `(i, j)`.
    ///
    /// Samples sitting on the boundary get half (or, at corners, quarter) weight,
    /// so the weights of every placement add up to the domain area.
    pub fn quadrature_weight(&self, placement: Placement, i: usize, j: usize) -> f64 {
        let w = self.cell_area();
        let half_if = |on_edge: bool| if on_edge { 0.5 } else { 1.0 };
        match placement {
            Placement::Cell => w,
            Placement::XFace => w * half_if(i == 0 || i == self.nx),
            Placement::YFace => w * half_if(j == 0 || j == self.ny),
            Placement::Node => w * half_if(i == 0 || i == self.nx) * half_if(j == 0 || j == self.ny),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub placement: Placement,
    pub values: Array2<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid, placement: Placement) -> Self {
        ScalarField {
            grid,
            placement,
            values: Array2::zeros(grid.shape(placement)),
        }
    }

    pub fn constant(grid: Grid, placement: Placement, value: f64) -> Self {
        ScalarField {
            grid,
            placement,
            values: Array2::from_elem(grid.shape(placement), value),
        }
    }

    /// Samples `f(x, y)` at every position of the placement.
    pub fn from_fn(grid: Grid, placement: Placement, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = Array2::from_shape_fn(grid.shape(placement), |(i, j)| {
            let (x, y) = grid.position(placement, i, j);
            f(x, y)
        });
        ScalarField {
            grid,
            placement,
            values,
        }
    }

    pub fn from_array(grid: Grid, placement: Placement, values: Array2<f64>) -> Result<Self> {
        if values.dim() != grid.shape(placement) {
            return Err(Error::Structural(format!(
                "{placement:?} field on a {}x{} grid needs shape {:?}, got {:?}",
                grid.nx,
                grid.ny,
                grid.shape(placement),
                values.dim()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("field contains non-finite values".into()));
        }
        Ok(ScalarField {
            grid,
            placement,
            values,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Quadrature mean over the domain.
    pub fn mean(&self) -> f64 {
        integrate(self) / self.grid.area()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ScalarField {
            grid: self.grid,
            placement: self.placement,
            values: &self.values * factor,
        }
    }

    pub(crate) fn check_same(&self, other: &ScalarField) -> Result<()> {
        if self.grid != other.grid || self.placement != other.placement {
            return Err(Error::Structural(format!(
                "placement/grid mismatch: {:?} vs {:?}",
                self.placement, other.placement
            )));
        }
        Ok(())
    }

    fn expect(&self, placement: Placement, what: &str) -> Result<()> {
        if self.placement != placement {
            return Err(Error::Structural(format!(
                "{what} expects a {placement:?} field, got {:?}",
                self.placement
            )));
        }
        if self.values.dim() != self.grid.shape(placement) {
            return Err(Error::Structural(format!("{what}: inconsistent field shape")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub u: ScalarField,
    pub v: ScalarField,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        VectorField {
            u: ScalarField::zeros(grid, Placement::XFace),
            v: ScalarField::zeros(grid, Placement::YFace),
        }
    }

    pub fn new(u: ScalarField, v: ScalarField) -> Result<Self> {
        let field = VectorField { u, v };
        field.check()?;
        Ok(field)
    }

    pub fn grid(&self) -> Grid {
        self.u.grid
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.u.grid != self.v.grid {
            return Err(Error::Structural("velocity components live on different grids".into()));
        }
        self.u.expect(Placement::XFace, "vector field u")?;
        self.v.expect(Placement::YFace, "vector field v")
    }

    pub fn max_abs(&self) -> f64 {
        self.u.max_abs().max(self.v.max_abs())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        VectorField {
            u: self.u.scaled(factor),
            v: self.v.scaled(factor),
        }
    }

    /// Largest magnitude on the boundary (normal) faces; zero for no-slip fields.
    pub fn boundary_max_abs(&self) -> f64 {
        let g = self.grid();
        let mut m: f64 = 0.0;
        for j in 0..g.ny {
            m = m.max(self.u.values[[0, j]].abs()).max(self.u.values[[g.nx, j]].abs());
        }
        for i in 0..g.nx {
            m = m.max(self.v.values[[i, 0]].abs()).max(self.v.values[[i, g.ny]].abs());
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Staggered divergence `(u[i+1,j] - u[i,j]) / hx + (v[i,j+1] - v[i,j]) / hy` per cell.
pub fn divergence(vf: &VectorField) -> Result<ScalarField> {
    vf.check()?;
    let g = vf.grid();
    let (hx, hy) = (g.hx(), g.hy());
    let (u, v) = (&vf.u.values, &vf.v.values);
    let values = Array2::from_shape_fn((g.nx, g.ny), |(i, j)| {
        (u[[i + 1, j]] - u[[i, j]]) / hx + (v[[i, j + 1]] - v[[i, j]]) / hy
    });
    Ok(ScalarField {
        grid: g,
        placement: Placement::Cell,
        values,
    })
}

/// Velocity `(dψ/dy, -dψ/dx)` of a node streamfunction.
///
/// `psi` must vanish on every boundary node, which makes the normal velocity zero on
/// all boundary faces. The tangential wall condition is carried by the ghost
/// convention of the viscous operator.
pub fn curl_streamfunction(psi: &ScalarField) -> Result<VectorField> {
    psi.expect(Placement::Node, "curl_streamfunction")?;
    let g = psi.grid;
    let p = &psi.values;
    for i in 0..=g.nx {
        for j in 0..=g.ny {
            let on_boundary = i == 0 || j == 0 || i == g.nx || j == g.ny;
            if on_boundary && p[[i, j]] != 0.0 {
                return Err(Error::Precondition(format!(
                    "streamfunction is not clamped: psi[{i},{j}] = {:e} on the boundary",
                    p[[i, j]]
                )));
            }
        }
    }
    Ok(curl_unchecked(&g, p))
}

pub(crate) fn curl_unchecked(g: &Grid, p: &Array2<f64>) -> VectorField {
    let (hx, hy) = (g.hx(), g.hy());
    let u = Array2::from_shape_fn((g.nx + 1, g.ny), |(i, j)| (p[[i, j + 1]] - p[[i, j]]) / hy);
    let v = Array2::from_shape_fn((g.nx, g.ny + 1), |(i, j)| -(p[[i + 1, j]] - p[[i, j]]) / hx);
    VectorField {
        u: ScalarField {
            grid: *g,
            placement: Placement::XFace,
            values: u,
        },
        v: ScalarField {
            grid: *g,
            placement: Placement::YFace,
            values: v,
        },
    }
}

/// Face gradient of a cell scalar. Boundary faces get the homogeneous Neumann value 0.
pub fn gradient(sf: &ScalarField) -> Result<VectorField> {
    if sf.placement != Placement::Cell {
        return Err(Error::Structural(format!(
            "gradient is defined for cell scalars only, got {:?}",
            sf.placement
        )));
    }
    sf.expect(Placement::Cell, "gradient")?;
    let g = sf.grid;
    let (hx, hy) = (g.hx(), g.hy());
    let p = &sf.values;
    let u = Array2::from_shape_fn((g.nx + 1, g.ny), |(i, j)| {
        if i == 0 || i == g.nx {
            0.0
        } else {
            (p[[i, j]] - p[[i - 1, j]]) / hx
        }
    });
    let v = Array2::from_shape_fn((g.nx, g.ny + 1), |(i, j)| {
        if j == 0 || j == g.ny {
            0.0
        } else {
            (p[[i, j]] - p[[i, j - 1]]) / hy
        }
    });
    Ok(VectorField {
        u: ScalarField {
            grid: g,
            placement: Placement::XFace,
            values: u,
        },
        v: ScalarField {
            grid: g,
            placement: Placement::YFace,
            values: v,
        },
    })
}

/// Five-point Laplacian.
///
/// Cell scalars use homogeneous Neumann ghosts. Node fields are evaluated at
/// interior nodes; boundary nodes are set to zero.
pub fn laplacian(sf: &ScalarField) -> Result<ScalarField> {
    let g = sf.grid;
    let (hx2, hy2) = (g.hx() * g.hx(), g.hy() * g.hy());
    let p = &sf.values;
    let values = match sf.placement {
        Placement::Cell => {
            sf.expect(Placement::Cell, "laplacian")?;
            let (nx, ny) = (g.nx, g.ny);
            Array2::from_shape_fn((nx, ny), |(i, j)| {
                let c = p[[i, j]];
                let w = if i > 0 { p[[i - 1, j]] } else { c };
                let e = if i + 1 < nx { p[[i + 1, j]] } else { c };
                let s = if j > 0 { p[[i, j - 1]] } else { c };
                let n = if j + 1 < ny { p[[i, j + 1]] } else { c };
                (w - 2.0 * c + e) / hx2 + (s - 2.0 * c + n) / hy2
            })
        }
        Placement::Node => {
            sf.expect(Placement::Node, "laplacian")?;
            Array2::from_shape_fn((g.nx + 1, g.ny + 1), |(i, j)| {
                if i == 0 || j == 0 || i == g.nx || j == g.ny {
                    0.0
                } else {
                    (p[[i - 1, j]] - 2.0 * p[[i, j]] + p[[i + 1, j]]) / hx2
                        + (p[[i, j - 1]] - 2.0 * p[[i, j]] + p[[i, j + 1]]) / hy2
                }
            })
        }
        other => {
            return Err(Error::Structural(format!(
                "scalar laplacian is not defined for {other:?} samples; use vector_laplacian"
            )))
        }
    };
    Ok(ScalarField {
        grid: g,
        placement: sf.placement,
        values,
    })
}

/// No-slip vector Laplacian on the staggered grid.
///
/// Normal boundary faces are held at zero (their result is zero); the tangential
/// component uses the ghost value `-interior`, which puts the wall value at zero.
pub fn vector_laplacian(vf: &VectorField) -> Result<VectorField> {
    vf.check()?;
    let g = vf.grid();
    let (hx2, hy2) = (g.hx() * g.hx(), g.hy() * g.hy());
    let u = &vf.u.values;
    let v = &vf.v.values;
    let (nx, ny) = (g.nx, g.ny);
    let lu = Array2::from_shape_fn((nx + 1, ny), |(i, j)| {
        if i == 0 || i == nx {
            return 0.0;
        }
        let c = u[[i, j]];
        let s = if j > 0 { u[[i, j - 1]] } else { -c };
        let n = if j + 1 < ny { u[[i, j + 1]] } else { -c };
        (u[[i - 1, j]] - 2.0 * c + u[[i + 1, j]]) / hx2 + (s - 2.0 * c + n) / hy2
    });
    let lv = Array2::from_shape_fn((nx, ny + 1), |(i, j)| {
        if j == 0 || j == ny {
            return 0.0;
        }
        let c = v[[i, j]];
        let w = if i > 0 { v[[i - 1, j]] } else { -c };
        let e = if i + 1 < nx { v[[i + 1, j]] } else { -c };
        (w - 2.0 * c + e) / hx2 + (v[[i, j - 1]] - 2.0 * c + v[[i, j + 1]]) / hy2
    });
    Ok(VectorField {
        u: ScalarField {
            grid: g,
            placement: Placement::XFace,
            values: lu,
        },
        v: ScalarField {
            grid: g,
            placement: Placement::YFace,
            values: lv,
        },
    })
}

/// Interpolates a cell field to the samples of `placement` by arithmetic averaging of
/// the adjacent cells.
pub fn cell_to(placement: Placement, cell: &ScalarField) -> Result<ScalarField> {
    cell.expect(Placement::Cell, "cell_to")?;
    let g = cell.grid;
    let c = &cell.values;
    let (nx, ny) = (g.nx, g.ny);
    let values = match placement {
        Placement::Cell => c.clone(),
        Placement::XFace => Array2::from_shape_fn((nx + 1, ny), |(i, j)| {
            let l = c[[i.saturating_sub(1), j]];
            let r = c[[i.min(nx - 1), j]];
            0.5 * (l + r)
        }),
        Placement::YFace => Array2::from_shape_fn((nx, ny + 1), |(i, j)| {
            let b = c[[i, j.saturating_sub(1)]];
            let t = c[[i, j.min(ny - 1)]];
            0.5 * (b + t)
        }),
        Placement::Node => Array2::from_shape_fn((nx + 1, ny + 1), |(i, j)| {
            let (i0, i1) = (i.saturating_sub(1), i.min(nx - 1));
            let (j0, j1) = (j.saturating_sub(1), j.min(ny - 1));
            0.25 * (c[[i0, j0]] + c[[i1, j0]] + c[[i0, j1]] + c[[i1, j1]])
        }),
    };
    Ok(ScalarField {
        grid: g,
        placement,
        values,
    })
}

/// Quadrature of a single field.
pub fn integrate(sf: &ScalarField) -> f64 {
    let mut acc = 0.0;
    for ((i, j), &x) in sf.values.indexed_iter() {
        acc += sf.grid.quadrature_weight(sf.placement, i, j) * x;
    }
    acc
}

/// Weighted quadrature `sum weight * a * b * (quadrature weight)`.
///
/// `weight` is cell-centered and is averaged onto the placement of `a`. The
/// summation order is fixed (row-major), so results are reproducible.
pub fn inner_product(a: &ScalarField, b: &ScalarField, weight: Option<&ScalarField>) -> Result<f64> {
    a.check_same(b)?;
    let w = match weight {
        Some(w) => {
            if w.grid != a.grid {
                return Err(Error::Structural("weight lives on a different grid".into()));
            }
            Some(cell_to(a.placement, w)?)
        }
        None => None,
    };
    let g = a.grid;
    let mut acc = 0.0;
    for ((i, j), &x) in a.values.indexed_iter() {
        let y = b.values[[i, j]];
        let q = g.quadrature_weight(a.placement, i, j);
        let wt = w.as_ref().map_or(1.0, |w| w.values[[i, j]]);
        acc += wt * x * y * q;
    }
    Ok(acc)
}

/// `inner_product` summed over both components of two vector fields.
pub fn vector_inner_product(a: &VectorField, b: &VectorField, weight: Option<&ScalarField>) -> Result<f64> {
    Ok(inner_product(&a.u, &b.u, weight)? + inner_product(&a.v, &b.v, weight)?)
}

/// `a + alpha * b`, elementwise.
pub fn axpy(a: &ScalarField, alpha: f64, b: &ScalarField) -> Result<ScalarField> {
    a.check_same(b)?;
    let mut out = a.clone();
    Zip::from(&mut out.values).and(&b.values).for_each(|o, &y| *o += alpha * y);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    fn grid() -> Grid {
        Grid::new(2.0, 1.0, 8, 6).unwrap()
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new(1.0, 1.0, 3, 8).is_err());
        assert!(Grid::new(-1.0, 1.0, 8, 8).is_err());
        assert!(Grid::with_cap(1.0, 1.0, 64, 64, 1000).is_err());
    }

    #[test]
    fn constant_field_is_divergence_free() {
        let g = grid();
        let vf = VectorField {
            u: ScalarField::constant(g, Placement::XFace, 1.0),
            v: ScalarField::constant(g, Placement::YFace, 1.0),
        };
        assert_eq!(divergence(&vf).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn linear_u_has_unit_divergence() {
        let g = grid();
        let vf = VectorField {
            u: ScalarField::from_fn(g, Placement::XFace, |x, _| x),
            v: ScalarField::zeros(g, Placement::YFace),
        };
        let d = divergence(&vf).unwrap();
        assert!(d.values.iter().all(|&x| (x - 1.0).abs() < 1e-13));
    }

    #[test]
    fn zero_streamfunction_gives_zero_velocity() {
        let g = grid();
        let vf = curl_streamfunction(&ScalarField::zeros(g, Placement::Node)).unwrap();
        assert_eq!(vf.max_abs(), 0.0);
    }

    #[test]
    fn bump_streamfunction_is_divergence_free_and_no_slip() {
        let g = grid();
        let (lx, ly) = (g.length_x, g.length_y);
        let mut psi = ScalarField::from_fn(g, Placement::Node, |x, y| {
            let sx = (std::f64::consts::PI * x / lx).sin();
            let sy = (std::f64::consts::PI * y / ly).sin();
            sx * sx * sy * sy
        });
        clamp_boundary(&mut psi);
        let vf = curl_streamfunction(&psi).unwrap();
        assert!(divergence(&vf).unwrap().max_abs() <= 1e-12);
        assert_eq!(vf.boundary_max_abs(), 0.0);
    }

    #[test]
    fn unclamped_streamfunction_is_rejected() {
        let g = grid();
        let psi = ScalarField::constant(g, Placement::Node, 1.0);
        assert!(matches!(curl_streamfunction(&psi), Err(Error::Precondition(_))));
    }

    #[test]
    fn curl_is_local() {
        let g = Grid::unit_square(12).unwrap();
        let base = ScalarField::zeros(g, Placement::Node);
        let mut bumped = base.clone();
        bumped.values[[6, 6]] = 1.0;
        let a = curl_streamfunction(&base).unwrap();
        let b = curl_streamfunction(&bumped).unwrap();
        for (((i, j), &x), &y) in a.u.values.indexed_iter().zip(b.u.values.iter()) {
            if x != y {
                assert!(i == 6 && (j == 5 || j == 6), "u changed at {i},{j}");
            }
        }
        for (((i, j), &x), &y) in a.v.values.indexed_iter().zip(b.v.values.iter()) {
            if x != y {
                assert!((i == 5 || i == 6) && j == 6, "v changed at {i},{j}");
            }
        }
    }

    #[test]
    fn laplacian_of_linear_and_quadratic() {
        let g = grid();
        let lin = ScalarField::from_fn(g, Placement::Node, |x, y| 3.0 * x - 2.0 * y + 1.0);
        let l = laplacian(&lin).unwrap();
        assert!(l.max_abs() < 1e-11);
        let quad = ScalarField::from_fn(g, Placement::Node, |x, y| x * x + y * y);
        let l = laplacian(&quad).unwrap();
        for i in 1..g.nx {
            for j in 1..g.ny {
                assert_close!(l.values[[i, j]], 4.0, 1e-10);
            }
        }
        let quad = ScalarField::from_fn(g, Placement::Cell, |x, y| x * x + y * y);
        let l = laplacian(&quad).unwrap();
        for i in 1..g.nx - 1 {
            for j in 1..g.ny - 1 {
                assert_close!(l.values[[i, j]], 4.0, 1e-10);
            }
        }
    }

    #[test]
    fn gradient_of_uniform_gravity_potential() {
        let g = grid();
        let f = ScalarField::from_fn(g, Placement::Cell, |_, y| 9.81 * y);
        let grad = gradient(&f).unwrap();
        for i in 0..g.nx {
            for j in 1..g.ny {
                assert_close!(grad.v.values[[i, j]], 9.81, 1e-12);
            }
        }
        for i in 1..g.nx {
            for j in 0..g.ny {
                assert_close!(grad.u.values[[i, j]], 0.0, 1e-12);
            }
        }
        assert!(gradient(&ScalarField::zeros(g, Placement::Node)).is_err());
    }

    #[test]
    fn quadrature_of_constants_is_exact() {
        let g = grid();
        for p in [Placement::Cell, Placement::Node, Placement::XFace, Placement::YFace] {
            let a = ScalarField::constant(g, p, 3.0);
            let b = ScalarField::constant(g, p, -0.5);
            let w = ScalarField::constant(g, Placement::Cell, 2.0);
            let got = inner_product(&a, &b, Some(&w)).unwrap();
            let want = 3.0 * -0.5 * 2.0 * g.area();
            assert!((got - want).abs() <= 1e-13 * want.abs(), "{p:?}: {got} vs {want}");
        }
    }

    #[test]
    fn inner_product_rejects_mismatched_placements() {
        let g = grid();
        let a = ScalarField::zeros(g, Placement::Cell);
        let b = ScalarField::zeros(g, Placement::Node);
        assert!(inner_product(&a, &b, None).is_err());
    }

    #[test]
    fn unit_square_area() {
        let g = Grid::unit_square(10).unwrap();
        let one = ScalarField::constant(g, Placement::Cell, 1.0);
        assert_close!(inner_product(&one, &one, Some(&one)).unwrap(), 1.0, 1e-14);
        let zero = VectorField::zeros(g);
        assert_eq!(vector_inner_product(&zero, &zero, Some(&one)).unwrap(), 0.0);
    }

    fn clamp_boundary(psi: &mut ScalarField) {
        let g = psi.grid;
        for i in 0..=g.nx {
            psi.values[[i, 0]] = 0.0;
            psi.values[[i, g.ny]] = 0.0;
        }
        for j in 0..=g.ny {
            psi.values[[0, j]] = 0.0;
            psi.values[[g.nx, j]] = 0.0;
        }
    }
}
