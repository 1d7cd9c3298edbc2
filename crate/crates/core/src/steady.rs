//! Hydrostatic steady states `grad P0 = -rho0 grad f` with `rho0 = r(f)`.
//!
//! Writing `R` for an antiderivative of the profile `r`, `grad R(f) = rho0 grad f`,
//! so `P0 = -R(f) + c`. The face force used in the pressure solve is the exact
//! difference `(R(f_right) - R(f_left)) / h`, which makes the discrete balance
//! hold to rounding. The truncation error against the pointwise product
//! `rho0 grad f` at faces is reported separately and is second order.

use std::fs;
use std::path::Path;

use evalexpr::{build_operator_tree, ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::grid::{Grid, Placement, ScalarField, VectorField};
use crate::linalg::{self, BandMatrix};
use crate::operators::BuoyancyForm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    /// `f = g y`.
    UniformGravity { g: f64 },
    /// `f = strength |x - center|^2 / 2`.
    Radial { center: (f64, f64), strength: f64 },
    /// Arbitrary expression in `x` and `y`.
    UserExpression { expression: String },
}

#[derive(Debug, Clone)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    /// `f` at cell centres.
    pub samples: ScalarField,
    /// `grad f` at every face, boundary faces included.
    pub grad_f: VectorField,
    tree: Option<Node<DefaultNumericTypes>>,
}

impl PotentialSpec {
    pub fn new(grid: Grid, kind: PotentialKind) -> Result<Self> {
        let tree = match &kind {
            PotentialKind::UserExpression { expression } => Some(
                build_operator_tree::<DefaultNumericTypes>(expression)
                    .map_err(|e| Error::Domain(format!("cannot parse potential `{expression}`: {e}")))?,
            ),
            PotentialKind::UniformGravity { g } if !g.is_finite() => {
                return Err(Error::Domain("gravity must be finite".into()))
            }
            PotentialKind::Radial { strength, center } if !(strength.is_finite() && center.0.is_finite() && center.1.is_finite()) => {
                return Err(Error::Domain("radial potential parameters must be finite".into()))
            }
            _ => None,
        };
        let mut spec = PotentialSpec {
            kind,
            samples: ScalarField::zeros(grid, Placement::Cell),
            grad_f: VectorField::zeros(grid),
            tree,
        };
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        let mut f = Array2::zeros(grid.shape(Placement::Cell));
        for ((i, j), v) in f.indexed_iter_mut() {
            let (x, y) = grid.position(Placement::Cell, i, j);
            *v = spec.eval(&mut ctx, x, y)?;
        }
        spec.samples = ScalarField::from_array(grid, Placement::Cell, f)?;
        let (hx, hy) = (grid.hx(), grid.hy());
        let mut gu = Array2::zeros(grid.shape(Placement::XFace));
        for ((i, j), v) in gu.indexed_iter_mut() {
            let (x, y) = grid.position(Placement::XFace, i, j);
            *v = match spec.analytic_gradient(x, y) {
                Some((gx, _)) => gx,
                None => (spec.eval(&mut ctx, x + 0.5 * hx, y)? - spec.eval(&mut ctx, x - 0.5 * hx, y)?) / hx,
            };
        }
        let mut gv = Array2::zeros(grid.shape(Placement::YFace));
        for ((i, j), v) in gv.indexed_iter_mut() {
            let (x, y) = grid.position(Placement::YFace, i, j);
            *v = match spec.analytic_gradient(x, y) {
                Some((_, gy)) => gy,
                None => (spec.eval(&mut ctx, x, y + 0.5 * hy)? - spec.eval(&mut ctx, x, y - 0.5 * hy)?) / hy,
            };
        }
        spec.grad_f = VectorField::new(
            ScalarField::from_array(grid, Placement::XFace, gu)?,
            ScalarField::from_array(grid, Placement::YFace, gv)?,
        )?;
        Ok(spec)
    }

    pub fn uniform_gravity(grid: Grid, g: f64) -> Result<Self> {
        Self::new(grid, PotentialKind::UniformGravity { g })
    }

    pub fn radial(grid: Grid, center: (f64, f64), strength: f64) -> Result<Self> {
        Self::new(grid, PotentialKind::Radial { center, strength })
    }

    pub fn expression(grid: Grid, expression: &str) -> Result<Self> {
        Self::new(
            grid,
            PotentialKind::UserExpression {
                expression: expression.to_string(),
            },
        )
    }

    pub fn grid(&self) -> Grid {
        self.samples.grid
    }

    fn eval(&self, ctx: &mut HashMapContext<DefaultNumericTypes>, x: f64, y: f64) -> Result<f64> {
        let v = match &self.kind {
            PotentialKind::UniformGravity { g } => g * y,
            PotentialKind::Radial { center, strength } => {
                0.5 * strength * ((x - center.0).powi(2) + (y - center.1).powi(2))
            }
            PotentialKind::UserExpression { expression } => {
                let tree = self.tree.as_ref().expect("expression tree");
                ctx.set_value("x".into(), Value::Float(x)).expect("mutable context");
                ctx.set_value("y".into(), Value::Float(y)).expect("mutable context");
                tree.eval_number_with_context(ctx)
                    .map_err(|e| Error::Domain(format!("evaluating `{expression}` at ({x}, {y}): {e}")))?
            }
        };
        if !v.is_finite() {
            return Err(Error::Domain(format!("potential is not finite at ({x}, {y})")));
        }
        Ok(v)
    }

    /// `f(x, y)` at an arbitrary point.
    pub fn value(&self, x: f64, y: f64) -> Result<f64> {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        self.eval(&mut ctx, x, y)
    }

    fn analytic_gradient(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        match &self.kind {
            PotentialKind::UniformGravity { g } => Some((0.0, *g)),
            PotentialKind::Radial { center, strength } => Some((strength * (x - center.0), strength * (y - center.1))),
            PotentialKind::UserExpression { .. } => None,
        }
    }

    /// Max-norm gap between `grad_f` and the cell differences of `samples` on interior faces.
    pub fn consistency_residual(&self) -> f64 {
        let d = crate::grid::gradient(&self.samples).expect("cell field");
        let g = self.grid();
        let mut m: f64 = 0.0;
        for i in 1..g.nx {
            for j in 0..g.ny {
                m = m.max((d.u.values[[i, j]] - self.grad_f.u.values[[i, j]]).abs());
            }
        }
        for i in 0..g.nx {
            for j in 1..g.ny {
                m = m.max((d.v.values[[i, j]] - self.grad_f.v.values[[i, j]]).abs());
            }
        }
        m
    }
}

/// Density as a function of the potential value, `rho0 = r(f)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityProfile {
    /// `r(t) = rho_bar exp(-beta t)`.
    Exponential { rho_bar: f64, beta: f64 },
    /// `r(t) = a + b t`.
    Linear { a: f64, b: f64 },
    /// `r(t) = mean + jump tanh((t - t0) / width) / 2`.
    Tanh { mean: f64, jump: f64, t0: f64, width: f64 },
}

impl DensityProfile {
    pub fn r(&self, t: f64) -> f64 {
        match *self {
            DensityProfile::Exponential { rho_bar, beta } => rho_bar * (-beta * t).exp(),
            DensityProfile::Linear { a, b } => a + b * t,
            DensityProfile::Tanh { mean, jump, t0, width } => mean + 0.5 * jump * ((t - t0) / width).tanh(),
        }
    }

    pub fn r_prime(&self, t: f64) -> f64 {
        match *self {
            DensityProfile::Exponential { rho_bar, beta } => -beta * rho_bar * (-beta * t).exp(),
            DensityProfile::Linear { b, .. } => b,
            DensityProfile::Tanh { jump, t0, width, .. } => {
                let c = ((t - t0) / width).cosh();
                0.5 * jump / (width * c * c)
            }
        }
    }

    /// Antiderivative of `r`.
    pub fn antiderivative(&self, t: f64) -> f64 {
        match *self {
            DensityProfile::Exponential { rho_bar, beta } => {
                if beta == 0.0 {
                    rho_bar * t
                } else {
                    -rho_bar / beta * (-beta * t).exp()
                }
            }
            DensityProfile::Linear { a, b } => a * t + 0.5 * b * t * t,
            DensityProfile::Tanh { mean, jump, t0, width } => {
                // log cosh evaluated without overflow
                let z = ((t - t0) / width).abs();
                let log_cosh = z + (-2.0 * z).exp().ln_1p() - std::f64::consts::LN_2;
                mean * t + 0.5 * jump * width * log_cosh
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            DensityProfile::Exponential { rho_bar, beta } => rho_bar.is_finite() && beta.is_finite(),
            DensityProfile::Linear { a, b } => a.is_finite() && b.is_finite(),
            DensityProfile::Tanh { mean, jump, t0, width } => {
                mean.is_finite() && jump.is_finite() && t0.is_finite() && width.is_finite() && width > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid density profile {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyResiduals {
    /// `max |G P0 + F|` over interior faces, `F` the exact-difference face force.
    pub hydrostatic: f64,
    /// `max |G P0 + rho0 grad f|` with the pointwise face product; second order in h.
    pub hydrostatic_truncation: f64,
    /// Max of `|(d_y rho0, -d_x rho0) . (d_x f, d_y f)|` with centred differences.
    pub alignment: f64,
    /// Largest `|rho0 grad f|` over interior faces.
    pub force_scale: f64,
    pub tol_hydro: f64,
    pub tol_align: f64,
    /// Max-norm gap between `h grad f` and the discrete `grad rho0`, relative.
    pub profile_consistency: f64,
}

impl SteadyResiduals {
    pub fn accepted(&self) -> bool {
        self.hydrostatic <= self.tol_hydro && self.alignment <= self.tol_align
    }
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub grid: Grid,
    pub potential: PotentialSpec,
    pub profile: Option<DensityProfile>,
    pub f: ScalarField,
    pub rho0: ScalarField,
    pub p0: ScalarField,
    pub h: ScalarField,
    pub mu: f64,
    pub sigma: f64,
    pub residuals: SteadyResiduals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabilityClass {
    Unstable,
    LinearlyStable,
    NonlinearlyStable,
    Indeterminate,
}

pub const DEFAULT_CONST_TOL: f64 = 1e-10;
/// Relative hydrostatic tolerance.
pub const HYDRO_REL_TOL: f64 = 1e-8;

/// Cell Laplacian with homogeneous Neumann walls, negated so it is positive semidefinite.
fn neumann_band(grid: &Grid) -> BandMatrix {
    let (nx, ny) = (grid.nx, grid.ny);
    let (ax, ay) = (1.0 / (grid.hx() * grid.hx()), 1.0 / (grid.hy() * grid.hy()));
    let mut a = BandMatrix::zeros(nx * ny, ny);
    for i in 0..nx {
        for j in 0..ny {
            let p = i * ny + j;
            if i + 1 < nx {
                let q = p + ny;
                a.add(p, p, ax);
                a.add(q, q, ax);
                a.add(q, p, -ax);
            }
            if j + 1 < ny {
                let q = p + 1;
                a.add(p, p, ay);
                a.add(q, q, ay);
                a.add(q, p, -ay);
            }
        }
    }
    a
}

/// Solves `-L p = rhs` for a cell scalar with homogeneous Neumann walls, returning the
/// zero-mean solution. `rhs` must sum to zero.
pub(crate) struct NeumannPoisson {
    grid: Grid,
    band: BandMatrix,
    pinned: linalg::BandCholesky,
}

impl NeumannPoisson {
    pub fn new(grid: Grid) -> Result<Self> {
        let band = neumann_band(&grid);
        let mut pinned = band.clone();
        // pin the first cell by adding a large diagonal term; the projected PCG removes the effect
        let d = pinned.get(0, 0);
        pinned.set(0, 0, 2.0 * d);
        let pinned = pinned.cholesky()?;
        Ok(NeumannPoisson { grid, band, pinned })
    }

    pub fn solve(&self, rhs: &Array2<f64>, tol: f64, max_iter: usize) -> Result<(Array2<f64>, linalg::CgOutcome)> {
        let b: Vec<f64> = rhs.iter().copied().collect();
        let mut x = vec![0.0; b.len()];
        let out = linalg::pcg(
            |x, y| self.band.matvec(x, y),
            |r, z| {
                z.copy_from_slice(r);
                self.pinned.solve_in_place(z);
            },
            &b,
            &mut x,
            tol,
            max_iter,
            true,
        )?;
        let arr = Array2::from_shape_vec((self.grid.nx, self.grid.ny), x).expect("shape");
        Ok((arr, out))
    }
}

/// Negative divergence of face data, scaled so that `neumann_band` pairs with it.
pub(crate) fn neg_divergence(u: &Array2<f64>, v: &Array2<f64>, grid: &Grid) -> Array2<f64> {
    let (hx, hy) = (grid.hx(), grid.hy());
    Array2::from_shape_fn((grid.nx, grid.ny), |(i, j)| {
        -((u[[i + 1, j]] - u[[i, j]]) / hx + (v[[i, j + 1]] - v[[i, j]]) / hy)
    })
}

fn max_abs_interior(u: &Array2<f64>, v: &Array2<f64>, grid: &Grid) -> f64 {
    let mut m: f64 = 0.0;
    for i in 1..grid.nx {
        for j in 0..grid.ny {
            m = m.max(u[[i, j]].abs());
        }
    }
    for i in 0..grid.nx {
        for j in 1..grid.ny {
            m = m.max(v[[i, j]].abs());
        }
    }
    m
}

fn centred(values: &Array2<f64>, i: usize, j: usize, along_x: bool, h: f64) -> f64 {
    let (n0, n1) = values.dim();
    if along_x {
        let (a, b) = (i.saturating_sub(1), (i + 1).min(n0 - 1));
        (values[[b, j]] - values[[a, j]]) / ((b - a) as f64 * h)
    } else {
        let (a, b) = (j.saturating_sub(1), (j + 1).min(n1 - 1));
        (values[[i, b]] - values[[i, a]]) / ((b - a) as f64 * h)
    }
}

pub fn build_steady_state(
    grid: Grid,
    pot: PotentialSpec,
    profile: DensityProfile,
    mu: f64,
    sigma: f64,
) -> Result<SteadyState> {
    if pot.grid() != grid {
        return Err(Error::Structural("potential sampled on a different grid".into()));
    }
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Domain(format!("viscosity must be positive, got {mu}")));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Domain(format!("density floor must be positive, got {sigma}")));
    }
    profile.validate()?;
    let f = pot.samples.clone();
    let rho0 = ScalarField {
        grid,
        placement: Placement::Cell,
        values: f.values.mapv(|t| profile.r(t)),
    };
    let h = ScalarField {
        grid,
        placement: Placement::Cell,
        values: f.values.mapv(|t| profile.r_prime(t)),
    };
    if !rho0.is_finite() || !h.is_finite() {
        return Err(Error::Domain("density profile is not finite on the range of f".into()));
    }
    let rho_min = rho0.min();
    if rho_min <= sigma {
        return Err(Error::Domain(format!(
            "density profile drops to {rho_min} which is not above the floor sigma = {sigma}"
        )));
    }

    // exact-difference face force F = grad R(f)
    let (nx, ny) = (grid.nx, grid.ny);
    let (hx, hy) = (grid.hx(), grid.hy());
    let rf = f.values.mapv(|t| profile.antiderivative(t));
    let fu = Array2::from_shape_fn((nx + 1, ny), |(i, j)| {
        if i == 0 || i == nx {
            0.0
        } else {
            (rf[[i, j]] - rf[[i - 1, j]]) / hx
        }
    });
    let fv = Array2::from_shape_fn((nx, ny + 1), |(i, j)| {
        if j == 0 || j == ny {
            0.0
        } else {
            (rf[[i, j]] - rf[[i, j - 1]]) / hy
        }
    });
    // div(G P0) = -div F, i.e. -L P0 = div F (homogeneous Neumann on the interior-face system)
    let mut rhs = neg_divergence(&fu, &fv, &grid);
    rhs.mapv_inplace(|x| -x);
    let total: f64 = rhs.sum();
    let scale: f64 = rhs.iter().map(|x| x.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    if total.abs() > 1e-10 * scale {
        return Err(Error::numerical("pressure Poisson problem is incompatible", total.abs() / scale));
    }
    let poisson = NeumannPoisson::new(grid)?;
    let (p, _) = poisson.solve(&rhs, 1e-13, 200)?;
    let p0 = ScalarField {
        grid,
        placement: Placement::Cell,
        values: p,
    };

    let mut state = SteadyState {
        grid,
        potential: pot,
        profile: Some(profile),
        f,
        rho0,
        p0,
        h,
        mu,
        sigma,
        residuals: SteadyResiduals {
            hydrostatic: 0.0,
            hydrostatic_truncation: 0.0,
            alignment: 0.0,
            force_scale: 0.0,
            tol_hydro: 0.0,
            tol_align: 0.0,
            profile_consistency: 0.0,
        },
    };
    state.residuals = verify_steady(&state);
    if state.residuals.hydrostatic > state.residuals.tol_hydro {
        return Err(Error::numerical(
            "hydrostatic balance not reached after the pressure solve",
            state.residuals.hydrostatic,
        ));
    }
    Ok(state)
}

impl SteadyState {
    /// Assembles a state from raw fields without solving anything. `verify_steady`
    /// decides whether the result is usable downstream.
    #[allow(clippy::too_many_arguments)]
    pub fn from_fields(
        potential: PotentialSpec,
        rho0: ScalarField,
        p0: ScalarField,
        h: ScalarField,
        mu: f64,
        sigma: f64,
    ) -> Result<Self> {
        let grid = potential.grid();
        for (name, fld) in [("rho0", &rho0), ("p0", &p0), ("h", &h)] {
            if fld.grid != grid || fld.placement != Placement::Cell {
                return Err(Error::Structural(format!("{name} must be a cell field on the potential's grid")));
            }
        }
        let mut state = SteadyState {
            grid,
            f: potential.samples.clone(),
            potential,
            profile: None,
            rho0,
            p0,
            h,
            mu,
            sigma,
            residuals: SteadyResiduals {
                hydrostatic: f64::INFINITY,
                hydrostatic_truncation: f64::INFINITY,
                alignment: f64::INFINITY,
                force_scale: 0.0,
                tol_hydro: 0.0,
                tol_align: 0.0,
                profile_consistency: f64::INFINITY,
            },
        };
        state.residuals = verify_steady(&state);
        Ok(state)
    }

    /// Errors unless the state satisfies its invariants.
    pub fn ensure_valid(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::Precondition("viscosity must be positive".into()));
        }
        if self.rho0.min() < self.sigma {
            return Err(Error::Precondition("rho0 drops below the density floor".into()));
        }
        if !self.residuals.accepted() {
            return Err(Error::Precondition(format!(
                "steady state rejected: hydrostatic residual {:e} (tol {:e}), alignment residual {:e} (tol {:e})",
                self.residuals.hydrostatic, self.residuals.tol_hydro, self.residuals.alignment, self.residuals.tol_align
            )));
        }
        Ok(())
    }

    pub fn buoyancy(&self) -> BuoyancyForm {
        BuoyancyForm::new(&self.potential.grad_f, &self.h)
    }

    /// `max(0, max (h / rho0) |grad f|^2)` over cells: an upper bound for every `Phi(s)`.
    pub fn upper_bound(&self) -> f64 {
        self.buoyancy().upper_bound(&self.rho0)
    }
}

/// Residuals of hydrostatic balance and of the alignment identity.
pub fn verify_steady(state: &SteadyState) -> SteadyResiduals {
    let g = state.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (g.hx(), g.hy());
    let p = &state.p0.values;
    let gpu = Array2::from_shape_fn((nx + 1, ny), |(i, j)| {
        if i == 0 || i == nx {
            0.0
        } else {
            (p[[i, j]] - p[[i - 1, j]]) / hx
        }
    });
    let gpv = Array2::from_shape_fn((nx, ny + 1), |(i, j)| {
        if j == 0 || j == ny {
            0.0
        } else {
            (p[[i, j]] - p[[i, j - 1]]) / hy
        }
    });

    // pointwise rho0 grad f at faces; rho0 from the profile where known, else the face average
    let face_rho = |placement: Placement, i: usize, j: usize| -> f64 {
        let (x, y) = g.position(placement, i, j);
        match (&state.profile, state.potential.value(x, y)) {
            (Some(prof), Ok(fv)) => prof.r(fv),
            _ => {
                let r = &state.rho0.values;
                match placement {
                    Placement::XFace => 0.5 * (r[[i - 1, j]] + r[[i, j]]),
                    _ => 0.5 * (r[[i, j - 1]] + r[[i, j]]),
                }
            }
        }
    };
    let gf = &state.potential.grad_f;
    let ru = Array2::from_shape_fn((nx + 1, ny), |(i, j)| {
        if i == 0 || i == nx {
            0.0
        } else {
            face_rho(Placement::XFace, i, j) * gf.u.values[[i, j]]
        }
    });
    let rv = Array2::from_shape_fn((nx, ny + 1), |(i, j)| {
        if j == 0 || j == ny {
            0.0
        } else {
            face_rho(Placement::YFace, i, j) * gf.v.values[[i, j]]
        }
    });
    let force_scale = max_abs_interior(&ru, &rv, &g);
    let truncation = max_abs_interior(&(&gpu + &ru), &(&gpv + &rv), &g);

    let hydrostatic = match &state.profile {
        Some(prof) => {
            let rf = state.f.values.mapv(|t| prof.antiderivative(t));
            let fu = Array2::from_shape_fn((nx + 1, ny), |(i, j)| {
                if i == 0 || i == nx {
                    0.0
                } else {
                    (rf[[i, j]] - rf[[i - 1, j]]) / hx
                }
            });
            let fv = Array2::from_shape_fn((nx, ny + 1), |(i, j)| {
                if j == 0 || j == ny {
                    0.0
                } else {
                    (rf[[i, j]] - rf[[i, j - 1]]) / hy
                }
            });
            max_abs_interior(&(&gpu + &fu), &(&gpv + &fv), &g)
        }
        None => truncation,
    };

    // alignment (d_y rho0, -d_x rho0) . (d_x f, d_y f)
    let r = &state.rho0.values;
    let f = &state.f.values;
    let mut alignment: f64 = 0.0;
    let mut grad_r_max: f64 = 0.0;
    let mut grad_f_max: f64 = 0.0;
    let mut consistency: f64 = 0.0;
    for i in 0..nx {
        for j in 0..ny {
            let (rx, ry) = (centred(r, i, j, true, hx), centred(r, i, j, false, hy));
            let (fx, fy) = (centred(f, i, j, true, hx), centred(f, i, j, false, hy));
            alignment = alignment.max((ry * fx - rx * fy).abs());
            grad_r_max = grad_r_max.max(rx.hypot(ry));
            grad_f_max = grad_f_max.max(fx.hypot(fy));
            let hh = state.h.values[[i, j]];
            consistency = consistency.max((hh * fx - rx).abs()).max((hh * fy - ry).abs());
        }
    }
    let s = grad_r_max * grad_f_max;
    let hmin = g.min_spacing() / g.length_x.max(g.length_y);
    SteadyResiduals {
        hydrostatic,
        hydrostatic_truncation: truncation,
        alignment,
        force_scale,
        tol_hydro: HYDRO_REL_TOL * force_scale.max(f64::MIN_POSITIVE),
        tol_align: s * (1e-12 + 10.0 * hmin * hmin),
        profile_consistency: consistency / grad_r_max.max(f64::MIN_POSITIVE),
    }
}

pub fn classify(state: &SteadyState, const_tol: f64) -> StabilityClass {
    let h = &state.h;
    let (max, min) = (h.max(), h.min());
    let mean = h.values.mean().unwrap_or(0.0);
    if max > 0.0 {
        StabilityClass::Unstable
    } else if max < 0.0 && (max - min) <= const_tol * mean.abs() {
        StabilityClass::NonlinearlyStable
    } else if max < 0.0 {
        StabilityClass::LinearlyStable
    } else {
        StabilityClass::Indeterminate
    }
}

/// Manifest of a serialized steady state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateManifest {
    pub tool_version: String,
    #[serde(rename = "L_x")]
    pub length_x: f64,
    #[serde(rename = "L_y")]
    pub length_y: f64,
    pub nx: usize,
    pub ny: usize,
    pub mu: f64,
    pub sigma: f64,
    pub potential: PotentialKind,
    pub profile: DensityProfile,
    pub residuals: SteadyResiduals,
    pub classification: StabilityClass,
    pub upper_bound: f64,
    /// File name to FNV-1a hash of its bytes.
    pub hashes: std::collections::BTreeMap<String, String>,
}

pub const STATE_FIELDS: [&str; 4] = ["f", "rho0", "p0", "h"];

impl SteadyState {
    fn field(&self, name: &str) -> &ScalarField {
        match name {
            "f" => &self.f,
            "rho0" => &self.rho0,
            "p0" => &self.p0,
            "h" => &self.h,
            _ => unreachable!("unknown state field {name}"),
        }
    }

    pub fn manifest(&self) -> Result<StateManifest> {
        let profile = self
            .profile
            .ok_or_else(|| Error::Precondition("only profile-built states can be serialized".into()))?;
        let mut hashes = std::collections::BTreeMap::new();
        for name in STATE_FIELDS {
            hashes.insert(format!("{name}.hsf"), checkpoint::hash_hex(&checkpoint::encode(self.field(name))));
        }
        Ok(StateManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            length_x: self.grid.length_x,
            length_y: self.grid.length_y,
            nx: self.grid.nx,
            ny: self.grid.ny,
            mu: self.mu,
            sigma: self.sigma,
            potential: self.potential.kind.clone(),
            profile,
            residuals: self.residuals,
            classification: classify(self, DEFAULT_CONST_TOL),
            upper_bound: self.upper_bound(),
            hashes,
        })
    }

    /// Writes `f.hsf`, `rho0.hsf`, `p0.hsf`, `h.hsf` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<StateManifest> {
        fs::create_dir_all(dir)?;
        let manifest = self.manifest()?;
        for name in STATE_FIELDS {
            checkpoint::write(&dir.join(format!("{name}.hsf")), self.field(name))?;
        }
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    }

    /// Rebuilds the state from the manifest parameters and checks the stored
    /// checkpoints against both the recorded hashes and the rebuilt fields.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: StateManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let grid = Grid::new(manifest.length_x, manifest.length_y, manifest.nx, manifest.ny)?;
        let pot = PotentialSpec::new(grid, manifest.potential.clone())?;
        let state = build_steady_state(grid, pot, manifest.profile, manifest.mu, manifest.sigma)?;
        for name in STATE_FIELDS {
            let file = format!("{name}.hsf");
            let bytes = fs::read(dir.join(&file))?;
            let want = manifest
                .hashes
                .get(&file)
                .ok_or_else(|| Error::Format(format!("manifest has no hash for {file}")))?;
            if &checkpoint::hash_hex(&bytes) != want {
                return Err(Error::Format(format!("{file} does not match its manifest hash")));
            }
            let stored = checkpoint::decode(&bytes, grid)?;
            let rebuilt = state.field(name);
            if stored.placement != rebuilt.placement {
                return Err(Error::Format(format!("{file} has the wrong placement")));
            }
            let scale = rebuilt.max_abs().max(1.0);
            let gap = stored
                .values
                .iter()
                .zip(rebuilt.values.iter())
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            if gap > 1e-10 * scale {
                return Err(Error::Format(format!(
                    "{file} differs from the state rebuilt from the manifest by {gap:e}"
                )));
            }
        }
        Ok(state)
    }
}

/// Shorthand for the uniform-gravity states used throughout the tests and experiments.
pub fn uniform_gravity_state(
    grid: Grid,
    g: f64,
    profile: DensityProfile,
    mu: f64,
    sigma: f64,
) -> Result<SteadyState> {
    build_steady_state(grid, PotentialSpec::uniform_gravity(grid, g)?, profile, mu, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_state(n: usize, b: f64) -> SteadyState {
        let g = Grid::unit_square(n).unwrap();
        uniform_gravity_state(g, 1.0, DensityProfile::Linear { a: 1.0, b }, 0.01, 0.5).unwrap()
    }

    #[test]
    fn exponential_atmosphere_is_stable_and_balanced() {
        let g = Grid::unit_square(16).unwrap();
        let prof = DensityProfile::Exponential { rho_bar: 1.0, beta: 0.5 };
        let s = uniform_gravity_state(g, 2.0, prof, 0.01, 0.1).unwrap();
        for ((i, j), &r) in s.rho0.values.indexed_iter() {
            let (_, y) = g.position(Placement::Cell, i, j);
            assert!((r - (-y).exp()).abs() < 1e-14);
            assert!(s.h.values[[i, j]] < 0.0);
        }
        assert!(s.residuals.accepted());
        assert_eq!(s.residuals.alignment, 0.0);
        assert_eq!(classify(&s, DEFAULT_CONST_TOL), StabilityClass::LinearlyStable);
    }

    #[test]
    fn linear_profile_classes() {
        assert_eq!(classify(&linear_state(8, 0.1), DEFAULT_CONST_TOL), StabilityClass::Unstable);
        assert_eq!(classify(&linear_state(8, -0.1), DEFAULT_CONST_TOL), StabilityClass::NonlinearlyStable);
    }

    #[test]
    fn pressure_matches_closed_form() {
        // r = 1 - 0.1 t, f = y: P0 = -(y - 0.05 y^2) + c
        let s = linear_state(16, -0.1);
        let g = s.grid;
        let exact = ScalarField::from_fn(g, Placement::Cell, |_, y| -(y - 0.05 * y * y));
        let shift = exact.values.mean().unwrap();
        let err = s
            .p0
            .values
            .iter()
            .zip(exact.values.iter())
            .fold(0.0_f64, |m, (p, e)| m.max((p - (e - shift)).abs()));
        assert!(err <= 1e-8, "pressure error {err}");
        assert!(s.p0.values.mean().unwrap().abs() < 1e-12);
    }

    #[test]
    fn floor_violation_is_a_domain_error() {
        let g = Grid::unit_square(8).unwrap();
        let r = uniform_gravity_state(g, 1.0, DensityProfile::Linear { a: 1.0, b: -0.95 }, 0.01, 0.2);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn crossed_gradients_are_rejected() {
        let g = Grid::unit_square(8).unwrap();
        let pot = PotentialSpec::uniform_gravity(g, 1.0).unwrap();
        let rho0 = ScalarField::from_fn(g, Placement::Cell, |x, _| 1.0 + x);
        let p0 = ScalarField::zeros(g, Placement::Cell);
        let h = ScalarField::zeros(g, Placement::Cell);
        let s = SteadyState::from_fields(pot, rho0, p0, h, 0.01, 0.5).unwrap();
        assert!((s.residuals.alignment - 1.0).abs() < 1e-12);
        assert!(s.ensure_valid().is_err());
    }

    #[test]
    fn radial_and_expression_potentials() {
        let g = Grid::unit_square(12).unwrap();
        let rad = PotentialSpec::radial(g, (0.5, 0.5), 2.0).unwrap();
        assert!(rad.consistency_residual() < 1e-10);
        let expr = PotentialSpec::expression(g, "0.5 * 2.0 * ((x - 0.5)^2 + (y - 0.5)^2)").unwrap();
        for (a, b) in expr.samples.values.iter().zip(rad.samples.values.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in expr.grad_f.u.values.iter().zip(rad.grad_f.u.values.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let prof = DensityProfile::Exponential { rho_bar: 1.0, beta: 1.0 };
        let s = build_steady_state(g, rad, prof, 0.01, 0.1).unwrap();
        assert!(s.residuals.accepted(), "{:?}", s.residuals);
        assert!(PotentialSpec::expression(g, "x +* y").is_err());
    }

    #[test]
    fn tanh_antiderivative_differentiates_to_profile() {
        let p = DensityProfile::Tanh { mean: 1.0, jump: 0.2, t0: 0.5, width: 0.1 };
        for t in [-1.0, 0.0, 0.3, 0.5, 0.8, 2.0] {
            let e = 1e-5;
            let d = (p.antiderivative(t + e) - p.antiderivative(t - e)) / (2.0 * e);
            assert!((d - p.r(t)).abs() < 1e-8);
            let d2 = (p.r(t + e) - p.r(t - e)) / (2.0 * e);
            assert!((d2 - p.r_prime(t)).abs() < 1e-6);
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = linear_state(8, 0.1);
        let m = s.save(dir.path()).unwrap();
        let back = SteadyState::load(dir.path()).unwrap();
        assert_eq!(back.rho0, s.rho0);
        assert_eq!(back.manifest().unwrap(), m);
        // tamper with a checkpoint
        let path = dir.path().join("h.hsf");
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(SteadyState::load(dir.path()), Err(Error::Format(_))));
    }
}
