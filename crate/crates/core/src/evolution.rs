//! Time stepping for the linearized and nonlinear perturbation systems.
//!
//! Velocities are kept in the streamfunction space, so every iterate is
//! divergence-free with zero normal flux and solving the momentum balance there is
//! the density-weighted projection. The pressure is recovered afterwards from the
//! face residual of the momentum balance, which is a discrete gradient.
//!
//! Buoyancy is coupled backward-Euler style in the linearized scheme (and in the
//! nonlinear perturbation-density form): the density update uses the new velocity,
//! which makes the quadratic functional decay step by step on stable backgrounds.

use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::grid::{Grid, Placement, ScalarField, VectorField};
use crate::linalg::{self, BandCholesky, BandMatrix};
use crate::operators::{
    face_axpy, momentum_advection, norms, transport, viscous_form, Advection, BuoyancyForm, FaceMass, StreamSpace,
};
use crate::steady::{neg_divergence, NeumannPoisson, SteadyState};
use crate::variational::GrowthRateResult;

/// Advective CFL number: `dt <= CFL_NUMBER * min(hx, hy) / max(1, max |V|)`.
pub const CFL_NUMBER: f64 = 0.4;
/// PCG iteration count above which the nonlinear preconditioner is rebuilt.
const REFACTOR_ITERS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Linearized,
    Nonlinear,
}

/// How the nonlinear scheme updates density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityForm {
    /// Transport `rho + rho0` conservatively; buoyancy explicit in the new density.
    Total,
    /// Transport the perturbation, then apply `-h V . grad f` with the new velocity.
    Perturbation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeStepperConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub advection: Advection,
    pub density_form: DensityForm,
    pub projection_tol: f64,
    pub max_projection_iter: usize,
}

impl Default for TimeStepperConfig {
    fn default() -> Self {
        TimeStepperConfig {
            dt: 1e-3,
            scheme: Scheme::Linearized,
            advection: Advection::Upwind1,
            density_form: DensityForm::Total,
            projection_tol: 1e-10,
            max_projection_iter: 500,
        }
    }
}

impl TimeStepperConfig {
    /// Default settings with the largest step allowed for velocities up to 1.
    pub fn for_grid(grid: &Grid, scheme: Scheme) -> Self {
        TimeStepperConfig {
            dt: cfl_limit(grid, 0.0),
            scheme,
            ..Default::default()
        }
    }

    /// Whether the density update uses the new velocity inside the implicit solve.
    fn coupled(&self) -> bool {
        self.scheme == Scheme::Linearized || self.density_form == DensityForm::Perturbation
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Domain(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.projection_tol > 0.0 && self.projection_tol < 1.0) {
            return Err(Error::Domain(format!("projection_tol out of range: {}", self.projection_tol)));
        }
        if self.max_projection_iter == 0 {
            return Err(Error::Domain("max_projection_iter must be positive".into()));
        }
        Ok(())
    }
}

pub fn cfl_limit(grid: &Grid, vmax: f64) -> f64 {
    CFL_NUMBER * grid.min_spacing() / vmax.max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationState {
    pub t: f64,
    pub v: VectorField,
    pub rho: ScalarField,
    /// Zero-mean perturbation pressure.
    pub p: ScalarField,
}

impl PerturbationState {
    pub fn zeros(grid: Grid) -> Self {
        PerturbationState {
            t: 0.0,
            v: VectorField::zeros(grid),
            rho: ScalarField::zeros(grid, Placement::Cell),
            p: ScalarField::zeros(grid, Placement::Cell),
        }
    }

    /// Initial data at `t = 0` with zero pressure.
    pub fn new(v: VectorField, rho: ScalarField) -> Result<Self> {
        v.check()?;
        let grid = v.grid();
        if rho.grid != grid || rho.placement != Placement::Cell {
            return Err(Error::Structural("density must be a cell field on the velocity grid".into()));
        }
        let s = PerturbationState {
            t: 0.0,
            v,
            rho,
            p: ScalarField::zeros(grid, Placement::Cell),
        };
        s.check_invariants()?;
        Ok(s)
    }

    /// `amplitude * (u0, theta0)`.
    pub fn eigenmode(mode: &GrowthRateResult, amplitude: f64) -> Self {
        let grid = mode.mode_theta.grid;
        PerturbationState {
            t: 0.0,
            v: mode.mode_u.velocity.scaled(amplitude),
            rho: mode.mode_theta.scaled(amplitude),
            p: ScalarField::zeros(grid, Placement::Cell),
        }
    }

    pub fn grid(&self) -> Grid {
        self.rho.grid
    }

    pub fn scaled(&self, a: f64) -> Self {
        PerturbationState {
            t: self.t,
            v: self.v.scaled(a),
            rho: self.rho.scaled(a),
            p: self.p.scaled(a),
        }
    }

    pub fn divergence_residual(&self) -> f64 {
        crate::grid::divergence(&self.v).map(|d| d.max_abs()).unwrap_or(f64::INFINITY)
    }

    pub fn div_tol(&self) -> f64 {
        1e-10 * self.v.max_abs().max(f64::MIN_POSITIVE) / self.grid().min_spacing()
    }

    pub fn check_invariants(&self) -> Result<()> {
        if !(self.v.is_finite() && self.rho.is_finite()) {
            return Err(Error::numerical("perturbation state is not finite", f64::NAN));
        }
        let b = self.v.boundary_max_abs();
        if b > 0.0 {
            return Err(Error::Precondition(format!("normal velocity on the walls is {b:e}, not zero")));
        }
        let div = self.divergence_residual();
        if div > self.div_tol() {
            return Err(Error::Precondition(format!(
                "velocity divergence {div:e} exceeds {:e}",
                self.div_tol()
            )));
        }
        Ok(())
    }
}

/// Checkpoint file names written by [`PerturbationState::save`].
pub const STATE_FILES: [&str; 4] = ["u.hsf", "v.hsf", "rho.hsf", "p.hsf"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StateHeader {
    t: f64,
    nx: usize,
    ny: usize,
    length_x: f64,
    length_y: f64,
    hashes: std::collections::BTreeMap<String, String>,
}

impl PerturbationState {
    fn parts(&self) -> [&ScalarField; 4] {
        [&self.v.u, &self.v.v, &self.rho, &self.p]
    }

    /// Writes the four fields as HSF1 checkpoints plus `state.json` (time, grid, hashes).
    /// Returns file name to hash for everything written.
    pub fn save(&self, dir: &Path) -> Result<std::collections::BTreeMap<String, String>> {
        std::fs::create_dir_all(dir)?;
        let g = self.grid();
        let mut hashes = std::collections::BTreeMap::new();
        for (name, field) in STATE_FILES.iter().zip(self.parts()) {
            let bytes = checkpoint::write(&dir.join(name), field)?;
            hashes.insert(name.to_string(), checkpoint::hash_hex(&bytes));
        }
        let header = StateHeader {
            t: self.t,
            nx: g.nx,
            ny: g.ny,
            length_x: g.length_x,
            length_y: g.length_y,
            hashes: hashes.clone(),
        };
        let text = serde_json::to_string_pretty(&header)? + "\n";
        std::fs::write(dir.join("state.json"), &text)?;
        hashes.insert("state.json".into(), checkpoint::hash_hex(text.as_bytes()));
        Ok(hashes)
    }

    /// Reads a directory written by [`save`](Self::save), checking hashes, grid and invariants.
    pub fn load(dir: &Path, grid: Grid) -> Result<Self> {
        let header: StateHeader = serde_json::from_str(&std::fs::read_to_string(dir.join("state.json"))?)?;
        if (header.nx, header.ny) != (grid.nx, grid.ny)
            || header.length_x != grid.length_x
            || header.length_y != grid.length_y
        {
            return Err(Error::Structural(format!(
                "checkpoint grid {}x{} does not match the state grid {}x{}",
                header.nx, header.ny, grid.nx, grid.ny
            )));
        }
        let mut fields = Vec::with_capacity(4);
        for name in STATE_FILES {
            let bytes = std::fs::read(dir.join(name))?;
            if header.hashes.get(name) != Some(&checkpoint::hash_hex(&bytes)) {
                return Err(Error::Format(format!("{name} does not match its recorded hash")));
            }
            fields.push(checkpoint::decode(&bytes, grid)?);
        }
        let mut it = fields.into_iter();
        let (u, v, rho, p) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        if rho.placement != Placement::Cell || p.placement != Placement::Cell {
            return Err(Error::Structural("density and pressure checkpoints must be cell fields".into()));
        }
        let state = PerturbationState {
            t: header.t,
            v: VectorField::new(u, v)?,
            rho,
            p,
        };
        state.check_invariants()?;
        Ok(state)
    }
}

/// Banded Cholesky factor of `C^T [M(weight)/dt + mu K - c dt B] C`, `c = 1` for coupled schemes.
fn step_factor(
    space: &StreamSpace,
    k_band: &BandMatrix,
    b_band: &BandMatrix,
    bg: &SteadyState,
    cfg: &TimeStepperConfig,
    weight: &Array2<f64>,
) -> Result<BandCholesky> {
    let mass = FaceMass::new(weight, bg.grid);
    let m_band = space.band(|v| mass.apply(v));
    let dt = cfg.dt;
    let coupling = if cfg.coupled() { -dt } else { 0.0 };
    let band = BandMatrix::combine(&[(&m_band, 1.0 / dt), (k_band, bg.mu), (b_band, coupling)]);
    band.cholesky().map_err(|_| {
        Error::numerical(
            format!("step operator is not positive definite at dt = {dt}; reduce dt"),
            f64::NAN,
        )
    })
}

/// One-step integrator bound to a background state.
pub struct Stepper<'a> {
    bg: &'a SteadyState,
    cfg: TimeStepperConfig,
    space: StreamSpace,
    buoy: BuoyancyForm,
    k_band: BandMatrix,
    b_band: BandMatrix,
    factor: BandCholesky,
    poisson: Option<NeumannPoisson>,
    psi: Vec<f64>,
    pub last_iterations: usize,
    pub refactorizations: usize,
}

impl<'a> Stepper<'a> {
    pub fn new(bg: &'a SteadyState, cfg: TimeStepperConfig) -> Result<Self> {
        cfg.validate()?;
        bg.ensure_valid()?;
        let space = StreamSpace::new(bg.grid);
        let buoy = bg.buoyancy();
        let k_band = space.band(viscous_form);
        let b_band = space.band(|v| buoy.b(v));
        let factor = step_factor(&space, &k_band, &b_band, bg, &cfg, &bg.rho0.values)?;
        Ok(Stepper {
            bg,
            cfg,
            space,
            buoy,
            k_band,
            b_band,
            factor,
            poisson: None,
            psi: vec![0.0; space.dim()],
            last_iterations: 0,
            refactorizations: 1,
        })
    }

    pub fn config(&self) -> &TimeStepperConfig {
        &self.cfg
    }

    fn coupled(&self) -> bool {
        self.cfg.coupled()
    }

    fn refactor(&mut self, weight: &Array2<f64>) -> Result<()> {
        self.factor = step_factor(&self.space, &self.k_band, &self.b_band, self.bg, &self.cfg, weight)?;
        self.refactorizations += 1;
        Ok(())
    }

    fn pressure(&mut self, residual: &VectorField) -> Result<ScalarField> {
        let g = self.bg.grid;
        if self.poisson.is_none() {
            self.poisson = Some(NeumannPoisson::new(g)?);
        }
        // face residual R = -w G P on interior faces
        let w = g.cell_area();
        let mut gu = residual.u.values.mapv(|r| -r / w);
        let mut gv = residual.v.values.mapv(|r| -r / w);
        for j in 0..g.ny {
            gu[[0, j]] = 0.0;
            gu[[g.nx, j]] = 0.0;
        }
        for i in 0..g.nx {
            gv[[i, 0]] = 0.0;
            gv[[i, g.ny]] = 0.0;
        }
        let rhs = neg_divergence(&gu, &gv, &g);
        let tol = self.cfg.projection_tol;
        let (p, _) = self.poisson.as_ref().expect("poisson").solve(&rhs, tol, self.cfg.max_projection_iter)?;
        ScalarField::from_array(g, Placement::Cell, p)
    }

    pub fn step(&mut self, state: &PerturbationState) -> Result<PerturbationState> {
        self.step_with(state, true)
    }

    /// Advances one step; with `recover_pressure == false` the old pressure is carried over.
    pub fn step_with(&mut self, state: &PerturbationState, recover_pressure: bool) -> Result<PerturbationState> {
        let g = self.bg.grid;
        if state.grid() != g {
            return Err(Error::Structural("perturbation lives on a different grid".into()));
        }
        let dt = self.cfg.dt;
        let limit = cfl_limit(&g, state.v.max_abs());
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt, limit });
        }
        let w = g.cell_area();
        let mu = self.bg.mu;
        let h = &self.bg.h.values;
        let rho0 = &self.bg.rho0.values;
        let vn = &state.v;

        let (weight, rho_force, advective) = match self.cfg.scheme {
            Scheme::Linearized => (rho0.clone(), state.rho.values.clone(), None),
            Scheme::Nonlinear => {
                let floor = 0.5 * self.bg.sigma;
                let total = rho0 + &state.rho.values;
                let tmin = total.fold(f64::INFINITY, |a, &b| a.min(b));
                if tmin < floor {
                    return Err(Error::DensityFloor { min: tmin, floor });
                }
                let (weight, rho_force) = match self.cfg.density_form {
                    DensityForm::Total => {
                        let moved = transport(&total, vn, dt, self.cfg.advection);
                        let pert = &moved - rho0;
                        (moved, pert)
                    }
                    DensityForm::Perturbation => {
                        let moved = transport(&state.rho.values, vn, dt, self.cfg.advection);
                        (rho0 + &moved, moved)
                    }
                };
                let wmin = weight.fold(f64::INFINITY, |a, &b| a.min(b));
                if wmin < floor {
                    return Err(Error::DensityFloor { min: wmin, floor });
                }
                (weight, rho_force, Some(momentum_advection(vn)))
            }
        };
        let coupled = self.coupled();
        let mass = FaceMass::new(&weight, g);

        // right-hand side C^T [M (V/dt - N) - Q^T (w rho)]
        let mut rhs_face = mass.apply(vn).scaled(1.0 / dt);
        if let Some(n) = &advective {
            face_axpy(&mut rhs_face, -1.0, &mass.apply(n));
        }
        face_axpy(&mut rhs_face, -w, &self.buoy.q_t(&rho_force));
        let rhs = self.space.curl_t(&rhs_face);

        let psi = match self.cfg.scheme {
            Scheme::Linearized => {
                self.last_iterations = 0;
                self.factor.solve(&rhs)
            }
            Scheme::Nonlinear => {
                let space = self.space;
                let buoy = &self.buoy;
                let factor = &self.factor;
                let mut x = self.psi.clone();
                let out = linalg::pcg(
                    |x, y| {
                        let v = space.curl(x);
                        let mut f = mass.apply(&v).scaled(1.0 / dt);
                        face_axpy(&mut f, mu, &viscous_form(&v));
                        if coupled {
                            face_axpy(&mut f, -dt, &buoy.b(&v));
                        }
                        y.copy_from_slice(&space.curl_t(&f));
                    },
                    |r, z| {
                        z.copy_from_slice(r);
                        factor.solve_in_place(z);
                    },
                    &rhs,
                    &mut x,
                    self.cfg.projection_tol,
                    self.cfg.max_projection_iter,
                    false,
                )?;
                self.last_iterations = out.iterations;
                if out.iterations > REFACTOR_ITERS {
                    self.refactor(&weight)?;
                }
                x
            }
        };
        let v1 = self.space.curl(&psi);
        self.psi = psi;
        let rho1 = if coupled {
            let q = self.buoy.q(&v1);
            Array2::from_shape_fn(q.dim(), |(i, j)| rho_force[[i, j]] - dt * h[[i, j]] * q[[i, j]])
        } else {
            rho_force
        };

        let p = if recover_pressure {
            let mut dv = v1.clone();
            face_axpy(&mut dv, -1.0, vn);
            let mut r = mass.apply(&dv).scaled(1.0 / dt);
            face_axpy(&mut r, mu, &viscous_form(&v1));
            face_axpy(&mut r, w, &self.buoy.q_t(&rho1));
            if let Some(n) = &advective {
                face_axpy(&mut r, 1.0, &mass.apply(n));
            }
            self.pressure(&r)?
        } else {
            state.p.clone()
        };

        let next = PerturbationState {
            t: state.t + dt,
            v: v1,
            rho: ScalarField::from_array(g, Placement::Cell, rho1)
                .map_err(|_| Error::numerical("density became non-finite", f64::NAN))?,
            p,
        };
        if !next.v.is_finite() {
            return Err(Error::numerical("velocity became non-finite", f64::NAN));
        }
        let div = next.divergence_residual();
        if div > next.div_tol() {
            return Err(Error::numerical("projection left a divergent velocity", div));
        }
        Ok(next)
    }
}

pub fn step_linearized(state: &PerturbationState, bg: &SteadyState, cfg: &TimeStepperConfig) -> Result<PerturbationState> {
    if cfg.scheme != Scheme::Linearized {
        return Err(Error::Precondition("step_linearized needs scheme = linearized".into()));
    }
    Stepper::new(bg, *cfg)?.step(state)
}

pub fn step_nonlinear(state: &PerturbationState, bg: &SteadyState, cfg: &TimeStepperConfig) -> Result<PerturbationState> {
    if cfg.scheme != Scheme::Nonlinear {
        return Err(Error::Precondition("step_nonlinear needs scheme = nonlinear".into()));
    }
    Stepper::new(bg, *cfg)?.step(state)
}

/// One row of the diagnostics time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub t: f64,
    pub v_l1: f64,
    pub v_l2: f64,
    /// L2 norms of the horizontal and vertical components.
    pub vx_l2: f64,
    pub vy_l2: f64,
    pub v_h1: f64,
    pub rho_l1: f64,
    pub rho_l2: f64,
    /// `V^T M V` with weight `rho0` (linearized) or `rho + rho0` (nonlinear).
    pub kinetic: f64,
    /// `sum w rho^2 / (-h)`; NaN unless `h < 0` in every cell.
    pub potential: f64,
    pub functional: f64,
    /// `mu E1(V)`.
    pub dissipation: f64,
    pub div_max: f64,
    pub min_total_density: f64,
    pub max_total_density: f64,
    pub projection_iterations: usize,
}

pub const DIAGNOSTICS_HEADER: &str = "t,v_l1,v_l2,vx_l2,vy_l2,v_h1,rho_l1,rho_l2,kinetic,potential,functional,dissipation,div_max,min_total_density,max_total_density,projection_iterations";

pub fn diagnostics(state: &PerturbationState, bg: &SteadyState, scheme: Scheme) -> Diagnostics {
    let g = state.grid();
    let w = g.cell_area();
    let total = &bg.rho0.values + &state.rho.values;
    let weight = match scheme {
        Scheme::Linearized => bg.rho0.values.clone(),
        Scheme::Nonlinear => total.clone(),
    };
    let kinetic = FaceMass::new(&weight, g).energy(&state.v);
    let potential = if bg.h.values.iter().all(|&h| h < 0.0) {
        state
            .rho
            .values
            .iter()
            .zip(bg.h.values.iter())
            .map(|(r, h)| w * r * r / (-h))
            .sum()
    } else {
        f64::NAN
    };
    Diagnostics {
        t: state.t,
        v_l1: norms::velocity_l1(&state.v),
        v_l2: norms::velocity_l2(&state.v),
        vx_l2: norms::component_l2(&state.v.u),
        vy_l2: norms::component_l2(&state.v.v),
        v_h1: norms::velocity_h1(&state.v),
        rho_l1: norms::cell_lp(&state.rho.values, &g, 1),
        rho_l2: norms::cell_lp(&state.rho.values, &g, 2),
        kinetic,
        potential,
        functional: kinetic + potential,
        dissipation: bg.mu * crate::operators::dirichlet_energy(&state.v),
        div_max: state.divergence_residual(),
        min_total_density: total.fold(f64::INFINITY, |a, &b| a.min(b)),
        max_total_density: total.fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
        projection_iterations: 0,
    }
}

impl Diagnostics {
    fn values(&self) -> [f64; 15] {
        [
            self.t,
            self.v_l1,
            self.v_l2,
            self.vx_l2,
            self.vy_l2,
            self.v_h1,
            self.rho_l1,
            self.rho_l2,
            self.kinetic,
            self.potential,
            self.functional,
            self.dissipation,
            self.div_max,
            self.min_total_density,
            self.max_total_density,
        ]
    }
}

pub fn diagnostics_csv(rows: &[Diagnostics]) -> String {
    let mut out = String::from(DIAGNOSTICS_HEADER);
    out.push('\n');
    for r in rows {
        for v in r.values() {
            let _ = write!(out, "{v:?},");
        }
        let _ = writeln!(out, "{}", r.projection_iterations);
    }
    out
}

pub fn write_diagnostics_csv(path: &Path, rows: &[Diagnostics]) -> Result<()> {
    std::fs::write(path, diagnostics_csv(rows))?;
    Ok(())
}

pub fn parse_diagnostics_csv(text: &str) -> Result<Vec<Diagnostics>> {
    let mut lines = text.lines();
    if lines.next() != Some(DIAGNOSTICS_HEADER) {
        return Err(Error::Format("diagnostics header mismatch".into()));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 16 {
            return Err(Error::Format(format!("diagnostics row {} has {} columns", k + 1, parts.len())));
        }
        let mut x = [0.0; 15];
        for (slot, s) in x.iter_mut().zip(&parts) {
            *slot = s
                .parse()
                .map_err(|_| Error::Format(format!("bad number {s:?} in diagnostics row {}", k + 1)))?;
        }
        let iters = parts[15]
            .parse()
            .map_err(|_| Error::Format(format!("bad iteration count in diagnostics row {}", k + 1)))?;
        rows.push(Diagnostics {
            t: x[0],
            v_l1: x[1],
            v_l2: x[2],
            vx_l2: x[3],
            vy_l2: x[4],
            v_h1: x[5],
            rho_l1: x[6],
            rho_l2: x[7],
            kinetic: x[8],
            potential: x[9],
            functional: x[10],
            dissipation: x[11],
            div_max: x[12],
            min_total_density: x[13],
            max_total_density: x[14],
            projection_iterations: iters,
        });
    }
    Ok(rows)
}

/// Sampled-state callback; returning `Break` ends the run after this sample.
pub trait Observer {
    fn observe(&mut self, diag: &Diagnostics, state: &PerturbationState) -> ControlFlow<()>;
}

impl<F: FnMut(&Diagnostics, &PerturbationState) -> ControlFlow<()>> Observer for F {
    fn observe(&mut self, diag: &Diagnostics, state: &PerturbationState) -> ControlFlow<()> {
        self(diag, state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub t_end: f64,
    /// Steps between samples.
    pub cadence: usize,
    /// Keep the sampled states in the trajectory.
    pub keep_states: bool,
}

impl RunOptions {
    pub fn new(t_end: f64, cadence: usize) -> Self {
        RunOptions {
            t_end,
            cadence,
            keep_states: false,
        }
    }
}

#[derive(Debug)]
pub struct Trajectory {
    pub samples: Vec<Diagnostics>,
    pub states: Vec<PerturbationState>,
    pub final_state: PerturbationState,
    pub steps: usize,
    pub stopped_early: bool,
    /// Step failure that ended the run (CFL collapse, density floor, solver breakdown).
    pub failure: Option<Error>,
}

/// Number of steps `run` takes: whole steps only, `floor(t_end / dt)`.
pub fn step_count(t_end: f64, dt: f64) -> usize {
    (t_end / dt * (1.0 + 1e-12)).floor() as usize
}

/// Like [`run`], but a failing step ends the run and is stored in `failure`.
pub fn run_partial(
    state0: &PerturbationState,
    bg: &SteadyState,
    cfg: &TimeStepperConfig,
    opts: RunOptions,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    if !(opts.t_end >= 0.0 && opts.t_end.is_finite()) {
        return Err(Error::Domain(format!("t_end must be nonnegative, got {}", opts.t_end)));
    }
    if opts.cadence == 0 {
        return Err(Error::Domain("cadence must be at least 1".into()));
    }
    state0.check_invariants()?;
    let mut stepper = Stepper::new(bg, *cfg)?;
    let nsteps = step_count(opts.t_end, cfg.dt);
    let mut traj = Trajectory {
        samples: Vec::new(),
        states: Vec::new(),
        final_state: state0.clone(),
        steps: 0,
        stopped_early: false,
        failure: None,
    };
    let mut sample = |traj: &mut Trajectory, st: &PerturbationState, iters: usize| -> bool {
        let mut d = diagnostics(st, bg, cfg.scheme);
        d.projection_iterations = iters;
        traj.samples.push(d);
        if opts.keep_states {
            traj.states.push(st.clone());
        }
        let mut stop = false;
        for o in observers.iter_mut() {
            if o.observe(&d, st).is_break() {
                stop = true;
            }
        }
        stop
    };
    if sample(&mut traj, state0, 0) {
        traj.stopped_early = true;
        return Ok(traj);
    }
    let mut current = state0.clone();
    let mut max_iters = 0;
    for k in 1..=nsteps {
        let at_sample = k % opts.cadence == 0;
        match stepper.step_with(&current, at_sample) {
            Ok(next) => current = next,
            Err(e) => {
                traj.failure = Some(e);
                break;
            }
        }
        traj.steps = k;
        max_iters = max_iters.max(stepper.last_iterations);
        if at_sample {
            let stop = sample(&mut traj, &current, max_iters);
            max_iters = 0;
            if stop {
                traj.stopped_early = true;
                break;
            }
        }
    }
    traj.final_state = current;
    Ok(traj)
}

/// Steps from `state0` to `t_end`, sampling diagnostics every `cadence` steps
/// (including the initial state). The sample count is `floor(t_end / (cadence dt)) + 1`
/// unless an observer stops the run.
pub fn run(
    state0: &PerturbationState,
    bg: &SteadyState,
    cfg: &TimeStepperConfig,
    opts: RunOptions,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    let mut traj = run_partial(state0, bg, cfg, opts, observers)?;
    match traj.failure.take() {
        Some(e) => Err(e),
        None => Ok(traj),
    }
}
