//! The constrained Rayleigh quotient `Phi(s) = max { -s mu E1(u) + E2(u) : J(u) = 1 }`
//! over divergence-free no-slip fields, and the growth rate `Lambda^2 = Phi(Lambda)`.
//!
//! Trial fields are curls of interior streamfunctions, so the maximization is the
//! top eigenvalue of `A(s) psi = alpha M psi` with `A(s) = C^T (-s mu K + B) C` and
//! `M = C^T M_rho0 C`. The top pair is found by LOBPCG preconditioned with a banded
//! Cholesky factor of `sigma M - A(s)`, `sigma` above the top eigenvalue.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Placement, ScalarField, VectorField};
use crate::linalg::{self, BandCholesky, BandMatrix, Pencil};
use crate::operators::{dirichlet_energy, face_axpy, viscous_form, BuoyancyForm, FaceMass, StreamSpace};
use crate::steady::SteadyState;

/// A divergence-free velocity given by a clamped node streamfunction.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialField {
    pub psi: ScalarField,
    pub velocity: VectorField,
    /// `J(u)` under the background density.
    pub j_value: f64,
    pub normalized: bool,
}

impl TrialField {
    /// Builds the trial field of a node streamfunction vanishing on the boundary.
    pub fn from_psi(state: &SteadyState, psi: ScalarField) -> Result<Self> {
        if psi.grid != state.grid {
            return Err(Error::Structural("streamfunction lives on a different grid".into()));
        }
        let velocity = crate::grid::curl_streamfunction(&psi)?;
        let j_value = FaceMass::new(&state.rho0.values, state.grid).energy(&velocity);
        Ok(TrialField {
            psi,
            velocity,
            j_value,
            normalized: false,
        })
    }

    pub fn from_interior(state: &SteadyState, psi: &[f64]) -> Result<Self> {
        let space = StreamSpace::new(state.grid);
        if psi.len() != space.dim() {
            return Err(Error::Structural(format!(
                "expected {} interior streamfunction values, got {}",
                space.dim(),
                psi.len()
            )));
        }
        Self::from_psi(state, space.embed(psi))
    }

    /// Rescales so that `J(u) = 1`.
    pub fn normalize(mut self) -> Result<Self> {
        if !(self.j_value > 0.0) {
            return Err(Error::Precondition("cannot normalize a zero trial field".into()));
        }
        let c = 1.0 / self.j_value.sqrt();
        self.psi = self.psi.scaled(c);
        self.velocity = self.velocity.scaled(c);
        self.j_value *= c * c;
        self.normalized = true;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyForms {
    pub e1: f64,
    pub e2: f64,
    pub j: f64,
    pub e: f64,
}

pub fn energy_forms(state: &SteadyState, u: &TrialField, s: f64) -> Result<EnergyForms> {
    velocity_forms(state, &u.velocity, s)
}

pub(crate) fn velocity_forms(state: &SteadyState, v: &VectorField, s: f64) -> Result<EnergyForms> {
    if v.grid() != state.grid {
        return Err(Error::Structural("trial field lives on a different grid".into()));
    }
    let e1 = dirichlet_energy(v);
    let e2 = state.buoyancy().e2(v);
    let j = FaceMass::new(&state.rho0.values, state.grid).energy(v);
    Ok(EnergyForms {
        e1,
        e2,
        j,
        e: -s * state.mu * e1 + e2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigOptions {
    pub eig_tol: f64,
    pub max_iter: usize,
}

impl Default for EigOptions {
    fn default() -> Self {
        EigOptions {
            eig_tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhiEvaluation {
    pub s: f64,
    pub phi: f64,
    pub maximizer: TrialField,
    pub iterations: usize,
    pub residual: f64,
    /// Gap between the two leading Ritz values; near zero flags a degenerate top eigenspace.
    pub degeneracy_gap: f64,
    /// `E1` of the J-normalized maximizer.
    pub e1: f64,
}

struct StreamPencil<'a> {
    space: StreamSpace,
    buoy: &'a BuoyancyForm,
    mass: &'a FaceMass,
    s_mu: f64,
    precond: &'a BandCholesky,
    norms: (f64, f64, f64),
}

impl Pencil for StreamPencil<'_> {
    fn dim(&self) -> usize {
        self.space.dim()
    }

    fn apply_a(&self, x: &[f64], y: &mut [f64]) {
        let v = self.space.curl(x);
        let mut f = self.buoy.b(&v);
        face_axpy(&mut f, -self.s_mu, &viscous_form(&v));
        y.copy_from_slice(&self.space.curl_t(&f));
    }

    fn apply_m(&self, x: &[f64], y: &mut [f64]) {
        let v = self.space.curl(x);
        y.copy_from_slice(&self.space.curl_t(&self.mass.apply(&v)));
    }

    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
        self.precond.solve_in_place(z);
    }

    /// Normwise backward error denominator `(s mu |K| + |B| + |alpha| |M|) |x|`.
    fn residual_scale(&self, alpha: f64, x: &[f64], _ax: &[f64], _mx: &[f64]) -> f64 {
        let (k, b, m) = self.norms;
        (self.s_mu * k + b + alpha.abs() * m) * linalg::norm(x)
    }
}

/// Loose tolerance for the first pass that locates the top eigenvalue before the
/// shift is tightened.
const SHIFT_PROBE_TOL: f64 = 1e-5;

/// Reusable state for repeated `Phi` evaluations on one background.
pub struct PhiSolver<'a> {
    state: &'a SteadyState,
    space: StreamSpace,
    buoy: BuoyancyForm,
    mass: FaceMass,
    opts: EigOptions,
    upper_bound: f64,
    /// Streamfunction-space bands of `K`, `B` and `M_rho0`.
    k_band: BandMatrix,
    b_band: BandMatrix,
    m_band: BandMatrix,
    norms: (f64, f64, f64),
    factor: Option<(f64, f64, BandCholesky)>,
    /// Converged `(s, phi, block)` records used for warm starts and shift bounds.
    history: Vec<(f64, f64, Vec<Vec<f64>>)>,
    pub factorizations: usize,
}

fn initial_block(grid: &Grid) -> Vec<Vec<f64>> {
    let space = StreamSpace::new(*grid);
    let (lx, ly) = (grid.length_x, grid.length_y);
    let pi = std::f64::consts::PI;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut make = |kx: f64, ky: f64| -> Vec<f64> {
        let node = ScalarField::from_fn(*grid, Placement::Node, |x, y| {
            (kx * pi * x / lx).sin() * (ky * pi * y / ly).sin()
        });
        space
            .restrict(&node)
            .into_iter()
            .map(|v| v + 1e-3 * rng.gen_range(-1.0..1.0))
            .collect()
    };
    vec![make(1.0, 1.0), make(2.0, 1.0)]
}

impl<'a> PhiSolver<'a> {
    pub fn new(state: &'a SteadyState, opts: EigOptions) -> Result<Self> {
        state.ensure_valid()?;
        let grid = state.grid;
        if grid.interior_nodes() < 3 {
            return Err(Error::Domain("grid too small for the eigenproblem".into()));
        }
        let buoy = state.buoyancy();
        let upper_bound = buoy.upper_bound(&state.rho0);
        let space = StreamSpace::new(grid);
        let mass = FaceMass::new(&state.rho0.values, grid);
        let k_band = space.band(viscous_form);
        let b_band = space.band(|v| buoy.b(v));
        let m_band = space.band(|v| mass.apply(v));
        let norms = (k_band.norm_inf(), b_band.norm_inf(), m_band.norm_inf());
        Ok(PhiSolver {
            state,
            space,
            mass,
            buoy,
            opts,
            upper_bound,
            k_band,
            b_band,
            m_band,
            norms,
            factor: None,
            history: Vec::new(),
            factorizations: 0,
        })
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }

    /// Smallest known upper bound on `Phi(s)`: the a-priori bound and any converged
    /// value at a smaller `s` (Phi is nonincreasing).
    fn known_upper(&self, s: f64) -> f64 {
        let mut u = self.upper_bound;
        for (s0, p0, _) in &self.history {
            if *s0 <= s {
                u = u.min(*p0 + 1e-9 * (1.0 + p0.abs()));
            }
        }
        u
    }

    fn margin(&self, estimate: f64) -> f64 {
        let scale = self.upper_bound.abs().max(estimate.abs()).max(1e-12);
        (0.1 * estimate.abs()).max(1e-3 * scale)
    }

    /// Factors `sigma M - A(s)`, raising `sigma` on a failed pivot.
    fn factor_at(&mut self, s: f64, mut sigma: f64) -> Result<()> {
        let step = self.margin(sigma);
        for _ in 0..30 {
            let band = BandMatrix::combine(&[
                (&self.m_band, sigma),
                (&self.k_band, s * self.state.mu),
                (&self.b_band, -1.0),
            ]);
            self.factorizations += 1;
            if let Ok(ch) = band.cholesky() {
                self.factor = Some((s, sigma, ch));
                return Ok(());
            }
            sigma += step;
        }
        Err(Error::numerical("could not factor the shifted preconditioner", sigma))
    }

    fn warm_start(&self, s: f64) -> Vec<Vec<f64>> {
        self.history
            .iter()
            .min_by(|a, b| (a.0 - s).abs().total_cmp(&(b.0 - s).abs()))
            .map(|h| h.2.clone())
            .unwrap_or_else(|| initial_block(&self.state.grid))
    }

    fn run(&self, s: f64, init: Vec<Vec<f64>>, tol: f64) -> Result<linalg::EigenPairs> {
        let (_, _, ch) = self.factor.as_ref().expect("factor");
        let pencil = StreamPencil {
            space: self.space,
            buoy: &self.buoy,
            mass: &self.mass,
            s_mu: s * self.state.mu,
            precond: ch,
            norms: self.norms,
        };
        linalg::lobpcg_max(&pencil, init, tol, self.opts.max_iter)
    }

    pub fn phi(&mut self, s: f64) -> Result<PhiEvaluation> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Domain(format!("s must be positive, got {s}")));
        }
        let upper = self.known_upper(s);
        let reuse = match &self.factor {
            Some((sf, sigma, _)) => {
                (s - sf).abs() <= 0.05 * sf && *sigma >= upper && *sigma <= upper + 4.0 * self.margin(upper)
            }
            None => false,
        };
        if !reuse {
            let sigma = upper + self.margin(upper);
            self.factor_at(s, sigma)?;
        }
        let mut init = self.warm_start(s);
        let (_, sigma, _) = self.factor.as_ref().expect("factor");
        let sigma = *sigma;
        if self.history.is_empty() {
            // locate the top eigenvalue loosely, then move the shift just above it
            let rough = self.run(s, init, SHIFT_PROBE_TOL.max(self.opts.eig_tol))?;
            let est = rough.values[0];
            let target = est + self.margin(est);
            if target < sigma {
                self.factor_at(s, target)?;
            }
            init = rough.vectors;
        }
        let pairs = self.run(s, init, self.opts.eig_tol)?;
        let phi = pairs.values[0];
        let gap = pairs.values[0] - pairs.values[1];
        let mut top = pairs.vectors[0].clone();
        // deterministic sign: largest-magnitude entry positive
        let imax = top
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if top[imax] < 0.0 {
            top.iter_mut().for_each(|v| *v = -*v);
        }
        let maximizer = TrialField::from_interior(self.state, &top)?.normalize()?;
        let e1 = dirichlet_energy(&maximizer.velocity);
        if phi > self.upper_bound + 1e-10 * (1.0 + self.upper_bound.abs()) {
            return Err(Error::SolverQuality(format!(
                "Phi({s}) = {phi} exceeds the a-priori bound {}",
                self.upper_bound
            )));
        }
        self.history.push((s, phi, pairs.vectors.clone()));
        Ok(PhiEvaluation {
            s,
            phi,
            maximizer,
            iterations: pairs.iterations,
            residual: pairs.residual,
            degeneracy_gap: gap,
            e1,
        })
    }
}

pub fn phi(state: &SteadyState, s: f64, opts: EigOptions) -> Result<PhiEvaluation> {
    PhiSolver::new(state, opts)?.phi(s)
}

/// Monotonicity tolerance for computed pairs `s1 < s2`.
pub fn monotone_tolerance(phi1: f64) -> f64 {
    1e-9 * (1.0 + phi1.abs())
}

#[derive(Debug, Clone)]
pub struct PhiSweep {
    pub evaluations: Vec<PhiEvaluation>,
    /// Largest `(Phi(s1) - Phi(s2)) / (s2 - s1)` over adjacent pairs.
    pub lipschitz_quotient: f64,
    /// `(upper_bound - Phi(b)) / a`, bounding the quotient on `[a, b]`.
    pub lipschitz_bound: f64,
}

/// Evaluates `Phi` along ascending `s_values`, warm-starting each solve, and checks
/// monotonicity and the one-sided bound `Phi(s1) - Phi(s2) <= (s2 - s1) mu E1(u_{s1})`.
pub fn phi_sweep(state: &SteadyState, s_values: &[f64], opts: EigOptions) -> Result<PhiSweep> {
    if s_values.is_empty() {
        return Ok(PhiSweep {
            evaluations: vec![],
            lipschitz_quotient: 0.0,
            lipschitz_bound: 0.0,
        });
    }
    if s_values.windows(2).any(|w| !(w[0] < w[1])) || !(s_values[0] > 0.0) {
        return Err(Error::Domain("s values must be positive and strictly ascending".into()));
    }
    let mut solver = PhiSolver::new(state, opts)?;
    let mut evals = Vec::with_capacity(s_values.len());
    for &s in s_values {
        evals.push(solver.phi(s)?);
    }
    let mut quotient: f64 = 0.0;
    for w in evals.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let drop = a.phi - b.phi;
        let tol = monotone_tolerance(a.phi);
        if drop < -tol {
            return Err(Error::SolverQuality(format!(
                "Phi increased from {} at s = {} to {} at s = {}",
                a.phi, a.s, b.phi, b.s
            )));
        }
        let slope_cap = state.mu * a.e1;
        if drop > (b.s - a.s) * slope_cap + tol {
            return Err(Error::SolverQuality(format!(
                "Phi dropped by {drop} between s = {} and s = {}, more than mu E1 (s2 - s1) = {}",
                a.s,
                b.s,
                (b.s - a.s) * slope_cap
            )));
        }
        quotient = quotient.max(drop / (b.s - a.s));
    }
    let a = s_values[0];
    let last = evals.last().expect("nonempty").phi;
    Ok(PhiSweep {
        evaluations: evals,
        lipschitz_quotient: quotient,
        lipschitz_bound: (solver.upper_bound() - last) / a,
    })
}

#[derive(Debug, Clone)]
pub struct GrowthRateResult {
    pub lambda: f64,
    pub mode_u: TrialField,
    pub mode_theta: ScalarField,
    pub fixed_point_residual: f64,
    pub bisection_interval: (f64, f64),
    pub upper_bound: f64,
    pub phi_evaluations: usize,
    pub degeneracy_gap: f64,
    pub eigen_residual: f64,
    /// `|Lambda^2 J(u0) - (-Lambda mu E1(u0) + E2(u0))|`.
    pub remark_equality_residual: f64,
    pub forms: EnergyForms,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthOptions {
    pub bracket: Option<(f64, f64)>,
    /// Relative fixed-point tolerance: `|Lambda^2 - Phi(Lambda)| <= fp_tol * Lambda^2`.
    pub fp_tol: f64,
    pub max_expansions: usize,
    pub max_root_iter: usize,
    pub eig: EigOptions,
}

impl Default for GrowthOptions {
    fn default() -> Self {
        GrowthOptions {
            bracket: None,
            fp_tol: 1e-8,
            max_expansions: 40,
            max_root_iter: 200,
            eig: EigOptions::default(),
        }
    }
}

pub const DEFAULT_BRACKET_LO: f64 = 1e-6;

/// `theta0 = -(u0 . grad rho0) / Lambda = -h (u0 . grad f) / Lambda` at cell centres.
pub fn density_mode(state: &SteadyState, u0: &VectorField, lambda: f64) -> ScalarField {
    let q = state.buoyancy().q(u0);
    let values = Array2::from_shape_fn(q.dim(), |(i, j)| -state.h.values[[i, j]] * q[[i, j]] / lambda);
    ScalarField {
        grid: state.grid,
        placement: Placement::Cell,
        values,
    }
}

/// Solves `Lambda^2 = Phi(Lambda)` for the unique positive root.
pub fn solve_growth_rate(state: &SteadyState, opts: GrowthOptions) -> Result<GrowthRateResult> {
    state.ensure_valid()?;
    let bound = state.upper_bound();
    if !(bound > 0.0) {
        return Err(Error::NoInstability { upper_bound: bound });
    }
    let (mut lo, mut hi) = opts.bracket.unwrap_or((DEFAULT_BRACKET_LO, bound.sqrt() + 1.0));
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Domain(format!("invalid bracket ({lo}, {hi})")));
    }
    let mut solver = PhiSolver::new(state, opts.eig)?;
    let h_of = |solver: &mut PhiSolver, s: f64| -> Result<(f64, PhiEvaluation)> {
        let ev = solver.phi(s)?;
        Ok((s * s - ev.phi, ev))
    };

    let (mut h_lo, mut ev_lo) = h_of(&mut solver, lo)?;
    let mut tries = 0;
    while h_lo >= 0.0 {
        if ev_lo.phi <= 0.0 {
            // Phi(s) <= Phi(lo) <= 0 for s >= lo; smaller s only adds -s mu E1 back
            if tries >= opts.max_expansions || lo < 1e-300 {
                return Err(Error::NoInstability { upper_bound: bound });
            }
        } else if tries >= opts.max_expansions {
            return Err(Error::Bracketing(format!("H(lo) >= 0 after {tries} halvings, lo = {lo}")));
        }
        lo *= 0.5;
        tries += 1;
        (h_lo, ev_lo) = h_of(&mut solver, lo)?;
        if ev_lo.phi <= 0.0 && tries >= 8 {
            return Err(Error::NoInstability { upper_bound: bound });
        }
    }
    let (mut h_hi, mut ev_hi) = h_of(&mut solver, hi)?;
    tries = 0;
    while h_hi <= 0.0 {
        if tries >= opts.max_expansions {
            return Err(Error::Bracketing(format!("H(hi) <= 0 after {tries} doublings, hi = {hi}")));
        }
        hi *= 2.0;
        tries += 1;
        (h_hi, ev_hi) = h_of(&mut solver, hi)?;
    }
    let bracket = (lo, hi);

    // Illinois variant of regula falsi on the increasing function H.
    let mut side = 0i32;
    let mut best: Option<(f64, f64, PhiEvaluation)> = None;
    for _ in 0..opts.max_root_iter {
        let mut s = (lo * h_hi - hi * h_lo) / (h_hi - h_lo);
        if !(s > lo && s < hi) {
            s = 0.5 * (lo + hi);
        }
        let (hs, ev) = h_of(&mut solver, s)?;
        if hs.abs() <= opts.fp_tol * s * s {
            best = Some((s, hs, ev));
            break;
        }
        if hs < 0.0 {
            lo = s;
            h_lo = hs;
            ev_lo = ev;
            if side == -1 {
                h_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = s;
            h_hi = hs;
            ev_hi = ev;
            if side == 1 {
                h_lo *= 0.5;
            }
            side = 1;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            let pick = if ev_lo.phi - ev_lo.s.powi(2) < ev_hi.s.powi(2) - ev_hi.phi {
                (ev_lo.s, ev_lo.s.powi(2) - ev_lo.phi, ev_lo.clone())
            } else {
                (ev_hi.s, ev_hi.s.powi(2) - ev_hi.phi, ev_hi.clone())
            };
            best = Some(pick);
            break;
        }
    }
    let (lambda, hres, ev) = best.ok_or_else(|| Error::Bracketing("root iteration limit reached".into()))?;
    if hres.abs() > opts.fp_tol * lambda * lambda {
        return Err(Error::numerical("fixed point not resolved to tolerance", hres.abs()));
    }
    let mode_theta = density_mode(state, &ev.maximizer.velocity, lambda);
    let forms = energy_forms(state, &ev.maximizer, lambda)?;
    let remark = (lambda * lambda * forms.j - forms.e).abs();
    Ok(GrowthRateResult {
        lambda,
        mode_u: ev.maximizer,
        mode_theta,
        fixed_point_residual: hres.abs(),
        bisection_interval: bracket,
        upper_bound: bound,
        phi_evaluations: solver.history.len(),
        degeneracy_gap: ev.degeneracy_gap,
        eigen_residual: ev.residual,
        remark_equality_residual: remark,
        forms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayleighReport {
    pub trials: usize,
    pub violations: usize,
    /// Smallest `Lambda^2 J(u) + Lambda mu E1(u) - E2(u)` over J-normalized random fields.
    pub min_slack: f64,
    pub slack_at_mode: f64,
    pub tolerance: f64,
}

/// Random clamped streamfunctions must satisfy `Lambda^2 J + Lambda mu E1 - E2 >= -tol`.
pub fn rayleigh_inequality_check(
    state: &SteadyState,
    result: &GrowthRateResult,
    trials: usize,
    seed: u64,
    tol: f64,
) -> Result<RayleighReport> {
    let lam = result.lambda;
    let slack = |f: &EnergyForms| lam * lam * f.j + lam * state.mu * f.e1 - f.e2;
    let space = StreamSpace::new(state.grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_slack = f64::INFINITY;
    let mut violations = 0;
    for t in 0..trials {
        // alternate rough and smooth fields
        let psi: Vec<f64> = if t % 2 == 0 {
            (0..space.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect()
        } else {
            let (ni, nj) = space.lattice();
            let modes: Vec<(f64, f64, f64)> = (0..4)
                .map(|_| (rng.gen_range(1..5) as f64, rng.gen_range(1..5) as f64, rng.gen_range(-1.0..1.0)))
                .collect();
            let pi = std::f64::consts::PI;
            (0..ni * nj)
                .map(|k| {
                    let (i, j) = ((k / nj + 1) as f64 / (ni + 1) as f64, (k % nj + 1) as f64 / (nj + 1) as f64);
                    modes.iter().map(|(a, b, c)| c * (a * pi * i).sin() * (b * pi * j).sin()).sum()
                })
                .collect()
        };
        let u = TrialField::from_interior(state, &psi)?;
        if !(u.j_value > 0.0) {
            continue;
        }
        let u = u.normalize()?;
        let s = slack(&energy_forms(state, &u, lam)?);
        if s < -tol {
            violations += 1;
        }
        min_slack = min_slack.min(s);
    }
    let at_mode = slack(&energy_forms(state, &result.mode_u, lam)?);
    Ok(RayleighReport {
        trials,
        violations,
        min_slack,
        slack_at_mode: at_mode,
        tolerance: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::steady::{uniform_gravity_state, DensityProfile};

    fn reference(n: usize) -> SteadyState {
        let g = Grid::unit_square(n).unwrap();
        uniform_gravity_state(g, 1.0, DensityProfile::Linear { a: 1.0, b: 0.1 }, 0.01, 0.5).unwrap()
    }

    #[test]
    fn zero_field_has_zero_forms() {
        let st = reference(8);
        let u = TrialField::from_psi(&st, ScalarField::zeros(st.grid, Placement::Node)).unwrap();
        let f = energy_forms(&st, &u, 0.3).unwrap();
        assert_eq!((f.e1, f.e2, f.j, f.e), (0.0, 0.0, 0.0, 0.0));
        assert!(u.normalize().is_err());
    }

    #[test]
    fn phi_is_bounded_and_decreasing() {
        let st = reference(8);
        let sweep = phi_sweep(&st, &[0.05, 0.1, 0.2, 0.4], EigOptions::default()).unwrap();
        let bound = st.upper_bound();
        assert!((bound - 0.1 / 1.0).abs() < 0.02);
        for ev in &sweep.evaluations {
            assert!(ev.phi <= bound + 1e-10);
            assert!(ev.residual <= 1e-10);
            assert!((ev.maximizer.j_value - 1.0).abs() < 1e-12);
        }
        assert!(sweep.lipschitz_quotient <= sweep.lipschitz_bound);
    }

    #[test]
    fn growth_rate_fixed_point() {
        let st = reference(8);
        let r = solve_growth_rate(&st, GrowthOptions::default()).unwrap();
        assert!(r.lambda > 0.0 && r.lambda * r.lambda <= r.upper_bound);
        assert!(r.fixed_point_residual <= 1e-8 * r.lambda * r.lambda);
        assert!(r.remark_equality_residual <= 1e-8 * r.lambda * r.lambda);
        let rep = rayleigh_inequality_check(&st, &r, 50, 1, 1e-8).unwrap();
        assert_eq!(rep.violations, 0);
        assert!(rep.slack_at_mode.abs() <= 1e-8);
    }

    #[test]
    fn stable_state_reports_no_instability() {
        let g = Grid::unit_square(8).unwrap();
        let st = uniform_gravity_state(g, 1.0, DensityProfile::Linear { a: 1.0, b: -0.1 }, 0.01, 0.5).unwrap();
        assert!(matches!(
            solve_growth_rate(&st, GrowthOptions::default()),
            Err(Error::NoInstability { .. })
        ));
        assert!(phi(&st, 1e-6, EigOptions::default()).unwrap().phi < 0.0);
    }
}
