//! End-to-end acceptance checks with pinned tolerances. Prints one PASS/FAIL line
//! per criterion and exits nonzero if any fails.

use std::time::{Duration, Instant};

use hydrostab::evolution::{cfl_limit, step_linearized, step_nonlinear, PerturbationState, Scheme, TimeStepperConfig};
use hydrostab::experiments::{
    experiment_hadamard, experiment_linear_growth, experiment_lipschitz, experiment_stability,
    random_smooth_perturbation, ExperimentConfig, ExperimentReport, StateSpec,
};
use hydrostab::grid::Grid;
use hydrostab::operators::Advection;
use hydrostab::oracle::{oracle_phi, DenseOracle};
use hydrostab::steady::{
    build_steady_state, uniform_gravity_state, DensityProfile, PotentialSpec, SteadyState,
};
use hydrostab::variational::{phi_sweep, rayleigh_inequality_check, solve_growth_rate, EigOptions, GrowthOptions};
use hydrostab::Error;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn failed_criteria(r: &ExperimentReport) -> String {
    let bad: Vec<String> = r
        .criteria
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} = {:?} (threshold {:e}) {}", c.name, c.value, c.threshold, c.detail))
        .collect();
    bad.join("; ")
}

fn linear_state(n: usize, b: f64) -> SteadyState {
    let g = Grid::unit_square(n).unwrap();
    uniform_gravity_state(g, 1.0, DensityProfile::Linear { a: 1.0, b }, 0.01, 0.5).unwrap()
}

/// Exponential atmosphere: second-order hydrostatic truncation, exact alignment.
fn exponential_atmosphere() -> Outcome {
    let prof = DensityProfile::Exponential { rho_bar: 1.0, beta: 1.0 };
    let mut res = Vec::new();
    let mut align: f64 = 0.0;
    for n in [16, 32, 64] {
        let g = Grid::unit_square(n).unwrap();
        let s = uniform_gravity_state(g, 1.0, prof, 0.01, 0.1).unwrap();
        res.push(s.residuals.hydrostatic_truncation);
        align = align.max(s.residuals.alignment);
    }
    let slopes: Vec<f64> = res.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let ok = slopes.iter().all(|&p| p >= 1.9) && align <= 1e-12;
    outcome(ok, format!("Richardson slopes {slopes:.3?} (>= 1.9), alignment {align:e} (<= 1e-12)"))
}

/// Phi on 8x8 against the dense oracle, monotone and below the positive-part bound.
fn phi_against_oracle() -> Outcome {
    let s_values = [0.05, 0.1, 0.2, 0.4, 0.8];
    let mut ok = true;
    let mut notes = Vec::new();
    for b in [0.1, 1.0] {
        let st = linear_state(8, b);
        let sweep = match phi_sweep(&st, &s_values, EigOptions::default()) {
            Ok(s) => s,
            Err(e) => return outcome(false, format!("h = {b}: {e}")),
        };
        let bound = st.upper_bound();
        let mut worst: f64 = 0.0;
        for e in &sweep.evaluations {
            let o = oracle_phi(&st, e.s).unwrap();
            worst = worst.max((e.phi - o).abs() / o.abs().max(1e-300));
            ok &= e.phi <= bound;
        }
        ok &= sweep.evaluations.windows(2).all(|w| w[1].phi <= w[0].phi);
        ok &= worst <= 1e-8;
        notes.push(format!("h = {b}: worst relative gap {worst:.2e}"));
    }
    outcome(ok, notes.join(", "))
}

/// Lambda solves the fixed point, matches a dense fine scan and the Rayleigh inequality.
fn growth_rate_fixed_point() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for b in [0.1, 1.0] {
        let st = linear_state(8, b);
        let res = solve_growth_rate(&st, GrowthOptions::default()).unwrap();
        let lam = res.lambda;
        let phi_dense = oracle_phi(&st, lam).unwrap();
        let fp = (lam * lam - phi_dense).abs();
        let scan = DenseOracle::new(&st).unwrap().scan_growth_rate(st.upper_bound().sqrt() + 0.1, 1e-2, 1e-6).unwrap();
        let rep = rayleigh_inequality_check(&st, &res, 1000, 11, 1e-8).unwrap();
        let this = fp <= 1e-8 * lam * lam
            && (scan - lam).abs() <= 1e-5
            && rep.min_slack >= -1e-8
            && rep.slack_at_mode.abs() <= 1e-8;
        ok &= this;
        notes.push(format!(
            "h = {b}: Lambda {lam:.8}, |Lambda^2 - Phi| {fp:.1e}, scan gap {:.1e}, min slack {:.2e}, slack at mode {:.1e}",
            (scan - lam).abs(),
            rep.min_slack,
            rep.slack_at_mode
        ));
    }
    outcome(ok, notes.join("; "))
}

fn linear_growth() -> Outcome {
    let cfg = ExperimentConfig {
        resolutions: vec![64, 128],
        cadence: 10,
        ..Default::default()
    };
    match experiment_linear_growth(&cfg) {
        Ok(r) => {
            let fit = |k: &str| r.fits.get(k).copied().unwrap_or(f64::NAN);
            outcome(
                r.passed,
                format!(
                    "Lambda {:?}, slope {:.5}, deviations {:.2e} (n=64) {:.2e} (n=128) {}",
                    r.lambda,
                    fit("slope_n64"),
                    fit("deviation_n64"),
                    fit("deviation_n128"),
                    failed_criteria(&r)
                ),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn hadamard() -> Outcome {
    let cfg = ExperimentConfig {
        resolutions: vec![64],
        deltas: vec![1e-3, 1e-4, 1e-5],
        ..Default::default()
    };
    match experiment_hadamard(&cfg) {
        Ok(r) => {
            let times: Vec<f64> = r.runs.iter().filter_map(|x| x.escape_time).collect();
            outcome(
                r.passed,
                format!("eps {:?}, escape times {times:.3?}, fits {:?} {}", r.epsilon, r.fits, failed_criteria(&r)),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn lipschitz() -> Outcome {
    let cfg = ExperimentConfig {
        resolutions: vec![64],
        deltas: vec![1e-4],
        k_gauge: 2.0,
        ..Default::default()
    };
    match experiment_lipschitz(&cfg) {
        Ok(r) => {
            let c: Vec<String> = r
                .criteria
                .iter()
                .map(|c| format!("{} {:?} vs {:e}", c.name, c.value, c.threshold))
                .collect();
            outcome(r.passed, c.join("; "))
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn stability() -> Outcome {
    let cfg = ExperimentConfig {
        state: StateSpec::reference_stable(),
        resolutions: vec![32],
        deltas: vec![1e-2],
        ..Default::default()
    };
    match experiment_stability(&cfg) {
        Ok(r) => {
            let c: Vec<String> = r
                .criteria
                .iter()
                .map(|c| format!("{} {:?}", c.name, c.value))
                .collect();
            let nonlinear = r.criteria.iter().any(|c| c.name.starts_with("nonlinear_"));
            outcome(r.passed && nonlinear, c.join("; "))
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

/// Upwind transport keeps the total density range; the linearized step is homogeneous.
fn transport() -> Outcome {
    let bg = linear_state(16, 1.0);
    let mut worst_excursion: f64 = 0.0;
    for seed in 0..3 {
        let s0 = random_smooth_perturbation(bg.grid, seed, 0.05).unwrap();
        let total = |s: &PerturbationState| {
            let t: Vec<f64> = s.rho.values.iter().zip(bg.rho0.values.iter()).map(|(a, b)| a + b).collect();
            let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        };
        let (lo0, hi0) = total(&s0);
        let cfg = TimeStepperConfig {
            dt: 0.5 * cfl_limit(&bg.grid, s0.v.max_abs()),
            advection: Advection::Upwind1,
            ..TimeStepperConfig::for_grid(&bg.grid, Scheme::Nonlinear)
        };
        let mut s = s0;
        for _ in 0..20 {
            s = step_nonlinear(&s, &bg, &cfg).unwrap();
            let (lo, hi) = total(&s);
            worst_excursion = worst_excursion.max((lo0 - lo) / hi0).max((hi - hi0) / hi0);
        }
    }
    let lin = TimeStepperConfig::for_grid(&bg.grid, Scheme::Linearized);
    let s0 = random_smooth_perturbation(bg.grid, 7, 1e-6).unwrap();
    let mut worst_homog: f64 = 0.0;
    for a in [-3.0, 0.5, 1e3] {
        let lhs = step_linearized(&s0.scaled(a), &bg, &lin).unwrap();
        let rhs = step_linearized(&s0, &bg, &lin).unwrap().scaled(a);
        let gap = lhs
            .v
            .u
            .values
            .iter()
            .chain(lhs.v.v.values.iter())
            .chain(lhs.rho.values.iter())
            .zip(rhs.v.u.values.iter().chain(rhs.v.v.values.iter()).chain(rhs.rho.values.iter()))
            .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        let scale = rhs.v.max_abs().max(rhs.rho.max_abs());
        worst_homog = worst_homog.max(gap / scale);
    }
    let ok = worst_excursion <= 1e-14 && worst_homog <= 1e-12;
    outcome(
        ok,
        format!("total-density excursion {worst_excursion:.1e}, linear homogeneity gap {worst_homog:.1e}"),
    )
}

/// Every background with h < 0 everywhere reports no instability.
fn no_instability_when_stable() -> Outcome {
    let g = Grid::unit_square(12).unwrap();
    let mut states = vec![
        ("linear b = -0.1", linear_state(12, -0.1)),
        ("linear b = -0.4", linear_state(12, -0.4)),
        (
            "exponential",
            uniform_gravity_state(g, 1.0, DensityProfile::Exponential { rho_bar: 2.0, beta: 0.7 }, 0.05, 0.1).unwrap(),
        ),
        (
            "tanh",
            uniform_gravity_state(
                g,
                1.0,
                DensityProfile::Tanh { mean: 1.5, jump: -0.5, t0: 0.5, width: 0.1 },
                0.01,
                0.1,
            )
            .unwrap(),
        ),
    ];
    let pot = PotentialSpec::radial(g, (0.5, 0.5), 1.0).unwrap();
    states.push((
        "radial",
        build_steady_state(g, pot, DensityProfile::Linear { a: 2.0, b: -1.0 }, 0.01, 0.1).unwrap(),
    ));
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, st) in &states {
        let negative = st.h.values.iter().all(|&h| h < 0.0);
        let res = solve_growth_rate(st, GrowthOptions::default());
        let this = negative && matches!(res, Err(Error::NoInstability { .. }));
        ok &= this;
        if !this {
            notes.push(format!("{name}: h<0 {negative}, result {:?}", res.map(|r| r.lambda)));
        }
    }
    outcome(ok, format!("{} states; {}", states.len(), notes.join(", ")))
}

fn main() {
    type Check = (u32, &'static str, fn() -> Outcome, Duration);
    let checks: [Check; 9] = [
        (1, "exponential_atmosphere", exponential_atmosphere, Duration::from_secs(5)),
        (2, "phi_matches_oracle", phi_against_oracle, Duration::from_secs(60)),
        (3, "growth_rate_fixed_point", growth_rate_fixed_point, Duration::from_secs(120)),
        (4, "linear_growth_rate", linear_growth, Duration::from_secs(120)),
        (5, "hadamard_escape", hadamard, Duration::from_secs(600)),
        (6, "lipschitz_gauge_breach", lipschitz, Duration::from_secs(300)),
        (7, "nonlinear_stability", stability, Duration::from_secs(300)),
        (8, "transport_bounds_and_homogeneity", transport, Duration::from_secs(60)),
        (9, "no_instability_for_negative_h", no_instability_when_stable, Duration::from_secs(60)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (id, name, check, budget) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let passed = result.passed && in_time;
        if !passed {
            failures += 1;
        }
        println!(
            "criterion {id} {name}: {} [{:.1} s of {} s] {}",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs(),
            result.detail
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
