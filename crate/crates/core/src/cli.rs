//! Command line front end: `hydrostab steady|phi|lambda|simulate|experiment|verify`.
//!
//! Exit codes: 0 success, 1 a criterion failed, 2 configuration or input error,
//! 3 numerical failure.

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::config::{parse_config, parse_settings, Config};
use crate::error::{Error, Result};
use crate::evolution::{
    diagnostics_csv, run_partial, Diagnostics, PerturbationState, RunOptions, Scheme, TimeStepperConfig,
};
use crate::experiments::{
    experiment_hadamard, experiment_linear_growth, experiment_lipschitz, experiment_stability, fit_slope,
    CriterionResult, ExperimentReport,
};
use crate::operators::Advection;
use crate::report::{ensure_dir, to_json, LinePlot, RunManifest, Series};
use crate::steady::{SteadyState, StabilityClass};
use crate::variational::{phi_sweep, rayleigh_inequality_check, solve_growth_rate, EigOptions, GrowthOptions};

#[derive(Debug, Parser)]
#[command(name = "hydrostab", version, about = "Hydrostatic states, sharp growth rates and perturbation runs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file (`key = value` with sections).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for independent runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a steady state from the configuration and save it to a directory.
    Steady {
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate Phi(s) on a uniform grid of s values.
    Phi(PhiArgs),
    /// Solve for the sharp growth rate and its mode.
    Lambda {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time-step a perturbation of a saved state.
    Simulate(SimulateArgs),
    /// Run one of the numerical experiments and write a report.
    Experiment {
        kind: ExperimentKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check a saved state (and optionally the hashes of a run directory).
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct PhiArgs {
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long)]
    pub s_min: f64,
    #[arg(long)]
    pub s_max: f64,
    #[arg(long, default_value_t = 10)]
    pub s_count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Linear,
    Nonlinear,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// `eigenmode` or `file:<checkpoint dir>`; file data is used unscaled.
    #[arg(long)]
    pub init: Option<String>,
    /// Eigenmode amplitude.
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    Lipschitz,
    Hadamard,
    Lineargrowth,
    Stability,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub state: PathBuf,
    /// Run or experiment directory whose `run.json` hashes should be checked.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Random fields for the Rayleigh inequality check.
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    /// Where to write `run.json`; nothing is written when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli, need_state: bool) -> Result<Config> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::Format(format!("cannot read config {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = if need_state { parse_config(&text)? } else { parse_settings(&text)? };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.experiment.seed = s;
    }
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Domain("--threads must be at least 1".into()));
        }
        cfg.threads = t;
        cfg.experiment.threads = t;
    }
    Ok(cfg)
}

/// Config echo for commands whose state comes from disk.
fn settings_echo(cfg: &Config, state: &SteadyState) -> Result<serde_json::Value> {
    Ok(json!({
        "state": state.manifest()?,
        "solver": cfg.solver,
        "run": cfg.run,
    }))
}

fn growth_options(cfg: &Config) -> GrowthOptions {
    GrowthOptions {
        fp_tol: cfg.solver.fp_tol,
        eig: EigOptions {
            eig_tol: cfg.solver.eig_tol,
            max_iter: cfg.solver.max_iter,
        },
        ..Default::default()
    }
}

fn print_criteria(criteria: &[CriterionResult]) {
    for c in criteria {
        let value = c.value.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6e}"));
        println!(
            "{} {}: value {} threshold {:.6e} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            value,
            c.threshold,
            c.detail
        );
    }
}

fn criterion(name: &str, passed: bool, value: f64, threshold: f64, detail: impl Into<String>) -> CriterionResult {
    CriterionResult {
        name: name.into(),
        passed,
        value: value.is_finite().then_some(value),
        threshold,
        detail: detail.into(),
    }
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Steady { out } => cmd_steady(cli, out),
        Command::Phi(a) => cmd_phi(cli, a),
        Command::Lambda { state, out } => cmd_lambda(cli, state, out),
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::Experiment { kind, out } => cmd_experiment(cli, *kind, out),
        Command::Verify(a) => cmd_verify(cli, a),
    }
}

fn cmd_steady(cli: &Cli, out: &Path) -> Result<bool> {
    let cfg = load_config(cli, true)?;
    let state = cfg.state.build(cfg.grid.nx, cfg.grid.ny)?;
    let manifest = state.save(out)?;
    let r = &manifest.residuals;
    let criteria = vec![
        criterion("hydrostatic_residual", r.hydrostatic <= r.tol_hydro, r.hydrostatic, r.tol_hydro, ""),
        criterion("alignment_residual", r.alignment <= r.tol_align, r.alignment, r.tol_align, ""),
    ];
    println!(
        "state {}x{}: {:?}, positive-part bound {:.6e}",
        manifest.nx, manifest.ny, manifest.classification, manifest.upper_bound
    );
    print_criteria(&criteria);
    let mut run = RunManifest::new("steady", cfg.seed, cfg.threads, cfg.echo());
    if let Some(p) = &cli.config {
        run.add_input("config", p)?;
    }
    for (name, hash) in &manifest.hashes {
        run.outputs.insert(name.clone(), hash.clone());
    }
    run.record(&criteria);
    Ok(run.finish(out)?.passed)
}

fn cmd_phi(cli: &Cli, a: &PhiArgs) -> Result<bool> {
    let cfg = load_config(cli, false)?;
    if !(a.s_min > 0.0 && a.s_max >= a.s_min && a.s_count >= 1) {
        return Err(Error::Domain(format!(
            "need 0 < s_min <= s_max and s_count >= 1, got s_min {} s_max {} count {}",
            a.s_min, a.s_max, a.s_count
        )));
    }
    if a.s_count > 1 && a.s_max == a.s_min {
        return Err(Error::Domain("s_max must exceed s_min when s_count > 1".into()));
    }
    let state = SteadyState::load(&a.state)?;
    let s: Vec<f64> = if a.s_count == 1 {
        vec![a.s_min]
    } else {
        (0..a.s_count)
            .map(|k| a.s_min + (a.s_max - a.s_min) * k as f64 / (a.s_count - 1) as f64)
            .collect()
    };
    let eig = EigOptions {
        eig_tol: cfg.solver.eig_tol,
        max_iter: cfg.solver.max_iter,
    };
    let sweep = phi_sweep(&state, &s, eig)?;
    let mut csv = String::from("s,phi,iterations,residual\n");
    for e in &sweep.evaluations {
        csv.push_str(&format!("{:e},{:e},{},{:e}\n", e.s, e.phi, e.iterations, e.residual));
        println!("s {:.6e} phi {:.12e} iterations {} residual {:.3e}", e.s, e.phi, e.iterations, e.residual);
    }
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    ensure_dir(dir)?;
    let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("phi").to_string();
    let name = a.out.file_name().and_then(|s| s.to_str()).unwrap_or("phi.csv").to_string();
    let bound = state.upper_bound();
    let pts: Vec<(f64, f64)> = sweep.evaluations.iter().map(|e| (e.s, e.phi)).collect();
    let plot = LinePlot::new("Phi(s)", "s", "Phi")
        .with(Series::line("Phi", pts))
        .with(Series::line("s^2", s.iter().map(|&x| (x, x * x)).collect()))
        .with(Series::line("bound", s.iter().map(|&x| (x, bound)).collect()));

    let mut run = RunManifest::new("phi", cfg.seed, cfg.threads, settings_echo(&cfg, &state)?);
    run.add_input("state/manifest.json", &a.state.join("manifest.json"))?;
    run.write_output(dir, &name, csv.as_bytes())?;
    run.write_output(dir, &format!("{stem}.svg"), plot.to_svg().as_bytes())?;
    let max_phi = sweep.evaluations.iter().map(|e| e.phi).fold(f64::NEG_INFINITY, f64::max);
    run.record(&[
        criterion("phi_nonincreasing", true, sweep.lipschitz_quotient, sweep.lipschitz_bound, "largest drop quotient vs bound"),
        criterion("phi_below_bound", max_phi <= bound * (1.0 + 1e-10) + 1e-14, max_phi, bound, ""),
    ]);
    let dir_run = dir.join(format!("{stem}.run"));
    ensure_dir(&dir_run)?;
    Ok(run.finish(&dir_run)?.passed)
}

#[derive(Serialize)]
struct LambdaOutput {
    instability: bool,
    lambda: Option<f64>,
    fixed_point_residual: Option<f64>,
    bracket: Option<(f64, f64)>,
    upper_bound: f64,
    phi_evaluations: Option<usize>,
    degeneracy_gap: Option<f64>,
    eigen_residual: Option<f64>,
    mode_files: Vec<String>,
}

fn cmd_lambda(cli: &Cli, state_dir: &Path, out: &Path) -> Result<bool> {
    let cfg = load_config(cli, false)?;
    let state = SteadyState::load(state_dir)?;
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    ensure_dir(dir)?;
    let mut run = RunManifest::new("lambda", cfg.seed, cfg.threads, settings_echo(&cfg, &state)?);
    run.add_input("state/manifest.json", &state_dir.join("manifest.json"))?;
    let output = match solve_growth_rate(&state, growth_options(&cfg)) {
        Ok(res) => {
            let mode_dir = dir.join("mode");
            let mode = PerturbationState::eigenmode(&res, 1.0);
            for (name, hash) in mode.save(&mode_dir)? {
                run.outputs.insert(format!("mode/{name}"), hash);
            }
            println!(
                "Lambda {:.12e} fixed-point residual {:.3e} bracket [{:.6e}, {:.6e}] bound {:.6e}",
                res.lambda, res.fixed_point_residual, res.bisection_interval.0, res.bisection_interval.1, res.upper_bound
            );
            let fp_ok = res.fixed_point_residual <= cfg.solver.fp_tol * res.lambda * res.lambda;
            run.record(&[criterion(
                "fixed_point",
                fp_ok,
                res.fixed_point_residual,
                cfg.solver.fp_tol * res.lambda * res.lambda,
                "|Lambda^2 - Phi(Lambda)|",
            )]);
            LambdaOutput {
                instability: true,
                lambda: Some(res.lambda),
                fixed_point_residual: Some(res.fixed_point_residual),
                bracket: Some(res.bisection_interval),
                upper_bound: res.upper_bound,
                phi_evaluations: Some(res.phi_evaluations),
                degeneracy_gap: Some(res.degeneracy_gap),
                eigen_residual: Some(res.eigen_residual),
                mode_files: crate::evolution::STATE_FILES.iter().map(|f| format!("mode/{f}")).collect(),
            }
        }
        Err(Error::NoInstability { upper_bound }) => {
            println!("no instability: Phi(s) <= s^2 everywhere (bound {upper_bound:.6e})");
            LambdaOutput {
                instability: false,
                lambda: None,
                fixed_point_residual: None,
                bracket: None,
                upper_bound,
                phi_evaluations: None,
                degeneracy_gap: None,
                eigen_residual: None,
                mode_files: vec![],
            }
        }
        Err(e) => return Err(e),
    };
    let name = out.file_name().and_then(|s| s.to_str()).unwrap_or("lambda.json").to_string();
    run.write_output(dir, &name, to_json(&output)?.as_bytes())?;
    Ok(run.finish(dir)?.passed)
}

fn norm_plot(title: &str, runs: &[(String, &[Diagnostics])]) -> LinePlot {
    let mut plot = LinePlot::new(title, "t", "||V||_L2").log_y();
    for (label, rows) in runs {
        plot = plot.with(Series::line(label, rows.iter().map(|d| (d.t, d.v_l2)).collect()));
    }
    plot
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> Result<bool> {
    let mut cfg = load_config(cli, false)?;
    if let Some(m) = a.mode {
        cfg.run.mode = match m {
            Mode::Linear => Scheme::Linearized,
            Mode::Nonlinear => Scheme::Nonlinear,
        };
    }
    if let Some(i) = &a.init {
        cfg.run.init = i.clone();
    }
    if let Some(x) = a.amplitude {
        cfg.run.amplitude = x;
    }
    if let Some(x) = a.t_end {
        cfg.run.t_end = x;
    }
    if a.dt.is_some() {
        cfg.run.dt = a.dt;
    }
    let state = SteadyState::load(&a.state)?;
    let grid = state.grid;
    let mut stepper = TimeStepperConfig {
        scheme: cfg.run.mode,
        advection: cfg.run.advection,
        density_form: cfg.run.density_form,
        projection_tol: cfg.run.projection_tol,
        max_projection_iter: cfg.run.max_projection_iter,
        ..TimeStepperConfig::for_grid(&grid, cfg.run.mode)
    };
    if let Some(dt) = cfg.run.dt {
        stepper.dt = dt;
    }
    ensure_dir(&a.out)?;
    let mut run = RunManifest::new("simulate", cfg.seed, cfg.threads, json!(null));
    run.add_input("state/manifest.json", &a.state.join("manifest.json"))?;

    let init = if cfg.run.init == "eigenmode" {
        let res = solve_growth_rate(&state, growth_options(&cfg))?;
        println!("Lambda {:.12e}", res.lambda);
        PerturbationState::eigenmode(&res, cfg.run.amplitude)
    } else if let Some(path) = cfg.run.init.strip_prefix("file:") {
        let p = Path::new(path);
        run.add_input("init/state.json", &p.join("state.json"))?;
        let mut s = PerturbationState::load(p, grid)?;
        s.t = 0.0;
        s
    } else {
        return Err(Error::Domain(format!("unknown init {:?}", cfg.run.init)));
    };
    run.config = settings_echo(&cfg, &state)?;
    run.config["stepper"] = serde_json::to_value(stepper)?;

    let every = cfg.run.checkpoint_every;
    let ck_dir = a.out.join("checkpoints");
    let mut sample = 0usize;
    let mut ck_error: Option<Error> = None;
    let mut written: Vec<(String, String)> = Vec::new();
    let mut checkpoint = |_: &Diagnostics, st: &PerturbationState| {
        if every > 0 && sample % every == 0 {
            let name = format!("sample_{sample:06}");
            match st.save(&ck_dir.join(&name)) {
                Ok(h) => written.extend(h.into_iter().map(|(f, v)| (format!("checkpoints/{name}/{f}"), v))),
                Err(e) => {
                    ck_error = Some(e);
                    return ControlFlow::Break(());
                }
            }
        }
        sample += 1;
        ControlFlow::Continue(())
    };
    let traj = run_partial(&init, &state, &stepper, RunOptions::new(cfg.run.t_end, cfg.run.cadence), &mut [&mut checkpoint])?;
    if let Some(e) = ck_error {
        return Err(e);
    }
    run.outputs.extend(written);
    for (f, h) in traj.final_state.save(&a.out.join("final"))? {
        run.outputs.insert(format!("final/{f}"), h);
    }
    run.write_output(&a.out, "diagnostics.csv", diagnostics_csv(&traj.samples).as_bytes())?;
    let label = format!("{:?}", cfg.run.mode).to_lowercase();
    run.write_output(&a.out, "norms.svg", norm_plot("velocity norm", &[(label, &traj.samples)]).to_svg().as_bytes())?;

    let mut criteria = vec![criterion(
        "completed",
        traj.failure.is_none(),
        traj.final_state.t,
        cfg.run.t_end,
        traj.failure.as_ref().map(|e| e.to_string()).unwrap_or_default(),
    )];
    if stepper.scheme == Scheme::Nonlinear
        && stepper.advection == Advection::Upwind1
        && stepper.density_form == crate::evolution::DensityForm::Total
    {
        let first = traj.samples[0];
        let (lo, hi) = (first.min_total_density, first.max_total_density);
        let tol = 1e-12 * hi.abs().max(lo.abs());
        let worst = traj
            .samples
            .iter()
            .map(|d| (lo - d.min_total_density).max(d.max_total_density - hi))
            .fold(0.0_f64, f64::max);
        criteria.push(criterion("total_density_bounds", worst <= tol, worst, tol, "largest excursion outside the initial range"));
    }
    print_criteria(&criteria);
    run.record(&criteria);
    let run = run.finish(&a.out)?;
    if let Some(e) = traj.failure {
        return Err(e);
    }
    Ok(run.passed)
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes `report.json`, per-run `runs/<label>/diagnostics.csv`, plots and `run.json`.
pub fn write_experiment(report: &ExperimentReport, cfg: &Config, out: &Path, config_path: Option<&Path>) -> Result<RunManifest> {
    ensure_dir(out)?;
    let mut run = RunManifest::new(&format!("experiment {}", report.experiment), cfg.seed, cfg.threads, cfg.echo());
    if let Some(p) = config_path {
        run.add_input("config", p)?;
    }
    for r in &report.runs {
        let dir = out.join("runs").join(sanitize(&r.label));
        ensure_dir(&dir)?;
        let name = format!("runs/{}/diagnostics.csv", sanitize(&r.label));
        run.write_output(out, &name, diagnostics_csv(&r.diagnostics).as_bytes())?;
    }
    let series: Vec<(String, &[Diagnostics])> = report.runs.iter().map(|r| (r.label.clone(), r.diagnostics.as_slice())).collect();
    match report.experiment.as_str() {
        "stability" => {
            let mut f = LinePlot::new("Lyapunov functional", "t", "functional");
            let mut h = LinePlot::new("H1 norm", "t", "||V||_H1").log_y();
            for (label, rows) in &series {
                f = f.with(Series::line(label, rows.iter().map(|d| (d.t, d.functional)).collect()));
                h = h.with(Series::line(label, rows.iter().map(|d| (d.t, d.v_h1)).collect()));
            }
            run.write_output(out, "functional.svg", f.to_svg().as_bytes())?;
            run.write_output(out, "h1.svg", h.to_svg().as_bytes())?;
        }
        other => {
            run.write_output(out, "norms.svg", norm_plot(other, &series).to_svg().as_bytes())?;
        }
    }
    if report.experiment == "hadamard" {
        let pts: Vec<(f64, f64)> = report
            .runs
            .iter()
            .filter_map(|r| Some(((1.0 / r.delta?).ln(), r.escape_time?)))
            .collect();
        let mut plot = LinePlot::new("escape time", "ln(1/delta)", "T").with(Series::scatter("runs", pts.clone()));
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
        if let (Some(slope), Some(lam)) = (fit_slope(&xs, &ys), report.lambda) {
            let (mx, my) = (xs.iter().sum::<f64>() / xs.len() as f64, ys.iter().sum::<f64>() / ys.len() as f64);
            let fit: Vec<(f64, f64)> = xs.iter().map(|&x| (x, my + slope * (x - mx))).collect();
            let reference: Vec<(f64, f64)> = xs.iter().map(|&x| (x, my + (x - mx) / lam)).collect();
            plot = plot.with(Series::line("fit", fit)).with(Series::line("slope 1/Lambda", reference));
        }
        run.write_output(out, "escape_time.svg", plot.to_svg().as_bytes())?;
    }
    run.write_output(out, "report.json", to_json(report)?.as_bytes())?;
    run.record(&report.criteria);
    run.finish(out)
}

fn cmd_experiment(cli: &Cli, kind: ExperimentKind, out: &Path) -> Result<bool> {
    if cli.config.is_none() {
        return Err(Error::Config(vec![crate::error::ConfigIssue {
            line: 0,
            column: 0,
            message: "experiment needs --config".into(),
        }]));
    }
    let cfg = load_config(cli, true)?;
    let report = match kind {
        ExperimentKind::Lipschitz => experiment_lipschitz(&cfg.experiment)?,
        ExperimentKind::Hadamard => experiment_hadamard(&cfg.experiment)?,
        ExperimentKind::Lineargrowth => experiment_linear_growth(&cfg.experiment)?,
        ExperimentKind::Stability => experiment_stability(&cfg.experiment)?,
    };
    print_criteria(&report.criteria);
    let run = write_experiment(&report, &cfg, out, cli.config.as_deref())?;
    Ok(run.passed && report.passed)
}

fn cmd_verify(cli: &Cli, a: &VerifyArgs) -> Result<bool> {
    let cfg = load_config(cli, false)?;
    let state = SteadyState::load(&a.state)?;
    let r = &state.residuals;
    let mut criteria = vec![
        criterion("state_hashes", true, 0.0, 0.0, "checkpoints match the manifest and the rebuilt state"),
        criterion("hydrostatic_residual", r.hydrostatic <= r.tol_hydro, r.hydrostatic, r.tol_hydro, ""),
        criterion("alignment_residual", r.alignment <= r.tol_align, r.alignment, r.tol_align, ""),
    ];
    let class = crate::steady::classify(&state, crate::steady::DEFAULT_CONST_TOL);
    match solve_growth_rate(&state, growth_options(&cfg)) {
        Ok(res) => {
            let tol = cfg.solver.fp_tol * res.lambda * res.lambda;
            criteria.push(criterion("fixed_point", res.fixed_point_residual <= tol, res.fixed_point_residual, tol, format!("Lambda {:.12e}", res.lambda)));
            let rep = rayleigh_inequality_check(&state, &res, a.trials, cfg.seed, 1e-8)?;
            criteria.push(criterion("rayleigh_inequality", rep.violations == 0, rep.min_slack, -rep.tolerance, format!("{} trials", rep.trials)));
            criteria.push(criterion("slack_at_mode", rep.slack_at_mode.abs() <= rep.tolerance, rep.slack_at_mode.abs(), rep.tolerance, ""));
            let stable = matches!(class, StabilityClass::LinearlyStable | StabilityClass::NonlinearlyStable);
            criteria.push(criterion("classification_consistent", !stable, f64::NAN, 0.0, format!("{class:?} state has Lambda > 0")));
        }
        Err(Error::NoInstability { upper_bound }) => {
            let ok = class != StabilityClass::Unstable || upper_bound <= 0.0;
            criteria.push(criterion("no_instability", ok, upper_bound, 0.0, format!("{class:?}")));
        }
        Err(e) => return Err(e),
    }
    if let Some(dir) = &a.run {
        let text = std::fs::read_to_string(dir.join("run.json"))?;
        let manifest: RunManifest = serde_json::from_str(&text)?;
        let mut bad = Vec::new();
        for (name, hash) in &manifest.outputs {
            match std::fs::read(dir.join(name)) {
                Ok(bytes) if &crate::checkpoint::hash_hex(&bytes) == hash => {}
                _ => bad.push(name.clone()),
            }
        }
        criteria.push(criterion(
            "run_output_hashes",
            bad.is_empty(),
            bad.len() as f64,
            0.0,
            if bad.is_empty() { String::new() } else { format!("mismatched: {}", bad.join(", ")) },
        ));
    }
    print_criteria(&criteria);
    let passed = criteria.iter().all(|c| c.passed);
    if let Some(out) = &a.out {
        ensure_dir(out)?;
        let mut run = RunManifest::new("verify", cfg.seed, cfg.threads, settings_echo(&cfg, &state)?);
        run.add_input("state/manifest.json", &a.state.join("manifest.json"))?;
        run.record(&criteria);
        run.finish(out)?;
    }
    Ok(passed)
}
