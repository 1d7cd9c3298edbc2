use hydrostab::checkpoint;
use hydrostab::config::parse_config;
use hydrostab::evolution::{step_linearized, PerturbationState, Scheme, Stepper, TimeStepperConfig};
use hydrostab::experiments::{random_smooth_perturbation, CriterionResult, ExperimentReport};
use hydrostab::grid::{divergence, integrate, inner_product, Grid, Placement, ScalarField};
use hydrostab::operators::{dirichlet_energy, transport, Advection, StreamSpace};
use hydrostab::oracle::{oracle_linstep, DenseOracle};
use hydrostab::report::{round_trips, to_json};
use hydrostab::steady::{uniform_gravity_state, DensityProfile, SteadyState};
use hydrostab::Error;
use ndarray::Array2;
use proptest::prelude::*;

fn linear_state(n: usize, b: f64) -> SteadyState {
    let g = Grid::unit_square(n).unwrap();
    uniform_gravity_state(g, 1.0, DensityProfile::Linear { a: 1.0, b }, 0.01, 0.5).unwrap()
}

fn cell_field(g: Grid, vals: &[f64]) -> ScalarField {
    ScalarField::from_array(g, Placement::Cell, Array2::from_shape_vec((g.nx, g.ny), vals.to_vec()).unwrap()).unwrap()
}

fn max_gap(a: &PerturbationState, b: &PerturbationState) -> f64 {
    let fa = a.v.u.values.iter().chain(a.v.v.values.iter()).chain(a.rho.values.iter());
    let fb = b.v.u.values.iter().chain(b.v.v.values.iter()).chain(b.rho.values.iter());
    fa.zip(fb).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn quadrature_integrates_constants(n in 4usize..20, lx in 0.5f64..3.0, ly in 0.5f64..3.0, c in -5.0f64..5.0) {
        let g = Grid::new(lx, ly, n, n + 1).unwrap();
        for p in [Placement::Cell, Placement::XFace, Placement::YFace, Placement::Node] {
            let f = ScalarField::constant(g, p, c);
            prop_assert!((integrate(&f) - c * lx * ly).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn inner_product_is_symmetric_and_bilinear(vals in prop::collection::vec(-1.0f64..1.0, 72), a in -3.0f64..3.0) {
        let g = Grid::unit_square(6).unwrap();
        let x = cell_field(g, &vals[..36]);
        let y = cell_field(g, &vals[36..]);
        let xy = inner_product(&x, &y, None).unwrap();
        prop_assert!((xy - inner_product(&y, &x, None).unwrap()).abs() < 1e-14);
        let ax = x.scaled(a);
        prop_assert!((inner_product(&ax, &y, None).unwrap() - a * xy).abs() < 1e-13);
    }

    #[test]
    fn curl_is_divergence_free_and_energy_is_quadratic(seed in any::<u64>(), a in -4.0f64..4.0) {
        let g = Grid::new(1.0, 1.5, 7, 9).unwrap();
        let space = StreamSpace::new(g);
        let psi: Vec<f64> = (0..space.dim()).map(|k| ((seed.wrapping_add(k as u64 * 2654435761) % 1000) as f64) / 500.0 - 1.0).collect();
        let v = space.curl(&psi);
        prop_assert!(divergence(&v).unwrap().max_abs() < 1e-12);
        prop_assert_eq!(v.boundary_max_abs(), 0.0);
        let e = dirichlet_energy(&v);
        prop_assert!((dirichlet_energy(&v.scaled(a)) - a * a * e).abs() <= 1e-12 * e.max(1e-300));
    }

    #[test]
    fn dense_forms_are_symmetric(b in -0.4f64..2.0, s in 0.01f64..2.0) {
        let o = DenseOracle::new(&linear_state(5, b)).unwrap();
        prop_assert!(o.asymmetry(s) < 1e-13);
    }

    #[test]
    fn phi_is_nonincreasing(b in 0.05f64..2.0, s1 in 0.01f64..1.0, ds in 0.001f64..1.0) {
        let o = DenseOracle::new(&linear_state(5, b)).unwrap();
        let (p1, p2) = (o.phi(s1).unwrap(), o.phi(s1 + ds).unwrap());
        prop_assert!(p2 <= p1 + 1e-12 * (1.0 + p1.abs()));
    }

    #[test]
    fn linear_step_is_superposable(s1 in 0u64..1000, s2 in 0u64..1000, a in -2.0f64..2.0) {
        let bg = linear_state(8, 1.0);
        let cfg = TimeStepperConfig::for_grid(&bg.grid, Scheme::Linearized);
        let x = random_smooth_perturbation(bg.grid, s1, 1e-3).unwrap();
        let y = random_smooth_perturbation(bg.grid, s2, 1e-3).unwrap();
        let sum = PerturbationState::new(
            hydrostab::VectorField::new(
                hydrostab::grid::axpy(&x.v.u, a, &y.v.u).unwrap(),
                hydrostab::grid::axpy(&x.v.v, a, &y.v.v).unwrap(),
            ).unwrap(),
            hydrostab::grid::axpy(&x.rho, a, &y.rho).unwrap(),
        ).unwrap();
        let mut st = Stepper::new(&bg, cfg).unwrap();
        let (fx, fy, fs) = (st.step(&x).unwrap(), st.step(&y).unwrap(), st.step(&sum).unwrap());
        let combo = PerturbationState {
            t: fs.t,
            v: hydrostab::VectorField::new(
                hydrostab::grid::axpy(&fx.v.u, a, &fy.v.u).unwrap(),
                hydrostab::grid::axpy(&fx.v.v, a, &fy.v.v).unwrap(),
            ).unwrap(),
            rho: hydrostab::grid::axpy(&fx.rho, a, &fy.rho).unwrap(),
            p: fs.p.clone(),
        };
        let scale = fs.v.max_abs().max(fs.rho.max_abs()).max(1e-300);
        prop_assert!(max_gap(&fs, &combo) <= 1e-12 * scale.max(fx.v.max_abs()).max(fy.rho.max_abs()));
    }

    #[test]
    fn upwind_transport_stays_in_range(vals in prop::collection::vec(0.5f64..2.0, 64), seed in 0u64..500) {
        let g = Grid::unit_square(8).unwrap();
        let v = random_smooth_perturbation(g, seed, 0.5).unwrap().v;
        let dt = 0.4 * g.min_spacing() / v.max_abs().max(1.0);
        let q = Array2::from_shape_vec((8, 8), vals.clone()).unwrap();
        let out = transport(&q, &v, dt, Advection::Upwind1);
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(out.iter().all(|&x| x >= lo * (1.0 - 1e-14) && x <= hi * (1.0 + 1e-14)));
    }

    #[test]
    fn checkpoints_round_trip(vals in prop::collection::vec(-1e6f64..1e6, 42)) {
        let g = Grid::new(2.0, 1.0, 6, 7).unwrap();
        let f = cell_field(g, &vals);
        let bytes = checkpoint::encode(&f);
        prop_assert_eq!(checkpoint::decode(&bytes, g).unwrap(), f);
        prop_assert!(checkpoint::decode(&bytes[..bytes.len() - 1], g).is_err());
    }

    #[test]
    fn nonpositive_sizes_name_the_key(nx in -50i64..4) {
        let text = format!("[grid]\nnx = {nx}\n[profile]\nkind = \"linear\"\na = 1\nb = 1\n[physics]\nmu = 0.1\n");
        match parse_config(&text) {
            Err(Error::Config(v)) => {
                prop_assert_eq!(v.len(), 1);
                prop_assert!(v[0].message.contains("grid.nx"));
                prop_assert_eq!(v[0].line, 2);
            }
            other => prop_assert!(false, "expected a config error, got {:?}", other.map(|c| c.grid)),
        }
    }

    #[test]
    fn reports_round_trip(vals in prop::collection::vec(-1e10f64..1e10, 1..6), flags in prop::collection::vec(any::<bool>(), 6)) {
        let mut rep = ExperimentReport::new("lipschitz");
        rep.lambda = Some(vals[0]);
        for (k, &v) in vals.iter().enumerate() {
            rep.fits.insert(format!("fit_{k}"), v);
            rep.criteria.push(CriterionResult {
                name: format!("c{k}"),
                passed: flags[k],
                value: flags[k].then_some(v),
                threshold: v.abs(),
                detail: "\"quoted\" and \\ escaped".into(),
            });
        }
        let text = to_json(&rep).unwrap();
        prop_assert!(round_trips::<ExperimentReport>(&text).unwrap());
    }
}

#[test]
fn linear_step_matches_dense_oracle() {
    for b in [0.1, 1.0, -0.1] {
        let bg = linear_state(8, b);
        let cfg = TimeStepperConfig::for_grid(&bg.grid, Scheme::Linearized);
        for seed in 0..3 {
            let s0 = random_smooth_perturbation(bg.grid, seed, 1e-2).unwrap();
            let fast = step_linearized(&s0, &bg, &cfg).unwrap();
            let dense = oracle_linstep(&bg, &s0, cfg.dt).unwrap();
            let scale = fast.v.max_abs();
            assert!(max_gap(&fast, &dense) <= 1e-9 * scale.max(fast.rho.max_abs()), "b = {b}, seed {seed}");
            let dp = fast
                .p
                .values
                .iter()
                .zip(dense.p.values.iter())
                .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(dp <= 1e-8 * fast.p.max_abs().max(1e-300), "pressure gap {dp:e}");
        }
    }
}
