//! Property tests of model, characteristic, Lagrangian, solver and energy
//! invariants.

use std::f64::consts::PI;

use degen_energy::characteristics::{integrate_characteristics, CharControls, CharInit, GProvider};
use degen_energy::energy::{energy_trace, measured_derivative};
use degen_energy::idw::Idw;
use degen_energy::lagrangian::{affine_fit_residuals, Lagrangian, LagrangianOptions};
use degen_energy::models::{
    instantiate, instantiate_dirichlet, BoundaryCondition, BuiltinModel, Diffusivity,
    FiltrationLaw, Pde, ProblemSpec, RobinData,
};
use degen_energy::quadrature::composite_simpson;
use degen_energy::solver::{semi_discrete_rhs, simulate, Grid1D, SolverControls};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn builtins() -> Vec<BuiltinModel> {
    vec![
        BuiltinModel::QuasilinearGradient {
            diffusivity: Diffusivity::Constant { value: 1.0 },
            forcing: vec![0.2, -0.5],
        },
        BuiltinModel::QuasilinearGradient {
            diffusivity: Diffusivity::RhoLaplacian { rho: 3.0 },
            forcing: vec![],
        },
        BuiltinModel::QuasilinearGradient {
            diffusivity: Diffusivity::MeanCurvature,
            forcing: vec![1.0],
        },
        BuiltinModel::RhoLaplacianPoly { rho: 3.0, n: 1.0 },
        BuiltinModel::RhoLaplacianPoly { rho: 3.0, n: 2.0 },
        BuiltinModel::McfPoly { n: 1.0 },
        BuiltinModel::McfPoly { n: 2.0 },
        BuiltinModel::InverseMcf,
        BuiltinModel::PorousMedium { m: 2.0 },
        BuiltinModel::PorousMedium { m: 3.0 },
        BuiltinModel::Filtration {
            law: FiltrationLaw::Power { m: 2.0 },
        },
        BuiltinModel::Filtration {
            law: FiltrationLaw::Superslow,
        },
    ]
}

fn analytic(spec: &ProblemSpec) -> Lagrangian {
    let g = GProvider::analytic(spec, None).unwrap();
    Lagrangian::build(spec, g, &LagrangianOptions::default()).unwrap()
}

#[test]
fn rhs_is_consistent_with_the_splitting() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for model in builtins() {
        let pde: &dyn Pde = &model;
        for _ in 0..1000 {
            let x = rng.gen_range(0.0..1.0);
            let u = rng.gen_range(0.05..2.0);
            let p = rng.gen_range(0.05..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let q = rng.gen_range(-0.5..0.5);
            let ut = pde.rhs(x, u, p, q);
            let r =
                pde.diffusion(x, u, p) * q - pde.reaction(x, u, p) - pde.f1_weight(x, u, p, q, ut);
            assert!(
                r.abs() <= 1e-10 * (1.0 + ut.abs()),
                "{} at {x},{u},{p},{q}: {r}",
                model.name()
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn heat_equation_rhs_is_q(x in 0.0..1.0f64, u in -5.0..5.0f64, p in -5.0..5.0f64, q in -5.0..5.0f64) {
        let heat = BuiltinModel::QuasilinearGradient {
            diffusivity: Diffusivity::Constant { value: 1.0 },
            forcing: vec![],
        };
        prop_assert_eq!(heat.rhs(x, u, p, q), q);
    }

    #[test]
    fn porous_medium_rhs(m in 1.0..4.0f64, u in 0.01..3.0f64, p in -3.0..3.0f64, q in -3.0..3.0f64) {
        let pme = BuiltinModel::PorousMedium { m };
        let expected = m * u.powf(m - 1.0) * q + m * (m - 1.0) * u.powf(m - 2.0) * p * p;
        prop_assert!((pme.rhs(0.5, u, p, q) - expected).abs() <= 1e-10 * (1.0 + expected.abs()));
    }

    #[test]
    fn characteristic_x_is_monotone(u0 in -1.0..1.0f64, p0 in -2.0..2.0f64, which in 0usize..4) {
        let model = [
            BuiltinModel::RhoLaplacianPoly { rho: 3.0, n: 1.0 },
            BuiltinModel::McfPoly { n: 2.0 },
            BuiltinModel::InverseMcf,
            BuiltinModel::PorousMedium { m: 2.0 },
        ][which].clone();
        let u0 = if matches!(model, BuiltinModel::PorousMedium { .. }) { u0.abs() } else { u0 };
        let spec = instantiate_dirichlet(model).unwrap();
        let controls = CharControls { tau_max: 5.0, ..CharControls::default() };
        let t = integrate_characteristics(&spec, CharInit { u0, p0, g0: 0.0 }, &controls).unwrap();
        for w in t.states.windows(2) {
            prop_assert!(w[1].x >= w[0].x);
            prop_assert!(w[1].x <= 1.0);
        }
    }

    #[test]
    fn idw_reproduces_samples(pts in prop::collection::vec((0.0..1.0f64, -2.0..2.0f64, -3.0..3.0f64, -10.0..10.0f64), 1..60)) {
        let points: Vec<[f64; 3]> = pts.iter().map(|t| [t.0, t.1, t.2]).collect();
        let values: Vec<f64> = pts.iter().map(|t| t.3).collect();
        let idw = Idw::new(&points, values);
        for (i, p) in points.iter().enumerate() {
            // duplicates resolve to one of the coincident samples
            let v = idw.eval(*p).value;
            let ok = points.iter().zip(&pts).any(|(q, t)| q == p && t.3 == v);
            prop_assert!(ok, "sample {} not reproduced", i);
        }
    }

    #[test]
    fn second_differences_of_l_match_weight(u in 0.2..1.0f64, p in 0.3..2.0f64, sign in prop::bool::ANY) {
        let p = if sign { p } else { -p };
        let spec = instantiate_dirichlet(BuiltinModel::McfPoly { n: 1.0 }).unwrap();
        let g = GProvider::analytic(&spec, None).unwrap();
        let lag = Lagrangian::build(&spec, g, &LagrangianOptions { quad_tol: 1e-13, ..LagrangianOptions::default() }).unwrap();
        let h = 1e-3;
        let l = |s: f64| lag.eval_l(0.5, u, s).unwrap();
        let second = (l(p + h) - 2.0 * l(p) + l(p - h)) / (h * h);
        // McfPoly n = 1: f_q exp(g) = (1 + p^2)^(-3/2) / |p|
        let w = (1.0 + p * p).powf(-1.5) / p.abs();
        prop_assert!((second - w).abs() < 1e-5 * (1.0 + w), "{} vs {}", second, w);
    }

    #[test]
    fn pme_stays_nonnegative(height in 0.1..1.0f64, width in 4.0..30.0f64, m in 1.5..3.0f64) {
        let spec = instantiate_dirichlet(BuiltinModel::PorousMedium { m }).unwrap();
        let grid = Grid1D::new(32).unwrap();
        let u0 = grid.sample(|x| height * (1.0 - width * (x - 0.5).powi(2)).max(0.0));
        let controls = SolverControls { output_stride: 10, ..SolverControls::default() };
        let sim = simulate(&spec, &grid, &u0, 0.02, &controls).unwrap();
        for f in &sim.frames {
            prop_assert!(f.u.iter().all(|&u| u >= -1e-12));
        }
    }
}

#[test]
fn trajectory_g_is_constant_for_quasilinear_models() {
    let spec = instantiate_dirichlet(BuiltinModel::QuasilinearGradient {
        diffusivity: Diffusivity::MeanCurvature,
        forcing: vec![0.5, 1.0],
    })
    .unwrap();
    let c = CharControls::default();
    let t = integrate_characteristics(
        &spec,
        CharInit {
            u0: 0.3,
            p0: -0.8,
            g0: 0.25,
        },
        &c,
    )
    .unwrap();
    let dev = t
        .states
        .iter()
        .map(|s| (s.g - 0.25).abs())
        .fold(0.0, f64::max);
    assert!(dev <= c.tol, "{dev}");
}

#[test]
fn fixed_tolerance_halving_tracks_the_order() {
    // error of p(1) for p' = -p at tolerances tol and tol / 2^5 differs by ~2^5
    let spec = instantiate_dirichlet(BuiltinModel::RhoLaplacianPoly { rho: 2.0, n: 1.0 }).unwrap();
    let err = |tol: f64| {
        let c = CharControls {
            tau_max: 1.0,
            tol,
            ..CharControls::default()
        };
        let t = integrate_characteristics(
            &spec,
            CharInit {
                u0: 0.0,
                p0: 1.0,
                g0: 0.0,
            },
            &c,
        )
        .unwrap();
        (t.last().p - (-1f64).exp()).abs()
    };
    let (e1, e2) = (err(1e-6), err(1e-6 / 32.0));
    assert!(e2 < e1, "{e1} {e2}");
}

#[test]
fn robin_end_has_zero_flux() {
    let spec = instantiate(
        BuiltinModel::RhoLaplacianPoly { rho: 3.0, n: 1.0 },
        BoundaryCondition::Robin(RobinData::affine(0.5, 1.0)),
        BoundaryCondition::dirichlet(),
    )
    .unwrap();
    let lag = analytic(&spec);
    for k in 0..50 {
        let u = -1.0 + 2.0 * k as f64 / 49.0;
        let lp = lag.eval_lp(0.0, u, 0.5 + u).unwrap();
        assert!(lp.abs() <= 1e-8, "{lp} at u = {u}");
    }
}

#[test]
fn closed_forms_match_after_affine_fit() {
    let us: Vec<f64> = (0..12).map(|i| 0.1 + 0.08 * i as f64).collect();
    let ps: Vec<f64> = (0..24)
        .map(|i| {
            let a = 0.1 + 0.15 * (i % 12) as f64;
            if i < 12 {
                -a
            } else {
                a
            }
        })
        .collect();
    for model in builtins() {
        if model.closed_form_lagrangian(0.5, 0.5, 1.0).is_none() {
            continue;
        }
        let spec = instantiate_dirichlet(model.clone()).unwrap();
        let lag = analytic(&spec);
        let rows = affine_fit_residuals(
            &lag,
            |u, p| model.closed_form_lagrangian(0.5, u, p).unwrap(),
            0.5,
            &us,
            &ps,
        )
        .unwrap();
        let worst = rows.iter().map(|r| r.residual.abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-6, "{}: {worst}", model.name());
    }
}

fn heat_l2_error(n: usize) -> f64 {
    let spec = instantiate_dirichlet(BuiltinModel::QuasilinearGradient {
        diffusivity: Diffusivity::Constant { value: 1.0 },
        forcing: vec![],
    })
    .unwrap();
    let grid = Grid1D::new(n).unwrap();
    let controls = SolverControls {
        cfl_safety: 0.1,
        ..SolverControls::default()
    };
    let t_end = 0.05;
    let sim = simulate(
        &spec,
        &grid,
        &grid.sample(|x| (PI * x).sin()),
        t_end,
        &controls,
    )
    .unwrap();
    let last = sim.frames.last().unwrap();
    let decay = (-PI * PI * last.t).exp();
    let sq: Vec<f64> = grid
        .xs()
        .iter()
        .zip(&last.u)
        .map(|(x, u)| (u - decay * (PI * x).sin()).powi(2))
        .collect();
    composite_simpson(&sq, grid.dx).sqrt()
}

#[test]
fn heat_error_is_second_order_in_space() {
    let (e1, e2, e3) = (heat_l2_error(16), heat_l2_error(32), heat_l2_error(64));
    for r in [e1 / e2, e2 / e3] {
        assert!((3.0..5.0).contains(&r), "ratios {} {}", e1 / e2, e2 / e3);
    }
}

#[test]
fn equilibria_are_fixed_points() {
    let cases: Vec<(BuiltinModel, f64)> = vec![
        (
            BuiltinModel::QuasilinearGradient {
                diffusivity: Diffusivity::Constant { value: 1.0 },
                forcing: vec![],
            },
            0.0,
        ),
        (BuiltinModel::RhoLaplacianPoly { rho: 3.0, n: 2.0 }, 0.0),
        (BuiltinModel::PorousMedium { m: 2.0 }, 0.0),
    ];
    for (model, c) in cases {
        let spec = instantiate_dirichlet(model).unwrap();
        let grid = Grid1D::new(16).unwrap();
        let u0 = vec![c; grid.nodes()];
        let rhs = semi_discrete_rhs(&spec, &grid, &u0, 0.0).unwrap();
        assert!(rhs.iter().all(|v| v.abs() <= 1e-12));
        let sim = simulate(&spec, &grid, &u0, 0.1, &SolverControls::default()).unwrap();
        for f in &sim.frames {
            let d =
                f.u.iter()
                    .zip(&u0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
            assert!(d <= 1e-10);
        }
    }
}

#[test]
fn quasilinear_decay_formula_and_measured_derivative_agree() {
    let spec = instantiate_dirichlet(BuiltinModel::QuasilinearGradient {
        diffusivity: Diffusivity::Constant { value: 1.0 },
        forcing: vec![0.0, 2.0],
    })
    .unwrap();
    let lag = analytic(&spec);
    let grid = Grid1D::new(64).unwrap();
    let u0 = grid.sample(|x| (PI * x).sin() + 0.3 * (2.0 * PI * x).sin());
    let worst = |interval: f64| {
        let controls = SolverControls {
            output_interval: Some(interval),
            ..SolverControls::default()
        };
        let sim = simulate(&spec, &grid, &u0, 0.04, &controls).unwrap();
        let trace = energy_trace(&lag, &sim).unwrap();
        for (k, f) in sim.frames.iter().enumerate() {
            let sq: Vec<f64> = f.ut.iter().map(|v| v * v).collect();
            assert_eq!(trace.dedt_formula[k], -composite_simpson(&sq, grid.dx));
        }
        (1..trace.len() - 1)
            .map(|k| (trace.dedt_measured[k] - trace.dedt_formula[k]).abs())
            .fold(0.0, f64::max)
    };
    let (coarse, fine) = (worst(0.004), worst(0.002));
    assert!(fine < coarse, "{coarse} {fine}");
}

#[test]
fn decay_formula_is_negative_off_equilibrium() {
    let spec = instantiate(
        BuiltinModel::RhoLaplacianPoly { rho: 3.0, n: 1.0 },
        BoundaryCondition::Dirichlet { value: 0.0 },
        BoundaryCondition::Dirichlet { value: 1.0 },
    )
    .unwrap();
    let lag = analytic(&spec);
    let grid = Grid1D::new(64).unwrap();
    let controls = SolverControls {
        output_interval: Some(0.005),
        ..SolverControls::default()
    };
    let sim = simulate(
        &spec,
        &grid,
        &grid.sample(|x| x + 0.1 * (PI * x).sin()),
        0.03,
        &controls,
    )
    .unwrap();
    let trace = energy_trace(&lag, &sim).unwrap();
    for k in 0..trace.len() {
        if trace.max_ut[k] > 1e-6 {
            assert!(trace.dedt_formula[k] < 0.0);
        }
    }
}

fn pme_traces(spec: &ProblemSpec, u0: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let lag = analytic(spec);
    let grid = Grid1D::new(64).unwrap();
    let controls = SolverControls {
        output_interval: Some(0.005),
        ..SolverControls::default()
    };
    let sim = simulate(spec, &grid, &grid.sample(u0), 0.04, &controls).unwrap();
    let trace = energy_trace(&lag, &sim).unwrap();
    let standard = trace.standard.clone().unwrap();
    (trace.times, trace.e, standard.e)
}

fn non_increasing(e: &[f64]) -> bool {
    e.windows(2)
        .all(|w| w[1] <= w[0] + 1e-8 * (1.0 + w[0].abs()))
}

#[test]
fn pme_energies_decay_for_monotone_data() {
    let spec = instantiate(
        BuiltinModel::PorousMedium { m: 2.0 },
        BoundaryCondition::Dirichlet { value: 0.2 },
        BoundaryCondition::Dirichlet { value: 0.8 },
    )
    .unwrap();
    let (_, e, _) = pme_traces(&spec, |x| 0.2 + 0.6 * x + 0.1 * (PI * x).sin());
    assert!(non_increasing(&e));
}

#[test]
fn pme_energy_rises_through_an_interior_maximum() {
    // L_pp = m u^(m-1) / |p| is not integrable where u_x changes sign, and the
    // new energy is not monotone there while the standard one still is.
    let spec = instantiate_dirichlet(BuiltinModel::PorousMedium { m: 2.0 }).unwrap();
    let (t, e, standard) = pme_traces(&spec, |x| {
        let s = (PI * x).sin();
        s * (0.5 + 0.3 * s)
    });
    assert!(non_increasing(&standard));
    assert!(!non_increasing(&e));
    assert!(measured_derivative(&t, &e).iter().any(|&d| d > 0.0));
}
