//! Characteristic curves of the first-order equation for `g` and the
//! queryable representations of `g(x, u, p)` built from them.
//!
//! Along a characteristic
//!
//! ```text
//! x' = f_q,  u' = f_q p,  p' = F0,  g' = -F0_p - f_qx - p f_qu
//! ```
//!
//! and `g` is fixed on the seed plane `x = 0`. Three providers are offered:
//! closed forms for builtins, a one-dimensional reduction in `p` for models
//! whose ratio `g'/p'` depends on `p` alone, and scattered tabulation with
//! inverse-distance interpolation.

use std::io::{self, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::idw::{Bounds, Idw};
use crate::models::{characteristic_rhs, AnalyticG, ProblemSpec};
use crate::ode::{dopri_step, step_factor};
use crate::quadrature::{integrate, QuadOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CharError {
    #[error("step size underflow at tau = {tau} (h = {h:e})")]
    StepUnderflow { tau: f64, h: f64 },
    #[error("invalid integration controls: {0}")]
    InvalidControls(&'static str),
    #[error("model is not flagged as reducible to an ODE in p")]
    NotReducible,
    #[error("F0 vanishes or changes sign between p0 = {p0} and p = {p}")]
    SignChange { p0: f64, p: f64 },
    #[error("quadrature of dg/dp failed: {0}")]
    Quadrature(String),
    #[error("no closed form for g is known for this model")]
    NoClosedForm,
    #[error("no characteristic samples inside [0, 1]")]
    NoSamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharState {
    pub tau: f64,
    pub x: f64,
    pub u: f64,
    pub p: f64,
    pub g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ReachedXEnd,
    Stalled,
    Blowup,
    MaxSteps,
    /// The parameter reached `tau_max` before any other event.
    TauMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharTrajectory {
    pub states: Vec<CharState>,
    pub termination: Termination,
}

impl CharTrajectory {
    pub fn last(&self) -> &CharState {
        self.states
            .last()
            .expect("trajectory holds the initial state")
    }

    /// Writes `tau,x,u,p,g` rows with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "tau,x,u,p,g")?;
        for s in &self.states {
            writeln!(w, "{},{},{},{},{}", s.tau, s.x, s.u, s.p, s.g)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharInit {
    pub u0: f64,
    pub p0: f64,
    pub g0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CharControls {
    pub dt0: f64,
    pub tol: f64,
    pub tau_max: f64,
    pub blowup_cap: f64,
    pub stall_eps: f64,
    pub stall_window: usize,
    pub max_steps: usize,
    /// Upper bound on accepted steps; bounds the sample spacing for tabulation.
    #[serde(with = "crate::unbounded")]
    pub max_step: f64,
    pub min_step: f64,
}

impl Default for CharControls {
    fn default() -> Self {
        Self {
            dt0: 1e-3,
            tol: 1e-8,
            tau_max: 50.0,
            blowup_cap: 1e8,
            stall_eps: 1e-12,
            stall_window: 50,
            max_steps: 200_000,
            max_step: f64::INFINITY,
            min_step: 1e-14,
        }
    }
}

impl CharControls {
    fn check(&self) -> Result<(), CharError> {
        if !(self.dt0 > 0.0) {
            return Err(CharError::InvalidControls("dt0 must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(CharError::InvalidControls("tol must be positive"));
        }
        if !(self.tau_max > 0.0) {
            return Err(CharError::InvalidControls("tau_max must be positive"));
        }
        if !(self.max_step > 0.0) {
            return Err(CharError::InvalidControls("max_step must be positive"));
        }
        Ok(())
    }
}

/// Slack allowed above `x = 1` before the crossing is located.
const X_END_SLACK: f64 = 1e-12;

/// Adaptive Dormand–Prince integration of one characteristic from `x = 0`.
pub fn integrate_characteristics(
    spec: &ProblemSpec,
    init: CharInit,
    controls: &CharControls,
) -> Result<CharTrajectory, CharError> {
    controls.check()?;
    let pde = spec.pde.as_ref();
    let f = |_t: f64, y: &[f64; 4]| characteristic_rhs(pde, y[0], y[1], y[2]);

    let mut tau = 0.0;
    let mut y = [0.0, init.u0, init.p0, init.g0];
    let mut dy = f(tau, &y);
    let mut states = vec![state(tau, &y)];
    let mut h = controls.dt0.min(controls.max_step);
    let mut stall = 0usize;
    let mut steps = 0usize;
    let (atol, rtol) = (controls.tol, controls.tol);

    let termination = loop {
        if steps >= controls.max_steps {
            break Termination::MaxSteps;
        }
        let remaining = controls.tau_max - tau;
        if remaining <= controls.tau_max * f64::EPSILON {
            // x stopped advancing before the window filled
            break if stall > 0 {
                Termination::Stalled
            } else {
                Termination::TauMax
            };
        }
        let h_try = h.min(remaining).min(controls.max_step);
        let st = dopri_step(&f, tau, &y, &dy, h_try, atol, rtol);
        if st.err > 1.0 {
            h = h_try * step_factor(st.err);
            if h < controls.min_step * tau.abs().max(1.0) {
                return Err(CharError::StepUnderflow { tau, h });
            }
            continue;
        }
        steps += 1;
        let mut y_new = st.y;
        y_new[0] = y_new[0].max(y[0]);

        if y_new[0] > 1.0 + X_END_SLACK {
            let (hs, ys) = locate_x_end(&f, tau, &y, &dy, h_try, atol, rtol);
            let mut ys = ys;
            ys[0] = 1.0;
            states.push(state(tau + hs, &ys));
            break Termination::ReachedXEnd;
        }

        tau += h_try;
        y = y_new;
        dy = st.dy;
        states.push(state(tau, &y));

        if y[0] >= 1.0 {
            break Termination::ReachedXEnd;
        }
        let cap = controls.blowup_cap;
        if y[1].abs() > cap || y[2].abs() > cap || y[3].abs() > cap {
            break Termination::Blowup;
        }
        if dy[0].abs() < controls.stall_eps {
            stall += 1;
            if stall >= controls.stall_window {
                break Termination::Stalled;
            }
        } else {
            stall = 0;
        }
        h = h_try * step_factor(st.err);
    };

    Ok(CharTrajectory {
        states,
        termination,
    })
}

fn state(tau: f64, y: &[f64; 4]) -> CharState {
    CharState {
        tau,
        x: y[0],
        u: y[1],
        p: y[2],
        g: y[3],
    }
}

/// Finds the sub-step at which `x` crosses 1 by bisection on the step size
/// (the Dormand–Prince map is continuous in `h`).
fn locate_x_end<F>(
    f: &F,
    tau: f64,
    y: &[f64; 4],
    dy: &[f64; 4],
    h: f64,
    atol: f64,
    rtol: f64,
) -> (f64, [f64; 4])
where
    F: Fn(f64, &[f64; 4]) -> [f64; 4],
{
    let mut lo = 0.0;
    let mut hi = h;
    let mut best = dopri_step(f, tau, y, dy, h, atol, rtol).y;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let ym = dopri_step(f, tau, y, dy, mid, atol, rtol).y;
        if ym[0] >= 1.0 {
            hi = mid;
            best = ym;
        } else {
            lo = mid;
        }
        if (best[0] - 1.0).abs() <= 1e-15 || hi - lo <= f64::EPSILON * (tau.abs() + h) {
            break;
        }
    }
    (hi, best)
}

/// Fixed-step Dormand–Prince integration over `n` steps of size `h`, without
/// events. Used to check the integrator's order on closed-form trajectories.
pub fn integrate_fixed_step(spec: &ProblemSpec, init: CharInit, h: f64, n: usize) -> CharState {
    let pde = spec.pde.as_ref();
    let f = |_t: f64, y: &[f64; 4]| characteristic_rhs(pde, y[0], y[1], y[2]);
    let mut y = [0.0, init.u0, init.p0, init.g0];
    let mut tau = 0.0;
    for _ in 0..n {
        let dy = f(tau, &y);
        y = dopri_step(&f, tau, &y, &dy, h, 1.0, 0.0).y;
        tau += h;
    }
    state(tau, &y)
}

// ---------------------------------------------------------------------------
// g providers
// ---------------------------------------------------------------------------

/// Value of `g` at the anchor `p0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GNormalization {
    pub g0: f64,
    pub p0: f64,
}

impl GNormalization {
    pub fn new(g0: f64, p0: f64) -> Self {
        Self { g0, p0 }
    }
}

/// Reduced form: `dg/dp = (-F0_p - f_qx - p f_qu) / F0` integrated from
/// `(p0, g0)` to `p` at fixed `(x, u)`.
///
/// Refuses when `F0` vanishes or changes sign on the closed interval.
pub fn reduced_g(
    spec: &ProblemSpec,
    x: f64,
    u: f64,
    p: f64,
    norm: GNormalization,
) -> Result<f64, CharError> {
    if !spec.flags.shared_factor_reducible {
        return Err(CharError::NotReducible);
    }
    let pde = spec.pde.as_ref();
    let p0 = norm.p0;
    let f0 = |s: f64| pde.reaction(x, u, s);
    let s0 = f0(p0).signum();
    // A double zero of F0 at p = 0 (e.g. F0 ~ p^2) keeps its sign.
    if p0.min(p) <= 0.0 && p0.max(p) >= 0.0 && f0(0.0) == 0.0 {
        return Err(CharError::SignChange { p0, p });
    }
    const SIGN_PROBES: usize = 64;
    for k in 0..=SIGN_PROBES {
        let s = p0 + (p - p0) * k as f64 / SIGN_PROBES as f64;
        let v = f0(s);
        if v == 0.0 || v.signum() != s0 || !v.is_finite() {
            return Err(CharError::SignChange { p0, p });
        }
    }
    if p == p0 {
        return Ok(norm.g0);
    }
    let mid = 0.5 * (p0 + p);
    let separable = [p0, mid, p]
        .iter()
        .all(|&s| pde.diffusion_dx(x, u, s) == 0.0 && pde.diffusion_du(x, u, s) == 0.0);
    if separable {
        return Ok(norm.g0 + (f0(p0) / f0(p)).abs().ln());
    }
    let ratio = |s: f64| {
        (-pde.reaction_dp(x, u, s) - pde.diffusion_dx(x, u, s) - s * pde.diffusion_du(x, u, s))
            / f0(s)
    };
    let q = integrate(ratio, p0, p, &QuadOptions::with_tol(1e-12))
        .map_err(|e| CharError::Quadrature(e.to_string()))?;
    Ok(norm.g0 + q.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryBox {
    pub x: (f64, f64),
    pub u: (f64, f64),
    pub p: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedGrid {
    pub u0: Vec<f64>,
    pub p0: Vec<f64>,
}

impl SeedGrid {
    pub fn uniform(u: (f64, f64), nu: usize, p: (f64, f64), np: usize) -> Self {
        let lin = |(a, b): (f64, f64), n: usize| -> Vec<f64> {
            if n <= 1 {
                return vec![a];
            }
            (0..n)
                .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
                .collect()
        };
        Self {
            u0: lin(u, nu),
            p0: lin(p, np),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TabulateOptions {
    pub controls: CharControls,
    pub coverage_min: f64,
    /// Cells per axis in the coverage estimate.
    pub coverage_cells: usize,
    /// Box whose coverage is reported; defaults to `[0,1]` times the seed ranges.
    pub query_box: Option<QueryBox>,
}

impl Default for TabulateOptions {
    fn default() -> Self {
        Self {
            controls: CharControls::default(),
            coverage_min: 0.9,
            coverage_cells: 8,
            query_box: None,
        }
    }
}

/// Scattered characteristic samples with an IDW interpolant.
#[derive(Debug)]
pub struct TabulatedG {
    samples: Vec<[f64; 4]>,
    idw: Idw,
    coverage: f64,
    low_coverage: bool,
    query_box: QueryBox,
    extrapolations: AtomicU64,
    trajectories: Vec<CharTrajectory>,
}

/// JSON snapshot of a tabulated provider.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabulatedSnapshot {
    /// Rows of `x, u, p, g`.
    pub samples: Vec<[f64; 4]>,
    pub scale: [f64; 3],
    pub bounds: Bounds,
    pub coverage: f64,
    pub low_coverage: bool,
    pub query_box: QueryBox,
    pub neighbours: usize,
    pub power: f64,
}

impl TabulatedG {
    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn is_low_coverage(&self) -> bool {
        self.low_coverage
    }

    pub fn extrapolations(&self) -> u64 {
        self.extrapolations.load(Ordering::Relaxed)
    }

    pub fn samples(&self) -> &[[f64; 4]] {
        &self.samples
    }

    pub fn trajectories(&self) -> &[CharTrajectory] {
        &self.trajectories
    }

    pub fn eval(&self, x: f64, u: f64, p: f64) -> f64 {
        let l = self.idw.eval([x, u, p]);
        if l.extrapolated {
            self.extrapolations.fetch_add(1, Ordering::Relaxed);
        }
        l.value
    }

    /// As [`eval`](Self::eval) without touching the extrapolation counter.
    pub fn eval_uncounted(&self, x: f64, u: f64, p: f64) -> f64 {
        self.idw.eval([x, u, p]).value
    }

    pub fn snapshot(&self) -> TabulatedSnapshot {
        TabulatedSnapshot {
            samples: self.samples.clone(),
            scale: self.idw.scale(),
            bounds: self.idw.bounds(),
            coverage: self.coverage,
            low_coverage: self.low_coverage,
            query_box: self.query_box,
            neighbours: crate::idw::DEFAULT_NEIGHBOURS,
            power: crate::idw::DEFAULT_POWER,
        }
    }
}

#[derive(Debug, Clone)]
pub enum GVariant {
    Analytic(AnalyticG),
    ReducedOde,
    Tabulated(Arc<TabulatedG>),
}

/// Queryable `g(x, u, p)`.
#[derive(Debug, Clone)]
pub struct GProvider {
    spec: ProblemSpec,
    variant: GVariant,
    norm: GNormalization,
}

impl GProvider {
    /// Closed form of a builtin. The normalization factor is dropped, i.e.
    /// `g0 = 0` at the builtin's default anchor unless `norm` is given.
    pub fn analytic(spec: &ProblemSpec, norm: Option<GNormalization>) -> Result<Self, CharError> {
        let model = spec.builtin.as_ref().ok_or(CharError::NoClosedForm)?;
        let form = model.analytic_g().ok_or(CharError::NoClosedForm)?;
        Ok(Self {
            spec: spec.clone(),
            variant: GVariant::Analytic(form),
            norm: norm.unwrap_or(GNormalization::new(0.0, model.default_p0())),
        })
    }

    pub fn reduced(spec: &ProblemSpec, norm: Option<GNormalization>) -> Result<Self, CharError> {
        if !spec.flags.shared_factor_reducible {
            return Err(CharError::NotReducible);
        }
        let p0 = spec.builtin.as_ref().map_or(1.0, |m| m.default_p0());
        Ok(Self {
            spec: spec.clone(),
            variant: GVariant::ReducedOde,
            norm: norm.unwrap_or(GNormalization::new(0.0, p0)),
        })
    }

    /// Integrates one characteristic per seed (in parallel on the current
    /// rayon pool) with `g = g0` on the plane `x = 0`, and interpolates the
    /// samples with `x` in `[0, 1]`.
    pub fn tabulate(
        spec: &ProblemSpec,
        seeds: &SeedGrid,
        g0: f64,
        opts: &TabulateOptions,
    ) -> Result<Self, CharError> {
        let inits: Vec<CharInit> = seeds
            .u0
            .iter()
            .flat_map(|&u0| seeds.p0.iter().map(move |&p0| CharInit { u0, p0, g0 }))
            .collect();
        let trajectories: Vec<CharTrajectory> = inits
            .par_iter()
            .map(|init| integrate_characteristics(spec, *init, &opts.controls))
            .collect::<Result<_, _>>()?;

        let samples: Vec<[f64; 4]> = trajectories
            .iter()
            .flat_map(|t| t.states.iter())
            .filter(|s| (0.0..=1.0).contains(&s.x) && s.p.is_finite() && s.g.is_finite())
            .map(|s| [s.x, s.u, s.p, s.g])
            .collect();
        if samples.is_empty() {
            return Err(CharError::NoSamples);
        }
        let points: Vec<[f64; 3]> = samples.iter().map(|s| [s[0], s[1], s[2]]).collect();
        let idw = Idw::new(&points, samples.iter().map(|s| s[3]).collect());

        let range = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        };
        let query_box = opts.query_box.unwrap_or(QueryBox {
            x: (0.0, 1.0),
            u: range(&seeds.u0),
            p: range(&seeds.p0),
        });
        let coverage = coverage_fraction(&points, &query_box, opts.coverage_cells.max(1));
        let tab = TabulatedG {
            samples,
            idw,
            coverage,
            low_coverage: coverage < opts.coverage_min,
            query_box,
            extrapolations: AtomicU64::new(0),
            trajectories,
        };
        Ok(Self {
            spec: spec.clone(),
            variant: GVariant::Tabulated(Arc::new(tab)),
            norm: GNormalization::new(g0, f64::NAN),
        })
    }

    pub fn variant(&self) -> &GVariant {
        &self.variant
    }

    pub fn normalization(&self) -> GNormalization {
        self.norm
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn tabulated(&self) -> Option<&TabulatedG> {
        match &self.variant {
            GVariant::Tabulated(t) => Some(t),
            _ => None,
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self.variant {
            GVariant::Analytic(_) => "analytic",
            GVariant::ReducedOde => "reduced",
            GVariant::Tabulated(_) => "tabulated",
        }
    }

    /// `g(x, u, p)`; may be infinite where `exp(g)` is singular (e.g. at
    /// `p = 0` for power-law reactions) and NaN where undefined.
    pub fn eval(&self, x: f64, u: f64, p: f64) -> f64 {
        self.eval_with(x, u, p, true)
    }

    /// Evaluation for internal probes; tabulated lookups are not counted as
    /// extrapolations.
    pub fn eval_uncounted(&self, x: f64, u: f64, p: f64) -> f64 {
        self.eval_with(x, u, p, false)
    }

    fn eval_with(&self, x: f64, u: f64, p: f64, count: bool) -> f64 {
        let GNormalization { g0, p0 } = self.norm;
        match &self.variant {
            GVariant::Analytic(AnalyticG::Constant) => g0,
            GVariant::Analytic(AnalyticG::LogPowerRatio { power }) => {
                g0 + power * (p0 / p).abs().ln()
            }
            GVariant::Analytic(AnalyticG::LogOnePlusSquareRatio) => {
                g0 + ((1.0 + p0 * p0) / (1.0 + p * p)).ln()
            }
            GVariant::ReducedOde => {
                match reduced_g(&self.spec, x, u, p, self.norm) {
                    Ok(g) => g,
                    Err(CharError::SignChange { .. }) if p0 != 0.0 => {
                        // Anchor on the other branch of F0.
                        reduced_g(&self.spec, x, u, p, GNormalization::new(g0, -p0))
                            .unwrap_or(f64::NAN)
                    }
                    Err(_) => f64::NAN,
                }
            }
            GVariant::Tabulated(t) if count => t.eval(x, u, p),
            GVariant::Tabulated(t) => t.eval_uncounted(x, u, p),
        }
    }
}

/// Fraction of the `cells^3` sub-boxes of `qb` that contain a sample.
fn coverage_fraction(points: &[[f64; 3]], qb: &QueryBox, cells: usize) -> f64 {
    let axes = [qb.x, qb.u, qb.p];
    let mut hit = vec![false; cells * cells * cells];
    for pt in points {
        let mut idx = [0usize; 3];
        let mut inside = true;
        for k in 0..3 {
            let (lo, hi) = axes[k];
            if pt[k] < lo || pt[k] > hi {
                inside = false;
                break;
            }
            let width = hi - lo;
            idx[k] = if width > 0.0 {
                (((pt[k] - lo) / width * cells as f64) as usize).min(cells - 1)
            } else {
                0
            };
        }
        if inside {
            hit[(idx[0] * cells + idx[1]) * cells + idx[2]] = true;
        }
    }
    // Degenerate axes collapse to one cell.
    let live = |k: usize| if axes[k].1 > axes[k].0 { cells } else { 1 };
    let total = live(0) * live(1) * live(2);
    hit.iter().filter(|&&h| h).count() as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{instantiate_dirichlet, BuiltinModel, Diffusivity};

    fn rho_poly(rho: f64, n: f64) -> ProblemSpec {
        instantiate_dirichlet(BuiltinModel::RhoLaplacianPoly { rho, n }).unwrap()
    }

    #[test]
    fn heat_plus_gradient_closed_form() {
        let spec = rho_poly(2.0, 1.0);
        let c = CharControls {
            tau_max: 1.0,
            tol: 1e-12,
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
        let s = t.last();
        assert!((s.tau - 1.0).abs() < 1e-12);
        assert!((s.p - (-1f64).exp()).abs() < 1e-8);
        assert!((s.g - 1.0).abs() < 1e-8);
    }

    #[test]
    fn quasilinear_g_is_constant() {
        for diffusivity in [
            Diffusivity::Constant { value: 2.0 },
            Diffusivity::RhoLaplacian { rho: 3.0 },
            Diffusivity::MeanCurvature,
        ] {
            let spec = instantiate_dirichlet(BuiltinModel::QuasilinearGradient {
                diffusivity,
                forcing: vec![],
            })
            .unwrap();
            let c = CharControls::default();
            let t = integrate_characteristics(
                &spec,
                CharInit {
                    u0: 0.2,
                    p0: 0.7,
                    g0: 0.3,
                },
                &c,
            )
            .unwrap();
            for s in &t.states {
                assert!((s.g - 0.3).abs() <= c.tol);
                assert!((s.p - 0.7).abs() <= c.tol);
            }
        }
    }

    #[test]
    fn inverse_mcf_tangent_solution() {
        let spec = instantiate_dirichlet(BuiltinModel::InverseMcf).unwrap();
        let c = CharControls {
            tau_max: 0.5,
            tol: 1e-11,
            ..CharControls::default()
        };
        let t = integrate_characteristics(
            &spec,
            CharInit {
                u0: 0.0,
                p0: 0.0,
                g0: 0.0,
            },
            &c,
        )
        .unwrap();
        let s = t.last();
        assert_eq!(t.termination, Termination::TauMax);
        assert!((s.p + 0.5f64.tan()).abs() < 1e-8);
        assert!((s.g - 2.0 * 0.5f64.cos().ln()).abs() < 1e-8);
    }

    #[test]
    fn x_end_event_is_located() {
        let spec = rho_poly(3.0, 1.0);
        let t = integrate_characteristics(
            &spec,
            CharInit {
                u0: 0.0,
                p0: 1.0,
                g0: 0.0,
            },
            &CharControls::default(),
        )
        .unwrap();
        assert_eq!(t.termination, Termination::ReachedXEnd);
        let s = t.last();
        assert_eq!(s.x, 1.0);
        // x = 2 (p0 - p) on this family
        assert!((s.p - 0.5).abs() < 1e-7, "{}", s.p);
    }

    #[test]
    fn reduced_g_refuses_to_cross_a_double_zero() {
        let spec = instantiate_dirichlet(BuiltinModel::PorousMedium { m: 2.0 }).unwrap();
        let norm = GNormalization::new(0.0, 1.0);
        assert!(matches!(
            reduced_g(&spec, 0.5, 0.5, -2.0, norm),
            Err(CharError::SignChange { .. })
        ));
        let r = GProvider::reduced(&spec, None).unwrap();
        assert!((r.eval(0.5, 0.5, -2.0) + 2f64.ln()).abs() < 1e-10);
        let linear = instantiate_dirichlet(BuiltinModel::PorousMedium { m: 1.0 }).unwrap();
        assert!(matches!(
            GProvider::reduced(&linear, None),
            Err(CharError::NotReducible)
        ));
    }

    #[test]
    fn degenerate_diffusion_stalls() {
        let spec = instantiate_dirichlet(BuiltinModel::PorousMedium { m: 2.0 }).unwrap();
        let t = integrate_characteristics(
            &spec,
            CharInit {
                u0: 0.0,
                p0: 0.0,
                g0: 0.0,
            },
            &CharControls::default(),
        )
        .unwrap();
        assert_eq!(t.termination, Termination::Stalled);
    }

    #[test]
    fn fixed_step_order() {
        let spec = rho_poly(2.0, 1.0);
        let init = CharInit {
            u0: 0.0,
            p0: 1.0,
            g0: 0.0,
        };
        let err = |n: usize| {
            (integrate_fixed_step(&spec, init, 1.0 / n as f64, n).p - (-1f64).exp()).abs()
        };
        let ratio = err(4) / err(8);
        assert!(ratio > 32.0 / 4.0 && ratio < 32.0 * 4.0, "{ratio}");
    }

    #[test]
    fn reduced_g_examples() {
        let spec = rho_poly(3.0, 2.0);
        let g = reduced_g(&spec, 0.0, 0.0, 0.5, GNormalization::new(0.0, 1.0)).unwrap();
        assert!((g - 2.0 * 2f64.ln()).abs() < 1e-12);

        let spec = instantiate_dirichlet(BuiltinModel::InverseMcf).unwrap();
        let g = reduced_g(&spec, 0.0, 0.0, 1.0, GNormalization::new(0.0, 0.0)).unwrap();
        assert!((g - 0.5f64.ln()).abs() < 1e-12);

        let spec = instantiate_dirichlet(BuiltinModel::QuasilinearGradient {
            diffusivity: Diffusivity::Constant { value: 1.0 },
            forcing: vec![1.0],
        })
        .unwrap();
        assert_eq!(
            reduced_g(&spec, 0.0, 0.0, 1.0, GNormalization::new(0.0, 0.0)),
            Err(CharError::NotReducible)
        );
        let mut spec = spec;
        spec.flags.shared_factor_reducible = true;
        for p in [-3.0, 0.0, 2.5] {
            assert_eq!(
                reduced_g(&spec, 0.0, 0.0, p, GNormalization::new(0.4, 1.0)).unwrap(),
                0.4
            );
        }
    }

    #[test]
    fn reduced_g_refuses_sign_change() {
        let spec = rho_poly(3.0, 1.0);
        let e = reduced_g(&spec, 0.0, 0.0, -0.5, GNormalization::new(0.0, 1.0)).unwrap_err();
        assert!(matches!(e, CharError::SignChange { .. }));
        // the provider re-anchors on the negative branch
        let g = GProvider::reduced(&spec, None)
            .unwrap()
            .eval(0.0, 0.0, -0.5);
        assert!((g - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn analytic_examples() {
        let pme = instantiate_dirichlet(BuiltinModel::PorousMedium { m: 2.0 }).unwrap();
        let g = GProvider::analytic(&pme, None).unwrap();
        assert!((g.eval(0.3, 0.5, 0.25) - 4f64.ln()).abs() < 1e-15);

        let mcf = instantiate_dirichlet(BuiltinModel::McfPoly { n: 1.0 }).unwrap();
        let g = GProvider::analytic(&mcf, Some(GNormalization::new(0.25, 1.5))).unwrap();
        assert_eq!(g.eval(0.0, 0.0, 1.5), 0.25);

        let imcf = instantiate_dirichlet(BuiltinModel::InverseMcf).unwrap();
        let g = GProvider::analytic(&imcf, Some(GNormalization::new(0.7, 2.0))).unwrap();
        assert_eq!(g.eval(0.0, 0.0, 2.0), 0.7);
    }

    #[test]
    fn tabulated_heat_is_zero() {
        let spec = rho_poly(2.0, 0.0);
        let seeds = SeedGrid::uniform((-1.0, 1.0), 3, (-1.0, 1.0), 3);
        let g = GProvider::tabulate(&spec, &seeds, 0.0, &TabulateOptions::default()).unwrap();
        for q in [[0.1, 0.2, 0.3], [0.9, -0.7, 0.5], [2.0, 5.0, -5.0]] {
            assert_eq!(g.eval(q[0], q[1], q[2]), 0.0);
        }
    }

    #[test]
    fn tabulated_reproduces_nodes() {
        let spec = rho_poly(2.0, 1.0);
        let seeds = SeedGrid {
            u0: vec![0.0],
            p0: vec![0.5, 1.0, 2.0],
        };
        let g = GProvider::tabulate(&spec, &seeds, 0.0, &TabulateOptions::default()).unwrap();
        let tab = g.tabulated().unwrap();
        for s in tab.samples() {
            assert_eq!(g.eval(s[0], s[1], s[2]), s[3]);
        }
        assert_eq!(tab.extrapolations(), 0);
    }

    #[test]
    fn tabulated_matches_reduced_on_trajectory() {
        let spec = rho_poly(3.0, 1.0);
        let seeds = SeedGrid {
            u0: vec![-0.5, 0.0, 0.5],
            p0: vec![0.75, 1.0, 1.5],
        };
        let g = GProvider::tabulate(&spec, &seeds, 0.0, &TabulateOptions::default()).unwrap();
        let tab = g.tabulated().unwrap();
        let traj = tab
            .trajectories()
            .iter()
            .find(|t| t.states[0].p == 1.0 && t.states[0].u == 0.0)
            .unwrap();
        for s in &traj.states {
            let r = reduced_g(&spec, s.x, s.u, s.p, GNormalization::new(0.0, 1.0)).unwrap();
            assert!((g.eval(s.x, s.u, s.p) - r).abs() < 1e-4);
        }
    }

    #[test]
    fn coverage_is_reported() {
        let spec = rho_poly(2.0, 1.0);
        let sparse = SeedGrid {
            u0: vec![0.0],
            p0: vec![1.0],
        };
        let opts = TabulateOptions {
            query_box: Some(QueryBox {
                x: (0.0, 1.0),
                u: (-1.0, 1.0),
                p: (-1.0, 1.0),
            }),
            ..TabulateOptions::default()
        };
        let g = GProvider::tabulate(&spec, &sparse, 0.0, &opts).unwrap();
        let tab = g.tabulated().unwrap();
        assert!(tab.is_low_coverage());
        g.eval(0.5, 0.9, -0.9);
        assert_eq!(tab.extrapolations(), 1);
    }
}
