//! Energy `E = int L(x, u, u_x) dx` along computed solutions, its measured
//! time derivative and the decay predicted by `-int exp(g) F1 u_t dx`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::characteristics::GProvider;
use crate::lagrangian::{Lagrangian, LagrangianError};
use crate::models::{BoundaryCondition, ProblemSpec};
use crate::quadrature::{composite_simpson, integrate, QuadOptions};
use crate::solver::{node_derivatives, Grid1D, Simulation, StateFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("evaluating L at node {node} (t = {t}) failed: {source}")]
    Lagrangian {
        node: usize,
        t: f64,
        #[source]
        source: LagrangianError,
    },
    #[error("energy is not finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("quadrature of the potential failed at u = {u}: {reason}")]
    Potential { u: f64, reason: String },
}

type Result<T> = std::result::Result<T, EnergyError>;

/// Relative gradient threshold below which singular decay weights are masked.
pub const GRAD_EPS_REL: f64 = 1e-6;
/// Mask fraction above which a decay value is flagged unreliable.
pub const MASK_UNRELIABLE: f64 = 0.2;

/// `u_x` at node `i`: central in the interior, `b(u)` at a Robin end and the
/// second-order one-sided difference at a Dirichlet end.
pub fn node_gradient(spec: &ProblemSpec, grid: &Grid1D, u: &[f64], i: usize) -> f64 {
    let n = grid.n_cells;
    let robin = match i {
        0 => spec.bc_left.robin(),
        _ if i == n => spec.bc_right.robin(),
        _ => None,
    };
    match robin {
        Some(r) => (r.b)(u[i]),
        None => node_derivatives(spec, grid, u, i).0,
    }
}

pub fn energy_of_frame(lag: &Lagrangian, grid: &Grid1D, frame: &StateFrame) -> Result<f64> {
    let spec = lag.spec();
    let vals = (0..grid.nodes())
        .map(|i| {
            let p = node_gradient(spec, grid, &frame.u, i);
            lag.eval_l(grid.x(i), frame.u[i], p)
                .map_err(|source| EnergyError::Lagrangian {
                    node: i,
                    t: frame.t,
                    source,
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    let e = composite_simpson(&vals, grid.dx);
    if !e.is_finite() {
        return Err(EnergyError::NonFinite { t: frame.t });
    }
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayValue {
    pub value: f64,
    pub mask_fraction: f64,
    pub unreliable: bool,
}

/// Whether `exp(g)` is singular at `u_x = 0` for this model.
fn singular_at_zero_gradient(g: &GProvider, u_mid: f64) -> bool {
    !g.eval_uncounted(0.5, u_mid, 0.0).is_finite()
}

/// Simpson quadrature of `-density` over unmasked nodes, where `density`
/// receives `(x, u, p, q, u_t)`. A node is masked when its density is not
/// finite, or when `singular` holds and `|p| < grad_eps`.
fn masked_decay<F>(
    spec: &ProblemSpec,
    grid: &Grid1D,
    frame: &StateFrame,
    singular: bool,
    density: F,
) -> DecayValue
where
    F: Fn(f64, f64, f64, f64, f64) -> f64,
{
    let n = grid.nodes();
    let ps: Vec<f64> = (0..n)
        .map(|i| node_gradient(spec, grid, &frame.u, i))
        .collect();
    let pmax = ps.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    let grad_eps = GRAD_EPS_REL * pmax;
    let mut masked = 0usize;
    let vals: Vec<f64> = (0..n)
        .map(|i| {
            let ut = frame.ut[i];
            if ut == 0.0 {
                return 0.0;
            }
            let p = ps[i];
            if singular && p.abs() < grad_eps {
                masked += 1;
                return 0.0;
            }
            let q = node_derivatives(spec, grid, &frame.u, i).1;
            let v = density(grid.x(i), frame.u[i], p, q, ut);
            if v.is_finite() {
                v
            } else {
                masked += 1;
                0.0
            }
        })
        .collect();
    let mask_fraction = masked as f64 / n as f64;
    DecayValue {
        value: -composite_simpson(&vals, grid.dx),
        mask_fraction,
        unreliable: mask_fraction > MASK_UNRELIABLE,
    }
}

/// `-int exp(g) F1 u_t dx` on the frame.
pub fn decay_formula(
    spec: &ProblemSpec,
    g: &GProvider,
    grid: &Grid1D,
    frame: &StateFrame,
) -> DecayValue {
    let u_mid = frame.u[grid.n_cells / 2];
    let singular = singular_at_zero_gradient(g, u_mid);
    masked_decay(spec, grid, frame, singular, |x, u, p, q, ut| {
        g.eval(x, u, p).exp() * spec.pde.f1_weight(x, u, p, q, ut) * ut
    })
}

/// The builtin's closed decay integrand, with the same mask as [`decay_formula`].
pub fn decay_model(
    spec: &ProblemSpec,
    g: &GProvider,
    grid: &Grid1D,
    frame: &StateFrame,
) -> Option<DecayValue> {
    let model = spec.builtin.as_ref()?;
    model.decay_density(0.0, 0.0, 1.0, 0.0, 0.0)?;
    let u_mid = frame.u[grid.n_cells / 2];
    let singular = singular_at_zero_gradient(g, u_mid);
    Some(masked_decay(
        spec,
        grid,
        frame,
        singular,
        |x, u, p, q, ut| model.decay_density(x, u, p, q, ut).unwrap_or(f64::NAN),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardEnergy {
    pub e: f64,
    pub dedt: f64,
}

/// Derivative of nodal values: central inside, second-order one-sided at the ends.
fn nodal_gradient(v: &[f64], dx: f64) -> Vec<f64> {
    let n = v.len() - 1;
    (0..=n)
        .map(|i| {
            if i == 0 {
                (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dx)
            } else if i == n {
                (3.0 * v[n] - 4.0 * v[n - 1] + v[n - 2]) / (2.0 * dx)
            } else {
                (v[i + 1] - v[i - 1]) / (2.0 * dx)
            }
        })
        .collect()
}

/// `int u^(m+1)/(m+1) dx` and `-int ((u^m)_x)^2 dx`.
pub fn standard_pme_energy(grid: &Grid1D, frame: &StateFrame, m: f64) -> StandardEnergy {
    let u: Vec<f64> = frame.u.iter().map(|v| v.max(0.0)).collect();
    let e_vals: Vec<f64> = u.iter().map(|v| v.powf(m + 1.0) / (m + 1.0)).collect();
    let um: Vec<f64> = u.iter().map(|v| v.powf(m)).collect();
    let flux: Vec<f64> = nodal_gradient(&um, grid.dx).iter().map(|d| d * d).collect();
    StandardEnergy {
        e: composite_simpson(&e_vals, grid.dx),
        dedt: -composite_simpson(&flux, grid.dx),
    }
}

/// `int (int_0^u a) dx` and `-int ((a(u))_x)^2 dx` for `u_t = (a(u))_xx`.
pub fn filtration_energy<A>(grid: &Grid1D, frame: &StateFrame, a: A) -> Result<StandardEnergy>
where
    A: Fn(f64) -> f64,
{
    let opts = QuadOptions::with_tol(1e-13);
    let mut e_vals = Vec::with_capacity(frame.u.len());
    for &u in &frame.u {
        let q = integrate(&a, 0.0, u, &opts).map_err(|e| EnergyError::Potential {
            u,
            reason: e.to_string(),
        })?;
        e_vals.push(q.value);
    }
    let au: Vec<f64> = frame.u.iter().map(|&u| a(u)).collect();
    let flux: Vec<f64> = nodal_gradient(&au, grid.dx).iter().map(|d| d * d).collect();
    Ok(StandardEnergy {
        e: composite_simpson(&e_vals, grid.dx),
        dedt: -composite_simpson(&flux, grid.dx),
    })
}

/// Derivative of a sampled series on a possibly non-uniform time grid:
/// three-point centred formula inside, three-point one-sided at the ends.
pub fn measured_derivative(t: &[f64], f: &[f64]) -> Vec<f64> {
    let n = t.len();
    match n {
        0 => vec![],
        1 => vec![0.0],
        2 => {
            let d = (f[1] - f[0]) / (t[1] - t[0]);
            vec![d, d]
        }
        _ => (0..n)
            .map(|k| {
                let (a, b, c, at) = if k == 0 {
                    (0, 1, 2, 0)
                } else if k == n - 1 {
                    (n - 3, n - 2, n - 1, 2)
                } else {
                    (k - 1, k, k + 1, 1)
                };
                lagrange_derivative([t[a], t[b], t[c]], [f[a], f[b], f[c]], at)
            })
            .collect(),
    }
}

/// Derivative of the quadratic through three points, at node `at`.
fn lagrange_derivative(t: [f64; 3], f: [f64; 3], at: usize) -> f64 {
    let s = t[at];
    let mut d = 0.0;
    for j in 0..3 {
        let mut num = 0.0;
        let mut den = 1.0;
        for m in 0..3 {
            if m == j {
                continue;
            }
            den *= t[j] - t[m];
            let mut prod = 1.0;
            for (l, tl) in t.iter().enumerate() {
                if l != j && l != m {
                    prod *= s - tl;
                }
            }
            num += prod;
        }
        d += f[j] * num / den;
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardTrace {
    pub e: Vec<f64>,
    pub dedt_measured: Vec<f64>,
    pub dedt_formula: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub e: Vec<f64>,
    pub dedt_measured: Vec<f64>,
    pub dedt_formula: Vec<f64>,
    pub dedt_model: Option<Vec<f64>>,
    pub mask_fraction: Vec<f64>,
    /// `max |u_t|` per frame.
    pub max_ut: Vec<f64>,
    /// Classical energy for `u_t = (a(u))_xx` models.
    pub standard: Option<StandardTrace>,
}

impl EnergyTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Writes `t,E,dEdt_measured,dEdt_formula,dEdt_model,mask_fraction`; the
    /// classical energy columns are appended when present.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t,E,dEdt_measured,dEdt_formula,dEdt_model,mask_fraction")?;
        if self.standard.is_some() {
            write!(
                w,
                ",E_standard,dEdt_standard_measured,dEdt_standard_formula"
            )?;
        }
        writeln!(w)?;
        for k in 0..self.len() {
            let model = self
                .dedt_model
                .as_ref()
                .map_or(String::new(), |m| m[k].to_string());
            write!(
                w,
                "{},{},{},{},{},{}",
                self.times[k],
                self.e[k],
                self.dedt_measured[k],
                self.dedt_formula[k],
                model,
                self.mask_fraction[k]
            )?;
            if let Some(s) = &self.standard {
                write!(
                    w,
                    ",{},{},{}",
                    s.e[k], s.dedt_measured[k], s.dedt_formula[k]
                )?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

struct FrameEnergy {
    e: f64,
    formula: DecayValue,
    model: Option<DecayValue>,
    standard: Option<StandardEnergy>,
    max_ut: f64,
}

/// Energy quantities for every frame of a simulation, frames in parallel.
pub fn energy_trace(lag: &Lagrangian, sim: &Simulation) -> Result<EnergyTrace> {
    let spec = lag.spec();
    let g = lag.g_provider();
    let grid = &sim.grid;
    let per_frame: Vec<FrameEnergy> = sim
        .frames
        .par_iter()
        .map(|f| {
            let standard = match &spec.builtin {
                Some(crate::models::BuiltinModel::PorousMedium { m }) => {
                    Some(standard_pme_energy(grid, f, *m))
                }
                Some(crate::models::BuiltinModel::Filtration { law }) => {
                    Some(filtration_energy(grid, f, |u| law.a(u))?)
                }
                _ => None,
            };
            Ok(FrameEnergy {
                e: energy_of_frame(lag, grid, f)?,
                formula: decay_formula(spec, g, grid, f),
                model: decay_model(spec, g, grid, f),
                standard,
                max_ut: f.ut.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            })
        })
        .collect::<Result<_>>()?;

    let times: Vec<f64> = sim.frames.iter().map(|f| f.t).collect();
    let e: Vec<f64> = per_frame.iter().map(|f| f.e).collect();
    let dedt_measured = measured_derivative(&times, &e);
    let standard = if per_frame.iter().all(|f| f.standard.is_some()) && !per_frame.is_empty() {
        let se: Vec<f64> = per_frame.iter().map(|f| f.standard.unwrap().e).collect();
        Some(StandardTrace {
            dedt_measured: measured_derivative(&times, &se),
            dedt_formula: per_frame.iter().map(|f| f.standard.unwrap().dedt).collect(),
            e: se,
        })
    } else {
        None
    };
    let dedt_model = if per_frame.iter().all(|f| f.model.is_some()) {
        Some(per_frame.iter().map(|f| f.model.unwrap().value).collect())
    } else {
        None
    };
    Ok(EnergyTrace {
        dedt_formula: per_frame.iter().map(|f| f.formula.value).collect(),
        mask_fraction: per_frame.iter().map(|f| f.formula.mask_fraction).collect(),
        max_ut: per_frame.iter().map(|f| f.max_ut).collect(),
        dedt_model,
        standard,
        times,
        e,
        dedt_measured,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayViolationKind {
    /// `E` increased between consecutive frames.
    Monotonicity,
    /// Measured and predicted `dE/dt` disagree.
    Consistency,
    /// Predicted `dE/dt` not negative away from equilibrium.
    StrictDecay,
    StandardMonotonicity,
    StandardConsistency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayViolation {
    pub kind: DecayViolationKind,
    pub index: usize,
    pub t: f64,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyOptions {
    pub tol_mono: f64,
    pub tol_consistency: f64,
    /// Consistency is only checked where the mask fraction is below this.
    pub mask_threshold: f64,
    /// `max |u_t|` above which strict decay is required.
    pub ut_threshold: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            tol_mono: 1e-8,
            tol_consistency: 0.05,
            mask_threshold: 0.1,
            ut_threshold: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    pub frames: usize,
    pub e_first: f64,
    pub e_last: f64,
    /// Largest `|measured - formula| / (1 + |formula|)` over checked times.
    pub max_consistency_error: f64,
    pub monotone: bool,
    pub consistent: bool,
    pub strictly_decaying: bool,
    pub standard_monotone: Option<bool>,
    pub max_mask_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub violations: Vec<DecayViolation>,
    pub summary: DecaySummary,
}

impl DecayReport {
    pub fn count(&self, kind: DecayViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    pub fn has_monotonicity_violation(&self) -> bool {
        self.count(DecayViolationKind::Monotonicity)
            + self.count(DecayViolationKind::StandardMonotonicity)
            > 0
    }
}

fn monotonicity(
    times: &[f64],
    e: &[f64],
    tol: f64,
    kind: DecayViolationKind,
    out: &mut Vec<DecayViolation>,
) {
    for k in 0..e.len().saturating_sub(1) {
        let bound = e[k] + tol * (1.0 + e[k].abs());
        if e[k + 1] > bound {
            out.push(DecayViolation {
                kind,
                index: k + 1,
                t: times[k + 1],
                value: e[k + 1],
                bound,
            });
        }
    }
}

/// Checks monotonicity of `E`, consistency of the measured derivative with
/// the predicted one at interior times, and strict decay off equilibrium.
pub fn verify_decay(trace: &EnergyTrace, opts: &VerifyOptions) -> DecayReport {
    let mut violations = Vec::new();
    let n = trace.len();
    monotonicity(
        &trace.times,
        &trace.e,
        opts.tol_mono,
        DecayViolationKind::Monotonicity,
        &mut violations,
    );

    let mut max_err: f64 = 0.0;
    for k in 1..n.saturating_sub(1) {
        if trace.mask_fraction[k] >= opts.mask_threshold {
            continue;
        }
        let f = trace.dedt_formula[k];
        let err = (trace.dedt_measured[k] - f).abs() / (1.0 + f.abs());
        max_err = max_err.max(err);
        if err > opts.tol_consistency {
            violations.push(DecayViolation {
                kind: DecayViolationKind::Consistency,
                index: k,
                t: trace.times[k],
                value: trace.dedt_measured[k],
                bound: f,
            });
        }
    }
    for k in 0..n {
        if trace.max_ut[k] > opts.ut_threshold && !(trace.dedt_formula[k] < 0.0) {
            violations.push(DecayViolation {
                kind: DecayViolationKind::StrictDecay,
                index: k,
                t: trace.times[k],
                value: trace.dedt_formula[k],
                bound: 0.0,
            });
        }
    }
    let standard_monotone = trace.standard.as_ref().map(|s| {
        let before = violations.len();
        monotonicity(
            &trace.times,
            &s.e,
            opts.tol_mono,
            DecayViolationKind::StandardMonotonicity,
            &mut violations,
        );
        for k in 1..n.saturating_sub(1) {
            let f = s.dedt_formula[k];
            if (s.dedt_measured[k] - f).abs() > opts.tol_consistency * (1.0 + f.abs()) {
                violations.push(DecayViolation {
                    kind: DecayViolationKind::StandardConsistency,
                    index: k,
                    t: trace.times[k],
                    value: s.dedt_measured[k],
                    bound: f,
                });
            }
        }
        !violations[before..]
            .iter()
            .any(|v| v.kind == DecayViolationKind::StandardMonotonicity)
    });

    let count = |k| {
        violations
            .iter()
            .filter(|v: &&DecayViolation| v.kind == k)
            .count()
    };
    let summary = DecaySummary {
        frames: n,
        e_first: trace.e.first().copied().unwrap_or(f64::NAN),
        e_last: trace.e.last().copied().unwrap_or(f64::NAN),
        max_consistency_error: max_err,
        monotone: count(DecayViolationKind::Monotonicity) == 0,
        consistent: count(DecayViolationKind::Consistency) == 0,
        strictly_decaying: count(DecayViolationKind::StrictDecay) == 0,
        standard_monotone,
        max_mask_fraction: trace.mask_fraction.iter().copied().fold(0.0, f64::max),
    };
    DecayReport {
        violations,
        summary,
    }
}

/// Whether the spec has Dirichlet data at both ends.
pub fn dirichlet_both(spec: &ProblemSpec) -> bool {
    matches!(spec.bc_left, BoundaryCondition::Dirichlet { .. })
        && matches!(spec.bc_right, BoundaryCondition::Dirichlet { .. })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::LagrangianOptions;
    use crate::models::{instantiate_dirichlet, BuiltinModel, Diffusivity, FiltrationLaw};
    use crate::solver::{initial_frame, semi_discrete_rhs};
    use std::f64::consts::PI;

    fn lag_for(model: BuiltinModel) -> Lagrangian {
        let spec = instantiate_dirichlet(model).unwrap();
        let g = GProvider::analytic(&spec, None).unwrap();
        Lagrangian::build(&spec, g, &LagrangianOptions::default()).unwrap()
    }

    fn frame(u: Vec<f64>) -> StateFrame {
        let n = u.len();
        StateFrame {
            t: 0.0,
            u,
            ut: vec![0.0; n],
        }
    }

    #[test]
    fn rho_laplacian_energy_of_linear_profile() {
        // u = x violates homogeneous Dirichlet data, which L does not need
        let lag = lag_for(BuiltinModel::QuasilinearGradient {
            diffusivity: Diffusivity::RhoLaplacian { rho: 3.0 },
            forcing: vec![],
        });
        let grid = Grid1D::new(16).unwrap();
        let e = energy_of_frame(&lag, &grid, &frame(grid.xs())).unwrap();
        assert!((e - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn zero_state_has_zero_energy() {
        let lag = lag_for(BuiltinModel::QuasilinearGradient {
            diffusivity: Diffusivity::Constant { value: 1.0 },
            forcing: vec![],
        });
        let grid = Grid1D::new(16).unwrap();
        assert_eq!(
            energy_of_frame(&lag, &grid, &frame(vec![0.0; 17])).unwrap(),
            0.0
        );
    }

    #[test]
    fn mean_curvature_energy_of_linear_profile() {
        let lag = lag_for(BuiltinModel::QuasilinearGradient {
            diffusivity: Diffusivity::MeanCurvature,
            forcing: vec![],
        });
        let grid = Grid1D::new(16).unwrap();
        let e = energy_of_frame(&lag, &grid, &frame(grid.xs())).unwrap();
        assert!((e - (2f64.sqrt() - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn equilibrium_decay_is_exactly_zero() {
        let lag = lag_for(BuiltinModel::PorousMedium { m: 2.0 });
        let grid = Grid1D::new(16).unwrap();
        let d = decay_formula(lag.spec(), lag.g_provider(), &grid, &frame(vec![0.3; 17]));
        assert_eq!(d.value, 0.0);
    }

    #[test]
    fn quasilinear_decay_is_minus_simpson_ut_squared() {
        let spec = instantiate_dirichlet(BuiltinModel::QuasilinearGradient {
            diffusivity: Diffusivity::Constant { value: 1.0 },
            forcing: vec![0.5],
        })
        .unwrap();
        let g = GProvider::analytic(&spec, None).unwrap();
        let grid = Grid1D::new(32).unwrap();
        let f = initial_frame(&spec, &grid, &grid.sample(|x| (PI * x).sin())).unwrap();
        let sq: Vec<f64> = f.ut.iter().map(|v| v * v).collect();
        assert_eq!(
            decay_formula(&spec, &g, &grid, &f).value,
            -composite_simpson(&sq, grid.dx)
        );
    }

    #[test]
    fn pme_decay_matches_closed_integrand() {
        let spec = instantiate_dirichlet(BuiltinModel::PorousMedium { m: 2.0 }).unwrap();
        let g = GProvider::analytic(&spec, None).unwrap();
        let grid = Grid1D::new(64).unwrap();
        let f = initial_frame(
            &spec,
            &grid,
            &grid.sample(|x| 0.2 + x * (1.0 - x) - 0.2 * x),
        )
        .unwrap_err();
        assert!(matches!(
            f,
            crate::solver::SolverError::BoundaryMismatch { .. }
        ));
        let u = grid.sample(|x| x * (1.0 - x) * (1.0 + x));
        let f = initial_frame(&spec, &grid, &u).unwrap();
        let d = decay_formula(&spec, &g, &grid, &f);
        let m = decay_model(&spec, &g, &grid, &f).unwrap();
        assert!((d.value - m.value).abs() <= 1e-12 * (1.0 + m.value.abs()));
        assert!(d.value < 0.0);
    }

    #[test]
    fn standard_pme_examples() {
        let grid = Grid1D::new(64).unwrap();
        let z = standard_pme_energy(&grid, &frame(vec![0.0; 65]), 2.0);
        assert_eq!((z.e, z.dedt), (0.0, 0.0));
        let s = standard_pme_energy(&grid, &frame(grid.sample(|x| (PI * x).sin())), 1.0);
        assert!((s.e - 0.25).abs() < 1e-8);
        let c = standard_pme_energy(&grid, &frame(grid.xs()), 2.0);
        assert!((c.e - 1.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn filtration_examples() {
        let grid = Grid1D::new(32).unwrap();
        let f = frame(grid.sample(|x| 0.5 + 0.3 * (PI * x).sin()));
        let a = filtration_energy(&grid, &f, |u| u * u).unwrap();
        let b = standard_pme_energy(&grid, &f, 2.0);
        assert!((a.e - b.e).abs() < 1e-12);
        assert!((a.dedt - b.dedt).abs() < 1e-12);

        let zero = filtration_energy(&grid, &f, |_| 0.0).unwrap();
        assert_eq!(zero.e, 0.0);

        let law = FiltrationLaw::Superslow;
        let e = filtration_energy(&grid, &frame(vec![1.0; 33]), |u| law.a(u))
            .unwrap()
            .e;
        let n = 2_000_000;
        let riemann: f64 = (0..n)
            .map(|k| {
                let s = (k as f64 + 0.5) / n as f64;
                (-1.0 / s).exp()
            })
            .sum::<f64>()
            / n as f64;
        assert!((e - riemann).abs() < 1e-9, "{e} vs {riemann}");
    }

    #[test]
    fn measured_derivative_is_exact_for_quadratics() {
        let t = [0.0, 0.1, 0.25, 0.3, 0.7];
        let f: Vec<f64> = t.iter().map(|s| 3.0 * s * s - s + 2.0).collect();
        let d = measured_derivative(&t, &f);
        for (s, v) in t.iter().zip(d) {
            assert!((v - (6.0 * s - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn verify_flags_increase() {
        let trace = EnergyTrace {
            times: vec![0.0, 1.0, 2.0],
            e: vec![1.0, 0.5, 0.7],
            dedt_measured: vec![-0.5, -0.15, 0.2],
            dedt_formula: vec![-0.5, -0.15, 0.2],
            dedt_model: None,
            mask_fraction: vec![0.0; 3],
            max_ut: vec![1.0; 3],
            standard: None,
        };
        let r = verify_decay(&trace, &VerifyOptions::default());
        assert_eq!(r.count(DecayViolationKind::Monotonicity), 1);
        assert_eq!(r.count(DecayViolationKind::StrictDecay), 1);
        assert!(r.has_monotonicity_violation());
    }

    #[test]
    fn semi_discrete_rhs_zero_on_constant_pme() {
        let spec = instantiate_dirichlet(BuiltinModel::PorousMedium { m: 2.0 }).unwrap();
        let grid = Grid1D::new(8).unwrap();
        let mut u = vec![0.4; 9];
        u[0] = 0.0;
        u[8] = 0.0;
        let r = semi_discrete_rhs(&spec, &grid, &u, 0.0).unwrap();
        assert!(r[2..7].iter().all(|v| v.abs() < 1e-12));
    }
}
