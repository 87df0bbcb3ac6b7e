//! PDE specifications and the builtin model family.
//!
//! A model is written as `F1(x, u, p, q, u_t) = f_q(x, u, p) q - F0(x, u, p)`
//! where `p = u_x`, `q = u_xx`, `f_q >= 0` is the (possibly degenerate)
//! diffusion coefficient evaluated at `q = u_t = 0`, `F0` is the reaction part
//! and `F1` carries all the `u_t` dependence. Every model must also provide the
//! resolved form `u_t = G(x, u, p, q)` used by the time stepper.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

/// Relative step used by the central-difference fallbacks.
pub const FD_REL_STEP: f64 = 1e-6;

fn central_diff(f: impl Fn(f64) -> f64, at: f64) -> f64 {
    let h = FD_REL_STEP * (1.0 + at.abs());
    (f(at + h) - f(at - h)) / (2.0 * h)
}

/// Coefficient callbacks of a 1-D parabolic model.
///
/// The derivative methods default to central differences with step
/// `1e-6 (1 + |arg|)`; builtins override them with exact expressions.
/// Implementations must be pure: they are called concurrently.
pub trait Pde: Send + Sync {
    /// `f_q(x, u, p, 0, 0)`.
    fn diffusion(&self, x: f64, u: f64, p: f64) -> f64;

    fn diffusion_dx(&self, x: f64, u: f64, p: f64) -> f64 {
        central_diff(|s| self.diffusion(s, u, p), x)
    }

    fn diffusion_du(&self, x: f64, u: f64, p: f64) -> f64 {
        central_diff(|s| self.diffusion(x, s, p), u)
    }

    /// `F0(x, u, p)`.
    fn reaction(&self, x: f64, u: f64, p: f64) -> f64;

    fn reaction_dp(&self, x: f64, u: f64, p: f64) -> f64 {
        central_diff(|s| self.reaction(x, u, s), p)
    }

    /// Resolved time derivative `u_t = G(x, u, p, q)`.
    fn rhs(&self, x: f64, u: f64, p: f64, q: f64) -> f64;

    /// `F1(x, u, p, q, u_t)`.
    fn f1_weight(&self, x: f64, u: f64, p: f64, q: f64, ut: f64) -> f64;

    /// Right-hand side of the characteristic system in a rescaled parameter,
    /// for models where the plain system degenerates. Returns
    /// `[x', u', p', g']` or `None` to use the plain system.
    fn rescaled_characteristics(&self, _x: f64, _u: f64, _p: f64) -> Option<[f64; 4]> {
        None
    }

    /// Flux potential `Phi(u)` when the model is `u_t = (Phi(u))_xx`.
    fn potential(&self, _u: f64) -> Option<f64> {
        None
    }
}

/// Right-hand side of the auxiliary characteristic ODEs
/// `(x, u, p, g)' = (f_q, f_q p, F0, -F0_p - f_qx - p f_qu)`.
pub fn characteristic_rhs(pde: &dyn Pde, x: f64, u: f64, p: f64) -> [f64; 4] {
    if let Some(r) = pde.rescaled_characteristics(x, u, p) {
        return r;
    }
    let fq = pde.diffusion(x, u, p);
    [
        fq,
        fq * p,
        pde.reaction(x, u, p),
        -pde.reaction_dp(x, u, p) - pde.diffusion_dx(x, u, p) - p * pde.diffusion_du(x, u, p),
    ]
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Nonlinear Robin data `u_x = b(u)` with its derivative.
#[derive(Clone)]
pub struct RobinData {
    pub b: ScalarFn,
    pub b_du: ScalarFn,
}

impl RobinData {
    pub fn new(
        b: impl Fn(f64) -> f64 + Send + Sync + 'static,
        b_du: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            b: Arc::new(b),
            b_du: Arc::new(b_du),
        }
    }

    /// `b(u) = offset + slope u`.
    pub fn affine(offset: f64, slope: f64) -> Self {
        Self::new(move |u| offset + slope * u, move |_| slope)
    }
}

#[derive(Clone)]
pub enum BoundaryCondition {
    /// `u = value` (homogeneous when `value == 0`).
    Dirichlet { value: f64 },
    /// `u_x = b(u)`.
    Robin(RobinData),
}

impl BoundaryCondition {
    pub fn dirichlet() -> Self {
        Self::Dirichlet { value: 0.0 }
    }

    pub fn neumann() -> Self {
        Self::Robin(RobinData::affine(0.0, 0.0))
    }

    pub fn is_robin(&self) -> bool {
        matches!(self, Self::Robin(_))
    }

    pub fn robin(&self) -> Option<&RobinData> {
        match self {
            Self::Robin(r) => Some(r),
            Self::Dirichlet { .. } => None,
        }
    }
}

impl fmt::Debug for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Dirichlet { value } => write!(f, "Dirichlet({value})"),
            Self::Robin(r) => write!(f, "Robin(b(0) = {})", (r.b)(0.0)),
        }
    }
}

/// JSON form of a boundary condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcDescriptor {
    Dirichlet,
    Neumann,
    DirichletValue(f64),
    /// `u_x = offset + slope u`.
    Robin {
        offset: f64,
        slope: f64,
    },
}

impl BcDescriptor {
    pub fn to_condition(&self) -> BoundaryCondition {
        match *self {
            Self::Dirichlet => BoundaryCondition::dirichlet(),
            Self::Neumann => BoundaryCondition::neumann(),
            Self::DirichletValue(value) => BoundaryCondition::Dirichlet { value },
            Self::Robin { offset, slope } => {
                BoundaryCondition::Robin(RobinData::affine(offset, slope))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StructureFlags {
    pub autonomous_in_x: bool,
    pub autonomous_in_u: bool,
    /// `(-F0_p - f_qx - p f_qu) / F0` depends on `p` alone.
    pub shared_factor_reducible: bool,
}

/// A model together with boundary data.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub pde: Arc<dyn Pde>,
    pub bc_left: BoundaryCondition,
    pub bc_right: BoundaryCondition,
    pub flags: StructureFlags,
    /// Present when the spec was instantiated from a builtin.
    pub builtin: Option<BuiltinModel>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("bc_left", &self.bc_left)
            .field("bc_right", &self.bc_right)
            .field("flags", &self.flags)
            .finish()
    }
}

impl ProblemSpec {
    /// A user-defined model; derivative callbacks fall back to the trait
    /// defaults unless the implementation overrides them.
    pub fn custom(
        name: impl Into<String>,
        pde: Arc<dyn Pde>,
        bc_left: BoundaryCondition,
        bc_right: BoundaryCondition,
        flags: StructureFlags,
    ) -> Self {
        Self {
            name: name.into(),
            pde,
            bc_left,
            bc_right,
            flags,
            builtin: None,
        }
    }

    pub fn bc(&self, end: End) -> &BoundaryCondition {
        match end {
            End::Left => &self.bc_left,
            End::Right => &self.bc_right,
        }
    }

    pub fn with_bcs(mut self, left: BoundaryCondition, right: BoundaryCondition) -> Self {
        self.bc_left = left;
        self.bc_right = right;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum End {
    Left,
    Right,
}

impl End {
    pub fn x(self) -> f64 {
        match self {
            End::Left => 0.0,
            End::Right => 1.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Builtins
// ---------------------------------------------------------------------------

/// Gradient-dependent diffusivity `a(p)` of the quasilinear family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diffusivity {
    Constant {
        value: f64,
    },
    /// `(rho - 1) |p|^(rho - 2)`
    RhoLaplacian {
        rho: f64,
    },
    /// `(1 + p^2)^(-3/2)`
    MeanCurvature,
}

impl Diffusivity {
    pub fn eval(&self, p: f64) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::RhoLaplacian { rho } => (rho - 1.0) * p.abs().powf(rho - 2.0),
            Self::MeanCurvature => (1.0 + p * p).powf(-1.5),
        }
    }
}

/// Constitutive law `a(u)` of `u_t = (a(u))_xx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FiltrationLaw {
    /// `a(u) = u^m`
    Power { m: f64 },
    /// `a(u) = exp(-1/u)` for `u > 0`, zero otherwise.
    Superslow,
}

impl FiltrationLaw {
    pub fn a(&self, u: f64) -> f64 {
        let u = u.max(0.0);
        match *self {
            Self::Power { m } => u.powf(m),
            Self::Superslow => {
                if u > 0.0 {
                    (-1.0 / u).exp()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn a_u(&self, u: f64) -> f64 {
        let u = u.max(0.0);
        match *self {
            Self::Power { m } => m * u.powf(m - 1.0),
            Self::Superslow => {
                if u > 0.0 {
                    (-1.0 / u).exp() / (u * u)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn a_uu(&self, u: f64) -> f64 {
        let u = u.max(0.0);
        match *self {
            Self::Power { m } => scaled_power(m * (m - 1.0), u, m - 2.0),
            Self::Superslow => {
                if u > 0.0 {
                    (-1.0 / u).exp() * (1.0 - 2.0 * u) / u.powi(4)
                } else {
                    0.0
                }
            }
        }
    }
}

/// `c * u^e` with `c == 0` short-circuiting (avoids `0 * inf`).
fn scaled_power(c: f64, u: f64, e: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c * u.powf(e)
    }
}

/// `p^n`; integral exponents keep the sign of `p`, non-integral ones need `p >= 0`.
pub fn gradient_power(p: f64, n: f64) -> f64 {
    if n == 0.0 {
        1.0
    } else if n.fract() == 0.0 && n.abs() < i32::MAX as f64 {
        p.powi(n as i32)
    } else {
        p.powf(n)
    }
}

/// The model family shipped with the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum BuiltinModel {
    /// `u_t = a(u_x) u_xx + h(u)` with `h(u) = sum_k forcing[k] u^k`.
    QuasilinearGradient {
        diffusivity: Diffusivity,
        #[serde(default)]
        forcing: Vec<f64>,
    },
    /// `u_t = (|u_x|^(rho-2) u_x)_x + u_x^n`.
    RhoLaplacianPoly { rho: f64, n: f64 },
    /// `u_t = u_xx / (1 + u_x^2)^(3/2) + u_x^n`.
    McfPoly { n: f64 },
    /// `u_t = (1 + u_x^2)^2 / (1 + u_x^2 - u_xx)`.
    InverseMcf,
    /// `u_t = (u^m)_xx`, `u >= 0`.
    PorousMedium { m: f64 },
    /// `u_t = (a(u))_xx`, `u >= 0`.
    Filtration { law: FiltrationLaw },
}

/// Closed-form `g(p)` shapes; `g0`/`p0` enter through [`GNormalization`].
///
/// [`GNormalization`]: crate::characteristics::GNormalization
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticG {
    /// `g = g0`.
    Constant,
    /// `g = g0 + power * log|p0 / p|`.
    LogPowerRatio { power: f64 },
    /// `g = g0 + log((1 + p0^2) / (1 + p^2))`.
    LogOnePlusSquareRatio,
}

impl BuiltinModel {
    pub fn name(&self) -> &'static str {
        match self {
            Self::QuasilinearGradient { .. } => "quasilinear_gradient",
            Self::RhoLaplacianPoly { .. } => "rho_laplacian_poly",
            Self::McfPoly { .. } => "mcf_poly",
            Self::InverseMcf => "inverse_mcf",
            Self::PorousMedium { .. } => "porous_medium",
            Self::Filtration { .. } => "filtration",
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |name, value, reason| {
            Err(ModelError::InvalidParameter {
                name,
                value,
                reason,
            })
        };
        let finite = |name, value: f64| {
            if value.is_finite() {
                Ok(())
            } else {
                bad(name, value, "must be finite")
            }
        };
        match self {
            Self::QuasilinearGradient {
                diffusivity,
                forcing,
            } => {
                for &c in forcing {
                    finite("forcing", c)?;
                }
                match *diffusivity {
                    Diffusivity::Constant { value } if !(value > 0.0 && value.is_finite()) => {
                        bad("a", value, "constant diffusivity must be positive")
                    }
                    Diffusivity::RhoLaplacian { rho } if !(rho >= 2.0 && rho.is_finite()) => {
                        bad("rho", rho, "requires rho >= 2")
                    }
                    _ => Ok(()),
                }
            }
            Self::RhoLaplacianPoly { rho, n } => {
                if !(*rho >= 2.0 && rho.is_finite()) {
                    return bad("rho", *rho, "requires rho >= 2");
                }
                if !(*n >= 0.0 && n.is_finite()) {
                    return bad("n", *n, "requires n >= 0");
                }
                Ok(())
            }
            Self::McfPoly { n } => {
                if !(*n >= 0.0 && n.is_finite()) {
                    return bad("n", *n, "requires n >= 0");
                }
                Ok(())
            }
            Self::InverseMcf => Ok(()),
            Self::PorousMedium { m } => {
                if !(*m >= 1.0 && m.is_finite()) {
                    return bad("m", *m, "requires m >= 1");
                }
                Ok(())
            }
            Self::Filtration { law } => match *law {
                FiltrationLaw::Power { m } if !(m >= 1.0 && m.is_finite()) => {
                    bad("m", m, "requires m >= 1")
                }
                _ => Ok(()),
            },
        }
    }

    pub fn flags(&self) -> StructureFlags {
        // the reduced form divides by F0, which vanishes identically for linear diffusion
        let reducible = !matches!(
            self,
            Self::QuasilinearGradient { .. }
                | Self::PorousMedium { m: 1.0 }
                | Self::Filtration {
                    law: FiltrationLaw::Power { m: 1.0 }
                }
        );
        let autonomous_in_u = matches!(
            self,
            Self::RhoLaplacianPoly { .. } | Self::McfPoly { .. } | Self::InverseMcf
        ) || matches!(self, Self::QuasilinearGradient { forcing, .. } if forcing.iter().skip(1).all(|&c| c == 0.0));
        StructureFlags {
            autonomous_in_x: true,
            autonomous_in_u,
            shared_factor_reducible: reducible,
        }
    }

    /// Closed-form `g` (before normalization), if known.
    pub fn analytic_g(&self) -> Option<AnalyticG> {
        Some(match self {
            Self::QuasilinearGradient { .. } => AnalyticG::Constant,
            Self::RhoLaplacianPoly { n, .. } | Self::McfPoly { n } => {
                if *n == 0.0 {
                    AnalyticG::Constant
                } else {
                    AnalyticG::LogPowerRatio { power: *n }
                }
            }
            Self::InverseMcf => AnalyticG::LogOnePlusSquareRatio,
            Self::PorousMedium { m } if *m == 1.0 => AnalyticG::Constant,
            Self::PorousMedium { .. } | Self::Filtration { .. } => {
                AnalyticG::LogPowerRatio { power: 1.0 }
            }
        })
    }

    /// Anchor `p0` for which dropping the factor `exp(g0) |p0|^n` is exact.
    pub fn default_p0(&self) -> f64 {
        match self.analytic_g() {
            Some(AnalyticG::LogPowerRatio { .. }) => 1.0,
            _ => 0.0,
        }
    }

    /// Preferred `p_*` for the `L0` integral where `p_base` is unusable
    /// (there `exp(g)` is singular).
    pub fn recommended_p_star(&self) -> Option<f64> {
        match self {
            Self::RhoLaplacianPoly { n, .. } | Self::McfPoly { n } if *n > 0.0 => Some(1.0),
            Self::InverseMcf => Some(0.0),
            _ => None,
        }
    }

    /// Known closed-form Lagrangian up to terms affine in `p`, with the
    /// normalization constant set to 1.
    pub fn closed_form_lagrangian(&self, _x: f64, u: f64, p: f64) -> Option<f64> {
        let a = p.abs();
        match self {
            Self::QuasilinearGradient {
                diffusivity,
                forcing,
            } => {
                let h_int: f64 = forcing
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * u.powi(k as i32 + 1) / (k as f64 + 1.0))
                    .sum();
                let d = match *diffusivity {
                    Diffusivity::Constant { value } => 0.5 * value * p * p,
                    Diffusivity::RhoLaplacian { rho } => a.powf(rho) / rho,
                    Diffusivity::MeanCurvature => (1.0 + p * p).sqrt(),
                };
                Some(d - h_int)
            }
            Self::RhoLaplacianPoly { rho, n } => {
                let k = rho - n;
                if k == 0.0 || k == 1.0 {
                    return None;
                }
                Some((rho - 1.0) / (k * (k - 1.0)) * a.powf(k) - u)
            }
            Self::McfPoly { n } => {
                let s = (1.0 + p * p).sqrt();
                if *n == 0.0 {
                    Some(s - u)
                } else if *n == 1.0 {
                    Some(-a * acoth(s) - u)
                } else if *n == 2.0 {
                    Some(acoth(s) - 2.0 * s - u)
                } else {
                    None
                }
            }
            Self::InverseMcf => Some(p * p.atan() - 0.5 * (1.0 + p * p).ln() - u),
            Self::PorousMedium { m } => {
                if a == 0.0 {
                    return Some(0.0);
                }
                Some(m * u.max(0.0).powf(m - 1.0) * a * (a.ln() - 1.0))
            }
            Self::Filtration { law } => {
                if a == 0.0 {
                    return Some(0.0);
                }
                Some(law.a_u(u) * a * (a.ln() - 1.0))
            }
        }
    }

    /// The commonly quoted closed form for the inverse mean curvature flow
    /// energy, `p atan p - log(1 + p^2) - u`. Its `L_pp` is
    /// `(1 - p^2) / (1 + p^2)^2` rather than `1 / (1 + p^2)`.
    pub fn inverse_mcf_quoted_form(p: f64, u: f64) -> f64 {
        p * p.atan() - (1.0 + p * p).ln() - u
    }

    /// Integrand `w` such that the model's closed decay is `dE/dt = -int w dx`.
    pub fn decay_density(&self, _x: f64, _u: f64, p: f64, q: f64, ut: f64) -> Option<f64> {
        match self {
            Self::QuasilinearGradient { .. } => Some(ut * ut),
            Self::RhoLaplacianPoly { n, .. } | Self::McfPoly { n } => {
                Some(ut * ut / p.abs().powf(*n))
            }
            Self::InverseMcf => {
                let s = 1.0 + p * p;
                Some((q + s) / s * ut)
            }
            Self::PorousMedium { m } if *m == 1.0 => Some(ut * ut),
            Self::PorousMedium { .. } | Self::Filtration { .. } => Some(ut * ut / p.abs()),
        }
    }
}

pub fn acoth(s: f64) -> f64 {
    0.5 * ((s + 1.0) / (s - 1.0)).ln()
}

impl Pde for BuiltinModel {
    fn diffusion(&self, _x: f64, u: f64, p: f64) -> f64 {
        match self {
            Self::QuasilinearGradient { diffusivity, .. } => diffusivity.eval(p),
            Self::RhoLaplacianPoly { rho, .. } => (rho - 1.0) * p.abs().powf(rho - 2.0),
            Self::McfPoly { .. } => (1.0 + p * p).powf(-1.5),
            Self::InverseMcf => 1.0,
            Self::PorousMedium { m } => m * u.max(0.0).powf(m - 1.0),
            Self::Filtration { law } => law.a_u(u),
        }
    }

    fn diffusion_dx(&self, _x: f64, _u: f64, _p: f64) -> f64 {
        0.0
    }

    fn diffusion_du(&self, _x: f64, u: f64, _p: f64) -> f64 {
        match self {
            Self::PorousMedium { m } => scaled_power(m * (m - 1.0), u.max(0.0), m - 2.0),
            Self::Filtration { law } => law.a_uu(u),
            _ => 0.0,
        }
    }

    fn reaction(&self, _x: f64, u: f64, p: f64) -> f64 {
        match self {
            Self::QuasilinearGradient { forcing, .. } => -horner(forcing, u),
            Self::RhoLaplacianPoly { n, .. } | Self::McfPoly { n } => -gradient_power(p, *n),
            Self::InverseMcf => -(1.0 + p * p),
            Self::PorousMedium { m } => -scaled_power(m * (m - 1.0), u.max(0.0), m - 2.0) * p * p,
            Self::Filtration { law } => -law.a_uu(u) * p * p,
        }
    }

    fn reaction_dp(&self, _x: f64, u: f64, p: f64) -> f64 {
        match self {
            Self::QuasilinearGradient { .. } => 0.0,
            Self::RhoLaplacianPoly { n, .. } | Self::McfPoly { n } => {
                if *n == 0.0 {
                    0.0
                } else {
                    -n * gradient_power(p, n - 1.0)
                }
            }
            Self::InverseMcf => -2.0 * p,
            Self::PorousMedium { m } => -2.0 * scaled_power(m * (m - 1.0), u.max(0.0), m - 2.0) * p,
            Self::Filtration { law } => -2.0 * law.a_uu(u) * p,
        }
    }

    fn rhs(&self, x: f64, u: f64, p: f64, q: f64) -> f64 {
        match self {
            Self::InverseMcf => {
                let s = 1.0 + p * p;
                s * s / (s - q)
            }
            _ => self.diffusion(x, u, p) * q - self.reaction(x, u, p),
        }
    }

    fn f1_weight(&self, _x: f64, _u: f64, p: f64, q: f64, ut: f64) -> f64 {
        match self {
            Self::InverseMcf => ut + q * q / (q - (1.0 + p * p)),
            _ => ut,
        }
    }

    fn rescaled_characteristics(&self, _x: f64, u: f64, p: f64) -> Option<[f64; 4]> {
        match self {
            // d(tau~)/d(tau) = m u^(m-2)
            Self::PorousMedium { m } if *m > 1.0 => {
                Some([u, u * p, -(m - 1.0) * p * p, (m - 1.0) * p])
            }
            _ => None,
        }
    }

    fn potential(&self, u: f64) -> Option<f64> {
        match self {
            Self::PorousMedium { m } => Some(u.max(0.0).powf(*m)),
            Self::Filtration { law } => Some(law.a(u)),
            _ => None,
        }
    }
}

fn horner(coeffs: &[f64], u: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c)
}

/// Builds a [`ProblemSpec`] from a builtin model and its boundary data.
pub fn instantiate(
    model: BuiltinModel,
    bc_left: BoundaryCondition,
    bc_right: BoundaryCondition,
) -> Result<ProblemSpec, ModelError> {
    model.validate()?;
    Ok(ProblemSpec {
        name: model.name().to_string(),
        flags: model.flags(),
        pde: Arc::new(model.clone()),
        bc_left,
        bc_right,
        builtin: Some(model),
    })
}

/// Builtin with homogeneous Dirichlet data at both ends.
pub fn instantiate_dirichlet(model: BuiltinModel) -> Result<ProblemSpec, ModelError> {
    instantiate(
        model,
        BoundaryCondition::dirichlet(),
        BoundaryCondition::dirichlet(),
    )
}

fn default_bcs() -> [BcDescriptor; 2] {
    [BcDescriptor::Dirichlet, BcDescriptor::Dirichlet]
}

/// JSON model descriptor, e.g.
/// `{"model": "rho_laplacian_poly", "rho": 3.0, "n": 1.0, "bc": ["dirichlet", "dirichlet"]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    #[serde(flatten)]
    pub model: BuiltinModel,
    #[serde(default = "default_bcs")]
    pub bc: [BcDescriptor; 2],
}

impl ModelDescriptor {
    pub fn instantiate(&self) -> Result<ProblemSpec, ModelError> {
        instantiate(
            self.model.clone(),
            self.bc[0].to_condition(),
            self.bc[1].to_condition(),
        )
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Sampling region for [`validate_spec`]; each field is a closed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub x: (f64, f64),
    pub u: (f64, f64),
    pub p: (f64, f64),
    pub q: (f64, f64),
    pub ut: (f64, f64),
}

impl Default for SampleBox {
    fn default() -> Self {
        Self {
            x: (0.0, 1.0),
            u: (-1.0, 1.0),
            p: (-1.0, 1.0),
            q: (-1.0, 1.0),
            ut: (-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NegativeDiffusion,
    IdenticallyZeroDiffusion,
    /// `F1 u_t < 0` on the solution manifold, or zero with `u_t != 0`.
    DissipationSign,
    /// `F1(x,u,p,q,G) != f_q q - F0`.
    Inconsistent,
    /// `F1` not increasing in `u_t`.
    NonMonotoneF1,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub sample: usize,
    pub kind: ViolationKind,
    /// `(x, u, p, q, u_t)`.
    pub point: [f64; 5],
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

/// Monte-Carlo check of the structural conditions a model must satisfy.
///
/// The dissipation sign and the consistency identity are checked on the
/// solution manifold `u_t = G(x,u,p,q)`; monotonicity of `F1` in `u_t` uses the
/// sampled `u_t`.
pub fn validate_spec(
    spec: &ProblemSpec,
    region: &SampleBox,
    n_samples: usize,
    seed: u64,
) -> ValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |(lo, hi): (f64, f64)| {
        if hi > lo {
            rng.gen_range(lo..=hi)
        } else {
            lo
        }
    };
    let pde = spec.pde.as_ref();
    let mut violations = Vec::new();
    let mut any_positive = false;

    for i in 0..n_samples {
        let (x, u, p, q, ut) = (
            draw(region.x),
            draw(region.u),
            draw(region.p),
            draw(region.q),
            draw(region.ut),
        );
        let point = [x, u, p, q, ut];
        let mut push = |kind, value| {
            violations.push(Violation {
                sample: i,
                kind,
                point,
                value,
            })
        };

        let fq = pde.diffusion(x, u, p);
        if !fq.is_finite() {
            push(ViolationKind::NonFinite, fq);
            continue;
        }
        if fq < 0.0 {
            push(ViolationKind::NegativeDiffusion, fq);
        }
        if fq > 0.0 {
            any_positive = true;
        }

        let g = pde.rhs(x, u, p, q);
        let f1 = pde.f1_weight(x, u, p, q, g);
        let expected = fq * q - pde.reaction(x, u, p);
        if !(g.is_finite() && f1.is_finite() && expected.is_finite()) {
            push(ViolationKind::NonFinite, g);
            continue;
        }
        let scale = 1.0 + expected.abs() + f1.abs();
        if (f1 - expected).abs() > 1e-10 * scale {
            push(ViolationKind::Inconsistent, f1 - expected);
        }
        let dissipation = f1 * g;
        if dissipation < 0.0 || (dissipation == 0.0 && g != 0.0) {
            push(ViolationKind::DissipationSign, dissipation);
        }

        let h = 1e-6 * (1.0 + ut.abs());
        let slope =
            (pde.f1_weight(x, u, p, q, ut + h) - pde.f1_weight(x, u, p, q, ut - h)) / (2.0 * h);
        if !(slope > 0.0) {
            push(ViolationKind::NonMonotoneF1, slope);
        }
    }

    if n_samples > 0 && !any_positive {
        violations.push(Violation {
            sample: n_samples,
            kind: ViolationKind::IdenticallyZeroDiffusion,
            point: [f64::NAN; 5],
            value: 0.0,
        });
    }

    ValidationReport {
        samples: n_samples,
        violations,
    }
}
