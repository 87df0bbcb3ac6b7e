//! Assembly of the Lagrange function `L(x, u, p)` from `L_pp = f_q exp(g)`.
//!
//! `L = D + L0(x, u) + L1(x, u) p` where the double integral is evaluated with
//! Cauchy's repeated-integration formula
//!
//! ```text
//! D(x, u, p) = int_{p_base}^{p} (p - s) w(x, u, s) ds,   w = f_q exp(g)
//! ```
//!
//! so that `L_p = W + L1` with `W = int_{p_base}^{p} w ds`.
//!
//! When `w` is not integrable at `p = 0` (a power-law probe finds an exponent
//! `<= -1`) each sign branch of `p` gets its own base point `sign(p) |p_base|`
//! and its own `L0`. `L0` is obtained from the Euler–Lagrange residual, which
//! does not depend on `p`, evaluated at a fixed `p_star`:
//!
//! ```text
//! L0_u = L1_x + exp(g) F0 - (D_u - W_x - p W_u)      at p = p_star
//! ```
//!
//! The bracket vanishes identically when `p_star` equals the base point.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::characteristics::{GNormalization, GProvider};
use crate::models::{BoundaryCondition, End, ProblemSpec};
use crate::quadrature::{integrate, QuadOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LagrangianError {
    #[error("quadrature failed at (x, u, p) = ({x}, {u}, {p}): {reason}")]
    Quadrature {
        x: f64,
        u: f64,
        p: f64,
        reason: String,
    },
    #[error("g is not finite at (x, u, p_star) = ({x}, {u}, {p_star}); choose a different p_star")]
    GUndefinedAtPStar { x: f64, u: f64, p_star: f64 },
    #[error("invalid option: {0}")]
    InvalidOption(&'static str),
}

type Result<T> = std::result::Result<T, LagrangianError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LagrangianOptions {
    /// Overrides the probed base point. With a singular integrand the
    /// magnitude is used on both branches.
    pub p_base: Option<f64>,
    /// Defaults to the model's recommendation, else to the base point.
    pub p_star: Option<f64>,
    pub quad_tol: f64,
}

impl Default for LagrangianOptions {
    fn default() -> Self {
        Self {
            p_base: None,
            p_star: None,
            quad_tol: 1e-9,
        }
    }
}

/// Exponent threshold for non-integrability at `p = 0`.
const SINGULAR_EXPONENT: f64 = -1.0 + 1e-6;
/// Spacing of the `L0` table in `u`.
const L0_DU: f64 = 1.0 / 256.0;
/// Tabulation limit in `|u|`; beyond it `L0` is integrated directly.
const L0_U_MAX: f64 = 64.0;

/// Outcome of the power-law probe of `w` near `p = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseProbe {
    /// Smallest fitted exponent over the probe points (`None` when `w`
    /// vanished at every probe point).
    pub exponent: Option<f64>,
    pub singular: bool,
}

/// Fits `w ~ |p|^alpha` from two small `|p|` on each side of zero.
pub fn probe_base(spec: &ProblemSpec, g: &GProvider) -> BaseProbe {
    let (e1, e2) = (1e-4, 1e-6);
    let mut worst: Option<f64> = None;
    for &u in &[0.5, 1.0, 0.25, -0.5] {
        for &sign in &[1.0, -1.0] {
            let w = |p: f64| weight_with(spec, g, 0.5, u, p, false);
            let (w1, w2) = (w(sign * e1), w(sign * e2));
            let alpha = if w2.is_infinite() || w1.is_infinite() {
                f64::NEG_INFINITY
            } else if w1 > 0.0 && w2 > 0.0 {
                (w2 / w1).ln() / (e2 / e1).ln()
            } else {
                continue;
            };
            if alpha.is_nan() {
                continue;
            }
            worst = Some(worst.map_or(alpha, |a: f64| a.min(alpha)));
        }
    }
    BaseProbe {
        exponent: worst,
        singular: worst.is_some_and(|a| a <= SINGULAR_EXPONENT),
    }
}

/// `f_q exp(g)`, zero wherever `f_q` vanishes.
fn weight_with(spec: &ProblemSpec, g: &GProvider, x: f64, u: f64, p: f64, count: bool) -> f64 {
    let fq = spec.pde.diffusion(x, u, p);
    if fq == 0.0 {
        return 0.0;
    }
    let gv = if count {
        g.eval(x, u, p)
    } else {
        g.eval_uncounted(x, u, p)
    };
    fq * gv.exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum L1Kind {
    Zero,
    Single(End),
    Both,
}

#[derive(Debug, Default)]
struct L0Table {
    /// `(L0(k du), d/dt L0(t))` for `t = +k du`.
    pos: Vec<(f64, f64)>,
    /// Same for `t = k du` along `u = -t`.
    neg: Vec<(f64, f64)>,
}

/// Metadata recorded next to constructed energies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangianMeta {
    pub p_base: f64,
    pub mirrored_base: bool,
    pub p_star: f64,
    pub split_l0: bool,
    pub probe_exponent: Option<f64>,
    pub normalization: GNormalization,
    pub g_mode: &'static str,
    pub quad_tol: f64,
}

/// Components `D`, `L0`, `L1` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LComponents {
    pub double_integral: f64,
    pub l0: f64,
    pub l1: f64,
}

pub struct Lagrangian {
    spec: ProblemSpec,
    g: GProvider,
    p_base: f64,
    mirrored: bool,
    p_star: f64,
    /// `L0` is derived separately on each sign branch of `p`.
    split_l0: bool,
    probe: BaseProbe,
    quad: QuadOptions,
    l1_kind: L1Kind,
    /// `L0` independent of `x`: one table serves all nodes.
    x_free_l0: bool,
    l0_cache: RwLock<HashMap<(u64, i8), L0Table>>,
}

impl std::fmt::Debug for Lagrangian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lagrangian")
            .field("spec", &self.spec.name)
            .field("p_base", &self.p_base)
            .field("mirrored", &self.mirrored)
            .field("p_star", &self.p_star)
            .finish()
    }
}

impl Lagrangian {
    pub fn build(spec: &ProblemSpec, g: GProvider, opts: &LagrangianOptions) -> Result<Self> {
        if !(opts.quad_tol > 0.0) {
            return Err(LagrangianError::InvalidOption("quad_tol must be positive"));
        }
        let probe = probe_base(spec, &g);
        let (p_base, mirrored) = match (opts.p_base, probe.singular) {
            (Some(b), true) => {
                if b == 0.0 {
                    return Err(LagrangianError::InvalidOption(
                        "p_base = 0 with an integrand that is not integrable at 0",
                    ));
                }
                (b.abs(), true)
            }
            (Some(b), false) => (b, false),
            (None, true) => (1.0, true),
            (None, false) => (0.0, false),
        };
        let p_star = opts
            .p_star
            .or_else(|| spec.builtin.as_ref().and_then(|m| m.recommended_p_star()))
            .unwrap_or(p_base);
        if mirrored && p_star == 0.0 {
            return Err(LagrangianError::GUndefinedAtPStar {
                x: 0.5,
                u: 0.0,
                p_star,
            });
        }
        let l1_kind = match (spec.bc_left.is_robin(), spec.bc_right.is_robin()) {
            (false, false) => L1Kind::Zero,
            (true, false) => L1Kind::Single(End::Left),
            (false, true) => L1Kind::Single(End::Right),
            (true, true) => L1Kind::Both,
        };
        let g_x_free = !matches!(g.variant(), crate::characteristics::GVariant::Tabulated(_));
        let x_free_l0 = spec.flags.autonomous_in_x && g_x_free && l1_kind != L1Kind::Both;

        let lag = Self {
            spec: spec.clone(),
            g,
            p_base,
            mirrored,
            p_star,
            split_l0: mirrored || p_star != 0.0,
            probe,
            quad: QuadOptions {
                abs_tol: opts.quad_tol,
                rel_tol: opts.quad_tol,
                ..QuadOptions::default()
            },
            l1_kind,
            x_free_l0,
            l0_cache: RwLock::new(HashMap::new()),
        };
        let ps = lag.star_for(1.0);
        let gs = lag.g.eval_uncounted(0.5, 0.5, ps);
        if !gs.is_finite() {
            return Err(LagrangianError::GUndefinedAtPStar {
                x: 0.5,
                u: 0.5,
                p_star: ps,
            });
        }
        Ok(lag)
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn g_provider(&self) -> &GProvider {
        &self.g
    }

    /// Base point on the positive branch.
    pub fn p_base(&self) -> f64 {
        self.p_base
    }

    pub fn mirrored_base(&self) -> bool {
        self.mirrored
    }

    pub fn p_star(&self) -> f64 {
        self.p_star
    }

    /// `L0` is derived per sign branch of `p` (at `sign(p) |p_star|`).
    pub fn split_l0(&self) -> bool {
        self.split_l0
    }

    pub fn meta(&self) -> LagrangianMeta {
        LagrangianMeta {
            p_base: self.p_base,
            mirrored_base: self.mirrored,
            p_star: self.p_star,
            split_l0: self.split_l0,
            probe_exponent: self.probe.exponent,
            normalization: self.g.normalization(),
            g_mode: self.g.mode_name(),
            quad_tol: self.quad.abs_tol,
        }
    }

    fn branch(&self, p: f64) -> i8 {
        if !self.mirrored {
            0
        } else if p < 0.0 {
            -1
        } else {
            1
        }
    }

    /// Base point used for `p`.
    pub fn base_for(&self, p: f64) -> f64 {
        match self.branch(p) {
            -1 => -self.p_base,
            _ => self.p_base,
        }
    }

    /// Sign branch of `L0`. With `exp(g) F0` odd in `p` (e.g. `F0 = -p`,
    /// `g = log|p0/p|`) the residual differs between branches.
    fn l0_branch(&self, p: f64) -> i8 {
        if !self.split_l0 {
            0
        } else if p < 0.0 {
            -1
        } else {
            1
        }
    }

    fn star_for(&self, p: f64) -> f64 {
        match self.l0_branch(p) {
            -1 => -self.p_star.abs(),
            1 => self.p_star.abs(),
            _ => self.p_star,
        }
    }

    /// `w = f_q exp(g)`.
    pub fn weight(&self, x: f64, u: f64, p: f64) -> f64 {
        weight_with(&self.spec, &self.g, x, u, p, true)
    }

    /// `L_pp`, evaluated directly.
    pub fn eval_lpp(&self, x: f64, u: f64, p: f64) -> f64 {
        self.weight(x, u, p)
    }

    fn quad<F: Fn(f64) -> f64>(
        &self,
        f: F,
        a: f64,
        b: f64,
        at: (f64, f64, f64),
        opts: &QuadOptions,
    ) -> Result<f64> {
        integrate(f, a, b, opts)
            .map(|q| q.value)
            .map_err(|e| LagrangianError::Quadrature {
                x: at.0,
                u: at.1,
                p: at.2,
                reason: e.to_string(),
            })
    }

    /// `W = int_{base}^{p} w ds`, with an explicit base.
    fn w_from(&self, x: f64, u: f64, p: f64, base: f64, opts: &QuadOptions) -> Result<f64> {
        self.quad(|s| self.weight(x, u, s), base, p, (x, u, p), opts)
    }

    /// `D = int_{base}^{p} (p - s) w ds`, with an explicit base.
    fn d_from(&self, x: f64, u: f64, p: f64, base: f64, opts: &QuadOptions) -> Result<f64> {
        self.quad(
            |s| {
                let w = self.weight(x, u, s);
                if w == 0.0 {
                    0.0
                } else {
                    (p - s) * w
                }
            },
            base,
            p,
            (x, u, p),
            opts,
        )
    }

    /// The double integral of `L_pp` from the base point.
    pub fn double_integral(&self, x: f64, u: f64, p: f64) -> Result<f64> {
        self.d_from(x, u, p, self.base_for(p), &self.quad)
    }

    /// `L1` at a Robin end: `-int_{base}^{b(u)} w(end, u, s) ds`.
    fn l1_end(&self, end: End, u: f64) -> Result<f64> {
        let robin = match self.spec.bc(end) {
            BoundaryCondition::Robin(r) => r,
            BoundaryCondition::Dirichlet { .. } => return Ok(0.0),
        };
        let b = (robin.b)(u);
        Ok(-self.w_from(end.x(), u, b, self.base_for(b), &self.quad)?)
    }

    pub fn l1(&self, x: f64, u: f64) -> Result<f64> {
        match self.l1_kind {
            L1Kind::Zero => Ok(0.0),
            L1Kind::Single(end) => self.l1_end(end, u),
            L1Kind::Both => {
                Ok((1.0 - x) * self.l1_end(End::Left, u)? + x * self.l1_end(End::Right, u)?)
            }
        }
    }

    fn l1_x(&self, u: f64) -> Result<f64> {
        match self.l1_kind {
            L1Kind::Both => Ok(self.l1_end(End::Right, u)? - self.l1_end(End::Left, u)?),
            _ => Ok(0.0),
        }
    }

    /// Integrand of `L0` in `u` on the branch of `p`.
    fn l0_integrand(&self, x: f64, u: f64, branch_p: f64) -> Result<f64> {
        let ps = self.star_for(branch_p);
        let gs = self.g.eval(x, u, ps);
        let f0 = self.spec.pde.reaction(x, u, ps);
        let reaction = if f0 == 0.0 {
            0.0
        } else {
            if !gs.is_finite() {
                return Err(LagrangianError::GUndefinedAtPStar { x, u, p_star: ps });
            }
            gs.exp() * f0
        };
        let mut phi = self.l1_x(u)? + reaction;
        let base = self.base_for(branch_p);
        if ps != base {
            phi -= self.residual_bracket(x, u, ps, base)?;
        }
        Ok(phi)
    }

    /// `D_u - W_x - p W_u` at `p`, by central differences of quadratures.
    fn residual_bracket(&self, x: f64, u: f64, p: f64, base: f64) -> Result<f64> {
        let tight = QuadOptions::with_tol(1e-12);
        let hu = 1e-4 * (1.0 + u.abs());
        let d_u = (self.d_from(x, u + hu, p, base, &tight)?
            - self.d_from(x, u - hu, p, base, &tight)?)
            / (2.0 * hu);
        let w_u = (self.w_from(x, u + hu, p, base, &tight)?
            - self.w_from(x, u - hu, p, base, &tight)?)
            / (2.0 * hu);
        let hx = 1e-4;
        let w = |xx: f64| self.w_from(xx, u, p, base, &tight);
        let w_x = if x - hx < 0.0 {
            (-3.0 * w(x)? + 4.0 * w(x + hx)? - w(x + 2.0 * hx)?) / (2.0 * hx)
        } else if x + hx > 1.0 {
            (3.0 * w(x)? - 4.0 * w(x - hx)? + w(x - 2.0 * hx)?) / (2.0 * hx)
        } else {
            (w(x + hx)? - w(x - hx)?) / (2.0 * hx)
        };
        Ok(d_u - w_x - p * w_u)
    }

    /// `int_a^b` of the `L0` integrand; integrand failures take precedence
    /// over the generic quadrature error.
    fn l0_segment(&self, x: f64, a: f64, b: f64, branch_p: f64) -> Result<f64> {
        let err = RefCell::new(None);
        let v = self.quad(
            |s| match self.l0_integrand(x, s, branch_p) {
                Ok(v) => v,
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            },
            a,
            b,
            (x, b, self.star_for(branch_p)),
            &self.quad,
        );
        match (v, err.into_inner()) {
            (Ok(v), _) => Ok(v),
            (Err(_), Some(e)) | (Err(e), None) => Err(e),
        }
    }

    fn l0_direct(&self, x: f64, u: f64, branch_p: f64) -> Result<f64> {
        self.l0_segment(x, 0.0, u, branch_p)
    }

    /// `L0(x, u)` on the branch of `branch_p`.
    pub fn l0(&self, x: f64, u: f64, branch_p: f64) -> Result<f64> {
        if u == 0.0 {
            return Ok(0.0);
        }
        if u.abs() > L0_U_MAX || !u.is_finite() {
            return self.l0_direct(x, u, branch_p);
        }
        let xk = if self.x_free_l0 { 0.0 } else { x };
        let key = (xk.to_bits(), self.l0_branch(branch_p));
        let t = u.abs();
        let k = ((t / L0_DU).floor() as usize).min((L0_U_MAX / L0_DU) as usize - 1);
        let neg = u < 0.0;

        let lookup = |tab: &L0Table| -> Option<((f64, f64), (f64, f64))> {
            let side = if neg { &tab.neg } else { &tab.pos };
            Some((*side.get(k)?, *side.get(k + 1)?))
        };
        let nodes = {
            let cache = self.l0_cache.read().expect("L0 cache poisoned");
            cache.get(&key).and_then(lookup)
        };
        let (a, b) = match nodes {
            Some(n) => n,
            None => {
                let mut cache = self.l0_cache.write().expect("L0 cache poisoned");
                let tab = cache.entry(key).or_default();
                self.extend_table(tab, xk, branch_p, neg, k + 1)?;
                lookup(tab).expect("table extended")
            }
        };
        if !(a.1.is_finite() && b.1.is_finite()) {
            return self.l0_direct(xk, u, branch_p);
        }
        // cubic Hermite on [k du, (k + 1) du] in t = |u|
        let s = t / L0_DU - k as f64;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
            s * (1.0 - s) * (1.0 - s),
            s * s * (3.0 - 2.0 * s),
            s * s * (s - 1.0),
        );
        Ok(h00 * a.0 + h10 * L0_DU * a.1 + h01 * b.0 + h11 * L0_DU * b.1)
    }

    fn extend_table(
        &self,
        tab: &mut L0Table,
        x: f64,
        branch_p: f64,
        neg: bool,
        upto: usize,
    ) -> Result<()> {
        let dir = if neg { -1.0 } else { 1.0 };
        let side = if neg { &mut tab.neg } else { &mut tab.pos };
        let slope = |u: f64| -> f64 {
            self.l0_integrand(x, u, branch_p)
                .map(|v| dir * v)
                .unwrap_or(f64::NAN)
        };
        if side.is_empty() {
            side.push((0.0, slope(0.0)));
        }
        while side.len() <= upto {
            let k = side.len() - 1;
            let (u0, u1) = (dir * k as f64 * L0_DU, dir * (k + 1) as f64 * L0_DU);
            let end = slope(u1);
            // Boole's rule away from u = 0; the first segment may be singular
            let boole = if k > 0 && side[k].1.is_finite() && end.is_finite() {
                let inner = [0.25, 0.5, 0.75].map(|s| slope(u0 + s * (u1 - u0)));
                inner.iter().all(|v| v.is_finite()).then(|| {
                    L0_DU / 90.0
                        * (7.0 * (side[k].1 + end) + 32.0 * (inner[0] + inner[2]) + 12.0 * inner[1])
                })
            } else {
                None
            };
            let seg = match boole {
                Some(v) => v,
                None => self.l0_segment(x, u0, u1, branch_p)?,
            };
            let prev = side[k].0;
            side.push((prev + seg, end));
        }
        Ok(())
    }

    pub fn components(&self, x: f64, u: f64, p: f64) -> Result<LComponents> {
        Ok(LComponents {
            double_integral: self.double_integral(x, u, p)?,
            l0: self.l0(x, u, p)?,
            l1: self.l1(x, u)?,
        })
    }

    /// `L(x, u, p)`.
    pub fn eval_l(&self, x: f64, u: f64, p: f64) -> Result<f64> {
        let c = self.components(x, u, p)?;
        Ok(c.double_integral + c.l0 + c.l1 * p)
    }

    /// `L_p(x, u, p) = W + L1`.
    pub fn eval_lp(&self, x: f64, u: f64, p: f64) -> Result<f64> {
        Ok(self.w_from(x, u, p, self.base_for(p), &self.quad)? + self.l1(x, u)?)
    }
}

/// Central-difference residual of `L_u - L_px - p L_pu - exp(g) F0` at one
/// point, with step `h` in all directions.
pub fn euler_lagrange_residual(lag: &Lagrangian, x: f64, u: f64, p: f64, h: f64) -> Result<f64> {
    let l_u = (lag.eval_l(x, u + h, p)? - lag.eval_l(x, u - h, p)?) / (2.0 * h);
    let l_px = (lag.eval_lp(x + h, u, p)? - lag.eval_lp(x - h, u, p)?) / (2.0 * h);
    let l_pu = (lag.eval_lp(x, u + h, p)? - lag.eval_lp(x, u - h, p)?) / (2.0 * h);
    let g = lag.g_provider().eval(x, u, p);
    let f0 = lag.spec().pde.reaction(x, u, p);
    let reaction = if f0 == 0.0 { 0.0 } else { g.exp() * f0 };
    Ok(l_u - l_px - p * l_pu - reaction)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub u: f64,
    pub p: f64,
    pub numeric: f64,
    pub closed: f64,
    pub residual: f64,
}

/// Compares the numeric `L(x, u, ·)` with a closed form after removing the
/// least-squares affine fit `c0 + c1 p` of their difference, separately for
/// each `u` (and for each sign of `p` when `L0` or the base point depends on
/// the branch).
pub fn affine_fit_residuals<F>(
    lag: &Lagrangian,
    closed: F,
    x: f64,
    us: &[f64],
    ps: &[f64],
) -> Result<Vec<FitRow>>
where
    F: Fn(f64, f64) -> f64,
{
    let mut rows = Vec::with_capacity(us.len() * ps.len());
    for &u in us {
        let mut block = Vec::with_capacity(ps.len());
        for &p in ps {
            block.push(FitRow {
                u,
                p,
                numeric: lag.eval_l(x, u, p)?,
                closed: closed(u, p),
                residual: 0.0,
            });
        }
        let groups: Vec<Vec<usize>> = if lag.mirrored_base() || lag.split_l0() {
            vec![
                (0..block.len()).filter(|&i| block[i].p < 0.0).collect(),
                (0..block.len()).filter(|&i| block[i].p >= 0.0).collect(),
            ]
        } else {
            vec![(0..block.len()).collect()]
        };
        for idx in groups {
            let pts: Vec<(f64, f64)> = idx
                .iter()
                .map(|&i| (block[i].p, block[i].numeric - block[i].closed))
                .collect();
            let (c0, c1) = fit_line(&pts);
            for (&i, (p, d)) in idx.iter().zip(pts) {
                block[i].residual = d - (c0 + c1 * p);
            }
        }
        rows.extend(block);
    }
    Ok(rows)
}

/// Least-squares line through `(p, d)` points; a single point fits exactly.
fn fit_line(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    if pts.is_empty() {
        return (0.0, 0.0);
    }
    let mp = pts.iter().map(|q| q.0).sum::<f64>() / n;
    let md = pts.iter().map(|q| q.1).sum::<f64>() / n;
    let spp: f64 = pts.iter().map(|q| (q.0 - mp).powi(2)).sum();
    if spp == 0.0 {
        return (md, 0.0);
    }
    let spd: f64 = pts.iter().map(|q| (q.0 - mp) * (q.1 - md)).sum();
    let c1 = spd / spp;
    (md - c1 * mp, c1)
}
