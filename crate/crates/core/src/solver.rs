//! Method-of-lines solver on a uniform grid of `[0, 1]` with explicit Heun
//! (RK2) time stepping.
//!
//! Interior nodes use central differences for `u_x` and `u_xx` in the
//! resolved form `u_t = G(x, u, u_x, u_xx)`. Models of the form
//! `u_t = (Phi(u))_xx` use the three-point stencil on `Phi` instead. Dirichlet
//! nodes are pinned; a Robin end `u_x = b(u)` is closed with a ghost node,
//! `u_{-1} = u_1 - 2 dx b(u_0)` on the left and
//! `u_{N+1} = u_{N-1} + 2 dx b(u_N)` on the right.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{BoundaryCondition, ProblemSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("grid needs at least 8 cells, got {0}")]
    GridTooSmall(usize),
    #[error("initial data has {got} values, grid has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at node {node} at t = {t}")]
    NonFinite { t: f64, node: usize },
    #[error("time step {dt:e} fell below the floor {floor:e} at t = {t}")]
    DtFloor { t: f64, dt: f64, floor: f64 },
    #[error("negative value {value} at node {node}; the model needs u >= 0")]
    NegativeInput { node: usize, value: f64 },
    #[error("initial data violates the Dirichlet condition at node {node}: u = {value}, expected {expected}")]
    BoundaryMismatch {
        node: usize,
        value: f64,
        expected: f64,
    },
    #[error("invalid control: {0}")]
    InvalidControl(&'static str),
}

type Result<T> = std::result::Result<T, SolverError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub n_cells: usize,
    pub dx: f64,
}

impl Grid1D {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells < 8 {
            return Err(SolverError::GridTooSmall(n_cells));
        }
        Ok(Self {
            n_cells,
            dx: 1.0 / n_cells as f64,
        })
    }

    pub fn nodes(&self) -> usize {
        self.n_cells + 1
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.n_cells {
            1.0
        } else {
            i as f64 * self.dx
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nodes()).map(|i| self.x(i)).collect()
    }

    /// Samples `f` at the nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.nodes()).map(|i| f(self.x(i))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub t: f64,
    pub u: Vec<f64>,
    /// Semi-discrete `u_t` at `u`.
    pub ut: Vec<f64>,
}

/// Discrete `u_x`, `u_xx` at node `i` including the Robin ghost closure.
/// At a Dirichlet end a second-order one-sided `u_x` is returned and `u_xx`
/// uses the one-sided four-point formula.
pub fn node_derivatives(spec: &ProblemSpec, grid: &Grid1D, u: &[f64], i: usize) -> (f64, f64) {
    let n = grid.n_cells;
    let dx = grid.dx;
    let (um, up) = neighbours(spec, grid, u, i);
    match (um, up) {
        (Some(a), Some(b)) => ((b - a) / (2.0 * dx), (b - 2.0 * u[i] + a) / (dx * dx)),
        (None, _) => (
            (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dx),
            (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / (dx * dx),
        ),
        (_, None) => (
            (3.0 * u[n] - 4.0 * u[n - 1] + u[n - 2]) / (2.0 * dx),
            (2.0 * u[n] - 5.0 * u[n - 1] + 4.0 * u[n - 2] - u[n - 3]) / (dx * dx),
        ),
    }
}

/// Left and right neighbour values of node `i`, with Robin ghosts; `None`
/// at a Dirichlet end.
fn neighbours(
    spec: &ProblemSpec,
    grid: &Grid1D,
    u: &[f64],
    i: usize,
) -> (Option<f64>, Option<f64>) {
    let n = grid.n_cells;
    let dx = grid.dx;
    let left = if i > 0 {
        Some(u[i - 1])
    } else {
        match &spec.bc_left {
            BoundaryCondition::Robin(r) => Some(u[1] - 2.0 * dx * (r.b)(u[0])),
            BoundaryCondition::Dirichlet { .. } => None,
        }
    };
    let right = if i < n {
        Some(u[i + 1])
    } else {
        match &spec.bc_right {
            BoundaryCondition::Robin(r) => Some(u[n - 1] + 2.0 * dx * (r.b)(u[n])),
            BoundaryCondition::Dirichlet { .. } => None,
        }
    };
    (left, right)
}

/// `(Phi(u_{i+1}) - 2 Phi(u_i) + Phi(u_{i-1})) / dx^2` with `Phi = u^m`, at
/// interior nodes; the end entries are zero.
pub fn pme_rhs(u: &[f64], m: f64, dx: f64) -> Result<Vec<f64>> {
    if let Some((node, &value)) = u.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(SolverError::NegativeInput { node, value });
    }
    let phi: Vec<f64> = u.iter().map(|v| v.powf(m)).collect();
    let mut out = vec![0.0; u.len()];
    for i in 1..u.len().saturating_sub(1) {
        out[i] = (phi[i + 1] - 2.0 * phi[i] + phi[i - 1]) / (dx * dx);
    }
    Ok(out)
}

/// Semi-discrete right-hand side at every node.
pub fn semi_discrete_rhs(spec: &ProblemSpec, grid: &Grid1D, u: &[f64], t: f64) -> Result<Vec<f64>> {
    let pde = spec.pde.as_ref();
    let n = grid.n_cells;
    let divergence = pde.potential(0.0).is_some();
    let mut out = vec![0.0; u.len()];
    for i in 0..=n {
        let (um, up) = neighbours(spec, grid, u, i);
        let (Some(a), Some(b)) = (um, up) else {
            continue; // Dirichlet node
        };
        let v = if divergence {
            let phi = |s: f64| pde.potential(s).unwrap_or(f64::NAN);
            (phi(b) - 2.0 * phi(u[i]) + phi(a)) / (grid.dx * grid.dx)
        } else {
            let p = (b - a) / (2.0 * grid.dx);
            let q = (b - 2.0 * u[i] + a) / (grid.dx * grid.dx);
            pde.rhs(grid.x(i), u[i], p, q)
        };
        if !v.is_finite() {
            return Err(SolverError::NonFinite { t, node: i });
        }
        out[i] = v;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverControls {
    pub cfl_safety: f64,
    pub dt_floor: f64,
    #[serde(with = "crate::unbounded")]
    pub dt_max: f64,
    /// Store every `output_stride`-th step (ignored when `output_interval` is set).
    pub output_stride: usize,
    /// Store frames at multiples of this time, clamping steps to hit them.
    pub output_interval: Option<f64>,
    pub max_steps: usize,
}

impl Default for SolverControls {
    fn default() -> Self {
        Self {
            cfl_safety: 0.4,
            dt_floor: 1e-12,
            dt_max: f64::INFINITY,
            output_stride: 100,
            output_interval: None,
            max_steps: 50_000_000,
        }
    }
}

/// Largest stable step for the current state: `cfl dx^2 / max D` with
/// `D = max(f_q, |dG/dq|)`, and `cfl dx / max |dG/dp|`.
pub fn stable_dt(spec: &ProblemSpec, grid: &Grid1D, u: &[f64], cfl: f64) -> f64 {
    let pde = spec.pde.as_ref();
    let mut dmax: f64 = 0.0;
    let mut amax: f64 = 0.0;
    for i in 0..=grid.n_cells {
        let (p, q) = node_derivatives(spec, grid, u, i);
        let x = grid.x(i);
        let hq = 1e-6 * (1.0 + q.abs());
        let hp = 1e-6 * (1.0 + p.abs());
        let g_q = (pde.rhs(x, u[i], p, q + hq) - pde.rhs(x, u[i], p, q - hq)) / (2.0 * hq);
        let g_p = (pde.rhs(x, u[i], p + hp, q) - pde.rhs(x, u[i], p - hp, q)) / (2.0 * hp);
        let d = pde.diffusion(x, u[i], p).max(g_q.abs());
        if d.is_finite() {
            dmax = dmax.max(d);
        }
        if g_p.is_finite() {
            amax = amax.max(g_p.abs());
        }
    }
    let mut dt = f64::INFINITY;
    if dmax > 0.0 {
        dt = dt.min(cfl * grid.dx * grid.dx / dmax);
    }
    if amax > 0.0 {
        dt = dt.min(cfl * grid.dx / amax);
    }
    dt
}

/// One Heun step; `frame.ut` must hold the right-hand side at `frame.u`.
pub fn step(spec: &ProblemSpec, grid: &Grid1D, frame: &StateFrame, dt: f64) -> Result<StateFrame> {
    let k1 = &frame.ut;
    let mut mid: Vec<f64> = frame.u.iter().zip(k1).map(|(u, k)| u + dt * k).collect();
    pin(spec, grid, &mut mid);
    let k2 = semi_discrete_rhs(spec, grid, &mid, frame.t + dt)?;
    let mut u: Vec<f64> = frame
        .u
        .iter()
        .zip(k1.iter().zip(&k2))
        .map(|(u, (a, b))| u + 0.5 * dt * (a + b))
        .collect();
    pin(spec, grid, &mut u);
    let t = frame.t + dt;
    if let Some(node) = u.iter().position(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite { t, node });
    }
    let ut = semi_discrete_rhs(spec, grid, &u, t)?;
    Ok(StateFrame { t, u, ut })
}

fn pin(spec: &ProblemSpec, grid: &Grid1D, u: &mut [f64]) {
    if let BoundaryCondition::Dirichlet { value } = spec.bc_left {
        u[0] = value;
    }
    if let BoundaryCondition::Dirichlet { value } = spec.bc_right {
        u[grid.n_cells] = value;
    }
}

/// Builds the initial frame after checking boundary data and sign constraints.
pub fn initial_frame(spec: &ProblemSpec, grid: &Grid1D, u0: &[f64]) -> Result<StateFrame> {
    if u0.len() != grid.nodes() {
        return Err(SolverError::LengthMismatch {
            expected: grid.nodes(),
            got: u0.len(),
        });
    }
    for (node, bc) in [(0, &spec.bc_left), (grid.n_cells, &spec.bc_right)] {
        if let BoundaryCondition::Dirichlet { value } = bc {
            if (u0[node] - value).abs() > 1e-9 * (1.0 + value.abs()) {
                return Err(SolverError::BoundaryMismatch {
                    node,
                    value: u0[node],
                    expected: *value,
                });
            }
        }
    }
    if spec.pde.potential(0.0).is_some() {
        if let Some((node, &value)) = u0.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(SolverError::NegativeInput { node, value });
        }
    }
    if let Some(node) = u0.iter().position(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite { t: 0.0, node });
    }
    let mut u = u0.to_vec();
    pin(spec, grid, &mut u);
    let ut = semi_discrete_rhs(spec, grid, &u, 0.0)?;
    Ok(StateFrame { t: 0.0, u, ut })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub grid: Grid1D,
    pub frames: Vec<StateFrame>,
    pub steps: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    pub termination: String,
}

/// Integrates to `t_end` with the CFL-limited step. The initial and final
/// frames are always stored.
pub fn simulate(
    spec: &ProblemSpec,
    grid: &Grid1D,
    u0: &[f64],
    t_end: f64,
    controls: &SolverControls,
) -> Result<Simulation> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(SolverError::InvalidControl(
            "t_end must be finite and non-negative",
        ));
    }
    if !(controls.cfl_safety > 0.0) {
        return Err(SolverError::InvalidControl("cfl_safety must be positive"));
    }
    if controls.output_stride == 0 {
        return Err(SolverError::InvalidControl(
            "output_stride must be positive",
        ));
    }
    if let Some(h) = controls.output_interval {
        if !(h > 0.0) {
            return Err(SolverError::InvalidControl(
                "output_interval must be positive",
            ));
        }
    }
    let mut frame = initial_frame(spec, grid, u0)?;
    let mut frames = vec![frame.clone()];
    let mut steps = 0usize;
    let (mut dt_min, mut dt_max) = (f64::INFINITY, 0.0f64);
    let mut next_out = controls.output_interval.map(|h| h.min(t_end));
    let mut out_index = 1usize;
    let end_eps = 1e-12 * t_end.max(1.0);

    while t_end - frame.t > end_eps {
        if steps >= controls.max_steps {
            return Err(SolverError::InvalidControl(
                "max_steps exhausted before t_end",
            ));
        }
        let mut dt = stable_dt(spec, grid, &frame.u, controls.cfl_safety)
            .min(controls.dt_max)
            .min(t_end - frame.t);
        if let Some(target) = next_out {
            dt = dt.min(target - frame.t);
        }
        if !(dt >= controls.dt_floor) {
            return Err(SolverError::DtFloor {
                t: frame.t,
                dt,
                floor: controls.dt_floor,
            });
        }
        frame = step(spec, grid, &frame, dt)?;
        steps += 1;
        dt_min = dt_min.min(dt);
        dt_max = dt_max.max(dt);

        let store = match (controls.output_interval, next_out) {
            (Some(h), Some(target)) => {
                if (frame.t - target).abs() <= end_eps {
                    frame.t = target;
                    out_index += 1;
                    next_out = Some((out_index as f64 * h).min(t_end));
                    true
                } else {
                    false
                }
            }
            _ => steps.is_multiple_of(controls.output_stride),
        };
        let done = t_end - frame.t <= end_eps;
        if store || done {
            if done {
                frame.t = t_end;
            }
            if frames.last().map(|f| f.t) != Some(frame.t) {
                frames.push(frame.clone());
            }
        }
    }
    if steps == 0 {
        dt_min = 0.0;
    }
    Ok(Simulation {
        grid: *grid,
        frames,
        steps,
        dt_min,
        dt_max,
        termination: "t_end_reached".to_string(),
    })
}
