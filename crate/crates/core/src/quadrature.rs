//! Adaptive Simpson quadrature and composite rules on uniform nodes.
//!
//! The adaptive rule mixes an absolute and a relative tolerance and caps the
//! total number of subintervals. Integrable endpoint singularities (the
//! integrand is infinite or NaN exactly at `a` or `b`) are handled one-sided:
//! the interval is split at its midpoint and the singular half is mapped
//! through `s = a + (m - a) v^4`, which turns `s^alpha` into `v^(4 alpha + 3)`.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Hard cap on the number of accepted + refined subintervals.
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-9,
            max_intervals: 1 << 20,
        }
    }
}

impl QuadOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            abs_tol: tol,
            rel_tol: tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("integrand is not finite at s = {at}")]
    NonFinite { at: f64 },
    #[error("adaptive quadrature on [{a}, {b}] exceeded {cap} subintervals")]
    NotConverged { a: f64, b: f64, cap: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub error_estimate: f64,
    pub intervals: usize,
}

const MIN_DEPTH: u32 = 3;
const MAX_DEPTH: u32 = 60;

struct Ctx<'a, F> {
    f: &'a F,
    tol: f64,
    intervals: usize,
    cap: usize,
    error: f64,
}

/// Integrate `f` over `[a, b]` (either orientation).
pub fn integrate<F>(f: F, a: f64, b: f64, opts: &QuadOptions) -> Result<Quadrature, QuadError>
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return Ok(Quadrature {
            value: 0.0,
            error_estimate: 0.0,
            intervals: 0,
        });
    }
    if b < a {
        let mut q = integrate(f, b, a, opts)?;
        q.value = -q.value;
        return Ok(q);
    }

    let fa = f(a);
    let fb = f(b);
    if fa.is_finite() && fb.is_finite() {
        return integrate_regular(&f, a, fa, b, fb, opts);
    }

    // One-sided treatment: split, and substitute on each singular half.
    let m = 0.5 * (a + b);
    let left = if fa.is_finite() {
        integrate_regular(&f, a, fa, m, f(m), opts)?
    } else {
        let len = m - a;
        let g = |v: f64| {
            if v <= 0.0 {
                0.0
            } else {
                let v3 = v * v * v;
                f(a + len * v3 * v) * 4.0 * len * v3
            }
        };
        integrate_regular(&g, 0.0, 0.0, 1.0, g(1.0), opts)?
    };
    let right = if fb.is_finite() {
        integrate_regular(&f, m, f(m), b, fb, opts)?
    } else {
        let len = b - m;
        let g = |v: f64| {
            if v <= 0.0 {
                0.0
            } else {
                let v3 = v * v * v;
                f(b - len * v3 * v) * 4.0 * len * v3
            }
        };
        integrate_regular(&g, 0.0, 0.0, 1.0, g(1.0), opts)?
    };
    Ok(Quadrature {
        value: left.value + right.value,
        error_estimate: left.error_estimate + right.error_estimate,
        intervals: left.intervals + right.intervals,
    })
}

fn integrate_regular<F>(
    f: &F,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    opts: &QuadOptions,
) -> Result<Quadrature, QuadError>
where
    F: Fn(f64) -> f64,
{
    if !fa.is_finite() {
        return Err(QuadError::NonFinite { at: a });
    }
    if !fb.is_finite() {
        return Err(QuadError::NonFinite { at: b });
    }
    let m = 0.5 * (a + b);
    let fm = f(m);
    if !fm.is_finite() {
        return Err(QuadError::NonFinite { at: m });
    }
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);

    // Rough magnitude from a 9-point composite rule sets the relative target.
    let h = (b - a) / 8.0;
    let mut rough = fa + fb;
    for k in 1..8 {
        let y = f(a + k as f64 * h);
        if !y.is_finite() {
            return Err(QuadError::NonFinite {
                at: a + k as f64 * h,
            });
        }
        rough += if k % 2 == 1 { 4.0 * y } else { 2.0 * y };
    }
    let rough = (rough * h / 3.0).abs();
    let tol = opts.abs_tol.max(opts.rel_tol * rough);

    let mut ctx = Ctx {
        f,
        tol,
        intervals: 1,
        cap: opts.max_intervals,
        error: 0.0,
    };
    let value = recurse(&mut ctx, a, fa, m, fm, b, fb, whole, tol, 0)?;
    Ok(Quadrature {
        value,
        error_estimate: ctx.error,
        intervals: ctx.intervals,
    })
}

#[allow(clippy::too_many_arguments)]
fn recurse<F>(
    ctx: &mut Ctx<'_, F>,
    a: f64,
    fa: f64,
    m: f64,
    fm: f64,
    b: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, QuadError>
where
    F: Fn(f64) -> f64,
{
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = (ctx.f)(lm);
    let frm = (ctx.f)(rm);
    if !flm.is_finite() {
        return Err(QuadError::NonFinite { at: lm });
    }
    if !frm.is_finite() {
        return Err(QuadError::NonFinite { at: rm });
    }
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;

    let converged = depth >= MIN_DEPTH && delta.abs() <= 15.0 * tol;
    // Interval too small to split further in floating point.
    let exhausted = depth >= MAX_DEPTH || lm <= a || rm >= b;
    if converged || exhausted {
        ctx.error += delta.abs() / 15.0;
        return Ok(left + right + delta / 15.0);
    }

    ctx.intervals += 1;
    if ctx.intervals > ctx.cap {
        return Err(QuadError::NotConverged { a, b, cap: ctx.cap });
    }
    let half = 0.5 * tol.max(ctx.tol * f64::EPSILON);
    let l = recurse(ctx, a, fa, lm, flm, m, fm, left, half, depth + 1)?;
    let r = recurse(ctx, m, fm, rm, frm, b, fb, right, half, depth + 1)?;
    Ok(l + r)
}

/// Composite Simpson rule on uniformly spaced samples `y` with spacing `dx`.
///
/// An odd number of intervals is closed with the 3/8 rule on the last three;
/// two samples fall back to the trapezoid rule.
pub fn composite_simpson(y: &[f64], dx: f64) -> f64 {
    let n = y.len();
    match n {
        0 | 1 => 0.0,
        2 => 0.5 * dx * (y[0] + y[1]),
        3 => dx / 3.0 * (y[0] + 4.0 * y[1] + y[2]),
        _ => {
            let intervals = n - 1;
            let (simpson_end, tail) = if intervals.is_multiple_of(2) {
                (n - 1, 0.0)
            } else {
                let k = n - 4;
                (
                    k,
                    3.0 * dx / 8.0 * (y[k] + 3.0 * y[k + 1] + 3.0 * y[k + 2] + y[k + 3]),
                )
            };
            let mut s = y[0] + y[simpson_end];
            for (i, v) in y.iter().enumerate().take(simpson_end).skip(1) {
                s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
            }
            s * dx / 3.0 + tail
        }
    }
}
