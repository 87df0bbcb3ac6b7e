//! Dormand–Prince 5(4) embedded Runge–Kutta step with a mixed
//! absolute/relative error norm.

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

/// Fifth-order weights (identical to the last stage row, FSAL).
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];

/// Difference between fifth- and fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Order of the propagated solution.
pub const ORDER: i32 = 5;

#[derive(Debug, Clone, Copy)]
pub struct DpStep<const N: usize> {
    pub y: [f64; N],
    /// Derivative at the new point (first stage of the next step).
    pub dy: [f64; N],
    /// Normalised error; the step is acceptable when `err <= 1`.
    pub err: f64,
}

/// One Dormand–Prince step from `(t, y)` with derivative `dy0 = f(t, y)`.
pub fn dopri_step<const N: usize, F>(
    f: &F,
    t: f64,
    y: &[f64; N],
    dy0: &[f64; N],
    h: f64,
    atol: f64,
    rtol: f64,
) -> DpStep<N>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let mut k = [[0.0; N]; 7];
    k[0] = *dy0;
    for s in 1..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            let a = A[s][j];
            if a != 0.0 {
                for i in 0..N {
                    ys[i] += h * a * kj[i];
                }
            }
        }
        k[s] = f(t + C[s] * h, &ys);
    }
    let mut y_new = *y;
    let mut err = 0.0f64;
    for i in 0..N {
        let mut incr = 0.0;
        let mut e = 0.0;
        for s in 0..7 {
            incr += B[s] * k[s][i];
            e += E[s] * k[s][i];
        }
        y_new[i] += h * incr;
        let scale = atol + rtol * y[i].abs().max(y_new[i].abs());
        err = err.max((h * e).abs() / scale);
    }
    if y_new.iter().any(|v| !v.is_finite()) {
        err = f64::INFINITY;
    }
    DpStep {
        y: y_new,
        dy: k[6],
        err,
    }
}

/// Step-size factor for the next attempt given the normalised error.
pub fn step_factor(err: f64) -> f64 {
    if err == 0.0 {
        5.0
    } else if !err.is_finite() {
        0.2
    } else {
        (0.9 * err.powf(-1.0 / ORDER as f64)).clamp(0.2, 5.0)
    }
}
