//! Dormand–Prince 5(4) with Hairer's continuous extension.

use crate::error::Result;

const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const A7: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];

// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// One attempted step. `k[6]` is f(y1), reusable as the next `k[0]`.
#[derive(Clone, Debug)]
pub struct Step {
    pub h: f64,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub k: [Vec<f64>; 7],
    /// Scaled RMS error; the step is acceptable when ≤ 1.
    pub err: f64,
}

pub fn step<F>(f: &mut F, y0: &[f64], k1: &[f64], h: f64, atol: &[f64], rtol: f64) -> Result<Step>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = y0.len();
    let mut k: [Vec<f64>; 7] = Default::default();
    k[0] = k1.to_vec();
    let rows: [&[f64]; 6] = [&A2, &A3, &A4, &A5, &A6, &A7];
    let mut y = vec![0.0; n];
    for (s, row) in rows.iter().enumerate() {
        for i in 0..n {
            let mut acc = 0.0;
            for (j, a) in row.iter().enumerate() {
                acc += a * k[j][i];
            }
            y[i] = y0[i] + h * acc;
        }
        let mut ks = vec![0.0; n];
        f(&y, &mut ks)?;
        k[s + 1] = ks;
    }
    let mut sum = 0.0;
    for i in 0..n {
        let mut e = 0.0;
        for j in 0..7 {
            e += E[j] * k[j][i];
        }
        let sc = atol[i] + rtol * y0[i].abs().max(y[i].abs());
        let r = h * e / sc;
        sum += r * r;
    }
    let err = if n == 0 { 0.0 } else { (sum / n as f64).sqrt() };
    Ok(Step {
        h,
        y0: y0.to_vec(),
        y1: y,
        k,
        err,
    })
}

impl Step {
    /// Continuous extension at y(t0 + θh) for components `idx`.
    pub fn dense(&self, theta: f64, idx: std::ops::Range<usize>) -> Vec<f64> {
        let h = self.h;
        idx.map(|i| {
            let r2 = self.y1[i] - self.y0[i];
            let r3 = h * self.k[0][i] - r2;
            let r4 = r2 - h * self.k[6][i] - r3;
            let mut r5 = 0.0;
            for j in 0..7 {
                r5 += D[j] * self.k[j][i];
            }
            r5 *= h;
            self.y0[i] + theta * (r2 + (1.0 - theta) * (r3 + theta * (r4 + (1.0 - theta) * r5)))
        })
        .collect()
    }
}

/// Standard step-size factor, clamped to [0.2, 10].
pub fn factor(err: f64) -> f64 {
    if err == 0.0 {
        10.0
    } else {
        (0.9 * err.powf(-0.2)).clamp(0.2, 10.0)
    }
}
