//! Dense log-barrier interior-point method for
//! `max c^T z s.t. g_i(z) >= 0` with concave, twice differentiable `g_i`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One constraint evaluated at a point. Derivatives are optional so that
/// line searches can skip them.
#[derive(Debug, Clone, Default)]
pub struct ConstraintEval {
    pub value: f64,
    pub grad: Vec<(usize, f64)>,
    /// Lower-triangle-or-full entries; each `(i, j, v)` adds `v` at `(i, j)`
    /// and, when `i != j`, at `(j, i)` as well.
    pub hess: Vec<(usize, usize, f64)>,
}

pub trait BarrierProblem {
    fn dim(&self) -> usize;
    /// Linear objective coefficients.
    fn objective(&self) -> DVector<f64>;
    /// All constraints at `z`. `None` if `z` is outside the functions'
    /// domain.
    fn constraints(&self, z: &DVector<f64>, derivatives: bool) -> Option<Vec<ConstraintEval>>;
}

#[derive(Debug, Clone)]
pub struct BarrierOptions {
    pub gap_tolerance: f64,
    pub t0: f64,
    pub growth: f64,
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        BarrierOptions {
            gap_tolerance: 1e-8,
            t0: 1.0,
            growth: 10.0,
            max_newton: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BarrierResult {
    pub z: DVector<f64>,
    pub objective: f64,
    pub gap: f64,
    pub newton_steps: usize,
}

fn merit(c: &DVector<f64>, t: f64, z: &DVector<f64>, g: &[ConstraintEval]) -> Option<f64> {
    let mut v = t * c.dot(z);
    for e in g {
        if !(e.value > 0.0) {
            return None;
        }
        v += e.value.ln();
    }
    Some(v)
}

/// Solves from a strictly feasible `start`.
pub fn solve(p: &dyn BarrierProblem, start: DVector<f64>, opts: &BarrierOptions) -> Result<BarrierResult> {
    let n = p.dim();
    let c = p.objective();
    let mut z = start;
    let initial = p
        .constraints(&z, false)
        .ok_or_else(|| Error::Solver {
            iteration: 0,
            message: "barrier start outside the domain".into(),
        })?;
    if initial.iter().any(|e| !(e.value > 0.0)) {
        return Err(Error::Solver {
            iteration: 0,
            message: "barrier start is not strictly feasible".into(),
        });
    }
    let m = initial.len() as f64;
    let mut t = opts.t0;
    let mut steps = 0;
    loop {
        for _ in 0..opts.max_newton {
            let g = p.constraints(&z, true).expect("iterate stays in the domain");
            let f0 = merit(&c, t, &z, &g).expect("iterate stays strictly feasible");
            let mut grad = &c * t;
            let mut neg_hess = DMatrix::<f64>::zeros(n, n);
            for e in &g {
                let inv = 1.0 / e.value;
                for &(i, gi) in &e.grad {
                    grad[i] += gi * inv;
                    for &(j, gj) in &e.grad {
                        neg_hess[(i, j)] += gi * gj * inv * inv;
                    }
                }
                for &(i, j, h) in &e.hess {
                    neg_hess[(i, j)] -= h * inv;
                    if i != j {
                        neg_hess[(j, i)] -= h * inv;
                    }
                }
            }
            let step = newton_direction(&neg_hess, &grad);
            let decrement = grad.dot(&step);
            if !(decrement > 1e-12) {
                break;
            }
            steps += 1;
            let mut s = 1.0;
            let mut moved = false;
            for _ in 0..80 {
                let trial = &z + &step * s;
                if let Some(gt) = p.constraints(&trial, false) {
                    if let Some(ft) = merit(&c, t, &trial, &gt) {
                        if ft >= f0 + 0.25 * s * decrement {
                            z = trial;
                            moved = true;
                            break;
                        }
                    }
                }
                s *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if m / t < opts.gap_tolerance {
            break;
        }
        t *= opts.growth;
    }
    Ok(BarrierResult {
        objective: c.dot(&z),
        gap: m / t,
        z,
        newton_steps: steps,
    })
}

fn newton_direction(neg_hess: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let n = grad.len();
    let scale = (0..n).map(|i| neg_hess[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut shift = 0.0;
    loop {
        let mut a = neg_hess.clone();
        for i in 0..n {
            a[(i, i)] += shift;
        }
        if let Some(ch) = a.cholesky() {
            return ch.solve(grad);
        }
        shift = if shift == 0.0 { 1e-14 * scale } else { shift * 10.0 };
    }
}
