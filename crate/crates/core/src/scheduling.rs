//! Max-min scheduling of the two receiving nodes.
//!
//! The relaxed problem `max eta s.t. (1/N) sum_n alpha_k[n] r_k[n] >= eta`,
//! `alpha_1[n] + alpha_2[n] <= 1`, `0 <= alpha <= 1` is solved exactly by a
//! ratio sweep: for a fixed level of node 2, maximizing node 1 is a
//! fractional knapsack, so slots are handed to node 1 in decreasing order of
//! `r_1 / r_2` until both averages meet. At most one slot ends fractional.

use crate::error::{Error, Result};

/// Per-slot scheduling weights `alpha[n] = [alpha_1, alpha_2]` and the
/// achieved minimum average rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub alpha: Vec<[f64; 2]>,
    pub eta: f64,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.alpha.iter().flatten().all(|&a| a == 0.0 || a == 1.0)
    }

    /// Checks `0 <= alpha <= 1` and `alpha_1 + alpha_2 <= 1` within `tol`.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.alpha.iter().all(|a| {
            a.iter().all(|&v| v >= -tol && v <= 1.0 + tol) && a[0] + a[1] <= 1.0 + tol
        })
    }

    /// Slot served by a single node, if any (weights exactly 0/1).
    pub fn sole_receiver(&self, n: usize) -> Option<usize> {
        match self.alpha[n] {
            [a, b] if a == 1.0 && b == 0.0 => Some(0),
            [a, b] if a == 0.0 && b == 1.0 => Some(1),
            _ => None,
        }
    }
}

/// `(1/N) sum_n alpha_k[n] rates[n][k]` for both nodes.
pub fn node_averages(alpha: &[[f64; 2]], rates: &[[f64; 2]]) -> [f64; 2] {
    let n = rates.len().max(1) as f64;
    let mut s = [0.0; 2];
    for (a, r) in alpha.iter().zip(rates) {
        s[0] += a[0] * r[0];
        s[1] += a[1] * r[1];
    }
    [s[0] / n, s[1] / n]
}

fn check_rates(rates: &[[f64; 2]]) -> Result<()> {
    for (n, r) in rates.iter().enumerate() {
        if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(format!(
                "rates must be finite and non-negative; slot {n} has {r:?}"
            )));
        }
    }
    Ok(())
}

/// Exact solution of the relaxed max-min scheduling LP. All-zero rates give
/// `eta = 0` with every slot idle.
pub fn solve_schedule_lp(rates: &[[f64; 2]]) -> Result<Schedule> {
    check_rates(rates)?;
    let n = rates.len();
    let mut alpha = vec![[0.0, 0.0]; n];
    let mut order: Vec<usize> = (0..n)
        .filter(|&i| rates[i][0] > 0.0 || rates[i][1] > 0.0)
        .collect();
    // decreasing r1/r2 (r2 = 0 first), ties by index
    let angle = |i: usize| rates[i][0].atan2(rates[i][1]);
    order.sort_by(|&i, &j| angle(j).total_cmp(&angle(i)).then(i.cmp(&j)));
    for &i in &order {
        alpha[i] = [0.0, 1.0];
    }
    let mut s1 = 0.0;
    let mut s2: f64 = order.iter().map(|&i| rates[i][1]).sum();
    for &i in &order {
        let [a, b] = rates[i];
        if s1 + a >= s2 - b {
            let t = ((s2 - s1) / (a + b)).clamp(0.0, 1.0);
            alpha[i] = [t, 1.0 - t];
            break;
        }
        s1 += a;
        s2 -= b;
        alpha[i] = [1.0, 0.0];
    }
    let avg = node_averages(&alpha, rates);
    Ok(Schedule {
        alpha,
        eta: avg[0].min(avg[1]),
    })
}

/// Optimal value of the LP dual, `min_{lambda in [0,1]} (1/N) sum_n
/// max(lambda r_1[n], (1 - lambda) r_2[n])`, evaluated exactly at the
/// breakpoints of the piecewise-linear convex dual function.
pub fn lp_dual_bound(rates: &[[f64; 2]]) -> f64 {
    let n = rates.len().max(1) as f64;
    let dual = |l: f64| rates.iter().map(|r| (l * r[0]).max((1.0 - l) * r[1])).sum::<f64>() / n;
    let mut best = dual(0.0).min(dual(1.0));
    for r in rates {
        if r[0] + r[1] > 0.0 {
            best = best.min(dual(r[1] / (r[0] + r[1])));
        }
    }
    best
}

/// Binary schedule recovered from a relaxed one.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryReconstruction {
    pub schedule: Schedule,
    pub relaxed_eta: f64,
    /// Relative loss `1 - eta_binary / eta_relaxed` (0 when the relaxed
    /// optimum is 0).
    pub loss: f64,
}

/// Largest slot count reconstructed by exhaustive search.
pub const EXHAUSTIVE_SLOTS: usize = 20;

/// Rounds a relaxed schedule to `{0, 1}` weights.
///
/// Binary inputs are returned unchanged. Up to [`EXHAUSTIVE_SLOTS`] slots the
/// best binary assignment is found exhaustively, ties going to the
/// assignment that agrees most with the relaxed weights. Longer horizons
/// round each slot to its heavier node and then apply improving single-slot
/// moves until none is left.
pub fn reconstruct_binary(s: &Schedule, rates: &[[f64; 2]]) -> Result<BinaryReconstruction> {
    check_rates(rates)?;
    if s.len() != rates.len() {
        return Err(Error::Dimension {
            expected: rates.len(),
            got: s.len(),
        });
    }
    let relaxed = node_averages(&s.alpha, rates);
    let relaxed_eta = relaxed[0].min(relaxed[1]);
    let alpha = if s.is_binary() {
        s.alpha.clone()
    } else if rates.len() <= EXHAUSTIVE_SLOTS {
        exhaustive_assignment(&s.alpha, rates)
    } else {
        local_search_assignment(&s.alpha, rates)
    };
    let avg = node_averages(&alpha, rates);
    let eta = avg[0].min(avg[1]);
    let loss = if relaxed_eta > 0.0 {
        1.0 - eta / relaxed_eta
    } else {
        0.0
    };
    Ok(BinaryReconstruction {
        schedule: Schedule { alpha, eta },
        relaxed_eta,
        loss,
    })
}

fn exhaustive_assignment(relaxed: &[[f64; 2]], rates: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = rates.len();
    // bit i set: slot i served by node 1 (index 0); clear: node 2 (index 1)
    let (mut s1, mut s2) = (0.0f64, rates.iter().map(|r| r[1]).sum::<f64>());
    let mut score: f64 = relaxed.iter().map(|a| a[1]).sum();
    let mut mask: u64 = 0;
    let mut best = (s1.min(s2), score, mask);
    for g in 1u64..(1u64 << n) {
        let bit = g.trailing_zeros() as usize;
        mask ^= 1 << bit;
        let sign = if mask & (1 << bit) != 0 { 1.0 } else { -1.0 };
        s1 += sign * rates[bit][0];
        s2 -= sign * rates[bit][1];
        score += sign * (relaxed[bit][0] - relaxed[bit][1]);
        let value = s1.min(s2);
        let tol = 1e-12 * value.abs().max(1e-300);
        if value > best.0 + tol || (value >= best.0 - tol && score > best.1 + 1e-12) {
            best = (value, score, mask);
        }
    }
    (0..n)
        .map(|i| if best.2 & (1 << i) != 0 { [1.0, 0.0] } else { [0.0, 1.0] })
        .collect()
}

fn local_search_assignment(relaxed: &[[f64; 2]], rates: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut to_first: Vec<bool> = relaxed
        .iter()
        .zip(rates)
        .map(|(a, r)| a[0] > a[1] || (a[0] == a[1] && r[0] >= r[1]))
        .collect();
    let sums = |f: &[bool]| {
        f.iter().zip(rates).fold((0.0, 0.0), |(a, b), (&one, r)| {
            if one {
                (a + r[0], b)
            } else {
                (a, b + r[1])
            }
        })
    };
    let (mut s1, mut s2) = sums(&to_first);
    loop {
        let current = s1.min(s2);
        let mut best: Option<(usize, f64)> = None;
        for (i, &one) in to_first.iter().enumerate() {
            let (t1, t2) = if one {
                (s1 - rates[i][0], s2 + rates[i][1])
            } else {
                (s1 + rates[i][0], s2 - rates[i][1])
            };
            let v = t1.min(t2);
            if v > current * (1.0 + 1e-12) + 1e-300 && best.map_or(true, |(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        match best {
            Some((i, _)) => {
                to_first[i] = !to_first[i];
                let (a, b) = sums(&to_first);
                s1 = a;
                s2 = b;
            }
            None => break,
        }
    }
    to_first
        .into_iter()
        .map(|one| if one { [1.0, 0.0] } else { [0.0, 1.0] })
        .collect()
}
