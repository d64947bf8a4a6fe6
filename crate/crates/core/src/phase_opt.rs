//! Per-slot RIS phase design.
//!
//! A slot objective is `sum_t w_t log2(1 + |c_t^T v|^2)` over unit-modulus
//! `v`, where each term is one LoS/NLoS state pairing weighted by its
//! probability (and, for shared slots, by the scheduling weight). The
//! transmit SNR is folded into `c_t`, so the lifted form with
//! `G_t = conj(c_t) c_t^T` reads `sum_t w_t log2(1 + Tr(V G_t))`.
//!
//! Solvers:
//! - [`solve_phase_sdr`]: semidefinite relaxation over `V >= 0, diag(V) = 1`
//!   with a certified upper bound;
//! - [`gaussian_randomization`]: feasible `v` from a relaxed `V`;
//! - [`coordinate_ascent_phases`]: element-wise exact line maximization,
//!   the production path;
//! - [`brute_force_phases`]: exhaustive grid oracle.

use std::f64::consts::{LN_2, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::channel::SlotChannel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTerm {
    pub weight: f64,
    /// `sqrt(gamma) conj(h_rx) .* h_tx`
    pub coeff: Vec<Complex64>,
}

impl PhaseTerm {
    fn gain(&self, v: &[Complex64]) -> f64 {
        self.coeff
            .iter()
            .zip(v)
            .map(|(c, p)| c * p)
            .sum::<Complex64>()
            .norm_sqr()
    }

    /// `G = conj(c) c^T`
    pub fn gain_matrix(&self) -> DMatrix<Complex64> {
        let m = self.coeff.len();
        DMatrix::from_fn(m, m, |i, j| self.coeff[i].conj() * self.coeff[j])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseProblem {
    pub terms: Vec<PhaseTerm>,
    m: usize,
}

fn pair_coeff(h_rx: &[Complex64], h_tx: &[Complex64], gamma: f64) -> Vec<Complex64> {
    let s = gamma.sqrt();
    h_rx.iter().zip(h_tx).map(|(r, t)| r.conj() * t * s).collect()
}

impl PhaseProblem {
    pub fn new(terms: Vec<PhaseTerm>) -> Result<Self> {
        let m = terms.first().map_or(0, |t| t.coeff.len());
        if m == 0 {
            return Err(Error::Domain("phase problem needs at least one element".into()));
        }
        for t in &terms {
            if t.coeff.len() != m {
                return Err(Error::Dimension {
                    expected: m,
                    got: t.coeff.len(),
                });
            }
        }
        Ok(PhaseProblem { terms, m })
    }

    /// Expected rate of node `rx`; `gamma` is the transmitter's SNR.
    pub fn for_receiver(slot: &SlotChannel, rx: usize, gamma: f64) -> Self {
        Self::weighted(slot, [(rx, 1.0, gamma)])
    }

    /// `sum_k weight_k E[R_k]` for the given `(receiver, weight, gamma)`.
    pub fn weighted<I>(slot: &SlotChannel, receivers: I) -> Self
    where
        I: IntoIterator<Item = (usize, f64, f64)>,
    {
        let mut terms = Vec::new();
        for (rx, weight, gamma) in receivers {
            let (r, t) = (&slot.links[rx], &slot.links[1 - rx]);
            let pairs = [
                (r.p_los * t.p_los, &r.los, &t.los),
                (r.p_los * t.p_nlos(), &r.los, &t.nlos),
                (r.p_nlos() * t.p_los, &r.nlos, &t.los),
                (r.p_nlos() * t.p_nlos(), &r.nlos, &t.nlos),
            ];
            for (p, hr, ht) in pairs {
                if weight * p > 0.0 {
                    terms.push(PhaseTerm {
                        weight: weight * p,
                        coeff: pair_coeff(hr, ht, gamma),
                    });
                }
            }
        }
        let m = slot.links[0].los.len();
        PhaseProblem { terms, m }
    }

    pub fn elements(&self) -> usize {
        self.m
    }

    pub fn objective(&self, v: &[Complex64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.weight * t.gain(v).ln_1p() / LN_2)
            .sum()
    }

    /// Phases aligning every entry of the heaviest term coherently.
    pub fn alignment_baseline(&self) -> Vec<Complex64> {
        let best = self.terms.iter().max_by(|a, b| {
            let sa = a.weight * a.coeff.iter().map(|c| c.norm()).sum::<f64>().powi(2);
            let sb = b.weight * b.coeff.iter().map(|c| c.norm()).sum::<f64>().powi(2);
            sa.total_cmp(&sb)
        });
        match best {
            Some(t) => conjugate_alignment(&t.coeff),
            None => vec![Complex64::new(1.0, 0.0); self.m],
        }
    }
}

/// `v_m = exp(-j arg c_m)`, which makes every `c_m v_m` real and positive.
pub fn conjugate_alignment(coeff: &[Complex64]) -> Vec<Complex64> {
    coeff
        .iter()
        .map(|c| Complex64::from_polar(1.0, -c.arg()))
        .collect()
}

/// Lifted objective `sum_t w_t log2(1 + Tr(V G_t))`.
pub fn sdr_objective(v: &DMatrix<Complex64>, problem: &PhaseProblem) -> Result<f64> {
    let m = problem.m;
    if v.nrows() != m || v.ncols() != m {
        return Err(Error::Dimension {
            expected: m,
            got: v.nrows(),
        });
    }
    let mut total = 0.0;
    for t in &problem.terms {
        let c = DVector::from_column_slice(&t.coeff);
        let tr = (c.transpose() * v * c.map(|z| z.conj()))[(0, 0)].re;
        if tr < -1e-9 {
            return Err(Error::Domain(format!("negative trace {tr:e} in lifted objective")));
        }
        total += t.weight * tr.max(0.0).ln_1p() / LN_2;
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct SdrOptions {
    pub max_iterations: usize,
    /// Target certified gap between the upper bound and the objective.
    pub gap_tolerance: f64,
    pub seed: u64,
}

impl Default for SdrOptions {
    fn default() -> Self {
        SdrOptions {
            max_iterations: 20_000,
            gap_tolerance: 1e-7,
            seed: 0,
        }
    }
}

/// Relaxed solution with its optimality certificate.
#[derive(Debug, Clone)]
pub struct LiftedPhase {
    /// Hermitian PSD with unit diagonal.
    pub matrix: DMatrix<Complex64>,
    pub objective: f64,
    /// No unit-diagonal PSD matrix (hence no unit-modulus `v`) does better.
    pub upper_bound: f64,
    pub iterations: usize,
}

impl LiftedPhase {
    pub fn gap(&self) -> f64 {
        self.upper_bound - self.objective
    }
}

struct Factored<'a> {
    problem: &'a PhaseProblem,
    m: usize,
    r: usize,
}

impl Factored<'_> {
    fn gains(&self, u: &DMatrix<Complex64>) -> Vec<DVector<Complex64>> {
        self.problem
            .terms
            .iter()
            .map(|t| u.transpose() * DVector::from_column_slice(&t.coeff))
            .collect()
    }

    fn value(&self, u: &DMatrix<Complex64>) -> f64 {
        self.gains(u)
            .iter()
            .zip(&self.problem.terms)
            .map(|(s, t)| t.weight * s.norm_squared().ln_1p() / LN_2)
            .sum()
    }

    /// Riemannian ascent direction on the product of unit spheres.
    fn direction(&self, u: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let mut d = DMatrix::zeros(self.m, self.r);
        for (s, t) in self.gains(u).iter().zip(&self.problem.terms) {
            let coef = t.weight / (LN_2 * (1.0 + s.norm_squared()));
            for i in 0..self.m {
                let ci = t.coeff[i].conj() * coef;
                for k in 0..self.r {
                    d[(i, k)] += ci * s[k];
                }
            }
        }
        for i in 0..self.m {
            let inner: f64 = (0..self.r)
                .map(|k| {
                    let (a, b): (Complex64, Complex64) = (u[(i, k)], d[(i, k)]);
                    (a.conj() * b).re
                })
                .sum();
            for k in 0..self.r {
                let uik = u[(i, k)];
                d[(i, k)] -= uik * inner;
            }
        }
        d
    }
}

fn normalize_rows(u: &mut DMatrix<Complex64>) {
    for mut row in u.row_iter_mut() {
        let n = row.norm();
        row /= Complex64::new(n, 0.0);
    }
}

/// Upper bound `f(V) + <C, W - V>` maximized over the elliptope through the
/// shifted dual `y = diag(C V) - lambda_min(Diag(y) - C)`.
fn certificate(v: &DMatrix<Complex64>, problem: &PhaseProblem, value: f64) -> f64 {
    let m = problem.m;
    let mut c = DMatrix::<Complex64>::zeros(m, m);
    for t in &problem.terms {
        let g = t.gain_matrix();
        let tr = (&g * v).trace().re.max(0.0);
        c += g * Complex64::new(t.weight / (LN_2 * (1.0 + tr)), 0.0);
    }
    let cv = &c * v;
    let mut s = -c.clone();
    let mut sum_y = 0.0;
    for i in 0..m {
        let y = cv[(i, i)].re;
        sum_y += y;
        s[(i, i)] += Complex64::new(y, 0.0);
    }
    let lambda_min = s
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let slack = sum_y - cv.trace().re;
    value + slack + m as f64 * (-lambda_min).max(0.0)
}

/// Solves the relaxed phase problem `max f(V) s.t. V >= 0, V_mm = 1`.
///
/// Uses a rank-(M+1) factorization `V = U U^H` with unit-norm rows: with
/// more columns than the rank of any solution, second-order critical points
/// of the factored problem are global optima of the concave relaxed
/// problem. The returned `upper_bound` is a duality certificate computed
/// from `V` alone.
pub fn solve_phase_sdr(problem: &PhaseProblem, opts: &SdrOptions) -> Result<LiftedPhase> {
    let m = problem.m;
    let one = Complex64::new(1.0, 0.0);
    if m == 1 {
        let matrix = DMatrix::from_element(1, 1, one);
        let objective = sdr_objective(&matrix, problem)?;
        return Ok(LiftedPhase {
            matrix,
            objective,
            upper_bound: objective,
            iterations: 0,
        });
    }
    let r = m + 1;
    let f = Factored { problem, m, r };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let normal = Normal::new(0.0, 1.0).expect("valid std");
    let mut u = DMatrix::from_fn(m, r, |_, _| {
        Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))
    });
    normalize_rows(&mut u);

    let lift = |u: &DMatrix<Complex64>| {
        let mut v = u * u.adjoint();
        for i in 0..m {
            v[(i, i)] = one;
        }
        v
    };

    let mut value = f.value(&u);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut bound = f64::INFINITY;
    while iterations < opts.max_iterations {
        iterations += 1;
        let d = f.direction(&u);
        let slope = d.norm_squared();
        if slope < 1e-30 {
            break;
        }
        // Armijo backtracking along the retraction
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = &u + &d * Complex64::new(step, 0.0);
            normalize_rows(&mut trial);
            let tv = f.value(&trial);
            if tv >= value + 1e-4 * step * slope {
                u = trial;
                value = tv;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        if iterations % 25 == 0 {
            bound = certificate(&lift(&u), problem, value);
            if bound - value <= opts.gap_tolerance {
                break;
            }
        }
    }
    let matrix = lift(&u);
    let objective = sdr_objective(&matrix, problem)?;
    let upper_bound = certificate(&matrix, problem, objective).min(bound.max(objective));
    if !upper_bound.is_finite() {
        return Err(Error::Solver {
            iteration: iterations,
            message: "relaxed phase solver produced a non-finite bound".into(),
        });
    }
    Ok(LiftedPhase {
        matrix,
        objective,
        upper_bound,
        iterations,
    })
}

/// Default number of randomization draws.
pub const DEFAULT_DRAWS: usize = 100;

/// Draws `xi ~ CN(0, V)`, projects entrywise onto the unit circle and keeps
/// the best draw. Deterministic for a given seed.
pub fn gaussian_randomization(
    lifted: &DMatrix<Complex64>,
    problem: &PhaseProblem,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<Complex64>> {
    let m = problem.m;
    if lifted.nrows() != m || lifted.ncols() != m {
        return Err(Error::Dimension {
            expected: m,
            got: lifted.nrows(),
        });
    }
    let eig = lifted.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    // eigenvalues at rounding level carry no direction
    let scale = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| {
        let l = if l > 1e-12 * top { l } else { 0.0 };
        Complex64::new(l.sqrt(), 0.0)
    }));
    let factor = &eig.eigenvectors * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid std");
    let mut best: Option<(f64, Vec<Complex64>)> = None;
    let mut drawn = 0;
    let mut attempts = 0;
    while drawn < n_draws.max(1) {
        attempts += 1;
        if attempts > 100 * n_draws.max(1) {
            return Err(Error::Domain("randomization keeps hitting zero entries".into()));
        }
        let w = DVector::from_fn(m, |_, _| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)));
        let xi = &factor * w;
        if xi.iter().any(|z| z.norm() == 0.0) {
            continue;
        }
        drawn += 1;
        let v: Vec<Complex64> = xi.iter().map(|z| z / z.norm()).collect();
        let obj = problem.objective(&v);
        if best.as_ref().map_or(true, |(b, _)| obj > *b) {
            best = Some((obj, v));
        }
    }
    Ok(best.expect("at least one draw").1)
}

#[derive(Debug, Clone)]
pub struct AscentResult {
    pub v: Vec<Complex64>,
    pub objective: f64,
    pub sweeps: usize,
}

const GRID_POINTS: usize = 32;

/// Element-wise ascent: each step sets one phase to the maximizer of the
/// 1-D objective (grid scan then golden-section refinement), never
/// accepting a worse value. Stops when a sweep gains less than `tol`.
pub fn coordinate_ascent_phases(
    initial: &[Complex64],
    problem: &PhaseProblem,
    max_sweeps: usize,
    tol: f64,
) -> Result<AscentResult> {
    let m = problem.m;
    if initial.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: initial.len(),
        });
    }
    let mut v: Vec<Complex64> = initial.iter().map(|z| z / z.norm()).collect();
    let mut totals: Vec<Complex64> = problem
        .terms
        .iter()
        .map(|t| t.coeff.iter().zip(&v).map(|(c, p)| c * p).sum())
        .collect();
    let mut objective = problem.objective(&v);
    let mut sweeps = 0;
    let nt = problem.terms.len();
    let mut a = vec![0.0; nt];
    let mut b = vec![0.0; nt];
    let mut delta = vec![0.0; nt];
    while sweeps < max_sweeps {
        sweeps += 1;
        let before = objective;
        for i in 0..m {
            for (t, term) in problem.terms.iter().enumerate() {
                let d = term.coeff[i];
                let s = totals[t] - d * v[i];
                a[t] = s.norm_sqr() + d.norm_sqr();
                b[t] = 2.0 * s.norm() * d.norm();
                delta[t] = d.arg() - s.arg();
            }
            let line = |theta: f64| -> f64 {
                (0..nt)
                    .map(|t| {
                        let g = (a[t] + b[t] * (theta + delta[t]).cos()).max(0.0);
                        problem.terms[t].weight * g.ln_1p()
                    })
                    .sum::<f64>()
                    / LN_2
            };
            let current = v[i].arg();
            let mut best = (line(current), current);
            let mut grid_best = (f64::NEG_INFINITY, 0.0);
            for g in 0..GRID_POINTS {
                let th = TAU * g as f64 / GRID_POINTS as f64;
                let val = line(th);
                if val > grid_best.0 {
                    grid_best = (val, th);
                }
            }
            let h = TAU / GRID_POINTS as f64;
            let refined = golden_section_max(&line, grid_best.1 - h, grid_best.1 + h, 1e-12);
            for cand in [grid_best, (line(refined), refined)] {
                if cand.0 > best.0 {
                    best = cand;
                }
            }
            let new = Complex64::from_polar(1.0, best.1);
            for (t, term) in problem.terms.iter().enumerate() {
                totals[t] += term.coeff[i] * (new - v[i]);
            }
            v[i] = new;
        }
        // refresh to avoid drift in the running sums
        for (t, term) in problem.terms.iter().enumerate() {
            totals[t] = term.coeff.iter().zip(&v).map(|(c, p)| c * p).sum();
        }
        objective = problem.objective(&v);
        if objective < before {
            // rounding noise only; never report a decrease
            objective = before;
        }
        if objective - before < tol {
            break;
        }
    }
    let start: Vec<Complex64> = initial.iter().map(|z| z / z.norm()).collect();
    if problem.objective(&v) < problem.objective(&start) {
        v = start;
    }
    let objective = problem.objective(&v);
    Ok(AscentResult {
        v,
        objective,
        sweeps,
    })
}

fn golden_section_max(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Evaluation budget of [`brute_force_phases`].
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

/// Exhaustive search over `theta_m in {2 pi i / levels}`.
pub fn brute_force_phases(problem: &PhaseProblem, levels: usize) -> Result<(Vec<Complex64>, f64)> {
    let m = problem.m;
    let needed = (levels as u128).checked_pow(m as u32).unwrap_or(u128::MAX);
    if levels == 0 || needed > BRUTE_FORCE_LIMIT {
        return Err(Error::Budget {
            needed,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let table: Vec<Complex64> = (0..levels)
        .map(|i| Complex64::from_polar(1.0, TAU * i as f64 / levels as f64))
        .collect();
    let mut idx = vec![0usize; m];
    let mut v = vec![table[0]; m];
    let mut best = (problem.objective(&v), v.clone());
    loop {
        let mut pos = 0;
        while pos < m {
            idx[pos] += 1;
            if idx[pos] < levels {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
        if pos == m {
            break;
        }
        for (j, &i) in idx.iter().enumerate().take(pos + 1) {
            v[j] = table[i];
        }
        let obj = problem.objective(&v);
        if obj > best.0 {
            best = (obj, v.clone());
        }
    }
    Ok((best.1, best.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_coeff(rng: &mut ChaCha8Rng, m: usize, scale: f64) -> Vec<Complex64> {
        (0..m)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale)
            .collect()
    }

    fn ll_only(coeff: Vec<Complex64>) -> PhaseProblem {
        PhaseProblem::new(vec![PhaseTerm { weight: 1.0, coeff }]).unwrap()
    }

    fn mixed(rng: &mut ChaCha8Rng, m: usize) -> PhaseProblem {
        let w = [0.55, 0.2, 0.15, 0.1];
        let scales = [3.0, 1.5, 1.0, 0.5];
        PhaseProblem::new(
            (0..4)
                .map(|t| PhaseTerm {
                    weight: w[t],
                    coeff: random_coeff(rng, m, scales[t]),
                })
                .collect(),
        )
        .unwrap()
    }

    fn alignment_value(coeff: &[Complex64]) -> f64 {
        (1.0 + coeff.iter().map(|z| z.norm()).sum::<f64>().powi(2)).log2()
    }

    #[test]
    fn lifted_objective_matches_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = mixed(&mut rng, 4);
        let v: Vec<Complex64> = (0..4).map(|_| Complex64::from_polar(1.0, rng.gen_range(0.0..TAU))).collect();
        let vv = DVector::from_vec(v.clone());
        let lifted = &vv * vv.adjoint();
        assert!((sdr_objective(&lifted, &p).unwrap() - p.objective(&v)).abs() < 1e-12);

        let zero = PhaseProblem::new(vec![PhaseTerm { weight: 1.0, coeff: vec![c(0.0, 0.0); 3] }]).unwrap();
        assert_eq!(sdr_objective(&DMatrix::identity(3, 3), &zero).unwrap(), 0.0);
    }

    #[test]
    fn lifted_objective_rejects_negative_trace() {
        let p = ll_only(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        let bad = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(-5.0, 0.0), c(-5.0, 0.0), c(1.0, 0.0)]);
        assert!(sdr_objective(&bad, &p).is_err());
    }

    #[test]
    fn sdr_single_element_is_exact() {
        let p = ll_only(vec![c(2.0, 1.0)]);
        let l = solve_phase_sdr(&p, &SdrOptions::default()).unwrap();
        assert_eq!(l.matrix[(0, 0)], c(1.0, 0.0));
        assert!((l.objective - (1.0f64 + 5.0).log2()).abs() < 1e-15);
    }

    #[test]
    fn sdr_recovers_alignment_optimum_for_rank_one() {
        let coeff = vec![c(0.3, 1.1), c(-0.8, 0.2)];
        let p = ll_only(coeff.clone());
        let l = solve_phase_sdr(&p, &SdrOptions::default()).unwrap();
        let opt = alignment_value(&coeff);
        assert!((l.objective - opt).abs() < 1e-6, "{} vs {opt}", l.objective);
        assert!(l.upper_bound >= opt - 1e-9);
        assert!(l.gap() < 1e-6);
        for i in 0..2 {
            assert!((l.matrix[(i, i)] - c(1.0, 0.0)).norm() < 1e-15);
        }
        assert!(l.matrix.clone().symmetric_eigen().eigenvalues.iter().all(|&e| e > -1e-10));
    }

    #[test]
    fn randomization_rank_one_is_exact() {
        let v: Vec<Complex64> = [0.3, 2.0, -1.0].iter().map(|&a| Complex64::from_polar(1.0, a)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = mixed(&mut rng, 3);
        let vv = DVector::from_vec(v.clone());
        let lifted = &vv * vv.adjoint();
        let got = gaussian_randomization(&lifted, &p, 5, 1).unwrap();
        assert!((p.objective(&got) - p.objective(&v)).abs() < 1e-9);
        let rot = got[0] / v[0];
        for (g, w) in got.iter().zip(&v) {
            assert!((g - w * rot).norm() < 1e-9);
        }
    }

    #[test]
    fn randomization_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = mixed(&mut rng, 3);
        let l = solve_phase_sdr(&p, &SdrOptions::default()).unwrap();
        let a = gaussian_randomization(&l.matrix, &p, 1, 77).unwrap();
        let b = gaussian_randomization(&l.matrix, &p, 1, 77).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn randomization_close_to_bound_on_ll_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = ll_only(random_coeff(&mut rng, 2, 3.0));
        let l = solve_phase_sdr(&p, &SdrOptions::default()).unwrap();
        let v = gaussian_randomization(&l.matrix, &p, 200, 3).unwrap();
        assert!(p.objective(&v) >= 0.98 * l.upper_bound);
    }

    #[test]
    fn ascent_converges_to_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let coeff = random_coeff(&mut rng, 6, 2.0);
        let p = ll_only(coeff.clone());
        let start = vec![c(1.0, 0.0); 6];
        let r = coordinate_ascent_phases(&start, &p, 100, 1e-12).unwrap();
        assert!((r.objective - alignment_value(&coeff)).abs() < 1e-6);
    }

    #[test]
    fn ascent_fixed_point_at_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let coeff = random_coeff(&mut rng, 5, 2.0);
        let p = ll_only(coeff.clone());
        let opt = conjugate_alignment(&coeff);
        let r = coordinate_ascent_phases(&opt, &p, 100, 1e-9).unwrap();
        assert_eq!(r.sweeps, 1);
        assert!((r.objective - p.objective(&opt)).abs() < 1e-12);
    }

    #[test]
    fn ascent_never_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let p = mixed(&mut rng, 5);
            let start: Vec<Complex64> = (0..5).map(|_| Complex64::from_polar(1.0, rng.gen_range(0.0..TAU))).collect();
            let r = coordinate_ascent_phases(&start, &p, 50, 1e-10).unwrap();
            assert!(r.objective >= p.objective(&start) - 1e-15);
        }
    }

    #[test]
    fn brute_force_examples() {
        let p = ll_only(vec![c(0.7, -0.2)]);
        let (v, obj) = brute_force_phases(&p, 8).unwrap();
        assert_eq!(v.len(), 1);
        assert!((obj - (1.0 + 0.53f64).log2()).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let coeff = random_coeff(&mut rng, 2, 1.0);
        let p = ll_only(coeff.clone());
        let (_, obj) = brute_force_phases(&p, 64).unwrap();
        let best_gain = coeff.iter().map(|z| z.norm()).sum::<f64>().powi(2);
        let grid_gain = obj.exp2() - 1.0;
        let rel_gap = 1.0 - grid_gain / best_gain;
        assert!(rel_gap >= -1e-12 && rel_gap <= (std::f64::consts::PI / 64.0).powi(2));

        assert!(matches!(brute_force_phases(&p, 20_000), Err(Error::Budget { .. })));
        let p8 = ll_only(random_coeff(&mut rng, 8, 1.0));
        assert!(matches!(brute_force_phases(&p8, 8), Err(Error::Budget { .. })));
    }

    #[test]
    fn ordering_on_random_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..5 {
            let p = mixed(&mut rng, 3);
            let (_, grid) = brute_force_phases(&p, 16).unwrap();
            let ca = coordinate_ascent_phases(&p.alignment_baseline(), &p, 200, 1e-12).unwrap();
            let sdr = solve_phase_sdr(&p, &SdrOptions::default()).unwrap();
            assert!(grid <= ca.objective * 1.01);
            assert!(ca.objective <= sdr.upper_bound + 1e-9);
        }
    }

    #[test]
    fn global_phase_invariance_of_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let p = mixed(&mut rng, 4);
        let v: Vec<Complex64> = (0..4).map(|_| Complex64::from_polar(1.0, rng.gen_range(0.0..TAU))).collect();
        let rot: Vec<Complex64> = v.iter().map(|z| z * Complex64::from_polar(1.0, 0.77)).collect();
        assert!((p.objective(&v) - p.objective(&rot)).abs() < 1e-12);
    }
}
