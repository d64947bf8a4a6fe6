//! Sampling and exhaustive oracles for the rate model and the optimizer.

use std::f64::consts::{LN_2, TAU};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{los_probability, FadingRealization, LinkModel, SlotChannel};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::optimizer::{alternating_optimize, Scheme, SchemeConfig};
use crate::phase_opt::{brute_force_phases, coordinate_ascent_phases, solve_phase_sdr, PhaseProblem, SdrOptions};
use crate::rate::{expected_rate, rate_in_slack_vector, NodeSlacks, TaylorBound, XiCoefficients};
use crate::scenario::{Point2, Scenario};
use crate::scheduling::{lp_dual_bound, solve_schedule_lp};
use crate::trajectory_opt::linearize_elevation;

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub n_samples: usize,
    pub empirical_mean: f64,
    pub closed_form: f64,
    pub std_error: f64,
    pub z_score: f64,
    /// Set when the sample is too small for a meaningful error estimate.
    pub warning: Option<String>,
}

fn conditional(h_rx: &[Complex64], v: &[Complex64], h_tx: &[Complex64], gamma: f64) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for m in 0..v.len() {
        acc += h_rx[m].conj() * v[m] * h_tx[m];
    }
    (1.0 + gamma * acc.norm_sqr()).ln() / LN_2
}

/// Conditional rates and probabilities of the four joint link states,
/// ordered LL, LN, NL, NN (receiver state first).
fn joint_states(slot: &SlotChannel, v: &[Complex64], rx: usize, gamma: f64) -> [(f64, f64); 4] {
    let (r, t) = (&slot.links[rx], &slot.links[1 - rx]);
    let mut out = [(0.0, 0.0); 4];
    for (i, (r_los, t_los)) in [(true, true), (true, false), (false, true), (false, false)].into_iter().enumerate() {
        let pr = if r_los { r.p_los } else { 1.0 - r.p_los };
        let pt = if t_los { t.p_los } else { 1.0 - t.p_los };
        let hr = if r_los { &r.los } else { &r.nlos };
        let ht = if t_los { &t.los } else { &t.nlos };
        out[i] = (pr * pt, conditional(hr, v, ht, gamma));
    }
    out
}

/// Exact expectation over the four joint LoS/NLoS outcomes.
pub fn enumerate_expected_rate(slot: &SlotChannel, v: &[Complex64], rx: usize, gamma: f64) -> f64 {
    joint_states(slot, v, rx, gamma).iter().map(|(p, r)| p * r).sum()
}

const MC_BLOCK: usize = 4096;

/// Samples independent LoS states for both links and averages the
/// resulting conditional rate. Blocks of samples use their own derived
/// streams and are reduced in order, so results do not depend on the
/// thread count.
pub fn monte_carlo_expected_rate(
    slot: &SlotChannel,
    v: &[Complex64],
    rx: usize,
    gamma: f64,
    n_samples: usize,
    seed: u64,
) -> McReport {
    let n_samples = n_samples.max(1);
    let states = joint_states(slot, v, rx, gamma);
    let closed_form = expected_rate(slot, v, rx, gamma).expected;
    let (p_rx, p_tx) = (slot.links[rx].p_los, slot.links[1 - rx].p_los);
    let blocks = n_samples.div_ceil(MC_BLOCK);
    // per-block (count, mean, sum of squared deviations), merged in order
    let parts: Vec<(f64, f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b as u64));
            let count = MC_BLOCK.min(n_samples - b * MC_BLOCK);
            let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
            for _ in 0..count {
                let r_los = rng.gen::<f64>() < p_rx;
                let t_los = rng.gen::<f64>() < p_tx;
                let idx = match (r_los, t_los) {
                    (true, true) => 0,
                    (true, false) => 1,
                    (false, true) => 2,
                    (false, false) => 3,
                };
                let x = states[idx].1;
                n += 1.0;
                let d = x - mean;
                mean += d / n;
                m2 += d * (x - mean);
            }
            (n, mean, m2)
        })
        .collect();
    let (n, mean, m2) = parts.iter().fold((0.0, 0.0, 0.0), |(na, ma, sa), &(nb, mb, sb)| {
        let nt = na + nb;
        let d = mb - ma;
        (nt, ma + d * nb / nt, sa + sb + d * d * na * nb / nt)
    });
    let (std_error, warning) = if n_samples < 2 {
        (0.0, Some("single sample: standard error not estimable".to_string()))
    } else {
        ((m2 / (n - 1.0) / n).sqrt(), None)
    };
    let diff = mean - closed_form;
    let z_score = if std_error > 0.0 {
        diff / std_error
    } else if diff.abs() <= 1e-12 * closed_form.abs().max(1.0) {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    McReport {
        n_samples,
        empirical_mean: mean,
        closed_form,
        std_error,
        z_score,
        warning,
    }
}

/// Grid optimum of a toy instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyOracle {
    pub eta: f64,
    pub waypoints: Vec<Point2>,
    pub altitudes: Vec<f64>,
    /// Receiving node of every slot.
    pub receivers: Vec<usize>,
    pub evaluations: u128,
}

/// Evaluation budget of [`toy_end_to_end_oracle`].
pub const TOY_BUDGET: u128 = 5_000_000_000;

pub const TOY_PHASE_LEVELS: usize = 16;

/// Exhaustive grid optimum of the max-min rate for `N <= 3`, `M <= 2`.
///
/// Grid: 1 m over the free middle waypoint (if `N = 3`), 1 m over the
/// altitudes, 16 phase levels per element, every binary schedule. The
/// objective only depends on relative phases, so the first element is held
/// at zero phase without loss.
pub fn toy_end_to_end_oracle(s: &Scenario) -> Result<ToyOracle> {
    s.validate()?;
    let n = s.n_slots;
    let m = s.ris.elements();
    if n > 3 || m > 2 {
        return Err(Error::Domain(format!("toy oracle needs N <= 3 and M <= 2, got N = {n}, M = {m}")));
    }
    let fading = FadingRealization::for_scenario(s);
    let l = &s.limits;
    let heights: Vec<f64> = {
        let lo = l.h_min.ceil() as i64;
        let hi = l.h_max.floor() as i64;
        (lo..=hi).map(|h| h as f64).collect()
    };
    if heights.is_empty() {
        return Err(Error::Domain("altitude box contains no integer grid point".into()));
    }
    let step = s.horizontal_step();
    let (q0, qf) = (l.start, l.finish);
    let centre: Vec<Point2> = if n == 3 {
        let lo_x = (q0.x.max(qf.x) - step).ceil() as i64;
        let hi_x = (q0.x.min(qf.x) + step).floor() as i64;
        let lo_y = (q0.y.max(qf.y) - step).ceil() as i64;
        let hi_y = (q0.y.min(qf.y) + step).floor() as i64;
        let mut pts = Vec::new();
        for x in lo_x..=hi_x {
            for y in lo_y..=hi_y {
                let p = Point2::new(x as f64, y as f64);
                if (p - q0).norm() <= step && (qf - p).norm() <= step {
                    pts.push(p);
                }
            }
        }
        pts
    } else {
        vec![qf]
    };
    let phases: Vec<Vec<Complex64>> = if m == 1 {
        vec![vec![Complex64::new(1.0, 0.0)]]
    } else {
        (0..TOY_PHASE_LEVELS)
            .map(|i| {
                vec![
                    Complex64::new(1.0, 0.0),
                    Complex64::from_polar(1.0, TAU * i as f64 / TOY_PHASE_LEVELS as f64),
                ]
            })
            .collect()
    };
    let evaluations = centre.len() as u128 * heights.len() as u128 * phases.len() as u128 * (1u128 << n);
    if evaluations > TOY_BUDGET {
        return Err(Error::Budget {
            needed: evaluations,
            limit: TOY_BUDGET,
        });
    }
    let g = [s.node_gamma(1), s.node_gamma(0)];
    let best_rates = |q: &Point2, h: f64| -> Result<[f64; 2]> {
        let c = SlotChannel::new(s, &fading, q, h, LinkModel::Probabilistic)?;
        let mut best = [0.0f64; 2];
        for v in &phases {
            for (k, b) in best.iter_mut().enumerate() {
                *b = b.max(enumerate_expected_rate(&c, v, k, g[k]));
            }
        }
        Ok(best)
    };
    // pinned slot rates for every altitude, then window maxima around h_c
    let window = s.vertical_step();
    let pinned_slots: Vec<(usize, Point2)> = if n == 3 { vec![(0, q0), (2, qf)] } else { vec![(0, q0)] };
    let mut pinned = Vec::new();
    for &(slot, q) in &pinned_slots {
        let rates = heights.iter().map(|&h| best_rates(&q, h)).collect::<Result<Vec<_>>>()?;
        pinned.push((slot, rates));
    }
    let centre_slot = n - 1 - usize::from(n == 3);
    // window[hi][slot j][k] = (best rate, argmax altitude)
    let windowed: Vec<Vec<[(f64, f64); 2]>> = heights
        .iter()
        .map(|&hc| {
            pinned
                .iter()
                .map(|(_, rates)| {
                    let mut best = [(f64::NEG_INFINITY, hc); 2];
                    for (i, &h) in heights.iter().enumerate() {
                        if (h - hc).abs() <= window + 1e-9 {
                            for k in 0..2 {
                                if rates[i][k] > best[k].0 {
                                    best[k] = (rates[i][k], h);
                                }
                            }
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    let candidates: Vec<(f64, Point2, usize, Vec<usize>)> = centre
        .par_iter()
        .map(|q| -> Result<(f64, Point2, usize, Vec<usize>)> {
            let mut best = (f64::NEG_INFINITY, *q, 0, Vec::new());
            for (hi, &h) in heights.iter().enumerate() {
                let rc = best_rates(q, h)?;
                for mask in 0..(1usize << n) {
                    let mut sums = [0.0; 2];
                    let recv: Vec<usize> = (0..n).map(|i| (mask >> i) & 1).collect();
                    sums[recv[centre_slot]] += rc[recv[centre_slot]];
                    for (j, (slot, _)) in pinned.iter().enumerate() {
                        let k = recv[*slot];
                        sums[k] += windowed[hi][j][k].0;
                    }
                    let eta = sums[0].min(sums[1]) / n as f64;
                    if eta > best.0 {
                        best = (eta, *q, hi, recv);
                    }
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;
    let (eta, q, hi, receivers) = candidates
        .into_iter()
        .fold((f64::NEG_INFINITY, qf, 0, Vec::new()), |a, b| if b.0 > a.0 { b } else { a });
    let mut waypoints = vec![q0; n];
    let mut altitudes = vec![heights[hi]; n];
    waypoints[n - 1] = qf;
    if n == 3 {
        waypoints[1] = q;
    }
    for (j, (slot, _)) in pinned.iter().enumerate() {
        altitudes[*slot] = windowed[hi][j][receivers[*slot]].1;
    }
    Ok(ToyOracle {
        eta,
        waypoints,
        altitudes,
        receivers,
        evaluations,
    })
}

/// Faults that can be injected into the validation suites to check that
/// they detect broken math.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Flip the sign of the rate-bound gradient.
    TaylorSign,
}

#[derive(Debug, Clone)]
pub struct ValidateOptions {
    pub n_samples: usize,
    pub slots: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
    pub run_toy_oracle: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            n_samples: 100_000,
            slots: 100,
            seed: 0,
            fault: None,
            run_toy_oracle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub monte_carlo: Vec<McReport>,
    pub toy: Option<(ToyOracle, f64)>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Random slot around the scenario's geometry.
pub fn random_slot(s: &Scenario, fading: &FadingRealization, rng: &mut impl Rng) -> Result<(SlotChannel, Vec<Complex64>)> {
    let q = Point2::new(rng.gen_range(-200.0..1000.0), rng.gen_range(-200.0..200.0));
    let h = rng.gen_range(s.limits.h_min..=s.limits.h_max);
    let slot = SlotChannel::new(s, fading, &q, h, LinkModel::Probabilistic)?;
    let v = (0..s.ris.elements())
        .map(|_| Complex64::from_polar(1.0, rng.gen_range(0.0..TAU)))
        .collect();
    Ok((slot, v))
}

fn random_slacks(rng: &mut impl Rng) -> NodeSlacks {
    NodeSlacks {
        x: rng.gen_range(1.0..3.0),
        y: rng.gen_range(1e4..5e5),
        z: rng.gen_range(1.0..40.0),
        psi: 0.0,
        phi: 0.0,
    }
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

/// Runs every invariant suite on scenario `s`.
pub fn run_invariant_suites(s: &Scenario, opts: &ValidateOptions) -> Result<ValidationReport> {
    s.validate()?;
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let env = &s.env;

    let p90 = los_probability(90.0, env.a, env.b);
    let pa = los_probability(env.a, env.a, env.b);
    checks.push(check(
        "los_probability",
        (0.9997..=0.9999).contains(&p90) && pa == 1.0 / (1.0 + env.a),
        format!("P(90) = {p90:.7}, P(a) = {pa:.7}"),
    ));

    let fading = FadingRealization::for_scenario(s);
    let mut worst_identity: f64 = 0.0;
    let mut reports = Vec::new();
    for i in 0..opts.slots {
        let (slot, v) = random_slot(s, &fading, &mut rng)?;
        let rx = i % 2;
        let gamma = s.node_gamma(1 - rx);
        let closed = expected_rate(&slot, &v, rx, gamma).expected;
        worst_identity = worst_identity.max((closed - enumerate_expected_rate(&slot, &v, rx, gamma)).abs());
        reports.push(monte_carlo_expected_rate(&slot, &v, rx, gamma, opts.n_samples, derive_seed(opts.seed, i as u64)));
    }
    checks.push(check(
        "expected_rate_enumeration",
        worst_identity <= 1e-12,
        format!("max |closed form - enumeration| = {worst_identity:.2e}"),
    ));
    let outside = reports.iter().filter(|r| r.z_score.abs() > 3.0).count();
    checks.push(check(
        "monte_carlo_z_gate",
        outside * 100 <= reports.len(),
        format!("{outside} of {} slots with |z| > 3 at n = {}", reports.len(), opts.n_samples),
    ));

    let mut taylor_fail = 0;
    let mut grad_fail = 0;
    for _ in 0..100 {
        let (e_rx, e_tx) = (random_slacks(&mut rng), random_slacks(&mut rng));
        let xi = XiCoefficients {
            ll: rng.gen_range(1e6..1e12),
            ln: rng.gen_range(1e5..1e11),
            nl: rng.gen_range(1e5..1e11),
            nn: rng.gen_range(1e4..1e10),
        };
        let mut b = TaylorBound::new(&e_rx, &e_tx, &xi, env);
        if opts.fault == Some(Fault::TaylorSign) {
            b.grad.iter_mut().for_each(|g| *g = -*g);
        }
        for j in 0..6 {
            let h = 1e-3 * b.at[j];
            let (mut up, mut dn) = (b.at, b.at);
            up[j] += h;
            dn[j] -= h;
            let fd = (rate_in_slack_vector(&up, &xi, env) - rate_in_slack_vector(&dn, &xi, env)) / (2.0 * h);
            let roundoff = 8.0 * f64::EPSILON * b.value.abs() / h;
            if (fd - b.grad[j]).abs() > 1e-5 * fd.abs() + roundoff {
                grad_fail += 1;
            }
        }
        for _ in 0..10 {
            let (p_rx, p_tx) = (random_slacks(&mut rng), random_slacks(&mut rng));
            let pt = [p_rx.x, p_tx.x, p_rx.y, p_tx.y, p_rx.z, p_tx.z];
            if b.eval(&pt) > rate_in_slack_vector(&pt, &xi, env) + 1e-9 {
                taylor_fail += 1;
            }
        }
    }
    checks.push(check(
        "taylor_bound",
        taylor_fail == 0 && grad_fail == 0,
        format!("{taylor_fail} of 1000 points above the rate, {grad_fail} of 600 gradient entries off"),
    ));

    let mut lin_fail = 0;
    for _ in 0..10_000 {
        let r_prev = rng.gen_range(1.0..2000.0);
        let h = rng.gen_range(s.limits.h_min..=s.limits.h_max);
        let r = rng.gen_range(0.0..3000.0);
        let t = linearize_elevation(&Point2::new(r_prev, 0.0), h, &Point2::zeros());
        if t.value_deg(r) > (h / r).atan().to_degrees() + 1e-9 {
            lin_fail += 1;
        }
    }
    checks.push(check("elevation_linearization", lin_fail == 0, format!("{lin_fail} of 10000 above the angle")));

    let mut lp_gap: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.gen_range(1..=12);
        let rates: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0)]).collect();
        let lp = solve_schedule_lp(&rates)?;
        lp_gap = lp_gap.max((lp.eta - lp_dual_bound(&rates)).abs());
    }
    checks.push(check("schedule_lp", lp_gap <= 1e-9, format!("max primal-dual gap {lp_gap:.2e}")));

    let mut order_fail = 0;
    let small = s.with_ris(1, 3)?;
    let small_fading = FadingRealization::for_scenario(&small);
    for i in 0..10 {
        let (slot, _) = random_slot(&small, &small_fading, &mut rng)?;
        let rx = i % 2;
        let p = PhaseProblem::for_receiver(&slot, rx, small.node_gamma(1 - rx));
        let (_, grid) = brute_force_phases(&p, 16)?;
        let ca = coordinate_ascent_phases(&p.alignment_baseline(), &p, 200, 1e-12)?;
        let sdr = solve_phase_sdr(&p, &SdrOptions::default())?;
        if grid > 1.01 * ca.objective || ca.objective > sdr.upper_bound + 1e-9 {
            order_fail += 1;
        }
    }
    checks.push(check("phase_ordering", order_fail == 0, format!("{order_fail} of 10 slots out of order")));

    let toy = if opts.run_toy_oracle {
        let toy_s = toy_scenario(s)?;
        let oracle = toy_end_to_end_oracle(&toy_s)?;
        let ao = alternating_optimize(&toy_s, &SchemeConfig::new(Scheme::Plc))?;
        let rel = if oracle.eta > 0.0 { ao.eta_final / oracle.eta } else { 1.0 };
        checks.push(check(
            "toy_oracle",
            rel >= 0.98,
            format!("AO {:.6} vs grid optimum {:.6} (ratio {rel:.4})", ao.eta_final, oracle.eta),
        ));
        Some((oracle, ao.eta_final))
    } else {
        None
    };

    Ok(ValidationReport {
        checks,
        monte_carlo: reports,
        toy,
    })
}

/// Three-slot, two-element version of `s` with the UAV pinned 50 m either
/// side of the node midpoint.
pub fn toy_scenario(s: &Scenario) -> Result<Scenario> {
    let mut t = s.with_ris(1, 2)?;
    t.n_slots = 3;
    let mid = (s.nodes[0].position + s.nodes[1].position) / 2.0;
    let axis = (s.nodes[1].position - s.nodes[0].position).normalize();
    t.limits.start = mid - axis * 50.0;
    t.limits.finish = mid + axis * 50.0;
    t.validate()?;
    Ok(t)
}
