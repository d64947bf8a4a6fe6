//! Achievable-rate expressions.
//!
//! `rx` indexes the receiving node `k`, the other node `1 - rx` transmits.
//! Rates are log2-based (bps/Hz).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::SlotChannel;
use crate::error::{Error, Result};
use crate::scenario::EnvironmentParams;

/// Per-slot unit-modulus reflection coefficients, element order matching
/// the steering vectors (row index slowest).
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePlan {
    pub slots: Vec<Vec<Complex64>>,
}

impl PhasePlan {
    /// All coefficients equal to 1 (zero phase).
    pub fn uniform(n_slots: usize, m: usize) -> Self {
        PhasePlan {
            slots: vec![vec![Complex64::new(1.0, 0.0); m]; n_slots],
        }
    }

    /// Largest deviation of any entry's modulus from 1.
    pub fn max_modulus_error(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .map(|c| (c.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// `|h_rx^H diag(v) h_tx|^2`
pub fn cascaded_gain(h_rx: &[Complex64], v: &[Complex64], h_tx: &[Complex64]) -> Result<f64> {
    let m = v.len();
    for len in [h_rx.len(), h_tx.len()] {
        if len != m {
            return Err(Error::Dimension { expected: m, got: len });
        }
    }
    Ok(h_rx
        .iter()
        .zip(v)
        .zip(h_tx)
        .map(|((r, p), t)| r.conj() * p * t)
        .sum::<Complex64>()
        .norm_sqr())
}

pub fn conditional_rate(gain: f64, gamma: f64) -> f64 {
    (1.0 + gamma * gain).log2()
}

/// The four conditional rates of a slot and their state probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTerms {
    pub r_ll: f64,
    pub r_ln: f64,
    pub r_nl: f64,
    pub r_nn: f64,
    pub p_ll: f64,
    pub p_ln: f64,
    pub p_nl: f64,
    pub p_nn: f64,
    pub expected: f64,
}

impl RateTerms {
    pub fn rates(&self) -> [f64; 4] {
        [self.r_ll, self.r_ln, self.r_nl, self.r_nn]
    }

    pub fn probabilities(&self) -> [f64; 4] {
        [self.p_ll, self.p_ln, self.p_nl, self.p_nn]
    }
}

/// Expected rate at node `rx`, averaging over the LoS/NLoS states of both
/// air-ground links. `gamma` is the transmitter's `P / sigma^2`.
pub fn expected_rate(slot: &SlotChannel, v: &[Complex64], rx: usize, gamma: f64) -> RateTerms {
    let (r, t) = (&slot.links[rx], &slot.links[1 - rx]);
    let rate = |hr: &[Complex64], ht: &[Complex64]| {
        conditional_rate(cascaded_gain(hr, v, ht).expect("channel length"), gamma)
    };
    let r_ll = rate(&r.los, &t.los);
    let r_ln = rate(&r.los, &t.nlos);
    let r_nl = rate(&r.nlos, &t.los);
    let r_nn = rate(&r.nlos, &t.nlos);
    let p_ll = r.p_los * t.p_los;
    let p_ln = r.p_los * t.p_nlos();
    let p_nl = r.p_nlos() * t.p_los;
    let p_nn = r.p_nlos() * t.p_nlos();
    RateTerms {
        r_ll,
        r_ln,
        r_nl,
        r_nn,
        p_ll,
        p_ln,
        p_nl,
        p_nn,
        expected: p_ll * r_ll + p_ln * r_ln + p_nl * r_nl + p_nn * r_nn,
    }
}

/// `G = diag(h_tx)^H h_rx h_rx^H diag(h_tx)`, so that
/// `Tr(v v^H G) = |h_rx^H diag(v) h_tx|^2`.
pub fn build_gain_matrix(h_rx: &[Complex64], h_tx: &[Complex64]) -> Result<DMatrix<Complex64>> {
    if h_rx.len() != h_tx.len() {
        return Err(Error::Dimension {
            expected: h_rx.len(),
            got: h_tx.len(),
        });
    }
    let a: Vec<Complex64> = h_tx.iter().zip(h_rx).map(|(t, r)| t.conj() * r).collect();
    let m = a.len();
    Ok(DMatrix::from_fn(m, m, |i, j| a[i] * a[j].conj()))
}

/// Distance-normalized cascaded SNR coefficients of one slot for one
/// receiving node. Each term's SNR is `xi / (y_rx^{p} y_tx^{q})` with the
/// path-loss exponents of the respective states.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct XiCoefficients {
    pub ll: f64,
    pub ln: f64,
    pub nl: f64,
    pub nn: f64,
}

impl XiCoefficients {
    /// `gamma beta0^2 |a^H diag(v) b|^2` for each pairing of unit-modulus
    /// LoS directions and fading vectors.
    pub fn compute(
        dir_rx: &[Complex64],
        dir_tx: &[Complex64],
        fading_rx: &[Complex64],
        fading_tx: &[Complex64],
        v: &[Complex64],
        gamma: f64,
        beta0: f64,
    ) -> Result<Self> {
        let s = gamma * beta0 * beta0;
        Ok(XiCoefficients {
            ll: s * cascaded_gain(dir_rx, v, dir_tx)?,
            ln: s * cascaded_gain(dir_rx, v, fading_tx)?,
            nl: s * cascaded_gain(fading_rx, v, dir_tx)?,
            nn: s * cascaded_gain(fading_rx, v, fading_tx)?,
        })
    }

    /// Keeps only the LoS-LoS term.
    pub fn los_only(self) -> Self {
        XiCoefficients {
            ll: self.ll,
            ..Default::default()
        }
    }

    fn get(&self, t: usize) -> f64 {
        [self.ll, self.ln, self.nl, self.nn][t]
    }
}

/// Slack variables of one node in one slot.
///
/// `x` stands for `1/P^L`, `y` for the squared distance, `z` for `1/P^N`;
/// `psi` / `phi` are the elevation-angle proxies bounding `x` and `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeSlacks {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub psi: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlackState {
    pub slots: Vec<[NodeSlacks; 2]>,
}

/// Indices into the six-variable slack vector used by [`TaylorBound`].
pub mod var {
    pub const X_RX: usize = 0;
    pub const X_TX: usize = 1;
    pub const Y_RX: usize = 2;
    pub const Y_TX: usize = 3;
    pub const Z_RX: usize = 4;
    pub const Z_TX: usize = 5;
}

pub fn slack_vector(rx: &NodeSlacks, tx: &NodeSlacks) -> [f64; 6] {
    [rx.x, tx.x, rx.y, tx.y, rx.z, tx.z]
}

// (rx LoS?, tx LoS?) for the LL, LN, NL, NN terms.
const STATES: [(bool, bool); 4] = [(true, true), (true, false), (false, true), (false, false)];

struct TermParts {
    w_rx: usize,
    w_tx: usize,
    p_rx: f64,
    p_tx: f64,
}

fn term_parts(t: usize, env: &EnvironmentParams) -> TermParts {
    let (rx_los, tx_los) = STATES[t];
    let exp = |los: bool| if los { env.alpha_los / 2.0 } else { env.alpha_nlos / 2.0 };
    TermParts {
        w_rx: if rx_los { var::X_RX } else { var::Z_RX },
        w_tx: if tx_los { var::X_TX } else { var::Z_TX },
        p_rx: exp(rx_los),
        p_tx: exp(tx_los),
    }
}

/// Expected rate written in the slack variables. Jointly convex and
/// decreasing in every slack on `x, z >= 1`, `y > 0`.
pub fn rate_in_slacks(
    rx: &NodeSlacks,
    tx: &NodeSlacks,
    xi: &XiCoefficients,
    env: &EnvironmentParams,
) -> f64 {
    rate_in_slack_vector(&slack_vector(rx, tx), xi, env)
}

pub fn rate_in_slack_vector(s: &[f64; 6], xi: &XiCoefficients, env: &EnvironmentParams) -> f64 {
    (0..4)
        .map(|t| {
            let p = term_parts(t, env);
            let snr = xi.get(t) * s[var::Y_RX].powf(-p.p_rx) * s[var::Y_TX].powf(-p.p_tx);
            snr.ln_1p() / std::f64::consts::LN_2 / (s[p.w_rx] * s[p.w_tx])
        })
        .sum()
}

/// First-order expansion of [`rate_in_slacks`] at a slack point. Because the
/// slack-form rate is convex, the affine map is a global under-estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorBound {
    /// Expansion point, ordered as in [`var`].
    pub at: [f64; 6],
    pub value: f64,
    pub grad: [f64; 6],
    /// `1 + SNR` of the LL, LN, NL, NN terms at the expansion point.
    pub one_plus_snr: [f64; 4],
}

impl TaylorBound {
    pub fn new(rx: &NodeSlacks, tx: &NodeSlacks, xi: &XiCoefficients, env: &EnvironmentParams) -> Self {
        let s = slack_vector(rx, tx);
        let mut grad = [0.0; 6];
        let mut value = 0.0;
        let mut one_plus_snr = [1.0; 4];
        for t in 0..4 {
            let p = term_parts(t, env);
            let xi_t = xi.get(t);
            let snr = xi_t * s[var::Y_RX].powf(-p.p_rx) * s[var::Y_TX].powf(-p.p_tx);
            one_plus_snr[t] = 1.0 + snr;
            let w = s[p.w_rx] * s[p.w_tx];
            let log_term = snr.ln_1p() / std::f64::consts::LN_2;
            let term = log_term / w;
            value += term;
            grad[p.w_rx] -= term / s[p.w_rx];
            grad[p.w_tx] -= term / s[p.w_tx];
            // d/dy log2(1 + xi y^-p ...) = -p snr / (y (1 + snr) ln 2)
            let dlog = snr / (1.0 + snr) / std::f64::consts::LN_2;
            grad[var::Y_RX] -= p.p_rx * dlog / s[var::Y_RX] / w;
            grad[var::Y_TX] -= p.p_tx * dlog / s[var::Y_TX] / w;
        }
        TaylorBound {
            at: s,
            value,
            grad,
            one_plus_snr,
        }
    }

    pub fn eval(&self, s: &[f64; 6]) -> f64 {
        self.value
            + self
                .grad
                .iter()
                .zip(s.iter().zip(&self.at))
                .map(|(g, (v, v0))| g * (v - v0))
                .sum::<f64>()
    }
}

/// Value at `slacks` of the affine under-estimator built at `expansion`.
pub fn taylor_rate_lower_bound(
    slacks: (&NodeSlacks, &NodeSlacks),
    expansion: (&NodeSlacks, &NodeSlacks),
    xi: &XiCoefficients,
    env: &EnvironmentParams,
) -> f64 {
    TaylorBound::new(expansion.0, expansion.1, xi, env).eval(&slack_vector(slacks.0, slacks.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{FadingRealization, LinkModel};
    use crate::scenario::{Point2, Scenario};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_vec(rng: &mut ChaCha8Rng, m: usize) -> Vec<Complex64> {
        (0..m).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    fn random_phases(rng: &mut ChaCha8Rng, m: usize) -> Vec<Complex64> {
        (0..m)
            .map(|_| Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU)))
            .collect()
    }

    #[test]
    fn cascaded_gain_examples() {
        let ones = vec![c(1.0, 0.0); 2];
        assert_eq!(cascaded_gain(&ones, &ones, &ones).unwrap(), 4.0);
        let alt = vec![c(1.0, 0.0), c(-1.0, 0.0)];
        assert_eq!(cascaded_gain(&ones, &ones, &alt).unwrap(), 0.0);
        assert!(cascaded_gain(&ones, &ones, &[c(1.0, 0.0)]).is_err());
    }

    #[test]
    fn cascaded_gain_matches_trace_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let hr = random_vec(&mut rng, 4);
            let ht = random_vec(&mut rng, 4);
            let v = random_phases(&mut rng, 4);
            let g: Vec<Complex64> = hr.iter().zip(&ht).map(|(r, t)| r.conj() * t).collect();
            let vh_g: Complex64 = v.iter().zip(&g).map(|(a, b)| a * b).sum();
            let direct = cascaded_gain(&hr, &v, &ht).unwrap();
            assert!((direct - vh_g.norm_sqr()).abs() < 1e-10);

            let gm = build_gain_matrix(&hr, &ht).unwrap();
            let vv = nalgebra::DVector::from_vec(v.clone());
            let trace = (&vv * vv.adjoint() * &gm).trace();
            assert!((trace.re - direct).abs() < 1e-10);
            assert!(trace.im.abs() < 1e-10);
        }
    }

    #[test]
    fn gain_matrix_is_hermitian_psd() {
        let ones = vec![c(1.0, 0.0); 2];
        let g = build_gain_matrix(&ones, &ones).unwrap();
        assert!(g.iter().all(|z| (z - c(1.0, 0.0)).norm() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let g = build_gain_matrix(&random_vec(&mut rng, 5), &random_vec(&mut rng, 5)).unwrap();
            assert!((&g - g.adjoint()).norm() < 1e-14);
            let eig = g.symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12));
        }
    }

    #[test]
    fn conditional_rate_examples() {
        assert_eq!(conditional_rate(0.0, 5.0), 0.0);
        assert_eq!(conditional_rate(0.5, 2.0), 1.0);
        assert_eq!(conditional_rate(1.0, 3.0), 2.0);
    }

    #[test]
    fn global_phase_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hr = random_vec(&mut rng, 6);
        let ht = random_vec(&mut rng, 6);
        let v = random_phases(&mut rng, 6);
        let rot: Vec<Complex64> = v.iter().map(|p| p * Complex64::from_polar(1.0, 1.234)).collect();
        let a = cascaded_gain(&hr, &v, &ht).unwrap();
        let b = cascaded_gain(&hr, &rot, &ht).unwrap();
        assert!((a - b).abs() < 1e-12 * a.max(1.0));
    }

    #[test]
    fn conjugate_alignment_attains_triangle_bound() {
        let s = Scenario::desk();
        let q = Point2::new(250.0, 60.0);
        let h0 = crate::channel::los_channel(&q, 180.0, &s.nodes[0].position, &s.ris, &s.env);
        let h1 = crate::channel::los_channel(&q, 180.0, &s.nodes[1].position, &s.ris, &s.env);
        let v: Vec<Complex64> = h0
            .iter()
            .zip(&h1)
            .map(|(r, t)| Complex64::from_polar(1.0, -(r.conj() * t).arg()))
            .collect();
        let m = s.ris.elements() as f64;
        let tau0 = h0[0].norm();
        let tau1 = h1[0].norm();
        let gain = cascaded_gain(&h0, &v, &h1).unwrap();
        let bound = (m * tau0 * tau1).powi(2);
        assert!((gain / bound - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let v = random_phases(&mut rng, s.ris.elements());
            assert!(cascaded_gain(&h0, &v, &h1).unwrap() <= bound * (1.0 + 1e-12));
        }
    }

    fn desk_slot(q: Point2, h: f64, model: LinkModel) -> (Scenario, SlotChannel) {
        let s = Scenario::desk();
        let f = FadingRealization::for_scenario(&s);
        let slot = SlotChannel::new(&s, &f, &q, h, model).unwrap();
        (s, slot)
    }

    #[test]
    fn expected_rate_degenerate_and_convex_combination() {
        let (s, slot) = desk_slot(Point2::new(300.0, 20.0), 220.0, LinkModel::DeterministicLos);
        let v = PhasePlan::uniform(1, s.ris.elements()).slots.remove(0);
        let t = expected_rate(&slot, &v, 0, s.node_gamma(1));
        assert_eq!(t.expected, t.r_ll);

        let (s, slot) = desk_slot(Point2::new(300.0, 20.0), 220.0, LinkModel::Probabilistic);
        let t = expected_rate(&slot, &v, 1, s.node_gamma(0));
        let p: f64 = t.probabilities().iter().sum();
        assert!((p - 1.0).abs() < 1e-15);
        let rates = t.rates();
        let lo = rates.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(t.expected >= lo - 1e-15 && t.expected <= hi + 1e-15);

        let mut same = t;
        same.r_ll = 2.5;
        same.r_ln = 2.5;
        same.r_nl = 2.5;
        same.r_nn = 2.5;
        let e: f64 = same.rates().iter().zip(same.probabilities()).map(|(r, p)| r * p).sum();
        assert!((e - 2.5).abs() < 1e-15);
    }

    fn slack(x: f64, y: f64, z: f64) -> NodeSlacks {
        NodeSlacks { x, y, z, psi: 45.0, phi: 45.0 }
    }

    fn env() -> EnvironmentParams {
        Scenario::default().env
    }

    #[test]
    fn rate_in_slacks_zero_xi() {
        let r = rate_in_slacks(&slack(1.2, 1e5, 3.0), &slack(1.5, 2e5, 2.0), &XiCoefficients::default(), &env());
        assert_eq!(r, 0.0);
    }

    #[test]
    fn rate_in_slacks_y_scaling_with_unit_exponent() {
        let mut e = env();
        e.alpha_los = 2.0;
        e.alpha_nlos = 2.0;
        let xi = XiCoefficients { ll: 3e10, ..Default::default() };
        let rx = slack(1.0, 1e5, 1.0);
        let tx = slack(1.0, 2e5, 1.0);
        let base = rate_in_slacks(&rx, &tx, &xi, &e);
        assert!((base - (1.0f64 + 3e10 / (1e5 * 2e5)).log2()).abs() < 1e-12);
        let doubled = rate_in_slacks(&slack(1.0, 2e5, 1.0), &tx, &xi, &e);
        assert!((doubled - (1.0f64 + 3e10 / (2e5 * 2e5)).log2()).abs() < 1e-12);
    }

    #[test]
    fn rate_in_slacks_decreasing() {
        let xi = XiCoefficients { ll: 5e11, ln: 2e10, nl: 1e10, nn: 4e9 };
        let rx = slack(1.3, 2e5, 2.5);
        let tx = slack(1.8, 3e5, 1.6);
        let base = rate_in_slacks(&rx, &tx, &xi, &env());
        let bump = |i: usize| {
            let mut s = slack_vector(&rx, &tx);
            s[i] *= 1.01;
            rate_in_slack_vector(&s, &xi, &env())
        };
        for i in 0..6 {
            assert!(bump(i) < base, "slack {i}");
        }
    }

    #[test]
    fn taylor_is_tight_with_matching_gradient() {
        let xi = XiCoefficients { ll: 5e11, ln: 2e10, nl: 1e10, nn: 4e9 };
        let rx = slack(1.3, 2e5, 2.5);
        let tx = slack(1.8, 3e5, 1.6);
        let tb = TaylorBound::new(&rx, &tx, &xi, &env());
        let at = slack_vector(&rx, &tx);
        assert!((tb.eval(&at) - rate_in_slacks(&rx, &tx, &xi, &env())).abs() < 1e-12);
        for i in 0..6 {
            let hstep = 1e-4 * at[i];
            let mut p = at;
            let mut m = at;
            p[i] += hstep;
            m[i] -= hstep;
            let fd = (rate_in_slack_vector(&p, &xi, &env()) - rate_in_slack_vector(&m, &xi, &env()))
                / (2.0 * hstep);
            assert!((fd - tb.grad[i]).abs() <= 1e-6 * tb.grad[i].abs(), "var {i}: {fd} vs {}", tb.grad[i]);
        }
    }

    #[test]
    fn taylor_constants_match_closed_forms() {
        let e = env();
        let xi = XiCoefficients { ll: 5e11, ln: 2e10, nl: 1e10, nn: 4e9 };
        let rx = slack(1.3, 2e5, 2.5);
        let tx = slack(1.8, 3e5, 1.6);
        let tb = TaylorBound::new(&rx, &tx, &xi, &e);
        let (al, an) = (e.alpha_los / 2.0, e.alpha_nlos / 2.0);
        let b = 1.0 + xi.ll / (rx.y.powf(al) * tx.y.powf(al));
        let cc = 1.0 + xi.ln / (rx.y.powf(al) * tx.y.powf(an));
        let d = 1.0 + xi.nl / (rx.y.powf(an) * tx.y.powf(al));
        let ee = 1.0 + xi.nn / (rx.y.powf(an) * tx.y.powf(an));
        for (got, want) in tb.one_plus_snr.iter().zip([b, cc, d, ee]) {
            assert!((got / want - 1.0).abs() < 1e-14);
        }
        // coefficient of x_tx: -(log2 B / (x_rx x_tx^2) + log2 D / (z_rx x_tx^2))
        let want = -(b.log2() / (rx.x * tx.x * tx.x) + d.log2() / (rx.z * tx.x * tx.x));
        assert!((tb.grad[var::X_TX] / want - 1.0).abs() < 1e-12);
        // coefficient of z_rx: -(log2 D / (x_tx z_rx^2) + log2 E / (z_tx z_rx^2))
        let want = -(d.log2() / (tx.x * rx.z * rx.z) + ee.log2() / (tx.z * rx.z * rx.z));
        assert!((tb.grad[var::Z_RX] / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn taylor_under_estimates_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let e = env();
        for _ in 0..200 {
            let xi = XiCoefficients {
                ll: 10f64.powf(rng.gen_range(8.0..14.0)),
                ln: 10f64.powf(rng.gen_range(6.0..12.0)),
                nl: 10f64.powf(rng.gen_range(6.0..12.0)),
                nn: 10f64.powf(rng.gen_range(4.0..10.0)),
            };
            let draw = |rng: &mut ChaCha8Rng| {
                slack(
                    1.0 + 10f64.powf(rng.gen_range(-3.0..1.5)),
                    10f64.powf(rng.gen_range(4.0..6.0)),
                    1.0 + 10f64.powf(rng.gen_range(-3.0..1.5)),
                )
            };
            let (rx0, tx0) = (draw(&mut rng), draw(&mut rng));
            let tb = TaylorBound::new(&rx0, &tx0, &xi, &e);
            for _ in 0..20 {
                let (rx, tx) = (draw(&mut rng), draw(&mut rng));
                let s = slack_vector(&rx, &tx);
                assert!(tb.eval(&s) <= rate_in_slack_vector(&s, &xi, &e) + 1e-9);
            }
        }
    }
}
