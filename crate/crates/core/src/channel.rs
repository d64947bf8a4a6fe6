//! Air-ground geometry and channel vectors.
//!
//! Elevation angles are in degrees throughout because the sigmoid constants
//! `a`, `b` of the LoS probability are calibrated in degrees.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scenario::{EnvironmentParams, Point2, RisGeometry, Scenario};
use crate::trajectory::Trajectory;
use crate::derive_seed;

/// Channel law used while optimizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkModel {
    /// Elevation-dependent LoS/NLoS mixture.
    Probabilistic,
    /// LoS always holds.
    DeterministicLos,
}

/// Elevation angle from a ground node at `w` to the UAV at `(q, h)`, in
/// degrees. Exactly 90 when the UAV is overhead.
pub fn elevation_angle_deg(q: &Point2, h: f64, w: &Point2) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("altitude must be positive, got {h}")));
    }
    let r = (q - w).norm();
    if r == 0.0 {
        return Ok(90.0);
    }
    Ok((h / r).atan().to_degrees())
}

pub fn los_probability(psi_deg: f64, a: f64, b: f64) -> f64 {
    1.0 / (1.0 + a * (-b * (psi_deg - a)).exp())
}

pub fn slot_distance(q: &Point2, h: f64, w: &Point2) -> f64 {
    ((q - w).norm_squared() + h * h).sqrt()
}

/// Unit-modulus UPA response towards a node, row index varying slowest.
pub fn steering_vector(q: &Point2, h: f64, w: &Point2, ris: &RisGeometry) -> Vec<Complex64> {
    let d = slot_distance(q, h, w);
    let u = (q.x - w.x) / d;
    let v = (q.y - w.y) / d;
    let k = -2.0 * std::f64::consts::PI * ris.spacing_over_wavelength;
    let mut out = Vec::with_capacity(ris.elements());
    for mx in 0..ris.rows {
        for my in 0..ris.cols {
            out.push(Complex64::from_polar(1.0, k * (mx as f64 * u + my as f64 * v)));
        }
    }
    out
}

/// LoS channel amplitude `sqrt(beta0 d^-alpha_L)`.
pub fn los_amplitude(d: f64, env: &EnvironmentParams) -> f64 {
    (env.beta0 * d.powf(-env.alpha_los)).sqrt()
}

/// NLoS channel amplitude `sqrt(beta0 d^-alpha_N)`.
pub fn nlos_amplitude(d: f64, env: &EnvironmentParams) -> f64 {
    (env.beta0 * d.powf(-env.alpha_nlos)).sqrt()
}

pub fn los_channel(
    q: &Point2,
    h: f64,
    w: &Point2,
    ris: &RisGeometry,
    env: &EnvironmentParams,
) -> Vec<Complex64> {
    let tau = los_amplitude(slot_distance(q, h, w), env);
    steering_vector(q, h, w, ris)
        .into_iter()
        .map(|c| c * tau)
        .collect()
}

pub fn nlos_channel(
    q: &Point2,
    h: f64,
    w: &Point2,
    env: &EnvironmentParams,
    fading: &[Complex64],
) -> Vec<Complex64> {
    let zeta = nlos_amplitude(slot_distance(q, h, w), env);
    fading.iter().map(|c| c * zeta).collect()
}

/// `m` i.i.d. CN(0, 1) entries; real and imaginary parts have variance 1/2.
pub fn sample_fading(m: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid std");
    (0..m)
        .map(|_| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect()
}

/// Small-scale fading of both nodes, drawn once per run.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingRealization {
    pub per_node: [Vec<Complex64>; 2],
}

impl FadingRealization {
    pub fn draw(m: usize, seed: u64) -> Self {
        FadingRealization {
            per_node: [
                sample_fading(m, derive_seed(seed, 0)),
                sample_fading(m, derive_seed(seed, 1)),
            ],
        }
    }

    pub fn for_scenario(s: &Scenario) -> Self {
        Self::draw(s.ris.elements(), s.fading_seed)
    }

    pub fn zeros(m: usize) -> Self {
        FadingRealization {
            per_node: [vec![Complex64::new(0.0, 0.0); m], vec![Complex64::new(0.0, 0.0); m]],
        }
    }
}

/// Link between one ground node and the UAV in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLink {
    pub distance: f64,
    pub elevation_deg: f64,
    pub p_los: f64,
    pub los: Vec<Complex64>,
    pub nlos: Vec<Complex64>,
}

impl NodeLink {
    pub fn p_nlos(&self) -> f64 {
        1.0 - self.p_los
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotChannel {
    pub links: [NodeLink; 2],
}

impl SlotChannel {
    pub fn new(
        s: &Scenario,
        fading: &FadingRealization,
        q: &Point2,
        h: f64,
        model: LinkModel,
    ) -> Result<Self> {
        let link = |k: usize| -> Result<NodeLink> {
            let w = &s.nodes[k].position;
            let elevation_deg = elevation_angle_deg(q, h, w)?;
            let p_los = match model {
                LinkModel::Probabilistic => los_probability(elevation_deg, s.env.a, s.env.b),
                LinkModel::DeterministicLos => 1.0,
            };
            Ok(NodeLink {
                distance: slot_distance(q, h, w),
                elevation_deg,
                p_los,
                los: los_channel(q, h, w, &s.ris, &s.env),
                nlos: nlos_channel(q, h, w, &s.env, &fading.per_node[k]),
            })
        };
        Ok(SlotChannel {
            links: [link(0)?, link(1)?],
        })
    }
}

pub fn slot_channels(
    s: &Scenario,
    traj: &Trajectory,
    fading: &FadingRealization,
    model: LinkModel,
) -> Result<Vec<SlotChannel>> {
    traj.horizontal
        .iter()
        .zip(&traj.vertical)
        .map(|(q, &h)| SlotChannel::new(s, fading, q, h, model))
        .collect()
}
