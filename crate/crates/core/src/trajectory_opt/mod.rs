//! Successive convex approximation of the trajectory blocks.
//!
//! With the schedule, the phases and the cascaded-array coefficients frozen
//! at the current iterate, each node's expected rate is bounded below by an
//! affine function of its slack variables (LoS-probability reciprocal `x`,
//! squared distance `y`, NLoS-probability reciprocal `z`) with non-positive
//! coefficients. Writing every slack as a convex function of the moving
//! coordinates then makes each node's time average concave, and
//! `max eta s.t. average_k >= eta` is solved with a log-barrier method.
//!
//! Horizontal step (altitudes fixed):
//! - `x` uses an affine under-estimate of the elevation angle in the
//!   horizontal distance ([`linearize_elevation`]);
//! - `z` uses the elevation tangent evaluated at the linearized distance,
//!   followed by an equality post-pass on the returned point;
//! - `y` is exact.
//!
//! Vertical step (waypoints fixed): the elevation angle is concave in the
//! altitude, so `x` uses it exactly while `z` uses its tangent, which over-
//! estimates the angle and is therefore a restriction.

pub mod barrier;

use nalgebra::{DVector, Matrix2, Vector2};

use crate::channel::{elevation_angle_deg, steering_vector, FadingRealization, LinkModel};
use crate::error::{Error, Result};
use crate::rate::{var, NodeSlacks, PhasePlan, SlackState, TaylorBound, XiCoefficients};
use crate::scenario::{EnvironmentParams, Point2, Scenario};
use crate::scheduling::Schedule;
use crate::trajectory::Trajectory;

use barrier::{BarrierOptions, BarrierProblem, ConstraintEval};

/// Distance floor [m] used where a waypoint sits above a node.
pub const DISTANCE_REGULARIZATION: f64 = 1e-3;

const DEG: f64 = 180.0 / std::f64::consts::PI;

/// `1/P^L` as a function of the elevation angle.
pub fn los_slack(psi_deg: f64, env: &EnvironmentParams) -> f64 {
    1.0 + env.a * (-env.b * (psi_deg - env.a)).exp()
}

/// `1/P^N` as a function of the elevation angle.
pub fn nlos_slack(phi_deg: f64, env: &EnvironmentParams) -> f64 {
    1.0 + (env.b * (phi_deg - env.a)).exp() / env.a
}

/// Slacks of one node with every defining inequality tight.
pub fn slacks_at(q: &Point2, h: f64, w: &Point2, env: &EnvironmentParams) -> Result<NodeSlacks> {
    let angle = elevation_angle_deg(q, h, w)?;
    Ok(NodeSlacks {
        x: los_slack(angle, env),
        y: (q - w).norm_squared() + h * h,
        z: nlos_slack(angle, env),
        psi: angle,
        phi: angle,
    })
}

pub fn init_slacks(traj: &Trajectory, s: &Scenario) -> Result<SlackState> {
    let slots = traj
        .horizontal
        .iter()
        .zip(&traj.vertical)
        .map(|(q, &h)| {
            Ok([
                slacks_at(q, h, &s.nodes[0].position, &s.env)?,
                slacks_at(q, h, &s.nodes[1].position, &s.env)?,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SlackState { slots })
}

/// First-order expansion of `atan(h / r)` in the horizontal distance `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElevationTangent {
    /// `atan(h / r_prev)` [rad]
    pub f: f64,
    /// `h / (r_prev^2 + h^2)`
    pub g: f64,
    pub r_prev: f64,
}

impl ElevationTangent {
    /// Affine elevation estimate [deg]; never above the true angle because
    /// `atan(h / r)` is convex in `r`.
    pub fn value_deg(&self, r: f64) -> f64 {
        DEG * (self.f - self.g * (r - self.r_prev))
    }
}

fn regularized_distance(q: &Point2, w: &Point2) -> f64 {
    ((q - w).norm_squared() + DISTANCE_REGULARIZATION * DISTANCE_REGULARIZATION).sqrt()
}

/// Elevation tangent at `q_prev`. The distance is floored smoothly at
/// [`DISTANCE_REGULARIZATION`] so that a waypoint above the node is valid.
pub fn linearize_elevation(q_prev: &Point2, h: f64, w: &Point2) -> ElevationTangent {
    let r_prev = regularized_distance(q_prev, w);
    ElevationTangent {
        f: (h / r_prev).atan(),
        g: h / (r_prev * r_prev + h * h),
        r_prev,
    }
}

#[derive(Debug, Clone)]
struct NodeGeometry {
    w: Point2,
    q_prev: Point2,
    h_prev: f64,
    tangent: ElevationTangent,
    /// Gradient of the regularized distance at `q_prev`.
    unit: Vector2<f64>,
    r_true: f64,
}

#[derive(Debug, Clone)]
pub struct SlotLinearization {
    /// Rate bound of node `k` receiving, expanded at the current slacks.
    pub bounds: [TaylorBound; 2],
    geometry: [NodeGeometry; 2],
}

/// Everything frozen at one iterate for building trajectory subproblems.
#[derive(Debug, Clone)]
pub struct LinearizationContext {
    pub expansion: Trajectory,
    pub slacks: SlackState,
    pub xi: Vec<[XiCoefficients; 2]>,
    pub slots: Vec<SlotLinearization>,
    los_certain: bool,
    env: EnvironmentParams,
}

impl LinearizationContext {
    pub fn new(
        s: &Scenario,
        traj: &Trajectory,
        phases: &PhasePlan,
        fading: &FadingRealization,
        model: LinkModel,
    ) -> Result<Self> {
        let n = s.n_slots;
        if traj.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: traj.len(),
            });
        }
        if phases.slots.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: phases.slots.len(),
            });
        }
        let los_certain = model == LinkModel::DeterministicLos;
        let mut slacks = init_slacks(traj, s)?;
        let mut xi = Vec::with_capacity(n);
        let mut slots = Vec::with_capacity(n);
        for i in 0..n {
            let (q, h) = (traj.horizontal[i], traj.vertical[i]);
            if los_certain {
                for sl in &mut slacks.slots[i] {
                    sl.x = 1.0;
                }
            }
            let dirs = [0, 1].map(|j| steering_vector(&q, h, &s.nodes[j].position, &s.ris));
            let mut slot_xi = [XiCoefficients::default(); 2];
            for k in 0..2 {
                let c = XiCoefficients::compute(
                    &dirs[k],
                    &dirs[1 - k],
                    &fading.per_node[k],
                    &fading.per_node[1 - k],
                    &phases.slots[i],
                    s.node_gamma(1 - k),
                    s.env.beta0,
                )?;
                slot_xi[k] = if los_certain { c.los_only() } else { c };
            }
            let sl = slacks.slots[i];
            let bounds = [0, 1].map(|k| TaylorBound::new(&sl[k], &sl[1 - k], &slot_xi[k], &s.env));
            let geometry = [0, 1].map(|j| {
                let w = s.nodes[j].position;
                let tangent = linearize_elevation(&q, h, &w);
                NodeGeometry {
                    w,
                    q_prev: q,
                    h_prev: h,
                    unit: (q - w) / tangent.r_prev,
                    tangent,
                    r_true: (q - w).norm(),
                }
            });
            xi.push(slot_xi);
            slots.push(SlotLinearization { bounds, geometry });
        }
        Ok(LinearizationContext {
            expansion: traj.clone(),
            slacks,
            xi,
            slots,
            los_certain,
            env: s.env.clone(),
        })
    }
}

/// Values, gradients and Hessians of `(x, y, z)` of one node in the
/// horizontal coordinates of one slot.
struct PlanarSlacks {
    val: [f64; 3],
    grad: [Vector2<f64>; 3],
    hess: [Matrix2<f64>; 3],
}

fn planar_slacks(
    geo: &NodeGeometry,
    q: &Point2,
    h: f64,
    env: &EnvironmentParams,
    los_certain: bool,
    derivatives: bool,
) -> PlanarSlacks {
    let t = &geo.tangent;
    let d = q - geo.w;
    let rho = regularized_distance(q, &geo.w);
    let psi = t.value_deg(rho);
    let e = env.a * (-env.b * (psi - env.a)).exp();
    let ell = t.r_prev + geo.unit.dot(&(q - geo.q_prev));
    let phi = t.value_deg(ell);
    let zz = (env.b * (phi - env.a)).exp() / env.a;
    let x = if los_certain { 1.0 } else { 1.0 + e };
    let mut out = PlanarSlacks {
        val: [x, d.norm_squared() + h * h, 1.0 + zz],
        grad: [Vector2::zeros(); 3],
        hess: [Matrix2::zeros(); 3],
    };
    if derivatives {
        let grad_r = d / rho;
        let hess_r = (Matrix2::identity() - d * d.transpose() / (rho * rho)) / rho;
        let k = DEG * t.g;
        if !los_certain {
            let grad_psi = -k * grad_r;
            out.grad[0] = -env.b * e * grad_psi;
            out.hess[0] = env.b * env.b * e * grad_psi * grad_psi.transpose() + env.b * e * k * hess_r;
        }
        out.grad[1] = 2.0 * d;
        out.hess[1] = 2.0 * Matrix2::identity();
        let grad_phi = -k * geo.unit;
        out.grad[2] = env.b * zz * grad_phi;
        out.hess[2] = env.b * env.b * zz * grad_phi * grad_phi.transpose();
    }
    out
}

/// Same for the altitude of one slot.
struct AltitudeSlacks {
    val: [f64; 3],
    d1: [f64; 3],
    d2: [f64; 3],
}

fn altitude_slacks(geo: &NodeGeometry, h: f64, env: &EnvironmentParams, los_certain: bool) -> AltitudeSlacks {
    let r = geo.r_true;
    let (psi, dpsi, d2psi, phi, dphi) = if r < 1e-12 {
        (90.0, 0.0, 0.0, 90.0, 0.0)
    } else {
        let den = r * r + h * h;
        let h0 = geo.h_prev;
        let slope0 = DEG * r / (r * r + h0 * h0);
        (
            DEG * (h / r).atan(),
            DEG * r / den,
            -DEG * 2.0 * h * r / (den * den),
            DEG * (h0 / r).atan() + slope0 * (h - h0),
            slope0,
        )
    };
    let e = env.a * (-env.b * (psi - env.a)).exp();
    let zz = (env.b * (phi - env.a)).exp() / env.a;
    let b = env.b;
    let (x, dx, d2x) = if los_certain {
        (1.0, 0.0, 0.0)
    } else {
        (1.0 + e, -b * e * dpsi, b * b * e * dpsi * dpsi - b * e * d2psi)
    };
    AltitudeSlacks {
        val: [x, r * r + h * h, 1.0 + zz],
        d1: [dx, 2.0 * h, b * zz * dphi],
        d2: [d2x, 2.0, b * b * zz * dphi * dphi],
    }
}

/// Index into the six-slack vector of quantity `f` (0 = x, 1 = y, 2 = z)
/// of node `j` when node `k` receives.
fn slack_index(k: usize, j: usize, f: usize) -> usize {
    let rx = j == k;
    match (f, rx) {
        (0, true) => var::X_RX,
        (0, false) => var::X_TX,
        (1, true) => var::Y_RX,
        (1, false) => var::Y_TX,
        (2, true) => var::Z_RX,
        _ => var::Z_TX,
    }
}

fn bound_value(bound: &TaylorBound, k: usize, vals: [[f64; 3]; 2]) -> f64 {
    let mut s = [0.0; 6];
    for (j, v) in vals.iter().enumerate() {
        for (f, &x) in v.iter().enumerate() {
            s[slack_index(k, j, f)] = x;
        }
    }
    bound.eval(&s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// One convex trajectory subproblem.
#[derive(Debug, Clone)]
pub struct Subproblem<'a> {
    pub ctx: &'a LinearizationContext,
    pub alpha: &'a [[f64; 2]],
    pub scenario: &'a Scenario,
    pub axis: Axis,
    /// Per-slot cap on the distance from the expansion point.
    pub trust_radius: Option<f64>,
}

pub fn build_horizontal_subproblem<'a>(
    ctx: &'a LinearizationContext,
    schedule: &'a Schedule,
    scenario: &'a Scenario,
) -> Subproblem<'a> {
    Subproblem {
        ctx,
        alpha: &schedule.alpha,
        scenario,
        axis: Axis::Horizontal,
        trust_radius: None,
    }
}

pub fn build_vertical_subproblem<'a>(
    ctx: &'a LinearizationContext,
    schedule: &'a Schedule,
    scenario: &'a Scenario,
) -> Subproblem<'a> {
    Subproblem {
        axis: Axis::Vertical,
        ..build_horizontal_subproblem(ctx, schedule, scenario)
    }
}

impl Subproblem<'_> {
    pub fn with_trust_radius(mut self, radius: f64) -> Self {
        self.trust_radius = Some(radius);
        self
    }

    /// Per-node surrogate averages at `traj`. Only the coordinates of this
    /// subproblem's axis are read; the others stay at the expansion point.
    pub fn surrogate(&self, traj: &Trajectory) -> [f64; 2] {
        let ctx = self.ctx;
        let n = ctx.slots.len();
        let mut avg = [0.0; 2];
        for (i, slot) in ctx.slots.iter().enumerate() {
            let vals = self.slack_values(slot, traj, i);
            for (k, a) in avg.iter_mut().enumerate() {
                let w = self.alpha[i][k];
                if w != 0.0 {
                    *a += w * bound_value(&slot.bounds[k], k, vals);
                }
            }
        }
        avg.map(|a| a / n as f64)
    }

    pub fn surrogate_min(&self, traj: &Trajectory) -> f64 {
        let [a, b] = self.surrogate(traj);
        a.min(b)
    }

    fn slack_values(&self, slot: &SlotLinearization, traj: &Trajectory, i: usize) -> [[f64; 3]; 2] {
        let ctx = self.ctx;
        [0, 1].map(|j| {
            let geo = &slot.geometry[j];
            match self.axis {
                Axis::Horizontal => {
                    planar_slacks(geo, &traj.horizontal[i], geo.h_prev, &ctx.env, ctx.los_certain, false).val
                }
                Axis::Vertical => altitude_slacks(geo, traj.vertical[i], &ctx.env, ctx.los_certain).val,
            }
        })
    }

    /// Largest per-slot move away from the expansion point.
    pub fn displacement(&self, traj: &Trajectory) -> f64 {
        let e = &self.ctx.expansion;
        match self.axis {
            Axis::Horizontal => traj
                .horizontal
                .iter()
                .zip(&e.horizontal)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max),
            Axis::Vertical => traj
                .vertical
                .iter()
                .zip(&e.vertical)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        }
    }
}

struct Program<'p, 'a> {
    sub: &'p Subproblem<'a>,
    free: Vec<usize>,
    width: usize,
}

impl Program<'_, '_> {
    fn eta_index(&self) -> usize {
        self.free.len() * self.width
    }

    fn var(&self, slot: usize) -> Option<usize> {
        match self.sub.axis {
            Axis::Horizontal => (slot >= 1 && slot + 1 < self.sub.ctx.slots.len()).then(|| 2 * (slot - 1)),
            Axis::Vertical => Some(slot),
        }
    }

    fn decode(&self, z: &DVector<f64>) -> Trajectory {
        let mut t = self.sub.ctx.expansion.clone();
        for (p, &slot) in self.free.iter().enumerate() {
            match self.sub.axis {
                Axis::Horizontal => t.horizontal[slot] = Point2::new(z[2 * p], z[2 * p + 1]),
                Axis::Vertical => t.vertical[slot] = z[p],
            }
        }
        t
    }

    fn encode(&self, t: &Trajectory, eta: f64) -> DVector<f64> {
        let mut z = DVector::zeros(self.dim());
        for (p, &slot) in self.free.iter().enumerate() {
            match self.sub.axis {
                Axis::Horizontal => {
                    z[2 * p] = t.horizontal[slot].x;
                    z[2 * p + 1] = t.horizontal[slot].y;
                }
                Axis::Vertical => z[p] = t.vertical[slot],
            }
        }
        z[self.eta_index()] = eta;
        z
    }

    fn rate_constraints(&self, t: &Trajectory, eta: f64, derivatives: bool) -> [ConstraintEval; 2] {
        let sub = self.sub;
        let ctx = sub.ctx;
        let n = ctx.slots.len() as f64;
        let mut out = [ConstraintEval::default(), ConstraintEval::default()];
        for (i, slot) in ctx.slots.iter().enumerate() {
            let w = [sub.alpha[i][0] / n, sub.alpha[i][1] / n];
            if w == [0.0, 0.0] {
                continue;
            }
            let vi = if derivatives { self.var(i) } else { None };
            match sub.axis {
                Axis::Horizontal => {
                    let loc = [0, 1].map(|j| {
                        let geo = &slot.geometry[j];
                        planar_slacks(geo, &t.horizontal[i], geo.h_prev, &ctx.env, ctx.los_certain, vi.is_some())
                    });
                    for k in 0..2 {
                        if w[k] == 0.0 {
                            continue;
                        }
                        let b = &slot.bounds[k];
                        out[k].value += w[k] * bound_value(b, k, [loc[0].val, loc[1].val]);
                        if let Some(v) = vi {
                            let mut g = Vector2::zeros();
                            let mut h = Matrix2::zeros();
                            for (j, l) in loc.iter().enumerate() {
                                for f in 0..3 {
                                    let c = w[k] * b.grad[slack_index(k, j, f)];
                                    g += c * l.grad[f];
                                    h += c * l.hess[f];
                                }
                            }
                            out[k].grad.extend([(v, g.x), (v + 1, g.y)]);
                            out[k].hess.extend([(v, v, h[(0, 0)]), (v + 1, v + 1, h[(1, 1)]), (v, v + 1, h[(0, 1)])]);
                        }
                    }
                }
                Axis::Vertical => {
                    let loc = [0, 1].map(|j| altitude_slacks(&slot.geometry[j], t.vertical[i], &ctx.env, ctx.los_certain));
                    for k in 0..2 {
                        if w[k] == 0.0 {
                            continue;
                        }
                        let b = &slot.bounds[k];
                        out[k].value += w[k] * bound_value(b, k, [loc[0].val, loc[1].val]);
                        if let Some(v) = vi {
                            let (mut g, mut h) = (0.0, 0.0);
                            for (j, l) in loc.iter().enumerate() {
                                for f in 0..3 {
                                    let c = w[k] * b.grad[slack_index(k, j, f)];
                                    g += c * l.d1[f];
                                    h += c * l.d2[f];
                                }
                            }
                            out[k].grad.push((v, g));
                            out[k].hess.push((v, v, h));
                        }
                    }
                }
            }
        }
        let e = self.eta_index();
        for c in &mut out {
            c.value -= eta;
            if derivatives {
                c.grad.push((e, -1.0));
            }
        }
        out
    }

    fn horizontal_constraints(&self, t: &Trajectory, derivatives: bool, out: &mut Vec<ConstraintEval>) {
        let s = self.sub.scenario;
        let n = t.len();
        let cap2 = s.horizontal_step().powi(2);
        for i in 0..n - 1 {
            let (va, vb) = (self.var(i), self.var(i + 1));
            if va.is_none() && vb.is_none() {
                continue;
            }
            let d = t.horizontal[i + 1] - t.horizontal[i];
            let mut c = ConstraintEval {
                value: 1.0 - d.norm_squared() / cap2,
                ..Default::default()
            };
            if derivatives {
                let g = 2.0 * d / cap2;
                let h = 2.0 / cap2;
                if let Some(a) = va {
                    c.grad.extend([(a, g.x), (a + 1, g.y)]);
                    c.hess.extend([(a, a, -h), (a + 1, a + 1, -h)]);
                }
                if let Some(b) = vb {
                    c.grad.extend([(b, -g.x), (b + 1, -g.y)]);
                    c.hess.extend([(b, b, -h), (b + 1, b + 1, -h)]);
                }
                if let (Some(a), Some(b)) = (va, vb) {
                    c.hess.extend([(a, b, h), (a + 1, b + 1, h)]);
                }
            }
            out.push(c);
        }
        if let Some(rho) = self.sub.trust_radius {
            let r2 = rho * rho;
            for &i in &self.free {
                let v = self.var(i).expect("free slot has a variable");
                let d = t.horizontal[i] - self.sub.ctx.expansion.horizontal[i];
                let mut c = ConstraintEval {
                    value: 1.0 - d.norm_squared() / r2,
                    ..Default::default()
                };
                if derivatives {
                    c.grad.extend([(v, -2.0 * d.x / r2), (v + 1, -2.0 * d.y / r2)]);
                    c.hess.extend([(v, v, -2.0 / r2), (v + 1, v + 1, -2.0 / r2)]);
                }
                out.push(c);
            }
        }
    }

    fn vertical_constraints(&self, t: &Trajectory, derivatives: bool, out: &mut Vec<ConstraintEval>) {
        let s = self.sub.scenario;
        let l = &s.limits;
        let span = l.h_max - l.h_min;
        let step = s.vertical_step();
        let linear = |value: f64, grad: Vec<(usize, f64)>| ConstraintEval {
            value,
            grad: if derivatives { grad } else { Vec::new() },
            hess: Vec::new(),
        };
        for (i, &h) in t.vertical.iter().enumerate() {
            out.push(linear((h - l.h_min) / span, vec![(i, 1.0 / span)]));
            out.push(linear((l.h_max - h) / span, vec![(i, -1.0 / span)]));
        }
        for i in 0..t.len() - 1 {
            let d = t.vertical[i + 1] - t.vertical[i];
            out.push(linear(1.0 - d / step, vec![(i + 1, -1.0 / step), (i, 1.0 / step)]));
            out.push(linear(1.0 + d / step, vec![(i + 1, 1.0 / step), (i, -1.0 / step)]));
        }
        if let Some(rho) = self.sub.trust_radius {
            for (i, &h) in t.vertical.iter().enumerate() {
                let d = h - self.sub.ctx.expansion.vertical[i];
                out.push(linear(1.0 - d / rho, vec![(i, -1.0 / rho)]));
                out.push(linear(1.0 + d / rho, vec![(i, 1.0 / rho)]));
            }
        }
    }
}

impl BarrierProblem for Program<'_, '_> {
    fn dim(&self) -> usize {
        self.eta_index() + 1
    }

    fn objective(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.dim());
        c[self.eta_index()] = 1.0;
        c
    }

    fn constraints(&self, z: &DVector<f64>, derivatives: bool) -> Option<Vec<ConstraintEval>> {
        let t = self.decode(z);
        if self.sub.axis == Axis::Vertical && t.vertical.iter().any(|&h| !(h > 0.0)) {
            return None;
        }
        let mut out: Vec<ConstraintEval> = self.rate_constraints(&t, z[self.eta_index()], derivatives).into();
        match self.sub.axis {
            Axis::Horizontal => self.horizontal_constraints(&t, derivatives, &mut out),
            Axis::Vertical => self.vertical_constraints(&t, derivatives, &mut out),
        }
        out.iter().all(|c| c.value.is_finite()).then_some(out)
    }
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub trajectory: Trajectory,
    /// Slacks re-tightened at the returned trajectory.
    pub slacks: SlackState,
    /// Surrogate objective at the returned trajectory.
    pub eta: f64,
    /// Surrogate objective at the expansion point.
    pub expansion_eta: f64,
    /// The solver failed and the expansion point was returned.
    pub fallback: bool,
}

impl Subproblem<'_> {
    /// Strictly feasible point close to the expansion point, or `None` when
    /// the feasible set has no interior.
    fn interior_start(&self, program: &Program) -> Option<Trajectory> {
        let s = self.scenario;
        let e = &self.ctx.expansion;
        let n = e.len();
        let mut theta: f64 = 1e-3;
        let mut t = e.clone();
        match self.axis {
            Axis::Horizontal => {
                let (q0, qf) = (s.limits.start, s.limits.finish);
                let line_step = (qf - q0).norm() / (n - 1) as f64;
                if line_step >= s.horizontal_step() * (1.0 - 1e-9) {
                    return None;
                }
                let line = |i: usize| q0 + (qf - q0) * (i as f64 / (n - 1) as f64);
                if let Some(rho) = self.trust_radius {
                    let far = (0..n).map(|i| (line(i) - e.horizontal[i]).norm()).fold(0.0, f64::max);
                    if far > 0.0 {
                        theta = theta.min(0.5 * rho / far);
                    }
                }
                for &i in &program.free {
                    t.horizontal[i] = e.horizontal[i] * (1.0 - theta) + line(i) * theta;
                }
            }
            Axis::Vertical => {
                let l = &s.limits;
                if l.h_max - l.h_min <= 1e-9 * l.h_max {
                    return None;
                }
                let mid = 0.5 * (l.h_min + l.h_max);
                if let Some(rho) = self.trust_radius {
                    let far = e.vertical.iter().map(|h| (h - mid).abs()).fold(0.0, f64::max);
                    if far > 0.0 {
                        theta = theta.min(0.5 * rho / far);
                    }
                }
                for h in &mut t.vertical {
                    *h = *h * (1.0 - theta) + mid * theta;
                }
            }
        }
        Some(t)
    }
}

/// Solves a trajectory subproblem. A solver failure is not an error: the
/// expansion point is returned with `fallback` set.
pub fn solve_subproblem(sub: &Subproblem) -> Result<SubproblemSolution> {
    let ctx = sub.ctx;
    let n = ctx.slots.len();
    let expansion_eta = sub.surrogate_min(&ctx.expansion);
    let unchanged = |fallback: bool| -> Result<SubproblemSolution> {
        Ok(SubproblemSolution {
            trajectory: ctx.expansion.clone(),
            slacks: init_slacks(&ctx.expansion, sub.scenario)?,
            eta: expansion_eta,
            expansion_eta,
            fallback,
        })
    };
    let (free, width): (Vec<usize>, usize) = match sub.axis {
        Axis::Horizontal => ((1..n.saturating_sub(1)).collect(), 2),
        Axis::Vertical => ((0..n).collect(), 1),
    };
    if free.is_empty() {
        return unchanged(false);
    }
    let program = Program { sub, free, width };
    let Some(start) = sub.interior_start(&program) else {
        return unchanged(false);
    };
    let start_eta = sub.surrogate_min(&start);
    let z0 = program.encode(&start, start_eta - 1e-3 * (1.0 + start_eta.abs()));
    let result = match barrier::solve(&program, z0, &BarrierOptions::default()) {
        Ok(r) => r,
        Err(_) => return unchanged(true),
    };
    let trajectory = program.decode(&result.z);
    let eta = sub.surrogate_min(&trajectory);
    if !(eta >= expansion_eta) {
        return unchanged(false);
    }
    Ok(SubproblemSolution {
        slacks: init_slacks(&trajectory, sub.scenario)?,
        trajectory,
        eta,
        expansion_eta,
        fallback: false,
    })
}

/// Halvings of the trust radius before a step is given up.
pub const MAX_TRUST_HALVINGS: usize = 6;

#[derive(Debug, Clone)]
pub struct StepOutcome<T> {
    pub trajectory: Trajectory,
    /// True objective at `trajectory`.
    pub value: f64,
    /// Whatever the evaluator produced for the accepted trajectory.
    pub payload: Option<T>,
    pub accepted: bool,
    pub attempts: usize,
    pub surrogate_eta: f64,
}

/// Solves `base`, accepting its point only if `evaluate` (the true
/// objective) does not fall below `current_value`. Rejected steps are
/// retried with a halved per-slot trust radius; when all retries fail the
/// expansion point is kept.
pub fn safeguarded_step<T>(
    base: Subproblem,
    current_value: f64,
    mut evaluate: impl FnMut(&Trajectory) -> Result<(f64, T)>,
) -> Result<StepOutcome<T>> {
    let mut sub = base;
    let mut attempts = 0;
    let mut last_eta = f64::NAN;
    loop {
        attempts += 1;
        let sol = solve_subproblem(&sub)?;
        last_eta = if sol.eta.is_finite() { sol.eta } else { last_eta };
        let moved = sub.displacement(&sol.trajectory);
        if sol.fallback || moved == 0.0 {
            break;
        }
        let (value, payload) = evaluate(&sol.trajectory)?;
        if value >= current_value {
            return Ok(StepOutcome {
                trajectory: sol.trajectory,
                value,
                payload: Some(payload),
                accepted: true,
                attempts,
                surrogate_eta: sol.eta,
            });
        }
        if attempts > MAX_TRUST_HALVINGS {
            break;
        }
        let radius = 0.5 * sub.trust_radius.map_or(moved, |r| r.min(moved));
        sub = sub.with_trust_radius(radius);
    }
    Ok(StepOutcome {
        trajectory: sub.ctx.expansion.clone(),
        value: current_value,
        payload: None,
        accepted: false,
        attempts,
        surrogate_eta: last_eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{slot_channels, LinkModel};
    use crate::rate::{expected_rate, rate_in_slacks};
    use crate::scenario::initial_trajectory;
    use crate::scheduling::solve_schedule_lp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn env() -> EnvironmentParams {
        Scenario::default().env
    }

    #[test]
    fn slack_examples() {
        let e = env();
        let overhead = slacks_at(&Point2::new(5.0, 0.0), 100.0, &Point2::new(5.0, 0.0), &e).unwrap();
        assert_eq!(overhead.psi, 90.0);
        assert!((overhead.x - 1.000_214_70).abs() < 1e-6);
        assert!((los_slack(e.a, &e) - (1.0 + e.a)).abs() < 1e-15);
        assert!((nlos_slack(e.a, &e) - (1.0 + 1.0 / e.a)).abs() < 1e-15);
        // P^L + P^N = 1 at equality
        let sl = slacks_at(&Point2::new(120.0, 40.0), 150.0, &Point2::new(0.0, 0.0), &e).unwrap();
        assert!((1.0 / sl.x + 1.0 / sl.z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slack_form_matches_expected_rate() {
        let s = Scenario::desk();
        let fading = FadingRealization::for_scenario(&s);
        let mut traj = initial_trajectory(&s);
        traj.vertical[7] = 320.0;
        let phases = PhasePlan::uniform(s.n_slots, s.ris.elements());
        let ctx = LinearizationContext::new(&s, &traj, &phases, &fading, LinkModel::Probabilistic).unwrap();
        let chans = slot_channels(&s, &traj, &fading, LinkModel::Probabilistic).unwrap();
        for i in [0, 7, 25, 49] {
            for k in 0..2 {
                let sl = ctx.slacks.slots[i];
                let viaslack = rate_in_slacks(&sl[k], &sl[1 - k], &ctx.xi[i][k], &s.env);
                let direct = expected_rate(&chans[i], &phases.slots[i], k, s.node_gamma(1 - k)).expected;
                assert!((viaslack - direct).abs() <= 1e-10 * direct.max(1.0), "{viaslack} {direct}");
            }
        }
    }

    #[test]
    fn elevation_tangent_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let r_prev = rng.gen_range(0.1..2000.0);
            let h = rng.gen_range(50.0..600.0);
            let r = rng.gen_range(0.0..3000.0);
            let t = linearize_elevation(&Point2::new(r_prev, 0.0), h, &Point2::new(0.0, 0.0));
            assert!(t.value_deg(r) <= DEG * (h / r).atan() + 1e-9);
            assert!((t.value_deg(t.r_prev) - DEG * (h / t.r_prev).atan()).abs() < 1e-12);
            let step = 1e-4 * t.r_prev;
            let fd = DEG * ((h / (t.r_prev + step)).atan() - (h / (t.r_prev - step)).atan()) / (2.0 * step);
            assert!((fd + DEG * t.g).abs() < 1e-7 * (1.0 + fd.abs()));
        }
        let t = linearize_elevation(&Point2::new(3.0, 4.0), 100.0, &Point2::new(3.0, 4.0));
        assert_eq!(t.r_prev, DISTANCE_REGULARIZATION);
        assert!(t.f.is_finite() && t.g > 0.0);
    }

    #[test]
    fn altitude_tangent_over_estimates() {
        let e = env();
        for r in [0.0, 1.0, 50.0, 300.0, 1000.0] {
            for h0 in [100.0, 250.0, 500.0] {
                let geo = NodeGeometry {
                    w: Point2::zeros(),
                    q_prev: Point2::new(r, 0.0),
                    h_prev: h0,
                    tangent: linearize_elevation(&Point2::new(r, 0.0), h0, &Point2::zeros()),
                    unit: Vector2::new(1.0, 0.0),
                    r_true: r,
                };
                let mut h = 100.0;
                while h <= 500.0 {
                    let a = altitude_slacks(&geo, h, &e, false);
                    let exact = slacks_at(&Point2::new(r, 0.0), h, &Point2::zeros(), &e).unwrap();
                    assert!((a.val[0] - exact.x).abs() < 1e-12);
                    assert!(a.val[2] >= exact.z - 1e-12);
                    h += 5.0;
                }
            }
        }
    }

    fn toy_context(s: &Scenario, traj: &Trajectory) -> (LinearizationContext, Schedule) {
        let fading = FadingRealization::for_scenario(s);
        let phases = PhasePlan::uniform(s.n_slots, s.ris.elements());
        let ctx = LinearizationContext::new(s, traj, &phases, &fading, LinkModel::Probabilistic).unwrap();
        let chans = slot_channels(s, traj, &fading, LinkModel::Probabilistic).unwrap();
        let rates: Vec<[f64; 2]> = chans
            .iter()
            .zip(&phases.slots)
            .map(|(c, v)| [0, 1].map(|k| expected_rate(c, v, k, s.node_gamma(1 - k)).expected))
            .collect();
        (ctx, solve_schedule_lp(&rates).unwrap())
    }

    #[test]
    fn surrogate_is_tight_at_expansion() {
        let s = Scenario::desk();
        let traj = initial_trajectory(&s);
        let (ctx, sched) = toy_context(&s, &traj);
        let sub = build_horizontal_subproblem(&ctx, &sched, &s);
        assert!((sub.surrogate_min(&traj) - sched.eta).abs() < 1e-9 * sched.eta.max(1.0));
        let vert = build_vertical_subproblem(&ctx, &sched, &s);
        assert!((vert.surrogate_min(&traj) - sched.eta).abs() < 1e-9 * sched.eta.max(1.0));
    }

    #[test]
    fn subproblem_steps_improve_surrogate_and_stay_feasible() {
        let s = Scenario::desk();
        let traj = initial_trajectory(&s);
        let (ctx, sched) = toy_context(&s, &traj);
        for sub in [
            build_horizontal_subproblem(&ctx, &sched, &s),
            build_vertical_subproblem(&ctx, &sched, &s),
            build_horizontal_subproblem(&ctx, &sched, &s).with_trust_radius(5.0),
        ] {
            let sol = solve_subproblem(&sub).unwrap();
            assert!(!sol.fallback);
            assert!(sol.eta >= sol.expansion_eta);
            sol.trajectory.check_constraints(&s, 1e-6).unwrap();
            if let Some(r) = sub.trust_radius {
                assert!(sub.displacement(&sol.trajectory) <= r + 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_altitude_box_returns_input() {
        let mut s = Scenario::desk();
        s.limits.h_min = 200.0;
        s.limits.h_max = 200.0;
        let traj = initial_trajectory(&s);
        let (ctx, sched) = toy_context(&s, &traj);
        let sol = solve_subproblem(&build_vertical_subproblem(&ctx, &sched, &s)).unwrap();
        assert_eq!(sol.trajectory, traj);
    }

    #[test]
    fn zero_rate_gives_zero_eta() {
        let mut s = Scenario::desk();
        s.n_slots = 3;
        s.limits.start = Point2::new(350.0, 0.0);
        s.limits.finish = Point2::new(450.0, 0.0);
        let traj = initial_trajectory(&s);
        let (mut ctx, sched) = toy_context(&s, &traj);
        for slot in &mut ctx.slots {
            let sl = ctx.slacks.slots[0];
            slot.bounds = [0, 1].map(|k| TaylorBound::new(&sl[k], &sl[1 - k], &XiCoefficients::default(), &s.env));
        }
        let sol = solve_subproblem(&build_horizontal_subproblem(&ctx, &sched, &s)).unwrap();
        assert_eq!(sol.eta, 0.0);
    }

    #[test]
    fn safeguard_keeps_expansion_when_every_step_fails() {
        let s = Scenario::desk();
        let traj = initial_trajectory(&s);
        let (ctx, sched) = toy_context(&s, &traj);
        let sub = build_horizontal_subproblem(&ctx, &sched, &s);
        let mut calls = 0;
        let out = safeguarded_step(sub, 1e9, |_| {
            calls += 1;
            Ok((0.0, ()))
        })
        .unwrap();
        assert!(!out.accepted);
        assert_eq!(out.trajectory, traj);
        assert_eq!(calls, MAX_TRUST_HALVINGS + 1);
    }
}
