//! Alternating optimization over scheduling, phases and the trajectory.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::{slot_channels, FadingRealization, LinkModel, SlotChannel};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::phase_opt::{
    coordinate_ascent_phases, gaussian_randomization, solve_phase_sdr, PhaseProblem, SdrOptions,
    DEFAULT_DRAWS,
};
use crate::rate::{expected_rate, PhasePlan, SlackState};
use crate::scenario::{initial_trajectory, Point2, Scenario};
use crate::scheduling::{node_averages, reconstruct_binary, solve_schedule_lp, Schedule};
use crate::trajectory::Trajectory;
use crate::trajectory_opt::{
    build_horizontal_subproblem, build_vertical_subproblem, init_slacks, safeguarded_step,
    LinearizationContext, Subproblem,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Probabilistic LoS model, full 3D trajectory.
    Plc,
    /// Probabilistic LoS model, altitude held at the reference value.
    Plcfa,
    /// Designed assuming LoS always holds.
    Dlc,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Plc, Scheme::Plcfa, Scheme::Dlc];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Plc => "plc",
            Scheme::Plcfa => "plcfa",
            Scheme::Dlc => "dlc",
        }
    }

    /// Channel model used while optimizing.
    pub fn design_model(self) -> LinkModel {
        match self {
            Scheme::Dlc => LinkModel::DeterministicLos,
            _ => LinkModel::Probabilistic,
        }
    }

    fn moves_vertically(self) -> bool {
        self != Scheme::Plcfa
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plc" => Ok(Scheme::Plc),
            "plcfa" => Ok(Scheme::Plcfa),
            "dlc" => Ok(Scheme::Dlc),
            _ => Err(Error::invalid("scheme", format!("unknown scheme {s:?} (plc, plcfa, dlc)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseSolver {
    CoordinateAscent,
    /// Relaxation plus Gaussian randomization, refined by coordinate ascent.
    Relaxation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    /// Stop when the objective changes by less than this [bps/Hz].
    pub epsilon: f64,
    pub max_iterations: usize,
    pub phase_solver: PhaseSolver,
    /// Rounds run with the binary schedule after the main loop.
    pub polish_iterations: usize,
    pub seed: u64,
}

impl SchemeConfig {
    pub fn new(scheme: Scheme) -> Self {
        SchemeConfig {
            scheme,
            epsilon: 1e-3,
            max_iterations: 50,
            phase_solver: PhaseSolver::CoordinateAscent,
            polish_iterations: 10,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon", format!("must be > 0, got {}", self.epsilon)));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AoState {
    /// Iterations of the main loop.
    pub iteration: usize,
    /// Final binary schedule.
    pub schedule: Schedule,
    /// Relaxed schedule at the end of the main loop.
    pub relaxed_schedule: Schedule,
    pub phases: PhasePlan,
    pub trajectory: Trajectory,
    pub slacks: SlackState,
    /// Objective under the design model after the initial schedule and
    /// after every main-loop iteration.
    pub eta_history: Vec<f64>,
    /// Design-model objective after each binary-schedule round.
    pub polish_history: Vec<f64>,
    pub converged: bool,
    /// Objective of the returned design under the probabilistic model.
    pub eta_final: f64,
    /// Trajectory steps kept at their expansion point by the safeguard.
    pub rejected_steps: usize,
}

/// Expected rate of each node in every slot.
pub fn node_rates(s: &Scenario, channels: &[SlotChannel], phases: &PhasePlan) -> Vec<[f64; 2]> {
    channels
        .iter()
        .zip(&phases.slots)
        .map(|(c, v)| [0, 1].map(|k| expected_rate(c, v, k, s.node_gamma(1 - k)).expected))
        .collect()
}

fn objective_under(
    s: &Scenario,
    traj: &Trajectory,
    phases: &PhasePlan,
    alpha: &[[f64; 2]],
    fading: &FadingRealization,
    model: LinkModel,
) -> Result<f64> {
    let channels = slot_channels(s, traj, fading, model)?;
    let [a, b] = node_averages(alpha, &node_rates(s, &channels, phases));
    Ok(a.min(b))
}

/// `min_k (1/N) sum_n alpha_k[n] E[R_k[n]]` under the probabilistic model.
pub fn evaluate_objective(
    traj: &Trajectory,
    phases: &PhasePlan,
    schedule: &Schedule,
    s: &Scenario,
    fading: &FadingRealization,
) -> Result<f64> {
    traj.check_constraints(s, 1e-6)?;
    let m = s.ris.elements();
    if phases.slots.len() != s.n_slots || schedule.len() != s.n_slots {
        return Err(Error::Dimension {
            expected: s.n_slots,
            got: phases.slots.len().min(schedule.len()),
        });
    }
    if let Some(bad) = phases.slots.iter().find(|v| v.len() != m) {
        return Err(Error::Dimension {
            expected: m,
            got: bad.len(),
        });
    }
    if phases.max_modulus_error() > 1e-9 {
        return Err(Error::Infeasible("phase coefficients must have unit modulus".into()));
    }
    if !schedule.is_feasible(1e-9) {
        return Err(Error::Infeasible("schedule weights outside the simplex".into()));
    }
    objective_under(s, traj, phases, &schedule.alpha, fading, LinkModel::Probabilistic)
}

struct Run<'a> {
    s: &'a Scenario,
    cfg: &'a SchemeConfig,
    fading: FadingRealization,
    model: LinkModel,
}

const ASCENT_SWEEPS: usize = 50;
const ASCENT_TOL: f64 = 1e-10;

impl Run<'_> {
    fn objective(&self, traj: &Trajectory, phases: &PhasePlan, alpha: &[[f64; 2]]) -> Result<f64> {
        objective_under(self.s, traj, phases, alpha, &self.fading, self.model)
    }

    fn slot_problem(&self, channel: &SlotChannel, alpha: [f64; 2]) -> PhaseProblem {
        let g = [self.s.node_gamma(1), self.s.node_gamma(0)];
        match alpha {
            [a, b] if b == 0.0 && a > 0.0 => PhaseProblem::for_receiver(channel, 0, g[0]),
            [a, b] if a == 0.0 && b > 0.0 => PhaseProblem::for_receiver(channel, 1, g[1]),
            [0.0, 0.0] => PhaseProblem::weighted(channel, [(0, 1.0, g[0]), (1, 1.0, g[1])]),
            [a, b] => PhaseProblem::weighted(channel, [(0, a, g[0]), (1, b, g[1])]),
        }
    }

    fn slot_phases(&self, problem: &PhaseProblem, current: &[Complex64], slot: usize) -> Result<Vec<Complex64>> {
        let mut start = current.to_vec();
        if self.cfg.phase_solver == PhaseSolver::Relaxation {
            let seed = derive_seed(self.cfg.seed, slot as u64);
            let lifted = solve_phase_sdr(problem, &SdrOptions { seed, ..Default::default() })?;
            let drawn = gaussian_randomization(&lifted.matrix, problem, DEFAULT_DRAWS, seed)?;
            if problem.objective(&drawn) > problem.objective(&start) {
                start = drawn;
            }
        }
        Ok(coordinate_ascent_phases(&start, problem, ASCENT_SWEEPS, ASCENT_TOL)?.v)
    }

    /// Per-slot phase update for a fixed trajectory and schedule. Updates of
    /// shared slots are dropped if they lower the objective.
    fn phase_step(&self, traj: &Trajectory, phases: &PhasePlan, alpha: &[[f64; 2]]) -> Result<PhasePlan> {
        let channels = slot_channels(self.s, traj, &self.fading, self.model)?;
        let slots = channels
            .par_iter()
            .enumerate()
            .map(|(n, c)| self.slot_phases(&self.slot_problem(c, alpha[n]), &phases.slots[n], n))
            .collect::<Result<Vec<_>>>()?;
        let updated = PhasePlan { slots };
        let shared: Vec<usize> = (0..alpha.len()).filter(|&n| alpha[n][0] > 0.0 && alpha[n][1] > 0.0).collect();
        if shared.is_empty() {
            return Ok(updated);
        }
        let before = node_averages(alpha, &node_rates(self.s, &channels, phases));
        let after = node_averages(alpha, &node_rates(self.s, &channels, &updated));
        if after[0].min(after[1]) >= before[0].min(before[1]) {
            return Ok(updated);
        }
        let mut kept = updated;
        for n in shared {
            kept.slots[n] = phases.slots[n].clone();
        }
        Ok(kept)
    }

    /// Trajectory block: one safeguarded SCA step along `axis`. Candidates
    /// are scored with phases re-aligned to their geometry.
    fn trajectory_step<'c>(
        &'c self,
        build: impl Fn(&'c LinearizationContext, &'c Schedule, &'c Scenario) -> Subproblem<'c>,
        ctx: &'c LinearizationContext,
        schedule: &'c Schedule,
        phases: &PhasePlan,
        current_value: f64,
    ) -> Result<(Trajectory, PhasePlan, f64, bool)> {
        let sub = build(ctx, schedule, self.s);
        let outcome = safeguarded_step(sub, current_value, |cand| {
            let realigned = self.realign(cand, phases, &schedule.alpha)?;
            Ok((self.objective(cand, &realigned, &schedule.alpha)?, realigned))
        })?;
        match outcome.payload {
            Some(p) if outcome.accepted => Ok((outcome.trajectory, p, outcome.value, true)),
            _ => Ok((ctx.expansion.clone(), phases.clone(), current_value, false)),
        }
    }

    fn realign(&self, traj: &Trajectory, phases: &PhasePlan, alpha: &[[f64; 2]]) -> Result<PhasePlan> {
        let channels = slot_channels(self.s, traj, &self.fading, self.model)?;
        let slots = channels
            .par_iter()
            .enumerate()
            .map(|(n, c)| {
                let p = self.slot_problem(c, alpha[n]);
                Ok(coordinate_ascent_phases(&phases.slots[n], &p, ASCENT_SWEEPS, ASCENT_TOL)?.v)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PhasePlan { slots })
    }

    /// Phase, horizontal and vertical blocks for a fixed schedule.
    fn geometry_round(
        &self,
        traj: &mut Trajectory,
        phases: &mut PhasePlan,
        schedule: &Schedule,
        rejected: &mut usize,
    ) -> Result<f64> {
        *phases = self.phase_step(traj, phases, &schedule.alpha)?;
        let mut value = self.objective(traj, phases, &schedule.alpha)?;
        let ctx = LinearizationContext::new(self.s, traj, phases, &self.fading, self.model)?;
        let (t, p, v, ok) = self.trajectory_step(build_horizontal_subproblem, &ctx, schedule, phases, value)?;
        *rejected += usize::from(!ok);
        (*traj, *phases, value) = (t, p, v);
        if self.cfg.scheme.moves_vertically() {
            let ctx = LinearizationContext::new(self.s, traj, phases, &self.fading, self.model)?;
            let (t, p, v, ok) = self.trajectory_step(build_vertical_subproblem, &ctx, schedule, phases, value)?;
            *rejected += usize::from(!ok);
            (*traj, *phases, value) = (t, p, v);
        }
        Ok(value)
    }

    fn schedule_for(&self, traj: &Trajectory, phases: &PhasePlan) -> Result<(Schedule, Vec<[f64; 2]>)> {
        let channels = slot_channels(self.s, traj, &self.fading, self.model)?;
        let rates = node_rates(self.s, &channels, phases);
        Ok((solve_schedule_lp(&rates)?, rates))
    }
}

/// Runs the alternating optimization of one scheme.
///
/// Each iteration solves the scheduling LP, updates the phases slot by slot,
/// then takes one safeguarded SCA step on the horizontal trajectory and one
/// on the altitudes (skipped for [`Scheme::Plcfa`]). Every block is
/// monotone in the design-model objective, so `eta_history` never
/// decreases. The relaxed schedule is then rounded to a binary one and a
/// few more rounds adapt phases and trajectory to it.
pub fn alternating_optimize(s: &Scenario, cfg: &SchemeConfig) -> Result<AoState> {
    s.validate()?;
    cfg.validate()?;
    let run = Run {
        s,
        cfg,
        fading: FadingRealization::for_scenario(s),
        model: cfg.scheme.design_model(),
    };
    let mut traj = initial_trajectory(s);
    let mut phases = PhasePlan::uniform(s.n_slots, s.ris.elements());
    let (mut schedule, _) = run.schedule_for(&traj, &phases)?;
    let mut eta_history = vec![schedule.eta];
    let mut rejected = 0;
    let mut converged = false;
    let mut iteration = 0;
    while iteration < cfg.max_iterations {
        iteration += 1;
        let (lp, _) = run.schedule_for(&traj, &phases)?;
        if lp.eta >= schedule.eta || iteration == 1 {
            schedule = lp;
        }
        let value = run
            .geometry_round(&mut traj, &mut phases, &schedule, &mut rejected)
            .map_err(|e| with_iteration(e, iteration))?;
        let previous = *eta_history.last().expect("history starts non-empty");
        eta_history.push(value);
        if (value - previous).abs() < cfg.epsilon {
            converged = true;
            break;
        }
    }
    let relaxed_schedule = {
        let (lp, _) = run.schedule_for(&traj, &phases)?;
        if lp.eta >= schedule.eta { lp } else { schedule }
    };
    let (_, rates) = run.schedule_for(&traj, &phases)?;
    let mut binary = reconstruct_binary(&relaxed_schedule, &rates)?.schedule;
    let mut polish_history = vec![binary.eta];
    for _ in 0..cfg.polish_iterations {
        let (lp, rates) = run.schedule_for(&traj, &phases)?;
        let candidate = reconstruct_binary(&lp, &rates)?.schedule;
        if candidate.eta > binary.eta {
            binary = candidate;
        } else {
            binary.eta = node_averages(&binary.alpha, &rates).into_iter().fold(f64::INFINITY, f64::min);
        }
        let previous = binary.eta;
        let value = run.geometry_round(&mut traj, &mut phases, &binary, &mut rejected)?;
        polish_history.push(value);
        if (value - previous).abs() < cfg.epsilon {
            break;
        }
    }
    traj.check_constraints(s, 1e-6)?;
    let eta_final = evaluate_objective(&traj, &phases, &binary, s, &run.fading)?;
    Ok(AoState {
        iteration,
        schedule: binary,
        relaxed_schedule,
        slacks: init_slacks(&traj, s)?,
        phases,
        trajectory: traj,
        eta_history,
        polish_history,
        converged,
        eta_final,
        rejected_steps: rejected,
    })
}

fn with_iteration(e: Error, iteration: usize) -> Error {
    match e {
        Error::Solver { message, .. } => Error::Solver { iteration, message },
        other => Error::Solver {
            iteration,
            message: other.to_string(),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    /// Mission duration in seconds (slot length fixed).
    Duration,
    /// Number of surface elements (square arrays).
    Elements,
}

impl FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" | "t" => Ok(SweepVariable::Duration),
            "M" | "m" => Ok(SweepVariable::Elements),
            _ => Err(Error::invalid("sweep", format!("unknown sweep variable {s:?} (T, M)"))),
        }
    }
}

/// Scenario variants for each sweep value.
pub fn sweep_scenarios(base: &Scenario, variable: SweepVariable, values: &[f64]) -> Result<Vec<Scenario>> {
    values
        .iter()
        .map(|&v| match variable {
            SweepVariable::Duration => {
                let n = v / base.slot_seconds;
                if !(n >= 2.0) || (n - n.round()).abs() > 1e-9 {
                    return Err(Error::invalid(
                        "values",
                        format!("duration {v} s is not a whole number (>= 2) of {} s slots", base.slot_seconds),
                    ));
                }
                base.with_slots(n.round() as usize)
            }
            SweepVariable::Elements => {
                let side = v.sqrt().round();
                if !(v >= 1.0) || side * side != v {
                    return Err(Error::invalid("values", format!("element count {v} is not a square")));
                }
                base.with_ris(side as usize, side as usize)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub sweep_value: f64,
    pub scheme: Scheme,
    pub eta: f64,
    pub converged: bool,
}

/// Runs every scheme on every scenario in parallel. Rows come back ordered
/// by scenario, then by the order of `schemes`.
pub fn run_scheme_comparison(
    points: &[(f64, Scenario)],
    schemes: &[Scheme],
    template: &SchemeConfig,
) -> Result<Vec<ComparisonRow>> {
    let jobs: Vec<(f64, &Scenario, Scheme)> = points
        .iter()
        .flat_map(|(v, s)| schemes.iter().map(move |&k| (*v, s, k)))
        .collect();
    jobs.par_iter()
        .map(|&(v, s, scheme)| {
            let cfg = SchemeConfig {
                scheme,
                ..template.clone()
            };
            let st = alternating_optimize(s, &cfg)?;
            Ok(ComparisonRow {
                sweep_value: v,
                scheme,
                eta: st.eta_final,
                converged: st.converged,
            })
        })
        .collect()
}

/// Mean position over the slots whose incoming and outgoing horizontal
/// steps are both at most `fraction` of the per-slot cap.
pub fn hover_centroid(traj: &Trajectory, s: &Scenario, fraction: f64) -> Option<Point2> {
    let cap = fraction * s.horizontal_step();
    let q = &traj.horizontal;
    let n = q.len();
    let slow: Vec<usize> = (0..n)
        .filter(|&i| {
            let before = if i > 0 { (q[i] - q[i - 1]).norm() } else { 0.0 };
            let after = if i + 1 < n { (q[i + 1] - q[i]).norm() } else { 0.0 };
            before <= cap && after <= cap
        })
        .collect();
    if slow.is_empty() {
        return None;
    }
    let sum = slow.iter().fold(Point2::zeros(), |acc, &i| acc + q[i]);
    Some(sum / slow.len() as f64)
}

/// Mean altitude over all slots.
pub fn mean_altitude(traj: &Trajectory) -> f64 {
    traj.vertical.iter().sum::<f64>() / traj.vertical.len().max(1) as f64
}
