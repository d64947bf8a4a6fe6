use std::fmt;

use crate::error::Error;
use crate::scenario::{Point2, Scenario};

/// Per-slot UAV waypoints: horizontal positions and altitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub horizontal: Vec<Point2>,
    pub vertical: Vec<f64>,
}

/// Which mobility constraint a trajectory breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mobility {
    HorizontalStep,
    Endpoint,
    VerticalStep,
    AltitudeBox,
    Length,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintViolation {
    pub constraint: Mobility,
    pub slot: usize,
    /// Amount by which the constraint is exceeded [m].
    pub excess: f64,
}

impl fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} violated at slot {} by {:.3e} m",
            self.constraint, self.slot, self.excess
        )
    }
}

impl From<ConstraintViolation> for Error {
    fn from(v: ConstraintViolation) -> Self {
        Error::Infeasible(v.to_string())
    }
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.horizontal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.horizontal.is_empty()
    }

    /// Checks step caps, pinned endpoints and the altitude box, allowing
    /// `tol` metres of slack on each.
    pub fn check_constraints(&self, s: &Scenario, tol: f64) -> Result<(), ConstraintViolation> {
        let n = s.n_slots;
        if self.horizontal.len() != n || self.vertical.len() != n {
            return Err(ConstraintViolation {
                constraint: Mobility::Length,
                slot: self.horizontal.len().min(self.vertical.len()),
                excess: f64::NAN,
            });
        }
        let step = s.horizontal_step();
        for (i, w) in self.horizontal.windows(2).enumerate() {
            let d = (w[1] - w[0]).norm();
            if d > step + tol {
                return Err(ConstraintViolation {
                    constraint: Mobility::HorizontalStep,
                    slot: i,
                    excess: d - step,
                });
            }
        }
        for (slot, target) in [(0, s.limits.start), (n - 1, s.limits.finish)] {
            let d = (self.horizontal[slot] - target).norm();
            if d > tol {
                return Err(ConstraintViolation {
                    constraint: Mobility::Endpoint,
                    slot,
                    excess: d,
                });
            }
        }
        let vstep = s.vertical_step();
        for (i, w) in self.vertical.windows(2).enumerate() {
            let d = (w[1] - w[0]).abs();
            if d > vstep + tol {
                return Err(ConstraintViolation {
                    constraint: Mobility::VerticalStep,
                    slot: i,
                    excess: d - vstep,
                });
            }
        }
        for (i, &h) in self.vertical.iter().enumerate() {
            let excess = (s.limits.h_min - h).max(h - s.limits.h_max);
            if excess > tol {
                return Err(ConstraintViolation {
                    constraint: Mobility::AltitudeBox,
                    slot: i,
                    excess,
                });
            }
        }
        Ok(())
    }
}
