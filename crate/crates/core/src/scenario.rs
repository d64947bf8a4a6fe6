//! Problem instance: ground nodes, RIS geometry, propagation environment,
//! UAV kinematics and time discretization.
//!
//! Scenarios are read from flat `key = value` text with dotted sections
//! (`env.a = 11.95`, `limits.h_min = 100.0`). Every key is optional and
//! defaults to the reference urban configuration. Decibel-valued inputs
//! (`env.beta0_db`, `env.noise_power_dbm`) are converted to linear scale at
//! load time; everything inside a [`Scenario`] is linear SI.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

pub type Point2 = Vector2<f64>;

/// Altitude used by the straight-line initial trajectory and by the
/// fixed-altitude scheme.
pub const REFERENCE_ALTITUDE: f64 = 200.0;

/// A single-antenna ground node at altitude zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundNode {
    /// Horizontal position [m]
    pub position: Point2,
    /// Maximum transmit power [W]
    pub transmit_power: f64,
}

/// Uniform planar array on the UAV, `rows x cols` elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Element spacing divided by the carrier wavelength.
    pub spacing_over_wavelength: f64,
}

impl RisGeometry {
    pub fn elements(&self) -> usize {
        self.rows * self.cols
    }
}

/// Propagation environment. All values linear.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvironmentParams {
    /// Sigmoid offset of the LoS probability curve.
    pub a: f64,
    /// Sigmoid slope of the LoS probability curve [1/deg].
    pub b: f64,
    pub alpha_los: f64,
    pub alpha_nlos: f64,
    /// Channel power gain at 1 m.
    pub beta0: f64,
    /// Receiver noise power [W].
    pub noise_power: f64,
}

impl EnvironmentParams {
    /// Transmit SNR `P / sigma^2` of a node with the given power.
    pub fn gamma(&self, power: f64) -> f64 {
        power / self.noise_power
    }
}

/// UAV mobility limits. Per-slot step lengths follow from the slot length,
/// see [`Scenario::horizontal_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicLimits {
    /// Maximum horizontal speed [m/s]
    pub v_horizontal_max: f64,
    /// Maximum vertical speed [m/s]
    pub v_vertical_max: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub start: Point2,
    pub finish: Point2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub nodes: [GroundNode; 2],
    pub ris: RisGeometry,
    pub env: EnvironmentParams,
    pub limits: KinematicLimits,
    pub n_slots: usize,
    /// Slot length [s]
    pub slot_seconds: f64,
    /// Seed of the small-scale fading realization held fixed for a run.
    pub fading_seed: u64,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm) * 1e-3
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            nodes: [
                GroundNode {
                    position: Point2::new(0.0, 0.0),
                    transmit_power: 0.1,
                },
                GroundNode {
                    position: Point2::new(800.0, 0.0),
                    transmit_power: 0.1,
                },
            ],
            ris: RisGeometry {
                rows: 10,
                cols: 10,
                spacing_over_wavelength: 0.5,
            },
            env: EnvironmentParams {
                a: 11.95,
                b: 0.14,
                alpha_los: 2.2,
                alpha_nlos: 3.2,
                beta0: db_to_linear(-40.0),
                noise_power: dbm_to_watts(-169.0),
            },
            limits: KinematicLimits {
                v_horizontal_max: 40.0,
                v_vertical_max: 20.0,
                h_min: 100.0,
                h_max: 500.0,
                start: Point2::new(-200.0, -200.0),
                finish: Point2::new(1000.0, 200.0),
            },
            n_slots: 150,
            slot_seconds: 1.0,
            fading_seed: 0,
        }
    }
}

impl Scenario {
    /// Reference geometry scaled for desk runs: 50 slots of 3 s (T = 150 s)
    /// and a 4x4 surface.
    pub fn desk() -> Self {
        Scenario {
            ris: RisGeometry {
                rows: 4,
                cols: 4,
                spacing_over_wavelength: 0.5,
            },
            n_slots: 50,
            slot_seconds: 3.0,
            ..Scenario::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_config_str(&text)
    }

    pub fn from_config_str(source: &str) -> Result<Self> {
        let table: toml::Table = source
            .parse()
            .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        let mut r = KeyReader { map: flat };
        let d = Scenario::default();

        let mut nodes = d.nodes;
        for (i, node) in nodes.iter_mut().enumerate() {
            let p = format!("node{}", i + 1);
            node.position.x = r.f64(&format!("{p}.x"), node.position.x)?;
            node.position.y = r.f64(&format!("{p}.y"), node.position.y)?;
            node.transmit_power = r.f64(&format!("{p}.power_w"), node.transmit_power)?;
        }
        let ris = RisGeometry {
            rows: r.usize("ris.rows", d.ris.rows)?,
            cols: r.usize("ris.cols", d.ris.cols)?,
            spacing_over_wavelength: r.f64(
                "ris.spacing_over_wavelength",
                d.ris.spacing_over_wavelength,
            )?,
        };
        let env = EnvironmentParams {
            a: r.f64("env.a", d.env.a)?,
            b: r.f64("env.b", d.env.b)?,
            alpha_los: r.f64("env.alpha_los", d.env.alpha_los)?,
            alpha_nlos: r.f64("env.alpha_nlos", d.env.alpha_nlos)?,
            beta0: r.linear_or_db("env.beta0", "env.beta0_db", d.env.beta0, db_to_linear)?,
            noise_power: r.linear_or_db(
                "env.noise_power_w",
                "env.noise_power_dbm",
                d.env.noise_power,
                dbm_to_watts,
            )?,
        };
        let limits = KinematicLimits {
            v_horizontal_max: r.f64("limits.v_horizontal_max", d.limits.v_horizontal_max)?,
            v_vertical_max: r.f64("limits.v_vertical_max", d.limits.v_vertical_max)?,
            h_min: r.f64("limits.h_min", d.limits.h_min)?,
            h_max: r.f64("limits.h_max", d.limits.h_max)?,
            start: Point2::new(
                r.f64("limits.start_x", d.limits.start.x)?,
                r.f64("limits.start_y", d.limits.start.y)?,
            ),
            finish: Point2::new(
                r.f64("limits.finish_x", d.limits.finish.x)?,
                r.f64("limits.finish_y", d.limits.finish.y)?,
            ),
        };
        let n_slots = r.usize("n_slots", d.n_slots)?;
        let slot_seconds = r.f64("slot_seconds", d.slot_seconds)?;
        let fading_seed = r.u64("fading_seed", d.fading_seed)?;

        if let Some(key) = r.map.keys().next() {
            if key.starts_with("node") {
                return Err(Error::invalid(
                    key,
                    "exactly two ground nodes (node1, node2) are supported",
                ));
            }
            return Err(Error::invalid(key, "unknown key"));
        }

        let s = Scenario {
            nodes,
            ris,
            env,
            limits,
            n_slots,
            slot_seconds,
            fading_seed,
        };
        s.validate()?;
        Ok(s)
    }

    /// Serializes every field as flat `key = value` lines. Floats use the
    /// shortest round-trip representation so loading the output reproduces
    /// the scenario bit for bit.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let f = |x: f64| format!("{x:?}");
        put("n_slots", self.n_slots.to_string());
        put("slot_seconds", f(self.slot_seconds));
        if self.fading_seed <= i64::MAX as u64 {
            put("fading_seed", self.fading_seed.to_string());
        } else {
            put("fading_seed", format!("\"{}\"", self.fading_seed));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            put(&format!("node{}.x", i + 1), f(n.position.x));
            put(&format!("node{}.y", i + 1), f(n.position.y));
            put(&format!("node{}.power_w", i + 1), f(n.transmit_power));
        }
        put("ris.rows", self.ris.rows.to_string());
        put("ris.cols", self.ris.cols.to_string());
        put(
            "ris.spacing_over_wavelength",
            f(self.ris.spacing_over_wavelength),
        );
        put("env.a", f(self.env.a));
        put("env.b", f(self.env.b));
        put("env.alpha_los", f(self.env.alpha_los));
        put("env.alpha_nlos", f(self.env.alpha_nlos));
        put("env.beta0", f(self.env.beta0));
        put("env.noise_power_w", f(self.env.noise_power));
        let l = &self.limits;
        put("limits.v_horizontal_max", f(l.v_horizontal_max));
        put("limits.v_vertical_max", f(l.v_vertical_max));
        put("limits.h_min", f(l.h_min));
        put("limits.h_max", f(l.h_max));
        put("limits.start_x", f(l.start.x));
        put("limits.start_y", f(l.start.y));
        put("limits.finish_x", f(l.finish.x));
        put("limits.finish_y", f(l.finish.y));
        out
    }

    pub fn validate(&self) -> Result<()> {
        fn finite(key: &str, v: f64) -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(key, "value must be finite"))
            }
        }
        fn positive(key: &str, v: f64) -> Result<()> {
            finite(key, v)?;
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(key, format!("must be > 0, got {v}")))
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            finite(&format!("node{}.x", i + 1), n.position.x)?;
            finite(&format!("node{}.y", i + 1), n.position.y)?;
            positive(&format!("node{}.power_w", i + 1), n.transmit_power)?;
        }
        if self.ris.rows == 0 {
            return Err(Error::invalid("ris.rows", "must be >= 1"));
        }
        if self.ris.cols == 0 {
            return Err(Error::invalid("ris.cols", "must be >= 1"));
        }
        positive(
            "ris.spacing_over_wavelength",
            self.ris.spacing_over_wavelength,
        )?;
        let e = &self.env;
        positive("env.a", e.a)?;
        positive("env.b", e.b)?;
        positive("env.alpha_los", e.alpha_los)?;
        positive("env.alpha_nlos", e.alpha_nlos)?;
        if e.alpha_nlos < e.alpha_los {
            return Err(Error::invalid(
                "env.alpha_nlos",
                "alpha_nlos must be >= alpha_los",
            ));
        }
        positive("env.beta0", e.beta0)?;
        positive("env.noise_power_w", e.noise_power)?;
        let l = &self.limits;
        positive("limits.v_horizontal_max", l.v_horizontal_max)?;
        positive("limits.v_vertical_max", l.v_vertical_max)?;
        positive("limits.h_min", l.h_min)?;
        positive("limits.h_max", l.h_max)?;
        if l.h_min > l.h_max {
            return Err(Error::invalid("limits.h_min", "h_min exceeds h_max"));
        }
        finite("limits.start_x", l.start.x)?;
        finite("limits.start_y", l.start.y)?;
        finite("limits.finish_x", l.finish.x)?;
        finite("limits.finish_y", l.finish.y)?;
        if self.n_slots < 2 {
            return Err(Error::invalid("n_slots", "must be >= 2"));
        }
        positive("slot_seconds", self.slot_seconds)?;

        let distance = (l.finish - l.start).norm();
        let steps = self.n_slots - 1;
        let reach = steps as f64 * self.horizontal_step();
        if distance > reach {
            return Err(Error::Unreachable {
                distance,
                reach,
                steps,
                step: self.horizontal_step(),
            });
        }
        Ok(())
    }

    /// Maximum horizontal distance per slot [m].
    pub fn horizontal_step(&self) -> f64 {
        self.limits.v_horizontal_max * self.slot_seconds
    }

    /// Maximum vertical distance per slot [m].
    pub fn vertical_step(&self) -> f64 {
        self.limits.v_vertical_max * self.slot_seconds
    }

    /// Mission duration [s].
    pub fn duration(&self) -> f64 {
        self.n_slots as f64 * self.slot_seconds
    }

    pub fn node_gamma(&self, k: usize) -> f64 {
        self.env.gamma(self.nodes[k].transmit_power)
    }

    /// Copy with a different surface size.
    pub fn with_ris(&self, rows: usize, cols: usize) -> Result<Self> {
        let mut s = self.clone();
        s.ris.rows = rows;
        s.ris.cols = cols;
        s.validate()?;
        Ok(s)
    }

    /// Copy with a different number of slots (slot length unchanged).
    pub fn with_slots(&self, n_slots: usize) -> Result<Self> {
        let mut s = self.clone();
        s.n_slots = n_slots;
        s.validate()?;
        Ok(s)
    }
}

/// Straight line from start to finish, uniformly spaced, at the reference
/// altitude clamped into the altitude box.
pub fn initial_trajectory(s: &Scenario) -> Trajectory {
    let n = s.n_slots;
    let (q0, qf) = (s.limits.start, s.limits.finish);
    let last = (n - 1) as f64;
    let horizontal = (0..n)
        .map(|i| {
            if i == 0 {
                q0
            } else if i == n - 1 {
                qf
            } else {
                q0 + (qf - q0) * (i as f64 / last)
            }
        })
        .collect();
    let h = REFERENCE_ALTITUDE.clamp(s.limits.h_min, s.limits.h_max);
    Trajectory {
        horizontal,
        vertical: vec![h; n],
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

struct KeyReader {
    map: BTreeMap<String, toml::Value>,
}

impl KeyReader {
    fn take_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(toml::Value::Float(x)) => Ok(Some(x)),
            Some(toml::Value::Integer(i)) => Ok(Some(i as f64)),
            Some(other) => Err(Error::invalid(
                key,
                format!("expected a number, got {}", other.type_str()),
            )),
        }
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        Ok(self.take_f64(key)?.unwrap_or(default))
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(toml::Value::Integer(i)) if i >= 0 => Ok(i as usize),
            Some(other) => Err(Error::invalid(
                key,
                format!("expected a non-negative integer, got {other}"),
            )),
        }
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(toml::Value::Integer(i)) if i >= 0 => Ok(i as u64),
            Some(toml::Value::String(s)) => s
                .parse()
                .map_err(|_| Error::invalid(key, format!("expected an unsigned integer, got {s:?}"))),
            Some(other) => Err(Error::invalid(
                key,
                format!("expected an unsigned integer, got {other}"),
            )),
        }
    }

    fn linear_or_db(
        &mut self,
        linear_key: &str,
        db_key: &str,
        default: f64,
        convert: fn(f64) -> f64,
    ) -> Result<f64> {
        match (self.take_f64(linear_key)?, self.take_f64(db_key)?) {
            (Some(_), Some(_)) => Err(Error::invalid(
                db_key,
                format!("conflicts with {linear_key}; give only one"),
            )),
            (Some(v), None) => Ok(v),
            (None, Some(db)) => Ok(convert(db)),
            (None, None) => Ok(default),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_yields_reference_defaults() {
        let s = Scenario::from_config_str("").unwrap();
        assert_eq!(s.limits.v_horizontal_max, 40.0);
        assert_eq!(s.limits.v_vertical_max, 20.0);
        assert_eq!(s.nodes[0].transmit_power, 0.1);
        assert_eq!(s.nodes[1].transmit_power, 0.1);
        assert!((s.env.beta0 - 1e-4).abs() < 1e-18);
        assert_eq!(s.limits.h_min, 100.0);
        assert_eq!(s.limits.h_max, 500.0);
        assert_eq!(s.ris.spacing_over_wavelength, 0.5);
        let sigma2 = 10f64.powf(-16.9) * 1e-3;
        assert!((s.env.noise_power / sigma2 - 1.0).abs() < 1e-12);
        assert_eq!(s.env.alpha_los, 2.2);
        assert_eq!(s.env.alpha_nlos, 3.2);
        assert_eq!(s.env.a, 11.95);
        assert_eq!(s.env.b, 0.14);
        assert_eq!(s.nodes[0].position, Point2::new(0.0, 0.0));
        assert_eq!(s.nodes[1].position, Point2::new(800.0, 0.0));
        assert_eq!(s.limits.start, Point2::new(-200.0, -200.0));
        assert_eq!(s.limits.finish, Point2::new(1000.0, 200.0));
    }

    #[test]
    fn inverted_altitude_box_is_rejected() {
        let err = Scenario::from_config_str("limits.h_min = 600\nlimits.h_max = 500\n").unwrap_err();
        assert!(err.to_string().contains("h_min exceeds h_max"), "{err}");
        assert!(err.to_string().contains("limits.h_min"));
    }

    #[test]
    fn unreachable_finish_is_rejected() {
        let cfg = "n_slots = 10\nslot_seconds = 1\nlimits.start_x = 0\nlimits.start_y = 0\n\
                   limits.finish_x = 10000\nlimits.finish_y = 0\nlimits.v_horizontal_max = 40\n";
        let err = Scenario::from_config_str(cfg).unwrap_err();
        assert!(matches!(err, Error::Unreachable { .. }));
        assert!(err.to_string().contains("finish unreachable"));
    }

    #[test]
    fn db_keys_convert_and_conflict() {
        let s = Scenario::from_config_str("env.beta0_db = -30\nenv.noise_power_dbm = -100").unwrap();
        assert!((s.env.beta0 - 1e-3).abs() < 1e-15);
        assert!((s.env.noise_power - 1e-13).abs() < 1e-25);
        let err = Scenario::from_config_str("env.beta0 = 1e-4\nenv.beta0_db = -40").unwrap_err();
        assert!(err.to_string().contains("env.beta0_db"));
    }

    #[test]
    fn third_node_and_unknown_keys_are_rejected() {
        let err = Scenario::from_config_str("node3.x = 5").unwrap_err();
        assert!(err.to_string().contains("two ground nodes"));
        let err = Scenario::from_config_str("env.c = 5").unwrap_err();
        assert!(err.to_string().contains("env.c"));
    }

    #[test]
    fn bad_values_name_their_key() {
        for (cfg, key) in [
            ("env.a = -1", "env.a"),
            ("env.alpha_nlos = 2.0", "env.alpha_nlos"),
            ("ris.rows = 0", "ris.rows"),
            ("node2.power_w = 0", "node2.power_w"),
            ("n_slots = 1", "n_slots"),
            ("slot_seconds = \"x\"", "slot_seconds"),
        ] {
            let err = Scenario::from_config_str(cfg).unwrap_err();
            assert!(err.to_string().contains(key), "{cfg}: {err}");
        }
        assert!(matches!(
            Scenario::from_config_str("n_slots = ").unwrap_err(),
            Error::Parse(_)
        ));
    }

    #[test]
    fn table_syntax_matches_dotted_keys() {
        let a = Scenario::from_config_str("[env]\na = 10.0\n[limits]\nh_min = 150").unwrap();
        let b = Scenario::from_config_str("env.a = 10.0\nlimits.h_min = 150").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn initial_trajectory_degenerate_line() {
        let cfg = "limits.start_x = 0\nlimits.start_y = 0\nlimits.finish_x = 0\nlimits.finish_y = 0\nn_slots = 7";
        let s = Scenario::from_config_str(cfg).unwrap();
        let t = initial_trajectory(&s);
        assert!(t.horizontal.iter().all(|q| *q == Point2::zeros()));
        assert!(t.vertical.iter().all(|&h| h == 200.0));
    }

    #[test]
    fn initial_trajectory_is_uniform_and_feasible() {
        let s = Scenario::desk();
        let t = initial_trajectory(&s);
        assert_eq!(t.len(), s.n_slots);
        let step = (s.limits.finish - s.limits.start).norm() / (s.n_slots - 1) as f64;
        for w in t.horizontal.windows(2) {
            let d = (w[1] - w[0]).norm();
            assert!((d - step).abs() < 1e-9);
            assert!(d <= s.horizontal_step());
        }
        t.check_constraints(&s, 0.0).unwrap();
    }

    #[test]
    fn initial_altitude_clamps_into_box() {
        let s = Scenario::from_config_str("limits.h_min = 250\nlimits.h_max = 300").unwrap();
        assert!(initial_trajectory(&s).vertical.iter().all(|&h| h == 250.0));
    }
}
