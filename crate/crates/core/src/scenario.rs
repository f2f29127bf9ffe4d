//! Attack scenarios: ambient-temperature schedules in virtual time, plus
//! the first-order thermal model that lags the device behind the ambient.

use serde::{Deserialize, Serialize};

use crate::defense::{effective_temperature, CoverModel};
use crate::error::{Error, Result};
use crate::kv;

/// A point of the ambient schedule; the schedule interpolates linearly
/// between breakpoints and holds flat outside them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub time_s: f64,
    pub ambient_c: f64,
}

/// An ambient-temperature trace the spy harness replays in virtual time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub schedule: Vec<Breakpoint>,
    pub duration_s: f64,
    /// First-order thermal lag of the DRAM behind the ambient.
    pub device_lag_tau_s: f64,
    /// Device temperature at t = 0; defaults to the initial ambient.
    pub initial_device_temp_c: Option<f64>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(Error::Argument("scenario has no breakpoints".into()));
        }
        if self.schedule[0].time_s < 0.0 {
            return Err(Error::Argument("scenario breakpoints must start at t >= 0".into()));
        }
        for w in self.schedule.windows(2) {
            if !(w[0].time_s < w[1].time_s) {
                return Err(Error::Argument(
                    "scenario breakpoint times must be strictly increasing".into(),
                ));
            }
        }
        for bp in &self.schedule {
            if !bp.ambient_c.is_finite() {
                return Err(Error::Argument("non-finite scenario temperature".into()));
            }
        }
        let last = self.schedule.last().unwrap().time_s;
        if self.duration_s < last {
            return Err(Error::Argument(format!(
                "scenario duration {} s ends before the last breakpoint at {} s",
                self.duration_s, last
            )));
        }
        if !(self.device_lag_tau_s.is_finite() && self.device_lag_tau_s >= 0.0) {
            return Err(Error::Argument("device_lag_tau_s must be >= 0".into()));
        }
        Ok(())
    }

    /// Ambient temperature at a time (flat extrapolation outside the
    /// breakpoint span).
    pub fn ambient_at(&self, time_s: f64) -> f64 {
        let sched = &self.schedule;
        if time_s <= sched[0].time_s {
            return sched[0].ambient_c;
        }
        if time_s >= sched[sched.len() - 1].time_s {
            return sched[sched.len() - 1].ambient_c;
        }
        let idx = sched.partition_point(|bp| bp.time_s <= time_s);
        let (a, b) = (&sched[idx - 1], &sched[idx]);
        let frac = (time_s - a.time_s) / (b.time_s - a.time_s);
        a.ambient_c + frac * (b.ambient_c - a.ambient_c)
    }

    /// Parse the key-value scenario file format (`breakpoint = t,temp`
    /// entries are repeatable).
    pub fn from_kv(text: &str) -> Result<Scenario> {
        let pairs = kv::parse(text)?;
        let mut name = None;
        let mut tau = 180.0;
        let mut duration = None;
        let mut initial = None;
        let mut schedule = Vec::new();
        for (key, value) in &pairs {
            match key.as_str() {
                "name" => name = Some(value.clone()),
                "device_lag_tau_s" => {
                    tau = value
                        .parse()
                        .map_err(|_| Error::config("device_lag_tau_s", "not a number"))?
                }
                "duration_s" => {
                    duration = Some(
                        value
                            .parse()
                            .map_err(|_| Error::config("duration_s", "not a number"))?,
                    )
                }
                "initial_device_temp_c" => {
                    initial = Some(
                        value
                            .parse()
                            .map_err(|_| Error::config("initial_device_temp_c", "not a number"))?,
                    )
                }
                "breakpoint" => {
                    let (t, temp) = value.split_once(',').ok_or_else(|| {
                        Error::config("breakpoint", format!("expected `time,temp`, got `{value}`"))
                    })?;
                    let time_s = t
                        .trim()
                        .parse()
                        .map_err(|_| Error::config("breakpoint", "bad time"))?;
                    let ambient_c = temp
                        .trim()
                        .parse()
                        .map_err(|_| Error::config("breakpoint", "bad temperature"))?;
                    schedule.push(Breakpoint { time_s, ambient_c });
                }
                other => {
                    return Err(Error::config(other, "unknown scenario key"));
                }
            }
        }
        let scenario = Scenario {
            name: name.ok_or_else(|| Error::config("name", "missing"))?,
            duration_s: duration.ok_or_else(|| Error::config("duration_s", "missing"))?,
            device_lag_tau_s: tau,
            initial_device_temp_c: initial,
            schedule,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("name = {}\n", self.name));
        out.push_str(&format!("device_lag_tau_s = {}\n", self.device_lag_tau_s));
        out.push_str(&format!("duration_s = {}\n", self.duration_s));
        if let Some(t) = self.initial_device_temp_c {
            out.push_str(&format!("initial_device_temp_c = {t}\n"));
        }
        for bp in &self.schedule {
            out.push_str(&format!("breakpoint = {},{}\n", bp.time_s, bp.ambient_c));
        }
        out
    }

    /// Flat constant-temperature scenario (useful for fixed-point checks).
    pub fn constant(temp_c: f64, duration_s: f64) -> Scenario {
        Scenario {
            name: format!("constant-{temp_c}"),
            schedule: vec![Breakpoint {
                time_s: 0.0,
                ambient_c: temp_c,
            }],
            duration_s,
            device_lag_tau_s: 180.0,
            initial_device_temp_c: None,
        }
    }
}

/// Built-in scenario names, each backed by a data file in `scenarios/`.
pub const BUILTIN_SCENARIOS: [&str; 3] = ["room-daynight", "server-workload", "chamber-ramp"];

/// Load a built-in scenario by name.
pub fn builtin_scenario(name: &str) -> Result<Scenario> {
    let text = match name {
        "room-daynight" => include_str!("../scenarios/room-daynight.kv"),
        "server-workload" => include_str!("../scenarios/server-workload.kv"),
        "chamber-ramp" => include_str!("../scenarios/chamber-ramp.kv"),
        other => {
            return Err(Error::config(
                "scenario",
                format!(
                    "unknown scenario `{other}` (built-ins: {})",
                    BUILTIN_SCENARIOS.join(", ")
                ),
            ))
        }
    };
    Scenario::from_kv(text)
}

/// First-order thermal state of the device, advanced in closed form across
/// the piecewise-linear (possibly cover-distorted) ambient schedule.
#[derive(Debug, Clone)]
pub struct DeviceThermal<'a> {
    scenario: &'a Scenario,
    cover: Option<CoverModel>,
    time_s: f64,
    device_c: f64,
}

impl<'a> DeviceThermal<'a> {
    pub fn new(scenario: &'a Scenario, cover: Option<CoverModel>) -> Self {
        let ambient0 = Self::effective(&cover, scenario.ambient_at(0.0));
        DeviceThermal {
            scenario,
            cover,
            time_s: 0.0,
            device_c: scenario.initial_device_temp_c.unwrap_or(ambient0),
        }
    }

    fn effective(cover: &Option<CoverModel>, ambient: f64) -> f64 {
        match cover {
            Some(c) => effective_temperature(c, ambient),
            None => ambient,
        }
    }

    pub fn time_s(&self) -> f64 {
        self.time_s
    }

    /// Actual device temperature (covered when a cover is present).
    pub fn device_temp_c(&self) -> f64 {
        self.device_c
    }

    /// Ambient the environment really has (never cover-distorted).
    pub fn true_ambient_c(&self) -> f64 {
        self.scenario.ambient_at(self.time_s)
    }

    fn effective_ambient_at(&self, t: f64) -> f64 {
        Self::effective(&self.cover, self.scenario.ambient_at(t))
    }

    /// Advance to an absolute time, stepping segment by segment so each
    /// piece has a linear ambient and an exact closed-form solution.
    pub fn advance_to(&mut self, target_s: f64) {
        debug_assert!(target_s >= self.time_s);
        while self.time_s < target_s {
            let seg_end = self
                .scenario
                .schedule
                .iter()
                .map(|bp| bp.time_s)
                .find(|&t| t > self.time_s)
                .unwrap_or(f64::INFINITY)
                .min(target_s);
            let dt = seg_end - self.time_s;
            if dt <= 0.0 {
                break;
            }
            let tau = self.scenario.device_lag_tau_s;
            let amb_a = self.effective_ambient_at(self.time_s);
            let amb_b = self.effective_ambient_at(seg_end);
            if tau == 0.0 {
                self.device_c = amb_b;
            } else {
                let slope = (amb_b - amb_a) / dt;
                self.device_c = amb_b - slope * tau
                    + (self.device_c - amb_a + slope * tau) * (-dt / tau).exp();
            }
            self.time_s = seg_end;
        }
    }

    /// Advance through a decay window, returning ln of the equivalent decay
    /// time at `ref_temp_c` plus the window-midpoint ground truth.
    ///
    /// The equivalent time is `∫ e^(k·(T_dev(s) − T_ref)) ds`, accumulated
    /// by 1-second trapezoids (the device trajectory itself is exact).
    pub fn decay_window(&mut self, window_s: f64, k: f64, ref_temp_c: f64) -> DecayWindow {
        let start = self.time_s;
        let end = start + window_s;
        let mid = start + window_s / 2.0;
        let mut integral = 0.0;
        let mut prev = ((self.device_c - ref_temp_c) * k).exp();
        let mut mid_ambient = self.true_ambient_c();
        let mut mid_device = self.device_c;
        let mut t = start;
        let mut mid_captured = window_s == 0.0;
        while t < end {
            let next = (t + 1.0).min(end);
            if !mid_captured && next >= mid {
                self.advance_to(mid);
                mid_ambient = self.true_ambient_c();
                mid_device = self.device_c;
                mid_captured = true;
                // fall through and finish the step from the midpoint
                let cur = ((self.device_c - ref_temp_c) * k).exp();
                integral += (mid - t) * (prev + cur) / 2.0;
                prev = cur;
                t = mid;
                continue;
            }
            self.advance_to(next);
            let cur = ((self.device_c - ref_temp_c) * k).exp();
            integral += (next - t) * (prev + cur) / 2.0;
            prev = cur;
            t = next;
        }
        DecayWindow {
            ln_equivalent_at_ref: if integral > 0.0 {
                integral.ln()
            } else {
                f64::NEG_INFINITY
            },
            mid_ambient_c: mid_ambient,
            mid_device_c: mid_device,
        }
    }
}

/// What one decay window looked like: the log-equivalent decay time at the
/// reference temperature and the mid-window ground truth.
#[derive(Debug, Clone, Copy)]
pub struct DecayWindow {
    pub ln_equivalent_at_ref: f64,
    pub mid_ambient_c: f64,
    pub mid_device_c: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_scenario() -> Scenario {
        Scenario {
            name: "step".into(),
            schedule: vec![
                Breakpoint { time_s: 0.0, ambient_c: 25.0 },
                Breakpoint { time_s: 100.0, ambient_c: 25.0 },
                Breakpoint { time_s: 101.0, ambient_c: 45.0 },
            ],
            duration_s: 2000.0,
            device_lag_tau_s: 180.0,
            initial_device_temp_c: None,
        }
    }

    #[test]
    fn interpolation_and_extrapolation() {
        let s = step_scenario();
        assert_eq!(s.ambient_at(-5.0), 25.0);
        assert_eq!(s.ambient_at(50.0), 25.0);
        assert_eq!(s.ambient_at(100.5), 35.0);
        assert_eq!(s.ambient_at(1500.0), 45.0);
    }

    #[test]
    fn validation_catches_bad_schedules() {
        let mut s = step_scenario();
        s.schedule[1].time_s = 0.0;
        assert!(s.validate().is_err());
        let mut s = step_scenario();
        s.duration_s = 50.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn lag_follows_the_first_order_solution() {
        // After the step settles, the device relaxes toward the new ambient
        // with the textbook exponential; oracle evaluated independently.
        let s = step_scenario();
        let mut dev = DeviceThermal::new(&s, None);
        dev.advance_to(101.0);
        let t0 = dev.device_temp_c();
        dev.advance_to(101.0 + 360.0);
        let expected = 45.0 + (t0 - 45.0) * (-360.0f64 / 180.0).exp();
        assert!(
            (dev.device_temp_c() - expected).abs() < 1e-9,
            "device {} vs oracle {expected}",
            dev.device_temp_c()
        );
        // Tau = 0 degenerates to tracking the ambient exactly.
        let mut s0 = step_scenario();
        s0.device_lag_tau_s = 0.0;
        let mut dev = DeviceThermal::new(&s0, None);
        dev.advance_to(600.0);
        assert_eq!(dev.device_temp_c(), 45.0);
    }

    #[test]
    fn constant_scenario_is_a_fixed_point() {
        let s = Scenario::constant(25.0, 1000.0);
        let mut dev = DeviceThermal::new(&s, None);
        let w = dev.decay_window(240.0, 0.07, 25.0);
        assert_eq!(w.mid_device_c, 25.0);
        assert_eq!(w.mid_ambient_c, 25.0);
        // Equivalent decay time equals the nominal window exactly.
        assert_eq!(w.ln_equivalent_at_ref, 240.0f64.ln());
    }

    #[test]
    fn covered_device_runs_hotter() {
        let s = Scenario::constant(40.0, 5000.0);
        let cover = CoverModel::default();
        let mut bare = DeviceThermal::new(&s, None);
        let mut covered = DeviceThermal::new(&s, Some(cover));
        bare.advance_to(4000.0);
        covered.advance_to(4000.0);
        let expect = effective_temperature(&cover, 40.0);
        assert!((covered.device_temp_c() - expect).abs() < 1e-9);
        assert!(covered.device_temp_c() > bare.device_temp_c());
        // Ground-truth ambient reporting is never distorted.
        assert_eq!(covered.true_ambient_c(), 40.0);
    }

    #[test]
    fn kv_round_trip_and_builtins() {
        for name in BUILTIN_SCENARIOS {
            let s = builtin_scenario(name).unwrap();
            assert_eq!(s.name, name);
            s.validate().unwrap();
            let back = Scenario::from_kv(&s.to_kv()).unwrap();
            assert_eq!(back.schedule.len(), s.schedule.len());
            assert_eq!(back.duration_s, s.duration_s);
        }
        assert!(builtin_scenario("nope").is_err());
        // The chamber ramp covers the full published band.
        let ramp = builtin_scenario("chamber-ramp").unwrap();
        let max = ramp
            .schedule
            .iter()
            .map(|b| b.ambient_c)
            .fold(f64::MIN, f64::max);
        assert_eq!(max, 70.0);
    }

    #[test]
    fn room_daynight_runs_a_full_day() {
        let s = builtin_scenario("room-daynight").unwrap();
        assert_eq!(s.duration_s, 86400.0);
    }
}
