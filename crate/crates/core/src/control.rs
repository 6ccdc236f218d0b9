//! Base drive control: PID, command limiting and the watchdog e-stop.

use serde::{Deserialize, Serialize};

use crate::{normalize_angle, Twist2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub i_max: f64,
    pub u_max: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp: 3.0, ki: 0.2, kd: 0.3, i_max: 0.5, u_max: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pid {
    pub gains: PidGains,
    /// Wrap errors to (−π, π].
    pub angular: bool,
    integral: f64,
    prev_error: Option<f64>,
}

impl Pid {
    pub fn new(gains: PidGains, angular: bool) -> Self {
        Self { gains, angular, integral: 0.0, prev_error: None }
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    /// One control step. The integral only advances while the output is not
    /// saturated in the direction of the error.
    pub fn step(&mut self, setpoint: f64, measurement: f64, dt: f64) -> f64 {
        assert!(dt > 0.0, "dt must be positive");
        let g = self.gains;
        let mut e = setpoint - measurement;
        if self.angular {
            e = normalize_angle(e);
        }
        let de = self.prev_error.map_or(0.0, |p| {
            let d = e - p;
            (if self.angular { normalize_angle(d) } else { d }) / dt
        });
        self.prev_error = Some(e);
        let candidate = (self.integral + e * dt).clamp(-g.i_max, g.i_max);
        let raw = g.kp * e + g.ki * candidate + g.kd * de;
        let winding_up = raw.abs() > g.u_max && raw.signum() == e.signum();
        if !winding_up {
            self.integral = candidate;
        }
        (g.kp * e + g.ki * self.integral + g.kd * de).clamp(-g.u_max, g.u_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriveLimits {
    pub v_max: f64,
    pub omega_max: f64,
    pub a_max: f64,
    pub alpha_max: f64,
}

impl Default for DriveLimits {
    fn default() -> Self {
        Self { v_max: 0.5, omega_max: 1.0, a_max: 0.5, alpha_max: 1.0 }
    }
}

fn clamp_to_limits(cmd: &Twist2D, l: &DriveLimits) -> Twist2D {
    let over_v = cmd.v.abs() > l.v_max;
    let over_w = cmd.omega.abs() > l.omega_max;
    if over_v && over_w {
        // one factor for both keeps the curvature v/ω
        let s = (l.v_max / cmd.v.abs()).min(l.omega_max / cmd.omega.abs());
        Twist2D::new(cmd.v * s, cmd.omega * s)
    } else {
        Twist2D::new(cmd.v.clamp(-l.v_max, l.v_max), cmd.omega.clamp(-l.omega_max, l.omega_max))
    }
}

/// Clamps `cmd` to the velocity limits and moves from `prev` toward it no
/// faster than the acceleration limits allow. `prev` is assumed to be a
/// previous output (within limits).
pub fn scale_and_smooth(cmd: &Twist2D, prev: &Twist2D, limits: &DriveLimits, dt: f64) -> Twist2D {
    let target = clamp_to_limits(cmd, limits);
    let prev = clamp_to_limits(prev, limits);
    let (dv, dw) = (target.v - prev.v, target.omega - prev.omega);
    let mut s: f64 = 1.0;
    if dv.abs() > limits.a_max * dt {
        s = s.min(limits.a_max * dt / dv.abs());
    }
    if dw.abs() > limits.alpha_max * dt {
        s = s.min(limits.alpha_max * dt / dw.abs());
    }
    if s >= 1.0 {
        return target;
    }
    Twist2D::new(prev.v + s * dv, prev.omega + s * dw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WatchdogStatus {
    Pass,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Watchdog {
    pub timeout: f64,
    last_command_time: f64,
    latched: bool,
}

impl Default for Watchdog {
    fn default() -> Self {
        Self::new(0.5, 0.0)
    }
}

impl Watchdog {
    pub fn new(timeout: f64, now: f64) -> Self {
        Self { timeout, last_command_time: now, latched: false }
    }

    pub fn feed(&mut self, now: f64) {
        self.last_command_time = now;
    }

    pub fn press_estop(&mut self) {
        self.latched = true;
    }

    pub fn is_latched(&self) -> bool {
        self.latched
    }

    pub fn reset(&mut self, now: f64) {
        self.latched = false;
        self.last_command_time = now;
    }

    pub fn check(&mut self, now: f64) -> WatchdogStatus {
        if now - self.last_command_time > self.timeout {
            self.latched = true;
        }
        if self.latched {
            WatchdogStatus::Stop
        } else {
            WatchdogStatus::Pass
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlParams {
    pub limits: DriveLimits,
    pub heading_pid: PidGains,
    pub watchdog_timeout: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self { limits: DriveLimits::default(), heading_pid: PidGains::default(), watchdog_timeout: 0.5 }
    }
}

/// Everything between the planner and the wheels: limits, smoothing,
/// heading hold for in-place turns, and the latched stop.
#[derive(Debug, Clone)]
pub struct DriveController {
    pub limits: DriveLimits,
    heading: Pid,
    watchdog: Watchdog,
    prev: Twist2D,
}

impl DriveController {
    pub fn new(params: &ControlParams, now: f64) -> Self {
        Self {
            limits: params.limits,
            heading: Pid::new(params.heading_pid, true),
            watchdog: Watchdog::new(params.watchdog_timeout, now),
            prev: Twist2D::ZERO,
        }
    }

    pub fn last_output(&self) -> Twist2D {
        self.prev
    }

    pub fn watchdog(&self) -> &Watchdog {
        &self.watchdog
    }

    pub fn press_estop(&mut self) {
        self.watchdog.press_estop();
        self.prev = Twist2D::ZERO;
    }

    pub fn reset(&mut self, now: f64) {
        self.watchdog.reset(now);
        self.heading.reset();
        self.prev = Twist2D::ZERO;
    }

    /// Command for this tick. `cmd` is `None` when the upstream produced
    /// nothing; the watchdog then starts counting.
    pub fn command(&mut self, now: f64, cmd: Option<Twist2D>, dt: f64) -> Twist2D {
        if cmd.is_some() {
            self.watchdog.feed(now);
        }
        if self.watchdog.check(now) == WatchdogStatus::Stop {
            self.prev = Twist2D::ZERO;
            return Twist2D::ZERO;
        }
        let out = scale_and_smooth(&cmd.unwrap_or(Twist2D::ZERO), &self.prev, &self.limits, dt);
        self.prev = out;
        out
    }

    /// In-place turn toward `heading` through the angular position PID.
    pub fn rotate_to(&mut self, now: f64, heading: f64, measured: f64, dt: f64) -> Twist2D {
        let omega = self.heading.step(heading, measured, dt);
        self.command(now, Some(Twist2D::new(0.0, omega)), dt)
    }

    pub fn reset_heading(&mut self) {
        self.heading.reset();
    }
}
