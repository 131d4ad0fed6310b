//! Ground truth: targets moving through a rectangular workspace, unicycle
//! sensors, and FOV-gated noisy velocity measurements.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::scalar::Real;

pub type SensorId = u32;
pub type TargetId = u32;

/// Axis-aligned rectangle `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkspaceSpec<T> {
    width: T,
    height: T,
}

impl<T: Real> WorkspaceSpec<T> {
    pub fn new(width: T, height: T) -> Result<Self> {
        if !(width > T::zero() && height > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "workspace must have positive extent, got {width} x {height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> T {
        self.width
    }

    pub fn height(&self) -> T {
        self.height
    }

    pub fn contains(&self, p: Vec2<T>) -> bool {
        p.x >= T::zero() && p.x <= self.width && p.y >= T::zero() && p.y <= self.height
    }

    pub fn clamp(&self, p: Vec2<T>) -> Vec2<T> {
        Vec2::new(
            p.x.max(T::zero()).min(self.width),
            p.y.max(T::zero()).min(self.height),
        )
    }

    /// Euclidean distance from `p` to the rectangle (zero inside).
    pub fn outside_distance(&self, p: Vec2<T>) -> T {
        p.distance(self.clamp(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetState<T> {
    pub id: TargetId,
    pub position: Vec2<T>,
    pub velocity: Vec2<T>,
    pub active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorState<T> {
    pub id: SensorId,
    pub position: Vec2<T>,
    /// Radians in `[0, 2π)`.
    pub heading: T,
    pub speed: T,
    pub sensing_radius: T,
}

impl<T: Real> SensorState<T> {
    pub fn new(id: SensorId, position: Vec2<T>, heading: T, speed: T, sensing_radius: T) -> Self {
        Self {
            id,
            position,
            heading: wrap_angle(heading),
            speed,
            sensing_radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput<T> {
    pub accel: T,
    pub turn_rate: T,
}

impl<T: Real> ControlInput<T> {
    pub fn new(accel: T, turn_rate: T) -> Self {
        Self { accel, turn_rate }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }
}

/// Box constraints on sensor speed and control inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorLimits<T> {
    pub speed_min: T,
    pub speed_max: T,
    pub accel_min: T,
    pub accel_max: T,
    pub turn_min: T,
    pub turn_max: T,
}

impl<T: Real> SensorLimits<T> {
    /// Bounds of the mobile-sensor experiment: speed in [0, 3] m/s,
    /// acceleration in [-5, 5] m/s², turn rate in [-π/6, π/6] rad/s.
    pub fn mobile_default() -> Self {
        let turn = T::PI() / T::lit(6.0);
        Self {
            speed_min: T::zero(),
            speed_max: T::lit(3.0),
            accel_min: T::lit(-5.0),
            accel_max: T::lit(5.0),
            turn_min: -turn,
            turn_max: turn,
        }
    }

    /// Immobile sensor: every control except zero is out of bounds.
    pub fn stationary() -> Self {
        Self {
            speed_min: T::zero(),
            speed_max: T::zero(),
            accel_min: T::zero(),
            accel_max: T::zero(),
            turn_min: T::zero(),
            turn_max: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.speed_min >= T::zero()
            && self.speed_min <= self.speed_max
            && self.accel_min <= self.accel_max
            && self.turn_min <= self.turn_max;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("inconsistent sensor limits {self:?}")))
        }
    }

    pub fn admits(&self, u: &ControlInput<T>) -> bool {
        u.accel >= self.accel_min
            && u.accel <= self.accel_max
            && u.turn_rate >= self.turn_min
            && u.turn_rate <= self.turn_max
    }

    pub fn clamp_control(&self, u: ControlInput<T>) -> ControlInput<T> {
        ControlInput::new(
            u.accel.max(self.accel_min).min(self.accel_max),
            u.turn_rate.max(self.turn_min).min(self.turn_max),
        )
    }

    pub fn clamp_speed(&self, v: T) -> T {
        v.max(self.speed_min).min(self.speed_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement<T> {
    pub sensor_id: SensorId,
    pub target_id: TargetId,
    pub time_step: u32,
    /// `time_step · dt`, seconds.
    pub time: T,
    pub observed_position: Vec2<T>,
    pub observed_velocity: Vec2<T>,
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle<T: Real>(theta: T) -> T {
    let two_pi = T::TAU();
    let mut w = theta % two_pi;
    if w < T::zero() {
        w = w + two_pi;
    }
    if w >= two_pi {
        w = T::zero();
    }
    w
}

/// One step of the unicycle model: position advances with the current
/// speed and heading, then heading and speed integrate the input.
pub fn step_sensor<T: Real>(
    state: &SensorState<T>,
    input: &ControlInput<T>,
    limits: &SensorLimits<T>,
    dt: T,
) -> Result<SensorState<T>> {
    if !limits.admits(input) {
        return Err(Error::BoundsViolation(format!(
            "accel {} not in [{}, {}] or turn rate {} not in [{}, {}]",
            input.accel,
            limits.accel_min,
            limits.accel_max,
            input.turn_rate,
            limits.turn_min,
            limits.turn_max
        )));
    }
    Ok(integrate_unicycle(state, input, limits, dt))
}

/// [`step_sensor`] without the bounds check, for callers that have
/// already validated a whole control sequence.
pub(crate) fn integrate_unicycle<T: Real>(
    state: &SensorState<T>,
    input: &ControlInput<T>,
    limits: &SensorLimits<T>,
    dt: T,
) -> SensorState<T> {
    let (sin, cos) = state.heading.sin_cos();
    let position = state.position + Vec2::new(cos, sin) * (state.speed * dt);
    SensorState {
        id: state.id,
        position,
        heading: wrap_angle(state.heading + input.turn_rate * dt),
        speed: limits.clamp_speed(state.speed + input.accel * dt),
        sensing_radius: state.sensing_radius,
    }
}

/// Closed-disk field of view: `‖sensor − point‖ ≤ r`.
pub fn in_fov<T: Real>(sensor: &SensorState<T>, point: Vec2<T>) -> bool {
    let r = sensor.sensing_radius;
    (sensor.position - point).norm_sq() <= r * r
}

/// Measures every active target inside the sensor's FOV. Velocities carry
/// isotropic Gaussian noise of standard deviation `noise_std`; positions are
/// reported exactly.
pub fn sense<T: Real, R: Rng + ?Sized>(
    sensor: &SensorState<T>,
    targets: &[TargetState<T>],
    time_step: u32,
    dt: T,
    noise_std: T,
    rng: &mut R,
) -> Vec<Measurement<T>> {
    targets
        .iter()
        .filter(|t| t.active && in_fov(sensor, t.position))
        .map(|t| {
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            let noise = Vec2::new(T::lit(nx), T::lit(ny)) * noise_std;
            Measurement {
                sensor_id: sensor.id,
                target_id: t.id,
                time_step,
                time: T::from_u32(time_step).expect("step fits scalar") * dt,
                observed_position: t.position,
                observed_velocity: t.velocity + noise,
            }
        })
        .collect()
}

/// Motion pattern of a target, as a function of time since entry.
#[derive(Debug, Clone, PartialEq)]
pub enum Pattern<T> {
    Circle {
        center: Vec2<T>,
        radius: T,
        /// rad/s, sign gives direction.
        rate: T,
        phase: T,
    },
    /// Lemniscate of Gerono: `(Ax sin θ, Ay sin θ cos θ)`, `θ = rate·t + phase`.
    FigureEight {
        center: Vec2<T>,
        amp_x: T,
        amp_y: T,
        rate: T,
        phase: T,
    },
    /// Constant-speed traversal along `heading` with a sinusoidal lateral
    /// offset.
    SineLane {
        start: Vec2<T>,
        heading: T,
        speed: T,
        amplitude: T,
        wavelength: T,
    },
    /// Smooth back-and-forth along a segment through `center`.
    StraightBounce {
        center: Vec2<T>,
        heading: T,
        half_length: T,
        rate: T,
        phase: T,
    },
    /// Rotation whose radius breathes between `r_min` and `r_max`.
    Spiral {
        center: Vec2<T>,
        r_min: T,
        r_max: T,
        rate: T,
        radial_rate: T,
        phase: T,
    },
    /// Cyclic tour of waypoints with cosine easing, so velocity vanishes at
    /// every waypoint and stays continuous.
    RandomWaypoint {
        waypoints: Vec<Vec2<T>>,
        segment_duration: T,
    },
}

impl<T: Real> Pattern<T> {
    /// Draws `count` waypoints uniformly in the box `[lo, hi]`.
    pub fn random_waypoint<R: Rng + ?Sized>(
        rng: &mut R,
        lo: Vec2<T>,
        hi: Vec2<T>,
        count: usize,
        segment_duration: T,
    ) -> Self {
        let waypoints = (0..count.max(2))
            .map(|_| {
                let ux: f64 = rng.random();
                let uy: f64 = rng.random();
                Vec2::new(
                    lo.x + (hi.x - lo.x) * T::lit(ux),
                    lo.y + (hi.y - lo.y) * T::lit(uy),
                )
            })
            .collect();
        Pattern::RandomWaypoint {
            waypoints,
            segment_duration,
        }
    }

    /// Closed-form position at local time `t`.
    pub fn position(&self, t: T) -> Vec2<T> {
        match self {
            Pattern::Circle {
                center,
                radius,
                rate,
                phase,
            } => {
                let th = *phase + *rate * t;
                *center + Vec2::new(th.cos(), th.sin()) * *radius
            }
            Pattern::FigureEight {
                center,
                amp_x,
                amp_y,
                rate,
                phase,
            } => {
                let th = *rate * t + *phase;
                *center + Vec2::new(*amp_x * th.sin(), *amp_y * th.sin() * th.cos())
            }
            Pattern::SineLane {
                start,
                heading,
                speed,
                amplitude,
                wavelength,
            } => {
                let (dir, lat) = frame(*heading);
                let s = *speed * t;
                *start + dir * s + lat * (*amplitude * (T::TAU() * s / *wavelength).sin())
            }
            Pattern::StraightBounce {
                center,
                heading,
                half_length,
                rate,
                phase,
            } => {
                let (dir, _) = frame(*heading);
                *center + dir * (*half_length * (*rate * t + *phase).sin())
            }
            Pattern::Spiral {
                center,
                r_min,
                r_max,
                rate,
                radial_rate,
                phase,
            } => {
                let half = T::lit(0.5);
                let rho = *r_min + (*r_max - *r_min) * half * (T::one() - (*radial_rate * t).cos());
                let th = *phase + *rate * t;
                *center + Vec2::new(th.cos(), th.sin()) * rho
            }
            Pattern::RandomWaypoint {
                waypoints,
                segment_duration,
            } => {
                let (a, b, u) = waypoint_segment(waypoints, *segment_duration, t);
                let s = T::lit(0.5) * (T::one() - (T::PI() * u).cos());
                a + (b - a) * s
            }
        }
    }

    /// Closed-form velocity at local time `t`.
    pub fn velocity(&self, t: T) -> Vec2<T> {
        match self {
            Pattern::Circle {
                radius, rate, phase, ..
            } => {
                let th = *phase + *rate * t;
                Vec2::new(-th.sin(), th.cos()) * (*radius * *rate)
            }
            Pattern::FigureEight {
                amp_x,
                amp_y,
                rate,
                phase,
                ..
            } => {
                let th = *rate * t + *phase;
                let two = T::lit(2.0);
                Vec2::new(*amp_x * *rate * th.cos(), *amp_y * *rate * (two * th).cos())
            }
            Pattern::SineLane {
                heading,
                speed,
                amplitude,
                wavelength,
                ..
            } => {
                let (dir, lat) = frame(*heading);
                let k = T::TAU() / *wavelength;
                let s = *speed * t;
                dir * *speed + lat * (*amplitude * k * *speed * (k * s).cos())
            }
            Pattern::StraightBounce {
                heading,
                half_length,
                rate,
                phase,
                ..
            } => {
                let (dir, _) = frame(*heading);
                dir * (*half_length * *rate * (*rate * t + *phase).cos())
            }
            Pattern::Spiral {
                r_min,
                r_max,
                rate,
                radial_rate,
                phase,
                ..
            } => {
                let half = T::lit(0.5);
                let span = *r_max - *r_min;
                let rho = *r_min + span * half * (T::one() - (*radial_rate * t).cos());
                let rho_dot = span * half * *radial_rate * (*radial_rate * t).sin();
                let th = *phase + *rate * t;
                let radial = Vec2::new(th.cos(), th.sin());
                let tangential = Vec2::new(-th.sin(), th.cos());
                radial * rho_dot + tangential * (rho * *rate)
            }
            Pattern::RandomWaypoint {
                waypoints,
                segment_duration,
            } => {
                let (a, b, u) = waypoint_segment(waypoints, *segment_duration, t);
                let ds = T::lit(0.5) * T::PI() * (T::PI() * u).sin() / *segment_duration;
                (b - a) * ds
            }
        }
    }
}

fn frame<T: Real>(heading: T) -> (Vec2<T>, Vec2<T>) {
    let (s, c) = heading.sin_cos();
    (Vec2::new(c, s), Vec2::new(-s, c))
}

fn waypoint_segment<T: Real>(waypoints: &[Vec2<T>], duration: T, t: T) -> (Vec2<T>, Vec2<T>, T) {
    let n = waypoints.len();
    let tau = (t / duration).max(T::zero());
    let idx = tau.floor();
    let u = tau - idx;
    let i = idx.to_usize().unwrap_or(0) % n;
    (waypoints[i], waypoints[(i + 1) % n], u)
}

/// A target's motion pattern plus the step interval during which it is
/// inside the workspace.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGenerator<T> {
    pub target_id: TargetId,
    pub pattern: Pattern<T>,
    pub entry_step: u32,
    pub exit_step: u32,
}

impl<T: Real> TrajectoryGenerator<T> {
    pub fn new(target_id: TargetId, pattern: Pattern<T>, entry_step: u32, exit_step: u32) -> Self {
        Self {
            target_id,
            pattern,
            entry_step,
            exit_step,
        }
    }

    fn entry_time(&self, dt: T) -> T {
        T::from_u32(self.entry_step).expect("step fits scalar") * dt
    }

    /// State at the entry step.
    pub fn spawn(&self) -> TargetState<T> {
        TargetState {
            id: self.target_id,
            position: self.pattern.position(T::zero()),
            velocity: self.pattern.velocity(T::zero()),
            active: true,
        }
    }

    /// Generator velocity at absolute time `t`.
    pub fn velocity_at(&self, t: T, dt: T) -> Vec2<T> {
        self.pattern.velocity(t - self.entry_time(dt))
    }
}

/// Advances a target from absolute time `t` to `t + dt`.
///
/// The displacement uses the generator velocity at the interval midpoint.
/// Past `exit_step`, or on leaving the workspace, the target is deactivated
/// and keeps its last position.
pub fn step_target<T: Real>(
    gen: &TrajectoryGenerator<T>,
    state: &TargetState<T>,
    t: T,
    dt: T,
    workspace: &WorkspaceSpec<T>,
) -> TargetState<T> {
    let mut next = *state;
    if !state.active {
        return next;
    }
    let exit_t = T::from_u32(gen.exit_step).expect("step fits scalar") * dt;
    // half-step slack absorbs rounding in t = k·dt
    if t + T::lit(0.5) * dt > exit_t {
        next.active = false;
        return next;
    }
    let mid = gen.velocity_at(t + T::lit(0.5) * dt, dt);
    let position = state.position + mid * dt;
    if !workspace.contains(position) {
        next.active = false;
        return next;
    }
    next.position = position;
    next.velocity = gen.velocity_at(t + dt, dt);
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn sensor(x: f64, y: f64, heading: f64, speed: f64) -> SensorState<f64> {
        SensorState::new(0, Vec2::new(x, y), heading, speed, 5.0)
    }

    #[test]
    fn straight_line_integration() {
        let s = step_sensor(
            &sensor(0.0, 0.0, 0.0, 1.0),
            &ControlInput::zero(),
            &SensorLimits::mobile_default(),
            0.5,
        )
        .unwrap();
        assert_eq!(s.position, Vec2::new(0.5, 0.0));
        assert_eq!(s.heading, 0.0);
        assert_eq!(s.speed, 1.0);
    }

    #[test]
    fn axis_aligned_acceleration() {
        let s = step_sensor(
            &sensor(0.0, 0.0, FRAC_PI_2, 2.0),
            &ControlInput::new(1.0, 0.0),
            &SensorLimits::mobile_default(),
            0.5,
        )
        .unwrap();
        assert!(s.position.x.abs() < 1e-15);
        assert_eq!(s.position.y, 1.0);
        assert_eq!(s.speed, 2.5);
    }

    #[test]
    fn speed_clamped_at_max() {
        let s = step_sensor(
            &sensor(0.0, 0.0, 0.0, 3.0),
            &ControlInput::new(5.0, 0.0),
            &SensorLimits::mobile_default(),
            0.5,
        )
        .unwrap();
        assert_eq!(s.speed, 3.0);
    }

    #[test]
    fn out_of_bounds_input_rejected() {
        let limits = SensorLimits::mobile_default();
        let err = step_sensor(&sensor(0.0, 0.0, 0.0, 1.0), &ControlInput::new(5.5, 0.0), &limits, 0.5);
        assert!(matches!(err, Err(Error::BoundsViolation(_))));
        let err = step_sensor(&sensor(0.0, 0.0, 0.0, 1.0), &ControlInput::new(0.0, 1.0), &limits, 0.5);
        assert!(matches!(err, Err(Error::BoundsViolation(_))));
    }

    #[test]
    fn heading_wraps_into_range() {
        let limits = SensorLimits::mobile_default();
        let s = step_sensor(
            &sensor(0.0, 0.0, 0.1, 0.0),
            &ControlInput::new(0.0, -PI / 6.0),
            &limits,
            0.5,
        )
        .unwrap();
        assert!(s.heading >= 0.0 && s.heading < 2.0 * PI);
        assert_relative_eq!(s.heading, 2.0 * PI + 0.1 - PI / 12.0, epsilon = 1e-12);
        assert_eq!(wrap_angle(-1e-18_f64), 0.0);
    }

    #[test]
    fn fov_boundary_is_inclusive() {
        let s = sensor(0.0, 0.0, 0.0, 0.0);
        assert!(in_fov(&s, Vec2::new(3.0, 4.0)));
        assert!(!in_fov(&s, Vec2::new(3.1, 4.0)));
    }

    #[test]
    fn circle_returns_to_start_after_one_period() {
        let dt = 0.5;
        let gen = TrajectoryGenerator::new(
            0,
            Pattern::Circle {
                center: Vec2::new(5.0, 5.0),
                radius: 2.0,
                rate: FRAC_PI_4,
                phase: 0.3,
            },
            0,
            1000,
        );
        let ws = WorkspaceSpec::new(10.0, 10.0).unwrap();
        let start = gen.spawn();
        let mut state = start;
        // period 8 s = 16 steps
        for k in 0..16 {
            state = step_target(&gen, &state, k as f64 * dt, dt, &ws);
        }
        assert!(state.active);
        assert!(state.position.distance(start.position) < 1e-6);
    }

    #[test]
    fn straight_target_advances() {
        let dt = 0.5;
        let gen = TrajectoryGenerator::new(
            3,
            Pattern::SineLane {
                start: Vec2::new(1.0, 1.0),
                heading: 0.0,
                speed: 1.0,
                amplitude: 0.0,
                wavelength: 1.0,
            },
            0,
            100,
        );
        let ws = WorkspaceSpec::new(10.0, 10.0).unwrap();
        let s0 = gen.spawn();
        let s1 = step_target(&gen, &s0, 0.0, dt, &ws);
        assert_relative_eq!(s1.position.x - s0.position.x, 0.5, epsilon = 1e-15);
        assert_relative_eq!(s1.position.y, s0.position.y, epsilon = 1e-15);
    }

    #[test]
    fn exit_deactivates_without_moving() {
        let dt = 0.5;
        let gen = TrajectoryGenerator::new(
            1,
            Pattern::SineLane {
                start: Vec2::new(1.0, 1.0),
                heading: 0.0,
                speed: 1.0,
                amplitude: 0.0,
                wavelength: 1.0,
            },
            0,
            4,
        );
        let ws = WorkspaceSpec::new(10.0, 10.0).unwrap();
        let s = gen.spawn();
        let after = step_target(&gen, &s, 2.5, dt, &ws);
        assert!(!after.active);
        assert_eq!(after.position, s.position);
    }

    #[test]
    fn leaving_workspace_deactivates() {
        let dt = 0.5;
        let gen = TrajectoryGenerator::new(
            1,
            Pattern::SineLane {
                start: Vec2::new(9.9, 1.0),
                heading: 0.0,
                speed: 1.0,
                amplitude: 0.0,
                wavelength: 1.0,
            },
            0,
            100,
        );
        let ws = WorkspaceSpec::new(10.0, 10.0).unwrap();
        let after = step_target(&gen, &gen.spawn(), 0.0, dt, &ws);
        assert!(!after.active);
    }

    #[test]
    fn out_of_fov_target_yields_no_measurement() {
        let mut rng = crate::rng::stream(1, &[]);
        let s = sensor(0.0, 0.0, 0.0, 0.0);
        let targets = [TargetState {
            id: 0,
            position: Vec2::new(6.0, 0.0),
            velocity: Vec2::new(1.0, 0.0),
            active: true,
        }];
        assert!(sense(&s, &targets, 0, 0.5, 0.1, &mut rng).is_empty());
    }

    #[test]
    fn noise_free_measurement_is_exact() {
        let mut rng = crate::rng::stream(1, &[]);
        let s = sensor(0.0, 0.0, 0.0, 0.0);
        let v = Vec2::new(0.3, -0.7);
        let targets = [TargetState {
            id: 4,
            position: Vec2::new(1.0, 1.0),
            velocity: v,
            active: true,
        }];
        let m = sense(&s, &targets, 3, 0.5, 0.0, &mut rng);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].observed_velocity, v);
        assert_eq!(m[0].observed_position, Vec2::new(1.0, 1.0));
        assert_eq!(m[0].time, 1.5);
        assert_eq!(m[0].target_id, 4);
    }

    #[test]
    fn measurement_noise_std_matches_configuration() {
        let mut rng = crate::rng::stream(2024, &[crate::rng::tag::MEASUREMENT]);
        let s = sensor(0.0, 0.0, 0.0, 0.0);
        let targets = [TargetState {
            id: 0,
            position: Vec2::new(1.0, 0.0),
            velocity: Vec2::zero(),
            active: true,
        }];
        let draws: Vec<f64> = (0..10_000)
            .flat_map(|k| sense(&s, &targets, k, 0.5, 0.1, &mut rng))
            .map(|m| m.observed_velocity.x)
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let std = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.1).abs() < 0.005, "empirical std {std}");
    }

    #[test]
    fn generator_velocity_is_derivative_of_position() {
        let mut rng = crate::rng::stream(3, &[]);
        let patterns = vec![
            Pattern::Circle { center: Vec2::new(5.0, 5.0), radius: 2.0, rate: -0.3, phase: 1.0 },
            Pattern::FigureEight { center: Vec2::new(5.0, 5.0), amp_x: 3.0, amp_y: 2.0, rate: 0.2, phase: 0.1 },
            Pattern::SineLane { start: Vec2::new(0.0, 5.0), heading: 0.3, speed: 0.8, amplitude: 1.0, wavelength: 6.0 },
            Pattern::StraightBounce { center: Vec2::new(5.0, 5.0), heading: 0.7, half_length: 2.0, rate: 0.4, phase: 0.0 },
            Pattern::Spiral { center: Vec2::new(5.0, 5.0), r_min: 0.5, r_max: 3.0, rate: 0.3, radial_rate: 0.1, phase: 0.0 },
            Pattern::random_waypoint(&mut rng, Vec2::new(1.0, 1.0), Vec2::new(9.0, 9.0), 5, 6.0),
        ];
        let h = 1e-5;
        for p in &patterns {
            for i in 0..40 {
                let t = 0.37 * i as f64 + 0.01;
                let fd = (p.position(t + h) - p.position(t - h)) * (0.5 / h);
                let v = p.velocity(t);
                assert!((fd - v).norm() < 1e-6, "{p:?} at t={t}: fd {fd:?} vs {v:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn step_preserves_bounds(
            heading in 0.0..(2.0 * PI),
            speed in 0.0..3.0f64,
            accel in -5.0..5.0f64,
            turn in -(PI / 6.0)..(PI / 6.0),
            dt in 0.01..2.0f64,
        ) {
            let limits = SensorLimits::mobile_default();
            let s = step_sensor(&sensor(1.0, 2.0, heading, speed), &ControlInput::new(accel, turn), &limits, dt).unwrap();
            prop_assert!(s.speed >= 0.0 && s.speed <= 3.0);
            prop_assert!(s.heading >= 0.0 && s.heading < 2.0 * PI);
        }

        #[test]
        fn fov_is_translation_invariant(
            sx in -50.0..50.0f64, sy in -50.0..50.0f64,
            px in -50.0..50.0f64, py in -50.0..50.0f64,
            dx in -8.0..8.0f64, dy in -8.0..8.0f64,
        ) {
            // dyadic offsets keep the translation exact in floating point
            let (dx, dy) = ((dx * 64.0).round() / 64.0, (dy * 64.0).round() / 64.0);
            let a = sensor(sx, sy, 0.0, 0.0);
            let mut b = a;
            b.position = b.position + Vec2::new(dx, dy);
            let p = Vec2::new(px, py);
            let q = p + Vec2::new(dx, dy);
            let exact = (a.position - p) == (b.position - q);
            prop_assume!(exact);
            prop_assert_eq!(in_fov(&a, p), in_fov(&b, q));
        }

        #[test]
        fn measurement_count_matches_in_range_targets(
            xs in proptest::collection::vec((0.0..20.0f64, 0.0..20.0f64, any::<bool>()), 0..12),
            seed in any::<u64>(),
        ) {
            let s = SensorState::new(0, Vec2::new(10.0, 10.0), 0.0, 0.0, 5.0);
            let targets: Vec<_> = xs.iter().enumerate().map(|(i, &(x, y, active))| TargetState {
                id: i as u32, position: Vec2::new(x, y), velocity: Vec2::zero(), active,
            }).collect();
            let expected = targets.iter().filter(|t| t.active && t.position.distance(s.position) <= 5.0).count();
            let mut rng = crate::rng::stream(seed, &[]);
            prop_assert_eq!(sense(&s, &targets, 0, 0.5, 0.1, &mut rng).len(), expected);
        }

        #[test]
        fn sense_is_deterministic_per_seed(seed in any::<u64>(), k in 0u32..1000) {
            let s = sensor(0.0, 0.0, 0.0, 0.0);
            let targets: Vec<_> = (0..4).map(|i| TargetState {
                id: i, position: Vec2::new(i as f64, 0.5), velocity: Vec2::new(0.2, 0.1), active: true,
            }).collect();
            let a = sense(&s, &targets, k, 0.5, 0.1, &mut crate::rng::stream(seed, &[k as u64]));
            let b = sense(&s, &targets, k, 0.5, 0.1, &mut crate::rng::stream(seed, &[k as u64]));
            let bits = |m: &Vec<Measurement<f64>>| m.iter().map(|m| (m.observed_velocity.x.to_bits(), m.observed_velocity.y.to_bits())).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a), bits(&b));
        }
    }
}
