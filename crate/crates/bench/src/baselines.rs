//! Reactive planners that do not optimize an information objective.

use rand::Rng;
use resin_core::planner::PlanningPrior;
use resin_core::world::{ControlInput, SensorLimits, SensorState};
use resin_core::Vec2;

/// Signed angle in `(-π, π]`.
fn signed_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(std::f64::consts::TAU);
    if t > std::f64::consts::PI {
        t - std::f64::consts::TAU
    } else {
        t
    }
}

/// Proportional pursuit of the closest of `estimates`.
///
/// Turn rate is `gain` times the heading error; the speed set-point is the
/// distance coverable in one step, scaled by the cosine of the heading error
/// so the sensor slows while turning. Both inputs are clamped to `limits`.
/// With no estimates the sensor holds its course.
pub fn nearest_control(
    sensor: &SensorState<f64>,
    estimates: &[Vec2<f64>],
    limits: &SensorLimits<f64>,
    dt: f64,
    gain: f64,
) -> ControlInput<f64> {
    let Some(goal) = estimates
        .iter()
        .copied()
        .min_by(|a, b| sensor.position.distance(*a).total_cmp(&sensor.position.distance(*b)))
    else {
        return ControlInput::zero();
    };
    let d = goal - sensor.position;
    let dist = d.norm();
    let err = if dist > 0.0 {
        signed_angle(d.y.atan2(d.x) - sensor.heading)
    } else {
        0.0
    };
    let v_goal = limits.clamp_speed((dist / dt).min(limits.speed_max) * err.cos().max(0.0));
    limits.clamp_control(ControlInput::new((v_goal - sensor.speed) / dt, gain * err))
}

/// Where a sensor with nothing in reach should head: the next predicted
/// position of the target with the largest remaining gain per metre of
/// travel, distances below half the sensing radius counting as that.
pub fn most_informative_goal(sensor: &SensorState<f64>, prior: &PlanningPrior<f64>) -> Option<Vec2<f64>> {
    let floor = 0.5 * sensor.sensing_radius;
    prior
        .targets()
        .iter()
        .map(|tp| {
            let goal = tp.nominal[0];
            let gain: f64 = tp.gain.iter().sum();
            (gain / sensor.position.distance(goal).max(floor), goal)
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, goal)| goal)
}

/// Independent uniform draws within the control bounds.
pub fn random_control<R: Rng + ?Sized>(limits: &SensorLimits<f64>, rng: &mut R) -> ControlInput<f64> {
    let draw = |rng: &mut R, lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let accel = draw(rng, limits.accel_min, limits.accel_max);
    let turn = draw(rng, limits.turn_min, limits.turn_max);
    ControlInput::new(accel, turn)
}
