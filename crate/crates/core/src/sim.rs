//! Planar point-foot biped: a rigid trunk on two massless telescoping legs.
//!
//! Vectors are `(horizontal, vertical)`; `.y` is height above the ground.
//! Trunk pitch is the counter-clockwise angle of the trunk from vertical,
//! so a positive pitch leans the trunk backwards.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::{self, ControllerParams, Grf, SpeedProfile, SwingArc, SwingTarget, DEFAULT_CLEARANCE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub trunk_mass: f64,
    pub trunk_inertia: f64,
    /// Distance from the trunk CoM down to the hip, m.
    pub com_to_pelvis_offset: f64,
    pub leg_max_length: f64,
    pub gravity: f64,
    pub friction_coeff: f64,
    pub control_dt: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            trunk_mass: 64.0,
            trunk_inertia: 2.2,
            com_to_pelvis_offset: 0.19,
            leg_max_length: 0.9,
            gravity: 9.81,
            friction_coeff: 1.0,
            control_dt: 1e-3,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("trunk_mass", self.trunk_mass),
            ("trunk_inertia", self.trunk_inertia),
            ("com_to_pelvis_offset", self.com_to_pelvis_offset),
            ("leg_max_length", self.leg_max_length),
            ("gravity", self.gravity),
            ("friction_coeff", self.friction_coeff),
            ("control_dt", self.control_dt),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("model {name} must be positive, got {v}")));
            }
        }
        if !(1e-4..=1e-2).contains(&self.control_dt) {
            return Err(Error::invalid(format!(
                "control_dt {} outside [1e-4, 1e-2] s",
                self.control_dt
            )));
        }
        Ok(())
    }

    /// Stable textual identity of the model, used for table fingerprints.
    pub fn describe(&self) -> String {
        format!(
            "mass={};inertia={};offset={};leg={};g={};mu={};dt={}",
            self.trunk_mass,
            self.trunk_inertia,
            self.com_to_pelvis_offset,
            self.leg_max_length,
            self.gravity,
            self.friction_coeff,
            self.control_dt
        )
    }
}

/// Trunk mass the controller's gravity feedforward is designed for. The
/// controller does not observe perturbations of the plant.
pub const NOMINAL_TRUNK_MASS: f64 = 64.0;

/// Scales trunk mass and inertia by independent factors drawn uniformly
/// from `[1 - magnitude, 1 + magnitude]`.
pub fn perturb_model(base: &ModelParams, magnitude: f64, seed: u64) -> Result<ModelParams> {
    if !(0.0..1.0).contains(&magnitude) {
        return Err(Error::invalid(format!("perturbation magnitude {magnitude} outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mass_factor = 1.0 + magnitude * rng.random_range(-1.0..=1.0);
    let inertia_factor = 1.0 + magnitude * rng.random_range(-1.0..=1.0);
    Ok(ModelParams {
        trunk_mass: base.trunk_mass * mass_factor,
        trunk_inertia: base.trunk_inertia * inertia_factor,
        ..*base
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Stance,
    Falling,
    Halted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub time: f64,
    pub com_position: Vector2<f64>,
    pub com_velocity: Vector2<f64>,
    pub trunk_pitch: f64,
    pub trunk_pitch_rate: f64,
    pub stance_foot_position: Vector2<f64>,
    pub swing_foot_position: Vector2<f64>,
    pub swing_foot_velocity: Vector2<f64>,
    pub phase: Phase,
    pub swing_elapsed: f64,
}

impl RobotState {
    /// Upright and motionless with both feet on the ground under the CoM.
    pub fn at_rest(com_height: f64) -> Self {
        RobotState {
            time: 0.0,
            com_position: Vector2::new(0.0, com_height),
            com_velocity: Vector2::zeros(),
            trunk_pitch: 0.0,
            trunk_pitch_rate: 0.0,
            stance_foot_position: Vector2::zeros(),
            swing_foot_position: Vector2::zeros(),
            swing_foot_velocity: Vector2::zeros(),
            phase: Phase::Stance,
            swing_elapsed: 0.0,
        }
    }

    pub fn hip_position(&self, model: &ModelParams) -> Vector2<f64> {
        let (s, c) = self.trunk_pitch.sin_cos();
        self.com_position + model.com_to_pelvis_offset * Vector2::new(s, -c)
    }

    pub fn stance_leg_length(&self, model: &ModelParams) -> f64 {
        (self.stance_foot_position - self.hip_position(model)).norm()
    }

    pub fn swing_leg_length(&self, model: &ModelParams) -> f64 {
        (self.swing_foot_position - self.hip_position(model)).norm()
    }

    /// Translational plus rotational kinetic energy plus potential energy, J.
    pub fn mechanical_energy(&self, model: &ModelParams) -> f64 {
        0.5 * model.trunk_mass * self.com_velocity.norm_squared()
            + 0.5 * model.trunk_inertia * self.trunk_pitch_rate * self.trunk_pitch_rate
            + model.trunk_mass * model.gravity * self.com_position.y
    }

    fn is_finite(&self) -> bool {
        [
            self.time,
            self.com_position.x,
            self.com_position.y,
            self.com_velocity.x,
            self.com_velocity.y,
            self.trunk_pitch,
            self.trunk_pitch_rate,
            self.swing_foot_position.x,
            self.swing_foot_position.y,
            self.swing_foot_velocity.x,
            self.swing_foot_velocity.y,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Per-step measurements, taken between consecutive touchdowns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step_index: usize,
    pub duration: f64,
    /// Largest shortening of the swing leg relative to its lift-off length, m.
    pub max_leg_retraction: f64,
    pub com_height_start: f64,
    pub com_height_end: f64,
    pub trunk_lean_start: f64,
    pub trunk_lean_end: f64,
    pub avg_speed: f64,
    /// CoM distance from its initial position at the start of the step, m.
    pub distance_start: f64,
    /// Integrated absolute joint-equivalent torques, N·m·s.
    pub torque_abs_sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Fell,
    ProfileComplete,
    TimeLimit,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub steps: Vec<StepRecord>,
    pub t_sim: f64,
    pub t_max: f64,
    pub fell: bool,
    pub x_fall: f64,
    pub per_step_speeds: Vec<f64>,
    pub termination: Termination,
}

impl EpisodeResult {
    /// The episode as it would have been scored had it been stopped after
    /// `window` seconds: only steps completed within the window count.
    pub fn truncated(&self, window: f64) -> EpisodeResult {
        if window >= self.t_sim && window >= self.t_max {
            return self.clone();
        }
        let mut elapsed = 0.0;
        let steps: Vec<StepRecord> = self
            .steps
            .iter()
            .take_while(|s| {
                elapsed += s.duration;
                elapsed <= window
            })
            .copied()
            .collect();
        let fell = self.fell && self.t_sim < window;
        EpisodeResult {
            per_step_speeds: steps.iter().map(|s| s.avg_speed).collect(),
            steps,
            t_sim: self.t_sim.min(window),
            t_max: window,
            fell,
            x_fall: self.x_fall,
            termination: if fell { self.termination } else { Termination::TimeLimit },
        }
    }
}

/// Projects a commanded force onto the friction cone of a unilateral
/// contact: `fz >= 0`, `|fx| <= mu * fz`.
pub fn clamp_grf(grf: Grf, friction_coeff: f64) -> Grf {
    let fz = if grf.fz.is_finite() { grf.fz.max(0.0) } else { 0.0 };
    let limit = friction_coeff * fz;
    let fx = if grf.fx.is_finite() { grf.fx.clamp(-limit, limit) } else { 0.0 };
    Grf { fx, fz }
}

/// Force the stance leg can actually apply: clamped to the friction cone,
/// and zero once the leg is stretched past its maximum length.
pub fn applied_grf(state: &RobotState, command: Grf, model: &ModelParams) -> Grf {
    if state.stance_leg_length(model) > model.leg_max_length {
        return Grf { fx: 0.0, fz: 0.0 };
    }
    clamp_grf(command, model.friction_coeff)
}

/// Absolute hip plus knee torque needed to realize `grf` with a two-segment
/// leg whose segments are each half the maximum leg length.
pub fn joint_torque_abs(state: &RobotState, grf: Grf, model: &ModelParams) -> f64 {
    let hip = state.hip_position(model);
    let foot_from_hip = state.stance_foot_position - hip;
    let hip_torque = foot_from_hip.x * grf.fz - foot_from_hip.y * grf.fx;
    let length = foot_from_hip.norm();
    if length <= 0.0 {
        return hip_torque.abs();
    }
    let axial = -(foot_from_hip.x * grf.fx + foot_from_hip.y * grf.fz) / length;
    let segment = 0.5 * model.leg_max_length;
    let lever = (segment * segment - 0.25 * length * length).max(0.0).sqrt();
    hip_torque.abs() + (axial * lever).abs()
}

/// Advances the trunk by one control period under a ground reaction force
/// applied at the stance foot; the swing foot is placed on its target.
///
/// Forces are held over the period and the trunk state is integrated
/// exactly for that constant acceleration.
pub fn integrate_step(state: &RobotState, grf: Grf, swing_target: &SwingTarget, model: &ModelParams) -> Result<RobotState> {
    if state.phase != Phase::Stance {
        return Err(Error::invalid("integrate_step requires a stance state"));
    }
    let grf = clamp_grf(grf, model.friction_coeff);
    let dt = model.control_dt;
    let r = state.stance_foot_position - state.com_position;
    let acc = Vector2::new(grf.fx / model.trunk_mass, grf.fz / model.trunk_mass - model.gravity);
    let ang_acc = (r.x * grf.fz - r.y * grf.fx) / model.trunk_inertia;

    let next = RobotState {
        time: state.time + dt,
        com_position: state.com_position + state.com_velocity * dt + 0.5 * acc * dt * dt,
        com_velocity: state.com_velocity + acc * dt,
        trunk_pitch: state.trunk_pitch + state.trunk_pitch_rate * dt + 0.5 * ang_acc * dt * dt,
        trunk_pitch_rate: state.trunk_pitch_rate + ang_acc * dt,
        stance_foot_position: state.stance_foot_position,
        swing_foot_position: swing_target.pos,
        swing_foot_velocity: swing_target.vel,
        phase: Phase::Stance,
        swing_elapsed: state.swing_elapsed + dt,
    };
    if !next.is_finite() {
        return Err(Error::numerical(format!("non-finite robot state at t = {}", next.time)));
    }
    Ok(next)
}

/// CoM below half the desired height or trunk pitched more than 0.5 rad.
pub fn has_fallen(state: &RobotState, params: &ControllerParams) -> bool {
    state.com_position.y < 0.5 * params.z_des || state.trunk_pitch.abs() > MAX_PITCH
}

const MAX_PITCH: f64 = 0.5;

struct StepTracker {
    start_time: f64,
    start_x: f64,
    start_height: f64,
    start_pitch: f64,
    liftoff_leg_length: f64,
    max_retraction: f64,
    torque_abs_sum: f64,
}

impl StepTracker {
    fn begin(state: &RobotState, model: &ModelParams) -> Self {
        StepTracker {
            start_time: state.time,
            start_x: state.com_position.x,
            start_height: state.com_position.y,
            start_pitch: state.trunk_pitch,
            liftoff_leg_length: state.swing_leg_length(model),
            max_retraction: 0.0,
            torque_abs_sum: 0.0,
        }
    }

    fn finish(&self, state: &RobotState, index: usize, x0: f64) -> StepRecord {
        let duration = state.time - self.start_time;
        StepRecord {
            step_index: index,
            duration,
            max_leg_retraction: self.max_retraction,
            com_height_start: self.start_height,
            com_height_end: state.com_position.y,
            trunk_lean_start: self.start_pitch,
            trunk_lean_end: state.trunk_pitch,
            avg_speed: (state.com_position.x - self.start_x) / duration,
            distance_start: self.start_x - x0,
            torque_abs_sum: self.torque_abs_sum,
        }
    }
}

fn plan_arc(state: &RobotState, params: &ControllerParams, v_tgt: f64) -> Result<SwingArc> {
    let touchdown = Vector2::new(
        state.com_position.x
            + state.com_velocity.x * params.swing_time
            + controller::foot_placement(state, params, v_tgt),
        0.0,
    );
    SwingArc::new(
        state.swing_foot_position,
        Vector2::zeros(),
        touchdown,
        Vector2::zeros(),
        params.swing_time,
        DEFAULT_CLEARANCE,
    )
}

/// Keeps the swing foot above ground and within reach of the hip.
fn constrain_swing_foot(state: &mut RobotState, previous: Vector2<f64>, model: &ModelParams) {
    let hip = state.hip_position(model);
    let mut foot = state.swing_foot_position;
    let mut constrained = false;
    let reach = foot - hip;
    if reach.norm() > model.leg_max_length {
        foot = hip + reach * (model.leg_max_length / reach.norm());
        constrained = true;
    }
    if foot.y < 0.0 {
        foot.y = 0.0;
        constrained = true;
    }
    if constrained {
        state.swing_foot_velocity = (foot - previous) / model.control_dt;
        state.swing_foot_position = foot;
    }
}

/// Runs the stepping controller from `initial_state` until it falls,
/// finishes the speed profile, or reaches `t_max` seconds.
pub fn run_episode(
    params: &ControllerParams,
    profile: &SpeedProfile,
    model: &ModelParams,
    t_max: f64,
    initial_state: &RobotState,
) -> Result<EpisodeResult> {
    if !(t_max > 0.0) {
        return Err(Error::invalid(format!("t_max must be positive, got {t_max}")));
    }
    model.validate()?;
    params.validate(model)?;

    let dt = model.control_dt;
    let weight = NOMINAL_TRUNK_MASS * model.gravity;
    let total_steps = profile.total_steps() as usize;
    let max_ticks = (t_max / dt).round() as u64;
    let t0 = initial_state.time;
    let x0 = initial_state.com_position.x;

    let mut state = RobotState {
        phase: Phase::Stance,
        ..*initial_state
    };
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut tracker = StepTracker::begin(&state, model);
    let mut termination = Termination::TimeLimit;
    let mut arc = plan_arc(&state, params, profile.target_for_step(0).unwrap_or(0.0))?;

    for _ in 0..max_ticks {
        if has_fallen(&state, params) {
            termination = Termination::Fell;
            break;
        }
        let v_tgt = profile.target_for_step(steps.len()).unwrap_or(0.0);
        let command = controller::stance_grf(&state, params, weight);
        let grf = applied_grf(&state, command, model);
        tracker.torque_abs_sum += joint_torque_abs(&state, grf, model) * dt;
        let swing = controller::swing_command(&state, params, v_tgt, &arc, dt);
        let previous_foot = state.swing_foot_position;
        state = match integrate_step(&state, grf, &swing, model) {
            Ok(next) => next,
            Err(_) => {
                termination = Termination::NumericalFailure;
                break;
            }
        };
        constrain_swing_foot(&mut state, previous_foot, model);
        let retraction = tracker.liftoff_leg_length - state.swing_leg_length(model);
        tracker.max_retraction = tracker.max_retraction.max(retraction);

        let foot = state.swing_foot_position;
        let landed = foot.y <= 0.0
            && (state.swing_foot_velocity.y < 0.0 || state.swing_elapsed >= params.swing_time);
        if landed {
            steps.push(tracker.finish(&state, steps.len(), x0));
            let old_stance = state.stance_foot_position;
            state.stance_foot_position = Vector2::new(foot.x, 0.0);
            state.swing_foot_position = old_stance;
            state.swing_foot_velocity = Vector2::zeros();
            state.swing_elapsed = 0.0;
            if steps.len() >= total_steps {
                termination = Termination::ProfileComplete;
                break;
            }
            tracker = StepTracker::begin(&state, model);
            arc = plan_arc(&state, params, profile.target_for_step(steps.len()).unwrap_or(0.0))?;
        }
    }

    let fell = matches!(termination, Termination::Fell | Termination::NumericalFailure);
    let t_sim = match termination {
        Termination::TimeLimit => t_max,
        _ => (state.time - t0).min(t_max),
    };
    let fell = fell && t_sim < t_max;
    Ok(EpisodeResult {
        per_step_speeds: steps.iter().map(|s| s.avg_speed).collect(),
        steps,
        t_sim,
        t_max,
        fell,
        x_fall: if state.com_position.x.is_finite() {
            (state.com_position.x - x0).max(0.0)
        } else {
            0.0
        },
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hold(state: &RobotState) -> SwingTarget {
        SwingTarget {
            pos: state.swing_foot_position,
            vel: Vector2::zeros(),
        }
    }

    #[test]
    fn weight_support_is_equilibrium() {
        let model = ModelParams::default();
        let s = RobotState::at_rest(0.85);
        let grf = Grf { fx: 0.0, fz: model.trunk_mass * model.gravity };
        let next = integrate_step(&s, grf, &hold(&s), &model).unwrap();
        assert_eq!(next.com_position, s.com_position);
        assert_eq!(next.com_velocity, s.com_velocity);
        assert_eq!(next.trunk_pitch_rate, 0.0);
        assert!((next.time - model.control_dt).abs() < 1e-15);
    }

    #[test]
    fn moment_from_horizontal_force() {
        let model = ModelParams::default();
        let mut s = RobotState::at_rest(1.0);
        s.stance_foot_position = Vector2::new(0.0, 0.0);
        let grf = Grf { fx: 10.0, fz: model.trunk_mass * model.gravity };
        let next = integrate_step(&s, grf, &hold(&s), &model).unwrap();
        let ang_acc = next.trunk_pitch_rate / model.control_dt;
        assert!((ang_acc - 10.0 / 2.2).abs() < 1e-9, "{ang_acc}");
    }

    #[test]
    fn ballistic_flight_matches_closed_form() {
        let model = ModelParams::default();
        let z0 = 10.0;
        let mut s = RobotState::at_rest(z0);
        let zero = Grf { fx: 0.0, fz: 0.0 };
        for _ in 0..1000 {
            s = integrate_step(&s, zero, &hold(&s), &model).unwrap();
        }
        let t = s.time;
        let expected = z0 - 0.5 * model.gravity * t * t;
        assert!((s.com_position.y - expected).abs() < 1e-3);
    }

    #[test]
    fn free_motion_conserves_energy() {
        let model = ModelParams::default();
        let mut s = RobotState::at_rest(5.0);
        s.com_velocity = Vector2::new(0.7, 1.3);
        s.trunk_pitch_rate = 0.4;
        let e0 = s.mechanical_energy(&model);
        let zero = Grf { fx: 0.0, fz: 0.0 };
        for _ in 0..1000 {
            s = integrate_step(&s, zero, &hold(&s), &model).unwrap();
        }
        let rel = (s.mechanical_energy(&model) - e0).abs() / e0;
        assert!(rel < 1e-6, "relative drift {rel}");
    }

    #[test]
    fn non_finite_state_is_numerical_failure() {
        let model = ModelParams::default();
        let mut s = RobotState::at_rest(0.85);
        s.com_velocity.x = f64::INFINITY;
        let grf = Grf { fx: 0.0, fz: 0.0 };
        assert!(matches!(
            integrate_step(&s, grf, &hold(&s), &model),
            Err(Error::NumericalFailure(_))
        ));
    }

    #[test]
    fn friction_cone_clamp() {
        let g = clamp_grf(Grf { fx: 500.0, fz: 100.0 }, 1.0);
        assert_eq!(g, Grf { fx: 100.0, fz: 100.0 });
        let g = clamp_grf(Grf { fx: -5.0, fz: -50.0 }, 1.0);
        assert_eq!(g, Grf { fx: 0.0, fz: 0.0 });
    }

    #[test]
    fn immediate_fall() {
        let params = ControllerParams::reference();
        let model = ModelParams::default();
        let mut s = RobotState::at_rest(params.z_des);
        s.trunk_pitch = 0.8;
        let ep = run_episode(&params, &SpeedProfile::easy(), &model, 3.5, &s).unwrap();
        assert!(ep.fell);
        assert!(ep.steps.is_empty());
        assert_eq!(ep.t_sim, 0.0);
        assert_eq!(ep.x_fall, 0.0);
    }

    #[test]
    fn perturbation_identity_range_and_determinism() {
        let base = ModelParams::default();
        assert_eq!(perturb_model(&base, 0.0, 3).unwrap(), base);
        for seed in 0..200 {
            let p = perturb_model(&base, 0.15, seed).unwrap();
            let fm = p.trunk_mass / base.trunk_mass;
            let fi = p.trunk_inertia / base.trunk_inertia;
            assert!((0.85..=1.15).contains(&fm) && (0.85..=1.15).contains(&fi));
            assert_eq!(p.leg_max_length, base.leg_max_length);
        }
        assert_eq!(perturb_model(&base, 0.15, 7).unwrap(), perturb_model(&base, 0.15, 7).unwrap());
        assert!(perturb_model(&base, 1.0, 7).is_err());
    }

    #[test]
    fn truncation_keeps_window_steps() {
        let params = ControllerParams::reference();
        let model = ModelParams::default();
        let ep = run_episode(&params, &SpeedProfile::easy(), &model, 10.0, &RobotState::at_rest(params.z_des)).unwrap();
        let short = ep.truncated(2.0);
        assert_eq!(short.t_max, 2.0);
        let total: f64 = short.steps.iter().map(|s| s.duration).sum();
        assert!(total <= 2.0 + 1e-12);
        assert!(short.steps.len() < ep.steps.len());
    }
}
