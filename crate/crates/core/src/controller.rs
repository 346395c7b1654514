//! Reactive stepping policy: PD laws on trunk pitch and CoM height in
//! stance, a Raibert-style foot placement law, and a quintic swing
//! trajectory.

use std::fmt;
use std::path::Path;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::kv;
use crate::sim::{ModelParams, RobotState};

/// Which subset of [`ControllerParams`] is exposed to the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    FiveD,
    NineD,
}

impl Variant {
    /// Names of the free parameters, in optimizer order.
    pub fn names(self) -> &'static [&'static str] {
        match self {
            Variant::FiveD => &["K_pt", "K_dt", "k", "C", "T"],
            Variant::NineD => &ALL_NAMES,
        }
    }

    pub fn dim(self) -> usize {
        self.names().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::FiveD => "5d",
            Variant::NineD => "9d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "5d" | "fived" | "5" => Ok(Variant::FiveD),
            "9d" | "nined" | "9" => Ok(Variant::NineD),
            other => Err(Error::config(format!("unknown controller variant `{other}`"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const ALL_NAMES: [&str; 9] = ["K_pt", "K_dt", "theta_des", "K_pz", "K_dz", "z_des", "k", "C", "T"];

/// Point in the controller search space. All nine gains are always
/// populated; `variant` says which of them are free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerParams {
    /// Trunk pitch stiffness, N·m/rad.
    pub k_pt: f64,
    /// Trunk pitch damping, N·m·s/rad.
    pub k_dt: f64,
    pub theta_des: f64,
    /// CoM height stiffness, N/m.
    pub k_pz: f64,
    /// CoM height damping, N·s/m.
    pub k_dz: f64,
    pub z_des: f64,
    /// Speed feedback gain of the foot placement law, s.
    pub k_speed: f64,
    /// Weight on the stance-foot-to-CoM distance in the foot placement law.
    pub c_dist: f64,
    /// Swing duration, s.
    pub swing_time: f64,
    pub variant: Variant,
}

const REFERENCE_FIXTURE: &str = include_str!("../fixtures/reference.params");

impl ControllerParams {
    /// The shipped hand-tuned point. Its height and pitch settings are the
    /// frozen values of the 5-D controller.
    pub fn reference() -> Self {
        Self::from_text(REFERENCE_FIXTURE).expect("shipped reference fixture parses")
    }

    pub fn all_values(&self) -> [f64; 9] {
        [
            self.k_pt,
            self.k_dt,
            self.theta_des,
            self.k_pz,
            self.k_dz,
            self.z_des,
            self.k_speed,
            self.c_dist,
            self.swing_time,
        ]
    }

    fn from_all_values(v: [f64; 9], variant: Variant) -> Self {
        ControllerParams {
            k_pt: v[0],
            k_dt: v[1],
            theta_des: v[2],
            k_pz: v[3],
            k_dz: v[4],
            z_des: v[5],
            k_speed: v[6],
            c_dist: v[7],
            swing_time: v[8],
            variant,
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        let idx = ALL_NAMES.iter().position(|n| *n == name)?;
        Some(self.all_values()[idx])
    }

    /// Free parameter values in `self.variant` order.
    pub fn free_values(&self) -> Vec<f64> {
        self.variant
            .names()
            .iter()
            .map(|n| self.get(n).expect("variant names are parameter names"))
            .collect()
    }

    /// Builds a point of `variant` from free values; frozen entries come
    /// from `frozen`.
    pub fn from_free_values(variant: Variant, values: &[f64], frozen: &ControllerParams) -> Result<Self> {
        let names = variant.names();
        if values.len() != names.len() {
            return Err(Error::invalid(format!(
                "{variant} controller takes {} values, got {}",
                names.len(),
                values.len()
            )));
        }
        let mut all = frozen.all_values();
        for (name, v) in names.iter().zip(values) {
            let idx = ALL_NAMES.iter().position(|n| n == name).expect("known name");
            all[idx] = *v;
        }
        Ok(Self::from_all_values(all, variant))
    }

    pub fn validate(&self, model: &ModelParams) -> Result<()> {
        let all = self.all_values();
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("controller parameters must be finite"));
        }
        if self.swing_time <= 0.05 {
            return Err(Error::invalid(format!("swing time {} s must exceed 0.05 s", self.swing_time)));
        }
        // z_des is a CoM height; the CoM sits above the hip.
        let reachable = model.leg_max_length + model.com_to_pelvis_offset;
        if !(self.z_des > 0.0 && self.z_des < reachable) {
            return Err(Error::invalid(format!("z_des {} must lie in (0, {reachable})", self.z_des)));
        }
        for (name, v) in [
            ("K_pt", self.k_pt),
            ("K_dt", self.k_dt),
            ("K_pz", self.k_pz),
            ("K_dz", self.k_dz),
            ("k", self.k_speed),
            ("C", self.c_dist),
        ] {
            if v < 0.0 {
                return Err(Error::invalid(format!("gain {name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Parses a parameter file: one `name: value` line per parameter plus
    /// an optional `variant` line. All nine parameters are required.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut values = [f64::NAN; 9];
        let mut variant = Variant::NineD;
        for entry in kv::parse(text)? {
            if entry.key == "variant" {
                variant = Variant::parse(&entry.value)?;
                continue;
            }
            let idx = ALL_NAMES
                .iter()
                .position(|n| *n == entry.key)
                .ok_or_else(|| Error::config(format!("line {}: unknown parameter `{}`", entry.line, entry.key)))?;
            values[idx] = kv::parse_f64(&entry)?;
        }
        if let Some(idx) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::config(format!("missing parameter `{}`", ALL_NAMES[idx])));
        }
        Ok(Self::from_all_values(values, variant))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("variant: {}\n", self.variant);
        for (name, v) in ALL_NAMES.iter().zip(self.all_values()) {
            out.push_str(&format!("{name}: {v}\n"));
        }
        out
    }
}

/// Axis-aligned search box over the free parameters of a variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBounds {
    pub variant: Variant,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

const DEFAULT_BOUNDS: [(f64, f64); 9] = [
    (10.0, 600.0),
    (2.0, 60.0),
    (-0.35, 0.35),
    (500.0, 8000.0),
    (50.0, 600.0),
    (0.70, 1.05),
    (0.05, 0.9),
    (0.0, 0.3),
    (0.2, 0.65),
];

impl ParamBounds {
    pub fn default_for(variant: Variant) -> Self {
        let (lower, upper) = variant
            .names()
            .iter()
            .map(|n| DEFAULT_BOUNDS[ALL_NAMES.iter().position(|a| a == n).expect("known name")])
            .unzip();
        ParamBounds { variant, lower, upper }
    }

    pub fn names(&self) -> &'static [&'static str] {
        self.variant.names()
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.variant.dim() || self.upper.len() != self.variant.dim() {
            return Err(Error::invalid("bounds dimension does not match variant"));
        }
        for ((lo, hi), name) in self.lower.iter().zip(&self.upper).zip(self.names()) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::invalid(format!("invalid bounds for {name}: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values.len() == self.dim()
            && values
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Maps a point of the unit cube into the box.
    pub fn scale(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(u, (lo, hi))| (lo + u * (hi - lo)).clamp(*lo, *hi))
            .collect()
    }

    /// Maps a point of the box into the unit cube (degenerate axes map to 0).
    pub fn normalize(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }

    /// Parses `variant: 9d` plus one `name: lo, hi` line per free parameter.
    /// Parameters not listed keep their default range.
    pub fn from_text(text: &str) -> Result<Self> {
        let entries = kv::parse(text)?;
        let variant = match entries.iter().find(|e| e.key == "variant") {
            Some(e) => Variant::parse(&e.value)?,
            None => Variant::NineD,
        };
        let mut bounds = Self::default_for(variant);
        for entry in entries.iter().filter(|e| e.key != "variant") {
            let idx = variant.names().iter().position(|n| *n == entry.key).ok_or_else(|| {
                Error::config(format!(
                    "line {}: `{}` is not a free parameter of the {variant} controller",
                    entry.line, entry.key
                ))
            })?;
            let pair = kv::parse_f64_list(entry)?;
            if pair.len() != 2 {
                return Err(Error::config(format!("line {}: expected `lo, hi`", entry.line)));
            }
            bounds.lower[idx] = pair[0];
            bounds.upper[idx] = pair[1];
        }
        bounds.validate().map_err(|e| Error::config(e.to_string()))?;
        Ok(bounds)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("variant: {}\n", self.variant);
        for ((name, lo), hi) in self.names().iter().zip(&self.lower).zip(&self.upper) {
            out.push_str(&format!("{name}: {lo}, {hi}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub speed: f64,
    pub steps: u32,
}

/// Piecewise-constant target speed indexed by step count.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedProfile {
    segments: Vec<Segment>,
}

impl SpeedProfile {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::invalid("speed profile needs at least one segment"));
        }
        for s in &segments {
            if s.steps == 0 || !(s.speed >= 0.0) || !s.speed.is_finite() {
                return Err(Error::invalid(format!(
                    "invalid profile segment ({} m/s, {} steps)",
                    s.speed, s.steps
                )));
            }
        }
        Ok(SpeedProfile { segments })
    }

    pub fn constant(speed: f64, steps: u32) -> Result<Self> {
        Self::new(vec![Segment { speed, steps }])
    }

    /// 0.4 m/s (15) - 1.0 m/s (15) - 0.2 m/s (15) - 0 m/s (5).
    pub fn five_d_hardware() -> Self {
        Self::from_pairs(&[(0.4, 15), (1.0, 15), (0.2, 15), (0.0, 5)])
    }

    /// 1.0 m/s (15) - 0.4 m/s (15) - 1.0 m/s (15) - 0 m/s (5): starts fast
    /// from rest, so weak controllers fall early.
    pub fn intervals() -> Self {
        Self::from_pairs(&[(1.0, 15), (0.4, 15), (1.0, 15), (0.0, 5)])
    }

    /// 0.4 m/s for 30 steps.
    pub fn easy() -> Self {
        Self::from_pairs(&[(0.4, 30)])
    }

    /// 0.4 - 0.6 - 1.0 - 0.6 - 0.2 m/s, ten steps each.
    pub fn speed_up_down() -> Self {
        Self::from_pairs(&[(0.4, 10), (0.6, 10), (1.0, 10), (0.6, 10), (0.2, 10)])
    }

    fn from_pairs(pairs: &[(f64, u32)]) -> Self {
        Self::new(pairs.iter().map(|&(speed, steps)| Segment { speed, steps }).collect())
            .expect("built-in profile is valid")
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_steps(&self) -> u64 {
        self.segments.iter().map(|s| u64::from(s.steps)).sum()
    }

    /// Target speed of the zero-based step `index`, or `None` once the
    /// profile is exhausted.
    pub fn target_for_step(&self, index: usize) -> Option<f64> {
        let mut remaining = index as u64;
        for s in &self.segments {
            if remaining < u64::from(s.steps) {
                return Some(s.speed);
            }
            remaining -= u64::from(s.steps);
        }
        None
    }

    pub fn max_speed(&self) -> f64 {
        self.segments.iter().map(|s| s.speed).fold(0.0, f64::max)
    }

    /// Parses `segment = <speed_mps>, <steps>` lines, in order.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut segments = Vec::new();
        for entry in kv::parse(text)? {
            if entry.key != "segment" {
                return Err(Error::config(format!(
                    "line {}: unexpected key `{}` in profile",
                    entry.line, entry.key
                )));
            }
            let pair = kv::parse_f64_list(&entry)?;
            if pair.len() != 2 || pair[1].fract() != 0.0 || pair[1] < 1.0 || pair[1] > f64::from(u32::MAX) {
                return Err(Error::config(format!("line {}: expected `<speed>, <steps>`", entry.line)));
            }
            segments.push(Segment { speed: pair[0], steps: pair[1] as u32 });
        }
        Self::new(segments).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.segments
            .iter()
            .map(|s| format!("segment = {}, {}\n", s.speed, s.steps))
            .collect()
    }
}

/// Desired ground reaction force on the stance foot, N.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grf {
    pub fx: f64,
    pub fz: f64,
}

/// Stance PD laws with desired pitch rate and vertical velocity fixed at
/// zero. `feedforward_weight` is the weight the controller believes it
/// carries; it is added to `fz` so that `z_des` is an equilibrium.
pub fn stance_grf(state: &RobotState, params: &ControllerParams, feedforward_weight: f64) -> Grf {
    let fx = params.k_pt * (params.theta_des - state.trunk_pitch) + params.k_dt * (0.0 - state.trunk_pitch_rate);
    let fz = params.k_pz * (params.z_des - state.com_position.y)
        + params.k_dz * (0.0 - state.com_velocity.y)
        + feedforward_weight;
    Grf { fx, fz }
}

/// Touchdown location of the swing foot relative to the CoM at touchdown.
pub fn foot_placement(state: &RobotState, params: &ControllerParams, v_tgt: f64) -> f64 {
    let v = state.com_velocity.x;
    let d = state.com_position.x - state.stance_foot_position.x;
    params.k_speed * (v - v_tgt) + params.c_dist * d + 0.5 * v * params.swing_time
}

/// Quintic polynomial per axis over `[0, duration]`, stored in normalized
/// time `s = t / duration`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuinticSpline {
    coefficients: Vec<[f64; 6]>,
    duration: f64,
}

impl QuinticSpline {
    /// Matches position and velocity at both ends with zero acceleration at
    /// both ends.
    pub fn new(start_pos: &[f64], start_vel: &[f64], end_pos: &[f64], end_vel: &[f64], duration: f64) -> Result<Self> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::invalid(format!("spline duration must be positive, got {duration}")));
        }
        let dim = start_pos.len();
        if start_vel.len() != dim || end_pos.len() != dim || end_vel.len() != dim {
            return Err(Error::invalid("spline boundary conditions differ in dimension"));
        }
        let coefficients = (0..dim)
            .map(|i| {
                let h = end_pos[i] - start_pos[i];
                let v0 = start_vel[i] * duration;
                let v1 = end_vel[i] * duration;
                [
                    start_pos[i],
                    v0,
                    0.0,
                    10.0 * h - 6.0 * v0 - 4.0 * v1,
                    -15.0 * h + 8.0 * v0 + 7.0 * v1,
                    6.0 * h - 3.0 * v0 - 3.0 * v1,
                ]
            })
            .collect();
        Ok(QuinticSpline { coefficients, duration })
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    /// Coefficients of axis `axis` in normalized time.
    pub fn coefficients(&self, axis: usize) -> &[f64; 6] {
        &self.coefficients[axis]
    }

    /// Position and velocity of `axis` at time `t`. Times outside
    /// `[0, duration]` clamp to the endpoint state.
    pub fn eval_axis(&self, axis: usize, t: f64) -> (f64, f64) {
        let s = (t / self.duration).clamp(0.0, 1.0);
        let c = &self.coefficients[axis];
        let pos = c[0] + s * (c[1] + s * (c[2] + s * (c[3] + s * (c[4] + s * c[5]))));
        let dp = c[1] + s * (2.0 * c[2] + s * (3.0 * c[3] + s * (4.0 * c[4] + s * 5.0 * c[5])));
        (pos, dp / self.duration)
    }

    pub fn eval(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        (0..self.dim()).map(|a| self.eval_axis(a, t)).unzip()
    }
}

/// Builds the 2-D (horizontal, vertical) swing spline between two foot
/// states.
pub fn make_swing_spline(
    start_pos: Vector2<f64>,
    start_vel: Vector2<f64>,
    end_pos: Vector2<f64>,
    end_vel: Vector2<f64>,
    duration: f64,
) -> Result<QuinticSpline> {
    QuinticSpline::new(
        start_pos.as_slice(),
        start_vel.as_slice(),
        end_pos.as_slice(),
        end_vel.as_slice(),
        duration,
    )
}

/// Default apex clearance of the swing foot, m.
pub const DEFAULT_CLEARANCE: f64 = 0.05;

/// Swing arc through an apex via-point at half the swing time: two quintic
/// pieces, lift-off to apex and apex to touchdown.
#[derive(Debug, Clone, PartialEq)]
pub struct SwingArc {
    lift: QuinticSpline,
    land: QuinticSpline,
}

impl SwingArc {
    /// The apex sits `clearance` above the higher endpoint, halfway in
    /// horizontal distance, and moves at the mean horizontal speed.
    pub fn new(
        start_pos: Vector2<f64>,
        start_vel: Vector2<f64>,
        end_pos: Vector2<f64>,
        end_vel: Vector2<f64>,
        duration: f64,
        clearance: f64,
    ) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::invalid(format!("swing duration must be positive, got {duration}")));
        }
        let apex = Vector2::new(
            0.5 * (start_pos.x + end_pos.x),
            start_pos.y.max(end_pos.y) + clearance,
        );
        let apex_vel = Vector2::new((end_pos.x - start_pos.x) / duration, 0.0);
        let half = 0.5 * duration;
        Ok(SwingArc {
            lift: make_swing_spline(start_pos, start_vel, apex, apex_vel, half)?,
            land: make_swing_spline(apex, apex_vel, end_pos, end_vel, half)?,
        })
    }

    pub fn duration(&self) -> f64 {
        self.lift.duration() + self.land.duration()
    }

    pub fn eval(&self, t: f64) -> (Vector2<f64>, Vector2<f64>) {
        let (p, v) = if t < self.lift.duration() {
            self.lift.eval(t)
        } else {
            self.land.eval(t - self.lift.duration())
        };
        (Vector2::new(p[0], p[1]), Vector2::new(v[0], v[1]))
    }
}

/// Kinematic command for the massless swing foot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingTarget {
    pub pos: Vector2<f64>,
    pub vel: Vector2<f64>,
}

/// Swing foot command one control period ahead. The horizontal target is
/// re-planned every tick from the current foot state towards the CoM
/// position predicted at touchdown plus [`foot_placement`]; the vertical
/// motion follows the lift-off `arc`.
pub fn swing_command(state: &RobotState, params: &ControllerParams, v_tgt: f64, arc: &SwingArc, dt: f64) -> SwingTarget {
    let remaining = (params.swing_time - state.swing_elapsed).max(0.0);
    let target_x = state.com_position.x + state.com_velocity.x * remaining + foot_placement(state, params, v_tgt);
    let (x, vx) = if remaining <= dt {
        (target_x, 0.0)
    } else {
        QuinticSpline::new(
            &[state.swing_foot_position.x],
            &[state.swing_foot_velocity.x],
            &[target_x],
            &[0.0],
            remaining,
        )
        .map(|s| s.eval_axis(0, dt))
        .unwrap_or((target_x, 0.0))
    };
    let (vertical, vertical_vel) = arc.eval(state.swing_elapsed + dt);
    SwingTarget {
        pos: Vector2::new(x, vertical.y),
        vel: Vector2::new(vx, vertical_vel.y),
    }
}
