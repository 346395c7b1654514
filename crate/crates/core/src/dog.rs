//! Determinants-of-Gait metrics per step and the time-scaled episode score.

use crate::sim::{EpisodeResult, StepRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DogThresholds {
    /// Minimum swing-leg shortening for M1, m.
    pub retraction_min: f64,
    /// Largest CoM height change across a step for M2, m.
    pub com_height_tol: f64,
    /// Largest trunk lean change across a step for M3, rad.
    pub trunk_lean_tol: f64,
    /// Steps shorter than this count as chatter, s.
    pub chatter_step_time: f64,
}

impl Default for DogThresholds {
    fn default() -> Self {
        DogThresholds {
            retraction_min: 0.03,
            com_height_tol: 0.05,
            trunk_lean_tol: 0.1,
            chatter_step_time: 0.1,
        }
    }
}

impl DogThresholds {
    pub fn describe(&self) -> String {
        format!(
            "retraction={};height={};lean={};chatter={}",
            self.retraction_min, self.com_height_tol, self.trunk_lean_tol, self.chatter_step_time
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub swing_retraction: u8,
    pub com_height: u8,
    pub trunk_lean: u8,
    pub avg_speed: f64,
}

impl StepMetrics {
    pub fn score(&self) -> f64 {
        f64::from(self.swing_retraction) + f64::from(self.com_height) + f64::from(self.trunk_lean) + self.avg_speed
    }
}

pub fn step_metrics(record: &StepRecord, thresholds: &DogThresholds) -> StepMetrics {
    StepMetrics {
        swing_retraction: u8::from(record.max_leg_retraction > thresholds.retraction_min),
        com_height: u8::from((record.com_height_end - record.com_height_start).abs() < thresholds.com_height_tol),
        trunk_lean: u8::from((record.trunk_lean_end - record.trunk_lean_start).abs() < thresholds.trunk_lean_tol),
        avg_speed: record.avg_speed,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitScore {
    pub phi: f64,
    pub score_total: f64,
    pub time_fraction: f64,
    pub per_step: Vec<StepMetrics>,
    /// At least one step was shorter than the chatter threshold.
    pub chattered: bool,
}

impl GaitScore {
    /// Per-metric sums over all steps: `[M1, M2, M3, M4]`.
    pub fn metric_sums(&self) -> [f64; 4] {
        self.per_step.iter().fold([0.0; 4], |acc, m| {
            [
                acc[0] + f64::from(m.swing_retraction),
                acc[1] + f64::from(m.com_height),
                acc[2] + f64::from(m.trunk_lean),
                acc[3] + m.avg_speed,
            ]
        })
    }
}

/// Sums the step scores and scales by the fraction of the requested time
/// the episode lasted. Chattering episodes are scored like any other; the
/// time scaling is what keeps them from scoring high.
pub fn episode_score(episode: &EpisodeResult, thresholds: &DogThresholds) -> GaitScore {
    let per_step: Vec<StepMetrics> = episode.steps.iter().map(|s| step_metrics(s, thresholds)).collect();
    let score_total: f64 = per_step.iter().map(StepMetrics::score).sum();
    let time_fraction = if episode.t_max > 0.0 {
        (episode.t_sim / episode.t_max).clamp(0.0, 1.0)
    } else {
        0.0
    };
    GaitScore {
        phi: score_total * time_fraction,
        score_total,
        time_fraction,
        chattered: episode.steps.iter().any(|s| s.duration < thresholds.chatter_step_time),
        per_step,
    }
}
