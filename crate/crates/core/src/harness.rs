//! Trial costs, optimization campaigns comparing kernels on perturbed
//! models, and report emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::bo::{run_bo, BoConfig, BoHistory, Candidate, Outcome};
use crate::controller::{ControllerParams, ParamBounds, SpeedProfile, Variant};
use crate::dog::{episode_score, DogThresholds};
use crate::error::{Error, Result};
use crate::gp::{HyperMode, Hyperparams, KernelKind, MismatchModel};
use crate::kv;
use crate::sim::{perturb_model, run_episode, EpisodeResult, ModelParams, RobotState};
use crate::tablegen::{load_table, Scheme, ScoreTable, TableSpec};

/// Base cost of a fall; the distance walked is subtracted from it.
pub const FALL_COST: f64 = 100.0;

/// Normalizer turning summed joint torques (N·m·s) into the
/// cost-of-transport term.
pub const DEFAULT_TORQUE_NORM: f64 = 5000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    Hardware,
    Simulation,
}

impl CostKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "hw" | "hardware" => Ok(CostKind::Hardware),
            "sim" | "simulation" => Ok(CostKind::Simulation),
            other => Err(Error::config(format!("unknown cost kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialCost {
    pub cost: f64,
    pub fell: bool,
    pub x_fall: f64,
    pub speed_error: f64,
    pub c_tr: f64,
}

/// Mean absolute gap between each step's average speed and its target.
/// An episode without steps is charged the mean target speed.
fn speed_error(episode: &EpisodeResult, profile: &SpeedProfile) -> f64 {
    if episode.steps.is_empty() {
        let total = profile.total_steps() as f64;
        return profile.segments().iter().map(|s| s.speed * f64::from(s.steps)).sum::<f64>() / total;
    }
    let sum: f64 = episode
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let target = profile.target_for_step(i).unwrap_or(0.0);
            (s.avg_speed - target).abs()
        })
        .sum();
    sum / episode.steps.len() as f64
}

/// Distance-before-fall on a fall, speed tracking error otherwise.
pub fn cost_hardware(episode: &EpisodeResult, profile: &SpeedProfile) -> TrialCost {
    if episode.fell {
        TrialCost {
            cost: FALL_COST - episode.x_fall,
            fell: true,
            x_fall: episode.x_fall,
            speed_error: 0.0,
            c_tr: 0.0,
        }
    } else {
        let e = speed_error(episode, profile);
        TrialCost {
            cost: e,
            fell: false,
            x_fall: episode.x_fall,
            speed_error: e,
            c_tr: 0.0,
        }
    }
}

/// [`cost_hardware`] plus a cost-of-transport term for walking episodes.
pub fn cost_simulation(episode: &EpisodeResult, profile: &SpeedProfile, torque_norm: f64) -> Result<TrialCost> {
    if !(torque_norm > 0.0 && torque_norm.is_finite()) {
        return Err(Error::invalid(format!("torque normalizer must be positive, got {torque_norm}")));
    }
    let mut cost = cost_hardware(episode, profile);
    if !cost.fell {
        cost.c_tr = episode.steps.iter().map(|s| s.torque_abs_sum).sum::<f64>() / torque_norm;
        cost.cost += cost.c_tr;
    }
    Ok(cost)
}

pub fn trial_cost(episode: &EpisodeResult, profile: &SpeedProfile, kind: CostKind, torque_norm: f64) -> Result<TrialCost> {
    match kind {
        CostKind::Hardware => Ok(cost_hardware(episode, profile)),
        CostKind::Simulation => cost_simulation(episode, profile, torque_norm),
    }
}

/// One arm of a campaign: BO with a kernel, or uniform random selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Bo(KernelKind),
    Random,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::Bo(k) => k.as_str(),
            Arm::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "random" => Ok(Arm::Random),
            other => KernelKind::parse(other).map(Arm::Bo),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub variant: Variant,
    pub profile: SpeedProfile,
    pub arms: Vec<Arm>,
    pub n_runs: usize,
    pub trials_per_run: usize,
    pub seed: u64,
    pub perturbation: f64,
    /// Extra factor on the evaluation trunk mass, applied after perturbation.
    pub eval_mass_scale: f64,
    pub table: PathBuf,
    pub cost: CostKind,
    pub t_max: f64,
    pub output: PathBuf,
    pub torque_norm: f64,
    pub thresholds: DogThresholds,
    pub noise_variance: f64,
    /// Signal variance of every GP; estimated from a pilot sample if unset.
    pub signal_variance: Option<f64>,
    pub pilot_size: usize,
    /// DoG length scale as a fraction of the table's φ range.
    pub dog_length_frac: f64,
    /// Length scale of the mismatch feature, as a fraction of the φ range.
    pub adj_length_frac: f64,
    pub dog_mode: HyperMode,
    pub se_mode: HyperMode,
    /// Initial SE length scale on the unit cube.
    pub se_length: f64,
    pub center_targets: bool,
    /// Mismatch GP length scale on the unit cube.
    pub mismatch_length: f64,
    /// Mismatch GP standard deviation as a fraction of the φ range.
    pub mismatch_scale_frac: f64,
    /// Seconds of each evaluation episode scored for the mismatch signal;
    /// defaults to the table's short-sim duration.
    pub phi_window: Option<f64>,
}

impl CampaignConfig {
    pub fn new(table: PathBuf, output: PathBuf) -> Self {
        CampaignConfig {
            variant: Variant::NineD,
            profile: SpeedProfile::intervals(),
            arms: vec![Arm::Bo(KernelKind::Dog), Arm::Bo(KernelKind::Se), Arm::Random],
            n_runs: 50,
            trials_per_run: 20,
            seed: 1,
            perturbation: 0.15,
            eval_mass_scale: 1.0,
            table,
            cost: CostKind::Simulation,
            t_max: 30.0,
            output,
            torque_norm: DEFAULT_TORQUE_NORM,
            thresholds: DogThresholds::default(),
            noise_variance: 1e-2,
            signal_variance: None,
            pilot_size: 256,
            dog_length_frac: 0.1,
            adj_length_frac: 0.1,
            dog_mode: HyperMode::Fixed,
            se_mode: HyperMode::Learned,
            se_length: 0.2,
            center_targets: false,
            mismatch_length: 2.0,
            mismatch_scale_frac: 0.25,
            phi_window: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.n_runs == 0 || self.trials_per_run == 0 {
            return bad("n_runs and trials_per_run must be at least 1");
        }
        if self.arms.is_empty() {
            return bad("at least one kernel is required");
        }
        if !(0.0..1.0).contains(&self.perturbation) {
            return bad("perturbation must lie in [0, 1)");
        }
        let positive = [
            ("t_max", self.t_max),
            ("torque_norm", self.torque_norm),
            ("noise", self.noise_variance),
            ("dog_length_frac", self.dog_length_frac),
            ("adj_length_frac", self.adj_length_frac),
            ("se_length", self.se_length),
            ("mismatch_length", self.mismatch_length),
            ("mismatch_scale_frac", self.mismatch_scale_frac),
            ("eval_mass_scale", self.eval_mass_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if matches!(self.signal_variance, Some(v) if !(v > 0.0)) {
            return bad("signal_variance must be positive");
        }
        if matches!(self.phi_window, Some(v) if !(v > 0.0)) {
            return bad("phi_window must be positive");
        }
        if self.signal_variance.is_none() && self.pilot_size < 2 {
            return bad("pilot_size must be at least 2 when signal_variance is unset");
        }
        Ok(())
    }

    /// Parses a config file. Relative paths resolve against `base_dir`.
    pub fn from_text(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = CampaignConfig::new(PathBuf::new(), base_dir.join("campaign-out"));
        let mut table = None;
        let mut segments = String::new();
        let path = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        let mode = |e: &kv::Entry| match e.value.as_str() {
            "fixed" => Ok(HyperMode::Fixed),
            "learned" => Ok(HyperMode::Learned),
            _ => Err(Error::config(format!("line {}: expected `fixed` or `learned`", e.line))),
        };
        let flag = |e: &kv::Entry| match e.value.as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(Error::config(format!("line {}: expected true or false", e.line))),
        };
        let count = |e: &kv::Entry| kv::parse_u64(e).map(|v| v as usize);
        for e in kv::parse(text)? {
            match e.key.as_str() {
                "variant" => cfg.variant = Variant::parse(&e.value)?,
                "profile" => {
                    cfg.profile = match e.value.as_str() {
                        "five_d" => SpeedProfile::five_d_hardware(),
                        "intervals" => SpeedProfile::intervals(),
                        "easy" => SpeedProfile::easy(),
                        "speed_up_down" => SpeedProfile::speed_up_down(),
                        file => SpeedProfile::load(&path(file))
                            .map_err(|err| Error::config(format!("profile {file}: {err}")))?,
                    }
                }
                "segment" => {
                    let _ = writeln!(segments, "segment = {}", e.value);
                }
                "kernels" => cfg.arms = e.value.split(',').map(Arm::parse).collect::<Result<_>>()?,
                "n_runs" => cfg.n_runs = count(&e)?,
                "trials_per_run" => cfg.trials_per_run = count(&e)?,
                "seed" => cfg.seed = kv::parse_u64(&e)?,
                "perturb" | "perturbation" => cfg.perturbation = kv::parse_f64(&e)?,
                "eval_mass_scale" => cfg.eval_mass_scale = kv::parse_f64(&e)?,
                "table" => table = Some(path(&e.value)),
                "cost" => cfg.cost = CostKind::parse(&e.value)?,
                "t_max" => cfg.t_max = kv::parse_f64(&e)?,
                "output" => cfg.output = path(&e.value),
                "torque_norm" => cfg.torque_norm = kv::parse_f64(&e)?,
                "retraction_min" => cfg.thresholds.retraction_min = kv::parse_f64(&e)?,
                "com_height_tol" => cfg.thresholds.com_height_tol = kv::parse_f64(&e)?,
                "trunk_lean_tol" => cfg.thresholds.trunk_lean_tol = kv::parse_f64(&e)?,
                "chatter_step_time" => cfg.thresholds.chatter_step_time = kv::parse_f64(&e)?,
                "noise" => cfg.noise_variance = kv::parse_f64(&e)?,
                "signal_variance" => cfg.signal_variance = Some(kv::parse_f64(&e)?),
                "pilot_size" => cfg.pilot_size = count(&e)?,
                "dog_length_frac" => cfg.dog_length_frac = kv::parse_f64(&e)?,
                "adj_length_frac" => cfg.adj_length_frac = kv::parse_f64(&e)?,
                "dog_hyper" => cfg.dog_mode = mode(&e)?,
                "se_hyper" => cfg.se_mode = mode(&e)?,
                "se_length" => cfg.se_length = kv::parse_f64(&e)?,
                "center_targets" => cfg.center_targets = flag(&e)?,
                "mismatch_length" => cfg.mismatch_length = kv::parse_f64(&e)?,
                "mismatch_scale_frac" => cfg.mismatch_scale_frac = kv::parse_f64(&e)?,
                "phi_window" => cfg.phi_window = Some(kv::parse_f64(&e)?),
                other => return Err(Error::config(format!("line {}: unknown key `{other}`", e.line))),
            }
        }
        if !segments.is_empty() {
            cfg.profile = SpeedProfile::from_text(&segments)?;
        }
        cfg.table = table.ok_or_else(|| Error::config("missing `table`"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_text(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Model the `run`-th run is evaluated on.
    pub fn eval_model(&self, base: &ModelParams, run: usize) -> Result<ModelParams> {
        let mut m = perturb_model(base, self.perturbation, self.seed.wrapping_add(run as u64))?;
        m.trunk_mass *= self.eval_mass_scale;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub arm: String,
    pub run: usize,
    pub trunk_mass: f64,
    pub trunk_inertia: f64,
    pub history: Option<BoHistory>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignReport {
    pub arms: Vec<String>,
    pub n_runs: usize,
    pub trials_per_run: usize,
    /// Signal variance shared by the GPs.
    pub signal_variance: f64,
    pub runs: Vec<RunReport>,
}

/// Settings shared by every run of a campaign over one table.
struct Shared<'a> {
    config: &'a CampaignConfig,
    table: &'a ScoreTable,
    candidates: Vec<Candidate>,
    signal_variance: f64,
    phi_span: f64,
    phi_window: f64,
}

/// Evaluates `params` on `model` with the campaign's profile and cost.
pub fn evaluate(
    params: &ControllerParams,
    model: &ModelParams,
    config: &CampaignConfig,
    phi_window: f64,
) -> Result<(TrialCost, f64)> {
    let ep = run_episode(params, &config.profile, model, config.t_max, &RobotState::at_rest(params.z_des))?;
    let cost = trial_cost(&ep, &config.profile, config.cost, config.torque_norm)?;
    let phi = episode_score(&ep.truncated(phi_window), &config.thresholds).phi;
    Ok((cost, phi))
}

fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Cost variance over a seeded sample of table rows evaluated on the
/// unperturbed model.
pub fn pilot_variance(table: &ScoreTable, config: &CampaignConfig) -> Result<f64> {
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_F11E));
    let window = config.phi_window.unwrap_or(table.spec.sim_seconds);
    let costs: Vec<f64> = order
        .iter()
        .take(config.pilot_size)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|i| {
            let p = table.params(**i)?;
            Ok(match evaluate(&p, &table.spec.model, config, window) {
                Ok((c, _)) => c.cost,
                Err(_) => FALL_COST,
            })
        })
        .collect::<Result<_>>()?;
    let v = population_variance(&costs);
    Ok(if v > 0.0 { v } else { 1.0 })
}

impl Shared<'_> {
    fn hyper(&self, kind: KernelKind) -> Hyperparams {
        let c = self.config;
        let l_phi = c.dog_length_frac * self.phi_span;
        let (lengths, mode) = match kind {
            KernelKind::Se => (vec![c.se_length; c.variant.dim()], c.se_mode),
            KernelKind::Dog => (vec![l_phi], c.dog_mode),
            KernelKind::DogAdjusted => (vec![l_phi, c.adj_length_frac * self.phi_span], c.dog_mode),
        };
        Hyperparams {
            signal_variance: self.signal_variance,
            length_scales: lengths,
            noise_variance: c.noise_variance,
            mode,
        }
    }

    fn run(&self, arm: Arm, run: usize) -> RunReport {
        let c = self.config;
        let model = c.eval_model(&self.table.spec.model, run);
        let (mass, inertia) = model.as_ref().map_or((f64::NAN, f64::NAN), |m| (m.trunk_mass, m.trunk_inertia));
        let result = model.and_then(|model| {
            let seed = c.seed.wrapping_add(run as u64);
            let mut objective = |_: usize, cand: &Candidate| {
                let (cost, phi) = evaluate(&cand.params, &model, c, self.phi_window)?;
                Ok(Outcome {
                    cost: cost.cost,
                    fell: cost.fell,
                    phi_eval: Some(phi),
                })
            };
            match arm {
                Arm::Random => {
                    let mut order: Vec<usize> = (0..self.candidates.len()).collect();
                    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                    let mut hist = BoHistory::new(KernelKind::Dog, seed);
                    for (t, &i) in order.iter().take(c.trials_per_run).enumerate() {
                        let (outcome, failed) = match objective(t, &self.candidates[i]) {
                            Ok(o) => (o, false),
                            Err(_) => (
                                Outcome {
                                    cost: crate::bo::FAILURE_COST,
                                    fell: true,
                                    phi_eval: None,
                                },
                                true,
                            ),
                        };
                        hist.record(i, &self.candidates[i], outcome, failed);
                    }
                    Ok(hist)
                }
                Arm::Bo(kind) => {
                    let mut cfg = BoConfig::new(kind, c.trials_per_run, seed, self.hyper(kind));
                    cfg.center_targets = c.center_targets;
                    let mismatch = match kind {
                        KernelKind::DogAdjusted => {
                            let sd = c.mismatch_scale_frac * self.phi_span;
                            Some(MismatchModel::new(Hyperparams::fixed(
                                sd * sd,
                                vec![c.mismatch_length],
                                c.noise_variance,
                            ))?)
                        }
                        _ => None,
                    };
                    run_bo(&mut objective, &self.candidates, &cfg, mismatch)
                }
            }
        });
        match result {
            Ok(history) => RunReport {
                arm: arm.label().to_string(),
                run,
                trunk_mass: mass,
                trunk_inertia: inertia,
                history: Some(history),
                error: None,
            },
            Err(e) => {
                log::error!("{} run {run} failed: {e}", arm.label());
                RunReport {
                    arm: arm.label().to_string(),
                    run,
                    trunk_mass: mass,
                    trunk_inertia: inertia,
                    history: None,
                    error: Some(e.to_string()),
                }
            }
        }
    }
}

/// Runs every arm `n_runs` times on `table`. Runs execute concurrently and
/// are reported in (arm, run) order.
pub fn run_campaign_on(config: &CampaignConfig, table: &ScoreTable) -> Result<CampaignReport> {
    config.validate()?;
    if table.spec.bounds.variant != config.variant {
        return Err(Error::config(format!(
            "table is for the {} controller, config asks for {}",
            table.spec.bounds.variant, config.variant
        )));
    }
    if table.is_empty() {
        return Err(Error::config("score table is empty"));
    }
    table.check_compatible(&config.thresholds, &ModelParams::default())?;
    let (lo, hi) = table.phi_range();
    let phi_span = if hi > lo { hi - lo } else { 1.0 };
    let signal_variance = match config.signal_variance {
        Some(v) => v,
        None => pilot_variance(table, config)?,
    };
    let shared = Shared {
        config,
        table,
        candidates: table.candidates()?,
        signal_variance,
        phi_span,
        phi_window: config.phi_window.unwrap_or(table.spec.sim_seconds),
    };
    let jobs: Vec<(Arm, usize)> = config
        .arms
        .iter()
        .flat_map(|a| (0..config.n_runs).map(move |r| (*a, r)))
        .collect();
    let runs: Vec<RunReport> = jobs.par_iter().map(|(arm, run)| shared.run(*arm, *run)).collect();
    Ok(CampaignReport {
        arms: config.arms.iter().map(|a| a.label().to_string()).collect(),
        n_runs: config.n_runs,
        trials_per_run: config.trials_per_run,
        signal_variance,
        runs,
    })
}

pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignReport> {
    let table = load_table(&config.table)?;
    run_campaign_on(config, &table)
}

/// One line of the long-format trial CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub run: usize,
    pub kernel: String,
    /// 1-based.
    pub trial: usize,
    pub cost: f64,
    pub best_so_far: f64,
    pub fell: bool,
    pub phi_sim: f64,
}

pub const CSV_HEADER: &str = "run,kernel,trial,cost,best_so_far,fell,phi_sim";

pub fn trial_rows(report: &CampaignReport) -> Vec<TrialRow> {
    report
        .runs
        .iter()
        .filter_map(|r| r.history.as_ref().map(|h| (r, h)))
        .flat_map(|(r, h)| {
            h.trials.iter().map(move |t| TrialRow {
                run: r.run,
                kernel: r.arm.clone(),
                trial: t.trial_index + 1,
                cost: t.cost,
                best_so_far: t.posterior_best,
                fell: t.fell,
                phi_sim: t.phi_sim,
            })
        })
        .collect()
}

pub fn rows_to_csv(rows: &[TrialRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 64);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:?},{:?},{},{:?}",
            r.run,
            r.kernel,
            r.trial,
            r.cost,
            r.best_so_far,
            u8::from(r.fell),
            r.phi_sim
        );
    }
    out
}

pub fn rows_from_csv(text: &str) -> Result<Vec<TrialRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::format("trial CSV header missing or unexpected"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || Error::format(format!("trial CSV line {}: malformed", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad());
            }
            Ok(TrialRow {
                run: f[0].parse().map_err(|_| bad())?,
                kernel: f[1].to_string(),
                trial: f[2].parse().map_err(|_| bad())?,
                cost: f[3].parse().map_err(|_| bad())?,
                best_so_far: f[4].parse().map_err(|_| bad())?,
                fell: match f[5] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad()),
                },
                phi_sim: f[6].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelSummary {
    pub kernel: String,
    pub runs: usize,
    pub trials_per_run: usize,
    /// Fraction of runs with a walking trial within `trials_per_run`.
    pub success_rate_at_n: f64,
    /// Entry `t` is the fraction of runs that walked within `t + 1` trials.
    pub success_curve: Vec<f64>,
    /// Runs that never walked count as `trials_per_run + 1`.
    pub median_trials_to_first_walk: f64,
    /// Mean over runs of the best cost after the last trial.
    pub mean_best_cost: f64,
    /// Half-width of the 95% confidence interval of `mean_best_cost`.
    pub best_cost_ci95: Option<f64>,
    /// Mean best cost after each trial.
    pub mean_best_curve: Vec<f64>,
    /// Mean over successful runs of their best walking cost.
    pub mean_best_walking_cost: Option<f64>,
    pub best_walking_cost_ci95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub kernels: Vec<KernelSummary>,
    pub failed_runs: Vec<String>,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean and 95% confidence half-width (Student t).
pub fn mean_ci95(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid dof").inverse_cdf(0.975);
    (mean, Some(t * (var / n as f64).sqrt()))
}

/// Aggregates trial rows per kernel, in order of first appearance.
pub fn summarize(rows: &[TrialRow]) -> Summary {
    let mut order: Vec<String> = Vec::new();
    let mut per: BTreeMap<(String, usize), Vec<&TrialRow>> = BTreeMap::new();
    for r in rows {
        if !order.contains(&r.kernel) {
            order.push(r.kernel.clone());
        }
        per.entry((r.kernel.clone(), r.run)).or_default().push(r);
    }
    let kernels = order
        .iter()
        .map(|k| {
            let runs: Vec<Vec<&TrialRow>> = per
                .iter()
                .filter(|((kk, _), _)| kk == k)
                .map(|(_, v)| {
                    let mut v = v.clone();
                    v.sort_by_key(|r| r.trial);
                    v
                })
                .collect();
            let n_trials = runs.iter().map(|r| r.len()).max().unwrap_or(0);
            let first_walk: Vec<Option<usize>> = runs.iter().map(|r| r.iter().find(|t| !t.fell).map(|t| t.trial)).collect();
            let success_curve: Vec<f64> = (1..=n_trials)
                .map(|t| first_walk.iter().filter(|f| matches!(f, Some(x) if *x <= t)).count() as f64 / runs.len() as f64)
                .collect();
            let censored: Vec<f64> = first_walk.iter().map(|f| f.unwrap_or(n_trials + 1) as f64).collect();
            let finals: Vec<f64> = runs.iter().map(|r| r.last().map_or(f64::NAN, |t| t.best_so_far)).collect();
            let (mean_best_cost, best_cost_ci95) = mean_ci95(&finals);
            let mean_best_curve = (0..n_trials)
                .map(|t| {
                    let vals: Vec<f64> = runs.iter().map(|r| r[t.min(r.len() - 1)].best_so_far).collect();
                    vals.iter().sum::<f64>() / vals.len() as f64
                })
                .collect();
            let walking: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.iter().filter(|t| !t.fell).map(|t| t.cost).min_by(f64::total_cmp))
                .collect();
            let (mean_walk, walk_ci) = if walking.is_empty() {
                (None, None)
            } else {
                let (m, ci) = mean_ci95(&walking);
                (Some(m), ci)
            };
            KernelSummary {
                kernel: k.clone(),
                runs: runs.len(),
                trials_per_run: n_trials,
                success_rate_at_n: success_curve.last().copied().unwrap_or(0.0),
                success_curve,
                median_trials_to_first_walk: median(&censored),
                mean_best_cost,
                best_cost_ci95,
                mean_best_curve,
                mean_best_walking_cost: mean_walk,
                best_walking_cost_ci95: walk_ci,
            }
        })
        .collect();
    Summary {
        kernels,
        failed_runs: Vec::new(),
    }
}

pub fn summarize_report(report: &CampaignReport) -> Summary {
    let mut s = summarize(&trial_rows(report));
    s.failed_runs = report
        .runs
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{} run {}: {e}", r.arm, r.run)))
        .collect();
    s
}

pub fn summary_to_json(summary: &Summary) -> String {
    serde_json::to_string_pretty(summary).expect("summary serializes") + "\n"
}

/// One row per kernel with the headline statistics.
pub fn summary_to_csv(summary: &Summary) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
    let mut out = String::from(
        "kernel,runs,trials_per_run,success_rate_at_n,median_trials_to_first_walk,mean_best_cost,best_cost_ci95,mean_best_walking_cost,best_walking_cost_ci95\n",
    );
    for k in &summary.kernels {
        let _ = writeln!(
            out,
            "{},{},{},{:?},{:?},{:?},{},{},{}",
            k.kernel,
            k.runs,
            k.trials_per_run,
            k.success_rate_at_n,
            k.median_trials_to_first_walk,
            k.mean_best_cost,
            opt(k.best_cost_ci95),
            opt(k.mean_best_walking_cost),
            opt(k.best_walking_cost_ci95)
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::config(format!("unknown report format `{other}`"))),
        }
    }
}

pub const TRIALS_FILE: &str = "trials.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Writes `trials.csv` and/or `summary.json` into `dir`; returns the paths.
pub fn emit_report(report: &CampaignReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    if report.runs.is_empty() {
        return Err(Error::invalid("empty campaign report"));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in formats {
        let (name, body) = match f {
            ReportFormat::Csv => (TRIALS_FILE, rows_to_csv(&trial_rows(report))),
            ReportFormat::Json => (SUMMARY_FILE, summary_to_json(&summarize_report(report))),
        };
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

/// For each run present in both arms, the first 1-based trial at which
/// `arm`'s best cost is within `rel_tol` of the best cost `reference`
/// reached on the same run after all its trials. Runs that never get there
/// count as `trials + 1`.
pub fn trials_to_reference(rows: &[TrialRow], reference: &str, arm: &str, rel_tol: f64) -> Vec<f64> {
    let mut target: BTreeMap<usize, f64> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.kernel == reference) {
        let e = target.entry(r.run).or_insert(f64::INFINITY);
        *e = e.min(r.best_so_far);
    }
    let mut per: BTreeMap<usize, Vec<&TrialRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.kernel == arm) {
        per.entry(r.run).or_default().push(r);
    }
    per.iter()
        .filter_map(|(run, trials)| {
            let goal = target.get(run)? * (1.0 + rel_tol);
            let mut trials = trials.clone();
            trials.sort_by_key(|t| t.trial);
            let hit = trials.iter().find(|t| t.best_so_far <= goal).map(|t| t.trial);
            Some(hit.unwrap_or(trials.len() + 1) as f64)
        })
        .collect()
}

/// Like [`trials_to_reference`], but the goal is the mean over runs of the
/// reference arm's final best cost, shared by every run.
pub fn trials_to_reference_mean(rows: &[TrialRow], reference: &str, arm: &str, rel_tol: f64) -> Vec<f64> {
    let mut finals: BTreeMap<usize, f64> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.kernel == reference) {
        let e = finals.entry(r.run).or_insert(f64::INFINITY);
        *e = e.min(r.best_so_far);
    }
    if finals.is_empty() {
        return Vec::new();
    }
    let goal = finals.values().sum::<f64>() / finals.len() as f64 * (1.0 + rel_tol);
    let mut per: BTreeMap<usize, Vec<&TrialRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.kernel == arm) {
        per.entry(r.run).or_default().push(r);
    }
    per.values()
        .map(|trials| {
            let mut trials = trials.clone();
            trials.sort_by_key(|t| t.trial);
            let hit = trials.iter().find(|t| t.best_so_far <= goal).map(|t| t.trial);
            hit.unwrap_or(trials.len() + 1) as f64
        })
        .collect()
}

/// Settings for the score-versus-cost sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelateConfig {
    pub table: TableSpec,
    pub profile: SpeedProfile,
    pub t_max: f64,
    pub torque_norm: f64,
}

impl CorrelateConfig {
    pub fn new(seed: u64) -> Self {
        let mut table = TableSpec::new(ParamBounds::default_for(Variant::NineD));
        table.seed = seed;
        table.scheme = Scheme::UniformRandom;
        CorrelateConfig {
            table,
            profile: SpeedProfile::intervals(),
            t_max: 30.0,
            torque_norm: DEFAULT_TORQUE_NORM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelatePoint {
    pub phi: f64,
    pub cost: f64,
    pub fell: bool,
}

/// φ from the short simulation and the simulation cost from a full episode,
/// both on the unperturbed model, for `n` random controllers.
pub fn correlate(n: usize, config: &CorrelateConfig) -> Result<Vec<CorrelatePoint>> {
    let spec = &config.table;
    let grid = crate::tablegen::sample_grid(&spec.bounds, &spec.frozen, n, spec.seed, spec.scheme)?;
    grid.par_iter()
        .map(|p| {
            let phi = crate::tablegen::score_point(p, spec).phi;
            let ep = run_episode(p, &config.profile, &spec.model, config.t_max, &RobotState::at_rest(p.z_des));
            let cost = match ep {
                Ok(ep) => cost_simulation(&ep, &config.profile, config.torque_norm)?,
                Err(_) => TrialCost {
                    cost: FALL_COST,
                    fell: true,
                    x_fall: 0.0,
                    speed_error: 0.0,
                    c_tr: 0.0,
                },
            };
            Ok(CorrelatePoint {
                phi,
                cost: cost.cost,
                fell: cost.fell,
            })
        })
        .collect()
}

pub fn correlate_csv(points: &[CorrelatePoint]) -> String {
    let mut out = String::from("phi,cost,fell\n");
    for p in points {
        let _ = writeln!(out, "{:?},{:?},{}", p.phi, p.cost, u8::from(p.fell));
    }
    out
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            out[*k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "spearman needs paired samples");
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}
