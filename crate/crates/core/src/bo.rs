//! Bayesian optimization over a finite candidate set drawn from a score
//! table, with expected improvement as the acquisition function.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::controller::ControllerParams;
use crate::error::{Error, Result};
use crate::gp::{fit_hyperparams, FitConfig, GpModel, HyperMode, Hyperparams, KernelKind, MismatchModel};

/// Cost recorded when the objective itself fails.
pub const FAILURE_COST: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub params: ControllerParams,
    /// Precomputed score from the table.
    pub phi: f64,
    /// Free parameters mapped to the unit cube.
    pub normalized: Vec<f64>,
}

impl Candidate {
    /// Kernel-space coordinates. `g_star` is the predicted mismatch, used
    /// only by the adjusted kernel.
    pub fn features(&self, kind: KernelKind, g_star: f64) -> Vec<f64> {
        match kind {
            KernelKind::Se => self.normalized.clone(),
            KernelKind::Dog => vec![self.phi],
            KernelKind::DogAdjusted => vec![self.phi, g_star],
        }
    }
}

/// What the objective reports for one evaluated candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub cost: f64,
    pub fell: bool,
    /// Score measured on the evaluation model, feeding the mismatch GP.
    pub phi_eval: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub candidate_index: usize,
    pub params: Vec<f64>,
    pub phi_sim: f64,
    pub phi_eval: Option<f64>,
    pub cost: f64,
    pub fell: bool,
    /// Lowest cost observed up to and including this trial.
    pub posterior_best: f64,
    /// Set when the objective errored and the trial was recorded as a fall.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoHistory {
    pub kernel: KernelKind,
    pub seed: u64,
    pub trials: Vec<TrialRecord>,
}

impl BoHistory {
    pub fn new(kernel: KernelKind, seed: u64) -> Self {
        BoHistory {
            kernel,
            seed,
            trials: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn best_cost(&self) -> Option<f64> {
        self.trials.last().map(|t| t.posterior_best)
    }

    /// 1-based index of the first trial that did not fall.
    pub fn first_walk(&self) -> Option<usize> {
        self.trials.iter().position(|t| !t.fell).map(|i| i + 1)
    }

    /// Lowest cost among trials that did not fall.
    pub fn best_walking_cost(&self) -> Option<f64> {
        self.trials.iter().filter(|t| !t.fell).map(|t| t.cost).min_by(f64::total_cmp)
    }

    /// Appends the outcome of evaluating `candidate`.
    pub fn record(&mut self, candidate_index: usize, candidate: &Candidate, outcome: Outcome, failed: bool) {
        let best = self.best_cost().map_or(outcome.cost, |b| b.min(outcome.cost));
        self.trials.push(TrialRecord {
            trial_index: self.trials.len(),
            candidate_index,
            params: candidate.params.free_values(),
            phi_sim: candidate.phi,
            phi_eval: outcome.phi_eval,
            cost: outcome.cost,
            fell: outcome.fell,
            posterior_best: best,
            failed,
        });
    }
}

/// Expected improvement below `best_cost` of `Y ~ N(mean, variance)`.
pub fn expected_improvement(mean: f64, variance: f64, best_cost: f64) -> f64 {
    let gap = best_cost - mean;
    if !(variance > 0.0) {
        return gap.max(0.0);
    }
    let sd = variance.sqrt();
    let z = gap / sd;
    let unit = Normal::standard();
    (gap * unit.cdf(z) + sd * unit.pdf(z)).max(0.0)
}

/// Index of the next candidate to evaluate. With an empty history the choice
/// is uniform (seeded by the history); afterwards it is the expected
/// improvement maximizer, ties going to the lowest index.
pub fn propose_next(gp: &GpModel, features: &[Vec<f64>], history: &BoHistory) -> Result<usize> {
    if features.is_empty() {
        return Err(Error::invalid("empty candidate set"));
    }
    let mut taken = vec![false; features.len()];
    for t in &history.trials {
        if let Some(slot) = taken.get_mut(t.candidate_index) {
            *slot = true;
        }
    }
    let open: Vec<usize> = (0..features.len()).filter(|i| !taken[*i]).collect();
    if open.is_empty() {
        return Err(Error::Exhausted);
    }
    let best = match history.best_cost() {
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(history.seed);
            return Ok(open[rng.random_range(0..open.len())]);
        }
        Some(b) => b,
    };
    let scores: Vec<f64> = open
        .par_iter()
        .map(|i| gp.posterior(&features[*i]).map(|(m, v)| expected_improvement(m, v, best)))
        .collect::<Result<_>>()?;
    let mut pick = 0;
    for (j, s) in scores.iter().enumerate() {
        if *s > scores[pick] {
            pick = j;
        }
    }
    Ok(open[pick])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoConfig {
    pub kernel: KernelKind,
    pub n_trials: usize,
    pub seed: u64,
    /// Fixed values, or the starting point of each refit in `Learned` mode.
    pub hyper: Hyperparams,
    /// Use the mean observed cost as the GP prior mean.
    pub center_targets: bool,
    pub fit_starts: usize,
}

impl BoConfig {
    pub fn new(kernel: KernelKind, n_trials: usize, seed: u64, hyper: Hyperparams) -> Self {
        BoConfig {
            kernel,
            n_trials,
            seed,
            hyper,
            center_targets: false,
            fit_starts: 8,
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sequential propose/evaluate loop. Objective errors are logged and
/// recorded as falls with [`FAILURE_COST`]. Stops early if every candidate
/// has been evaluated.
pub fn run_bo(
    objective: &mut dyn FnMut(usize, &Candidate) -> Result<Outcome>,
    candidates: &[Candidate],
    config: &BoConfig,
    mismatch: Option<MismatchModel>,
) -> Result<BoHistory> {
    if config.n_trials == 0 {
        return Err(Error::invalid("n_trials must be at least 1"));
    }
    if candidates.is_empty() {
        return Err(Error::invalid("empty candidate set"));
    }
    config.hyper.validate()?;
    let mut mismatch = match (config.kernel, mismatch) {
        (KernelKind::DogAdjusted, None) => {
            return Err(Error::invalid("the adjusted kernel needs a mismatch model"));
        }
        (KernelKind::DogAdjusted, m) => m,
        _ => None,
    };

    let mut history = BoHistory::new(config.kernel, config.seed);
    let mut hyper = config.hyper.clone();
    let static_features: Option<Vec<Vec<f64>>> = match config.kernel {
        KernelKind::DogAdjusted => None,
        kind => Some(candidates.iter().map(|c| c.features(kind, 0.0)).collect()),
    };

    for trial in 0..config.n_trials {
        let adjusted;
        let features: &[Vec<f64>] = match &static_features {
            Some(f) => f,
            None => {
                let m = mismatch.as_ref().expect("checked above");
                adjusted = candidates
                    .par_iter()
                    .map(|c| m.predict(&c.normalized).map(|g| c.features(KernelKind::DogAdjusted, g)))
                    .collect::<Result<Vec<_>>>()?;
                &adjusted
            }
        };

        let inputs: Vec<Vec<f64>> = history.trials.iter().map(|t| features[t.candidate_index].clone()).collect();
        let targets: Vec<f64> = history.trials.iter().map(|t| t.cost).collect();
        if hyper.mode == HyperMode::Learned && targets.len() >= 2 {
            let mut fit = FitConfig::new(hyper.clone(), config.seed.wrapping_add(trial as u64));
            fit.n_starts = config.fit_starts;
            hyper = fit_hyperparams(config.kernel, &inputs, &targets, &fit)?.hyper;
            hyper.mode = HyperMode::Learned;
        }
        let prior_mean = if config.center_targets && !targets.is_empty() { mean(&targets) } else { 0.0 };
        let gp = GpModel::fit_with_mean(config.kernel, hyper.clone(), prior_mean, inputs, targets)?;

        let index = match propose_next(&gp, features, &history) {
            Ok(i) => i,
            Err(Error::Exhausted) => {
                log::info!("candidate set exhausted after {trial} trials");
                break;
            }
            Err(e) => return Err(e),
        };
        let candidate = &candidates[index];
        let (outcome, failed) = match objective(trial, candidate) {
            Ok(o) if o.cost.is_finite() => (o, false),
            Ok(o) => {
                log::warn!("trial {trial}: non-finite cost {}; recorded as a fall", o.cost);
                (Outcome { cost: FAILURE_COST, fell: true, phi_eval: o.phi_eval }, true)
            }
            Err(e) => {
                log::warn!("trial {trial}: objective failed ({e}); recorded as a fall");
                (Outcome { cost: FAILURE_COST, fell: true, phi_eval: None }, true)
            }
        };
        if let (Some(m), Some(phi_hw)) = (mismatch.as_mut(), outcome.phi_eval) {
            *m = m.update(&candidate.normalized, candidate.phi, phi_hw)?;
        }
        history.record(index, candidate, outcome, failed);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{ControllerParams, Variant};

    fn candidate(phi: f64, u: f64) -> Candidate {
        Candidate {
            params: ControllerParams::reference(),
            phi,
            normalized: vec![u; Variant::NineD.dim()],
        }
    }

    #[test]
    fn ei_examples() {
        assert_eq!(expected_improvement(3.0, 0.0, 2.0), 0.0);
        assert_eq!(expected_improvement(1.5, 0.0, 2.0), 0.5);
        let v = expected_improvement(2.0, 1.0, 2.0);
        assert!((v - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!((v - 0.3989).abs() < 1e-4);
    }

    #[test]
    fn ei_increases_with_variance_at_equal_mean() {
        let a = expected_improvement(5.0, 1.0, 4.0);
        let b = expected_improvement(5.0, 4.0, 4.0);
        assert!(b > a && a > 0.0);
    }

    #[test]
    fn single_candidate_then_exhausted() {
        let h = Hyperparams::fixed(1.0, vec![1.0], 1e-2);
        let cands = vec![candidate(10.0, 0.5)];
        let mut calls = 0;
        let mut obj = |_: usize, _: &Candidate| {
            calls += 1;
            Ok(Outcome { cost: 3.0, fell: false, phi_eval: None })
        };
        let hist = run_bo(&mut obj, &cands, &BoConfig::new(KernelKind::Dog, 3, 1, h), None).unwrap();
        assert_eq!(hist.len(), 1);
        assert_eq!(calls, 1);
        assert_eq!(hist.best_cost(), Some(3.0));

        let gp = GpModel::fit(KernelKind::Dog, Hyperparams::fixed(1.0, vec![1.0], 1e-2), vec![], vec![]).unwrap();
        let feats = vec![vec![10.0]];
        assert!(matches!(propose_next(&gp, &feats, &hist), Err(Error::Exhausted)));
    }

    #[test]
    fn higher_variance_wins_at_equal_mean() {
        // Candidate 1 sits on an observation, candidate 2 far away; both have
        // posterior mean equal to the prior mean of the observed cost.
        let h = Hyperparams::fixed(1.0, vec![1.0], 1e-2);
        let gp = GpModel::fit_with_mean(KernelKind::Dog, h, 5.0, vec![vec![0.0]], vec![5.0]).unwrap();
        let mut hist = BoHistory::new(KernelKind::Dog, 0);
        hist.record(0, &candidate(0.0, 0.0), Outcome { cost: 5.0, fell: false, phi_eval: None }, false);
        let feats = vec![vec![0.0], vec![0.0], vec![50.0]];
        assert_eq!(propose_next(&gp, &feats, &hist).unwrap(), 2);
    }

    #[test]
    fn adjusted_kernel_requires_mismatch_model() {
        let h = Hyperparams::fixed(1.0, vec![1.0, 1.0], 1e-2);
        let cands = vec![candidate(1.0, 0.1)];
        let mut obj = |_: usize, _: &Candidate| Ok(Outcome { cost: 1.0, fell: false, phi_eval: None });
        let r = run_bo(&mut obj, &cands, &BoConfig::new(KernelKind::DogAdjusted, 1, 0, h), None);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn objective_errors_become_falls() {
        let h = Hyperparams::fixed(1.0, vec![1.0], 1e-2);
        let cands: Vec<Candidate> = (0..4).map(|i| candidate(i as f64, 0.1 * i as f64)).collect();
        let mut obj = |t: usize, _: &Candidate| {
            if t == 0 {
                Err(Error::numerical("boom"))
            } else {
                Ok(Outcome { cost: 2.0, fell: false, phi_eval: None })
            }
        };
        let hist = run_bo(&mut obj, &cands, &BoConfig::new(KernelKind::Dog, 3, 4, h), None).unwrap();
        assert_eq!(hist.len(), 3);
        assert!(hist.trials[0].failed && hist.trials[0].fell);
        assert_eq!(hist.trials[0].cost, FAILURE_COST);
        assert_eq!(hist.best_cost(), Some(2.0));
        assert_eq!(hist.first_walk(), Some(2));
    }
}
