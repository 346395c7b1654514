//! Gaussian-process regression with squared-exponential kernels over three
//! feature spaces: raw controller parameters (SE), the scalar gait score
//! (DoG), and the gait score paired with a predicted sim/eval mismatch
//! (DoG-adjusted).

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KernelKind {
    Se,
    Dog,
    DogAdjusted,
}

impl KernelKind {
    /// Feature dimension the kind requires, if fixed.
    pub fn feature_dim(self) -> Option<usize> {
        match self {
            KernelKind::Se => None,
            KernelKind::Dog => Some(1),
            KernelKind::DogAdjusted => Some(2),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Se => "se",
            KernelKind::Dog => "dog",
            KernelKind::DogAdjusted => "dog-adj",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "se" => Ok(KernelKind::Se),
            "dog" => Ok(KernelKind::Dog),
            "dog-adj" | "dogadj" | "dog_adj" | "dog-adjusted" => Ok(KernelKind::DogAdjusted),
            other => Err(Error::config(format!("unknown kernel `{other}`"))),
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl serde::Serialize for KernelKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyperMode {
    Fixed,
    Learned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub signal_variance: f64,
    /// Length scale per feature dimension (not squared). A single entry
    /// applies to every dimension.
    pub length_scales: Vec<f64>,
    pub noise_variance: f64,
    pub mode: HyperMode,
}

impl Hyperparams {
    pub fn fixed(signal_variance: f64, length_scales: Vec<f64>, noise_variance: f64) -> Self {
        Hyperparams {
            signal_variance,
            length_scales,
            noise_variance,
            mode: HyperMode::Fixed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.signal_variance) || !positive(self.noise_variance) {
            return Err(Error::invalid("signal and noise variances must be positive"));
        }
        if self.length_scales.is_empty() || !self.length_scales.iter().all(|l| positive(*l)) {
            return Err(Error::invalid("length scales must be positive"));
        }
        Ok(())
    }

    fn length_scale(&self, dim: usize) -> f64 {
        if self.length_scales.len() == 1 {
            self.length_scales[0]
        } else {
            self.length_scales[dim]
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.length_scales.len() == 1 || self.length_scales.len() == dim {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{} length scales for {dim}-dimensional features",
                self.length_scales.len()
            )))
        }
    }
}

fn check_features(kind: KernelKind, dim: usize) -> Result<()> {
    match kind.feature_dim() {
        Some(expected) if expected != dim => Err(Error::invalid(format!(
            "{kind} kernel expects {expected}-dimensional features, got {dim}"
        ))),
        _ if dim == 0 => Err(Error::invalid("empty feature vector")),
        _ => Ok(()),
    }
}

#[inline]
fn se(a: &[f64], b: &[f64], hyper: &Hyperparams) -> f64 {
    let mut r2 = 0.0;
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let d = (x - y) / hyper.length_scale(i);
        r2 += d * d;
    }
    hyper.signal_variance * (-0.5 * r2).exp()
}

/// Covariance between two feature vectors. Every kind is squared
/// exponential in its own feature space.
pub fn kernel_eval(kind: KernelKind, a: &[f64], b: &[f64], hyper: &Hyperparams) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "feature dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    check_features(kind, a.len())?;
    hyper.check_dim(a.len())?;
    Ok(se(a, b, hyper))
}

/// Gram matrix of `inputs` without noise or jitter.
pub fn gram_matrix(kind: KernelKind, inputs: &[Vec<f64>], hyper: &Hyperparams) -> Result<DMatrix<f64>> {
    let n = inputs.len();
    if let Some(first) = inputs.first() {
        check_features(kind, first.len())?;
        hyper.check_dim(first.len())?;
        if inputs.iter().any(|x| x.len() != first.len()) {
            return Err(Error::invalid("inputs have mixed dimensions"));
        }
    }
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = hyper.signal_variance;
        for j in 0..i {
            let v = se(&inputs[i], &inputs[j], hyper);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Diagonal jitter tried, in order, when a factorization fails.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

fn factorize(mut k: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    let mut applied = 0.0;
    for jitter in JITTER_LADDER {
        for i in 0..n {
            k[(i, i)] += jitter - applied;
        }
        applied = jitter;
        if let Some(chol) = Cholesky::new(k.clone()) {
            return Ok((chol, jitter));
        }
    }
    Err(Error::numerical("covariance is not positive definite after maximum jitter"))
}

/// A fitted GP: immutable, so posterior queries can run concurrently.
#[derive(Debug, Clone)]
pub struct GpModel {
    kind: KernelKind,
    hyper: Hyperparams,
    prior_mean: f64,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    factor: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    /// Zero-mean GP conditioned on `(inputs, targets)`.
    pub fn fit(kind: KernelKind, hyper: Hyperparams, inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        Self::fit_with_mean(kind, hyper, 0.0, inputs, targets)
    }

    /// GP with constant prior mean `prior_mean`.
    pub fn fit_with_mean(
        kind: KernelKind,
        hyper: Hyperparams,
        prior_mean: f64,
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        hyper.validate()?;
        if inputs.len() != targets.len() {
            return Err(Error::invalid(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if targets.iter().any(|t| !t.is_finite()) || !prior_mean.is_finite() {
            return Err(Error::invalid("targets must be finite"));
        }
        if inputs.is_empty() {
            return Ok(GpModel {
                kind,
                hyper,
                prior_mean,
                inputs,
                targets,
                factor: None,
                alpha: DVector::zeros(0),
                jitter: 0.0,
            });
        }
        let mut k = gram_matrix(kind, &inputs, &hyper)?;
        for i in 0..inputs.len() {
            k[(i, i)] += hyper.noise_variance;
        }
        let (factor, jitter) = factorize(k)?;
        let centered = DVector::from_iterator(targets.len(), targets.iter().map(|t| t - prior_mean));
        let alpha = factor.solve(&centered);
        Ok(GpModel {
            kind,
            hyper,
            prior_mean,
            inputs,
            targets,
            factor: Some(factor),
            alpha,
            jitter,
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Jitter that was needed on top of the noise to factorize.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior mean and variance of the latent function at `query`.
    /// The variance excludes observation noise.
    pub fn posterior(&self, query: &[f64]) -> Result<(f64, f64)> {
        check_features(self.kind, query.len())?;
        self.hyper.check_dim(query.len())?;
        let factor = match &self.factor {
            None => return Ok((self.prior_mean, self.hyper.signal_variance)),
            Some(f) => f,
        };
        if query.len() != self.inputs[0].len() {
            return Err(Error::invalid("query dimension differs from training inputs"));
        }
        let k_star = DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|x| se(x, query, &self.hyper)));
        let mean = self.prior_mean + k_star.dot(&self.alpha);
        let v = factor
            .l_dirty()
            .solve_lower_triangular(&k_star)
            .ok_or_else(|| Error::numerical("singular covariance factor"))?;
        let mut var = self.hyper.signal_variance - v.norm_squared();
        if var < 0.0 {
            if var < -1e-10 * self.hyper.signal_variance.max(1.0) {
                log::debug!("posterior variance {var} clamped to zero");
            }
            var = 0.0;
        }
        Ok((mean, var))
    }

    /// Predictive distribution of a new noisy observation at `query`.
    pub fn predictive(&self, query: &[f64]) -> Result<(f64, f64)> {
        let (mean, var) = self.posterior(query)?;
        Ok((mean, var + self.hyper.noise_variance))
    }

    /// Log marginal likelihood of the training targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let factor = match &self.factor {
            None => return 0.0,
            Some(f) => f,
        };
        let centered = DVector::from_iterator(self.targets.len(), self.targets.iter().map(|t| t - self.prior_mean));
        let n = self.targets.len() as f64;
        let log_det: f64 = factor.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        -0.5 * centered.dot(&self.alpha) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Log marginal likelihood of `targets` under a GP with constant mean.
pub fn log_marginal_likelihood(
    kind: KernelKind,
    hyper: &Hyperparams,
    prior_mean: f64,
    inputs: &[Vec<f64>],
    targets: &[f64],
) -> Result<f64> {
    let model = GpModel::fit_with_mean(kind, hyper.clone(), prior_mean, inputs.to_vec(), targets.to_vec())?;
    Ok(model.log_marginal_likelihood())
}

/// Settings for [`fit_hyperparams`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Returned unchanged in `Fixed` mode; otherwise the noise variance is
    /// kept and the other entries seed the first start.
    pub initial: Hyperparams,
    pub n_starts: usize,
    pub seed: u64,
    /// Search range, as multiples of the data scale, in log space.
    pub scale_range: (f64, f64),
    pub max_evals_per_start: usize,
}

impl FitConfig {
    pub fn new(initial: Hyperparams, seed: u64) -> Self {
        FitConfig {
            initial,
            n_starts: 8,
            seed,
            scale_range: (1e-3, 1e3),
            max_evals_per_start: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub hyper: Hyperparams,
    /// Log marginal likelihood at `hyper` (of the mean-centred targets).
    pub log_likelihood: f64,
    /// Set when no start produced a finite likelihood; `hyper` is then the
    /// configured initial value.
    pub warning: bool,
}

/// Maximizes the log marginal likelihood of the mean-centred targets over
/// signal variance and length scales with multi-start Nelder–Mead in log
/// space. Noise variance is not fitted.
pub fn fit_hyperparams(kind: KernelKind, inputs: &[Vec<f64>], targets: &[f64], config: &FitConfig) -> Result<FitResult> {
    config.initial.validate()?;
    if config.initial.mode == HyperMode::Fixed {
        return Ok(FitResult {
            hyper: config.initial.clone(),
            log_likelihood: f64::NAN,
            warning: false,
        });
    }
    if inputs.len() < 2 || inputs.len() != targets.len() {
        return Err(Error::invalid("hyperparameter fitting needs at least two training points"));
    }
    let dim = inputs[0].len();
    check_features(kind, dim)?;
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    let noise = config.initial.noise_variance;
    let signal_scale = if var > 1e-12 * (1.0 + mean * mean) { var } else { noise };

    let n_ls = if config.initial.length_scales.len() == 1 { 1 } else { dim };
    let mut scales = vec![signal_scale];
    for d in 0..n_ls {
        let (lo, hi) = inputs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            if n_ls == 1 {
                let (a, b) = x.iter().fold((lo, hi), |(l, h), v| (l.min(*v), h.max(*v)));
                (a, b)
            } else {
                (lo.min(x[d]), hi.max(x[d]))
            }
        });
        scales.push(if hi > lo { hi - lo } else { 1.0 });
    }
    let lower: Vec<f64> = scales.iter().map(|s| (s * config.scale_range.0).ln()).collect();
    let upper: Vec<f64> = scales.iter().map(|s| (s * config.scale_range.1).ln()).collect();

    let to_hyper = |theta: &[f64]| Hyperparams {
        signal_variance: theta[0].exp(),
        length_scales: theta[1..].iter().map(|v| v.exp()).collect(),
        noise_variance: noise,
        mode: HyperMode::Learned,
    };
    let objective = |theta: &[f64]| -> f64 {
        match log_marginal_likelihood(kind, &to_hyper(theta), mean, inputs, targets) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut starts = Vec::with_capacity(config.n_starts.max(1));
    let mut first: Vec<f64> = std::iter::once(config.initial.signal_variance)
        .chain((0..n_ls).map(|d| config.initial.length_scale(d.min(config.initial.length_scales.len() - 1))))
        .map(f64::ln)
        .collect();
    for ((v, lo), hi) in first.iter_mut().zip(&lower).zip(&upper) {
        *v = v.clamp(*lo, *hi);
    }
    starts.push(first);
    while starts.len() < config.n_starts.max(1) {
        starts.push(lower.iter().zip(&upper).map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect());
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starts {
        let (theta, value) = nelder_mead(&objective, start, &lower, &upper, config.max_evals_per_start);
        if value.is_finite() && best.as_ref().is_none_or(|(_, b)| value < *b) {
            best = Some((theta, value));
        }
    }
    Ok(match best {
        Some((theta, value)) => FitResult {
            hyper: to_hyper(&theta),
            log_likelihood: -value,
            warning: false,
        },
        None => {
            log::warn!("hyperparameter fit failed from every start; keeping initial values");
            FitResult {
                hyper: config.initial.clone(),
                log_likelihood: f64::NAN,
                warning: true,
            }
        }
    })
}

/// Box-constrained Nelder–Mead; points are projected onto the box.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: Vec<f64>, lower: &[f64], upper: &[f64], max_evals: usize) -> (Vec<f64>, f64) {
    let n = start.len();
    let project = |x: &mut Vec<f64>| {
        for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
            *v = v.clamp(*lo, *hi);
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = f(&start);
    simplex.push((start.clone(), f0));
    for i in 0..n {
        let mut x = start.clone();
        let step = 0.1 * (upper[i] - lower[i]).max(1e-6);
        x[i] = if x[i] + step <= upper[i] { x[i] + step } else { x[i] - step };
        project(&mut x);
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let mut evals = n + 1;
    let centroid = |s: &[(Vec<f64>, f64)]| -> Vec<f64> {
        let mut c = vec![0.0; n];
        for (x, _) in &s[..n] {
            for (ci, xi) in c.iter_mut().zip(x) {
                *ci += xi / n as f64;
            }
        }
        c
    };
    let along = |c: &[f64], x: &[f64], t: f64| -> Vec<f64> { c.iter().zip(x).map(|(ci, xi)| ci + t * (xi - ci)).collect() };

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        if spread.abs() < 1e-9 * (1.0 + simplex[0].1.abs()) && simplex[0].1.is_finite() {
            break;
        }
        let c = centroid(&simplex);
        let worst = simplex[n].clone();
        let mut reflected = along(&c, &worst.0, -1.0);
        project(&mut reflected);
        let fr = f(&reflected);
        evals += 1;
        if fr < simplex[0].1 {
            let mut expanded = along(&c, &worst.0, -2.0);
            project(&mut expanded);
            let fe = f(&expanded);
            evals += 1;
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let mut contracted = if fr < worst.1 {
                along(&c, &reflected, 0.5)
            } else {
                along(&c, &worst.0, 0.5)
            };
            project(&mut contracted);
            let fc = f(&contracted);
            evals += 1;
            if fc < worst.1.min(fr) {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let x = along(&best, &item.0, 0.5);
                    let fx = f(&x);
                    *item = (x, fx);
                }
                evals += n;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

/// GP over normalized controller parameters predicting the gap between the
/// table score and the score measured on the evaluation model. Starts from
/// a zero prior.
#[derive(Debug, Clone)]
pub struct MismatchModel {
    gp: GpModel,
}

impl MismatchModel {
    pub fn new(hyper: Hyperparams) -> Result<Self> {
        Ok(MismatchModel {
            gp: GpModel::fit(KernelKind::Se, hyper, Vec::new(), Vec::new())?,
        })
    }

    pub fn hyper(&self) -> &Hyperparams {
        self.gp.hyper()
    }

    pub fn observations(&self) -> usize {
        self.gp.len()
    }

    /// Adds the observation `phi_sim - phi_hw` at `x` and refactorizes.
    pub fn update(&self, x: &[f64], phi_sim: f64, phi_hw: f64) -> Result<Self> {
        let mut inputs = self.gp.inputs().to_vec();
        let mut targets = self.gp.targets().to_vec();
        inputs.push(x.to_vec());
        targets.push(phi_sim - phi_hw);
        Ok(MismatchModel {
            gp: GpModel::fit(KernelKind::Se, self.gp.hyper().clone(), inputs, targets)?,
        })
    }

    /// Posterior mean of the mismatch at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.gp.posterior(x)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(l: Vec<f64>) -> Hyperparams {
        Hyperparams::fixed(1.0, l, 1e-2)
    }

    #[test]
    fn zero_distance_is_signal_variance() {
        let h = Hyperparams::fixed(3.5, vec![0.7], 1e-2);
        for (kind, x) in [
            (KernelKind::Se, vec![0.1, 0.2, 0.3]),
            (KernelKind::Dog, vec![12.0]),
            (KernelKind::DogAdjusted, vec![12.0, -3.0]),
        ] {
            assert_eq!(kernel_eval(kind, &x, &x, &h).unwrap(), 3.5);
        }
    }

    #[test]
    fn dog_one_length_scale_apart() {
        let h = hyper(vec![4.0]);
        let k = kernel_eval(KernelKind::Dog, &[10.0], &[14.0], &h).unwrap();
        assert!((k - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn adjusted_kernel_separates_mismatch() {
        let h = Hyperparams::fixed(2.0, vec![4.0, 1.5], 1e-2);
        let plain = kernel_eval(KernelKind::Dog, &[10.0], &[10.0], &Hyperparams::fixed(2.0, vec![4.0], 1e-2)).unwrap();
        let adj = kernel_eval(KernelKind::DogAdjusted, &[10.0, 0.0], &[10.0, 1.5], &h).unwrap();
        assert!((adj - 2.0 * (-0.5f64).exp()).abs() < 1e-14);
        assert!(adj < plain);
    }

    #[test]
    fn dimension_mismatch_is_invalid() {
        let h = hyper(vec![1.0]);
        assert!(matches!(
            kernel_eval(KernelKind::Dog, &[1.0, 2.0], &[1.0, 2.0], &h),
            Err(Error::InvalidArgument(_))
        ));
        assert!(kernel_eval(KernelKind::Se, &[1.0], &[1.0, 2.0], &h).is_err());
        let h3 = hyper(vec![1.0, 1.0, 1.0]);
        assert!(kernel_eval(KernelKind::Se, &[1.0, 2.0], &[1.0, 2.0], &h3).is_err());
    }

    #[test]
    fn empty_model_returns_prior() {
        let h = Hyperparams::fixed(2.5, vec![1.0], 0.01);
        let gp = GpModel::fit(KernelKind::Dog, h, vec![], vec![]).unwrap();
        assert_eq!(gp.predictive(&[3.0]).unwrap(), (0.0, 2.51));
        assert_eq!(gp.posterior(&[3.0]).unwrap(), (0.0, 2.5));
    }

    #[test]
    fn interpolates_with_vanishing_noise() {
        let h = Hyperparams::fixed(1.0, vec![1.0], 1e-12);
        let xs = vec![vec![0.0], vec![1.3], vec![2.1]];
        let ys = vec![0.5, -1.0, 2.0];
        let gp = GpModel::fit(KernelKind::Dog, h, xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((gp.posterior(x).unwrap().0 - y).abs() < 1e-6);
        }
    }

    #[test]
    fn fixed_mode_bypasses_fit() {
        let h = Hyperparams::fixed(7.0, vec![0.3], 0.02);
        let r = fit_hyperparams(KernelKind::Dog, &[vec![0.0], vec![1.0]], &[1.0, 2.0], &FitConfig::new(h.clone(), 1)).unwrap();
        assert_eq!(r.hyper, h);
        assert!(!r.warning);
    }

    #[test]
    fn fit_needs_two_points() {
        let mut h = hyper(vec![1.0]);
        h.mode = HyperMode::Learned;
        assert!(fit_hyperparams(KernelKind::Dog, &[vec![0.0]], &[1.0], &FitConfig::new(h, 1)).is_err());
    }

    #[test]
    fn fit_is_deterministic_per_seed() {
        let mut h = hyper(vec![1.0]);
        h.mode = HyperMode::Learned;
        let xs: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 * 0.4]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x[0]).sin()).collect();
        let a = fit_hyperparams(KernelKind::Dog, &xs, &ys, &FitConfig::new(h.clone(), 9)).unwrap();
        let b = fit_hyperparams(KernelKind::Dog, &xs, &ys, &FitConfig::new(h, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatch_prior_is_zero_and_interpolates() {
        let h = Hyperparams::fixed(25.0, vec![0.2], 1e-4);
        let m = MismatchModel::new(h).unwrap();
        assert_eq!(m.predict(&[0.3, 0.4]).unwrap(), 0.0);
        let x0 = [0.3, 0.4];
        let m = m.update(&x0, 30.0, 25.0).unwrap();
        assert!((m.predict(&x0).unwrap() - 5.0).abs() < 0.01);
        let far = [0.3 + 10.0 * 0.2, 0.4];
        assert!(m.predict(&far).unwrap().abs() < 1e-3 * 5.0);
        assert_eq!(m.observations(), 1);
    }
}
