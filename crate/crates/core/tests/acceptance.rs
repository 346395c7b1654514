//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Campaign criteria build their tables in a
//! temporary directory, so a full run takes about a minute in release mode.

use std::fs;
use std::time::Instant;

use dogbo::controller::{make_swing_spline, ParamBounds, SpeedProfile, Variant};
use dogbo::dog::{episode_score, DogThresholds};
use dogbo::gp::{gram_matrix, GpModel, Hyperparams, KernelKind};
use dogbo::harness::{
    correlate, emit_report, median, run_campaign, run_campaign_on, spearman, summarize, trial_rows,
    trials_to_reference, trials_to_reference_mean, Arm, CampaignConfig, CorrelateConfig, KernelSummary,
    ReportFormat, TRIALS_FILE,
};
use dogbo::sim::{EpisodeResult, StepRecord, Termination};
use dogbo::tablegen::{build_table_with, generate_table, load_table, sample_grid, save_table, TableSpec};
use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GP_TOL: f64 = 1e-8;
const GP_SECONDS: f64 = 10.0;
const PSD_TOL: f64 = -1e-8;
const SPLINE_TOL: f64 = 1e-9;
const SPEARMAN_MAX: f64 = -0.4;
const SUCCESS_GAP: f64 = 0.20;
const WALK_COST_GAP: f64 = 0.10;
const TTFW_RATIO: f64 = 0.5;
const REFERENCE_TOL: f64 = 0.05;
const TABLE_ROWS: usize = 20_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

const KINDS: [KernelKind; 3] = [KernelKind::Se, KernelKind::Dog, KernelKind::DogAdjusted];

fn dims(kind: KernelKind) -> usize {
    kind.feature_dim().unwrap_or(9)
}

fn random_set(rng: &mut ChaCha8Rng, kind: KernelKind, n: usize) -> (Vec<Vec<f64>>, Hyperparams) {
    let scale = if kind == KernelKind::Se { 1.0 } else { 50.0 };
    let x = (0..n).map(|_| (0..dims(kind)).map(|_| scale * rng.random::<f64>()).collect()).collect();
    let lengths = (0..dims(kind)).map(|_| scale * rng.random_range(0.05..0.5)).collect();
    (x, Hyperparams::fixed(rng.random_range(0.5..5.0), lengths, rng.random_range(1e-3..1e-1)))
}

fn se(a: &[f64], b: &[f64], h: &Hyperparams) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| ((x - y) / h.length_scales[i.min(h.length_scales.len() - 1)]).powi(2))
        .sum();
    h.signal_variance * (-0.5 * r2).exp()
}

fn gp_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let kind = KINDS[i % 3];
        let n = rng.random_range(1..=50);
        let (x, h) = random_set(&mut rng, kind, n);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let gp = GpModel::fit(kind, h.clone(), x.clone(), y.clone()).unwrap();
        let k = DMatrix::from_fn(n, n, |a, b| se(&x[a], &x[b], &h) + if a == b { h.noise_variance } else { 0.0 });
        let inv = k.try_inverse().unwrap();
        let alpha = &inv * DVector::from_column_slice(&y);
        let (queries, _) = random_set(&mut rng, kind, 5);
        for q in &queries {
            let ks = DVector::from_fn(n, |a, _| se(&x[a], q, &h));
            let mean = ks.dot(&alpha);
            let var = (se(q, q, &h) - (ks.transpose() * &inv * &ks)[(0, 0)]).max(0.0);
            let (m, v) = gp.posterior(q).unwrap();
            worst = worst.max((m - mean).abs()).max((v - var).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < GP_TOL && secs < GP_SECONDS,
        format!("max deviation {worst:.1e} (tol {GP_TOL:e}), {secs:.2} s (limit {GP_SECONDS} s)"),
    )
}

fn gram_psd() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut lowest = f64::INFINITY;
    for kind in KINDS {
        for _ in 0..100 {
            let (x, h) = random_set(&mut rng, kind, 50);
            let k = gram_matrix(kind, &x, &h).unwrap();
            lowest = lowest.min(SymmetricEigen::new(k).eigenvalues.min());
        }
    }
    outcome(lowest >= PSD_TOL, format!("lowest eigenvalue {lowest:.2e} over 300 sets (floor {PSD_TOL:e})"))
}

fn spline_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let mut v = || Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let (p0, v0, p1, v1) = (v(), v(), v(), v());
        let t = rng.random_range(0.05..2.0);
        let sp = make_swing_spline(p0, v0, p1, v1, t).unwrap();
        let (a, da) = sp.eval(0.0);
        let (b, db) = sp.eval(t);
        for (got, want) in [(&a, p0), (&da, v0), (&b, p1), (&db, v1)] {
            worst = worst.max((got[0] - want.x).abs()).max((got[1] - want.y).abs());
        }
    }
    outcome(worst < SPLINE_TOL, format!("max boundary error {worst:.1e} over 1000 draws (tol {SPLINE_TOL:e})"))
}

fn score_arithmetic() -> Outcome {
    let th = DogThresholds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut mismatches = 0;
    for _ in 0..50 {
        let n = rng.random_range(0..25);
        let steps: Vec<StepRecord> = (0..n)
            .map(|i| {
                let h0 = rng.random_range(0.7..1.0);
                let lean = rng.random_range(-0.3..0.3);
                StepRecord {
                    step_index: i,
                    duration: rng.random_range(0.05..0.7),
                    max_leg_retraction: rng.random_range(0.0..0.1),
                    com_height_start: h0,
                    com_height_end: h0 + rng.random_range(-0.08..0.08),
                    trunk_lean_start: lean,
                    trunk_lean_end: lean + rng.random_range(-0.2..0.2),
                    avg_speed: rng.random_range(-0.2..1.4),
                    distance_start: 0.0,
                    torque_abs_sum: 0.0,
                }
            })
            .collect();
        let t_max = 3.5;
        let t_sim = if rng.random_bool(0.5) { t_max } else { rng.random_range(0.0..t_max) };
        let ep = EpisodeResult {
            per_step_speeds: steps.iter().map(|s| s.avg_speed).collect(),
            steps: steps.clone(),
            t_sim,
            t_max,
            fell: t_sim < t_max,
            x_fall: 0.0,
            termination: if t_sim < t_max { Termination::Fell } else { Termination::TimeLimit },
        };
        let mut total = 0.0;
        for s in &steps {
            let m1 = if s.max_leg_retraction > th.retraction_min { 1.0 } else { 0.0 };
            let m2 = if (s.com_height_end - s.com_height_start).abs() < th.com_height_tol { 1.0 } else { 0.0 };
            let m3 = if (s.trunk_lean_end - s.trunk_lean_start).abs() < th.trunk_lean_tol { 1.0 } else { 0.0 };
            total += m1 + m2 + m3 + s.avg_speed;
        }
        let phi = total * (t_sim / t_max);
        let g = episode_score(&ep, &th);
        if g.score_total != total || g.phi != phi {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of 50 episodes differ from the hand computation"))
}

fn score_cost_correlation() -> Outcome {
    let points = correlate(1000, &CorrelateConfig::new(105)).unwrap();
    let phi: Vec<f64> = points.iter().map(|p| p.phi).collect();
    let cost: Vec<f64> = points.iter().map(|p| p.cost).collect();
    let rho = spearman(&phi, &cost);
    outcome(rho <= SPEARMAN_MAX, format!("spearman {rho:.3} over 1000 controllers (limit {SPEARMAN_MAX})"))
}

fn kernel<'a>(s: &'a [KernelSummary], name: &str) -> &'a KernelSummary {
    s.iter().find(|k| k.kernel == name).unwrap()
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "GP oracle equivalence", gp_oracle()),
        (2, "kernel validity", gram_psd()),
        (3, "spline contract", spline_contract()),
        (4, "score arithmetic", score_arithmetic()),
        (5, "score/cost rank correlation", score_cost_correlation()),
    ];

    // Headline campaign: 3.5 s short sims, multi-segment profile, 15% perturbation.
    let mut spec = TableSpec::new(ParamBounds::default_for(Variant::NineD));
    spec.seed = 11;
    spec.sim_seconds = 3.5;
    let table = generate_table(&spec, TABLE_ROWS).unwrap();
    let table_path = dir.path().join("main.tbl");
    save_table(&table, &table_path).unwrap();

    let cfg = CampaignConfig::new(table_path.clone(), dir.path().join("main"));
    let report = run_campaign_on(&cfg, &table).unwrap();
    let summary = summarize(&trial_rows(&report));
    let (dog, se) = (kernel(&summary.kernels, "dog"), kernel(&summary.kernels, "se"));
    let gap = dog.success_rate_at_n - se.success_rate_at_n;
    let (dw, sw) = (dog.mean_best_walking_cost.unwrap(), se.mean_best_walking_cost.unwrap());
    let (dci, sci) = (dog.best_walking_cost_ci95.unwrap_or(0.0), se.best_walking_cost_ci95.unwrap_or(0.0));
    let cost_gap = (sw - dw) / sw;
    let separated = dw + dci < sw - sci;
    results.push((
        6,
        "success rate and walking cost",
        outcome(
            gap >= SUCCESS_GAP && dw < sw && (cost_gap >= WALK_COST_GAP || separated),
            format!(
                "success dog {:.2} vs se {:.2} (gap {gap:.2}, need {SUCCESS_GAP}); walking cost dog {dw:.3}±{dci:.3} vs se {sw:.3}±{sci:.3} (gap {:.1}%, need {}% or disjoint CIs)",
                dog.success_rate_at_n,
                se.success_rate_at_n,
                100.0 * cost_gap,
                100.0 * WALK_COST_GAP
            ),
        ),
    ));
    let (dt, st) = (dog.median_trials_to_first_walk, se.median_trials_to_first_walk);
    results.push((
        7,
        "trials to first walk",
        outcome(dt <= TTFW_RATIO * st, format!("median dog {dt} vs se {st} (need dog <= {TTFW_RATIO} x se)")),
    ));

    // Model mismatch: 1.5 s short sims on the nominal model, evaluation on a
    // 15% heavier trunk.
    let mut short = spec.clone();
    short.sim_seconds = 1.5;
    let short_table = generate_table(&short, TABLE_ROWS).unwrap();
    let mut adj = CampaignConfig::new(dir.path().join("unused.tbl"), dir.path().join("adj"));
    adj.arms = vec![Arm::Bo(KernelKind::Dog), Arm::Bo(KernelKind::DogAdjusted)];
    adj.profile = SpeedProfile::easy();
    adj.eval_mass_scale = 1.15;
    adj.center_targets = true;
    let rows = trial_rows(&run_campaign_on(&adj, &short_table).unwrap());
    let m_adj = median(&trials_to_reference(&rows, "dog", "dog-adj", REFERENCE_TOL));
    let m_dog = median(&trials_to_reference(&rows, "dog", "dog", REFERENCE_TOL));
    let s_adj = median(&trials_to_reference_mean(&rows, "dog", "dog-adj", REFERENCE_TOL));
    let s_dog = median(&trials_to_reference_mean(&rows, "dog", "dog", REFERENCE_TOL));
    results.push((
        8,
        "adjusted kernel under mismatch",
        outcome(
            m_adj < m_dog,
            format!(
                "median trials to within {}% of the dog optimum: dog-adj {m_adj} vs dog {m_dog} (shared target: {s_adj} vs {s_dog})",
                100.0 * REFERENCE_TOL
            ),
        ),
    ));

    let mut small = CampaignConfig::new(table_path.clone(), dir.path().join("rerun_a"));
    small.n_runs = 8;
    small.arms = vec![
        Arm::Bo(KernelKind::Dog),
        Arm::Bo(KernelKind::DogAdjusted),
        Arm::Bo(KernelKind::Se),
        Arm::Random,
    ];
    let write = |cfg: &CampaignConfig| -> Vec<u8> {
        emit_report(&run_campaign(cfg).unwrap(), &cfg.output, &[ReportFormat::Csv]).unwrap();
        fs::read(cfg.output.join(TRIALS_FILE)).unwrap()
    };
    let first = write(&small);
    small.output = dir.path().join("rerun_b");
    let second = write(&small);
    results.push((
        9,
        "reproducibility",
        outcome(first == second, format!("{} byte CSV, rerun identical: {}", first.len(), first == second)),
    ));

    let loaded = load_table(&table_path).unwrap();
    let grid = sample_grid(&spec.bounds, &spec.frozen, TABLE_ROWS, spec.seed, spec.scheme).unwrap();
    let sequential = build_table_with(&spec, &grid, false).unwrap();
    let round_trip = loaded == table;
    let deterministic = sequential == table && sequential.to_text() == fs::read_to_string(&table_path).unwrap();
    results.push((
        10,
        "table round trip",
        outcome(
            round_trip && deterministic,
            format!("{TABLE_ROWS} rows: load identical {round_trip}, sequential build identical {deterministic}"),
        ),
    ));

    let mut failed = 0;
    for (n, name, o) in &results {
        println!("criterion {n:>2} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
