use dogbo::controller::{ControllerParams, Grf, ParamBounds, SpeedProfile, Variant};
use dogbo::sim::{applied_grf, clamp_grf, perturb_model, run_episode, ModelParams, RobotState, Termination};
use proptest::prelude::*;

fn walk(params: &ControllerParams, model: &ModelParams, profile: &SpeedProfile, t_max: f64) -> dogbo::sim::EpisodeResult {
    run_episode(params, profile, model, t_max, &RobotState::at_rest(params.z_des)).unwrap()
}

#[test]
fn reference_walks_and_heavier_trunk_falls() {
    let p = ControllerParams::reference();
    let profile = SpeedProfile::constant(0.4, 30).unwrap();
    let ep = walk(&p, &ModelParams::default(), &profile, 30.0);
    assert!(!ep.fell);
    assert!(ep.steps.len() >= 30, "{} steps", ep.steps.len());
    assert_eq!(ep.termination, Termination::ProfileComplete);

    let mut heavy = ModelParams::default();
    heavy.trunk_mass *= 1.5;
    assert!(walk(&p, &heavy, &profile, 30.0).fell);
}

fn params_in_bounds() -> impl Strategy<Value = ControllerParams> {
    prop::collection::vec(0.0..=1.0f64, 9).prop_map(|u| {
        let b = ParamBounds::default_for(Variant::NineD);
        ControllerParams::from_free_values(Variant::NineD, &b.scale(&u), &ControllerParams::reference()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn episodes_are_deterministic_and_well_formed(p in params_in_bounds(), speed in 0.0..1.2f64) {
        let model = ModelParams::default();
        let profile = SpeedProfile::constant(speed, 12).unwrap();
        let a = walk(&p, &model, &profile, 6.0);
        let b = walk(&p, &model, &profile, 6.0);
        prop_assert_eq!(&a, &b);

        prop_assert!(a.t_sim <= a.t_max);
        prop_assert!(!a.fell || a.t_sim < a.t_max);
        prop_assert!(a.x_fall >= 0.0);
        prop_assert_eq!(a.per_step_speeds.len(), a.steps.len());
        for s in &a.steps {
            prop_assert!(s.duration > 0.0);
            prop_assert!(s.avg_speed.is_finite());
        }
        // Step durations tile the episode up to the unfinished last step.
        let dt = model.control_dt;
        let stepped: f64 = a.steps.iter().map(|s| s.duration).sum();
        let partial = a.t_sim - stepped;
        prop_assert!(partial >= -dt, "steps overrun t_sim by {}", -partial);
        if a.termination == Termination::ProfileComplete {
            prop_assert!(partial.abs() <= dt);
        }
    }

    #[test]
    fn applied_forces_stay_in_the_friction_cone(
        fx in -5000.0..5000.0f64,
        fz in -5000.0..5000.0f64,
        mu in 0.05..2.0f64,
    ) {
        let g = clamp_grf(Grf { fx, fz }, mu);
        prop_assert!(g.fz >= 0.0);
        prop_assert!(g.fx.abs() <= mu * g.fz + 1e-12);

        let model = ModelParams { friction_coeff: mu, ..ModelParams::default() };
        let a = applied_grf(&RobotState::at_rest(0.85), Grf { fx, fz }, &model);
        prop_assert!(a.fz >= 0.0);
        prop_assert!(a.fx.abs() <= mu * a.fz + 1e-12);
    }

    #[test]
    fn perturbation_stays_in_range(mag in 0.0..0.99f64, seed in any::<u64>()) {
        let base = ModelParams::default();
        let m = perturb_model(&base, mag, seed).unwrap();
        for (v, b) in [(m.trunk_mass, base.trunk_mass), (m.trunk_inertia, base.trunk_inertia)] {
            let f = v / b;
            prop_assert!(f >= 1.0 - mag - 1e-12 && f <= 1.0 + mag + 1e-12);
        }
        prop_assert_eq!(m, perturb_model(&base, mag, seed).unwrap());
        prop_assert_eq!(m.gravity, base.gravity);
    }
}
