use ltrc_core::cate::learner::FittedLearner;
use ltrc_core::cate::{dr_components, evaluate_mse, ipw_s_components, r_components, TuningConfig};
use ltrc_core::nuisance::{ConditionalDistribution, DistKind, PropensityModel};
use ltrc_core::operators::mu;
use ltrc_core::sim::{truth_bundle, TruthOffsets};
use ltrc_core::{crossfit_cate, oracle_cate, CateModel, Dataset, LearnerConfig, LossKind, NuisanceBundle, NuisanceConfig, ObservedRecord, ScenarioKind, ScenarioSpec, StepFunction, Transform};

/// True F with no truncation or censoring hazard and a constant propensity.
fn no_ltrc_bundle(pi: f64) -> NuisanceBundle {
    let truth = truth_bundle(&ScenarioSpec::new(ScenarioKind::CateI), 300, 0.05, TruthOffsets::default());
    let one = |kind| ConditionalDistribution::fixed(kind, StepFunction::constant(1.0));
    NuisanceBundle::oracle(PropensityModel::Constant(pi), truth.f, one(DistKind::CdfG), one(DistKind::SurvivalSd), 0.05)
}

fn records() -> Vec<ObservedRecord> {
    let (_, data) = ScenarioSpec::new(ScenarioKind::CateI).gen_sample(200, 3).unwrap();
    data.records.into_iter().map(|r| ObservedRecord::new(0.0, r.x, 1, r.a, r.z)).collect()
}

#[test]
fn r_loss_without_ltrc_is_the_classical_residual_form() {
    let b = no_ltrc_bundle(0.4);
    let nu = Transform::Log;
    for r in records() {
        let p = r_components(&r, &b, &nu).unwrap();
        let (m1, m0) = (mu(&b.f, 1, &r.z, &nu).unwrap(), mu(&b.f, 0, &r.z, &nu).unwrap());
        let mu_tilde = 0.4 * m1 + 0.6 * m0;
        assert!((p.weight - 1.0).abs() < 1e-12);
        assert!((p.outcome - (r.x.ln() - mu_tilde)).abs() < 1e-12);
        assert!((p.multiplier - (r.a as f64 - 0.4)).abs() < 1e-15);
    }
}

#[test]
fn dr_loss_without_ltrc_is_the_classical_pseudo_outcome() {
    let b = no_ltrc_bundle(0.3);
    let nu = Transform::Log;
    for r in records() {
        let p = dr_components(&r, &b, &nu, None).unwrap();
        let (m1, m0) = (mu(&b.f, 1, &r.z, &nu).unwrap(), mu(&b.f, 0, &r.z, &nu).unwrap());
        let (a, m_a) = (r.a as f64, if r.a == 1 { m1 } else { m0 });
        let classical = (a - 0.3) / (0.3 * 0.7) * (r.x.ln() - m_a) + m1 - m0;
        assert!((p.weight - 1.0).abs() < 1e-12);
        assert!((p.outcome - classical).abs() < 1e-12);
        assert_eq!(p.multiplier, 1.0);
    }
}

#[test]
fn ipw_s_weights() {
    let b = no_ltrc_bundle(0.5);
    let nu = Transform::Log;
    for mut r in records().into_iter().take(20) {
        let p = ipw_s_components(&r, &b, &nu, None).unwrap();
        assert_eq!(p.weight, 1.0);
        let direct = (p.outcome - 0.3f64).powi(2);
        assert!((p.loss(0.3) - direct).abs() < 1e-12);
        r.delta = 0;
        let p = ipw_s_components(&r, &b, &nu, Some(&[0])).unwrap();
        assert_eq!(p.weight, 0.0);
        assert_eq!(p.v, vec![r.z[0]]);
        assert_eq!(p.loss(0.3), 0.0);
    }
}

fn constant_model(c: f64) -> CateModel {
    CateModel {
        learner: FittedLearner::RidgeLinear { intercept: c, coefficients: vec![0.0, 0.0] },
        config: LearnerConfig::RidgeLinear { ridge: 0.0 },
        v_columns: None,
        cv_loss: None,
        seed: 0,
    }
}

#[test]
fn mse_examples() {
    let z: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 50.0, 0.1]).collect();
    let truth = |v: &[f64]| 0.2 - 0.2 * v[0];
    let exact = CateModel {
        learner: FittedLearner::RidgeLinear { intercept: 0.2, coefficients: vec![-0.2, 0.0] },
        ..constant_model(0.0)
    };
    assert!(evaluate_mse(&exact, &z, &truth) < 1e-30);
    assert!((evaluate_mse(&constant_model(0.7), &z, &|_| 0.2) - 0.25).abs() < 1e-15);
}

fn small_learner() -> LearnerConfig {
    LearnerConfig::BoostedTrees { params: None, tuning: TuningConfig { n_search: 2, cv_folds: 3, max_trees: 60, ..TuningConfig::default() } }
}

#[test]
fn crossfit_cate_is_deterministic_and_serializable() {
    let (_, data): (_, Dataset) = ScenarioSpec::new(ScenarioKind::CateI).gen_sample(300, 8).unwrap();
    let cfg = NuisanceConfig::from_label("Cox1/lgs1-Cox1-Cox1").unwrap();
    let fit = |seed| crossfit_cate(&data, LossKind::LtrcR, &cfg, &small_learner(), 3, &Transform::Log, 0.1, seed).unwrap();
    let (a, b) = (fit(4), fit(4));
    assert_eq!(a.model, b.model);
    let back = CateModel::from_json(&a.model.to_json().unwrap()).unwrap();
    assert_eq!(back, a.model);
    for z in [[0.1, -0.4], [0.9, 0.9]] {
        assert!(a.model.predict_z(&z).is_finite());
    }
}

#[test]
fn oracle_ridge_recovers_linear_effect() {
    let spec = ScenarioSpec::new(ScenarioKind::CateI);
    let (_, data) = spec.gen_sample(3000, 12).unwrap();
    let truth = truth_bundle(&spec, 400, 0.1, TruthOffsets::default());
    let fit = oracle_cate(&data, LossKind::LtrcR, &truth, &LearnerConfig::RidgeLinear { ridge: 1e-6 }, &Transform::Log, 1).unwrap();
    let FittedLearner::RidgeLinear { intercept, coefficients } = &fit.model.learner else { panic!("ridge learner expected") };
    assert!((intercept - 0.2).abs() < 0.05, "intercept {intercept}");
    assert!((coefficients[0] + 0.2).abs() < 0.05, "slope {}", coefficients[0]);
    assert!(coefficients[1].abs() < 0.05, "slope {}", coefficients[1]);
}
