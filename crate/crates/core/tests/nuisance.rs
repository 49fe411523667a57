use ltrc_core::nuisance::cox::{breslow, fit_cox, score_and_information};
use ltrc_core::nuisance::scheme::fit_event_cdf_f;
use ltrc_core::nuisance::{CoxData, DistKind};
use ltrc_core::{fit_scheme_a, gen_ate_sample, NuisanceConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn weighted_design(seed: u64, n: usize) -> CoxData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = CoxData::new(2);
    for _ in 0..n {
        let x = [rng.random::<f64>() * 2.0 - 1.0, (rng.random::<f64>() < 0.5) as u8 as f64];
        let entry = rng.random::<f64>();
        let exit = entry + 0.05 + rng.random::<f64>() * (2.0 - x[0]);
        // Rounded exits create ties.
        let exit = (exit * 20.0).round() / 20.0 + 0.001;
        d.push(entry, exit, rng.random::<f64>() < 0.7, 0.5 + rng.random::<f64>(), &x);
    }
    d
}

#[test]
fn zero_coefficients_give_weighted_nelson_aalen() {
    let d = weighted_design(1, 300);
    let (times, incs) = breslow(&d, &[0.0, 0.0]).unwrap();
    let mut event_times: Vec<f64> = (0..d.len()).filter(|&i| d.event[i]).map(|i| d.exit[i]).collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    assert_eq!(times, event_times);
    for (t, inc) in times.iter().zip(&incs) {
        let events: f64 = (0..d.len()).filter(|&i| d.event[i] && d.exit[i] == *t).map(|i| d.weight[i]).sum();
        let at_risk: f64 = (0..d.len()).filter(|&i| d.entry[i] < *t && d.exit[i] >= *t).map(|i| d.weight[i]).sum();
        assert!((inc - events / at_risk).abs() <= 1e-12, "t={t}");
    }
}

#[test]
fn penalized_score_vanishes_at_the_fit() {
    let d = weighted_design(2, 400);
    for ridge in [0.0, 0.5, 5.0] {
        let fit = fit_cox(&d, ridge).unwrap();
        let (score, _) = score_and_information(&d, &fit.beta, ridge).unwrap();
        assert!(score.iter().all(|s| s.abs() <= 1e-6), "ridge {ridge}: {score:?}");
        assert!(fit.baseline_hazard_increments.iter().all(|&h| h >= 0.0));
    }
}

#[test]
fn fitted_distributions_are_proper() {
    let (_, data) = gen_ate_sample(600, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for label in ["Cox1/lgs1-Cox1-Cox1", "Cox2/lgs2-Cox2-Cox2", "pCox/gbm-pCox-pCox"] {
        let b = fit_scheme_a(&data, &NuisanceConfig::from_label(label).unwrap(), 0.1).unwrap();
        for _ in 0..1000 {
            let z = [rng.random::<f64>(), rng.random::<f64>()];
            let a = rng.random::<bool>() as u8;
            let q = rng.random::<f64>() * 3.0;
            let (t1, t2) = (rng.random::<f64>() * 8.0, rng.random::<f64>() * 8.0);
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            for dist in [&b.f, &b.g, &b.sd] {
                let (vl, vh) = (dist.eval(lo, q, a, &z), dist.eval(hi, q, a, &z));
                assert!((0.0..=1.0).contains(&vl) && (0.0..=1.0).contains(&vh), "{label}");
                if dist.kind == DistKind::SurvivalSd {
                    assert!(vh <= vl, "{label}: survival increased");
                } else {
                    assert!(vh >= vl, "{label}: cdf decreased");
                }
            }
            let p = b.pi.predict(&z);
            assert!(p > 0.0 && p < 1.0, "{label}: propensity {p}");
        }
    }
}

#[test]
fn event_model_does_not_depend_on_the_other_fits() {
    let (_, data) = gen_ate_sample(500, 5).unwrap();
    let cfg = NuisanceConfig::from_label("Cox1/lgs1-Cox2-Cox2").unwrap();
    let alone = fit_event_cdf_f(&data, &cfg.f, &cfg).unwrap();
    let bundle = fit_scheme_a(&data, &cfg, 0.1).unwrap();
    let other = fit_scheme_a(&data, &NuisanceConfig::from_label("Cox1/lgs2-Cox1-Cox1").unwrap(), 0.1).unwrap();
    for (a, z) in [(0u8, [0.2, 0.9]), (1, [0.7, 0.1])] {
        let (c1, c2, c3) = (alone.curve(0.0, a, &z), bundle.f.curve(0.0, a, &z), other.f.curve(0.0, a, &z));
        assert_eq!(c1, c2);
        assert_eq!(c1, c3);
    }
}

#[test]
fn flexible_fits_are_deterministic_given_seed() {
    let (_, data) = gen_ate_sample(400, 6).unwrap();
    let mut cfg = NuisanceConfig::from_label("pCox/gbm-pCox-pCox").unwrap();
    cfg.seed = 8;
    let (b1, b2) = (fit_scheme_a(&data, &cfg, 0.1).unwrap(), fit_scheme_a(&data, &cfg, 0.1).unwrap());
    let z = [0.4, 0.6];
    assert_eq!(b1.f.curve(0.0, 1, &z), b2.f.curve(0.0, 1, &z));
    assert_eq!(b1.pi.predict(&z), b2.pi.predict(&z));
}
