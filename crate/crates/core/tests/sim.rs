use ltrc_core::sim::cate_eps_mean;
use ltrc_core::{true_tau, ScenarioKind, ScenarioSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rates(kind: ScenarioKind, draws: u64, seed: u64) -> (f64, f64, f64) {
    let spec = ScenarioSpec::new(kind);
    let (mut observed, mut treated, mut censored) = (0usize, 0usize, 0usize);
    for j in 0..draws {
        if let Some(o) = spec.draw(seed, j).observe() {
            observed += 1;
            treated += o.a as usize;
            censored += (o.delta == 0) as usize;
        }
    }
    let m = observed as f64;
    (1.0 - m / draws as f64, treated as f64 / m, censored as f64 / m)
}

// Reference rates from an independent 4e6-draw simulation of this design.
#[test]
fn ate_design_rates() {
    let (trunc, treated, censored) = rates(ScenarioKind::Ate, 100_000, 1);
    assert!((trunc - 0.256).abs() < 0.01, "truncation {trunc}");
    assert!((treated - 0.441).abs() < 0.01, "treated {treated}");
    assert!((censored - 0.462).abs() < 0.01, "censoring {censored}");
}

#[test]
fn cate_design_truncation_rate() {
    let (trunc, _, _) = rates(ScenarioKind::CateI, 100_000, 2);
    assert!((trunc - 0.28).abs() < 0.015, "truncation {trunc}");
}

#[test]
fn batches_equal_individual_draws() {
    let spec = ScenarioSpec::new(ScenarioKind::CateIii);
    let (full, obs) = spec.gen_sample(200, 77).unwrap();
    assert_eq!(obs.len(), 200);
    for (j, r) in full.iter().enumerate() {
        assert_eq!(*r, spec.draw(77, j as u64));
    }
    let kept: Vec<_> = full.iter().filter_map(|r| r.observe()).collect();
    assert_eq!(kept, obs.records);
}

#[test]
fn reversed_truncation_follows_uniform_baseline_proportional_hazards() {
    // Probability integral transform of τ₂ - Q under (1 - t/τ₂)^{exp(lp)}.
    let spec = ScenarioSpec::new(ScenarioKind::Ate);
    let n = 100_000;
    let mut u: Vec<f64> = (0..n as u64)
        .map(|j| {
            let r = spec.draw(3, j);
            let t = spec.tau2 - r.q;
            1.0 - (1.0 - t / spec.tau2).powf(spec.lp_q(r.a, &r.z).exp())
        })
        .collect();
    u.sort_by(f64::total_cmp);
    let ks = u
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - v).abs()))
        .fold(0.0, f64::max);
    assert!(ks < 0.01, "KS distance {ks}");
}

#[test]
fn cate_noise_is_centered_and_encodes_tau() {
    let spec = ScenarioSpec::new(ScenarioKind::CateI);
    let z = [0.5, 0.3];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 1_000_000;
    let (mut s_eps, mut s_eps2, mut s_diff, mut s_diff2) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..n {
        let (u1, u0): (f64, f64) = (rng.random(), rng.random());
        let eps = spec.f_quantile(u0, 0, &z, 0.0).ln() - spec.log_t_location(0, &z);
        let d = spec.f_quantile(u1, 1, &z, 0.0).ln() - spec.f_quantile(u0, 0, &z, 0.0).ln();
        s_eps += eps;
        s_eps2 += eps * eps;
        s_diff += d;
        s_diff2 += d * d;
    }
    let nf = n as f64;
    let (m_eps, m_diff) = (s_eps / nf, s_diff / nf);
    let se_eps = ((s_eps2 / nf - m_eps * m_eps) / nf).sqrt();
    let se_diff = ((s_diff2 / nf - m_diff * m_diff) / nf).sqrt();
    assert!(m_eps.abs() < 3.0 * se_eps, "noise mean {m_eps}");
    assert!((m_diff - 0.10).abs() < 3.0 * se_diff, "{m_diff}");
    assert!((true_tau(ScenarioKind::CateI, &z) - 0.10).abs() < 1e-15);
    assert!(cate_eps_mean() > 0.0);
}

#[test]
fn unknown_scenario_is_an_argument_error() {
    assert!(matches!(ScenarioSpec::parse("iv"), Err(ltrc_core::Error::Argument(_))));
    assert!(ltrc_core::gen_cate_sample(10, "iv", 1).is_err());
    assert!(ltrc_core::gen_ate_sample(0, 1).is_err());
}
