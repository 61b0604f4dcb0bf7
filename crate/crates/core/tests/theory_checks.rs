use advreg::theory::{self, clipped_sgd_rate, lemma3_montecarlo, shipped, NoiseSpec};

#[test]
fn clipped_estimator_bounds_hold_for_every_noise_family() {
    let cases = [
        (NoiseSpec::Sphere { radius: 2.0 }, 1.5),
        (NoiseSpec::SymmetricPareto { shape: 2.0, scale: 1.0 }, 1.5),
        (NoiseSpec::SymmetricPareto { shape: 3.0, scale: 0.5 }, 2.0),
        (NoiseSpec::Gaussian { sigma: 1.0 }, 2.0),
    ];
    for (noise, alpha) in cases {
        for tau in shipped::LEMMA3_TAUS {
            let r = lemma3_montecarlo(&noise, &[1.0, 0.0], tau, alpha, None, 20_000, 3).unwrap();
            assert!(r.pass, "{noise:?} tau={tau}: {r:?}");
        }
    }
}

#[test]
fn adversary_lowers_the_generator_gap_at_every_horizon() {
    let seeds = shipped::rate_seeds();
    let plain = clipped_sgd_rate(&shipped::sc_rate_setup(None), &shipped::RATE_T_GRID, &seeds).unwrap();
    let with = clipped_sgd_rate(&shipped::sc_rate_setup(Some(1.0)), &shipped::RATE_T_GRID, &seeds).unwrap();
    for (p, w) in plain.points.iter().zip(&with.points) {
        let gen = w.generator_gap.unwrap();
        assert!(gen <= p.gap, "T={}: {gen} > {}", p.t, p.gap);
    }
}

#[test]
fn shipped_suites_pass() {
    let mut checks = theory::suite_calculators();
    checks.extend(theory::suite_complexity().unwrap());
    checks.extend(theory::suite_flow().unwrap());
    checks.extend(theory::suite_lemma3(0).unwrap());
    for c in &checks {
        assert!(c.pass, "{c:?}");
    }
}
