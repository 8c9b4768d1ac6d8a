use owcc::bounds::{cment_of_lambda, err, ment_bound};
use owcc::decomposition::{decompose, verify_decomposition, DecomposeOptions};
use owcc::dist::{divergences, kl, l1, s_inf, JointDistribution, OneWayWitness};
use owcc::protocols::{distributional_error, exact_d, max_success, DetProtocol};
use owcc::relations::{random_complete, Relation};
use proptest::prelude::*;

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n)
}

fn dist(nx: usize, ny: usize) -> impl Strategy<Value = JointDistribution> {
    weights(nx * ny).prop_map(move |w| JointDistribution::from_weights(nx, ny, w).unwrap())
}

/// `(f, μ)` with `|X|, |Y| ≤ 4`, `|Z| ≤ 3`.
fn instance() -> impl Strategy<Value = (Relation, JointDistribution)> {
    (2usize..=4, 2usize..=4, 2usize..=3, any::<u64>(), 0.2f64..0.8).prop_flat_map(|(nx, ny, nz, seed, density)| {
        let f = random_complete(nx, ny, nz, seed, density).unwrap();
        (Just(f), dist(nx, ny))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn divergence_inequalities((lam, mu) in (2usize..=4, 2usize..=4).prop_flat_map(|(nx, ny)| (dist(nx, ny), dist(nx, ny)))) {
        let d = divergences(&lam, &mu).unwrap();
        prop_assert!(d.kl >= -1e-12);
        prop_assert!(d.l1 <= d.kl.max(0.0).sqrt() + 1e-9);
        prop_assert!(d.kl <= d.s_inf + 1e-9);
        prop_assert!((d.kl - kl(lam.table(), mu.table())).abs() < 1e-15);
        prop_assert!((d.l1 - l1(lam.table(), mu.table())).abs() < 1e-15);
    }

    #[test]
    fn s_inf_is_additive_on_squares((lam, mu) in (2usize..=3, 2usize..=3).prop_flat_map(|(nx, ny)| (dist(nx, ny), dist(nx, ny)))) {
        let l2 = lam.tensor_power(2, 1 << 20).unwrap();
        let m2 = mu.tensor_power(2, 1 << 20).unwrap();
        prop_assert!((s_inf(l2.table(), m2.table()) - 2.0 * s_inf(lam.table(), mu.table())).abs() < 1e-9);
    }

    #[test]
    fn quantile_within_log_inverse_delta_of_s_inf((f, mu) in instance(), a in weights(4), delta in 0.01f64..0.9) {
        let _ = f;
        let total: f64 = a[..mu.nx()].iter().sum();
        let alpha: Vec<f64> = a[..mu.nx()].iter().map(|v| v / total).collect();
        let lam = OneWayWitness::new(alpha, &mu).unwrap();
        let q = cment_of_lambda(&lam, delta).unwrap();
        prop_assert!(q <= lam.s_inf() + (1.0 / delta).log2() + 1e-9);
    }

    #[test]
    fn err_drops_when_triples_are_added((f, mu) in instance(), x in 0usize..4, y in 0usize..4, z in 0usize..3) {
        let g = f.with_triple(x % f.nx(), y % f.ny(), z % f.nz()).unwrap();
        prop_assert!(err(&g, &mu).unwrap().value <= err(&f, &mu).unwrap().value + 1e-12);
        prop_assert!(g.allowed_count() >= f.allowed_count());
    }

    #[test]
    fn ment_witness_is_feasible((f, mu) in instance(), frac in 0.0f64..1.0) {
        let eps = err(&f, &mu).unwrap().value * frac;
        let r = ment_bound(&f, &mu, eps).unwrap();
        let lam = OneWayWitness::new(r.witness_alpha.clone().unwrap(), &mu).unwrap();
        prop_assert!(err(&f, &lam.to_distribution()).unwrap().value <= eps + 1e-6);
        prop_assert!((lam.s_inf() - r.value).abs() < 1e-6);
    }

    #[test]
    fn exact_d_protocol_meets_eps((f, mu) in instance(), frac in 0.0f64..1.0) {
        let eps = err(&f, &mu).unwrap().value * frac;
        let d = exact_d(&f, &mu, eps).unwrap();
        prop_assert!(distributional_error(&d.protocol, &f, &mu).unwrap() <= eps + 1e-9);
        prop_assert!(d.protocol.t <= d.t_min);
        let back = DetProtocol::from_json(&d.protocol.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, d.protocol);
        if d.t_min > 1 {
            let (s, _) = max_success(&f, &mu, d.t_min - 1).unwrap();
            prop_assert!(1.0 - s > eps + 1e-9 - 1e-12);
        }
    }

    #[test]
    fn tensor_powers_multiply_counts(nx in 1usize..=3, ny in 1usize..=3, nz in 1usize..=3, seed: u64, density in 0.0f64..1.0) {
        let f = random_complete(nx, ny, nz, seed, density).unwrap();
        let f2 = f.tensor_power(2).unwrap();
        prop_assert_eq!(f2.allowed_count(), f.allowed_count().pow(2));
        prop_assert_eq!(Relation::from_json(&f2.to_json().unwrap()).unwrap(), f2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decompositions_pass_their_checks((f, mu) in instance(), frac in 0.1f64..0.9, delta in 0.05f64..0.3) {
        let eps = err(&f, &mu).unwrap().value * frac;
        if let Ok(dec) = decompose(&f, &mu, eps, delta, &DecomposeOptions::default()) {
            prop_assert!(dec.k() <= f.nx());
            let report = verify_decomposition(&dec, &f);
            prop_assert!(report.passed(), "{:?}", report);
            let back = owcc::decomposition::Decomposition::from_json(&dec.to_json().unwrap()).unwrap();
            prop_assert_eq!(back, dec);
        }
    }
}
