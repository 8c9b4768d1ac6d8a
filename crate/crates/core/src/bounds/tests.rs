use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dist::{dirichlet, make_one_way, OneWayWitness};
use crate::relations::{random_complete, Family};

fn full(nx: usize, ny: usize, nz: usize) -> Relation {
    Relation::from_table(nx, ny, nz, vec![true; nx * ny * nz]).unwrap()
}

/// Brute-force `err_f`: every map `g: Y → Z`.
fn err_oracle(f: &Relation, mu: &JointDistribution) -> f64 {
    let (ny, nz) = (f.ny(), f.nz());
    let mut best = f64::INFINITY;
    for code in 0..nz.pow(ny as u32) {
        let mut g = vec![0; ny];
        crate::relations::decode_into(code, nz, &mut g);
        let mut e = 0.0;
        for x in 0..f.nx() {
            for y in 0..ny {
                if !f.allowed(x, y, g[y]) {
                    e += mu.p(x, y);
                }
            }
        }
        best = best.min(e);
    }
    best
}

/// Dense Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let m = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= m * a[col][c];
                }
                b[r] -= m * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Vertex enumeration of `min t s.t. 0 ≤ α ≤ t·μ_X, α·e ≤ eps, Σα = 1`.
fn lp_vertex_oracle(mu_x: &[f64], e: &[f64], eps: f64) -> Option<f64> {
    let n = mu_x.len();
    // Inequalities as (row over [α, t], rhs), row·v ≤ rhs.
    let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
    for x in 0..n {
        let mut r = vec![0.0; n + 1];
        r[x] = -1.0;
        ineq.push((r, 0.0));
        let mut r = vec![0.0; n + 1];
        r[x] = 1.0;
        r[n] = -mu_x[x];
        ineq.push((r, 0.0));
    }
    let mut r: Vec<f64> = e.to_vec();
    r.push(0.0);
    ineq.push((r, eps));
    let mut eq = vec![1.0; n];
    eq.push(0.0);

    let m = ineq.len();
    let mut best: Option<f64> = None;
    // Choose n active inequalities.
    let mut pick: Vec<usize> = (0..n).collect();
    loop {
        let mut a: Vec<Vec<f64>> = pick.iter().map(|&i| ineq[i].0.clone()).collect();
        let mut b: Vec<f64> = pick.iter().map(|&i| ineq[i].1).collect();
        a.push(eq.clone());
        b.push(1.0);
        if let Some(v) = solve_linear(a, b) {
            let ok = ineq.iter().all(|(r, rhs)| r.iter().zip(&v).map(|(p, q)| p * q).sum::<f64>() <= rhs + 1e-9);
            if ok {
                best = Some(best.map_or(v[n], |bv: f64| bv.min(v[n])));
            }
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if pick[i] < m - n + i {
                pick[i] += 1;
                for j in i + 1..n {
                    pick[j] = pick[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn ment_oracle(f: &Relation, mu: &JointDistribution, eps: f64) -> f64 {
    let (nx, ny, nz) = (f.nx(), f.ny(), f.nz());
    let mu_x = mu.marginal_x();
    let mut best = f64::INFINITY;
    for code in 0..nz.pow(ny as u32) {
        let mut g = vec![0; ny];
        crate::relations::decode_into(code, nz, &mut g);
        let e: Vec<f64> = (0..nx)
            .map(|x| {
                if mu_x[x] <= 0.0 {
                    return 0.0;
                }
                (0..ny).filter(|&y| !f.allowed(x, y, g[y])).map(|y| mu.p(x, y) / mu_x[x]).sum()
            })
            .collect();
        if let Some(t) = lp_vertex_oracle(mu_x, &e, eps) {
            best = best.min(t);
        }
    }
    best.log2()
}

/// Quantile straight from the definition: try every atom value as `c`.
fn quantile_oracle(atoms: &[(f64, f64)], delta: f64) -> f64 {
    atoms
        .iter()
        .map(|&(c, _)| c)
        .filter(|&c| atoms.iter().filter(|a| a.0 > c + 1e-12).map(|a| a.1).sum::<f64>() <= delta + 1e-12)
        .fold(f64::INFINITY, f64::min)
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Relation, JointDistribution) {
    let nx = rng.random_range(2..=4);
    let ny = rng.random_range(2..=4);
    let nz = rng.random_range(2..=3);
    let f = random_complete(nx, ny, nz, rng.random(), 0.4).unwrap();
    let mu = JointDistribution::random(nx, ny, 1.0, rng);
    (f, mu)
}

#[test]
fn err_examples() {
    let u = JointDistribution::uniform(2, 2);
    assert_eq!(err(&full(2, 2, 2), &u).unwrap().value, 0.0);
    let eq = Family::Equality(2).build().unwrap();
    let r = err(&eq, &u).unwrap();
    assert!((r.value - 0.5).abs() < 1e-12);
    assert!((err_oracle(&eq, &u) - 0.5).abs() < 1e-12);
    assert_eq!(r.witness_g, Some(vec![0, 0]));
    let pm = JointDistribution::point_mass(2, 2, 1, 0).unwrap();
    assert_eq!(err(&eq, &pm).unwrap().value, 0.0);
    assert!(matches!(err(&eq, &JointDistribution::uniform(3, 2)), Err(Error::ShapeMismatch(_))));
}

#[test]
fn err_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let (f, mu) = random_instance(&mut rng);
        assert!((err(&f, &mu).unwrap().value - err_oracle(&f, &mu)).abs() < 1e-12);
    }
}

#[test]
fn err_monotone_in_relation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (f, mu) = random_instance(&mut rng);
        let (x, y, z) = (rng.random_range(0..f.nx()), rng.random_range(0..f.ny()), rng.random_range(0..f.nz()));
        let bigger = f.with_triple(x, y, z).unwrap();
        assert!(err(&bigger, &mu).unwrap().value <= err(&f, &mu).unwrap().value + 1e-15);
    }
}

#[test]
fn quantile_examples() {
    let mu = JointDistribution::uniform(2, 1);
    let lam = OneWayWitness::new(vec![0.75, 0.25], &mu).unwrap();
    // atoms: log2(1.5) with mass 3/4 and -1 with mass 1/4
    let atoms = [(1.5f64.log2(), 0.75), (-1.0, 0.25)];
    for delta in [0.2, 0.8] {
        let want = quantile_oracle(&atoms, delta);
        assert!((cment_of_lambda(&lam, delta).unwrap() - want).abs() < 1e-12);
    }
    assert!((cment_of_lambda(&lam, 0.2).unwrap() - 1.5f64.log2()).abs() < 1e-12);
    assert!((cment_of_lambda(&lam, 0.8).unwrap() + 1.0).abs() < 1e-12);
    assert!(matches!(cment_of_lambda(&lam, 0.0), Err(Error::DeltaOutOfRange(_))));
    assert!(matches!(cment_of_lambda(&lam, 1.0), Err(Error::DeltaOutOfRange(_))));
}

#[test]
fn quantile_of_base_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let mu = JointDistribution::random(3, 4, 1.0, &mut rng);
        let lam = OneWayWitness::new(mu.marginal_x().to_vec(), &mu).unwrap();
        for delta in [0.01, 0.3, 0.9] {
            assert!(cment_of_lambda(&lam, delta).unwrap().abs() < 1e-12);
        }
    }
}

#[test]
fn quantile_matches_definition_and_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let mu = JointDistribution::random(3, 3, 1.0, &mut rng);
        let alpha = dirichlet(3, 1.0, &mut rng);
        let lam = make_one_way(&alpha, &mu).unwrap();
        let mut atoms = Vec::new();
        for x in 0..3 {
            for y in 0..3 {
                if lam.p(x, y) > 0.0 {
                    let r = lam.cond_x_given_y(x, y).unwrap() / mu.cond_x_given_y(x, y).unwrap();
                    atoms.push((r.log2(), lam.p(x, y)));
                }
            }
        }
        let w = OneWayWitness::new(alpha, &mu).unwrap();
        let mut prev = f64::INFINITY;
        for delta in [0.05, 0.1, 0.2, 0.4, 0.6, 0.9] {
            let c = cment_of_lambda(&w, delta).unwrap();
            assert!((c - quantile_oracle(&atoms, delta)).abs() < 1e-9);
            assert!(c <= prev + 1e-12);
            prev = c;
        }
    }
}

#[test]
fn ment_examples() {
    let u = JointDistribution::uniform(2, 2);
    let eq = Family::Equality(2).build().unwrap();
    let r = ment_bound(&eq, &u, 0.5).unwrap();
    assert_eq!(r.value, 0.0);
    assert_eq!(r.mode, Mode::Exact);
    assert_eq!(r.witness_alpha.as_deref(), Some(u.marginal_x()));

    let r = ment_bound(&eq, &u, 0.0).unwrap();
    assert!((r.value - 1.0).abs() < 1e-12);
    assert!((ment_oracle(&eq, &u, 0.0) - 1.0).abs() < 1e-9);
    let alpha = r.witness_alpha.unwrap();
    assert!(alpha == vec![1.0, 0.0] || alpha == vec![0.0, 1.0], "{alpha:?}");

    let pm = JointDistribution::point_mass(2, 2, 0, 1).unwrap();
    assert_eq!(ment_bound(&eq, &pm, 0.0).unwrap().value, 0.0);
    assert!(matches!(ment_bound(&eq, &u, 1.0), Err(Error::EpsOutOfRange(_))));
}

#[test]
fn ment_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..60 {
        let (f, mu) = random_instance(&mut rng);
        let e0 = err(&f, &mu).unwrap().value;
        for eps in [0.0, 0.5 * e0, 0.9 * e0, rng.random::<f64>() * 0.5] {
            let got = ment_bound(&f, &mu, eps).unwrap().value;
            let want = ment_oracle(&f, &mu, eps);
            assert!((got - want).abs() < 1e-7, "got {got}, oracle {want}, eps {eps}");
        }
    }
}

#[test]
fn ment_witness_is_valid() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (f, mu) = random_instance(&mut rng);
        let eps = rng.random::<f64>() * err(&f, &mu).unwrap().value;
        let r = ment_bound(&f, &mu, eps).unwrap();
        let alpha = r.witness_alpha.unwrap();
        let lam = make_one_way(&alpha, &mu).unwrap();
        assert!(crate::dist::is_one_way_for(&lam, &mu, 1e-9));
        assert!(err(&f, &lam).unwrap().value <= eps + 1e-6);
        let w = OneWayWitness::new(alpha, &mu).unwrap();
        assert!((w.s_inf() - r.value).abs() < 1e-6);
    }
}

#[test]
fn ment_nonincreasing_in_eps() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..30 {
        let (f, mu) = random_instance(&mut rng);
        let mut prev = f64::INFINITY;
        for i in 0..10 {
            let v = ment_bound(&f, &mu, i as f64 * 0.05).unwrap().value;
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }
}

#[test]
fn ment_capped_search_is_an_upper_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let (f, mu) = random_instance(&mut rng);
        let exact = ment_bound(&f, &mu, 0.05).unwrap();
        let capped = ment::ment_bound_with(&f, &mu, 0.05, &MentOptions { map_cap: 1 }).unwrap();
        assert_eq!(capped.mode, Mode::UpperBound);
        assert!(capped.value >= exact.value - 1e-12);
    }
}

#[test]
fn cment_examples() {
    let opts = CmentOptions::default();
    let u = JointDistribution::uniform(2, 2);
    let r = cment_bound(&full(2, 2, 2), &u, 0.0, 0.3, &opts).unwrap();
    assert!(r.value <= 1e-12);
    let eq = Family::Equality(2).build().unwrap();
    let r = cment_bound(&eq, &u, 0.0, 0.1, &opts).unwrap();
    assert!(r.value <= 1.0 + 1e-12);
    assert_eq!(r.mode, Mode::ExactToGrid);
    assert!(matches!(cment_bound(&eq, &u, 0.0, 0.0, &opts), Err(Error::DeltaOutOfRange(_))));
}

#[test]
fn cment_witness_is_feasible_and_scores_its_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..30 {
        let (f, mu) = random_instance(&mut rng);
        let eps = rng.random::<f64>() * err(&f, &mu).unwrap().value;
        let delta = rng.random_range(0.05..0.5);
        let r = cment_bound(&f, &mu, eps, delta, &CmentOptions::default()).unwrap();
        let alpha = r.witness_alpha.unwrap();
        assert!(err(&f, &make_one_way(&alpha, &mu).unwrap()).unwrap().value <= eps + 1e-9);
        let w = OneWayWitness::new(alpha, &mu).unwrap();
        assert!((cment_of_lambda(&w, delta).unwrap() - r.value).abs() < 1e-12);
    }
}

/// The pointwise comparison `cment_δ(λ) ≤ S∞(λ‖μ)` fails: the conditional
/// ratio carries a factor `μ_Y(y)/λ_Y(y)` that `S∞` does not control.
#[test]
fn cment_can_exceed_s_inf() {
    // x = 0 sits mostly at y = 1; at y = 0 it is rare relative to x = 1.
    let mu = JointDistribution::new(2, 2, vec![0.01, 0.89, 0.09, 0.01]).unwrap();
    let lam = OneWayWitness::new(vec![1.0, 0.0], &mu).unwrap();
    let s_inf = lam.s_inf();
    let c = cment_of_lambda(&lam, 0.001).unwrap();
    assert!((s_inf - (1.0f64 / 0.9).log2()).abs() < 1e-12);
    assert!((c - 10f64.log2()).abs() < 1e-9);
    assert!(c > s_inf + 3.0);
}

/// The corrected comparison `cment_δ(λ) ≤ S∞(λ‖μ) + log₂(1/δ)` holds.
#[test]
fn cment_within_log_inverse_delta_of_s_inf() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let (nx, ny) = (rng.random_range(2..=4), rng.random_range(2..=4));
        let mu = JointDistribution::random(nx, ny, 1.0, &mut rng);
        let alpha = dirichlet(nx, rng.random_range(0.2..2.0), &mut rng);
        let delta = rng.random_range(0.001..0.999);
        let w = OneWayWitness::new(alpha, &mu).unwrap();
        assert!(cment_of_lambda(&w, delta).unwrap() <= w.s_inf() + (1.0 / delta).log2() + 1e-9);
    }
}

/// A two-row instance where the minimum of `cment` over feasible one-way
/// distributions is above `ment`: the gap survives an exhaustive sweep of
/// the one-dimensional simplex.
#[test]
fn cment_bound_can_exceed_ment_bound() {
    let allowed = [
        [[1, 0, 1], [0, 1, 0], [0, 1, 0]],
        [[0, 1, 0], [1, 0, 1], [0, 1, 1]],
    ];
    let table = allowed.iter().flatten().flatten().map(|&a| a == 1).collect();
    let f = Relation::from_table(2, 3, 3, table).unwrap();
    let mu = JointDistribution::from_weights(
        2,
        3,
        vec![0.24759593605172028, 0.1041701358257847, 0.08400650351809864, 0.26544279674661125, 0.18981743258575196, 0.10896719527203325],
    )
    .unwrap();
    let (eps, delta) = (0.16236805666423026, 0.1456766899822317);
    let ment = ment_bound(&f, &mu, eps).unwrap().value;
    let cment = cment_bound(&f, &mu, eps, delta, &CmentOptions::default()).unwrap().value;

    let mut sweep = f64::INFINITY;
    let n = 20_000;
    for i in 0..=n {
        let a = i as f64 / n as f64;
        let alpha = vec![a, 1.0 - a];
        if err(&f, &make_one_way(&alpha, &mu).unwrap()).unwrap().value <= eps {
            let w = OneWayWitness::new(alpha, &mu).unwrap();
            sweep = sweep.min(cment_of_lambda(&w, delta).unwrap());
        }
    }
    assert!((ment - 0.501659).abs() < 1e-5, "ment {ment}");
    assert!(sweep > ment + 0.05, "sweep {sweep}");
    assert!(cment <= sweep + 1e-9);
    assert!(cment > ment + 0.05);
    assert!(cment <= ment + (1.0 / delta).log2());
}

#[test]
fn global_examples() {
    let opts = GlobalOptions { budget: 4, climb_steps: 5, ..Default::default() };
    let r = global_bound(&full(2, 2, 2), 0.1, None, BoundKind::Ment, &opts).unwrap();
    assert_eq!(r.value, 0.0);
    assert_eq!(r.mode, Mode::LowerBound);
    let r = global_bound(&full(2, 2, 2), 0.1, Some(0.2), BoundKind::Cment, &opts).unwrap();
    assert!(r.value <= 1e-12);
    let eq = Family::Equality(2).build().unwrap();
    let r = global_bound(&eq, 0.0, None, BoundKind::Ment, &opts).unwrap();
    assert!(r.value >= 1.0 - 1e-12);
    assert_eq!(r.mu.unwrap().len(), 4);
}

#[test]
fn global_monotone_in_budget() {
    let f = random_complete(3, 3, 2, 5, 0.4).unwrap();
    let mut prev = f64::NEG_INFINITY;
    for budget in [0, 4, 16] {
        let opts = GlobalOptions { budget, climb_steps: 10, ..Default::default() };
        let v = global_bound(&f, 0.05, None, BoundKind::Ment, &opts).unwrap().value;
        assert!(v >= prev);
        prev = v;
    }
}
