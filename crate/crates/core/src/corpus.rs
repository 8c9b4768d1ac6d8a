//! Seeded random instances `(f, μ, ε, δ)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::err;
use crate::dist::JointDistribution;
use crate::relations::{random_complete, Family, Relation};

#[derive(Debug, Clone)]
pub struct Instance {
    pub label: String,
    pub f: Relation,
    pub mu: JointDistribution,
    pub eps: f64,
    pub delta: f64,
}

/// Shape ranges and parameter ranges for random instances.
#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub nx: (usize, usize),
    pub ny: (usize, usize),
    pub nz: (usize, usize),
    pub density: f64,
    /// Dirichlet concentration for `μ`.
    pub concentration: f64,
    /// `ε` is drawn as a fraction of `err_f(μ)` from this range, so the
    /// instance is not solvable without communication.
    pub eps_fraction: (f64, f64),
    pub delta: (f64, f64),
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            nx: (2, 4),
            ny: (2, 4),
            nz: (2, 3),
            density: 0.4,
            concentration: 1.0,
            eps_fraction: (0.1, 0.9),
            delta: (0.05, 0.3),
        }
    }
}

impl CorpusSpec {
    pub fn with_nx(mut self, lo: usize, hi: usize) -> Self {
        self.nx = (lo, hi);
        self
    }
}

pub fn random_instance(spec: &CorpusSpec, rng: &mut ChaCha8Rng, label: String) -> Instance {
    let nx = rng.random_range(spec.nx.0..=spec.nx.1);
    let ny = rng.random_range(spec.ny.0..=spec.ny.1);
    let nz = rng.random_range(spec.nz.0..=spec.nz.1);
    let f = random_complete(nx, ny, nz, rng.random(), spec.density).expect("valid shape");
    let mu = JointDistribution::random(nx, ny, spec.concentration, rng);
    let e0 = err(&f, &mu).expect("shapes agree").value;
    let eps = e0 * rng.random_range(spec.eps_fraction.0..=spec.eps_fraction.1);
    let delta = rng.random_range(spec.delta.0..=spec.delta.1);
    Instance { label, f, mu, eps, delta }
}

/// `n` instances from one seed; instance `i` does not depend on `n`.
pub fn corpus(spec: &CorpusSpec, seed: u64, n: usize) -> Vec<Instance> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x1000_0000_01b3).wrapping_add(i as u64));
            random_instance(spec, &mut rng, format!("random-{seed}-{i}"))
        })
        .collect()
}

/// `relations × dists` instances: each random relation is paired with
/// `dists` random distributions and parameters.
pub fn grid(spec: &CorpusSpec, seed: u64, relations: usize, dists: usize) -> Vec<Instance> {
    let mut out = Vec::with_capacity(relations * dists);
    for r in 0..relations {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(r as u64));
        let nx = rng.random_range(spec.nx.0..=spec.nx.1);
        let ny = rng.random_range(spec.ny.0..=spec.ny.1);
        let nz = rng.random_range(spec.nz.0..=spec.nz.1);
        let f = random_complete(nx, ny, nz, rng.random(), spec.density).expect("valid shape");
        for d in 0..dists {
            let mu = JointDistribution::random(nx, ny, spec.concentration, &mut rng);
            let e0 = err(&f, &mu).expect("shapes agree").value;
            let eps = e0 * rng.random_range(spec.eps_fraction.0..=spec.eps_fraction.1);
            let delta = rng.random_range(spec.delta.0..=spec.delta.1);
            out.push(Instance { label: format!("grid-{seed}-{r}-{d}"), f: f.clone(), mu, eps, delta });
        }
    }
    out
}

/// Small named instances with uniform `μ`.
pub fn desk_instances() -> Vec<Instance> {
    let mut out = Vec::new();
    for (family, eps, delta) in [
        (Family::Equality(2), 0.25, 0.1),
        (Family::Equality(3), 0.25, 0.1),
        (Family::Equality(3), 0.25, 0.05),
        (Family::GreaterThan(3), 0.25, 0.1),
        (Family::GreaterThan(3), 0.25, 0.05),
        (Family::Equality(4), 0.1, 0.1),
        (Family::Index(2), 0.2, 0.1),
    ] {
        let f = family.build().expect("builtin family");
        let mu = JointDistribution::uniform(f.nx(), f.ny());
        out.push(Instance { label: format!("{family}"), f, mu, eps, delta });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_prefix_stable_and_seeded() {
        let spec = CorpusSpec::default();
        let a = corpus(&spec, 3, 5);
        let b = corpus(&spec, 3, 8);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.f, y.f);
            assert_eq!(x.mu, y.mu);
            assert_eq!(x.eps, y.eps);
        }
        assert_ne!(corpus(&spec, 4, 1)[0].mu, a[0].mu);
    }

    #[test]
    fn grid_shares_relations() {
        let g = grid(&CorpusSpec::default(), 1, 3, 4);
        assert_eq!(g.len(), 12);
        assert_eq!(g[0].f, g[3].f);
        assert_ne!(g[0].mu, g[1].mu);
        assert!(g.iter().all(|i| i.f.nx() <= 4 && i.f.ny() <= 4 && i.f.nz() <= 3));
    }

    #[test]
    fn eps_below_err() {
        for inst in corpus(&CorpusSpec::default(), 0, 50) {
            assert!(inst.eps < err(&inst.f, &inst.mu).unwrap().value + 1e-15);
            assert!(inst.delta >= 0.05 && inst.delta <= 0.3);
        }
    }
}
