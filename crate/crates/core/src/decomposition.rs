//! Greedy decomposition of `μ` into one-way components.
//!
//! Components are stored by their X-marginals `α_i`, with `P_i(x, y) =
//! α_i(x)·μ(y|x)`, and `M ↔ X ↔ Y` holds by construction:
//! `θ(x, y, i) = p_i·P_i(x, y)`. The residual after `i − 1` steps is
//! `ρ(x)·μ(y|x)` with `ρ = μ_X − Σ_{j<i} p_j α_j`; each step takes a
//! low-`cment` feasible witness `R` for the normalized residual, removes as
//! much of it as fits, and zeroes at least one residual row.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::{cment_bound, err, CmentOptions};
use crate::dist::{make_one_way, JointDistribution};
use crate::relations::Relation;
use crate::{Error, Result};

/// Residual mass at which the loop stops.
pub const RESIDUAL_STOP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub p: f64,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Residual mass `q_i` before the step.
    pub q: f64,
    /// `|supp ρ|` before the step.
    pub support: usize,
    pub r: f64,
    /// Budget in force for this component.
    pub budget: f64,
    /// `cment^{Q_i}_δ(R)` of the chosen witness.
    pub witness_value: f64,
    /// Number of +`relax_step` relaxations taken at this step.
    pub relaxations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub base: JointDistribution,
    /// Largest budget used, after relaxations.
    pub c: f64,
    pub c_initial: f64,
    pub eps: f64,
    pub delta: f64,
    pub components: Vec<Component>,
    pub trace: Vec<TraceStep>,
}

impl Decomposition {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// `P_i`.
    pub fn component(&self, i: usize) -> Result<JointDistribution> {
        make_one_way(&self.components[i].alpha, &self.base)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Shape checks shared by every consumer.
    pub fn check(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidDecomposition("no components".into()));
        }
        let nx = self.base.nx();
        for (i, c) in self.components.iter().enumerate() {
            if c.alpha.len() != nx {
                return Err(Error::InvalidDecomposition(format!("component {i}: alpha has {} entries, |X| = {nx}", c.alpha.len())));
            }
            if !(c.p > 0.0) || !c.p.is_finite() {
                return Err(Error::InvalidDecomposition(format!("component {i}: weight {}", c.p)));
            }
            if c.alpha.iter().any(|&a| !(a >= 0.0)) {
                return Err(Error::InvalidDecomposition(format!("component {i}: negative alpha")));
            }
            if let Some(x) = (0..nx).find(|&x| c.alpha[x] > 0.0 && self.base.marginal_x()[x] <= 0.0) {
                return Err(Error::SupportViolation { x });
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::DeltaOutOfRange(self.delta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DecomposeOptions {
    /// Budget in bits; `None` means `cment_bound(f, μ, ε, δ)`.
    pub c: Option<f64>,
    pub relax_step: f64,
    pub max_relaxations: usize,
    pub cment: CmentOptions,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions { c: None, relax_step: 0.1, max_relaxations: 10, cment: CmentOptions::default() }
    }
}

pub fn decompose(f: &Relation, mu: &JointDistribution, eps: f64, delta: f64, opts: &DecomposeOptions) -> Result<Decomposition> {
    if f.nx() != mu.nx() || f.ny() != mu.ny() {
        return Err(Error::ShapeMismatch(format!("relation is {}x{}, distribution is {}x{}", f.nx(), f.ny(), mu.nx(), mu.ny())));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::EpsOutOfRange(eps));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::DeltaOutOfRange(delta));
    }
    let c_initial = match opts.c {
        Some(c) => c,
        None => cment_bound(f, mu, eps, delta, &opts.cment)?.value,
    };
    let (nx, ny) = (f.nx(), f.ny());
    let cond: Vec<f64> = (0..nx * ny)
        .map(|i| {
            let px = mu.marginal_x()[i / ny];
            if px > 0.0 { mu.table()[i] / px } else { 0.0 }
        })
        .collect();
    let mut rho = mu.marginal_x().to_vec();
    let mut budget = c_initial;
    let mut components = Vec::new();
    let mut trace = Vec::new();

    loop {
        let q: f64 = rho.iter().sum();
        if q <= RESIDUAL_STOP {
            break;
        }
        let support = rho.iter().filter(|&&v| v > 0.0).count();
        if support == 0 || components.len() >= nx {
            return Err(Error::DegenerateResidual(format!("{} components, residual mass {q}, support {support}", components.len())));
        }
        let residual = {
            let w: Vec<f64> = (0..nx * ny).map(|i| rho[i / ny] * cond[i]).collect();
            JointDistribution::from_weights(nx, ny, w).map_err(|e| Error::DegenerateResidual(e.to_string()))?
        };
        let q_x: Vec<f64> = rho.iter().map(|v| v / q).collect();

        // The residual itself, if feasible, finishes the loop at c = 0.
        let (alpha, value, relaxations) = if budget >= 0.0 && err(f, &residual)?.value <= eps {
            (q_x.clone(), 0.0, 0)
        } else {
            let mut best: Option<(f64, Vec<f64>)> = None;
            let mut relaxations = 0;
            loop {
                let mut o = opts.cment.clone();
                o.seed = opts.cment.seed.wrapping_add((components.len() * 1000 + relaxations) as u64);
                let r = cment_bound(f, &residual, eps, delta, &o)?;
                if best.as_ref().is_none_or(|b| r.value < b.0) {
                    best = Some((r.value, r.witness_alpha.expect("cment witness")));
                }
                let b = best.as_ref().expect("set above");
                if b.0 <= budget + 1e-12 {
                    break;
                }
                if relaxations == opts.max_relaxations {
                    return Err(Error::WitnessBudgetExceeded { budget, best: b.0, component: components.len() });
                }
                relaxations += 1;
                budget += opts.relax_step;
            }
            let (value, alpha) = best.expect("set above");
            (alpha, value, relaxations)
        };

        // r = min over supp α of Q_X(x)/α(x); its argmin row is zeroed exactly.
        let (argmin, r) = (0..nx)
            .filter(|&x| alpha[x] > 0.0)
            .map(|x| (x, q_x[x] / alpha[x]))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("alpha has support");
        let r = r.min(1.0);
        let p = q * r;
        for x in 0..nx {
            rho[x] = (rho[x] - p * alpha[x]).max(0.0);
            if rho[x] < 1e-15 {
                rho[x] = 0.0;
            }
        }
        rho[argmin] = 0.0;
        trace.push(TraceStep { q, support, r, budget, witness_value: value, relaxations });
        components.push(Component { p, alpha });
    }

    Ok(Decomposition {
        base: mu.clone(),
        c: budget,
        c_initial,
        eps,
        delta,
        components,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Largest violation measure; compare against `limit`.
    pub worst: f64,
    pub limit: f64,
    /// `(component, x, y)` of the worst cell, where meaningful.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell: Option<(usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimReport {
    pub checks: Vec<Check>,
    /// `Pr_θ[log₂(θ(i|x)/θ(i|y)) > c + log₂(1/δ)]`.
    pub tail: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ClaimReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const MIXTURE_TOL: f64 = 1e-7;
pub const ERR_TOL: f64 = 1e-6;
pub const MARKOV_TOL: f64 = 1e-7;
pub const RATIO_TOL: f64 = 1e-7;
pub const TAIL_TOL: f64 = 1e-6;

struct Worst {
    value: f64,
    cell: Option<(usize, usize, usize)>,
}

impl Worst {
    fn new() -> Self {
        Worst { value: 0.0, cell: None }
    }

    fn see(&mut self, v: f64, cell: (usize, usize, usize)) {
        if v > self.value || self.cell.is_none() && v >= self.value {
            self.value = v;
            self.cell = Some(cell);
        }
    }

    fn check(self, name: &'static str, limit: f64) -> Check {
        Check { name, passed: self.value <= limit, worst: self.value, limit, cell: self.cell }
    }
}

/// Checks the decomposition against the two properties of the greedy claim
/// and its bookkeeping identities. Never fails; problems are report entries.
pub fn verify_decomposition(dec: &Decomposition, f: &Relation) -> ClaimReport {
    let structural = |msg: String| ClaimReport {
        checks: vec![Check { name: "structure", passed: false, worst: f64::INFINITY, limit: 0.0, cell: None }],
        tail: f64::NAN,
        note: Some(msg),
    };
    if let Err(e) = dec.check() {
        return structural(e.to_string());
    }
    let mu = &dec.base;
    if f.nx() != mu.nx() || f.ny() != mu.ny() {
        return structural("shape mismatch".into());
    }
    let (nx, ny, k) = (mu.nx(), mu.ny(), dec.k());
    let px = mu.marginal_x();
    let py = mu.marginal_y();
    let parts: Vec<JointDistribution> = match (0..k).map(|i| dec.component(i)).collect() {
        Ok(v) => v,
        Err(e) => return structural(e.to_string()),
    };

    let mut checks = Vec::new();
    let total: f64 = dec.components.iter().map(|c| c.p).sum();
    checks.push(Check { name: "weights", passed: (total - 1.0).abs() <= MIXTURE_TOL, worst: (total - 1.0).abs(), limit: MIXTURE_TOL, cell: None });
    checks.push(Check { name: "component-count", passed: k <= nx, worst: k as f64, limit: nx as f64, cell: None });
    let shrinking = dec.trace.windows(2).all(|w| w[1].support < w[0].support);
    checks.push(Check { name: "trace", passed: shrinking, worst: if shrinking { 0.0 } else { 1.0 }, limit: 0.0, cell: None });

    let mut mixture = Worst::new();
    for x in 0..nx {
        for y in 0..ny {
            let m: f64 = (0..k).map(|i| dec.components[i].p * parts[i].p(x, y)).sum();
            mixture.see((m - mu.p(x, y)).abs(), (0, x, y));
        }
    }
    checks.push(mixture.check("mixture", MIXTURE_TOL));

    let mut prop1 = Worst::new();
    for (i, part) in parts.iter().enumerate() {
        let e = err(f, part).expect("shapes checked").value;
        prop1.see(e - dec.eps, (i, 0, 0));
    }
    let mut c = prop1.check("property-1", ERR_TOL);
    c.cell = c.cell.map(|(i, _, _)| (i, 0, 0));
    checks.push(c);

    let threshold = dec.c + (1.0 / dec.delta).log2();
    let mut tail = 0.0;
    let mut markov = Worst::new();
    let mut ratio = Worst::new();
    let mut tail_cell = None;
    let mut tail_worst = f64::NEG_INFINITY;
    for (i, part) in parts.iter().enumerate() {
        let p = dec.components[i].p;
        let alpha = &dec.components[i].alpha;
        let part_y = part.marginal_y();
        for x in 0..nx {
            for y in 0..ny {
                let m = mu.p(x, y);
                if m <= 0.0 {
                    continue;
                }
                let theta_x = p * alpha[x] / px[x];
                markov.see((p * part.p(x, y) / m - theta_x).abs(), (i, x, y));
                if part.p(x, y) <= 0.0 {
                    continue;
                }
                let theta_y = p * part_y[y] / py[y];
                let lhs = (part.p(x, y) / part_y[y]) / (m / py[y]);
                let rhs = theta_x / theta_y;
                ratio.see((lhs - rhs).abs() / rhs.abs().max(1.0), (i, x, y));
                let log_ratio = rhs.log2();
                if log_ratio > tail_worst {
                    tail_worst = log_ratio;
                    tail_cell = Some((i, x, y));
                }
                if log_ratio > threshold + 1e-9 {
                    tail += p * part.p(x, y);
                }
            }
        }
    }
    checks.push(Check {
        name: "property-2",
        passed: tail <= 2.0 * dec.delta + TAIL_TOL,
        worst: tail,
        limit: 2.0 * dec.delta + TAIL_TOL,
        cell: tail_cell,
    });
    checks.push(markov.check("markov", MARKOV_TOL));
    checks.push(ratio.check("ratio-identity", RATIO_TOL));
    ClaimReport { checks, tail, note: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relations::{random_complete, Family};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn full(nx: usize, ny: usize) -> Relation {
        Relation::from_table(nx, ny, 2, vec![true; nx * ny * 2]).unwrap()
    }

    #[test]
    fn full_relation_is_one_component() {
        let mu = JointDistribution::random(3, 4, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let dec = decompose(&full(3, 4), &mu, 0.1, 0.1, &DecomposeOptions::default()).unwrap();
        assert_eq!(dec.k(), 1);
        assert!((dec.components[0].p - 1.0).abs() < 1e-12);
        for (a, b) in dec.components[0].alpha.iter().zip(mu.marginal_x()) {
            assert!((a - b).abs() < 1e-15);
        }
        let rep = verify_decomposition(&dec, &full(3, 4));
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.tail, 0.0);
    }

    #[test]
    fn equality_two_splits_into_rows() {
        let f = Family::Equality(2).build().unwrap();
        let mu = JointDistribution::uniform(2, 2);
        let dec = decompose(&f, &mu, 0.0, 0.1, &DecomposeOptions::default()).unwrap();
        assert!(dec.k() <= 2);
        let a = &dec.components[0].alpha;
        assert!(a == &vec![1.0, 0.0] || a == &vec![0.0, 1.0], "{a:?}");
        assert!((dec.components[0].p - 0.5).abs() < 1e-12);
        assert!((dec.c_initial - 1.0).abs() < 1e-9);
        assert!(verify_decomposition(&dec, &f).passed());
    }

    #[test]
    fn random_instances_satisfy_bookkeeping() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..25 {
            let (nx, ny) = (rng.random_range(2..=4), rng.random_range(2..=4));
            let f = random_complete(nx, ny, rng.random_range(2..=3), rng.random(), 0.4).unwrap();
            let mu = JointDistribution::random(nx, ny, 1.0, &mut rng);
            let eps = rng.random_range(0.05..0.3);
            let delta = rng.random_range(0.05..0.3);
            let dec = match decompose(&f, &mu, eps, delta, &DecomposeOptions::default()) {
                Ok(d) => d,
                Err(Error::WitnessBudgetExceeded { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            assert!(dec.k() <= nx);
            let rep = verify_decomposition(&dec, &f);
            for name in ["weights", "mixture", "property-1", "markov", "ratio-identity", "trace", "component-count"] {
                assert!(rep.get(name).unwrap().passed, "{name}: {rep:?}");
            }
        }
    }

    #[test]
    fn broken_mixture_is_located() {
        let f = full(3, 2);
        let mu = JointDistribution::uniform(3, 2);
        let mut dec = decompose(&f, &mu, 0.1, 0.1, &DecomposeOptions::default()).unwrap();
        dec.components[0].alpha = vec![0.25, 0.5, 0.25];
        let rep = verify_decomposition(&dec, &f);
        let m = rep.get("mixture").unwrap();
        assert!(!m.passed);
        assert_eq!(m.cell, Some((0, 1, 0)));
        assert!((m.worst - 1.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn structural_problems_are_reported() {
        let f = full(2, 2);
        let mu = JointDistribution::uniform(2, 2);
        let mut dec = decompose(&f, &mu, 0.1, 0.1, &DecomposeOptions::default()).unwrap();
        dec.components[0].alpha.push(0.0);
        let rep = verify_decomposition(&dec, &f);
        assert!(!rep.passed());
        assert_eq!(rep.checks[0].name, "structure");
    }

    #[test]
    fn budget_exceeded_is_reported() {
        let f = Family::Equality(2).build().unwrap();
        let mu = JointDistribution::uniform(2, 2);
        let opts = DecomposeOptions { c: Some(0.0), max_relaxations: 2, ..Default::default() };
        match decompose(&f, &mu, 0.0, 0.1, &opts) {
            Err(Error::WitnessBudgetExceeded { budget, best, component: 0 }) => {
                assert!((budget - 0.2).abs() < 1e-12);
                assert!((best - 1.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_round_trip() {
        let mu = JointDistribution::uniform(2, 3);
        let dec = decompose(&full(2, 3), &mu, 0.1, 0.2, &DecomposeOptions::default()).unwrap();
        let text = dec.to_json().unwrap();
        assert!(text.contains(r#""components":[{"p":1.0,"#));
        assert_eq!(Decomposition::from_json(&text).unwrap(), dec);
    }
}
