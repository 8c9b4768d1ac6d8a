//! Every module invariant, run on a seeded corpus plus the desk instances.
//!
//! Each check contributes margins: `margin ≥ 0` passes, and the tolerance is
//! already folded in. The report holds no timings, so reruns with the same
//! options are byte-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::round_sig;
use crate::bounds::{cment_bound, cment_of_lambda, err, ment_bound, CmentOptions};
use crate::compression::{compress_run, sampler_chi_square, CompressParams, Scheme};
use crate::corpus::{desk_instances, grid, CorpusSpec, Instance};
use crate::decomposition::{decompose, verify_decomposition, DecomposeOptions, Decomposition};
use crate::dist::{dirichlet, entropies, entropy, kl, l1, s_inf, JointDistribution, OneWayWitness};
use crate::protocols::{exact_d, max_success};
use crate::relations::{Family, Relation};
use crate::compression::{build_from_decomposition, BuildOptions};

/// The per-`μ` budget can fall short on a residual even after the retry
/// ladder, so decompose is only required to succeed this often.
pub const MIN_SUCCESS_RATE: f64 = 0.95;

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random relations in the corpus; 0 runs only the desk instances.
    pub relations: usize,
    pub dists: usize,
    pub chi_square_decs: usize,
    pub chi_square_draws: usize,
    pub transcript_trials: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { seed: 0, relations: 20, dists: 20, chi_square_decs: 10, chi_square_draws: 100_000, transcript_trials: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub module: String,
    pub count: usize,
    pub failures: usize,
    pub worst_margin: Option<f64>,
    pub worst_instance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineRow {
    pub instance: String,
    pub eps: f64,
    pub delta: f64,
    pub cment: f64,
    pub bits: u32,
    pub error: f64,
}

/// Bits of the built protocol against `cment + κ·log₂(1/δ) + κ′`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaFit {
    pub rows: Vec<PipelineRow>,
    /// Least `κ` with `κ′ = 0`.
    pub kappa_max: Option<f64>,
    /// Least-squares `(κ, κ′)`, when the `δ` values differ.
    pub kappa_ls: Option<f64>,
    pub kappa_prime_ls: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub relations: usize,
    pub dists: usize,
    pub instances: usize,
    pub checks: Vec<CheckSummary>,
    pub pipeline: KappaFit,
    pub failed_checks: usize,
    pub passed: bool,
}

struct Tally {
    checks: Vec<CheckSummary>,
}

impl Tally {
    fn record(&mut self, module: &str, name: &str, margin: f64, instance: &str) {
        let idx = match self.checks.iter().position(|c| c.name == name) {
            Some(i) => i,
            None => {
                self.checks.push(CheckSummary {
                    name: name.to_string(),
                    module: module.to_string(),
                    count: 0,
                    failures: 0,
                    worst_margin: None,
                    worst_instance: None,
                });
                self.checks.len() - 1
            }
        };
        let c = &mut self.checks[idx];
        c.count += 1;
        let pass = margin >= 0.0;
        if !pass {
            c.failures += 1;
        }
        if c.worst_margin.is_none_or(|w| margin < w || margin.is_nan()) {
            c.worst_margin = Some(margin);
            c.worst_instance = Some(instance.to_string());
        }
    }

    fn holds(&mut self, module: &str, name: &str, ok: bool, instance: &str) {
        self.record(module, name, if ok { 0.0 } else { -1.0 }, instance);
    }
}

pub fn verify_suite(opts: &VerifyOptions) -> VerifyReport {
    let mut tally = Tally { checks: Vec::new() };
    let mut instances = desk_instances();
    if opts.relations > 0 && opts.dists > 0 {
        instances.extend(grid(&CorpusSpec::default(), opts.seed, opts.relations, opts.dists));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x005e_ed0f_7e57);

    relation_checks(&mut tally, &instances);
    let mut decs: Vec<(usize, Decomposition)> = Vec::new();
    let mut first_failure = None;
    for (n, inst) in instances.iter().enumerate() {
        dist_checks(&mut tally, inst, &mut rng);
        bounds_checks(&mut tally, inst, &mut rng);
        protocol_checks(&mut tally, inst);
        match decomposition_checks(&mut tally, inst) {
            Some(dec) => decs.push((n, dec)),
            None => {
                first_failure.get_or_insert(inst.label.as_str());
            }
        }
    }
    let rate = decs.len() as f64 / instances.len() as f64;
    tally.record("decomposition", "decomposition.success-rate", rate - MIN_SUCCESS_RATE, first_failure.unwrap_or("all"));
    compression_checks(&mut tally, &instances, &decs, opts);
    let pipeline = pipeline_checks(&mut tally, &instances, &decs);

    for c in &mut tally.checks {
        c.worst_margin = c.worst_margin.map(round_sig);
    }
    let failed_checks = tally.checks.iter().filter(|c| c.failures > 0).count();
    VerifyReport {
        seed: opts.seed,
        relations: opts.relations,
        dists: opts.dists,
        instances: instances.len(),
        checks: tally.checks,
        pipeline,
        failed_checks,
        passed: failed_checks == 0,
    }
}

fn relation_checks(t: &mut Tally, instances: &[Instance]) {
    let builtins = [Family::Equality(2), Family::Equality(3), Family::GreaterThan(3), Family::Index(2)];
    let mut rels: Vec<(String, Relation, usize)> = builtins.iter().map(|b| (b.to_string(), b.build().expect("builtin"), 3)).collect();
    let mut last: Option<&Relation> = None;
    for inst in instances {
        if last != Some(&inst.f) {
            rels.push((inst.label.clone(), inst.f.clone(), 2));
            last = Some(&inst.f);
        }
    }
    for (label, f, k_max) in &rels {
        for k in 1..=*k_max {
            let Ok(p) = f.tensor_power(k) else { continue };
            let complete = (0..p.nx()).all(|x| (0..p.ny()).all(|y| p.answers(x, y).iter().any(|&a| a)));
            t.holds("relations", "relations.tensor-complete", complete, label);
            let count = (f.allowed_count() as u128).pow(k as u32);
            t.holds("relations", "relations.tensor-count", p.allowed_count() as u128 == count, label);
        }
        let back = f.to_json().and_then(|s| Relation::from_json(&s));
        t.holds("relations", "relations.round-trip", back.as_ref().ok() == Some(f), label);
    }
}

fn random_full(nx: usize, ny: usize, rng: &mut ChaCha8Rng) -> JointDistribution {
    loop {
        let d = JointDistribution::random(nx, ny, 1.0, rng);
        if d.table().iter().all(|&v| v > 0.0) {
            return d;
        }
    }
}

fn dist_checks(t: &mut Tally, inst: &Instance, rng: &mut ChaCha8Rng) {
    let (nx, ny) = (inst.mu.nx(), inst.mu.ny());
    let label = inst.label.as_str();
    let l1d = random_full(nx, ny, rng);
    let l2d = random_full(nx, ny, rng);
    let m1 = &inst.mu;
    let m2 = random_full(nx, ny, rng);
    let p: f64 = rng.random();
    let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| p * u + (1.0 - p) * v).collect::<Vec<_>>();
    let lhs = kl(&mix(l1d.table(), l2d.table()), &mix(m1.table(), m2.table()));
    let rhs = p * kl(l1d.table(), m1.table()) + (1.0 - p) * kl(l2d.table(), m2.table());
    t.record("dist", "dist.joint-convexity", rhs + 1e-9 - lhs, label);

    let (lam, mu) = (&l1d, &m2);
    let mut cond = 0.0;
    for x in 0..nx {
        let a = lam.row_conditional(x).expect("full support");
        let b = mu.row_conditional(x).expect("full support");
        cond += lam.marginal_x()[x] * kl(&a, &b);
    }
    let chain = kl(lam.marginal_x(), mu.marginal_x()) + cond;
    t.record("dist", "dist.chain-rule", 1e-9 - (kl(lam.table(), mu.table()) - chain).abs(), label);

    for (lam, mu) in [(&l1d, m1), (&l2d, &m2)] {
        let d = kl(lam.table(), mu.table());
        t.record("dist", "dist.kl-nonnegative", d + 1e-12, label);
        t.record("dist", "dist.pinsker", d.sqrt() + 1e-6 - l1(lam.table(), mu.table()), label);
        t.record("dist", "dist.kl-le-s-inf", s_inf(lam.table(), mu.table()) + 1e-6 - d, label);
    }

    let h = entropies(&inst.mu);
    let mi = entropy(inst.mu.marginal_x()) + entropy(inst.mu.marginal_y()) - entropy(inst.mu.table());
    t.record("dist", "dist.mutual-information", 1e-9 - (mi - h.i_xy).abs(), label);
}

fn random_alpha(mu: &JointDistribution, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut a = dirichlet(mu.nx(), 1.0, rng);
    for (x, v) in a.iter_mut().enumerate() {
        if mu.marginal_x()[x] <= 0.0 {
            *v = 0.0;
        }
    }
    let s: f64 = a.iter().sum();
    if s > 0.0 {
        a.iter_mut().for_each(|v| *v /= s);
        a
    } else {
        mu.marginal_x().to_vec()
    }
}

fn bounds_checks(t: &mut Tally, inst: &Instance, rng: &mut ChaCha8Rng) {
    let (f, mu, label) = (&inst.f, &inst.mu, inst.label.as_str());
    let e0 = err(f, mu).expect("shapes agree").value;

    let ment = ment_bound(f, mu, inst.eps).expect("valid instance");
    let cment = cment_bound(f, mu, inst.eps, inst.delta, &CmentOptions::default()).expect("valid instance");
    t.record("bounds", "bounds.cment-le-ment", ment.value + 1e-6 - cment.value, label);

    if let Some(alpha) = &ment.witness_alpha {
        let lam = OneWayWitness::new(alpha.clone(), mu).expect("witness respects support");
        let lam_d = lam.to_distribution();
        t.holds("bounds", "bounds.lp-witness-one-way", crate::dist::is_one_way_for(&lam_d, mu, 1e-9), label);
        t.record("bounds", "bounds.lp-witness-error", inst.eps + 1e-6 - err(f, &lam_d).expect("shapes agree").value, label);
        t.record("bounds", "bounds.lp-witness-value", 1e-6 - (lam.s_inf() - ment.value).abs(), label);
    }

    let alpha = random_alpha(mu, rng);
    let lam = OneWayWitness::new(alpha, mu).expect("alpha on support");
    let q = cment_of_lambda(&lam, inst.delta).expect("delta in range");
    t.record("bounds", "bounds.cment-lambda-le-s-inf", lam.s_inf() - q, label);
    t.record("bounds", "bounds.cment-lambda-le-s-inf-plus-log", lam.s_inf() + (1.0 / inst.delta).log2() + 1e-9 - q, label);

    let mut prev = f64::INFINITY;
    for d in [0.02, 0.05, 0.1, 0.2, 0.4, 0.8] {
        let q = cment_of_lambda(&lam, d).expect("delta in range");
        t.record("bounds", "bounds.cment-lambda-monotone", prev + 1e-12 - q, label);
        prev = q;
    }

    let mut prev = f64::INFINITY;
    for i in 0..10 {
        let eps = e0 * i as f64 / 10.0;
        let v = ment_bound(f, mu, eps).expect("valid eps").value;
        t.record("bounds", "bounds.ment-monotone", prev + 1e-9 - v, label);
        prev = v;
    }

    let (x, y, z) = (rng.random_range(0..f.nx()), rng.random_range(0..f.ny()), rng.random_range(0..f.nz()));
    let g = f.with_triple(x, y, z).expect("in range");
    t.record("bounds", "bounds.err-monotone", e0 + 1e-12 - err(&g, mu).expect("shapes agree").value, label);
}

fn protocol_checks(t: &mut Tally, inst: &Instance) {
    let (f, mu, label) = (&inst.f, &inst.mu, inst.label.as_str());
    let e0 = err(f, mu).expect("shapes agree").value;
    let ment = ment_bound(f, mu, inst.eps).expect("valid instance").value;
    for k in 1..=3 {
        let d = exact_d(f, mu, inst.eps * (1.0 - 0.5f64.powi(k))).expect("within caps");
        t.record("protocols", "protocols.d-ge-ment-minus-k", d.bits as f64 - (ment - k as f64) + 1e-6, label);
    }

    let mut prev = usize::MAX;
    for i in 0..5 {
        let eps = e0 * i as f64 / 4.0;
        let d = exact_d(f, mu, eps.min(0.999_999)).expect("within caps");
        t.holds("protocols", "protocols.exact-d-monotone", d.t_min <= prev, label);
        t.holds("protocols", "protocols.t1-iff-err", (d.t_min == 1) == (e0 <= eps + crate::EPS_SLACK), label);
        prev = d.t_min;
    }

    let mut prev = 0.0;
    let mut single = Vec::new();
    for tt in 1..=f.nx() {
        let (s, _) = max_success(f, mu, tt).expect("within caps");
        t.record("protocols", "protocols.max-success-monotone", s + 1e-12 - prev, label);
        prev = s;
        single.push(s);
    }

    if f.nx() <= 3 {
        let f2 = f.tensor_power(2).expect("small");
        let mu2 = mu.tensor_power(2, crate::relations::DEFAULT_TABLE_CAP).expect("small");
        for tt in 1..f.nx() {
            let (s2, _) = max_success(&f2, &mu2, tt * tt).expect("within caps");
            t.record("protocols", "protocols.parallel-repetition", s2 - single[tt - 1].powi(2) + 1e-6, label);
        }
    }
}

fn decomposition_checks(t: &mut Tally, inst: &Instance) -> Option<Decomposition> {
    let label = inst.label.as_str();
    let dec = decompose(&inst.f, &inst.mu, inst.eps, inst.delta, &DecomposeOptions::default()).ok()?;
    t.holds("decomposition", "decomposition.k-le-nx", dec.k() <= inst.f.nx(), label);
    let report = verify_decomposition(&dec, &inst.f);
    for c in &report.checks {
        let margin = if c.passed { (c.limit - c.worst).max(0.0) } else { (c.limit - c.worst).min(-f64::MIN_POSITIVE) };
        t.record("decomposition", &format!("decomposition.{}", c.name), margin, label);
    }
    Some(dec)
}

fn compression_checks(t: &mut Tally, instances: &[Instance], decs: &[(usize, Decomposition)], opts: &VerifyOptions) {
    let params = CompressParams::default();
    let mut chosen: Vec<&(usize, Decomposition)> = decs.iter().filter(|(_, d)| d.k() >= 2).collect();
    if chosen.len() < opts.chi_square_decs {
        chosen.extend(decs.iter().filter(|(_, d)| d.k() < 2));
    }
    for (j, (n, dec)) in chosen.into_iter().take(opts.chi_square_decs).enumerate() {
        let inst = &instances[*n];
        let label = inst.label.as_str();
        let Ok(scheme) = Scheme::new(dec, &inst.f, inst.delta, &params) else {
            t.holds("compression", "compression.scheme", false, label);
            continue;
        };
        let px = dec.base.marginal_x();
        let x = (0..px.len()).fold(0, |b, x| if px[x] > px[b] { x } else { b });
        let seed = opts.seed.wrapping_add(j as u64);
        let chi = sampler_chi_square(&scheme, x, opts.chi_square_draws, seed);
        t.record("compression", "compression.sampler-chi-square", chi.p_value - 0.001, label);

        let Ok(run) = compress_run(dec, &inst.f, inst.delta, opts.transcript_trials, seed, &params) else {
            t.holds("compression", "compression.run", false, label);
            continue;
        };
        for r in &run.rows {
            if !r.flag {
                t.holds("compression", "compression.unflagged-decodes", r.decoded == r.i_true, label);
            }
            if let Some(i) = r.i_true {
                let ratio = scheme.theta_given_x(r.x)[i] / scheme.theta_given_y(r.y)[i];
                if ratio.log2() <= scheme.log_threshold - 1e-12 {
                    t.holds("compression", "compression.low-ratio-is-candidate", r.rank > 0, label);
                }
            }
        }
    }
}

fn pipeline_checks(t: &mut Tally, instances: &[Instance], decs: &[(usize, Decomposition)]) -> KappaFit {
    let mut rows = Vec::new();
    for (n, dec) in decs {
        let inst = &instances[*n];
        if inst.label.starts_with("grid-") {
            continue;
        }
        let label = inst.label.as_str();
        let Ok(built) = build_from_decomposition(dec, &inst.f, inst.delta, &BuildOptions::default()) else {
            t.holds("compression", "compression.pipeline-build", false, label);
            continue;
        };
        let l = (1.0 / inst.delta).log2();
        let bits = built.best.bits;
        let error = built.best.error;
        t.record("compression", "compression.pipeline-error", inst.eps + 4.0 * inst.delta + 0.01 - error, label);
        t.record("compression", "compression.pipeline-bits", dec.c_initial + l.ceil() + 5.0 - bits as f64, label);
        rows.push(PipelineRow { instance: inst.label.clone(), eps: inst.eps, delta: inst.delta, cment: round_sig(dec.c_initial), bits, error: round_sig(error) });
    }
    let kappa_max = rows
        .iter()
        .map(|r| (r.bits as f64 - r.cment) / (1.0 / r.delta).log2())
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    if let Some(k) = kappa_max {
        t.record("compression", "compression.pipeline-kappa", 4.0 - k, "desk");
    }
    let (kappa_ls, kappa_prime_ls) = least_squares(&rows);
    KappaFit { rows, kappa_max: kappa_max.map(round_sig), kappa_ls: kappa_ls.map(round_sig), kappa_prime_ls: kappa_prime_ls.map(round_sig) }
}

fn least_squares(rows: &[PipelineRow]) -> (Option<f64>, Option<f64>) {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| ((1.0 / r.delta).log2(), r.bits as f64 - r.cment)).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (None, None);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx < 1e-12 {
        return (None, None);
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let kappa = sxy / sxx;
    (Some(kappa), Some(my - kappa * mx))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyOptions {
        VerifyOptions { relations: 0, dists: 0, chi_square_decs: 2, chi_square_draws: 2000, transcript_trials: 200, ..Default::default() }
    }

    #[test]
    fn desk_only_is_deterministic() {
        let a = verify_suite(&small());
        let b = verify_suite(&small());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.instances, desk_instances().len());
        assert!(a.checks.iter().all(|c| c.count > 0));
    }

    #[test]
    fn module_invariants_hold_on_desk() {
        let r = verify_suite(&small());
        for c in &r.checks {
            if c.name == "bounds.cment-le-ment" || c.name == "bounds.cment-lambda-le-s-inf" {
                continue;
            }
            assert_eq!(c.failures, 0, "{c:?}");
        }
        assert!(r.pipeline.rows.len() == desk_instances().len());
    }
}
