//! Robust conditional relative min-entropy bound `cment^μ_{ε,δ}(f)`.
//!
//! The objective is the upper `δ`-quantile of `log₂(λ(x|y)/μ(x|y))` under
//! `λ`, which is neither convex nor continuous in `α` because `λ_Y` sits in
//! the denominator. The search is a multi-start local search over the
//! simplex; when the support of `μ_X` is small a lattice sweep with step
//! `1/grid_steps` runs as well.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ment::{ment_bound_with, MentOptions};
use super::{check_delta, check_eps, check_shape, upper_quantile, BoundsReport, Mode, FEAS_TOL};
use crate::dist::{dirichlet, JointDistribution};
use crate::relations::Relation;
use crate::Result;

#[derive(Debug, Clone)]
pub struct CmentOptions {
    /// Random Dirichlet starts on top of the structured ones.
    pub restarts: usize,
    pub seed: u64,
    /// Run the lattice sweep when `|supp μ_X| ≤ grid_cap`.
    pub grid_cap: usize,
    pub grid_steps: usize,
    /// Refine every start by local search.
    pub local_search: bool,
    pub ment: MentOptions,
}

impl Default for CmentOptions {
    fn default() -> Self {
        CmentOptions {
            restarts: 8,
            seed: 0,
            grid_cap: 6,
            grid_steps: 64,
            local_search: true,
            ment: MentOptions::default(),
        }
    }
}

impl CmentOptions {
    /// Starts only, no refinement or sweep.
    pub fn screening() -> Self {
        CmentOptions { restarts: 0, grid_cap: 0, local_search: false, ..Default::default() }
    }
}

/// Scratch buffers for repeated evaluation.
pub(crate) struct Scratch {
    ly: Vec<f64>,
    atoms: Vec<(f64, f64)>,
    wrong: Vec<f64>,
    e: Vec<f64>,
}

pub(crate) struct Evaluator {
    nx: usize,
    ny: usize,
    nz: usize,
    /// `μ(y|x)`, zero rows off the support.
    cond: Vec<f64>,
    log_px: Vec<f64>,
    log_py: Vec<f64>,
    /// `μ(y|x)·[(x, y, z) ∉ f]`; empty without a relation.
    wrong: Vec<f64>,
    support: Vec<usize>,
}

impl Evaluator {
    pub fn without_relation(mu: &JointDistribution) -> Self {
        Self::build(mu, None)
    }

    pub fn new(f: &Relation, mu: &JointDistribution) -> Self {
        Self::build(mu, Some(f))
    }

    fn build(mu: &JointDistribution, f: Option<&Relation>) -> Self {
        let (nx, ny) = (mu.nx(), mu.ny());
        let px = mu.marginal_x();
        let mut cond = vec![0.0; nx * ny];
        for x in 0..nx {
            if px[x] > 0.0 {
                for y in 0..ny {
                    cond[x * ny + y] = mu.p(x, y) / px[x];
                }
            }
        }
        let (nz, wrong) = match f {
            Some(f) => {
                let nz = f.nz();
                let mut w = vec![0.0; nx * ny * nz];
                for x in 0..nx {
                    for y in 0..ny {
                        for (z, &ok) in f.answers(x, y).iter().enumerate() {
                            if !ok {
                                w[(x * ny + y) * nz + z] = cond[x * ny + y];
                            }
                        }
                    }
                }
                (nz, w)
            }
            None => (0, Vec::new()),
        };
        Evaluator {
            nx,
            ny,
            nz,
            cond,
            log_px: px.iter().map(|v| v.log2()).collect(),
            log_py: mu.marginal_y().iter().map(|v| v.log2()).collect(),
            wrong,
            support: (0..nx).filter(|&x| px[x] > 0.0).collect(),
        }
    }

    pub fn scratch(&self) -> Scratch {
        Scratch {
            ly: vec![0.0; self.ny],
            atoms: Vec::with_capacity(self.nx * self.ny),
            wrong: vec![0.0; self.nz],
            e: vec![0.0; self.nx],
        }
    }

    pub fn quantile(&self, alpha: &[f64], delta: f64) -> f64 {
        self.quantile_with(alpha, delta, &mut self.scratch())
    }

    fn quantile_with(&self, alpha: &[f64], delta: f64, s: &mut Scratch) -> f64 {
        let ny = self.ny;
        s.ly.iter_mut().for_each(|v| *v = 0.0);
        for &x in &self.support {
            if alpha[x] > 0.0 {
                for y in 0..ny {
                    s.ly[y] += alpha[x] * self.cond[x * ny + y];
                }
            }
        }
        s.atoms.clear();
        for &x in &self.support {
            if alpha[x] <= 0.0 {
                continue;
            }
            let a = alpha[x].log2() - self.log_px[x];
            for y in 0..ny {
                let c = self.cond[x * ny + y];
                if c > 0.0 {
                    s.atoms.push((a + self.log_py[y] - s.ly[y].log2(), alpha[x] * c));
                }
            }
        }
        upper_quantile(&mut s.atoms, delta)
    }

    /// `err_f(λ)` and the minimizing answer map.
    fn err_with(&self, alpha: &[f64], s: &mut Scratch, g: &mut [usize]) -> f64 {
        let (ny, nz) = (self.ny, self.nz);
        let mut total = 0.0;
        for y in 0..ny {
            s.wrong.iter_mut().for_each(|v| *v = 0.0);
            for &x in &self.support {
                let a = alpha[x];
                if a > 0.0 {
                    let base = (x * ny + y) * nz;
                    for z in 0..nz {
                        s.wrong[z] += a * self.wrong[base + z];
                    }
                }
            }
            let mut best = 0;
            for z in 1..nz {
                if s.wrong[z] < s.wrong[best] {
                    best = z;
                }
            }
            g[y] = best;
            total += s.wrong[best];
        }
        total
    }

    /// Makes `alpha` feasible by mixing toward the best row of its own best
    /// answer map. Returns false when that row is itself infeasible.
    fn project(&self, alpha: &mut [f64], eps: f64, s: &mut Scratch, g: &mut [usize]) -> bool {
        let err = self.err_with(alpha, s, g);
        if err <= eps + FEAS_TOL {
            return true;
        }
        let (ny, nz) = (self.ny, self.nz);
        for &x in &self.support {
            s.e[x] = (0..ny).map(|y| self.wrong[(x * ny + y) * nz + g[y]]).sum();
        }
        let anchor = *self
            .support
            .iter()
            .min_by(|&&a, &&b| s.e[a].total_cmp(&s.e[b]).then(a.cmp(&b)))
            .expect("nonempty support");
        if s.e[anchor] > eps {
            return false;
        }
        let w = ((err - eps) / (err - s.e[anchor]) * (1.0 + 1e-9)).min(1.0);
        for v in alpha.iter_mut() {
            *v *= 1.0 - w;
        }
        alpha[anchor] += w;
        self.err_with(alpha, s, g) <= eps + FEAS_TOL
    }

    /// Objective after projection, or `None` if no feasible projection.
    fn feasible_value(&self, alpha: &mut [f64], eps: f64, delta: f64, s: &mut Scratch, g: &mut [usize]) -> Option<f64> {
        if !self.project(alpha, eps, s, g) {
            return None;
        }
        Some(self.quantile_with(alpha, delta, s))
    }
}

const STEPS: [f64; 9] = [1.0, 0.25, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001];
const MAX_ROUNDS: usize = 25;
const JITTER_MOVES: usize = 4;

struct Search<'e> {
    eval: &'e Evaluator,
    eps: f64,
    delta: f64,
    scratch: Scratch,
    g: Vec<usize>,
    best: Option<(f64, Vec<f64>)>,
}

impl Search<'_> {
    fn offer(&mut self, value: f64, alpha: &[f64]) {
        if self.best.as_ref().is_none_or(|b| value < b.0 - 1e-12) {
            self.best = Some((value, alpha.to_vec()));
        }
    }

    fn start(&mut self, mut alpha: Vec<f64>, refine: bool, rng: &mut ChaCha8Rng) {
        let Some(v) = self.eval.feasible_value(&mut alpha, self.eps, self.delta, &mut self.scratch, &mut self.g) else {
            return;
        };
        self.offer(v, &alpha);
        if refine {
            let (v, alpha) = self.refine(alpha, v, rng);
            self.offer(v, &alpha);
        }
    }

    /// Pairwise mass transfers at shrinking step sizes plus random jitter,
    /// accepting strict decreases.
    fn refine(&mut self, mut cur: Vec<f64>, mut val: f64, rng: &mut ChaCha8Rng) -> (f64, Vec<f64>) {
        let supp = self.eval.support.clone();
        let mut cand = vec![0.0; cur.len()];
        for &step in &STEPS {
            for _ in 0..MAX_ROUNDS {
                let mut improved = false;
                for &i in &supp {
                    for &j in &supp {
                        if i == j || cur[i] <= 0.0 {
                            continue;
                        }
                        let mv = step.min(cur[i]);
                        cand.copy_from_slice(&cur);
                        cand[i] -= mv;
                        cand[j] += mv;
                        if let Some(v) = self.eval.feasible_value(&mut cand, self.eps, self.delta, &mut self.scratch, &mut self.g) {
                            if v < val - 1e-12 {
                                cur.copy_from_slice(&cand);
                                val = v;
                                improved = true;
                            }
                        }
                    }
                }
                for _ in 0..JITTER_MOVES {
                    let d = dirichlet(supp.len(), 1.0, rng);
                    let w = step.min(0.5) * rng.random::<f64>();
                    cand.iter_mut().zip(&cur).for_each(|(c, &a)| *c = (1.0 - w) * a);
                    for (k, &x) in supp.iter().enumerate() {
                        cand[x] += w * d[k];
                    }
                    if let Some(v) = self.eval.feasible_value(&mut cand, self.eps, self.delta, &mut self.scratch, &mut self.g) {
                        if v < val - 1e-12 {
                            cur.copy_from_slice(&cand);
                            val = v;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
        }
        (val, cur)
    }

    /// Every lattice point `counts/steps` over the support.
    fn sweep(&mut self, steps: usize, nx: usize) {
        let supp = self.eval.support.clone();
        let mut counts = vec![0usize; supp.len()];
        let mut alpha = vec![0.0; nx];
        *counts.last_mut().expect("nonempty support") = steps;
        loop {
            for (k, &x) in supp.iter().enumerate() {
                alpha[x] = counts[k] as f64 / steps as f64;
            }
            if self.eval.err_with(&alpha, &mut self.scratch, &mut self.g) <= self.eps + FEAS_TOL {
                let v = self.eval.quantile_with(&alpha, self.delta, &mut self.scratch);
                self.offer(v, &alpha);
            }
            if !next_composition(&mut counts) {
                break;
            }
        }
    }
}

/// Advances a composition of a fixed total in colex-like order.
fn next_composition(c: &mut [usize]) -> bool {
    let n = c.len();
    if n <= 1 {
        return false;
    }
    // Move one unit from the last part into the rightmost earlier slot that
    // can take it, resetting the tail.
    let last = c[n - 1];
    if last > 0 {
        c[n - 1] = 0;
        c[n - 2] += 1;
        c[n - 1] = last - 1;
        return true;
    }
    // last == 0: find rightmost nonzero among c[..n-1] at index i < n-1
    let Some(i) = (0..n - 1).rev().find(|&i| c[i] > 0) else {
        return false;
    };
    if i == 0 {
        return false;
    }
    let v = c[i];
    c[i] = 0;
    c[i - 1] += 1;
    c[n - 1] = v - 1;
    true
}

pub fn cment_bound(f: &Relation, mu: &JointDistribution, eps: f64, delta: f64, opts: &CmentOptions) -> Result<BoundsReport> {
    check_shape(f, mu)?;
    check_eps(eps)?;
    check_delta(delta)?;
    let eval = Evaluator::new(f, mu);
    let nx = f.nx();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut search = Search {
        eval: &eval,
        eps,
        delta,
        scratch: eval.scratch(),
        g: vec![0; f.ny()],
        best: None,
    };
    let refine = opts.local_search;

    let ment = ment_bound_with(f, mu, eps, &opts.ment)?;
    if let Some(alpha) = ment.witness_alpha {
        search.start(alpha, refine, &mut rng);
    }
    search.start(mu.marginal_x().to_vec(), refine, &mut rng);
    for &x in &eval.support {
        let mut alpha = vec![0.0; nx];
        alpha[x] = 1.0;
        search.start(alpha, refine, &mut rng);
    }
    for _ in 0..opts.restarts {
        let d = dirichlet(eval.support.len(), 1.0, &mut rng);
        let mut alpha = vec![0.0; nx];
        for (k, &x) in eval.support.iter().enumerate() {
            alpha[x] = d[k];
        }
        search.start(alpha, refine, &mut rng);
    }
    let mode = if eval.support.len() <= opts.grid_cap && opts.grid_steps > 0 {
        search.sweep(opts.grid_steps, nx);
        if refine {
            let (v, alpha) = search.best.clone().expect("point masses are feasible");
            let (v, alpha) = search.refine(alpha, v, &mut rng);
            search.offer(v, &alpha);
        }
        Mode::ExactToGrid
    } else {
        Mode::UpperBound
    };

    let (value, alpha) = search.best.expect("point masses are feasible");
    let mut g = vec![0; f.ny()];
    eval.err_with(&alpha, &mut eval.scratch(), &mut g);
    Ok(BoundsReport {
        value,
        mode,
        witness_alpha: Some(alpha),
        witness_g: Some(g),
        mu: None,
    })
}

#[cfg(test)]
mod tests {
    use super::next_composition;

    #[test]
    fn compositions_are_exhaustive() {
        for (parts, total, expected) in [(1, 5, 1), (2, 4, 5), (3, 4, 15), (4, 8, 165)] {
            let mut c = vec![0; parts];
            c[parts - 1] = total;
            let mut seen = std::collections::HashSet::new();
            loop {
                assert_eq!(c.iter().sum::<usize>(), total);
                assert!(seen.insert(c.clone()));
                if !next_composition(&mut c) {
                    break;
                }
            }
            assert_eq!(seen.len(), expected);
        }
    }
}
