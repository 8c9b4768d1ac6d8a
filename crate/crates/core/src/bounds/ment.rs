//! Relative min-entropy bound `ment^μ_ε(f)`.
//!
//! `err_f(λ) = min_g err_g(λ)` and each `err_g` is linear in `α`, so the
//! problem splits into one linear program per answer map `g: Y → Z`:
//!
//! ```text
//! minimize t  s.t.  α(x) ≤ t·μ_X(x),  Σ_x α(x)·e_g(x) ≤ ε,  α ∈ simplex
//! ```
//!
//! with `e_g(x) = Σ_y μ(y|x)·[(x, y, g(y)) ∉ f]`. For fixed `t` the least
//! error is a fractional knapsack (fill rows in increasing `e_g` up to their
//! caps `t·μ_X`), which is nonincreasing in `t`; the optimal `t` is the root
//! of a piecewise-linear function and is found exactly.

use super::{check_eps, check_shape, BoundsReport, Mode, DEFAULT_MAP_CAP, FEAS_TOL};
use crate::dist::JointDistribution;
use crate::relations::Relation;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct MentOptions {
    /// Beyond this many answer maps the search runs over a seeded subset and
    /// reports an upper bound.
    pub map_cap: u128,
}

impl Default for MentOptions {
    fn default() -> Self {
        MentOptions { map_cap: DEFAULT_MAP_CAP }
    }
}

/// Solves the LP for one answer map. Returns `(t, α)` or `None` when no row
/// has `e_g(x) ≤ eps`.
pub fn solve_ment_for_map(mu_x: &[f64], e: &[f64], eps: f64) -> Option<(f64, Vec<f64>)> {
    let mut order: Vec<usize> = (0..mu_x.len()).filter(|&x| mu_x[x] > 0.0).collect();
    order.sort_by(|&a, &b| e[a].total_cmp(&e[b]).then(a.cmp(&b)));
    let &first = order.first()?;
    if e[first] > eps + FEAS_TOL {
        return None;
    }
    let mut mass = 0.0;
    let mut weighted = 0.0;
    let mut t = 1.0;
    for &x in &order {
        let next_mass = mass + mu_x[x];
        let next_weighted = weighted + mu_x[x] * e[x];
        if next_weighted > eps * next_mass + FEAS_TOL {
            // Root of e_x + t·(weighted − mass·e_x) = eps on [1/next_mass, 1/mass].
            t = (e[x] - eps) / (mass * e[x] - weighted);
            t = t.clamp(1.0 / next_mass, 1.0 / mass);
            break;
        }
        mass = next_mass;
        weighted = next_weighted;
    }
    let t = t.max(1.0);
    let mut alpha = vec![0.0; mu_x.len()];
    let mut rem = 1.0;
    let mut last = first;
    for &x in &order {
        if rem <= 0.0 {
            break;
        }
        let a = (t * mu_x[x]).min(rem);
        alpha[x] = a;
        rem -= a;
        last = x;
    }
    if rem > 0.0 {
        alpha[last] += rem;
    }
    Some((t, alpha))
}

/// Precomputed `μ(y|x)·[(x, y, z) ∉ f]`, laid out `[x][y][z]`.
pub(crate) struct WrongTable {
    pub ny: usize,
    pub nz: usize,
    pub w: Vec<f64>,
}

impl WrongTable {
    pub fn new(f: &Relation, mu: &JointDistribution) -> Self {
        let (nx, ny, nz) = (f.nx(), f.ny(), f.nz());
        let px = mu.marginal_x();
        let mut w = vec![0.0; nx * ny * nz];
        for x in 0..nx {
            if px[x] <= 0.0 {
                continue;
            }
            for y in 0..ny {
                let c = mu.p(x, y) / px[x];
                if c <= 0.0 {
                    continue;
                }
                for (z, &ok) in f.answers(x, y).iter().enumerate() {
                    if !ok {
                        w[(x * ny + y) * nz + z] = c;
                    }
                }
            }
        }
        WrongTable { ny, nz, w }
    }

    /// Row errors `e_g(x)`.
    pub fn row_errors(&self, g: &[usize], out: &mut [f64]) {
        for (x, e) in out.iter_mut().enumerate() {
            let base = x * self.ny * self.nz;
            *e = g.iter().enumerate().map(|(y, &z)| self.w[base + y * self.nz + z]).sum();
        }
    }
}

pub fn ment_bound(f: &Relation, mu: &JointDistribution, eps: f64) -> Result<BoundsReport> {
    ment_bound_with(f, mu, eps, &MentOptions::default())
}

pub fn ment_bound_with(f: &Relation, mu: &JointDistribution, eps: f64, opts: &MentOptions) -> Result<BoundsReport> {
    check_shape(f, mu)?;
    check_eps(eps)?;
    let table = WrongTable::new(f, mu);
    let px = mu.marginal_x();
    let (ny, nz) = (f.ny(), f.nz());
    let mut e = vec![0.0; f.nx()];
    let mut best: Option<(f64, Vec<f64>, Vec<usize>)> = None;
    let mut consider = |g: &[usize], best: &mut Option<(f64, Vec<f64>, Vec<usize>)>| -> Option<f64> {
        table.row_errors(g, &mut e);
        let (t, alpha) = solve_ment_for_map(px, &e, eps)?;
        if best.as_ref().is_none_or(|b| t < b.0 - FEAS_TOL) {
            *best = Some((t, alpha, g.to_vec()));
        }
        Some(t)
    };

    let maps = (nz as u128).checked_pow(ny as u32).unwrap_or(u128::MAX);
    let mode = if maps <= opts.map_cap {
        let mut g = vec![0; ny];
        loop {
            consider(&g, &mut best);
            if best.as_ref().is_some_and(|b| b.0 <= 1.0) {
                break;
            }
            if !next_map(&mut g, nz) {
                break;
            }
        }
        Mode::Exact
    } else {
        for seed in seed_maps(f, mu) {
            let mut g = seed;
            let mut cur = consider(&g, &mut best).unwrap_or(f64::INFINITY);
            // First-improvement coordinate descent over single-entry changes.
            let mut improved = true;
            while improved {
                improved = false;
                for y in 0..ny {
                    for z in 0..nz {
                        if z == g[y] {
                            continue;
                        }
                        let old = g[y];
                        g[y] = z;
                        match consider(&g, &mut best) {
                            Some(t) if t < cur - FEAS_TOL => {
                                cur = t;
                                improved = true;
                            }
                            _ => g[y] = old,
                        }
                    }
                }
            }
        }
        Mode::UpperBound
    };

    let (t, alpha, g) = best.ok_or(Error::Infeasible { eps })?;
    Ok(BoundsReport {
        value: t.log2(),
        mode,
        witness_alpha: Some(alpha),
        witness_g: Some(g),
        mu: None,
    })
}

/// Odometer over maps `Y → Z` with `y = 0` most significant.
pub(crate) fn next_map(g: &mut [usize], nz: usize) -> bool {
    for d in g.iter_mut().rev() {
        *d += 1;
        if *d < nz {
            return true;
        }
        *d = 0;
    }
    false
}

/// Seeds for the capped search: the `err_f(μ)` witness and, per row `x` in
/// the support, the map that is correct everywhere on that row.
fn seed_maps(f: &Relation, mu: &JointDistribution) -> Vec<Vec<usize>> {
    let mut seeds = vec![super::err_of_table(f, mu.table()).1];
    for x in 0..f.nx() {
        if mu.marginal_x()[x] > 0.0 {
            let g: Vec<usize> = (0..f.ny()).map(|y| f.first_answer(x, y)).collect();
            if !seeds.contains(&g) {
                seeds.push(g);
            }
        }
    }
    seeds
}
