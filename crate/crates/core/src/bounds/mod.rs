//! Distributional error and the two min-entropy bounds.
//!
//! Every optimization here runs over one-way distributions for a base `μ`,
//! so the search variable is an X-marginal `α` (see [`crate::dist`]). Two
//! identities drive the code:
//!
//! - `λ(x, y)/μ(x, y) = α(x)/μ_X(x)`, hence `S∞(λ‖μ) = max_x log₂(α(x)/μ_X(x))`;
//! - `λ(x|y)/μ(x|y) = (α(x)/μ_X(x))·(μ_Y(y)/λ_Y(y))`.

mod cment;
mod global;
mod ment;

use serde::Serialize;

use crate::dist::{JointDistribution, OneWayWitness};
use crate::relations::Relation;
use crate::{Error, Result};

pub use cment::{cment_bound, CmentOptions};
pub use global::{global_bound, BoundKind, GlobalOptions};
pub use ment::{ment_bound, solve_ment_for_map, MentOptions};

/// Default cap on the number of answer maps `|Z|^|Y|` enumerated exactly.
pub const DEFAULT_MAP_CAP: u128 = 1_000_000;

/// Tolerance when comparing an error against `eps` inside the optimizers.
pub(crate) const FEAS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// The search space was exhausted.
    Exact,
    /// Exhaustive over a finite grid, plus local search.
    ExactToGrid,
    UpperBound,
    LowerBound,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub value: f64,
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_alpha: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_g: Option<Vec<usize>>,
    /// Achieving distribution for [`global_bound`], row-major.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
}

pub(crate) fn check_shape(f: &Relation, mu: &JointDistribution) -> Result<()> {
    if f.nx() != mu.nx() || f.ny() != mu.ny() {
        return Err(Error::ShapeMismatch(format!(
            "relation is {}x{}, distribution is {}x{}",
            f.nx(),
            f.ny(),
            mu.nx(),
            mu.ny()
        )));
    }
    Ok(())
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::EpsOutOfRange(eps));
    }
    Ok(())
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::DeltaOutOfRange(delta));
    }
    Ok(())
}

/// `err_f` of an arbitrary nonnegative table (not necessarily normalized),
/// with the minimizing answer map; ties go to the smallest `z`.
pub fn err_of_table(f: &Relation, table: &[f64]) -> (f64, Vec<usize>) {
    let (nx, ny, nz) = (f.nx(), f.ny(), f.nz());
    let mut total = 0.0;
    let mut g = vec![0; ny];
    let mut wrong = vec![0.0; nz];
    for y in 0..ny {
        wrong.iter_mut().for_each(|w| *w = 0.0);
        for x in 0..nx {
            let m = table[x * ny + y];
            if m > 0.0 {
                for (z, &ok) in f.answers(x, y).iter().enumerate() {
                    if !ok {
                        wrong[z] += m;
                    }
                }
            }
        }
        let mut best = 0;
        for z in 1..nz {
            if wrong[z] < wrong[best] {
                best = z;
            }
        }
        g[y] = best;
        total += wrong[best];
    }
    (total, g)
}

/// `err_f(μ) = min_g Pr_μ[(x, y, g(y)) ∉ f]`.
pub fn err(f: &Relation, mu: &JointDistribution) -> Result<BoundsReport> {
    check_shape(f, mu)?;
    let (value, g) = err_of_table(f, mu.table());
    Ok(BoundsReport { value, mode: Mode::Exact, witness_alpha: None, witness_g: Some(g), mu: None })
}

/// Values within this distance are one atom of the log-ratio distribution.
const ATOM_TOL: f64 = 1e-12;

/// Smallest `c` among `values` with `Pr[value > c] ≤ delta`.
pub(crate) fn upper_quantile(atoms: &mut [(f64, f64)], delta: f64) -> f64 {
    atoms.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tail = 0.0;
    let mut answer = f64::NEG_INFINITY;
    let mut i = 0;
    while i < atoms.len() {
        let v = atoms[i].0;
        if tail > delta + ATOM_TOL {
            break;
        }
        answer = v;
        while i < atoms.len() && atoms[i].0 >= v - ATOM_TOL {
            tail += atoms[i].1;
            i += 1;
        }
    }
    answer
}

/// `cment^μ_δ(λ)`: the least `c` with `Pr_λ[log₂(λ(x|y)/μ(x|y)) > c] ≤ δ`.
///
/// May be negative.
pub fn cment_of_lambda(lambda: &OneWayWitness<'_>, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let eval = cment::Evaluator::without_relation(lambda.base());
    Ok(eval.quantile(lambda.alpha(), delta))
}

#[cfg(test)]
mod tests;
