//! Heuristic outer maximization over input distributions.
//!
//! Candidates, in evaluation order: the uniform distribution, every product
//! `a ⊗ b` of lattice marginals with step 1/8, then `budget` Dirichlet
//! joints from the seeded stream, plus a hill climb started from the best
//! structured candidate. The structured part and the hill climb never depend
//! on `budget`, so raising the budget only adds candidates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{cment_bound, ment::ment_bound_with, BoundsReport, CmentOptions, MentOptions, Mode};
use crate::dist::JointDistribution;
use crate::relations::Relation;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    Ment,
    Cment,
}

#[derive(Debug, Clone)]
pub struct GlobalOptions {
    /// Number of random candidate distributions.
    pub budget: usize,
    pub seed: u64,
    pub climb_steps: usize,
    /// Cap on product-lattice candidates (evenly thinned beyond it).
    pub lattice_cap: usize,
    /// For `cment`: lattice candidates are screened with cheap starts and
    /// only the best `screen_top` get the full search.
    pub screen_top: usize,
    pub cment: CmentOptions,
    pub ment: MentOptions,
}

impl Default for GlobalOptions {
    fn default() -> Self {
        GlobalOptions {
            budget: 32,
            seed: 0,
            climb_steps: 60,
            lattice_cap: 50_000,
            screen_top: 8,
            cment: CmentOptions { grid_cap: 0, ..Default::default() },
            ment: MentOptions::default(),
        }
    }
}

pub fn global_bound(f: &Relation, eps: f64, delta: Option<f64>, kind: BoundKind, opts: &GlobalOptions) -> Result<BoundsReport> {
    let delta = match kind {
        BoundKind::Ment => 0.5,
        BoundKind::Cment => delta.ok_or_else(|| Error::BadParams("cment needs delta".into()))?,
    };
    let full = |mu: &JointDistribution| -> Result<f64> {
        Ok(match kind {
            BoundKind::Ment => ment_bound_with(f, mu, eps, &opts.ment)?.value,
            BoundKind::Cment => cment_bound(f, mu, eps, delta, &opts.cment)?.value,
        })
    };
    let screen = |mu: &JointDistribution| -> Result<f64> {
        Ok(match kind {
            BoundKind::Ment => ment_bound_with(f, mu, eps, &opts.ment)?.value,
            BoundKind::Cment => cment_bound(f, mu, eps, delta, &CmentOptions::screening())?.value,
        })
    };
    let (nx, ny) = (f.nx(), f.ny());

    let mut best = (full(&JointDistribution::uniform(nx, ny))?, JointDistribution::uniform(nx, ny));
    let offer = |best: &mut (f64, JointDistribution), v: f64, mu: &JointDistribution| {
        if v > best.0 + 1e-12 {
            *best = (v, mu.clone());
        }
    };

    let xs = lattice(nx, 8);
    let ys = lattice(ny, 8);
    let total = xs.len() * ys.len();
    let stride = total.div_ceil(opts.lattice_cap.max(1)).max(1);
    let mut screened: Vec<(f64, usize)> = Vec::new();
    for idx in (0..total).step_by(stride) {
        let mu = JointDistribution::product(&xs[idx / ys.len()], &ys[idx % ys.len()])?;
        screened.push((screen(&mu)?, idx));
    }
    screened.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let top = match kind {
        BoundKind::Ment => screened.len(),
        BoundKind::Cment => opts.screen_top.min(screened.len()),
    };
    for &(v, idx) in &screened[..top] {
        let mu = JointDistribution::product(&xs[idx / ys.len()], &ys[idx % ys.len()])?;
        let v = if kind == BoundKind::Ment { v } else { full(&mu)? };
        offer(&mut best, v, &mu);
    }

    // Hill climb from the best structured candidate on its own stream.
    let mut climb_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut cur = best.clone();
    for _ in 0..opts.climb_steps {
        let n = (nx * ny) as f64;
        let w: Vec<f64> = cur
            .1
            .table()
            .iter()
            .map(|&p| {
                let z: f64 = StandardNormal.sample(&mut climb_rng);
                (p + 0.02 / n) * (0.5 * z).exp()
            })
            .collect();
        let mu = JointDistribution::from_weights(nx, ny, w)?;
        let v = full(&mu)?;
        if v > cur.0 + 1e-12 {
            cur = (v, mu);
        }
    }
    offer(&mut best, cur.0, &cur.1);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.budget {
        let mu = JointDistribution::random(nx, ny, 1.0, &mut rng);
        let v = full(&mu)?;
        offer(&mut best, v, &mu);
    }

    let (value, mu) = best;
    Ok(BoundsReport {
        value,
        mode: Mode::LowerBound,
        witness_alpha: None,
        witness_g: None,
        mu: Some(mu.table().to_vec()),
    })
}

/// All probability vectors of length `n` with entries in `{0, 1/steps, ..}`.
fn lattice(n: usize, steps: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; n];
    fn rec(pos: usize, left: usize, cur: &mut Vec<usize>, steps: usize, out: &mut Vec<Vec<f64>>) {
        if pos + 1 == cur.len() {
            cur[pos] = left;
            out.push(cur.iter().map(|&c| c as f64 / steps as f64).collect());
            return;
        }
        for c in 0..=left {
            cur[pos] = c;
            rec(pos + 1, left - c, cur, steps, out);
        }
    }
    rec(0, steps, &mut cur, steps, &mut out);
    out
}
