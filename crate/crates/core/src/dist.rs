//! Joint distributions over `X × Y` and information functionals in bits.
//!
//! Conventions: `0·log 0 = 0`, `a·log(a/0) = +∞` for `a > 0`, and the ℓ1
//! distance is the half-sum `½ Σ |λ − μ|`.
//!
//! A distribution `λ` is one-way for `μ` when `λ(y|x) = μ(y|x)` on the
//! support of `λ`. Such a `λ` is fixed by its X-marginal `α`, which is what
//! [`OneWayWitness`] stores: `λ(x, y) = α(x)·μ(y|x)`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::relations::decode_into;
use crate::{Error, Result, TOL_MASS};

/// Entries below this magnitude are clamped to zero at construction.
pub const CLAMP: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionFile", into = "DistributionFile")]
pub struct JointDistribution {
    nx: usize,
    ny: usize,
    p: Vec<f64>,
    px: Vec<f64>,
    py: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DistributionFile {
    nx: usize,
    ny: usize,
    p: Vec<f64>,
}

impl TryFrom<DistributionFile> for JointDistribution {
    type Error = Error;

    fn try_from(file: DistributionFile) -> Result<Self> {
        Self::new(file.nx, file.ny, file.p)
    }
}

impl From<JointDistribution> for DistributionFile {
    fn from(mu: JointDistribution) -> Self {
        DistributionFile { nx: mu.nx, ny: mu.ny, p: mu.p }
    }
}

impl JointDistribution {
    /// Validates a row-major table: finite, nonnegative, total within
    /// [`TOL_MASS`] of 1.
    pub fn new(nx: usize, ny: usize, mut p: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::BadParams(format!("empty alphabet: nx={nx}, ny={ny}")));
        }
        if p.len() != nx * ny {
            return Err(Error::ShapeMismatch(format!("table has {} entries, expected {}", p.len(), nx * ny)));
        }
        for (index, v) in p.iter_mut().enumerate() {
            if !v.is_finite() || *v < -CLAMP {
                return Err(Error::InvalidEntry { index, value: *v });
            }
            if v.abs() < CLAMP {
                *v = 0.0;
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > TOL_MASS {
            return Err(Error::NotNormalized { sum, tol: TOL_MASS });
        }
        let mut px = vec![0.0; nx];
        let mut py = vec![0.0; ny];
        for x in 0..nx {
            for y in 0..ny {
                px[x] += p[x * ny + y];
                py[y] += p[x * ny + y];
            }
        }
        Ok(JointDistribution { nx, ny, p, px, py })
    }

    /// Normalizes a nonnegative weight table.
    pub fn from_weights(nx: usize, ny: usize, mut w: Vec<f64>) -> Result<Self> {
        let sum: f64 = w.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::NotNormalized { sum, tol: TOL_MASS });
        }
        for v in w.iter_mut() {
            *v /= sum;
        }
        Self::new(nx, ny, w)
    }

    pub fn uniform(nx: usize, ny: usize) -> Self {
        let n = (nx * ny) as f64;
        Self::new(nx, ny, vec![1.0 / n; nx * ny]).expect("uniform is valid")
    }

    pub fn point_mass(nx: usize, ny: usize, x: usize, y: usize) -> Result<Self> {
        if x >= nx || y >= ny {
            return Err(Error::IndexOutOfRange { what: "cell", index: x * ny + y, size: nx * ny });
        }
        let mut p = vec![0.0; nx * ny];
        p[x * ny + y] = 1.0;
        Self::new(nx, ny, p)
    }

    /// `a ⊗ b` for marginals `a` over X and `b` over Y.
    pub fn product(a: &[f64], b: &[f64]) -> Result<Self> {
        let p = a.iter().flat_map(|&ax| b.iter().map(move |&by| ax * by)).collect();
        Self::new(a.len(), b.len(), p)
    }

    /// Dirichlet sample over all `nx·ny` cells with the given concentration.
    pub fn random<R: Rng + ?Sized>(nx: usize, ny: usize, concentration: f64, rng: &mut R) -> Self {
        let w = dirichlet(nx * ny, concentration, rng);
        Self::from_weights(nx, ny, w).expect("dirichlet sample is a distribution")
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn p(&self, x: usize, y: usize) -> f64 {
        self.p[x * self.ny + y]
    }

    /// Row-major table.
    pub fn table(&self) -> &[f64] {
        &self.p
    }

    pub fn marginal_x(&self) -> &[f64] {
        &self.px
    }

    pub fn marginal_y(&self) -> &[f64] {
        &self.py
    }

    /// `μ(y|x)`; errors when `μ_X(x) = 0`.
    pub fn cond_y_given_x(&self, y: usize, x: usize) -> Result<f64> {
        let m = self.px[x];
        if m <= 0.0 {
            return Err(Error::ConditionalOnNullEvent(format!("mu_X({x}) = 0")));
        }
        Ok(self.p(x, y) / m)
    }

    /// `μ(x|y)`; errors when `μ_Y(y) = 0`.
    pub fn cond_x_given_y(&self, x: usize, y: usize) -> Result<f64> {
        let m = self.py[y];
        if m <= 0.0 {
            return Err(Error::ConditionalOnNullEvent(format!("mu_Y({y}) = 0")));
        }
        Ok(self.p(x, y) / m)
    }

    /// The conditional row `Y_x`; errors when `μ_X(x) = 0`.
    pub fn row_conditional(&self, x: usize) -> Result<Vec<f64>> {
        (0..self.ny).map(|y| self.cond_y_given_x(y, x)).collect()
    }

    /// The conditional column `X_y`; errors when `μ_Y(y) = 0`.
    pub fn column_conditional(&self, y: usize) -> Result<Vec<f64>> {
        (0..self.nx).map(|x| self.cond_x_given_y(x, y)).collect()
    }

    /// `μ^{⊗k}` under the big-endian tuple encoding of the relations module.
    pub fn tensor_power(&self, k: usize, cap: u128) -> Result<Self> {
        if k == 0 {
            return Err(Error::BadParams("tensor power needs k >= 1".into()));
        }
        let size = (self.nx as u128)
            .checked_pow(k as u32)
            .and_then(|a| a.checked_mul((self.ny as u128).checked_pow(k as u32)?))
            .unwrap_or(u128::MAX);
        if size > cap {
            return Err(Error::SizeCapExceeded { size, cap });
        }
        let nx = self.nx.pow(k as u32);
        let ny = self.ny.pow(k as u32);
        let mut xs = vec![0; k];
        let mut ys = vec![0; k];
        let mut p = Vec::with_capacity(nx * ny);
        for x in 0..nx {
            decode_into(x, self.nx, &mut xs);
            for y in 0..ny {
                decode_into(y, self.ny, &mut ys);
                p.push(xs.iter().zip(&ys).map(|(&a, &b)| self.p(a, b)).product());
            }
        }
        Self::new(nx, ny, p)
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
}

/// Symmetric Dirichlet sample of dimension `n`.
pub fn dirichlet<R: Rng + ?Sized>(n: usize, concentration: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    loop {
        let w: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 && s.is_finite() {
            return w.into_iter().map(|v| v / s).collect();
        }
    }
}

/// `S(p) = −Σ p log₂ p`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>()
}

/// `S(p‖q) = Σ p log₂(p/q)`; `+∞` when `supp p ⊄ supp q`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            acc += a * (a / b).log2();
        }
    }
    acc
}

/// `S∞(p‖q) = max_{supp p} log₂(p/q)`.
pub fn s_inf(p: &[f64], q: &[f64]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            best = best.max((a / b).log2());
        }
    }
    best
}

/// Half-sum ℓ1 distance.
pub fn l1(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Divergences {
    pub kl: f64,
    pub s_inf: f64,
    pub l1: f64,
}

pub fn divergences(lambda: &JointDistribution, mu: &JointDistribution) -> Result<Divergences> {
    same_shape(lambda, mu)?;
    Ok(Divergences {
        kl: kl(lambda.table(), mu.table()),
        s_inf: s_inf(lambda.table(), mu.table()),
        l1: l1(lambda.table(), mu.table()),
    })
}

fn same_shape(a: &JointDistribution, b: &JointDistribution) -> Result<()> {
    if a.nx != b.nx || a.ny != b.ny {
        return Err(Error::ShapeMismatch(format!("{}x{} vs {}x{}", a.nx, a.ny, b.nx, b.ny)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Entropies {
    pub s_x: f64,
    pub s_y_given_x: f64,
    pub i_xy: f64,
}

pub fn entropies(mu: &JointDistribution) -> Entropies {
    let s_x = entropy(mu.marginal_x());
    let s_y_given_x = (0..mu.nx)
        .filter(|&x| mu.px[x] > 0.0)
        .map(|x| mu.px[x] * entropy(&mu.row_conditional(x).expect("positive mass")))
        .sum();
    let i_xy = (0..mu.ny)
        .filter(|&y| mu.py[y] > 0.0)
        .map(|y| mu.py[y] * kl(&mu.column_conditional(y).expect("positive mass"), mu.marginal_x()))
        .sum();
    Entropies { s_x, s_y_given_x, i_xy }
}

/// `λ(x, y) = α(x)·μ(y|x)`.
pub fn make_one_way(alpha: &[f64], mu: &JointDistribution) -> Result<JointDistribution> {
    Ok(OneWayWitness::new(alpha.to_vec(), mu)?.to_distribution())
}

/// True iff `|λ(y|x) − μ(y|x)| ≤ tol` on the support of `λ`.
pub fn is_one_way_for(lambda: &JointDistribution, mu: &JointDistribution, tol: f64) -> bool {
    if same_shape(lambda, mu).is_err() {
        return false;
    }
    for x in 0..lambda.nx {
        if lambda.px[x] <= 0.0 {
            continue;
        }
        if mu.px[x] <= 0.0 {
            return false;
        }
        for y in 0..lambda.ny {
            if lambda.p(x, y) > 0.0 && (lambda.p(x, y) / lambda.px[x] - mu.p(x, y) / mu.px[x]).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// A one-way distribution for `base`, held by its X-marginal.
#[derive(Debug, Clone)]
pub struct OneWayWitness<'a> {
    alpha: Vec<f64>,
    base: &'a JointDistribution,
}

impl<'a> OneWayWitness<'a> {
    pub fn new(mut alpha: Vec<f64>, base: &'a JointDistribution) -> Result<Self> {
        if alpha.len() != base.nx {
            return Err(Error::ShapeMismatch(format!("alpha has {} entries, |X| = {}", alpha.len(), base.nx)));
        }
        for (index, v) in alpha.iter_mut().enumerate() {
            if !v.is_finite() || *v < -CLAMP {
                return Err(Error::InvalidEntry { index, value: *v });
            }
            if v.abs() < CLAMP {
                *v = 0.0;
            }
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > TOL_MASS {
            return Err(Error::NotNormalized { sum, tol: TOL_MASS });
        }
        if let Some(x) = (0..base.nx).find(|&x| alpha[x] > 0.0 && base.px[x] <= 0.0) {
            return Err(Error::SupportViolation { x });
        }
        Ok(OneWayWitness { alpha, base })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn base(&self) -> &JointDistribution {
        self.base
    }

    pub fn to_distribution(&self) -> JointDistribution {
        let mu = self.base;
        let mut p = vec![0.0; mu.nx * mu.ny];
        for x in 0..mu.nx {
            if self.alpha[x] > 0.0 {
                let w = self.alpha[x] / mu.px[x];
                for y in 0..mu.ny {
                    p[x * mu.ny + y] = w * mu.p(x, y);
                }
            }
        }
        JointDistribution::new(mu.nx, mu.ny, p).expect("one-way mixture of a valid base")
    }

    /// `S∞(λ‖μ) = max_x log₂(α(x)/μ_X(x))`.
    pub fn s_inf(&self) -> f64 {
        s_inf(&self.alpha, &self.base.px)
    }
}
