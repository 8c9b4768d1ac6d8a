//! One-way protocols: Alice maps `x` to a message class, Bob answers from
//! `(class, y)`.
//!
//! [`exact_d`] and [`max_success`] search set partitions of `X` in
//! restricted-growth-string order. The committed loss of a partial partition
//! (mass of decided rows minus the mass its classes can capture) only grows
//! as rows are added, and a row placed alone costs nothing on a complete
//! relation, so it is an admissible bound for pruning. Among partitions with
//! equal loss the lexicographically smallest string wins.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::JointDistribution;
use crate::relations::Relation;
use crate::{Error, Result, EPS_SLACK, TOL_MASS};

/// Default cap on `|X|` for partition search.
pub const DEFAULT_PARTITION_CAP: usize = 12;

/// Losses closer than this are treated as equal during search.
const TIE_TOL: f64 = 1e-12;

/// `ceil(log₂ t)`, with `bits(1) = 0`.
pub fn bits_for(t: usize) -> u32 {
    assert!(t >= 1, "message count must be positive");
    usize::BITS - (t - 1).leading_zeros()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetProtocol {
    pub t: usize,
    pub msg: Vec<usize>,
    /// `ans[m][y]`.
    pub ans: Vec<Vec<usize>>,
}

impl DetProtocol {
    pub fn new(t: usize, msg: Vec<usize>, ans: Vec<Vec<usize>>) -> Result<Self> {
        let p = DetProtocol { t, msg, ans };
        p.check_shape()?;
        Ok(p)
    }

    fn check_shape(&self) -> Result<()> {
        if self.t == 0 {
            return Err(Error::InvalidProtocol("t = 0".into()));
        }
        if let Some(x) = self.msg.iter().position(|&m| m >= self.t) {
            return Err(Error::InvalidProtocol(format!("msg[{x}] = {} >= t = {}", self.msg[x], self.t)));
        }
        if self.ans.len() != self.t {
            return Err(Error::InvalidProtocol(format!("{} answer rows for t = {}", self.ans.len(), self.t)));
        }
        let ny = self.ans[0].len();
        if self.ans.iter().any(|row| row.len() != ny) {
            return Err(Error::InvalidProtocol("ragged answer table".into()));
        }
        Ok(())
    }

    /// Checks that the protocol fits `f`.
    pub fn validate(&self, f: &Relation) -> Result<()> {
        self.check_shape()?;
        if self.msg.len() != f.nx() || self.ans[0].len() != f.ny() {
            return Err(Error::ShapeMismatch(format!(
                "protocol is {}x{}, relation is {}x{}",
                self.msg.len(),
                self.ans[0].len(),
                f.nx(),
                f.ny()
            )));
        }
        if self.ans.iter().flatten().any(|&z| z >= f.nz()) {
            return Err(Error::InvalidProtocol(format!("answer outside [0, {})", f.nz())));
        }
        Ok(())
    }

    pub fn bits(&self) -> u32 {
        bits_for(self.t)
    }

    pub fn answer(&self, x: usize, y: usize) -> usize {
        self.ans[self.msg[x]][y]
    }

    pub fn errs(&self, f: &Relation, x: usize, y: usize) -> bool {
        !f.allowed(x, y, self.answer(x, y))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: DetProtocol = serde_json::from_str(text)?;
        p.check_shape()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedProtocol {
    pub weight: f64,
    pub protocol: DetProtocol,
}

/// A mixture of deterministic protocols selected by shared coins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicCoinProtocol {
    pub components: Vec<WeightedProtocol>,
}

impl PublicCoinProtocol {
    pub fn new(components: Vec<(f64, DetProtocol)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidProtocol("empty mixture".into()));
        }
        if let Some(i) = components.iter().position(|c| !(c.0 >= 0.0) || !c.0.is_finite()) {
            return Err(Error::InvalidEntry { index: i, value: components[i].0 });
        }
        let sum: f64 = components.iter().map(|c| c.0).sum();
        if (sum - 1.0).abs() > TOL_MASS {
            return Err(Error::NotNormalized { sum, tol: TOL_MASS });
        }
        Ok(PublicCoinProtocol {
            components: components.into_iter().map(|(weight, protocol)| WeightedProtocol { weight, protocol }).collect(),
        })
    }

    /// Probability over the coins that the protocol errs on `(x, y)`.
    pub fn error_at(&self, f: &Relation, x: usize, y: usize) -> f64 {
        self.components.iter().filter(|c| c.protocol.errs(f, x, y)).map(|c| c.weight).sum()
    }
}

impl From<DetProtocol> for PublicCoinProtocol {
    fn from(p: DetProtocol) -> Self {
        PublicCoinProtocol { components: vec![WeightedProtocol { weight: 1.0, protocol: p }] }
    }
}

fn check_shape(f: &Relation, mu: &JointDistribution) -> Result<()> {
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

/// Bob's best answers for a fixed partition, and the resulting error.
/// Ties go to the smallest `z`.
pub fn optimal_answers(msg: &[usize], t: usize, f: &Relation, mu: &JointDistribution) -> Result<(Vec<Vec<usize>>, f64)> {
    check_shape(f, mu)?;
    if msg.len() != f.nx() {
        return Err(Error::ShapeMismatch(format!("partition has {} entries, |X| = {}", msg.len(), f.nx())));
    }
    if let Some(x) = msg.iter().position(|&m| m >= t) {
        return Err(Error::InvalidProtocol(format!("msg[{x}] = {} >= t = {t}", msg[x])));
    }
    let (nx, ny, nz) = (f.nx(), f.ny(), f.nz());
    let mut ans = vec![vec![0; ny]; t];
    let mut captured = 0.0;
    let mut score = vec![0.0; nz];
    for (m, row) in ans.iter_mut().enumerate() {
        for (y, a) in row.iter_mut().enumerate() {
            score.iter_mut().for_each(|s| *s = 0.0);
            for x in (0..nx).filter(|&x| msg[x] == m) {
                let p = mu.p(x, y);
                for (z, &ok) in f.answers(x, y).iter().enumerate() {
                    if ok {
                        score[z] += p;
                    }
                }
            }
            let mut best = 0;
            for z in 1..nz {
                if score[z] > score[best] {
                    best = z;
                }
            }
            *a = best;
            captured += score[best];
        }
    }
    Ok((ans, (1.0 - captured).max(0.0)))
}

pub fn distributional_error(p: &DetProtocol, f: &Relation, mu: &JointDistribution) -> Result<f64> {
    p.validate(f)?;
    check_shape(f, mu)?;
    let mut e = 0.0;
    for x in 0..f.nx() {
        for y in 0..f.ny() {
            if p.errs(f, x, y) {
                e += mu.p(x, y);
            }
        }
    }
    Ok(e)
}

/// `max_{x,y}` of the mixture's error probability on `(x, y)`.
pub fn worst_case_error(p: &PublicCoinProtocol, f: &Relation) -> Result<f64> {
    for c in &p.components {
        c.protocol.validate(f)?;
    }
    let mut worst: f64 = 0.0;
    for x in 0..f.nx() {
        for y in 0..f.ny() {
            worst = worst.max(p.error_at(f, x, y));
        }
    }
    Ok(worst)
}

struct PartitionSearch {
    n: usize,
    ny: usize,
    nz: usize,
    t: usize,
    /// `μ(x, y)·[(x, y, z) ∈ f]`, laid out `[x][y][z]`.
    gain: Vec<f64>,
    row_mass: Vec<f64>,
    /// Captured-mass candidates per class, `[c][y][z]`.
    acc: Vec<f64>,
    /// `max_z acc[c][y][z]`.
    ymax: Vec<f64>,
    saved_acc: Vec<f64>,
    saved_ymax: Vec<f64>,
    assign: Vec<usize>,
    best: f64,
    best_assign: Option<Vec<usize>>,
}

impl PartitionSearch {
    fn new(f: &Relation, mu: &JointDistribution, t: usize, bound: f64) -> Self {
        let (n, ny, nz) = (f.nx(), f.ny(), f.nz());
        let t = t.min(n);
        let mut gain = vec![0.0; n * ny * nz];
        for x in 0..n {
            for y in 0..ny {
                let p = mu.p(x, y);
                for (z, &ok) in f.answers(x, y).iter().enumerate() {
                    if ok {
                        gain[(x * ny + y) * nz + z] = p;
                    }
                }
            }
        }
        PartitionSearch {
            n,
            ny,
            nz,
            t,
            gain,
            row_mass: mu.marginal_x().to_vec(),
            acc: vec![0.0; t * ny * nz],
            ymax: vec![0.0; t * ny],
            saved_acc: vec![0.0; n * ny * nz],
            saved_ymax: vec![0.0; n * ny],
            assign: vec![0; n],
            best: bound + TIE_TOL,
            best_assign: None,
        }
    }

    fn run(&mut self) {
        self.rec(0, 0, 0.0);
    }

    fn rec(&mut self, x: usize, used: usize, loss: f64) {
        if x == self.n {
            if loss < self.best - TIE_TOL {
                self.best = loss;
                self.best_assign = Some(self.assign.clone());
            }
            return;
        }
        let (ny, nz) = (self.ny, self.nz);
        let w = ny * nz;
        for c in 0..self.t.min(used + 1) {
            self.saved_acc[x * w..(x + 1) * w].copy_from_slice(&self.acc[c * w..(c + 1) * w]);
            self.saved_ymax[x * ny..(x + 1) * ny].copy_from_slice(&self.ymax[c * ny..(c + 1) * ny]);
            let mut gained = 0.0;
            for y in 0..ny {
                let mut m: f64 = 0.0;
                for z in 0..nz {
                    let a = &mut self.acc[c * w + y * nz + z];
                    *a += self.gain[x * w + y * nz + z];
                    m = m.max(*a);
                }
                gained += m - self.ymax[c * ny + y];
                self.ymax[c * ny + y] = m;
            }
            let next = loss + self.row_mass[x] - gained;
            if next < self.best - TIE_TOL {
                self.assign[x] = c;
                self.rec(x + 1, used.max(c + 1), next);
            }
            self.acc[c * w..(c + 1) * w].copy_from_slice(&self.saved_acc[x * w..(x + 1) * w]);
            self.ymax[c * ny..(c + 1) * ny].copy_from_slice(&self.saved_ymax[x * ny..(x + 1) * ny]);
        }
    }
}

fn check_cap(f: &Relation, cap: usize) -> Result<()> {
    if f.nx() > cap {
        return Err(Error::SearchCapExceeded { n: f.nx(), cap });
    }
    Ok(())
}

/// Least-error partition into at most `t` classes with error `≤ bound`, as a
/// protocol whose `t` is the number of classes used.
fn best_protocol(f: &Relation, mu: &JointDistribution, t: usize, bound: f64) -> Result<Option<(f64, DetProtocol)>> {
    let mut s = PartitionSearch::new(f, mu, t, bound);
    s.run();
    let Some(msg) = s.best_assign else {
        return Ok(None);
    };
    let used = msg.iter().max().map_or(1, |&m| m + 1);
    let (ans, error) = optimal_answers(&msg, used, f, mu)?;
    Ok(Some((error, DetProtocol { t: used, msg, ans })))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactD {
    pub t_min: usize,
    pub bits: u32,
    pub error: f64,
    pub protocol: DetProtocol,
}

/// Distributional one-way complexity: the least message count `t` whose
/// best protocol has error `≤ eps`.
pub fn exact_d(f: &Relation, mu: &JointDistribution, eps: f64) -> Result<ExactD> {
    exact_d_capped(f, mu, eps, DEFAULT_PARTITION_CAP)
}

pub fn exact_d_capped(f: &Relation, mu: &JointDistribution, eps: f64, cap: usize) -> Result<ExactD> {
    check_shape(f, mu)?;
    check_cap(f, cap)?;
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::EpsOutOfRange(eps));
    }
    for t in 1..=f.nx() {
        if let Some((error, protocol)) = best_protocol(f, mu, t, eps + EPS_SLACK)? {
            return Ok(ExactD { t_min: t, bits: bits_for(t), error, protocol });
        }
    }
    unreachable!("singleton classes have error 0 on a complete relation")
}

/// Best success probability with at most `t` messages.
pub fn max_success(f: &Relation, mu: &JointDistribution, t: usize) -> Result<(f64, DetProtocol)> {
    max_success_capped(f, mu, t, DEFAULT_PARTITION_CAP)
}

pub fn max_success_capped(f: &Relation, mu: &JointDistribution, t: usize, cap: usize) -> Result<(f64, DetProtocol)> {
    check_shape(f, mu)?;
    check_cap(f, cap)?;
    if t == 0 {
        return Err(Error::BadParams("t must be positive".into()));
    }
    let (error, p) = best_protocol(f, mu, t, 1.0)?.expect("every partition has error <= 1");
    Ok((1.0 - error, p))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdversaryResult {
    /// Round distribution achieving `value`.
    pub mu_star: JointDistribution,
    /// Max over rounds of the best `t`-message error.
    pub value: f64,
    pub round: usize,
    pub eta: f64,
    /// `value > eps`: no `t`-message protocol, even public-coin, has
    /// worst-case error `≤ eps`.
    pub certified: bool,
}

/// Multiplicative-weights adversary against the best `t`-message protocol.
///
/// The seed perturbs the initial weights by a factor in `[1, 1.01)`.
pub fn adversary_game(f: &Relation, t: usize, eps: f64, rounds: usize, seed: u64) -> Result<AdversaryResult> {
    check_cap(f, DEFAULT_PARTITION_CAP)?;
    if t == 0 || rounds == 0 {
        return Err(Error::BadParams("t and rounds must be positive".into()));
    }
    let (nx, ny) = (f.nx(), f.ny());
    let cells = (nx * ny) as f64;
    let eta = if cells > 1.0 { (8.0 * cells.ln() / rounds as f64).sqrt() } else { 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..nx * ny).map(|_| 1.0 + 0.01 * rng.random::<f64>()).collect();
    let mut best: Option<(f64, JointDistribution, usize)> = None;
    for round in 0..rounds {
        let mu = JointDistribution::from_weights(nx, ny, w.clone())?;
        let (success, p) = max_success(f, &mu, t)?;
        let value = 1.0 - success;
        if best.as_ref().is_none_or(|b| value > b.0 + TIE_TOL) {
            best = Some((value, mu, round));
        }
        for x in 0..nx {
            for y in 0..ny {
                if p.errs(f, x, y) {
                    w[x * ny + y] *= 1.0 + eta;
                }
            }
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
    }
    let (value, mu_star, round) = best.expect("rounds > 0");
    Ok(AdversaryResult { mu_star, value, round, eta, certified: value > eps + EPS_SLACK })
}

/// Anything Bob can run on `(x, y)` with shared coins.
pub trait Protocol {
    fn sample_answer<R: Rng + ?Sized>(&self, x: usize, y: usize, rng: &mut R) -> usize;
    fn validate_for(&self, f: &Relation) -> Result<()>;
}

impl Protocol for DetProtocol {
    fn sample_answer<R: Rng + ?Sized>(&self, x: usize, y: usize, _rng: &mut R) -> usize {
        self.answer(x, y)
    }

    fn validate_for(&self, f: &Relation) -> Result<()> {
        self.validate(f)
    }
}

impl Protocol for PublicCoinProtocol {
    fn sample_answer<R: Rng + ?Sized>(&self, x: usize, y: usize, rng: &mut R) -> usize {
        let mut u: f64 = rng.random();
        for c in &self.components {
            if u < c.weight {
                return c.protocol.answer(x, y);
            }
            u -= c.weight;
        }
        self.components.last().expect("nonempty").protocol.answer(x, y)
    }

    fn validate_for(&self, f: &Relation) -> Result<()> {
        self.components.iter().try_for_each(|c| c.protocol.validate(f))
    }
}

/// Empirical error over `n` i.i.d. draws from `μ`.
pub fn simulate<P: Protocol>(p: &P, f: &Relation, mu: &JointDistribution, n: usize, seed: u64) -> Result<f64> {
    p.validate_for(f)?;
    check_shape(f, mu)?;
    if n == 0 {
        return Err(Error::BadParams("need at least one sample".into()));
    }
    let cells = WeightedIndex::new(mu.table()).map_err(|e| Error::BadParams(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ny = f.ny();
    let mut wrong = 0usize;
    for _ in 0..n {
        let cell = cells.sample(&mut rng);
        let (x, y) = (cell / ny, cell % ny);
        if !f.allowed(x, y, p.sample_answer(x, y, &mut rng)) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / n as f64)
}
