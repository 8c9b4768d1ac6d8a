//! One-shot message compression by shared-randomness rejection sampling,
//! and the deterministic protocol it yields after fixing the coins.
//!
//! The public coins are a sequence of draws `(m_j, h_j, label_j)` with
//! `m_j` uniform over the `k` components, `h_j` uniform on `[0, 1)` and
//! `label_j` uniform over `b`-bit strings. Alice takes the first `j` with
//! `h_j < θ(m_j|x)`, which makes `m_{j*}` an exact sample of `θ(·|x)`, and
//! sends `label_{j*}` plus a flag bit raised only when her horizon runs out.
//! Bob keeps the candidates `C_y = {j : h_j < min(1, T·θ(m_j|y))}` with
//! `T = 2^c/δ` and decodes the first candidate carrying the received label.
//!
//! Decoding succeeds unless `j* ∉ C_y` (the ratio `θ(i|x)/θ(i|y)` exceeds
//! `T`) or an earlier candidate shares the label. Bob answers with the
//! decoded component's answer map, or with the best map for `μ` when he
//! finds nothing or sees the flag.

use std::collections::HashMap;
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bounds::err_of_table;
use crate::decomposition::{decompose, DecomposeOptions, Decomposition};
use crate::dist::JointDistribution;
use crate::protocols::DetProtocol;
use crate::relations::Relation;
use crate::{Error, Result};

pub const DEFAULT_HORIZON_FACTOR: f64 = 64.0;
pub const DEFAULT_HORIZON_CAP: usize = 1 << 18;
/// Extra label bits on top of `⌈c⌉ + ⌈log₂(1/δ)⌉`.
pub const LABEL_MARGIN_BITS: u32 = 3;

/// `⌈v⌉`, ignoring float noise just above an integer.
fn ceil_snapped(v: f64) -> f64 {
    (v - 1e-9).ceil()
}

#[derive(Debug, Clone, Serialize)]
pub struct CompressParams {
    pub horizon_factor: f64,
    pub horizon_cap: usize,
    /// Fixed horizon, overriding the factor.
    pub horizon: Option<usize>,
    /// Label width, overriding `⌈c⌉ + ⌈log₂(1/δ)⌉ + 3`.
    pub label_bits: Option<u32>,
}

impl Default for CompressParams {
    fn default() -> Self {
        CompressParams { horizon_factor: DEFAULT_HORIZON_FACTOR, horizon_cap: DEFAULT_HORIZON_CAP, horizon: None, label_bits: None }
    }
}

#[derive(Debug, Clone, Copy)]
struct Draw {
    m: usize,
    h: f64,
    label: u64,
}

/// Lazily materialized public coins.
struct Coins {
    rng: ChaCha8Rng,
    draws: Vec<Draw>,
    k: usize,
    mask: u64,
    horizon: usize,
}

impl Coins {
    fn new(rng: ChaCha8Rng, k: usize, bits: u32, horizon: usize) -> Self {
        let mask = if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 };
        Coins { rng, draws: Vec::new(), k, mask, horizon }
    }

    fn get(&mut self, j: usize) -> Draw {
        while self.draws.len() <= j {
            let m = self.rng.random_range(0..self.k);
            let h = self.rng.random::<f64>();
            let label = self.rng.random::<u64>() & self.mask;
            self.draws.push(Draw { m, h, label });
        }
        self.draws[j]
    }
}

/// Everything both parties precompute from a decomposition.
pub struct Scheme {
    k: usize,
    ny: usize,
    /// `θ(i|x)`, `[x][i]`.
    theta_x: Vec<f64>,
    /// `min(1, T·θ(i|y))`, `[y][i]`.
    accept_y: Vec<f64>,
    /// `θ(i|y)`, `[y][i]`.
    theta_y: Vec<f64>,
    answers: Vec<Vec<usize>>,
    fallback: Vec<usize>,
    pub label_bits: u32,
    pub horizon: usize,
    /// `log₂ T = c + log₂(1/δ)`.
    pub log_threshold: f64,
}

impl Scheme {
    pub fn new(dec: &Decomposition, f: &Relation, delta: f64, params: &CompressParams) -> Result<Self> {
        dec.check()?;
        let mu = &dec.base;
        if f.nx() != mu.nx() || f.ny() != mu.ny() {
            return Err(Error::ShapeMismatch("relation and decomposition base differ".into()));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::DeltaOutOfRange(delta));
        }
        let (nx, ny, k) = (mu.nx(), mu.ny(), dec.k());
        let px = mu.marginal_x();
        let py = mu.marginal_y();
        let mut theta_x = vec![0.0; nx * k];
        let mut theta_y = vec![0.0; ny * k];
        let mut answers = Vec::with_capacity(k);
        for (i, c) in dec.components.iter().enumerate() {
            let part = dec.component(i)?;
            for x in 0..nx {
                if px[x] > 0.0 {
                    theta_x[x * k + i] = c.p * c.alpha[x] / px[x];
                }
            }
            for y in 0..ny {
                if py[y] > 0.0 {
                    theta_y[y * k + i] = c.p * part.marginal_y()[y] / py[y];
                }
            }
            answers.push(err_of_table(f, part.table()).1);
        }
        let log_threshold = dec.c + (1.0 / delta).log2();
        let t = log_threshold.exp2();
        let accept_y = theta_y.iter().map(|&q| (t * q).min(1.0)).collect();
        let label_bits = params.label_bits.unwrap_or_else(|| {
            (ceil_snapped(dec.c) + ceil_snapped((1.0 / delta).log2())).max(0.0) as u32 + LABEL_MARGIN_BITS
        });
        if label_bits > 63 {
            return Err(Error::BadParams(format!("label width {label_bits} bits")));
        }
        let horizon = match params.horizon {
            Some(h) => h.max(1),
            None => {
                let min_theta = theta_x.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
                let h = (params.horizon_factor * k as f64 / min_theta).ceil();
                (h as usize).clamp(1, params.horizon_cap.max(1))
            }
        };
        Ok(Scheme {
            k,
            ny,
            theta_x,
            accept_y,
            theta_y,
            answers,
            fallback: err_of_table(f, mu.table()).1,
            label_bits,
            horizon,
            log_threshold,
        })
    }

    /// Wire width: label plus flag.
    pub fn bits(&self) -> u32 {
        self.label_bits + 1
    }

    pub fn theta_given_x(&self, x: usize) -> &[f64] {
        &self.theta_x[x * self.k..(x + 1) * self.k]
    }

    pub fn theta_given_y(&self, y: usize) -> &[f64] {
        &self.theta_y[y * self.k..(y + 1) * self.k]
    }

    fn alice(&self, coins: &mut Coins, x: usize) -> Option<usize> {
        let th = &self.theta_x[x * self.k..(x + 1) * self.k];
        (0..coins.horizon).find(|&j| {
            let d = coins.get(j);
            d.h < th[d.m]
        })
    }

    fn in_candidates(&self, d: Draw, y: usize) -> bool {
        d.h < self.accept_y[y * self.k + d.m]
    }

    fn bob(&self, coins: &mut Coins, y: usize, label: u64) -> Option<usize> {
        (0..coins.horizon).find(|&j| {
            let d = coins.get(j);
            self.in_candidates(d, y) && d.label == label
        })
    }

    fn answer(&self, decoded: Option<usize>, y: usize) -> usize {
        match decoded {
            Some(m) => self.answers[m][y],
            None => self.fallback[y],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub x: usize,
    pub y: usize,
    /// Alice's component, `None` when her horizon ran out.
    pub i_true: Option<usize>,
    /// 1-based position of Alice's draw among Bob's candidates, `0` if it
    /// is not a candidate.
    pub rank: usize,
    pub bits: u32,
    /// Bob's component, `None` when he fell back to the `μ` answer map.
    pub decoded: Option<usize>,
    pub success: bool,
    /// Horizon exhausted, Alice's draw outside Bob's candidates, or an
    /// earlier candidate with the same label.
    pub flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptSummary {
    pub trials: usize,
    pub error: f64,
    pub mean_bits: f64,
    pub max_bits: u32,
    pub flag_rate: f64,
    /// Trials with `log₂(θ(i|x)/θ(i|y)) > c + log₂(1/δ)` at Alice's `i`.
    pub tail_rate: f64,
    pub mismatch_rate: f64,
    pub horizon: usize,
    pub label_bits: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionTranscript {
    pub rows: Vec<TrialRecord>,
    pub summary: TranscriptSummary,
}

impl CompressionTranscript {
    pub const CSV_HEADER: &'static str = "x,y,i_true,rank,bits,decoded,success,flag";

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        let opt = |v: Option<usize>| v.map_or_else(|| "-1".to_string(), |v| v.to_string());
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.x,
                r.y,
                opt(r.i_true),
                r.rank,
                r.bits,
                opt(r.decoded),
                u8::from(r.success),
                u8::from(r.flag)
            )?;
        }
        Ok(())
    }
}

fn coins_for(seed: u64, stream: u64, scheme: &Scheme) -> Coins {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    Coins::new(rng, scheme.k, scheme.label_bits, scheme.horizon)
}

/// Runs `trials` independent executions on inputs drawn from the base
/// distribution, each with fresh public coins.
pub fn compress_run(dec: &Decomposition, f: &Relation, delta: f64, trials: usize, seed: u64, params: &CompressParams) -> Result<CompressionTranscript> {
    let scheme = Scheme::new(dec, f, delta, params)?;
    if trials == 0 {
        return Err(Error::BadParams("need at least one trial".into()));
    }
    let mu = &dec.base;
    let ny = mu.ny();
    let cells = WeightedIndex::new(mu.table()).map_err(|e| Error::BadParams(e.to_string()))?;
    let mut input_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(trials);
    let (mut wrong, mut flags, mut tails, mut mismatches) = (0usize, 0usize, 0usize, 0usize);
    for trial in 0..trials {
        let cell = cells.sample(&mut input_rng);
        let (x, y) = (cell / ny, cell % ny);
        let mut coins = coins_for(seed, trial as u64 + 1, &scheme);
        let j_star = scheme.alice(&mut coins, x);
        let (i_true, decoded, rank, flag) = match j_star {
            None => (None, None, 0, true),
            Some(js) => {
                let d = coins.get(js);
                let decoded_j = scheme.bob(&mut coins, y, d.label);
                let in_c = scheme.in_candidates(d, y);
                let rank = if in_c { (0..=js).filter(|&j| scheme.in_candidates(coins.get(j), y)).count() } else { 0 };
                let ratio = scheme.theta_x[x * scheme.k + d.m] / scheme.theta_y[y * scheme.k + d.m];
                if ratio.log2() > scheme.log_threshold + 1e-9 {
                    tails += 1;
                }
                let decoded = decoded_j.map(|j| coins.get(j).m);
                (Some(d.m), decoded, rank, !in_c || decoded_j != Some(js))
            }
        };
        let z = scheme.answer(decoded, y);
        let success = f.allowed(x, y, z);
        wrong += usize::from(!success);
        flags += usize::from(flag);
        mismatches += usize::from(i_true.is_none() || decoded != i_true);
        rows.push(TrialRecord { x, y, i_true, rank, bits: scheme.bits(), decoded, success, flag });
    }
    let n = trials as f64;
    Ok(CompressionTranscript {
        rows,
        summary: TranscriptSummary {
            trials,
            error: wrong as f64 / n,
            mean_bits: scheme.bits() as f64,
            max_bits: scheme.bits(),
            flag_rate: flags as f64 / n,
            tail_rate: tails as f64 / n,
            mismatch_rate: mismatches as f64 / n,
            horizon: scheme.horizon,
            label_bits: scheme.label_bits,
        },
    })
}

/// The coins fixed by one seed, as a deterministic protocol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedCoinProtocol {
    /// Classes are the distinct wire messages Alice actually sends.
    pub protocol: DetProtocol,
    /// Wire message per class: the label, or `None` for the flag.
    pub wire: Vec<Option<u64>>,
    pub seed: u64,
    pub horizon: usize,
    pub label_bits: u32,
    /// Wire width `label_bits + 1`.
    pub bits: u32,
    pub error: f64,
}

/// Exact distributional error of the protocol obtained by fixing the coins
/// drawn from `seed`.
pub fn fix_coins(scheme: &Scheme, dec: &Decomposition, f: &Relation, seed: u64) -> FixedCoinProtocol {
    let mu = &dec.base;
    let (nx, ny) = (mu.nx(), mu.ny());
    let mut coins = coins_for(seed, 0, scheme);
    let sent: Vec<Option<u64>> = (0..nx).map(|x| scheme.alice(&mut coins, x).map(|j| coins.get(j).label)).collect();
    let mut wire: Vec<Option<u64>> = Vec::new();
    let mut msg = Vec::with_capacity(nx);
    for s in &sent {
        let c = wire.iter().position(|w| w == s).unwrap_or_else(|| {
            wire.push(*s);
            wire.len() - 1
        });
        msg.push(c);
    }
    let mut decode_cache: HashMap<(u64, usize), Option<usize>> = HashMap::new();
    let ans: Vec<Vec<usize>> = wire
        .iter()
        .map(|w| {
            (0..ny)
                .map(|y| match *w {
                    None => scheme.answer(None, y),
                    Some(label) => {
                        let m = *decode_cache
                            .entry((label, y))
                            .or_insert_with(|| scheme.bob(&mut coins, y, label).map(|j| coins.get(j).m));
                        scheme.answer(m, y)
                    }
                })
                .collect()
        })
        .collect();
    let protocol = DetProtocol { t: wire.len(), msg, ans };
    let mut error = 0.0;
    for x in 0..nx {
        for y in 0..ny {
            if protocol.errs(f, x, y) {
                error += mu.p(x, y);
            }
        }
    }
    FixedCoinProtocol { protocol, wire, seed, horizon: scheme.horizon, label_bits: scheme.label_bits, bits: scheme.bits(), error }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub n_seeds: usize,
    pub seed: u64,
    pub params: CompressParams,
    pub decompose: DecomposeOptions,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { n_seeds: 32, seed: 0, params: CompressParams::default(), decompose: DecomposeOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuiltProtocol {
    pub best: FixedCoinProtocol,
    pub mean_error: f64,
    pub seed_errors: Vec<f64>,
    /// Budget of the decomposition used.
    pub c: f64,
    pub k: usize,
}

/// Best of `n_seeds` coin fixings of the compressed protocol for `dec`,
/// each evaluated exactly.
pub fn build_from_decomposition(dec: &Decomposition, f: &Relation, delta: f64, opts: &BuildOptions) -> Result<BuiltProtocol> {
    if opts.n_seeds == 0 {
        return Err(Error::BadParams("need at least one seed".into()));
    }
    let scheme = Scheme::new(dec, f, delta, &opts.params)?;
    let mut best: Option<FixedCoinProtocol> = None;
    let mut seed_errors = Vec::with_capacity(opts.n_seeds);
    for s in 0..opts.n_seeds as u64 {
        let p = fix_coins(&scheme, dec, f, opts.seed.wrapping_add(s));
        seed_errors.push(p.error);
        if best.as_ref().is_none_or(|b| p.error < b.error) {
            best = Some(p);
        }
    }
    let mean_error = seed_errors.iter().sum::<f64>() / seed_errors.len() as f64;
    Ok(BuiltProtocol { best: best.expect("n_seeds > 0"), mean_error, seed_errors, c: dec.c, k: dec.k() })
}

/// Decomposes `μ`, then fixes the coins; see [`build_from_decomposition`].
pub fn build_deterministic(f: &Relation, mu: &JointDistribution, eps: f64, delta: f64, opts: &BuildOptions) -> Result<(Decomposition, BuiltProtocol)> {
    let dec = decompose(f, mu, eps, delta, &opts.decompose)?;
    let built = build_from_decomposition(&dec, f, delta, opts)?;
    Ok((dec, built))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquareReport {
    pub x: usize,
    pub draws: usize,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Draws where the horizon ran out (excluded from the counts).
    pub exhausted: usize,
}

/// Goodness of fit of Alice's sampled component against `θ(·|x)` over
/// `draws` independent coin sequences.
pub fn sampler_chi_square(scheme: &Scheme, x: usize, draws: usize, seed: u64) -> ChiSquareReport {
    let k = scheme.k;
    let mut counts = vec![0usize; k];
    let mut exhausted = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..draws {
        let mut coins = Coins::new(ChaCha8Rng::seed_from_u64(rng.random()), k, scheme.label_bits, scheme.horizon);
        match scheme.alice(&mut coins, x) {
            Some(j) => counts[coins.get(j).m] += 1,
            None => exhausted += 1,
        }
    }
    let n = (draws - exhausted) as f64;
    let theta = scheme.theta_given_x(x);
    let mut statistic = 0.0;
    let mut cats = 0;
    for i in 0..k {
        if theta[i] > 0.0 {
            let e = n * theta[i];
            statistic += (counts[i] as f64 - e).powi(2) / e;
            cats += 1;
        } else if counts[i] > 0 {
            statistic = f64::INFINITY;
        }
    }
    let df = cats.max(1) - 1;
    let p_value = if df == 0 {
        if statistic.is_finite() { 1.0 } else { 0.0 }
    } else {
        1.0 - ChiSquared::new(df as f64).expect("df > 0").cdf(statistic)
    };
    ChiSquareReport { x, draws, statistic, df, p_value, exhausted }
}

impl Scheme {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ny(&self) -> usize {
        self.ny
    }
}
