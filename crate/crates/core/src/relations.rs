//! Finite complete relations `f ⊆ X × Y × Z`.
//!
//! Tensor powers encode a tuple `(v_1, .., v_k)` over a base of size `n` as
//! the big-endian integer `v_1·n^{k-1} + .. + v_k`, so coordinate 1 is the
//! most significant digit. The same encoding is used by
//! [`crate::dist::JointDistribution::tensor_power`].

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default cap on `|X|·|Y|·|Z|` for dense tables.
pub const DEFAULT_TABLE_CAP: u128 = 1_000_000;

/// A complete relation stored as a dense boolean table indexed `(x, y, z)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    nx: usize,
    ny: usize,
    nz: usize,
    allowed: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct RelationFile {
    nx: usize,
    ny: usize,
    nz: usize,
    triples: Vec<[usize; 3]>,
}

impl Relation {
    /// Builds a relation from its allowed triples.
    pub fn from_triples(nx: usize, ny: usize, nz: usize, triples: &[(usize, usize, usize)]) -> Result<Self> {
        check_dims(nx, ny, nz)?;
        let mut allowed = vec![false; nx * ny * nz];
        for &(x, y, z) in triples {
            check_index("x", x, nx)?;
            check_index("y", y, ny)?;
            check_index("z", z, nz)?;
            allowed[(x * ny + y) * nz + z] = true;
        }
        Self::from_table(nx, ny, nz, allowed)
    }

    /// Builds a relation from a dense table; fails on the first uncovered pair.
    pub fn from_table(nx: usize, ny: usize, nz: usize, allowed: Vec<bool>) -> Result<Self> {
        check_dims(nx, ny, nz)?;
        if allowed.len() != nx * ny * nz {
            return Err(Error::ShapeMismatch(format!(
                "table has {} entries, expected {}",
                allowed.len(),
                nx * ny * nz
            )));
        }
        let rel = Relation { nx, ny, nz, allowed };
        for x in 0..nx {
            for y in 0..ny {
                if !rel.answers(x, y).iter().any(|&a| a) {
                    return Err(Error::IncompleteRelation { x, y });
                }
            }
        }
        Ok(rel)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    #[inline]
    pub fn allowed(&self, x: usize, y: usize, z: usize) -> bool {
        self.allowed[(x * self.ny + y) * self.nz + z]
    }

    /// The answer row for input `(x, y)`, indexed by `z`.
    #[inline]
    pub fn answers(&self, x: usize, y: usize) -> &[bool] {
        let start = (x * self.ny + y) * self.nz;
        &self.allowed[start..start + self.nz]
    }

    /// Smallest valid answer for `(x, y)`; exists by completeness.
    pub fn first_answer(&self, x: usize, y: usize) -> usize {
        self.answers(x, y).iter().position(|&a| a).expect("complete relation")
    }

    pub fn allowed_count(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    /// Allowed triples in lexicographic order.
    pub fn triples(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.allowed_count());
        for x in 0..self.nx {
            for y in 0..self.ny {
                for z in 0..self.nz {
                    if self.allowed(x, y, z) {
                        out.push((x, y, z));
                    }
                }
            }
        }
        out
    }

    /// Returns a copy with `(x, y, z)` added.
    pub fn with_triple(&self, x: usize, y: usize, z: usize) -> Result<Self> {
        check_index("x", x, self.nx)?;
        check_index("y", y, self.ny)?;
        check_index("z", z, self.nz)?;
        let mut out = self.clone();
        out.allowed[(x * self.ny + y) * self.nz + z] = true;
        Ok(out)
    }

    /// `k` independent copies of the relation, with the default size cap.
    pub fn tensor_power(&self, k: usize) -> Result<Self> {
        self.tensor_power_capped(k, DEFAULT_TABLE_CAP)
    }

    pub fn tensor_power_capped(&self, k: usize, cap: u128) -> Result<Self> {
        if k == 0 {
            return Err(Error::BadParams("tensor power needs k >= 1".into()));
        }
        let size = (self.nx as u128)
            .checked_pow(k as u32)
            .and_then(|a| a.checked_mul((self.ny as u128).checked_pow(k as u32)?))
            .and_then(|a| a.checked_mul((self.nz as u128).checked_pow(k as u32)?))
            .unwrap_or(u128::MAX);
        if size > cap {
            return Err(Error::SizeCapExceeded { size, cap });
        }
        let nx = self.nx.pow(k as u32);
        let ny = self.ny.pow(k as u32);
        let nz = self.nz.pow(k as u32);
        let mut allowed = vec![false; nx * ny * nz];
        let mut xs = vec![0; k];
        let mut ys = vec![0; k];
        let mut zs = vec![0; k];
        for x in 0..nx {
            decode_into(x, self.nx, &mut xs);
            for y in 0..ny {
                decode_into(y, self.ny, &mut ys);
                let base = (x * ny + y) * nz;
                for z in 0..nz {
                    decode_into(z, self.nz, &mut zs);
                    allowed[base + z] = (0..k).all(|i| self.allowed(xs[i], ys[i], zs[i]));
                }
            }
        }
        Ok(Relation { nx, ny, nz, allowed })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = RelationFile {
            nx: self.nx,
            ny: self.ny,
            nz: self.nz,
            triples: self.triples().into_iter().map(|(x, y, z)| [x, y, z]).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: RelationFile = serde_json::from_str(text)?;
        let triples: Vec<_> = file.triples.iter().map(|t| (t[0], t[1], t[2])).collect();
        Self::from_triples(file.nx, file.ny, file.nz, &triples)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_dims(nx: usize, ny: usize, nz: usize) -> Result<()> {
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::BadParams(format!("empty alphabet: nx={nx}, ny={ny}, nz={nz}")));
    }
    Ok(())
}

fn check_index(what: &'static str, index: usize, size: usize) -> Result<()> {
    if index >= size {
        return Err(Error::IndexOutOfRange { what, index, size });
    }
    Ok(())
}

/// Big-endian digits of `v` in base `n`; `out[0]` is coordinate 1.
pub fn decode_into(mut v: usize, n: usize, out: &mut [usize]) {
    for d in out.iter_mut().rev() {
        *d = v % n;
        v /= n;
    }
}

/// Inverse of [`decode_into`].
pub fn encode(digits: &[usize], n: usize) -> usize {
    digits.iter().fold(0, |acc, &d| acc * n + d)
}

/// Builtin relation families.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `X = Y = [n]`, `z = [x = y]`.
    Equality(usize),
    /// `X = Y = [n]`, `z = [x > y]`.
    GreaterThan(usize),
    /// `X = {0,1}^n` as `[2^n]`, `Y = [n]`, `z = x_y`; bit `y = 0` is the most
    /// significant of `x`.
    Index(usize),
    RandomComplete {
        nx: usize,
        ny: usize,
        nz: usize,
        seed: u64,
        density: f64,
    },
}

impl std::fmt::Display for Family {
    /// Inverse of [`Family::parse`].
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::Equality(n) => write!(f, "equality:{n}"),
            Family::GreaterThan(n) => write!(f, "greater-than:{n}"),
            Family::Index(n) => write!(f, "index:{n}"),
            Family::RandomComplete { nx, ny, nz, seed, density } => {
                write!(f, "random-complete:{nx},{ny},{nz},{seed},{density}")
            }
        }
    }
}

impl Family {
    /// Parses `name:params`, e.g. `equality:3`, `index:2`,
    /// `random-complete:4,4,3,7,0.3` (nx, ny, nz, seed, density) or
    /// `random-complete:3,7,0.3` (n, seed, density with `nz = 2`).
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, params) = spec.split_once(':').unwrap_or((spec, ""));
        let params: Vec<&str> = params.split(',').filter(|s| !s.is_empty()).collect();
        let uint = |s: &str| -> Result<usize> {
            s.trim().parse().map_err(|_| Error::BadParams(format!("expected integer, got {s:?}")))
        };
        let single = |params: &[&str]| -> Result<usize> {
            match params {
                [n] => uint(n),
                _ => Err(Error::BadParams(format!("{name} takes one parameter n"))),
            }
        };
        match name {
            "equality" => Ok(Family::Equality(single(&params)?)),
            "greater-than" => Ok(Family::GreaterThan(single(&params)?)),
            "index" => Ok(Family::Index(single(&params)?)),
            "random-complete" => {
                let float = |s: &str| -> Result<f64> {
                    s.trim().parse().map_err(|_| Error::BadParams(format!("expected number, got {s:?}")))
                };
                match params.as_slice() {
                    [n, seed, density] => Ok(Family::RandomComplete {
                        nx: uint(n)?,
                        ny: uint(n)?,
                        nz: 2,
                        seed: uint(seed)? as u64,
                        density: float(density)?,
                    }),
                    [nx, ny, nz, seed, density] => Ok(Family::RandomComplete {
                        nx: uint(nx)?,
                        ny: uint(ny)?,
                        nz: uint(nz)?,
                        seed: uint(seed)? as u64,
                        density: float(density)?,
                    }),
                    _ => Err(Error::BadParams(
                        "random-complete takes n,seed,density or nx,ny,nz,seed,density".into(),
                    )),
                }
            }
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }

    pub fn build(&self) -> Result<Relation> {
        match *self {
            Family::Equality(n) => {
                positive(n)?;
                Relation::from_fn(n, n, 2, |x, y, z| z == usize::from(x == y))
            }
            Family::GreaterThan(n) => {
                positive(n)?;
                Relation::from_fn(n, n, 2, |x, y, z| z == usize::from(x > y))
            }
            Family::Index(n) => {
                positive(n)?;
                if n > 16 {
                    return Err(Error::BadParams(format!("index({n}) too large")));
                }
                Relation::from_fn(1 << n, n, 2, |x, y, z| z == (x >> (n - 1 - y)) & 1)
            }
            Family::RandomComplete { nx, ny, nz, seed, density } => random_complete(nx, ny, nz, seed, density),
        }
    }
}

fn positive(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::BadParams("domain size must be >= 1".into()));
    }
    Ok(())
}

impl Relation {
    fn from_fn(nx: usize, ny: usize, nz: usize, pred: impl Fn(usize, usize, usize) -> bool) -> Result<Self> {
        let mut allowed = Vec::with_capacity(nx * ny * nz);
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    allowed.push(pred(x, y, z));
                }
            }
        }
        Self::from_table(nx, ny, nz, allowed)
    }
}

/// Each triple is allowed independently with probability `density`; pairs
/// left uncovered get `z = (x + y) mod nz`. Deterministic in `seed`.
pub fn random_complete(nx: usize, ny: usize, nz: usize, seed: u64, density: f64) -> Result<Relation> {
    check_dims(nx, ny, nz)?;
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::BadParams(format!("density {density} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut allowed: Vec<bool> = (0..nx * ny * nz).map(|_| rng.random::<f64>() < density).collect();
    for x in 0..nx {
        for y in 0..ny {
            let row = &mut allowed[(x * ny + y) * nz..(x * ny + y + 1) * nz];
            if !row.iter().any(|&a| a) {
                row[(x + y) % nz] = true;
            }
        }
    }
    Relation::from_table(nx, ny, nz, allowed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_builtins() -> Vec<Relation> {
        vec![
            Family::Equality(2).build().unwrap(),
            Family::Equality(3).build().unwrap(),
            Family::GreaterThan(3).build().unwrap(),
            Family::Index(2).build().unwrap(),
            random_complete(2, 3, 2, 7, 0.3).unwrap(),
        ]
    }

    #[test]
    fn trivial_and_full() {
        let t = Relation::from_triples(1, 1, 1, &[(0, 0, 0)]).unwrap();
        assert_eq!(t.allowed_count(), 1);
        let all: Vec<_> = (0..8).map(|i| (i >> 2, (i >> 1) & 1, i & 1)).collect();
        let full = Relation::from_triples(2, 2, 2, &all).unwrap();
        assert_eq!(full.allowed_count(), 8);
    }

    #[test]
    fn incomplete_reports_first_pair() {
        let err = Relation::from_triples(2, 2, 2, &[(0, 0, 0)]).unwrap_err();
        assert!(matches!(err, Error::IncompleteRelation { x: 0, y: 1 }));
    }

    #[test]
    fn out_of_range() {
        let err = Relation::from_triples(2, 2, 2, &[(0, 2, 0)]).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { what: "y", .. }));
    }

    #[test]
    fn equality_and_greater_than() {
        let eq = Family::Equality(2).build().unwrap();
        assert_eq!(eq.triples(), vec![(0, 0, 1), (0, 1, 0), (1, 0, 0), (1, 1, 1)]);
        let gt = Family::GreaterThan(2).build().unwrap();
        assert!(gt.allowed(1, 0, 1));
        assert!(gt.allowed(0, 0, 0));
        assert!(!gt.allowed(0, 1, 1));
    }

    #[test]
    fn index_is_big_endian() {
        let f = Family::Index(3).build().unwrap();
        assert_eq!((f.nx(), f.ny()), (8, 3));
        // x = 0b100: bit y=0 is set.
        assert!(f.allowed(4, 0, 1));
        assert!(f.allowed(4, 2, 0));
    }

    #[test]
    fn random_is_deterministic() {
        let a = random_complete(3, 3, 2, 7, 0.3).unwrap();
        let b = Family::parse("random-complete:3,7,0.3").unwrap().build().unwrap();
        assert_eq!(a, b);
        assert_ne!(a, random_complete(3, 3, 2, 8, 0.3).unwrap());
    }

    #[test]
    fn display_round_trips() {
        for s in ["equality:3", "greater-than:2", "index:2", "random-complete:3,4,2,7,0.25"] {
            assert_eq!(Family::parse(s).unwrap().to_string(), s);
        }
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(Family::parse("parity:3"), Err(Error::UnknownFamily(_))));
        assert!(matches!(Family::parse("equality:x"), Err(Error::BadParams(_))));
        assert!(matches!(Family::parse("equality:0").unwrap().build(), Err(Error::BadParams(_))));
    }

    #[test]
    fn tensor_power_basics() {
        let eq = Family::Equality(2).build().unwrap();
        assert_eq!(eq.tensor_power(1).unwrap(), eq);
        let eq2 = eq.tensor_power(2).unwrap();
        assert_eq!((eq2.nx(), eq2.ny(), eq2.nz()), (4, 4, 4));
        // x = (0,1), y = (0,1), z = (1,1)
        assert!(eq2.allowed(encode(&[0, 1], 2), encode(&[0, 1], 2), encode(&[1, 1], 2)));
        assert!(!eq2.allowed(encode(&[0, 1], 2), encode(&[0, 0], 2), encode(&[1, 1], 2)));
    }

    #[test]
    fn tensor_power_cap() {
        let eq = Family::Equality(4).build().unwrap();
        assert!(matches!(eq.tensor_power_capped(3, 1000), Err(Error::SizeCapExceeded { .. })));
    }

    #[test]
    fn tensor_power_counts_and_completeness() {
        for f in all_builtins() {
            for k in 1..=3 {
                if let Ok(fk) = f.tensor_power(k) {
                    // construction validated completeness
                    assert_eq!(fk.allowed_count(), f.allowed_count().pow(k as u32));
                }
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = random_complete(3, 4, 3, 11, 0.4).unwrap();
        let path = dir.path().join("f.json");
        f.save(&path).unwrap();
        assert_eq!(Relation::load(&path).unwrap(), f);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(r#"{"nx":3,"ny":4,"nz":3,"triples":[["#));
    }
}
