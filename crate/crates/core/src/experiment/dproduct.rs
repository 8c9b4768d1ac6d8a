//! Exact best success on tensor powers under message budgets.

use serde::Serialize;

use super::{fmt_num, Table};
use crate::dist::JointDistribution;
use crate::protocols::{bits_for, max_success_capped, DEFAULT_PARTITION_CAP};
use crate::relations::{Relation, DEFAULT_TABLE_CAP};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct DproductConfig {
    pub f: Relation,
    pub mu: JointDistribution,
    pub k_max: usize,
    /// Per-copy budgets `t₁`; copy count `k` gets `t = t₁^k` messages.
    pub budgets: Vec<usize>,
    /// Rows with `|X|^k` above this are skipped.
    pub partition_cap: usize,
    pub table_cap: u128,
}

impl DproductConfig {
    pub fn new(f: Relation, mu: JointDistribution, k_max: usize, budgets: Vec<usize>) -> Self {
        DproductConfig { f, mu, k_max, budgets, partition_cap: DEFAULT_PARTITION_CAP, table_cap: DEFAULT_TABLE_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DproductRow {
    pub k: usize,
    pub t_per_copy: usize,
    pub t: usize,
    pub bits: u32,
    pub success: Option<f64>,
    /// `success^{1/k}`.
    pub per_copy: Option<f64>,
    /// `success(f, t₁)^k`, what independent copies achieve.
    pub single_power: Option<f64>,
    pub skipped: Option<String>,
}

impl DproductRow {
    pub const HEADER: [&'static str; 8] = ["k", "t_per_copy", "t", "bits", "success", "success_root_k", "single_power", "status"];

    pub fn cells(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or_else(String::new, fmt_num);
        vec![
            self.k.to_string(),
            self.t_per_copy.to_string(),
            self.t.to_string(),
            self.bits.to_string(),
            opt(self.success),
            opt(self.per_copy),
            opt(self.single_power),
            self.skipped.as_ref().map_or_else(|| "ok".to_string(), |why| format!("skipped: {why}")),
        ]
    }
}

pub fn rows_table(rows: &[DproductRow]) -> Table {
    let mut t = Table::new(&DproductRow::HEADER);
    rows.iter().for_each(|r| t.push(r.cells()));
    t
}

/// One row per `(k, t₁)` in `k`-major order. Rows beyond the caps are
/// marked skipped and the sweep continues.
pub fn dproduct_sweep(cfg: &DproductConfig) -> Result<Vec<DproductRow>> {
    if cfg.k_max == 0 || cfg.budgets.is_empty() || cfg.budgets.contains(&0) {
        return Err(Error::BadParams("need k_max >= 1 and positive budgets".into()));
    }
    if cfg.f.nx() != cfg.mu.nx() || cfg.f.ny() != cfg.mu.ny() {
        return Err(Error::ShapeMismatch("relation and distribution shapes differ".into()));
    }
    if cfg.f.nx() > cfg.partition_cap {
        return Err(Error::SearchCapExceeded { n: cfg.f.nx(), cap: cfg.partition_cap });
    }
    let mut single = Vec::with_capacity(cfg.budgets.len());
    let mut rows = Vec::new();
    for k in 1..=cfg.k_max {
        let n = (cfg.f.nx() as u128).checked_pow(k as u32);
        let power = match n {
            Some(n) if n <= cfg.partition_cap as u128 => cfg
                .f
                .tensor_power_capped(k, cfg.table_cap)
                .and_then(|f| Ok((f, cfg.mu.tensor_power(k, cfg.table_cap)?)))
                .map_err(|e| e.to_string()),
            _ => Err(Error::SearchCapExceeded { n: n.map_or(usize::MAX, |n| n.min(usize::MAX as u128) as usize), cap: cfg.partition_cap }.to_string()),
        };
        for (b, &t1) in cfg.budgets.iter().enumerate() {
            let t = (t1 as u128).checked_pow(k as u32).map_or(usize::MAX, |t| t.min(usize::MAX as u128) as usize);
            let single_power = single.get(b).map(|&s: &f64| s.powi(k as i32));
            let mut row = DproductRow { k, t_per_copy: t1, t, bits: bits_for(t), success: None, per_copy: None, single_power, skipped: None };
            let outcome = match &power {
                Ok((f, mu)) => max_success_capped(f, mu, t.min(f.nx()), cfg.partition_cap).map(|(s, _)| s),
                Err(why) => {
                    row.skipped = Some(why.clone());
                    rows.push(row);
                    continue;
                }
            };
            let s = outcome?;
            row.success = Some(s);
            row.per_copy = Some(s.powf(1.0 / k as f64));
            if k == 1 {
                single.push(s);
                row.single_power = Some(s);
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relations::Family;

    fn eq3() -> DproductConfig {
        let f = Family::Equality(3).build().unwrap();
        let mu = JointDistribution::uniform(3, 3);
        DproductConfig::new(f, mu, 3, vec![2])
    }

    #[test]
    fn equality_three_rows() {
        let rows = dproduct_sweep(&eq3()).unwrap();
        assert_eq!(rows.len(), 3);
        assert!((rows[0].success.unwrap() - 7.0 / 9.0).abs() < 1e-12);
        let s2 = rows[1].success.unwrap();
        assert_eq!(rows[1].t, 4);
        assert!(s2 >= (7.0f64 / 9.0).powi(2) - 1e-6 && s2 < 7.0 / 9.0);
        assert!(rows[2].skipped.is_some());
        assert_eq!(rows[2].cells()[7].split(':').next(), Some("skipped"));
    }

    #[test]
    fn full_budget_succeeds() {
        let mut cfg = eq3();
        cfg.budgets = vec![3];
        cfg.k_max = 2;
        for r in dproduct_sweep(&cfg).unwrap() {
            assert!((r.success.unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
