//! Closed-form entanglement costs, simulated ledgers and crossover search.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::catalog::Theorem;
use crate::engine::{expected_epr_consumption, run_protocol, EprAccounting, RunOptions};
use crate::error::{Error, Result};
use crate::upb::{build_upb, cardinality, half_up, layers};

pub const COST_TOLERANCE: f64 = 1e-9;

pub fn cost_naive(d: usize) -> f64 {
    2.0 * (d as f64).log2()
}

pub fn cost_t4(d: usize) -> f64 {
    (d as f64).log2() + (half_up(d) as f64).log2()
}

/// `sum_m card(d - 2m) / card(d)` over the layers of `U_d`.
pub fn expected_epr(d: usize) -> f64 {
    let num: usize = (0..layers(d)).map(|m| cardinality(d - 2 * m)).sum();
    num as f64 / cardinality(d) as f64
}

pub fn cost_t5(d: usize) -> f64 {
    (d as f64).log2() + expected_epr(d)
}

pub fn cost_t6(d: usize) -> f64 {
    2.0 * (half_up(d) as f64).log2()
}

/// Ebits of the fixed-dimension protocols; `None` where no ebit count applies.
pub fn closed_form(theorem: Theorem, d: usize) -> Option<f64> {
    match theorem {
        Theorem::T1 => Some(1.0 + 3f64.log2()),
        Theorem::T2 => Some(2.0),
        Theorem::T3 => None,
        Theorem::T4 => Some(cost_t4(d)),
        Theorem::T5 => Some(cost_t5(d)),
        Theorem::T6 => Some(cost_t6(d)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Parity {
    Even,
    Odd,
    Both,
}

impl Parity {
    pub fn admits(self, d: usize) -> bool {
        match self {
            Parity::Even => d.is_multiple_of(2),
            Parity::Odd => d % 2 == 1,
            Parity::Both => true,
        }
    }
}

impl FromStr for Parity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "even" => Ok(Parity::Even),
            "odd" => Ok(Parity::Odd),
            "both" => Ok(Parity::Both),
            _ => Err(Error::InvalidParameter(format!("unknown parity `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepConfig {
    pub d_min: usize,
    pub d_max: usize,
    pub parity: Parity,
    pub theorems: Vec<Theorem>,
    /// Largest `d` for which the protocol is also simulated.
    pub cutoff: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRow {
    pub d: usize,
    pub theorem: Theorem,
    pub closed_form: Option<f64>,
    pub simulated: Option<f64>,
    pub descriptor: String,
}

pub fn grid(d_min: usize, d_max: usize, parity: Parity) -> Vec<usize> {
    (d_min..=d_max).filter(|&d| parity.admits(d)).collect()
}

/// Expected ebits from a simulated run. The stopper is charged its most
/// expensive branch, which is the convention behind `e(d)`.
pub fn simulated_cost(theorem: Theorem, d: usize) -> Result<Option<f64>> {
    let upb = build_upb(d)?;
    let report = run_protocol(&theorem.build(d)?, &upb, RunOptions::default())?;
    if theorem == Theorem::T3 {
        return Ok(None);
    }
    let weighted = expected_epr_consumption(&report, EprAccounting::BranchWeighted);
    let worst = expected_epr_consumption(&report, EprAccounting::StopperWorstCase);
    Ok(Some(report.ledger.expected_ebits - weighted + worst))
}

pub fn sweep(cfg: &SweepConfig) -> Result<Vec<CostRow>> {
    if cfg.d_min < 3 || cfg.d_min > cfg.d_max {
        return Err(Error::InvalidParameter(format!(
            "need 3 <= d-min <= d-max, got [{}, {}]",
            cfg.d_min, cfg.d_max
        )));
    }
    let mut theorems = cfg.theorems.clone();
    theorems.sort();
    theorems.dedup();
    let mut rows = Vec::new();
    for d in grid(cfg.d_min, cfg.d_max, cfg.parity) {
        for &t in &theorems {
            if !t.supports(d) {
                continue;
            }
            let simulated = if d <= cfg.cutoff {
                simulated_cost(t, d)?
            } else {
                None
            };
            rows.push(CostRow {
                d,
                theorem: t,
                closed_form: closed_form(t, d),
                simulated,
                descriptor: t.resource_descriptor(d),
            });
        }
    }
    Ok(rows)
}

fn sign(x: f64) -> i8 {
    if x.abs() <= COST_TOLERANCE {
        0
    } else if x > 0.0 {
        1
    } else {
        -1
    }
}

/// Grid points where `sign(cost_a - cost_b)` differs from the previous point.
pub fn crossover(a: Theorem, b: Theorem, ds: &[usize]) -> Vec<usize> {
    let signs: Vec<(usize, i8)> = ds
        .iter()
        .filter_map(|&d| Some((d, sign(closed_form(a, d)? - closed_form(b, d)?))))
        .collect();
    signs
        .windows(2)
        .filter(|w| w[0].1 != w[1].1)
        .map(|w| w[1].0)
        .collect()
}

/// Human-readable relation segments, e.g. `T5<T4 for d in [6,24]`.
pub fn crossover_summary(a: Theorem, b: Theorem, ds: &[usize]) -> Vec<String> {
    let signs: Vec<(usize, i8)> = ds
        .iter()
        .filter_map(|&d| Some((d, sign(closed_form(a, d)? - closed_form(b, d)?))))
        .collect();
    let Some(&(last_d, _)) = signs.last() else {
        return vec![];
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < signs.len() {
        let s = signs[i].1;
        let mut j = i;
        while j + 1 < signs.len() && signs[j + 1].1 == s {
            j += 1;
        }
        let (lo, hi) = (signs[i].0, signs[j].0);
        let rel = match s {
            0 => format!("{a}={b}"),
            1 => format!("{b}<{a}"),
            _ => format!("{a}<{b}"),
        };
        let span = if lo == hi {
            format!("at d={lo}")
        } else if hi == last_d && i > 0 {
            format!("for d>={lo}")
        } else {
            format!("for d in [{lo},{hi}]")
        };
        out.push(format!("{rel} {span}"));
        i = j + 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct T5Check {
    pub d: usize,
    pub closed_form: f64,
    pub branch_weighted: f64,
    pub stopper_worst_case: f64,
    pub distinct_pairs: usize,
    pub expected_pairs: usize,
}

impl T5Check {
    pub fn pass(&self) -> bool {
        (self.stopper_worst_case - self.closed_form).abs() < COST_TOLERANCE
            && self.distinct_pairs == self.expected_pairs
    }
}

pub fn validate_t5_expectation(d: usize) -> Result<T5Check> {
    let upb = build_upb(d)?;
    let protocol = Theorem::T5.build(d)?;
    let report = run_protocol(&protocol, &upb, RunOptions::default())?;
    let distinct_pairs = protocol
        .attached_resources()
        .values()
        .filter(|r| r.dim == 2 && r.registers.len() == 2)
        .count();
    Ok(T5Check {
        d,
        closed_form: expected_epr(d),
        branch_weighted: expected_epr_consumption(&report, EprAccounting::BranchWeighted),
        stopper_worst_case: expected_epr_consumption(&report, EprAccounting::StopperWorstCase),
        distinct_pairs,
        expected_pairs: layers(d),
    })
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.12}")).unwrap_or_default()
}

/// CSV with crossover comment lines for every ordered pair of the T4..T6 curves present.
pub fn to_csv(rows: &[CostRow]) -> String {
    let mut s = String::from("d,theorem,ebits_closed_form,ebits_simulated,resource_descriptor\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},\"{}\"",
            r.d,
            r.theorem,
            cell(r.closed_form),
            cell(r.simulated),
            r.descriptor.replace('"', "\"\"")
        );
    }
    let present: Vec<Theorem> = [Theorem::T4, Theorem::T5, Theorem::T6]
        .into_iter()
        .filter(|t| rows.iter().any(|r| r.theorem == *t))
        .collect();
    let mut ds: Vec<usize> = rows.iter().map(|r| r.d).collect();
    ds.dedup();
    for (i, &a) in present.iter().enumerate() {
        for &b in &present[i + 1..] {
            for line in crossover_summary(a, b, &ds) {
                let _ = writeln!(s, "# {line}");
            }
        }
    }
    s
}

/// gnuplot script plotting the closed-form columns of `csv_name`.
pub fn plot_script(csv_name: &str, rows: &[CostRow]) -> String {
    let mut theorems: Vec<Theorem> = rows.iter().map(|r| r.theorem).collect();
    theorems.sort();
    theorems.dedup();
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key left top");
    let _ = writeln!(s, "set xlabel 'd'");
    let _ = writeln!(s, "set ylabel 'ebits'");
    let plots: Vec<String> = theorems
        .iter()
        .map(|t| {
            format!(
                "'{csv_name}' using 1:(strcol(2) eq '{t}' ? $3 : NaN) with linespoints title '{t}'"
            )
        })
        .collect();
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}
