//! Reference implementations used to check the library. They are written
//! for obviousness, not speed, and share no code with the crate.

#![allow(dead_code)]

use std::collections::BTreeSet;

use num::bigint::BigUint;
use num::rational::BigRational;
use num::{BigInt, One, ToPrimitive, Zero};

fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= BigUint::from(n - i);
        acc /= BigUint::from(i + 1);
    }
    acc
}

/// Two-sided Fisher p-value by exact enumeration of every table with the
/// observed margins. Hypergeometric weights share the denominator C(n, c1),
/// so comparing and summing the integer numerators is exact.
pub fn fisher_oracle(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let (r1, r2, c1) = (a + b, c + d, a + c);
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let weights: Vec<(u64, BigUint)> =
        (lo..=hi).map(|x| (x, binomial(r1, x) * binomial(r2, c1 - x))).collect();
    let observed = weights.iter().find(|(x, _)| *x == a).expect("observed table").1.clone();
    let mut total = BigUint::zero();
    let mut extreme = BigUint::zero();
    for (_, w) in &weights {
        total += w;
        if *w <= observed {
            extreme += w;
        }
    }
    BigRational::new(BigInt::from(extreme), BigInt::from(total)).to_f64().expect("finite ratio")
}

pub struct PrfOracle {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn exact_ratio(n: u64, d: u64) -> f64 {
    if d == 0 {
        return 0.0;
    }
    BigRational::new(BigInt::from(n), BigInt::from(d)).to_f64().expect("finite")
}

/// Precision/recall/F1 from set algebra, with ratios rounded once from
/// exact rationals.
pub fn prf_oracle(predicted: &BTreeSet<String>, gold: &BTreeSet<String>) -> PrfOracle {
    let tp = predicted.intersection(gold).count() as u64;
    let fp = predicted.difference(gold).count() as u64;
    let fn_ = gold.difference(predicted).count() as u64;
    // F1 = 2PR/(P+R) = 2tp/(2tp+fp+fn) as exact rationals
    PrfOracle {
        tp,
        fp,
        fn_,
        precision: exact_ratio(tp, tp + fp),
        recall: exact_ratio(tp, tp + fn_),
        f1: exact_ratio(2 * tp, 2 * tp + fp + fn_),
    }
}

/// Case-insensitive substring rule used by scripted mock backends.
pub fn keyword_oracle(text: &str, keywords: &[&str]) -> bool {
    let lower = text.to_lowercase();
    keywords.iter().any(|k| lower.contains(&k.to_lowercase()))
}

pub mod fixtures;
