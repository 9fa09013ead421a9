use serde::{Deserialize, Serialize};

use super::EvalError;

/// Rows: in slice / rest. Columns: task-correct / task-incorrect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable2x2 {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    pub fn from_signed(entries: [i64; 4]) -> Result<Self, EvalError> {
        let mut out = [0u64; 4];
        for (o, e) in out.iter_mut().zip(entries) {
            *o = u64::try_from(e).map_err(|_| EvalError::NegativeEntry(e))?;
        }
        let [a, b, c, d] = out;
        Ok(Self::new(a, b, c, d))
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }
}

const REL_TOLERANCE: f64 = 1e-12;

/// ln(k!) for k in 0..=n, accumulated as a running sum of ln k.
fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(n + 1);
    let mut acc = 0.0f64;
    t.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        t.push(acc);
    }
    t
}

/// Two-sided exact test: with margins fixed, the p-value is the total
/// hypergeometric mass of tables no more probable than the observed one.
pub fn fisher_exact_two_sided(t: &ContingencyTable2x2) -> Result<f64, EvalError> {
    let n = t.total();
    if n == 0 {
        return Err(EvalError::EmptyTable);
    }
    let (r1, r2, c1) = (t.a + t.b, t.c + t.d, t.a + t.c);
    let lf = ln_factorials(n as usize);
    // The margin terms cancel in the ratio, so only the cell factorials
    // matter. Summing them sorted makes tables that are permutations of each
    // other (exact ties) produce bit-identical values.
    let weight = |x: u64| {
        let mut cells = [x, r1 - x, c1 - x, r2 - (c1 - x)].map(|k| lf[k as usize]);
        cells.sort_by(f64::total_cmp);
        -cells.iter().sum::<f64>()
    };
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let logs: Vec<f64> = (lo..=hi).map(weight).collect();
    let observed = weight(t.a);
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cutoff = observed + REL_TOLERANCE.ln_1p();
    let mut all = 0.0;
    let mut extreme = 0.0;
    for &l in &logs {
        let m = (l - peak).exp();
        all += m;
        if l <= cutoff {
            extreme += m;
        }
    }
    Ok((extreme / all).clamp(0.0, 1.0))
}
