//! Reference tables and figure series.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;

use crate::belief::{
    action_prob, evaluate_history, fmt_full, Action, BeliefState, History, Weighting,
};
use crate::cascade::{fmt_grid, hazard_series, sweep_time_to_cascade, SweepResult};
use crate::error::{Error, Result};
use crate::signal::{QualitySpec, SignalStructure};

/// Column values of `q̄` in the contrary-action table.
pub const TABLE1_Q_HI: [f64; 4] = [0.55, 0.66, 0.77, 1.0];
/// Lengths of the all-zero histories in the contrary-action table.
pub const TABLE1_LENGTHS: [usize; 4] = [1, 2, 4, 8];

/// Printed decimals per cell, `[row][column] = (prob, mu)`.
const TABLE1_DECIMALS: [[(usize, usize); 4]; 4] = [
    [(2, 3), (2, 2), (2, 3), (2, 2)],
    [(3, 4), (3, 3), (3, 3), (3, 3)],
    [(3, 3), (4, 3), (2, 3), (1, 1)],
    [(4, 3), (4, 3), (3, 3), (4, 4)],
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Cell {
    pub history: String,
    pub q_hi: f64,
    /// `Pr(next action = 1 | h)`.
    pub prob: f64,
    /// Public belief after `h`.
    pub mu: f64,
    pub prob_rounded: String,
    pub mu_rounded: String,
}

/// Contrary-action probabilities and beliefs after runs of zeros in
/// `Uniform[1/2, q̄]`, starting from belief 1/2.
pub fn table1(weighting: Weighting) -> Vec<Table1Cell> {
    let mut cells = Vec::with_capacity(16);
    for (r, &len) in TABLE1_LENGTHS.iter().enumerate() {
        let actions = vec![Action::Zero; len];
        let label: String = "0".repeat(len);
        for (c, &q_hi) in TABLE1_Q_HI.iter().enumerate() {
            let s = SignalStructure::build(&QualitySpec::uniform(0.5, q_hi))
                .expect("static table spec");
            let t = evaluate_history(&s, &History::new(actions.clone(), BeliefState::neutral()));
            let b = t.final_belief();
            let prob = action_prob(&s, b, weighting);
            let mu = b.mu();
            let (dp, dm) = TABLE1_DECIMALS[r][c];
            cells.push(Table1Cell {
                history: label.clone(),
                q_hi,
                prob,
                mu,
                prob_rounded: round_half_even(prob, dp),
                mu_rounded: round_half_even(mu, dm),
            });
        }
    }
    cells
}

pub fn table1_csv(cells: &[Table1Cell]) -> String {
    let mut out = String::from("history,q_hi,prob,mu,prob_full,mu_full\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.history,
            fmt_grid(c.q_hi),
            c.prob_rounded,
            c.mu_rounded,
            fmt_full(c.prob),
            fmt_full(c.mu)
        ));
    }
    out
}

/// Rounds to `decimals` places, ties to even on the decimal expansion of `v`.
pub fn round_half_even(v: f64, decimals: usize) -> String {
    // Rust's float formatting is exact and breaks ties to even.
    format!("{v:.decimals$}")
}

/// Time to an up-cascade over the `q̲` grid at fixed `q̄`.
pub fn figure1(q_hi: f64, q_lo_grid: &[f64], cap: usize) -> Result<SweepResult> {
    sweep_time_to_cascade(q_hi, q_lo_grid, cap)
}

/// `x,H` rows for `Uniform[q_lo, q_hi]`; undefined points print as `nan`.
pub fn hazard_csv(q_lo: f64, q_hi: f64, xs: &[f64]) -> Result<String> {
    let s = SignalStructure::build(&QualitySpec::uniform(q_lo, q_hi))?;
    let mut out = String::from("x,hazard\n");
    for (x, h) in hazard_series(&s, xs) {
        let h = h.map_or_else(|| "nan".to_string(), fmt_full);
        out.push_str(&format!("{},{}\n", fmt_grid(x), h));
    }
    Ok(out)
}

/// One agent of the exact uniform-quality chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactStep {
    pub mu: BigRational,
    pub threshold: BigRational,
}

impl ExactStep {
    pub fn mu_f64(&self) -> f64 {
        self.mu.to_f64().unwrap_or(f64::NAN)
    }

    pub fn threshold_f64(&self) -> f64 {
        self.threshold.to_f64().unwrap_or(f64::NAN)
    }
}

/// Exact belief chain for `Uniform[1/2, q̄]` with rational `q̄`.
///
/// The returned vector has one entry per agent: the belief it faces and its
/// threshold `x̃ = 1 - mu`, so `history.len() + 1` entries. Once the belief
/// leaves `(1 - q̄, q̄)` the chain is in a cascade and stays put.
pub fn exact_uniform_chain(q_hi: &BigRational, history: &[Action]) -> Result<Vec<ExactStep>> {
    let one = BigRational::one();
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    if *q_hi <= half || *q_hi > one {
        return Err(Error::InvalidArgument("q_hi must lie in (1/2, 1]".into()));
    }
    let lo = &one - q_hi;
    let width = q_hi - &lo;
    let mut mu = half;
    let mut steps = Vec::with_capacity(history.len() + 1);
    for &a in history {
        let x = (&one - &mu).clamp(lo.clone(), q_hi.clone());
        steps.push(ExactStep {
            mu: mu.clone(),
            threshold: x.clone(),
        });
        if mu >= *q_hi || mu <= lo {
            continue;
        }
        // Pr(a = 1 | state) = mass of types above x.
        let tail1 = (q_hi * q_hi - &x * &x) / &width;
        let tail0 = ((&one - &x) * (&one - &x) - &lo * &lo) / &width;
        let (l1, l0) = match a {
            Action::One => (tail1, tail0),
            Action::Zero => (&one - tail1, &one - tail0),
        };
        let num = &mu * l1;
        let den = &num + (&one - &mu) * l0;
        if den.is_zero() {
            return Err(Error::Domain {
                what: "zero-probability action",
                x: mu.to_f64().unwrap_or(f64::NAN),
            });
        }
        mu = num / den;
    }
    let x = (&one - &mu).clamp(lo, q_hi.clone());
    steps.push(ExactStep { mu, threshold: x });
    Ok(steps)
}

/// The chain `1/2 -> 7/12 -> 91/146` for `q̄ = 2/3` after two 1-actions.
pub fn worked_example() -> Vec<ExactStep> {
    let q = BigRational::new(BigInt::from(2), BigInt::from(3));
    exact_uniform_chain(&q, &[Action::One, Action::One]).expect("static example")
}

pub fn worked_example_text(steps: &[ExactStep]) -> String {
    let mut out = String::from("agent,mu,mu_decimal,threshold,threshold_decimal\n");
    for (i, s) in steps.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            i + 1,
            s.mu,
            fmt_full(s.mu_f64()),
            s.threshold,
            fmt_full(s.threshold_f64())
        ));
    }
    out
}
