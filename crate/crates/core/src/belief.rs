//! Public-belief dynamics.
//!
//! Beliefs are carried as log-odds `ln(mu / (1 - mu))`. An agent with type
//! `x` takes action 1 iff `g1(x)/g0(x) > (1 - mu)/mu`; with monotone
//! likelihood ratios this is a cutoff rule `x > x̃(mu)`. Observers update
//! the odds by `Pr(a | state 1) / Pr(a | state 0)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::{in_cascade_region, Region};
use crate::error::{Error, Result};
use crate::signal::{SignalStructure, State, TIE_TOL};

/// Log-odds magnitude at which beliefs are clamped.
pub const MAX_LOG_ODDS: f64 = 50.0;

/// A single-step entry into a cascade region from a continuous edge that
/// overshoots the boundary by less than this (in log-odds) is rounding
/// noise: the update factor tends to 1 as the threshold reaches the edge.
const EDGE_PIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Zero,
    One,
}

impl Action {
    pub fn from_bit(b: u8) -> Option<Self> {
        match b {
            0 => Some(Action::Zero),
            1 => Some(Action::One),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Action::Zero => 0,
            Action::One => 1,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Action::Zero => '0',
            Action::One => '1',
        }
    }
}

/// Public belief that the state is 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    log_odds: f64,
}

impl BeliefState {
    pub fn neutral() -> Self {
        BeliefState { log_odds: 0.0 }
    }

    pub fn from_mu(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "belief {mu} outside (0, 1)"
            )));
        }
        Ok(Self::from_log_odds(mu.ln() - (-mu).ln_1p()))
    }

    /// Clamps to `±MAX_LOG_ODDS`.
    pub fn from_log_odds(l: f64) -> Self {
        BeliefState {
            log_odds: l.clamp(-MAX_LOG_ODDS, MAX_LOG_ODDS),
        }
    }

    pub fn log_odds(&self) -> f64 {
        self.log_odds
    }

    pub fn mu(&self) -> f64 {
        let l = self.log_odds;
        if l >= 0.0 {
            1.0 / (1.0 + (-l).exp())
        } else {
            let e = l.exp();
            e / (1.0 + e)
        }
    }

    pub fn is_clamped(&self) -> bool {
        self.log_odds.abs() >= MAX_LOG_ODDS
    }
}

/// Finite action history with the belief it starts from.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub actions: Vec<Action>,
    pub origin: BeliefState,
}

impl History {
    pub fn new(actions: Vec<Action>, origin: BeliefState) -> Self {
        History { actions, origin }
    }

    /// Parses a `'0'`/`'1'` string starting from belief 1/2.
    pub fn parse(s: &str) -> Result<Self> {
        Ok(History::new(parse_actions(s)?, BeliefState::neutral()))
    }
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.actions {
            write!(f, "{}", a.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for History {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        History::parse(s)
    }
}

pub fn parse_actions(s: &str) -> Result<Vec<Action>> {
    s.trim()
        .chars()
        .enumerate()
        .map(|(i, c)| match c {
            '0' => Ok(Action::Zero),
            '1' => Ok(Action::One),
            _ => Err(Error::Parse(format!(
                "history character {i} is {c:?}, expected '0' or '1'"
            ))),
        })
        .collect()
}

pub fn format_actions(actions: &[Action]) -> String {
    actions.iter().map(|a| a.as_char()).collect()
}

/// Result of one Bayesian update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Update {
    pub belief: BeliefState,
    /// Cascade region of the belief before the action; updates inside a
    /// region are the identity.
    pub region: Region,
    /// The action had probability zero in both states.
    pub degenerate: bool,
    pub clamped: bool,
}

/// Belief path induced by a history.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub actions: Vec<Action>,
    /// `beliefs[0]` is the origin; `beliefs[k + 1]` follows `actions[k]`.
    pub beliefs: Vec<BeliefState>,
    /// Threshold faced by the agent taking `actions[k]`.
    pub thresholds: Vec<f64>,
    /// Region of each belief.
    pub cascade_flags: Vec<Region>,
    pub clamped: bool,
}

impl Trajectory {
    pub fn final_belief(&self) -> BeliefState {
        *self.beliefs.last().expect("trajectory holds the origin")
    }

    /// CSV with header `step,action,mu,threshold,cascade_flag`. Step 0 is the
    /// origin; row `k` reports the action of agent `k`, the belief after it
    /// and the threshold that agent faced.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,action,mu,threshold,cascade_flag\n");
        out.push_str(&format!(
            "0,,{},,{}\n",
            fmt_full(self.beliefs[0].mu()),
            self.cascade_flags[0]
        ));
        for (k, a) in self.actions.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                k + 1,
                a.bit(),
                fmt_full(self.beliefs[k + 1].mu()),
                fmt_full(self.thresholds[k]),
                self.cascade_flags[k + 1]
            ));
        }
        out
    }
}

/// 12 significant digits.
pub fn fmt_full(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = 12i32 - 1 - v.abs().log10().floor() as i32;
    let s = format!("{:.*}", digits.max(0) as usize, v);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// How `Pr(next action = 1)` weights the two states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Weighting {
    /// By the current public belief.
    Posterior,
    /// By a fixed state probability.
    Fixed(f64),
}

/// `x̃(mu) = sup { x : g1(x)/g0(x) <= (1 - mu)/mu }`, clamped to the support.
pub fn threshold(s: &SignalStructure, belief: BeliefState) -> f64 {
    match in_cascade_region(s, belief) {
        Region::Up => s.x_lo(),
        Region::Down => s.x_hi(),
        Region::None => s
            .sup_lr_at_most(-belief.log_odds())
            .unwrap_or(s.x_lo())
            .clamp(s.x_lo(), s.x_hi()),
    }
}

/// `Pr(action | state)` at the given public belief. Types at the threshold
/// take action 0.
pub fn action_likelihood(
    s: &SignalStructure,
    belief: BeliefState,
    action: Action,
    state: State,
) -> f64 {
    let cascade = match in_cascade_region(s, belief) {
        Region::Up => Action::One,
        Region::Down => Action::Zero,
        Region::None => {
            let x = threshold(s, belief);
            return match action {
                Action::One => s.tail(state, x),
                Action::Zero => s.cdf(state, x),
            };
        }
    };
    if action == cascade {
        1.0
    } else {
        0.0
    }
}

/// `Pr(next action = 1)` under the given state weighting.
pub fn action_prob(s: &SignalStructure, belief: BeliefState, weighting: Weighting) -> f64 {
    let w = match weighting {
        Weighting::Posterior => belief.mu(),
        Weighting::Fixed(w) => w,
    };
    let p1 = action_likelihood(s, belief, Action::One, State::One);
    let p0 = action_likelihood(s, belief, Action::One, State::Zero);
    w * p1 + (1.0 - w) * p0
}

/// Bayesian update of the public belief after observing `action`.
pub fn update_after_action(s: &SignalStructure, belief: BeliefState, action: Action) -> Update {
    let region = in_cascade_region(s, belief);
    if region != Region::None {
        return Update {
            belief,
            region,
            degenerate: false,
            clamped: false,
        };
    }
    let p1 = action_likelihood(s, belief, action, State::One);
    let p0 = action_likelihood(s, belief, action, State::Zero);
    if p1 <= 0.0 && p0 <= 0.0 {
        return Update {
            belief,
            region: match action {
                Action::One => Region::Down,
                Action::Zero => Region::Up,
            },
            degenerate: true,
            clamped: false,
        };
    }
    let raw = belief.log_odds() + (p1.ln() - p0.ln());
    let next = pin_to_edges(s, raw);
    let clamped = next.is_nan() || next.abs() >= MAX_LOG_ODDS;
    Update {
        belief: BeliefState::from_log_odds(next),
        region,
        degenerate: false,
        clamped,
    }
}

fn pin_to_edges(s: &SignalStructure, l: f64) -> f64 {
    let lo = s.lr_lower_edge().ln();
    if lo.is_finite() && !s.has_atom_at(s.x_lo()) {
        let excess = lo + l;
        if (-TIE_TOL..EDGE_PIN).contains(&excess) {
            return -lo - EDGE_PIN;
        }
    }
    let hi = s.lr_upper_edge().ln();
    if hi.is_finite() && !s.has_atom_at(s.x_hi()) {
        let excess = -(hi + l);
        if (-TIE_TOL..EDGE_PIN).contains(&excess) {
            return -hi + EDGE_PIN;
        }
    }
    l
}

/// Folds [`update_after_action`] over a history.
pub fn evaluate_history(s: &SignalStructure, history: &History) -> Trajectory {
    let mut belief = history.origin;
    let mut beliefs = vec![belief];
    let mut thresholds = Vec::with_capacity(history.actions.len());
    let mut flags = vec![in_cascade_region(s, belief)];
    let mut clamped = belief.is_clamped();
    for &a in &history.actions {
        thresholds.push(threshold(s, belief));
        let u = update_after_action(s, belief, a);
        clamped |= u.clamped;
        belief = u.belief;
        beliefs.push(belief);
        flags.push(in_cascade_region(s, belief));
    }
    Trajectory {
        actions: history.actions.clone(),
        beliefs,
        thresholds,
        cascade_flags: flags,
        clamped,
    }
}

/// Plays `length` agents in `state` starting from public belief `mu0`.
pub fn simulate_sequence<R: Rng + ?Sized>(
    s: &SignalStructure,
    state: State,
    mu0: f64,
    length: usize,
    rng: &mut R,
) -> Result<Vec<Action>> {
    let mut belief = BeliefState::from_mu(mu0)?;
    Ok(simulate_from(s, state, &mut belief, length, rng))
}

pub(crate) fn simulate_from<R: Rng + ?Sized>(
    s: &SignalStructure,
    state: State,
    belief: &mut BeliefState,
    length: usize,
    rng: &mut R,
) -> Vec<Action> {
    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        let a = match in_cascade_region(s, *belief) {
            Region::Up => Action::One,
            Region::Down => Action::Zero,
            Region::None => {
                let x = s.sample_type(state, rng);
                if x > threshold(s, *belief) {
                    Action::One
                } else {
                    Action::Zero
                }
            }
        };
        *belief = update_after_action(s, *belief, a).belief;
        out.push(a);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::QualitySpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uni(lo: f64, hi: f64) -> SignalStructure {
        SignalStructure::build(&QualitySpec::uniform(lo, hi)).unwrap()
    }

    fn mu(m: f64) -> BeliefState {
        BeliefState::from_mu(m).unwrap()
    }

    #[test]
    fn belief_round_trip() {
        for &m in &[1e-6, 0.01, 0.3, 0.5, 0.77, 0.999_999] {
            assert!((mu(m).mu() - m).abs() < 1e-14);
        }
        assert!(BeliefState::from_mu(0.0).is_err());
        assert!(BeliefState::from_mu(1.0).is_err());
        assert!(BeliefState::from_log_odds(80.0).is_clamped());
    }

    #[test]
    fn thresholds_quality_induced() {
        let s = uni(0.5, 0.9);
        assert!((threshold(&s, mu(0.65)) - 0.35).abs() < 1e-12);
        let s = uni(0.5, 2.0 / 3.0);
        assert!((threshold(&s, mu(7.0 / 12.0)) - 5.0 / 12.0).abs() < 1e-12);
        // clamp per region
        assert_eq!(threshold(&s, mu(0.9)), s.x_lo());
        assert_eq!(threshold(&s, mu(0.1)), s.x_hi());
    }

    #[test]
    fn threshold_matches_brute_force_sup() {
        let s =
            SignalStructure::build(&QualitySpec::compact_mixture(0.5, 0.56, 0.8, 1e-4)).unwrap();
        for &m in &[0.25, 0.4, 0.5, 0.55, 0.7] {
            let r = (1.0 - m) / m;
            let brute = (0..=10_000)
                .map(|k| s.x_lo() + (s.x_hi() - s.x_lo()) * k as f64 / 10_000.0)
                .filter(|&x| s.likelihood_ratio(x).is_ok_and(|lr| lr <= r))
                .fold(f64::NEG_INFINITY, f64::max);
            let t = threshold(&s, mu(m));
            assert!((t - brute).abs() < 1e-4 + 1e-12, "mu {m}: {t} vs {brute}");
        }
    }

    #[test]
    fn worked_example_updates() {
        let s = uni(0.5, 2.0 / 3.0);
        let b1 = update_after_action(&s, BeliefState::neutral(), Action::One).belief;
        assert!((b1.mu() - 7.0 / 12.0).abs() < 1e-12);
        let b2 = update_after_action(&s, b1, Action::One).belief;
        assert!((b2.mu() - 91.0 / 146.0).abs() < 1e-12);
        assert!((threshold(&s, b2) - 55.0 / 146.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_contrary() {
        let s = uni(0.5, 1.0);
        let b = update_after_action(&s, BeliefState::neutral(), Action::Zero).belief;
        assert!((b.mu() - 0.25).abs() < 1e-12);
        assert!((action_prob(&s, b, Weighting::Fixed(0.5)) - 0.25).abs() < 1e-12);
        assert!((action_prob(&s, b, Weighting::Posterior) - 0.15625).abs() < 1e-12);
        assert!(
            (action_prob(&s, BeliefState::neutral(), Weighting::Posterior) - 0.5).abs() < 1e-12
        );
    }

    #[test]
    fn history_evaluation() {
        let s = uni(0.5, 0.55);
        let t = evaluate_history(&s, &History::parse("0000").unwrap());
        assert!((t.final_belief().mu() - 0.454).abs() < 1e-3);
        assert_eq!(t.beliefs.len(), 5);
        assert_eq!(t.thresholds.len(), 4);
        let empty = evaluate_history(&s, &History::parse("").unwrap());
        assert_eq!(empty.beliefs, vec![BeliefState::neutral()]);
        let s = uni(0.5, 0.77);
        let t = evaluate_history(&s, &History::parse("00000000").unwrap());
        assert!((t.final_belief().mu() - 0.234).abs() < 1e-3);
    }

    #[test]
    fn history_parsing() {
        let h: History = "0110".parse().unwrap();
        assert_eq!(h.to_string(), "0110");
        assert!(History::parse("01x").is_err());
    }

    #[test]
    fn trajectory_csv() {
        let s = uni(0.5, 2.0 / 3.0);
        let csv = evaluate_history(&s, &History::parse("11").unwrap()).to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "step,action,mu,threshold,cascade_flag");
        assert_eq!(lines[1], "0,,0.5,,none");
        assert!(lines[2].starts_with("1,1,0.583333333333,0.5,"));
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn inside_region_is_identity() {
        let s = uni(0.5, 0.8);
        let b = mu(0.9);
        let u = update_after_action(&s, b, Action::Zero);
        assert_eq!(u.belief, b);
        assert_eq!(u.region, Region::Up);
    }

    #[test]
    fn perfect_signals() {
        let s = SignalStructure::build(&QualitySpec::binary(1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seq = simulate_sequence(&s, State::One, 0.5, 20, &mut rng).unwrap();
        assert!(seq.iter().all(|&a| a == Action::One));
        let u = update_after_action(&s, BeliefState::neutral(), Action::One);
        assert!(u.clamped);
    }

    #[test]
    fn simulation_is_deterministic() {
        let s = uni(0.5, 2.0 / 3.0);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            simulate_sequence(&s, State::One, 0.5, 50, &mut rng).unwrap()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn binary_ties_resolve_to_zero() {
        // An indifferent agent plays 0, so one 0 already starts a down
        // cascade while one 1 does not start an up cascade.
        let s = SignalStructure::build(&QualitySpec::binary(0.7)).unwrap();
        let a = evaluate_history(&s, &History::parse("10").unwrap());
        let b = evaluate_history(&s, &History::parse("01").unwrap());
        assert!((a.final_belief().mu() - 0.5).abs() < 1e-12);
        assert_eq!(a.cascade_flags[1], Region::None);
        assert!((b.final_belief().mu() - 0.3).abs() < 1e-12);
        assert_eq!(b.cascade_flags[2], Region::Down);
    }
}
