//! Two-step efficient GMM estimation of the upper quality bound `q̄` in the
//! `Uniform[1/2, q̄]` family.
//!
//! Moments are the probabilities of a third action 1 after each of the four
//! length-two prefixes `00, 01, 10, 11`, counted from the start of every
//! sequence. Sequence `i` with prefix `h` and third action `a` contributes
//! `1{prefix = h} (1{a = 1} - Pr(a3 = 1 | h, q))` to moment `h`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{
    action_prob, evaluate_history, format_actions, simulate_from, Action, BeliefState, History,
    Weighting,
};
use crate::error::{Error, Result};
use crate::optimize::minimize_bounded;
use crate::par;
use crate::signal::{QualitySpec, SignalStructure, State};

/// Length-two prefixes, in moment order.
pub const HISTORIES: [[Action; 2]; 4] = [
    [Action::Zero, Action::Zero],
    [Action::Zero, Action::One],
    [Action::One, Action::Zero],
    [Action::One, Action::One],
];

/// Two-sided 99% normal quantile.
const Z99: f64 = 2.576;

/// Observed action sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub sequences: Vec<Vec<Action>>,
    pub source: String,
}

impl SequenceDataset {
    pub fn new(sequences: Vec<Vec<Action>>, source: impl Into<String>) -> Result<Self> {
        if let Some((i, s)) = sequences.iter().enumerate().find(|(_, s)| s.len() < 3) {
            return Err(Error::InvalidArgument(format!(
                "sequence {i} has {} actions, need at least 3",
                s.len()
            )));
        }
        Ok(SequenceDataset {
            sequences,
            source: source.into(),
        })
    }

    /// One sequence per line as comma-separated 0/1 tokens; blank lines and
    /// lines starting with `#` are skipped.
    pub fn from_csv(text: &str, source: impl Into<String>) -> Result<Self> {
        let mut sequences = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let seq = line
                .split(',')
                .enumerate()
                .map(|(col, tok)| match tok.trim() {
                    "0" => Ok(Action::Zero),
                    "1" => Ok(Action::One),
                    other => Err(Error::Parse(format!(
                        "line {}, field {}: expected 0 or 1, got {other:?}",
                        ln + 1,
                        col + 1
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            if seq.len() < 3 {
                return Err(Error::Parse(format!(
                    "line {}: sequence has {} actions, need at least 3",
                    ln + 1,
                    seq.len()
                )));
            }
            sequences.push(seq);
        }
        Ok(SequenceDataset {
            sequences,
            source: source.into(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# {}\n", self.source);
        for s in &self.sequences {
            let toks: Vec<String> = s.iter().map(|a| a.bit().to_string()).collect();
            out.push_str(&toks.join(","));
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Sufficient statistics for the four prefix moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub histories: Vec<String>,
    /// Proportion of third actions equal to 1; `None` for empty bins.
    pub empirical: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    /// Number of third actions equal to 1 per bin (fractional for planted
    /// moment vectors).
    pub ones: Vec<f64>,
    pub n_sequences: usize,
}

impl MomentSet {
    /// Moments with prescribed proportions and bin counts.
    pub fn from_proportions(phi: [f64; 4], counts: [usize; 4]) -> Result<Self> {
        if phi.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(
                "proportions must lie in [0, 1]".into(),
            ));
        }
        Ok(MomentSet {
            histories: history_labels(),
            empirical: (0..4).map(|i| (counts[i] > 0).then_some(phi[i])).collect(),
            counts: counts.to_vec(),
            ones: (0..4).map(|i| phi[i] * counts[i] as f64).collect(),
            n_sequences: counts.iter().sum(),
        })
    }
}

fn history_labels() -> Vec<String> {
    HISTORIES.iter().map(|h| format_actions(h)).collect()
}

fn history_index(prefix: &[Action]) -> usize {
    prefix[0].bit() as usize * 2 + prefix[1].bit() as usize
}

/// Per-prefix proportions of third actions equal to 1.
pub fn empirical_moments(dataset: &SequenceDataset) -> Result<MomentSet> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset has no sequences".into()));
    }
    let mut counts = [0usize; 4];
    let mut ones = [0usize; 4];
    for s in &dataset.sequences {
        if s.len() < 3 {
            return Err(Error::InvalidArgument("sequence shorter than 3".into()));
        }
        let h = history_index(&s[..2]);
        counts[h] += 1;
        ones[h] += s[2].bit() as usize;
    }
    Ok(MomentSet {
        histories: history_labels(),
        empirical: (0..4)
            .map(|i| (counts[i] > 0).then(|| ones[i] as f64 / counts[i] as f64))
            .collect(),
        counts: counts.to_vec(),
        ones: ones.iter().map(|&o| o as f64).collect(),
        n_sequences: dataset.len(),
    })
}

/// Which action probability the model moments use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbabilityVariant {
    /// States weighted by the public belief after the prefix.
    Posterior,
    /// States weighted by the prior 1/2.
    Prior,
}

impl ProbabilityVariant {
    fn weighting(self) -> Weighting {
        match self {
            ProbabilityVariant::Posterior => Weighting::Posterior,
            ProbabilityVariant::Prior => Weighting::Fixed(0.5),
        }
    }
}

/// `Pr(next action = 1 | h, q̄)` in `Uniform[1/2, q̄]` from belief 1/2.
pub fn model_moment(q_hi: f64, history: &[Action]) -> Result<f64> {
    model_moment_with(q_hi, history, ProbabilityVariant::Posterior)
}

pub fn model_moment_with(
    q_hi: f64,
    history: &[Action],
    variant: ProbabilityVariant,
) -> Result<f64> {
    if !(q_hi > 0.5 && q_hi <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "q_hi = {q_hi} outside (1/2, 1]"
        )));
    }
    let s = SignalStructure::build(&QualitySpec::uniform(0.5, q_hi))?;
    Ok(moment_on(&s, history, variant))
}

fn moment_on(s: &SignalStructure, history: &[Action], variant: ProbabilityVariant) -> f64 {
    let t = evaluate_history(s, &History::new(history.to_vec(), BeliefState::neutral()));
    action_prob(s, t.final_belief(), variant.weighting())
}

fn model_vector(q_hi: f64, variant: ProbabilityVariant) -> [f64; 4] {
    let s = SignalStructure::build(&QualitySpec::uniform(0.5, q_hi))
        .expect("q_hi validated by the caller");
    HISTORIES.map(|h| moment_on(&s, &h, variant))
}

/// Central finite-difference derivative of each prefix moment in `q̄`.
pub fn moment_jacobian(q: f64, fd_step: f64) -> Result<[f64; 4]> {
    moment_jacobian_with(q, fd_step, ProbabilityVariant::Posterior)
}

pub fn moment_jacobian_with(q: f64, fd_step: f64, variant: ProbabilityVariant) -> Result<[f64; 4]> {
    let lo = GmmOptions::default().bounds.0;
    if fd_step.is_nan() || fd_step <= 0.0 || q - fd_step < lo || q + fd_step > 1.0 {
        return Err(Error::InvalidArgument(format!(
            "q ± fd_step = [{}, {}] leaves [{lo}, 1]",
            q - fd_step,
            q + fd_step
        )));
    }
    let up = model_vector(q + fd_step, variant);
    let dn = model_vector(q - fd_step, variant);
    Ok(std::array::from_fn(|i| (up[i] - dn[i]) / (2.0 * fd_step)))
}

/// One-sided near the bounds.
fn jacobian_within(q: f64, h: f64, bounds: (f64, f64), variant: ProbabilityVariant) -> [f64; 4] {
    let (a, b) = ((q - h).max(bounds.0), (q + h).min(bounds.1));
    let up = model_vector(b, variant);
    let dn = model_vector(a, variant);
    std::array::from_fn(|i| (up[i] - dn[i]) / (b - a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub bounds: (f64, f64),
    pub fd_step: f64,
    /// Convergence tolerance on `q̄`.
    pub xtol: f64,
    pub variant: ProbabilityVariant,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            bounds: (0.5 + 1e-6, 1.0),
            fd_step: 1e-5,
            xtol: 1e-8,
            variant: ProbabilityVariant::Posterior,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryFit {
    pub h: String,
    pub count: usize,
    pub empirical: Option<f64>,
    pub model: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmEstimate {
    pub q_hat: f64,
    pub std_error: f64,
    pub ci99: [f64; 2],
    pub j_stat: f64,
    pub n_sequences: usize,
    pub per_history: Vec<HistoryFit>,
    /// First-step (identity-weighted) estimate.
    pub q_step1: f64,
    /// Second-step weighting matrix over the active moments.
    pub weighting: Vec<Vec<f64>>,
    /// Moment covariance estimator behind the weighting.
    pub covariance: String,
    pub variant: ProbabilityVariant,
    pub warnings: Vec<String>,
}

/// Estimates `q̄` from raw sequences (truncated to their first three actions).
pub fn gmm_estimate(dataset: &SequenceDataset, options: &GmmOptions) -> Result<GmmEstimate> {
    gmm_estimate_moments(&empirical_moments(dataset)?, options)
}

/// Estimates `q̄` from moment sufficient statistics.
pub fn gmm_estimate_moments(moments: &MomentSet, options: &GmmOptions) -> Result<GmmEstimate> {
    let mut warnings = Vec::new();
    let active: Vec<usize> = (0..4).filter(|&i| moments.counts[i] > 0).collect();
    for i in (0..4).filter(|i| !active.contains(i)) {
        let msg = format!(
            "history {} has no observations; moment dropped",
            moments.histories[i]
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    if active.is_empty() {
        return Err(Error::Estimation("every history bin is empty".into()));
    }
    let n = moments.n_sequences as f64;
    let (lo, hi) = options.bounds;
    if !(lo > 0.5 && hi <= 1.0 && lo < hi) {
        return Err(Error::InvalidArgument(format!("bad bounds [{lo}, {hi}]")));
    }
    let variant = options.variant;

    let share: Vec<f64> = active
        .iter()
        .map(|&i| moments.counts[i] as f64 / n)
        .collect();
    let phi: Vec<f64> = active
        .iter()
        .map(|&i| moments.ones[i] / moments.counts[i] as f64)
        .collect();
    let moment_vec = |q: f64| -> DVector<f64> {
        let p = model_vector(q, variant);
        DVector::from_iterator(
            active.len(),
            active
                .iter()
                .enumerate()
                .map(|(k, &i)| share[k] * (phi[k] - p[i])),
        )
    };

    // step 1: identity weighting
    let identity = DMatrix::<f64>::identity(active.len(), active.len());
    let q1 = minimize_objective(|q| quad(&moment_vec(q), &identity), lo, hi, options.xtol)?;

    // step 2: inverse of the centered covariance of per-sequence contributions
    let p1 = model_vector(q1, variant);
    let m1 = moment_vec(q1);
    let mut cov = DMatrix::<f64>::zeros(active.len(), active.len());
    for (k, &i) in active.iter().enumerate() {
        let ones = moments.ones[i];
        let zeros = moments.counts[i] as f64 - ones;
        let second = (ones * (1.0 - p1[i]).powi(2) + zeros * p1[i].powi(2)) / n;
        for l in 0..active.len() {
            cov[(k, l)] = if k == l { second } else { 0.0 } - m1[k] * m1[l];
        }
    }
    let weight = match cov.clone().try_inverse() {
        Some(w) if cov.clone().cholesky().is_some() => w,
        _ => {
            let msg = "moment covariance singular; using its diagonal".to_string();
            warn!("{msg}");
            warnings.push(msg);
            DMatrix::from_diagonal(&cov.diagonal().map(|d| if d > 0.0 { 1.0 / d } else { 0.0 }))
        }
    };
    let q_hat = minimize_objective(|q| quad(&moment_vec(q), &weight), lo, hi, options.xtol)?;
    if (q_hat - lo).min(hi - q_hat) < 10.0 * options.xtol {
        let msg = format!("estimate {q_hat:.6} sits on a bound; standard error is not meaningful");
        warn!("{msg}");
        warnings.push(msg);
    }

    let dp = jacobian_within(q_hat, options.fd_step, options.bounds, variant);
    let g = DVector::from_iterator(
        active.len(),
        active.iter().enumerate().map(|(k, &i)| -share[k] * dp[i]),
    );
    let info = quad(&g, &weight);
    let std_error = if info > 0.0 {
        (1.0 / (info * n)).sqrt()
    } else {
        f64::INFINITY
    };
    let m_hat = moment_vec(q_hat);
    let j_stat = (n * quad(&m_hat, &weight)).max(0.0);

    let p_hat = model_vector(q_hat, variant);
    let per_history = (0..4)
        .map(|i| HistoryFit {
            h: moments.histories[i].clone(),
            count: moments.counts[i],
            empirical: moments.empirical[i],
            model: p_hat[i],
        })
        .collect();

    Ok(GmmEstimate {
        q_hat,
        std_error,
        ci99: [q_hat - Z99 * std_error, q_hat + Z99 * std_error],
        j_stat,
        n_sequences: moments.n_sequences,
        per_history,
        q_step1: q1,
        weighting: (0..weight.nrows())
            .map(|r| weight.row(r).iter().copied().collect())
            .collect(),
        covariance: "centered sample covariance (divisor n)".into(),
        variant,
        warnings,
    })
}

fn quad(m: &DVector<f64>, w: &DMatrix<f64>) -> f64 {
    (m.transpose() * w * m)[(0, 0)]
}

/// Coarse scan to bracket the global minimum, then Brent refinement.
fn minimize_objective<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, xtol: f64) -> Result<f64> {
    const SCAN: usize = 64;
    let xs: Vec<f64> = (0..=SCAN)
        .map(|k| lo + (hi - lo) * k as f64 / SCAN as f64)
        .collect();
    let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Estimation(
            "objective not finite on the bounds".into(),
        ));
    }
    let (kmin, vmin) = vals
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("scan is nonempty");
    let vmax = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if vmax - vmin <= 1e-300 {
        return Err(Error::Estimation(
            "objective is flat over the bounds".into(),
        ));
    }
    let a = xs[kmin.saturating_sub(1)];
    let b = xs[(kmin + 1).min(SCAN)];
    Ok(minimize_bounded(&f, a, b, xtol, 500).x)
}

/// Balanced-state synthetic sequences of length 3 from `Uniform[1/2, q̄]`.
pub fn synthetic_dataset(q_hi: f64, n: usize, seed: u64) -> Result<SequenceDataset> {
    let s = SignalStructure::build(&QualitySpec::uniform(0.5, q_hi))?;
    let mut rng = par::stream_rng(seed, 0);
    let sequences = (0..n)
        .map(|_| {
            let state = if rng.random_bool(0.5) {
                State::One
            } else {
                State::Zero
            };
            let mut b = BeliefState::neutral();
            simulate_from(&s, state, &mut b, 3, &mut rng)
        })
        .collect();
    SequenceDataset::new(
        sequences,
        format!("synthetic uniform(1/2, {q_hi}) n={n} seed={seed}"),
    )
}

/// Monte Carlo frequency of a third action 1 after each prefix over `paths`
/// simulated balanced-state plays, split across parallel streams.
pub fn simulated_prefix_frequencies(
    q_hi: f64,
    paths: usize,
    seed: u64,
) -> Result<[(usize, usize); 4]> {
    const CHUNK: usize = 1 << 14;
    let s = SignalStructure::build(&QualitySpec::uniform(0.5, q_hi))?;
    let chunks = paths.div_ceil(CHUNK);
    let parts = par::map_range(chunks, |c| {
        let mut rng = par::stream_rng(seed, c as u64);
        let mut acc = [(0usize, 0usize); 4];
        for _ in 0..CHUNK.min(paths - c * CHUNK) {
            let state = if rng.random_bool(0.5) {
                State::One
            } else {
                State::Zero
            };
            let mut b = BeliefState::neutral();
            let seq = simulate_from(&s, state, &mut b, 3, &mut rng);
            let h = history_index(&seq[..2]);
            acc[h].0 += 1;
            acc[h].1 += seq[2].bit() as usize;
        }
        acc
    });
    Ok(parts.into_iter().fold([(0, 0); 4], |mut t, p| {
        for i in 0..4 {
            t[i].0 += p[i].0;
            t[i].1 += p[i].1;
        }
        t
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones() -> Vec<Action> {
        vec![Action::One, Action::One]
    }

    #[test]
    fn moment_after_two_ones() {
        // mu = 91/146, threshold 55/146, G1 = 3x^2 - 1/3, G0 = 4/3 - 3(1-x)^2
        let mu = 91.0 / 146.0;
        let x: f64 = 55.0 / 146.0;
        let t1 = 1.0 - (3.0 * x * x - 1.0 / 3.0);
        let t0 = 1.0 - (4.0 / 3.0 - 3.0 * (1.0 - x).powi(2));
        let expected = mu * t1 + (1.0 - mu) * t0;
        let got = model_moment(2.0 / 3.0, &ones()).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.87917).abs() < 1e-5);
    }

    #[test]
    fn moment_after_one() {
        let got = model_moment(2.0 / 3.0, &[Action::One]).unwrap();
        assert!((got - 146.0 / 192.0).abs() < 1e-12);
        assert!((model_moment(0.9, &[]).unwrap() - 0.5).abs() < 1e-12);
        assert!(model_moment(0.5, &[]).is_err());
    }

    #[test]
    fn empirical_counts() {
        let ds = SequenceDataset::from_csv("# toy\n1,1,1\n1,0,0\n0,1,1\n", "toy").unwrap();
        let m = empirical_moments(&ds).unwrap();
        assert_eq!(m.counts, vec![0, 1, 1, 1]);
        assert_eq!(m.empirical, vec![None, Some(1.0), Some(0.0), Some(1.0)]);
        let ds = SequenceDataset::from_csv("0,0,0", "one").unwrap();
        let m = empirical_moments(&ds).unwrap();
        assert_eq!(m.empirical[0], Some(0.0));
        assert!(m.empirical[1..].iter().all(Option::is_none));
    }

    #[test]
    fn csv_errors_name_the_line() {
        let e = SequenceDataset::from_csv("1,1,1\n1,x,0\n", "bad").unwrap_err();
        assert!(e.to_string().contains("line 2, field 2"), "{e}");
        let e = SequenceDataset::from_csv("1,1\n", "short").unwrap_err();
        assert!(e.to_string().contains("line 1"), "{e}");
    }

    #[test]
    fn jacobian() {
        let j = moment_jacobian(2.0 / 3.0, 1e-5).unwrap();
        assert!(j[3] > 0.0);
        assert!(moment_jacobian(1.0, 1e-5).is_err());
        assert!(moment_jacobian(0.5 + 1e-6, 1e-5).is_err());
        // central difference: halving the step changes the result by O(h^2)
        let a = moment_jacobian(0.7, 1e-3).unwrap();
        let b = moment_jacobian(0.7, 5e-4).unwrap();
        for i in 0..4 {
            assert!((a[i] - b[i]).abs() < 1e-4, "{i}: {} vs {}", a[i], b[i]);
        }
    }

    #[test]
    fn exact_fit_recovers_planted_value() {
        for &q in &[0.6, 0.7, 0.85] {
            let p = model_vector(q, ProbabilityVariant::Posterior);
            let m = MomentSet::from_proportions(p, [30, 20, 20, 30]).unwrap();
            let est = gmm_estimate_moments(&m, &GmmOptions::default()).unwrap();
            assert!((est.q_hat - q).abs() < 1e-4, "{q}: {}", est.q_hat);
            assert!((est.q_step1 - est.q_hat).abs() < 1e-6);
            assert!(est.j_stat < 1e-8);
            assert!(est.ci99[0] <= est.q_hat && est.q_hat <= est.ci99[1]);
        }
    }

    #[test]
    fn empty_bins_are_dropped() {
        let p = model_vector(0.7, ProbabilityVariant::Posterior);
        let m = MomentSet::from_proportions(p, [40, 0, 0, 40]).unwrap();
        let est = gmm_estimate_moments(&m, &GmmOptions::default()).unwrap();
        assert_eq!(est.warnings.len(), 2);
        assert!((est.q_hat - 0.7).abs() < 1e-4);
        let m = MomentSet::from_proportions(p, [0, 0, 0, 0]).unwrap();
        assert!(matches!(
            gmm_estimate_moments(&m, &GmmOptions::default()),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn report_json_fields() {
        let p = model_vector(0.7, ProbabilityVariant::Posterior);
        let m = MomentSet::from_proportions(p, [30, 20, 20, 30]).unwrap();
        let est = gmm_estimate_moments(&m, &GmmOptions::default()).unwrap();
        let v = serde_json::to_value(&est).unwrap();
        for key in [
            "q_hat",
            "std_error",
            "ci99",
            "j_stat",
            "n_sequences",
            "per_history",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["per_history"][3]["h"], "11");
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = synthetic_dataset(2.0 / 3.0, 100, 5).unwrap();
        let b = synthetic_dataset(2.0 / 3.0, 100, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.sequences.iter().all(|s| s.len() == 3));
        let back = SequenceDataset::from_csv(&a.to_csv(), "x").unwrap();
        assert_eq!(back.sequences, a.sequences);
    }
}
