//! Randomized invariants over the quality families.

use proptest::prelude::*;
use rand::Rng;

use crate::belief::{
    action_prob, simulate_sequence, update_after_action, Action, BeliefState, Weighting,
};
use crate::gmm::{model_moment, simulated_prefix_frequencies, HISTORIES};
use crate::par::stream_rng;
use crate::signal::{QualitySpec, SignalStructure, State};

fn uniform_spec() -> impl Strategy<Value = QualitySpec> {
    (0.5f64..0.99, 0.0f64..1.0).prop_map(|(lo, t)| QualitySpec::uniform(lo, lo + t * (1.0 - lo)))
}

fn discrete_spec() -> impl Strategy<Value = QualitySpec> {
    prop::collection::vec((0.5f64..=1.0, 0.05f64..1.0), 1..5).prop_map(|pts| {
        let total: f64 = pts.iter().map(|p| p.1).sum();
        QualitySpec::Discrete {
            points: pts.into_iter().map(|(q, w)| (q, w / total)).collect(),
        }
    })
}

fn any_spec() -> impl Strategy<Value = QualitySpec> {
    prop_oneof![
        uniform_spec(),
        discrete_spec(),
        (uniform_spec(), discrete_spec(), 0.05f64..0.95).prop_map(|(a, b, w)| {
            QualitySpec::Mixture {
                components: vec![(w, a), (1.0 - w, b)],
            }
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn martingale(spec in any_spec(), mu in 0.01f64..0.99) {
        let s = SignalStructure::build(&spec).unwrap();
        let b = BeliefState::from_mu(mu).unwrap();
        let p1 = action_prob(&s, b, Weighting::Posterior);
        let mut e = 0.0;
        for (a, p) in [(Action::One, p1), (Action::Zero, 1.0 - p1)] {
            if p > 0.0 {
                e += p * update_after_action(&s, b, a).belief.mu();
            }
        }
        prop_assert!((e - mu).abs() < 1e-10, "E[mu'] = {e} vs {mu}");
    }

    #[test]
    fn quality_induced_types_satisfy_mlrp(spec in any_spec()) {
        let s = SignalStructure::build(&spec).unwrap();
        prop_assert!(s.check_mlrp().is_ok());
    }

    #[test]
    fn normalization(spec in any_spec()) {
        let s = SignalStructure::build(&spec).unwrap();
        for st in [State::Zero, State::One] {
            prop_assert!((s.cdf(st, s.x_hi()) - 1.0).abs() < 1e-9);
            prop_assert!(s.cdf_left(st, s.x_lo()).abs() < 1e-9);
            prop_assert!((s.tail(st, s.x_lo()) + s.cdf(st, s.x_lo()) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn symmetry(spec in any_spec(), x in 0.0f64..=1.0) {
        let s = SignalStructure::build(&spec).unwrap();
        let lhs = s.cdf(State::One, x);
        let rhs = 1.0 - s.cdf_left(State::Zero, 1.0 - x);
        prop_assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn cdf_monotone(spec in any_spec(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let s = SignalStructure::build(&spec).unwrap();
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        for st in [State::Zero, State::One] {
            prop_assert!(s.cdf(st, a) <= s.cdf(st, b) + 1e-15);
        }
    }

    #[test]
    fn log_odds_round_trip(mu in 1e-9f64..(1.0 - 1e-9)) {
        let b = BeliefState::from_mu(mu).unwrap();
        prop_assert!((b.mu() - mu).abs() < 1e-12);
        let again = BeliefState::from_log_odds(b.log_odds());
        prop_assert!((again.mu() - mu).abs() < 1e-12);
    }

    #[test]
    fn seeded_simulation_is_deterministic(spec in any_spec(), seed in any::<u64>()) {
        let s = SignalStructure::build(&spec).unwrap();
        let run = || simulate_sequence(&s, State::One, 0.5, 30, &mut stream_rng(seed, 1)).unwrap();
        prop_assert_eq!(run(), run());
    }
}

/// Under an even state draw, `Uniform[1/2, 1]` qualities give types that are
/// uniform on `[0, 1]`.
#[test]
fn sampled_types_pass_ks() {
    let s = SignalStructure::build(&QualitySpec::uniform(0.5, 1.0)).unwrap();
    let mut rng = stream_rng(2024, 0);
    let n = 100_000;
    let mut xs: Vec<f64> = (0..n)
        .map(|_| {
            let st = if rng.random_bool(0.5) {
                State::One
            } else {
                State::Zero
            };
            s.sample_type(st, &mut rng)
        })
        .collect();
    xs.sort_by(f64::total_cmp);
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - x))
        .fold(0.0, f64::max);
    assert!(d < 0.01, "KS distance {d}");
}

#[test]
fn moments_match_simulation() {
    for (k, q) in [0.6, 2.0 / 3.0, 0.8].into_iter().enumerate() {
        let freq = simulated_prefix_frequencies(q, 1_000_000, 77 + k as u64).unwrap();
        for (h, (count, ones)) in HISTORIES.iter().zip(freq) {
            let p = model_moment(q, h).unwrap();
            let se = (p * (1.0 - p) / count as f64).sqrt();
            let f = ones as f64 / count as f64;
            assert!(
                (f - p).abs() < 3.0 * se,
                "q={q} h={h:?}: {f} vs {p} (se {se})"
            );
        }
    }
}
