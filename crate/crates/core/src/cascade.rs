//! Action cascades: region classification, the existence conditions,
//! hazard ratios and time-to-cascade sweeps.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::belief::{update_after_action, Action, BeliefState};
use crate::error::{Error, Result};
use crate::optimize::minimize_bounded;
use crate::par;
use crate::signal::{QualitySpec, Segment, SignalStructure, State, TIE_TOL};

/// Grid points per segment for the condition search.
const CONDITION_GRID: usize = 4096;
/// Grid points per support interval for the hazard-ratio scan.
const HAZARD_GRID: usize = 2048;
/// Margins within this of zero count as equality.
const MARGIN_TOL: f64 = 1e-9;
/// Slack when comparing hazard ratios for monotonicity.
const IHRP_TOL: f64 = 1e-9;
/// Upper-tail mass below which the hazard ratio is not evaluated.
const TAIL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Up,
    Down,
    None,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Up => "up",
            Region::Down => "down",
            Region::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

/// Cascade region of a public belief, and whether it lies strictly inside.
///
/// Up iff `LR(x_lo) >= (1 - mu)/mu`, down iff `LR(x_hi) <= (1 - mu)/mu`.
/// On the up boundary a point mass at `x_lo` is indifferent and takes
/// action 0, so the boundary only counts as up without one.
pub fn cascade_region_detail(s: &SignalStructure, belief: BeliefState) -> (Region, bool) {
    let l = belief.log_odds();
    let up = s.lr_lower_edge().ln() + l;
    if up > TIE_TOL {
        return (Region::Up, true);
    }
    if up >= -TIE_TOL && !s.has_atom_at(s.x_lo()) {
        return (Region::Up, false);
    }
    let down = s.lr_upper_edge().ln() + l;
    if down < -TIE_TOL {
        return (Region::Down, true);
    }
    if down <= TIE_TOL {
        return (Region::Down, false);
    }
    (Region::None, false)
}

pub fn in_cascade_region(s: &SignalStructure, belief: BeliefState) -> Region {
    cascade_region_detail(s, belief).0
}

/// Evaluation of one action-cascade condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeReport {
    pub direction: Direction,
    #[serde(rename = "holds")]
    pub condition_holds: bool,
    pub strict: bool,
    pub witness_x: Option<f64>,
    /// Largest slack of the inequality found over the support, oriented so
    /// that positive means it holds.
    pub margin: f64,
}

/// Up-cascade condition: some `x` with
/// `LR(x_lo) >= LR(x) (1 - F0(x)) / (1 - F1(x))`.
///
/// `x = x_lo` satisfies this with equality whenever there is no mass at
/// `x_lo`; that point is excluded since a threshold there carries no
/// information.
pub fn up_cascade_condition(s: &SignalStructure) -> CascadeReport {
    let lhs = s.lr_lower_edge();
    let trivial = (!s.has_atom_at(s.x_lo())).then_some(s.x_lo());
    let margin = |lr: f64, x: f64| {
        let t1 = s.tail(State::One, x);
        if t1 <= 0.0 {
            return f64::NAN;
        }
        lhs - lr * s.tail(State::Zero, x) / t1
    };
    search(s, Direction::Up, trivial, margin)
}

/// Down-cascade condition: some `x` with `LR(x_hi) <= LR(x) F0(x) / F1(x)`.
///
/// The mirror image of the up condition: `F` is the mass strictly below `x`.
pub fn down_cascade_condition(s: &SignalStructure) -> CascadeReport {
    let lhs = s.lr_upper_edge();
    let trivial = (!s.has_atom_at(s.x_hi())).then_some(s.x_hi());
    let margin = |lr: f64, x: f64| {
        let f1 = s.cdf_left(State::One, x);
        if f1 <= 0.0 {
            return f64::NAN;
        }
        lr * s.cdf_left(State::Zero, x) / f1 - lhs
    };
    search(s, Direction::Down, trivial, margin)
}

fn search<F>(
    s: &SignalStructure,
    direction: Direction,
    trivial: Option<f64>,
    margin: F,
) -> CascadeReport
where
    F: Fn(f64, f64) -> f64,
{
    let is_trivial = |x: f64| trivial.is_some_and(|t| (x - t).abs() <= 1e-12);
    let mut best = (f64::NEG_INFINITY, None::<f64>);
    let mut consider = |m: f64, x: f64| {
        if m.is_finite() && m > best.0 {
            best = (m, Some(x));
        }
    };

    for a in &s.atoms {
        consider(margin(a.likelihood_ratio(), a.x), a.x);
    }
    for g in &s.segments {
        let at = |x: f64| margin(seg_lr(g, x), x);
        let xs: Vec<f64> = (0..=CONDITION_GRID)
            .map(|k| g.lo + (g.hi - g.lo) * k as f64 / CONDITION_GRID as f64)
            .collect();
        let ms: Vec<f64> = xs
            .iter()
            .map(|&x| if is_trivial(x) { f64::NAN } else { at(x) })
            .collect();
        let mut seg_best = None::<usize>;
        for (k, &m) in ms.iter().enumerate() {
            consider(m, xs[k]);
            if m.is_finite() && seg_best.is_none_or(|j| m > ms[j]) {
                seg_best = Some(k);
            }
        }
        // polish an interior local maximum
        if let Some(k) = seg_best {
            if k > 0 && k < CONDITION_GRID && ms[k - 1].is_finite() && ms[k + 1].is_finite() {
                let m = minimize_bounded(|x| -at(x), xs[k - 1], xs[k + 1], 1e-13, 200);
                consider(-m.value, m.x);
            }
        }
    }

    let (m, x) = best;
    let holds = m >= -MARGIN_TOL;
    CascadeReport {
        direction,
        condition_holds: holds,
        strict: m > MARGIN_TOL,
        witness_x: if holds { x } else { None },
        margin: if m.is_finite() { m } else { f64::NAN },
    }
}

fn seg_lr(g: &Segment, x: f64) -> f64 {
    let d0 = g.density(State::Zero, x);
    let d1 = g.density(State::One, x);
    if d0 > 0.0 {
        d1 / d0
    } else if d1 > 0.0 {
        f64::INFINITY
    } else {
        f64::NAN
    }
}

/// `H(x) = [(1 - G0(x)) / (1 - G1(x))] * [g1(x) / g0(x)]`.
pub fn hazard_ratio(s: &SignalStructure, x: f64) -> Result<f64> {
    if !s.in_support(x) {
        return Err(Error::Domain {
            what: "hazard ratio (outside support)",
            x,
        });
    }
    let lr = s.likelihood_ratio(x)?;
    hazard_from(s, lr, x).ok_or(Error::Domain {
        what: "hazard ratio (degenerate tail or density)",
        x,
    })
}

fn hazard_from(s: &SignalStructure, lr: f64, x: f64) -> Option<f64> {
    let t1 = s.tail(State::One, x);
    if !lr.is_finite() || t1 < TAIL_FLOOR {
        return None;
    }
    Some(s.tail(State::Zero, x) / t1 * lr)
}

/// `H` evaluated on `xs`, `None` where undefined.
pub fn hazard_series(s: &SignalStructure, xs: &[f64]) -> Vec<(f64, Option<f64>)> {
    xs.iter().map(|&x| (x, hazard_ratio(s, x).ok())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IhrpReport {
    pub ihrp: bool,
    /// `(x, y)` with `x < y` and `H(x) > H(y)`.
    pub witness: Option<(f64, f64)>,
}

/// Whether the hazard ratio is nondecreasing over the support, scanning
/// 2048 points per support interval plus every breakpoint (one-sided at
/// jumps) and comparing across gaps.
pub fn is_ihrp(s: &SignalStructure) -> IhrpReport {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for g in &s.segments {
        let span = s
            .support()
            .iter()
            .find(|&&(l, h)| g.lo >= l - 1e-12 && g.hi <= h + 1e-12)
            .map_or(g.hi - g.lo, |&(l, h)| h - l);
        let n = (((g.hi - g.lo) / span) * HAZARD_GRID as f64)
            .ceil()
            .max(2.0) as usize;
        for k in 0..=n {
            let x = g.lo + (g.hi - g.lo) * k as f64 / n as f64;
            if s.atoms.iter().any(|a| (a.x - x).abs() <= 1e-12) {
                continue;
            }
            if let Some(h) = hazard_from(s, seg_lr(g, x), x) {
                pts.push((x, h));
            }
        }
    }
    for a in &s.atoms {
        if let Some(h) = hazard_from(s, a.likelihood_ratio(), a.x) {
            pts.push((a.x, h));
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut peak: Option<(f64, f64)> = None;
    for &(x, h) in &pts {
        match peak {
            Some((px, ph)) if h < ph - IHRP_TOL => {
                return IhrpReport {
                    ihrp: false,
                    witness: Some((px, x)),
                };
            }
            Some((_, ph)) if h <= ph => {}
            _ => peak = Some((x, h)),
        }
    }
    IhrpReport {
        ihrp: true,
        witness: None,
    }
}

/// Consecutive `action`s from `mu0` until the matching cascade region is
/// entered; `None` if `cap` actions do not suffice.
pub fn time_to_cascade(
    s: &SignalStructure,
    mu0: f64,
    action: Action,
    cap: usize,
) -> Result<Option<usize>> {
    if cap == 0 {
        return Err(Error::InvalidArgument("cap must be at least 1".into()));
    }
    let target = match action {
        Action::One => Region::Up,
        Action::Zero => Region::Down,
    };
    let mut belief = BeliefState::from_mu(mu0)?;
    for n in 0..=cap {
        let region = in_cascade_region(s, belief);
        if region == target {
            return Ok(Some(n));
        }
        if region != Region::None || n == cap {
            break;
        }
        let u = update_after_action(s, belief, action);
        if u.degenerate {
            break;
        }
        belief = u.belief;
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub parameter_grid: Vec<f64>,
    pub steps_to_cascade: Vec<Option<usize>>,
    pub cap: usize,
}

impl SweepResult {
    /// `x,value` rows; a missing cascade prints as the cap or as `nan`.
    pub fn to_csv(&self, none_as_cap: bool) -> String {
        let mut out = String::from("q_lo,steps\n");
        for (x, v) in self.parameter_grid.iter().zip(&self.steps_to_cascade) {
            let v = match v {
                Some(n) => n.to_string(),
                None if none_as_cap => self.cap.to_string(),
                None => "nan".into(),
            };
            out.push_str(&format!("{},{}\n", fmt_grid(*x), v));
        }
        out
    }

    /// First grid value with a finite time to cascade.
    pub fn onset(&self) -> Option<f64> {
        self.parameter_grid
            .iter()
            .zip(&self.steps_to_cascade)
            .find(|(_, v)| v.is_some())
            .map(|(x, _)| *x)
    }
}

/// Time to an up-cascade over `UniformQuality(q_lo, q_hi)` starting at
/// `mu0 = q_lo`, for each `q_lo` in the grid. Grid points are evaluated in
/// parallel; output order follows the grid.
pub fn sweep_time_to_cascade(q_hi: f64, q_lo_grid: &[f64], cap: usize) -> Result<SweepResult> {
    if let Some(bad) = q_lo_grid.iter().find(|&&q| !(0.5..=q_hi).contains(&q)) {
        return Err(Error::InvalidArgument(format!(
            "grid value {bad} outside [1/2, {q_hi}]"
        )));
    }
    let steps = par::map(q_lo_grid, |&q_lo| {
        let s = SignalStructure::build(&QualitySpec::uniform(q_lo, q_hi))?;
        time_to_cascade(&s, q_lo, Action::One, cap)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        parameter_grid: q_lo_grid.to_vec(),
        steps_to_cascade: steps,
        cap,
    })
}

/// Inclusive arithmetic grid, rounded to 12 decimals to avoid drift.
pub fn grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 || stop < start {
        return Err(Error::InvalidArgument(format!(
            "bad grid ({start}, {stop}, {step})"
        )));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

pub(crate) fn fmt_grid(x: f64) -> String {
    let s = format!("{x:.12}");
    let s = s.trim_end_matches('0');
    s.strip_suffix('.').unwrap_or(s).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uni(lo: f64, hi: f64) -> SignalStructure {
        SignalStructure::build(&QualitySpec::uniform(lo, hi)).unwrap()
    }

    fn mu(m: f64) -> BeliefState {
        BeliefState::from_mu(m).unwrap()
    }

    #[test]
    fn regions() {
        assert_eq!(in_cascade_region(&uni(0.6, 0.8), mu(0.9)), Region::Up);
        assert_eq!(in_cascade_region(&uni(0.6, 0.8), mu(0.1)), Region::Down);
        assert_eq!(
            in_cascade_region(&uni(0.5, 2.0 / 3.0), mu(0.5)),
            Region::None
        );
        let s = uni(0.65, 0.8);
        let b = update_after_action(&s, mu(0.65), Action::One).belief;
        // G1(0.35) = 0.275, G0(0.35) = 0.725
        let odds = 0.65 / 0.35 * (1.0 - 0.275) / (1.0 - 0.725);
        assert!((b.mu() - odds / (1.0 + odds)).abs() < 1e-12);
        assert!((b.mu() - 0.8304).abs() < 1e-4);
        assert_eq!(in_cascade_region(&s, b), Region::Up);
    }

    #[test]
    fn boundary_without_atom_is_weakly_up() {
        let (r, strict) = cascade_region_detail(&uni(0.5, 0.8), mu(0.8));
        assert_eq!(r, Region::Up);
        assert!(!strict);
    }

    #[test]
    fn boundary_with_atom_is_not_up() {
        let s = SignalStructure::build(&QualitySpec::binary(0.8)).unwrap();
        assert_eq!(in_cascade_region(&s, mu(0.8)), Region::None);
        assert_eq!(time_to_cascade(&s, 0.8, Action::One, 100).unwrap(), Some(1));
    }

    #[test]
    fn binary_conditions() {
        for q in [0.55, 0.6, 0.75, 0.9] {
            let s = SignalStructure::build(&QualitySpec::binary(q)).unwrap();
            let up = up_cascade_condition(&s);
            assert!(up.condition_holds && up.strict, "q = {q}: {up:?}");
            let down = down_cascade_condition(&s);
            assert!(down.condition_holds && down.strict, "q = {q}: {down:?}");
        }
    }

    #[test]
    fn uniform_conditions() {
        let r = up_cascade_condition(&uni(0.5, 0.8));
        assert!(!r.condition_holds && r.witness_x.is_none());
        assert!(!down_cascade_condition(&uni(0.5, 0.8)).condition_holds);
        let r = up_cascade_condition(&uni(0.7, 0.8));
        assert!(r.condition_holds && r.strict);
        // the uniform-family form of the inequality at the witness
        let x = r.witness_x.unwrap();
        let (ql, qh) = (0.7, 0.8);
        let lhs = (1.0 - x) / x * (2.0 * (qh - ql) - x * x + (1.0 - qh) * (1.0 - qh))
            / (2.0 * (qh - ql) - qh * qh + (1.0 - x) * (1.0 - x));
        assert!(lhs >= (1.0 - qh) / qh, "witness {x}");
    }

    #[test]
    fn report_json_shape() {
        let r = up_cascade_condition(&uni(0.65, 0.8));
        let v = serde_json::to_value(r).unwrap();
        assert_eq!(v["direction"], "up");
        assert_eq!(v["holds"], true);
        assert_eq!(v["strict"], true);
        assert!(v["witness_x"].is_number());
    }

    #[test]
    fn hazard_values() {
        let s = uni(0.5, 0.8);
        assert!((hazard_ratio(&s, 0.4).unwrap() - 0.444_444).abs() < 1e-6);
        assert!((hazard_ratio(&s, 0.5).unwrap() - 0.538_462).abs() < 1e-6);
        assert!(hazard_ratio(&uni(0.56, 0.8), 0.5).is_err());
        assert!(hazard_ratio(&s, 0.8).is_err());
    }

    #[test]
    fn ihrp() {
        assert!(is_ihrp(&uni(0.5, 0.8)).ihrp);
        let r = is_ihrp(&uni(0.56, 0.8));
        assert!(!r.ihrp);
        let (x, y) = r.witness.unwrap();
        let s = uni(0.56, 0.8);
        assert!(x < y);
        assert!(hazard_ratio(&s, x).unwrap() > hazard_ratio(&s, y).unwrap());
    }

    #[test]
    fn time_to_cascade_cases() {
        assert_eq!(
            time_to_cascade(&uni(0.65, 0.8), 0.65, Action::One, 100).unwrap(),
            Some(1)
        );
        assert_eq!(
            time_to_cascade(&uni(0.6, 0.8), 0.6, Action::One, 100).unwrap(),
            None
        );
        assert_eq!(
            time_to_cascade(&uni(0.6, 0.8), 0.95, Action::One, 100).unwrap(),
            Some(0)
        );
        assert!(time_to_cascade(&uni(0.6, 0.8), 0.5, Action::One, 0).is_err());
    }

    #[test]
    fn sweep_small() {
        let r = sweep_time_to_cascade(0.8, &[0.5], 100).unwrap();
        assert_eq!(r.steps_to_cascade, vec![None]);
        let r = sweep_time_to_cascade(0.8, &[0.8], 100).unwrap();
        assert_eq!(r.steps_to_cascade, vec![Some(1)]);
        assert!(sweep_time_to_cascade(0.8, &[0.45], 100).is_err());
        assert_eq!(r.to_csv(true), "q_lo,steps\n0.8,1\n");
    }

    #[test]
    fn grid_is_exact() {
        let g = grid(0.5, 0.8, 0.001).unwrap();
        assert_eq!(g.len(), 301);
        assert_eq!(g[121], 0.621);
        assert_eq!(*g.last().unwrap(), 0.8);
    }
}
