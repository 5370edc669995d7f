//! State-conditional type distributions.
//!
//! An agent's *type* is its posterior that the state is 1 when the public
//! belief is 1/2. A signal of quality `q` that points to state 1 yields type
//! `q`, one that points to state 0 yields `1 - q`. Given a quality density
//! `f` on `[1/2, 1]` the type densities are
//!
//! ```text
//! g1(x) = x f(max(x, 1 - x))        g0(x) = (1 - x) f(max(x, 1 - x))
//! ```
//!
//! so `g1 / g0 = x / (1 - x)` for every quality distribution.
//!
//! Every structure is stored as piecewise-linear densities over explicit
//! breakpoints plus a list of point masses. CDFs are then exact
//! piecewise-quadratic functions and right-continuous at atoms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack when matching breakpoints and atom locations.
const LOC_EPS: f64 = 1e-12;
/// Log-scale tolerance below which a likelihood ratio is treated as equal to a cutoff.
pub(crate) const TIE_TOL: f64 = 1e-12;
/// Allowed normalization error of user-supplied weights and densities.
const NORM_TOL: f64 = 1e-9;
/// MLRP grid points per support interval.
const MLRP_GRID: usize = 2048;

/// State of nature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum State {
    Zero,
    One,
}

impl State {
    pub fn index(self) -> usize {
        match self {
            State::Zero => 0,
            State::One => 1,
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(State::Zero),
            1 => Some(State::One),
            _ => None,
        }
    }
}

/// Distribution of signal qualities, or a type distribution given directly.
///
/// JSON form is tagged by `kind`:
/// `{"kind":"uniform","q_lo":..,"q_hi":..}`,
/// `{"kind":"discrete","points":[[q,w],..]}`,
/// `{"kind":"mixture","components":[[w,spec],..]}`,
/// `{"kind":"direct","breakpoints":[..],"g0":[..],"g1":[..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum QualitySpec {
    /// Qualities uniform on `[q_lo, q_hi]`; a point mass when the bounds coincide.
    Uniform { q_lo: f64, q_hi: f64 },
    /// Finitely many qualities `(q, weight)`.
    Discrete { points: Vec<(f64, f64)> },
    /// Pointwise mixture of type distributions.
    Mixture { components: Vec<(f64, QualitySpec)> },
    /// Type densities given by their values at breakpoints, linear in between.
    /// A repeated breakpoint encodes a jump.
    Direct {
        breakpoints: Vec<f64>,
        g0: Vec<f64>,
        g1: Vec<f64>,
    },
}

impl QualitySpec {
    pub fn uniform(q_lo: f64, q_hi: f64) -> Self {
        QualitySpec::Uniform { q_lo, q_hi }
    }

    /// The canonical model: every agent has quality `q`.
    pub fn binary(q: f64) -> Self {
        QualitySpec::Discrete {
            points: vec![(q, 1.0)],
        }
    }

    /// Compact-support structure: with probability `delta` qualities are
    /// uniform on `[c, q_hi]`; otherwise types are uniform on `(1-c, c)` in
    /// state 0 and follow a step density tilted by `eps` around 1/2 in state 1.
    pub fn compact_mixture(delta: f64, c: f64, q_hi: f64, eps: f64) -> Self {
        let w = 2.0 * c - 1.0;
        let step = QualitySpec::Direct {
            breakpoints: vec![1.0 - c, 0.5, 0.5, c],
            g0: vec![1.0 / w; 4],
            g1: vec![
                (1.0 - eps) / w,
                (1.0 - eps) / w,
                (1.0 + eps) / w,
                (1.0 + eps) / w,
            ],
        };
        QualitySpec::Mixture {
            components: vec![(delta, QualitySpec::uniform(c, q_hi)), (1.0 - delta, step)],
        }
    }

    /// Whether the spec induces types through qualities, so that
    /// `g1(x) = g0(1 - x)` holds.
    pub fn is_quality_induced(&self) -> bool {
        match self {
            QualitySpec::Uniform { .. } | QualitySpec::Discrete { .. } => true,
            QualitySpec::Mixture { components } => {
                components.iter().all(|(_, c)| c.is_quality_induced())
            }
            QualitySpec::Direct { .. } => false,
        }
    }
}

/// Linear piece of both densities on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Segment {
    pub lo: f64,
    pub hi: f64,
    /// Density values `[at lo, at hi]` per state.
    pub dens: [[f64; 2]; 2],
    /// Mass of the piece per state.
    pub mass: [f64; 2],
}

impl Segment {
    fn new(lo: f64, hi: f64, d0: [f64; 2], d1: [f64; 2]) -> Self {
        let w = hi - lo;
        Segment {
            lo,
            hi,
            dens: [d0, d1],
            mass: [0.5 * w * (d0[0] + d0[1]), 0.5 * w * (d1[0] + d1[1])],
        }
    }

    pub fn density(&self, s: State, x: f64) -> f64 {
        let d = self.dens[s.index()];
        let w = self.hi - self.lo;
        let t = ((x - self.lo) / w).clamp(0.0, 1.0);
        d[0] + (d[1] - d[0]) * t
    }

    /// Mass on `[lo, x]`.
    fn mass_below(&self, s: State, x: f64) -> f64 {
        if x <= self.lo {
            0.0
        } else if x >= self.hi {
            self.mass[s.index()]
        } else {
            0.5 * (x - self.lo) * (self.dens[s.index()][0] + self.density(s, x))
        }
    }

    /// Mass on `[x, hi]`.
    fn mass_above(&self, s: State, x: f64) -> f64 {
        if x >= self.hi {
            0.0
        } else if x <= self.lo {
            self.mass[s.index()]
        } else {
            0.5 * (self.hi - x) * (self.density(s, x) + self.dens[s.index()][1])
        }
    }

    fn contains(&self, x: f64) -> bool {
        x >= self.lo - LOC_EPS && x <= self.hi + LOC_EPS
    }
}

/// Point mass at `x` with per-state masses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Atom {
    pub x: f64,
    pub mass: [f64; 2],
}

impl Atom {
    pub fn likelihood_ratio(&self) -> f64 {
        ratio(self.mass[1], self.mass[0])
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        f64::NAN
    }
}

/// Type distribution conditional on each state.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalStructure {
    pub(crate) segments: Vec<Segment>,
    pub(crate) atoms: Vec<Atom>,
    support: Vec<(f64, f64)>,
    x_lo: f64,
    x_hi: f64,
}

/// Builds the type distribution induced by `spec`.
pub fn build_structure(spec: &QualitySpec) -> Result<SignalStructure> {
    SignalStructure::build(spec)
}

impl SignalStructure {
    pub fn build(spec: &QualitySpec) -> Result<Self> {
        match spec {
            QualitySpec::Uniform { q_lo, q_hi } => Self::uniform(*q_lo, *q_hi),
            QualitySpec::Discrete { points } => Self::discrete(points),
            QualitySpec::Direct {
                breakpoints,
                g0,
                g1,
            } => {
                let s = Self::direct(breakpoints, g0, g1)?;
                s.check_mlrp()?;
                Ok(s)
            }
            QualitySpec::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::InvalidSpec("mixture has no components".into()));
                }
                check_weights(components.iter().map(|(w, _)| *w), "mixture")?;
                let built = components
                    .iter()
                    .map(|(w, c)| Ok((*w, Self::build(c)?)))
                    .collect::<Result<Vec<_>>>()?;
                Self::mix(&built)
            }
        }
    }

    fn uniform(q_lo: f64, q_hi: f64) -> Result<Self> {
        if !(0.5..=1.0).contains(&q_lo) || !(0.5..=1.0).contains(&q_hi) {
            return Err(Error::InvalidSpec(format!(
                "uniform bounds must lie in [1/2, 1], got [{q_lo}, {q_hi}]"
            )));
        }
        if q_lo > q_hi || q_hi <= 0.5 {
            return Err(Error::InvalidSpec(format!(
                "uniform bounds need q_lo <= q_hi and q_hi > 1/2, got [{q_lo}, {q_hi}]"
            )));
        }
        if q_lo == q_hi {
            return Self::discrete(&[(q_lo, 1.0)]);
        }
        let f = 1.0 / (q_hi - q_lo);
        let piece = |lo: f64, hi: f64| {
            Segment::new(lo, hi, [(1.0 - lo) * f, (1.0 - hi) * f], [lo * f, hi * f])
        };
        Ok(Self::assemble(
            vec![piece(1.0 - q_hi, 1.0 - q_lo), piece(q_lo, q_hi)],
            Vec::new(),
        ))
    }

    fn discrete(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidSpec("discrete quality set is empty".into()));
        }
        check_weights(points.iter().map(|p| p.1), "discrete")?;
        let mut atoms = Vec::new();
        for &(q, w) in points {
            if !(0.5..=1.0).contains(&q) {
                return Err(Error::InvalidSpec(format!("quality {q} outside [1/2, 1]")));
            }
            if w == 0.0 {
                continue;
            }
            // signal pointing to 1 gives type q, signal pointing to 0 gives 1 - q
            push_atom(&mut atoms, q, [w * (1.0 - q), w * q]);
            push_atom(&mut atoms, 1.0 - q, [w * q, w * (1.0 - q)]);
        }
        Ok(Self::assemble(Vec::new(), atoms))
    }

    fn direct(breakpoints: &[f64], g0: &[f64], g1: &[f64]) -> Result<Self> {
        let n = breakpoints.len();
        if n < 2 || g0.len() != n || g1.len() != n {
            return Err(Error::InvalidSpec(format!(
                "direct densities need >= 2 breakpoints with matching values (got {n}, {}, {})",
                g0.len(),
                g1.len()
            )));
        }
        for (i, &b) in breakpoints.iter().enumerate() {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::InvalidSpec(format!(
                    "breakpoint {i} = {b} outside [0, 1]"
                )));
            }
            if i > 0 && b < breakpoints[i - 1] {
                return Err(Error::InvalidSpec(format!(
                    "breakpoints decrease at index {i}"
                )));
            }
            if !(g0[i] >= 0.0 && g1[i] >= 0.0 && g0[i].is_finite() && g1[i].is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "negative or non-finite density at breakpoint {i}"
                )));
            }
        }
        let mut segments = Vec::new();
        for i in 1..n {
            let (lo, hi) = (breakpoints[i - 1], breakpoints[i]);
            if hi - lo <= LOC_EPS {
                continue;
            }
            let seg = Segment::new(lo, hi, [g0[i - 1], g0[i]], [g1[i - 1], g1[i]]);
            if seg.mass[0] > 0.0 || seg.mass[1] > 0.0 {
                segments.push(seg);
            }
        }
        for s in [State::Zero, State::One] {
            let total: f64 = segments.iter().map(|g| g.mass[s.index()]).sum();
            if (total - 1.0).abs() > NORM_TOL {
                return Err(Error::InvalidSpec(format!(
                    "density for state {} integrates to {total}, expected 1",
                    s.index()
                )));
            }
        }
        Ok(Self::assemble(segments, Vec::new()))
    }

    /// Weight-combines component structures pointwise per state.
    fn mix(parts: &[(f64, SignalStructure)]) -> Result<Self> {
        let mut cuts: Vec<f64> = parts
            .iter()
            .flat_map(|(_, s)| s.segments.iter().flat_map(|g| [g.lo, g.hi]))
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() <= LOC_EPS);

        let mut segments = Vec::new();
        for pair in cuts.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let mid = 0.5 * (a + b);
            let mut d = [[0.0; 2]; 2];
            for (w, s) in parts {
                if *w == 0.0 {
                    continue;
                }
                if let Some(g) = s.segments.iter().find(|g| g.lo < mid && mid < g.hi) {
                    for st in [State::Zero, State::One] {
                        d[st.index()][0] += w * g.density(st, a);
                        d[st.index()][1] += w * g.density(st, b);
                    }
                }
            }
            if d.iter().flatten().any(|&v| v > 0.0) {
                segments.push(Segment::new(a, b, d[0], d[1]));
            }
        }

        let mut atoms = Vec::new();
        for (w, s) in parts {
            for a in &s.atoms {
                if *w > 0.0 {
                    push_atom(&mut atoms, a.x, [w * a.mass[0], w * a.mass[1]]);
                }
            }
        }
        Ok(Self::assemble(segments, atoms))
    }

    fn assemble(mut segments: Vec<Segment>, mut atoms: Vec<Atom>) -> Self {
        segments.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        atoms.sort_by(|a, b| a.x.total_cmp(&b.x));

        let mut support: Vec<(f64, f64)> = Vec::new();
        for g in &segments {
            match support.last_mut() {
                Some(last) if g.lo <= last.1 + LOC_EPS => last.1 = last.1.max(g.hi),
                _ => support.push((g.lo, g.hi)),
            }
        }
        for a in &atoms {
            if !support
                .iter()
                .any(|&(l, h)| a.x >= l - LOC_EPS && a.x <= h + LOC_EPS)
            {
                support.push((a.x, a.x));
            }
        }
        support.sort_by(|a, b| a.0.total_cmp(&b.0));
        let x_lo = support.first().map_or(0.0, |s| s.0);
        let x_hi = support.last().map_or(1.0, |s| s.1);
        SignalStructure {
            segments,
            atoms,
            support,
            x_lo,
            x_hi,
        }
    }

    /// Disjoint closed intervals carrying mass, in increasing order.
    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    pub fn x_lo(&self) -> f64 {
        self.x_lo
    }

    pub fn x_hi(&self) -> f64 {
        self.x_hi
    }

    /// Locations of point masses.
    pub fn atom_locations(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.x).collect()
    }

    /// All segment endpoints and atom locations, sorted.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .segments
            .iter()
            .flat_map(|g| [g.lo, g.hi])
            .chain(self.atoms.iter().map(|a| a.x))
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() <= LOC_EPS);
        v
    }

    pub fn in_support(&self, x: f64) -> bool {
        self.support
            .iter()
            .any(|&(l, h)| x >= l - LOC_EPS && x <= h + LOC_EPS)
    }

    pub(crate) fn atom_at(&self, x: f64) -> Option<&Atom> {
        self.atoms.iter().find(|a| (a.x - x).abs() <= LOC_EPS)
    }

    pub fn has_atom_at(&self, x: f64) -> bool {
        self.atom_at(x).is_some()
    }

    /// `G_state(x)`, right-continuous.
    pub fn cdf(&self, state: State, x: f64) -> f64 {
        if x < self.x_lo - LOC_EPS {
            return 0.0;
        }
        if x >= self.x_hi {
            return 1.0;
        }
        let i = state.index();
        let cont: f64 = self.segments.iter().map(|g| g.mass_below(state, x)).sum();
        let disc: f64 = self
            .atoms
            .iter()
            .filter(|a| a.x <= x + LOC_EPS)
            .map(|a| a.mass[i])
            .sum();
        (cont + disc).min(1.0)
    }

    /// `1 - G_state(x)`: mass strictly above `x`, summed directly.
    pub fn tail(&self, state: State, x: f64) -> f64 {
        if x >= self.x_hi {
            return 0.0;
        }
        let i = state.index();
        let cont: f64 = self.segments.iter().map(|g| g.mass_above(state, x)).sum();
        let disc: f64 = self
            .atoms
            .iter()
            .filter(|a| a.x > x + LOC_EPS)
            .map(|a| a.mass[i])
            .sum();
        (cont + disc).min(1.0)
    }

    /// Mass strictly below `x` (the left limit of the CDF).
    pub fn cdf_left(&self, state: State, x: f64) -> f64 {
        let i = state.index();
        let cont: f64 = self.segments.iter().map(|g| g.mass_below(state, x)).sum();
        let disc: f64 = self
            .atoms
            .iter()
            .filter(|a| a.x < x - LOC_EPS)
            .map(|a| a.mass[i])
            .sum();
        (cont + disc).min(1.0)
    }

    /// Segment governing `x`: the one starting at `x` wins at interior
    /// breakpoints, the one ending at `x` at the right end of an interval.
    pub(crate) fn segment_at(&self, x: f64) -> Option<&Segment> {
        self.segments
            .iter()
            .find(|g| x >= g.lo - LOC_EPS && x < g.hi - LOC_EPS)
            .or_else(|| self.segments.iter().rev().find(|g| g.contains(x)))
    }

    /// Density of the continuous part at `x`, or `None` off its support.
    pub fn density(&self, state: State, x: f64) -> Option<f64> {
        self.segment_at(x).map(|g| g.density(state, x))
    }

    /// `g1(x) / g0(x)`; point masses take precedence over densities.
    pub fn likelihood_ratio(&self, x: f64) -> Result<f64> {
        let lr = if let Some(a) = self.atom_at(x) {
            a.likelihood_ratio()
        } else if let Some(g) = self.segment_at(x) {
            ratio(g.density(State::One, x), g.density(State::Zero, x))
        } else {
            return Err(Error::Domain {
                what: "likelihood ratio (outside support)",
                x,
            });
        };
        if lr.is_nan() {
            return Err(Error::Domain {
                what: "likelihood ratio (both densities vanish)",
                x,
            });
        }
        Ok(lr)
    }

    /// Likelihood ratio at the bottom of the support (right limit).
    pub fn lr_lower_edge(&self) -> f64 {
        self.likelihood_ratio(self.x_lo).unwrap_or(f64::NAN)
    }

    /// Likelihood ratio at the top of the support (left limit).
    pub fn lr_upper_edge(&self) -> f64 {
        if let Some(a) = self.atom_at(self.x_hi) {
            return a.likelihood_ratio();
        }
        self.segments
            .iter()
            .rev()
            .find(|g| g.contains(self.x_hi))
            .map_or(f64::NAN, |g| {
                ratio(
                    g.density(State::One, self.x_hi),
                    g.density(State::Zero, self.x_hi),
                )
            })
    }

    /// `sup { x in support : g1(x) <= r g0(x) }` with `r = exp(log_r)`,
    /// or `None` when the set is empty.
    pub fn sup_lr_at_most(&self, log_r: f64) -> Option<f64> {
        let r = log_r.exp();
        let mut best: Option<f64> = None;
        let mut take = |x: f64| best = Some(best.map_or(x, |b: f64| b.max(x)));
        for g in &self.segments {
            let h = |x: f64| g.density(State::One, x) - r * g.density(State::Zero, x);
            let (h_lo, h_hi) = (h(g.lo), h(g.hi));
            if h_hi <= 0.0 {
                take(g.hi);
            } else if h_lo <= 0.0 {
                let t = h_lo / (h_lo - h_hi);
                take(g.lo + t * (g.hi - g.lo));
            }
        }
        for a in &self.atoms {
            let lr = a.likelihood_ratio();
            if lr == 0.0 || lr.ln() <= log_r + TIE_TOL {
                take(a.x);
            }
        }
        best
    }

    /// Checks that `g1 / g0` is nondecreasing on the support, on a grid of
    /// 2048 points per support interval plus every breakpoint (one-sided at
    /// density jumps). Atoms are checked against each other.
    pub fn check_mlrp(&self) -> Result<()> {
        let mut pts: Vec<(f64, f64, f64)> = Vec::new();
        for g in &self.segments {
            let span = self
                .support
                .iter()
                .find(|&&(l, h)| g.lo >= l - LOC_EPS && g.hi <= h + LOC_EPS)
                .map_or(g.hi - g.lo, |&(l, h)| h - l);
            let n = (((g.hi - g.lo) / span) * MLRP_GRID as f64).ceil().max(2.0) as usize;
            for k in 0..=n {
                let x = g.lo + (g.hi - g.lo) * k as f64 / n as f64;
                pts.push((x, g.density(State::Zero, x), g.density(State::One, x)));
            }
        }
        if let Some(v) = first_decrease(&pts) {
            return Err(v);
        }
        let atoms: Vec<_> = self
            .atoms
            .iter()
            .map(|a| (a.x, a.mass[0], a.mass[1]))
            .collect();
        match first_decrease(&atoms) {
            Some(v) => Err(v),
            None => Ok(()),
        }
    }

    /// Draws a type from `g_state` by inverting the piecewise-quadratic CDF.
    pub fn sample_type<R: Rng + ?Sized>(&self, state: State, rng: &mut R) -> f64 {
        let i = state.index();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut ai = 0;
        let mut last = self.x_hi;
        for g in &self.segments {
            while ai < self.atoms.len() && self.atoms[ai].x <= g.lo {
                acc += self.atoms[ai].mass[i];
                if u < acc {
                    return self.atoms[ai].x;
                }
                ai += 1;
            }
            let m = g.mass[i];
            if m > 0.0 && u < acc + m {
                return invert_segment(g, i, u - acc);
            }
            acc += m;
            last = g.hi;
        }
        for a in &self.atoms[ai..] {
            acc += a.mass[i];
            last = a.x;
            if u < acc {
                return a.x;
            }
        }
        last
    }
}

fn invert_segment(g: &Segment, i: usize, target: f64) -> f64 {
    let a = g.dens[i][0];
    let w = g.hi - g.lo;
    let slope = (g.dens[i][1] - a) / w;
    // solve a d + slope d^2 / 2 = target for the root in [0, w]
    let disc = (a * a + 2.0 * slope * target).max(0.0);
    let den = a + disc.sqrt();
    let d = if den > 0.0 { 2.0 * target / den } else { w };
    g.lo + d.clamp(0.0, w)
}

fn push_atom(atoms: &mut Vec<Atom>, x: f64, mass: [f64; 2]) {
    if let Some(a) = atoms.iter_mut().find(|a| (a.x - x).abs() <= LOC_EPS) {
        a.mass[0] += mass[0];
        a.mass[1] += mass[1];
    } else {
        atoms.push(Atom { x, mass });
    }
}

fn check_weights(ws: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for w in ws {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidSpec(format!(
                "{what} weight {w} outside [0, 1]"
            )));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidSpec(format!(
            "{what} weights sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// First point whose likelihood ratio drops below an earlier one.
fn first_decrease(pts: &[(f64, f64, f64)]) -> Option<Error> {
    let mut best: Option<(f64, f64, f64)> = None;
    for &(x, d0, d1) in pts {
        if d0 <= 0.0 {
            continue;
        }
        if let Some((bx, b0, b1)) = best {
            if b1 * d0 > d1 * b0 + 1e-12 {
                return Some(Error::MlrpViolation {
                    x: bx,
                    y: x,
                    lr_x: b1 / b0,
                    lr_y: d1 / d0,
                });
            }
            if d1 * b0 > b1 * d0 {
                best = Some((x, d0, d1));
            }
        } else {
            best = Some((x, d0, d1));
        }
    }
    None
}
