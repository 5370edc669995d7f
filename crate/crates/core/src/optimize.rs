//! Bounded scalar minimization: golden-section search with parabolic
//! interpolation steps (Brent's method).

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
}

const GOLDEN: f64 = 0.381_966_011_250_105_1; // (3 - sqrt 5) / 2

/// Minimizes `f` on `[lo, hi]` to absolute tolerance `xtol` in `x`.
pub fn minimize_bounded<F>(mut f: F, lo: f64, hi: f64, xtol: f64, max_iter: usize) -> Minimum
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let eps = f64::EPSILON.sqrt();
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);

    let mut it = 0;
    while it < max_iter {
        let m = 0.5 * (a + b);
        let tol1 = eps * x.abs() + xtol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        it += 1;

        let mut golden = true;
        if e.abs() > tol1 {
            // parabola through (v, fv), (w, fw), (x, fx)
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }

        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);

        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }

    // endpoints are not probed by the interior search
    let mut best = Minimum {
        x,
        value: fx,
        iterations: it,
    };
    for end in [lo, hi] {
        let fe = f(end);
        if fe < best.value {
            best = Minimum {
                x: end,
                value: fe,
                iterations: it,
            };
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let m = minimize_bounded(|x| (x - 0.7).powi(2), 0.5, 1.0, 1e-10, 200);
        assert!((m.x - 0.7).abs() < 1e-8);
    }

    #[test]
    fn non_smooth_and_boundary() {
        let m = minimize_bounded(|x: f64| (x - 0.3).abs(), 0.0, 1.0, 1e-10, 500);
        assert!((m.x - 0.3).abs() < 1e-8);
        let m = minimize_bounded(|x| x, 0.5, 1.0, 1e-10, 200);
        assert_eq!(m.x, 0.5);
    }

    #[test]
    fn matches_grid_search() {
        let f = |x: f64| (3.0 * x).sin() + 0.5 * x * x;
        let m = minimize_bounded(f, -1.0, 0.5, 1e-10, 200);
        let grid = (0..=150_000)
            .map(|k| -1.0 + 1.5 * k as f64 / 150_000.0)
            .min_by(|a, b| f(*a).total_cmp(&f(*b)))
            .unwrap();
        assert!((m.x - grid).abs() < 1e-4);
    }
}
