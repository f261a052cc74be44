//! One-dimensional search helpers used by the profile and interval code.
//! Objective values of `-inf` mark infeasible points.

const GOLDEN: f64 = 0.381_966_011_250_105_1;
const MAX_ITER: usize = 200;

/// Brent's parabolic/golden-section maximization of `f` on `[a, b]`, started
/// from an interior point `x0` with known finite value `f0`. Returns the
/// maximizer and its value; the location is accurate to about `tol`.
pub(crate) fn brent_max(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    x0: f64,
    f0: f64,
    tol: f64,
) -> (f64, f64) {
    // Minimize the negated objective; -inf becomes +inf.
    let (mut a, mut b) = (a.min(b), a.max(b));
    let (mut x, mut w, mut v) = (x0, x0, x0);
    let (mut fx, mut fw, mut fv) = (-f0, -f0, -f0);
    let (mut d, mut e) = (0.0_f64, 0.0_f64);
    for _ in 0..MAX_ITER {
        let xm = 0.5 * (a + b);
        let tol1 = 1e-10 * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 && fx.is_finite() && fw.is_finite() && fv.is_finite() {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1.copysign(d)
        };
        let fu = -f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, -fx)
}

/// Maximize a concave (possibly `-inf` outside a convex domain) function.
///
/// The search starts at the first probe with a finite value, brackets the
/// maximum with a window of `half_width` that is doubled up to `expansions`
/// times while the maximum sits at its edge, and refines with [`brent_max`].
/// Returns `None` when every probe is infeasible.
pub(crate) fn maximize_concave(
    mut f: impl FnMut(f64) -> f64,
    probes: &[f64],
    half_width: f64,
    expansions: usize,
    tol: f64,
) -> Option<(f64, f64)> {
    let (mut x, mut fx) = probes
        .iter()
        .map(|&p| (p, f(p)))
        .find(|(_, v)| v.is_finite())?;
    let mut step = half_width;
    let (mut a, mut b) = (x - step, x + step);
    let (mut fa, mut fb) = (f(a), f(b));
    // Walk toward the higher side until the centre beats both ends.
    for _ in 0..expansions {
        if fa > fx {
            (b, fb, x, fx) = (x, fx, a, fa);
            step *= 2.0;
            a = x - step;
            fa = f(a);
        } else if fb > fx {
            (a, fa, x, fx) = (x, fx, b, fb);
            step *= 2.0;
            b = x + step;
            fb = f(b);
        } else {
            break;
        }
    }
    // Still unbracketed: the best point seen is on the window edge.
    if fa > fx {
        return Some((a, fa));
    }
    if fb > fx {
        return Some((b, fb));
    }
    Some(brent_max(f, a, b, x, fx, tol))
}

/// Bisection for the crossing of `f` through `level` between `inside`
/// (where `f > level`) and `outside` (where `f <= level`, including `-inf`).
pub(crate) fn bisect_crossing(
    mut f: impl FnMut(f64) -> f64,
    level: f64,
    mut inside: f64,
    mut outside: f64,
    tol: f64,
) -> f64 {
    for _ in 0..MAX_ITER {
        if (outside - inside).abs() <= tol {
            break;
        }
        let mid = 0.5 * (inside + outside);
        if f(mid) > level {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    0.5 * (inside + outside)
}
