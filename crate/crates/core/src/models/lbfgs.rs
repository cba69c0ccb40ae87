//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The search direction comes from the usual two-loop recursion over the
//! last `memory` curvature pairs, scaled by `s'y / y'y`. Steps are chosen by
//! a bracketing + zoom line search with cubic interpolation; a step is only
//! taken when it does not increase the objective.

use std::collections::VecDeque;

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once the largest absolute gradient entry is at most this.
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 1000,
            grad_tol: 1e-4,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOutcome<F> {
    pub x: Array1<F>,
    pub value: F,
    pub grad_max_norm: F,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<F>,
}

fn max_norm<F: Scalar>(g: &Array1<F>) -> F {
    g.iter().fold(F::zero(), |m, v| m.max(v.abs()))
}

fn check_finite<F: Scalar>(f: F, g: &Array1<F>) -> Result<()> {
    if !f.is_finite() {
        return Err(Error::Numerical(format!("objective is not finite ({})", f.to_f64_lossy())));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("gradient is not finite".into()));
    }
    Ok(())
}

/// Minimizer of the cubic through `(x1, f1, g1)` and `(x2, f2, g2)`,
/// clamped to `bounds` (or the interval between the points).
fn cubic_interpolate<F: Scalar>(x1: F, f1: F, g1: F, x2: F, f2: F, g2: F, bounds: Option<(F, F)>) -> F {
    let (lo, hi) = bounds.unwrap_or(if x1 <= x2 { (x1, x2) } else { (x2, x1) });
    let three = F::of(3.0);
    let two = F::of(2.0);
    let d1 = g1 + g2 - three * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= F::zero() {
        let d2 = d2_sq.sqrt();
        let pos = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + two * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + two * d2))
        };
        if pos.is_finite() {
            return pos.max(lo).min(hi);
        }
    }
    (lo + hi) / two
}

struct Trial<F> {
    t: F,
    f: F,
    g: Array1<F>,
    gtd: F,
}

/// Strong-Wolfe line search along `d` from `x`. Returns the accepted trial;
/// its `t` may be zero when no acceptable point is found.
fn strong_wolfe<F: Scalar>(
    obj: &mut impl FnMut(&Array1<F>) -> (F, Array1<F>),
    x: &Array1<F>,
    f0: F,
    g0: &Array1<F>,
    d: &Array1<F>,
    t_init: F,
    cfg: &LbfgsConfig,
) -> Trial<F> {
    let c1 = F::of(cfg.c1);
    let c2 = F::of(cfg.c2);
    let gtd0 = g0.dot(d);
    let d_norm = max_norm(d);
    let tol_change = F::of(1e-9);
    let mut eval = |t: F| -> Trial<F> {
        let xt = x + &(d * t);
        let (f, g) = obj(&xt);
        let gtd = g.dot(d);
        Trial { t, f, g, gtd }
    };

    let mut prev = Trial {
        t: F::zero(),
        f: f0,
        g: g0.clone(),
        gtd: gtd0,
    };
    let mut cur = eval(t_init);
    let mut ls_iter = 1;
    let mut br = loop {
        if ls_iter >= cfg.max_line_search {
            let start = Trial {
                t: F::zero(),
                f: f0,
                g: g0.clone(),
                gtd: gtd0,
            };
            break [start, cur];
        }
        if !cur.f.is_finite() {
            // overshoot into overflow; shrink toward the previous point
            let t = (prev.t + cur.t) / F::of(2.0);
            cur = eval(t);
            ls_iter += 1;
            continue;
        }
        if cur.f > f0 + c1 * cur.t * gtd0 || (ls_iter > 1 && cur.f >= prev.f) {
            break [prev, cur];
        }
        if cur.gtd.abs() <= -c2 * gtd0 {
            return cur;
        }
        if cur.gtd >= F::zero() {
            break [prev, cur];
        }
        let min_step = cur.t + F::of(0.01) * (cur.t - prev.t);
        let max_step = cur.t * F::of(10.0);
        let t = cubic_interpolate(prev.t, prev.f, prev.gtd, cur.t, cur.f, cur.gtd, Some((min_step, max_step)));
        prev = cur;
        cur = eval(t);
        ls_iter += 1;
    };

    let mut insufficient = false;
    let mut low = if br[0].f <= br[1].f { 0 } else { 1 };
    while ls_iter < cfg.max_line_search {
        let high = 1 - low;
        if (br[1].t - br[0].t).abs() * d_norm < tol_change {
            break;
        }
        let mut t = cubic_interpolate(br[0].t, br[0].f, br[0].gtd, br[1].t, br[1].f, br[1].gtd, None);
        let bmax = br[0].t.max(br[1].t);
        let bmin = br[0].t.min(br[1].t);
        let eps = F::of(0.1) * (bmax - bmin);
        if (bmax - t).min(t - bmin) < eps {
            if insufficient || t >= bmax || t <= bmin {
                t = if (t - bmax).abs() < (t - bmin).abs() {
                    bmax - eps
                } else {
                    bmin + eps
                };
                insufficient = false;
            } else {
                insufficient = true;
            }
        } else {
            insufficient = false;
        }
        let trial = eval(t);
        ls_iter += 1;
        if !trial.f.is_finite() || trial.f > f0 + c1 * t * gtd0 || trial.f >= br[low].f {
            br[high] = trial;
        } else {
            if trial.gtd.abs() <= -c2 * gtd0 {
                return trial;
            }
            if trial.gtd * (br[high].t - br[low].t) >= F::zero() {
                // old low becomes the high end
                br.swap(0, 1);
            }
            br[low] = trial;
        }
        low = if br[0].f <= br[1].f { 0 } else { 1 };
    }
    let [a, b] = br;
    if a.f <= b.f {
        a
    } else {
        b
    }
}

/// Two-loop recursion: returns `-H g`.
fn direction<F: Scalar>(g: &Array1<F>, pairs: &VecDeque<(Array1<F>, Array1<F>, F)>) -> Array1<F> {
    let mut q = g.mapv(|v| -v);
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = *rho * s.dot(&q);
        q.scaled_add(-a, y);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = s.dot(y) / y.dot(y);
        q.mapv_inplace(|v| v * gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = *rho * y.dot(&q);
        q.scaled_add(a - b, s);
    }
    q
}

/// Minimizes `obj`, which returns the value and gradient at a point.
pub fn minimize<F: Scalar>(
    mut obj: impl FnMut(&Array1<F>) -> (F, Array1<F>),
    x0: Array1<F>,
    cfg: &LbfgsConfig,
) -> Result<LbfgsOutcome<F>> {
    if cfg.memory == 0 {
        return Err(Error::InvalidArgument("L-BFGS memory must be positive".into()));
    }
    let tol = F::of(cfg.grad_tol);
    let mut x = x0;
    let (mut f, mut g) = obj(&x);
    check_finite(f, &g)?;
    let mut pairs: VecDeque<(Array1<F>, Array1<F>, F)> = VecDeque::with_capacity(cfg.memory);
    let mut history = vec![f];
    let mut iterations = 0;
    let mut converged = max_norm(&g) <= tol;

    while !converged && iterations < cfg.max_iter {
        let mut d = direction(&g, &pairs);
        let mut gtd = g.dot(&d);
        if !(gtd < F::zero()) {
            pairs.clear();
            d = g.mapv(|v| -v);
            gtd = g.dot(&d);
        }
        if gtd == F::zero() {
            break;
        }
        let t0 = if pairs.is_empty() {
            let l1 = g.iter().fold(F::zero(), |a, v| a + v.abs());
            F::one().min(F::one() / l1)
        } else {
            F::one()
        };
        let trial = strong_wolfe(&mut obj, &x, f, &g, &d, t0, cfg);
        if trial.t == F::zero() || !trial.f.is_finite() || trial.f > f {
            break;
        }
        check_finite(trial.f, &trial.g)?;
        let s = &d * trial.t;
        let y = &trial.g - &g;
        let ys = y.dot(&s);
        if ys > F::epsilon() * y.dot(&y).max(F::min_positive_value()) {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s.clone(), y, F::one() / ys));
        }
        x += &s;
        let f_prev = f;
        f = trial.f;
        g = trial.g;
        history.push(f);
        iterations += 1;
        converged = max_norm(&g) <= tol;
        let scale = f.abs().max(f_prev.abs()).max(F::one());
        if !converged && (f_prev - f).abs() <= F::epsilon() * scale && max_norm(&s) <= F::epsilon() {
            break;
        }
    }
    Ok(LbfgsOutcome {
        grad_max_norm: max_norm(&g),
        x,
        value: f,
        iterations,
        converged,
        history,
    })
}
