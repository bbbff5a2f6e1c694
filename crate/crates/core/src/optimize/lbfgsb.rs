//! Limited-memory BFGS on a box.
//!
//! Each iteration fixes the variables that sit on a bound with the gradient
//! pushing outwards, builds a quasi-Newton direction on the remaining ones by the
//! two-loop recursion, and searches along the part of that ray that stays inside
//! the box. The line search enforces the strong Wolfe conditions; when the box
//! edge is reached first, sufficient decrease at the edge is accepted.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LINE_EVALS: usize = 40;
/// Number of consecutive iterations the relative objective change must stay below `f_tol`.
const F_TOL_WINDOW: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    GradientConverged,
    FConverged,
    MaxIters,
    LineSearchFailed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub memory_pairs: usize,
    /// Threshold on the ∞-norm of the projected gradient.
    pub grad_tol: f64,
    /// Threshold on the relative objective change over consecutive iterations.
    pub f_tol: f64,
    pub max_iters: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            memory_pairs: 10,
            grad_tol: 1e-9,
            f_tol: 1e-12,
            max_iters: 2000,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory_pairs < 1 {
            return Err(Error::Config("memory_pairs must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0 && self.f_tol > 0.0) {
            return Err(Error::Config("optimizer tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Result of a box-constrained minimization.
#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    /// Objective at the start and after every accepted step.
    pub f_history: Vec<f64>,
    /// Projected-gradient ∞-norm at the same points.
    pub pg_history: Vec<f64>,
    pub reason: TerminationReason,
}

fn project(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&x, &g), (&lo, &hi))| (project(x - g, lo, hi) - x).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Evaluator<F> {
    f: F,
}

impl<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> Evaluator<F> {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (f, g) = (self.f)(x)?;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("objective or gradient".into()));
        }
        Ok((f, g))
    }
}

struct Trial {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

/// Strong-Wolfe search for `φ(α) = f(x + α d)` on `(0, α_max]`.
#[allow(clippy::too_many_arguments)]
fn line_search<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>>(
    ev: &mut Evaluator<F>,
    x: &[f64],
    d: &[f64],
    (lower, upper): (&[f64], &[f64]),
    f0: f64,
    slope0: f64,
    alpha_init: f64,
    alpha_max: f64,
) -> Result<Option<Trial>> {
    let mut at = |alpha: f64| -> Result<Trial> {
        let point: Vec<f64> = x
            .iter()
            .zip(d)
            .zip(lower.iter().zip(upper))
            .map(|((x, d), (lo, hi))| project(x + alpha * d, *lo, *hi))
            .collect();
        let (f, g) = ev.eval(&point)?;
        let slope = dot(&g, d);
        Ok(Trial { alpha, f, g, slope })
    };
    let armijo = |t: &Trial| t.f <= f0 + C1 * t.alpha * slope0;
    let curvature = |t: &Trial| t.slope.abs() <= -C2 * slope0;

    let mut prev = Trial {
        alpha: 0.0,
        f: f0,
        g: Vec::new(),
        slope: slope0,
    };
    let mut alpha = alpha_init.min(alpha_max);
    let mut evals = 0;
    let (mut lo, mut hi) = loop {
        let t = at(alpha)?;
        evals += 1;
        if !armijo(&t) || (prev.alpha > 0.0 && t.f >= prev.f) {
            break (prev, t);
        }
        if curvature(&t) {
            return Ok(Some(t));
        }
        if t.slope >= 0.0 {
            break (t, prev);
        }
        if t.alpha >= alpha_max {
            // box edge: descent continues beyond it, sufficient decrease holds
            return Ok(Some(t));
        }
        if evals >= MAX_LINE_EVALS {
            return Ok(Some(t));
        }
        alpha = (2.0 * t.alpha).min(alpha_max);
        prev = t;
    };

    // zoom: lo satisfies sufficient decrease and has the lowest value seen so far
    while evals < MAX_LINE_EVALS {
        let (a, b) = (lo.alpha, hi.alpha);
        let width = (b - a).abs();
        if width <= 1e-16 * a.abs().max(b.abs()).max(1e-300) {
            break;
        }
        // safeguarded quadratic interpolation from lo's value and slope
        let denom = 2.0 * (hi.f - lo.f - lo.slope * (b - a));
        let mut trial = if denom > 0.0 {
            a - lo.slope * (b - a) * (b - a) / denom
        } else {
            0.5 * (a + b)
        };
        let (mn, mx) = (a.min(b), a.max(b));
        if !(trial > mn + 0.1 * width && trial < mx - 0.1 * width) {
            trial = 0.5 * (a + b);
        }
        let t = at(trial)?;
        evals += 1;
        if !armijo(&t) || t.f >= lo.f {
            hi = t;
        } else {
            if curvature(&t) {
                return Ok(Some(t));
            }
            if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    Ok((lo.alpha > 0.0).then_some(lo))
}

/// Minimizes `f` over the box `[lower, upper]` starting from `x0` (projected into the box).
pub fn minimize<F>(f: F, x0: &[f64], lower: &[f64], upper: &[f64], cfg: &OptimizerConfig) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::Dimension("bounds and start point differ in length".into()));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::Precondition("lower bound exceeds upper bound".into()));
    }
    let mut ev = Evaluator { f };
    let mut x: Vec<f64> = (0..n).map(|i| project(x0[i], lower[i], upper[i])).collect();
    let (mut fx, mut g) = ev.eval(&x)?;
    let mut f_history = vec![fx];
    let mut pg_history = vec![projected_gradient_norm(&x, &g, lower, upper)];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut small_changes = 0;
    let mut iterations = 0;

    let reason = loop {
        if *pg_history.last().expect("non-empty") < cfg.grad_tol {
            break TerminationReason::GradientConverged;
        }
        if iterations >= cfg.max_iters {
            break TerminationReason::MaxIters;
        }

        let free: Vec<bool> = (0..n)
            .map(|i| {
                let at_lower = x[i] <= lower[i] && g[i] > 0.0;
                let at_upper = x[i] >= upper[i] && g[i] < 0.0;
                !(at_lower || at_upper)
            })
            .collect();
        let mut d = two_loop(&g, &free, &pairs);
        // a quasi-Newton component may still point out of the box at a bound
        for i in 0..n {
            if (x[i] <= lower[i] && d[i] < 0.0) || (x[i] >= upper[i] && d[i] > 0.0) {
                d[i] = 0.0;
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
            slope = dot(&g, &d);
        }
        if !(slope < 0.0) {
            break TerminationReason::GradientConverged;
        }

        let mut alpha_max = f64::INFINITY;
        for i in 0..n {
            if d[i] > 0.0 {
                alpha_max = alpha_max.min((upper[i] - x[i]) / d[i]);
            } else if d[i] < 0.0 {
                alpha_max = alpha_max.min((lower[i] - x[i]) / d[i]);
            }
        }
        let alpha_init = if pairs.is_empty() {
            1.0 / d.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        } else {
            1.0
        };

        let Some(step) = line_search(&mut ev, &x, &d, (lower, upper), fx, slope, alpha_init, alpha_max)? else {
            break TerminationReason::LineSearchFailed;
        };
        let mut x_new: Vec<f64> = (0..n).map(|i| project(x[i] + step.alpha * d[i], lower[i], upper[i])).collect();
        let mut snapped = false;
        if step.alpha >= alpha_max {
            // land exactly on the bound that limited the step
            for i in 0..n {
                let to_bound = if d[i] > 0.0 {
                    (upper[i] - x[i]) / d[i]
                } else if d[i] < 0.0 {
                    (lower[i] - x[i]) / d[i]
                } else {
                    f64::INFINITY
                };
                if to_bound <= alpha_max {
                    let b = if d[i] > 0.0 { upper[i] } else { lower[i] };
                    snapped |= x_new[i] != b;
                    x_new[i] = b;
                }
            }
        }
        let (f_new, g_new) = if snapped { ev.eval(&x_new)? } else { (step.f, step.g) };
        if !(f_new < fx) {
            break TerminationReason::LineSearchFailed;
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if pairs.len() == cfg.memory_pairs {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }

        let rel = (fx - f_new).abs() / fx.abs().max(f_new.abs()).max(1.0);
        small_changes = if rel < cfg.f_tol { small_changes + 1 } else { 0 };
        x = x_new;
        fx = f_new;
        g = g_new;
        iterations += 1;
        f_history.push(fx);
        pg_history.push(projected_gradient_norm(&x, &g, lower, upper));
        if small_changes >= F_TOL_WINDOW {
            break TerminationReason::FConverged;
        }
    };

    Ok(Minimum {
        x,
        f: fx,
        iterations,
        f_history,
        pg_history,
        reason,
    })
}

/// `−H g` restricted to the free variables.
fn two_loop(g: &[f64], free: &[bool], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(x, &f)| if f { *x } else { 0.0 }).collect() };
    let mut q = mask(g);
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let s = mask(s);
        let y = mask(y);
        let a = rho * dot(&s, &q);
        q.iter_mut().zip(&y).for_each(|(q, y)| *q -= a * y);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let (s, y) = (mask(s), mask(y));
        let yy = dot(&y, &y);
        let sy = dot(&s, &y);
        if yy > 0.0 && sy > 0.0 {
            let gamma = sy / yy;
            q.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let s = mask(s);
        let y = mask(y);
        let b = rho * dot(&y, &q);
        q.iter_mut().zip(&s).for_each(|(q, s)| *q += (a - b) * s);
    }
    mask(&q).into_iter().map(|v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quadratic(center: Vec<f64>, scales: Vec<f64>) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> {
        move |x: &[f64]| {
            let f = x
                .iter()
                .zip(&center)
                .zip(&scales)
                .map(|((x, c), s)| 0.5 * s * (x - c).powi(2))
                .sum();
            let g = x.iter().zip(&center).zip(&scales).map(|((x, c), s)| s * (x - c)).collect();
            Ok((f, g))
        }
    }

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = x.len();
        let mut f = 0.0;
        let mut g = vec![0.0; n];
        for i in 0..n - 1 {
            let a = x[i + 1] - x[i] * x[i];
            let b = 1.0 - x[i];
            f += 100.0 * a * a + b * b;
            g[i] += -400.0 * x[i] * a - 2.0 * b;
            g[i + 1] += 200.0 * a;
        }
        Ok((f, g))
    }

    #[test]
    fn box_quadratic_lands_on_the_projected_center() {
        let center = vec![2.0, -3.0, 0.25, 0.9];
        let scales = vec![1.0, 10.0, 100.0, 0.5];
        let lower = vec![-1.0; 4];
        let upper = vec![1.0; 4];
        let m = minimize(quadratic(center, scales), &[0.0; 4], &lower, &upper, &OptimizerConfig::default()).unwrap();
        let expected = [1.0, -1.0, 0.25, 0.9];
        for (x, e) in m.x.iter().zip(expected) {
            assert!((x - e).abs() < 1e-8, "{:?}", m.x);
        }
        assert_eq!(m.x[0], 1.0);
        assert_eq!(m.x[1], -1.0);
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let cfg = OptimizerConfig::default();
        let m = minimize(rosenbrock, &[-1.2, 1.0], &[-10.0; 2], &[10.0; 2], &cfg).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn rosenbrock_on_a_box_excluding_the_minimum() {
        // with x ≤ 0.5 the minimum sits on the face x₀ = 0.5, x₁ = 0.25
        let cfg = OptimizerConfig::default();
        let m = minimize(rosenbrock, &[-1.0, -1.0], &[-2.0, -2.0], &[0.5, 2.0], &cfg).unwrap();
        assert_eq!(m.x[0], 0.5);
        assert!((m.x[1] - 0.25).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn higher_dimensional_rosenbrock_converges() {
        let cfg = OptimizerConfig::default();
        let x0 = vec![-1.0; 10];
        let m = minimize(rosenbrock, &x0, &[-5.0; 10], &[5.0; 10], &cfg).unwrap();
        assert!(m.f < 1e-10, "{}", m.f);
    }

    #[test]
    fn nan_objective_is_a_hard_error() {
        let r = minimize(|_: &[f64]| Ok((f64::NAN, vec![0.0])), &[0.0], &[-1.0], &[1.0], &OptimizerConfig::default());
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn iteration_cap_is_reported() {
        let cfg = OptimizerConfig {
            max_iters: 2,
            ..OptimizerConfig::default()
        };
        let m = minimize(rosenbrock, &[-1.2, 1.0], &[-10.0; 2], &[10.0; 2], &cfg).unwrap();
        assert_eq!(m.reason, TerminationReason::MaxIters);
        assert_eq!(m.iterations, 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn iterates_stay_feasible_and_history_decreases(
            center in proptest::collection::vec(-3.0f64..3.0, 5),
            scales in proptest::collection::vec(0.1f64..50.0, 5),
            start in proptest::collection::vec(-1.0f64..1.0, 5),
        ) {
            let lower = vec![-1.0; 5];
            let upper = vec![1.0; 5];
            let mut inner = quadratic(center.clone(), scales.clone());
            let mut feasible = true;
            let f = |x: &[f64]| {
                feasible &= x.iter().all(|v| (-1.0..=1.0).contains(v));
                inner(x)
            };
            let m = minimize(f, &start, &lower, &upper, &OptimizerConfig::default()).unwrap();
            prop_assert!(feasible);
            prop_assert!(m.f_history.windows(2).all(|w| w[1] <= w[0]));
            for (x, c) in m.x.iter().zip(&center) {
                prop_assert!((x - c.clamp(-1.0, 1.0)).abs() < 1e-6);
            }
        }

        #[test]
        fn runs_are_deterministic(start in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let cfg = OptimizerConfig::default();
            let a = minimize(rosenbrock, &start, &[-3.0; 4], &[3.0; 4], &cfg).unwrap();
            let b = minimize(rosenbrock, &start, &[-3.0; 4], &[3.0; 4], &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
