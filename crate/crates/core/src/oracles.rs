//! Reference computations that share no contraction or quadrature kernel with the
//! engine: Gauss–Legendre quadrature, the analytic independent-boson solution, an
//! exhaustive Liouville path sum and central finite differences.
//!
//! # Discrete dephasing
//!
//! With a diagonal coupling operator and diagonal propagators (h_x = 0) every
//! Liouville index is conserved along a path, so only one path contributes to a
//! given output element. For the coherence of `s_z` coupling, `s⁺ = ±1/2`,
//! `s⁻ = ∓1/2` and `δ = s⁺ − s⁻ = ±1`, so each gate exponent reduces to
//! `−δ(η s⁺ − η* s⁻) = −Re η`. Counting the pairs at lag Δ among n steps gives
//!
//! `|ρ₀₁(n)| / |ρ₀₁(0)| = exp(−Σ_{Δ=0}^{min(n−1, K)} (n − Δ) Re η_Δ)`,
//!
//! which, without memory truncation, equals `exp(−Γ(n dt))` exactly.

use std::f64::consts::PI;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bath::{eta_table, BathSpec};
use crate::error::{Error, Result};
use crate::gradient::GradientVector;
use crate::linalg::{C64, ONE, ZERO};
use crate::liouville::{self, DensityVector, SuperOperator};
use crate::propagation::ControlSchedule;

/// Largest number of steps accepted by [`brute_force_path_sum`].
pub const MAX_PATH_SUM_STEPS: usize = 8;

/// Nodes and weights of the n-point Gauss–Legendre rule on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    (p1, nf * (x * p1 - p0) / (x * x - 1.0))
}

struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Rule {
    fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        Rule { nodes, weights }
    }

    fn apply(&self, f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        half * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
    }
}

/// Recursive bisection with a 20-point Gauss–Legendre rule until the panel and its
/// halves agree within the panel's share of `abs_tol`.
pub fn adaptive_gauss_legendre(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    let rule = Rule::new(20);
    let span = b - a;
    let mut total = 0.0;
    let mut stack = vec![(a, b, rule.apply(&mut f, a, b), 0u32)];
    while let Some((lo, hi, whole, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = rule.apply(&mut f, lo, mid);
        let right = rule.apply(&mut f, mid, hi);
        let refined = left + right;
        if !refined.is_finite() {
            return Err(Error::NonFinite("oracle quadrature integrand".into()));
        }
        if (refined - whole).abs() <= abs_tol * (hi - lo) / span {
            total += refined;
        } else if depth >= 40 {
            return Err(Error::Quadrature {
                what: "oracle Gauss-Legendre".into(),
                estimate: total + refined,
                error: (refined - whole).abs(),
                evaluations: 0,
            });
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }
    Ok(total)
}

/// Spectral density recomputed from the bath parameters.
fn density(bath: &BathSpec, w: f64) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    2.0 * bath.alpha * w.powf(bath.power) * bath.omega_c.powf(1.0 - bath.power) * (-(w / bath.omega_c).powi(2)).exp()
}

/// `J(ω) coth(ω/2ν_T)`.
fn thermal(bath: &BathSpec, w: f64) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    if bath.nu_t == 0.0 {
        return density(bath, w);
    }
    let x = w / (2.0 * bath.nu_t);
    density(bath, w) * (if x > 20.0 { 1.0 } else { 1.0 / x.tanh() })
}

fn upper_frequency(bath: &BathSpec) -> f64 {
    12.0 * bath.omega_c
}

fn require_sz_coupling(bath: &BathSpec) -> Result<()> {
    let sz = liouville::spin_z();
    let off = bath
        .coupling_operator
        .iter()
        .zip(sz.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0f64, f64::max);
    if bath.coupling_operator.dim() != (2, 2) || off > 1e-14 {
        return Err(Error::Precondition("independent-boson oracle needs s_z coupling".into()));
    }
    Ok(())
}

/// `Γ(t) = ∫ J(ω) coth(ω/2ν_T) (1 − cos ωt)/ω² dω`.
pub fn decoherence_function(bath: &BathSpec, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time must be non-negative, got {t}")));
    }
    let integrand = |w: f64| {
        if w <= 0.0 {
            return 0.0;
        }
        // 1 − cos ωt = 2 sin²(ωt/2), free of cancellation
        let s = (0.5 * w * t).sin();
        thermal(bath, w) * 2.0 * s * s / (w * w)
    };
    adaptive_gauss_legendre(integrand, 0.0, upper_frequency(bath), 1e-12)
}

/// Bloch-vector length `exp(−Γ(t))` of an initial equatorial state under h_x = 0.
pub fn independent_boson_coherence(bath: &BathSpec, t: f64) -> Result<f64> {
    require_sz_coupling(bath)?;
    Ok((-decoherence_function(bath, t)?).exp())
}

/// Closed-form coherence after `n` steps of the discretized influence functional
/// with memory window `memory_steps` (see the module docs).
pub fn discrete_dephasing(bath: &BathSpec, dt: f64, n: usize, memory_steps: usize) -> Result<f64> {
    require_sz_coupling(bath)?;
    let k = memory_steps.min(n.saturating_sub(1));
    let table = eta_table(bath, dt, k.max(1))?;
    let exponent: f64 = (0..=k).map(|lag| (n - lag) as f64 * table.eta[lag].re).sum();
    Ok((-exponent).exp())
}

/// `C(t)` by direct Gauss–Legendre integration over frequency.
fn correlation_gl(bath: &BathSpec, t: f64) -> Result<C64> {
    let re = adaptive_gauss_legendre(|w| thermal(bath, w) * (w * t).cos(), 0.0, upper_frequency(bath), 1e-13)?;
    let im = adaptive_gauss_legendre(|w| -density(bath, w) * (w * t).sin(), 0.0, upper_frequency(bath), 1e-13)?;
    Ok(C64::new(re, im))
}

/// η at lag `k` as a double time integral of `C(t)`: over the triangle
/// `0 ≤ t'' ≤ t' ≤ dt` for k = 0, over `[k dt, (k+1) dt] × [0, dt]` otherwise.
pub fn eta_by_time_integration(bath: &BathSpec, dt: f64, k: usize) -> Result<C64> {
    let rule = Rule::new(24);
    let half = 0.5 * dt;
    let mut acc = ZERO;
    for (xo, wo) in rule.nodes.iter().zip(&rule.weights) {
        let outer = if k == 0 { half * (1.0 + xo) } else { (k as f64 + 0.5 + 0.5 * xo) * dt };
        let (lo, hi) = if k == 0 { (0.0, outer) } else { (0.0, dt) };
        let ih = 0.5 * (hi - lo);
        let im = 0.5 * (hi + lo);
        for (xi, wi) in rule.nodes.iter().zip(&rule.weights) {
            let inner = im + ih * xi;
            acc += correlation_gl(bath, outer - inner)? * (wo * half * wi * ih);
        }
    }
    Ok(acc)
}

/// Exhaustive sum over all Liouville paths of the discretized influence functional,
/// interleaved with `props`: `ρ_f = U_N F_N U_{N−1} … U_1 F_1 ρ₀` where `F` carries the
/// gates between the path variables entering each step. Gates beyond `memory_steps`
/// are dropped. Requires a diagonal coupling operator.
pub fn brute_force_path_sum(
    bath: &BathSpec,
    dt: f64,
    memory_steps: usize,
    props: &[SuperOperator],
    rho0: &DensityVector,
) -> Result<DensityVector> {
    let n = props.len();
    if n == 0 || n > MAX_PATH_SUM_STEPS {
        return Err(Error::Precondition(format!(
            "path sum supports 1 to {MAX_PATH_SUM_STEPS} steps, got {n}"
        )));
    }
    let op = &bath.coupling_operator;
    let d = op.nrows();
    if rho0.dim() != d || props.iter().any(|u| u.dim() != d) {
        return Err(Error::Dimension("path sum inputs disagree on the system dimension".into()));
    }
    if op.indexed_iter().any(|((i, j), z)| i != j && *z != ZERO) {
        return Err(Error::Precondition("path sum needs a diagonal coupling operator".into()));
    }
    let dd = d * d;
    let plus: Vec<f64> = (0..dd).map(|a| op[(a % d, a % d)].re).collect();
    let minus: Vec<f64> = (0..dd).map(|a| op[(a / d, a / d)].re).collect();
    let k = memory_steps.max(1);
    let eta = eta_table(bath, dt, k)?.eta;
    let gate = |later: usize, earlier: usize, lag: usize| -> C64 {
        if lag > k {
            return ONE;
        }
        let delta = plus[later] - minus[later];
        (-(delta * (eta[lag] * plus[earlier] - eta[lag].conj() * minus[earlier]))).exp()
    };

    let mut out = vec![ZERO; dd];
    let mut path = vec![0usize; n];
    // iterative odometer over α_1 … α_N
    let total = dd.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % dd;
            c /= dd;
        }
        let mut w = rho0.entries()[path[0]];
        if w == ZERO {
            continue;
        }
        for m in 0..n {
            if m > 0 {
                w *= props[m - 1].matrix()[(path[m], path[m - 1])];
            }
            w *= gate(path[m], path[m], 0);
            for e in 0..m {
                w *= gate(path[m], path[e], m - e);
            }
            if w == ZERO {
                break;
            }
        }
        if w == ZERO {
            continue;
        }
        let last = props[n - 1].matrix();
        for (s, o) in out.iter_mut().enumerate() {
            *o += last[(s, path[n - 1])] * w;
        }
    }
    DensityVector::from_entries(d, ndarray::Array1::from(out))
}

/// Central differences of `objective` in every control parameter. Perturbed
/// schedules may step past the bounds by `step`.
pub fn finite_difference_gradient(
    mut objective: impl FnMut(&ControlSchedule) -> Result<f64>,
    sched: &ControlSchedule,
    step: f64,
) -> Result<GradientVector> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Precondition(format!("step must be positive, got {step}")));
    }
    let relaxed = ControlSchedule {
        hx_max: sched.hx_max + 2.0 * step,
        hz_max: sched.hz_max + 2.0 * step,
        ..sched.clone()
    };
    let base = relaxed.params();
    let mut grad = Vec::with_capacity(base.len());
    for a in 0..base.len() {
        let mut p = base.clone();
        p[a] = base[a] + step;
        let up = objective(&relaxed.with_params(&p)?)?;
        p[a] = base[a] - step;
        let down = objective(&relaxed.with_params(&p)?)?;
        grad.push((up - down) / (2.0 * step));
    }
    Ok(GradientVector::from_vec(&grad))
}

/// Largest componentwise error `|g − r| / max(|r_i|, 10⁻³‖r‖∞)`.
///
/// The floor keeps components where the reference nearly vanishes from dominating.
pub fn relative_gradient_error(computed: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    computed
        .iter()
        .zip(reference)
        .map(|(c, r)| (c - r).abs() / r.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Outcome of comparing a computation with an oracle.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub name: String,
    pub inputs_digest: String,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub pass: bool,
    pub tolerance: f64,
}

impl OracleReport {
    /// Compares elementwise; passes when the largest relative error is within `tolerance`.
    pub fn compare(
        name: &str,
        inputs: &impl Serialize,
        computed: &[f64],
        reference: &[f64],
        tolerance: f64,
    ) -> Result<Self> {
        if computed.len() != reference.len() {
            return Err(Error::Dimension(format!(
                "{} computed values vs {} reference values",
                computed.len(),
                reference.len()
            )));
        }
        let json = serde_json::to_vec(inputs)?;
        let inputs_digest = hex::encode(&Sha256::digest(&json)[..8]);
        let mut max_abs_err = 0.0f64;
        let mut max_rel_err = 0.0f64;
        for (c, r) in computed.iter().zip(reference) {
            let abs = (c - r).abs();
            max_abs_err = max_abs_err.max(abs);
            max_rel_err = max_rel_err.max(if *r == 0.0 { abs } else { abs / r.abs() });
        }
        let pass = max_rel_err.is_finite() && max_rel_err <= tolerance;
        Ok(OracleReport {
            name: name.to_string(),
            inputs_digest,
            max_abs_err,
            max_rel_err,
            pass,
            tolerance,
        })
    }
}
