//! Fidelity maximization over piecewise-constant controls.

mod lbfgsb;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gradient::fidelity_gradient;
use crate::liouville::DensityVector;
use crate::process_tensor::ProcessTensorMPO;
use crate::propagation::ControlSchedule;

pub use lbfgsb::{minimize, Minimum, OptimizerConfig, TerminationReason};

/// Tolerance on `T / dt` being an integer.
const GRID_TOL: f64 = 1e-9;

/// Number of whole steps of length `dt` in `duration`, if commensurate.
pub fn steps_for_duration(duration: f64, dt: f64) -> Result<usize> {
    if !(duration > 0.0 && duration.is_finite() && dt > 0.0 && dt.is_finite()) {
        return Err(Error::Precondition(format!(
            "duration {duration} and step {dt} must be positive"
        )));
    }
    let n = (duration / dt).round();
    if n < 1.0 || (n * dt - duration).abs() > GRID_TOL {
        return Err(Error::Precondition(format!(
            "duration {duration} ps is not a whole number of {dt} ps steps"
        )));
    }
    Ok(n as usize)
}

/// Control B: `h_x ≡ 0`, `h_z ≡ π/T` when `T ≥ π/h_z^max`, otherwise `h_z ≡ h_z^max`.
pub fn control_b_schedule(duration: f64, dt: f64, hx_max: f64, hz_max: f64) -> Result<ControlSchedule> {
    let n = steps_for_duration(duration, dt)?;
    if !(hz_max > 0.0) {
        return Err(Error::Precondition("control B needs hz_max > 0".into()));
    }
    let speed_limit = PI / hz_max;
    let hz = if duration >= speed_limit {
        (PI / duration).min(hz_max)
    } else {
        hz_max
    };
    ControlSchedule::constant(dt, n, 0.0, hz, hx_max, hz_max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimizationResult {
    pub schedule: ControlSchedule,
    /// Final fidelity clipped to [0, 1].
    pub fidelity: f64,
    pub infidelity: f64,
    pub iterations: usize,
    pub grad_inf_norm_history: Vec<f64>,
    pub fidelity_history: Vec<f64>,
    pub termination_reason: TerminationReason,
}

/// Maximizes `Re Tr(σ ρ_f)` over all `h_x[n]`, `h_z[n]` within the schedule's bounds.
pub fn maximize_fidelity(
    pt: &ProcessTensorMPO,
    rho0: &DensityVector,
    target: &DensityVector,
    init: &ControlSchedule,
    cfg: &OptimizerConfig,
) -> Result<OptimizationResult> {
    init.validate()?;
    let (lower, upper) = init.bounds();
    let objective = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
        let sched = init.with_params(p)?;
        let (f, g) = fidelity_gradient(pt, &sched, rho0, target)?;
        Ok((1.0 - f, g.to_vec().into_iter().map(|v| -v).collect()))
    };
    let m = minimize(objective, &init.params(), &lower, &upper, cfg)?;
    let schedule = init.with_params(&m.x)?;
    let fidelity = (1.0 - m.f).clamp(0.0, 1.0);
    Ok(OptimizationResult {
        schedule,
        fidelity,
        infidelity: 1.0 - fidelity,
        iterations: m.iterations,
        grad_inf_norm_history: m.pg_history,
        fidelity_history: m.f_history.iter().map(|f| 1.0 - f).collect(),
        termination_reason: m.reason,
    })
}

/// Uniformly random schedule inside the bounds of `like`.
pub fn random_schedule(like: &ControlSchedule, rng: &mut impl Rng) -> ControlSchedule {
    let (lower, upper) = like.bounds();
    let p: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| if l < u { rng.gen_range(*l..=*u) } else { *l }).collect();
    like.with_params(&p).expect("sampled inside the bounds")
}

/// Outcome of an optimization from the given start plus random restarts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RestartOutcome {
    /// Best run; earlier runs win ties.
    pub best: OptimizationResult,
    /// Final fidelity of every run, the given start first.
    pub fidelities: Vec<f64>,
}

/// Runs [`maximize_fidelity`] from `init` and from `restarts` uniformly random
/// starts drawn from a ChaCha stream seeded with `seed`.
pub fn maximize_with_restarts(
    pt: &ProcessTensorMPO,
    rho0: &DensityVector,
    target: &DensityVector,
    init: &ControlSchedule,
    cfg: &OptimizerConfig,
    restarts: usize,
    seed: u64,
) -> Result<RestartOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = maximize_fidelity(pt, rho0, target, init, cfg)?;
    let mut fidelities = vec![best.fidelity];
    for _ in 0..restarts {
        let start = random_schedule(init, &mut rng);
        let run = maximize_fidelity(pt, rho0, target, &start, cfg)?;
        fidelities.push(run.fidelity);
        if run.fidelity > best.fidelity {
            best = run;
        }
    }
    Ok(RestartOutcome { best, fidelities })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::BathSpec;
    use crate::liouville::BlochVector;
    use crate::process_tensor::{build_pt, CompressionConfig};

    fn states() -> (DensityVector, DensityVector) {
        (
            DensityVector::from_bloch(BlochVector::new(-1.0, 0.0, 0.0)),
            DensityVector::from_bloch(BlochVector::new(1.0, 0.0, 0.0)),
        )
    }

    #[test]
    fn control_b_examples() {
        let s = control_b_schedule(4.0, 0.05, 5.0, 1.0).unwrap();
        assert_eq!(s.n_steps(), 80);
        assert!(s.hz.iter().all(|h| (h - PI / 4.0).abs() < 1e-15) && s.hx.iter().all(|h| *h == 0.0));
        let s = control_b_schedule(2.0, 0.05, 5.0, 1.0).unwrap();
        assert!(s.hz.iter().all(|h| *h == 1.0));
        let s = control_b_schedule(PI, PI / 60.0, 5.0, 1.0).unwrap();
        assert!(s.hz.iter().all(|h| (h - 1.0).abs() < 1e-15));
        assert!(control_b_schedule(2.01, 0.05, 5.0, 1.0).is_err());
    }

    #[test]
    fn closed_system_above_the_speed_limit_is_already_optimal() {
        let pt = build_pt(&BathSpec::reference().decoupled(), 0.05, 70, &CompressionConfig::default()).unwrap();
        let (rho0, target) = states();
        let init = control_b_schedule(3.5, 0.05, 5.0, 1.0).unwrap();
        let r = maximize_fidelity(&pt, &rho0, &target, &init, &OptimizerConfig::default()).unwrap();
        assert!(r.infidelity < 1e-8);
        assert!(r.iterations <= 2);
    }

    #[test]
    fn closed_system_below_the_speed_limit_reaches_the_bang_value() {
        let pt = build_pt(&BathSpec::reference().decoupled(), 0.05, 40, &CompressionConfig::default()).unwrap();
        let (rho0, target) = states();
        let init = control_b_schedule(2.0, 0.05, 5.0, 1.0).unwrap();
        let r = maximize_fidelity(&pt, &rho0, &target, &init, &OptimizerConfig::default()).unwrap();
        let expected = 1.0f64.cos().powi(2);
        assert!((r.infidelity - expected).abs() < 1e-3, "{}", r.infidelity);
        assert!(r.fidelity_history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn random_starts_respect_bounds_and_are_reproducible() {
        let like = ControlSchedule::constant(0.05, 10, 0.0, 0.0, 5.0, 1.0).unwrap();
        let a = random_schedule(&like, &mut ChaCha8Rng::seed_from_u64(9));
        let b = random_schedule(&like, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.hx.iter().all(|h| h.abs() <= 5.0) && a.hz.iter().all(|h| h.abs() <= 1.0));
    }
}
