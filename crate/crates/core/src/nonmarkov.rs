//! Trace-distance (BLP) non-Markovianity for a fixed schedule.
//!
//! Evolution is linear, so for the antipodal pair with Bloch vectors `±r` the
//! difference of the evolved states is `Σ_k r_k Λ_t(σ_k)`. Three operator
//! trajectories therefore serve every pair on the grid.

use std::f64::consts::{FRAC_PI_2, TAU};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::liouville::{pauli_x, pauli_y, pauli_z, BlochVector, DensityVector};
use crate::process_tensor::ProcessTensorMPO;
use crate::propagation::{check_inputs, check_schedule, join_node, propagators_from_schedule, ControlSchedule};

/// Grid over the upper hemisphere: `θ_i = (π/2) i / n_theta` for i = 0 … n_theta and
/// `φ_j = 2π j / n_phi` for j = 0 … n_phi − 1. Doubling either count keeps every
/// coarse point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlpConfig {
    pub n_theta: usize,
    pub n_phi: usize,
}

impl Default for BlpConfig {
    fn default() -> Self {
        BlpConfig { n_theta: 16, n_phi: 32 }
    }
}

impl BlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_theta < 2 || self.n_phi < 2 {
            return Err(Error::Config(format!(
                "BLP grid needs at least 2x2 points, got {}x{}",
                self.n_theta, self.n_phi
            )));
        }
        Ok(())
    }

    pub fn theta(&self, i: usize) -> f64 {
        FRAC_PI_2 * (i as f64 / self.n_theta as f64)
    }

    pub fn phi(&self, j: usize) -> f64 {
        TAU * (j as f64 / self.n_phi as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlpResult {
    /// `max Σ_n max(0, D_{n+1} − D_n)` over the grid.
    pub measure: f64,
    pub argmax_theta: f64,
    pub argmax_phi: f64,
    /// Trace distance of the maximizing pair at every step.
    pub series: Vec<f64>,
}

/// Operator read through the caps after every step, n = 0 … N.
fn operator_trajectory(pt: &ProcessTensorMPO, props: &[crate::liouville::SuperOperator], op: &Array1<C64>) -> Vec<Array1<C64>> {
    let dd = op.len();
    let mut v: Array2<C64> = op.clone().into_shape_with_order((1, dd)).expect("row vector");
    let mut out = Vec::with_capacity(props.len() + 1);
    out.push(op.clone());
    for (k, u) in props.iter().enumerate() {
        let x = join_node(&v, pt.node(k + 1));
        v = x.dot(&u.matrix().t());
        out.push(if k + 1 == props.len() { v.row(0).to_owned() } else { pt.cap(k + 1).dot(&v) });
    }
    out
}

/// `Tr|A|/2` for a 2×2 operator given by Liouville components, using its Hermitian part.
fn half_trace_norm_2x2(v: &Array1<C64>) -> f64 {
    let a = v[0].re;
    let c = v[3].re;
    let b = 0.5 * (v[2] + v[1].conj());
    let split = (0.25 * (a - c) * (a - c) + b.norm_sqr()).sqrt();
    0.5 * (a + c).abs().max(2.0 * split)
}

fn vec_of(m: &Array2<C64>) -> Array1<C64> {
    let d = m.nrows();
    Array1::from_shape_fn(d * d, |k| m[(k % d, k / d)])
}

/// Sum of the positive increments of a series.
pub fn positive_increments(series: &[f64]) -> f64 {
    series.windows(2).map(|w| (w[1] - w[0]).max(0.0)).sum()
}

/// `D(t_n) = Tr|ρ₁(t_n) − ρ₂(t_n)|/2` for n = 0 … N.
pub fn trace_distance_series(
    pt: &ProcessTensorMPO,
    sched: &ControlSchedule,
    rho1: &DensityVector,
    rho2: &DensityVector,
) -> Result<Vec<f64>> {
    if pt.sys_dim() != 2 {
        return Err(Error::UnsupportedDimension(pt.sys_dim()));
    }
    rho1.check_valid(1e-9)?;
    rho2.check_valid(1e-9)?;
    check_schedule(pt, sched)?;
    let props = propagators_from_schedule(sched)?;
    check_inputs(pt, &props, rho1.dim())?;
    let diff = rho1.entries() - rho2.entries();
    Ok(operator_trajectory(pt, &props, &diff).iter().map(half_trace_norm_2x2).collect())
}

struct PauliTrajectories {
    ops: [Vec<Array1<C64>>; 3],
}

impl PauliTrajectories {
    fn new(pt: &ProcessTensorMPO, sched: &ControlSchedule) -> Result<Self> {
        if pt.sys_dim() != 2 {
            return Err(Error::UnsupportedDimension(pt.sys_dim()));
        }
        check_schedule(pt, sched)?;
        let props = propagators_from_schedule(sched)?;
        let ops = [pauli_x(), pauli_y(), pauli_z()].map(|p| operator_trajectory(pt, &props, &vec_of(&p)));
        Ok(PauliTrajectories { ops })
    }

    /// Series for the pair `±r(θ, φ)`: difference `Σ_k r_k Λ(σ_k)`.
    fn series(&self, theta: f64, phi: f64) -> Vec<f64> {
        let r = BlochVector::from_angles(theta, phi);
        let n = self.ops[0].len();
        (0..n)
            .map(|t| {
                let diff = &self.ops[0][t] * C64::from(r.x) + &self.ops[1][t] * C64::from(r.y) + &self.ops[2][t] * C64::from(r.z);
                half_trace_norm_2x2(&diff)
            })
            .collect()
    }
}

/// Grid maximum of the BLP measure over antipodal pure pairs. Ties go to the
/// smallest θ, then the smallest φ.
pub fn blp_measure(pt: &ProcessTensorMPO, sched: &ControlSchedule, cfg: &BlpConfig) -> Result<BlpResult> {
    cfg.validate()?;
    let traj = PauliTrajectories::new(pt, sched)?;
    let mut best: Option<BlpResult> = None;
    for i in 0..=cfg.n_theta {
        for j in 0..cfg.n_phi {
            let (theta, phi) = (cfg.theta(i), cfg.phi(j));
            let series = traj.series(theta, phi);
            let measure = positive_increments(&series);
            if best.as_ref().is_none_or(|b| measure > b.measure) {
                best = Some(BlpResult {
                    measure,
                    argmax_theta: theta,
                    argmax_phi: phi,
                    series,
                });
            }
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Refines a grid result by alternating golden-section searches in θ and φ within
/// one grid spacing of the grid argmax. Never returns a smaller measure.
pub fn polish(
    pt: &ProcessTensorMPO,
    sched: &ControlSchedule,
    cfg: &BlpConfig,
    grid: &BlpResult,
    rounds: usize,
) -> Result<BlpResult> {
    let traj = PauliTrajectories::new(pt, sched)?;
    let value = |theta: f64, phi: f64| positive_increments(&traj.series(theta, phi));
    let dtheta = FRAC_PI_2 / cfg.n_theta as f64;
    let dphi = TAU / cfg.n_phi as f64;
    let (mut theta, mut phi) = (grid.argmax_theta, grid.argmax_phi);
    for _ in 0..rounds {
        theta = golden_max(|t| value(t, phi), (theta - dtheta).max(0.0), (theta + dtheta).min(FRAC_PI_2));
        phi = golden_max(|p| value(theta, p), phi - dphi, phi + dphi);
    }
    let measure = value(theta, phi);
    if measure > grid.measure {
        Ok(BlpResult {
            measure,
            argmax_theta: theta,
            argmax_phi: phi.rem_euclid(TAU),
            series: traj.series(theta, phi),
        })
    } else {
        Ok(grid.clone())
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..40 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        c
    } else {
        d
    }
}
