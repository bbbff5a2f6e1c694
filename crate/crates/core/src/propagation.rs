//! Contraction of a PT-MPO with piecewise-constant control propagators.
//!
//! The working object is the (bond × state) matrix `v_n`. Starting from
//! `v_0 = ρ₀` (bond 1), step `n` joins node `n` and then the propagator `U_n`:
//!
//! * `X_n[r, o] = Σ_{l,i} v_{n-1}[l, i] node_n[l, r, o, i]`
//! * `v_n[r, s] = Σ_o U_n[s, o] X_n[r, o]`
//!
//! The final state is `v_N[0, ·]`; the state after step `n` is `Σ_r cap_n[r] v_n[r, ·]`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{C64, ZERO};
use crate::liouville::{
    self, bloch_from_state, propagator, require_pure, BlochVector, DensityVector, SuperOperator,
};
use crate::process_tensor::ProcessTensorMPO;

/// Piecewise-constant controls `h_x(t_n)`, `h_z(t_n)` with box bounds, in ps⁻¹.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "ScheduleRecord")]
pub struct ControlSchedule {
    pub dt: f64,
    pub hx: Vec<f64>,
    pub hz: Vec<f64>,
    pub hx_max: f64,
    pub hz_max: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleRecord {
    dt: f64,
    hx: Vec<f64>,
    hz: Vec<f64>,
    hx_max: f64,
    hz_max: f64,
}

impl TryFrom<ScheduleRecord> for ControlSchedule {
    type Error = Error;

    fn try_from(r: ScheduleRecord) -> Result<Self> {
        ControlSchedule::new(r.dt, r.hx, r.hz, r.hx_max, r.hz_max)
    }
}

impl ControlSchedule {
    pub fn new(dt: f64, hx: Vec<f64>, hz: Vec<f64>, hx_max: f64, hz_max: f64) -> Result<Self> {
        let s = ControlSchedule {
            dt,
            hx,
            hz,
            hx_max,
            hz_max,
        };
        s.validate()?;
        Ok(s)
    }

    /// Constant fields over `n_steps` steps.
    pub fn constant(dt: f64, n_steps: usize, hx: f64, hz: f64, hx_max: f64, hz_max: f64) -> Result<Self> {
        ControlSchedule::new(dt, vec![hx; n_steps], vec![hz; n_steps], hx_max, hz_max)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Precondition(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.hx_max >= 0.0 && self.hx_max.is_finite() && self.hz_max >= 0.0 && self.hz_max.is_finite()) {
            return Err(Error::Precondition("field bounds must be finite and non-negative".into()));
        }
        if self.hx.is_empty() || self.hx.len() != self.hz.len() {
            return Err(Error::Dimension(format!(
                "control arrays of lengths {} and {}",
                self.hx.len(),
                self.hz.len()
            )));
        }
        for (name, values, bound) in [("hx", &self.hx, self.hx_max), ("hz", &self.hz, self.hz_max)] {
            if let Some((n, v)) = values
                .iter()
                .enumerate()
                .find(|(_, v)| !v.is_finite() || v.abs() > bound)
            {
                return Err(Error::Precondition(format!(
                    "{name}[{n}] = {v} violates the bound {bound}"
                )));
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        self.hx.len()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.n_steps() as f64
    }

    /// Parameters as one vector `[hx_1 … hx_N, hz_1 … hz_N]`.
    pub fn params(&self) -> Vec<f64> {
        self.hx.iter().chain(&self.hz).copied().collect()
    }

    /// Same grid and bounds with new parameters in the layout of [`Self::params`].
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let n = self.n_steps();
        if params.len() != 2 * n {
            return Err(Error::Dimension(format!("{} parameters for {n} steps", params.len())));
        }
        ControlSchedule::new(
            self.dt,
            params[..n].to_vec(),
            params[n..].to_vec(),
            self.hx_max,
            self.hz_max,
        )
    }

    /// Box bounds in the layout of [`Self::params`].
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_steps();
        let upper: Vec<f64> = std::iter::repeat_n(self.hx_max, n)
            .chain(std::iter::repeat_n(self.hz_max, n))
            .collect();
        let lower = upper.iter().map(|u| -u).collect();
        (lower, upper)
    }
}

/// `H_S = h_x s_x + h_z s_z`.
pub fn system_hamiltonian(hx: f64, hz: f64) -> Array2<C64> {
    liouville::spin_x().mapv(|z| z * hx) + liouville::spin_z().mapv(|z| z * hz)
}

/// `U_n = exp(dt L(h_x[n] s_x + h_z[n] s_z))` for every step.
pub fn propagators_from_schedule(sched: &ControlSchedule) -> Result<Vec<SuperOperator>> {
    sched.validate()?;
    sched
        .hx
        .iter()
        .zip(&sched.hz)
        .map(|(&hx, &hz)| propagator(&system_hamiltonian(hx, hz), sched.dt))
        .collect()
}

/// Intermediate tensors of a forward sweep.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `v_n` for n = 0 … N, shape (χ_n, d²).
    pub states: Vec<Array2<C64>>,
    /// `X_n` for n = 1 … N (index n − 1), shape (χ_n, d²): node n joined, U_n not yet applied.
    pub pre_propagator: Vec<Array2<C64>>,
}

/// Reduced-state trajectory read through the caps.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<DensityVector>,
    pub bloch: Vec<BlochVector>,
    pub bloch_length: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ForwardResult {
    pub rho_f: DensityVector,
    pub cache: Option<ForwardCache>,
    pub trajectory: Option<TrajectoryRecord>,
}

pub(crate) fn check_inputs(pt: &ProcessTensorMPO, props: &[SuperOperator], rho0_dim: usize) -> Result<()> {
    if props.len() != pt.n_steps() {
        return Err(Error::Dimension(format!(
            "{} propagators for a {}-step process tensor",
            props.len(),
            pt.n_steps()
        )));
    }
    let d = pt.sys_dim();
    if rho0_dim != d || props.iter().any(|u| u.dim() != d) {
        return Err(Error::Dimension(format!(
            "system dimension mismatch with process tensor (d = {d})"
        )));
    }
    Ok(())
}

pub(crate) fn check_schedule(pt: &ProcessTensorMPO, sched: &ControlSchedule) -> Result<()> {
    if sched.n_steps() != pt.n_steps() {
        return Err(Error::Dimension(format!(
            "{}-step schedule for a {}-step process tensor",
            sched.n_steps(),
            pt.n_steps()
        )));
    }
    if (sched.dt - pt.dt()).abs() > 1e-12 * pt.dt() {
        return Err(Error::Precondition(format!(
            "schedule time step {} differs from process tensor time step {}",
            sched.dt,
            pt.dt()
        )));
    }
    Ok(())
}

/// `X[r, o] = Σ_{l,i} v[l, i] node[l, r, o, i]`.
pub(crate) fn join_node(v: &Array2<C64>, node: &ndarray::Array4<C64>) -> Array2<C64> {
    let (bl, br, dd, _) = node.dim();
    let mut x = Array2::<C64>::zeros((br, dd));
    for l in 0..bl {
        let vl = v.row(l);
        for r in 0..br {
            let block = node.slice(ndarray::s![l, r, .., ..]);
            let mut row = x.row_mut(r);
            for o in 0..dd {
                let mut acc = ZERO;
                for i in 0..dd {
                    acc += block[(o, i)] * vl[i];
                }
                row[o] += acc;
            }
        }
    }
    x
}

/// Contracts the network forwards in time.
pub fn contract_forward(
    pt: &ProcessTensorMPO,
    props: &[SuperOperator],
    rho0: &DensityVector,
    want_cache: bool,
    want_trajectory: bool,
) -> Result<ForwardResult> {
    check_inputs(pt, props, rho0.dim())?;
    if want_trajectory && pt.sys_dim() != 2 {
        return Err(Error::UnsupportedDimension(pt.sys_dim()));
    }
    let dd = rho0.entries().len();
    let n = pt.n_steps();
    let mut v = rho0.entries().clone().into_shape_with_order((1, dd)).expect("row vector");
    let mut cache = want_cache.then(|| ForwardCache {
        states: vec![v.clone()],
        pre_propagator: Vec::with_capacity(n),
    });
    let mut traj = want_trajectory.then(|| TrajectoryRecord {
        times: vec![0.0],
        states: vec![rho0.clone()],
        bloch: Vec::new(),
        bloch_length: Vec::new(),
    });

    for (k, u) in props.iter().enumerate() {
        let step = k + 1;
        let x = join_node(&v, pt.node(step));
        v = x.dot(&u.matrix().t());
        if let Some(c) = cache.as_mut() {
            c.pre_propagator.push(x);
            c.states.push(v.clone());
        }
        if let Some(t) = traj.as_mut() {
            let cap = pt.cap(step);
            let entries: Array1<C64> = cap.dot(&v);
            t.times.push(step as f64 * pt.dt());
            t.states.push(DensityVector::from_entries(rho0.dim(), entries)?);
        }
    }
    let rho_f = DensityVector::from_entries(rho0.dim(), v.row(0).to_owned())?;
    if let Some(t) = traj.as_mut() {
        // cap_N = [1]; pin the endpoint to the contracted final state exactly
        *t.states.last_mut().expect("at least one step") = rho_f.clone();
        for s in &t.states {
            let b = bloch_from_state(s)?;
            t.bloch_length.push(b.norm());
            t.bloch.push(b);
        }
    }
    Ok(ForwardResult {
        rho_f,
        cache,
        trajectory: traj,
    })
}

/// Final state for a schedule.
pub fn final_state(pt: &ProcessTensorMPO, sched: &ControlSchedule, rho0: &DensityVector) -> Result<DensityVector> {
    check_schedule(pt, sched)?;
    let props = propagators_from_schedule(sched)?;
    Ok(contract_forward(pt, &props, rho0, false, false)?.rho_f)
}

/// Trajectory of the reduced state for a schedule.
pub fn trajectory(pt: &ProcessTensorMPO, sched: &ControlSchedule, rho0: &DensityVector) -> Result<TrajectoryRecord> {
    check_schedule(pt, sched)?;
    let props = propagators_from_schedule(sched)?;
    Ok(contract_forward(pt, &props, rho0, false, true)?
        .trajectory
        .expect("trajectory requested"))
}

/// `Re Tr(σ ρ_f)` for a pure target σ.
///
/// Not clipped to [0, 1], so that it stays consistent with the gradient; round-off
/// can push it a few ulp past 1.
pub fn objective_fidelity(
    pt: &ProcessTensorMPO,
    sched: &ControlSchedule,
    rho0: &DensityVector,
    target: &DensityVector,
) -> Result<f64> {
    require_pure(target)?;
    let rho_f = final_state(pt, sched, rho0)?;
    Ok(liouville::overlap_with_transposed(&rho_f, target)?.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::BathSpec;
    use crate::linalg;
    use crate::process_tensor::{build_pt, CompressionConfig};
    use std::f64::consts::PI;

    fn closed_pt(n: usize) -> ProcessTensorMPO {
        build_pt(&BathSpec::reference().decoupled(), 0.05, n, &CompressionConfig::default()).unwrap()
    }

    fn minus_x() -> DensityVector {
        DensityVector::from_bloch(BlochVector::new(-1.0, 0.0, 0.0))
    }

    fn plus_x() -> DensityVector {
        DensityVector::from_bloch(BlochVector::new(1.0, 0.0, 0.0))
    }

    #[test]
    fn zero_fields_give_identity_propagators() {
        let s = ControlSchedule::constant(0.05, 4, 0.0, 0.0, 5.0, 1.0).unwrap();
        for u in propagators_from_schedule(&s).unwrap() {
            assert_eq!(u.matrix(), &linalg::identity(4));
        }
    }

    #[test]
    fn control_b_rotates_minus_x_to_plus_x() {
        let s = ControlSchedule::constant(0.05, 80, 0.0, PI / 4.0, 5.0, 1.0).unwrap();
        let props = propagators_from_schedule(&s).unwrap();
        let total = props.iter().fold(SuperOperator::identity(2), |acc, u| u.compose(&acc));
        let out = bloch_from_state(&total.apply(&minus_x())).unwrap();
        assert!((out.x - 1.0).abs() < 1e-12 && out.y.abs() < 1e-12 && out.z.abs() < 1e-12);
    }

    #[test]
    fn bound_violations_are_rejected() {
        assert!(ControlSchedule::constant(0.05, 3, 5.1, 0.0, 5.0, 1.0).is_err());
        assert!(ControlSchedule::new(0.05, vec![0.0], vec![0.0, 0.0], 5.0, 1.0).is_err());
        let json = r#"{"dt":0.05,"hx":[0.0],"hz":[2.0],"hx_max":5.0,"hz_max":1.0}"#;
        assert!(serde_json::from_str::<ControlSchedule>(json).is_err());
    }

    #[test]
    fn closed_system_transfer_is_perfect() {
        let pt = closed_pt(80);
        let s = ControlSchedule::constant(0.05, 80, 0.0, PI / 4.0, 5.0, 1.0).unwrap();
        let f = objective_fidelity(&pt, &s, &minus_x(), &plus_x()).unwrap();
        assert!((f - 1.0).abs() < 1e-10);
    }

    #[test]
    fn trivial_objective_values() {
        let pt = closed_pt(10);
        let s = ControlSchedule::constant(0.05, 10, 0.0, 0.0, 5.0, 1.0).unwrap();
        assert!((objective_fidelity(&pt, &s, &plus_x(), &plus_x()).unwrap() - 1.0).abs() < 1e-12);
        assert!(objective_fidelity(&pt, &s, &minus_x(), &plus_x()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn trajectory_endpoint_is_the_final_state() {
        let pt = closed_pt(12);
        let s = ControlSchedule::constant(0.05, 12, 1.0, 0.5, 5.0, 1.0).unwrap();
        let props = propagators_from_schedule(&s).unwrap();
        let out = contract_forward(&pt, &props, &minus_x(), true, true).unwrap();
        let traj = out.trajectory.unwrap();
        assert_eq!(traj.states.len(), 13);
        assert_eq!(traj.states[12], out.rho_f);
        assert!((traj.times[12] - 0.6).abs() < 1e-15);
        for (b, len) in traj.bloch.iter().zip(&traj.bloch_length) {
            assert_eq!(b.norm(), *len);
        }
        let cache = out.cache.unwrap();
        assert_eq!(cache.states.len(), 13);
        assert_eq!(cache.pre_propagator.len(), 12);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let pt = closed_pt(5);
        let s = ControlSchedule::constant(0.05, 6, 0.0, 0.0, 5.0, 1.0).unwrap();
        assert!(matches!(final_state(&pt, &s, &minus_x()), Err(Error::Dimension(_))));
        let s = ControlSchedule::constant(0.04, 5, 0.0, 0.0, 5.0, 1.0).unwrap();
        assert!(final_state(&pt, &s, &minus_x()).is_err());
    }
}
