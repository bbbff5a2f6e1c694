//! Exact gradients by forward/backward propagation through the PT network.
//!
//! For a scalar `Z = z · ρ_f` the backward sweep starts from `b_N = z` (bond 1) and
//! evolves the covector backwards:
//!
//! * `Y_n[r, o] = Σ_s b_n[r, s] U_n[s, o]`
//! * `b_{n-1}[l, i] = Σ_{r,o} node_n[l, r, o, i] Y_n[r, o]`
//!
//! Joining `b_n` with the forward tensor `X_n` over the bond leg leaves the two
//! state legs of `U_n` open: `∂Z/∂U_n[s, o] = Σ_r b_n[r, s] X_n[r, o]`.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{C64, ZERO};
use crate::liouville::{self, require_pure, transposed_target, DensityVector, SuperOperator};
use crate::process_tensor::ProcessTensorMPO;
use crate::propagation::{
    check_inputs, check_schedule, contract_forward, propagators_from_schedule, system_hamiltonian,
    ControlSchedule, ForwardCache,
};

/// Covectors of the backward sweep.
#[derive(Clone, Debug)]
pub struct BackwardCache {
    /// `b_n` for n = 0 … N, shape (χ_n, d²).
    pub covectors: Vec<Array2<C64>>,
}

/// `∂F/∂h_x[n]` and `∂F/∂h_z[n]`, per ps⁻¹.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector {
    pub d_hx: Vec<f64>,
    pub d_hz: Vec<f64>,
}

impl GradientVector {
    /// In the layout of [`ControlSchedule::params`].
    pub fn to_vec(&self) -> Vec<f64> {
        self.d_hx.iter().chain(&self.d_hz).copied().collect()
    }

    pub fn from_vec(v: &[f64]) -> Self {
        let n = v.len() / 2;
        GradientVector {
            d_hx: v[..n].to_vec(),
            d_hz: v[n..].to_vec(),
        }
    }
}

/// Backward sweep from the covector `z = ∂Z/∂ρ_f`.
pub fn backward_pass(pt: &ProcessTensorMPO, props: &[SuperOperator], z: &Array1<C64>) -> Result<BackwardCache> {
    let dd = pt.sys_dim() * pt.sys_dim();
    if z.len() != dd {
        return Err(Error::Dimension(format!("covector of length {} for d² = {dd}", z.len())));
    }
    check_inputs(pt, props, pt.sys_dim())?;
    let n = pt.n_steps();
    let mut b = z.clone().into_shape_with_order((1, dd)).expect("row vector");
    let mut covectors = vec![b.clone()];
    for step in (1..=n).rev() {
        let y = b.dot(props[step - 1].matrix());
        b = unjoin_node(&y, pt.node(step));
        covectors.push(b.clone());
    }
    covectors.reverse();
    Ok(BackwardCache { covectors })
}

/// `b[l, i] = Σ_{r,o} node[l, r, o, i] y[r, o]`.
fn unjoin_node(y: &Array2<C64>, node: &ndarray::Array4<C64>) -> Array2<C64> {
    let (bl, br, dd, _) = node.dim();
    let mut b = Array2::<C64>::zeros((bl, dd));
    for l in 0..bl {
        let mut row = b.row_mut(l);
        for r in 0..br {
            let yr = y.row(r);
            let block = node.slice(ndarray::s![l, r, .., ..]);
            for o in 0..dd {
                let w = yr[o];
                if w == ZERO {
                    continue;
                }
                for i in 0..dd {
                    row[i] += block[(o, i)] * w;
                }
            }
        }
    }
    b
}

/// `∂Z/∂U_n` for n = 1 … N (index n − 1) from the two caches.
pub fn propagator_gradients(forward: &ForwardCache, backward: &BackwardCache) -> Vec<Array2<C64>> {
    forward
        .pre_propagator
        .iter()
        .enumerate()
        .map(|(k, x)| backward.covectors[k + 1].t().dot(x))
        .collect()
}

/// Real part of the Frobenius pairing `Σ_{s,o} G[s, o] D[s, o]`.
fn pair(g: &Array2<C64>, d: &SuperOperator) -> f64 {
    g.iter().zip(d.matrix().iter()).map(|(a, b)| (a * b).re).sum()
}

/// Scalar `Z = z · ρ_f` and `∂Z/∂U_n` for every step from one forward and one backward sweep.
pub fn objective_and_propagator_gradients(
    pt: &ProcessTensorMPO,
    props: &[SuperOperator],
    rho0: &DensityVector,
    z: &Array1<C64>,
) -> Result<(C64, Vec<Array2<C64>>)> {
    let fwd = contract_forward(pt, props, rho0, true, false)?;
    let value = z.dot(fwd.rho_f.entries());
    let bwd = backward_pass(pt, props, z)?;
    let cache = fwd.cache.expect("cache requested");
    Ok((value, propagator_gradients(&cache, &bwd)))
}

/// Gradient of a real objective `Re Z` for parameters that may act on several steps:
/// `jacobian[a]` lists `(n, ∂U_n/∂c_a)` with 1-based step indices.
pub fn chain_rule(grads: &[Array2<C64>], jacobian: &[Vec<(usize, SuperOperator)>]) -> Result<Vec<f64>> {
    jacobian
        .iter()
        .map(|terms| {
            terms
                .iter()
                .map(|(n, du)| {
                    grads
                        .get(n.wrapping_sub(1))
                        .map(|g| pair(g, du))
                        .ok_or_else(|| Error::Dimension(format!("step {n} outside the schedule")))
                })
                .sum()
        })
        .collect()
}

/// Fidelity and its exact gradient with respect to every `h_x[n]`, `h_z[n]`.
pub fn fidelity_gradient(
    pt: &ProcessTensorMPO,
    sched: &ControlSchedule,
    rho0: &DensityVector,
    target: &DensityVector,
) -> Result<(f64, GradientVector)> {
    require_pure(target)?;
    check_schedule(pt, sched)?;
    let props = propagators_from_schedule(sched)?;
    let z = transposed_target(target);
    let fwd = contract_forward(pt, &props, rho0, true, false)?;
    let value = liouville::overlap_with_transposed(&fwd.rho_f, target)?.re;
    let bwd = backward_pass(pt, &props, &z)?;
    let grads = propagator_gradients(&fwd.cache.expect("cache requested"), &bwd);

    let sx = liouville::spin_x();
    let sz = liouville::spin_z();
    let mut d_hx = Vec::with_capacity(sched.n_steps());
    let mut d_hz = Vec::with_capacity(sched.n_steps());
    for (k, g) in grads.iter().enumerate() {
        let h = system_hamiltonian(sched.hx[k], sched.hz[k]);
        let dx = liouville::propagator_derivative(&h, &sx, sched.dt)?;
        let dz = liouville::propagator_derivative(&h, &sz, sched.dt)?;
        d_hx.push(pair(g, &dx));
        d_hz.push(pair(g, &dz));
    }
    let grad = GradientVector { d_hx, d_hz };
    if !value.is_finite() || grad.d_hx.iter().chain(&grad.d_hz).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("fidelity gradient".into()));
    }
    Ok((value, grad))
}
