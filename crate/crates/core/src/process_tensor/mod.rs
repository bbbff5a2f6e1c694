//! Process-tensor matrix product operator (PT-MPO) for a Gaussian bath.
//!
//! Node `n` (1-based) has legs `(bond_left, bond_right, out, in)` with bond
//! dimensions `(χ_{n-1}, χ_n)` and Liouville legs of size `d²`. The state enters
//! node 1 on its `in` leg; the `out` leg of node `n` feeds the system propagator
//! `U_n`, whose output enters the `in` leg of node `n + 1`. `χ_0 = χ_N = 1`.
//!
//! `caps[n]` is a vector on bond `χ_n` that terminates the network after step
//! `n`, so the reduced state after `n` steps can be read off mid-evolution.

mod build;
mod io;

use ndarray::{Array1, Array4};
use serde::{Deserialize, Serialize};

use crate::bath::BathSpec;
use crate::error::{Error, Result};
use crate::linalg::C64;

pub use build::{build_pt, build_pt_prefixes, memory_steps};
pub use io::{from_bytes, load_pt, payload_sha256, save_pt, to_bytes, FORMAT_VERSION, MAGIC};

/// Truncation and memory settings of the PT construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionConfig {
    pub svd_rel_cutoff: f64,
    pub max_bond: usize,
    /// Memory time in ps; influence between steps further apart is dropped.
    pub memory_time: f64,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        CompressionConfig {
            svd_rel_cutoff: 1e-7,
            max_bond: 256,
            memory_time: 3.0,
        }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.svd_rel_cutoff) {
            return Err(Error::Domain(format!(
                "svd_rel_cutoff must lie in [0, 1), got {}",
                self.svd_rel_cutoff
            )));
        }
        if self.max_bond < 1 {
            return Err(Error::Domain("max_bond must be at least 1".into()));
        }
        if !(self.memory_time > 0.0 && self.memory_time.is_finite()) {
            return Err(Error::Domain(format!(
                "memory_time must be positive, got {}",
                self.memory_time
            )));
        }
        Ok(())
    }
}

/// Build parameters stored alongside the tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct PtMeta {
    pub dt: f64,
    pub n_steps: usize,
    pub sys_dim: usize,
    pub memory_steps: usize,
    pub compression: CompressionConfig,
    pub bath: BathSpec,
}

/// An immutable PT-MPO.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessTensorMPO {
    nodes: Vec<Array4<C64>>,
    caps: Vec<Array1<C64>>,
    meta: PtMeta,
}

impl ProcessTensorMPO {
    /// Assembles a PT from its parts, checking every structural invariant.
    pub fn from_parts(nodes: Vec<Array4<C64>>, caps: Vec<Array1<C64>>, meta: PtMeta) -> Result<Self> {
        let n = meta.n_steps;
        if n == 0 || nodes.len() != n {
            return Err(Error::Dimension(format!(
                "{} nodes for {} steps",
                nodes.len(),
                n
            )));
        }
        if caps.len() != n + 1 {
            return Err(Error::Dimension(format!("{} caps for {} steps", caps.len(), n)));
        }
        let dd = meta.sys_dim * meta.sys_dim;
        let mut left = 1;
        for (k, node) in nodes.iter().enumerate() {
            let (bl, br, o, i) = node.dim();
            if bl != left || br == 0 || o != dd || i != dd {
                return Err(Error::Dimension(format!(
                    "node {} has shape {:?}, expected ({left}, _, {dd}, {dd})",
                    k + 1,
                    node.dim()
                )));
            }
            if caps[k].len() != bl {
                return Err(Error::Dimension(format!("cap {k} does not match bond {bl}")));
            }
            left = br;
        }
        if left != 1 || caps[n].len() != 1 {
            return Err(Error::Dimension("final bond dimension must be 1".into()));
        }
        let finite = nodes
            .iter()
            .flat_map(|t| t.iter())
            .chain(caps.iter().flat_map(|c| c.iter()))
            .all(|z| z.re.is_finite() && z.im.is_finite());
        if !finite {
            return Err(Error::NonFinite("process tensor entries".into()));
        }
        Ok(ProcessTensorMPO { nodes, caps, meta })
    }

    pub fn n_steps(&self) -> usize {
        self.meta.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.meta.dt
    }

    pub fn sys_dim(&self) -> usize {
        self.meta.sys_dim
    }

    pub fn meta(&self) -> &PtMeta {
        &self.meta
    }

    /// Node `n` for n = 1 … N.
    pub fn node(&self, n: usize) -> &Array4<C64> {
        &self.nodes[n - 1]
    }

    pub fn nodes(&self) -> &[Array4<C64>] {
        &self.nodes
    }

    /// Termination vector after step `n` for n = 0 … N.
    pub fn cap(&self, n: usize) -> &Array1<C64> {
        &self.caps[n]
    }

    pub fn caps(&self) -> &[Array1<C64>] {
        &self.caps
    }

    /// `χ_0 … χ_N`.
    pub fn bond_dims(&self) -> Vec<usize> {
        std::iter::once(1)
            .chain(self.nodes.iter().map(|t| t.dim().1))
            .collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }
}
