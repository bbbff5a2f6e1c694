//! Sequential PT-MPO construction.
//!
//! The influence functional of a Gaussian bath is a product of two-time gates
//! that are diagonal in the eigenbasis of the coupling operator. It is grown as
//! a matrix product state over the path variables α_1 … α_N, one time step per
//! row of gates. Adding step `m` appends a site carrying the self gate and
//! applies the gates linking α_m to every earlier step in the memory window.
//!
//! A gate depends on the later path variable only through `δ = s⁺ − s⁻`, so the
//! row of gates is an MPO of bond dimension equal to the number of distinct δ.
//! It is applied by a right-to-left zip-up, after which a left-to-right SVD
//! sweep over the window re-canonicalizes and truncates the bonds.

use ndarray::{s, Array1, Array2, Array3, Array4};

use crate::bath::{eta_table, BathSpec};
use crate::error::{Error, Result};
use crate::linalg::{self, C64, ONE, ZERO};

use super::{CompressionConfig, ProcessTensorMPO, PtMeta};

/// Singular values below this fraction of the final cutoff are dropped during
/// the zip-up; the canonical sweep applies the real cutoff.
const ZIP_CUTOFF_RATIO: f64 = 1e-2;

/// `K = min(n_steps, ⌈memory_time / dt⌉)`, at least 1.
pub fn memory_steps(memory_time: f64, dt: f64, n_steps: usize) -> usize {
    let window = (memory_time / dt - 1e-9).ceil().max(1.0) as usize;
    window.min(n_steps).max(1)
}

/// Coupling-operator spectrum and the influence gates derived from it.
struct Gates {
    dd: usize,
    /// Channel (distinct value of s⁺ − s⁻) of each Liouville index.
    channel_of: Vec<usize>,
    n_channels: usize,
    /// `g_0(α, α)` for each α.
    self_gate: Vec<C64>,
    /// `lag[Δ][(c, α)]` for Δ = 1 … K; entry 0 is unused.
    lag: Vec<Array2<C64>>,
    /// `(W, W⁻¹)` mapping Liouville vectors into and out of the coupling eigenbasis;
    /// `None` when the coupling operator is already diagonal.
    basis: Option<(Array2<C64>, Array2<C64>)>,
}

impl Gates {
    fn new(bath: &BathSpec, dt: f64, k: usize) -> Result<Gates> {
        let op = &bath.coupling_operator;
        let d = op.nrows();
        let dd = d * d;
        let diagonal = op
            .indexed_iter()
            .all(|((i, j), z)| i == j || *z == ZERO);
        let (spec, basis) = if diagonal {
            ((0..d).map(|i| op[(i, i)].re).collect::<Vec<_>>(), None)
        } else {
            let (vals, v) = linalg::hermitian_eigh(&op.view())?;
            let vt = v.t().to_owned();
            let vh = v.t().mapv(|z| z.conj());
            let vbar = v.mapv(|z| z.conj());
            let w = linalg::kron(&vt.view(), &vh.view());
            let winv = linalg::kron(&vbar.view(), &v.view());
            (vals, Some((w, winv)))
        };

        let plus: Vec<f64> = (0..dd).map(|a| spec[a % d]).collect();
        let minus: Vec<f64> = (0..dd).map(|a| spec[a / d]).collect();
        let deltas: Vec<f64> = (0..dd).map(|a| plus[a] - minus[a]).collect();
        let scale = deltas.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let mut distinct: Vec<f64> = deltas.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * scale);
        let channel_of: Vec<usize> = deltas
            .iter()
            .map(|x| {
                distinct
                    .iter()
                    .position(|y| (x - y).abs() <= 1e-12 * scale)
                    .expect("every delta has a channel")
            })
            .collect();

        let table = eta_table(bath, dt, k)?;
        let gate = |delta: f64, eta: C64, a: usize| -> C64 {
            (-(delta * (eta * plus[a] - eta.conj() * minus[a]))).exp()
        };
        let self_gate = (0..dd).map(|a| gate(deltas[a], table.eta[0], a)).collect();
        let lag = (0..=k)
            .map(|dk| {
                Array2::from_shape_fn((distinct.len(), dd), |(c, a)| {
                    if dk == 0 {
                        ONE
                    } else {
                        gate(distinct[c], table.eta[dk], a)
                    }
                })
            })
            .collect();
        Ok(Gates {
            dd,
            channel_of,
            n_channels: distinct.len(),
            self_gate,
            lag,
            basis,
        })
    }
}

fn keep_count(s: &[f64], cutoff: f64) -> usize {
    match s.first() {
        Some(&s0) if s0 > 0.0 => s
            .iter()
            .take_while(|&&x| x > 0.0 && x >= cutoff * s0)
            .count()
            .max(1),
        _ => 1,
    }
}

fn as_matrix(a: &Array3<C64>) -> Array2<C64> {
    let (x, y, z) = a.dim();
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order((x * y, z))
        .expect("contiguous reshape")
}

fn into_site(m: Array2<C64>, left: usize, dd: usize, right: usize) -> Array3<C64> {
    m.as_standard_layout()
        .into_owned()
        .into_shape_with_order((left, dd, right))
        .expect("contiguous reshape")
}

struct Builder {
    gates: Gates,
    memory: usize,
    cutoff: f64,
    max_bond: usize,
    sites: Vec<Array3<C64>>,
}

impl Builder {
    fn step(&mut self, m: usize) -> Result<()> {
        let dd = self.gates.dd;
        let nch = self.gates.n_channels;
        if m == 0 {
            let first = Array3::from_shape_fn((1, dd, 1), |(_, b, _)| self.gates.self_gate[b]);
            self.sites.push(first);
            return Ok(());
        }
        let fresh = Array3::from_shape_fn((nch, dd, 1), |(c, b, _)| {
            if self.gates.channel_of[b] == c {
                self.gates.self_gate[b]
            } else {
                ZERO
            }
        });
        self.sites.push(fresh);

        let w = m.saturating_sub(self.memory);
        // rows: (old right bond of site k) × channel, columns: new left bond of site k + 1
        let mut r = linalg::identity(nch);
        for k in (w..m).rev() {
            let gate = &self.gates.lag[m - k];
            let (cl, _, cr) = self.sites[k].dim();
            let a = as_matrix(&self.sites[k]);
            let cols = r.ncols();
            let parts: Vec<Array2<C64>> = (0..nch)
                .map(|c| {
                    let rc = r.slice(s![c..;nch, ..]);
                    debug_assert_eq!(rc.nrows(), cr);
                    linalg::matmul(&a.view(), &rc)
                })
                .collect();
            if k == w {
                let theta = Array3::from_shape_fn((cl, dd, cols), |(l, al, rp)| {
                    (0..nch)
                        .map(|c| gate[(c, al)] * parts[c][(l * dd + al, rp)])
                        .sum()
                });
                self.sites[k] = theta;
            } else {
                let theta = Array2::from_shape_fn((cl * nch, dd * cols), |(row, col)| {
                    let (l, c) = (row / nch, row % nch);
                    let (al, rp) = (col / cols, col % cols);
                    gate[(c, al)] * parts[c][(l * dd + al, rp)]
                });
                let dec = linalg::svd(&theta.view())?;
                let keep = keep_count(&dec.s, self.cutoff * ZIP_CUTOFF_RATIO);
                let dec = dec.truncate(keep);
                self.sites[k] = into_site(dec.vh.clone(), keep, dd, cols);
                r = dec.u_s();
            }
        }

        for k in w..m {
            let (cl, _, _) = self.sites[k].dim();
            let dec = linalg::svd(&as_matrix(&self.sites[k]).view())?;
            let keep = keep_count(&dec.s, self.cutoff);
            if keep > self.max_bond {
                return Err(Error::BondExplosion {
                    step: m + 1,
                    bond: k + 1,
                    kept: keep,
                    max_bond: self.max_bond,
                    tail: dec.s[self.max_bond..keep].iter().take(8).copied().collect(),
                });
            }
            let dec = dec.truncate(keep);
            self.sites[k] = into_site(dec.u.clone(), cl, dd, keep);
            let (_, _, nr) = self.sites[k + 1].dim();
            let next = as_matrix_left(&self.sites[k + 1]);
            let merged = linalg::matmul(&dec.s_vh().view(), &next.view());
            self.sites[k + 1] = into_site(merged, keep, dd, nr);
        }
        Ok(())
    }

    fn node(&self, site: &Array3<C64>) -> Array4<C64> {
        let (cl, dd, cr) = site.dim();
        match &self.gates.basis {
            None => Array4::from_shape_fn((cl, cr, dd, dd), |(l, r, o, i)| {
                if o == i {
                    site[(l, o, r)]
                } else {
                    ZERO
                }
            }),
            Some((w, winv)) => {
                let mut node = Array4::zeros((cl, cr, dd, dd));
                for l in 0..cl {
                    for r in 0..cr {
                        let diag = Array2::from_shape_fn((dd, dd), |(a, b)| {
                            if a == b {
                                site[(l, a, r)]
                            } else {
                                ZERO
                            }
                        });
                        let block = winv.dot(&diag).dot(w);
                        node.slice_mut(s![l, r, .., ..]).assign(&block);
                    }
                }
                node
            }
        }
    }

    fn snapshot(&self, meta: PtMeta) -> Result<ProcessTensorMPO> {
        let nodes: Vec<Array4<C64>> = self.sites.iter().map(|s| self.node(s)).collect();
        let caps = compute_caps(&nodes, meta.sys_dim);
        ProcessTensorMPO::from_parts(nodes, caps, meta)
    }
}

/// Reshapes a site `(l, α, r)` into the matrix `l × (α, r)`.
fn as_matrix_left(a: &Array3<C64>) -> Array2<C64> {
    let (x, y, z) = a.dim();
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order((x, y * z))
        .expect("contiguous reshape")
}

/// Caps from the right: `cap_N = [1]`, `cap_{n-1} = C_n cap_n` with
/// `C_n[l, r] = Σ tr[o] node_n[l, r, o, i] m[i]`, where `tr = vec(I)` traces the
/// output and `m = vec(I)/d` re-prepares the maximally mixed state.
pub(crate) fn compute_caps(nodes: &[Array4<C64>], d: usize) -> Vec<Array1<C64>> {
    let n = nodes.len();
    let diag: Vec<usize> = (0..d).map(|i| i + d * i).collect();
    let inv_d = 1.0 / d as f64;
    let mut caps = vec![Array1::from_elem(1, ONE); n + 1];
    for k in (0..n).rev() {
        let node = &nodes[k];
        let (cl, cr, _, _) = node.dim();
        let next = &caps[k + 1];
        let cap = Array1::from_shape_fn(cl, |l| {
            let mut acc = ZERO;
            for r in 0..cr {
                let mut c = ZERO;
                for &o in &diag {
                    for &i in &diag {
                        c += node[(l, r, o, i)];
                    }
                }
                acc += c * inv_d * next[r];
            }
            acc
        });
        caps[k] = cap;
    }
    caps
}

fn validate_inputs(bath: &BathSpec, dt: f64, cfg: &CompressionConfig) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Precondition(format!("time step must be positive, got {dt}")));
    }
    bath.validate()?;
    cfg.validate()
}

/// Builds the PT-MPO for `n_steps` steps of length `dt`.
pub fn build_pt(
    bath: &BathSpec,
    dt: f64,
    n_steps: usize,
    cfg: &CompressionConfig,
) -> Result<ProcessTensorMPO> {
    let mut out = build_pt_prefixes(bath, dt, &[n_steps], cfg)?;
    Ok(out.pop().expect("one prefix requested"))
}

/// Builds the PTs for several step counts in one pass.
///
/// The construction is sequential in time and the memory window of a shorter
/// PT coincides with that of a longer one over the shared steps, so each
/// shorter PT is a snapshot of the longer build and is bit-identical to what
/// [`build_pt`] returns for it. Results are ordered by ascending step count.
pub fn build_pt_prefixes(
    bath: &BathSpec,
    dt: f64,
    step_counts: &[usize],
    cfg: &CompressionConfig,
) -> Result<Vec<ProcessTensorMPO>> {
    validate_inputs(bath, dt, cfg)?;
    let mut wanted: Vec<usize> = step_counts.to_vec();
    wanted.sort_unstable();
    wanted.dedup();
    let last = match wanted.last() {
        Some(&n) if wanted[0] >= 1 => n,
        _ => return Err(Error::Precondition("n_steps must be at least 1".into())),
    };
    let memory = memory_steps(cfg.memory_time, dt, last);
    let mut builder = Builder {
        gates: Gates::new(bath, dt, memory)?,
        memory,
        cutoff: cfg.svd_rel_cutoff,
        max_bond: cfg.max_bond,
        sites: Vec::with_capacity(last),
    };
    let mut out = Vec::with_capacity(wanted.len());
    let mut next = wanted.iter().peekable();
    for m in 0..last {
        builder.step(m)?;
        if next.peek() == Some(&&(m + 1)) {
            next.next();
            let meta = PtMeta {
                dt,
                n_steps: m + 1,
                sys_dim: bath.sys_dim(),
                memory_steps: memory_steps(cfg.memory_time, dt, m + 1),
                compression: *cfg,
                bath: bath.clone(),
            };
            out.push(builder.snapshot(meta)?);
        }
    }
    Ok(out)
}
