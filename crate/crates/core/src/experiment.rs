//! Experiment configuration and the drivers behind the command-line tool:
//! PT building and caching, single-duration optimization, duration sweeps and
//! non-Markovianity analysis, with JSON and CSV output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bath::{nu_t_from_kelvin, BathSpec};
use crate::error::{Error, Result};
use crate::liouville::{BlochVector, DensityVector};
use crate::nonmarkov::{blp_measure, BlpConfig, BlpResult};
use crate::optimize::{control_b_schedule, maximize_with_restarts, steps_for_duration, OptimizationResult, OptimizerConfig};
use crate::oracles::independent_boson_coherence;
use crate::process_tensor::{build_pt, build_pt_prefixes, load_pt, payload_sha256, save_pt, CompressionConfig, ProcessTensorMPO};
use crate::propagation::{objective_fidelity, trajectory, ControlSchedule, TrajectoryRecord};

pub const BUILD_SCHEMA: &str = "ptcontrol.build_summary/1";
pub const OPTIMIZE_SCHEMA: &str = "ptcontrol.optimization/1";
pub const NONMARKOV_SCHEMA: &str = "ptcontrol.nonmarkov/1";
pub const SWEEP_SCHEMA: &str = "ptcontrol.sweep/1";
pub const TRAJECTORY_SCHEMA: &str = "ptcontrol.trajectory/1";

/// Largest number of durations accepted from a range expression.
const MAX_DURATIONS: usize = 10_000;

/// Seed of the random restart stream; restarts are the only stochastic component.
const RESTART_SEED: u64 = 0x5eed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct BathConfig {
    pub alpha: f64,
    pub omega_c_ps_inv: f64,
    pub power: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_K: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_T_ps_inv: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub dt_ps: f64,
    pub memory_time_ps: f64,
    pub svd_rel_cutoff: f64,
    pub max_bond: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub hx_max: f64,
    pub hz_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatesConfig {
    pub initial: [f64; 3],
    pub target: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub bath: BathConfig,
    pub discretization: DiscretizationConfig,
    pub control: ControlConfig,
    pub states: StatesConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub blp: BlpConfig,
}

impl Default for ExperimentConfig {
    /// Phonon bath at 5 K, 0.05 ps steps, 3 ps memory, transfer from −x to +x.
    fn default() -> Self {
        ExperimentConfig {
            bath: BathConfig {
                alpha: 0.126,
                omega_c_ps_inv: 3.04,
                power: 3.0,
                temperature_K: Some(5.0),
                nu_T_ps_inv: None,
            },
            discretization: DiscretizationConfig {
                dt_ps: 0.05,
                memory_time_ps: 3.0,
                svd_rel_cutoff: 1e-7,
                max_bond: 256,
            },
            control: ControlConfig { hx_max: 5.0, hz_max: 1.0 },
            states: StatesConfig {
                initial: [-1.0, 0.0, 0.0],
                target: [1.0, 0.0, 0.0],
            },
            optimizer: OptimizerConfig::default(),
            blp: BlpConfig::default(),
        }
    }
}

fn bloch(v: [f64; 3]) -> BlochVector {
    BlochVector::new(v[0], v[1], v[2])
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Same configuration with the bath switched off.
    pub fn closed(&self) -> Self {
        let mut c = self.clone();
        c.bath.alpha = 0.0;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        match (self.bath.temperature_K, self.bath.nu_T_ps_inv) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(Error::Config(
                    "bath needs exactly one of temperature_K and nu_T_ps_inv".into(),
                ))
            }
        }
        self.bath_spec().map_err(config)?;
        let d = &self.discretization;
        if !(d.dt_ps > 0.0 && d.dt_ps.is_finite()) {
            return Err(Error::Config(format!("dt_ps must be positive, got {}", d.dt_ps)));
        }
        self.compression().validate().map_err(config)?;
        let c = &self.control;
        if !(c.hx_max >= 0.0 && c.hz_max > 0.0 && c.hx_max.is_finite() && c.hz_max.is_finite()) {
            return Err(Error::Config(format!(
                "control bounds must be finite with hx_max >= 0 and hz_max > 0, got {} and {}",
                c.hx_max, c.hz_max
            )));
        }
        let r0 = bloch(self.states.initial).norm();
        if !(r0 <= 1.0 + 1e-12) {
            return Err(Error::Config(format!("initial Bloch vector has norm {r0} > 1")));
        }
        let rt = bloch(self.states.target).norm();
        if !((rt - 1.0).abs() <= 1e-9) {
            return Err(Error::Config(format!("target must be pure (Bloch norm 1), got norm {rt}")));
        }
        self.optimizer.validate().map_err(config)?;
        self.blp.validate().map_err(config)
    }

    pub fn bath_spec(&self) -> Result<BathSpec> {
        let b = &self.bath;
        let nu_t = match (b.temperature_K, b.nu_T_ps_inv) {
            (Some(k), None) if k >= 0.0 => nu_t_from_kelvin(k),
            (None, Some(nu)) => nu,
            (Some(k), None) => return Err(Error::Config(format!("temperature_K must be non-negative, got {k}"))),
            _ => return Err(Error::Config("bath needs exactly one of temperature_K and nu_T_ps_inv".into())),
        };
        BathSpec::new(b.alpha, b.omega_c_ps_inv, b.power, nu_t)
    }

    pub fn compression(&self) -> CompressionConfig {
        CompressionConfig {
            svd_rel_cutoff: self.discretization.svd_rel_cutoff,
            max_bond: self.discretization.max_bond,
            memory_time: self.discretization.memory_time_ps,
        }
    }

    pub fn initial_state(&self) -> DensityVector {
        DensityVector::from_bloch(bloch(self.states.initial))
    }

    pub fn target_state(&self) -> DensityVector {
        DensityVector::from_bloch(bloch(self.states.target))
    }

    pub fn n_steps(&self, duration: f64) -> Result<usize> {
        steps_for_duration(duration, self.discretization.dt_ps)
    }

    pub fn control_b(&self, duration: f64) -> Result<ControlSchedule> {
        control_b_schedule(duration, self.discretization.dt_ps, self.control.hx_max, self.control.hz_max)
    }

    pub fn build_pt(&self, duration: f64) -> Result<ProcessTensorMPO> {
        build_pt(&self.bath_spec()?, self.discretization.dt_ps, self.n_steps(duration)?, &self.compression())
    }
}

/// Parses `start:stop:step` into the durations `start + k·step ≤ stop`.
pub fn parse_duration_range(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.trim().split(':').collect();
    let [start, stop, step] = parts.as_slice() else {
        return Err(Error::Config(format!("duration range {text:?} is not start:stop:step")));
    };
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Config(format!("bad number {s:?} in duration range")))
    };
    let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
    if !(start > 0.0 && step > 0.0 && stop >= start) {
        return Err(Error::Config(format!(
            "duration range needs 0 < start <= stop and step > 0, got {start}:{stop}:{step}"
        )));
    }
    let span = (stop - start) / step;
    if span >= MAX_DURATIONS as f64 {
        return Err(Error::Config(format!("duration range has more than {MAX_DURATIONS} points")));
    }
    let count = (span + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| start + k as f64 * step).collect())
}

/// Parses a BLP grid `NxM` (θ points × φ points).
pub fn parse_grid(text: &str) -> Result<BlpConfig> {
    let bad = || Error::Config(format!("grid {text:?} is not NxM"));
    let (a, b) = text.trim().split_once(['x', 'X']).ok_or_else(bad)?;
    let cfg = BlpConfig {
        n_theta: a.trim().parse().map_err(|_| bad())?,
        n_phi: b.trim().parse().map_err(|_| bad())?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a control schedule from JSON: either a bare schedule object or an
/// optimization report holding one under `schedule`.
pub fn parse_controls(text: &str) -> Result<ControlSchedule> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let value = match value {
        serde_json::Value::Object(mut map) if map.contains_key("schedule") => map.remove("schedule").expect("present"),
        other => other,
    };
    serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid controls: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BuildSummary {
    pub schema: &'static str,
    pub n_steps: usize,
    pub max_bond: usize,
    pub build_seconds: f64,
    pub payload_sha256: String,
    pub cache_hit: bool,
}

/// PT files keyed by a digest of everything that determines their content.
#[derive(Clone, Debug)]
pub struct PtCache {
    dir: PathBuf,
}

impl PtCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        Ok(PtCache { dir })
    }

    pub fn path_for(&self, bath: &BathSpec, dt: f64, n_steps: usize, cfg: &CompressionConfig) -> Result<PathBuf> {
        let key = serde_json::to_vec(&(bath, dt, n_steps, cfg))?;
        let digest = hex::encode(&Sha256::digest(key)[..12]);
        Ok(self.dir.join(format!("pt_{n_steps}_{digest}.ptmpo")))
    }

    /// Loads a cached PT whose payload hash and metadata check out, if any.
    pub fn lookup(&self, bath: &BathSpec, dt: f64, n_steps: usize, cfg: &CompressionConfig) -> Result<Option<ProcessTensorMPO>> {
        let path = self.path_for(bath, dt, n_steps, cfg)?;
        if !path.exists() {
            return Ok(None);
        }
        let Ok(pt) = load_pt(&path) else {
            return Ok(None);
        };
        let m = pt.meta();
        let matches = m.dt == dt && m.n_steps == n_steps && m.compression == *cfg && m.bath == *bath;
        Ok(matches.then_some(pt))
    }

    pub fn store(&self, pt: &ProcessTensorMPO) -> Result<PathBuf> {
        let m = pt.meta();
        let path = self.path_for(&m.bath, m.dt, m.n_steps, &m.compression)?;
        save_pt(pt, &path)?;
        Ok(path)
    }
}

/// Builds the PT for one duration, reusing a verified cache entry when available.
pub fn build_or_load(
    cfg: &ExperimentConfig,
    duration: f64,
    cache: Option<&PtCache>,
) -> Result<(ProcessTensorMPO, BuildSummary)> {
    let bath = cfg.bath_spec()?;
    let dt = cfg.discretization.dt_ps;
    let n = cfg.n_steps(duration)?;
    let comp = cfg.compression();
    let start = Instant::now();
    let cached = match cache {
        Some(c) => c.lookup(&bath, dt, n, &comp)?,
        None => None,
    };
    let hit = cached.is_some();
    let pt = match cached {
        Some(pt) => pt,
        None => {
            let pt = build_pt(&bath, dt, n, &comp)?;
            if let Some(c) = cache {
                c.store(&pt)?;
            }
            pt
        }
    };
    let summary = BuildSummary {
        schema: BUILD_SCHEMA,
        n_steps: n,
        max_bond: pt.max_bond(),
        build_seconds: start.elapsed().as_secs_f64(),
        payload_sha256: payload_sha256(&pt),
        cache_hit: hit,
    };
    Ok((pt, summary))
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimizeReport {
    pub schema: &'static str,
    pub duration_ps: f64,
    #[serde(flatten)]
    pub result: OptimizationResult,
    /// Final fidelity of every run, the control-B start first.
    pub restart_fidelities: Vec<f64>,
    pub control_b_infidelity: f64,
    pub final_bloch_length_a: f64,
    pub final_bloch_length_b: f64,
    /// Exact independent-boson Bloch length along control B (which has `h_x ≡ 0`),
    /// on the trajectory time grid.
    pub oracle_bloch_length_b: Vec<f64>,
    #[serde(skip)]
    pub trajectory_a: TrajectoryRecord,
    #[serde(skip)]
    pub trajectory_b: TrajectoryRecord,
}

/// Optimizes from control B (plus `restarts` random starts) and records the
/// trajectories of the optimum (control A) and of control B.
pub fn run_optimize(pt: &ProcessTensorMPO, cfg: &ExperimentConfig, restarts: usize) -> Result<OptimizeReport> {
    let duration = pt.n_steps() as f64 * pt.dt();
    let rho0 = cfg.initial_state();
    let target = cfg.target_state();
    let init = control_b_schedule(duration, pt.dt(), cfg.control.hx_max, cfg.control.hz_max)?;
    let outcome = maximize_with_restarts(pt, &rho0, &target, &init, &cfg.optimizer, restarts, RESTART_SEED)?;
    let b_fid = objective_fidelity(pt, &init, &rho0, &target)?.clamp(0.0, 1.0);
    let trajectory_a = trajectory(pt, &outcome.best.schedule, &rho0)?;
    let trajectory_b = trajectory(pt, &init, &rho0)?;
    let oracle_bloch_length_b = dephasing_overlay(&pt.meta().bath, &trajectory_b.times, bloch(cfg.states.initial))?;
    Ok(OptimizeReport {
        schema: OPTIMIZE_SCHEMA,
        duration_ps: duration,
        restart_fidelities: outcome.fidelities,
        control_b_infidelity: 1.0 - b_fid,
        final_bloch_length_a: *trajectory_a.bloch_length.last().expect("non-empty"),
        final_bloch_length_b: *trajectory_b.bloch_length.last().expect("non-empty"),
        result: outcome.best,
        oracle_bloch_length_b,
        trajectory_a,
        trajectory_b,
    })
}

/// Bloch length under pure dephasing: `σ_z` is conserved and the transverse
/// component decays as `exp(−Γ(t))`.
fn dephasing_overlay(bath: &BathSpec, times: &[f64], r0: BlochVector) -> Result<Vec<f64>> {
    let transverse = r0.x.hypot(r0.y);
    times
        .iter()
        .map(|&t| Ok(r0.z.hypot(transverse * independent_boson_coherence(bath, t)?)))
        .collect()
}

/// CSV with columns `t,sx,sy,sz,bloch_length`, preceded by a schema comment line.
pub fn trajectory_csv(rec: &TrajectoryRecord) -> String {
    let mut out = format!("# schema={TRAJECTORY_SCHEMA}\nt,sx,sy,sz,bloch_length\n");
    for ((t, b), l) in rec.times.iter().zip(&rec.bloch).zip(&rec.bloch_length) {
        writeln!(out, "{t},{},{},{},{l}", b.x, b.y, b.z).expect("write to string");
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct NonMarkovReport {
    pub schema: &'static str,
    #[serde(rename = "N")]
    pub measure: f64,
    pub argmax_theta: f64,
    pub argmax_phi: f64,
    #[serde(rename = "D_series")]
    pub series: Vec<f64>,
}

impl From<BlpResult> for NonMarkovReport {
    fn from(r: BlpResult) -> Self {
        NonMarkovReport {
            schema: NONMARKOV_SCHEMA,
            measure: r.measure,
            argmax_theta: r.argmax_theta,
            argmax_phi: r.argmax_phi,
            series: r.series,
        }
    }
}

pub fn run_nonmarkov(pt: &ProcessTensorMPO, sched: &ControlSchedule, grid: &BlpConfig) -> Result<NonMarkovReport> {
    Ok(blp_measure(pt, sched, grid)?.into())
}

/// One duration of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub t_ps: f64,
    pub infidelity_a_open: f64,
    pub infidelity_b_open: f64,
    pub infidelity_b_closed: f64,
    pub n_a: f64,
    pub n_b: f64,
    pub max_bond: usize,
    pub iters: usize,
    pub final_bloch_length_a: f64,
    pub final_bloch_length_b: f64,
    /// `ok`, or the error that stopped this duration.
    pub status: String,
}

impl SweepRow {
    fn failed(t_ps: f64, err: &Error) -> Self {
        SweepRow {
            t_ps,
            infidelity_a_open: f64::NAN,
            infidelity_b_open: f64::NAN,
            infidelity_b_closed: f64::NAN,
            n_a: f64::NAN,
            n_b: f64::NAN,
            max_bond: 0,
            iters: 0,
            final_bloch_length_a: f64::NAN,
            final_bloch_length_b: f64::NAN,
            status: format!("error: {err}"),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

pub const SWEEP_HEADER: &str = "T_ps,infidelity_A_open,infidelity_B_open,infidelity_B_closed,N_A,N_B,max_bond,iters,status";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("# schema={SWEEP_SCHEMA}\n{SWEEP_HEADER}\n");
    for r in rows {
        let status = r.status.replace([',', '\n', '\r'], ";");
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{status}",
            r.t_ps, r.infidelity_a_open, r.infidelity_b_open, r.infidelity_b_closed, r.n_a, r.n_b, r.max_bond, r.iters
        )
        .expect("write to string");
    }
    out
}

fn sweep_one(pt: &ProcessTensorMPO, cfg: &ExperimentConfig) -> Result<SweepRow> {
    let duration = pt.n_steps() as f64 * pt.dt();
    let report = run_optimize(pt, cfg, 0)?;
    let closed_cfg = cfg.closed();
    let closed_pt = closed_cfg.build_pt(duration)?;
    let init = cfg.control_b(duration)?;
    let b_closed = objective_fidelity(&closed_pt, &init, &cfg.initial_state(), &cfg.target_state())?.clamp(0.0, 1.0);
    let n_a = blp_measure(pt, &report.result.schedule, &cfg.blp)?.measure;
    let n_b = blp_measure(pt, &init, &cfg.blp)?.measure;
    Ok(SweepRow {
        t_ps: duration,
        infidelity_a_open: report.result.infidelity,
        infidelity_b_open: report.control_b_infidelity,
        infidelity_b_closed: 1.0 - b_closed,
        n_a,
        n_b,
        max_bond: pt.max_bond(),
        iters: report.result.iterations,
        final_bloch_length_a: report.final_bloch_length_a,
        final_bloch_length_b: report.final_bloch_length_b,
        status: "ok".into(),
    })
}

/// PTs for every duration: cache hits first, the rest from one prefix build
/// (falling back to separate builds if the long build fails).
fn sweep_pts(cfg: &ExperimentConfig, durations: &[f64], cache: Option<&PtCache>) -> Vec<Result<ProcessTensorMPO>> {
    let setup = || -> Result<(BathSpec, Vec<usize>)> {
        let steps = durations.iter().map(|&t| cfg.n_steps(t)).collect::<Result<Vec<_>>>();
        Ok((cfg.bath_spec()?, steps?))
    };
    let (bath, steps) = match setup() {
        Ok(s) => s,
        Err(_) => {
            return durations
                .iter()
                .map(|&t| cfg.n_steps(t).and_then(|_| cfg.build_pt(t)))
                .collect();
        }
    };
    let dt = cfg.discretization.dt_ps;
    let comp = cfg.compression();
    let mut out: Vec<Option<Result<ProcessTensorMPO>>> = steps
        .iter()
        .map(|&n| cache.and_then(|c| c.lookup(&bath, dt, n, &comp).ok().flatten()).map(Ok))
        .collect();
    let missing: Vec<usize> = steps.iter().zip(&out).filter(|(_, o)| o.is_none()).map(|(n, _)| *n).collect();
    if !missing.is_empty() {
        let built: Vec<(usize, Result<ProcessTensorMPO>)> = match build_pt_prefixes(&bath, dt, &missing, &comp) {
            Ok(pts) => pts.into_iter().map(|pt| (pt.n_steps(), Ok(pt))).collect(),
            Err(_) => missing.iter().map(|&n| (n, build_pt(&bath, dt, n, &comp))).collect(),
        };
        for (n, pt) in built {
            if let (Ok(pt), Some(c)) = (&pt, cache) {
                let _ = c.store(pt);
            }
            let mut pt = Some(pt);
            for (slot, &m) in out.iter_mut().zip(&steps) {
                if m == n && slot.is_none() {
                    *slot = Some(match &pt {
                        Some(Ok(p)) => Ok(p.clone()),
                        _ => pt.take().expect("first use"),
                    });
                }
            }
        }
    }
    out.into_iter().map(|o| o.expect("every duration filled")).collect()
}

/// Runs the sweep on a pool of `jobs` workers. Rows come back in the order of
/// `durations` regardless of completion order.
pub fn run_sweep(cfg: &ExperimentConfig, durations: &[f64], jobs: usize, cache: Option<&PtCache>) -> Vec<SweepRow> {
    let pts = sweep_pts(cfg, durations, cache);
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, SweepRow)>();
    let jobs = jobs.clamp(1, durations.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            let tx = tx.clone();
            let (next, pts) = (&next, &pts);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(pt) = pts.get(i) else { break };
                let row = match pt {
                    Ok(pt) => sweep_one(pt, cfg).unwrap_or_else(|e| SweepRow::failed(durations[i], &e)),
                    Err(e) => SweepRow::failed(durations[i], e),
                };
                if tx.send((i, row)).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut rows: Vec<(usize, SweepRow)> = rx.into_iter().collect();
    rows.sort_by_key(|(i, _)| *i);
    rows.into_iter().map(|(_, r)| r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_config_round_trips_and_uses_kelvin() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert!(!text.contains("nu_T_ps_inv"));
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert!((back.bath_spec().unwrap().nu_t - 0.654_60).abs() < 1e-5);
    }

    #[test]
    fn config_rejects_typos_and_bad_physics() {
        let good = serde_json::to_value(ExperimentConfig::default()).unwrap();
        let mut typo = good.clone();
        typo["bath"]["alpah"] = 0.1.into();
        assert!(matches!(ExperimentConfig::from_json(&typo.to_string()), Err(Error::Config(_))));

        let mut both = good.clone();
        both["bath"]["nu_T_ps_inv"] = 0.5.into();
        assert!(ExperimentConfig::from_json(&both.to_string()).is_err());

        let mut neither = good.clone();
        neither["bath"].as_object_mut().unwrap().remove("temperature_K");
        assert!(ExperimentConfig::from_json(&neither.to_string()).is_err());

        let mut mixed_target = good.clone();
        mixed_target["states"]["target"] = serde_json::json!([0.5, 0.0, 0.0]);
        assert!(ExperimentConfig::from_json(&mixed_target.to_string()).is_err());

        let mut long_initial = good.clone();
        long_initial["states"]["initial"] = serde_json::json!([1.0, 1.0, 0.0]);
        assert!(ExperimentConfig::from_json(&long_initial.to_string()).is_err());

        let mut mixed_initial = good;
        mixed_initial["states"]["initial"] = serde_json::json!([0.3, 0.0, 0.0]);
        assert!(ExperimentConfig::from_json(&mixed_initial.to_string()).is_ok());
    }

    #[test]
    fn optimizer_and_blp_sections_are_optional() {
        let mut v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        v.as_object_mut().unwrap().remove("optimizer");
        v.as_object_mut().unwrap().remove("blp");
        let cfg = ExperimentConfig::from_json(&v.to_string()).unwrap();
        assert_eq!(cfg.optimizer, OptimizerConfig::default());
        assert_eq!(cfg.blp, BlpConfig::default());
    }

    #[test]
    fn duration_ranges() {
        assert_eq!(parse_duration_range("1.0:5.0:0.5").unwrap(), vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0]);
        assert_eq!(parse_duration_range("2:2:1").unwrap(), vec![2.0]);
        assert_eq!(parse_duration_range("0.1:0.3:0.1").unwrap().len(), 3);
        for bad in ["", "1:2", "1:2:0", "2:1:0.5", "0:1:0.5", "a:b:c", "1:2:3:4", "1:inf:1", "1:1e9:1e-3"] {
            assert!(parse_duration_range(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("16x32").unwrap(), BlpConfig { n_theta: 16, n_phi: 32 });
        assert_eq!(parse_grid("4X8").unwrap(), BlpConfig { n_theta: 4, n_phi: 8 });
        for bad in ["", "16", "1x8", "x", "16x", "-1x4", "4x4x4"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn controls_accept_bare_schedules_and_reports() {
        let s = ControlSchedule::constant(0.05, 3, 1.0, 0.5, 5.0, 1.0).unwrap();
        let bare = serde_json::to_string(&s).unwrap();
        assert_eq!(parse_controls(&bare).unwrap(), s);
        let wrapped = serde_json::json!({ "schema": "x", "schedule": s }).to_string();
        assert_eq!(parse_controls(&wrapped).unwrap(), s);
        assert!(parse_controls("{\"dt\": 0.05}").is_err());
        assert!(parse_controls("[1, 2]").is_err());
    }

    #[test]
    fn cache_hits_are_verified() {
        let dir = tempfile::tempdir().unwrap();
        let cache = PtCache::new(dir.path()).unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.discretization.memory_time_ps = 0.2;
        let (pt, first) = build_or_load(&cfg, 0.3, Some(&cache)).unwrap();
        assert!(!first.cache_hit);
        let (again, second) = build_or_load(&cfg, 0.3, Some(&cache)).unwrap();
        assert!(second.cache_hit);
        assert_eq!(pt, again);
        assert_eq!(first.payload_sha256, second.payload_sha256);

        let path = cache.path_for(&cfg.bath_spec().unwrap(), 0.05, 6, &cfg.compression()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&path, bytes).unwrap();
        let (rebuilt, third) = build_or_load(&cfg, 0.3, Some(&cache)).unwrap();
        assert!(!third.cache_hit);
        assert_eq!(rebuilt, pt);
    }

    #[test]
    fn closed_sweep_rows_follow_the_speed_limit() {
        let mut cfg = ExperimentConfig::default().closed();
        cfg.blp = BlpConfig { n_theta: 2, n_phi: 4 };
        let rows = run_sweep(&cfg, &[1.0, 2.0, 3.5], 2, None);
        assert_eq!(rows.iter().map(|r| r.t_ps).collect::<Vec<_>>(), vec![1.0, 2.0, 3.5]);
        assert!(rows.iter().all(SweepRow::is_ok));
        assert!(rows[0].infidelity_b_closed > rows[1].infidelity_b_closed);
        assert!(rows[2].infidelity_b_closed < 1e-8);
        assert!(rows.iter().all(|r| r.max_bond == 1 && r.n_a.abs() < 1e-10 && r.n_b.abs() < 1e-10));
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().nth(1).unwrap(), SWEEP_HEADER);
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn failed_durations_are_recorded_per_row() {
        let mut cfg = ExperimentConfig::default().closed();
        cfg.blp = BlpConfig { n_theta: 2, n_phi: 4 };
        let rows = run_sweep(&cfg, &[1.0, 1.01], 1, None);
        assert!(rows[0].is_ok());
        assert!(rows[1].status.starts_with("error"));
        assert!(!sweep_csv(&rows).lines().last().unwrap().contains('\n'));
    }

    #[test]
    fn control_b_overlay_tracks_the_simulation() {
        let mut cfg = ExperimentConfig::default();
        cfg.optimizer.max_iters = 3;
        let pt = cfg.build_pt(1.0).unwrap();
        let report = run_optimize(&pt, &cfg, 0).unwrap();
        assert_eq!(report.oracle_bloch_length_b.len(), 21);
        for (sim, exact) in report.trajectory_b.bloch_length.iter().zip(&report.oracle_bloch_length_b) {
            assert!((sim - exact).abs() < 1e-2, "{sim} vs {exact}");
        }
        assert!(report.oracle_bloch_length_b[20] < 0.99);
    }

    #[test]
    fn trajectory_csv_layout() {
        let cfg = ExperimentConfig::default().closed();
        let pt = cfg.build_pt(0.5).unwrap();
        let rec = trajectory(&pt, &cfg.control_b(0.5).unwrap(), &cfg.initial_state()).unwrap();
        let csv = trajectory_csv(&rec);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "t,sx,sy,sz,bloch_length");
        assert_eq!(lines.len(), 2 + 11);
        assert!(lines[2].starts_with("0,-1,"));
    }

    proptest! {
        #[test]
        fn ranges_are_increasing_and_within_bounds(start in 0.01f64..10.0, len in 0.0f64..10.0, step in 0.01f64..2.0) {
            let stop = start + len;
            let v = parse_duration_range(&format!("{start}:{stop}:{step}")).unwrap();
            prop_assert_eq!(v[0], start);
            prop_assert!(v.windows(2).all(|w| w[1] > w[0]));
            prop_assert!(*v.last().unwrap() <= stop + 1e-9 * step);
            prop_assert!(*v.last().unwrap() + step > stop - 1e-9 * step);
        }

        #[test]
        fn range_and_grid_parsers_never_panic(s in "\\PC{0,24}") {
            let _ = parse_duration_range(&s);
            let _ = parse_grid(&s);
            let _ = parse_controls(&s);
        }
    }
}
