//! Bosonic bath: spectral density, autocorrelation and discrete influence coefficients.
//!
//! The spectral density is normalized as `J(ω) = Σ_q |g_q|² δ(ω − ω_q)` for the
//! coupling `H_SB = S ⊗ Σ_q (g_q b_q + g_q* b_q†)`, so the bath autocorrelation is
//!
//! `C(t) = ∫₀^∞ dω J(ω) [coth(ω / 2ν_T) cos ωt − i sin ωt]`
//!
//! with no prefactor. The η coefficients are the double time integrals of `C`
//! over one Trotter step; the inner integrals are done analytically, leaving a
//! single frequency integral per coefficient:
//!
//! * `η₀ = ∫ dω J(ω) [coth · (1 − cos ω dt) − i (ω dt − sin ω dt)] / ω²`
//! * `η_k = ∫ dω J(ω) 4 sin²(ω dt / 2) / ω² · [coth · cos(k ω dt) − i sin(k ω dt)]`, `k ≥ 1`

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::liouville;
use crate::quadrature::{self, Settings};

/// `k_B / ħ` in ps⁻¹ K⁻¹ from the exact SI values of both constants.
pub const KB_OVER_HBAR_PS_INV_PER_K: f64 = 1.380_649e-23 / 1.054_571_817e-34 * 1e-12;

/// Absolute tolerance of every frequency integral.
pub const QUAD_ABS_TOL: f64 = 1e-10;

/// Thermal frequency `k_B T / ħ` in ps⁻¹ for a temperature in kelvin.
pub fn nu_t_from_kelvin(kelvin: f64) -> f64 {
    kelvin * KB_OVER_HBAR_PS_INV_PER_K
}

/// Bath parameters together with the system operator it couples to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BathRecord", into = "BathRecord")]
pub struct BathSpec {
    pub alpha: f64,
    /// Cutoff frequency ω_c in ps⁻¹.
    pub omega_c: f64,
    pub power: f64,
    /// Thermal frequency k_B T / ħ in ps⁻¹; zero means zero temperature.
    pub nu_t: f64,
    pub coupling_operator: Array2<C64>,
    /// Frequency integrals are truncated at `omega_max_factor · omega_c`.
    pub omega_max_factor: f64,
}

impl BathSpec {
    /// Bath coupled through `s_z = σ_z / 2` with the default 8 ω_c integration limit.
    pub fn new(alpha: f64, omega_c: f64, power: f64, nu_t: f64) -> Result<Self> {
        let bath = BathSpec {
            alpha,
            omega_c,
            power,
            nu_t,
            coupling_operator: liouville::spin_z(),
            omega_max_factor: 8.0,
        };
        bath.validate()?;
        Ok(bath)
    }

    /// The super-Ohmic phonon bath: α = 0.126, ω_c = 3.04 ps⁻¹, T = 5 K.
    pub fn reference() -> Self {
        BathSpec::new(0.126, 3.04, 3.0, nu_t_from_kelvin(5.0)).expect("valid reference bath")
    }

    /// Same bath with coupling strength zero.
    pub fn decoupled(&self) -> Self {
        BathSpec {
            alpha: 0.0,
            ..self.clone()
        }
    }

    pub fn with_coupling_operator(mut self, op: Array2<C64>) -> Result<Self> {
        self.coupling_operator = op;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.omega_c, self.power, self.nu_t, self.omega_max_factor]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Domain("bath parameters must be finite".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::Domain(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if self.omega_c <= 0.0 {
            return Err(Error::Domain(format!("omega_c must be positive, got {}", self.omega_c)));
        }
        if self.nu_t < 0.0 {
            return Err(Error::Domain(format!("nu_T must be non-negative, got {}", self.nu_t)));
        }
        if self.power <= 1.0 {
            return Err(Error::Domain(format!(
                "spectral exponent must exceed 1 for the influence integrals to converge, got {}",
                self.power
            )));
        }
        if self.omega_max_factor <= 0.0 {
            return Err(Error::Domain("integration limit factor must be positive".into()));
        }
        let op = &self.coupling_operator;
        let (r, c) = op.dim();
        if r != c || r == 0 {
            return Err(Error::Dimension(format!("coupling operator has shape {r}x{c}")));
        }
        let dev = op
            .indexed_iter()
            .map(|((i, j), z)| (z - op[(j, i)].conj()).norm())
            .fold(0.0, f64::max);
        if dev > 1e-12 {
            return Err(Error::Precondition("coupling operator is not Hermitian".into()));
        }
        Ok(())
    }

    pub fn sys_dim(&self) -> usize {
        self.coupling_operator.nrows()
    }

    fn omega_max(&self) -> f64 {
        self.omega_max_factor * self.omega_c
    }

    fn density(&self, omega: f64) -> f64 {
        if omega == 0.0 {
            return 0.0;
        }
        2.0 * self.alpha
            * omega.powf(self.power)
            * self.omega_c.powf(1.0 - self.power)
            * (-(omega / self.omega_c).powi(2)).exp()
    }

    fn thermal_factor(&self, omega: f64) -> f64 {
        if self.nu_t == 0.0 {
            return 1.0;
        }
        coth(omega / (2.0 * self.nu_t))
    }

    /// `J(ω) coth(ω / 2ν_T)`, regular at ω = 0 for power > 1.
    fn thermal_density(&self, omega: f64) -> f64 {
        if omega == 0.0 {
            return 0.0;
        }
        self.density(omega) * self.thermal_factor(omega)
    }
}

/// `coth x` for x > 0, switching to its Laurent series near the pole.
pub fn coth(x: f64) -> f64 {
    if x < 1e-4 {
        1.0 / x + x / 3.0
    } else {
        1.0 / x.tanh()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BathRecord {
    alpha: f64,
    omega_c: f64,
    power: f64,
    nu_t: f64,
    omega_max_factor: f64,
    /// Row-major (re, im) pairs.
    coupling_operator: Vec<Vec<[f64; 2]>>,
}

impl From<BathSpec> for BathRecord {
    fn from(b: BathSpec) -> Self {
        BathRecord {
            alpha: b.alpha,
            omega_c: b.omega_c,
            power: b.power,
            nu_t: b.nu_t,
            omega_max_factor: b.omega_max_factor,
            coupling_operator: b
                .coupling_operator
                .rows()
                .into_iter()
                .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
                .collect(),
        }
    }
}

impl TryFrom<BathRecord> for BathSpec {
    type Error = Error;

    fn try_from(r: BathRecord) -> Result<Self> {
        let d = r.coupling_operator.len();
        if d == 0 || r.coupling_operator.iter().any(|row| row.len() != d) {
            return Err(Error::Dimension("coupling operator must be square".into()));
        }
        let op = Array2::from_shape_fn((d, d), |(i, j)| {
            let [re, im] = r.coupling_operator[i][j];
            C64::new(re, im)
        });
        let bath = BathSpec {
            alpha: r.alpha,
            omega_c: r.omega_c,
            power: r.power,
            nu_t: r.nu_t,
            coupling_operator: op,
            omega_max_factor: r.omega_max_factor,
        };
        bath.validate()?;
        Ok(bath)
    }
}

/// Discrete influence coefficients η_k, k = 0 … K, for a stationary bath.
#[derive(Clone, Debug, PartialEq)]
pub struct EtaTable {
    pub dt: f64,
    pub memory_steps: usize,
    pub eta: Vec<C64>,
}

impl EtaTable {
    /// η at lag `k`, zero beyond the memory window.
    pub fn at(&self, k: usize) -> C64 {
        self.eta.get(k).copied().unwrap_or(C64::new(0.0, 0.0))
    }
}

/// `J(ω)` in ps⁻¹.
pub fn spectral_density(bath: &BathSpec, omega: f64) -> Result<f64> {
    if !(omega >= 0.0) {
        return Err(Error::Domain(format!("frequency must be non-negative, got {omega}")));
    }
    Ok(bath.density(omega))
}

fn settings(abs_tol: f64) -> Settings {
    Settings {
        abs_tol,
        ..Settings::default()
    }
}

fn integrate_complex(
    bath: &BathSpec,
    abs_tol: f64,
    what: &str,
    re: impl FnMut(f64) -> f64,
    im: impl FnMut(f64) -> f64,
) -> Result<C64> {
    let hi = bath.omega_max();
    let real = quadrature::integrate(re, 0.0, hi, settings(abs_tol), &format!("Re {what}"))?;
    let imag = quadrature::integrate(im, 0.0, hi, settings(abs_tol), &format!("Im {what}"))?;
    Ok(C64::new(real.value, imag.value))
}

/// Bath autocorrelation `C(t)` in ps⁻².
pub fn correlation(bath: &BathSpec, t: f64) -> Result<C64> {
    correlation_with_tol(bath, t, QUAD_ABS_TOL)
}

pub(crate) fn correlation_with_tol(bath: &BathSpec, t: f64, abs_tol: f64) -> Result<C64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("correlation time must be non-negative, got {t}")));
    }
    integrate_complex(
        bath,
        abs_tol,
        &format!("C({t})"),
        |w| bath.thermal_density(w) * (w * t).cos(),
        |w| -bath.density(w) * (w * t).sin(),
    )
}

/// `(x − sin x) / x²`, accurate for small x.
fn x_minus_sin_over_sq(x: f64, omega: f64) -> f64 {
    if x < 1e-3 {
        let x3 = x * x * x;
        (x3 / 6.0 - x3 * x * x / 120.0) / (omega * omega)
    } else {
        (x - x.sin()) / (omega * omega)
    }
}

/// η coefficient at lag `k` for time step `dt`.
pub fn eta(bath: &BathSpec, dt: f64, k: usize) -> Result<C64> {
    eta_with_tol(bath, dt, k, QUAD_ABS_TOL)
}

pub(crate) fn eta_with_tol(bath: &BathSpec, dt: f64, k: usize, abs_tol: f64) -> Result<C64> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Precondition(format!("time step must be positive, got {dt}")));
    }
    if k == 0 {
        return integrate_complex(
            bath,
            abs_tol,
            "eta_0",
            |w| {
                if w == 0.0 {
                    return 0.0;
                }
                let s = (0.5 * w * dt).sin();
                bath.thermal_density(w) * 2.0 * s * s / (w * w)
            },
            |w| {
                if w == 0.0 {
                    return 0.0;
                }
                -bath.density(w) * x_minus_sin_over_sq(w * dt, w)
            },
        );
    }
    let lag = k as f64 * dt;
    let window = |w: f64| {
        let s = (0.5 * w * dt).sin();
        4.0 * s * s / (w * w)
    };
    integrate_complex(
        bath,
        abs_tol,
        &format!("eta_{k}"),
        |w| {
            if w == 0.0 {
                return 0.0;
            }
            bath.thermal_density(w) * window(w) * (w * lag).cos()
        },
        |w| {
            if w == 0.0 {
                return 0.0;
            }
            -bath.density(w) * window(w) * (w * lag).sin()
        },
    )
}

/// Influence coefficients η_0 … η_K.
pub fn eta_table(bath: &BathSpec, dt: f64, memory_steps: usize) -> Result<EtaTable> {
    if memory_steps < 1 {
        return Err(Error::Precondition("memory_steps must be at least 1".into()));
    }
    bath.validate()?;
    let eta = (0..=memory_steps)
        .map(|k| eta(bath, dt, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(EtaTable {
        dt,
        memory_steps,
        eta,
    })
}
