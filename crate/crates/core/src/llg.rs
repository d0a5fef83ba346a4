//! Stochastic Landau-Lifshitz-Gilbert macrospin dynamics.
//!
//! The Gilbert form with a Slonczewski spin-torque term,
//!
//! ```text
//! dm/dt = -γ m×H + α m×dm/dt + (1/qNs) m×(Is×m)
//! ```
//!
//! with q = -e the electron charge, so a spin current along p pushes m
//! toward -p.
//!
//! is integrated in its explicit Landau-Lifshitz form (obtained by crossing
//! both sides with m and substituting back):
//!
//! ```text
//! (1+α²) dm/dt = -γ m×H - αγ m×(m×H) + (1/qNs) [ m×(Is×m) + α m×Is ]
//! ```
//!
//! Thermal agitation enters as an extra Gaussian field added to `H` and held
//! constant over a step; the step itself is the stochastic Heun
//! predictor-corrector followed by renormalization to |m| = 1.

use std::f64::consts::PI;
use std::ops::ControlFlow;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constants::{gyromagnetic_ratio, BOHR_MAGNETON, BOLTZMANN, ELEMENTARY_CHARGE, VACUUM_PERMEABILITY};
use crate::error::{Error, Result};
use crate::seed;
use crate::vec3::Vector3;

/// Default integration step (1 ps).
pub const DEFAULT_DT: f64 = 1e-12;

const UNIT_TOL: f64 = 1e-6;

/// Elliptical free layer. The long axis is the easy axis (z), the short
/// in-plane axis is y and the film normal is x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticalFreeLayer {
    /// Short in-plane axis, full length (m).
    pub width: f64,
    /// Long in-plane axis, full length (m).
    pub length: f64,
    pub thickness: f64,
}

impl EllipticalFreeLayer {
    /// 17 nm × 42.5 nm × 0.8 nm.
    pub const NOMINAL: EllipticalFreeLayer = EllipticalFreeLayer {
        width: 17e-9,
        length: 42.5e-9,
        thickness: 0.8e-9,
    };

    pub fn volume(&self) -> f64 {
        PI / 4.0 * self.width * self.length * self.thickness
    }

    /// Demagnetization factors `[Nx, Ny, Nz]` of the inscribed uniform
    /// ellipsoid, normalized to sum to one.
    pub fn demag_factors(&self) -> [f64; 3] {
        // Semi-axes in nm keep the integrand well scaled.
        let semi = [self.thickness * 0.5e9, self.width * 0.5e9, self.length * 0.5e9];
        let n = [0, 1, 2].map(|i| ellipsoid_demag(semi, i));
        let sum: f64 = n.iter().sum();
        n.map(|v| v / sum)
    }
}

/// N_i = (abc/2) ∫₀^∞ ds / ((a_i²+s) √((a²+s)(b²+s)(c²+s))), evaluated with
/// s = e^u and composite Simpson on u ∈ [-60, 60].
fn ellipsoid_demag(semi: [f64; 3], axis: usize) -> f64 {
    let [a, b, c] = semi;
    let f = |u: f64| {
        let s = u.exp();
        s / ((semi[axis] * semi[axis] + s) * ((a * a + s) * (b * b + s) * (c * c + s)).sqrt())
    };
    let (lo, hi, n) = (-60.0_f64, 60.0_f64, 24_000usize);
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + k as f64 * h);
    }
    a * b * c / 2.0 * acc * h / 3.0
}

/// Material and geometry of a single-domain free layer (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MagnetParamsDoc")]
pub struct MagnetParams {
    /// Saturation magnetization (A/m).
    pub ms: f64,
    /// Free-layer volume (m³).
    pub volume: f64,
    /// Gilbert damping.
    pub damping: f64,
    /// Gyromagnetic ratio γ (m/(A·s)).
    pub gyro: f64,
    /// Uniaxial anisotropy field along z (A/m).
    pub hk: f64,
    /// Diagonal demagnetization factors `[Nx, Ny, Nz]`.
    pub demag: [f64; 3],
    /// Temperature (K).
    pub temperature: f64,
    /// Ns = Ms·V/μ_B.
    pub spin_count: f64,
}

#[derive(Deserialize)]
struct MagnetParamsDoc {
    ms: f64,
    volume: f64,
    damping: f64,
    #[serde(default)]
    gyro: Option<f64>,
    hk: f64,
    demag: [f64; 3],
    temperature: f64,
    #[serde(default)]
    spin_count: Option<f64>,
}

impl TryFrom<MagnetParamsDoc> for MagnetParams {
    type Error = Error;

    fn try_from(d: MagnetParamsDoc) -> Result<Self> {
        let p = MagnetParams {
            ms: d.ms,
            volume: d.volume,
            damping: d.damping,
            gyro: d.gyro.unwrap_or_else(gyromagnetic_ratio),
            hk: d.hk,
            demag: d.demag,
            temperature: d.temperature,
            spin_count: d.spin_count.unwrap_or(d.ms * d.volume / BOHR_MAGNETON),
        };
        p.validate()?;
        Ok(p)
    }
}

impl MagnetParams {
    pub fn new(ms: f64, volume: f64, damping: f64, hk: f64, demag: [f64; 3], temperature: f64) -> Result<Self> {
        let p = MagnetParams {
            ms,
            volume,
            damping,
            gyro: gyromagnetic_ratio(),
            hk,
            demag,
            temperature,
            spin_count: ms * volume / BOHR_MAGNETON,
        };
        p.validate()?;
        Ok(p)
    }

    /// The reference superparamagnet: CoFeB-like ellipse (17 × 42.5 × 0.8 nm),
    /// Ms = 750 kA/m, α = 0.0122, 300 K, anisotropy calibrated so the
    /// zero-field barrier is 2 k_BT.
    pub fn nominal() -> Self {
        let geom = EllipticalFreeLayer::NOMINAL;
        let mut p = MagnetParams::new(7.5e5, geom.volume(), 0.0122, 0.0, geom.demag_factors(), 300.0)
            .expect("nominal parameters are valid");
        p.hk = calibrate_anisotropy(&p, 2.0).expect("nominal calibration");
        p
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.ms, self.volume, self.damping, self.gyro, self.hk, self.temperature]
            .iter()
            .chain(self.demag.iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid("magnet parameters must be finite"));
        }
        if self.ms <= 0.0 {
            return Err(Error::invalid("ms must be positive"));
        }
        if self.volume <= 0.0 {
            return Err(Error::invalid("volume must be positive"));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::invalid("damping must lie in [0, 1)"));
        }
        if self.gyro <= 0.0 {
            return Err(Error::invalid("gyro must be positive"));
        }
        if self.temperature < 0.0 {
            return Err(Error::invalid("temperature must be non-negative"));
        }
        if self.demag.iter().any(|&n| n < 0.0) || (self.demag.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            // All-zero factors are accepted as "demagnetization off".
            if self.demag != [0.0; 3] {
                return Err(Error::invalid("demag factors must be non-negative and sum to 1"));
            }
        }
        let ns = self.ms * self.volume / BOHR_MAGNETON;
        if ((self.spin_count - ns) / ns).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "spin_count {} inconsistent with ms*volume/mu_B = {ns}",
                self.spin_count
            )));
        }
        Ok(())
    }

    pub fn with_hk(mut self, hk: f64) -> Self {
        self.hk = hk;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }

    pub fn with_demag(mut self, demag: [f64; 3]) -> Self {
        self.demag = demag;
        self
    }

    pub fn with_volume(mut self, volume: f64) -> Self {
        self.volume = volume;
        self.spin_count = self.ms * volume / BOHR_MAGNETON;
        self
    }
}

fn check_unit(m: Vector3) -> Result<()> {
    if !m.is_finite() || (m.norm() - 1.0).abs() > UNIT_TOL {
        return Err(Error::invalid(format!("magnetization {m:?} is not a unit vector")));
    }
    Ok(())
}

#[inline]
fn field_unchecked(m: Vector3, p: &MagnetParams, applied: Vector3) -> Vector3 {
    let [nx, ny, nz] = p.demag;
    Vector3::new(-p.ms * nx * m.x, -p.ms * ny * m.y, p.hk * m.z - p.ms * nz * m.z) + applied
}

/// Anisotropy + demagnetization + applied field (A/m).
pub fn effective_field(m: Vector3, params: &MagnetParams, applied: Vector3) -> Result<Vector3> {
    check_unit(m)?;
    Ok(field_unchecked(m, params, applied))
}

/// Standard deviation of each thermal-field component for step `dt`.
pub fn thermal_sigma(params: &MagnetParams, dt: f64) -> f64 {
    let a = params.damping;
    (a / (1.0 + a * a) * 2.0 * BOLTZMANN * params.temperature
        / (params.gyro * VACUUM_PERMEABILITY * params.ms * params.volume * dt))
        .sqrt()
}

/// One thermal-field draw; always consumes exactly three normals.
pub fn thermal_field_sample<R: Rng + ?Sized>(params: &MagnetParams, dt: f64, rng: &mut R) -> Result<Vector3> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    if params.temperature < 0.0 {
        return Err(Error::invalid("temperature must be non-negative"));
    }
    Ok(gaussian3(rng) * thermal_sigma(params, dt))
}

#[inline]
fn gaussian3<R: Rng + ?Sized>(rng: &mut R) -> Vector3 {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    let z: f64 = rng.sample(StandardNormal);
    Vector3::new(x, y, z)
}

/// External stimulus seen by the free layer during one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DriveSample {
    /// Applied field (A/m).
    pub field: Vector3,
    /// Spin current vector Is (A); direction is the spin polarization.
    pub spin_current: Vector3,
}

impl DriveSample {
    pub const NONE: DriveSample = DriveSample {
        field: Vector3::ZERO,
        spin_current: Vector3::ZERO,
    };

    fn is_finite(&self) -> bool {
        self.field.is_finite() && self.spin_current.is_finite()
    }
}

/// Source of per-step drive. The current magnetization is passed so that
/// state-dependent drives (e.g. a voltage across a magnetoresistive stack)
/// can be expressed.
pub trait Drive {
    fn sample(&self, t: f64, m: Vector3) -> DriveSample;
}

impl Drive for DriveSample {
    fn sample(&self, _t: f64, _m: Vector3) -> DriveSample {
        *self
    }
}

/// Time-dependent drive built from two closures.
pub struct DriveSignal {
    pub applied_field: Box<dyn Fn(f64) -> Vector3 + Send + Sync>,
    pub spin_current: Box<dyn Fn(f64) -> Vector3 + Send + Sync>,
}

impl DriveSignal {
    pub fn constant(d: DriveSample) -> Self {
        DriveSignal {
            applied_field: Box::new(move |_| d.field),
            spin_current: Box::new(move |_| d.spin_current),
        }
    }
}

impl Drive for DriveSignal {
    fn sample(&self, t: f64, _m: Vector3) -> DriveSample {
        DriveSample {
            field: (self.applied_field)(t),
            spin_current: (self.spin_current)(t),
        }
    }
}

/// Precomputed per-step coefficients for a fixed (params, dt).
#[derive(Debug, Clone)]
pub struct Stepper {
    params: MagnetParams,
    dt: f64,
    gamma_eff: f64,
    alpha: f64,
    stt_eff: f64,
    sigma: f64,
}

impl Stepper {
    pub fn new(params: &MagnetParams, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid("dt must be positive and finite"));
        }
        params.validate()?;
        let a = params.damping;
        Ok(Stepper {
            params: *params,
            dt,
            gamma_eff: params.gyro / (1.0 + a * a),
            alpha: a,
            stt_eff: 1.0 / (-ELEMENTARY_CHARGE * params.spin_count * (1.0 + a * a)),
            sigma: thermal_sigma(params, dt),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn params(&self) -> &MagnetParams {
        &self.params
    }

    #[inline]
    fn rhs(&self, m: Vector3, h: Vector3, is: Vector3) -> Vector3 {
        let mxh = m.cross(h);
        let mxmxh = m.cross(mxh);
        let mxi = m.cross(is);
        let mxixm = mxi.cross(m);
        (mxh + mxmxh * self.alpha) * (-self.gamma_eff) + (mxixm + mxi * self.alpha) * self.stt_eff
    }

    /// Deterministic Heun step with a given (frozen) thermal field.
    #[inline]
    pub fn step_with_noise(&self, m: Vector3, drive: DriveSample, thermal: Vector3) -> Vector3 {
        let ext = drive.field + thermal;
        let k1 = self.rhs(m, field_unchecked(m, &self.params, ext), drive.spin_current);
        let pred = m + k1 * self.dt;
        let k2 = self.rhs(pred, field_unchecked(pred, &self.params, ext), drive.spin_current);
        (m + (k1 + k2) * (0.5 * self.dt)).normalized()
    }

    /// One stochastic Heun step (draws three normals).
    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, m: Vector3, drive: DriveSample, rng: &mut R) -> Vector3 {
        let thermal = gaussian3(rng) * self.sigma;
        self.step_with_noise(m, drive, thermal)
    }
}

/// Advance `m` by one stochastic Heun step of length `dt`.
pub fn llg_step<R: Rng + ?Sized>(
    m: Vector3,
    params: &MagnetParams,
    drive: DriveSample,
    dt: f64,
    rng: &mut R,
) -> Result<Vector3> {
    check_unit(m)?;
    if !drive.is_finite() {
        return Err(Error::Numeric {
            step: 0,
            what: format!("drive {drive:?}"),
        });
    }
    Ok(Stepper::new(params, dt)?.step(m, drive, rng))
}

/// Run `n_steps` steps from `m0`, calling `visit(step, t, m)` after each one
/// (the initial state is not visited). Returns the final magnetization and
/// the number of steps taken.
pub fn integrate<D, R, F>(
    m0: Vector3,
    stepper: &Stepper,
    drive: &D,
    t0: f64,
    n_steps: u64,
    rng: &mut R,
    mut visit: F,
) -> Result<(Vector3, u64)>
where
    D: Drive + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(u64, f64, Vector3) -> ControlFlow<()>,
{
    check_unit(m0)?;
    let dt = stepper.dt();
    let mut m = m0;
    for step in 0..n_steps {
        let t = t0 + step as f64 * dt;
        let d = drive.sample(t, m);
        if !d.is_finite() {
            return Err(Error::Numeric {
                step,
                what: format!("drive {d:?} at t = {t:e} s"),
            });
        }
        m = stepper.step(m, d, rng);
        if !m.is_finite() {
            return Err(Error::Numeric {
                step,
                what: "magnetization".into(),
            });
        }
        if visit(step + 1, t + dt, m).is_break() {
            return Ok((m, step + 1));
        }
    }
    Ok((m, n_steps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub m: Vector3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub timestep: f64,
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// CSV with header `t_s,mx,my,mz`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t_s", "mx", "my", "mz"])?;
        for s in &self.samples {
            wr.write_record([s.t.to_string(), s.m.x.to_string(), s.m.y.to_string(), s.m.z.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Number of integration steps covering `duration` (floor, tolerant to
/// rounding when `duration` is an exact multiple of `dt`).
pub fn step_count(duration: f64, dt: f64) -> u64 {
    (duration / dt * (1.0 + 1e-12)).floor() as u64
}

pub fn simulate_trajectory<D: Drive + ?Sized>(
    m0: Vector3,
    params: &MagnetParams,
    drive: &D,
    duration: f64,
    dt: f64,
    seed: u64,
) -> Result<Trajectory> {
    if !(duration >= dt) {
        return Err(Error::invalid("duration must be at least one step"));
    }
    let stepper = Stepper::new(params, dt)?;
    let n = step_count(duration, dt);
    let mut rng = seed::from_seed(seed);
    let mut samples = Vec::with_capacity(n as usize + 1);
    samples.push(TrajectorySample { t: 0.0, m: m0 });
    integrate(m0, &stepper, drive, 0.0, n, &mut rng, |step, _, m| {
        samples.push(TrajectorySample { t: step as f64 * dt, m });
        ControlFlow::Continue(())
    })?;
    Ok(Trajectory { timestep: dt, samples })
}

/// Effective uniaxial field including in-plane shape anisotropy: the
/// saddle between the two easy directions lies along the softer of the
/// two hard axes.
pub fn effective_anisotropy_field(params: &MagnetParams) -> f64 {
    let [nx, ny, nz] = params.demag;
    params.hk + params.ms * (nx.min(ny) - nz)
}

/// Zero-field barrier between the two easy-axis states, in units of k_BT.
pub fn energy_barrier(params: &MagnetParams) -> Result<f64> {
    if !(params.temperature > 0.0) {
        return Err(Error::invalid("energy barrier needs a positive temperature"));
    }
    let hk = effective_anisotropy_field(params);
    Ok(VACUUM_PERMEABILITY * params.ms * hk / 2.0 * params.volume / (BOLTZMANN * params.temperature))
}

/// Anisotropy field `hk` giving a zero-field barrier of `barrier_kt`.
pub fn calibrate_anisotropy(params: &MagnetParams, barrier_kt: f64) -> Result<f64> {
    if !(params.temperature > 0.0) {
        return Err(Error::invalid("calibration needs a positive temperature"));
    }
    let total = 2.0 * barrier_kt * BOLTZMANN * params.temperature / (VACUUM_PERMEABILITY * params.ms * params.volume);
    Ok(total - (effective_anisotropy_field(params) - params.hk))
}

/// Free-layer energy (J): anisotropy + demagnetization + Zeeman.
pub fn magnetic_energy(m: Vector3, params: &MagnetParams, applied: Vector3) -> f64 {
    let [nx, ny, nz] = params.demag;
    let ms = params.ms;
    VACUUM_PERMEABILITY
        * params.volume
        * (-ms * params.hk * m.z * m.z / 2.0 + ms * ms * (nx * m.x * m.x + ny * m.y * m.y + nz * m.z * m.z) / 2.0
            - ms * m.dot(applied))
}
