//! Three-terminal magnetoelectric MTJ built on the macrospin integrator.
//!
//! A voltage `v_me` across the ME layer acts as a field along the easy
//! axis; a voltage `v_i` across the stack drives a spin-polarized current
//! whose magnitude follows the (state-dependent) junction resistance. The
//! free-layer trajectory is reduced to a P/AP telegraph trace from which
//! mean dwell times are estimated.

use std::ops::ControlFlow;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::VACUUM_PERMEABILITY;
use crate::error::{Error, Result};
use crate::llg::{self, Drive, DriveSample, MagnetParams, Stepper, Trajectory};
use crate::seed;
use crate::vec3::Vector3;

/// Default hysteretic thresholds on the easy-axis projection.
pub const DEFAULT_HI: f64 = 0.5;
pub const DEFAULT_LO: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtjParams {
    /// Parallel-state resistance (Ω).
    pub r_p: f64,
    /// Tunnel magnetoresistance as a fraction (2.0 = 200 %).
    pub tmr: f64,
    /// Spin polarization of the charge current.
    pub polarization: f64,
    /// Magnetoelectric coefficient α_ME (s/m).
    pub me_coeff: f64,
    /// ME layer thickness (m).
    pub me_thickness: f64,
    pub pinned_axis: Vector3,
}

impl MtjParams {
    /// TMR 200 %, α_ME = 5e-9 s/m over 5 nm, P = 0.6, and R_P from an
    /// RA product of 5 Ω·µm² over the 17 × 42.5 nm ellipse.
    pub fn nominal() -> Self {
        let area_um2 = std::f64::consts::PI / 4.0 * 17e-3 * 42.5e-3;
        MtjParams {
            r_p: 5.0 / area_um2,
            tmr: 2.0,
            polarization: 0.6,
            me_coeff: 5e-9,
            me_thickness: 5e-9,
            pinned_axis: Vector3::Z,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_p > 0.0) {
            return Err(Error::invalid("r_p must be positive"));
        }
        if !(self.tmr >= 0.0) {
            return Err(Error::invalid("tmr must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.polarization) {
            return Err(Error::invalid("polarization must lie in [0, 1]"));
        }
        if !(self.me_thickness > 0.0) {
            return Err(Error::invalid("me_thickness must be positive"));
        }
        if !self.me_coeff.is_finite() {
            return Err(Error::invalid("me_coeff must be finite"));
        }
        if (self.pinned_axis.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("pinned_axis must be a unit vector"));
        }
        Ok(())
    }

    pub fn r_ap(&self) -> f64 {
        self.r_p * (1.0 + self.tmr)
    }
}

/// Ideal current-source readout: `I_out = I_total − I_MTJ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    pub i_total: f64,
    pub r_load: f64,
}

impl ReadoutParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.i_total > 0.0 && self.r_load > 0.0) {
            return Err(Error::invalid("readout i_total and r_load must be positive"));
        }
        Ok(())
    }
}

impl Default for ReadoutParams {
    fn default() -> Self {
        ReadoutParams {
            i_total: 20e-6,
            r_load: 10e3,
        }
    }
}

/// Resistance from the angular conductance interpolation between R_P and R_AP.
pub fn mtj_resistance(m: Vector3, params: &MtjParams) -> f64 {
    let g_p = 1.0 / params.r_p;
    let g_ap = 1.0 / params.r_ap();
    let cos = m.dot(params.pinned_axis);
    1.0 / (0.5 * (g_p + g_ap) + 0.5 * (g_p - g_ap) * cos)
}

/// Magnetoelectric effective field: B = α_ME · v_me / t_ME along the pinned
/// (easy) axis, returned as H = B/μ₀.
pub fn me_field(v_me: f64, params: &MtjParams) -> Vector3 {
    let b = params.me_coeff * v_me / params.me_thickness;
    params.pinned_axis * (b / VACUUM_PERMEABILITY)
}

/// Spin current polarized along the pinned axis with magnitude
/// `polarization · v_i / R(m)`.
pub fn spin_current(v_i: f64, m: Vector3, params: &MtjParams) -> Vector3 {
    params.pinned_axis * (params.polarization * v_i / mtj_resistance(m, params))
}

pub fn readout(m: Vector3, readout: &ReadoutParams, v_i: f64, params: &MtjParams) -> f64 {
    readout.i_total - v_i / mtj_resistance(m, params)
}

/// Terminal voltages applied to one device.
#[derive(Debug, Clone, Copy)]
pub struct MtjDrive<'a> {
    pub v_me: f64,
    pub v_i: f64,
    pub params: &'a MtjParams,
}

impl Drive for MtjDrive<'_> {
    #[inline]
    fn sample(&self, _t: f64, m: Vector3) -> DriveSample {
        DriveSample {
            field: me_field(self.v_me, self.params),
            spin_current: spin_current(self.v_i, m, self.params),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MtjState {
    P,
    AP,
}

impl MtjState {
    pub fn flip(self) -> Self {
        match self {
            MtjState::P => MtjState::AP,
            MtjState::AP => MtjState::P,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dwell {
    pub state: MtjState,
    /// Residence time (s).
    pub dwell: f64,
}

/// Alternating P/AP residence sequence.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TelegraphTrace {
    pub runs: Vec<Dwell>,
}

impl TelegraphTrace {
    pub fn duration(&self) -> f64 {
        self.runs.iter().map(|r| r.dwell).sum()
    }

    pub fn transitions(&self) -> usize {
        self.runs.len().saturating_sub(1)
    }

    pub fn count(&self, state: MtjState) -> usize {
        self.runs.iter().filter(|r| r.state == state).count()
    }
}

/// Streaming hysteretic classifier: enters AP below `lo`, P above `hi`.
#[derive(Debug, Clone)]
pub struct Binarizer {
    hi: f64,
    lo: f64,
    state: MtjState,
    run_start: f64,
    runs: Vec<Dwell>,
}

impl Binarizer {
    pub fn new(hi: f64, lo: f64, t0: f64, projection0: f64) -> Result<Self> {
        if !(-1.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::invalid(format!(
                "thresholds must satisfy -1 < lo < hi < 1 (lo = {lo}, hi = {hi})"
            )));
        }
        let state = if projection0 >= 0.0 { MtjState::P } else { MtjState::AP };
        Ok(Binarizer {
            hi,
            lo,
            state,
            run_start: t0,
            runs: Vec::new(),
        })
    }

    pub fn state(&self) -> MtjState {
        self.state
    }

    /// Feed one sample; returns the state that just ended on a transition.
    #[inline]
    pub fn push(&mut self, t: f64, projection: f64) -> Option<MtjState> {
        let next = match self.state {
            MtjState::P if projection < self.lo => MtjState::AP,
            MtjState::AP if projection > self.hi => MtjState::P,
            s => s,
        };
        if next == self.state {
            return None;
        }
        let ended = self.state;
        self.runs.push(Dwell {
            state: ended,
            dwell: t - self.run_start,
        });
        self.state = next;
        self.run_start = t;
        Some(ended)
    }

    pub fn completed(&self) -> &[Dwell] {
        &self.runs
    }

    /// Close the open run at `t_end`.
    pub fn finish(mut self, t_end: f64) -> TelegraphTrace {
        if t_end > self.run_start {
            self.runs.push(Dwell {
                state: self.state,
                dwell: t_end - self.run_start,
            });
        }
        TelegraphTrace { runs: self.runs }
    }
}

/// Hysteretic binarization of a trajectory on its easy-axis (z) projection.
pub fn binarize(trajectory: &Trajectory, hi: f64, lo: f64) -> Result<TelegraphTrace> {
    let first = trajectory
        .samples
        .first()
        .ok_or_else(|| Error::invalid("empty trajectory"))?;
    let mut b = Binarizer::new(hi, lo, first.t, first.m.z)?;
    for s in &trajectory.samples[1..] {
        b.push(s.t, s.m.z);
    }
    let end = trajectory.samples.last().map_or(first.t, |s| s.t);
    Ok(b.finish(end))
}

/// Mean dwell per state with standard errors (sample std / √n).
/// Streaming form of [`debounce`]: feed raw dwells, get merged ones.
#[derive(Debug, Clone)]
pub struct Debouncer {
    min_p: f64,
    min_ap: f64,
    cur: Option<Dwell>,
}

impl Debouncer {
    pub fn new(min_p: f64, min_ap: f64) -> Self {
        Debouncer {
            min_p,
            min_ap,
            cur: None,
        }
    }

    fn min(&self, state: MtjState) -> f64 {
        match state {
            MtjState::P => self.min_p,
            MtjState::AP => self.min_ap,
        }
    }

    /// Returns a merged dwell once it can no longer grow.
    pub fn push(&mut self, d: Dwell) -> Option<Dwell> {
        let short = d.dwell < self.min(d.state);
        match &mut self.cur {
            None => {
                self.cur = Some(d);
                None
            }
            Some(c) if short || d.state == c.state => {
                c.dwell += d.dwell;
                None
            }
            Some(c) => Some(std::mem::replace(c, d)),
        }
    }

    pub fn finish(self) -> Option<Dwell> {
        self.cur
    }
}

/// Merge runs that end before reaching the minimum for their state into the
/// surrounding run. A low-damping magnet kicked over a shallow barrier rings
/// across both thresholds for a few half-orbits before settling; this turns
/// each ringing excursion into one run of the state it settles in.
pub fn debounce(trace: &TelegraphTrace, min_p: f64, min_ap: f64) -> TelegraphTrace {
    let mut d = Debouncer::new(min_p, min_ap);
    let mut runs: Vec<Dwell> = trace.runs.iter().filter_map(|&r| d.push(r)).collect();
    runs.extend(d.finish());
    TelegraphTrace { runs }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifetimeEstimate {
    pub tau_p: f64,
    pub tau_ap: f64,
    pub n_p: usize,
    pub n_ap: usize,
    pub se_p: f64,
    pub se_ap: f64,
}

impl LifetimeEstimate {
    /// 95 % normal-approximation interval for τ_P.
    pub fn ci95_p(&self) -> (f64, f64) {
        (self.tau_p - 1.96 * self.se_p, self.tau_p + 1.96 * self.se_p)
    }

    pub fn ci95_ap(&self) -> (f64, f64) {
        (self.tau_ap - 1.96 * self.se_ap, self.tau_ap + 1.96 * self.se_ap)
    }
}

/// Minimum complete dwells per state for an estimate.
pub const MIN_DWELLS: usize = 2;

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn extract_lifetimes(trace: &TelegraphTrace, discard_edges: bool) -> Result<LifetimeEstimate> {
    let runs = if discard_edges && trace.runs.len() >= 2 {
        &trace.runs[1..trace.runs.len() - 1]
    } else if discard_edges {
        &[][..]
    } else {
        &trace.runs[..]
    };
    let collect = |s: MtjState| -> Vec<f64> { runs.iter().filter(|r| r.state == s).map(|r| r.dwell).collect() };
    let (p, ap) = (collect(MtjState::P), collect(MtjState::AP));
    if p.len() < MIN_DWELLS || ap.len() < MIN_DWELLS {
        return Err(Error::Estimation {
            n_p: p.len(),
            n_ap: ap.len(),
            need: MIN_DWELLS,
        });
    }
    let (tau_p, se_p) = mean_and_se(&p);
    let (tau_ap, se_ap) = mean_and_se(&ap);
    Ok(LifetimeEstimate {
        tau_p,
        tau_ap,
        n_p: p.len(),
        n_ap: ap.len(),
        se_p,
        se_ap,
    })
}

/// R = τ_AP / (τ_P + τ_AP).
pub fn switching_rate(est: &LifetimeEstimate) -> f64 {
    est.tau_ap / (est.tau_p + est.tau_ap)
}

/// Directions of the two transformed input axes in the (V_ME, V_I) plane:
/// `(V_ME, V_I) = V1·(cos α, sin α) + V2·(cos β, sin β)`.
///
/// With calibrated angles V1 runs along a τ_AP contour (so it moves τ_P only)
/// and V2 along a τ_P contour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisAngles {
    pub alpha: f64,
    pub beta: f64,
}

impl BasisAngles {
    pub const IDENTITY: BasisAngles = BasisAngles {
        alpha: 0.0,
        beta: std::f64::consts::FRAC_PI_2,
    };

    /// V1 along +V_I (drives τ_P), V2 along +V_ME (sets τ_AP).
    pub const CALIBRATED: BasisAngles = BasisAngles {
        alpha: std::f64::consts::FRAC_PI_2,
        beta: 0.0,
    };

    fn det(&self) -> f64 {
        (self.beta - self.alpha).sin()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || !self.beta.is_finite() || self.det().abs() < 1e-12 {
            return Err(Error::invalid(format!("singular basis angles {self:?}")));
        }
        Ok(())
    }
}

/// (V_ME, V_I) → (V1, V2).
pub fn basis_transform(v_me: f64, v_i: f64, angles: &BasisAngles) -> Result<(f64, f64)> {
    angles.validate()?;
    let (sa, ca) = angles.alpha.sin_cos();
    let (sb, cb) = angles.beta.sin_cos();
    let det = ca * sb - cb * sa;
    Ok(((sb * v_me - cb * v_i) / det, (-sa * v_me + ca * v_i) / det))
}

/// (V1, V2) → (V_ME, V_I).
pub fn inverse_basis_transform(v1: f64, v2: f64, angles: &BasisAngles) -> Result<(f64, f64)> {
    angles.validate()?;
    let (sa, ca) = angles.alpha.sin_cos();
    let (sb, cb) = angles.beta.sin_cos();
    Ok((ca * v1 + cb * v2, sa * v1 + sb * v2))
}

/// Everything needed to simulate one ME-MTJ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceBundle {
    pub magnet: MagnetParams,
    pub mtj: MtjParams,
    #[serde(default)]
    pub readout: ReadoutParams,
    pub basis: BasisAngles,
    /// Integration step (s).
    pub dt: f64,
    pub hi: f64,
    pub lo: f64,
    /// A switch into P (AP) only counts once the new state has lasted this
    /// long (see [`debounce`]); 0 disables.
    #[serde(default)]
    pub min_p_dwell: f64,
    #[serde(default)]
    pub min_ap_dwell: f64,
}

impl DeviceBundle {
    pub fn nominal() -> Self {
        DeviceBundle {
            magnet: MagnetParams::nominal(),
            mtj: MtjParams::nominal(),
            readout: ReadoutParams::default(),
            basis: BasisAngles::IDENTITY,
            dt: llg::DEFAULT_DT,
            hi: DEFAULT_HI,
            lo: DEFAULT_LO,
            min_p_dwell: 0.0,
            min_ap_dwell: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.magnet.validate()?;
        self.mtj.validate()?;
        self.readout.validate()?;
        self.basis.validate()?;
        if !(self.dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        if !(-1.0 < self.lo && self.lo < self.hi && self.hi < 1.0) {
            return Err(Error::invalid("thresholds must satisfy -1 < lo < hi < 1"));
        }
        if ![self.min_p_dwell, self.min_ap_dwell]
            .iter()
            .all(|d| *d >= 0.0 && d.is_finite())
        {
            return Err(Error::invalid("minimum dwells must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn terminals(&self, v1: f64, v2: f64) -> Result<(f64, f64)> {
        inverse_basis_transform(v1, v2, &self.basis)
    }
}

/// Stopping rule for a streamed telegraph run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunLength {
    /// Hard cap on simulated time (s).
    pub max_time: f64,
    /// Stop once this many complete dwells of each state are seen.
    pub target_dwells: Option<usize>,
}

impl RunLength {
    pub fn fixed(t: f64) -> Self {
        RunLength {
            max_time: t,
            target_dwells: None,
        }
    }
}

/// Simulate a device at fixed terminal voltages and binarize on the fly,
/// without storing the trajectory. Starts in the P state. Returns the raw
/// binarized trace; `target_dwells` counts runs after [`debounce`] with the
/// bundle's minimum dwells, so a debounced view has enough of them too.
pub fn simulate_telegraph<R: Rng + ?Sized>(
    bundle: &DeviceBundle,
    v_me: f64,
    v_i: f64,
    length: RunLength,
    rng: &mut R,
) -> Result<TelegraphTrace> {
    let stepper = Stepper::new(&bundle.magnet, bundle.dt)?;
    let axis = bundle.mtj.pinned_axis;
    let drive = MtjDrive {
        v_me,
        v_i,
        params: &bundle.mtj,
    };
    let m0 = axis;
    let mut bin = Binarizer::new(bundle.hi, bundle.lo, 0.0, 1.0)?;
    let mut deb = Debouncer::new(bundle.min_p_dwell, bundle.min_ap_dwell);
    let (mut n_p, mut n_ap, mut emitted) = (0usize, 0usize, 0usize);
    let n = llg::step_count(length.max_time, bundle.dt);
    let target = length.target_dwells;
    let mut t_end = 0.0;
    let (_, steps) = llg::integrate(m0, &stepper, &drive, 0.0, n, rng, |_, t, m| {
        t_end = t;
        if bin.push(t, m.dot(axis)).is_some() {
            let raw = *bin.completed().last().expect("dwell just ended");
            if let Some(merged) = deb.push(raw) {
                emitted += 1;
                // The first run is truncated by the initial condition.
                if emitted > 1 {
                    match merged.state {
                        MtjState::P => n_p += 1,
                        MtjState::AP => n_ap += 1,
                    }
                }
                if let Some(k) = target {
                    if n_p >= k && n_ap >= k {
                        return ControlFlow::Break(());
                    }
                }
            }
        }
        ControlFlow::Continue(())
    })?;
    debug_assert!(steps <= n);
    Ok(bin.finish(t_end))
}

/// Outcome of a spike-race run: spike times (P→AP switches) and the P dwell
/// lengths that preceded them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeRun {
    /// Measured from the first P entry.
    pub spike_times: Vec<f64>,
    pub p_dwells: Vec<f64>,
    /// Simulated time when the run stopped, on the same clock (s).
    pub elapsed: f64,
}

/// Release a device from the AP ground state and start the clock when it
/// first settles into P, so that every P dwell counted is a steady-state
/// dwell like those behind [`LifetimeEstimate`]. Switches are debounced
/// with the bundle's minimum dwells as in [`debounce`]; a spike is timed at
/// its first crossing into AP. Runs until `k` spikes or until `t_limit`
/// after the clock started.
pub fn simulate_spikes<R: Rng + ?Sized>(
    bundle: &DeviceBundle,
    v_me: f64,
    v_i: f64,
    k: usize,
    t_limit: f64,
    rng: &mut R,
) -> Result<SpikeRun> {
    if k == 0 {
        return Err(Error::invalid("spike count k must be at least 1"));
    }
    let stepper = Stepper::new(&bundle.magnet, bundle.dt)?;
    let axis = bundle.mtj.pinned_axis;
    let drive = MtjDrive {
        v_me,
        v_i,
        params: &bundle.mtj,
    };
    let mut bin = Binarizer::new(bundle.hi, bundle.lo, 0.0, -1.0)?;
    let mut accepted = MtjState::AP;
    let mut raw_start = 0.0;
    let mut origin: Option<f64> = None;
    let mut p_start = 0.0;
    let mut spike_times = Vec::with_capacity(k);
    let mut p_dwells = Vec::with_capacity(k);
    let mut elapsed = 0.0;
    let mut visit = |t: f64, m: Vector3| {
        if bin.push(t, m.dot(axis)).is_some() {
            raw_start = t;
        }
        let raw = bin.state();
        let need = match raw {
            MtjState::P => bundle.min_p_dwell,
            MtjState::AP => bundle.min_ap_dwell,
        };
        if raw != accepted && t - raw_start >= need {
            accepted = raw;
            match raw {
                MtjState::P => {
                    origin.get_or_insert(raw_start);
                    p_start = raw_start;
                }
                MtjState::AP => {
                    if let Some(t0) = origin {
                        spike_times.push(raw_start - t0);
                        p_dwells.push(raw_start - p_start);
                    }
                }
            }
        }
        match origin {
            Some(t0) => {
                elapsed = t - t0;
                if spike_times.len() == k || elapsed >= t_limit {
                    return ControlFlow::Break(());
                }
            }
            None if t >= t_limit => return ControlFlow::Break(()),
            None => {}
        }
        ControlFlow::Continue(())
    };
    let n = llg::step_count(2.0 * t_limit, bundle.dt);
    llg::integrate(-axis, &stepper, &drive, 0.0, n, rng, |_, t, m| visit(t, m))?;
    Ok(SpikeRun {
        spike_times,
        p_dwells,
        elapsed,
    })
}

/// One grid point of a contour map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    pub i: usize,
    pub j: usize,
    pub v1: f64,
    pub v2: f64,
    pub v_me: f64,
    pub v_i: f64,
    pub estimate: Option<LifetimeEstimate>,
    pub error: Option<String>,
    /// Lifetimes of the debounced trace, when the bundle debounces: P waits
    /// between AP bursts and the burst lengths.
    #[serde(default)]
    pub rearmed: Option<LifetimeEstimate>,
}

impl ContourPoint {
    /// What a neuron sees: τ_P is the wait between bursts (if debounced),
    /// τ_AP the AP residence of the raw trace.
    pub fn neuron_estimate(&self) -> Option<LifetimeEstimate> {
        let raw = self.estimate?;
        Some(match self.rearmed {
            Some(r) => LifetimeEstimate {
                tau_p: r.tau_p,
                n_p: r.n_p,
                se_p: r.se_p,
                ..raw
            },
            None => raw,
        })
    }
}

/// Lifetimes over a rectangular (V1, V2) grid, row-major in V1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourMap {
    pub v1_grid: Vec<f64>,
    pub v2_grid: Vec<f64>,
    pub points: Vec<ContourPoint>,
}

impl ContourMap {
    pub fn point(&self, i: usize, j: usize) -> &ContourPoint {
        &self.points[i * self.v2_grid.len() + j]
    }

    pub fn estimate(&self, i: usize, j: usize) -> Option<&LifetimeEstimate> {
        self.point(i, j).estimate.as_ref()
    }

    /// Points with fewer than `min_dwells` per state.
    pub fn undersampled(&self, min_dwells: usize) -> Vec<(usize, usize)> {
        self.points
            .iter()
            .filter(|p| p.estimate.is_none_or(|e| e.n_p < min_dwells || e.n_ap < min_dwells))
            .map(|p| (p.i, p.j))
            .collect()
    }

    pub const CSV_HEADER: [&'static str; 16] = [
        "i",
        "j",
        "v1_V",
        "v2_V",
        "v_me_V",
        "v_i_V",
        "tau_p_s",
        "tau_ap_s",
        "se_p_s",
        "se_ap_s",
        "n_p",
        "n_ap",
        "rearmed_tau_p_s",
        "burst_tau_ap_s",
        "rearmed_n_p",
        "status",
    ];

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::CSV_HEADER)?;
        for p in &self.points {
            let mut rec = vec![
                p.i.to_string(),
                p.j.to_string(),
                p.v1.to_string(),
                p.v2.to_string(),
                p.v_me.to_string(),
                p.v_i.to_string(),
            ];
            match &p.estimate {
                Some(e) => {
                    rec.extend([e.tau_p, e.tau_ap, e.se_p, e.se_ap].iter().map(|v| v.to_string()));
                    rec.push(e.n_p.to_string());
                    rec.push(e.n_ap.to_string());
                    match &p.rearmed {
                        Some(r) => rec.extend([r.tau_p.to_string(), r.tau_ap.to_string(), r.n_p.to_string()]),
                        None => rec.extend(std::iter::repeat_n(String::new(), 3)),
                    }
                    rec.push("ok".into());
                }
                None => {
                    rec.extend(std::iter::repeat_n(String::new(), 9));
                    rec.push(p.error.clone().unwrap_or_default());
                }
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Lifetime map over a (V1, V2) grid. Grid points run in parallel with
/// streams derived from `(seed, "characterize", i·|v2| + j)`.
pub fn characterize(
    bundle: &DeviceBundle,
    v1_list: &[f64],
    v2_list: &[f64],
    length: RunLength,
    seed: u64,
) -> Result<ContourMap> {
    bundle.validate()?;
    if v1_list.is_empty() || v2_list.is_empty() {
        return Err(Error::invalid("characterize needs non-empty voltage axes"));
    }
    let cols = v2_list.len();
    let jobs: Vec<(usize, usize)> = (0..v1_list.len())
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .collect();
    let points = jobs
        .par_iter()
        .map(|&(i, j)| -> Result<ContourPoint> {
            let (v1, v2) = (v1_list[i], v2_list[j]);
            let (v_me, v_i) = bundle.terminals(v1, v2)?;
            let mut rng = seed::stream(seed, "characterize", (i * cols + j) as u64);
            let trace = simulate_telegraph(bundle, v_me, v_i, length, &mut rng)?;
            let (estimate, error) = match extract_lifetimes(&trace, true) {
                Ok(e) => (Some(e), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let rearmed = if bundle.min_p_dwell > 0.0 || bundle.min_ap_dwell > 0.0 {
                extract_lifetimes(&debounce(&trace, bundle.min_p_dwell, bundle.min_ap_dwell), true).ok()
            } else {
                None
            };
            Ok(ContourPoint {
                i,
                j,
                v1,
                v2,
                v_me,
                v_i,
                estimate,
                error,
                rearmed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ContourMap {
        v1_grid: v1_list.to_vec(),
        v2_grid: v2_list.to_vec(),
        points,
    })
}

/// Weighted least-squares plane `ln τ ≈ c + a·v_me + b·v_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneFit {
    pub intercept: f64,
    pub d_vme: f64,
    pub d_vi: f64,
    /// Weighted RMS residual of ln τ.
    pub rms: f64,
}

/// Contour-slope calibration result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisCalibration {
    pub angles: BasisAngles,
    pub ln_tau_p: PlaneFit,
    pub ln_tau_ap: PlaneFit,
}

/// Samples are `(v_me, v_i, ln τ, weight)`.
pub fn fit_plane(samples: &[(f64, f64, f64, f64)]) -> Result<PlaneFit> {
    if samples.len() < 3 {
        return Err(Error::Calibration(format!(
            "plane fit needs at least 3 points, got {}",
            samples.len()
        )));
    }
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for &(x, y, z, w) in samples {
        let row = [1.0, x, y];
        for r in 0..3 {
            for c in 0..3 {
                ata[r][c] += w * row[r] * row[c];
            }
            atb[r] += w * row[r] * z;
        }
    }
    let sol = solve3(ata, atb).ok_or_else(|| Error::Calibration("degenerate grid for plane fit".into()))?;
    let (mut ss, mut sw) = (0.0, 0.0);
    for &(x, y, z, w) in samples {
        let r = z - (sol[0] + sol[1] * x + sol[2] * y);
        ss += w * r * r;
        sw += w;
    }
    Ok(PlaneFit {
        intercept: sol[0],
        d_vme: sol[1],
        d_vi: sol[2],
        rms: (ss / sw).sqrt(),
    })
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Fit log-lifetime planes over a (V_ME, V_I) grid and derive the basis:
/// V1 runs along the τ_AP contour, oriented so τ_P falls with V1; V2 runs
/// along the τ_P contour, oriented so τ_AP falls with V2. Points are
/// weighted by their dwell counts (var ln τ ≈ 1/n for exponential dwells).
pub fn fit_basis(points: &[(f64, f64, LifetimeEstimate)]) -> Result<BasisCalibration> {
    let p: Vec<_> = points
        .iter()
        .map(|(x, y, e)| (*x, *y, e.tau_p.ln(), e.n_p as f64))
        .collect();
    let ap: Vec<_> = points
        .iter()
        .map(|(x, y, e)| (*x, *y, e.tau_ap.ln(), e.n_ap as f64))
        .collect();
    let fp = fit_plane(&p)?;
    let fap = fit_plane(&ap)?;
    let mut d1 = (-fap.d_vi, fap.d_vme);
    if fp.d_vme * d1.0 + fp.d_vi * d1.1 > 0.0 {
        d1 = (-d1.0, -d1.1);
    }
    let mut d2 = (-fp.d_vi, fp.d_vme);
    if fap.d_vme * d2.0 + fap.d_vi * d2.1 > 0.0 {
        d2 = (-d2.0, -d2.1);
    }
    let angles = BasisAngles {
        alpha: d1.1.atan2(d1.0),
        beta: d2.1.atan2(d2.0),
    };
    angles
        .validate()
        .map_err(|_| Error::Calibration("lifetime contours are parallel".into()))?;
    Ok(BasisCalibration {
        angles,
        ln_tau_p: fp,
        ln_tau_ap: fap,
    })
}

/// Simulate a (V_ME, V_I) grid and fit the basis angles.
pub fn calibrate_basis(
    bundle: &DeviceBundle,
    v_me_list: &[f64],
    v_i_list: &[f64],
    length: RunLength,
    seed: u64,
) -> Result<BasisCalibration> {
    let mut raw = bundle.clone();
    raw.basis = BasisAngles::IDENTITY;
    let map = characterize(&raw, v_me_list, v_i_list, length, seed)?;
    let pts: Vec<_> = map
        .points
        .iter()
        .filter_map(|p| p.estimate.map(|e| (p.v_me, p.v_i, e)))
        .collect();
    fit_basis(&pts)
}
