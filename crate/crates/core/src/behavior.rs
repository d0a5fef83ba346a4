//! Behavioral device model: the calibrated activation τ_P = g(V1) and
//! exponential dwell sampling, standing in for per-step LLG integration
//! when networks get large.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mtj::{ContourMap, LifetimeEstimate};

/// Maximum RMS residual of ln τ_P accepted by [`fit_activation`].
pub const MAX_FIT_RESIDUAL: f64 = 0.1;
/// Maximum relative deviation of any τ_AP from its mean over the domain.
pub const MAX_TAU_AP_VARIATION: f64 = 0.1;
pub const MIN_FIT_POINTS: usize = 5;

/// `τ_P(v1) = tau0 · exp(−(v1 − vref)/vc)` on `[v_min, v_max]`, clamped outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationFit {
    /// τ_P at `vref` (s).
    pub tau0: f64,
    pub vref: f64,
    /// e-folding voltage (V).
    pub vc: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// AP lifetime, constant over the domain; one system timestep (s).
    pub tau_ap_fixed: f64,
    /// RMS residual of ln τ_P over the calibration points.
    pub residual: f64,
}

impl ActivationFit {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.tau0,
            self.vref,
            self.vc,
            self.v_min,
            self.v_max,
            self.tau_ap_fixed,
            self.residual,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite || !(self.tau0 > 0.0) || !(self.vc > 0.0) || !(self.v_min < self.v_max) {
            return Err(Error::invalid(format!("invalid activation fit {self:?}")));
        }
        if !(self.tau_ap_fixed >= 0.0) {
            return Err(Error::invalid("tau_ap_fixed must be non-negative"));
        }
        Ok(())
    }

    /// Shortest and longest mean P lifetime on the domain.
    pub fn range(&self) -> (f64, f64) {
        (g(self.v_max, self), g(self.v_min, self))
    }

    /// Voltage at which `g` equals `tau` (unclamped inverse).
    pub fn voltage_for(&self, tau: f64) -> f64 {
        self.vref - self.vc * (tau / self.tau0).ln()
    }

    /// Copy whose clamp window is widened (never narrowed) so that `g`
    /// reaches `tau_lo` and `tau_hi`, extrapolating the fitted exponential.
    pub fn extended(&self, tau_lo: f64, tau_hi: f64) -> Result<ActivationFit> {
        if !(tau_lo > 0.0 && tau_lo < tau_hi && tau_hi.is_finite()) {
            return Err(Error::invalid(format!("bad lifetime window [{tau_lo}, {tau_hi}]")));
        }
        Ok(ActivationFit {
            v_min: self.v_min.min(self.voltage_for(tau_hi)),
            v_max: self.v_max.max(self.voltage_for(tau_lo)),
            ..*self
        })
    }

    /// True if `[lo, hi]` lies inside the clamp window.
    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        lo >= self.v_min - 1e-12 && hi <= self.v_max + 1e-12
    }
}

/// Mean P lifetime for input `v1` (s).
#[inline]
pub fn g(v1: f64, fit: &ActivationFit) -> f64 {
    let v = v1.clamp(fit.v_min, fit.v_max);
    fit.tau0 * (-(v - fit.vref) / fit.vc).exp()
}

/// dg/dv1; zero in the clamped region.
#[inline]
pub fn g_prime(v1: f64, fit: &ActivationFit) -> f64 {
    if v1 < fit.v_min || v1 > fit.v_max {
        0.0
    } else {
        -g(v1, fit) / fit.vc
    }
}

/// Fit from `(v1, estimate)` pairs taken along the V1 axis at one V2.
pub fn fit_activation_points(points: &[(f64, LifetimeEstimate)]) -> Result<ActivationFit> {
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::Calibration(format!(
            "activation fit needs at least {MIN_FIT_POINTS} points along v1, got {}",
            points.len()
        )));
    }
    let v_min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let v_max = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let vref = 0.5 * (v_min + v_max);

    // weighted least squares: ln τ = c + s (v − vref), weights n_p
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (v, e) in points {
        let w = e.n_p as f64;
        let x = v - vref;
        let y = e.tau_p.ln();
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let denom = sw * sxx - sx * sx;
    if !(denom > 0.0) {
        return Err(Error::Calibration("degenerate v1 grid".into()));
    }
    let slope = (sw * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / sw;
    if !(slope < 0.0) {
        return Err(Error::Calibration(format!(
            "tau_P must fall with v1 (fitted slope {slope:.3e} per V)"
        )));
    }
    let residual = (points
        .iter()
        .map(|(v, e)| (e.tau_p.ln() - intercept - slope * (v - vref)).powi(2))
        .sum::<f64>()
        / points.len() as f64)
        .sqrt();

    let tau_ap_mean = points.iter().map(|p| p.1.tau_ap).sum::<f64>() / points.len() as f64;
    let ap_var = tau_ap_variation(points.iter().map(|p| p.1.tau_ap));

    let fit = ActivationFit {
        tau0: intercept.exp(),
        vref,
        vc: -1.0 / slope,
        v_min,
        v_max,
        tau_ap_fixed: tau_ap_mean,
        residual,
    };
    if residual >= MAX_FIT_RESIDUAL {
        return Err(Error::Calibration(format!(
            "ln tau_P residual {residual:.3} exceeds {MAX_FIT_RESIDUAL}"
        )));
    }
    if ap_var >= MAX_TAU_AP_VARIATION {
        return Err(Error::Calibration(format!(
            "tau_AP varies by {:.1}% over the v1 domain (limit {:.0}%)",
            100.0 * ap_var,
            100.0 * MAX_TAU_AP_VARIATION
        )));
    }
    Ok(fit)
}

/// Largest relative deviation of any value from the mean.
pub fn tau_ap_variation(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    values.map(|v| ((v - mean) / mean).abs()).fold(0.0, f64::max)
}

/// Fit along the V1 axis of `map` at the V2 column nearest `v2`, using
/// [`ContourPoint::neuron_estimate`](crate::mtj::ContourPoint::neuron_estimate).
pub fn fit_activation(map: &ContourMap, v2: f64) -> Result<ActivationFit> {
    let j = map
        .v2_grid
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - v2).abs().total_cmp(&(b.1 - v2).abs()))
        .map(|(j, _)| j)
        .ok_or_else(|| Error::Calibration("empty contour map".into()))?;
    let points: Vec<_> = (0..map.v1_grid.len())
        .filter_map(|i| map.point(i, j).neuron_estimate().map(|e| (map.v1_grid[i], e)))
        .collect();
    fit_activation_points(&points)
}

/// Spike times of one neuron: P-state waits `Exp(z)` separated by AP
/// residences `Exp(tau_ap_fixed)` (the spike width).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    pub spike_times: Vec<f64>,
    pub z: f64,
}

pub fn sample_spike_train<R: Rng + ?Sized>(z: f64, fit: &ActivationFit, k: usize, rng: &mut R) -> Result<SpikeTrain> {
    if k == 0 {
        return Err(Error::invalid("spike count k must be at least 1"));
    }
    if !(z > 0.0) {
        return Err(Error::invalid("mean lifetime z must be positive"));
    }
    let mut t = 0.0;
    let mut spike_times = Vec::with_capacity(k);
    for j in 0..k {
        if j > 0 {
            t += fit.tau_ap_fixed * rng.sample::<f64, _>(Exp1);
        }
        t += z * rng.sample::<f64, _>(Exp1);
        spike_times.push(t);
    }
    Ok(SpikeTrain { spike_times, z })
}

/// Time of the k-th spike only; same draw order as [`sample_spike_train`].
#[inline]
pub fn sample_kth_spike<R: Rng + ?Sized>(z: f64, tau_ap: f64, k: usize, rng: &mut R) -> f64 {
    let mut t = 0.0;
    for j in 0..k {
        if j > 0 {
            t += tau_ap * rng.sample::<f64, _>(Exp1);
        }
        t += z * rng.sample::<f64, _>(Exp1);
    }
    t
}
