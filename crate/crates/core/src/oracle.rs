//! Analytic references: the d²-law with its wet-bulb temperature, and the
//! harmonic profile `a + b/r` for operator checks.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::discretization::{Field, FieldKind};
use crate::error::{Error, Result};
use crate::geometry::AxiGrid;
use crate::physics::{DryingState, MaterialParams};

/// Uniform-temperature droplet in quiescent gas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct D2Law {
    /// Wet-bulb droplet temperature (°C).
    pub t_d: f64,
    /// dR²/dt (m²/s), non-positive.
    pub slope: f64,
    pub r0: f64,
}

impl D2Law {
    pub fn new(params: &MaterialParams, drying: &DryingState, r0: f64) -> Result<Self> {
        let t_d = solve_wet_bulb(params, drying)?;
        let slope = -2.0 * params.k_g_w_m_k * (drying.t_inf - t_d) / (params.rho_d_kg_m3 * params.latent_heat_j_kg);
        Ok(Self { t_d, slope, r0 })
    }

    /// `R0² / |slope|`, infinite without evaporation.
    pub fn lifetime(&self) -> f64 {
        if self.slope < 0.0 {
            self.r0 * self.r0 / -self.slope
        } else {
            f64::INFINITY
        }
    }

    pub fn radius_sq(&self, t: f64) -> f64 {
        d2_radius_sq(t, self.r0, self)
    }
}

/// Residual of the wet-bulb balance
/// `F(T) = ρ_sat(T) − ρ_inf − (k_g/(D_v Λ)) (T_inf − T)`.
pub fn wet_bulb_residual(params: &MaterialParams, drying: &DryingState, t: f64) -> Result<f64> {
    let g = params.k_g_w_m_k / (params.d_v_m2_s * params.latent_heat_j_kg);
    Ok(drying.rho_sat(t)? - drying.rho_inf - g * (drying.t_inf - t))
}

/// Bisection for the wet-bulb temperature on `[T_star, T_inf]` to 1e-10 °C.
pub fn solve_wet_bulb(params: &MaterialParams, drying: &DryingState) -> Result<f64> {
    if drying.is_saturated() {
        return Ok(drying.t_inf);
    }
    let (mut lo, mut hi) = (drying.t_star, drying.t_inf);
    let f_lo = wet_bulb_residual(params, drying, lo)?;
    let f_hi = wet_bulb_residual(params, drying, hi)?;
    if !(f_lo <= 0.0 && f_hi >= 0.0) {
        return Err(Error::Bracket(format!("wet-bulb residual has signs {f_lo:e}, {f_hi:e} on [T_star, T_inf]")));
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if wet_bulb_residual(params, drying, mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `max(R0² + slope·t, 0)`
pub fn d2_radius_sq(t: f64, r0: f64, law: &D2Law) -> f64 {
    (r0 * r0 + law.slope * t).max(0.0)
}

/// Radius (m) of a sphere of the given volume in µl.
pub fn radius_from_volume(volume_ul: f64) -> f64 {
    (3.0 * volume_ul * 1e-9 / (4.0 * PI)).cbrt()
}

/// `a + b/r` at the cell centers.
pub fn harmonic_profile(grid: &AxiGrid, a: f64, b: f64) -> Field {
    let values = (0..grid.n_cells()).map(|c| a + b / grid.r_c[c / grid.n_theta]).collect();
    Field { kind: FieldKind::Temperature, values }
}
