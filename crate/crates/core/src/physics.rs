//! Thermophysical closures: saturation curve, Hertz–Knudsen evaporation rate
//! and the far-field quantities derived from the drying conditions.
//!
//! Temperatures are in °C at the API surface. Kelvin only appears inside the
//! ideal-gas conversion from vapor pressure to vapor mass density.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pole of the Tetens exponent in °C.
pub const TETENS_POLE_C: f64 = -237.3;
const TETENS_P0: f64 = 610.78;
const TETENS_A: f64 = 17.27;
const TETENS_B: f64 = 237.3;
const KELVIN_OFFSET: f64 = 273.15;

/// Lower end of the bracket used when solving for `T_star`.
const T_STAR_BRACKET_LO: f64 = -100.0;
/// Safety factor applied to the sampled maximum of dρ_sat/dT.
const LIPSCHITZ_SAFETY: f64 = 1.01;
const LIPSCHITZ_SAMPLES: usize = 1000;

/// Saturated vapor pressure of water (Pa) from the Tetens fit.
pub fn p_sat(t_c: f64) -> Result<f64> {
    if t_c.is_nan() || t_c <= TETENS_POLE_C {
        return Err(Error::Domain(t_c));
    }
    Ok(tetens(t_c))
}

#[inline]
fn tetens(t_c: f64) -> f64 {
    TETENS_P0 * (TETENS_A * t_c / (t_c + TETENS_B)).exp()
}

/// Physical coefficients of the droplet/gas system.
///
/// With `nondimensional` set, [`MaterialParams::resolved`] replaces every
/// coefficient by one and the saturation curve by a clamped linear ramp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialParams {
    /// Liquid density (kg/m³).
    pub rho_d_kg_m3: f64,
    /// Gas density (kg/m³).
    pub rho_g_kg_m3: f64,
    /// Gas specific heat (J/(kg·K)).
    pub cp_g_j_kg_k: f64,
    /// Gas thermal conductivity (W/(m·K)).
    pub k_g_w_m_k: f64,
    /// Vapor diffusivity in the gas (m²/s).
    pub d_v_m2_s: f64,
    /// Latent heat of vaporization (J/kg).
    pub latent_heat_j_kg: f64,
    /// Molar mass of the volatile liquid (kg/mol).
    pub molar_mass_kg_mol: f64,
    /// Universal gas constant (J/(mol·K)).
    pub gas_constant_j_mol_k: f64,
    /// Evaporation coefficient in (0, 1] scaling the kinetic prefactor.
    pub beta: f64,
    /// Hertz–Knudsen coefficient (m/s). Derived from kinetic theory when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_hk_m_s: Option<f64>,
    pub nondimensional: bool,
    /// Slope of the nondimensional saturation ramp.
    #[serde(default = "one")]
    pub ramp_slope: f64,
    /// Temperature at which the nondimensional ramp vanishes.
    #[serde(default)]
    pub ramp_origin: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self::water_air()
    }
}

impl MaterialParams {
    /// Water droplet in air, coefficients taken around 60 °C gas / 27 °C liquid.
    pub fn water_air() -> Self {
        Self {
            rho_d_kg_m3: 997.0,
            rho_g_kg_m3: 1.060,
            cp_g_j_kg_k: 1007.0,
            k_g_w_m_k: 0.0287,
            d_v_m2_s: 2.9e-5,
            latent_heat_j_kg: 2.43e6,
            molar_mass_kg_mol: 0.018015,
            gas_constant_j_mol_k: 8.314_462_618,
            beta: 1.0,
            c_hk_m_s: None,
            nondimensional: false,
            ramp_slope: 1.0,
            ramp_origin: 0.0,
        }
    }

    /// All coefficients one; ρ_sat is the ramp `slope·(T − origin)` clamped at the far-field temperature.
    pub fn unit(ramp_slope: f64, ramp_origin: f64) -> Self {
        Self {
            rho_d_kg_m3: 1.0,
            rho_g_kg_m3: 1.0,
            cp_g_j_kg_k: 1.0,
            k_g_w_m_k: 1.0,
            d_v_m2_s: 1.0,
            latent_heat_j_kg: 1.0,
            molar_mass_kg_mol: 1.0,
            gas_constant_j_mol_k: 1.0,
            beta: 1.0,
            c_hk_m_s: Some(1.0),
            nondimensional: true,
            ramp_slope,
            ramp_origin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho_d_kg_m3", self.rho_d_kg_m3),
            ("rho_g_kg_m3", self.rho_g_kg_m3),
            ("cp_g_j_kg_k", self.cp_g_j_kg_k),
            ("k_g_w_m_k", self.k_g_w_m_k),
            ("d_v_m2_s", self.d_v_m2_s),
            ("latent_heat_j_kg", self.latent_heat_j_kg),
            ("molar_mass_kg_mol", self.molar_mass_kg_mol),
            ("gas_constant_j_mol_k", self.gas_constant_j_mol_k),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::param("beta", format!("must lie in (0, 1], got {}", self.beta)));
        }
        if let Some(c) = self.c_hk_m_s {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::param("c_hk_m_s", format!("must be positive, got {c}")));
            }
        }
        if !(self.ramp_slope.is_finite() && self.ramp_slope >= 0.0) {
            return Err(Error::param("ramp_slope", "must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Copy with the unit-coefficient convention applied when `nondimensional` is set.
    pub fn resolved(&self) -> Self {
        if self.nondimensional {
            Self::unit(self.ramp_slope, self.ramp_origin)
        } else {
            self.clone()
        }
    }

    /// Thermal diffusivity k_g/(ρ_g c_p,g).
    pub fn thermal_diffusivity(&self) -> f64 {
        self.k_g_w_m_k / (self.rho_g_kg_m3 * self.cp_g_j_kg_k)
    }

    /// Temperature jump per unit evaporated mass flux, Λ/(ρ_g c_p,g).
    pub fn latent_cooling(&self) -> f64 {
        self.latent_heat_j_kg / (self.rho_g_kg_m3 * self.cp_g_j_kg_k)
    }
}

/// Hertz–Knudsen coefficient β·sqrt(ℛ T_ref / (2π M)), frozen at `t_ref_c`.
pub fn hk_coefficient(params: &MaterialParams, t_ref_c: f64) -> Result<f64> {
    if params.nondimensional {
        return Ok(1.0);
    }
    if let Some(c) = params.c_hk_m_s {
        return Ok(c);
    }
    let t_abs = t_ref_c + KELVIN_OFFSET;
    if !(t_abs > 0.0) {
        return Err(Error::param("T_ref", format!("absolute temperature must be positive, got {t_abs} K")));
    }
    let kinetic = (params.gas_constant_j_mol_k * t_abs
        / (2.0 * std::f64::consts::PI * params.molar_mass_kg_mol))
        .sqrt();
    Ok(params.beta * kinetic)
}

/// Saturated vapor mass density as a function of temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SaturationCurve {
    /// Tetens pressure converted through the ideal gas law.
    Tetens { molar_mass: f64, gas_constant: f64 },
    /// `slope·(T − origin)` clamped to `[0, slope·(cap − origin)]`.
    Ramp { origin: f64, slope: f64, cap: f64 },
}

impl SaturationCurve {
    pub fn rho_sat(&self, t_c: f64) -> Result<f64> {
        self.check(t_c)?;
        Ok(self.value(t_c))
    }

    pub fn drho_sat_dt(&self, t_c: f64) -> Result<f64> {
        self.check(t_c)?;
        Ok(self.slope_at(t_c))
    }

    fn check(&self, t_c: f64) -> Result<()> {
        match self {
            SaturationCurve::Tetens { .. } if t_c.is_nan() || t_c <= TETENS_POLE_C => {
                Err(Error::Domain(t_c))
            }
            _ => Ok(()),
        }
    }

    /// Unchecked evaluation for solver inner loops; callers keep `t_c` inside the box.
    #[inline]
    pub(crate) fn value(&self, t_c: f64) -> f64 {
        match *self {
            SaturationCurve::Tetens { molar_mass, gas_constant } => {
                tetens(t_c) * molar_mass / (gas_constant * (t_c + KELVIN_OFFSET))
            }
            SaturationCurve::Ramp { origin, slope, cap } => {
                slope * (t_c.min(cap) - origin).max(0.0)
            }
        }
    }

    #[inline]
    pub(crate) fn slope_at(&self, t_c: f64) -> f64 {
        match *self {
            SaturationCurve::Tetens { molar_mass, gas_constant } => {
                let p = tetens(t_c);
                let dp = p * TETENS_A * TETENS_B / (t_c + TETENS_B).powi(2);
                let t_abs = t_c + KELVIN_OFFSET;
                molar_mass / gas_constant * (dp / t_abs - p / (t_abs * t_abs))
            }
            SaturationCurve::Ramp { origin, slope, cap } => {
                if t_c > origin && t_c < cap {
                    slope
                } else {
                    0.0
                }
            }
        }
    }
}

/// Far-field drying conditions and the bounds derived from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DryingState {
    pub t_inf: f64,
    pub rh_inf: f64,
    pub rho_inf: f64,
    pub rho_star: f64,
    pub t_star: f64,
    /// Upper bound of dρ_sat/dT over [T_star, T_inf].
    pub lipschitz: f64,
    /// Hertz–Knudsen coefficient (m/s).
    pub c_hk: f64,
    /// Maximal evaporation rate c_hk·(ρ_star − ρ_inf).
    pub j_inf: f64,
    pub curve: SaturationCurve,
}

impl DryingState {
    /// Derives ρ_inf, ρ_star, T_star, L and J_inf from `T_inf` (°C) and `RH_inf`.
    ///
    /// `params` should already be [`MaterialParams::resolved`].
    pub fn new(params: &MaterialParams, t_inf: f64, rh_inf: f64) -> Result<Self> {
        params.validate()?;
        if !(rh_inf > 0.0 && rh_inf <= 1.0) {
            return Err(Error::param("RH_inf", format!("must lie in (0, 1], got {rh_inf}")));
        }
        let curve = if params.nondimensional {
            if !(t_inf > params.ramp_origin) {
                return Err(Error::param("T_inf_C", "must exceed the ramp origin in nondimensional mode"));
            }
            SaturationCurve::Ramp {
                origin: params.ramp_origin,
                slope: params.ramp_slope,
                cap: t_inf,
            }
        } else {
            SaturationCurve::Tetens {
                molar_mass: params.molar_mass_kg_mol,
                gas_constant: params.gas_constant_j_mol_k,
            }
        };
        let rho_star = curve.rho_sat(t_inf)?;
        let rho_inf = rh_inf * rho_star;
        let t_star = solve_t_star(&curve, t_inf, rho_inf)?;
        let lipschitz = match curve {
            SaturationCurve::Ramp { slope, .. } => slope,
            SaturationCurve::Tetens { .. } => lipschitz_bound(&curve, t_star, t_inf),
        };
        let c_hk = hk_coefficient(params, t_inf)?;
        Ok(Self {
            t_inf,
            rh_inf,
            rho_inf,
            rho_star,
            t_star,
            lipschitz,
            c_hk,
            j_inf: c_hk * (rho_star - rho_inf),
            curve,
        })
    }

    /// Hertz–Knudsen evaporation rate c_hk·(ρ_sat(T_s) − ρ_s).
    #[inline]
    pub fn evap_rate(&self, t_s: f64, rho_s: f64) -> f64 {
        self.c_hk * (self.curve.value(t_s) - rho_s)
    }

    /// ∂J/∂T_s.
    #[inline]
    pub fn evap_rate_dt(&self, t_s: f64) -> f64 {
        self.c_hk * self.curve.slope_at(t_s)
    }

    pub fn rho_sat(&self, t_c: f64) -> Result<f64> {
        self.curve.rho_sat(t_c)
    }

    pub fn drho_sat_dt(&self, t_c: f64) -> Result<f64> {
        self.curve.drho_sat_dt(t_c)
    }

    pub fn is_saturated(&self) -> bool {
        self.rho_inf >= self.rho_star
    }
}

/// Temperature where the saturation curve reaches `rho_inf`, by bisection on
/// [−100 °C, T_inf] carried to floating-point resolution.
pub fn solve_t_star(curve: &SaturationCurve, t_inf: f64, rho_inf: f64) -> Result<f64> {
    let rho_star = curve.rho_sat(t_inf)?;
    if !(rho_inf > 0.0) || rho_inf > rho_star {
        return Err(Error::param(
            "rho_inf",
            format!("must lie in (0, rho_star = {rho_star}], got {rho_inf}"),
        ));
    }
    if rho_inf == rho_star {
        return Ok(t_inf);
    }
    let mut lo = T_STAR_BRACKET_LO.min(t_inf);
    let mut hi = t_inf;
    if curve.rho_sat(lo)? > rho_inf {
        return Err(Error::Bracket(format!(
            "rho_inf = {rho_inf} lies below rho_sat({lo} °C)"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if curve.value(mid) < rho_inf {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Closest endpoint in ρ.
    let (flo, fhi) = (curve.value(lo) - rho_inf, curve.value(hi) - rho_inf);
    Ok(if flo.abs() <= fhi.abs() { lo } else { hi })
}

/// Sampled maximum of dρ_sat/dT on [t_lo, t_hi] times a 1 % safety factor.
pub fn lipschitz_bound(curve: &SaturationCurve, t_lo: f64, t_hi: f64) -> f64 {
    let max = (0..=LIPSCHITZ_SAMPLES)
        .map(|k| {
            let t = t_lo + (t_hi - t_lo) * k as f64 / LIPSCHITZ_SAMPLES as f64;
            curve.slope_at(t)
        })
        .fold(0.0_f64, f64::max);
    LIPSCHITZ_SAFETY * max
}
