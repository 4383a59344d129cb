//! Ambient gas velocity on the rescaled shell.
//!
//! Velocities are physical (m/s) evaluated at rescaled coordinates `(θ, r)`;
//! the transport assembly divides by the droplet radius itself.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AxiGrid;

/// Default levitator frequency (58 kHz) as an angular frequency.
pub const DEFAULT_OMEGA: f64 = 2.0 * PI * 58_000.0;
/// Speed of sound in air (m/s).
pub const DEFAULT_C0: f64 = 343.0;

const DIV_STEP: f64 = 1e-5;

/// Polar and radial velocity components (m/s).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Velocity {
    pub theta: f64,
    pub r: f64,
}

impl Velocity {
    pub fn norm(&self) -> f64 {
        self.theta.hypot(self.r)
    }
}

/// Anything that yields an axisymmetric velocity at `(θ, r)` for radius `radius` (m).
pub trait FlowField {
    fn velocity(&self, theta: f64, r: f64, radius: f64) -> Velocity;

    fn is_stagnant(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VelocityModel {
    Stagnant,
    /// Creeping flow past a sphere with far-field speed `v_inf_m_per_s` along the axis.
    Stokes { v_inf_m_per_s: f64 },
    /// Outer acoustic streaming around a droplet held in a pressure node.
    Acoustic {
        amplitude_pa: f64,
        omega_rad_s: f64,
        c0_m_s: f64,
        gas_density_kg_m3: f64,
    },
}

impl VelocityModel {
    pub fn stokes(v_inf: f64) -> Self {
        VelocityModel::Stokes { v_inf_m_per_s: v_inf }
    }

    /// Acoustic streaming at the given sound pressure level with default frequency and sound speed.
    pub fn acoustic_spl(spl_db: f64, gas_density: f64) -> Self {
        VelocityModel::Acoustic {
            amplitude_pa: spl_to_amplitude(spl_db),
            omega_rad_s: DEFAULT_OMEGA,
            c0_m_s: DEFAULT_C0,
            gas_density_kg_m3: gas_density,
        }
    }

    /// Streaming prefactor 45 A² / (32 ω R ρ_g² c0²) (m/s).
    pub fn acoustic_prefactor(&self, radius: f64) -> f64 {
        match *self {
            VelocityModel::Acoustic { amplitude_pa, omega_rad_s, c0_m_s, gas_density_kg_m3 } => {
                45.0 * amplitude_pa * amplitude_pa
                    / (32.0 * omega_rad_s * radius * gas_density_kg_m3.powi(2) * c0_m_s * c0_m_s)
            }
            _ => 0.0,
        }
    }

    pub fn eval(&self, theta: f64, r: f64, radius: f64) -> Velocity {
        match *self {
            VelocityModel::Stagnant => Velocity::default(),
            VelocityModel::Stokes { v_inf_m_per_s: v } => {
                let (s, c) = theta.sin_cos();
                let r3 = r * r * r;
                Velocity {
                    theta: -v * s * (1.0 - 1.0 / (4.0 * r3) - 3.0 / (4.0 * r)),
                    r: v * c * (1.0 + 1.0 / (2.0 * r3) - 3.0 / (2.0 * r)),
                }
            }
            VelocityModel::Acoustic { .. } => {
                let k = self.acoustic_prefactor(radius);
                let r2 = r * r;
                let r4 = r2 * r2;
                let c = theta.cos();
                Velocity {
                    theta: -k * (2.0 * theta).sin() / r4,
                    r: k * (1.0 / r2 - 1.0 / r4) * (3.0 * c * c - 1.0),
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            VelocityModel::Stagnant => Ok(()),
            VelocityModel::Stokes { v_inf_m_per_s } => {
                if v_inf_m_per_s.is_finite() && v_inf_m_per_s >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::param("V_inf_m_per_s", "must be finite and nonnegative"))
                }
            }
            VelocityModel::Acoustic { amplitude_pa, omega_rad_s, c0_m_s, gas_density_kg_m3 } => {
                for (name, v) in [
                    ("amplitude_pa", amplitude_pa),
                    ("omega_rad_s", omega_rad_s),
                    ("c0_m_s", c0_m_s),
                    ("gas_density_kg_m3", gas_density_kg_m3),
                ] {
                    if !(v.is_finite() && v > 0.0) {
                        return Err(Error::param(name, format!("must be positive, got {v}")));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            VelocityModel::Stagnant => "stagnant",
            VelocityModel::Stokes { .. } => "stokes",
            VelocityModel::Acoustic { .. } => "acoustic",
        }
    }
}

impl FlowField for VelocityModel {
    fn velocity(&self, theta: f64, r: f64, radius: f64) -> Velocity {
        self.eval(theta, r, radius)
    }

    fn is_stagnant(&self) -> bool {
        match *self {
            VelocityModel::Stagnant => true,
            VelocityModel::Stokes { v_inf_m_per_s } => v_inf_m_per_s == 0.0,
            VelocityModel::Acoustic { .. } => false,
        }
    }
}

/// Sound pressure amplitude (Pa) for a level in dB (1 Pa ↔ 94 dB).
pub fn spl_to_amplitude(spl_db: f64) -> f64 {
    10f64.powf((spl_db - 94.0) / 20.0)
}

pub fn amplitude_to_spl(amplitude_pa: f64) -> Result<f64> {
    if !(amplitude_pa > 0.0) {
        return Err(Error::param("amplitude_pa", format!("must be positive, got {amplitude_pa}")));
    }
    Ok(20.0 * amplitude_pa.log10() + 94.0)
}

/// Maximum over cell centers of the axisymmetric spherical divergence,
/// by central differences, scaled by `r / |v|` at the center.
pub fn check_divergence<F: FlowField + ?Sized>(field: &F, grid: &AxiGrid, radius: f64) -> f64 {
    if field.is_stagnant() {
        return 0.0;
    }
    let h = DIV_STEP;
    let v_ref = grid
        .r_c
        .iter()
        .flat_map(|&r| grid.theta_c.iter().map(move |&t| (t, r)))
        .map(|(t, r)| field.velocity(t, r, radius).norm())
        .fold(0.0_f64, f64::max);
    if v_ref == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for &r in &grid.r_c {
        for &t in &grid.theta_c {
            let flux_r = |rr: f64| rr * rr * field.velocity(t, rr, radius).r;
            let flux_t = |tt: f64| tt.sin() * field.velocity(tt, r, radius).theta;
            let div = (flux_r(r + h) - flux_r(r - h)) / (2.0 * h) / (r * r)
                + (flux_t(t + h) - flux_t(t - h)) / (2.0 * h) / (r * t.sin());
            let scale = field.velocity(t, r, radius).norm().max(1e-12 * v_ref) / r;
            worst = worst.max(div.abs() / scale);
        }
    }
    worst
}

/// Sup over cell centers of |v(·; R1) − v(·; R2)| at fixed rescaled position.
pub fn lipschitz_in_r<F: FlowField + ?Sized>(field: &F, r1: f64, r2: f64, grid: &AxiGrid) -> f64 {
    let mut sup = 0.0_f64;
    for &r in &grid.r_c {
        for &t in &grid.theta_c {
            let a = field.velocity(t, r, r1);
            let b = field.velocity(t, r, r2);
            sup = sup.max((a.theta - b.theta).hypot(a.r - b.r));
        }
    }
    sup
}
