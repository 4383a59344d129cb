//! wasm-bindgen surface for the static demo page in `www/`.
//!
//! Each export has a plain Rust twin returning `Result<Vec<f64>, String>` so the
//! numerics can be tested natively.

use droplet_core::flowfields::VelocityModel;
use droplet_core::geometry::GridSpec;
use droplet_core::oracle::{radius_from_volume, D2Law};
use droplet_core::physics::{DryingState, MaterialParams};
use droplet_core::timeloop::{run, Problem, SolverConfig};
use wasm_bindgen::prelude::*;

/// `kind` is `stagnant`, `stokes` (param = V_inf in m/s) or `acoustic` (param = SPL in dB).
pub fn flow_model(kind: &str, param: f64) -> Result<VelocityModel, String> {
    let model = match kind {
        "stagnant" => VelocityModel::Stagnant,
        "stokes" => VelocityModel::stokes(param),
        "acoustic" => VelocityModel::acoustic_spl(param, MaterialParams::water_air().rho_g_kg_m3),
        other => return Err(format!("unknown flow `{other}`")),
    };
    model.validate().map_err(|e| e.to_string())?;
    Ok(model)
}

/// Velocity on an `n × n` lattice of the meridian half-plane `x ∈ [0, extent]`,
/// `z ∈ [-extent, extent]` (droplet radii), flattened as `x, z, v_x, v_z`.
/// Points inside the droplet are skipped.
pub fn flow_samples(kind: &str, param: f64, radius_m: f64, extent: f64, n: usize) -> Result<Vec<f64>, String> {
    if !(radius_m > 0.0 && extent > 1.0 && n >= 2) {
        return Err("need radius > 0, extent > 1 and n >= 2".into());
    }
    let model = flow_model(kind, param)?;
    let mut out = Vec::with_capacity(4 * n * n);
    for a in 0..n {
        for b in 0..n {
            let x = extent * a as f64 / (n - 1) as f64;
            let z = extent * (2.0 * b as f64 / (n - 1) as f64 - 1.0);
            let r = x.hypot(z);
            if r <= 1.0 {
                continue;
            }
            let theta = x.atan2(z);
            let v = model.eval(theta, r, radius_m);
            let (s, c) = theta.sin_cos();
            out.extend([x, z, v.r * s + v.theta * c, v.r * c - v.theta * s]);
        }
    }
    Ok(out)
}

/// `[T_star, T_d, dR²/dt, lifetime, R0]` for a water droplet of `volume_ul` microliters.
pub fn d2_summary(t_inf_c: f64, rh: f64, volume_ul: f64) -> Result<Vec<f64>, String> {
    let params = MaterialParams::water_air();
    let drying = DryingState::new(&params, t_inf_c, rh).map_err(|e| e.to_string())?;
    let r0 = radius_from_volume(volume_ul);
    let law = D2Law::new(&params, &drying, r0).map_err(|e| e.to_string())?;
    Ok(vec![drying.t_star, law.t_d, law.slope, law.lifetime(), r0])
}

/// Coarse coupled run; returns `t, R²/R0²` pairs. About 200 steps over the d²-law lifetime.
pub fn radius_history(kind: &str, param: f64, t_inf_c: f64, rh: f64, volume_ul: f64) -> Result<Vec<f64>, String> {
    let flow = flow_model(kind, param)?;
    let d2 = d2_summary(t_inf_c, rh, volume_ul)?;
    let lifetime = d2[3];
    if !lifetime.is_finite() {
        return Err("saturated air: the droplet does not evaporate".into());
    }
    let grid = GridSpec { n_theta: 12, n_r: 32, r_out: 50.0, stretch: 1.15 };
    let problem = Problem::new(&MaterialParams::water_air(), t_inf_c, rh, flow, &grid, d2[4]).map_err(|e| e.to_string())?;
    let cfg = SolverConfig { dt_s: lifetime / 200.0, t_end_s: 1.5 * lifetime, ..SolverConfig::default() };
    let out = run(&problem, &cfg).map_err(|e| e.to_string())?;
    Ok(out.records.iter().flat_map(|r| [r.t_s, r.r2_norm]).collect())
}

fn js(r: Result<Vec<f64>, String>) -> Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sampleFlow)]
pub fn sample_flow(kind: &str, param: f64, radius_m: f64, extent: f64, n: usize) -> Result<Vec<f64>, JsError> {
    js(flow_samples(kind, param, radius_m, extent, n))
}

#[wasm_bindgen(js_name = d2Law)]
pub fn d2_law(t_inf_c: f64, rh: f64, volume_ul: f64) -> Result<Vec<f64>, JsError> {
    js(d2_summary(t_inf_c, rh, volume_ul))
}

#[wasm_bindgen(js_name = simulateRadius)]
pub fn simulate_radius(kind: &str, param: f64, t_inf_c: f64, rh: f64, volume_ul: f64) -> Result<Vec<f64>, JsError> {
    js(radius_history(kind, param, t_inf_c, rh, volume_ul))
}
