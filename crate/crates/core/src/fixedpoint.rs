//! Radius paths, the solution operator with prescribed radius, and the
//! Volterra map whose fixed point is the coupled solution.
//!
//! Paths live on the uniform grid `t_n = n·dt`. Rates are backward
//! differences with `Ṙ_0 = 0`, which is exactly the lagged rate the coupled
//! time loop feeds into its advection term. With the right-endpoint rule
//! below, the fixed point of [`volterra_apply`] coincides with the coupled
//! trajectory up to rounding.

use crate::error::{Error, Result};
use crate::timeloop::{advance_fields, FieldState, Problem, SolverConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RadiusPath {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl RadiusPath {
    pub fn constant(r0: f64, dt: f64, n_steps: usize) -> Self {
        Self { dt, values: vec![r0; n_steps + 1] }
    }

    pub fn n_steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn r0(&self) -> f64 {
        self.values[0]
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|n| n as f64 * self.dt).collect()
    }

    /// Backward-difference rates, `Ṙ_0 = 0`.
    pub fn rates(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        for n in 1..self.values.len() {
            out[n] = (self.values[n] - self.values[n - 1]) / self.dt;
        }
        out
    }

    /// `(Σ_{n≥1} dt R_n² + Σ_{n≥1} dt Ṙ_n²)^{1/2}`
    pub fn h1_norm(&self) -> f64 {
        h1(&self.values, self.dt)
    }

    pub fn h1_distance(&self, other: &RadiusPath) -> f64 {
        let d: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        h1(&d, self.dt)
    }

    pub fn sup_distance(&self, other: &RadiusPath) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest |Ṙ_n|.
    pub fn max_rate(&self) -> f64 {
        self.rates().iter().fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    /// Membership in the admissible set: rate bound and positivity.
    pub fn check_admissible(&self, max_rate: f64) -> Result<()> {
        if self.values.len() < 2 {
            return Err(Error::InadmissiblePath("path needs at least one step".into()));
        }
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(Error::InadmissiblePath(format!("radius not bounded away from zero (min {min:e})")));
        }
        let slack = 1e-9 * max_rate;
        let worst = self.max_rate();
        if worst > max_rate + slack {
            return Err(Error::InadmissiblePath(format!(
                "rate {worst:e} exceeds the maximal recession rate {max_rate:e}"
            )));
        }
        Ok(())
    }

    pub fn perturbed(&self, delta: &[f64]) -> Result<Self> {
        if delta.len() != self.values.len() {
            return Err(Error::param("delta", "length must match the path"));
        }
        Ok(Self { dt: self.dt, values: self.values.iter().zip(delta).map(|(a, b)| a + b).collect() })
    }
}

fn h1(v: &[f64], dt: f64) -> f64 {
    let mut acc = 0.0;
    for n in 1..v.len() {
        let rate = (v[n] - v[n - 1]) / dt;
        acc += dt * (v[n] * v[n] + rate * rate);
    }
    acc.sqrt()
}

/// Field trajectory for a prescribed radius path: entry `n` holds the
/// fields at `t_n`, entry 0 the initial fields.
pub fn decoupled_solve(problem: &Problem, cfg: &SolverConfig, path: &RadiusPath) -> Result<Vec<FieldState>> {
    path.check_admissible(problem.max_recession_rate())?;
    let rates = path.rates();
    let mut out = Vec::with_capacity(path.values.len());
    out.push(FieldState::initial(problem, cfg.initial_fields));
    for n in 1..path.values.len() {
        let step = advance_fields(problem, cfg, &out[n - 1], path.values[n - 1], rates[n - 1], path.dt)
            .map_err(|e| match e {
                Error::NonConvergence { detail, .. } => Error::NonConvergence { step: n, detail },
                other => other,
            })?;
        out.push(step.fields);
    }
    Ok(out)
}

/// `𝒯(R)_n = R0 − dt Σ_{k=1..n} (1/(4π ρ_d)) Σ_i w_i J_i(S(R)_k)`
pub fn volterra_apply(problem: &Problem, cfg: &SolverConfig, path: &RadiusPath) -> Result<RadiusPath> {
    let fields = decoupled_solve(problem, cfg, path)?;
    let g = &problem.grid;
    let rho_d = problem.params.rho_d_kg_m3;
    let mut values = Vec::with_capacity(fields.len());
    let mut r = path.r0();
    values.push(r);
    for f in &fields[1..] {
        let rate = -g.surface_integral(&f.surface_flux(&problem.drying)) / (4.0 * std::f64::consts::PI) / rho_d;
        r += path.dt * rate;
        values.push(r);
    }
    let out = RadiusPath { dt: path.dt, values };
    out.check_admissible(problem.max_recession_rate())
        .map_err(|e| Error::Invariant { step: 0, detail: format!("Volterra image is inadmissible: {e}") })?;
    if out.values.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-14)) {
        return Err(Error::Invariant { step: 0, detail: "Volterra image is not monotone".into() });
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ContractionReport {
    pub t_star: f64,
    /// `‖R^{(m+1)} − R^{(m)}‖_{H¹}` for m = 0, 1, …
    pub residuals: Vec<f64>,
    /// `q_m = residual_m / residual_{m−1}`, m ≥ 1.
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub fixed_point: RadiusPath,
    /// Sup-norm distance to the coupled time loop over the same horizon.
    pub sup_to_coupled: f64,
    /// Admissible time-horizon bound `R0 ρ_d / (2 J_inf)`.
    pub horizon_bound: f64,
}

impl ContractionReport {
    pub fn all_contracting(&self) -> bool {
        self.ratios.iter().all(|q| *q < 1.0)
    }

    /// CSV rows `m,q_m,residual` (q is empty for m = 0).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("m,q_m,residual\n");
        for (m, r) in self.residuals.iter().enumerate() {
            let q = if m == 0 { String::new() } else { format!("{:.6e}", self.ratios[m - 1]) };
            s.push_str(&format!("{m},{q},{r:.6e}\n"));
        }
        s
    }
}

/// Iterates `R^{(m+1)} = 𝒯(R^{(m)})` from `R^{(0)} ≡ R0` on `[0, t_star]`.
/// Stops when the H¹ update falls below `tol · ‖R^{(0)}‖_{H¹}`.
pub fn picard_to_fixed_point(
    problem: &Problem,
    cfg: &SolverConfig,
    t_star: f64,
    m_max: usize,
    tol: f64,
) -> Result<ContractionReport> {
    let n_steps = (t_star / cfg.dt_s).round() as usize;
    if n_steps == 0 {
        return Err(Error::param("t_star", "shorter than one time step"));
    }
    let horizon_bound = problem.r0 * problem.params.rho_d_kg_m3 / (2.0 * problem.drying.j_inf);
    if !(t_star < horizon_bound) {
        return Err(Error::param(
            "t_star",
            format!("must be below R0·ρ_d/(2 J_inf) = {horizon_bound:e} s, got {t_star}"),
        ));
    }
    let mut path = RadiusPath::constant(problem.r0, cfg.dt_s, n_steps);
    let scale = path.h1_norm();
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..m_max {
        let next = volterra_apply(problem, cfg, &path)?;
        let res = next.h1_distance(&path);
        residuals.push(res);
        path = next;
        if res <= tol * scale {
            converged = true;
            break;
        }
    }
    let ratios = residuals.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect();

    let coupled_cfg = SolverConfig { t_end_s: n_steps as f64 * cfg.dt_s, r_min_frac: 1e-6, ..cfg.clone() };
    let coupled = crate::timeloop::run(problem, &coupled_cfg)?;
    let coupled_path = RadiusPath {
        dt: cfg.dt_s,
        values: coupled.records.iter().map(|r| r.radius_m).collect(),
    };
    let sup_to_coupled = if coupled_path.values.len() == path.values.len() {
        path.sup_distance(&coupled_path)
    } else {
        f64::INFINITY
    };
    Ok(ContractionReport { t_star, residuals, ratios, converged, fixed_point: path, sup_to_coupled, horizon_bound })
}
