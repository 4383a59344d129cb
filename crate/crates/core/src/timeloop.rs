//! Time integration of the coupled radius/field system.
//!
//! Each step solves both fields implicitly at the current radius with the
//! lagged recession rate, then updates the radius explicitly from the new
//! surface state. The first step therefore sees `Ṙ = 0`.
//!
//! Within a step the cell equations are linear; only the surface rows carry
//! the Hertz–Knudsen nonlinearity. Both nonlinear modes exploit this: the
//! cell unknowns are eliminated once per step (static condensation) and the
//! iteration runs on the `2·n_theta` surface values.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::discretization::{
    apply_dirichlet_far, assemble_advection, assemble_diffusion, AdvectionScheme, Field, FieldKind,
    SystemMeta, TransportSystem,
};
use crate::error::{Error, Result};
use crate::flowfields::VelocityModel;
use crate::geometry::{AxiGrid, GridSpec};
use crate::physics::{DryingState, MaterialParams};
use crate::sparse::{solve_factored, BandLu};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearMode {
    #[default]
    Newton,
    PicardUl,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialFields {
    /// `(T_inf, rho_inf)` everywhere.
    #[default]
    FarField,
    /// `(T_inf, rho_star)` everywhere.
    Upper,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PicardStart {
    /// Every step starts from the upper solution `(T_inf, rho_star)`.
    #[default]
    Upper,
    /// Every step starts from the previous surface state.
    Previous,
}

/// Deliberate defects used to check that the monitors catch them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Evaporation heats the gas instead of cooling it.
    FlipCoolingSign,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub dt_s: f64,
    pub t_end_s: f64,
    /// Run stops once `R <= r_min_frac · R0`.
    pub r_min_frac: f64,
    pub nonlinear_mode: NonlinearMode,
    pub newton_tol: f64,
    pub newton_max: usize,
    pub picard_max: usize,
    pub scheme: AdvectionScheme,
    pub initial_fields: InitialFields,
    pub picard_start: PicardStart,
    /// Run the row-wise M-matrix audit on every assembled system.
    pub audit_mmatrix: bool,
    #[serde(skip)]
    pub fault: Option<Fault>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt_s: 1.0,
            t_end_s: 2000.0,
            r_min_frac: 0.01,
            nonlinear_mode: NonlinearMode::Newton,
            newton_tol: 1e-10,
            newton_max: 20,
            picard_max: 200,
            scheme: AdvectionScheme::Upwind,
            initial_fields: InitialFields::FarField,
            picard_start: PicardStart::Upper,
            audit_mmatrix: true,
            fault: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return Err(Error::param("dt_s", format!("must be positive, got {}", self.dt_s)));
        }
        if !(self.t_end_s > 0.0) {
            return Err(Error::param("t_end_s", format!("must be positive, got {}", self.t_end_s)));
        }
        if !(self.r_min_frac > 0.0 && self.r_min_frac < 1.0) {
            return Err(Error::param("r_min_frac", "must lie in (0, 1)"));
        }
        if !(self.newton_tol > 0.0 && self.newton_tol < 1.0) {
            return Err(Error::param("newton_tol", "must lie in (0, 1)"));
        }
        if self.newton_max == 0 || self.picard_max == 0 {
            return Err(Error::param("newton_max", "iteration budgets must be positive"));
        }
        Ok(())
    }
}

/// Everything a run needs besides the solver settings.
#[derive(Clone, Debug)]
pub struct Problem {
    /// Already resolved (unit coefficients in nondimensional mode).
    pub params: MaterialParams,
    pub drying: DryingState,
    pub flow: VelocityModel,
    pub grid: AxiGrid,
    pub r0: f64,
}

impl Problem {
    pub fn new(
        params: &MaterialParams,
        t_inf: f64,
        rh_inf: f64,
        flow: VelocityModel,
        grid: &GridSpec,
        r0: f64,
    ) -> Result<Self> {
        let params = params.resolved();
        let drying = DryingState::new(&params, t_inf, rh_inf)?;
        flow.validate()?;
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(Error::param("R0_m", format!("must be positive, got {r0}")));
        }
        Ok(Self { params, drying, flow, grid: grid.build()?, r0 })
    }

    /// Upper bound of |Ṙ|, `J_inf / ρ_d`.
    pub fn max_recession_rate(&self) -> f64 {
        self.drying.j_inf / self.params.rho_d_kg_m3
    }

    /// Box widths used to make residuals and slacks relative.
    fn scales(&self) -> (f64, f64) {
        let d = &self.drying;
        let st = (d.t_inf - d.t_star).max(1e-6 * d.t_inf.abs().max(1.0));
        let sr = (d.rho_star - d.rho_inf).max(1e-6 * d.rho_star.abs().max(f64::MIN_POSITIVE));
        (st, sr)
    }
}

/// Temperature and vapor fields plus their surface values on Γ*.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldState {
    pub temperature: Field,
    pub vapor: Field,
    pub t_surface: Vec<f64>,
    pub rho_surface: Vec<f64>,
}

impl FieldState {
    pub fn initial(problem: &Problem, policy: InitialFields) -> Self {
        let d = &problem.drying;
        let rho = match policy {
            InitialFields::FarField => d.rho_inf,
            InitialFields::Upper => d.rho_star,
        };
        let g = &problem.grid;
        Self {
            temperature: Field::constant(FieldKind::Temperature, g, d.t_inf),
            vapor: Field::constant(FieldKind::VaporDensity, g, rho),
            t_surface: vec![d.t_inf; g.n_theta],
            rho_surface: vec![rho; g.n_theta],
        }
    }

    /// Surface evaporation rates J_i.
    pub fn surface_flux(&self, drying: &DryingState) -> Vec<f64> {
        self.t_surface
            .iter()
            .zip(&self.rho_surface)
            .map(|(&t, &r)| drying.evap_rate(t, r))
            .collect()
    }

    fn extrema(&self) -> (f64, f64, f64, f64) {
        let fold = |cells: &[f64], surf: &[f64]| {
            cells.iter().chain(surf).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
        };
        let (t_lo, t_hi) = fold(&self.temperature.values, &self.t_surface);
        let (r_lo, r_hi) = fold(&self.vapor.values, &self.rho_surface);
        (t_lo, t_hi, r_lo, r_hi)
    }
}

/// Per-step monitor record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t_s: f64,
    pub radius_m: f64,
    pub radius_rate_m_s: f64,
    pub r2_norm: f64,
    /// Surface-averaged evaporation rate `Σ w_i J_i / 4π`.
    pub j_avg: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub newton_iters: usize,
    /// Largest pointwise increase between successive Picard iterates,
    /// relative to the box width (Picard mode only).
    pub picard_max_increase: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SimState {
    pub step: usize,
    pub t: f64,
    pub radius: f64,
    pub radius_rate: f64,
    pub fields: FieldState,
    pub record: StepRecord,
}

/// `Ṙ = −(1/(4π ρ_d)) Σ w_i J_i` and the explicit Euler radius.
pub fn radius_update(
    grid: &AxiGrid,
    drying: &DryingState,
    rho_d: f64,
    fields: &FieldState,
    radius: f64,
    dt: f64,
) -> (f64, f64) {
    let rate = -surface_rate(grid, drying, fields) / rho_d;
    (radius + dt * rate, rate)
}

/// `Σ w_i J_i / 4π`.
fn surface_rate(grid: &AxiGrid, drying: &DryingState, fields: &FieldState) -> f64 {
    grid.surface_integral(&fields.surface_flux(drying)) / (4.0 * std::f64::consts::PI)
}

/// Both field systems for one step with their factors and the first-layer
/// response to unit surface values.
struct Condensed {
    systems: [TransportSystem; 2],
    lus: [BandLu; 2],
    /// Full solution with zero surface values.
    base: [Vec<f64>; 2],
    /// `resp[k][i * nt + m]`: first-layer cell `i` per unit surface value `m`.
    resp: [Vec<f64>; 2],
    /// `A_i / R`.
    a: Vec<f64>,
    nt: usize,
}

impl Condensed {
    fn build(
        problem: &Problem,
        cfg: &SolverConfig,
        prev: &FieldState,
        radius: f64,
        radius_rate: f64,
        dt: f64,
    ) -> Result<Self> {
        let g = &problem.grid;
        let d = &problem.drying;
        let nt = g.n_theta;
        let adv = assemble_advection(g, &problem.flow, radius, radius_rate, cfg.scheme);
        let build = |kind, alpha: f64, old: &[f64], far: f64| -> Result<(TransportSystem, BandLu)> {
            let diff = assemble_diffusion(g, alpha, radius);
            let meta = SystemMeta { diffusivity: alpha, radius, radius_rate, dt };
            let mut sys = TransportSystem::assemble(g, kind, &diff, &adv, meta, old);
            apply_dirichlet_far(&mut sys, g, far);
            if cfg.audit_mmatrix && cfg.scheme == AdvectionScheme::Upwind {
                sys.audit().map_err(|v| Error::Invariant {
                    step: 0,
                    detail: format!("{kind:?} system is not an M-matrix: {v:?}"),
                })?;
            }
            let lu = BandLu::factor(&sys.matrix)?;
            Ok((sys, lu))
        };
        let (st, lt) = build(
            FieldKind::Temperature,
            problem.params.thermal_diffusivity(),
            &prev.temperature.values,
            d.t_inf,
        )?;
        let (sr, lr) =
            build(FieldKind::VaporDensity, problem.params.d_v_m2_s, &prev.vapor.values, d.rho_inf)?;
        let mut base = [Vec::new(), Vec::new()];
        let mut resp = [vec![0.0; nt * nt], vec![0.0; nt * nt]];
        for (k, (sys, lu)) in [(&st, &lt), (&sr, &lr)].into_iter().enumerate() {
            base[k] = solve_factored(&sys.matrix, lu, &sys.rhs)?;
            let mut e = vec![0.0; sys.matrix.n];
            for m in 0..nt {
                e.iter_mut().for_each(|v| *v = 0.0);
                e[m] = 1.0;
                lu.solve_in_place(&mut e);
                for i in 0..nt {
                    resp[k][i * nt + m] = e[nt + i];
                }
            }
        }
        let a = g.surface_weights().iter().map(|w| w / radius).collect();
        Ok(Self { systems: [st, sr], lus: [lt, lr], base, resp, a, nt })
    }

    /// First-layer cell values for surface values `s` of field `k`.
    fn first_layer(&self, k: usize, s: &[f64]) -> Vec<f64> {
        let nt = self.nt;
        (0..nt)
            .map(|i| {
                let row = &self.resp[k][i * nt..(i + 1) * nt];
                self.base[k][nt + i] + row.iter().zip(s).map(|(p, v)| p * v).sum::<f64>()
            })
            .collect()
    }

    fn kappa(&self, k: usize) -> &[f64] {
        &self.systems[k].surface_conductance
    }

    /// Full field for prescribed surface values.
    fn expand(&self, k: usize, s: &[f64]) -> Result<Vec<f64>> {
        let sys = &self.systems[k];
        let mut rhs = sys.rhs.clone();
        rhs[..self.nt].copy_from_slice(s);
        let x = solve_factored(&sys.matrix, &self.lus[k], &rhs)?;
        Ok(x[self.nt..].to_vec())
    }

    fn finish(&self, t_s: Vec<f64>, rho_s: Vec<f64>) -> Result<FieldState> {
        Ok(FieldState {
            temperature: Field { kind: FieldKind::Temperature, values: self.expand(0, &t_s)? },
            vapor: Field { kind: FieldKind::VaporDensity, values: self.expand(1, &rho_s)? },
            t_surface: t_s,
            rho_surface: rho_s,
        })
    }
}

fn cooling(problem: &Problem, cfg: &SolverConfig) -> f64 {
    let phi = problem.params.latent_cooling();
    match cfg.fault {
        Some(Fault::FlipCoolingSign) => -phi,
        None => phi,
    }
}

/// Result of one implicit field solve.
#[derive(Clone, Debug)]
pub struct FieldStep {
    pub fields: FieldState,
    pub iterations: usize,
    pub picard_max_increase: Option<f64>,
}

/// Newton on the condensed surface system. Residual rows are
/// `κ_i (s_i − c_i(s)) + a_i φ J_i` (temperature, φ = Λ/(ρ_g c_p)) and
/// `κ_i (s_i − c_i(s)) − a_i J_i` (vapor).
pub fn step_newton(
    problem: &Problem,
    cfg: &SolverConfig,
    prev: &FieldState,
    radius: f64,
    radius_rate: f64,
    dt: f64,
) -> Result<FieldStep> {
    let c = Condensed::build(problem, cfg, prev, radius, radius_rate, dt)?;
    newton_condensed(problem, cfg, &c, prev)
}

fn newton_condensed(
    problem: &Problem,
    cfg: &SolverConfig,
    c: &Condensed,
    prev: &FieldState,
) -> Result<FieldStep> {
    let d = &problem.drying;
    let nt = c.nt;
    let phi = cooling(problem, cfg);
    let (kt, kr) = (c.kappa(0), c.kappa(1));
    let (wt, wr) = problem.scales();
    let scale_t = kt.iter().fold(0.0_f64, |m, v| m.max(*v)) * wt.max(d.t_inf.abs()).max(d.t_star.abs());
    let scale_r = kr.iter().fold(0.0_f64, |m, v| m.max(*v)) * wr.max(d.rho_star.abs());
    let mut ts: Vec<f64> = prev.t_surface.iter().map(|&v| v.clamp(d.t_star, d.t_inf)).collect();
    let mut rs: Vec<f64> = prev.rho_surface.iter().map(|&v| v.clamp(d.rho_inf, d.rho_star)).collect();
    // The exact step solution lies in the comparison box; an iterate beyond
    // the box widened by its own width means the discrete maximum principle is broken.
    let outside = |t: f64, r: f64| {
        !(t >= d.t_star - wt && t <= d.t_inf + wt && r >= d.rho_inf - wr && r <= d.rho_star + wr)
    };
    let mut last = f64::NAN;
    for iter in 1..=cfg.newton_max {
        let ct = c.first_layer(0, &ts);
        let cr = c.first_layer(1, &rs);
        let mut f = DVector::zeros(2 * nt);
        let mut res = 0.0_f64;
        for i in 0..nt {
            let j = d.evap_rate(ts[i], rs[i]);
            f[i] = kt[i] * (ts[i] - ct[i]) + c.a[i] * phi * j;
            f[nt + i] = kr[i] * (rs[i] - cr[i]) - c.a[i] * j;
            res = res.max((f[i] / scale_t).abs()).max((f[nt + i] / scale_r).abs());
        }
        last = res;
        if res <= cfg.newton_tol {
            return Ok(FieldStep { fields: c.finish(ts, rs)?, iterations: iter, picard_max_increase: None });
        }
        let mut jac = DMatrix::zeros(2 * nt, 2 * nt);
        for i in 0..nt {
            for m in 0..nt {
                jac[(i, m)] = -kt[i] * c.resp[0][i * nt + m];
                jac[(nt + i, nt + m)] = -kr[i] * c.resp[1][i * nt + m];
            }
            let dj_dt = d.evap_rate_dt(ts[i]);
            let dj_dr = -d.c_hk;
            jac[(i, i)] += kt[i] + c.a[i] * phi * dj_dt;
            jac[(i, nt + i)] = c.a[i] * phi * dj_dr;
            jac[(nt + i, i)] = -c.a[i] * dj_dt;
            jac[(nt + i, nt + i)] += kr[i] - c.a[i] * dj_dr;
        }
        let delta = jac.lu().solve(&f).ok_or_else(|| {
            Error::Singular("condensed Newton Jacobian".into())
        })?;
        for i in 0..nt {
            ts[i] -= delta[i];
            rs[i] -= delta[nt + i];
            if outside(ts[i], rs[i]) {
                return Err(Error::Invariant {
                    step: 0,
                    detail: format!(
                        "Newton iterate (T_s, rho_s) = ({:.6e}, {:.6e}) leaves the comparison box at surface face {i}",
                        ts[i], rs[i]
                    ),
                });
            }
        }
    }
    Err(Error::NonConvergence {
        step: 0,
        detail: format!("Newton residual {last:e} after {} iterations", cfg.newton_max),
    })
}

/// Monotone upper/lower-solution iteration: the flux is linearized with
/// the constant slopes `c_hk·L` (temperature) and `c_hk` (vapor), with the
/// right-hand sides taken from the previous iterate.
pub fn step_picard(
    problem: &Problem,
    cfg: &SolverConfig,
    prev: &FieldState,
    radius: f64,
    radius_rate: f64,
    dt: f64,
) -> Result<FieldStep> {
    let c = Condensed::build(problem, cfg, prev, radius, radius_rate, dt)?;
    picard_condensed(problem, cfg, &c, prev)
}

fn picard_condensed(
    problem: &Problem,
    cfg: &SolverConfig,
    c: &Condensed,
    prev: &FieldState,
) -> Result<FieldStep> {
    let d = &problem.drying;
    let nt = c.nt;
    let phi = cooling(problem, cfg);
    let coeff = [phi * d.c_hk * d.lipschitz, d.c_hk];
    let (wt, wr) = problem.scales();
    let widths = [wt, wr];
    // (diag(κ + a·coeff) − diag(κ) P) s = κ c0 + a·rhs(prev)
    let lus: Vec<_> = (0..2)
        .map(|k| {
            let kappa = c.kappa(k);
            let mut m = DMatrix::zeros(nt, nt);
            for i in 0..nt {
                for j in 0..nt {
                    m[(i, j)] = -kappa[i] * c.resp[k][i * nt + j];
                }
                m[(i, i)] += kappa[i] + c.a[i] * coeff[k];
            }
            m.lu()
        })
        .collect();
    let (mut ts, mut rs) = match cfg.picard_start {
        PicardStart::Upper => (vec![d.t_inf; nt], vec![d.rho_star; nt]),
        PicardStart::Previous => (prev.t_surface.clone(), prev.rho_surface.clone()),
    };
    let mut cells = match cfg.picard_start {
        PicardStart::Upper => [vec![d.t_inf; prev.temperature.values.len()], vec![d.rho_star; prev.vapor.values.len()]],
        PicardStart::Previous => [prev.temperature.values.clone(), prev.vapor.values.clone()],
    };
    let mut max_increase = f64::NEG_INFINITY;
    let mut last = f64::NAN;
    for iter in 1..=cfg.picard_max {
        let mut rhs = [DVector::zeros(nt), DVector::zeros(nt)];
        for i in 0..nt {
            let j = d.evap_rate(ts[i], rs[i]);
            let kt = c.kappa(0)[i];
            let kr = c.kappa(1)[i];
            rhs[0][i] = kt * c.base[0][nt + i] + c.a[i] * (coeff[0] * ts[i] - phi * j);
            rhs[1][i] = kr * c.base[1][nt + i] + c.a[i] * (j + coeff[1] * rs[i]);
        }
        let next: Vec<Vec<f64>> = (0..2)
            .map(|k| {
                lus[k]
                    .solve(&rhs[k])
                    .map(|v| v.iter().copied().collect())
                    .ok_or_else(|| Error::Singular("condensed Picard system".into()))
            })
            .collect::<Result<_>>()?;
        let mut change = 0.0_f64;
        for k in 0..2 {
            let old = if k == 0 { &ts } else { &rs };
            for (a, b) in next[k].iter().zip(old) {
                change = change.max((a - b).abs() / widths[k]);
                max_increase = max_increase.max((a - b) / widths[k]);
            }
            let new_cells = c.expand(k, &next[k])?;
            for (a, b) in new_cells.iter().zip(&cells[k]) {
                max_increase = max_increase.max((a - b) / widths[k]);
            }
            cells[k] = new_cells;
        }
        ts = next[0].clone();
        rs = next[1].clone();
        last = change;
        if change <= cfg.newton_tol {
            let [tc, rc] = cells;
            let fields = FieldState {
                temperature: Field { kind: FieldKind::Temperature, values: tc },
                vapor: Field { kind: FieldKind::VaporDensity, values: rc },
                t_surface: ts,
                rho_surface: rs,
            };
            return Ok(FieldStep { fields, iterations: iter, picard_max_increase: Some(max_increase) });
        }
    }
    Err(Error::NonConvergence {
        step: 0,
        detail: format!("Picard change {last:e} after {} iterations", cfg.picard_max),
    })
}

/// One implicit field solve in the configured mode; on non-convergence the
/// step is retried once as two half steps.
pub fn advance_fields(
    problem: &Problem,
    cfg: &SolverConfig,
    prev: &FieldState,
    radius: f64,
    radius_rate: f64,
    dt: f64,
) -> Result<FieldStep> {
    let solve = |p: &FieldState, h: f64| match cfg.nonlinear_mode {
        NonlinearMode::Newton => step_newton(problem, cfg, p, radius, radius_rate, h),
        NonlinearMode::PicardUl => step_picard(problem, cfg, p, radius, radius_rate, h),
    };
    match solve(prev, dt) {
        Err(Error::NonConvergence { .. }) => {
            let half = solve(prev, 0.5 * dt)?;
            let mut second = solve(&half.fields, 0.5 * dt)?;
            second.iterations += half.iterations;
            second.picard_max_increase = match (half.picard_max_increase, second.picard_max_increase) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            };
            Ok(second)
        }
        other => other,
    }
}

/// Checks the comparison box and returns the largest relative excursion
/// (non-positive when inside).
pub fn box_excursion(problem: &Problem, fields: &FieldState) -> f64 {
    let d = &problem.drying;
    let (t_lo, t_hi, r_lo, r_hi) = fields.extrema();
    let ts = d.t_inf.abs().max(d.t_star.abs()).max(f64::MIN_POSITIVE);
    let rs = d.rho_star.abs().max(f64::MIN_POSITIVE);
    [(d.t_star - t_lo) / ts, (t_hi - d.t_inf) / ts, (d.rho_inf - r_lo) / rs, (r_hi - d.rho_star) / rs]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Relative slack of the box and rate invariants.
pub const INVARIANT_RTOL: f64 = 1e-8;

fn check_invariants(problem: &Problem, state: &SimState, prev_radius: f64) -> Result<()> {
    let step = state.step;
    let ex = box_excursion(problem, &state.fields);
    if !(ex <= INVARIANT_RTOL) {
        return Err(Error::Invariant {
            step,
            detail: format!("fields leave the comparison box by {ex:e} (relative)"),
        });
    }
    let bound = problem.max_recession_rate();
    let slack = 1e-9 * bound + 1e-300;
    if !(state.radius_rate <= slack && -state.radius_rate <= bound + slack) {
        return Err(Error::Invariant {
            step,
            detail: format!("radius rate {:e} outside [-{bound:e}, 0]", state.radius_rate),
        });
    }
    if state.radius > prev_radius * (1.0 + 1e-12) {
        return Err(Error::Invariant { step, detail: "radius increased".into() });
    }
    Ok(())
}

fn record(problem: &Problem, step: usize, t: f64, radius: f64, rate: f64, fields: &FieldState, iters: usize, pmi: Option<f64>) -> StepRecord {
    let (t_min, t_max, rho_min, rho_max) = fields.extrema();
    StepRecord {
        step,
        t_s: t,
        radius_m: radius,
        radius_rate_m_s: rate,
        r2_norm: (radius / problem.r0).powi(2),
        j_avg: surface_rate(&problem.grid, &problem.drying, fields),
        t_min,
        t_max,
        rho_min,
        rho_max,
        newton_iters: iters,
        picard_max_increase: pmi,
    }
}

/// Trajectory summary of a run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Step 0 is the initial state.
    pub records: Vec<StepRecord>,
    pub final_state: SimState,
    /// True when the radius reached the extinction cutoff.
    pub extinct: bool,
    /// Extinction time extrapolated from the last 10 % of R²(t).
    pub lifetime_s: Option<f64>,
    /// Largest relative box excursion seen over all steps.
    pub max_box_excursion: f64,
    pub max_iterations: usize,
}

pub fn initial_state(problem: &Problem, cfg: &SolverConfig) -> SimState {
    let fields = FieldState::initial(problem, cfg.initial_fields);
    let rec = record(problem, 0, 0.0, problem.r0, 0.0, &fields, 0, None);
    SimState { step: 0, t: 0.0, radius: problem.r0, radius_rate: 0.0, fields, record: rec }
}

/// Advances a coupled state by one step.
pub fn step(problem: &Problem, cfg: &SolverConfig, state: &SimState) -> Result<SimState> {
    let dt = cfg.dt_s;
    let n = state.step + 1;
    let with_step = |e: Error| match e {
        Error::NonConvergence { detail, .. } => Error::NonConvergence { step: n, detail },
        Error::Invariant { detail, .. } => Error::Invariant { step: n, detail },
        other => other,
    };
    let fs = advance_fields(problem, cfg, &state.fields, state.radius, state.radius_rate, dt)
        .map_err(with_step)?;
    let (r_new, rate) = radius_update(
        &problem.grid,
        &problem.drying,
        problem.params.rho_d_kg_m3,
        &fs.fields,
        state.radius,
        dt,
    );
    let t = state.t + dt;
    let r_new = r_new.max(0.0);
    let rec = record(problem, n, t, r_new, rate, &fs.fields, fs.iterations, fs.picard_max_increase);
    let next = SimState { step: n, t, radius: r_new, radius_rate: rate, fields: fs.fields, record: rec };
    check_invariants(problem, &next, state.radius)?;
    Ok(next)
}

pub fn run(problem: &Problem, cfg: &SolverConfig) -> Result<RunOutput> {
    run_with(problem, cfg, |_| {})
}

/// Runs until `t_end` or extinction, calling `observer` on every state
/// (including the initial one).
pub fn run_with<F: FnMut(&SimState)>(
    problem: &Problem,
    cfg: &SolverConfig,
    mut observer: F,
) -> Result<RunOutput> {
    cfg.validate()?;
    let mut state = initial_state(problem, cfg);
    observer(&state);
    let mut records = vec![state.record.clone()];
    let mut max_ex = box_excursion(problem, &state.fields);
    let mut max_it = 0;
    let cutoff = cfg.r_min_frac * problem.r0;
    let mut extinct = false;
    while state.t < cfg.t_end_s - 1e-9 * cfg.dt_s {
        state = step(problem, cfg, &state)?;
        observer(&state);
        max_ex = max_ex.max(box_excursion(problem, &state.fields));
        max_it = max_it.max(state.record.newton_iters);
        records.push(state.record.clone());
        if state.radius <= cutoff {
            extinct = true;
            break;
        }
    }
    let lifetime_s = if extinct { extrapolate_lifetime(&records) } else { None };
    Ok(RunOutput { records, final_state: state, extinct, lifetime_s, max_box_excursion: max_ex, max_iterations: max_it })
}

/// Zero of the least-squares line through the last 10 % (at least three
/// points) of the positive-radius samples of R²(t).
pub fn extrapolate_lifetime(records: &[StepRecord]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.radius_m > 0.0)
        .map(|r| (r.t_s, r.radius_m * r.radius_m))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let k = (pts.len() / 10).max(3);
    let (slope, intercept) = least_squares(&pts[pts.len() - k..]);
    if slope < 0.0 {
        Some(-intercept / slope)
    } else {
        None
    }
}

/// Slope and intercept of the least-squares line.
pub fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Discrete stability quotients for a radius-path perturbation.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityRatio {
    /// `sup_n (‖δT_n‖ + ‖∇δT_n‖) / ‖δR‖_{H¹}`
    pub temperature: f64,
    /// Same for the vapor density.
    pub vapor: f64,
    pub delta_h1: f64,
}

/// Solves the fields along `base` and `base + delta` with the radius
/// prescribed and compares them.
pub fn stability_ratio(
    problem: &Problem,
    cfg: &SolverConfig,
    base: &crate::fixedpoint::RadiusPath,
    delta: &[f64],
) -> Result<StabilityRatio> {
    let pert = base.perturbed(delta)?;
    let a = crate::fixedpoint::decoupled_solve(problem, cfg, base)?;
    let b = crate::fixedpoint::decoupled_solve(problem, cfg, &pert)?;
    let g = &problem.grid;
    let mut sup = [0.0_f64; 2];
    for (fa, fb) in a.iter().zip(&b) {
        for (k, (ua, ub)) in [
            (&fa.temperature.values, &fb.temperature.values),
            (&fa.vapor.values, &fb.vapor.values),
        ]
        .into_iter()
        .enumerate()
        {
            let d: Vec<f64> = ua.iter().zip(ub).map(|(x, y)| y - x).collect();
            sup[k] = sup[k].max(g.l2_norm(&d) + g.grad_l2_norm(&d));
        }
    }
    let dh1 = pert.h1_distance(base);
    if dh1 == 0.0 {
        return Ok(StabilityRatio { temperature: 0.0, vapor: 0.0, delta_h1: 0.0 });
    }
    Ok(StabilityRatio { temperature: sup[0] / dh1, vapor: sup[1] / dh1, delta_h1: dh1 })
}
