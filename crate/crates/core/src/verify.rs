//! Verification suite: manufactured solutions, invariant audits and
//! mutation checks, runnable at desk scale.

use std::time::{Duration, Instant};

use crate::discretization::{
    apply_dirichlet_far, apply_robin_boundary, assemble_advection, assemble_diffusion, extrapolate_outer,
    extrapolate_surface, AdvectionScheme, FieldKind, InterfaceLaw, Linearization, OperatorParts,
    SurfaceClosure, SystemMeta, TransportSystem,
};
use crate::error::Result;
use crate::fixedpoint::{picard_to_fixed_point, RadiusPath};
use crate::flowfields::{check_divergence, FlowField, Velocity, VelocityModel};
use crate::geometry::{AxiGrid, GridSpec};
use crate::oracle::{harmonic_profile, radius_from_volume, solve_wet_bulb, wet_bulb_residual};
use crate::physics::MaterialParams;
use crate::sparse::solve_sparse;
use crate::timeloop::{
    run, stability_ratio, step_newton, step_picard, Fault, FieldState, InitialFields, NonlinearMode,
    Problem, SolverConfig, INVARIANT_RTOL,
};
use crate::Error;

/// Harmonic test profile `a + b/r`.
pub const HARMONIC_A: f64 = 1.0;
pub const HARMONIC_B: f64 = 2.0;

/// Largest per-volume residual of the diffusion operator applied to
/// `a + b/r` over cells away from both boundaries.
pub fn harmonic_residual(grid: &AxiGrid, a: f64, b: f64) -> f64 {
    let d = assemble_diffusion(grid, 1.0, 1.0);
    let u = harmonic_profile(grid, a, b).values;
    let us = vec![a + b; grid.n_theta];
    let r = d.apply(grid, &u, &us, a + b / grid.r_out);
    let mut worst = 0.0_f64;
    for j in 1..grid.n_r - 1 {
        for i in 0..grid.n_theta {
            let c = grid.cell(i, j);
            worst = worst.max((r[c] / grid.vol[c]).abs());
        }
    }
    worst
}

/// Steady diffusion with Dirichlet data of `a + b/r` at both ends; returns
/// the largest cell error.
pub fn harmonic_solve_error(grid: &AxiGrid, a: f64, b: f64) -> Result<f64> {
    let d = assemble_diffusion(grid, 1.0, 1.0);
    let zero = zero_operator(grid);
    let meta = SystemMeta { diffusivity: 1.0, radius: 1.0, radius_rate: 0.0, dt: f64::INFINITY };
    let mut sys = TransportSystem::assemble(grid, FieldKind::Temperature, &d, &zero, meta, &vec![0.0; grid.n_cells()]);
    apply_robin_boundary(&mut sys, grid, SurfaceClosure::Prescribed(vec![a + b; grid.n_theta]));
    apply_dirichlet_far(&mut sys, grid, a + b / grid.r_out);
    let x = solve_sparse(&sys.matrix, &sys.rhs)?;
    let exact = harmonic_profile(grid, a, b).values;
    Ok(x[grid.n_theta..].iter().zip(&exact).fold(0.0_f64, |m, (u, e)| m.max((u - e).abs())))
}

fn zero_operator(grid: &AxiGrid) -> OperatorParts {
    assemble_advection(grid, &VelocityModel::Stagnant, 1.0, 0.0, AdvectionScheme::Upwind)
}

/// Largest deviation of the extrapolated face values from `a + b` and `a + b/r_out`.
pub fn extrapolation_error(grid: &AxiGrid, a: f64, b: f64) -> f64 {
    let u = harmonic_profile(grid, a, b).values;
    let inner = extrapolate_surface(grid, &u).iter().fold(0.0_f64, |m, v| m.max((v - a - b).abs()));
    let outer = extrapolate_outer(grid, &u)
        .iter()
        .fold(0.0_f64, |m, v| m.max((v - a - b / grid.r_out).abs()));
    inner.max(outer)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderRow {
    pub n_theta: usize,
    pub n_r: usize,
    /// Surface-layer width in rescaled units.
    pub h: f64,
    pub error: f64,
    /// Observed order against the previous row.
    pub order: Option<f64>,
}

/// Refinement table of `measure` over `levels` successive doublings of `base`.
pub fn order_study<F>(base: GridSpec, levels: usize, mut measure: F) -> Result<Vec<OrderRow>>
where
    F: FnMut(&AxiGrid) -> Result<f64>,
{
    let mut rows: Vec<OrderRow> = Vec::with_capacity(levels);
    let mut spec = base;
    for _ in 0..levels {
        let g = spec.build()?;
        let error = measure(&g)?;
        let h = g.r_faces[1] - g.r_faces[0];
        let order = rows.last().map(|p| (p.error / error).ln() / (p.h / h).ln());
        rows.push(OrderRow { n_theta: spec.n_theta, n_r: spec.n_r, h, error, order });
        spec = spec.refined();
    }
    Ok(rows)
}

/// Grid used for the manufactured-solution studies (uniform radial layers).
pub fn harmonic_base_grid() -> GridSpec {
    GridSpec { n_theta: 4, n_r: 64, r_out: 2.0, stretch: 1.0 }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

type CheckFn = fn() -> std::result::Result<String, String>;

/// Names of the checks in suite order.
pub fn check_names() -> Vec<&'static str> {
    checks().iter().map(|(n, _)| *n).collect()
}

fn checks() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("saturation_curve", check_saturation),
        ("wet_bulb_root", check_wet_bulb),
        ("harmonic_diffusion_order", check_harmonic_order),
        ("harmonic_solve_order", check_harmonic_solve),
        ("mmatrix_upwind_systems", check_mmatrix),
        ("flow_divergence", check_flows),
        ("flow_divergence_mutation", check_flow_mutation),
        ("comparison_box", check_box),
        ("comparison_box_mutation", check_box_mutation),
        ("picard_monotone_iterates", check_picard_monotone),
        ("newton_picard_agreement", check_newton_picard),
        ("volterra_contraction", check_contraction),
        ("stability_ratio", check_stability),
    ]
}

/// Runs every check, or only those whose name contains `filter`.
pub fn run_suite(filter: Option<&str>) -> Vec<CheckResult> {
    checks()
        .into_iter()
        .filter(|(name, _)| filter.is_none_or(|f| name.contains(f)))
        .map(|(name, f)| {
            let start = Instant::now();
            let (passed, detail) = match f() {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult { name, passed, detail, elapsed: start.elapsed() }
        })
        .collect()
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn check_saturation() -> std::result::Result<String, String> {
    let d = crate::physics::DryingState::new(&MaterialParams::water_air(), 60.0, 0.1).map_err(fail)?;
    let mut prev = 0.0;
    for k in 0..=600 {
        let t = 0.1 * k as f64;
        let v = d.rho_sat(t).map_err(fail)?;
        if v <= prev {
            return Err(format!("rho_sat not increasing at {t} °C"));
        }
        prev = v;
        let s = d.drho_sat_dt(t).map_err(fail)?;
        if t >= d.t_star && s > d.lipschitz {
            return Err(format!("derivative {s:e} exceeds L = {:e} at {t} °C", d.lipschitz));
        }
    }
    Ok(format!("T_star = {:.4} °C, L = {:.4e}", d.t_star, d.lipschitz))
}

fn check_wet_bulb() -> std::result::Result<String, String> {
    let p = MaterialParams::water_air();
    let d = crate::physics::DryingState::new(&p, 60.0, 0.1).map_err(fail)?;
    let t = solve_wet_bulb(&p, &d).map_err(fail)?;
    let f = wet_bulb_residual(&p, &d, t).map_err(fail)?;
    let scale = d.rho_sat(t).map_err(fail)?;
    if !(t > d.t_star && t < d.t_inf) || f.abs() > 1e-9 * scale {
        return Err(format!("T_d = {t}, residual {f:e}"));
    }
    Ok(format!("T_d = {t:.4} °C"))
}

fn min_order(rows: &[OrderRow]) -> f64 {
    rows.iter().filter_map(|r| r.order).fold(f64::INFINITY, f64::min)
}

fn check_harmonic_order() -> std::result::Result<String, String> {
    let rows = order_study(harmonic_base_grid(), 4, |g| Ok(harmonic_residual(g, HARMONIC_A, HARMONIC_B)))
        .map_err(fail)?;
    let p = min_order(&rows);
    if p >= 1.9 {
        Ok(format!("min observed order {p:.3}"))
    } else {
        Err(format!("observed orders {:?}", rows.iter().map(|r| r.order).collect::<Vec<_>>()))
    }
}

fn check_harmonic_solve() -> std::result::Result<String, String> {
    let rows = order_study(harmonic_base_grid(), 4, |g| harmonic_solve_error(g, HARMONIC_A, HARMONIC_B))
        .map_err(fail)?;
    let p = min_order(&rows);
    if p >= 1.9 {
        Ok(format!("min observed order {p:.3}"))
    } else {
        Err(format!("observed orders {:?}", rows.iter().map(|r| r.order).collect::<Vec<_>>()))
    }
}

/// Robin-closed upwind systems for the three flows at a generic surface state.
pub fn audit_robin_systems(grid: &AxiGrid) -> Result<usize> {
    let params = MaterialParams::water_air();
    let drying = crate::physics::DryingState::new(&params, 60.0, 0.1)?;
    let law = InterfaceLaw::new(&params, &drying);
    let r0 = radius_from_volume(1.0);
    let ts: Vec<f64> = (0..grid.n_theta).map(|i| 30.0 + i as f64 * 0.1).collect();
    let rs: Vec<f64> = (0..grid.n_theta).map(|i| 0.03 + i as f64 * 1e-4).collect();
    let flows = [VelocityModel::Stagnant, VelocityModel::stokes(0.8), VelocityModel::acoustic_spl(166.0, 1.06)];
    let mut count = 0;
    for flow in flows {
        let adv = assemble_advection(grid, &flow, r0, -1e-6, AdvectionScheme::Upwind);
        for (kind, alpha, far) in [
            (FieldKind::Temperature, params.thermal_diffusivity(), 60.0),
            (FieldKind::VaporDensity, params.d_v_m2_s, drying.rho_inf),
        ] {
            for lin in [Linearization::Picard, Linearization::Newton, Linearization::Explicit] {
                let diff = assemble_diffusion(grid, alpha, r0);
                let meta = SystemMeta { diffusivity: alpha, radius: r0, radius_rate: -1e-6, dt: 1.0 };
                let mut sys = TransportSystem::assemble(grid, kind, &diff, &adv, meta, &vec![far; grid.n_cells()]);
                apply_robin_boundary(&mut sys, grid, law.closure(kind, lin, &ts, &rs));
                apply_dirichlet_far(&mut sys, grid, far);
                sys.audit().map_err(|v| Error::Invariant {
                    step: 0,
                    detail: format!("{} {kind:?} {lin:?}: {v:?}", flow.label()),
                })?;
                count += 1;
            }
        }
    }
    Ok(count)
}

fn check_mmatrix() -> std::result::Result<String, String> {
    let g = GridSpec::desk().build().map_err(fail)?;
    let n = audit_robin_systems(&g).map_err(fail)?;
    Ok(format!("{n} systems audited"))
}

/// Velocity field with a point source, used to exercise the divergence check.
pub struct SourceFlow;

impl FlowField for SourceFlow {
    fn velocity(&self, _theta: f64, r: f64, _radius: f64) -> Velocity {
        Velocity { theta: 0.0, r: 1.0 - 1.0 / r }
    }
}

/// Rejects fields that are not divergence-free or penetrate the droplet surface.
pub fn validate_flow<F: FlowField + ?Sized>(flow: &F, grid: &AxiGrid, radius: f64) -> Result<f64> {
    let div = check_divergence(flow, grid, radius);
    if !(div <= 1e-6) {
        return Err(Error::param("flow", format!("normalized divergence {div:e} exceeds 1e-6")));
    }
    for &t in &grid.theta_c {
        let v = flow.velocity(t, 1.0, radius).r;
        if v != 0.0 {
            return Err(Error::param("flow", format!("radial velocity {v:e} on the droplet surface")));
        }
    }
    Ok(div)
}

fn check_flows() -> std::result::Result<String, String> {
    let g = GridSpec::desk().build().map_err(fail)?;
    let r0 = radius_from_volume(1.0);
    let mut worst = 0.0_f64;
    for flow in [VelocityModel::stokes(0.4), VelocityModel::stokes(0.8), VelocityModel::acoustic_spl(166.0, 1.06)] {
        worst = worst.max(validate_flow(&flow, &g, r0).map_err(fail)?);
    }
    Ok(format!("max normalized divergence {worst:.2e}"))
}

fn check_flow_mutation() -> std::result::Result<String, String> {
    let g = GridSpec::desk().build().map_err(fail)?;
    match validate_flow(&SourceFlow, &g, 1.0) {
        Err(e) => Ok(format!("source flow rejected: {e}")),
        Ok(d) => Err(format!("source flow accepted with divergence {d:e}")),
    }
}

fn coarse_problem(flow: VelocityModel, beta: f64) -> Result<Problem> {
    let mut p = MaterialParams::water_air();
    p.beta = beta;
    let grid = GridSpec { n_theta: 16, n_r: 32, r_out: 50.0, stretch: 1.12 };
    Problem::new(&p, 60.0, 0.1, flow, &grid, radius_from_volume(1.0))
}

fn check_box() -> std::result::Result<String, String> {
    let prob = coarse_problem(VelocityModel::stokes(0.8), 1.0).map_err(fail)?;
    let cfg = SolverConfig { t_end_s: 60.0, ..SolverConfig::default() };
    let out = run(&prob, &cfg).map_err(fail)?;
    if out.max_box_excursion > INVARIANT_RTOL {
        return Err(format!("box excursion {:e}", out.max_box_excursion));
    }
    Ok(format!("{} steps, max relative excursion {:.2e}", out.records.len() - 1, out.max_box_excursion))
}

fn check_box_mutation() -> std::result::Result<String, String> {
    let prob = coarse_problem(VelocityModel::Stagnant, 1.0).map_err(fail)?;
    let cfg = SolverConfig { t_end_s: 5.0, fault: Some(Fault::FlipCoolingSign), ..SolverConfig::default() };
    match run(&prob, &cfg) {
        Err(Error::Invariant { step, detail }) => Ok(format!("flipped cooling sign caught at step {step}: {detail}")),
        Err(e) => Err(format!("flipped cooling sign failed differently: {e}")),
        Ok(_) => Err("flipped cooling sign went unnoticed".into()),
    }
}

/// Nondimensional problem used for the upper/lower iteration checks.
pub fn unit_problem(grid: GridSpec) -> Result<Problem> {
    Problem::new(&MaterialParams::unit(1.0, 0.0), 1.0, 0.1, VelocityModel::stokes(0.5), &grid, 1.0)
}

pub fn unit_picard_config() -> SolverConfig {
    SolverConfig {
        dt_s: 0.02,
        t_end_s: 0.4,
        nonlinear_mode: NonlinearMode::PicardUl,
        ..SolverConfig::default()
    }
}

fn check_picard_monotone() -> std::result::Result<String, String> {
    let prob = unit_problem(GridSpec { n_theta: 16, n_r: 32, r_out: 10.0, stretch: 1.08 }).map_err(fail)?;
    let cfg = unit_picard_config();
    let out = run(&prob, &cfg).map_err(fail)?;
    let mut min_iters = usize::MAX;
    let mut worst = f64::NEG_INFINITY;
    for r in &out.records[1..] {
        min_iters = min_iters.min(r.newton_iters);
        worst = worst.max(r.picard_max_increase.unwrap_or(f64::INFINITY));
    }
    if worst > 1e-10 || min_iters < 3 {
        return Err(format!("max increase {worst:e}, min iterations {min_iters}"));
    }
    Ok(format!("{} steps, min iterations {min_iters}, max increase {worst:.2e}", out.records.len() - 1))
}

fn check_newton_picard() -> std::result::Result<String, String> {
    let prob = unit_problem(GridSpec { n_theta: 16, n_r: 32, r_out: 10.0, stretch: 1.08 }).map_err(fail)?;
    let cfg = SolverConfig { newton_tol: 1e-12, ..unit_picard_config() };
    let s = FieldState::initial(&prob, InitialFields::FarField);
    let a = step_newton(&prob, &cfg, &s, 1.0, -0.2, cfg.dt_s).map_err(fail)?;
    let b = step_picard(&prob, &cfg, &s, 1.0, -0.2, cfg.dt_s).map_err(fail)?;
    let diff = max_rel_diff(&a.fields, &b.fields);
    if diff > 1e-6 {
        return Err(format!("fields differ by {diff:e}"));
    }
    Ok(format!("max relative difference {diff:.2e}"))
}

/// Largest relative difference between two field states (cells and surface).
pub fn max_rel_diff(a: &FieldState, b: &FieldState) -> f64 {
    let pairs = [
        (&a.temperature.values, &b.temperature.values),
        (&a.vapor.values, &b.vapor.values),
        (&a.t_surface, &b.t_surface),
        (&a.rho_surface, &b.rho_surface),
    ];
    pairs
        .iter()
        .flat_map(|(x, y)| x.iter().zip(y.iter()))
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs() / x.abs().max(y.abs()).max(1e-300)))
}

/// Evaporation coefficient small enough for a 10 s horizon to satisfy the
/// contraction precondition `t_star < R0 ρ_d / (2 J_inf)`.
pub const CONTRACTION_BETA: f64 = 1e-3;

fn check_contraction() -> std::result::Result<String, String> {
    let prob = coarse_problem(VelocityModel::Stagnant, CONTRACTION_BETA).map_err(fail)?;
    let cfg = SolverConfig::default();
    let rep = picard_to_fixed_point(&prob, &cfg, 10.0, 40, 1e-9).map_err(fail)?;
    let half = picard_to_fixed_point(&prob, &cfg, 5.0, 40, 1e-9).map_err(fail)?;
    let bound = (cfg.dt_s * prob.max_recession_rate()).max(1e-9);
    let q1 = rep.ratios.first().copied().unwrap_or(0.0);
    let q1h = half.ratios.first().copied().unwrap_or(0.0);
    if !rep.converged || !rep.all_contracting() || rep.sup_to_coupled > bound || q1h > q1 + 1e-3 {
        return Err(format!(
            "converged {}, q {:?}, sup distance {:e}, q1 {q1:e} vs halved {q1h:e}",
            rep.converged, rep.ratios, rep.sup_to_coupled
        ));
    }
    Ok(format!(
        "{} iterations, max q {:.3e}, sup distance {:.2e} m",
        rep.residuals.len(),
        rep.ratios.iter().fold(0.0_f64, |m, q| m.max(*q)),
        rep.sup_to_coupled
    ))
}

/// Stability quotients for the shifts δ, δ/2, δ/4 of a coupled radius path.
pub fn stability_sequence(problem: &Problem, cfg: &SolverConfig, n_steps: usize, shift: f64) -> Result<Vec<f64>> {
    let coupled = run(problem, &SolverConfig { t_end_s: n_steps as f64 * cfg.dt_s, ..cfg.clone() })?;
    let base = RadiusPath { dt: cfg.dt_s, values: coupled.records.iter().map(|r| r.radius_m).collect() };
    let mut out = Vec::new();
    for k in 0..3 {
        let d = shift / f64::from(1 << k);
        let delta = vec![d; base.values.len()];
        let s = stability_ratio(problem, cfg, &base, &delta)?;
        out.push(s.temperature + s.vapor / problem.drying.rho_star * (problem.drying.t_inf - problem.drying.t_star));
    }
    Ok(out)
}

fn check_stability() -> std::result::Result<String, String> {
    let prob = coarse_problem(VelocityModel::stokes(0.4), 1.0).map_err(fail)?;
    let cfg = SolverConfig::default();
    let seq = stability_sequence(&prob, &cfg, 10, 0.01 * prob.r0).map_err(fail)?;
    let (lo, hi) = seq.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), v| (a.min(*v), b.max(*v)));
    if !(lo > 0.0 && hi <= 2.0 * lo) {
        return Err(format!("ratios {seq:?}"));
    }
    Ok(format!("ratios {:?}", seq.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_residual_vanishes_for_constants() {
        let g = crate::geometry::build_grid(4, 8, 10.0, 1.0).unwrap();
        assert!(harmonic_residual(&g, 3.0, 0.0) < 1e-12);
    }

    #[test]
    fn extrapolation_is_second_order() {
        let rows = order_study(harmonic_base_grid(), 4, |g| Ok(extrapolation_error(g, 1.0, 2.0))).unwrap();
        assert!(min_order(&rows) >= 1.9, "{rows:?}");
    }

    #[test]
    fn every_check_has_a_unique_name() {
        let mut names = check_names();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), checks().len());
    }
}
