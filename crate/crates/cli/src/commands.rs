use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Instant;

use droplet_core::discretization::{
    apply_dirichlet_far, apply_robin_boundary, assemble_advection, assemble_diffusion, FieldKind, InterfaceLaw,
    Linearization, SystemMeta, TransportSystem,
};
use droplet_core::fixedpoint::picard_to_fixed_point;
use droplet_core::flowfields::{DEFAULT_C0, DEFAULT_OMEGA};
use droplet_core::geometry::GridSpec;
use droplet_core::oracle::D2Law;
use droplet_core::timeloop::{
    initial_state, least_squares, run_with, Problem, RunOutput, SolverConfig, StepRecord, INVARIANT_RTOL,
};
use droplet_core::verify::{
    check_names, harmonic_base_grid, harmonic_residual, harmonic_solve_error, order_study, run_suite, OrderRow,
    HARMONIC_A, HARMONIC_B,
};
use droplet_core::Error;
use serde_json::json;

use crate::config::{locate, ConfigError, Flow, RunConfig, SweepMember};
use crate::output::{self, fields_csv, opt, radius_csv, SWEEP_HEADER};
use crate::RunArgs;

#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Solver(String),
    Invariant(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Solver(_) => 2,
            Failure::Invariant(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Invariant { .. } => Failure::Invariant(msg),
            Error::InvalidParameter { .. } | Error::Domain(_) | Error::Config(_) | Error::Io(_) => {
                Failure::Validation(msg)
            }
            Error::NonConvergence { .. } | Error::Singular(_) | Error::Bracket(_) | Error::InadmissiblePath(_) => {
                Failure::Solver(msg)
            }
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Validation(format!("output: {e}"))
    }
}

struct Loaded {
    cfg: RunConfig,
    text: String,
    path: PathBuf,
    dir: PathBuf,
}

impl Loaded {
    fn error_at(&self, key: &str, message: String) -> Failure {
        let (line, column) = locate(&self.text, key);
        ConfigError { path: self.path.clone(), line, column, message }.into()
    }
}

fn load(path: &Path, out: Option<&Path>) -> Result<Loaded, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text, path)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
    cfg.output_dir = dir.clone();
    Ok(Loaded { cfg, text, path: path.to_owned(), dir })
}

struct Completed {
    problem: Problem,
    output: RunOutput,
    radius_csv: String,
    snapshots: Vec<(usize, String)>,
}

fn execute(cfg: &RunConfig, every: Option<usize>) -> Result<Completed, Error> {
    let problem = cfg.problem()?;
    let every = every.filter(|&n| n > 0);
    let mut snapshots = Vec::new();
    let mut last = None;
    let output = run_with(&problem, &cfg.solver, |s| {
        if let Some(n) = every {
            if s.step % n == 0 {
                snapshots.push((s.step, fields_csv(&problem.grid, &s.fields)));
            }
            last = Some(s.step);
        }
    })?;
    if every.is_some() && snapshots.last().map(|s| s.0) != last {
        let s = &output.final_state;
        snapshots.push((s.step, fields_csv(&problem.grid, &s.fields)));
    }
    let radius_csv = radius_csv(&output.records);
    Ok(Completed { problem, output, radius_csv, snapshots })
}

/// Runs once, or twice with a bitwise comparison when `seedless` is set.
fn execute_checked(cfg: &RunConfig, every: Option<usize>, seedless: bool) -> Result<Completed, Failure> {
    let first = execute(cfg, every)?;
    if seedless {
        let replay = execute(cfg, every)?;
        if replay.radius_csv != first.radius_csv || replay.snapshots != first.snapshots {
            return Err(Failure::Invariant("replayed run differs from the first run".into()));
        }
    }
    Ok(first)
}

fn audit(cfg: &RunConfig, c: &Completed, seedless: bool) -> serde_json::Value {
    let p = &c.problem;
    let d = &p.drying;
    let out = &c.output;
    let mut a = json!({
        "R0_m": p.r0,
        "steps": out.records.len() - 1,
        "final_t_s": out.final_state.t,
        "final_R_m": out.final_state.radius,
        "extinct": out.extinct,
        "lifetime_s": out.lifetime_s,
        "T_star_C": d.t_star,
        "rho_inf_kg_m3": d.rho_inf,
        "rho_star_kg_m3": d.rho_star,
        "J_inf_kg_m2_s": d.j_inf,
        "max_box_excursion": out.max_box_excursion,
        "invariant_rtol": INVARIANT_RTOL,
        "box_invariant": "pass",
        "rate_bound": "pass",
        "monotone_radius": "pass",
        "mmatrix_audit": if cfg.solver.audit_mmatrix { "pass" } else { "off" },
        "max_nonlinear_iters": out.max_iterations,
        "seedless": seedless,
    });
    if let Some((amp, spl)) = cfg.flow.acoustic_levels(&cfg.material()) {
        let given = match cfg.flow {
            Flow::Acoustic { spl_db: Some(_), .. } => "SPL_dB",
            _ => "amplitude_Pa",
        };
        let omega_default = matches!(cfg.flow, Flow::Acoustic { omega_rad_s, .. } if omega_rad_s == DEFAULT_OMEGA);
        a["acoustic"] = json!({ "given": given, "amplitude_Pa": amp, "SPL_dB": spl, "omega_is_default_58kHz": omega_default });
    }
    a
}

fn write_run(dir: &Path, cfg: &RunConfig, c: &Completed, seedless: bool, extra: Option<(&str, serde_json::Value)>) -> Result<(), Failure> {
    output::write(dir, "radius.csv", &c.radius_csv)?;
    for (step, csv) in &c.snapshots {
        output::write(dir, &format!("fields_{step}.csv"), csv)?;
    }
    let mut a = audit(cfg, c, seedless);
    if let Some((k, v)) = extra {
        a[k] = v;
    }
    let meta = RunConfig { output_dir: dir.to_owned(), audit: Some(a), ..cfg.resolved() };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Failure::Validation(e.to_string()))?;
    output::write(dir, "run_meta.json", &(text + "\n"))?;
    Ok(())
}

fn summary(c: &Completed) {
    let out = &c.output;
    let s = &out.final_state;
    println!(
        "steps {}, t {} s, R {:.6e} m, R²/R0² {:.6}, lifetime {}, max iterations {}",
        out.records.len() - 1,
        s.t,
        s.radius,
        s.record.r2_norm,
        out.lifetime_s.map(|l| format!("{l:.2} s")).unwrap_or_else(|| "not reached".into()),
        out.max_iterations
    );
}

pub fn simulate(run: &RunArgs, dump_matrices: bool) -> Result<(), Failure> {
    let l = load(&run.config, run.out.as_deref())?;
    let c = execute_checked(&l.cfg, run.snapshots, run.seedless)?;
    write_run(&l.dir, &l.cfg, &c, run.seedless, None)?;
    let mut grid = Vec::new();
    c.problem.grid.write_csv(&mut grid)?;
    output::write(&l.dir, "grid.csv", &String::from_utf8_lossy(&grid))?;
    if dump_matrices {
        for sys in first_step_systems(&c.problem, &l.cfg) {
            let name = match sys.kind {
                FieldKind::Temperature => "matrix_temperature.txt",
                FieldKind::VaporDensity => "matrix_vapor.txt",
            };
            let mut buf = Vec::new();
            sys.matrix.write_triplets(&mut buf)?;
            output::write(&l.dir, name, &String::from_utf8_lossy(&buf))?;
        }
    }
    summary(&c);
    println!("wrote {}", l.dir.display());
    Ok(())
}

/// The two systems of the first step, Newton-closed at the initial surface state.
fn first_step_systems(problem: &Problem, cfg: &RunConfig) -> Vec<TransportSystem> {
    let state = initial_state(problem, &cfg.solver);
    let g = &problem.grid;
    let law = InterfaceLaw::new(&problem.params, &problem.drying);
    let adv = assemble_advection(g, &problem.flow, problem.r0, 0.0, cfg.solver.scheme);
    let f = &state.fields;
    [
        (FieldKind::Temperature, problem.params.thermal_diffusivity(), problem.drying.t_inf, &f.temperature.values),
        (FieldKind::VaporDensity, problem.params.d_v_m2_s, problem.drying.rho_inf, &f.vapor.values),
    ]
    .into_iter()
    .map(|(kind, alpha, far, old)| {
        let diff = assemble_diffusion(g, alpha, problem.r0);
        let meta = SystemMeta { diffusivity: alpha, radius: problem.r0, radius_rate: 0.0, dt: cfg.solver.dt_s };
        let mut sys = TransportSystem::assemble(g, kind, &diff, &adv, meta, old);
        apply_robin_boundary(&mut sys, g, law.closure(kind, Linearization::Newton, &f.t_surface, &f.rho_surface));
        apply_dirichlet_far(&mut sys, g, far);
        sys
    })
    .collect()
}

/// Least-squares dR²/dt over the samples with `t <= frac · lifetime`.
fn early_slope(records: &[StepRecord], lifetime: f64, frac: f64) -> f64 {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.radius_m > 0.0 && r.t_s <= frac * lifetime)
        .map(|r| (r.t_s, r.radius_m * r.radius_m))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    least_squares(&pts).0
}

struct D2Comparison {
    oracle: D2Law,
    slope: f64,
    lifetime: f64,
    rel_error: f64,
    passed: bool,
}

fn compare_d2(c: &Completed, tol: f64, t_end: f64) -> Result<D2Comparison, Error> {
    let p = &c.problem;
    let oracle = D2Law::new(&p.params, &p.drying, p.r0)?;
    let records = &c.output.records;
    let lifetime = match c.output.lifetime_s {
        Some(l) => l,
        None => {
            let s = early_slope(records, f64::INFINITY, 1.0);
            if s < 0.0 { p.r0 * p.r0 / -s } else { f64::INFINITY }
        }
    };
    let slope = early_slope(records, lifetime, 0.8);
    let rel_error = if oracle.slope != 0.0 {
        ((slope - oracle.slope) / oracle.slope).abs()
    } else {
        slope.abs() * t_end / (p.r0 * p.r0)
    };
    let faster = lifetime <= oracle.lifetime() * (1.0 + 1e-12) || oracle.lifetime().is_infinite();
    Ok(D2Comparison { oracle, slope, lifetime, rel_error, passed: rel_error <= tol && faster })
}

pub fn validate_d2law(run: &RunArgs) -> Result<(), Failure> {
    let l = load(&run.config, run.out.as_deref())?;
    if l.cfg.flow != Flow::Stagnant {
        return Err(l.error_at("flow", format!("validate-d2law needs a stagnant flow, got `{}`", l.cfg.flow.label())));
    }
    let c = execute_checked(&l.cfg, run.snapshots, run.seedless)?;
    let d = compare_d2(&c, l.cfg.d2_tolerance, l.cfg.solver.t_end_s)?;
    let report = json!({
        "oracle_T_d_C": d.oracle.t_d,
        "oracle_slope_m2_s": d.oracle.slope,
        "oracle_lifetime_s": d.oracle.lifetime(),
        "simulated_slope_m2_s": d.slope,
        "simulated_lifetime_s": d.lifetime,
        "relative_slope_error": d.rel_error,
        "tolerance": l.cfg.d2_tolerance,
        "passed": d.passed,
    });
    write_run(&l.dir, &l.cfg, &c, run.seedless, Some(("d2law", report)))?;
    summary(&c);
    println!("oracle:    T_d {:.4} °C, dR²/dt {:.6e} m²/s, lifetime {:.2} s", d.oracle.t_d, d.oracle.slope, d.oracle.lifetime());
    println!("simulated: dR²/dt {:.6e} m²/s, lifetime {:.2} s", d.slope, d.lifetime);
    println!("relative slope error {:.4} (tolerance {})", d.rel_error, l.cfg.d2_tolerance);
    println!("d2law: {}", if d.passed { "PASS" } else { "FAIL" });
    if d.passed {
        Ok(())
    } else {
        Err(Failure::Invariant(format!(
            "d²-law comparison failed: slope error {:.4}, lifetime {:.2} s vs oracle {:.2} s",
            d.rel_error,
            d.lifetime,
            d.oracle.lifetime()
        )))
    }
}

pub fn verify(only: Option<&str>, list: bool) -> Result<(), Failure> {
    if list {
        check_names().iter().for_each(|n| println!("{n}"));
        return Ok(());
    }
    let start = Instant::now();
    let results = run_suite(only);
    if results.is_empty() {
        return Err(Failure::Validation(format!("no check matches `{}`", only.unwrap_or_default())));
    }
    for r in &results {
        println!(
            "{:<28} {}  {:>7.3} s  {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.elapsed.as_secs_f64(),
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} of {} checks passed in {:.2} s", results.len() - failed, results.len(), start.elapsed().as_secs_f64());
    match results.iter().find(|r| !r.passed) {
        Some(r) => Err(Failure::Invariant(format!("check `{}` failed: {}", r.name, r.detail))),
        None => Ok(()),
    }
}

fn default_members() -> Vec<SweepMember> {
    let acoustic = Flow::Acoustic {
        spl_db: Some(166.0),
        amplitude_pa: None,
        omega_rad_s: DEFAULT_OMEGA,
        c0_m_s: DEFAULT_C0,
    };
    [
        ("stagnant", Flow::Stagnant),
        ("stokes_40", Flow::Stokes { v_inf_m_per_s: 0.4 }),
        ("stokes_80", Flow::Stokes { v_inf_m_per_s: 0.8 }),
        ("acoustic_166", acoustic),
    ]
    .into_iter()
    .map(|(label, flow)| SweepMember { label: label.into(), flow })
    .collect()
}

pub fn sweep(run: &RunArgs) -> Result<(), Failure> {
    let l = load(&run.config, run.out.as_deref())?;
    let mut members = if l.cfg.sweep.is_empty() { default_members() } else { l.cfg.sweep.clone() };
    if !members.iter().any(|m| m.flow == Flow::Stagnant) {
        members.insert(0, SweepMember { label: "stagnant".into(), flow: Flow::Stagnant });
    }
    for (k, m) in members.iter().enumerate() {
        let safe = !m.label.is_empty() && m.label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !safe || members[..k].iter().any(|o| o.label == m.label) {
            return Err(l.error_at("sweep", format!("member label `{}` must be unique and [A-Za-z0-9_-]", m.label)));
        }
    }

    let results: Vec<Result<Option<f64>, Failure>> = thread::scope(|s| {
        let jobs: Vec<_> = members
            .iter()
            .map(|m| {
                let cfg = l.cfg.with_flow(m.flow.clone());
                let dir = l.dir.join(&m.label);
                s.spawn(move || -> Result<Option<f64>, Failure> {
                    let cfg = RunConfig { output_dir: dir.clone(), ..cfg };
                    let c = execute_checked(&cfg, run.snapshots, run.seedless)?;
                    write_run(&dir, &cfg, &c, run.seedless, None)?;
                    Ok(c.output.lifetime_s)
                })
            })
            .collect();
        jobs.into_iter()
            .map(|j| j.join().unwrap_or_else(|_| Err(Failure::Solver("sweep member panicked".into()))))
            .collect()
    });

    let base = members
        .iter()
        .zip(&results)
        .find(|(m, _)| m.flow == Flow::Stagnant)
        .and_then(|(_, r)| r.as_ref().ok().copied().flatten());
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    let mut failures = 0;
    println!("{:<16} {:<9} {:<22} {:>12} {:>8}", "label", "flow", "param", "lifetime_s", "ratio");
    for (m, r) in members.iter().zip(&results) {
        let (life, ratio) = match r {
            Ok(life) => (*life, life.zip(base).map(|(a, b)| a / b)),
            Err(e) => {
                failures += 1;
                eprintln!("member {} failed: {e}", m.label);
                (None, None)
            }
        };
        let status = if r.is_err() { "failed" } else { "" };
        csv.push_str(&format!("{},{},{},{},{}\n", m.label, m.flow.label(), m.flow.param(), opt(life), opt(ratio)));
        println!(
            "{:<16} {:<9} {:<22} {:>12} {:>8} {status}",
            m.label,
            m.flow.label(),
            m.flow.param(),
            life.map(|v| format!("{v:.2}")).unwrap_or_default(),
            ratio.map(|v| format!("{v:.3}")).unwrap_or_default()
        );
    }
    output::write(&l.dir, "sweep.csv", &csv)?;
    for line in orderings(&members, &results, base) {
        println!("{line}");
    }
    if failures > 0 {
        return Err(Failure::Solver(format!("{failures} of {} sweep members failed", members.len())));
    }
    Ok(())
}

/// The qualitative comparisons that apply to the members present.
fn orderings(members: &[SweepMember], results: &[Result<Option<f64>, Failure>], base: Option<f64>) -> Vec<String> {
    let life = |k: usize| results[k].as_ref().ok().copied().flatten();
    let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let mut stokes: Vec<(f64, Option<f64>)> = members
        .iter()
        .enumerate()
        .filter_map(|(k, m)| match m.flow {
            Flow::Stokes { v_inf_m_per_s } => Some((v_inf_m_per_s, life(k))),
            _ => None,
        })
        .collect();
    stokes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut lines = Vec::new();
    if !stokes.is_empty() {
        let mut chain = vec![base];
        chain.extend(stokes.iter().map(|s| s.1));
        let ok = chain.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b < a));
        lines.push(format!("qualitative: lifetime decreases with V_inf: {}", mark(ok)));
    }
    let fast = stokes.iter().find(|s| s.0 == 0.8).and_then(|s| s.1);
    if let (Some(f), Some(b)) = (fast, base) {
        let r = f / b;
        lines.push(format!("qualitative: Stokes 0.8 m/s ratio {r:.3} in [0.4, 0.7]: {}", mark((0.4..=0.7).contains(&r))));
    }
    for (k, m) in members.iter().enumerate() {
        if let (Flow::Acoustic { .. }, Some(a), Some(f)) = (&m.flow, life(k), fast) {
            let dev = (a - f).abs() / f;
            lines.push(format!(
                "qualitative: {} within 25% of Stokes 0.8 m/s ({:.1}%): {}",
                m.label,
                100.0 * dev,
                mark(dev <= 0.25)
            ));
        }
    }
    lines
}

fn order_rows_csv(csv: &mut String, study: &str, rows: &[OrderRow], dt: &[f64]) {
    for (k, r) in rows.iter().enumerate() {
        csv.push_str(&format!(
            "{study},{k},{},{},{},{},{},{}\n",
            r.n_theta,
            r.n_r,
            r.h,
            dt.get(k).map(|d| d.to_string()).unwrap_or_default(),
            r.error,
            opt(r.order)
        ));
        println!(
            "{study:<18} {k:>2} {:>5}x{:<5} h {:.4e} error {:.4e} order {}",
            r.n_theta,
            r.n_r,
            r.h,
            r.error,
            r.order.map(|p| format!("{p:.3}")).unwrap_or_else(|| "-".into())
        );
    }
}

pub fn convergence(
    config: Option<&Path>,
    out: Option<&Path>,
    levels: usize,
    d2_levels: usize,
    t_star: Option<f64>,
) -> Result<(), Failure> {
    if levels < 2 {
        return Err(Failure::Validation("--levels must be at least 2".into()));
    }
    let loaded = config.map(|p| load(p, out)).transpose()?;
    let dir = loaded
        .as_ref()
        .map(|l| l.dir.clone())
        .or_else(|| out.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("out"));

    let mut csv = String::from("study,level,n_theta,n_r,h,dt_s,error,order\n");
    let base = harmonic_base_grid();
    let res = order_study(base, levels, |g| Ok(harmonic_residual(g, HARMONIC_A, HARMONIC_B)))?;
    let sol = order_study(base, levels, |g| harmonic_solve_error(g, HARMONIC_A, HARMONIC_B))?;
    order_rows_csv(&mut csv, "harmonic_residual", &res, &[]);
    order_rows_csv(&mut csv, "harmonic_solve", &sol, &[]);
    let min_order = res.iter().chain(&sol).filter_map(|r| r.order).fold(f64::INFINITY, f64::min);
    let mut failed = Vec::new();
    println!("harmonic order: {} (min {min_order:.3}, required 1.9)", if min_order >= 1.9 { "PASS" } else { "FAIL" });
    if min_order < 1.9 {
        failed.push(format!("harmonic order {min_order:.3} below 1.9"));
    }

    if let Some(l) = &loaded {
        if d2_levels > 0 {
            let mut rows = Vec::new();
            let mut dts = Vec::new();
            let mut spec: GridSpec = l.cfg.grid;
            let mut solver = l.cfg.solver.clone();
            for _ in 0..d2_levels {
                let cfg = RunConfig { grid: spec, solver: solver.clone(), ..l.cfg.with_flow(Flow::Stagnant) };
                let c = execute(&cfg, None)?;
                let d = compare_d2(&c, cfg.d2_tolerance, cfg.solver.t_end_s)?;
                let g = &c.problem.grid;
                let h = g.r_faces[1] - g.r_faces[0];
                let order = rows.last().map(|p: &OrderRow| (p.error / d.rel_error).ln() / (p.h / h).ln());
                rows.push(OrderRow { n_theta: spec.n_theta, n_r: spec.n_r, h, error: d.rel_error, order });
                dts.push(solver.dt_s);
                spec = spec.refined();
                solver.dt_s *= 0.5;
            }
            order_rows_csv(&mut csv, "d2_slope", &rows, &dts);
            let monotone = rows.windows(2).all(|w| w[1].error <= w[0].error);
            println!("d2 slope error non-increasing under refinement: {}", if monotone { "PASS" } else { "FAIL" });
            if !monotone {
                failed.push("d² slope error grew under refinement".into());
            }
        }

        let problem = l.cfg.problem()?;
        let horizon = problem.r0 * problem.params.rho_d_kg_m3 / (2.0 * problem.drying.j_inf);
        let t_star = t_star.unwrap_or((0.5 * horizon).min(10.0));
        let solver = SolverConfig { dt_s: l.cfg.solver.dt_s.min(t_star / 10.0), ..l.cfg.solver.clone() };
        let rep = picard_to_fixed_point(&problem, &solver, t_star, 40, 1e-9)?;
        output::write(&dir, "contraction.csv", &rep.to_csv())?;
        let bound = (solver.dt_s * problem.max_recession_rate()).max(1e-9);
        let ok = rep.converged && rep.all_contracting() && rep.sup_to_coupled <= bound;
        let q = rep.ratios.iter().fold(0.0_f64, |m, q| m.max(*q));
        println!(
            "contraction: {} (t* {:.3e} s of bound {:.3e} s, dt {:.1e} s, {} iterations, max q {:.3e}, sup |ΔR| to coupled run {:.2e} m)",
            if ok { "PASS" } else { "FAIL" },
            rep.t_star,
            rep.horizon_bound,
            solver.dt_s,
            rep.residuals.len(),
            q,
            rep.sup_to_coupled
        );
        if !ok {
            failed.push(format!("contraction: converged {}, max q {q:.3e}", rep.converged));
        }
    }

    output::write(&dir, "convergence.csv", &csv)?;
    println!("wrote {}", dir.display());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(failed.join("; ")))
    }
}
