//! Finite-volume assembly of the rescaled transport equations
//!
//! ```text
//! ∂t u = (α/R²) Δ* u − (1/R) ∇* u · (v − Ṙ x*)
//! ```
//!
//! on the shell, with the Hertz–Knudsen flux condition on Γ* and far-field
//! Dirichlet data on Γ∞. Rows are in integrated (flux) form: each cell row is
//! the balance over the control volume, so the per-volume operator is the
//! row divided by the cell volume.
//!
//! Per-field unknown layout: the `n_theta` surface values `u_s` on Γ* come
//! first, followed by the cells θ-fastest. The surface values make the
//! boundary coupling a two-point flux, which keeps every upwind system an
//! M-matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfields::FlowField;
use crate::geometry::AxiGrid;
use crate::physics::{DryingState, MaterialParams};
use crate::sparse::{mmatrix_audit, CsrMatrix, MMatrixViolation, TripletBuilder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Temperature,
    VaporDensity,
}

/// Cell-centered scalar field, θ-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub kind: FieldKind,
    pub values: Vec<f64>,
}

impl Field {
    pub fn constant(kind: FieldKind, grid: &AxiGrid, value: f64) -> Self {
        Self { kind, values: vec![value; grid.n_cells()] }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvectionScheme {
    #[default]
    Upwind,
    Central,
}

impl std::str::FromStr for AdvectionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upwind" => Ok(AdvectionScheme::Upwind),
            "central" => Ok(AdvectionScheme::Central),
            other => Err(Error::param("scheme", format!("unknown advection scheme `{other}`"))),
        }
    }
}

/// A cell-only operator together with its couplings to the boundary values.
///
/// Cell row `c` of the full operator reads
/// `(interior·u)_c + surface[i]·(u_s,i − u_c) + outer[i]·(u_far − u_c)`
/// where the surface/outer terms only touch the first/last radial layer.
#[derive(Clone, Debug)]
pub struct OperatorParts {
    pub interior: CsrMatrix,
    pub surface: Vec<f64>,
    pub outer: Vec<f64>,
}

impl OperatorParts {
    /// Integrated action on a cell field with given boundary values.
    pub fn apply(&self, grid: &AxiGrid, u: &[f64], u_surface: &[f64], u_far: f64) -> Vec<f64> {
        let mut out = self.interior.mul_vec(u);
        let last = grid.n_r - 1;
        for i in 0..grid.n_theta {
            let c0 = grid.cell(i, 0);
            out[c0] += self.surface[i] * (u_surface[i] - u[c0]);
            let cl = grid.cell(i, last);
            out[cl] += self.outer[i] * (u_far - u[cl]);
        }
        out
    }
}

fn add_pair(t: &mut TripletBuilder, c: usize, nb: usize, g: f64) {
    // g (u_nb − u_c) in row c
    t.add(c, nb, g);
    t.add(c, c, -g);
}

/// Two-point flux discretization of `(α/R²) Δ*` in integrated form.
///
/// Face flux is `(α/R²) A_f (u_nb − u_c) / d` with `d` the center distance;
/// the boundary conductances use the half-cell distance to the face.
pub fn assemble_diffusion(grid: &AxiGrid, diffusivity: f64, radius: f64) -> OperatorParts {
    let n = grid.n_cells();
    let coef = diffusivity / (radius * radius);
    let mut t = TripletBuilder::with_capacity(n, 9 * n);
    for j in 0..grid.n_r {
        for i in 0..grid.n_theta {
            let c = grid.cell(i, j);
            t.add(c, c, 0.0);
            if i + 1 < grid.n_theta {
                let d = grid.r_c[j] * (grid.theta_c[i + 1] - grid.theta_c[i]);
                let g = coef * grid.polar_face_area(i + 1, j) / d;
                add_pair(&mut t, c, c + 1, g);
                add_pair(&mut t, c + 1, c, g);
            }
            if j + 1 < grid.n_r {
                let d = grid.r_c[j + 1] - grid.r_c[j];
                let g = coef * grid.radial_face_area(i, j + 1) / d;
                let nb = c + grid.n_theta;
                add_pair(&mut t, c, nb, g);
                add_pair(&mut t, nb, c, g);
            }
        }
    }
    let h_in = grid.r_c[0] - grid.r_faces[0];
    let h_out = grid.r_faces[grid.n_r] - grid.r_c[grid.n_r - 1];
    let surface = (0..grid.n_theta)
        .map(|i| coef * grid.radial_face_area(i, 0) / h_in)
        .collect();
    let outer = (0..grid.n_theta)
        .map(|i| coef * grid.radial_face_area(i, grid.n_r) / h_out)
        .collect();
    OperatorParts { interior: t.build(), surface, outer }
}

/// Outward advective face fluxes `F = (w·n) A` with `w = (v − Ṙ r r̂) / R`.
#[derive(Clone, Debug)]
pub struct FaceFluxes {
    /// Constant-θ faces, index `tf + (n_theta+1) j`, positive towards +θ.
    pub polar: Vec<f64>,
    /// Constant-r faces, index `i + n_theta jf`, positive towards +r.
    pub radial: Vec<f64>,
}

pub fn face_fluxes<F: FlowField + ?Sized>(
    grid: &AxiGrid,
    flow: &F,
    radius: f64,
    radius_rate: f64,
) -> FaceFluxes {
    let nt = grid.n_theta;
    let mut polar = vec![0.0; (nt + 1) * grid.n_r];
    let stagnant = flow.is_stagnant();
    if !stagnant {
        for j in 0..grid.n_r {
            for tf in 1..nt {
                let v = flow.velocity(grid.theta_faces[tf], grid.r_c[j], radius);
                polar[tf + (nt + 1) * j] = v.theta / radius * grid.polar_face_area(tf, j);
            }
        }
    }
    let mut radial = vec![0.0; nt * (grid.n_r + 1)];
    for (jf, &rf) in grid.r_faces.iter().enumerate() {
        for i in 0..nt {
            let vr = if stagnant { 0.0 } else { flow.velocity(grid.theta_c[i], rf, radius).r };
            let w = (vr - radius_rate * rf) / radius;
            radial[i + nt * jf] = w * grid.radial_face_area(i, jf);
        }
    }
    FaceFluxes { polar, radial }
}

/// Non-conservative advection `−V w·∇u` in integrated form:
/// row `c` gets `−Σ_f F_f (u_f − u_c)`.
pub fn assemble_advection<F: FlowField + ?Sized>(
    grid: &AxiGrid,
    flow: &F,
    radius: f64,
    radius_rate: f64,
    scheme: AdvectionScheme,
) -> OperatorParts {
    let fluxes = face_fluxes(grid, flow, radius, radius_rate);
    advection_from_fluxes(grid, &fluxes, scheme)
}

/// Coefficient `g` in `g (u_nb − u_c)` for a face with outward flux `f`.
#[inline]
fn advective_coupling(f: f64, scheme: AdvectionScheme) -> f64 {
    match scheme {
        AdvectionScheme::Upwind => (-f).max(0.0),
        AdvectionScheme::Central => -0.5 * f,
    }
}

pub fn advection_from_fluxes(
    grid: &AxiGrid,
    fluxes: &FaceFluxes,
    scheme: AdvectionScheme,
) -> OperatorParts {
    let nt = grid.n_theta;
    let n = grid.n_cells();
    let mut t = TripletBuilder::with_capacity(n, 9 * n);
    for j in 0..grid.n_r {
        for i in 0..nt {
            let c = grid.cell(i, j);
            t.add(c, c, 0.0);
            if i + 1 < nt {
                let f = fluxes.polar[i + 1 + (nt + 1) * j];
                add_pair(&mut t, c, c + 1, advective_coupling(f, scheme));
                add_pair(&mut t, c + 1, c, advective_coupling(-f, scheme));
            }
            if j + 1 < grid.n_r {
                let f = fluxes.radial[i + nt * (j + 1)];
                let nb = c + nt;
                add_pair(&mut t, c, nb, advective_coupling(f, scheme));
                add_pair(&mut t, nb, c, advective_coupling(-f, scheme));
            }
        }
    }
    // Outward normal is −r̂ on Γ* and +r̂ on Γ∞.
    let surface = (0..nt).map(|i| advective_coupling(-fluxes.radial[i], scheme)).collect();
    let outer = (0..nt)
        .map(|i| advective_coupling(fluxes.radial[i + nt * grid.n_r], scheme))
        .collect();
    OperatorParts { interior: t.build(), surface, outer }
}

/// How the surface rows of a [`TransportSystem`] are closed.
#[derive(Clone, Debug, PartialEq)]
pub enum SurfaceClosure {
    /// `u_s,i = value_i` (identity rows).
    Prescribed(Vec<f64>),
    /// `(κ_i + a_i coeff_i) u_s,i − κ_i u_c,i = a_i rhs_i`, `a_i = A_i / R`.
    Robin { coeff: Vec<f64>, rhs: Vec<f64> },
}

/// Linearization of the Hertz–Knudsen flux around a surface state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Linearization {
    /// Flux frozen at the linearization point.
    Explicit,
    /// Lipschitz-shifted linearization of the monotone iteration (coefficients
    /// `L` for temperature and `c_hk` for vapor).
    Picard,
    /// Tangent linearization in the field's own variable; the other field is frozen.
    Newton,
}

/// Interface coupling: `κ (u_s − u_c) + a φ J = 0` with `φ_T = Λ/(ρ_g c_p)`
/// (evaporative cooling) and `φ_ρ = −1` (vapor source).
#[derive(Clone, Copy, Debug)]
pub struct InterfaceLaw<'a> {
    pub drying: &'a DryingState,
    pub latent_cooling: f64,
}

impl<'a> InterfaceLaw<'a> {
    pub fn new(params: &MaterialParams, drying: &'a DryingState) -> Self {
        Self { drying, latent_cooling: params.latent_cooling() }
    }

    /// Robin closure for `kind` linearized at the surface state `(t_s, rho_s)`.
    pub fn closure(
        &self,
        kind: FieldKind,
        lin: Linearization,
        t_s: &[f64],
        rho_s: &[f64],
    ) -> SurfaceClosure {
        let d = self.drying;
        let c = d.c_hk;
        let n = t_s.len();
        let mut coeff = Vec::with_capacity(n);
        let mut rhs = Vec::with_capacity(n);
        for (&t, &rho) in t_s.iter().zip(rho_s) {
            let j = d.evap_rate(t, rho);
            match kind {
                FieldKind::Temperature => {
                    let phi = self.latent_cooling;
                    let slope = match lin {
                        Linearization::Explicit => 0.0,
                        Linearization::Picard => c * d.lipschitz,
                        Linearization::Newton => d.evap_rate_dt(t),
                    };
                    coeff.push(phi * slope);
                    rhs.push(phi * (slope * t - j));
                }
                FieldKind::VaporDensity => {
                    let slope = match lin {
                        Linearization::Explicit => 0.0,
                        Linearization::Picard | Linearization::Newton => c,
                    };
                    coeff.push(slope);
                    rhs.push(j + slope * rho);
                }
            }
        }
        SurfaceClosure::Robin { coeff, rhs }
    }
}

/// Implicit-Euler system for one field: `(V/Δt) u − (diffusion + advection) u = (V/Δt) u_old`
/// plus boundary rows.
#[derive(Clone, Debug)]
pub struct TransportSystem {
    pub kind: FieldKind,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub diffusivity: f64,
    pub radius: f64,
    pub radius_rate: f64,
    pub dt: f64,
    /// Diffusive conductance between each surface value and its cell.
    pub surface_conductance: Vec<f64>,
    /// Far-field conductance (diffusive plus advective inflow) per outer face.
    pub outer_conductance: Vec<f64>,
    pub surface_closure: Option<SurfaceClosure>,
    pub far_value: Option<f64>,
    n_theta: usize,
    surface_weights: Vec<f64>,
}

impl TransportSystem {
    /// Assembles cell rows; surface rows start as `u_s = 0` and Γ∞ is closed
    /// until [`apply_robin_boundary`]/[`apply_dirichlet_far`] are applied.
    pub fn assemble(
        grid: &AxiGrid,
        kind: FieldKind,
        diffusion: &OperatorParts,
        advection: &OperatorParts,
        meta: SystemMeta,
        u_old: &[f64],
    ) -> Self {
        let nt = grid.n_theta;
        let n = nt + grid.n_cells();
        let mut t = TripletBuilder::with_capacity(n, 6 * n);
        let mut rhs = vec![0.0; n];
        for i in 0..nt {
            t.add(i, i, 1.0);
        }
        let inv_dt = if meta.dt.is_finite() { 1.0 / meta.dt } else { 0.0 };
        for c in 0..grid.n_cells() {
            let row = nt + c;
            t.add(row, row, grid.vol[c] * inv_dt);
            rhs[row] = grid.vol[c] * inv_dt * u_old[c];
        }
        for op in [diffusion, advection] {
            for c in 0..grid.n_cells() {
                for (col, v) in op.interior.row(c) {
                    t.add(nt + c, nt + col, -v);
                }
            }
        }
        for i in 0..nt {
            let row = nt + grid.cell(i, 0);
            let g = diffusion.surface[i] + advection.surface[i];
            t.add(row, row, g);
            t.add(row, i, -g);
        }
        let outer_conductance = (0..nt).map(|i| diffusion.outer[i] + advection.outer[i]).collect();
        Self {
            kind,
            matrix: t.build(),
            rhs,
            diffusivity: meta.diffusivity,
            radius: meta.radius,
            radius_rate: meta.radius_rate,
            dt: meta.dt,
            surface_conductance: diffusion.surface.clone(),
            outer_conductance,
            surface_closure: None,
            far_value: None,
            n_theta: nt,
            surface_weights: grid.surface_weights().to_vec(),
        }
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    /// Splits a solution vector into (surface values, cell values).
    pub fn split<'v>(&self, x: &'v [f64]) -> (&'v [f64], &'v [f64]) {
        x.split_at(self.n_theta)
    }

    /// Row-wise M-matrix audit.
    pub fn audit(&self) -> std::result::Result<(), MMatrixViolation> {
        mmatrix_audit(&self.matrix, 1e-12)
    }

    /// Flux delivered into each first-layer cell through Γ* for the given
    /// solution: `κ_i (u_s,i − u_c,i)`.
    pub fn surface_flux_into_cells(&self, grid: &AxiGrid, x: &[f64]) -> Vec<f64> {
        let (us, uc) = self.split(x);
        (0..self.n_theta)
            .map(|i| self.surface_conductance[i] * (us[i] - uc[grid.cell(i, 0)]))
            .collect()
    }
}

/// Scalar metadata of a transport system.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemMeta {
    pub diffusivity: f64,
    pub radius: f64,
    pub radius_rate: f64,
    pub dt: f64,
}

/// Replaces the surface rows according to `closure`.
pub fn apply_robin_boundary(system: &mut TransportSystem, grid: &AxiGrid, closure: SurfaceClosure) {
    let nt = system.n_theta;
    let mut t = TripletBuilder::with_capacity(system.matrix.n, system.matrix.nnz() + nt);
    for r in nt..system.matrix.n {
        for (c, v) in system.matrix.row(r) {
            t.add(r, c, v);
        }
    }
    match &closure {
        SurfaceClosure::Prescribed(values) => {
            for i in 0..nt {
                t.add(i, i, 1.0);
                system.rhs[i] = values[i];
            }
        }
        SurfaceClosure::Robin { coeff, rhs } => {
            for i in 0..nt {
                let kappa = system.surface_conductance[i];
                let a = system.surface_weights[i] / system.radius;
                t.add(i, i, kappa + a * coeff[i]);
                t.add(i, nt + grid.cell(i, 0), -kappa);
                system.rhs[i] = a * rhs[i];
            }
        }
    }
    system.matrix = t.build();
    system.surface_closure = Some(closure);
}

/// Pins the outer ghost value through the outermost face conductance.
pub fn apply_dirichlet_far(system: &mut TransportSystem, grid: &AxiGrid, value: f64) {
    let nt = system.n_theta;
    let last = grid.n_r - 1;
    let mut t = TripletBuilder::with_capacity(system.matrix.n, system.matrix.nnz());
    for r in 0..system.matrix.n {
        for (c, v) in system.matrix.row(r) {
            t.add(r, c, v);
        }
    }
    let prev = system.far_value.unwrap_or(0.0);
    for i in 0..nt {
        let row = nt + grid.cell(i, last);
        let g = system.outer_conductance[i];
        if system.far_value.is_none() {
            t.add(row, row, g);
        }
        system.rhs[row] += g * (value - prev);
    }
    system.matrix = t.build();
    system.far_value = Some(value);
}

/// Surface values by linear extrapolation from the first two radial layers.
pub fn extrapolate_surface(grid: &AxiGrid, values: &[f64]) -> Vec<f64> {
    let (r0, r1) = (grid.r_c[0], grid.r_c[1]);
    let w = (grid.r_faces[0] - r0) / (r1 - r0);
    (0..grid.n_theta)
        .map(|i| {
            let (a, b) = (values[grid.cell(i, 0)], values[grid.cell(i, 1)]);
            a + w * (b - a)
        })
        .collect()
}

/// Outer-face values by linear extrapolation from the last two radial layers.
pub fn extrapolate_outer(grid: &AxiGrid, values: &[f64]) -> Vec<f64> {
    let n = grid.n_r;
    let (r0, r1) = (grid.r_c[n - 1], grid.r_c[n - 2]);
    let w = (grid.r_faces[n] - r0) / (r1 - r0);
    (0..grid.n_theta)
        .map(|i| {
            let (a, b) = (values[grid.cell(i, n - 1)], values[grid.cell(i, n - 2)]);
            a + w * (b - a)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowfields::VelocityModel;
    use crate::geometry::build_grid;
    use crate::sparse::solve_sparse;

    fn grid() -> AxiGrid {
        build_grid(12, 16, 20.0, 1.1).unwrap()
    }

    fn meta(dt: f64) -> SystemMeta {
        SystemMeta { diffusivity: 1.0, radius: 1.0, radius_rate: 0.0, dt }
    }

    #[test]
    fn diffusion_annihilates_constants() {
        let g = grid();
        let d = assemble_diffusion(&g, 2.5e-5, 6e-4);
        let u = vec![3.7; g.n_cells()];
        let us = vec![3.7; g.n_theta];
        let r = d.apply(&g, &u, &us, 3.7);
        let scale = d.surface.iter().fold(0.0_f64, |m, v| m.max(*v)) * 3.7;
        assert!(r.iter().all(|v| v.abs() <= 1e-12 * scale));
    }

    #[test]
    fn zero_diffusivity_gives_zero_operator() {
        let g = grid();
        let d = assemble_diffusion(&g, 0.0, 1.0);
        assert!(d.interior.values.iter().all(|&v| v == 0.0));
        assert!(d.surface.iter().chain(&d.outer).all(|&v| v == 0.0));
    }

    #[test]
    fn diffusion_is_symmetric() {
        let g = grid();
        let d = assemble_diffusion(&g, 1.3, 0.7);
        let m = &d.interior;
        let scale = m.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        for r in 0..m.n {
            for (c, v) in m.row(r) {
                assert!((v - m.get(c, r)).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn stagnant_without_recession_has_no_advection() {
        let g = grid();
        let a = assemble_advection(&g, &VelocityModel::Stagnant, 1e-3, 0.0, AdvectionScheme::Upwind);
        assert!(a.interior.values.iter().all(|&v| v == 0.0));
        assert!(a.surface.iter().chain(&a.outer).all(|&v| v == 0.0));
    }

    #[test]
    fn advection_annihilates_constants() {
        let g = grid();
        let flow = VelocityModel::stokes(0.3);
        for scheme in [AdvectionScheme::Upwind, AdvectionScheme::Central] {
            let a = assemble_advection(&g, &flow, 1e-3, -2e-6, scheme);
            let u = vec![1.25; g.n_cells()];
            let r = a.apply(&g, &u, &vec![1.25; g.n_theta], 1.25);
            let scale = a.interior.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(r.iter().all(|v| v.abs() <= 1e-12 * scale), "{scheme:?}");
        }
    }

    #[test]
    fn receding_surface_transports_outward() {
        let g = grid();
        let f = face_fluxes(&g, &VelocityModel::Stagnant, 1e-3, -1e-6);
        assert!(f.radial.iter().all(|&x| x > 0.0));
        let a = assemble_advection(&g, &VelocityModel::Stagnant, 1e-3, -1e-6, AdvectionScheme::Upwind);
        // inflow through Γ* feeds the first layer, nothing enters through Γ∞
        assert!(a.surface.iter().all(|&x| x > 0.0));
        assert!(a.outer.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn reversing_velocity_negates_central_advection() {
        let g = grid();
        let a = assemble_advection(&g, &VelocityModel::stokes(0.2), 1e-3, 0.0, AdvectionScheme::Central);
        let b = assemble_advection(&g, &VelocityModel::stokes(-0.2), 1e-3, 0.0, AdvectionScheme::Central);
        for (x, y) in a.interior.values.iter().zip(&b.interior.values) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("upwind".parse::<AdvectionScheme>().unwrap(), AdvectionScheme::Upwind);
        assert_eq!("central".parse::<AdvectionScheme>().unwrap(), AdvectionScheme::Central);
        assert!("quick".parse::<AdvectionScheme>().is_err());
    }

    fn upwind_system(g: &AxiGrid, flow: &VelocityModel, dt: f64, u_old: &[f64]) -> TransportSystem {
        let d = assemble_diffusion(g, 1.0, 1.0);
        let a = assemble_advection(g, flow, 1.0, -0.01, AdvectionScheme::Upwind);
        TransportSystem::assemble(g, FieldKind::VaporDensity, &d, &a, meta(dt), u_old)
    }

    #[test]
    fn constants_are_preserved_with_dirichlet_and_zero_flux() {
        let g = grid();
        let u0 = vec![0.4; g.n_cells()];
        let mut s = upwind_system(&g, &VelocityModel::stokes(0.5), 0.1, &u0);
        apply_robin_boundary(
            &mut s,
            &g,
            SurfaceClosure::Robin { coeff: vec![0.0; g.n_theta], rhs: vec![0.0; g.n_theta] },
        );
        apply_dirichlet_far(&mut s, &g, 0.4);
        assert!(s.audit().is_ok());
        let x = solve_sparse(&s.matrix, &s.rhs).unwrap();
        assert!(x.iter().all(|v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn neumann_problem_has_constant_nullspace() {
        let g = grid();
        let u0 = vec![0.0; g.n_cells()];
        let mut s = upwind_system(&g, &VelocityModel::Stagnant, f64::INFINITY, &u0);
        apply_robin_boundary(
            &mut s,
            &g,
            SurfaceClosure::Robin { coeff: vec![0.0; g.n_theta], rhs: vec![0.0; g.n_theta] },
        );
        let ones = vec![1.0; s.matrix.n];
        let r = s.matrix.mul_vec(&ones);
        assert!(r.iter().all(|v| v.abs() < 1e-9));
        // the far-field closure lifts the nullspace
        apply_dirichlet_far(&mut s, &g, 0.0);
        let r = s.matrix.mul_vec(&ones);
        assert!(r.iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn outer_step_propagates_monotonically() {
        let g = grid();
        let old = vec![0.0; g.n_cells()];
        let mut s = upwind_system(&g, &VelocityModel::stokes(0.5), 0.5, &old);
        apply_robin_boundary(
            &mut s,
            &g,
            SurfaceClosure::Robin { coeff: vec![0.0; g.n_theta], rhs: vec![0.0; g.n_theta] },
        );
        apply_dirichlet_far(&mut s, &g, 1.0);
        let x = solve_sparse(&s.matrix, &s.rhs).unwrap();
        assert!(x.iter().all(|&v| (-1e-14..=1.0 + 1e-14).contains(&v)));
        assert!(x[g.n_theta + g.cell(3, g.n_r - 1)] > x[g.n_theta + g.cell(3, 0)]);
    }

    #[test]
    fn dirichlet_can_be_reapplied() {
        let g = grid();
        let old = vec![0.0; g.n_cells()];
        let mut a = upwind_system(&g, &VelocityModel::Stagnant, 0.5, &old);
        let mut b = a.clone();
        apply_dirichlet_far(&mut a, &g, 2.0);
        apply_dirichlet_far(&mut b, &g, 5.0);
        apply_dirichlet_far(&mut b, &g, 2.0);
        assert_eq!(a.matrix, b.matrix);
        for (x, y) in a.rhs.iter().zip(&b.rhs) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn picard_closure_rows_are_mmatrix_rows() {
        let g = grid();
        let params = MaterialParams::water_air();
        let drying = DryingState::new(&params, 60.0, 0.1).unwrap();
        let law = InterfaceLaw::new(&params, &drying);
        let ts = vec![40.0; g.n_theta];
        let rs = vec![0.05; g.n_theta];
        for kind in [FieldKind::Temperature, FieldKind::VaporDensity] {
            let d = assemble_diffusion(&g, 2.7e-5, 6e-4);
            let a = assemble_advection(&g, &VelocityModel::stokes(0.4), 6e-4, -1e-6, AdvectionScheme::Upwind);
            let mut s = TransportSystem::assemble(
                &g,
                kind,
                &d,
                &a,
                SystemMeta { diffusivity: 2.7e-5, radius: 6e-4, radius_rate: -1e-6, dt: 1.0 },
                &vec![0.0; g.n_cells()],
            );
            apply_robin_boundary(&mut s, &g, law.closure(kind, Linearization::Picard, &ts, &rs));
            apply_dirichlet_far(&mut s, &g, 1.0);
            assert!(s.audit().is_ok(), "{kind:?}: {:?}", s.audit());
        }
    }

    #[test]
    fn extrapolation_is_exact_for_linear_profiles() {
        let g = grid();
        let u: Vec<f64> = (0..g.n_cells()).map(|c| 2.0 + 3.0 * g.r_c[c / g.n_theta]).collect();
        for v in extrapolate_surface(&g, &u) {
            assert!((v - 5.0).abs() < 1e-12);
        }
        for v in extrapolate_outer(&g, &u) {
            assert!((v - 62.0).abs() < 1e-10);
        }
    }
}
