use std::f64::consts::PI;

use droplet_core::discretization::{
    apply_dirichlet_far, apply_robin_boundary, assemble_advection, assemble_diffusion, AdvectionScheme, FieldKind,
    InterfaceLaw, Linearization, SurfaceClosure, SystemMeta, TransportSystem,
};
use droplet_core::flowfields::VelocityModel;
use droplet_core::geometry::{AxiGrid, GridSpec};
use droplet_core::physics::{DryingState, MaterialParams};
use droplet_core::sparse::{solve_sparse, CsrMatrix};

struct Setup {
    grid: AxiGrid,
    params: MaterialParams,
    drying: DryingState,
    radius: f64,
}

fn setup() -> Setup {
    let params = MaterialParams::water_air();
    let drying = DryingState::new(&params, 60.0, 0.1).unwrap();
    Setup { grid: GridSpec { n_theta: 12, n_r: 20, r_out: 50.0, stretch: 1.15 }.build().unwrap(), params, drying, radius: 6.2e-4 }
}

fn system(s: &Setup, kind: FieldKind, u0: f64) -> TransportSystem {
    let alpha = match kind {
        FieldKind::Temperature => s.params.thermal_diffusivity(),
        FieldKind::VaporDensity => s.params.d_v_m2_s,
    };
    let diff = assemble_diffusion(&s.grid, alpha, s.radius);
    let adv = assemble_advection(&s.grid, &VelocityModel::Stagnant, s.radius, 0.0, AdvectionScheme::Upwind);
    let meta = SystemMeta { diffusivity: alpha, radius: s.radius, radius_rate: 0.0, dt: 1e-3 };
    TransportSystem::assemble(&s.grid, kind, &diff, &adv, meta, &vec![u0; s.grid.n_cells()])
}

/// Flux delivered to the first layer for a frozen surface state (T_inf, rho_inf).
fn frozen_flux(s: &Setup, kind: FieldKind, far: f64) -> Vec<f64> {
    let law = InterfaceLaw::new(&s.params, &s.drying);
    let n = s.grid.n_theta;
    let ts = vec![s.drying.t_inf; n];
    let rs = vec![s.drying.rho_inf; n];
    let mut sys = system(s, kind, far);
    apply_robin_boundary(&mut sys, &s.grid, law.closure(kind, Linearization::Explicit, &ts, &rs));
    apply_dirichlet_far(&mut sys, &s.grid, far);
    let x = solve_sparse(&sys.matrix, &sys.rhs).unwrap();
    sys.surface_flux_into_cells(&s.grid, &x)
}

#[test]
fn uniform_surface_state_gives_uniform_heat_sink() {
    let s = setup();
    let flux = frozen_flux(&s, FieldKind::Temperature, s.drying.t_inf);
    let per_area = s.params.latent_cooling() * s.drying.j_inf / s.radius;
    for (i, f) in flux.iter().enumerate() {
        let expected = -s.grid.surface_weights()[i] * per_area;
        assert!((f - expected).abs() <= 1e-10 * expected.abs(), "face {i}: {f} vs {expected}");
    }
    let total: f64 = flux.iter().sum();
    let expected = -4.0 * PI * per_area;
    assert!((total - expected).abs() <= 1e-10 * expected.abs());
}

#[test]
fn evaporation_adds_vapor_and_removes_heat() {
    let s = setup();
    let heat = frozen_flux(&s, FieldKind::Temperature, s.drying.t_inf);
    let vapor = frozen_flux(&s, FieldKind::VaporDensity, s.drying.rho_inf);
    assert!(heat.iter().all(|&f| f < 0.0));
    assert!(vapor.iter().all(|&f| f > 0.0));
}

#[test]
fn zero_flux_state_gives_homogeneous_neumann_rows() {
    let s = setup();
    let law = InterfaceLaw::new(&s.params, &s.drying);
    let n = s.grid.n_theta;
    let ts = vec![s.drying.t_star; n];
    let rs = vec![s.drying.rho_inf; n];
    for kind in [FieldKind::Temperature, FieldKind::VaporDensity] {
        let SurfaceClosure::Robin { rhs, .. } = law.closure(kind, Linearization::Explicit, &ts, &rs) else {
            panic!("expected a Robin closure");
        };
        let scale = s.drying.j_inf * s.params.latent_cooling();
        assert!(rhs.iter().all(|v| v.abs() <= 1e-12 * scale), "{kind:?}: {rhs:?}");
    }
}

#[test]
fn constant_far_field_state_is_stationary() {
    let s = setup();
    let law = InterfaceLaw::new(&s.params, &s.drying);
    let n = s.grid.n_theta;
    let t = s.drying.t_inf;
    let rho = s.drying.rho_star;
    for (kind, u) in [(FieldKind::Temperature, t), (FieldKind::VaporDensity, rho)] {
        let mut sys = system(&s, kind, u);
        apply_robin_boundary(&mut sys, &s.grid, law.closure(kind, Linearization::Newton, &vec![t; n], &vec![rho; n]));
        apply_dirichlet_far(&mut sys, &s.grid, u);
        let x = solve_sparse(&sys.matrix, &sys.rhs).unwrap();
        assert!(x.iter().all(|v| (v - u).abs() <= 1e-12 * u), "{kind:?}");
    }
}

#[test]
fn identity_system_returns_rhs() {
    let a = CsrMatrix::identity(7);
    let b: Vec<f64> = (0..7).map(|k| k as f64 - 2.5).collect();
    assert_eq!(solve_sparse(&a, &b).unwrap(), b);
}

#[test]
fn triplet_dump_lists_every_entry() {
    let s = setup();
    let sys = system(&s, FieldKind::Temperature, 1.0);
    let mut buf = Vec::new();
    sys.matrix.write_triplets(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), sys.matrix.nnz() + 1);
    assert!(text.starts_with('%'));
}
