use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use droplet_core::geometry::AxiGrid;
use droplet_core::timeloop::{FieldState, StepRecord};

pub const RADIUS_HEADER: &str = "t_s,R_m,R2_norm,J_avg,T_min,T_max,rho_min,rho_max,newton_iters";
pub const FIELDS_HEADER: &str = "theta_rad,r_rescaled,T_C,rho_kgm3";
pub const SWEEP_HEADER: &str = "label,flow,param,lifetime_s,lifetime_ratio_vs_stagnant";

pub fn radius_csv(records: &[StepRecord]) -> String {
    let mut s = String::with_capacity(64 * (records.len() + 1));
    s.push_str(RADIUS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.t_s, r.radius_m, r.r2_norm, r.j_avg, r.t_min, r.t_max, r.rho_min, r.rho_max, r.newton_iters
        );
    }
    s
}

pub fn fields_csv(grid: &AxiGrid, fields: &FieldState) -> String {
    let mut s = String::from(FIELDS_HEADER);
    s.push('\n');
    for j in 0..grid.n_r {
        for i in 0..grid.n_theta {
            let c = grid.cell(i, j);
            let _ = writeln!(
                s,
                "{},{},{},{}",
                grid.theta_c[i], grid.r_c[j], fields.temperature.values[c], fields.vapor.values[c]
            );
        }
    }
    s
}

pub fn write(dir: &Path, name: &str, contents: &str) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)
}

/// Empty cells for missing values.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
