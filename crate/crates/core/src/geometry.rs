//! Structured axisymmetric control volumes on the rescaled shell
//! `1 <= r <= r_out`, `0 <= θ <= π`.
//!
//! Cells are indexed θ-fastest: `cell = i + n_theta * j`. All measures are
//! exact integrals of the spherical volume/area elements, so the partition
//! of the shell and of the unit sphere hold to rounding.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid dimensions and radial stretching.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n_theta: usize,
    pub n_r: usize,
    pub r_out: f64,
    pub stretch: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl GridSpec {
    /// Default working resolution.
    pub fn desk() -> Self {
        Self { n_theta: 32, n_r: 64, r_out: 50.0, stretch: 1.06 }
    }

    /// Roughly the cell count of the reference triangulation, with its 0.25 % layer growth.
    pub fn paper_scale() -> Self {
        Self { n_theta: 128, n_r: 230, r_out: 50.0, stretch: 1.0025 }
    }

    /// Both directions doubled, stretch replaced by its square root so the
    /// refined grid samples the same smooth radial mapping.
    pub fn refined(&self) -> Self {
        Self {
            n_theta: 2 * self.n_theta,
            n_r: 2 * self.n_r,
            r_out: self.r_out,
            stretch: self.stretch.sqrt(),
        }
    }

    pub fn build(&self) -> Result<AxiGrid> {
        build_grid(self.n_theta, self.n_r, self.r_out, self.stretch)
    }
}

#[derive(Clone, Debug)]
pub struct AxiGrid {
    pub n_theta: usize,
    pub n_r: usize,
    pub r_out: f64,
    pub stretch: f64,
    pub theta_faces: Vec<f64>,
    pub r_faces: Vec<f64>,
    pub theta_c: Vec<f64>,
    pub r_c: Vec<f64>,
    /// Cell volumes, θ-fastest.
    pub vol: Vec<f64>,
    /// Areas of constant-r faces, index `i + n_theta * jf`, `jf in 0..=n_r`.
    pub area_r: Vec<f64>,
    /// Areas of constant-θ faces, index `if + (n_theta + 1) * j`, `if in 0..=n_theta`.
    pub area_theta: Vec<f64>,
    surface_w: Vec<f64>,
}

/// Builds the grid: uniform θ faces; radial layer widths grow geometrically
/// by `stretch` from the droplet surface and exactly tile `[1, r_out]`.
pub fn build_grid(n_theta: usize, n_r: usize, r_out: f64, stretch: f64) -> Result<AxiGrid> {
    if n_theta < 4 {
        return Err(Error::param("n_theta", format!("need at least 4 cells, got {n_theta}")));
    }
    if n_r < 4 {
        return Err(Error::param("n_r", format!("need at least 4 cells, got {n_r}")));
    }
    if !(r_out > 1.0 && r_out.is_finite()) {
        return Err(Error::param("r_out", format!("must exceed 1, got {r_out}")));
    }
    if !(stretch >= 1.0 && stretch.is_finite()) {
        return Err(Error::param("stretch", format!("must be >= 1, got {stretch}")));
    }

    let theta_faces: Vec<f64> = (0..=n_theta)
        .map(|i| if i == n_theta { PI } else { PI * i as f64 / n_theta as f64 })
        .collect();

    let span = r_out - 1.0;
    let dr0 = if stretch == 1.0 {
        span / n_r as f64
    } else {
        span * (stretch - 1.0) / (stretch.powi(n_r as i32) - 1.0)
    };
    let mut r_faces = Vec::with_capacity(n_r + 1);
    r_faces.push(1.0);
    let mut width = dr0;
    for j in 1..n_r {
        let prev = r_faces[j - 1];
        r_faces.push(prev + width);
        width *= stretch;
    }
    r_faces.push(r_out);

    let theta_c: Vec<f64> = theta_faces.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let r_c: Vec<f64> = r_faces.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();

    let cos_f: Vec<f64> = theta_faces.iter().map(|t| t.cos()).collect();
    let mut vol = Vec::with_capacity(n_theta * n_r);
    for j in 0..n_r {
        let shell = (r_faces[j + 1].powi(3) - r_faces[j].powi(3)) / 3.0;
        for i in 0..n_theta {
            vol.push(2.0 * PI * shell * (cos_f[i] - cos_f[i + 1]));
        }
    }
    let mut area_r = Vec::with_capacity(n_theta * (n_r + 1));
    for rf in &r_faces {
        for i in 0..n_theta {
            area_r.push(2.0 * PI * rf * rf * (cos_f[i] - cos_f[i + 1]));
        }
    }
    let mut area_theta = Vec::with_capacity((n_theta + 1) * n_r);
    for j in 0..n_r {
        let ring = r_faces[j + 1] * r_faces[j + 1] - r_faces[j] * r_faces[j];
        for tf in &theta_faces {
            area_theta.push(PI * tf.sin() * ring);
        }
        // The axis carries no flux.
        let row = (n_theta + 1) * j;
        area_theta[row] = 0.0;
        area_theta[row + n_theta] = 0.0;
    }
    let surface_w = surface_weights(&theta_faces);

    Ok(AxiGrid {
        n_theta,
        n_r,
        r_out,
        stretch,
        theta_faces,
        r_faces,
        theta_c,
        r_c,
        vol,
        area_r,
        area_theta,
        surface_w,
    })
}

/// Quadrature weights `2π (cos θ_i − cos θ_{i+1})` on the unit sphere; they sum to 4π.
pub fn surface_weights(theta_faces: &[f64]) -> Vec<f64> {
    theta_faces
        .windows(2)
        .map(|w| 2.0 * PI * (w[0].cos() - w[1].cos()))
        .collect()
}

impl AxiGrid {
    #[inline]
    pub fn n_cells(&self) -> usize {
        self.n_theta * self.n_r
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        i + self.n_theta * j
    }

    /// Weights for integrals over Γ*, one per surface face.
    pub fn surface_weights(&self) -> &[f64] {
        &self.surface_w
    }

    /// Area of the constant-r face at radial face index `jf` spanning θ-cell `i`.
    #[inline]
    pub fn radial_face_area(&self, i: usize, jf: usize) -> f64 {
        self.area_r[i + self.n_theta * jf]
    }

    /// Area of the constant-θ face at polar face index `tf` spanning r-cell `j`.
    #[inline]
    pub fn polar_face_area(&self, tf: usize, j: usize) -> f64 {
        self.area_theta[tf + (self.n_theta + 1) * j]
    }

    pub fn total_volume(&self) -> f64 {
        self.vol.iter().sum()
    }

    /// Σ over Γ* of `w_i f_i`.
    pub fn surface_integral(&self, values: &[f64]) -> f64 {
        self.surface_w.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Volume-weighted L² norm of a cell field.
    pub fn l2_norm(&self, values: &[f64]) -> f64 {
        self.vol.iter().zip(values).map(|(v, u)| v * u * u).sum::<f64>().sqrt()
    }

    /// Discrete ‖∇u‖₂ from two-point face differences (cell faces only; the
    /// boundary layers are omitted).
    pub fn grad_l2_norm(&self, values: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.n_r {
            for i in 0..self.n_theta {
                let c = self.cell(i, j);
                if i + 1 < self.n_theta {
                    let d = self.r_c[j] * (self.theta_c[i + 1] - self.theta_c[i]);
                    let g = (values[c + 1] - values[c]) / d;
                    acc += self.polar_face_area(i + 1, j) * d * g * g;
                }
                if j + 1 < self.n_r {
                    let d = self.r_c[j + 1] - self.r_c[j];
                    let g = (values[c + self.n_theta] - values[c]) / d;
                    acc += self.radial_face_area(i, j + 1) * d * g * g;
                }
            }
        }
        acc.sqrt()
    }

    /// CSV echo of the cell geometry.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,j,theta_rad,r_rescaled,volume")?;
        for j in 0..self.n_r {
            for i in 0..self.n_theta {
                writeln!(
                    out,
                    "{i},{j},{:.17e},{:.17e},{:.17e}",
                    self.theta_c[i],
                    self.r_c[j],
                    self.vol[self.cell(i, j)]
                )?;
            }
        }
        Ok(())
    }
}
