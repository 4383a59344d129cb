//! JSON run configuration. Units live in the key names.

use std::fmt;
use std::path::{Path, PathBuf};

use droplet_core::discretization::AdvectionScheme;
use droplet_core::flowfields::{amplitude_to_spl, spl_to_amplitude, VelocityModel, DEFAULT_C0, DEFAULT_OMEGA};
use droplet_core::geometry::GridSpec;
use droplet_core::oracle::radius_from_volume;
use droplet_core::physics::MaterialParams;
use droplet_core::timeloop::{Problem, SolverConfig};
use droplet_core::Error;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Dimensional,
    Nondimensional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Drying {
    #[serde(rename = "T_inf_C")]
    pub t_inf_c: f64,
    #[serde(rename = "RH_inf")]
    pub rh_inf: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Droplet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_ul: Option<f64>,
    #[serde(rename = "R0_m", default, skip_serializing_if = "Option::is_none")]
    pub r0_m: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Flow {
    #[default]
    Stagnant,
    Stokes {
        #[serde(rename = "V_inf_m_per_s")]
        v_inf_m_per_s: f64,
    },
    Acoustic {
        #[serde(rename = "SPL_dB", default, skip_serializing_if = "Option::is_none")]
        spl_db: Option<f64>,
        #[serde(rename = "amplitude_Pa", default, skip_serializing_if = "Option::is_none")]
        amplitude_pa: Option<f64>,
        #[serde(default = "default_omega")]
        omega_rad_s: f64,
        #[serde(default = "default_c0")]
        c0_m_s: f64,
    },
}

fn default_omega() -> f64 {
    DEFAULT_OMEGA
}

fn default_c0() -> f64 {
    DEFAULT_C0
}

impl Flow {
    pub fn label(&self) -> &'static str {
        match self {
            Flow::Stagnant => "stagnant",
            Flow::Stokes { .. } => "stokes",
            Flow::Acoustic { .. } => "acoustic",
        }
    }

    /// The user-facing parameter: V_inf for Stokes, the level or amplitude as given for acoustic.
    pub fn param(&self) -> String {
        match self {
            Flow::Stagnant => String::new(),
            Flow::Stokes { v_inf_m_per_s } => format!("V_inf_m_per_s={v_inf_m_per_s}"),
            Flow::Acoustic { spl_db: Some(s), .. } => format!("SPL_dB={s}"),
            Flow::Acoustic { amplitude_pa: Some(a), .. } => format!("amplitude_Pa={a}"),
            Flow::Acoustic { .. } => String::new(),
        }
    }

    pub fn model(&self, material: &MaterialParams) -> Result<VelocityModel, Error> {
        Ok(match *self {
            Flow::Stagnant => VelocityModel::Stagnant,
            Flow::Stokes { v_inf_m_per_s } => VelocityModel::stokes(v_inf_m_per_s),
            Flow::Acoustic { spl_db, amplitude_pa, omega_rad_s, c0_m_s } => {
                let amplitude = match (spl_db, amplitude_pa) {
                    (Some(s), None) => spl_to_amplitude(s),
                    (None, Some(a)) => a,
                    _ => return Err(Error::Config("acoustic flow needs exactly one of SPL_dB or amplitude_Pa".into())),
                };
                VelocityModel::Acoustic {
                    amplitude_pa: amplitude,
                    omega_rad_s,
                    c0_m_s,
                    gas_density_kg_m3: material.rho_g_kg_m3,
                }
            }
        })
    }

    /// Both acoustic descriptions, for the run metadata.
    pub fn acoustic_levels(&self, material: &MaterialParams) -> Option<(f64, f64)> {
        match self.model(material).ok()? {
            VelocityModel::Acoustic { amplitude_pa, .. } => Some((amplitude_pa, amplitude_to_spl(amplitude_pa).ok()?)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepMember {
    pub label: String,
    pub flow: Flow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<MaterialParams>,
    pub drying: Drying,
    pub droplet: Droplet,
    #[serde(default)]
    pub flow: Flow,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Relative slope tolerance of `validate-d2law`.
    #[serde(default = "default_d2_tolerance")]
    pub d2_tolerance: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepMember>,
    /// Written into `run_meta.json`; ignored when loading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<serde_json::Value>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_d2_tolerance() -> f64 {
    0.05
}

/// A config problem with the position it refers to.
#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}: {}", self.path.display(), self.line, self.column, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// 1-based position of the first `"key"` in `text`, or the top of the document.
pub fn locate(text: &str, key: &str) -> (usize, usize) {
    let needle = format!("\"{key}\"");
    for (n, line) in text.lines().enumerate() {
        if let Some(col) = line.find(&needle) {
            return (n + 1, col + 1);
        }
    }
    (1, 1)
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            let message = e.to_string().split(" at line ").next().unwrap_or_default().to_owned();
            // tagged enums are buffered, so serde reports the end of the object
            let (line, column) = match message.strip_prefix("unknown field `").and_then(|m| m.split('`').next()) {
                Some(key) if text.contains(&format!("\"{key}\"")) => locate(text, key),
                _ => (e.line(), e.column()),
            };
            ConfigError { path: path.to_owned(), line, column, message }
        })?;
        if let Err((key, message)) = cfg.check() {
            let (line, column) = locate(text, key);
            return Err(ConfigError { path: path.to_owned(), line, column, message });
        }
        Ok(cfg)
    }

    /// Semantic checks; failures name the offending key.
    fn check(&self) -> Result<(), (&'static str, String)> {
        match (self.droplet.volume_ul, self.droplet.r0_m) {
            (Some(v), None) if v > 0.0 && v.is_finite() => {}
            (None, Some(r)) if r > 0.0 && r.is_finite() => {}
            (Some(_), None) => return Err(("volume_ul", "droplet volume must be positive".into())),
            (None, Some(_)) => return Err(("R0_m", "droplet radius must be positive".into())),
            _ => return Err(("droplet", "give exactly one of volume_ul or R0_m".into())),
        }
        if let Some(m) = &self.material {
            if m.nondimensional != (self.mode == Mode::Nondimensional) {
                return Err(("nondimensional", "material flag disagrees with the mode tag".into()));
            }
        }
        if !(self.d2_tolerance > 0.0) {
            return Err(("d2_tolerance", "must be positive".into()));
        }
        if let Flow::Acoustic { spl_db, amplitude_pa, .. } = self.flow {
            if spl_db.is_some() == amplitude_pa.is_some() {
                return Err(("acoustic", "give exactly one of SPL_dB or amplitude_Pa".into()));
            }
        }
        for m in &self.sweep {
            if let Flow::Acoustic { spl_db, amplitude_pa, .. } = m.flow {
                if spl_db.is_some() == amplitude_pa.is_some() {
                    return Err(("sweep", format!("member `{}`: give exactly one of SPL_dB or amplitude_Pa", m.label)));
                }
            }
        }
        if self.solver.scheme != AdvectionScheme::Upwind {
            return Err(("scheme", "runs use upwind advection; central differencing is reserved for the order study".into()));
        }
        self.solver.validate().map_err(key_of)?;
        self.problem().map_err(key_of)?;
        for m in &self.sweep {
            self.with_flow(m.flow.clone()).problem().map_err(key_of)?;
        }
        Ok(())
    }

    pub fn material(&self) -> MaterialParams {
        match (&self.material, self.mode) {
            (Some(m), _) => m.clone(),
            (None, Mode::Dimensional) => MaterialParams::water_air(),
            (None, Mode::Nondimensional) => MaterialParams::unit(1.0, 0.0),
        }
    }

    pub fn r0(&self) -> f64 {
        match (self.droplet.volume_ul, self.droplet.r0_m) {
            (_, Some(r)) => r,
            (Some(v), None) => radius_from_volume(v),
            (None, None) => f64::NAN,
        }
    }

    pub fn problem(&self) -> Result<Problem, Error> {
        let material = self.material();
        let flow = self.flow.model(&material)?;
        Problem::new(&material, self.drying.t_inf_c, self.drying.rh_inf, flow, &self.grid, self.r0())
    }

    pub fn with_flow(&self, flow: Flow) -> Self {
        Self { flow, sweep: Vec::new(), ..self.clone() }
    }

    /// Every default made explicit, audit dropped.
    pub fn resolved(&self) -> Self {
        Self { material: Some(self.material()), audit: None, ..self.clone() }
    }
}

fn key_of(e: Error) -> (&'static str, String) {
    let key = match &e {
        Error::InvalidParameter { name, .. } => name,
        Error::Domain(_) => "T_inf_C",
        _ => "drying",
    };
    (key, e.to_string())
}
