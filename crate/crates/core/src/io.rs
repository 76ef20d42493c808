//! JSON and CSV documents exchanged by the command-line tool.
//!
//! Complex vectors are stored as flat arrays of interleaved `re, im` pairs.

use std::fmt::Write as _;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::admm::{Solution, SolverConfig};
use crate::error::{Error, Result};
use crate::extract::{to_physical, Estimate};
use crate::scene::{
    db_to_amplitude, physical_to_normalized, ConstellationKind, Measurement, MeasurementMeta, Path, RadarConfig,
    Scene,
};
use crate::C64;

pub fn to_interleaved(v: &[C64]) -> Vec<f64> {
    v.iter().flat_map(|c| [c.re, c.im]).collect()
}

pub fn from_interleaved(v: &[f64]) -> Result<Vec<C64>> {
    if v.len() % 2 != 0 {
        return Err(Error::config(format!("interleaved array has odd length {}", v.len())));
    }
    Ok(v.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect())
}

/// A path given either in normalized units or physically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathDoc {
    Normalized {
        alpha_re: f64,
        alpha_im: f64,
        phi: f64,
        psi: f64,
    },
    Physical {
        power_db: f64,
        range_m: f64,
        velocity_mps: f64,
        #[serde(default)]
        phase_rad: f64,
    },
}

impl PathDoc {
    pub fn to_path(&self, config: &RadarConfig) -> Result<Path> {
        match *self {
            PathDoc::Normalized {
                alpha_re,
                alpha_im,
                phi,
                psi,
            } => Path::new(C64::new(alpha_re, alpha_im), phi, psi),
            PathDoc::Physical {
                power_db,
                range_m,
                velocity_mps,
                phase_rad,
            } => {
                let (phi, psi) = physical_to_normalized(range_m, velocity_mps, config)?;
                Path::new(C64::from_polar(db_to_amplitude(power_db), phase_rad), phi, psi)
            }
        }
    }

    pub fn from_path(p: &Path) -> Self {
        PathDoc::Normalized {
            alpha_re: p.alpha.re,
            alpha_im: p.alpha.im,
            phi: p.phi,
            psi: p.psi,
        }
    }
}

/// Fixed scene plus simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDoc {
    pub config: RadarConfig,
    #[serde(default = "default_constellation")]
    pub constellation: ConstellationKind,
    #[serde(default)]
    pub ber: f64,
    #[serde(default)]
    pub targets: Vec<PathDoc>,
    #[serde(default)]
    pub clutter: Vec<PathDoc>,
}

fn default_constellation() -> ConstellationKind {
    ConstellationKind::Qpsk
}

impl SceneDoc {
    pub fn to_scene(&self) -> Result<Scene> {
        self.config.validate()?;
        let conv = |v: &[PathDoc]| v.iter().map(|p| p.to_path(&self.config)).collect::<Result<Vec<_>>>();
        let scene = Scene {
            targets: conv(&self.targets)?,
            clutter: conv(&self.clutter)?,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn from_scene(scene: &Scene, config: &RadarConfig, constellation: ConstellationKind, ber: f64) -> Self {
        Self {
            config: config.clone(),
            constellation,
            ber,
            targets: scene.targets.iter().map(PathDoc::from_path).collect(),
            clutter: scene.clutter.iter().map(PathDoc::from_path).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementDoc {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub r_bar: Vec<f64>,
    pub s_hat: Vec<f64>,
    /// Noise variance; `0` or absent means unknown.
    #[serde(default)]
    pub sigma2: f64,
    #[serde(default)]
    pub meta: MeasurementMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RadarConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_bar_true: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_bar_true: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneDoc>,
}

impl MeasurementDoc {
    pub fn from_measurement(meas: &Measurement) -> Self {
        Self {
            m: meas.m,
            n: meas.n,
            r_bar: to_interleaved(&meas.r_bar),
            s_hat: to_interleaved(&meas.s_hat),
            sigma2: meas.sigma2,
            meta: meas.meta.clone(),
            config: None,
            z_bar_true: meas.z_bar_true.as_deref().map(to_interleaved),
            e_bar_true: meas.e_bar_true.as_deref().map(to_interleaved),
            scene: None,
        }
    }

    pub fn to_measurement(&self) -> Result<Measurement> {
        let opt = |v: &Option<Vec<f64>>| v.as_deref().map(from_interleaved).transpose();
        let meas = Measurement {
            m: self.m,
            n: self.n,
            s_hat: from_interleaved(&self.s_hat)?,
            r_bar: from_interleaved(&self.r_bar)?,
            z_bar_true: opt(&self.z_bar_true)?,
            e_bar_true: opt(&self.e_bar_true)?,
            v_bar_true: None,
            sigma2: self.sigma2,
            meta: self.meta.clone(),
        };
        meas.validate()?;
        Ok(meas)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDoc {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub solver: SolverConfig,
    pub z_hat: Vec<f64>,
    pub e_hat: Vec<f64>,
    pub nu_hat: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub primal_residuals: Vec<f64>,
    pub dual_residuals: Vec<f64>,
}

impl SolutionDoc {
    pub fn new(sol: &Solution, meas: &Measurement, solver: &SolverConfig) -> Self {
        let d = &sol.diagnostics;
        Self {
            m: meas.m,
            n: meas.n,
            solver: *solver,
            z_hat: to_interleaved(&sol.z_hat),
            e_hat: to_interleaved(&sol.e_hat),
            nu_hat: to_interleaved(&sol.nu_hat),
            iterations: d.iterations,
            converged: d.converged,
            final_objective: d.final_objective,
            primal_residuals: d.primal_residuals.clone(),
            dual_residuals: d.dual_residuals.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub phi: f64,
    pub psi: f64,
    pub range_m: f64,
    pub velocity_mps: f64,
    pub amp_re: f64,
    pub amp_im: f64,
    pub dual_peak_mag: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateDoc {
    pub algorithm: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    /// Certificate level for the atomic-norm receivers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub paths: Vec<PathRow>,
    #[serde(default)]
    pub error_support: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_hat: Option<Vec<f64>>,
}

impl EstimateDoc {
    pub fn new(algorithm: &str, est: &Estimate, config: &RadarConfig, lambda: Option<f64>) -> Self {
        let phys = to_physical(est, config);
        let paths = est
            .paths
            .iter()
            .zip(phys)
            .map(|(p, q)| PathRow {
                phi: p.phi,
                psi: p.psi,
                range_m: q.range_m,
                velocity_mps: q.velocity_mps,
                amp_re: p.alpha.re,
                amp_im: p.alpha.im,
                dual_peak_mag: p.dual_peak,
            })
            .collect();
        Self {
            algorithm: algorithm.to_string(),
            m: config.m,
            n: config.n,
            lambda,
            paths,
            error_support: est.error_support.clone(),
            nu_hat: est.nu_hat.as_deref().map(to_interleaved),
        }
    }

    pub fn nu(&self) -> Result<Option<Vec<C64>>> {
        self.nu_hat.as_deref().map(from_interleaved).transpose()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("phi,psi,range_m,velocity_mps,amp_re,amp_im,dual_peak_mag\n");
        for p in &self.paths {
            let peak = p.dual_peak_mag.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.phi, p.psi, p.range_m, p.velocity_mps, p.amp_re, p.amp_im, peak
            );
        }
        out
    }
}

/// Grid as CSV: the first row lists the `psi` values, each further row
/// starts with its `phi` value. Entry `(p, q)` sits at `phi = p/rows`,
/// `psi = q/cols`.
pub fn grid_to_csv(grid: &Mat<f64>) -> String {
    let (rows, cols) = (grid.nrows(), grid.ncols());
    let mut out = String::from("phi\\psi");
    for q in 0..cols {
        let _ = write!(out, ",{}", q as f64 / cols as f64);
    }
    out.push('\n');
    for p in 0..rows {
        let _ = write!(out, "{}", p as f64 / rows as f64);
        for q in 0..cols {
            let _ = write!(out, ",{}", grid[(p, q)]);
        }
        out.push('\n');
    }
    out
}
