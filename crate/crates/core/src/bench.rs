//! Scenario presets, identification gating and the RMSE sweep.
//!
//! Every trial draws its scene from `seed + trial` on the scene stream and
//! simulates with the same per-trial seed, so all algorithms and BER values
//! see the same scatterers and symbols within a trial.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{solve, SolverConfig};
use crate::baselines::{csl1_estimate, music_estimate, CsL1Config, MusicConfig, SignalDim};
use crate::error::{Error, Result};
use crate::extract::{estimate_from_solution, to_physical, Estimate, PeakOptions};
use crate::scene::{
    db_to_amplitude, db_to_power, physical_to_normalized, simulate, stream_rng, Constellation, ConstellationKind,
    Measurement, Path, RadarConfig, Scene, SPEED_OF_LIGHT, STREAM_SCENE,
};
use crate::C64;

/// Estimates slower than this are treated as clutter and never matched.
pub const CLUTTER_VELOCITY_MPS: f64 = 3.0;

/// Randomized scene description plus sweep settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub config: RadarConfig,
    pub n_targets: usize,
    pub n_clutter: usize,
    /// One entry per target.
    pub target_powers_db: Vec<f64>,
    pub clutter_power_db: f64,
    /// `None` omits the direct path.
    pub direct_path_power_db: Option<f64>,
    #[serde(default)]
    pub direct_path_range_m: f64,
    pub range_bounds_m: (f64, f64),
    pub clutter_velocity_bounds_mps: (f64, f64),
    pub target_velocity_bounds_mps: (f64, f64),
    pub constellation: ConstellationKind,
    pub ber: f64,
    pub seed: u64,
    pub trials: usize,
}

impl ScenarioSpec {
    fn base(name: &str, n: usize, n_clutter: usize) -> Self {
        Self {
            name: name.to_string(),
            config: RadarConfig::standard(16, n, -40.0),
            n_targets: 3,
            n_clutter,
            target_powers_db: vec![-40.0, -50.0, -50.0],
            clutter_power_db: -10.0,
            direct_path_power_db: Some(0.0),
            direct_path_range_m: 0.0,
            range_bounds_m: (1e3, 30e3),
            clutter_velocity_bounds_mps: (-3.0, 3.0),
            target_velocity_bounds_mps: (-156.0, 156.0),
            constellation: ConstellationKind::Qpsk,
            ber: 0.0,
            seed: 0,
            trials: 20,
        }
    }

    /// 3 targets, 5 clutter patches and the direct path at `N = 64`.
    pub fn scenario1() -> Self {
        Self::base("scenario1", 64, 5)
    }

    /// As [`ScenarioSpec::scenario1`] with 80 clutter patches.
    pub fn scenario2() -> Self {
        Self::base("scenario2", 64, 80)
    }

    /// Desk-scale accuracy preset: `N = 16`, equal-power targets, direct
    /// path at the clutter level.
    pub fn rmse() -> Self {
        Self {
            target_powers_db: vec![-40.0; 3],
            direct_path_power_db: Some(-10.0),
            ..Self::base("rmse", 16, 5)
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "scenario1" => Ok(Self::scenario1()),
            "scenario2" => Ok(Self::scenario2()),
            "rmse" => Ok(Self::rmse()),
            other => Err(Error::config(format!(
                "unknown preset '{other}' (expected scenario1, scenario2 or rmse)"
            ))),
        }
    }

    pub fn path_count(&self) -> usize {
        self.n_targets + self.n_clutter + usize::from(self.direct_path_power_db.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        if self.target_powers_db.len() != self.n_targets {
            return Err(Error::config(format!(
                "{} target powers for {} targets",
                self.target_powers_db.len(),
                self.n_targets
            )));
        }
        if self.path_count() == 0 {
            return Err(Error::config("scenario has no paths"));
        }
        for (name, (lo, hi)) in [
            ("range_bounds_m", self.range_bounds_m),
            ("clutter_velocity_bounds_mps", self.clutter_velocity_bounds_mps),
            ("target_velocity_bounds_mps", self.target_velocity_bounds_mps),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config(format!("{name} must be ordered and finite")));
            }
        }
        if self.range_bounds_m.0 < 0.0 || self.direct_path_range_m < 0.0 {
            return Err(Error::config("ranges must be nonnegative"));
        }
        if !(0.0..=0.5).contains(&self.ber) {
            return Err(Error::config(format!("ber = {} is outside [0, 0.5]", self.ber)));
        }
        Ok(())
    }
}

/// Scene for one trial; targets come first in `Scene::targets`.
pub fn build_scenario(spec: &ScenarioSpec, trial: usize) -> Result<(Scene, RadarConfig)> {
    spec.validate()?;
    let config = spec.config.clone();
    let mut rng = stream_rng(spec.seed.wrapping_add(trial as u64), STREAM_SCENE);
    let uniform = |rng: &mut rand_chacha::ChaCha8Rng, (lo, hi): (f64, f64)| {
        if lo == hi { lo } else { rng.random_range(lo..hi) }
    };
    let mut targets = Vec::with_capacity(spec.n_targets);
    for &power in &spec.target_powers_db {
        let range = uniform(&mut rng, spec.range_bounds_m);
        let velocity = uniform(&mut rng, spec.target_velocity_bounds_mps);
        let phase = rng.random_range(0.0..2.0 * PI);
        let (phi, psi) = physical_to_normalized(range, velocity, &config)?;
        targets.push(Path::new(C64::from_polar(db_to_amplitude(power), phase), phi, psi)?);
    }
    let mut clutter = Vec::with_capacity(spec.n_clutter + 1);
    if let Some(power) = spec.direct_path_power_db {
        let (phi, psi) = physical_to_normalized(spec.direct_path_range_m, 0.0, &config)?;
        clutter.push(Path::new(C64::new(db_to_amplitude(power), 0.0), phi, psi)?);
    }
    let scale = (db_to_power(spec.clutter_power_db) / 2.0).sqrt();
    for _ in 0..spec.n_clutter {
        let range = uniform(&mut rng, spec.range_bounds_m);
        let velocity = uniform(&mut rng, spec.clutter_velocity_bounds_mps);
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let (phi, psi) = physical_to_normalized(range, velocity, &config)?;
        clutter.push(Path::new(C64::new(re * scale, im * scale), phi, psi)?);
    }
    Ok((Scene { targets, clutter }, config))
}

/// Identification gates `(c / (4 N delta_f), c / (4 M T_bar f_c))`.
pub fn gates(config: &RadarConfig) -> (f64, f64) {
    (
        SPEED_OF_LIGHT / (4.0 * config.n as f64 * config.delta_f),
        SPEED_OF_LIGHT / (4.0 * config.m as f64 * config.t_block() * config.f_c),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub target: usize,
    pub estimate: usize,
    pub range_error_m: f64,
    pub velocity_error_mps: f64,
}

/// Greedy nearest-neighbour matching of estimates to targets.
///
/// Points are `(range_m, velocity_mps)`. A pair is admissible when both
/// errors are strictly inside the gates and the estimate is faster than
/// the clutter band. Admissible pairs are taken in order of gate-normalized
/// distance; each target and each estimate is used at most once.
pub fn gate_identification(estimates: &[(f64, f64)], targets: &[(f64, f64)], gates: (f64, f64)) -> Vec<Match> {
    let (rg, vg) = gates;
    let mut pairs = Vec::new();
    for (ti, t) in targets.iter().enumerate() {
        for (ei, e) in estimates.iter().enumerate() {
            if e.1.abs() <= CLUTTER_VELOCITY_MPS {
                continue;
            }
            let (dr, dv) = (e.0 - t.0, e.1 - t.1);
            if dr.abs() < rg && dv.abs() < vg {
                let dist = (dr / rg).hypot(dv / vg);
                pairs.push((dist, ti, ei, dr, dv));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_t = vec![false; targets.len()];
    let mut used_e = vec![false; estimates.len()];
    let mut out = Vec::new();
    for (_, ti, ei, dr, dv) in pairs {
        if used_t[ti] || used_e[ei] {
            continue;
        }
        used_t[ti] = true;
        used_e[ei] = true;
        out.push(Match {
            target: ti,
            estimate: ei,
            range_error_m: dr,
            velocity_error_mps: dv,
        });
    }
    out.sort_by_key(|m| m.target);
    out
}

/// The four receivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "CS-ANL1")]
    Anl1,
    #[serde(rename = "CS-AN")]
    An,
    #[serde(rename = "CS-L1")]
    Csl1,
    #[serde(rename = "2D-MUSIC")]
    Music,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Anl1, Algorithm::An, Algorithm::Csl1, Algorithm::Music];

    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::Anl1 => "CS-ANL1",
            Algorithm::An => "CS-AN",
            Algorithm::Csl1 => "CS-L1",
            Algorithm::Music => "2D-MUSIC",
        }
    }

    /// Command-line name.
    pub fn short(&self) -> &'static str {
        match self {
            Algorithm::Anl1 => "anl1",
            Algorithm::An => "an",
            Algorithm::Csl1 => "csl1",
            Algorithm::Music => "music",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.short() == name || a.label() == name)
            .ok_or_else(|| Error::config(format!("unknown algorithm '{name}'")))
    }
}

/// Runs one receiver with its default weights for noise level `sigma`.
///
/// `paths` is the signal-subspace dimension handed to MUSIC.
pub fn run_algorithm(algorithm: Algorithm, meas: &Measurement, sigma: f64, paths: usize) -> Result<Estimate> {
    let (m, n) = (meas.m, meas.n);
    match algorithm {
        Algorithm::Anl1 | Algorithm::An => {
            let cfg = if algorithm == Algorithm::Anl1 {
                SolverConfig::from_noise(sigma, m, n)
            } else {
                SolverConfig::atomic_only(sigma, m, n)
            };
            let sol = solve(meas, &cfg)?;
            estimate_from_solution(&sol, meas, &cfg, &PeakOptions::default())
        }
        Algorithm::Csl1 => csl1_estimate(meas, &CsL1Config::standard(m, n, sigma)),
        Algorithm::Music => {
            let k = paths.min(((m / 2) * (n / 2)).saturating_sub(1)).max(1);
            music_estimate(meas, &MusicConfig::standard(m, n, SignalDim::Known(k)))
        }
    }
}

/// Outcome of one (ber, algorithm, trial) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub ber: f64,
    pub algorithm: Algorithm,
    pub trial: usize,
    pub seed: u64,
    pub targets: usize,
    pub estimated_paths: usize,
    pub matches: Vec<Match>,
    /// Set when the receiver failed numerically; the trial is then excluded.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub ber: f64,
    pub algorithm: Algorithm,
    /// Over matched targets only; NaN when nothing was matched.
    pub range_rmse_m: f64,
    pub velocity_rmse_mps: f64,
    pub identification_rate: f64,
    pub trials_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub spec: ScenarioSpec,
    pub rows: Vec<RmseRow>,
    pub trials: Vec<TrialRecord>,
}

pub const REPORT_HEADER: &str = "ber,algorithm,range_rmse_m,velocity_rmse_mps,identification_rate,trials_used";

impl RmseReport {
    /// Summary CSV; floats use the shortest representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.ber,
                r.algorithm.label(),
                r.range_rmse_m,
                r.velocity_rmse_mps,
                r.identification_rate,
                r.trials_used
            );
        }
        out
    }

    /// One line per matched target, plus one per failed or empty trial.
    pub fn trials_csv(&self) -> String {
        let mut out = String::from("ber,algorithm,trial,seed,target,range_error_m,velocity_error_mps,error\n");
        for t in &self.trials {
            let err = t.error.as_deref().unwrap_or("").replace(',', ";");
            if t.matches.is_empty() {
                let _ = writeln!(out, "{},{},{},{},,,,{}", t.ber, t.algorithm.label(), t.trial, t.seed, err);
            }
            for m in &t.matches {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    t.ber,
                    t.algorithm.label(),
                    t.trial,
                    t.seed,
                    m.target,
                    m.range_error_m,
                    m.velocity_error_mps,
                    err
                );
            }
        }
        out
    }

    pub fn row(&self, ber: f64, algorithm: Algorithm) -> Option<&RmseRow> {
        self.rows.iter().find(|r| r.ber == ber && r.algorithm == algorithm)
    }
}

fn run_trial(spec: &ScenarioSpec, algorithm: Algorithm, ber: f64, trial: usize) -> Result<TrialRecord> {
    let seed = spec.seed.wrapping_add(trial as u64);
    let (scene, config) = build_scenario(spec, trial)?;
    let (meas, _) = simulate(&scene, &config, &Constellation::from_kind(spec.constellation), ber, seed)?;
    let sigma = config.noise_variance().sqrt();
    let mut record = TrialRecord {
        ber,
        algorithm,
        trial,
        seed,
        targets: scene.targets.len(),
        estimated_paths: 0,
        matches: Vec::new(),
        error: None,
    };
    match run_algorithm(algorithm, &meas, sigma, scene.path_count()) {
        Ok(est) => {
            let found: Vec<(f64, f64)> = to_physical(&est, &config)
                .iter()
                .map(|p| (p.range_m, p.velocity_mps))
                .collect();
            let truth: Vec<(f64, f64)> = scene.targets.iter().map(|p| p.physical(&config)).collect();
            record.estimated_paths = found.len();
            record.matches = gate_identification(&found, &truth, gates(&config));
        }
        Err(e @ (Error::Numeric { .. } | Error::Degenerate { .. })) => record.error = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    Ok(record)
}

/// Full sweep. Cells run in parallel; rows and trial records are ordered by
/// (ber, algorithm, trial) as listed in the arguments.
pub fn run_benchmark(spec: &ScenarioSpec, algorithms: &[Algorithm], bers: &[f64]) -> Result<RmseReport> {
    spec.validate()?;
    if algorithms.is_empty() || bers.is_empty() {
        return Err(Error::config("need at least one algorithm and one BER"));
    }
    if let Some(b) = bers.iter().find(|b| !(0.0..=0.5).contains(*b)) {
        return Err(Error::config(format!("ber = {b} is outside [0, 0.5]")));
    }
    let cells: Vec<(f64, Algorithm, usize)> = bers
        .iter()
        .flat_map(|&b| algorithms.iter().flat_map(move |&a| (0..spec.trials).map(move |t| (b, a, t))))
        .collect();
    let trials: Vec<TrialRecord> = cells
        .par_iter()
        .map(|&(b, a, t)| run_trial(spec, a, b, t))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for &ber in bers {
        for &algorithm in algorithms {
            let cell: Vec<&TrialRecord> = trials
                .iter()
                .filter(|t| t.ber == ber && t.algorithm == algorithm && t.error.is_none())
                .collect();
            let matched: Vec<&Match> = cell.iter().flat_map(|t| &t.matches).collect();
            let targets: usize = cell.iter().map(|t| t.targets).sum();
            let count = matched.len() as f64;
            let (range_rmse_m, velocity_rmse_mps) = if matched.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (
                    (matched.iter().map(|m| m.range_error_m.powi(2)).sum::<f64>() / count).sqrt(),
                    (matched.iter().map(|m| m.velocity_error_mps.powi(2)).sum::<f64>() / count).sqrt(),
                )
            };
            rows.push(RmseRow {
                ber,
                algorithm,
                range_rmse_m,
                velocity_rmse_mps,
                identification_rate: if targets == 0 { 0.0 } else { count / targets as f64 },
                trials_used: cell.len(),
            });
        }
    }
    Ok(RmseReport {
        spec: spec.clone(),
        rows,
        trials,
    })
}
